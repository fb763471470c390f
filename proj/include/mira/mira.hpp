// Copyright 2026 The MIRA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "mira/core.hpp"
#include "mira/io.hpp"
#include "mira/objective.hpp"
#include "mira/oracle.hpp"
#include "mira/sinkhorn.hpp"
#include "mira/solver.hpp"
#include "mira/trainer.hpp"

namespace mira {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mira
