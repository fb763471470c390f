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


// Pseudo-labels for one batch: solve the assignment problem from logits and
// compare it with the Sinkhorn equipartition baseline.

#include "mira/mira.hpp"

#include <iomanip>
#include <iostream>

int main() {
  const auto logits = mira::random_cosine_logits(256, 16, 32, /*seed=*/7);

  mira::SolverConfig cfg;  // beta = 2/3, tau_t = 0.225, 30 iterations
  const auto result = mira::solve_from_logits(logits, cfg);
  const auto p = mira::softmax_with_temperature(logits, cfg.tau_t);
  const auto model = mira::objective(p, p, cfg.beta);

  std::cout << std::setprecision(6);
  std::cout << "kkt residual      " << result.kkt_residual << "\n"
            << "objective  W*     " << result.breakdown.total << "\n"
            << "objective  P      " << model.total << "\n"
            << "MI         W*     " << result.breakdown.mi_estimate << "\n"
            << "MI         P      " << model.mi_estimate << "\n"
            << "H(marginal) W*    " << result.breakdown.marg_entropy << "\n";

  const auto sk = mira::sinkhorn_solve(mira::floor_probabilities(p), {});
  std::cout << "sinkhorn iters    " << sk.iterations_run << "\n"
            << "sinkhorn col viol " << sk.column_violation << "\n";
  return 0;
}
