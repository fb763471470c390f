#!/usr/bin/env python3
# Copyright 2026 The MIRA Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Plot SSE-to-reference curves written by `mira convergence-bench`.

Usage: plot_convergence.py BENCH_DIR [--out convergence.png]
"""

import argparse
import csv
import json
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("bench_dir", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=None)
    args = ap.parse_args()

    summary = json.loads((args.bench_dir / "summary.json").read_text())
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=False)
    for run in summary["runs"]:
        ax = axes[0] if run["method"] == "mira" else axes[1]
        with open(args.bench_dir / run["file"], newline="") as f:
            rows = list(csv.DictReader(f))
        its = [int(r["iteration"]) for r in rows]
        sse = [max(float(r["sse_to_reference"]), 1e-32) for r in rows]
        label = f'{run["rows"]}x{run["cols"]} beta={run["beta"]:.3g} seed={run["seed"]}'
        ax.semilogy(its, sse, label=label)
    for ax, title in zip(axes, ["MIRA (marginal)", "Sinkhorn (assignment)"]):
        ax.set_title(title)
        ax.set_xlabel("iteration")
        ax.set_ylabel("SSE to reference")
        ax.legend(fontsize=7)
    fig.tight_layout()
    out = args.out or args.bench_dir / "convergence.png"
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
