"""Time the full pipeline on generated programs of growing size.

    python3 scripts/scale_bench.py --functions 10 20 40 80
"""

import argparse
import time
from dataclasses import dataclass

from uninit_stack.il import parse_il
from uninit_stack.interproc import AnalysisConfig, KnowledgeBase, monitor_loop
from uninit_stack.pipeline import prepare
from uninit_stack.plugins import default_plugins
from uninit_stack.synth import SynthConfig, generate_program


@dataclass
class BenchRow:
    functions: int
    edb: int
    idb: int
    warnings: int
    prepare_s: float
    solve_s: float


def bench(functions: int, body: int, seed: int, workers: int) -> BenchRow:
    text = generate_program(SynthConfig(functions=functions, body=body, seed=seed))
    t0 = time.perf_counter()
    prep = prepare(parse_il(text))
    t1 = time.perf_counter()
    kb = monitor_loop(KnowledgeBase(prep, AnalysisConfig(workers=workers)), default_plugins())
    t2 = time.perf_counter()
    return BenchRow(functions, len(prep.edb), len(kb.idb), len(kb.warnings), t1 - t0, t2 - t1)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--functions", type=int, nargs="+", default=[10, 20, 40, 80])
    ap.add_argument("--body", type=int, default=30)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    print(f"{'funcs':>6} {'edb':>8} {'idb':>8} {'warn':>6} {'prep s':>8} {'solve s':>8}")
    for n in args.functions:
        r = bench(n, args.body, args.seed, args.workers)
        print(f"{r.functions:>6} {r.edb:>8} {r.idb:>8} {r.warnings:>6} {r.prepare_s:>8.2f} {r.solve_s:>8.2f}")


if __name__ == "__main__":
    main()
