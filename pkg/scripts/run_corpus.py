"""Run the paired corpus and print the detection matrix with per-case timing.

    python3 scripts/run_corpus.py [corpus_dir] [--jobs N] [--workers N]
"""

import argparse
import sys
import time
from pathlib import Path

from uninit_stack.corpus import format_matrix, run_corpus
from uninit_stack.driver import RunConfig

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("dir", nargs="?", default=str(ROOT / "corpus"))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    t0 = time.perf_counter()
    results = run_corpus(args.dir, RunConfig(workers=args.workers), args.jobs)
    total = time.perf_counter() - t0
    sys.stdout.write(format_matrix(results))
    for r in results:
        print(f"  {r.name:<28} {r.seconds * 1000:7.1f} ms")
    print(f"total {total:.2f}s")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
