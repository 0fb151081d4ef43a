"""Latency/throughput sweep over batch sizes for a profile, printed as CSV.

    python scripts/bench_sweep.py --profile mnist --batch-sizes 1 8 16 32 64 --runs 50
"""
import argparse

from gecco.bench import bench_sweep, to_csv
from gecco.cli import PROFILES
from gecco.model import GeccoModel


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--profile", choices=sorted(PROFILES), default="mnist")
    ap.add_argument("--batch-sizes", type=int, nargs="+", default=[1, 8, 16, 32, 64])
    ap.add_argument("--warmup", type=int, default=5)
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    base = PROFILES[args.profile]()
    cfgs = [base.replace(batch_size=b) for b in args.batch_sizes]
    reports = bench_sweep(lambda c: GeccoModel.init(c, args.seed), cfgs, args.warmup, args.runs, args.seed)
    print(to_csv(reports), end="")
    for r in reports:
        print(f"# B={r.batch_size}: {r.latency_mean / r.batch_size:.5f} ms per image")


if __name__ == "__main__":
    main()
