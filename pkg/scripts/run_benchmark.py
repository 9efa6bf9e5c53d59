#!/usr/bin/env python3
"""Benchmark the trained engine against the baselines on a synthetic corpus.

Synthesizes a desk-scale corpus, runs seeded simulations for every
algorithm, and prints the metric grid (markdown) plus per-cell timings.

    python3 scripts/run_benchmark.py --n 2000 --runs 10 --seed 2024
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from faircop.corpus import SynthConfig, synthesize_corpus
from faircop.engine import ALGORITHMS, EngineConfig
from faircop.simulator import SimulatorConfig, run_experiment


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--attributes", type=int, default=8)
    parser.add_argument("--classes", type=int, default=2)
    parser.add_argument("--view-dim", type=int, default=32)
    parser.add_argument("--noise-sigma", type=float, default=0.1)
    parser.add_argument("--prototype-scale", type=float, default=0.15)
    parser.add_argument("--runs", type=int, default=10)
    parser.add_argument("--max-iterations", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--corpus-seed", type=int, default=42)
    parser.add_argument("--algorithms", default="faircop,centroid,rocchio,random")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default=None, help="Optional report directory.")
    return parser.parse_args()


def main():
    args = parse_args()
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    unknown = set(algorithms) - set(ALGORITHMS)
    if unknown:
        raise SystemExit(f"unknown algorithms: {sorted(unknown)}")

    corpus = synthesize_corpus(SynthConfig(
        n=args.n,
        schema={f"a{i}": args.classes for i in range(args.attributes)},
        views=[("hog", args.view_dim, args.noise_sigma),
               ("facenet", args.view_dim, args.noise_sigma),
               ("mix", args.view_dim, args.noise_sigma)],
        seed=args.corpus_seed,
        prototype_scale=args.prototype_scale))
    weights = {name: 1.0 for name in corpus.views}

    started = time.perf_counter()
    report = run_experiment(
        corpus, algorithms, [weights], args.runs, seed=args.seed,
        sim_cfg=SimulatorConfig(weights=weights,
                                max_iterations=args.max_iterations),
        engine_cfg=EngineConfig(view_weights=weights),
        jobs=args.jobs)
    elapsed = time.perf_counter() - started

    print(report.to_markdown())
    for cell in report.cells:
        print(f"{cell.algorithm:9s} ACI={cell.aci:8.2f} AR={cell.ar:.3f} "
              f"PR={cell.pr:.3f} converged {cell.converged_runs}/{cell.runs}")
    print(f"\n{len(algorithms) * args.runs} simulations in {elapsed:.1f}s")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "report.csv").write_text(report.to_csv())
        (out / "report.md").write_text(report.to_markdown())
        print(f"report written to {out}")


if __name__ == "__main__":
    main()
