#!/usr/bin/env python3
"""Representation diagnostics on a synthetic corpus.

Computes interpretability scores of each embedding view against the
attribute factors, the group-conditional fairness summary, and the
attribute-distribution similarity of the images a simulated session marked
dissimilar.

    python3 scripts/run_representation_report.py --n 1500 --seed 7
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from faircop import metrics
from faircop.corpus import SynthConfig, synthesize_corpus
from faircop.engine import EngineConfig
from faircop.simulator import SimulatorConfig, run_simulation


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1500)
    parser.add_argument("--attributes", type=int, default=4)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--regressor", choices=["boosted_stumps", "ridge"],
                        default="ridge")
    return parser.parse_args()


def factor_matrix(corpus):
    attrs = sorted(corpus.schema)
    columns = []
    for attr in attrs:
        classes = {v: i for i, v in enumerate(corpus.schema[attr])}
        columns.append([classes[r.attributes[attr]] for r in corpus.records])
    return np.array(columns, dtype=np.float64).T, attrs


def main():
    args = parse_args()
    corpus = synthesize_corpus(SynthConfig(
        n=args.n,
        schema={f"a{i}": 2 for i in range(args.attributes)},
        views=[("hog", 32, 0.1), ("facenet", 32, 0.1), ("mix", 32, 0.1)],
        seed=args.seed, prototype_scale=0.3))
    factors, attr_names = factor_matrix(corpus)

    print("== interpretability (per view) ==")
    for name, view in sorted(corpus.views.items()):
        z = view.matrix.astype(np.float64)
        importance = metrics.fit_importance(z, factors,
                                            regressor=args.regressor,
                                            seed=args.seed)
        d, c = metrics.dci(importance)
        i = metrics.informativeness(z, factors, regressor=args.regressor,
                                    seed=args.seed)
        print(f"{name:8s} D={d:.3f} C={c:.3f} I={i:.3f}")

    print("\n== fairness (mix view) ==")
    attributes = {attr: np.array([r.attributes[attr] for r in corpus.records])
                  for attr in attr_names[:3]}
    fair = metrics.fairness(corpus.views["mix"].matrix.astype(np.float64),
                            attributes, neighbor_count=5, split_seed=args.seed)
    print(f"mean conditional rate: {fair.f_score:.3f}   "
          f"parity gap: {fair.dp_gap:.3f}")

    print("\n== dissimilar-selection distribution vs corpus ==")
    weights = {name: 1.0 for name in corpus.views}
    log = run_simulation(corpus, "faircop",
                         SimulatorConfig(weights=weights, max_iterations=500),
                         EngineConfig(view_weights=weights), seed=args.seed)
    dissimilar = sorted({i for rec in log.records
                         for i in set(rec.shown) - set(rec.similar)})
    if dissimilar:
        table = metrics.distribution_similarity(corpus, dissimilar)
        for attr, entry in sorted(table.items()):
            print(f"{attr:6s} tv={entry['tv_distance']:.3f} "
                  f"corpus={['%.2f' % p for p in entry['corpus']]} "
                  f"selected={['%.2f' % p for p in entry['selected']]}")
    else:
        print("session marked nothing dissimilar; rerun with another seed")


if __name__ == "__main__":
    main()
