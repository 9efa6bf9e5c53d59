"""Deterministic user simulator and the multi-run experiment driver.

The simulator holds a hidden target and judges each shown batch by a
weighted mean of per-view cosine similarities against an adaptive
threshold: strictly above means similar. Every `update_period` rounds the
threshold moves toward the mean similarity of recently accepted images by
an exponential moving average.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import engine as engine_mod
from .corpus import Corpus, CorpusError
from .engine import EngineConfig
from .network import cosine_sim


@dataclass
class SimulatorConfig:
    weights: dict[str, float]  # view name -> nonnegative weight
    threshold_sample_size: int = 1000
    update_period: int = 15
    decay: float = 0.95
    blend: float = 0.05
    max_iterations: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.weights or all(w <= 0 for w in self.weights.values()):
            raise ValueError("need at least one positive view weight")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("view weights must be nonnegative")
        if abs(self.decay + self.blend - 1.0) > 1e-12:
            raise ValueError("decay and blend must sum to 1")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def validate_against(self, corpus: Corpus) -> None:
        missing = [name for name, w in self.weights.items()
                   if w > 0 and name not in corpus.views]
        if missing:
            raise CorpusError(f"weighted views missing from corpus: {missing}")


@dataclass
class SimState:
    target_id: str
    thr: float
    stemp: list[float] = field(default_factory=list)
    iteration: int = 0


@dataclass
class IterationRecord:
    iteration: int
    shown: list[str]
    similar: list[str]
    thr: float
    target_rank: int | None = None  # rank of the target in the scoring that produced `shown`
    n_scored: int | None = None


@dataclass
class SimulationLog:
    target_id: str
    algorithm: str
    seed: int
    max_iterations: int
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    n_iterations: int = 0
    wall_time_s: float = 0.0  # diagnostic only; not serialized

    def to_jsonl(self) -> str:
        lines = [json.dumps({
            "type": "header", "target_id": self.target_id,
            "algorithm": self.algorithm, "seed": self.seed,
            "max_iterations": self.max_iterations,
        }, sort_keys=True)]
        for rec in self.records:
            lines.append(json.dumps({
                "type": "iteration", "iteration": rec.iteration,
                "shown": rec.shown, "similar": rec.similar, "thr": rec.thr,
                "target_rank": rec.target_rank, "n_scored": rec.n_scored,
            }, sort_keys=True))
        lines.append(json.dumps({
            "type": "summary", "converged": self.converged,
            "n_iterations": self.n_iterations,
        }, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @staticmethod
    def from_jsonl(text: str) -> "SimulationLog":
        header = summary = None
        records = []
        for line in text.splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            if data["type"] == "header":
                header = data
            elif data["type"] == "iteration":
                records.append(IterationRecord(
                    iteration=data["iteration"], shown=list(data["shown"]),
                    similar=list(data["similar"]), thr=data["thr"],
                    target_rank=data.get("target_rank"),
                    n_scored=data.get("n_scored")))
            elif data["type"] == "summary":
                summary = data
        if header is None or summary is None:
            raise ValueError("log is missing its header or summary line")
        return SimulationLog(
            target_id=header["target_id"], algorithm=header["algorithm"],
            seed=header["seed"], max_iterations=header["max_iterations"],
            records=records, converged=summary["converged"],
            n_iterations=summary["n_iterations"])

    @staticmethod
    def load(path) -> "SimulationLog":
        return SimulationLog.from_jsonl(Path(path).read_text())


def weighted_similarity(a_id: str, b_id: str, corpus: Corpus,
                        weights: dict[str, float]) -> float:
    """Weight-normalized mean of per-view cosine similarities."""
    total_weight = sum(w for w in weights.values() if w > 0)
    if total_weight <= 0:
        raise ValueError("need at least one positive view weight")
    ia, ib = corpus.index_of(a_id), corpus.index_of(b_id)
    acc = 0.0
    for name, weight in weights.items():
        if weight <= 0:
            continue
        if name not in corpus.views:
            raise CorpusError(f"weighted view {name!r} missing from corpus")
        m = corpus.views[name].matrix
        acc += weight * cosine_sim(m[ia].astype(np.float64), m[ib].astype(np.float64))
    return acc / total_weight


def init_threshold(corpus: Corpus, target_id: str, cfg: SimulatorConfig,
                   rng: np.random.Generator | None = None) -> float:
    """Mean similarity of the target to a sample of other corpus images."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    others = [rec.id for rec in corpus.records if rec.id != target_id]
    if not others:
        return 0.0
    size = min(len(others), cfg.threshold_sample_size)
    picked = rng.choice(len(others), size=size, replace=False)
    values = [weighted_similarity(target_id, others[i], corpus, cfg.weights)
              for i in picked]
    return float(np.mean(values))


def judge(shown_ids, state: SimState, corpus: Corpus,
          cfg: SimulatorConfig) -> tuple[list[str], list[str]]:
    """Split a batch into (similar, dissimilar) by the strict threshold test.

    Similarity values of accepted images accumulate for the next threshold
    update.
    """
    similar, dissimilar = [], []
    for record_id in shown_ids:
        value = weighted_similarity(state.target_id, record_id, corpus, cfg.weights)
        if value > state.thr:
            similar.append(record_id)
            state.stemp.append(value)
        else:
            dissimilar.append(record_id)
    return similar, dissimilar


def update_threshold(state: SimState, cfg: SimulatorConfig) -> float:
    """EMA step toward the mean accepted similarity; no-op when none were
    accepted since the last update."""
    if state.stemp:
        mean_accepted = float(np.mean(state.stemp))
        state.thr = cfg.decay * state.thr + cfg.blend * mean_accepted
        state.stemp = []
    return state.thr


def run_simulation(corpus: Corpus, algorithm: str, sim_cfg: SimulatorConfig,
                   engine_cfg: EngineConfig, seed: int,
                   target_id: str | None = None) -> SimulationLog:
    """Drive one full session with simulated feedback until the target is
    shown or the iteration cap is hit.

    The one `seed` argument derives every random stream (target choice,
    threshold sample, engine session); identical inputs produce
    byte-identical logs.
    """
    sim_cfg.validate_against(corpus)
    seeds = np.random.SeedSequence(seed).spawn(3)
    target_rng = np.random.default_rng(seeds[0])
    thr_rng = np.random.default_rng(seeds[1])
    engine_seed = int(seeds[2].generate_state(1)[0])
    if target_id is None:
        target_id = corpus.ids[int(target_rng.integers(len(corpus)))]
    else:
        corpus.index_of(target_id)
    cfg = replace(engine_cfg, algorithm=algorithm, seed=engine_seed,
                  max_iterations=sim_cfg.max_iterations)

    started = time.perf_counter()
    state = SimState(target_id=target_id,
                     thr=init_threshold(corpus, target_id, sim_cfg, thr_rng))
    log = SimulationLog(target_id=target_id, algorithm=algorithm, seed=seed,
                        max_iterations=sim_cfg.max_iterations)
    session, batch = engine_mod.start_session(corpus, None, cfg)
    while True:
        rank = n_scored = None
        if session.last_scores is not None:
            ranked_ids, _ = session.last_scores
            hits = np.nonzero(ranked_ids == target_id)[0]
            if hits.size:
                rank = int(hits[0])
                n_scored = int(len(ranked_ids))
        if target_id in batch:
            log.records.append(IterationRecord(
                iteration=session.iteration, shown=list(batch), similar=[],
                thr=state.thr, target_rank=rank, n_scored=n_scored))
            log.converged = True
            log.n_iterations = session.iteration
            break
        similar, _ = judge(batch, state, corpus, sim_cfg)
        log.records.append(IterationRecord(
            iteration=session.iteration, shown=list(batch), similar=list(similar),
            thr=state.thr, target_rank=rank, n_scored=n_scored))
        result = engine_mod.submit_feedback(session, similar)
        state.iteration += 1
        if state.iteration % sim_cfg.update_period == 0:
            update_threshold(state, sim_cfg)
        if result["status"] != engine_mod.STATUS_ACTIVE:
            log.converged = False
            log.n_iterations = result["iteration"]
            break
        batch = result["batch"]
    log.wall_time_s = time.perf_counter() - started
    return log


@dataclass
class ExperimentCell:
    algorithm: str
    weights: dict[str, float]
    aci: float
    ar: float
    pr: float
    runs: int
    converged_runs: int


@dataclass
class ExperimentReport:
    cells: list[ExperimentCell]
    runs_per_cell: int
    seed: int

    def to_json(self) -> str:
        def clean(x: float):
            return None if x != x else x  # NaN -> null

        return json.dumps({
            "runs_per_cell": self.runs_per_cell,
            "seed": self.seed,
            "cells": [{
                "algorithm": c.algorithm, "weights": c.weights,
                "aci": clean(c.aci), "ar": clean(c.ar), "pr": clean(c.pr),
                "runs": c.runs, "converged_runs": c.converged_runs,
            } for c in self.cells],
        }, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        lines = ["algorithm,weights,metric,value"]
        for cell in self.cells:
            combo = "+".join(f"{k}={v:g}" for k, v in sorted(cell.weights.items()))
            for metric, value in (("ACI", cell.aci), ("AR", cell.ar), ("PR", cell.pr)):
                lines.append(f"{cell.algorithm},{combo},{metric},{value!r}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        """Grid of view combos (rows) by algorithm and metric (columns)."""
        view_names = sorted({name for c in self.cells for name in c.weights})
        algorithms = sorted({c.algorithm for c in self.cells})
        combos = []
        for cell in self.cells:
            key = tuple(cell.weights.get(v, 0.0) for v in view_names)
            if key not in combos:
                combos.append(key)
        header = [*view_names]
        for metric in ("ACI", "AR", "PR"):
            header.extend(f"{metric} {algo}" for algo in algorithms)
        rows = []
        lookup = {}
        for cell in self.cells:
            key = tuple(cell.weights.get(v, 0.0) for v in view_names)
            lookup[(key, cell.algorithm)] = cell
        for key in combos:
            row = ["x" if w > 0 else "" for w in key]
            for metric_attr in ("aci", "ar", "pr"):
                for algo in algorithms:
                    cell = lookup.get((key, algo))
                    row.append("" if cell is None
                               else f"{getattr(cell, metric_attr):.2f}")
            rows.append(row)
        out = ["| " + " | ".join(header) + " |",
               "|" + "|".join(["---"] * len(header)) + "|"]
        out.extend("| " + " | ".join(row) + " |" for row in rows)
        return "\n".join(out) + "\n"


_WORKER_CORPUS: Corpus | None = None


def _worker_init(corpus: Corpus) -> None:
    global _WORKER_CORPUS
    _WORKER_CORPUS = corpus


def _worker_run(task) -> "SimulationLog":
    algorithm, sim_cfg, engine_cfg, run_seed = task
    return run_simulation(_WORKER_CORPUS, algorithm, sim_cfg, engine_cfg,
                          seed=run_seed)


def run_experiment(corpus: Corpus, algorithms, weight_combos, runs_per_cell: int,
                   seed: int, sim_cfg: SimulatorConfig | None = None,
                   engine_cfg: EngineConfig | None = None,
                   log_sink=None, jobs: int = 1) -> ExperimentReport:
    """Mean retrieval metrics per (algorithm, view-weight combo) cell.

    Each run's seed derives deterministically from `seed` and the cell/run
    index, so re-running reproduces the report exactly regardless of `jobs`.
    `log_sink`, when given, receives every finished SimulationLog in task
    order.
    """
    from . import metrics as metrics_mod

    if runs_per_cell < 1:
        raise ValueError("runs_per_cell must be >= 1")
    engine_cfg = engine_cfg or EngineConfig()
    weight_combos = [dict(w) for w in weight_combos]
    algorithms = list(algorithms)
    run_seeds = np.random.SeedSequence(seed).generate_state(
        len(weight_combos) * len(algorithms) * runs_per_cell)

    tasks = []
    cell_specs = []
    cursor = 0
    for weights in weight_combos:
        for algorithm in algorithms:
            base_sim = sim_cfg or SimulatorConfig(weights=dict(weights))
            cell_sim = replace(base_sim, weights=dict(weights))
            cell_engine = replace(engine_cfg, view_weights=dict(weights),
                                  view_name=None)
            cell_specs.append((algorithm, dict(weights)))
            for _ in range(runs_per_cell):
                tasks.append((algorithm, cell_sim, cell_engine,
                              int(run_seeds[cursor])))
                cursor += 1

    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init,
                                 initargs=(corpus,)) as pool:
            all_logs = list(pool.map(_worker_run, tasks))
    else:
        _worker_init(corpus)
        all_logs = [_worker_run(task) for task in tasks]
    if log_sink is not None:
        for log in all_logs:
            log_sink(log)

    cells = []
    for i, (algorithm, weights) in enumerate(cell_specs):
        logs = all_logs[i * runs_per_cell:(i + 1) * runs_per_cell]
        # the random baseline never scores candidates, so it has no PR
        pr_values = [metrics_mod.percentile_rank(log) for log in logs
                     if any(r.target_rank is not None for r in log.records)]
        cells.append(ExperimentCell(
            algorithm=algorithm, weights=weights,
            aci=metrics_mod.average_convergent_iterations(logs),
            ar=float(np.mean([metrics_mod.average_relevance(log) for log in logs])),
            pr=float(np.mean(pr_values)) if pr_values else float("nan"),
            runs=runs_per_cell,
            converged_runs=sum(log.converged for log in logs)))
    return ExperimentReport(cells=cells, runs_per_cell=runs_per_cell, seed=seed)
