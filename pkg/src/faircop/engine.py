"""Relevance-feedback session engine and baseline recommenders.

One `SessionState` owns one retrieval session: the user (or simulator) sees a
batch, marks the similar ones, and the engine trains the projection network
on anchored batches, re-scores the unseen pool, and assembles the next batch.
Baselines (base-space centroid, Rocchio query refinement, uniform random)
run through the same session bookkeeping so runs are directly comparable.

All randomness flows through two independent seeded streams: one for batch
sampling (initial batch, exploration, fallbacks) and one for anchor sampling
during training. Baselines never touch the training stream, so a baseline
session and an engine session with the same seed draw identical batches
wherever their logic coincides.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import losses, network
from .corpus import Corpus, CorpusError, stratified_sample

ALGORITHMS = ("faircop", "centroid", "rocchio", "random")
LOSS_KINDS = ("scloss", "scloss_alt")

STATUS_ACTIVE = "active"
STATUS_CONVERGED = "converged"
STATUS_EXHAUSTED = "exhausted"
STATUS_ABANDONED = "abandoned"


class SessionClosedError(RuntimeError):
    """Operation on a session that already reached a terminal status."""


class FeedbackError(ValueError):
    """Feedback ids that are not part of the currently shown batch."""


@dataclass
class EngineConfig:
    k: int = 12  # top-score slots
    u: int = 4  # exploration slots
    prev_samp: int = 24  # anchor sample size per side
    epochs: int = 10
    train_every: int = 2
    explore_history_every: int = 3
    loss_kind: str = "scloss"
    tau: float = 0.5
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    view_name: str | None = None
    view_weights: dict[str, float] | None = None
    hidden_dims: tuple[int, ...] = (128,)
    output_dim: int = 64
    net_init: str = "random"  # "random" | "identity"
    algorithm: str = "faircop"
    max_iterations: int = 1000
    rocchio_alpha: float = 1.0
    rocchio_beta: float = 0.75
    rocchio_gamma: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1 or self.u < 0 or self.prev_samp < 0:
            raise ValueError("need k >= 1, u >= 0, prev_samp >= 0")
        if self.epochs < 1 or self.train_every < 1 or self.explore_history_every < 1:
            raise ValueError("epochs and periods must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.net_init not in ("random", "identity"):
            raise ValueError(f"unknown net init {self.net_init!r}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def batch_size(self) -> int:
        return self.k + self.u


@dataclass
class FeedbackEvent:
    iteration: int
    shown: list[str]
    similar: list[str]
    timestamp: float
    trained: bool = False
    loss: float | None = None

    def to_json(self) -> str:
        return json.dumps({
            "iteration": self.iteration,
            "shown": self.shown,
            "similar": self.similar,
            "timestamp": self.timestamp,
            "trained": self.trained,
            "loss": self.loss,
        }, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "FeedbackEvent":
        data = json.loads(line)
        return FeedbackEvent(
            iteration=data["iteration"], shown=list(data["shown"]),
            similar=list(data["similar"]), timestamp=data["timestamp"],
            trained=data.get("trained", False), loss=data.get("loss"))


@dataclass
class RocchioState:
    query: np.ndarray
    alpha: float = 1.0
    beta: float = 0.75
    gamma: float = 0.15

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("rocchio coefficients must be nonnegative")


@dataclass
class SessionState:
    corpus: Corpus
    config: EngineConfig
    constraints: dict
    input_matrix: np.ndarray  # (n, D) float64, row-aligned with corpus.records
    net: network.ProjectionNet | None
    opt: network.OptimizerState | None
    rocchio: RocchioState | None
    rng_batch: np.random.Generator
    rng_train: np.random.Generator
    similar_all: list[str] = field(default_factory=list)
    dissimilar_all: list[str] = field(default_factory=list)
    unseen: set[str] = field(default_factory=set)
    shown: list[str] = field(default_factory=list)
    iteration: int = 0
    status: str = STATUS_ACTIVE
    event_log: list[FeedbackEvent] = field(default_factory=list)
    last_scores: tuple[np.ndarray, np.ndarray] | None = None  # (ids, scores) best-first

    @property
    def similar_set(self) -> set[str]:
        return set(self.similar_all)

    @property
    def dissimilar_set(self) -> set[str]:
        return set(self.dissimilar_all)

    def check_partition(self) -> None:
        """Assert the id-set partition invariant; used heavily by tests."""
        s, d, rem = self.similar_set, self.dissimilar_set, self.unseen
        assert not s & d, "similar and dissimilar overlap"
        assert not (s | d) & rem, "labeled ids still in the unseen pool"
        assert not set(self.shown) & rem, "pending batch overlaps the unseen pool"
        assert len(self.shown) == len(set(self.shown)), "duplicate ids in shown batch"
        assert len(self.shown) <= self.config.batch_size


def _resolve_input(corpus: Corpus, cfg: EngineConfig) -> np.ndarray:
    return corpus.embedding_input(view_name=cfg.view_name, view_weights=cfg.view_weights)


def _sample_ids(pool: Sequence[str], count: int, rng: np.random.Generator) -> list[str]:
    """Up to `count` draws without replacement, preserving rng determinism."""
    if count <= 0 or not pool:
        return []
    count = min(count, len(pool))
    picked = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in picked]


def start_session(corpus: Corpus, constraints: dict | None,
                  cfg: EngineConfig) -> tuple[SessionState, list[str]]:
    """Open a session: constraint-stratified first batch, full unseen pool."""
    constraints = dict(constraints or {})
    matches = corpus.matching_indices(constraints)
    if not matches:
        raise CorpusError("constraints match zero records")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_batch = np.random.default_rng(seeds[0])
    rng_train = np.random.default_rng(seeds[1])
    input_matrix = _resolve_input(corpus, cfg)
    net = opt = rocchio = None
    if cfg.algorithm == "faircop":
        if cfg.net_init == "identity":
            net = network.identity_net(input_matrix.shape[1])
        else:
            net = network.init_net(input_matrix.shape[1], list(cfg.hidden_dims),
                                   cfg.output_dim, seed=int(seeds[2].generate_state(1)[0]))
        opt = network.init_optimizer(net, cfg.optimizer, cfg.learning_rate)
    elif cfg.algorithm == "rocchio":
        rocchio = RocchioState(query=np.zeros(input_matrix.shape[1]),
                               alpha=cfg.rocchio_alpha, beta=cfg.rocchio_beta,
                               gamma=cfg.rocchio_gamma)
    first_batch = stratified_sample(corpus, constraints, cfg.batch_size, rng_batch)
    session = SessionState(
        corpus=corpus, config=cfg, constraints=constraints,
        input_matrix=input_matrix, net=net, opt=opt, rocchio=rocchio,
        rng_batch=rng_batch, rng_train=rng_train,
        unseen=set(corpus.ids) - set(first_batch), shown=list(first_batch))
    return session, list(first_batch)


def _candidate_indices(session: SessionState) -> tuple[np.ndarray, list[str]]:
    """Unseen record indexes in lexicographic id order (the tie-break order)."""
    ids = sorted(session.unseen)
    return np.array([session.corpus.index_of(i) for i in ids], dtype=np.intp), ids


def _rank_candidates(session: SessionState, scores: np.ndarray,
                     ids: list[str]) -> list[str]:
    """Ids sorted by score descending; lexicographic order breaks ties."""
    order = np.argsort(-scores, kind="stable")
    ranked = [ids[i] for i in order]
    session.last_scores = (np.array(ranked), scores[order])
    return ranked


def rocchio_update(state: RocchioState, similar_vectors,
                   dissimilar_vectors) -> np.ndarray:
    """Move the query toward the similar centroid and away from the
    dissimilar one; empty sides contribute zero. Returns the new query.
    """

    def centroid(vectors) -> np.ndarray:
        m = np.asarray(vectors, dtype=np.float64)
        if m.size == 0:
            return np.zeros_like(state.query)
        return np.atleast_2d(m).mean(axis=0)

    state.query = (state.alpha * state.query
                   + state.beta * centroid(similar_vectors)
                   - state.gamma * centroid(dissimilar_vectors))
    return state.query


def rocchio_recommender(state: RocchioState, similar_ids: Sequence[str],
                        dissimilar_ids: Sequence[str], session: SessionState,
                        batch_size: int) -> list[str]:
    """Classical query refinement ranking of the unseen pool."""
    matrix = session.input_matrix
    corpus = session.corpus
    rocchio_update(
        state,
        matrix[[corpus.index_of(i) for i in similar_ids]],
        matrix[[corpus.index_of(i) for i in dissimilar_ids]])
    idx, ids = _candidate_indices(session)
    if not ids:
        return []
    scores = losses.cosine_similarity_matrix(matrix[idx], state.query)[:, 0]
    return _rank_candidates(session, scores, ids)[:batch_size]


def centroid_ranking(similar_ids: Sequence[str], session: SessionState) -> list[str]:
    """Full unseen-pool ranking by cosine to the similar base-space centroid."""
    idx, ids = _candidate_indices(session)
    if not ids:
        return []
    rows = [session.corpus.index_of(i) for i in similar_ids]
    scores = losses.score_many(session.input_matrix[idx],
                               session.input_matrix[rows])
    return _rank_candidates(session, scores, ids)


def centroid_recommender(similar_ids: Sequence[str], session: SessionState,
                         batch_size: int) -> list[str]:
    """Rank unseen by cosine to the centroid of similar base embeddings."""
    return centroid_ranking(similar_ids, session)[:batch_size]


def random_recommender(session: SessionState, batch_size: int) -> list[str]:
    """Uniform draw of unseen ids, without replacement, deterministic per rng."""
    ids = sorted(session.unseen)
    return _sample_ids(ids, batch_size, session.rng_batch)


def faircop_ranking(session: SessionState) -> list[str]:
    """Full unseen-pool ranking by the projected-space centroid score."""
    cfg = session.config
    idx, ids = _candidate_indices(session)
    if not ids:
        return []
    corpus = session.corpus
    matrix = session.input_matrix
    similar_rows = [corpus.index_of(i) for i in session.similar_all]
    z_candidates = network.forward_batch(session.net, matrix[idx])
    z_similar = network.forward_batch(session.net, matrix[similar_rows])
    if cfg.loss_kind == "scloss_alt" and session.dissimilar_all:
        dissimilar_rows = [corpus.index_of(i) for i in session.dissimilar_all]
        z_dissimilar = network.forward_batch(session.net, matrix[dissimilar_rows])
        scores = losses.score_alt_many(z_candidates, z_similar, z_dissimilar)
    else:
        scores = losses.score_many(z_candidates, z_similar)
    return _rank_candidates(session, scores, ids)


def _train_round(session: SessionState, new_similar: list[str],
                 new_dissimilar: list[str]) -> tuple[bool, float | None]:
    """One anchored training round: up to prev_samp historical ids per side
    joined with the fresh labels, `epochs` optimizer steps on that batch.
    """
    cfg = session.config
    anchors_s = _sample_ids(session.similar_all,
                            min(cfg.prev_samp, len(session.similar_all)),
                            session.rng_train)
    anchors_d = _sample_ids(session.dissimilar_all,
                            min(cfg.prev_samp, len(session.dissimilar_all)),
                            session.rng_train)
    batch_s = list(dict.fromkeys(anchors_s + new_similar))
    batch_d = list(dict.fromkeys(anchors_d + new_dissimilar))
    if not network.check_batch_sizes(len(batch_s), len(batch_d), cfg.loss_kind):
        return False, None
    corpus = session.corpus
    x_s = session.input_matrix[[corpus.index_of(i) for i in batch_s]]
    x_d = session.input_matrix[[corpus.index_of(i) for i in batch_d]]
    train_cfg = network.TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                                    tau=cfg.tau, seed=cfg.seed)
    loss_value = None
    for _ in range(cfg.epochs):
        loss_value = network.train_step(session.net, x_s, x_d, train_cfg,
                                        cfg.loss_kind, session.opt)
    return True, loss_value


def submit_feedback(session: SessionState, similar_ids) -> dict:
    """Run one feedback round; returns the next batch or a terminal status.

    The result dict carries: status, iteration, batch (when active),
    trained and loss (when a training round ran).
    """
    if session.status != STATUS_ACTIVE:
        raise SessionClosedError(f"session is {session.status}")
    shown_set = set(session.shown)
    similar_set = set(similar_ids)
    offenders = sorted(similar_set - shown_set)
    if offenders:
        raise FeedbackError(f"ids not in the shown batch: {offenders}")
    cfg = session.config
    new_similar = [i for i in session.shown if i in similar_set]
    new_dissimilar = [i for i in session.shown if i not in similar_set]

    # latest feedback wins: flip re-shown ids that changed label
    flipped_to_s = set(new_similar) & session.dissimilar_set
    flipped_to_d = set(new_dissimilar) & session.similar_set
    if flipped_to_s:
        session.dissimilar_all = [i for i in session.dissimilar_all
                                  if i not in flipped_to_s]
    if flipped_to_d:
        session.similar_all = [i for i in session.similar_all
                               if i not in flipped_to_d]

    trained, loss_value = False, None
    if (cfg.algorithm == "faircop" and session.iteration % cfg.train_every == 0):
        trained, loss_value = _train_round(session, new_similar, new_dissimilar)

    known_s = session.similar_set
    session.similar_all.extend(i for i in new_similar if i not in known_s)
    known_d = session.dissimilar_set
    session.dissimilar_all.extend(i for i in new_dissimilar if i not in known_d)

    session.last_scores = None
    next_batch = _assemble_next_batch(session)

    session.event_log.append(FeedbackEvent(
        iteration=session.iteration, shown=list(session.shown),
        similar=list(new_similar), timestamp=time.time(),
        trained=trained, loss=loss_value))

    session.iteration += 1
    if not next_batch:
        session.status = STATUS_EXHAUSTED
        session.shown = []
        return {"status": STATUS_EXHAUSTED, "iteration": session.iteration}
    if session.iteration >= cfg.max_iterations:
        session.status = STATUS_ABANDONED
        session.shown = []
        return {"status": STATUS_ABANDONED, "iteration": session.iteration}
    session.unseen -= set(next_batch)
    session.shown = list(next_batch)
    return {"status": STATUS_ACTIVE, "iteration": session.iteration,
            "batch": list(next_batch), "trained": trained, "loss": loss_value}


def _assemble_next_batch(session: SessionState) -> list[str]:
    cfg = session.config
    if cfg.algorithm == "random":
        return random_recommender(session, cfg.batch_size)
    if cfg.algorithm == "rocchio":
        return rocchio_recommender(
            session.rocchio,
            [i for i in session.shown if i in session.similar_set],
            [i for i in session.shown if i in session.dissimilar_set],
            session, cfg.batch_size)
    if not session.similar_all:
        # nothing to score against yet: constraint-free stratified random batch
        unseen_corpus_sample = stratified_sample(
            _unseen_subcorpus_view(session), None, cfg.batch_size, session.rng_batch)
        return unseen_corpus_sample
    if cfg.algorithm == "centroid":
        return centroid_recommender(session.similar_all, session, cfg.batch_size)
    ranked = faircop_ranking(session)
    top = ranked[: cfg.k]
    if session.iteration % cfg.explore_history_every == 0:
        pool = session.similar_all + session.dissimilar_all
    else:
        pool = [i for i in ranked[cfg.k:]]
    extras = _sample_ids(pool, cfg.u, session.rng_batch)
    return list(dict.fromkeys(top + extras))


class _UnseenView:
    """Read-only corpus facade restricted to a session's unseen ids."""

    def __init__(self, corpus: Corpus, unseen: set[str]):
        self._corpus = corpus
        self.records = [r for r in corpus.records if r.id in unseen]
        self.schema = corpus.schema
        self.sensitive_attributes = corpus.sensitive_attributes

    def matching_indices(self, constraints):
        if constraints:
            raise CorpusError("unseen view only supports constraint-free sampling")
        return list(range(len(self.records)))


def _unseen_subcorpus_view(session: SessionState) -> _UnseenView:
    return _UnseenView(session.corpus, session.unseen)


def report_target(session: SessionState, record_id: str) -> dict:
    """Close the session as converged at the current iteration count."""
    if session.status != STATUS_ACTIVE:
        raise SessionClosedError(f"session is {session.status}")
    if record_id not in set(session.shown):
        raise FeedbackError(f"id {record_id!r} is not in the shown batch")
    session.status = STATUS_CONVERGED
    return {"status": STATUS_CONVERGED, "iterations": session.iteration}


def replay_session(corpus: Corpus, constraints: dict | None, cfg: EngineConfig,
                   feedback_sequence: Sequence[Sequence[str]]) -> tuple[SessionState, list[list[str]]]:
    """Rebuild a session by re-running a recorded feedback sequence.

    Returns the reconstructed session plus every batch it produced (the
    initial batch first). Deterministic: same corpus, config and feedback
    give byte-identical batches.
    """
    session, batch = start_session(corpus, constraints, cfg)
    batches = [batch]
    for similar_ids in feedback_sequence:
        result = submit_feedback(session, similar_ids)
        if result["status"] != STATUS_ACTIVE:
            break
        batches.append(result["batch"])
    return session, batches


def write_event_log(session: SessionState, path) -> None:
    """Append-only JSONL, one feedback event per line."""
    with open(path, "w") as fh:
        for event in session.event_log:
            fh.write(event.to_json() + "\n")
