"""Personalized image retrieval: online contrastive re-ranking from
similar/dissimilar feedback, with a deterministic user simulator, baseline
recommenders, evaluation metrics, and an HTTP session service.
"""

from .corpus import (Corpus, CorpusError, EmbeddingView, ImageRecord,
                     SynthConfig, load_corpus, save_corpus, stratified_sample,
                     synthesize_corpus)
from .engine import (ALGORITHMS, EngineConfig, FeedbackEvent, RocchioState,
                     SessionState, report_target, start_session,
                     submit_feedback)
from .losses import LossConfig, npair_term, scloss, scloss_alt, score, score_alt
from .network import (OptimizerState, ProjectionNet, TrainConfig, cosine_sim,
                      forward, init_net, pretrain, train_step)
from .simulator import (SimState, SimulationLog, SimulatorConfig,
                        init_threshold, judge, run_experiment, run_simulation,
                        update_threshold, weighted_similarity)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "Corpus", "CorpusError", "EmbeddingView", "EngineConfig",
    "FeedbackEvent", "ImageRecord", "LossConfig", "OptimizerState",
    "ProjectionNet", "RocchioState", "SessionState", "SimState",
    "SimulationLog", "SimulatorConfig", "SynthConfig", "TrainConfig",
    "cosine_sim", "forward", "init_net", "init_threshold", "judge",
    "load_corpus", "npair_term", "pretrain", "report_target",
    "run_experiment", "run_simulation", "save_corpus", "scloss", "scloss_alt",
    "score", "score_alt", "start_session", "stratified_sample",
    "submit_feedback", "synthesize_corpus", "train_step", "update_threshold",
    "weighted_similarity",
]
