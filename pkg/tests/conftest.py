import numpy as np
import pytest

from faircop.corpus import Corpus, EmbeddingView, ImageRecord, SynthConfig, synthesize_corpus


@pytest.fixture
def small_corpus() -> Corpus:
    """500 records, 6 binary attributes, 3 noisy views; deterministic."""
    cfg = SynthConfig(
        n=500,
        schema={f"a{i}": 2 for i in range(6)},
        views=[("hog", 32, 0.1), ("facenet", 32, 0.1), ("mix", 32, 0.1)],
        seed=3,
        prototype_scale=0.15,
    )
    return synthesize_corpus(cfg)


@pytest.fixture
def tiny_corpus() -> Corpus:
    """Five records with hand-set embeddings for brute-force arithmetic."""
    vectors = np.array([
        [1.0, 0.0, 0.0],
        [0.9, 0.1, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.9, 0.3],
        [-1.0, 0.0, 0.0],
    ], dtype=np.float32)
    flipped = vectors[:, [1, 0, 2]].copy()
    records = [
        ImageRecord(id=f"t{i}", attributes={"shade": "dark" if i < 2 else "light",
                                            "shape": "round" if i % 2 == 0 else "square"})
        for i in range(5)
    ]
    return Corpus(
        records=records,
        views={
            "alpha": EmbeddingView("alpha", 3, vectors),
            "beta": EmbeddingView("beta", 3, flipped),
        },
        schema={"shade": ["dark", "light"], "shape": ["round", "square"]},
        sensitive_attributes=["shade"],
    )
