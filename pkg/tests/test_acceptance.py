"""Acceptance suite: one test per release criterion, each printing a
[PASS]/[FAIL] line (run with -s to see them on success).

Criteria use property-based and structural checks on synthetic corpora at
desk scale; every tolerance is pinned here.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from faircop import losses, metrics, network
from faircop.corpus import (SynthConfig, load_corpus, save_corpus,
                            synthesize_corpus)
from faircop.engine import (EngineConfig, centroid_ranking, faircop_ranking,
                            start_session, submit_feedback)
from faircop.simulator import (SimState, SimulatorConfig, init_threshold,
                               judge, run_simulation, update_threshold)

from oracles import naive_scloss, naive_scloss_alt
from test_network import draw_differentiable_config, finite_difference_max_rel_error

UNIFORM = {"hog": 1.0, "facenet": 1.0, "mix": 1.0}

_results = []


def report(name: str, detail: str) -> None:
    line = f"[PASS] {name}: {detail}"
    _results.append(line)
    print(line)


@pytest.fixture(scope="module")
def analog_corpus():
    """The structural-analog corpus: 2000 records, 8 binary attributes,
    three 32-d views with noise 0.1 over weak prototypes."""
    cfg = SynthConfig(n=2000, schema={f"a{i}": 2 for i in range(8)},
                      views=[("hog", 32, 0.1), ("facenet", 32, 0.1),
                             ("mix", 32, 0.1)],
                      seed=42, prototype_scale=0.15)
    return synthesize_corpus(cfg)


def test_gradient_correctness():
    started = time.perf_counter()
    worst = 0.0
    for loss_kind in ("scloss", "scloss_alt"):
        for seed in range(20):
            net, x_s, x_d = draw_differentiable_config(seed)
            worst = max(worst, finite_difference_max_rel_error(
                net, x_s, x_d, loss_kind, tau=0.5, h=1e-5))
    elapsed = time.perf_counter() - started
    assert worst < 1e-4
    assert elapsed < 5.0
    report("gradient correctness",
           f"max relative error {worst:.2e} over 20 seeds x 2 losses "
           f"in {elapsed:.2f}s")


def test_loss_oracles():
    e1 = np.array([1.0, 0.0])
    neg = np.array([-1.0, 0.0])
    assert losses.scloss([e1, e1], [neg], 1.0) == pytest.approx(-2.0, abs=1e-12)
    rng = np.random.default_rng(100)
    worst = 0.0
    for _ in range(100):
        s = rng.normal(size=(rng.integers(2, 7), 5))
        d = rng.normal(size=(rng.integers(2, 7), 5))
        tau = float(rng.uniform(0.2, 2.0))
        worst = max(worst,
                    abs(losses.scloss(s, d, tau) - naive_scloss(
                        s.tolist(), d.tolist(), tau)),
                    abs(losses.scloss_alt(s, d, tau) - naive_scloss_alt(
                        s.tolist(), d.tolist(), tau)))
    assert worst < 1e-9
    report("loss oracles",
           f"double-loop reference agreement to {worst:.1e} on 100 inputs "
           "plus the closed-form -2 fixture")


def test_identity_network_matches_centroid_ranking():
    cfg = SynthConfig(n=500, schema={f"a{i}": 2 for i in range(6)},
                      views=[("hog", 24, 0.1), ("facenet", 24, 0.1),
                             ("mix", 24, 0.1)],
                      seed=3, prototype_scale=0.15)
    corpus = synthesize_corpus(cfg)
    engine_cfg = EngineConfig(view_weights=UNIFORM, net_init="identity",
                              hidden_dims=(), learning_rate=0.0, seed=5)
    session, batch = start_session(corpus, None, engine_cfg)
    rng = np.random.default_rng(8)
    compared = 0
    for _ in range(10):
        similar = [i for i in batch if rng.random() < 0.5]
        result = submit_feedback(session, similar)
        if result["status"] != "active":
            break
        if session.similar_all:
            assert faircop_ranking(session) == centroid_ranking(
                session.similar_all, session)
            compared += 1
        batch = result["batch"]
    assert compared >= 5
    report("identity-network ranking equivalence",
           f"argsort equality on {compared} iterations over 500 records")


def test_structural_analog_ordering(analog_corpus):
    started = time.perf_counter()
    sim_cfg = SimulatorConfig(weights=UNIFORM, max_iterations=1000)
    engine_cfg = EngineConfig(view_weights=UNIFORM)
    seeds = np.random.SeedSequence(2024).generate_state(10)
    aci, pr = {}, {}
    for algo in ("faircop", "rocchio", "random"):
        logs = [run_simulation(analog_corpus, algo, sim_cfg, engine_cfg,
                               seed=int(sd)) for sd in seeds]
        aci[algo] = metrics.average_convergent_iterations(logs)
        scored = [metrics.percentile_rank(log) for log in logs
                  if any(r.target_rank is not None for r in log.records)]
        pr[algo] = float(np.mean(scored)) if scored else float("nan")
    elapsed = time.perf_counter() - started
    assert elapsed < 600.0
    assert aci["faircop"] < aci["rocchio"] < aci["random"]
    assert pr["faircop"] >= 0.9
    report("structural analog",
           f"ACI faircop {aci['faircop']:.2f} < rocchio {aci['rocchio']:.2f} "
           f"< random {aci['random']:.2f}; PR(faircop) {pr['faircop']:.3f}; "
           f"{elapsed:.0f}s for 30 simulations")


def test_cluster_separation_after_convergence():
    cfg = SynthConfig(n=500, schema={f"a{i}": 2 for i in range(6)},
                      views=[("hog", 32, 0.1), ("facenet", 32, 0.1),
                             ("mix", 32, 0.1)],
                      seed=3, prototype_scale=0.15)
    corpus = synthesize_corpus(cfg)
    sim_cfg = SimulatorConfig(weights=UNIFORM, max_iterations=300)
    gaps = []
    for seed in range(5):
        seeds = np.random.SeedSequence(seed).spawn(3)
        target = corpus.ids[int(np.random.default_rng(seeds[0]).integers(len(corpus)))]
        engine_cfg = EngineConfig(view_weights=UNIFORM,
                                  seed=int(seeds[2].generate_state(1)[0]),
                                  max_iterations=300)
        state = SimState(target, init_threshold(corpus, target, sim_cfg,
                                                np.random.default_rng(seeds[1])))
        session, batch = start_session(corpus, None, engine_cfg)
        while target not in batch and session.status == "active":
            similar, _ = judge(batch, state, corpus, sim_cfg)
            result = submit_feedback(session, similar)
            state.iteration += 1
            if state.iteration % sim_cfg.update_period == 0:
                update_threshold(state, sim_cfg)
            if result["status"] != "active":
                break
            batch = result["batch"]
        if session.status != "active" or len(session.similar_all) < 2 \
                or not session.dissimilar_all:
            continue
        matrix = session.input_matrix
        rows_s = [corpus.index_of(i) for i in session.similar_all]
        rows_d = [corpus.index_of(i) for i in session.dissimilar_all]
        z_s = network.forward_batch(session.net, matrix[rows_s])
        z_d = network.forward_batch(session.net, matrix[rows_d])
        within_matrix = losses.cosine_similarity_matrix(z_s, z_s)
        n = within_matrix.shape[0]
        within = (within_matrix.sum() - np.trace(within_matrix)) / (n * (n - 1))
        cross = losses.cosine_similarity_matrix(z_s, z_d).mean()
        gaps.append(within - cross)
    assert gaps, "no converged session produced both label sets"
    assert min(gaps) >= 0.2
    report("cluster separation",
           f"projected within-minus-cross similarity gaps "
           f"{[f'{g:.2f}' for g in gaps]} all >= 0.2")


def test_simulator_arithmetic_and_determinism(analog_corpus):
    state = SimState(target_id="x", thr=0.5, stemp=[0.7])
    cfg = SimulatorConfig(weights={"mix": 1.0})
    assert update_threshold(state, cfg) == 0.51

    # strict boundary: equality means dissimilar
    vectors = analog_corpus.views["mix"].matrix
    a, b = analog_corpus.ids[0], analog_corpus.ids[1]
    from faircop.simulator import weighted_similarity
    value = weighted_similarity(a, b, analog_corpus, {"mix": 1.0})
    boundary = SimState(target_id=a, thr=value)
    similar, dissimilar = judge([b], boundary, analog_corpus,
                                SimulatorConfig(weights={"mix": 1.0}))
    assert similar == [] and dissimilar == [b]

    sim_cfg = SimulatorConfig(weights=UNIFORM, max_iterations=300)
    engine_cfg = EngineConfig(view_weights=UNIFORM)
    one = run_simulation(analog_corpus, "faircop", sim_cfg, engine_cfg, seed=9)
    two = run_simulation(analog_corpus, "faircop", sim_cfg, engine_cfg, seed=9)
    assert one.to_jsonl() == two.to_jsonl()
    report("simulator arithmetic",
           "threshold EMA exactly 0.51; strict boundary; "
           f"byte-identical logs over {len(one.records)} rounds")


def test_metric_fixtures():
    assert metrics.convergence_score(0, 30, True) == 1.0
    assert metrics.convergence_score(30, 30, True) == pytest.approx(1 - 30 / 35)

    d, c = metrics.dci(metrics.ImportanceMatrix(np.eye(5)[[4, 2, 0, 1, 3]]))
    assert d == pytest.approx(1.0) and c == pytest.approx(1.0)
    d, c = metrics.dci(metrics.ImportanceMatrix(np.full((5, 5), 0.2)))
    assert d == pytest.approx(0.0, abs=1e-12) and c == pytest.approx(0.0, abs=1e-12)

    rng = np.random.default_rng(0)
    z = rng.uniform(size=(400, 4))
    importance = metrics.fit_importance(z, z, regressor="boosted_stumps", seed=0)
    d, c = metrics.dci(importance)
    i_score = metrics.informativeness(z, z, regressor="boosted_stumps", seed=0)
    assert d >= 0.9 and c >= 0.9 and i_score >= 0.9

    n, m = 8000, 2
    noise = rng.normal(size=(n, 8))
    attrs = {"t": rng.permutation(np.arange(n) % m).astype(str),
             "s": rng.permutation(np.arange(n) % 2).astype(str)}
    fair = metrics.fairness(noise, attrs, neighbor_count=5, split_seed=0)
    for grid in fair.heatmaps.values():
        assert np.all(np.abs(grid - 1.0 / m) < 0.05 + 1e-9)
    assert fair.dp_gap < 0.05
    report("metric fixtures",
           f"convergence/DCI fixtures exact; self-predicting D={d:.3f} "
           f"C={c:.3f} I={i_score:.3f}; fairness dp_gap {fair.dp_gap:.3f}")


def test_service_event_log_replay(small_corpus, tmp_path):
    from fastapi.testclient import TestClient

    from faircop.service import ServiceConfig, create_app

    def make_config(storage):
        return ServiceConfig(engine=EngineConfig(view_name="mix",
                                                 max_iterations=30, seed=0),
                             storage_dir=str(storage))

    rng = np.random.default_rng(12)
    reference_app = create_app(make_config(tmp_path / "ref"), corpus=small_corpus)
    reference = TestClient(reference_app)
    created = reference.post("/v1/sessions", json={"seed": 44}).json()
    batch = [item["id"] for item in created["batch"]]
    rounds, reference_batches = [], []
    current = batch
    for _ in range(6):
        similar = [i for i in current if rng.random() < 0.4]
        rounds.append(similar)
        body = reference.post(f"/v1/sessions/{created['session_id']}/feedback",
                              json={"similar_ids": similar}).json()
        current = [item["id"] for item in body["batch"]]
        reference_batches.append(current)

    storage = tmp_path / "interrupted"
    app_before = create_app(make_config(storage), corpus=small_corpus)
    client_before = TestClient(app_before)
    session = client_before.post("/v1/sessions", json={"seed": 44}).json()
    observed = []
    for similar in rounds[:3]:
        body = client_before.post(f"/v1/sessions/{session['session_id']}/feedback",
                                  json={"similar_ids": similar}).json()
        observed.append([item["id"] for item in body["batch"]])
    del app_before, client_before  # crash: only the JSONL log survives

    app_after = create_app(make_config(storage), corpus=small_corpus)
    client_after = TestClient(app_after)
    for similar in rounds[3:]:
        body = client_after.post(f"/v1/sessions/{session['session_id']}/feedback",
                                 json={"similar_ids": similar}).json()
        observed.append([item["id"] for item in body["batch"]])
    assert observed == reference_batches
    report("service replay",
           "restarted mid-session service reproduced all 6 batches")


def test_corpus_persistence_bit_exact(tmp_path):
    import hashlib
    import json as json_mod

    cfg = SynthConfig(n=300, schema={"a": 2, "b": 3, "c": 4},
                      views=[("hog", 48, 0.2), ("mix", 12, 0.0)], seed=77)
    corpus = synthesize_corpus(cfg)
    save_corpus(corpus, tmp_path / "one")
    loaded = load_corpus(tmp_path / "one")
    save_corpus(loaded, tmp_path / "two")

    manifests = []
    for sub in ("one", "two"):
        manifest = json_mod.loads((tmp_path / sub / "manifest.json").read_text())
        manifests.append({v["name"]: v["sha256"] for v in manifest["views"]})
        for entry in manifest["views"]:
            digest = hashlib.sha256(
                (tmp_path / sub / entry["file"]).read_bytes()).hexdigest()
            assert digest == entry["sha256"]
    assert manifests[0] == manifests[1]
    for name, view in corpus.views.items():
        assert view.matrix.tobytes() == loaded.views[name].matrix.tobytes()
    report("persistence", "save/load/save reproduces matrix sha256 digests "
                          f"for {len(corpus.views)} views")
