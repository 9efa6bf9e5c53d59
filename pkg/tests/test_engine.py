import numpy as np
import pytest

from faircop import engine, losses, network
from faircop.corpus import Corpus, CorpusError, EmbeddingView, ImageRecord
from faircop.engine import (EngineConfig, FeedbackError, RocchioState,
                            SessionClosedError, centroid_ranking,
                            faircop_ranking, report_target, rocchio_update,
                            start_session, submit_feedback)


def base_config(**overrides) -> EngineConfig:
    defaults = dict(k=4, u=2, prev_samp=6, epochs=2, view_weights=None,
                    view_name="mix", seed=13)
    defaults.update(overrides)
    return EngineConfig(**defaults)


def feedback_loop(session, batch, judge, rounds):
    """Drive a session with a judging callable; returns visited batches."""
    batches = [batch]
    for _ in range(rounds):
        result = submit_feedback(session, judge(batch))
        session.check_partition()
        if result["status"] != "active":
            break
        batch = result["batch"]
        batches.append(batch)
    return batches


class TestStartSession:
    def test_whole_corpus_when_batch_covers_it(self, tiny_corpus):
        cfg = base_config(k=4, u=1, view_name="alpha")
        session, batch = start_session(tiny_corpus, None, cfg)
        assert sorted(batch) == sorted(tiny_corpus.ids)
        assert session.unseen == set()

    def test_balanced_first_batch(self, small_corpus):
        cfg = base_config(k=6, u=2, view_name="mix")
        _, batch = start_session(small_corpus, None, cfg)
        classes = [small_corpus.record(i).attributes["a0"] for i in batch]
        assert classes.count("v0") == 4 and classes.count("v1") == 4

    def test_same_seed_same_batch(self, small_corpus):
        cfg = base_config()
        _, one = start_session(small_corpus, None, cfg)
        _, two = start_session(small_corpus, None, cfg)
        assert one == two

    def test_empty_match_rejected(self, small_corpus):
        with pytest.raises(CorpusError, match="zero records"):
            start_session(small_corpus, {"a0": "not-a-value"}, base_config())

    def test_constraints_shape_first_batch_only(self, small_corpus):
        cfg = base_config()
        session, batch = start_session(small_corpus, {"a0": "v0"}, cfg)
        assert all(small_corpus.record(i).attributes["a0"] == "v0" for i in batch)
        # the unseen pool still covers the whole corpus minus the batch
        assert len(session.unseen) == len(small_corpus) - len(batch)


class TestSubmitFeedback:
    def test_empty_feedback_on_first_round_falls_back_to_random(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        result = submit_feedback(session, [])
        assert result["status"] == "active"
        assert result["trained"] is False
        assert len(result["batch"]) == session.config.batch_size
        assert session.last_scores is None  # nothing was scored
        session.check_partition()

    def test_training_happens_with_enough_labels(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        result = submit_feedback(session, batch[:3])
        assert result["trained"] is True
        assert isinstance(result["loss"], float)

    def test_training_skipped_on_odd_iterations(self, small_corpus):
        session, batch = start_session(small_corpus, None,
                                       base_config(train_every=2))
        first = submit_feedback(session, batch[:3])
        second = submit_feedback(session, first["batch"][:2])
        assert first["trained"] is True
        assert second["trained"] is False
        third = submit_feedback(session, second["batch"][:2])
        assert third["trained"] is True

    def test_feedback_outside_batch_rejected(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        with pytest.raises(FeedbackError, match="not in the shown batch"):
            submit_feedback(session, ["no-such-id"])

    def test_partition_invariant_over_many_rounds(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        rng = np.random.default_rng(5)

        def judge(shown):
            return [i for i in shown if rng.random() < 0.4]

        feedback_loop(session, batch, judge, rounds=30)
        touched = session.similar_set | session.dissimilar_set
        pending = set(session.shown)
        assert touched | session.unseen | pending >= set(small_corpus.ids)

    def test_relabeling_latest_wins(self, small_corpus):
        cfg = base_config(explore_history_every=1, u=3)
        session, batch = start_session(small_corpus, None, cfg)
        submit_feedback(session, batch)  # everything similar
        assert set(batch) <= session.similar_set
        # history exploration re-shows labeled ids; flip any that reappear
        result = submit_feedback(session, [])
        reshown = [i for i in session.event_log[-1].shown if i in set(batch)]
        if reshown:
            assert set(reshown) <= session.dissimilar_set
            assert not set(reshown) & session.similar_set
        session.check_partition()

    def test_closed_session_rejects_feedback(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        report_target(session, batch[0])
        with pytest.raises(SessionClosedError):
            submit_feedback(session, [])

    def test_abandoned_at_max_iterations(self, small_corpus):
        cfg = base_config(max_iterations=3)
        session, batch = start_session(small_corpus, None, cfg)
        outcomes = []
        for _ in range(3):
            result = submit_feedback(session, batch[:3])
            outcomes.append(result["status"])
            if result["status"] != "active":
                break
            batch = result["batch"]
        assert outcomes == ["active", "active", "abandoned"]
        assert session.status == "abandoned"

    def test_exhausted_when_pool_empties(self, tiny_corpus):
        # batch covers the corpus and u=0 leaves no history slots, so the
        # next round has nothing to show
        cfg = base_config(k=5, u=0, view_name="alpha")
        session, batch = start_session(tiny_corpus, None, cfg)
        result = submit_feedback(session, batch[:2])
        assert result["status"] == "exhausted"
        assert session.status == "exhausted"

    def test_anchored_batch_size_bounds(self, small_corpus):
        # |batch| <= prev_samp + |fresh labels on that side|
        cfg = base_config(prev_samp=3, epochs=1)
        session, batch = start_session(small_corpus, None, cfg)
        observed = []
        fresh_counts = {}
        original_train_step = network.train_step

        def spy(net, x_s, x_d, *args, **kwargs):
            observed.append((len(x_s), len(x_d), dict(fresh_counts)))
            return original_train_step(net, x_s, x_d, *args, **kwargs)

        try:
            network.train_step = spy
            engine.network.train_step = spy
            for _ in range(6):
                similar = batch[: len(batch) // 2]
                fresh_counts["similar"] = len(similar)
                fresh_counts["dissimilar"] = len(batch) - len(similar)
                result = submit_feedback(session, similar)
                if result["status"] != "active":
                    break
                batch = result["batch"]
        finally:
            network.train_step = original_train_step
            engine.network.train_step = original_train_step
        assert observed, "training never ran"
        for n_s, n_d, fresh in observed:
            assert n_s <= cfg.prev_samp + fresh["similar"]
            assert n_d <= cfg.prev_samp + fresh["dissimilar"]


class TestAltLossSession:
    def test_alt_loss_session_trains_and_scores(self, small_corpus):
        cfg = base_config(loss_kind="scloss_alt")
        session, batch = start_session(small_corpus, None, cfg)
        result = submit_feedback(session, batch[:3])
        assert result["status"] == "active"
        assert result["trained"] is True
        assert session.last_scores is not None
        # the alternate score subtracts dissimilar-centroid similarity, so
        # values live in [-2, 2] rather than [-1, 1]
        _, scores = session.last_scores
        assert np.all(scores >= -2.0) and np.all(scores <= 2.0)
        session.check_partition()

    def test_alt_loss_training_needs_two_dissimilar(self, small_corpus):
        cfg = base_config(loss_kind="scloss_alt")
        session, batch = start_session(small_corpus, None, cfg)
        # all but one marked similar: only one dissimilar, training skipped
        result = submit_feedback(session, batch[:-1])
        assert result["trained"] is False
        assert result["status"] == "active"


class TestScoreBehavior:
    def test_same_cell_scores_dominate_after_consistent_feedback(self):
        from faircop.corpus import SynthConfig, synthesize_corpus
        cfg = SynthConfig(n=500, schema={"a": 2, "b": 2, "c": 2},
                          views=[("mix", 16, 0.0)], seed=2)
        corpus = synthesize_corpus(cfg)

        def cell(record_id):
            return tuple(sorted(corpus.record(record_id).attributes.items()))

        target_cell = cell(corpus.ids[0])
        session, batch = start_session(corpus, None,
                                       base_config(view_name="mix", seed=1))
        for _ in range(3):
            similar = [i for i in batch if cell(i) == target_cell]
            result = submit_feedback(session, similar)
            assert result["status"] == "active"
            batch = result["batch"]
        assert session.last_scores is not None
        ranked_ids, scores = session.last_scores
        in_cell = np.array([cell(i) == target_cell for i in ranked_ids])
        assert in_cell.any() and (~in_cell).any()
        assert scores[in_cell].mean() > scores[~in_cell].mean()

    def test_reshows_only_on_history_rounds(self, small_corpus):
        cfg = base_config(explore_history_every=3, u=2, seed=6)
        session, batch = start_session(small_corpus, None, cfg)
        seen = set(batch)
        rng = np.random.default_rng(0)
        for round_index in range(15):
            similar = [i for i in batch if rng.random() < 0.5]
            iteration_before = session.iteration
            result = submit_feedback(session, similar)
            if result["status"] != "active":
                break
            reshown = set(result["batch"]) & seen
            if iteration_before % cfg.explore_history_every != 0:
                assert not reshown
            seen |= set(result["batch"])
            batch = result["batch"]


class TestDeterminism:
    def test_identical_runs_identical_batches(self, small_corpus):
        def run():
            session, batch = start_session(small_corpus, None, base_config(seed=77))
            rng = np.random.default_rng(99)
            batches = [list(batch)]
            for _ in range(12):
                similar = [i for i in batch if rng.random() < 0.5]
                result = submit_feedback(session, similar)
                if result["status"] != "active":
                    break
                batch = result["batch"]
                batches.append(list(batch))
            return batches

        assert run() == run()

    def test_top_k_tie_break_is_lexicographic(self):
        # identical embeddings make every score tie; ranking must be by id
        records = [ImageRecord(id=f"r{i:02d}", attributes={"g": "x"})
                   for i in range(10)]
        matrix = np.ones((10, 3), dtype=np.float32)
        corpus = Corpus(records=records,
                        views={"v": EmbeddingView("v", 3, matrix)},
                        schema={"g": ["x"]}, sensitive_attributes=[])
        cfg = EngineConfig(k=3, u=0, view_name="v", net_init="identity",
                           hidden_dims=(), learning_rate=0.0, seed=0)
        session, batch = start_session(corpus, None, cfg)
        result = submit_feedback(session, batch[:2])
        expected = sorted(session.unseen | set(result["batch"]))[:3]
        assert result["batch"] == expected


class TestRecommenders:
    def test_rocchio_update_arithmetic(self):
        state = RocchioState(query=np.zeros(2), alpha=1.0, beta=1.0, gamma=0.0)
        rocchio_update(state, [np.array([1.0, 0.0])], [])
        assert np.allclose(state.query, [1.0, 0.0])

        state = RocchioState(query=np.array([0.3, 0.4]))
        rocchio_update(state, [], [])
        assert np.allclose(state.query, [0.3, 0.4])

        state = RocchioState(query=np.zeros(2), alpha=1.0, beta=0.75, gamma=0.15)
        rocchio_update(state, [np.array([1.0, 0.0])], [np.array([0.0, 1.0])])
        assert np.allclose(state.query, [0.75, -0.15])

    def test_rocchio_session_runs(self, small_corpus):
        cfg = base_config(algorithm="rocchio")
        session, batch = start_session(small_corpus, None, cfg)
        result = submit_feedback(session, batch[:3])
        assert result["status"] == "active"
        assert len(result["batch"]) == cfg.batch_size
        assert session.net is None
        session.check_partition()

    def test_centroid_single_similar_matches_cosine_ranking(self, small_corpus):
        cfg = base_config(algorithm="centroid")
        session, batch = start_session(small_corpus, None, cfg)
        anchor = batch[0]
        result = submit_feedback(session, [anchor])
        matrix = session.input_matrix
        ids = sorted(session.unseen | set(result["batch"]))
        rows = [small_corpus.index_of(i) for i in ids]
        sims = losses.cosine_similarity_matrix(
            matrix[rows], matrix[small_corpus.index_of(anchor)])[:, 0]
        order = np.argsort(-sims, kind="stable")
        expected = [ids[i] for i in order[: cfg.batch_size]]
        assert result["batch"] == expected

    def test_centroid_empty_similar_falls_back(self, small_corpus):
        cfg = base_config(algorithm="centroid")
        session, batch = start_session(small_corpus, None, cfg)
        result = submit_feedback(session, [])
        assert result["status"] == "active"
        assert session.last_scores is None

    def test_random_no_repeats_and_deterministic(self, small_corpus):
        def run():
            cfg = base_config(algorithm="random", seed=3)
            session, batch = start_session(small_corpus, None, cfg)
            seen = list(batch)
            for _ in range(20):
                result = submit_feedback(session, [])
                if result["status"] != "active":
                    break
                seen.extend(result["batch"])
            return seen

        first, second = run(), run()
        assert first == second
        assert len(first) == len(set(first))

    def test_random_uniform_coverage(self):
        # chi-square over first-batch membership across many seeded sessions
        records = [ImageRecord(id=f"r{i:02d}", attributes={"g": "x"})
                   for i in range(20)]
        corpus = Corpus(records=records,
                        views={"v": EmbeddingView("v", 2, np.ones((20, 2)))},
                        schema={"g": ["x"]}, sensitive_attributes=[])
        counts = {record_id: 0 for record_id in corpus.ids}
        draws = 2000
        for seed in range(draws):
            cfg = EngineConfig(k=4, u=0, view_name="v", algorithm="random",
                               seed=seed)
            _, batch = start_session(corpus, None, cfg)
            for record_id in batch:
                counts[record_id] += 1
        expected = draws * 4 / 20
        chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
        # 19 degrees of freedom: mean 19, sigma sqrt(38); allow 3 sigma
        assert chi2 < 19 + 3 * np.sqrt(2 * 19)


class TestIdentityEquivalence:
    def test_projected_ranking_equals_base_ranking(self, small_corpus):
        cfg = base_config(net_init="identity", hidden_dims=(),
                          learning_rate=0.0, u=0, k=6)
        session, batch = start_session(small_corpus, None, cfg)
        rng = np.random.default_rng(17)
        for _ in range(8):
            similar = [i for i in batch if rng.random() < 0.5]
            result = submit_feedback(session, similar)
            if result["status"] != "active" or not session.similar_all:
                batch = result.get("batch", [])
                continue
            ours = faircop_ranking(session)
            baseline = centroid_ranking(session.similar_all, session)
            assert ours == baseline
            batch = result["batch"]


class TestReportTarget:
    def test_report_first_batch(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        result = report_target(session, batch[0])
        assert result == {"status": "converged", "iterations": 0}

    def test_report_after_rounds(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        for _ in range(5):
            result = submit_feedback(session, batch[:2])
            batch = result["batch"]
        outcome = report_target(session, batch[0])
        assert outcome["iterations"] == 5

    def test_report_unknown_id(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        with pytest.raises(FeedbackError):
            report_target(session, "not-shown")

    def test_closed_rejects_report(self, small_corpus):
        session, batch = start_session(small_corpus, None, base_config())
        report_target(session, batch[0])
        with pytest.raises(SessionClosedError):
            report_target(session, batch[0])


class TestEventLog:
    def test_events_record_rounds(self, small_corpus, tmp_path):
        session, batch = start_session(small_corpus, None, base_config())
        submit_feedback(session, batch[:3])
        assert len(session.event_log) == 1
        event = session.event_log[0]
        assert event.iteration == 0
        assert event.shown == batch
        assert event.similar == batch[:3]
        assert event.trained is True
        path = tmp_path / "events.jsonl"
        engine.write_event_log(session, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        round_trip = engine.FeedbackEvent.from_json(lines[0])
        assert round_trip.shown == event.shown
        assert round_trip.loss == pytest.approx(event.loss)
