"""Trainer: sampling, the two loss terms, Adam, and the epoch loop."""

import json
import math

import numpy as np
import pytest

from caselink.bm25 import build_index, score_all
from caselink.errors import DimensionError, LabelError, NumericalError
from caselink.gat import GatParams, LayerGrads, LayerParams, load_checkpoint
from caselink.graph import build_global_case_graph
from caselink.synthetic import SyntheticSpec, generate
from caselink.training import (
    SWEEP_GRID,
    AdamState,
    BatchEntry,
    TrainingBatch,
    TrainingConfig,
    adam_step,
    degreg_loss,
    hard_negative_pools,
    infonce_loss,
    sample_batch,
    total_loss_and_grads,
    train,
)

from conftest import make_store, random_gcg, toy_batch


def small_dataset():
    spec = SyntheticSpec(
        n_clusters=2,
        candidates_per_cluster=6,
        queries_per_cluster=2,
        relevant_per_query=3,
        dim=8,
        seed=1,
    )
    ds = generate(spec)
    graph = build_global_case_graph(
        ds.store, ds.table, build_index(ds.store), k=3, delta=0.9
    )
    return ds, graph


class TestTrainingConfig:
    def test_defaults(self):
        cfg = TrainingConfig()
        assert cfg.batch_size == 256
        assert cfg.layers == 2
        assert cfg.hidden_dim is None
        assert cfg.dropout == 0.2
        assert cfg.lr == 1e-3
        assert cfg.weight_decay == 1e-4
        assert cfg.n_easy_neg == 1
        assert cfg.n_hard_neg == 5
        assert cfg.lam == 1e-3
        assert cfg.tau == 0.1
        assert cfg.k_edges == 5
        assert cfg.delta == 0.9
        assert cfg.hard_neg_pool_size == 10
        assert cfg.epochs == 30
        assert cfg.seed == 0

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainingConfig(tau=0.0)
        with pytest.raises(ValueError):
            TrainingConfig(dropout=1.0)
        with pytest.raises(ValueError):
            TrainingConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainingConfig(delta=1.5)
        with pytest.raises(ValueError):
            TrainingConfig(batch_size=0)

    def test_sweep_grid_covers_tunable_axes(self):
        assert SWEEP_GRID["batch_size"] == (256, 512, 1024, 1678)
        assert SWEEP_GRID["layers"] == (1, 2, 3)
        assert SWEEP_GRID["dropout"] == (0.1, 0.2, 0.5)
        assert SWEEP_GRID["lr"] == (1e-2, 1e-3, 1e-4)
        assert SWEEP_GRID["weight_decay"] == (1e-3, 1e-4, 1e-5)
        assert SWEEP_GRID["n_hard_neg"] == (1, 5, 10)
        assert SWEEP_GRID["lam"] == (0.0, 5e-4, 1e-3, 5e-3)
        assert SWEEP_GRID["k_edges"] == (3, 5, 10)
        assert SWEEP_GRID["delta"] == (0.85, 0.9, 0.95)
        assert set(SWEEP_GRID) <= set(TrainingConfig.__dataclass_fields__)


class TestHardNegativePools:
    def test_pool_excludes_positives_and_follows_ranking(self):
        from caselink.corpus import Role

        store = make_store(
            [
                ("q1", "alpha beta gamma", Role.QUERY),
                ("c1", "alpha beta gamma", Role.CANDIDATE),
                ("c2", "alpha beta", Role.CANDIDATE),
                ("c3", "alpha", Role.CANDIDATE),
                ("c4", "unrelated text", Role.CANDIDATE),
            ]
        )
        index = build_index(store)
        labels = {"q1": ("c1",)}
        pools = hard_negative_pools(store, index, labels, pool_size=3)
        scores = score_all(index, store.cases[0].tokens)
        assert pools["q1"] == ("c2", "c3")
        assert scores[2] > scores[3]  # c2 outranks c3

    def test_ties_resolve_by_ascending_id(self):
        from caselink.corpus import Role

        store = make_store(
            [
                ("q1", "alpha", Role.QUERY),
                ("cb", "alpha", Role.CANDIDATE),
                ("ca", "alpha", Role.CANDIDATE),
                ("cc", "alpha", Role.CANDIDATE),
            ]
        )
        pools = hard_negative_pools(store, build_index(store), {"q1": ()}, pool_size=2)
        assert pools["q1"] == ("ca", "cb")


class TestSampleBatch:
    def _fixture(self):
        labels = {"q1": ("c1",), "q2": ("c2", "c3")}
        pools = {"q1": ("c2", "c4"), "q2": ("c1", "c4")}
        candidates = ["c1", "c2", "c3", "c4", "c5", "c6"]
        return labels, pools, candidates

    def test_deterministic_for_seeded_rng(self):
        labels, pools, candidates = self._fixture()
        cfg = TrainingConfig(n_easy_neg=2, n_hard_neg=1)
        b1 = sample_batch(labels, pools, candidates, cfg, np.random.default_rng(3), ["q1", "q2"])
        b2 = sample_batch(labels, pools, candidates, cfg, np.random.default_rng(3), ["q1", "q2"])
        assert b1 == b2

    def test_negatives_exclude_known_positives(self):
        labels, pools, candidates = self._fixture()
        cfg = TrainingConfig(n_easy_neg=3, n_hard_neg=2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            batch = sample_batch(labels, pools, candidates, cfg, rng, ["q1", "q2"])
            for entry in batch.entries:
                positives = set(labels[entry.query_id])
                assert entry.positive_id in positives
                assert not positives & set(entry.easy_negative_ids)
                assert set(entry.hard_negative_ids) <= set(pools[entry.query_id])

    def test_easy_negatives_never_repeat_within_entry(self):
        labels, pools, candidates = self._fixture()
        cfg = TrainingConfig(n_easy_neg=4, n_hard_neg=0)
        rng = np.random.default_rng(1)
        for _ in range(20):
            batch = sample_batch(labels, pools, candidates, cfg, rng, ["q1"])
            easy = batch.entries[0].easy_negative_ids
            assert len(set(easy)) == len(easy)

    def test_empty_hard_pool_falls_back_with_warning(self, caplog):
        labels = {"q1": ("c1",)}
        pools = {"q1": ()}
        cfg = TrainingConfig(n_easy_neg=1, n_hard_neg=2)
        with caplog.at_level("WARNING", logger="caselink.training"):
            batch = sample_batch(
                labels, pools, ["c1", "c2", "c3", "c4"], cfg, np.random.default_rng(0), ["q1"]
            )
        assert "falling back" in caplog.text
        entry = batch.entries[0]
        assert len(entry.hard_negative_ids) == 2
        assert "c1" not in entry.hard_negative_ids

    def test_no_positive_is_an_error(self):
        cfg = TrainingConfig()
        with pytest.raises(LabelError):
            sample_batch({"q1": ()}, {}, ["c1", "c2"], cfg, np.random.default_rng(0), ["q1"])

    def test_insufficient_easy_negatives_is_an_error(self):
        cfg = TrainingConfig(n_easy_neg=2)
        with pytest.raises(LabelError):
            sample_batch(
                {"q1": ("c1",)}, {}, ["c1", "c2"], cfg, np.random.default_rng(0), ["q1"]
            )


class TestInfonceLoss:
    def _row_of(self, ids):
        return {nid: i for i, nid in enumerate(ids)}

    def test_equal_similarities_give_log_one_plus_p(self):
        for p in (1, 4, 9):
            ids = ["q", "pos"] + [f"n{i}" for i in range(p)]
            h = np.tile(np.array([1.0, 0.5, -0.25]), (len(ids), 1))
            entry = BatchEntry(
                query_id="q",
                positive_id="pos",
                easy_negative_ids=tuple(f"n{i}" for i in range(p)),
                hard_negative_ids=(),
                known_positive_ids=frozenset({"pos"}),
            )
            loss, _ = infonce_loss(
                h, TrainingBatch((entry,)), tau=0.1, row_of=self._row_of(ids)
            )
            assert loss == pytest.approx(math.log(1.0 + p), abs=1e-12)

    def test_hand_worked_opposed_pair(self):
        # cos(query, positive)=1, cos(query, negative)=-1, tau=1:
        # loss = ln(1 + e^{-2})
        ids = ["q", "pos", "neg"]
        h = np.array([[1.0, 0.0], [2.0, 0.0], [-3.0, 0.0]])
        entry = BatchEntry(
            query_id="q",
            positive_id="pos",
            easy_negative_ids=("neg",),
            hard_negative_ids=(),
            known_positive_ids=frozenset({"pos"}),
        )
        loss, _ = infonce_loss(h, TrainingBatch((entry,)), tau=1.0, row_of=self._row_of(ids))
        assert loss == pytest.approx(math.log(1.0 + math.exp(-2.0)), abs=1e-12)
        assert loss == pytest.approx(0.126928, abs=1e-6)

    def test_in_batch_positives_of_other_entries_join_the_denominator(self):
        ids = ["q1", "p1", "q2", "p2", "n1", "n2"]
        rng = np.random.default_rng(8)
        h = rng.standard_normal((len(ids), 4))
        row_of = self._row_of(ids)

        def entry(qid, pid, negs, known):
            return BatchEntry(
                query_id=qid,
                positive_id=pid,
                easy_negative_ids=negs,
                hard_negative_ids=(),
                known_positive_ids=frozenset(known),
            )

        base = TrainingBatch(
            (
                entry("q1", "p1", ("n1",), {"p1"}),
                entry("q2", "p2", ("n2",), {"p2"}),
            )
        )
        # shared positive: p2 is also a known positive of q1, so it must be
        # filtered out of q1's denominator
        filtered = TrainingBatch(
            (
                entry("q1", "p1", ("n1",), {"p1", "p2"}),
                entry("q2", "p2", ("n2",), {"p2"}),
            )
        )
        loss_base, _ = infonce_loss(h, base, tau=0.5, row_of=row_of)
        loss_filtered, _ = infonce_loss(h, filtered, tau=0.5, row_of=row_of)
        assert loss_base != loss_filtered

        # manual recomputation of the filtered batch
        def unit(v):
            return v / np.linalg.norm(v)

        def cos(a, b):
            return float(unit(h[row_of[a]]) @ unit(h[row_of[b]]))

        tau = 0.5
        # q1: negatives n1 only (p2 filtered as known positive)
        logits1 = np.array([cos("q1", "p1"), cos("q1", "n1")]) / tau
        l1 = math.log(np.exp(logits1 - logits1.max()).sum()) + logits1.max() - logits1[0]
        # q2: negatives n2 plus in-batch positive p1
        logits2 = np.array([cos("q2", "p2"), cos("q2", "n2"), cos("q2", "p1")]) / tau
        l2 = math.log(np.exp(logits2 - logits2.max()).sum()) + logits2.max() - logits2[0]
        assert loss_filtered == pytest.approx((l1 + l2) / 2.0, abs=1e-12)

    def test_batch_mean_over_independent_entries(self):
        ids = ["q1", "p1", "q2", "p2", "n1"]
        rng = np.random.default_rng(9)
        h = rng.standard_normal((len(ids), 3))
        row_of = self._row_of(ids)
        e1 = BatchEntry("q1", "p1", ("n1",), (), frozenset({"p1", "p2"}))
        e2 = BatchEntry("q2", "p2", ("n1",), (), frozenset({"p1", "p2"}))
        both, _ = infonce_loss(h, TrainingBatch((e1, e2)), tau=0.7, row_of=row_of)
        only1, _ = infonce_loss(h, TrainingBatch((e1,)), tau=0.7, row_of=row_of)
        only2, _ = infonce_loss(h, TrainingBatch((e2,)), tau=0.7, row_of=row_of)
        assert both == pytest.approx((only1 + only2) / 2.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        ids = ["q1", "p1", "q2", "p2", "n1", "n2", "x"]
        rng = np.random.default_rng(10)
        h = rng.standard_normal((len(ids), 4))
        row_of = self._row_of(ids)
        batch = TrainingBatch(
            (
                BatchEntry("q1", "p1", ("n1",), ("n2",), frozenset({"p1"})),
                BatchEntry("q2", "p2", ("n2",), (), frozenset({"p2"})),
            )
        )
        _, dh = infonce_loss(h, batch, tau=0.3, row_of=row_of)
        eps = 1e-6
        for i in range(h.shape[0]):
            for j in range(h.shape[1]):
                orig = h[i, j]
                h[i, j] = orig + eps
                plus, _ = infonce_loss(h, batch, tau=0.3, row_of=row_of)
                h[i, j] = orig - eps
                minus, _ = infonce_loss(h, batch, tau=0.3, row_of=row_of)
                h[i, j] = orig
                fd = (plus - minus) / (2 * eps)
                assert fd == pytest.approx(dh[i, j], abs=1e-7)

    def test_validation_errors(self):
        h = np.ones((2, 2))
        row_of = {"q": 0, "p": 1}
        entry = BatchEntry("q", "p", (), (), frozenset({"p"}))
        with pytest.raises(ValueError):
            infonce_loss(h, TrainingBatch((entry,)), tau=0.0, row_of=row_of)
        with pytest.raises(ValueError):
            infonce_loss(h, TrainingBatch(()), tau=0.1, row_of=row_of)

    def test_zero_norm_row_rejected(self):
        h = np.array([[0.0, 0.0], [1.0, 0.0]])
        entry = BatchEntry("q", "p", (), (), frozenset({"p"}))
        with pytest.raises(NumericalError):
            infonce_loss(h, TrainingBatch((entry,)), tau=0.1, row_of={"q": 0, "p": 1})


class TestDegregLoss:
    def test_identical_rows_hit_upper_bound(self):
        n, o = 5, 3
        h = np.tile(np.array([0.6, -0.8]), (n, 1))
        cand = np.arange(n - o, n)
        loss, _ = degreg_loss(h, n, cand)
        assert loss == pytest.approx(o * n, abs=1e-12)

    def test_single_candidate_orthogonal_pair(self):
        h = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _ = degreg_loss(h, 2, np.array([1]))
        assert loss == pytest.approx(1.0, abs=1e-12)

    def test_matches_double_loop_reference(self):
        rng = np.random.default_rng(12)
        for _ in range(15):
            n = int(rng.integers(2, 10))
            d = int(rng.integers(2, 5))
            o = int(rng.integers(1, n + 1))
            h = rng.standard_normal((n + 2, d))  # two extra non-case rows
            cand = np.sort(rng.choice(n, size=o, replace=False))
            unit = h[:n] / np.linalg.norm(h[:n], axis=1, keepdims=True)
            expected = sum(
                float(unit[i] @ unit[j]) for i in cand for j in range(n)
            )
            loss, _ = degreg_loss(h, n, cand)
            assert loss == pytest.approx(expected, abs=1e-10)

    def test_bounds(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            n = int(rng.integers(2, 12))
            o = int(rng.integers(1, n + 1))
            h = rng.standard_normal((n, 3))
            cand = np.sort(rng.choice(n, size=o, replace=False))
            loss, _ = degreg_loss(h, n, cand)
            assert o * (2.0 - n) - 1e-9 <= loss <= o * n + 1e-9

    def test_rows_beyond_cases_are_ignored(self):
        rng = np.random.default_rng(14)
        h = rng.standard_normal((6, 3))
        cand = np.array([2, 3])
        loss_a, dh_a = degreg_loss(h, 4, cand)
        h2 = h.copy()
        h2[4:] = rng.standard_normal((2, 3))
        loss_b, dh_b = degreg_loss(h2, 4, cand)
        assert loss_a == loss_b
        np.testing.assert_array_equal(dh_a[:4], dh_b[:4])
        assert not np.any(dh_a[4:])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        h = rng.standard_normal((7, 4))
        cand = np.array([3, 5, 6])
        _, dh = degreg_loss(h, 7, cand)
        eps = 1e-6
        for i in range(7):
            for j in range(4):
                orig = h[i, j]
                h[i, j] = orig + eps
                plus, _ = degreg_loss(h, 7, cand)
                h[i, j] = orig - eps
                minus, _ = degreg_loss(h, 7, cand)
                h[i, j] = orig
                fd = (plus - minus) / (2 * eps)
                assert fd == pytest.approx(dh[i, j], abs=1e-7)

    def test_validation(self):
        h = np.ones((3, 2))
        with pytest.raises(ValueError):
            degreg_loss(h, 3, np.array([], dtype=np.int64))
        h[1] = 0.0
        with pytest.raises(NumericalError):
            degreg_loss(h, 3, np.array([0]))


class TestTotalLoss:
    def test_total_combines_terms_linearly(self):
        graph = random_gcg()
        from caselink.gat import init_params

        params = init_params(7, [graph.dim, graph.dim, graph.dim])
        batch = toy_batch()
        cfg1 = TrainingConfig(lam=1e-3, tau=0.1, dropout=0.0)
        cfg2 = TrainingConfig(lam=5e-3, tau=0.1, dropout=0.0)
        t1, nce1, reg1, _, _ = total_loss_and_grads(
            params, graph, batch, cfg1, train_mode=False
        )
        t2, nce2, reg2, _, _ = total_loss_and_grads(
            params, graph, batch, cfg2, train_mode=False
        )
        assert t1 == nce1 + cfg1.lam * reg1
        assert nce1 == nce2 and reg1 == reg2  # eval forward is deterministic
        assert t2 - t1 == pytest.approx((cfg2.lam - cfg1.lam) * reg1, abs=1e-12)

    def test_lam_zero_skips_regularizer(self):
        graph = random_gcg()
        from caselink.gat import init_params

        params = init_params(7, [graph.dim, graph.dim])
        cfg = TrainingConfig(lam=0.0, dropout=0.0)
        total, nce, reg, _, _ = total_loss_and_grads(
            params, graph, toy_batch(), cfg, train_mode=False
        )
        assert reg == 0.0
        assert total == nce


class TestAdamStep:
    def _scalar_setup(self, w0=0.0, grad=1.0):
        params = GatParams(
            layers=[
                LayerParams(
                    W=np.array([[w0]]), a_src=np.array([0.0]), a_dst=np.array([0.0])
                )
            ],
            dropout_rate=0.0,
        )
        grads = [
            LayerGrads(W=np.array([[grad]]), a_src=np.array([0.0]), a_dst=np.array([0.0]))
        ]
        return params, grads, AdamState.zeros_like(params)

    def test_hand_worked_first_step(self):
        params, grads, state = self._scalar_setup()
        new_params, new_state = adam_step(params, grads, state, lr=1e-3)
        # bias-corrected m_hat = 1, v_hat = 1: step = lr / (1 + eps)
        assert new_params.layers[0].W[0, 0] == pytest.approx(-0.000999999990, abs=1e-12)
        assert new_state.t == 1

    def test_zero_gradient_leaves_parameters_unchanged(self):
        params, _, state = self._scalar_setup()
        zero = [
            LayerGrads(W=np.zeros((1, 1)), a_src=np.zeros(1), a_dst=np.zeros(1))
        ]
        new_params, _ = adam_step(params, zero, state, lr=1e-3)
        np.testing.assert_array_equal(new_params.layers[0].W, params.layers[0].W)

    def test_purity(self):
        params, grads, state = self._scalar_setup(w0=0.5)
        w_before = params.layers[0].W.copy()
        out1, s1 = adam_step(params, grads, state, lr=1e-2)
        out2, s2 = adam_step(params, grads, state, lr=1e-2)
        np.testing.assert_array_equal(params.layers[0].W, w_before)
        assert state.t == 0
        np.testing.assert_array_equal(out1.layers[0].W, out2.layers[0].W)
        np.testing.assert_array_equal(s1.m[0].W, s2.m[0].W)

    def test_weight_decay_equals_l2_gradient_shift(self):
        params, grads, state = self._scalar_setup(w0=0.7, grad=0.3)
        with_wd, _ = adam_step(params, grads, state, lr=1e-3, weight_decay=0.01)
        shifted = [
            LayerGrads(
                W=grads[0].W + 0.01 * params.layers[0].W,
                a_src=grads[0].a_src + 0.01 * params.layers[0].a_src,
                a_dst=grads[0].a_dst + 0.01 * params.layers[0].a_dst,
            )
        ]
        manual, _ = adam_step(params, shifted, state, lr=1e-3, weight_decay=0.0)
        np.testing.assert_array_equal(with_wd.layers[0].W, manual.layers[0].W)

    def test_shape_mismatch_rejected(self):
        params, grads, state = self._scalar_setup()
        bad = [LayerGrads(W=np.zeros((2, 2)), a_src=np.zeros(1), a_dst=np.zeros(1))]
        with pytest.raises(DimensionError):
            adam_step(params, bad, state, lr=1e-3)

    def test_gradient_list_length_mismatch_rejected(self):
        params, grads, state = self._scalar_setup()
        with pytest.raises(DimensionError):
            adam_step(params, grads * 2, state, lr=1e-3)

    def test_bias_correction_across_steps(self):
        params, grads, state = self._scalar_setup()
        p, s = params, state
        for _ in range(3):
            p, s = adam_step(p, grads, s, lr=1e-3)
        assert s.t == 3
        # constant gradient: every bias-corrected step is ~lr regardless of t
        assert p.layers[0].W[0, 0] == pytest.approx(-3e-3, rel=1e-6)


class TestTrainLoop:
    def test_loss_decreases_on_separable_data(self):
        ds, graph = small_dataset()
        cfg = TrainingConfig(
            epochs=8,
            batch_size=8,
            dropout=0.0,
            lr=0.01,
            n_easy_neg=1,
            n_hard_neg=2,
            hard_neg_pool_size=5,
            seed=0,
        )
        result = train(ds.store, graph, ds.labels, cfg)
        losses = [e.mean_loss for e in result.log]
        assert len(losses) == 8
        assert min(losses) < losses[0]
        assert result.best_epoch == int(np.argmin(losses))

    def test_deterministic_given_seed(self):
        ds, graph = small_dataset()
        cfg = TrainingConfig(
            epochs=3, batch_size=4, dropout=0.2, lr=0.01, hard_neg_pool_size=5, seed=1
        )
        r1 = train(ds.store, graph, ds.labels, cfg)
        r2 = train(ds.store, graph, ds.labels, cfg)
        for l1, l2 in zip(r1.final_params.layers, r2.final_params.layers):
            np.testing.assert_array_equal(l1.W, l2.W)
        assert [e.mean_loss for e in r1.log] == [e.mean_loss for e in r2.log]

    def test_checkpoints_and_log_files(self, tmp_path):
        ds, graph = small_dataset()
        cfg = TrainingConfig(epochs=3, batch_size=8, hard_neg_pool_size=5, seed=0)
        result = train(ds.store, graph, ds.labels, cfg, checkpoint_dir=tmp_path)
        for epoch in range(3):
            assert (tmp_path / f"checkpoint_ep{epoch:04d}.gatc").exists()
        best = load_checkpoint(tmp_path / "checkpoint.gatc")
        for l1, l2 in zip(best.layers, result.params.layers):
            np.testing.assert_array_equal(l1.W, l2.W)
        log_lines = (tmp_path / "training_log.jsonl").read_text().splitlines()
        assert len(log_lines) == 3
        entry = json.loads(log_lines[0])
        assert set(entry) == {"epoch", "mean_loss", "infonce", "degreg", "wall_ms"}

    def test_epochs_zero_returns_initialization(self):
        ds, graph = small_dataset()
        from caselink.gat import init_params

        cfg = TrainingConfig(epochs=0, seed=5)
        result = train(ds.store, graph, ds.labels, cfg)
        dims = [graph.dim] + [graph.dim] * cfg.layers
        init = init_params(cfg.seed, dims, dropout=cfg.dropout)
        for l1, l2 in zip(result.params.layers, init.layers):
            np.testing.assert_array_equal(l1.W, l2.W)

    def test_no_labels_rejected(self):
        ds, graph = small_dataset()
        with pytest.raises(LabelError):
            train(ds.store, graph, {}, TrainingConfig(epochs=1))

    def test_query_without_positives_rejected(self):
        ds, graph = small_dataset()
        labels = dict(ds.labels)
        labels[next(iter(labels))] = ()
        with pytest.raises(LabelError):
            train(ds.store, graph, labels, TrainingConfig(epochs=1))
