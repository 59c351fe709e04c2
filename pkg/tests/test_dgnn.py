"""Action classifier: graph structure, parameter budget, training, estimator."""

import numpy as np
import pytest

import wiskel.dgnn as dgnn_module
from wiskel.dgnn import (
    ACTION_NAMES,
    EDGES,
    NUM_EDGES,
    REFERENCE_PARAM_BUDGET,
    Dgnn,
    DgnnConfig,
    SkeletonActionClassifier,
    build_graph,
    edge_features,
    make_action_windows,
    train_action,
)
from wiskel.errors import (
    ConfigError,
    DataError,
    DimensionError,
    ModelAuditError,
    TrainingDivergedError,
)
from wiskel.nn.checkpoint import load_state

from _util import tiny_dgnn_config


def random_windows(n, cfg, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(0.0, 1.0, (n, 2, cfg.window, 17))


def separable_windows(n_per_class, window, seed=0):
    """Four synthetic motion classes distinct enough to classify perfectly:
    still, horizontal sway, vertical sway, and a monotone drop."""
    rng = np.random.Generator(np.random.PCG64(seed))
    tt = np.arange(window) / window
    xs, ys = [], []
    for c in range(4):
        for _ in range(n_per_class):
            x = np.full((2, window, 17), 0.5)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wave = 0.2 * np.sin(2.0 * np.pi * tt + phase)[:, None]
            if c == 1:
                x[0] += wave
            elif c == 2:
                x[1] += wave
            elif c == 3:
                x[1] = 0.2 + 0.6 * tt[:, None]
            x += rng.normal(0.0, 0.01, x.shape)
            xs.append(x)
            ys.append(c)
    return np.stack(xs), np.asarray(ys)


class TestGraph:
    def test_sixteen_edges_seventeen_vertices(self):
        graph = build_graph()
        assert graph.num_edges == NUM_EDGES == 16
        assert graph.num_vertices == 17

    def test_tree_rooted_at_nose(self):
        targets = [t for _, t in EDGES]
        assert sorted(targets) == list(range(1, 17))  # every joint except the
        assert 0 not in targets  # nose has exactly one incoming edge

    def test_connected_and_acyclic_by_traversal(self):
        children = {}
        for s, t in EDGES:
            children.setdefault(s, []).append(t)
        seen = set()
        frontier = [0]
        while frontier:
            node = frontier.pop()
            assert node not in seen  # a revisit would mean a cycle
            seen.add(node)
            frontier.extend(children.get(node, []))
        assert seen == set(range(17))

    def test_incidence_columns_mark_one_source_one_target(self):
        graph = build_graph()
        assert np.array_equal(graph.source_incidence.sum(axis=0), np.ones(16))
        assert np.array_equal(graph.target_incidence.sum(axis=0), np.ones(16))
        for e, (s, t) in enumerate(EDGES):
            assert graph.source_incidence[s, e] == 1.0
            assert graph.target_incidence[t, e] == 1.0


class TestEdgeFeatures:
    def test_matches_explicit_bone_vectors(self):
        rng = np.random.Generator(np.random.PCG64(0))
        vertex = rng.uniform(0.0, 1.0, (2, 5, 17))
        edges = edge_features(vertex)
        assert edges.shape == (2, 5, 16)
        for e, (s, t) in enumerate(EDGES):
            assert np.array_equal(edges[..., e], vertex[..., t] - vertex[..., s])

    def test_translation_invariant_bitwise_on_grid(self):
        # keypoints on the 1/64 grid shifted by 0.25 subtract exactly
        rng = np.random.Generator(np.random.PCG64(1))
        vertex = rng.integers(0, 65, (2, 8, 17)) / 64.0
        assert np.array_equal(edge_features(vertex + 0.25), edge_features(vertex))

    def test_translation_invariant_numerically(self):
        rng = np.random.Generator(np.random.PCG64(2))
        vertex = rng.uniform(0.0, 1.0, (2, 8, 17))
        shifted = edge_features(vertex + 0.3141)
        assert np.allclose(shifted, edge_features(vertex), atol=1e-12)


class TestMakeActionWindows:
    def test_counts_labels_and_frames(self):
        keypoints = np.zeros((40, 17, 2))
        labels = np.arange(40)
        x, y, frames = make_action_windows(keypoints, labels, window=30, stride=1)
        assert x.shape == (11, 2, 30, 17)
        assert np.array_equal(y, np.arange(29, 40))  # last frame's label
        assert np.array_equal(frames, np.arange(29, 40))

    def test_stride(self):
        keypoints = np.zeros((40, 17, 2))
        labels = np.arange(40)
        _, y, frames = make_action_windows(keypoints, labels, window=30, stride=5)
        assert np.array_equal(frames, [29, 34, 39])
        assert np.array_equal(y, [29, 34, 39])

    def test_window_contents_channel_first(self):
        rng = np.random.Generator(np.random.PCG64(3))
        keypoints = rng.uniform(0.0, 1.0, (12, 17, 2))
        x, _, _ = make_action_windows(keypoints, np.zeros(12, int), window=5, stride=4)
        assert np.array_equal(x[1], keypoints[4:9].transpose(2, 0, 1))

    def test_too_short_sequence_yields_empty(self):
        x, y, frames = make_action_windows(
            np.zeros((5, 17, 2)), np.zeros(5, int), window=30
        )
        assert x.shape == (0, 2, 30, 17)
        assert y.shape == frames.shape == (0,)

    def test_shape_errors(self):
        with pytest.raises(DataError, match="keypoints"):
            make_action_windows(np.zeros((5, 16, 2)), np.zeros(5, int))
        with pytest.raises(DataError, match="labels"):
            make_action_windows(np.zeros((5, 17, 2)), np.zeros(4, int))
        with pytest.raises(DataError, match="window"):
            make_action_windows(np.zeros((5, 17, 2)), np.zeros(5, int), window=0)


class TestConfig:
    def test_default_is_reference_budget(self):
        cfg = DgnnConfig()
        cfg.validate()
        assert cfg.is_reference_budget()

    def test_tiny_is_not_reference(self):
        assert not tiny_dgnn_config().is_reference_budget()

    def test_even_temporal_kernel_rejected(self):
        with pytest.raises(ConfigError, match="odd"):
            DgnnConfig(temporal_kernel=8).validate()

    def test_bad_edge_mode_rejected(self):
        with pytest.raises(ConfigError, match="temporal_edge_mode"):
            DgnnConfig(temporal_edge_mode="both").validate()


class TestParamAudit:
    def test_reference_audit_matches_budget(self):
        rows = Dgnn().param_audit()
        assert [(name, expected) for name, _, expected, _ in rows] == (
            REFERENCE_PARAM_BUDGET
        )
        for name, actual, expected, ok in rows:
            assert ok, name
            assert actual == expected, name

    def test_off_reference_audit_reports_counts_only(self):
        rows = Dgnn(tiny_dgnn_config()).param_audit()
        assert all(expected is None and ok for _, _, expected, ok in rows)
        total = dict((name, actual) for name, actual, _, _ in rows)["total"]
        assert total == Dgnn(tiny_dgnn_config()).store.num_params()

    def test_budget_mismatch_aborts_construction(self, monkeypatch):
        wrong = [
            (name, expected + 7 if name == "block2.tcn" else expected)
            for name, expected in REFERENCE_PARAM_BUDGET
        ]
        monkeypatch.setattr(dgnn_module, "REFERENCE_PARAM_BUDGET", wrong)
        with pytest.raises(ModelAuditError, match="block2.tcn"):
            Dgnn()

    def test_incidence_parameters_initialized_from_tree(self):
        model = Dgnn(tiny_dgnn_config())
        graph = build_graph()
        for block in (1, 2, 3):
            a_src = model.store[f"block{block}.dgn.A_source"].data
            a_tgt = model.store[f"block{block}.dgn.A_target"].data
            assert np.array_equal(a_src, graph.source_incidence)
            assert np.array_equal(a_tgt, graph.target_incidence)


class TestForward:
    def test_four_finite_scores_argmax_in_range(self):
        cfg = tiny_dgnn_config()
        model = Dgnn(cfg)
        scores = model.scores(random_windows(3, cfg))
        assert scores.shape == (3, 4)
        assert np.all(np.isfinite(scores))
        assert set(model.predict(random_windows(3, cfg))) <= {0, 1, 2, 3}

    def test_classify_single_window(self):
        cfg = tiny_dgnn_config()
        model = Dgnn(cfg)
        x = random_windows(2, cfg)
        row = model.classify(x[0])
        assert row.shape == (4,)
        assert np.max(np.abs(row - model.scores(x)[0])) < 1e-12

    def test_deterministic_per_seed(self):
        cfg = tiny_dgnn_config(seed=5)
        x = random_windows(2, cfg)
        assert np.array_equal(Dgnn(cfg).scores(x), Dgnn(cfg).scores(x))
        other = Dgnn(tiny_dgnn_config(seed=6)).scores(x)
        assert not np.array_equal(Dgnn(cfg).scores(x), other)

    def test_batch_of_one_matches_batched(self):
        cfg = tiny_dgnn_config()
        model = Dgnn(cfg)
        x = random_windows(4, cfg)
        batched = model.scores(x)
        singles = np.concatenate([model.scores(x[i : i + 1]) for i in range(4)])
        assert np.max(np.abs(batched - singles)) < 1e-12

    def test_frames_last_layout_accepted(self):
        cfg = tiny_dgnn_config()
        model = Dgnn(cfg)
        x = random_windows(3, cfg)
        assert np.array_equal(model.scores(x), model.scores(x.transpose(0, 2, 3, 1)))

    def test_wrong_joint_count_rejected(self):
        model = Dgnn(tiny_dgnn_config())
        with pytest.raises(DimensionError):
            model.scores(np.zeros((2, 2, 12, 16)))

    def test_edge_mode_changes_output(self):
        cfg_shared = tiny_dgnn_config()
        cfg_vertex = tiny_dgnn_config(temporal_edge_mode="vertex_only")
        x = random_windows(2, cfg_shared)
        assert not np.allclose(Dgnn(cfg_shared).scores(x), Dgnn(cfg_vertex).scores(x))

    def test_training_mode_dropout_is_stochastic(self):
        cfg = tiny_dgnn_config(dropout=0.5)
        model = Dgnn(cfg)
        x = random_windows(2, cfg)
        a = model.forward(x, training=True).data
        b = model.forward(x, training=True).data
        assert not np.array_equal(a, b)


class TestTrainAction:
    def test_zero_lr_keeps_parameters(self):
        cfg = tiny_dgnn_config()
        model = Dgnn(cfg)
        before = {k: v.copy() for k, v in model.store.state().items()}
        x, y = separable_windows(2, cfg.window)
        train_action(model, x, y, epochs=2, lr=0.0, batch_size=8)
        after = model.store.state()
        changed = [k for k in before if not np.array_equal(before[k], after[k])]
        # batch-norm running statistics move in training mode; weights must not
        assert all(".running_" in k for k in changed), changed

    def test_separable_classes_reach_high_train_accuracy(self):
        cfg = tiny_dgnn_config()
        model = Dgnn(cfg)
        x, y = separable_windows(10, cfg.window)
        # enough epochs for the batch-norm running statistics to settle so
        # that eval-mode predictions agree with the fitted training batches
        rows = train_action(model, x, y, epochs=120, lr=5e-3, batch_size=40, seed=0)
        final_acc = rows[-1][3]
        assert final_acc >= 0.99
        assert (model.predict(x) == y).mean() >= 0.95

    def test_chance_level_on_shuffled_labels(self):
        cfg = tiny_dgnn_config()
        model = Dgnn(cfg)
        rng = np.random.Generator(np.random.PCG64(7))
        x, _ = separable_windows(10, cfg.window)
        shuffled = rng.integers(0, 4, len(x))
        train_action(model, x, shuffled, epochs=5, lr=1e-3, batch_size=40)
        fresh_x = random_windows(400, cfg, seed=8)
        fresh_y = rng.integers(0, 4, 400)
        accuracy = (model.predict(fresh_x) == fresh_y).mean()
        assert abs(accuracy - 0.25) <= 0.05

    def test_log_rows_and_val_accuracy(self):
        cfg = tiny_dgnn_config()
        x, y = separable_windows(3, cfg.window)
        seen = []
        rows = train_action(
            Dgnn(cfg), x, y, epochs=2, lr=1e-3, batch_size=12,
            val_inputs=x, val_labels=y, log=seen.append,
        )
        assert seen == rows
        assert [row[:2] for row in rows] == [
            (0, "train"), (0, "val"), (1, "train"), (1, "val"),
        ]
        for row in rows:
            assert 0.0 <= row[3] <= 1.0

    def test_stop_callback_ends_early(self):
        cfg = tiny_dgnn_config()
        x, y = separable_windows(3, cfg.window)
        rows = train_action(
            Dgnn(cfg), x, y, epochs=50, lr=1e-3, batch_size=12,
            stop=lambda epoch_rows: epoch_rows[0][0] == 1,
        )
        assert rows[-1][0] == 1

    def test_checkpoint_written_and_loadable(self, tmp_path):
        cfg = tiny_dgnn_config()
        x, y = separable_windows(3, cfg.window)
        path = tmp_path / "action.ckpt"
        train_action(Dgnn(cfg), x, y, epochs=2, lr=1e-3, batch_size=12,
                     checkpoint_path=path)
        restored = Dgnn(cfg)
        restored.store.load_state(load_state(path))
        assert restored.predict(x).shape == (len(x),)

    def test_divergence_reports_location(self):
        cfg = tiny_dgnn_config()
        model = Dgnn(cfg)
        model.store["fc.weight"].data[0, 0] = np.inf
        x, y = separable_windows(2, cfg.window)
        with pytest.raises(TrainingDivergedError) as info, np.errstate(invalid="ignore"):
            train_action(model, x, y, epochs=1, lr=1e-3, batch_size=8)
        assert info.value.epoch == 0
        assert "fc.weight" in info.value.param_norms

    def test_fewer_than_two_windows_rejected(self):
        cfg = tiny_dgnn_config()
        x, y = separable_windows(1, cfg.window)
        with pytest.raises(DataError, match="2"):
            train_action(Dgnn(cfg), x[:1], y[:1], epochs=1)

    def test_deterministic_per_seed(self):
        cfg = tiny_dgnn_config()
        x, y = separable_windows(3, cfg.window)

        def run():
            model = Dgnn(cfg)
            rows = train_action(model, x, y, epochs=3, lr=1e-3, batch_size=4,
                                seed=2)
            return rows, model.scores(x)

        rows_a, scores_a = run()
        rows_b, scores_b = run()
        assert rows_a == rows_b
        assert np.array_equal(scores_a, scores_b)


class TestSkeletonActionClassifier:
    def test_fit_predict_proba_score(self):
        cfg = tiny_dgnn_config()
        x, y = separable_windows(5, cfg.window)
        clf = SkeletonActionClassifier(epochs=20, lr=5e-3, batch_size=20,
                                       config=cfg)
        assert clf.fit(x, y) is clf
        assert np.array_equal(clf.classes_, [0, 1, 2, 3])
        proba = clf.predict_proba(x)
        assert proba.shape == (len(x), 4)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-12)
        assert np.array_equal(np.argmax(proba, axis=1), clf.predict(x))
        assert clf.score(x, y) == pytest.approx((clf.predict(x) == y).mean())

    def test_window_inferred_from_data(self):
        x, y = separable_windows(2, 8)
        clf = SkeletonActionClassifier(epochs=1, config=tiny_dgnn_config())
        clf.fit(x, y)
        assert clf.model_.config.window == 8

    def test_predict_before_fit_rejected(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            SkeletonActionClassifier().predict(np.zeros((1, 2, 12, 17)))

    def test_clone_round_trip(self):
        from sklearn.base import clone

        clf = SkeletonActionClassifier(epochs=3, lr=0.01, seed=4)
        assert clone(clf).get_params() == clf.get_params()

    def test_action_names_fixed(self):
        assert ACTION_NAMES == ["stand", "walk", "squat", "fall"]
