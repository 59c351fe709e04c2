"""Pose network: shape audit, determinism, training loop, wiring, estimator."""

import numpy as np
import pytest

from wiskel.errors import ConfigError, ModelAuditError, TrainingDivergedError
from wiskel.ingest import CsiWindow
from wiskel.nn.checkpoint import load_state, save_state
from wiskel.tednet import (
    CsiPoseRegressor,
    TedNet,
    TedNetConfig,
    infer_sequence,
    train_pose,
)

from _util import tiny_tednet_config

# Stage-by-stage single-sample activation shapes of the full-size network.
EXPECTED_FULL_SHAPES = [
    ("encoder_conv1", (64, 58, 5)),
    ("encoder_conv2", (128, 31, 3)),
    ("encoder_conv3", (128, 17, 2)),
    ("concat", (384, 17, 2)),
    ("reshape", (34, 384)),
    ("transformer", (34, 384)),
    ("decoder_conv1", (64, 68)),
    ("decoder_conv2", (32, 136)),
    ("flatten", 4352),
    ("fc", 34),
    ("output", (17, 2)),
]
FULL_PARAM_TOTAL = 4_222_530


def tiny_inputs(n, seed=0, cfg=None):
    cfg = cfg or tiny_tednet_config()
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(0.0, 1.0, (n, cfg.receivers, 1, cfg.subcarriers, cfg.window))


def tiny_targets(n, seed=1):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(0.2, 0.8, (n, 17, 2))


class TestConfig:
    def test_default_config_valid(self):
        TedNetConfig().validate()

    def test_single_receiver_breaks_width_contract(self):
        with pytest.raises(ConfigError, match="d_model"):
            TedNetConfig(receivers=1).validate()

    def test_zero_receivers_rejected(self):
        with pytest.raises(ConfigError, match="receivers"):
            TedNetConfig(receivers=0).validate()

    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError, match="heads"):
            TedNetConfig(heads=7).validate()

    def test_dropout_range(self):
        with pytest.raises(ConfigError, match="dropout"):
            TedNetConfig(dropout=1.0).validate()

    def test_collapsing_encoder_rejected(self):
        # unpadded convs over a 2-sample window hit size zero at the first layer
        cfg = tiny_tednet_config(
            window=2, encoder_paddings=((0, 0), (0, 0), (0, 0))
        )
        with pytest.raises(ConfigError, match="collapses"):
            TedNet(cfg)


@pytest.fixture(scope="module")
def full_model():
    return TedNet()


class TestShapeAudit:

    def test_audited_shapes_match_reference(self, full_model):
        assert full_model.shape_audit == EXPECTED_FULL_SHAPES

    def test_parameter_total(self, full_model):
        assert full_model.store.num_params() == FULL_PARAM_TOTAL

    def test_shared_encoder_drops_two_encoder_copies(self, full_model):
        sizes = full_model.store.param_sizes()
        one_encoder = sum(v for k, v in sizes.items() if k.startswith("encoder0."))
        shared = TedNet(TedNetConfig(share_encoder_weights=True))
        assert (
            shared.store.num_params()
            == FULL_PARAM_TOTAL - 2 * one_encoder
        )
        assert not any(
            k.startswith("encoder1.") for k in shared.store.param_sizes()
        )

    def test_audit_failure_raises(self, monkeypatch):
        original = TedNet._expected_shapes

        def wrong(self):
            rows = original(self)
            rows[3] = ("concat", (999, 17, 2))
            return rows

        monkeypatch.setattr(TedNet, "_expected_shapes", wrong)
        with pytest.raises(ModelAuditError, match="concat"):
            TedNet(tiny_tednet_config())

    def test_tiny_audit_follows_same_formulas(self):
        model = TedNet(tiny_tednet_config())
        names = [name for name, _ in model.shape_audit]
        assert names == [name for name, _ in EXPECTED_FULL_SHAPES]
        assert model.shape_audit[3][1] == (9, 6, 2)  # concat: 3 receivers x 3 ch
        assert model.shape_audit[4][1] == (12, 9)


class TestForward:
    def test_zero_input_finite_and_bounded(self):
        model = TedNet(tiny_tednet_config())
        cfg = model.config
        out = model.predict(np.zeros((2, cfg.receivers, 1, cfg.subcarriers, cfg.window)))
        assert out.shape == (2, 17, 2)
        assert np.all(np.isfinite(out))
        assert np.all(np.abs(out) < 1.0)  # tanh output layer

    def test_same_seed_same_predictions(self):
        cfg = tiny_tednet_config(seed=3)
        x = tiny_inputs(2, cfg=cfg)
        a = TedNet(cfg).predict(x)
        b = TedNet(cfg).predict(x)
        assert np.array_equal(a, b)

    def test_different_seed_differs(self):
        x = tiny_inputs(1)
        a = TedNet(tiny_tednet_config(seed=0)).predict(x)
        b = TedNet(tiny_tednet_config(seed=1)).predict(x)
        assert not np.array_equal(a, b)

    def test_batch_matches_per_sample(self):
        model = TedNet(tiny_tednet_config())
        x = tiny_inputs(4)
        batched = model.predict(x)
        singles = np.concatenate([model.predict(x[i : i + 1]) for i in range(4)])
        assert np.max(np.abs(batched - singles)) < 1e-12

    def test_channel_axis_optional(self):
        model = TedNet(tiny_tednet_config())
        x = tiny_inputs(3)
        assert np.array_equal(model.predict(x), model.predict(x[:, :, 0]))

    def test_wrong_shape_reported(self):
        model = TedNet(tiny_tednet_config())
        with pytest.raises(Exception, match="shape"):
            model.predict(np.zeros((2, 2, 1, 5, 5)))

    def test_positional_encoding_changes_output(self):
        x = tiny_inputs(1)
        with_pe = TedNet(tiny_tednet_config()).predict(x)
        without = TedNet(tiny_tednet_config(positional_encoding=False)).predict(x)
        assert not np.allclose(with_pe, without)


class TestEncoderWiring:
    def test_receiver_streams_feed_disjoint_channel_blocks(self):
        """Permuting receivers together with their encoder parameter groups
        must permute the concatenated feature blocks and nothing else."""
        cfg = tiny_tednet_config()
        perm = [2, 0, 1]
        base = TedNet(cfg)
        permuted = TedNet(cfg)
        for i, j in enumerate(perm):
            for layer in (1, 2, 3):
                for kind in ("weight", "bias"):
                    dst = permuted.store[f"encoder{i}.conv{layer}.{kind}"]
                    src = base.store[f"encoder{j}.conv{layer}.{kind}"]
                    dst.data[...] = src.data
        x = tiny_inputs(2)
        base_feats = base.encoder_features(x)
        perm_feats = permuted.encoder_features(x[:, perm])
        block = cfg.encoder_channels[-1]
        for i, j in enumerate(perm):
            assert np.array_equal(
                perm_feats[:, i * block : (i + 1) * block],
                base_feats[:, j * block : (j + 1) * block],
            )

    def test_shared_encoder_blocks_permute_with_input(self):
        cfg = tiny_tednet_config(share_encoder_weights=True)
        model = TedNet(cfg)
        x = tiny_inputs(2)
        perm = [1, 2, 0]
        feats = model.encoder_features(x)
        permuted = model.encoder_features(x[:, perm])
        block = cfg.encoder_channels[-1]
        for i, j in enumerate(perm):
            assert np.array_equal(
                permuted[:, i * block : (i + 1) * block],
                feats[:, j * block : (j + 1) * block],
            )


class TestTrainPose:
    def test_zero_lr_keeps_parameters(self):
        model = TedNet(tiny_tednet_config())
        before = {k: v.copy() for k, v in model.store.state().items()}
        train_pose(model, tiny_inputs(4), tiny_targets(4), epochs=2, lr=0.0,
                   batch_size=4)
        after = model.store.state()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_first_epoch_full_batch_row_is_initial_loss(self):
        cfg = tiny_tednet_config()
        x, y = tiny_inputs(4), tiny_targets(4)
        fresh = float(TedNet(cfg).loss(x, y, training=False).data)
        rows = train_pose(TedNet(cfg), x, y, epochs=1, lr=1e-3, batch_size=4)
        assert rows[0][:2] == (0, "train")
        assert rows[0][2] == pytest.approx(fresh, abs=1e-12)

    def test_loss_decreases_when_overfitting(self):
        model = TedNet(tiny_tednet_config())
        x, y = tiny_inputs(4), tiny_targets(4)
        rows = train_pose(model, x, y, epochs=40, lr=3e-3, batch_size=4)
        train = [m for _, split, m in rows if split == "train"]
        assert train[-1] < 0.3 * train[0]

    def test_validation_rows_and_checkpoint(self, tmp_path):
        model = TedNet(tiny_tednet_config())
        path = tmp_path / "pose.ckpt"
        rows = train_pose(
            model,
            tiny_inputs(4),
            tiny_targets(4),
            epochs=3,
            lr=1e-3,
            batch_size=4,
            val_inputs=tiny_inputs(2, seed=9),
            val_targets=tiny_targets(2, seed=10),
            checkpoint_path=path,
        )
        splits = [split for _, split, _ in rows]
        assert splits == ["train", "val"] * 3
        restored = TedNet(tiny_tednet_config())
        restored.store.load_state(load_state(path))
        x = tiny_inputs(2, seed=11)
        assert np.all(np.isfinite(restored.predict(x)))

    def test_log_callback_sees_every_row(self):
        seen = []
        rows = train_pose(
            TedNet(tiny_tednet_config()),
            tiny_inputs(3),
            tiny_targets(3),
            epochs=2,
            lr=1e-3,
            batch_size=3,
            log=seen.append,
        )
        assert seen == rows

    def test_stop_callback_ends_training_early(self):
        calls = []

        def stop(epoch_rows):
            calls.append(epoch_rows[0][0])
            return len(calls) == 2

        rows = train_pose(
            TedNet(tiny_tednet_config()),
            tiny_inputs(3),
            tiny_targets(3),
            epochs=50,
            lr=1e-3,
            batch_size=3,
            stop=stop,
        )
        assert calls == [0, 1]
        assert rows[-1][0] == 1

    def test_divergence_reports_location_and_norms(self):
        model = TedNet(tiny_tednet_config())
        model.store["head.fc.weight"].data[0, 0] = np.nan
        with pytest.raises(TrainingDivergedError) as info:
            train_pose(model, tiny_inputs(2), tiny_targets(2), epochs=1,
                       lr=1e-3, batch_size=2)
        err = info.value
        assert err.epoch == 0
        assert err.batch == 0
        assert "head.fc.weight" in err.param_norms

    def test_same_seed_training_is_deterministic(self):
        cfg = tiny_tednet_config()
        x, y = tiny_inputs(6), tiny_targets(6)

        def run():
            model = TedNet(cfg)
            rows = train_pose(model, x, y, epochs=3, lr=1e-3, batch_size=2,
                              seed=4)
            return rows, model.predict(x)

        rows_a, pred_a = run()
        rows_b, pred_b = run()
        assert rows_a == rows_b
        assert np.array_equal(pred_a, pred_b)


class TestInferSequence:
    def make_windows(self, n, cfg):
        rng = np.random.Generator(np.random.PCG64(0))
        return [
            CsiWindow(
                frame_index=i,
                seqs=np.arange(i * 10, i * 10 + cfg.window, dtype=np.uint64),
                tensors=rng.uniform(
                    0.0, 1.0, (cfg.receivers, 1, cfg.subcarriers, cfg.window)
                ),
            )
            for i in range(n)
        ]

    def test_one_skeleton_per_window(self):
        cfg = tiny_tednet_config()
        model = TedNet(cfg)
        windows = self.make_windows(5, cfg)
        skeletons, out_of_range = infer_sequence(model, windows)
        assert len(skeletons) == 5
        assert [s.frame_index for s in skeletons] == [0, 1, 2, 3, 4]
        for s in skeletons:
            assert s.keypoints.shape == (17, 2)
            assert np.all((s.keypoints >= 0.0) & (s.keypoints <= 1.0))
            assert s.valid.all()
        assert out_of_range >= 0

    def test_matches_per_window_predictions(self):
        cfg = tiny_tednet_config()
        model = TedNet(cfg)
        windows = self.make_windows(4, cfg)
        skeletons, _ = infer_sequence(model, windows)
        for w, s in zip(windows, skeletons):
            direct = np.clip(model.predict(w.tensors[None])[0], 0.0, 1.0)
            assert np.max(np.abs(s.keypoints - direct)) < 1e-12

    def test_clamp_counts_out_of_range_coordinates(self):
        cfg = tiny_tednet_config()
        model = TedNet(cfg)
        windows = self.make_windows(3, cfg)
        raw = model.predict(np.stack([w.tensors for w in windows]))
        expected = int(((raw < 0.0) | (raw > 1.0)).sum())
        _, out_of_range = infer_sequence(model, windows)
        assert out_of_range == expected

    def test_empty_input(self):
        skeletons, count = infer_sequence(TedNet(tiny_tednet_config()), [])
        assert skeletons == []
        assert count == 0


class TestCsiPoseRegressor:
    def test_fit_predict_score(self):
        cfg = tiny_tednet_config()
        x, y = tiny_inputs(6), tiny_targets(6)
        reg = CsiPoseRegressor(epochs=5, lr=1e-3, batch_size=6, config=cfg)
        assert reg.fit(x, y) is reg
        pred = reg.predict(x)
        assert pred.shape == (6, 17, 2)
        assert reg.score(x, y) == pytest.approx(-np.mean((pred - y) ** 2))
        assert len(reg.loss_curve_) == 5

    def test_predict_before_fit_rejected(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            CsiPoseRegressor().predict(tiny_inputs(1))

    def test_get_params_round_trip(self):
        from sklearn.base import clone

        cfg = tiny_tednet_config()
        reg = CsiPoseRegressor(epochs=7, lr=0.01, seed=5, config=cfg)
        params = reg.get_params()
        assert params["epochs"] == 7
        assert params["lr"] == 0.01
        twin = clone(reg)
        assert twin.get_params() == params

    def test_seed_overrides_config_seed(self):
        cfg = tiny_tednet_config(seed=0)
        reg = CsiPoseRegressor(epochs=1, seed=9, config=cfg)
        reg.fit(tiny_inputs(2), tiny_targets(2))
        assert reg.model_.config.seed == 9

    def test_flat_targets_accepted(self):
        cfg = tiny_tednet_config()
        x = tiny_inputs(3)
        y = tiny_targets(3).reshape(3, 34)
        reg = CsiPoseRegressor(epochs=1, batch_size=3, config=cfg)
        reg.fit(x, y)
        assert reg.predict(x).shape == (3, 17, 2)
