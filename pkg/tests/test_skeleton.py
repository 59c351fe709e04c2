"""Keypoint normalization, temporal repair, and skeleton file formats."""

import numpy as np
import pytest
from sklearn.base import clone

from wiskel.errors import DataError, DimensionError
from wiskel.skeleton import (
    Skeleton,
    SkeletonRepairer,
    array_to_skeletons,
    denormalize,
    load_skeleton_binary,
    load_skeleton_csv,
    normalize_pixels,
    repair,
    save_skeleton_binary,
    save_skeleton_csv,
    skeletons_to_array,
)


def pose(rng=None, value=None):
    if value is not None:
        return np.full((17, 2), value, dtype=np.float64)
    return rng.uniform(0.05, 0.95, size=(17, 2))


def skel(keypoints, valid=None, frame=0):
    if valid is None:
        valid = np.ones(17, dtype=bool)
    return Skeleton(np.asarray(keypoints, dtype=np.float64), valid, frame)


# -- normalization -------------------------------------------------------------------


class TestNormalize:
    def test_center_of_1080p_maps_to_half(self):
        pixels = np.tile([960.0, 540.0], (17, 1))
        out = normalize_pixels(pixels, 1920, 1080)
        assert np.allclose(out.keypoints, 0.5)
        assert out.valid.all()

    def test_origin_maps_to_zero(self):
        out = normalize_pixels(np.zeros((17, 2)), 1920, 1080)
        assert np.allclose(out.keypoints, 0.0)
        assert out.valid.all()

    def test_out_of_frame_clamped_and_flagged(self):
        pixels = np.tile([100.0, 100.0], (17, 1))
        pixels[4] = [-5.0, 50.0]
        pixels[9] = [200.0, 2000.0]
        out = normalize_pixels(pixels, 1920, 1080)
        assert not out.valid[4]
        assert not out.valid[9]
        assert out.valid.sum() == 15
        assert out.keypoints[4][0] == 0.0
        assert out.keypoints[9][1] == 1.0

    def test_existing_invalid_flags_respected(self):
        pixels = np.tile([10.0, 10.0], (17, 1))
        valid = np.ones(17, dtype=bool)
        valid[0] = False
        out = normalize_pixels(pixels, 100, 100, valid=valid)
        assert not out.valid[0]

    def test_zero_dimensions_rejected(self):
        with pytest.raises(DataError):
            normalize_pixels(np.zeros((17, 2)), 0, 1080)

    def test_wrong_shape_rejected(self):
        with pytest.raises(DimensionError):
            normalize_pixels(np.zeros((16, 2)), 1920, 1080)

    def test_denormalize_round_trip(self):
        rng = np.random.default_rng(0)
        pixels = rng.uniform(0, 1, size=(17, 2)) * [1920, 1080]
        out = normalize_pixels(pixels, 1920, 1080)
        back = denormalize(out, 1920, 1080)
        assert np.abs(back - pixels).max() < 1e-9


# -- repair -----------------------------------------------------------------------------


class TestRepair:
    def test_missing_keypoint_extrapolated(self):
        k0 = pose(value=0.40)
        k1 = pose(value=0.42)
        k2 = pose(value=0.42)
        valid2 = np.ones(17, dtype=bool)
        valid2[3] = False
        frames = [skel(k0, frame=0), skel(k1, frame=1), skel(k2, valid2, frame=2)]
        out, events = repair(frames, tau=0.15)
        # velocity extrapolation: 0.42 + (0.42 - 0.40) = 0.44
        assert np.allclose(out[2].keypoints[3], [0.44, 0.44])
        assert out[2].valid[3]
        assert [e.reason for e in events] == ["missing"]

    def test_spec_axis_values(self):
        k0 = pose(value=0.5)
        k0[5] = [0.40, 0.40]
        k1 = pose(value=0.5)
        k1[5] = [0.42, 0.40]
        k2 = pose(value=0.5)
        valid2 = np.ones(17, dtype=bool)
        valid2[5] = False
        out, _ = repair([skel(k0), skel(k1, frame=1), skel(k2, valid2, frame=2)])
        assert np.allclose(out[2].keypoints[5], [0.44, 0.40])

    def test_stationary_hold(self):
        k = pose(value=0.3)
        valid2 = np.ones(17, dtype=bool)
        valid2[7] = False
        out, _ = repair([skel(k), skel(k, frame=1), skel(k, valid2, frame=2)])
        assert np.allclose(out[2].keypoints[7], 0.3)

    def test_jump_beyond_tau_replaced(self):
        k0 = pose(value=0.4)
        k1 = pose(value=0.4)
        k2 = pose(value=0.4)
        k2[6] = [0.9, 0.4]  # 0.5 jump with tau 0.1
        out, events = repair([skel(k0), skel(k1, frame=1), skel(k2, frame=2)], tau=0.1)
        assert np.allclose(out[2].keypoints[6], [0.4, 0.4])
        assert [e.reason for e in events] == ["displaced"]

    def test_jump_within_tau_untouched(self):
        k0 = pose(value=0.4)
        k1 = pose(value=0.4)
        k2 = pose(value=0.4)
        k2[6] = [0.45, 0.4]
        out, events = repair([skel(k0), skel(k1, frame=1), skel(k2, frame=2)], tau=0.1)
        assert np.allclose(out[2].keypoints[6], [0.45, 0.4])
        assert events == []

    def test_first_two_frames_pass_through(self):
        k = pose(value=0.5)
        valid = np.ones(17, dtype=bool)
        valid[2] = False
        out, events = repair([skel(k, valid, 0), skel(k, valid, 1)])
        assert not out[0].valid[2]
        assert not out[1].valid[2]
        assert all(e.reason == "no-history" for e in events)
        assert all(not e.repaired for e in events)

    def test_extrapolation_clamped_to_unit_square(self):
        k0 = pose(value=0.5)
        k0[0] = [0.1, 0.5]
        k1 = pose(value=0.5)
        k1[0] = [0.02, 0.5]
        k2 = pose(value=0.5)
        valid2 = np.ones(17, dtype=bool)
        valid2[0] = False
        out, _ = repair([skel(k0), skel(k1, frame=1), skel(k2, valid2, frame=2)])
        assert out[2].keypoints[0][0] == 0.0  # 0.02 - 0.08 clamps at 0

    def test_no_missing_after_frame_two_property(self):
        rng = np.random.default_rng(42)
        skeletons = []
        for t in range(40):
            kp = pose(rng=rng)
            valid = rng.random(17) > 0.2
            if t < 2:
                valid = np.ones(17, dtype=bool)  # give history to every joint
            skeletons.append(skel(kp, valid, t))
        out, _ = repair(skeletons, tau=0.5)
        for t in range(2, 40):
            assert out[t].valid.all(), f"frame {t} still has missing keypoints"

    def test_inputs_not_mutated(self):
        rng = np.random.default_rng(1)
        kp = pose(rng=rng)
        valid = np.ones(17, dtype=bool)
        valid[5] = False
        frames = [skel(pose(rng=rng)), skel(pose(rng=rng), frame=1), skel(kp, valid, 2)]
        before = kp.copy()
        repair(frames)
        assert np.array_equal(frames[2].keypoints, before)
        assert not frames[2].valid[5]

    def test_invalid_tau_rejected(self):
        with pytest.raises(DataError):
            repair([], tau=0.0)


# -- array and file round trips ------------------------------------------------------------


class TestSkeletonIO:
    def make_sequence(self, n=9):
        rng = np.random.default_rng(7)
        skeletons = []
        for t in range(n):
            valid = rng.random(17) > 0.1
            skeletons.append(skel(pose(rng=rng), valid, t + 3))
        return skeletons

    def test_array_round_trip(self):
        seq = self.make_sequence()
        kps, valid, frames = skeletons_to_array(seq)
        assert kps.shape == (9, 17, 2)
        back = array_to_skeletons(kps, valid, frames)
        for a, b in zip(seq, back):
            assert np.array_equal(a.keypoints, b.keypoints)
            assert np.array_equal(a.valid, b.valid)
            assert a.frame_index == b.frame_index

    def test_csv_round_trip(self, tmp_path):
        seq = self.make_sequence()
        path = tmp_path / "skeleton.csv"
        save_skeleton_csv(path, seq)
        back = load_skeleton_csv(path)
        assert len(back) == len(seq)
        for a, b in zip(seq, back):
            assert np.abs(a.keypoints - b.keypoints).max() < 1e-12
            assert np.array_equal(a.valid, b.valid)
            assert a.frame_index == b.frame_index

    def test_binary_round_trip_is_exact(self, tmp_path):
        seq = self.make_sequence()
        path = tmp_path / "skeleton.bin"
        save_skeleton_binary(path, seq)
        back = load_skeleton_binary(path)
        for a, b in zip(seq, back):
            assert np.array_equal(a.keypoints, b.keypoints)
            assert np.array_equal(a.valid, b.valid)
            assert a.frame_index == b.frame_index

    def test_csv_header_validated(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("frame,x0\n0,0.5\n")
        with pytest.raises(DataError):
            load_skeleton_csv(path)

    def test_truncated_binary_rejected(self, tmp_path):
        seq = self.make_sequence(3)
        path = tmp_path / "skeleton.bin"
        save_skeleton_binary(path, seq)
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(DataError):
            load_skeleton_binary(path)


# -- estimator wrapper ------------------------------------------------------------------------


class TestSkeletonRepairer:
    def test_transform_fills_nan_keypoints(self):
        X = np.full((5, 17, 2), 0.4)
        X[1:] = 0.42
        X[2, 3] = np.nan
        est = SkeletonRepairer(tau=0.2).fit(X)
        out = est.transform(X)
        assert not np.isnan(out).any()
        assert np.allclose(out[2, 3], 0.44)

    def test_stateless_transform_without_fit(self):
        # Stateless transformer: fit validates only, transform works directly.
        out = SkeletonRepairer().transform(np.full((3, 17, 2), 0.5))
        assert out.shape == (3, 17, 2)

    def test_get_set_params_and_clone(self):
        est = SkeletonRepairer(tau=0.25)
        assert est.get_params() == {"tau": 0.25}
        est.set_params(tau=0.3)
        assert est.tau == 0.3
        cloned = clone(est)
        assert cloned.tau == 0.3

    def test_flat_input_supported(self):
        X = np.full((4, 34), 0.5)
        est = SkeletonRepairer().fit(X)
        out = est.transform(X)
        assert out.shape == (4, 34)
