"""Scalers, the binary dataset format, and deterministic splits."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from operon.datasets import (
    DatasetFormatError,
    DegenerateScalerError,
    Scaler,
    SplitSpec,
    TrajectorySet,
    apply_scaler,
    fit_scaler,
    invert_scaler,
    read_dataset,
    sha256_file,
    split_dataset,
    split_train_val,
    write_dataset,
)
from operon.nn import ConfigError


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


def make_traj(n=6, n_t=11, n_x=5, seed=1, equation="kdv", resolution="high"):
    g = rng(seed)
    return TrajectorySet(u=g.normal(size=(n, n_t, n_x)), t=np.arange(n_t) * 0.025,
                         x=np.arange(n_x) * 0.1, equation=equation, resolution=resolution)


class TestScalers:
    def test_standard_two_point(self):
        s = fit_scaler("standard", [0.0, 2.0])
        assert (s.stat_a, s.stat_b) == (1.0, 1.0)

    def test_minmax_stats(self):
        s = fit_scaler("minmax", [2.0, 4.0, 6.0])
        assert (s.stat_a, s.stat_b) == (2.0, 6.0)

    def test_standard_self_normalizes(self):
        x = rng(2).normal(size=(20, 7)) * 3.0 + 5.0
        s = fit_scaler("standard", x)
        scaled = apply_scaler(s, x)
        assert abs(np.mean(scaled)) <= 1e-12
        assert abs(np.std(scaled) - 1.0) <= 1e-12

    def test_minmax_midpoint(self):
        s = fit_scaler("minmax", [2.0, 4.0, 6.0])
        assert apply_scaler(s, 4.0) == 0.5

    def test_standard_apply_hand_case(self):
        s = Scaler("standard", 1.0, 2.0)
        assert apply_scaler(s, 5.0) == 2.0

    @given(seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
           kind=st.sampled_from(["standard", "minmax"]))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, seed, kind):
        g = rng(seed)
        x = g.normal(size=50) * g.uniform(0.1, 10) + g.uniform(-5, 5)
        if np.std(x) < 1e-9:
            return
        s = fit_scaler(kind, x)
        np.testing.assert_allclose(invert_scaler(s, apply_scaler(s, x)), x,
                                   rtol=1e-12, atol=1e-12)

    def test_out_of_range_minmax_allowed(self):
        s = fit_scaler("minmax", [0.0, 1.0])
        assert apply_scaler(s, 2.0) == 2.0

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateScalerError):
            fit_scaler("standard", np.full(5, 3.0))
        with pytest.raises(DegenerateScalerError):
            fit_scaler("minmax", np.full(5, 3.0))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            fit_scaler("robust", [1.0, 2.0])

    def test_global_not_per_feature(self):
        x = np.array([[0.0, 10.0], [0.0, 10.0]])
        s = fit_scaler("minmax", x)
        assert (s.stat_a, s.stat_b) == (0.0, 10.0)
        np.testing.assert_array_equal(apply_scaler(s, x), [[0.0, 1.0], [0.0, 1.0]])

    def test_dict_round_trip(self):
        s = fit_scaler("standard", [0.0, 2.0], domain="branch-input")
        assert Scaler.from_dict(s.to_dict()) == s


class TestDatasetFile:
    def test_round_trip_bitwise(self, tmp_path):
        traj = make_traj()
        path = tmp_path / "set.donl"
        write_dataset(path, traj)
        back = read_dataset(path)
        assert back.u.tobytes() == traj.u.tobytes()
        assert np.array_equal(back.t, traj.t)
        assert np.array_equal(back.x, traj.x)
        assert back.equation == "kdv" and back.resolution == "high"

    def test_header_fields(self, tmp_path):
        traj = make_traj(n=3, n_t=201, n_x=100)
        path = tmp_path / "kdv_high.donl"
        write_dataset(path, traj)
        back = read_dataset(path)
        assert (back.n, back.n_t, back.n_x) == (3, 201, 100)
        assert back.dt == pytest.approx(0.025)

    def test_payload_length_contract(self, tmp_path):
        traj = make_traj(n=2, n_t=3, n_x=4)
        path = tmp_path / "set.donl"
        write_dataset(path, traj)
        size = path.stat().st_size
        assert size == 60 + 8 * (4 + 3 + 2 * 3 * 4)

    def test_truncated_file(self, tmp_path):
        traj = make_traj()
        path = tmp_path / "set.donl"
        write_dataset(path, traj)
        data = path.read_bytes()
        path.write_bytes(data[:-9])
        with pytest.raises(DatasetFormatError, match="expected"):
            read_dataset(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.donl"
        path.write_bytes(b"NOPE" + b"\0" * 100)
        with pytest.raises(DatasetFormatError, match="offset 0"):
            read_dataset(path)

    def test_bad_version(self, tmp_path):
        traj = make_traj()
        path = tmp_path / "set.donl"
        write_dataset(path, traj)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(DatasetFormatError, match="version"):
            read_dataset(path)

    def test_nan_rejected_on_write(self, tmp_path):
        traj = make_traj()
        traj.u[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            write_dataset(tmp_path / "bad.donl", traj)
        assert not (tmp_path / "bad.donl").exists()

    def test_write_is_deterministic(self, tmp_path):
        traj = make_traj()
        a, b = tmp_path / "a.donl", tmp_path / "b.donl"
        write_dataset(a, traj)
        write_dataset(b, traj)
        assert sha256_file(a) == sha256_file(b)

    def test_low_file_is_temporal_subset_of_high(self, tmp_path):
        from operon.integrate import downsample_time
        high = make_traj(n=3, n_t=11)
        low = downsample_time(high, 5)
        write_dataset(tmp_path / "high.donl", high)
        write_dataset(tmp_path / "low.donl", low)
        h = read_dataset(tmp_path / "high.donl")
        l = read_dataset(tmp_path / "low.donl")
        assert np.array_equal(l.u, h.u[:, ::5, :])
        assert l.u[:, 1, :].tobytes() == h.u[:, 5, :].tobytes()


class TestSplits:
    def test_sizes_example(self):
        traj = make_traj(n=10)
        train, val, test = split_dataset(traj, SplitSpec(seed=3, val_fraction=0.25, n_test=2))
        assert (train.n, val.n, test.n) == (6, 2, 2)

    def test_deterministic(self):
        traj = make_traj(n=12)
        spec = SplitSpec(seed=5, val_fraction=0.25, n_test=3)
        a = split_dataset(traj, spec)
        b = split_dataset(traj, spec)
        for x, y in zip(a, b):
            assert np.array_equal(x.u, y.u)

    def test_disjoint_and_exhaustive(self):
        traj = make_traj(n=20, seed=8)
        train, val, test = split_dataset(traj, SplitSpec(seed=2, val_fraction=0.2, n_test=4))
        assert train.n + val.n + test.n == 20
        rows = np.concatenate([train.u, val.u, test.u]).reshape(20, -1)
        orig = traj.u.reshape(20, -1)
        matched = set()
        for row in rows:
            hits = np.flatnonzero((orig == row).all(axis=1))
            assert hits.size == 1
            assert hits[0] not in matched
            matched.add(hits[0])

    def test_test_membership_stable_across_sizes(self):
        big = make_traj(n=16, seed=9)
        small = TrajectorySet(u=big.u[:10], t=big.t, x=big.x,
                              equation=big.equation, resolution=big.resolution)
        _, _, test_big = split_dataset(big, SplitSpec(seed=1, n_test=4))
        _, _, test_small = split_dataset(small, SplitSpec(seed=1, n_test=4))
        assert np.array_equal(test_big.u, test_small.u)

    def test_insufficient_samples(self):
        with pytest.raises(ConfigError):
            split_dataset(make_traj(n=3), SplitSpec(seed=0, n_test=2))

    def test_train_val_helper(self):
        train, val = split_train_val(make_traj(n=20), 0.1, seed=7)
        assert (train.n, val.n) == (18, 2)
