"""Trajectory containers, feature scaling, splits, and the binary dataset format.

The on-disk format is deliberately minimal: a fixed little-endian header
(magic `DONL`, version, equation/resolution tags, shape, spacings) followed by
the x grid, t grid and the trajectory array as raw float64. Writes are atomic
and reads round-trip bitwise.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .nn import ConfigError
from .rngs import split_rng

MAGIC = b"DONL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI16s8sIIIdd")  # magic, version, equation, resolution, N, n_t, n_x, dt, dx


class DatasetFormatError(ValueError):
    """Malformed dataset file (bad magic/version or truncated payload)."""


class DegenerateScalerError(ValueError):
    """Scaling statistics collapse (zero spread) on the fit data."""


@dataclass(frozen=True)
class TrajectorySet:
    """N trajectories on a shared space-time grid."""

    u: np.ndarray          # [N, n_t, n_x] float64
    t: np.ndarray          # [n_t]
    x: np.ndarray          # [n_x]
    equation: str
    resolution: str        # "high" | "low"

    def __post_init__(self):
        if self.u.ndim != 3 or self.u.shape[1] != self.t.size or self.u.shape[2] != self.x.size:
            raise ConfigError(
                f"trajectory array {self.u.shape} inconsistent with grids ({self.t.size}, {self.x.size})")

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def n_t(self) -> int:
        return self.u.shape[1]

    @property
    def n_x(self) -> int:
        return self.u.shape[2]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.n_t > 1 else 0.0

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0]) if self.n_x > 1 else 0.0

    @property
    def period(self) -> float:
        """Spatial period: the grid excludes the periodic endpoint."""
        return self.dx * self.n_x

    def subset(self, indices) -> "TrajectorySet":
        return replace(self, u=self.u[np.asarray(indices)])

    def initial_states(self) -> np.ndarray:
        """[N, n_x] sensor values at t = 0 (the model input)."""
        return self.u[:, 0, :]

    def target_frames(self) -> np.ndarray:
        """[N, n_t - 1, n_x] frames after t = 0 (the prediction target)."""
        return self.u[:, 1:, :]


def write_dataset(path, traj: TrajectorySet) -> None:
    """Write atomically; refuses to persist non-finite values."""
    if not np.all(np.isfinite(traj.u)):
        raise ValueError("trajectory array contains non-finite values")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION,
                          traj.equation.encode()[:16].ljust(16, b"\0"),
                          traj.resolution.encode()[:8].ljust(8, b"\0"),
                          traj.n, traj.n_t, traj.n_x, traj.dt, traj.dx)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                       for a in (traj.x, traj.t, traj.u))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def read_dataset(path) -> TrajectorySet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"file shorter than the {_HEADER.size}-byte header ({len(raw)} bytes)")
    magic, version, eq_tag, res_tag, n, n_t, n_x, dt, dx = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {version} at byte offset 4")
    expected = _HEADER.size + 8 * (n_x + n_t + n * n_t * n_x)
    if len(raw) != expected:
        raise DatasetFormatError(
            f"payload truncated or padded: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    x = data[:n_x].copy()
    t = data[n_x:n_x + n_t].copy()
    u = data[n_x + n_t:].reshape(n, n_t, n_x).copy()
    return TrajectorySet(u=u, t=t, x=x,
                         equation=eq_tag.rstrip(b"\0").decode(),
                         resolution=res_tag.rstrip(b"\0").decode())


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class Scaler:
    """Affine transform fitted globally over every entry of its fit domain."""

    kind: str               # "standard" | "minmax"
    stat_a: float           # mean / min
    stat_b: float           # stdev / max
    domain: str = "target"  # branch-input | trunk-input | target

    def to_dict(self) -> dict:
        return {"kind": self.kind, "stat_a": self.stat_a, "stat_b": self.stat_b,
                "domain": self.domain}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(kind=d["kind"], stat_a=float(d["stat_a"]), stat_b=float(d["stat_b"]),
                   domain=d.get("domain", "target"))


def fit_scaler(kind: str, data, domain: str = "target") -> Scaler:
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise ConfigError("cannot fit a scaler on empty data")
    if kind == "standard":
        mu = float(np.mean(data))
        sigma = float(np.std(data))
        if sigma <= 0.0:
            raise DegenerateScalerError(f"standard scaler on constant data (mean {mu})")
        return Scaler("standard", mu, sigma, domain)
    if kind == "minmax":
        lo = float(np.min(data))
        hi = float(np.max(data))
        if hi <= lo:
            raise DegenerateScalerError(f"minmax scaler on constant data (value {lo})")
        return Scaler("minmax", lo, hi, domain)
    raise ConfigError(f"unknown scaler kind {kind!r}; expected 'standard' or 'minmax'")


def apply_scaler(s: Scaler, x):
    x = np.asarray(x, dtype=np.float64)
    if s.kind == "standard":
        return (x - s.stat_a) / s.stat_b
    return (x - s.stat_a) / (s.stat_b - s.stat_a)


def invert_scaler(s: Scaler, y):
    y = np.asarray(y, dtype=np.float64)
    if s.kind == "standard":
        return y * s.stat_b + s.stat_a
    return y * (s.stat_b - s.stat_a) + s.stat_a


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    val_fraction: float = 0.1
    n_test: int = 0


def split_dataset(traj: TrajectorySet, spec: SplitSpec):
    """Deterministic (train, val, test) partition.

    Test membership is the first `n_test` indices, fixed before any shuffling,
    so the test set is stable when the source set is extended for size sweeps.
    The remainder is shuffled by the seed and split by the validation fraction.
    """
    n = traj.n
    if n < spec.n_test + 2:
        raise ConfigError(f"need at least {spec.n_test + 2} samples, have {n}")
    test_idx = np.arange(spec.n_test)
    rest = np.arange(spec.n_test, n)
    rng = split_rng(spec.seed)
    shuffled = rng.permutation(rest)
    n_val = int(len(rest) * spec.val_fraction)
    if spec.val_fraction > 0.0:
        n_val = max(1, n_val)  # checkpoint selection needs a validation sample
    val_idx = np.sort(shuffled[:n_val])
    train_idx = np.sort(shuffled[n_val:])
    return traj.subset(train_idx), traj.subset(val_idx), traj.subset(test_idx)


def split_train_val(traj: TrajectorySet, val_fraction: float, seed: int):
    train, val, _ = split_dataset(traj, SplitSpec(seed=seed, val_fraction=val_fraction, n_test=0))
    return train, val
