"""Branch/trunk operator network.

The branch net encodes an initial condition sampled at fixed spatial sensors,
the trunk net encodes query coordinates (x, t), and the two embeddings are
merged by a p-term inner product. The trunk can optionally replace x with the
Fourier pair (cos(2*pi*x/P), sin(2*pi*x/P)) to build in spatial periodicity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import ConfigError, DenseLayer, DimensionError, ParameterSet

BRANCH_WIDTHS = (150, 250, 450, 380, 320, 300)
TRUNK_WIDTHS = (200, 220, 240, 250, 260, 280, 300)


def desk_widths(widths, factor: int = 10) -> tuple[int, ...]:
    """Scale layer widths down for fast desk-scale runs (floor at 1)."""
    return tuple(max(1, w // factor) for w in widths)


def periodic_feature_expand(x: float, period: float) -> tuple[float, float]:
    """Map a spatial coordinate to (cos(2*pi*x/P), sin(2*pi*x/P))."""
    if period <= 0:
        raise ConfigError(f"period must be positive, got {period}")
    angle = 2.0 * np.pi * np.asarray(x) / period
    return np.cos(angle), np.sin(angle)


@dataclass(frozen=True)
class QueryGrid:
    """Trunk query coordinates over a space-time product grid, t-major.

    Row i*n_x + j is (x_j, t_i); this ordering is the contract consumed by
    the reshape into [batch, n_t, n_x] sequences.
    """

    coords: np.ndarray
    n_t: int
    n_x: int
    times: np.ndarray
    xs: np.ndarray

    @classmethod
    def build(cls, xs, times, periodic: bool = False, period: float | None = None) -> "QueryGrid":
        xs = np.asarray(xs, dtype=np.float64)
        times = np.asarray(times, dtype=np.float64)
        tt = np.repeat(times, xs.size)
        xx = np.tile(xs, times.size)
        if periodic:
            if period is None:
                raise ConfigError("periodic expansion requires a period")
            cos_x, sin_x = periodic_feature_expand(xx, period)
            coords = np.column_stack([cos_x, sin_x, tt])
        else:
            coords = np.column_stack([xx, tt])
        return cls(coords=coords, n_t=times.size, n_x=xs.size, times=times, xs=xs)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def input_width(self) -> int:
        return self.coords.shape[1]

    def uniform_dt(self, rtol: float = 1e-9) -> float:
        """Time spacing, or a contract error when the spacing is not uniform."""
        if self.n_t == 1:
            return 0.0
        steps = np.diff(self.times)
        dt = steps[0]
        if not np.allclose(steps, dt, rtol=rtol, atol=0.0):
            raise ConfigError("query grid does not have a uniform time spacing")
        return float(dt)


@dataclass(frozen=True)
class DeepONetConfig:
    m: int = 100
    branch_widths: tuple[int, ...] = BRANCH_WIDTHS
    trunk_widths: tuple[int, ...] = TRUNK_WIDTHS
    periodic: bool = False
    period: float | None = None

    def __post_init__(self):
        if self.branch_widths[-1] != self.trunk_widths[-1]:
            raise ConfigError(
                f"branch output width {self.branch_widths[-1]} must equal trunk output "
                f"width {self.trunk_widths[-1]}")
        if self.periodic and (self.period is None or self.period <= 0):
            raise ConfigError("periodic trunk expansion requires a positive period")

    @property
    def p(self) -> int:
        return self.branch_widths[-1]

    @property
    def trunk_input_width(self) -> int:
        return 3 if self.periodic else 2

    def desk(self) -> "DeepONetConfig":
        return DeepONetConfig(m=self.m,
                              branch_widths=desk_widths(self.branch_widths),
                              trunk_widths=desk_widths(self.trunk_widths),
                              periodic=self.periodic, period=self.period)


class DeepONet:
    """Dense branch stack (swish, linear head) merged with a dense trunk stack
    (swish, two linear output layers) by the p-term inner product."""

    def __init__(self, config: DeepONetConfig):
        self.config = config
        self.branch_layers = self._stack("branch", config.m, config.branch_widths,
                                         n_linear_tail=1)
        self.trunk_layers = self._stack("trunk", config.trunk_input_width,
                                        config.trunk_widths, n_linear_tail=2)

    @staticmethod
    def _stack(prefix: str, in_width: int, widths, n_linear_tail: int) -> list[DenseLayer]:
        layers = []
        prev = in_width
        n = len(widths)
        for i, w in enumerate(widths):
            act = "linear" if i >= n - n_linear_tail else "swish"
            layers.append(DenseLayer(f"{prefix}.{i}", prev, w, act))
            prev = w
        return layers

    def param_arrays(self, rng: np.random.Generator):
        arrays = []
        for layer in self.branch_layers + self.trunk_layers:
            arrays.extend(layer.init_arrays(rng))
        return arrays

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        return ParameterSet.from_arrays(self.param_arrays(rng))

    def branch(self, leaves, u0: ad.Var) -> ad.Var:
        out = u0
        for layer in self.branch_layers:
            out = layer.forward(leaves, out)
        return out

    def trunk(self, leaves, coords: ad.Var) -> ad.Var:
        out = coords
        for layer in self.trunk_layers:
            out = layer.forward(leaves, out)
        return out

    def forward(self, leaves, u0: ad.Var, coords: ad.Var) -> ad.Var:
        """[batch, m] sensors x [n_q, d] queries -> [batch, n_q] field values.

        The trunk is evaluated once over the queries and reused for every
        sample in the batch; there is no bias after the merge.
        """
        if u0.value.ndim != 2 or u0.value.shape[1] != self.config.m:
            raise DimensionError(
                f"branch input must be [batch, {self.config.m}], got {u0.value.shape}")
        if coords.value.ndim != 2 or coords.value.shape[1] != self.config.trunk_input_width:
            raise DimensionError(
                f"trunk input must be [n_q, {self.config.trunk_input_width}], got {coords.value.shape}")
        if coords.value.shape[0] == 0:
            raise DimensionError("query grid must be nonempty")
        return ad.matmul_t(self.branch(leaves, u0), self.trunk(leaves, coords))


def deeponet_forward(model: DeepONet, params: ParameterSet, u0, grid: QueryGrid) -> np.ndarray:
    """Convenience wrapper on plain arrays; rows follow the grid's t-major order."""
    out = model.forward(params.leaf_vars(), ad.constant(np.atleast_2d(u0)),
                        ad.constant(grid.coords))
    return out.value
