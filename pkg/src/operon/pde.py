"""Four nonlinear PDEs on periodic 1-D grids, discretized for time integration.

Space is discretized with central finite differences in conservative
(flux-difference) form, so the spatial mean of every right-hand side
telescopes to zero and discrete mass is conserved. Each equation exposes the
pieces the implicit time stepper needs: a (possibly trivial) mass matrix M,
the rhs r with M du/dt = r(u), and its analytic Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .nn import ConfigError

EQUATION_KINDS = ("kdv", "bbm", "cahn_hilliard", "burgers")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid: nodes x_j = origin + j * dx, endpoint excluded."""

    n_x: int
    period: float
    origin: float = 0.0

    def __post_init__(self):
        if self.n_x < 3:
            raise ConfigError("grid needs at least 3 points")
        if self.period <= 0:
            raise ConfigError("period must be positive")

    @property
    def dx(self) -> float:
        return self.period / self.n_x

    def nodes(self) -> np.ndarray:
        return self.origin + np.arange(self.n_x) * self.dx


# Per-equation defaults: domain, output cadence and physical parameters.
EQUATION_PRESETS = {
    "kdv": dict(period=10.0, origin=0.0, n_x=100, t_end=5.0, dt_high=0.025,
                params=dict(gamma=1.0, eta=6.0)),
    "bbm": dict(period=20.0, origin=0.0, n_x=100, t_end=15.0, dt_high=0.075,
                params=dict()),
    "cahn_hilliard": dict(period=1.0, origin=0.0, n_x=100, t_end=3.0, dt_high=0.02,
                          params=dict(nu=-0.01, alpha=0.01, mu=-1e-5)),
    "burgers": dict(period=2.0, origin=-1.0, n_x=100, t_end=2.0, dt_high=0.01,
                    params=dict(nu=0.001, n_waves=2, n_max=4)),
}

TIME_RESOLUTION_RATIO = 5  # dt_low = ratio * dt_high


@dataclass(frozen=True)
class EquationSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EQUATION_KINDS:
            raise ConfigError(f"unknown equation {self.kind!r}; expected one of {EQUATION_KINDS}")
        merged = dict(EQUATION_PRESETS[self.kind]["params"])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)


def default_grid(kind: str) -> Grid:
    preset = EQUATION_PRESETS[kind]
    return Grid(n_x=preset["n_x"], period=preset["period"], origin=preset["origin"])


def _shift_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    eye = np.eye(n)
    up = np.roll(eye, -1, axis=0)    # (up @ u)[j] = u[j+1]
    down = np.roll(eye, 1, axis=0)   # (down @ u)[j] = u[j-1]
    return up, down


class Stencils:
    """Dense periodic central-difference operators for one grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        dx = grid.dx
        up, down = _shift_matrices(grid.n_x)
        eye = np.eye(grid.n_x)
        self.d1_matrix = (up - down) / (2.0 * dx)
        self.d2_matrix = (up - 2.0 * eye + down) / dx ** 2
        self.d3_matrix = self.d1_matrix @ self.d2_matrix
        self.d4_matrix = self.d2_matrix @ self.d2_matrix
        self._dx = dx

    def d1(self, u: np.ndarray) -> np.ndarray:
        return (np.roll(u, -1) - np.roll(u, 1)) / (2.0 * self._dx)

    def d2(self, u: np.ndarray) -> np.ndarray:
        return (np.roll(u, -1) - 2.0 * u + np.roll(u, 1)) / self._dx ** 2

    def d3(self, u: np.ndarray) -> np.ndarray:
        return self.d1(self.d2(u))


class DiscretizedEquation:
    """Common interface consumed by the implicit midpoint stepper.

    Subclasses define `mass_rhs` / `mass_rhs_jacobian`; `mass_matrix` is None
    for equations already in explicit form. `rhs` always returns du/dt.
    """

    kind: str = ""

    def __init__(self, spec: EquationSpec, grid: Grid):
        if spec.kind != self.kind:
            raise ConfigError(f"{type(self).__name__} cannot integrate {spec.kind!r}")
        self.spec = spec
        self.grid = grid
        self.stencils = Stencils(grid)

    @property
    def mass_matrix(self) -> np.ndarray | None:
        return None

    def solve_mass(self, r: np.ndarray) -> np.ndarray:
        return r

    def rhs(self, u: np.ndarray) -> np.ndarray:
        return self.solve_mass(self.mass_rhs(u))

    def mass_rhs(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mass_rhs_jacobian(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_ic_params(self, rng: np.random.Generator) -> dict:
        raise NotImplementedError

    def ic_profile(self, params: dict) -> np.ndarray:
        raise NotImplementedError

    def sample_initial_condition(self, rng: np.random.Generator) -> np.ndarray:
        return self.ic_profile(self.sample_ic_params(rng))


def _wrap_centered(x: np.ndarray, period: float, shift: float) -> np.ndarray:
    """(x + P/2 - P*shift) % P - P/2: center-periodic offset used by soliton ICs."""
    return (x + period / 2.0 - period * shift) % period - period / 2.0


def _sech(z: np.ndarray) -> np.ndarray:
    return 1.0 / np.cosh(z)


class KdV(DiscretizedEquation):
    """u_t + gamma*u_xxx + eta*u*u_x = 0 with two-soliton initial conditions.

    The advective flux carries the sign under which 2k^2 sech^2(k(x - 4k^2t))
    is an exact right-moving soliton, matching the sampled initial profiles.
    """

    kind = "kdv"

    def mass_rhs(self, u: np.ndarray) -> np.ndarray:
        p = self.spec.params
        return -p["gamma"] * self.stencils.d3(u) - p["eta"] * self.stencils.d1(0.5 * u * u)

    def mass_rhs_jacobian(self, u: np.ndarray) -> np.ndarray:
        p = self.spec.params
        return -p["gamma"] * self.stencils.d3_matrix - p["eta"] * (self.stencils.d1_matrix * u[None, :])

    def sample_ic_params(self, rng: np.random.Generator) -> dict:
        return {"k": rng.uniform(0.5, 1.0, size=2), "d": rng.uniform(0.0, 1.0, size=2)}

    def ic_profile(self, params: dict) -> np.ndarray:
        x = self.grid.nodes()
        u = np.zeros_like(x)
        for k, d in zip(params["k"], params["d"]):
            u += 2.0 * k ** 2 * _sech(k * _wrap_centered(x, self.grid.period, d)) ** 2
        return u


class BBM(DiscretizedEquation):
    """u_t - u_xxt + (u + u^2/2)_x = 0, stepped in mass form (I - D2) u_t = r(u)."""

    kind = "bbm"

    def __init__(self, spec: EquationSpec, grid: Grid):
        super().__init__(spec, grid)
        self._mass = np.eye(grid.n_x) - self.stencils.d2_matrix
        self._mass_lu = lu_factor(self._mass)

    @property
    def mass_matrix(self) -> np.ndarray:
        return self._mass

    def solve_mass(self, r: np.ndarray) -> np.ndarray:
        return lu_solve(self._mass_lu, r)

    def mass_rhs(self, u: np.ndarray) -> np.ndarray:
        return -self.stencils.d1(u + 0.5 * u * u)

    def mass_rhs_jacobian(self, u: np.ndarray) -> np.ndarray:
        return -(self.stencils.d1_matrix + self.stencils.d1_matrix * u[None, :])

    def sample_ic_params(self, rng: np.random.Generator) -> dict:
        return {"c": rng.uniform(1.0, 3.0, size=2), "d": rng.uniform(0.0, 1.0, size=2)}

    def ic_profile(self, params: dict) -> np.ndarray:
        x = self.grid.nodes()
        u = np.zeros_like(x)
        for c, d in zip(params["c"], params["d"]):
            width = 0.5 * np.sqrt(1.0 - 1.0 / c)
            u += 3.0 * (c - 1.0) * _sech(width * _wrap_centered(x, self.grid.period, d)) ** 2
        return u


class CahnHilliard(DiscretizedEquation):
    """u_t = (nu*u + alpha*u^3 + mu*u_xx)_xx with sine/cosine superposition ICs."""

    kind = "cahn_hilliard"

    def mass_rhs(self, u: np.ndarray) -> np.ndarray:
        p = self.spec.params
        return self.stencils.d2(p["nu"] * u + p["alpha"] * u ** 3 + p["mu"] * self.stencils.d2(u))

    def mass_rhs_jacobian(self, u: np.ndarray) -> np.ndarray:
        p = self.spec.params
        st = self.stencils
        return (p["nu"] * st.d2_matrix
                + 3.0 * p["alpha"] * (st.d2_matrix * (u * u)[None, :])
                + p["mu"] * st.d4_matrix)

    def sample_ic_params(self, rng: np.random.Generator) -> dict:
        return {"a": rng.uniform(0.0, 0.2, size=2), "b": rng.uniform(0.0, 0.2, size=2),
                "k": rng.integers(1, 7, size=2), "j": rng.integers(1, 7, size=2)}

    def ic_profile(self, params: dict) -> np.ndarray:
        x = self.grid.nodes()
        base = 2.0 * np.pi / self.grid.period
        u = np.zeros_like(x)
        for a, b, k, j in zip(params["a"], params["b"], params["k"], params["j"]):
            u += a * np.sin(k * base * x) + b * np.cos(j * base * x)
        return u


class Burgers(DiscretizedEquation):
    """u_t + (u^2/2)_x = (nu/pi) u_xx with superposed sinusoidal-wave ICs."""

    kind = "burgers"

    def mass_rhs(self, u: np.ndarray) -> np.ndarray:
        p = self.spec.params
        return -self.stencils.d1(0.5 * u * u) + (p["nu"] / np.pi) * self.stencils.d2(u)

    def mass_rhs_jacobian(self, u: np.ndarray) -> np.ndarray:
        p = self.spec.params
        return (-(self.stencils.d1_matrix * u[None, :])
                + (p["nu"] / np.pi) * self.stencils.d2_matrix)

    def sample_ic_params(self, rng: np.random.Generator) -> dict:
        p = self.spec.params
        n_waves = int(p["n_waves"])
        return {"amplitude": rng.uniform(0.0, 1.0, size=n_waves),
                "phase": rng.uniform(0.0, 2.0 * np.pi, size=n_waves),
                "n": rng.integers(1, int(p["n_max"]) + 1, size=n_waves)}

    def ic_profile(self, params: dict) -> np.ndarray:
        x = self.grid.nodes()
        u = np.zeros_like(x)
        for a, phi, n in zip(params["amplitude"], params["phase"], params["n"]):
            k = 2.0 * np.pi * n / self.grid.period
            u += a * np.sin(k * x + phi)
        return u


_EQUATION_CLASSES = {cls.kind: cls for cls in (KdV, BBM, CahnHilliard, Burgers)}


def make_equation(spec: EquationSpec, grid: Grid | None = None) -> DiscretizedEquation:
    if grid is None:
        grid = default_grid(spec.kind)
    return _EQUATION_CLASSES[spec.kind](spec, grid)


def rhs_eval(eq: DiscretizedEquation, u: np.ndarray) -> np.ndarray:
    """du/dt at a state (mass operator already applied where there is one)."""
    return eq.rhs(np.asarray(u, dtype=np.float64))


def sample_initial_condition(eq: DiscretizedEquation, rng: np.random.Generator) -> np.ndarray:
    return eq.sample_initial_condition(rng)
