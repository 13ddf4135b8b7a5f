"""Implicit midpoint time integration and trajectory dataset generation.

Each output step is subdivided into internal midpoint steps; every internal
step solves u_next = u + dt * f((u + u_next)/2) by Newton iteration on the
(mass-form) residual with an analytically assembled Jacobian. Sample
generation draws one independent counter-based RNG stream per trajectory, so
serial and parallel runs produce identical datasets.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datasets import TrajectorySet
from .nn import ConfigError
from .pde import DiscretizedEquation, EquationSpec, Grid, make_equation
from .rngs import sample_rng

DEFAULT_SUBSTEPS = 4


@dataclass(frozen=True)
class IntegratorConfig:
    dt_internal: float | None = None   # None: dt_out / DEFAULT_SUBSTEPS
    newton_tol: float = 1e-10          # on the step residual infinity-norm
    max_newton_iter: int = 50


class IntegrationError(RuntimeError):
    def __init__(self, message: str, sample_id=None, step_index=None, residual=None):
        super().__init__(message)
        self.sample_id = sample_id
        self.step_index = step_index
        self.residual = residual


def implicit_midpoint_step(eq, u: np.ndarray, dt: float, cfg: IntegratorConfig,
                           sample_id=None, step_index=None) -> np.ndarray:
    """One midpoint step: solve M(v - u) = dt * r((u + v)/2) for v."""
    mass = eq.mass_matrix
    eye = np.eye(u.size)
    v = u.copy()
    for _ in range(cfg.max_newton_iter):
        mid = 0.5 * (u + v)
        residual = (v - u if mass is None else mass @ (v - u)) - dt * eq.mass_rhs(mid)
        worst = float(np.max(np.abs(residual)))
        if worst <= cfg.newton_tol:
            return v
        jac = (eye if mass is None else mass) - 0.5 * dt * eq.mass_rhs_jacobian(mid)
        v = v - np.linalg.solve(jac, residual)
    raise IntegrationError(
        f"Newton failed to reach {cfg.newton_tol:g} within {cfg.max_newton_iter} iterations "
        f"(sample {sample_id}, step {step_index}, residual {worst:.3e})",
        sample_id=sample_id, step_index=step_index, residual=worst)


def _substeps(dt_out: float, cfg: IntegratorConfig) -> int:
    if cfg.dt_internal is None:
        return DEFAULT_SUBSTEPS
    ratio = dt_out / cfg.dt_internal
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9:
        raise ConfigError(
            f"output step {dt_out} is not an integer multiple of internal step {cfg.dt_internal}")
    return n


def generate_trajectory(eq, u0: np.ndarray, t_end: float, dt_out: float,
                        cfg: IntegratorConfig | None = None, sample_id=None) -> np.ndarray:
    """Integrate one initial state; row i holds the state at t = i * dt_out."""
    cfg = cfg or IntegratorConfig()
    n_steps = int(round(t_end / dt_out)) if t_end > 0 else 0
    if abs(n_steps * dt_out - t_end) > 1e-9 * max(dt_out, t_end, 1.0):
        raise ConfigError(f"time span {t_end} is not an integer multiple of output step {dt_out}")
    substeps = _substeps(dt_out, cfg)
    dt_in = dt_out / substeps

    u = np.asarray(u0, dtype=np.float64).copy()
    out = np.empty((n_steps + 1, u.size))
    out[0] = u
    for i in range(1, n_steps + 1):
        for k in range(substeps):
            u = implicit_midpoint_step(eq, u, dt_in, cfg, sample_id=sample_id,
                                       step_index=(i - 1) * substeps + k)
        out[i] = u
    return out


def _generate_one(args):
    spec, grid, t_end, dt_out, cfg, seed, index = args
    eq = make_equation(spec, grid)
    rng = sample_rng(seed, index)
    u0 = eq.sample_initial_condition(rng)
    return index, generate_trajectory(eq, u0, t_end, dt_out, cfg, sample_id=index)


def resolve_workers(n_tasks: int) -> int:
    env = os.environ.get("OPERON_THREADS", "")
    if env.strip():
        limit = int(env)
    else:
        limit = os.cpu_count() or 1
    return max(1, min(limit, n_tasks))


def generate_trajectories(spec: EquationSpec, grid: Grid, n_samples: int, t_end: float,
                          dt_out: float, cfg: IntegratorConfig | None = None, seed: int = 0,
                          sample_offset: int = 0, workers: int | None = None,
                          resolution: str = "high") -> TrajectorySet:
    """Simulate `n_samples` random initial conditions at the given cadence.

    Sample i draws its RNG from (seed, sample_offset + i), so the trajectory
    for a given index is identical across dataset-size sweeps and across
    serial/parallel execution.
    """
    cfg = cfg or IntegratorConfig()
    tasks = [(spec, grid, t_end, dt_out, cfg, seed, sample_offset + i) for i in range(n_samples)]
    workers = resolve_workers(n_samples) if workers is None else max(1, workers)

    n_t = int(round(t_end / dt_out)) + 1
    u = np.empty((n_samples, n_t, grid.n_x))
    if workers == 1:
        eq = make_equation(spec, grid)
        for i in range(n_samples):
            rng = sample_rng(seed, sample_offset + i)
            u0 = eq.sample_initial_condition(rng)
            u[i] = generate_trajectory(eq, u0, t_end, dt_out, cfg, sample_id=sample_offset + i)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, traj in pool.map(_generate_one, tasks, chunksize=1):
                u[index - sample_offset] = traj

    t = np.arange(n_t) * dt_out
    return TrajectorySet(u=u, t=t, x=grid.nodes(), equation=spec.kind, resolution=resolution)


def downsample_time(traj: TrajectorySet, factor: int, resolution: str = "low") -> TrajectorySet:
    """Keep rows 0, factor, 2*factor, ...; values are a bitwise temporal subset."""
    factor = int(factor)
    if factor < 1:
        raise ConfigError(f"downsample factor must be >= 1, got {factor}")
    if (traj.n_t - 1) % factor != 0:
        raise ConfigError(f"{traj.n_t} frames cannot be downsampled by {factor}")
    return TrajectorySet(u=traj.u[:, ::factor, :].copy(), t=traj.t[::factor].copy(),
                         x=traj.x.copy(), equation=traj.equation,
                         resolution=traj.resolution if factor == 1 else resolution)
