"""Experiment configuration: JSON in, validated dataclasses out.

Every field has a default, so `{"equation": "kdv"}` is a complete config.
Validation failures name the offending field path. The desk preset shrinks
layer widths tenfold and drops dataset sizes/epochs to something a laptop
finishes in minutes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .deeponet import BRANCH_WIDTHS, TRUNK_WIDTHS, desk_widths
from .donlstm import LSTM_HIDDEN
from .integrate import IntegratorConfig
from .nn import ConfigError
from .pde import EQUATION_KINDS, EQUATION_PRESETS, TIME_RESOLUTION_RATIO, EquationSpec, Grid
from .training import TrainingConfig

VARIANTS = ("don_low", "don_high", "don_multi", "lstm_high", "donlstm_high", "donlstm_multi")

VARIANT_DATA = {
    "don_low": ("low",),
    "don_high": ("high",),
    "don_multi": ("low", "high"),
    "lstm_high": ("high",),
    "donlstm_high": ("high",),
    "donlstm_multi": ("low", "high"),
}

VARIANT_RESOLUTION = {
    "don_low": "low",
    "don_high": "high",
    "don_multi": "multi",
    "lstm_high": "high",
    "donlstm_high": "high",
    "donlstm_multi": "multi",
}

DESK_PRESET = dict(n_high=50, n_low=200, n_test=50, epochs=(500, 500, 500))


@dataclass(frozen=True)
class ModelSettings:
    branch_widths: tuple[int, ...] = BRANCH_WIDTHS
    trunk_widths: tuple[int, ...] = TRUNK_WIDTHS
    lstm_hidden: int = LSTM_HIDDEN
    periodic_trunk: bool = False

    def desk(self) -> "ModelSettings":
        return ModelSettings(branch_widths=desk_widths(self.branch_widths),
                             trunk_widths=desk_widths(self.trunk_widths),
                             lstm_hidden=max(1, self.lstm_hidden // 10),
                             periodic_trunk=self.periodic_trunk)


@dataclass(frozen=True)
class ExperimentConfig:
    equation: str = "kdv"
    variant: str = "donlstm_multi"
    seeds: tuple[int, ...] = (0,)
    n_high: int = 250
    n_low: int = 1000
    n_test: int = 1000
    dt_high: float = 0.025
    dt_low: float = 0.125
    t_end: float = 5.0
    grid: Grid = field(default_factory=lambda: Grid(100, 10.0, 0.0))
    equation_params: dict = field(default_factory=dict)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data_dir: str = "data"
    out_dir: str = "out"
    desk: bool = False
    allow_dt_ratio_mismatch: bool = False

    def equation_spec(self) -> EquationSpec:
        return EquationSpec(self.equation, dict(self.equation_params))

    def dataset_sizes(self) -> dict[str, int]:
        return {"test": self.n_test, "high": self.n_high, "low": self.n_low}

    def with_seed(self, seed: int) -> "ExperimentConfig":
        from dataclasses import replace
        return replace(self, seeds=(int(seed),))


def _take(source: dict, key: str, default, path: str):
    value = source.pop(key, default)
    return value


def _require_type(value, types, path: str):
    if not isinstance(value, types):
        names = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")
    return value


def config_from_dict(raw: dict, desk: bool | None = None,
                     seed: int | None = None) -> ExperimentConfig:
    """Build and validate a config; unknown keys and bad values name their path."""
    raw = dict(raw)
    equation = _require_type(_take(raw, "equation", "kdv", "equation"), str, "equation")
    if equation not in EQUATION_KINDS:
        raise ConfigError(f"equation: unknown equation {equation!r}; expected one of {EQUATION_KINDS}")
    preset = EQUATION_PRESETS[equation]

    variant = _require_type(_take(raw, "variant", "donlstm_multi", "variant"), str, "variant")
    if variant not in VARIANTS:
        raise ConfigError(f"variant: unknown variant {variant!r}; valid names: {', '.join(VARIANTS)}")

    desk_mode = bool(_take(raw, "desk", False, "desk")) if desk is None else desk

    seeds = _take(raw, "seeds", [0], "seeds")
    if seed is not None:
        seeds = [seed]
    if not isinstance(seeds, (list, tuple)) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: expected a non-empty list of integers")

    sizes = {}
    for name, default in (("n_high", 250), ("n_low", 1000), ("n_test", 1000)):
        if desk_mode:
            default = DESK_PRESET[name]
        value = _take(raw, name, default, name)
        if not isinstance(value, int) or value < 0:
            raise ConfigError(f"{name}: expected a non-negative integer, got {value!r}")
        sizes[name] = value

    dt_high = float(_take(raw, "dt_high", preset["dt_high"], "dt_high"))
    dt_low = float(_take(raw, "dt_low", TIME_RESOLUTION_RATIO * dt_high, "dt_low"))
    t_end = float(_take(raw, "t_end", preset["t_end"], "t_end"))
    allow_mismatch = bool(_take(raw, "allow_dt_ratio_mismatch", False, "allow_dt_ratio_mismatch"))
    if not allow_mismatch and abs(dt_low - TIME_RESOLUTION_RATIO * dt_high) > 1e-12 * dt_high:
        raise ConfigError(
            f"dt_low: expected {TIME_RESOLUTION_RATIO} * dt_high = {TIME_RESOLUTION_RATIO * dt_high}"
            f", got {dt_low} (set allow_dt_ratio_mismatch to override)")

    grid_raw = dict(_require_type(_take(raw, "grid", {}, "grid"), dict, "grid"))
    try:
        grid = Grid(n_x=int(grid_raw.pop("n_x", preset["n_x"])),
                    period=float(grid_raw.pop("period", preset["period"])),
                    origin=float(grid_raw.pop("origin", preset["origin"])))
    except ConfigError as err:
        raise ConfigError(f"grid: {err}") from err
    if grid_raw:
        raise ConfigError(f"grid: unknown keys {sorted(grid_raw)}")

    eq_params = _require_type(_take(raw, "equation_params", {}, "equation_params"),
                              dict, "equation_params")
    try:
        EquationSpec(equation, dict(eq_params))
    except ConfigError as err:
        raise ConfigError(f"equation_params: {err}") from err

    integ_raw = dict(_require_type(_take(raw, "integrator", {}, "integrator"), dict, "integrator"))
    dt_internal = integ_raw.pop("dt_internal", None)
    integrator = IntegratorConfig(
        dt_internal=None if dt_internal is None else float(dt_internal),
        newton_tol=float(integ_raw.pop("newton_tol", 1e-10)),
        max_newton_iter=int(integ_raw.pop("max_newton_iter", 50)))
    if integ_raw:
        raise ConfigError(f"integrator: unknown keys {sorted(integ_raw)}")

    model_raw = dict(_require_type(_take(raw, "model", {}, "model"), dict, "model"))
    model = ModelSettings(
        branch_widths=tuple(model_raw.pop("branch_widths", BRANCH_WIDTHS)),
        trunk_widths=tuple(model_raw.pop("trunk_widths", TRUNK_WIDTHS)),
        lstm_hidden=int(model_raw.pop("lstm_hidden", LSTM_HIDDEN)),
        periodic_trunk=bool(model_raw.pop("periodic_trunk", False)))
    if model_raw:
        raise ConfigError(f"model: unknown keys {sorted(model_raw)}")
    if desk_mode:
        model = model.desk()
    if model.branch_widths[-1] != model.trunk_widths[-1]:
        raise ConfigError("model.branch_widths: last width must match model.trunk_widths")

    train_raw = dict(_require_type(_take(raw, "training", {}, "training"), dict, "training"))
    epochs = train_raw.pop("epochs", DESK_PRESET["epochs"] if desk_mode else (25000, 25000, 25000))
    try:
        training = TrainingConfig(
            epochs=tuple(int(e) for e in epochs),
            batch_size=int(train_raw.pop("batch_size", 50)),
            lr1=float(train_raw.pop("lr1", 1e-4)),
            lr2=float(train_raw.pop("lr2", 1e-5)),
            n_freq=int(train_raw.pop("n_freq", 100)),
            seed=int(seeds[0]),
            val_fraction=float(train_raw.pop("val_fraction", 0.1)),
            adaptive_loss=bool(train_raw.pop("adaptive_loss", True)),
            lambda_lr=float(train_raw.pop("lambda_lr", 1e-3)))
    except ConfigError as err:
        raise ConfigError(f"training: {err}") from err
    if train_raw:
        raise ConfigError(f"training: unknown keys {sorted(train_raw)}")

    data_dir = str(_take(raw, "data_dir", "data", "data_dir"))
    out_dir = str(_take(raw, "out_dir", "out", "out_dir"))
    if raw:
        raise ConfigError(f"unknown configuration keys: {sorted(raw)}")

    cfg = ExperimentConfig(
        equation=equation, variant=variant, seeds=tuple(int(s) for s in seeds),
        n_high=sizes["n_high"], n_low=sizes["n_low"], n_test=sizes["n_test"],
        dt_high=dt_high, dt_low=dt_low, t_end=t_end, grid=grid,
        equation_params=dict(eq_params), integrator=integrator, model=model,
        training=training, data_dir=data_dir, out_dir=out_dir, desk=desk_mode,
        allow_dt_ratio_mismatch=allow_mismatch)

    # variant/data compatibility before anything touches the filesystem
    for need in VARIANT_DATA[cfg.variant]:
        size = {"low": cfg.n_low, "high": cfg.n_high}[need]
        if size < 2:
            raise ConfigError(
                f"n_{need}: variant {cfg.variant!r} trains on the {need}-resolution set; "
                f"need at least 2 samples, got {size}")
    return cfg


def load_config(path, desk: bool | None = None, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(raw, desk=desk, seed=seed)
