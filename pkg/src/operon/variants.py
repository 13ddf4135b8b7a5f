"""The six benchmark model variants: training dispatch, model files, evaluation.

A trained model is persisted as a `DONM` file: a fixed header, a
deterministically serialized JSON description (architecture, scalers, grid
metadata, provenance) and the raw parameter vector. Evaluation rebuilds the
model, predicts the frames after t = 0 on the test grid, maps back to
physical units and reports per-sample metrics.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import VARIANT_DATA, VARIANT_RESOLUTION, VARIANTS, ExperimentConfig
from .datasets import Scaler, TrajectorySet, apply_scaler, invert_scaler
from .deeponet import DeepONet, DeepONetConfig, QueryGrid
from .donlstm import DONLSTM, LiftLSTM
from .metrics import MetricReport, evaluate_model
from .nn import ConfigError, ParameterSet
from .training import (
    LogRow,
    TrainingConfig,
    run_three_stage,
    train_deeponet,
    train_lift_lstm,
)

MODEL_MAGIC = b"DONM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sII")  # magic, version, json length


class ModelFormatError(ValueError):
    """Malformed model file."""


@dataclass
class ModelBundle:
    """Everything needed to rebuild and run a trained model."""

    variant: str
    equation: str
    model_kind: str                 # "deeponet" | "donlstm" | "lift_lstm"
    n_x: int
    n_t_seq: int                    # frames predicted after t = 0
    dt: float                       # frame spacing the model was trained at
    periodic: bool
    period: float
    branch_widths: tuple[int, ...]
    trunk_widths: tuple[int, ...]
    lstm_hidden: int
    scalers: dict[str, Scaler]
    params: ParameterSet
    meta: dict

    def don_config(self) -> DeepONetConfig:
        return DeepONetConfig(m=self.n_x, branch_widths=self.branch_widths,
                              trunk_widths=self.trunk_widths, periodic=self.periodic,
                              period=self.period if self.periodic else None)

    def build_model(self):
        if self.model_kind == "deeponet":
            return DeepONet(self.don_config())
        if self.model_kind == "donlstm":
            return DONLSTM(self.don_config(), self.n_x, self.lstm_hidden)
        if self.model_kind == "lift_lstm":
            return LiftLSTM(m=self.n_x, n_t=self.n_t_seq, n_x=self.n_x,
                            lstm_hidden=self.lstm_hidden)
        raise ModelFormatError(f"unknown model kind {self.model_kind!r}")


def train_variant(variant: str, data: dict[str, TrajectorySet], cfg: ExperimentConfig,
                  seed: int) -> tuple[ModelBundle, list[LogRow]]:
    """Train one benchmark variant on the datasets it is defined over."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; valid names: {', '.join(VARIANTS)}")
    training = TrainingConfig(
        epochs=cfg.training.epochs, batch_size=cfg.training.batch_size,
        lr1=cfg.training.lr1, lr2=cfg.training.lr2, n_freq=cfg.training.n_freq,
        seed=seed, val_fraction=cfg.training.val_fraction,
        adaptive_loss=cfg.training.adaptive_loss, lambda_lr=cfg.training.lambda_lr)
    needed = VARIANT_DATA[variant]
    for tag in needed:
        if tag not in data or data[tag] is None:
            raise ConfigError(f"variant {variant!r} needs the {tag}-resolution dataset")
    high = data.get("high")
    low = data.get("low")
    periodic = cfg.model.periodic_trunk
    don_cfg = DeepONetConfig(
        m=cfg.grid.n_x, branch_widths=cfg.model.branch_widths,
        trunk_widths=cfg.model.trunk_widths, periodic=periodic,
        period=cfg.grid.period if periodic else None)

    if variant == "don_low":
        result = train_deeponet(don_cfg, [low], training, periodic)
        ref = low
    elif variant == "don_high":
        result = train_deeponet(don_cfg, [high], training, periodic)
        ref = high
    elif variant == "don_multi":
        result = train_deeponet(don_cfg, [low, high], training, periodic)
        ref = high
    elif variant == "lstm_high":
        result = train_lift_lstm(high, cfg.model.lstm_hidden, training)
        ref = high
    elif variant == "donlstm_high":
        result = run_three_stage(don_cfg, cfg.model.lstm_hidden, high, high, training, periodic)
        ref = high
    else:  # donlstm_multi
        result = run_three_stage(don_cfg, cfg.model.lstm_hidden, low, high, training, periodic)
        ref = high

    kind = {"don_low": "deeponet", "don_high": "deeponet", "don_multi": "deeponet",
            "lstm_high": "lift_lstm", "donlstm_high": "donlstm",
            "donlstm_multi": "donlstm"}[variant]
    bundle = ModelBundle(
        variant=variant, equation=cfg.equation, model_kind=kind,
        n_x=ref.n_x, n_t_seq=ref.n_t - 1, dt=ref.dt,
        periodic=periodic, period=ref.period,
        branch_widths=tuple(cfg.model.branch_widths),
        trunk_widths=tuple(cfg.model.trunk_widths),
        lstm_hidden=cfg.model.lstm_hidden,
        scalers=result.scalers, params=result.params,
        meta={"seed": seed, "n_high": cfg.n_high, "n_low": cfg.n_low,
              "best_val_mse": result.best.val_mse if result.best else None})
    return bundle, result.log


def predict_physical(bundle: ModelBundle, u0_raw: np.ndarray, times: np.ndarray,
                     xs: np.ndarray, chunk: int = 128) -> np.ndarray:
    """Physical-unit predictions [N, len(times)-1, n_x] for raw initial states.

    `times` includes t = 0 (dropped: it is the input, never predicted).
    Operator-only models evaluate on whatever grid is supplied; sequence
    models are tied to the frame spacing they were trained at.
    """
    u0_raw = np.atleast_2d(np.asarray(u0_raw, dtype=np.float64))
    xs = np.asarray(xs, dtype=np.float64)
    query_times = np.asarray(times, dtype=np.float64)[1:]
    n_t = query_times.size
    if xs.size != bundle.n_x:
        raise ConfigError(f"test grid has {xs.size} spatial points, model expects {bundle.n_x}")
    if bundle.model_kind in ("donlstm", "lift_lstm"):
        if n_t != bundle.n_t_seq:
            raise ConfigError(
                f"sequence model predicts {bundle.n_t_seq} frames, test grid has {n_t}")
        dt = float(query_times[1] - query_times[0]) if n_t > 1 else bundle.dt
        if abs(dt - bundle.dt) > 1e-9 * max(bundle.dt, 1.0):
            raise ConfigError(
                f"sequence model was trained at frame spacing {bundle.dt}, test uses {dt}")

    model = bundle.build_model()
    leaves = bundle.params.leaf_vars()
    u0 = apply_scaler(bundle.scalers["branch"], u0_raw)
    coords = None
    if bundle.model_kind in ("deeponet", "donlstm"):
        grid = QueryGrid.build(xs, query_times, periodic=bundle.periodic,
                               period=bundle.period if bundle.periodic else None)
        coords = ad.constant(apply_scaler(bundle.scalers["trunk"], grid.coords))

    out = np.empty((u0.shape[0], n_t * bundle.n_x))
    for i in range(0, u0.shape[0], chunk):
        batch = ad.constant(u0[i:i + chunk])
        if bundle.model_kind == "deeponet":
            pred = model.forward(leaves, batch, coords).value
        elif bundle.model_kind == "donlstm":
            flat = model.deeponet.forward(leaves, batch, coords)
            pred = model.sequence_tail(leaves, flat, n_t).value.reshape(batch.value.shape[0], -1)
        else:
            pred = model.forward(leaves, batch).value.reshape(batch.value.shape[0], -1)
        out[i:i + chunk] = pred
    physical = invert_scaler(bundle.scalers["target"], out)
    return physical.reshape(u0.shape[0], n_t, bundle.n_x)


def evaluate_bundle(bundle: ModelBundle, test: TrajectorySet) -> MetricReport:
    if test.n_x != bundle.n_x:
        raise ConfigError(f"test set has n_x={test.n_x}, model expects {bundle.n_x}")
    return evaluate_model(lambda u0: predict_physical(bundle, u0, test.t, test.x), test)


def save_model(path, bundle: ModelBundle) -> None:
    header = {
        "variant": bundle.variant, "equation": bundle.equation,
        "model_kind": bundle.model_kind, "n_x": bundle.n_x, "n_t_seq": bundle.n_t_seq,
        "dt": bundle.dt, "periodic": bundle.periodic, "period": bundle.period,
        "branch_widths": list(bundle.branch_widths),
        "trunk_widths": list(bundle.trunk_widths),
        "lstm_hidden": bundle.lstm_hidden,
        "scalers": {k: s.to_dict() for k, s in bundle.scalers.items()},
        "layout": [[name, list(shape)] for name, _, shape in bundle.params.layout],
        "meta": bundle.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(bundle.params.values, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_model(path) -> ModelBundle:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MODEL_HEADER.size:
        raise ModelFormatError(f"file shorter than the {_MODEL_HEADER.size}-byte header")
    magic, version, blob_len = _MODEL_HEADER.unpack_from(raw, 0)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    header = json.loads(raw[_MODEL_HEADER.size:_MODEL_HEADER.size + blob_len].decode())
    values = np.frombuffer(raw, dtype="<f8", offset=_MODEL_HEADER.size + blob_len).astype(np.float64)

    layout = []
    offset = 0
    for name, shape in header["layout"]:
        layout.append((name, offset, tuple(shape)))
        offset += int(np.prod(shape, dtype=np.int64))
    if offset != values.size:
        raise ModelFormatError(f"parameter payload has {values.size} entries, layout needs {offset}")
    params = ParameterSet(values, layout)
    return ModelBundle(
        variant=header["variant"], equation=header["equation"],
        model_kind=header["model_kind"], n_x=int(header["n_x"]),
        n_t_seq=int(header["n_t_seq"]), dt=float(header["dt"]),
        periodic=bool(header["periodic"]), period=float(header["period"]),
        branch_widths=tuple(header["branch_widths"]),
        trunk_widths=tuple(header["trunk_widths"]),
        lstm_hidden=int(header["lstm_hidden"]),
        scalers={k: Scaler.from_dict(v) for k, v in header["scalers"].items()},
        params=params, meta=dict(header["meta"]))


def metrics_csv_rows(entries: list[tuple[ModelBundle, MetricReport]]) -> list[str]:
    rows = ["model,resolution,seed,N_H,N_L,mae,rmse,rse"]
    for bundle, report in entries:
        rows.append(",".join([
            bundle.variant, VARIANT_RESOLUTION[bundle.variant],
            str(bundle.meta.get("seed", "")),
            str(bundle.meta.get("n_high", "")), str(bundle.meta.get("n_low", "")),
            repr(report.mean("mae")), repr(report.mean("rmse")), repr(report.mean("rse")),
        ]))
    return rows
