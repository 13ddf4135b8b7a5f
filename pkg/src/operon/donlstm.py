"""Operator network composed with an LSTM sequence head, plus the plain LSTM baseline.

The flat operator output is relabeled into a [batch, n_t, n_x] sequence, run
through a single LSTM returning all hidden states, and projected back to the
spatial dimension by one dense layer shared across timesteps. Stage-wise
freezing of the operator sub-network is expressed through the parameter
trainable mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .deeponet import DeepONet, DeepONetConfig, QueryGrid
from .nn import ConfigError, DenseLayer, DimensionError, LSTMLayer, ParameterSet

STAGES = ("don_pretrain", "lstm_only", "joint_finetune")

LSTM_HIDDEN = 200


def reshape_to_sequence(flat: ad.Var, n_t: int, n_x: int) -> ad.Var:
    """Relabel [batch, n_t*n_x] (t-major) into [batch, n_t, n_x]."""
    if flat.value.ndim != 2 or flat.value.shape[1] != n_t * n_x:
        raise DimensionError(
            f"expected [batch, {n_t * n_x}] for n_t={n_t}, n_x={n_x}, got {flat.value.shape}")
    return ad.reshape(flat, (flat.value.shape[0], n_t, n_x))


def _deeponet_param(name: str) -> bool:
    return name.startswith("branch.") or name.startswith("trunk.")


def stage_predicate(stage: str):
    """Trainable-mask predicate (parameter name -> bool) for a training stage."""
    if stage == "don_pretrain":
        return lambda name: True
    if stage == "lstm_only":
        return lambda name: not _deeponet_param(name)
    if stage == "joint_finetune":
        return lambda name: True
    raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")


def set_trainable(params: ParameterSet, stage: str) -> ParameterSet:
    params.set_trainable(stage_predicate(stage))
    return params


class DONLSTM:
    """DeepONet -> reshape -> LSTM -> time-distributed dense head."""

    def __init__(self, don_config: DeepONetConfig, n_x: int, lstm_hidden: int = LSTM_HIDDEN):
        self.deeponet = DeepONet(don_config)
        self.n_x = n_x
        self.lstm = LSTMLayer("lstm", n_x, lstm_hidden)
        self.head = DenseLayer("head", lstm_hidden, n_x, "linear")

    def extension_arrays(self, rng: np.random.Generator):
        return self.lstm.init_arrays(rng) + self.head.init_arrays(rng)

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        return ParameterSet.from_arrays(self.deeponet.param_arrays(rng) + self.extension_arrays(rng))

    @classmethod
    def extend(cls, don: DeepONet, don_params: ParameterSet, n_x: int,
               lstm_hidden: int, rng: np.random.Generator) -> tuple["DONLSTM", ParameterSet]:
        """Attach fresh LSTM/head parameters to an already trained operator net."""
        model = cls(don.config, n_x, lstm_hidden)
        named = [(name, don_params.view(name).copy()) for name in don_params.names]
        named += model.extension_arrays(rng)
        return model, ParameterSet.from_arrays(named)

    def head_sequence(self, leaves, hidden: ad.Var) -> ad.Var:
        """Apply the dense head at every timestep of [batch, n_t, hidden]."""
        batch, n_t, width = hidden.value.shape
        flat = ad.reshape(hidden, (batch * n_t, width))
        out = self.head.forward(leaves, flat)
        return ad.reshape(out, (batch, n_t, self.n_x))

    def sequence_tail(self, leaves, flat: ad.Var, n_t: int) -> ad.Var:
        """reshape -> LSTM -> head on an already computed operator output."""
        seq = reshape_to_sequence(flat, n_t, self.n_x)
        hidden = self.lstm.sequence(leaves, seq)
        return self.head_sequence(leaves, hidden)

    def forward(self, leaves, u0: ad.Var, grid: QueryGrid) -> ad.Var:
        """[batch, m] sensors -> [batch, n_t, n_x] refined trajectory."""
        grid.uniform_dt()  # LSTM needs a fixed time interval between frames
        if grid.n_x != self.n_x:
            raise DimensionError(f"grid has n_x={grid.n_x}, model expects {self.n_x}")
        flat = self.deeponet.forward(leaves, u0, ad.constant(grid.coords))
        return self.sequence_tail(leaves, flat, grid.n_t)


def donlstm_forward(model: DONLSTM, params: ParameterSet, u0, grid: QueryGrid) -> np.ndarray:
    out = model.forward(params.leaf_vars(), ad.constant(np.atleast_2d(u0)), grid)
    return out.value


class LiftLSTM:
    """Baseline sequence model: dense lift of the initial state to the full
    space-time size, reshape into a sequence, LSTM, dense head."""

    def __init__(self, m: int, n_t: int, n_x: int, lstm_hidden: int = LSTM_HIDDEN):
        self.m = m
        self.n_t = n_t
        self.n_x = n_x
        self.lift = DenseLayer("lift", m, n_t * n_x, "linear")
        self.lstm = LSTMLayer("lstm", n_x, lstm_hidden)
        self.head = DenseLayer("head", lstm_hidden, n_x, "linear")

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        return ParameterSet.from_arrays(
            self.lift.init_arrays(rng) + self.lstm.init_arrays(rng) + self.head.init_arrays(rng))

    def forward(self, leaves, u0: ad.Var) -> ad.Var:
        flat = self.lift.forward(leaves, u0)
        seq = reshape_to_sequence(flat, self.n_t, self.n_x)
        hidden = self.lstm.sequence(leaves, seq)
        batch = u0.value.shape[0]
        out = self.head.forward(leaves, ad.reshape(hidden, (batch * self.n_t, self.lstm.hidden_size)))
        return ad.reshape(out, (batch, self.n_t, self.n_x))
