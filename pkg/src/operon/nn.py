"""Dense and LSTM building blocks on a flat float64 parameter vector.

All trainable state lives in a :class:`ParameterSet`; layers are lightweight
specs that read their weights from it by name. Gradients come from the
reverse-mode tape in :mod:`operon.autodiff`, optimization from a plain Adam,
and correctness is guarded by :func:`finite_difference_check`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


class ConfigError(ValueError):
    """Invalid configuration (unknown names, inconsistent settings)."""


class DimensionError(ValueError):
    """Shape mismatch between an operation and its operands."""


class NumericError(RuntimeError):
    """Non-finite value encountered where a finite one is required."""


ACTIVATIONS = ("linear", "tanh", "sigmoid", "swish")


def activation_apply(kind: str, x: ad.Var) -> ad.Var:
    """Apply an elementwise activation to a tape node, preserving shape."""
    if kind == "linear":
        return x
    if kind == "tanh":
        return ad.tanh(x)
    if kind == "sigmoid":
        return ad.sigmoid(x)
    if kind == "swish":
        return ad.swish(x)
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


class ParameterSet:
    """Flat float64 vector of weights plus a named layout and trainable mask.

    The flat vector is the shared currency of forward evaluation, gradient
    accumulation and the optimizer: layers look up reshaped views by name,
    the tape returns one gradient vector of the same length, and Adam updates
    the vector in place.
    """

    def __init__(self, values, layout, trainable_mask=None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.layout = [(name, int(off), tuple(shape)) for name, off, shape in layout]
        covered = 0
        for name, off, shape in self.layout:
            if off != covered:
                raise ConfigError(f"layout offsets must be contiguous; {name!r} starts at {off}, expected {covered}")
            covered += int(np.prod(shape, dtype=np.int64))
        if covered != self.values.size:
            raise ConfigError(f"layout covers {covered} entries but vector has {self.values.size}")
        if trainable_mask is None:
            trainable_mask = np.ones(self.values.size, dtype=bool)
        self.trainable_mask = np.asarray(trainable_mask, dtype=bool)
        if self.trainable_mask.size != self.values.size:
            raise ConfigError("trainable mask length must match parameter count")
        self._index = {name: (off, shape) for name, off, shape in self.layout}

    @classmethod
    def from_arrays(cls, named_arrays) -> "ParameterSet":
        layout = []
        chunks = []
        off = 0
        for name, arr in named_arrays:
            arr = np.asarray(arr, dtype=np.float64)
            layout.append((name, off, arr.shape))
            chunks.append(arr.ravel())
            off += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    def __len__(self) -> int:
        return self.values.size

    @property
    def names(self):
        return [name for name, _, _ in self.layout]

    def view(self, name: str) -> np.ndarray:
        """Reshaped view of one parameter array; writes hit the flat vector."""
        off, shape = self._index[name]
        size = int(np.prod(shape, dtype=np.int64))
        return self.values[off:off + size].reshape(shape)

    def slice_of(self, name: str) -> slice:
        off, shape = self._index[name]
        return slice(off, off + int(np.prod(shape, dtype=np.int64)))

    def leaf_vars(self) -> dict[str, ad.Var]:
        """Fresh tape leaves over the current values, one per named array."""
        return {name: ad.Var(self.view(name)) for name in self._index}

    def gather_grads(self, leaves: dict[str, ad.Var]) -> np.ndarray:
        """Collect leaf adjoints into one flat vector; frozen entries are 0."""
        flat = np.zeros_like(self.values)
        for name, off, shape in self.layout:
            leaf = leaves.get(name)
            if leaf is not None and leaf.grad is not None:
                size = int(np.prod(shape, dtype=np.int64))
                flat[off:off + size] = leaf.grad.ravel()
        flat[~self.trainable_mask] = 0.0
        return flat

    def set_trainable(self, predicate) -> None:
        """Set the mask from a per-array predicate on parameter names."""
        for name, off, shape in self.layout:
            size = int(np.prod(shape, dtype=np.int64))
            self.trainable_mask[off:off + size] = bool(predicate(name))

    def freeze_all(self) -> None:
        self.trainable_mask[:] = False

    def clone(self) -> "ParameterSet":
        return ParameterSet(self.values.copy(), self.layout, self.trainable_mask.copy())


def compute_gradients(loss_fn, params: ParameterSet) -> np.ndarray:
    """Gradient of a scalar loss with respect to every trainable entry.

    `loss_fn` receives a dict of fresh leaf Vars (name -> Var) and must return
    a scalar Var. Frozen entries come back as exact zeros.
    """
    leaves = params.leaf_vars()
    loss = loss_fn(leaves)
    if loss.value.shape != ():
        raise DimensionError(f"loss must be scalar, got shape {loss.value.shape}")
    if not np.isfinite(loss.value):
        raise NumericError(f"non-finite loss {loss.value!r}")
    ad.backward(loss)
    return params.gather_grads(leaves)


def loss_value(loss_fn, params: ParameterSet) -> float:
    """Evaluate the loss without touching gradients."""
    loss = loss_fn(params.leaf_vars())
    return float(loss.value)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass(frozen=True)
class DenseLayer:
    """Fully connected layer W x + b with an elementwise activation.

    Weights are [out_width, in_width] under `<name>.w`, bias under `<name>.b`.
    """

    name: str
    in_width: int
    out_width: int
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")

    def init_arrays(self, rng: np.random.Generator):
        w = glorot_uniform(rng, self.in_width, self.out_width, (self.out_width, self.in_width))
        b = np.zeros(self.out_width)
        return [(f"{self.name}.w", w), (f"{self.name}.b", b)]

    def param_count(self) -> int:
        return self.out_width * (self.in_width + 1)

    def forward(self, leaves: dict[str, ad.Var], x: ad.Var) -> ad.Var:
        if x.value.ndim != 2 or x.value.shape[1] != self.in_width:
            raise DimensionError(
                f"{self.name}: expected input [batch, {self.in_width}], got {x.value.shape}")
        z = ad.add(ad.matmul_t(x, leaves[f"{self.name}.w"]), leaves[f"{self.name}.b"])
        return activation_apply(self.activation, z)


def dense_forward(layer: DenseLayer, params: ParameterSet, x) -> np.ndarray:
    """Convenience wrapper: run a dense layer on a plain array."""
    out = layer.forward(params.leaf_vars(), ad.constant(np.atleast_2d(x)))
    return out.value


@dataclass(frozen=True)
class LSTMLayer:
    """Single LSTM layer with packed gates in the order (input, forget, cell, output).

    Input weights are [4*hidden, in_width] under `<name>.wx`, recurrent weights
    [4*hidden, hidden] under `<name>.wh`, biases [4*hidden] under `<name>.b`.
    Parameter count is 4*((in+1)*h + h^2).
    """

    name: str
    in_width: int
    hidden_size: int
    forget_bias: float = 1.0

    def init_arrays(self, rng: np.random.Generator):
        h = self.hidden_size
        wx = glorot_uniform(rng, self.in_width, h, (4 * h, self.in_width))
        wh = glorot_uniform(rng, h, h, (4 * h, h))
        b = np.zeros(4 * h)
        b[h:2 * h] = self.forget_bias
        return [(f"{self.name}.wx", wx), (f"{self.name}.wh", wh), (f"{self.name}.b", b)]

    def param_count(self) -> int:
        return 4 * ((self.in_width + 1) * self.hidden_size + self.hidden_size ** 2)

    def step(self, leaves: dict[str, ad.Var], x_t: ad.Var, h_prev: ad.Var, c_prev: ad.Var):
        """One recurrence step; returns (h, c)."""
        h = self.hidden_size
        if x_t.value.ndim != 2 or x_t.value.shape[1] != self.in_width:
            raise DimensionError(f"{self.name}: expected input [batch, {self.in_width}], got {x_t.value.shape}")
        if h_prev.value.shape != (x_t.value.shape[0], h) or c_prev.value.shape != h_prev.value.shape:
            raise DimensionError(f"{self.name}: state must be [batch, {h}]")
        z = ad.add(ad.add(ad.matmul_t(x_t, leaves[f"{self.name}.wx"]),
                          ad.matmul_t(h_prev, leaves[f"{self.name}.wh"])),
                   leaves[f"{self.name}.b"])
        gate_i = ad.sigmoid(ad.col_slice(z, 0, h))
        gate_f = ad.sigmoid(ad.col_slice(z, h, 2 * h))
        gate_g = ad.tanh(ad.col_slice(z, 2 * h, 3 * h))
        gate_o = ad.sigmoid(ad.col_slice(z, 3 * h, 4 * h))
        c = ad.add(ad.mul(gate_f, c_prev), ad.mul(gate_i, gate_g))
        h_new = ad.mul(gate_o, ad.tanh(c))
        return h_new, c

    def sequence(self, leaves: dict[str, ad.Var], xs: ad.Var) -> ad.Var:
        """Run over [batch, time, in_width] from zero states; returns all hidden states."""
        batch, n_t, _ = xs.value.shape
        state_h = ad.constant(np.zeros((batch, self.hidden_size)))
        state_c = ad.constant(np.zeros((batch, self.hidden_size)))
        frames = []
        for t in range(n_t):
            state_h, state_c = self.step(leaves, ad.timestep(xs, t), state_h, state_c)
            frames.append(state_h)
        return ad.stack_time(frames)


def lstm_step(layer: LSTMLayer, params: ParameterSet, x_t, h_prev, c_prev):
    """Convenience wrapper: one recurrence step on plain arrays."""
    h, c = layer.step(params.leaf_vars(), ad.constant(np.atleast_2d(x_t)),
                      ad.constant(np.atleast_2d(h_prev)), ad.constant(np.atleast_2d(c_prev)))
    return h.value, c.value


class AdamState:
    """First/second moment buffers plus the step counter for Adam."""

    def __init__(self, n_params: int, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)


def adam_step(state: AdamState, params: ParameterSet, grads: np.ndarray) -> ParameterSet:
    """One Adam update with bias correction; frozen entries are untouched."""
    if grads.shape != params.values.shape:
        raise DimensionError(f"gradient length {grads.size} != parameter length {len(params)}")
    state.step_count += 1
    t = state.step_count
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    delta = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    mask = params.trainable_mask
    params.values[mask] -= delta[mask]
    return params


@dataclass
class GradCheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    worst_rel_error: float
    worst: GradCheckEntry | None
    entries: list[GradCheckEntry] = field(default_factory=list)

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.rel_error > self.tolerance]

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"gradient check {status}: worst rel. error {self.worst_rel_error:.3e} "
                 f"(tolerance {self.tolerance:.1e}, {len(self.entries)} entries)"]
        for e in self.failures():
            lines.append(f"  {e.name}[{e.index}]: analytic {e.analytic:.12e} vs numeric {e.numeric:.12e}"
                         f" (rel {e.rel_error:.3e})")
        return "\n".join(lines)


def finite_difference_check(loss_fn, params: ParameterSet, rng: np.random.Generator | None = None,
                            n_check: int = 32, tolerance: float = 1e-5,
                            grad_fn=None, rel_floor: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients against central differences on a parameter subset.

    Central differences use h = 1e-6 * max(1, |theta|). Relative error is
    |a - n| / max(|a|, |n|, rel_floor), which keeps the comparison absolute
    for near-zero gradient entries where the divided difference is pure noise.
    """
    grad_fn = grad_fn or compute_gradients
    analytic = grad_fn(loss_fn, params)

    trainable_idx = np.flatnonzero(params.trainable_mask)
    if trainable_idx.size == 0:
        raise ConfigError("no trainable parameters to check")
    if rng is not None and trainable_idx.size > n_check:
        trainable_idx = np.sort(rng.choice(trainable_idx, size=n_check, replace=False))

    name_of = {}
    for name, off, shape in params.layout:
        size = int(np.prod(shape, dtype=np.int64))
        for k in range(off, off + size):
            name_of[k] = name

    work = params.values.copy()
    probe = ParameterSet(work, params.layout, params.trainable_mask)
    entries = []
    for idx in trainable_idx:
        theta = work[idx]
        h = 1e-6 * max(1.0, abs(theta))
        work[idx] = theta + h
        up = loss_value(loss_fn, probe)
        work[idx] = theta - h
        down = loss_value(loss_fn, probe)
        work[idx] = theta
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
        entries.append(GradCheckEntry(name_of[int(idx)], int(idx), a, numeric, rel))

    worst = max(entries, key=lambda e: e.rel_error)
    return GradCheckReport(passed=worst.rel_error <= tolerance, tolerance=tolerance,
                           worst_rel_error=worst.rel_error, worst=worst, entries=entries)
