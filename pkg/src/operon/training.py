"""Minibatch training loop, checkpoint selection, and the three-stage procedure.

A stage trains one model on one or more resolution blocks: shuffled batches,
the self-adaptive loss, Adam updates, multiplier ascent per batch and
renormalization per epoch. Every `n_freq` epochs the plain validation MSE is
recorded with a parameter snapshot; the stage ends by restoring the snapshot
with the lowest validation MSE (earliest epoch on ties).

The composite pipeline pretrains the operator network on one dataset, attaches
the LSTM head and trains it with the operator frozen, then fine-tunes the
whole model at a reduced learning rate. While the operator is frozen its
outputs are constant, so they are computed once and reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .adaptive import AdaptiveWeights, adaptive_loss, normalize_lambdas, plain_mse_loss, update_lambdas
from .datasets import Scaler, TrajectorySet, apply_scaler, fit_scaler, split_train_val
from .deeponet import DeepONet, DeepONetConfig, QueryGrid
from .donlstm import DONLSTM, LiftLSTM, set_trainable
from .nn import AdamState, ConfigError, NumericError, ParameterSet, adam_step, compute_gradients
from .rngs import train_rng


@dataclass(frozen=True)
class TrainingConfig:
    epochs: tuple[int, int, int] = (500, 500, 500)
    batch_size: int = 50
    lr1: float = 1e-4
    lr2: float = 1e-5
    n_freq: int = 100
    seed: int = 0
    val_fraction: float = 0.1
    adaptive_loss: bool = True
    lambda_lr: float = 1e-3

    def __post_init__(self):
        if self.lr2 >= self.lr1:
            raise ConfigError(f"lr2 ({self.lr2}) must be smaller than lr1 ({self.lr1})")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_freq < 1:
            raise ConfigError("n_freq must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if len(self.epochs) != 3 or any(e < 0 for e in self.epochs):
            raise ConfigError("epochs must be three non-negative stage counts")


@dataclass
class CheckpointRecord:
    epoch: int
    val_mse: float
    snapshot: np.ndarray


@dataclass
class LogRow:
    stage: str
    epoch: int
    train_loss: float
    val_mse: float | None
    checkpointed: bool


def select_checkpoint(checkpoints: list[CheckpointRecord]) -> CheckpointRecord:
    """Lowest validation MSE wins; the earliest epoch breaks exact ties."""
    return min(checkpoints, key=lambda c: (c.val_mse, c.epoch))


@dataclass
class TrainBlock:
    """One resolution's arrays, already scaled for training."""

    branch_in: np.ndarray            # [N, m]
    targets: np.ndarray              # [N, j] flattened t-major frames
    coords: np.ndarray | None        # [q, d] scaled trunk inputs (None: no trunk)
    n_t: int
    weights: AdaptiveWeights | None = None
    cached: np.ndarray | None = None  # frozen-operator outputs, [N, j]

    @property
    def n(self) -> int:
        return self.branch_in.shape[0]

    def reset_weights(self, lambda_lr: float) -> None:
        self.weights = AdaptiveWeights.uniform(self.targets.shape[1], lambda_lr)


def run_epoch(forward, params: ParameterSet, optimizer: AdamState, blocks: list[TrainBlock],
              batch_size: int, rng: np.random.Generator, use_adaptive: bool,
              stage: str = "", epoch: int = 0) -> float:
    """One pass over every block: shuffle, batch, descend; ascend multipliers."""
    schedule = []
    for b, block in enumerate(blocks):
        perm = rng.permutation(block.n)
        for i in range(0, block.n, batch_size):
            schedule.append((b, perm[i:i + batch_size]))
    if len(blocks) > 1:
        schedule = [schedule[i] for i in rng.permutation(len(schedule))]

    losses = []
    for batch_no, (b, idx) in enumerate(schedule):
        block = blocks[b]
        stash = {}

        def loss_fn(leaves, block=block, idx=idx, stash=stash):
            pred = forward(leaves, block, idx)
            stash["pred"] = pred.value
            target = block.targets[idx]
            if use_adaptive:
                loss = adaptive_loss(pred, target, block.weights)
            else:
                loss = plain_mse_loss(pred, target)
            stash["loss"] = float(loss.value)
            return loss

        try:
            grads = compute_gradients(loss_fn, params)
        except NumericError as err:
            raise NumericError(f"stage {stage!r}, epoch {epoch}, batch {batch_no}: {err}") from err
        adam_step(optimizer, params, grads)
        if use_adaptive:
            update_lambdas(block.weights, stash["pred"], block.targets[idx])
        losses.append(stash["loss"])

    if use_adaptive:
        for block in blocks:
            normalize_lambdas(block.weights)
    return float(np.mean(losses)) if losses else float("nan")


def validation_mse(forward, params: ParameterSet, blocks: list[TrainBlock],
                   chunk: int = 256) -> float:
    """Plain (unweighted) MSE over every validation sample and point."""
    leaves = params.leaf_vars()
    total_sq = 0.0
    total_n = 0
    for block in blocks:
        for i in range(0, block.n, chunk):
            idx = np.arange(i, min(i + chunk, block.n))
            pred = forward(leaves, block, idx).value
            diff = pred - block.targets[idx]
            total_sq += float(np.sum(diff * diff))
            total_n += diff.size
    return total_sq / total_n


def train_stage(stage: str, forward, params: ParameterSet, train_blocks: list[TrainBlock],
                val_blocks: list[TrainBlock], epochs: int, learning_rate: float,
                cfg: TrainingConfig, rng: np.random.Generator,
                log: list[LogRow]) -> CheckpointRecord:
    """Run one stage and restore the best checkpoint into `params`."""
    optimizer = AdamState(len(params), learning_rate)
    for block in train_blocks:
        block.reset_weights(cfg.lambda_lr)
    checkpoints: list[CheckpointRecord] = []

    for epoch in range(1, epochs + 1):
        loss = run_epoch(forward, params, optimizer, train_blocks, cfg.batch_size, rng,
                         cfg.adaptive_loss, stage=stage, epoch=epoch)
        checkpointed = epoch % cfg.n_freq == 0
        val = validation_mse(forward, params, val_blocks) if checkpointed else None
        if checkpointed:
            checkpoints.append(CheckpointRecord(epoch, val, params.values.copy()))
        log.append(LogRow(stage, epoch, loss, val, checkpointed))

    if not checkpoints:
        val = validation_mse(forward, params, val_blocks)
        checkpoints.append(CheckpointRecord(epochs, val, params.values.copy()))
        log.append(LogRow(stage, epochs, float("nan"), val, True))

    best = select_checkpoint(checkpoints)
    params.values[:] = best.snapshot
    return best


def make_query_grid(traj: TrajectorySet, periodic: bool = False,
                    period: float | None = None) -> QueryGrid:
    """Query points over a trajectory set's grid; the t=0 frame is the model
    input, so queries start at the first predicted frame."""
    return QueryGrid.build(traj.x, traj.t[1:], periodic=periodic, period=period)


def fit_run_scalers(train_sets: list[TrajectorySet], grids: list[QueryGrid]) -> dict[str, Scaler]:
    """Branch (standard), trunk (min-max) and target (standard) scalers fitted
    on the union of the training splits a run actually uses."""
    branch_data = np.concatenate([t.initial_states().ravel() for t in train_sets])
    target_data = np.concatenate([t.target_frames().ravel() for t in train_sets])
    coord_data = np.concatenate([g.coords.ravel() for g in grids])
    return {
        "branch": fit_scaler("standard", branch_data, domain="branch-input"),
        "trunk": fit_scaler("minmax", coord_data, domain="trunk-input"),
        "target": fit_scaler("standard", target_data, domain="target"),
    }


def build_block(traj: TrajectorySet, grid: QueryGrid | None, scalers: dict[str, Scaler]) -> TrainBlock:
    targets = apply_scaler(scalers["target"], traj.target_frames()).reshape(traj.n, -1)
    return TrainBlock(
        branch_in=apply_scaler(scalers["branch"], traj.initial_states()),
        targets=targets,
        coords=None if grid is None else apply_scaler(scalers["trunk"], grid.coords),
        n_t=traj.n_t - 1,
    )


def deeponet_batch_forward(model: DeepONet):
    def forward(leaves, block: TrainBlock, idx):
        return model.forward(leaves, ad.constant(block.branch_in[idx]),
                             ad.constant(block.coords))
    return forward


def donlstm_batch_forward(model: DONLSTM, cached: bool):
    def forward(leaves, block: TrainBlock, idx):
        if cached:
            flat = ad.constant(block.cached[idx])
        else:
            flat = model.deeponet.forward(leaves, ad.constant(block.branch_in[idx]),
                                          ad.constant(block.coords))
        out = model.sequence_tail(leaves, flat, block.n_t)
        return ad.reshape(out, (len(idx), block.n_t * model.n_x))
    return forward


def lift_lstm_batch_forward(model: LiftLSTM):
    def forward(leaves, block: TrainBlock, idx):
        out = model.forward(leaves, ad.constant(block.branch_in[idx]))
        return ad.reshape(out, (len(idx), model.n_t * model.n_x))
    return forward


def cache_operator_outputs(model: DONLSTM, params: ParameterSet, blocks: list[TrainBlock],
                           chunk: int = 256) -> None:
    """Precompute frozen-operator outputs so the LSTM stage never re-runs them."""
    leaves = params.leaf_vars()
    for block in blocks:
        rows = []
        for i in range(0, block.n, chunk):
            u0 = ad.constant(block.branch_in[i:i + chunk])
            rows.append(model.deeponet.forward(leaves, u0, ad.constant(block.coords)).value)
        block.cached = np.concatenate(rows, axis=0)


def check_resolution_pair(d_low: TrajectorySet, d_high: TrajectorySet) -> int:
    """Shared spatial grid and an integer time-resolution ratio, or an error."""
    if not np.array_equal(d_low.x, d_high.x):
        raise ConfigError("low- and high-resolution sets must share their spatial grid")
    if d_high.dt <= 0:
        raise ConfigError("high-resolution set needs at least two frames")
    ratio = d_low.dt / d_high.dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError(
            f"low-resolution step {d_low.dt} is not an integer multiple of {d_high.dt}")
    return int(round(ratio))


@dataclass
class ThreeStageResult:
    model: DONLSTM
    params: ParameterSet
    scalers: dict[str, Scaler]
    log: list[LogRow] = field(default_factory=list)
    best: CheckpointRecord | None = None
    stage_best: dict[str, CheckpointRecord] = field(default_factory=dict)


def run_three_stage(don_config: DeepONetConfig, lstm_hidden: int,
                    d_stage1: TrajectorySet, d_high: TrajectorySet,
                    cfg: TrainingConfig, periodic: bool = False) -> ThreeStageResult:
    """Pretrain the operator on `d_stage1`, extend with the LSTM head on the
    high-resolution data, then fine-tune everything at the reduced rate."""
    check_resolution_pair(d_stage1, d_high)
    rng = train_rng(cfg.seed)
    log: list[LogRow] = []
    period = d_high.period if periodic else None

    s1_train, s1_val = split_train_val(d_stage1, cfg.val_fraction, cfg.seed)
    h_train, h_val = split_train_val(d_high, cfg.val_fraction, cfg.seed)

    grid_s1 = make_query_grid(s1_train, periodic, period)
    grid_h = make_query_grid(h_train, periodic, period)
    scalers = fit_run_scalers([s1_train, h_train], [grid_s1, grid_h])

    stage_best: dict[str, CheckpointRecord] = {}

    # Step 1: operator network alone, on the pretraining dataset
    don = DeepONet(don_config)
    params = don.init_params(rng)
    set_trainable(params, "don_pretrain")
    forward1 = deeponet_batch_forward(don)
    train1 = [build_block(s1_train, grid_s1, scalers)]
    val1 = [build_block(s1_val, grid_s1, scalers)]
    stage_best["don_pretrain"] = train_stage("don_pretrain", forward1, params, train1, val1,
                                             cfg.epochs[0], cfg.lr1, cfg, rng, log)

    # Step 2: attach LSTM + head, freeze the operator, train on high-resolution
    model, params = DONLSTM.extend(don, params, d_high.n_x, lstm_hidden, rng)
    set_trainable(params, "lstm_only")
    train2 = [build_block(h_train, grid_h, scalers)]
    val2 = [build_block(h_val, grid_h, scalers)]
    cache_operator_outputs(model, params, train2 + val2)
    forward2 = donlstm_batch_forward(model, cached=True)
    stage_best["lstm_only"] = train_stage("lstm_only", forward2, params, train2, val2,
                                          cfg.epochs[1], cfg.lr1, cfg, rng, log)

    # Step 3: unfreeze everything, fine-tune at the reduced learning rate
    set_trainable(params, "joint_finetune")
    forward3 = donlstm_batch_forward(model, cached=False)
    best = train_stage("joint_finetune", forward3, params, train2, val2,
                       cfg.epochs[2], cfg.lr2, cfg, rng, log)
    stage_best["joint_finetune"] = best

    return ThreeStageResult(model=model, params=params, scalers=scalers, log=log,
                            best=best, stage_best=stage_best)


@dataclass
class SingleStageResult:
    model: object
    params: ParameterSet
    scalers: dict[str, Scaler]
    log: list[LogRow] = field(default_factory=list)
    best: CheckpointRecord | None = None


def train_deeponet(don_config: DeepONetConfig, train_sets: list[TrajectorySet],
                   cfg: TrainingConfig, periodic: bool = False) -> SingleStageResult:
    """Vanilla operator-network training on one or more resolution blocks."""
    rng = train_rng(cfg.seed)
    log: list[LogRow] = []
    period = train_sets[0].period if periodic else None

    splits = [split_train_val(t, cfg.val_fraction, cfg.seed) for t in train_sets]
    grids = [make_query_grid(tr, periodic, period) for tr, _ in splits]
    scalers = fit_run_scalers([tr for tr, _ in splits], grids)

    don = DeepONet(don_config)
    params = don.init_params(rng)
    set_trainable(params, "don_pretrain")
    forward = deeponet_batch_forward(don)
    train_blocks = [build_block(tr, g, scalers) for (tr, _), g in zip(splits, grids)]
    val_blocks = [build_block(va, g, scalers) for (_, va), g in zip(splits, grids)]
    best = train_stage("don_pretrain", forward, params, train_blocks, val_blocks,
                       cfg.epochs[0], cfg.lr1, cfg, rng, log)
    return SingleStageResult(model=don, params=params, scalers=scalers, log=log, best=best)


def train_lift_lstm(d_high: TrajectorySet, lstm_hidden: int,
                    cfg: TrainingConfig) -> SingleStageResult:
    """Single-stage baseline: dense lift, reshape, LSTM, head on high-res data."""
    rng = train_rng(cfg.seed)
    log: list[LogRow] = []
    train, val = split_train_val(d_high, cfg.val_fraction, cfg.seed)
    grid = make_query_grid(train)
    scalers = fit_run_scalers([train], [grid])

    model = LiftLSTM(m=d_high.n_x, n_t=d_high.n_t - 1, n_x=d_high.n_x, lstm_hidden=lstm_hidden)
    params = model.init_params(rng)
    forward = lift_lstm_batch_forward(model)
    train_blocks = [build_block(train, None, scalers)]
    val_blocks = [build_block(val, None, scalers)]
    best = train_stage("lstm_high", forward, params, train_blocks, val_blocks,
                       cfg.epochs[0], cfg.lr1, cfg, rng, log)
    return SingleStageResult(model=model, params=params, scalers=scalers, log=log, best=best)


def log_to_csv_rows(log: list[LogRow]) -> list[str]:
    rows = ["stage,epoch,train_loss,val_mse,checkpointed"]
    for r in log:
        val = "" if r.val_mse is None else repr(float(r.val_mse))
        rows.append(f"{r.stage},{r.epoch},{repr(float(r.train_loss))},{val},{int(r.checkpointed)}")
    return rows
