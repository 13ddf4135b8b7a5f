"""Training loop, checkpoint selection, and the three-stage procedure."""

import numpy as np
import pytest

import operon.autodiff as ad
from operon.datasets import TrajectorySet
from operon.deeponet import DeepONetConfig
from operon.nn import AdamState, ConfigError, ParameterSet
from operon.training import (
    CheckpointRecord,
    LogRow,
    TrainBlock,
    TrainingConfig,
    check_resolution_pair,
    log_to_csv_rows,
    run_epoch,
    run_three_stage,
    select_checkpoint,
    train_deeponet,
    train_lift_lstm,
    train_stage,
    validation_mse,
)
from operon.rngs import train_rng


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


def traveling_wave_set(n=24, n_t=6, n_x=8, seed=1, dt=0.1, resolution="high"):
    """Cheap synthetic trajectories: traveling sinusoids of random amplitude/phase."""
    g = rng(seed)
    period = 2.0
    x = np.arange(n_x) * (period / n_x)
    t = np.arange(n_t) * dt
    u = np.empty((n, n_t, n_x))
    for i in range(n):
        a = g.uniform(0.3, 1.0)
        phi = g.uniform(0, 2 * np.pi)
        u[i] = a * np.sin(2 * np.pi * (x[None, :] - t[:, None]) / period + phi)
    return TrajectorySet(u=u, t=t, x=x, equation="kdv", resolution=resolution)


def linear_block(seed=2, n=16):
    g = rng(seed)
    x = g.uniform(-1, 1, size=(n, 1))
    y = 3.0 * x
    return TrainBlock(branch_in=x, targets=y, coords=None, n_t=1)


def linear_forward(leaves, block, idx):
    return ad.matmul_t(ad.constant(block.branch_in[idx]), leaves["w"])


def tiny_don_config():
    return DeepONetConfig(m=8, branch_widths=(8, 6), trunk_widths=(7, 6))


def tiny_training(seed=0, epochs=(6, 4, 4), n_freq=2, batch_size=8):
    return TrainingConfig(epochs=epochs, batch_size=batch_size, lr1=1e-2, lr2=1e-3,
                          n_freq=n_freq, seed=seed, val_fraction=0.2)


class TestTrainingConfig:
    def test_lr_ordering_enforced(self):
        with pytest.raises(ConfigError):
            TrainingConfig(lr1=1e-5, lr2=1e-4)
        with pytest.raises(ConfigError):
            TrainingConfig(lr1=1e-4, lr2=1e-4)

    def test_bounds(self):
        with pytest.raises(ConfigError):
            TrainingConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainingConfig(n_freq=0)
        with pytest.raises(ConfigError):
            TrainingConfig(val_fraction=1.0)

    def test_defaults_follow_reported_setup(self):
        cfg = TrainingConfig()
        assert cfg.batch_size == 50
        assert cfg.lr1 == 1e-4
        assert cfg.lr2 == 1e-5
        assert cfg.n_freq == 100


class TestRunEpoch:
    def test_zero_learning_rate_leaves_params_bitwise(self):
        ps = ParameterSet.from_arrays([("w", np.array([[0.5]]))])
        block = linear_block()
        before = ps.values.tobytes()
        loss = run_epoch(linear_forward, ps, AdamState(1, 0.0), [block], 4, rng(3), False)
        assert ps.values.tobytes() == before
        assert np.isfinite(loss)

    def test_toy_regression_descends(self):
        ps = ParameterSet.from_arrays([("w", np.array([[0.0]]))])
        block = linear_block()
        opt = AdamState(1, 1e-2)
        first = run_epoch(linear_forward, ps, opt, [block], 4, rng(4), False)
        last = first
        for _ in range(5):
            last = run_epoch(linear_forward, ps, opt, [block], 4, rng(4), False)
        assert last < first

    def test_adaptive_weights_updated_and_normalized(self):
        ps = ParameterSet.from_arrays([("w", np.array([[0.0]]))])
        block = linear_block()
        block.reset_weights(1e-2)
        run_epoch(linear_forward, ps, AdamState(1, 1e-3), [block], 4, rng(5), True)
        assert abs(np.sum(block.weights.mask()) - 1.0) <= 1e-12

    def test_nonfinite_loss_reports_context(self):
        from operon.nn import NumericError
        ps = ParameterSet.from_arrays([("w", np.array([[1e300]]))])
        block = linear_block()
        with np.errstate(over="ignore"), pytest.raises(NumericError, match="epoch 7"):
            run_epoch(linear_forward, ps, AdamState(1, 1e-3), [block], 4, rng(6), False,
                      stage="don_pretrain", epoch=7)


class TestCheckpointSelection:
    def test_argmin(self):
        cps = [CheckpointRecord(1, 0.5, np.zeros(1)), CheckpointRecord(2, 0.3, np.zeros(1)),
               CheckpointRecord(3, 0.4, np.zeros(1))]
        assert select_checkpoint(cps).epoch == 2

    def test_tie_earliest_wins(self):
        cps = [CheckpointRecord(1, 0.3, np.zeros(1)), CheckpointRecord(2, 0.3, np.zeros(1))]
        assert select_checkpoint(cps).epoch == 1


class TestTrainStage:
    def run_linear_stage(self, epochs, n_freq, seed=7):
        ps = ParameterSet.from_arrays([("w", np.array([[0.0]]))])
        cfg = TrainingConfig(epochs=(epochs, 0, 0), batch_size=4, lr1=1e-2, lr2=1e-3,
                             n_freq=n_freq, seed=seed)
        log = []
        best = train_stage("don_pretrain", linear_forward, ps, [linear_block(seed=8)],
                           [linear_block(seed=9, n=6)], epochs, cfg.lr1, cfg,
                           train_rng(seed), log)
        return ps, best, log

    def test_checkpoint_cadence(self):
        _, _, log = self.run_linear_stage(epochs=10, n_freq=4)
        marks = [r.epoch for r in log if r.checkpointed]
        assert marks == [4, 8]

    def test_short_stage_records_final_checkpoint(self):
        ps, best, log = self.run_linear_stage(epochs=3, n_freq=10)
        assert best.epoch == 3
        assert [r.checkpointed for r in log].count(True) == 1

    def test_zero_epochs_keeps_initial_params(self):
        ps = ParameterSet.from_arrays([("w", np.array([[0.25]]))])
        cfg = tiny_training()
        log = []
        best = train_stage("don_pretrain", linear_forward, ps, [linear_block()],
                           [linear_block(n=6)], 0, 1e-2, cfg, train_rng(1), log)
        assert ps.values[0] == 0.25
        assert best.epoch == 0 or best.epoch == 0  # final fallback checkpoint
        assert len(log) == 1 and log[0].checkpointed

    def test_restored_params_reproduce_recorded_val_mse(self):
        ps, best, _ = self.run_linear_stage(epochs=12, n_freq=3)
        block = linear_block(seed=9, n=6)
        re_eval = validation_mse(linear_forward, ps, [block])
        assert re_eval == best.val_mse

    def test_best_not_worse_than_initial(self):
        ps = ParameterSet.from_arrays([("w", np.array([[0.0]]))])
        val_block = linear_block(seed=9, n=6)
        initial = validation_mse(linear_forward, ps, [val_block])
        cfg = tiny_training()
        log = []
        best = train_stage("don_pretrain", linear_forward, ps, [linear_block(seed=8)],
                           [val_block], 40, 1e-2, cfg, train_rng(2), log)
        assert best.val_mse <= initial


class TestResolutionChecks:
    def test_ratio_and_grid(self):
        high = traveling_wave_set(n_t=11, dt=0.1)
        low = traveling_wave_set(n_t=3, dt=0.5)
        assert check_resolution_pair(low, high) == 5

    def test_incompatible_spatial_grid(self):
        high = traveling_wave_set()
        low = traveling_wave_set(n_x=10)
        with pytest.raises(ConfigError):
            check_resolution_pair(low, high)

    def test_non_integer_ratio(self):
        high = traveling_wave_set(dt=0.1)
        low = traveling_wave_set(dt=0.25)
        with pytest.raises(ConfigError):
            check_resolution_pair(low, high)


class TestThreeStage:
    def datasets(self):
        low = traveling_wave_set(n=20, n_t=3, dt=0.2, seed=11, resolution="low")
        high = traveling_wave_set(n=12, n_t=5, dt=0.1, seed=12, resolution="high")
        return low, high

    def test_zero_epochs_equals_fresh_composite(self):
        low, high = self.datasets()
        cfg = tiny_training(seed=3, epochs=(0, 0, 0))
        result = run_three_stage(tiny_don_config(), 4, low, high, cfg)

        from operon.deeponet import DeepONet
        from operon.donlstm import DONLSTM
        replay = train_rng(3)
        don = DeepONet(tiny_don_config())
        don_ps = don.init_params(replay)
        _, expected = DONLSTM.extend(don, don_ps, high.n_x, 4, replay)
        assert np.array_equal(result.params.values, expected.values)

    def test_operator_subvector_frozen_through_stage_two(self):
        low, high = self.datasets()
        cfg = tiny_training(seed=4, epochs=(4, 6, 0), n_freq=2)
        result = run_three_stage(tiny_don_config(), 4, low, high, cfg)
        don_len = result.stage_best["don_pretrain"].snapshot.size
        step1 = result.stage_best["don_pretrain"].snapshot
        step2 = result.stage_best["lstm_only"].snapshot[:don_len]
        assert step2.tobytes() == step1.tobytes()
        # stage 3 had zero epochs, so the final vector still carries the frozen value
        assert result.params.values[:don_len].tobytes() == step1.tobytes()

    def test_unfreezing_changes_operator_in_stage_three(self):
        low, high = self.datasets()
        cfg = tiny_training(seed=5, epochs=(2, 2, 4), n_freq=2)
        result = run_three_stage(tiny_don_config(), 4, low, high, cfg)
        don_len = result.stage_best["don_pretrain"].snapshot.size
        step2 = result.stage_best["lstm_only"].snapshot[:don_len]
        final = result.params.values[:don_len]
        assert not np.array_equal(step2, final)

    def test_log_has_three_stage_sections_in_order(self):
        low, high = self.datasets()
        cfg = tiny_training(seed=6, epochs=(2, 3, 2), n_freq=2)
        result = run_three_stage(tiny_don_config(), 4, low, high, cfg)
        stages = []
        for row in result.log:
            if not stages or stages[-1] != row.stage:
                stages.append(row.stage)
        assert stages == ["don_pretrain", "lstm_only", "joint_finetune"]

    def test_deterministic_bitwise(self):
        low, high = self.datasets()
        cfg = tiny_training(seed=7, epochs=(3, 2, 2), n_freq=2)
        a = run_three_stage(tiny_don_config(), 4, low, high, cfg)
        b = run_three_stage(tiny_don_config(), 4, low, high, cfg)
        assert a.params.values.tobytes() == b.params.values.tobytes()
        assert log_to_csv_rows(a.log) == log_to_csv_rows(b.log)

    def test_grid_mismatch_rejected_before_training(self):
        low, _ = self.datasets()
        high_bad = traveling_wave_set(n=12, n_t=5, dt=0.075, seed=12)
        with pytest.raises(ConfigError):
            run_three_stage(tiny_don_config(), 4, low, high_bad, tiny_training())


class TestSingleStage:
    def test_deeponet_multi_block_training(self):
        low = traveling_wave_set(n=20, n_t=3, dt=0.2, seed=13, resolution="low")
        high = traveling_wave_set(n=12, n_t=5, dt=0.1, seed=14)
        cfg = tiny_training(seed=8, epochs=(4, 0, 0), n_freq=2)
        result = train_deeponet(tiny_don_config(), [low, high], cfg)
        assert result.best is not None
        stages = {r.stage for r in result.log}
        assert stages == {"don_pretrain"}

    def test_lift_lstm_training(self):
        high = traveling_wave_set(n=12, n_t=4, dt=0.1, seed=15)
        cfg = tiny_training(seed=9, epochs=(3, 0, 0), n_freq=2)
        result = train_lift_lstm(high, 4, cfg)
        assert result.best is not None
        assert result.model.n_t == 3

    def test_csv_rows_format(self):
        log = [LogRow("don_pretrain", 1, 0.5, None, False),
               LogRow("don_pretrain", 2, 0.25, 0.3, True)]
        rows = log_to_csv_rows(log)
        assert rows[0] == "stage,epoch,train_loss,val_mse,checkpointed"
        assert rows[1] == "don_pretrain,1,0.5,,0"
        assert rows[2] == "don_pretrain,2,0.25,0.3,1"
