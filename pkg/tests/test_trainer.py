"""Training-loop tests: Adam oracle values, determinism, and guard rails."""

import numpy as np
import pytest

from trfd import (AdamState, ModelConfig, RecoveryTask, TrainTrace, adam_step,
                  generate_mask, init_model, train)
from trfd.errors import ConfigError, NumericError
from trfd.model import checkpoint_bytes
from trfd.trainer import grid_coordinates


class TestGrids:
    def test_linspace_endpoints(self):
        grids = grid_coordinates((5, 2, 1))
        np.testing.assert_allclose(grids[0], np.linspace(-1, 1, 5))
        np.testing.assert_allclose(grids[1], [-1.0, 1.0])
        np.testing.assert_allclose(grids[2], [0.0])


class TestAdam:
    def test_first_step_magnitude(self):
        # after bias correction the first update is -lr*g/(|g| + eps)
        theta = {"w": np.array([1.0])}
        state = AdamState(lr=3e-4)
        adam_step(state, theta, {"w": np.array([2.0])})
        expected = 1.0 - 3e-4 * 2.0 / (2.0 + 1e-8)
        assert theta["w"][0] == pytest.approx(expected, abs=1e-15)

    def test_descends_quadratic(self):
        theta = {"w": np.array([5.0])}
        state = AdamState(lr=0.1)
        for _ in range(500):
            adam_step(state, theta, {"w": 2 * theta["w"]})
        assert abs(theta["w"][0]) < 0.05

    def test_zero_lr_is_noop(self):
        theta = {"w": np.array([1.0, -2.0])}
        state = AdamState(lr=0.0)
        adam_step(state, theta, {"w": np.array([3.0, -1.0])})
        np.testing.assert_array_equal(theta["w"], [1.0, -2.0])

    def test_nonfinite_gradient_names_parameter(self):
        theta = {"bad": np.array([1.0])}
        state = AdamState()
        with pytest.raises(NumericError, match="bad"):
            adam_step(state, theta, {"bad": np.array([np.nan])})


class TestTrace:
    def test_strictly_increasing_iterations(self):
        trace = TrainTrace()
        trace.log(0, 1.0)
        trace.log(5, 0.5, 30.0)
        with pytest.raises(ValueError):
            trace.log(5, 0.4)

    def test_csv_format(self):
        trace = TrainTrace()
        trace.log(0, 1.5)
        trace.log(100, 0.25, 31.5)
        lines = trace.to_csv().splitlines()
        assert lines[0] == "iter,loss,psnr"
        assert lines[1] == "0,1.5,"
        assert lines[2] == "100,0.25,31.5"


def tiny_task(seed=0, iterations=10, **kw):
    rng = np.random.default_rng(seed)
    obs = rng.random((6, 6, 3))
    mask = generate_mask((6, 6, 3), 0.5, seed)
    return RecoveryTask(kind="inpaint", observation=obs, mask=mask,
                        iterations=iterations, eval_every=5, **kw)


def tiny_model(seed=0):
    return init_model(ModelConfig(dims=(6, 6, 3), ranks=(2, 2, 2), beta=2,
                                  omega0=30.0, layers=(1, 1, 1), hidden=8,
                                  seed=seed))


class TestTrainLoop:
    def test_first_logged_loss_is_initial_loss(self):
        from trfd import task_loss
        task = tiny_task()
        model = tiny_model()
        initial = float(task_loss(task, model).value)
        _, trace = train(task, tiny_model(), lr=3e-4)
        assert trace.entries[0][0] == 0
        assert trace.entries[0][1] == pytest.approx(initial, rel=1e-12)

    def test_loss_decreases(self):
        _, trace = train(tiny_task(iterations=60), tiny_model(), lr=1e-3)
        assert trace.entries[-1][1] < trace.entries[0][1]

    def test_zero_iterations_returns_untouched_model(self):
        model = tiny_model()
        before = checkpoint_bytes(model)
        out, trace = train(tiny_task(iterations=0), model)
        assert trace.entries == []
        assert checkpoint_bytes(out) == before

    def test_zero_lr_keeps_parameters(self):
        model = tiny_model()
        before = checkpoint_bytes(model)
        train(tiny_task(iterations=5), model, lr=0.0)
        assert checkpoint_bytes(model) == before

    def test_bit_identical_determinism(self):
        m1, t1 = train(tiny_task(iterations=25), tiny_model(), lr=3e-4)
        m2, t2 = train(tiny_task(iterations=25), tiny_model(), lr=3e-4)
        assert checkpoint_bytes(m1) == checkpoint_bytes(m2)
        assert t1.entries == t2.entries

    def test_trace_includes_psnr_with_ground_truth(self):
        rng = np.random.default_rng(0)
        gt = rng.random((6, 6, 3))
        task = tiny_task(iterations=6, ground_truth=gt)
        _, trace = train(task, tiny_model())
        assert all(p is not None for _, _, p in trace.entries)

    def test_all_logged_losses_finite(self):
        _, trace = train(tiny_task(iterations=30), tiny_model(), lr=3e-4)
        assert all(np.isfinite(loss) for _, loss, _ in trace.entries)

    def test_divergence_restores_last_good_state(self):
        model = tiny_model()
        before = checkpoint_bytes(model)
        task = tiny_task(iterations=100)
        # a step this large overflows the reconstruction on iteration 1
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericError):
                train(task, model, lr=1e120)
        assert checkpoint_bytes(model) == before  # rolled back to iteration 0


class TestTaskValidation:
    def test_mask_only_for_inpaint(self):
        obs = np.zeros((4, 4, 3))
        with pytest.raises(ConfigError):
            RecoveryTask(kind="denoise", observation=obs,
                         mask=np.ones((4, 4, 3)))

    def test_scale_only_for_superres(self):
        with pytest.raises(ConfigError):
            RecoveryTask(kind="denoise", observation=np.zeros((4, 4, 3)),
                         scale=2)

    def test_superres_grids_are_upscaled(self):
        task = RecoveryTask(kind="superres", observation=np.zeros((4, 4, 3)),
                            scale=2)
        assert [len(g) for g in task.grids] == [8, 8, 3]

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            RecoveryTask(kind="sharpen", observation=np.zeros((4, 4)))

    def test_negative_iterations(self):
        with pytest.raises(ConfigError):
            RecoveryTask(kind="denoise", observation=np.zeros((4, 4, 3)),
                         iterations=-1)
