import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prefixasr import numcore as nc
from prefixasr.numcore import ops


def rand(rng, *shape):
    return rng.standard_normal(shape)


class TestPrimitiveGradients:
    """Every primitive vs central finite differences, in 64-bit mode."""

    def check(self, build, params, tol=1e-6):
        report = nc.grad_check(build, params)
        assert report.max_rel_error < tol, report.per_param

    def test_matmul(self):
        rng = np.random.default_rng(0)
        with nc.use_dtype(np.float64):
            a = nc.param(rand(rng, 3, 4))
            b = nc.param(rand(rng, 4, 2))
            self.check(lambda: (a @ b).sum(), {"a": a, "b": b})

    def test_batched_matmul(self):
        rng = np.random.default_rng(1)
        with nc.use_dtype(np.float64):
            a = nc.param(rand(rng, 2, 3, 4))
            b = nc.param(rand(rng, 2, 4, 3))
            self.check(lambda: (a @ b).sum(), {"a": a, "b": b})

    def test_softmax(self):
        rng = np.random.default_rng(2)
        with nc.use_dtype(np.float64):
            x = nc.param(rand(rng, 3, 5))
            w = rand(rng, 3, 5)
            self.check(lambda: (ops.softmax(x) * nc.as_tensor(w)).sum(), {"x": x})

    def test_log_softmax(self):
        rng = np.random.default_rng(3)
        with nc.use_dtype(np.float64):
            x = nc.param(rand(rng, 4, 6))
            w = rand(rng, 4, 6)
            self.check(lambda: (ops.log_softmax(x) * nc.as_tensor(w)).sum(), {"x": x})

    def test_layer_norm(self):
        rng = np.random.default_rng(4)
        with nc.use_dtype(np.float64):
            x = nc.param(rand(rng, 3, 8))
            g = nc.param(1.0 + 0.1 * rand(rng, 8))
            b = nc.param(0.1 * rand(rng, 8))
            w = rand(rng, 3, 8)
            self.check(
                lambda: (ops.layer_norm(x, g, b) * nc.as_tensor(w)).sum(),
                {"x": x, "g": g, "b": b}, tol=1e-5)

    def test_conv1d(self):
        rng = np.random.default_rng(5)
        with nc.use_dtype(np.float64):
            x = nc.param(rand(rng, 9, 3))
            w = nc.param(rand(rng, 3, 3, 4))
            b = nc.param(rand(rng, 4))
            self.check(lambda: ops.conv1d(x, w, b, stride=2, pad=1).sum(),
                       {"x": x, "w": w, "b": b})

    def test_depthwise_conv1d(self):
        rng = np.random.default_rng(6)
        with nc.use_dtype(np.float64):
            x = nc.param(rand(rng, 10, 4))
            w = nc.param(rand(rng, 5, 4))
            b = nc.param(rand(rng, 4))
            self.check(lambda: ops.depthwise_conv1d(x, w, b, pad=2).sum(),
                       {"x": x, "w": w, "b": b})

    def test_glu_swish_sigmoid(self):
        rng = np.random.default_rng(7)
        with nc.use_dtype(np.float64):
            x = nc.param(rand(rng, 4, 6))
            self.check(lambda: ops.glu(x).sum(), {"x": x})
            self.check(lambda: ops.swish(x).sum(), {"x": x})
            self.check(lambda: ops.sigmoid(x).sum(), {"x": x})

    def test_embedding_gather(self):
        rng = np.random.default_rng(8)
        with nc.use_dtype(np.float64):
            table = nc.param(rand(rng, 7, 4))
            ids = np.array([0, 3, 3, 6])
            self.check(lambda: ops.embedding(table, ids).sum(), {"table": table})
            x = nc.param(rand(rng, 5, 6))
            idx = np.array([1, 0, 5, 2, 2])
            self.check(lambda: ops.gather_rows(x, idx).sum(), {"x": x})

    def test_reductions_and_shape_ops(self):
        rng = np.random.default_rng(9)
        with nc.use_dtype(np.float64):
            x = nc.param(rand(rng, 3, 4))
            self.check(lambda: x.mean(), {"x": x})
            self.check(lambda: x.sum(axis=1).sum(), {"x": x})
            self.check(lambda: ops.logsumexp(x).sum(), {"x": x})
            self.check(lambda: x.reshape(4, 3).transpose().sum(axis=0).sum(), {"x": x})
            self.check(lambda: ops.narrow(x, 0, 1, 2).sum(), {"x": x})
            self.check(lambda: ops.concat([x, x], axis=1).sum(), {"x": x})


def test_quadratic_gradient_exact():
    with nc.use_dtype(np.float64):
        x = nc.param(np.array([3.0]))
        report = nc.grad_check(lambda: (x * x).sum(), {"x": x})
        assert report.max_rel_error < 1e-8
        assert x.grad is not None and abs(x.grad[0] - 6.0) < 1e-8


def test_softmax_rows_sum_to_one_and_lse_safe():
    rng = np.random.default_rng(10)
    x = nc.as_tensor(rng.uniform(-1e4, 1e4, size=(20, 11)))
    s = ops.softmax(x).data
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(np.isfinite(ops.logsumexp(x).data))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_softmax_rows_property(seed):
    rng = np.random.default_rng(seed)
    x = nc.as_tensor(rng.uniform(-50, 50, size=(4, 7)))
    assert np.allclose(ops.softmax(x).data.sum(axis=-1), 1.0, atol=1e-6)


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = nc.param(np.array([1.0, -2.0, 3.0]))
        state = nc.AdamState()
        before = p.data.copy()
        nc.adam_step([p], [np.zeros(3, dtype=p.data.dtype)], state, lr=0.1)
        assert np.array_equal(p.data, before)
        assert state.step == 1

    def test_first_step_moves_by_lr(self):
        # m=0.1, v=0.02; bias-corrected both become 1 -> update = lr
        p = nc.param(np.array([1.0]))
        state = nc.AdamState(beta1=0.9, beta2=0.98, eps=1e-9)
        nc.adam_step([p], [np.ones(1, dtype=p.data.dtype)], state, lr=0.1)
        assert abs(p.data[0] - 0.9) < 1e-6

    def test_constant_gradient_strictly_decreasing(self):
        p = nc.param(np.array([1.0]))
        state = nc.AdamState()
        vals = [p.data[0]]
        for _ in range(2):
            nc.adam_step([p], [np.ones(1, dtype=p.data.dtype)], state, lr=0.1)
            vals.append(p.data[0])
        assert vals[0] > vals[1] > vals[2]

    def test_shape_mismatch_raises(self):
        p = nc.param(np.zeros(3))
        with pytest.raises(nc.ShapeError):
            nc.adam_step([p], [np.zeros(4, dtype=p.data.dtype)], nc.AdamState(), 0.1)

    def test_nonfinite_gradient_rejected(self):
        p = nc.param(np.zeros(2))
        before = p.data.copy()
        state = nc.AdamState()
        with pytest.raises(nc.NonFiniteGradientError):
            nc.adam_step([p], [np.array([1.0, np.nan])], state, 0.1)
        assert np.array_equal(p.data, before)
        assert state.step == 0


class TestSchedule:
    def test_peak_reached_at_warmup_end(self):
        s = nc.LrSchedule(peak_lr=1e-3, final_lr=1e-5, warmup_steps=20000, total_steps=100000)
        assert nc.schedule_lr(s, 20000) == pytest.approx(1e-3)

    def test_linear_ramp_midpoint(self):
        s = nc.LrSchedule(peak_lr=5e-4, final_lr=5e-6, warmup_steps=5000, total_steps=250000)
        assert nc.schedule_lr(s, 2500) == pytest.approx(2.5e-4)

    def test_final_lr_at_total_steps(self):
        s = nc.LrSchedule(peak_lr=5e-4, final_lr=5e-6, warmup_steps=5000, total_steps=250000)
        assert nc.schedule_lr(s, 250000) == pytest.approx(5e-6)
        assert nc.schedule_lr(s, 400000) == pytest.approx(5e-6)

    @given(st.integers(0, 300000))
    @settings(max_examples=100, deadline=None)
    def test_continuous_and_nonincreasing_after_warmup(self, step):
        s = nc.LrSchedule(peak_lr=5e-4, final_lr=5e-6, warmup_steps=5000, total_steps=250000)
        lr = nc.schedule_lr(s, step)
        assert 0 <= lr <= s.peak_lr
        if step >= s.warmup_steps:
            assert nc.schedule_lr(s, step + 1) <= lr + 1e-15

    def test_invalid_schedule_rejected(self):
        with pytest.raises(ValueError):
            nc.LrSchedule(peak_lr=1e-3, final_lr=1e-5, warmup_steps=10, total_steps=10)
        with pytest.raises(ValueError):
            nc.LrSchedule(peak_lr=1e-5, final_lr=1e-3, warmup_steps=10, total_steps=20)


def test_clip_grad_norm():
    g = [np.array([3.0, 4.0])]
    total = nc.clip_grad_norm(g, 1.0)
    assert total == pytest.approx(5.0)
    assert np.allclose(g[0], [0.6, 0.8])


def test_rng_splitting_deterministic_and_independent():
    a1 = nc.generator(7, "mask", 10).random(5)
    a2 = nc.generator(7, "mask", 10).random(5)
    b = nc.generator(7, "mask", 11).random(5)
    c = nc.generator(7, "sampler", 10).random(5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_no_grad_blocks_tape():
    x = nc.param(np.ones(3))
    with nc.no_grad():
        y = (x * 2.0).sum()
    assert y._backward is None and not y.requires_grad
