import numpy as np
import pytest

from unn_csi.decoder import forward, generate_seed, init_params
from unn_csi.fitting import (
    FitConfig,
    FitDivergedError,
    fit,
    gradient,
    loss,
    report_summary,
    trace_to_csv,
)

from conftest import gradcheck_point, make_spec
from oracles import loop_forward, loop_mse

GRADCHECK_CONFIGS = {
    "3way-ups-all": make_spec((2, 3), (3, 4, 4, 4, 2), 2, 1, ((True, True), (True, True)), seed=42),
    "3way-ups-partial": make_spec((2, 3), (3, 4, 4, 4, 2), 2, 1, ((True, False), (False, True)), seed=43),
    "3way-no-ups": make_spec((3, 3), (3, 4, 4, 2), 1, 1, ((False, False),), seed=44),
    "3way-2preout": make_spec((2, 2), (3, 4, 4, 4, 4, 2), 1, 3, ((True, True),), seed=45),
    "4way-ups-TTF": make_spec((2, 2, 3), (3, 4, 4, 4, 2), 2, 1, ((True, True, False),) * 2, seed=46),
    "4way-ups-TFT": make_spec((2, 3, 2), (3, 4, 4, 2), 1, 1, ((True, False, True),), seed=47),
    "4way-all-on": make_spec((2, 2, 2), (2, 3, 3, 3, 2), 2, 1, ((True, True, True),) * 2, seed=48),
}


def central_difference_check(spec, params, z0, target, h=1e-3, loss_fn=None):
    """Worst per-coordinate relative error between reverse-mode gradients and
    64-bit central finite differences of the loss."""
    if loss_fn is None:
        loss_fn = lambda: loss(spec, params, z0, target, dtype=np.float64)
    grads = gradient(spec, params, z0, target, dtype=np.float64)
    worst = 0.0
    for arr, garr in zip(params.arrays(), grads.arrays()):
        flat = arr.ravel()
        gflat = np.asarray(garr).ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8))
    return worst


class TestLoss:
    def test_zero_at_exact_target(self, tiny_spec):
        params = init_params(tiny_spec, 1, dtype=np.float64)
        target = forward(tiny_spec, params, dtype=np.float64)
        assert loss(tiny_spec, params, None, target, dtype=np.float64) == 0.0

    def test_constant_half_target(self, tiny_spec):
        params = init_params(tiny_spec, 1)
        for w in params.kernels:
            w[:] = 0.0
        target = np.full(tiny_spec.output_dims, 0.5, dtype=np.float32)
        assert loss(tiny_spec, params, None, target) == pytest.approx(0.25, abs=1e-9)

    def test_matches_loop_oracle(self, tiny_spec):
        params = init_params(tiny_spec, 3, dtype=np.float64)
        z0 = generate_seed(tiny_spec.seed_rule, tiny_spec.seed_dims)
        rng = np.random.default_rng(0)
        target = rng.uniform(-0.5, 0.5, tiny_spec.output_dims)
        got = loss(tiny_spec, params, z0, target, dtype=np.float64)
        want = loop_mse(loop_forward(tiny_spec, params, z0), target)
        assert abs(got - want) < 1e-7 * max(want, 1e-12)

    def test_loss_equals_mse_of_forward(self, tiny_spec):
        params = init_params(tiny_spec, 4)
        rng = np.random.default_rng(1)
        target = rng.uniform(-0.5, 0.5, tiny_spec.output_dims).astype(np.float32)
        got = loss(tiny_spec, params, None, target)
        y = forward(tiny_spec, params)
        assert got == float(np.mean((y - target) ** 2, dtype=np.float64))

    def test_shape_mismatch(self, tiny_spec):
        with pytest.raises(ValueError):
            loss(tiny_spec, init_params(tiny_spec, 1), None, np.zeros((2, 2, 2)))


class TestGradient:
    def test_zero_gradient_at_optimum(self, tiny_spec):
        params = init_params(tiny_spec, 1, dtype=np.float64)
        target = forward(tiny_spec, params, dtype=np.float64)
        grads = gradient(tiny_spec, params, None, target)
        for g in grads.arrays():
            assert np.array_equal(np.asarray(g), np.zeros_like(g))

    @pytest.mark.parametrize("name", sorted(GRADCHECK_CONFIGS))
    def test_matches_central_differences(self, name):
        spec = GRADCHECK_CONFIGS[name]
        params, z0 = gradcheck_point(spec, seed=1)
        rng = np.random.default_rng(77)
        target = rng.uniform(-0.8, 0.8, spec.output_dims)
        worst = central_difference_check(spec, params, z0, target, h=1e-3)
        assert worst < 1e-4, f"{name}: worst relative error {worst:.2e}"

    def test_matches_oracle_finite_differences_at_random_point(self):
        # independent straight-loop forward differentiated numerically at a
        # random (mixed-sign) point; small h keeps clear of ReLU kinks
        spec = make_spec((2, 2), (2, 2, 1), 1, 0, ((False, True),), seed=5)
        z0 = generate_seed(spec.seed_rule, spec.seed_dims)
        params = init_params(spec, 9, dtype=np.float64)
        rng = np.random.default_rng(3)
        target = rng.uniform(-0.5, 0.5, spec.output_dims)

        def oracle_loss():
            return loop_mse(loop_forward(spec, params, z0), target)

        worst = central_difference_check(spec, params, z0, target, h=1e-6, loss_fn=oracle_loss)
        assert worst < 1e-6

    def test_dead_kernel_column_gets_zero_gradient(self):
        spec = make_spec((2, 3), (3, 4, 4, 2), 1, 1, ((True, True),), seed=6)
        params = init_params(spec, 2, dtype=np.float64)
        z0 = np.abs(generate_seed(spec.seed_rule, spec.seed_dims)) + 0.1
        params.kernels[0][:, 1] = -1.0  # all pre-activations of filter 1 negative
        rng = np.random.default_rng(4)
        target = rng.uniform(-0.5, 0.5, spec.output_dims)
        grads = gradient(spec, params, z0, target)
        assert np.array_equal(grads.kernels[0][:, 1], np.zeros(3))
        assert grads.gammas[0][1] == 0.0


class TestFit:
    def test_single_step_bounded_by_learning_rate(self, tiny_spec):
        lr = 5e-3
        cfg = FitConfig(iterations=1, learning_rate=lr, trace_every=1, init_seed=1)
        init = init_params(tiny_spec, 1)
        rng = np.random.default_rng(5)
        target = rng.uniform(-0.5, 0.5, tiny_spec.output_dims).astype(np.float32)
        report = fit(tiny_spec, None, target, cfg, init=init)
        # analytic Adam bound is |step| < lr; the slack absorbs float32
        # rounding of the parameter subtraction
        for before, after in zip(init.arrays(), report.params.arrays()):
            assert np.abs(np.asarray(after) - np.asarray(before)).max() <= lr * (1 + 1e-4)

    def test_deterministic(self, tiny_spec):
        rng = np.random.default_rng(6)
        target = rng.uniform(-0.5, 0.5, tiny_spec.output_dims).astype(np.float32)
        cfg = FitConfig(iterations=50, learning_rate=5e-3, trace_every=10, init_seed=3)
        a = fit(tiny_spec, None, target, cfg)
        b = fit(tiny_spec, None, target, cfg)
        assert a.trace == b.trace
        for wa, wb in zip(a.params.arrays(), b.params.arrays()):
            assert np.array_equal(np.asarray(wa), np.asarray(wb))

    def test_trace_ends_with_final_mse(self, tiny_spec):
        rng = np.random.default_rng(7)
        target = rng.uniform(-0.5, 0.5, tiny_spec.output_dims).astype(np.float32)
        cfg = FitConfig(iterations=30, learning_rate=5e-3, trace_every=7, init_seed=1)
        report = fit(tiny_spec, None, target, cfg)
        assert report.trace[-1] == (30, report.final_mse)
        assert all(np.isfinite(m) for _, m in report.trace)
        assert report.trace[0][0] == 0

    def test_loss_decreases_on_noiseless_target(self, tiny_spec):
        params = init_params(tiny_spec, 99, dtype=np.float32)
        target = forward(tiny_spec, params)
        cfg = FitConfig(iterations=300, learning_rate=5e-3, trace_every=100, init_seed=1)
        report = fit(tiny_spec, None, target, cfg)
        assert report.final_mse < report.trace[0][1] * 0.1

    def test_divergence_guard(self, tiny_spec):
        # tanh and batch norm bound the loss, so blow-up shows as non-finite
        # values once float32 overflows; the guard must abort, not loop on
        rng = np.random.default_rng(8)
        target = rng.uniform(-0.5, 0.5, tiny_spec.output_dims).astype(np.float32)
        cfg = FitConfig(iterations=100, learning_rate=1e18, trace_every=50, init_seed=1)
        with np.errstate(all="ignore"), pytest.raises(FitDivergedError):
            fit(tiny_spec, None, target, cfg)

    def test_explicit_init_is_copied(self, tiny_spec):
        init = init_params(tiny_spec, 1)
        snapshot = [np.asarray(a).copy() for a in init.arrays()]
        rng = np.random.default_rng(9)
        target = rng.uniform(-0.5, 0.5, tiny_spec.output_dims).astype(np.float32)
        fit(tiny_spec, None, target, FitConfig(iterations=5, trace_every=1), init=init)
        for a, s in zip(init.arrays(), snapshot):
            assert np.array_equal(np.asarray(a), s)

    def test_trace_csv_export(self, tiny_spec, tmp_path):
        rng = np.random.default_rng(10)
        target = rng.uniform(-0.5, 0.5, tiny_spec.output_dims).astype(np.float32)
        report = fit(tiny_spec, None, target, FitConfig(iterations=10, trace_every=5))
        path = tmp_path / "trace.csv"
        trace_to_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,mse"
        assert len(lines) == len(report.trace) + 1
        summary = report_summary(report)
        assert summary["iterations"] == 10

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FitConfig(iterations=0)
        with pytest.raises(ValueError):
            FitConfig(iterations=1, betas=(1.0, 0.999))
        with pytest.raises(ValueError):
            FitConfig(iterations=1, learning_rate=0.0)


@pytest.mark.slow
class TestDeskConvergence:
    def test_noiseless_desk_fit_reaches_threshold(self):
        # 16x16 spatial, 4 antennas, hidden width 32, L=5, 3000 iterations:
        # the pinned convergence bar is 1e-3 of the target mean square
        from unn_csi.channel import load_scene, preprocess, synthesize
        from importlib import resources

        scene = load_scene(str(resources.files("unn_csi").joinpath("scenes/street_canyon_desk.json")))
        spec = make_spec((2, 2), (32,) * 5 + (8,), 3, 1, ((True, True),) * 3, seed=20260810, a=0.15)
        target = preprocess(synthesize(scene, 3))
        cfg = FitConfig(iterations=3000, learning_rate=2e-3, trace_every=500, init_seed=1)
        report = fit(spec, None, target, cfg)
        assert report.final_mse <= 1e-3 * float(np.mean(target.data**2))
