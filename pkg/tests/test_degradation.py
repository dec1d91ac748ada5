"""Deterministic degradation operator, noise schedule, xor targets."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfcdm.degradation import (
    NoiseSchedule,
    PerturbationDraw,
    PerturbationParams,
    apply_target,
    forward_sample,
    make_schedule,
    perturb,
    perturbation_target,
    ussd,
)
from surfcdm.errors import (
    ConfigMismatchError,
    InvalidScaleError,
    InvalidScheduleError,
    LengthMismatchError,
)
from surfcdm.polar import (
    KIND_MASK,
    KIND_PERTURBATION,
    Centroid,
    PolarGridConfig,
    PolarRaster,
    Surface,
    surface_to_polar_mask,
)


class TestSchedule:
    def test_default_endpoints_exact(self):
        sched = make_schedule(0.1, 1.0, 10)
        assert sched.sigma(1) == 0.1
        assert sched.sigma(10) == 1.0
        assert sched.n == 10

    def test_second_step_closed_form(self):
        # sigma_2 = 0.1 * 10**(1/9), frozen from the geometric definition
        sched = make_schedule(0.1, 1.0, 10)
        assert sched.sigma(2) == pytest.approx(0.12915496650148839, rel=1e-12)

    def test_constant_ratio(self):
        sched = make_schedule(0.1, 1.0, 10)
        ratios = sched.sigmas[1:] / sched.sigmas[:-1]
        assert np.allclose(ratios, ratios[0], rtol=1e-12)

    def test_strictly_increasing(self):
        sched = make_schedule(0.05, 2.0, 25)
        assert np.all(np.diff(sched.sigmas) > 0)

    def test_index_bounds(self):
        sched = make_schedule(0.1, 1.0, 10)
        with pytest.raises(InvalidScheduleError):
            sched.sigma(0)
        with pytest.raises(InvalidScheduleError):
            sched.sigma(11)

    def test_bad_parameters(self):
        with pytest.raises(InvalidScheduleError):
            make_schedule(0.0, 1.0, 10)
        with pytest.raises(InvalidScheduleError):
            make_schedule(1.0, 0.1, 10)
        with pytest.raises(InvalidScheduleError):
            make_schedule(0.1, 1.0, 1)


class TestPerturb:
    def test_hand_computed_example(self):
        # S = [10, 20, 30, 40], X=4, L=50; rotation fraction 0.25, vertical 0.2;
        # sigma=0.6, both magnitudes 1.0, both signs +:
        # shift = rint(0.6 * 0.25 * 4) = 1 column, dv = 0.6 * 0.2 * 50 = 6
        s = Surface(np.array([10.0, 20.0, 30.0, 40.0]), 50)
        params = PerturbationParams(max_vertical_fraction=0.2, max_rotation_fraction=0.25)
        draw = PerturbationDraw(1, 1, 1.0, 1.0)
        out = perturb(s, 0.6, params, draw)
        assert np.allclose(out.values, [46.0, 16.0, 26.0, 36.0])

    def test_negative_signs(self):
        s = Surface(np.array([10.0, 20.0, 30.0, 40.0]), 50)
        params = PerturbationParams(max_vertical_fraction=0.2, max_rotation_fraction=0.25)
        draw = PerturbationDraw(-1, -1, 1.0, 1.0)
        out = perturb(s, 0.6, params, draw)
        assert np.allclose(out.values, [14.0, 24.0, 34.0, 4.0])

    def test_clamps_to_range(self):
        s = Surface(np.array([1.0, 48.0]), 50)
        params = PerturbationParams(max_vertical_fraction=0.5, max_rotation_fraction=0.125)
        up = perturb(s, 1.0, params, PerturbationDraw(1, 1, 1.0, 0.0))
        down = perturb(s, 1.0, params, PerturbationDraw(-1, 1, 1.0, 0.0))
        assert up.values.max() <= 49.0
        assert down.values.min() >= 0.0

    def test_pure_and_input_untouched(self):
        vals = np.array([10.0, 20.0, 30.0])
        s = Surface(vals.copy(), 40)
        params = PerturbationParams()
        draw = PerturbationDraw(1, -1, 0.7, 0.9)
        a = perturb(s, 0.5, params, draw)
        b = perturb(s, 0.5, params, draw)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(s.values, vals)

    def test_sigma_must_be_positive(self):
        s = Surface(np.array([10.0, 20.0]), 40)
        with pytest.raises(InvalidScaleError):
            perturb(s, 0.0, PerturbationParams(), PerturbationDraw(1, 1, 1.0, 1.0))

    def test_params_validation(self):
        with pytest.raises(InvalidScaleError):
            PerturbationParams(max_vertical_fraction=0.0).validate()
        with pytest.raises(InvalidScaleError):
            PerturbationParams(band=(0.0, 1.0)).validate()
        with pytest.raises(InvalidScaleError):
            PerturbationParams(band=(0.9, 0.4)).validate()

    @given(st.floats(0.05, 0.5), st.floats(0.55, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_vertical_only_distance_monotone(self, sig_lo, sig_hi):
        # pure vertical shifts move every column further as sigma grows,
        # even with clamping at the range edges
        s = Surface(np.linspace(5.0, 45.0, 16), 50)
        params = PerturbationParams(max_vertical_fraction=0.4, max_rotation_fraction=0.1)
        draw = PerturbationDraw(1, 1, 1.0, 0.0)
        d_lo = ussd(perturb(s, sig_lo, params, draw), s)
        d_hi = ussd(perturb(s, sig_hi, params, draw), s)
        assert d_hi >= d_lo

    def test_draw_sampling_band(self):
        rng = np.random.default_rng(0)
        params = PerturbationParams(band=(0.5, 1.0))
        draws = [PerturbationDraw.sample(rng, params) for _ in range(200)]
        mags = [d.vertical_magnitude for d in draws] + [d.rotation_magnitude for d in draws]
        assert min(mags) >= 0.5 and max(mags) <= 1.0
        assert {d.vertical_sign for d in draws} == {-1, 1}
        assert {d.rotation_sign for d in draws} == {-1, 1}


class TestUssd:
    def test_zero_iff_equal(self):
        a = Surface(np.array([3.0, 4.0, 5.0]), 10)
        assert ussd(a, a) == 0.0

    def test_hand_value_and_symmetry(self):
        a = Surface(np.array([1.0, 2.0, 3.0]), 10)
        b = Surface(np.array([2.0, 0.0, 6.0]), 10)
        assert ussd(a, b) == pytest.approx((1 + 2 + 3) / 3)
        assert ussd(a, b) == ussd(b, a)

    def test_length_mismatch(self):
        a = Surface(np.array([1.0, 2.0]), 10)
        b = Surface(np.array([1.0, 2.0, 3.0]), 10)
        with pytest.raises(LengthMismatchError):
            ussd(a, b)


def _grid(x=16, length=20):
    return PolarGridConfig(x, length, 1.0, Centroid(0.0, 0.0))


class TestXorTargets:
    def test_xor_truth_table(self):
        cfg = _grid(4, 2)
        a = PolarRaster(cfg, KIND_MASK, np.array([[0, 0], [0, 1], [1, 0], [1, 1]], np.uint8))
        b = PolarRaster(cfg, KIND_MASK, np.array([[0, 1], [0, 0], [1, 1], [1, 0]], np.uint8))
        t = perturbation_target(a, b)
        assert t.kind == KIND_PERTURBATION
        assert np.array_equal(t.values, [[0, 1], [0, 1], [0, 1], [0, 1]])

    def test_involution_recovers_mask(self):
        rng = np.random.default_rng(7)
        cfg = _grid()
        a = PolarRaster(cfg, KIND_MASK, (rng.random((16, 20)) < 0.5).astype(np.uint8))
        b = PolarRaster(cfg, KIND_MASK, (rng.random((16, 20)) < 0.5).astype(np.uint8))
        t = perturbation_target(a, b)
        assert np.array_equal(apply_target(b, t).values, a.values)
        assert np.array_equal(apply_target(a, t).values, b.values)

    def test_self_target_is_empty(self):
        cfg = _grid()
        a = PolarRaster(cfg, KIND_MASK, np.ones((16, 20), np.uint8))
        assert perturbation_target(a, a).values.sum() == 0

    def test_grid_mismatch_rejected(self):
        a = PolarRaster(_grid(), KIND_MASK, np.zeros((16, 20), np.uint8))
        other = PolarGridConfig(16, 20, 2.0, Centroid(0.0, 0.0))
        b = PolarRaster(other, KIND_MASK, np.zeros((16, 20), np.uint8))
        with pytest.raises(ConfigMismatchError):
            perturbation_target(a, b)


class TestForwardSample:
    def test_deterministic_in_seed(self):
        s = Surface(np.linspace(5, 15, 32), 20)
        cfg = _grid(32, 20)
        sched = make_schedule(0.1, 1.0, 10)
        a = forward_sample(s, cfg, sched, 6, PerturbationParams(), seed=42)
        b = forward_sample(s, cfg, sched, 6, PerturbationParams(), seed=42)
        assert np.array_equal(a[0].values, b[0].values)
        assert np.array_equal(a[1].values, b[1].values)
        assert a[2] == b[2] == sched.sigma(6)

    def test_target_is_xor_of_masks(self):
        s = Surface(np.linspace(5, 15, 32), 20)
        cfg = _grid(32, 20)
        sched = make_schedule(0.1, 1.0, 10)
        perturbed, target, _ = forward_sample(s, cfg, sched, 9, PerturbationParams(), seed=3)
        clean_mask = surface_to_polar_mask(s, cfg)
        expected = np.bitwise_xor(clean_mask.values, perturbed.values)
        assert np.array_equal(target.values, expected)

    def test_correction_restores_clean_mask(self):
        s = Surface(np.linspace(5, 15, 32), 20)
        cfg = _grid(32, 20)
        sched = make_schedule(0.1, 1.0, 10)
        perturbed, target, _ = forward_sample(s, cfg, sched, 10, PerturbationParams(), seed=8)
        fixed = apply_target(perturbed, target)
        assert np.array_equal(fixed.values, surface_to_polar_mask(s, cfg).values)

    def test_different_steps_scale_displacement(self):
        s = Surface(np.full(64, 25.0), 50)
        cfg = _grid(64, 50)
        sched = make_schedule(0.1, 1.0, 10)
        areas = []
        for i in (1, 5, 10):
            _, target, _ = forward_sample(s, cfg, sched, i, PerturbationParams(), seed=11)
            areas.append(target.values.sum())
        assert areas[0] < areas[1] < areas[2]


class TestScheduleType:
    def test_schedule_is_value_object(self):
        sched = NoiseSchedule(np.array([0.1, 0.5, 1.0]))
        assert sched.n == 3
        assert sched.sigma_max == 1.0
