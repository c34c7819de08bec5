"""Bandpass devices, the envelope integral, diode solver, activations."""

import warnings

import numpy as np
import pytest

from emstack import nonlin


class CosineBump(nonlin.BandpassNL):
    """Even response used to probe fundamental-harmonic annihilation."""

    def __call__(self, v):
        return np.cos(3.0 * np.asarray(v))


class TestLowpassIntegral:
    def test_relu_halves_amplitude(self):
        got = nonlin.lowpass_from_bandpass(nonlin.Relu(), 2.0)
        np.testing.assert_allclose(got, 1.0, atol=1e-9)

    def test_absolute_value_silent(self):
        for v in (0.1, 1.0, 7.3):
            got = nonlin.lowpass_from_bandpass(nonlin.AbsoluteValue(), v)
            assert abs(got) < 1e-8

    def test_sign_constant_output(self):
        for v in (0.01, 1.0, 100.0):
            got = nonlin.lowpass_from_bandpass(nonlin.Sign(), v)
            np.testing.assert_allclose(got, 4 / np.pi, atol=1e-8)

    def test_even_functions_annihilated(self):
        for nl in (nonlin.AbsoluteValue(), nonlin.OddPower(2), CosineBump()):
            for v in (0.3, 1.7):
                assert abs(nonlin.lowpass_from_bandpass(nl, v)) < 1e-8

    def test_nonconvergent_integrand_reported(self):
        class Thrash(nonlin.BandpassNL):
            # deterministic pseudo-noise defeats adaptive refinement
            def __call__(self, v):
                return hash(round(float(v), 12)) % 1000 / 1000.0

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(nonlin.QuadratureError) as err:
                nonlin.lowpass_from_bandpass(Thrash(), 3.0)
        assert err.value.achieved_error > 0


class TestClosedForms:
    def test_shifted_relu_positive_shift_small_amplitude(self):
        act = nonlin.closed_form_lowpass(nonlin.ShiftedRelu(0.5))
        np.testing.assert_allclose(act.value(0.3), 0.3, rtol=1e-12)

    def test_shifted_relu_negative_shift_below_threshold(self):
        act = nonlin.closed_form_lowpass(nonlin.ShiftedRelu(-0.5))
        assert act.value(0.3) == 0.0

    def test_shifted_relu_above_threshold_formula(self):
        a, v = -0.5, 1.0
        act = nonlin.closed_form_lowpass(nonlin.ShiftedRelu(a))
        want = (v * np.arccos(-a / v) + a * np.sqrt(v ** 2 - a ** 2) / v) / np.pi
        np.testing.assert_allclose(act.value(v), want, rtol=1e-12)
        quad = nonlin.lowpass_from_bandpass(nonlin.ShiftedRelu(a), v)
        np.testing.assert_allclose(act.value(v), quad, atol=1e-8)

    @pytest.mark.parametrize(
        "nl",
        [
            nonlin.Relu(),
            nonlin.ShiftedRelu(0.4),
            nonlin.ShiftedRelu(-0.7),
            nonlin.AbsoluteValue(),
            nonlin.Sign(),
        ],
        ids=["relu", "shift+", "shift-", "abs", "sign"],
    )
    def test_catalog_matches_quadrature(self, nl):
        act = nonlin.closed_form_lowpass(nl)
        rng = np.random.default_rng(17)
        for v in rng.uniform(0.01, 2.0, 50):
            quad = nonlin.lowpass_from_bandpass(nl, v)
            np.testing.assert_allclose(act.value(v), quad, atol=1e-7)

    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_odd_power_quadrature_is_authoritative(self, n):
        nl = nonlin.OddPower(n)
        act = nonlin.closed_form_lowpass(nl)
        for v in (0.3, 0.9, 1.4):
            quad = nonlin.lowpass_from_bandpass(nl, v)
            np.testing.assert_allclose(act.value(v), quad, rtol=1e-8)

    def test_odd_power_catalog_variant_halved_at_n1(self):
        default = nonlin.closed_form_lowpass(nonlin.OddPower(1))
        catalog = nonlin.closed_form_lowpass(nonlin.OddPower(1, use_catalog_coefficient=True))
        np.testing.assert_allclose(default.value(1.0), 1.0)
        np.testing.assert_allclose(catalog.value(1.0), 0.5)

    def test_even_power_closed_form_rejected(self):
        with pytest.raises(ValueError):
            nonlin.closed_form_lowpass(nonlin.OddPower(2))

    def test_diode_has_no_closed_form(self):
        params = nonlin.DiodeCircuitParams(alpha_per_volt=33.0)
        with pytest.raises(ValueError):
            nonlin.closed_form_lowpass(nonlin.DiodeCircuit(params))


class TestShiftedReluDerivatives:
    def test_value_derivative_consistency(self):
        act = nonlin.ShiftedReluLowpass(shift=-0.4, gain=1.3)
        eps = 1e-6
        for v in (0.1, 0.5, 0.9, 2.0):
            num = (act.value(v + eps) - act.value(v - eps)) / (2 * eps)
            np.testing.assert_allclose(act.derivative(v), num, atol=1e-6)

    def test_bias_derivative_consistency(self):
        act = nonlin.ShiftedReluLowpass(shift=0.0, gain=1.0)
        eps = 1e-7
        for v, b in [(0.5, -0.2), (1.5, -0.8), (0.4, -0.5)]:
            num = (act.value(v, b + eps) - act.value(v, b - eps)) / (2 * eps)
            np.testing.assert_allclose(act.bias_derivative(v, b), num, atol=1e-5)

    def test_bias_acts_as_amplitude_threshold(self):
        act = nonlin.ShiftedReluLowpass()
        b = -0.3
        for v in (0.05, 0.15, 0.29):
            assert act.value(v, b) == 0.0
        assert act.value(0.31, b) > 0.0


class TestDiodeSolver:
    PARAMS = nonlin.DiodeCircuitParams(alpha_per_volt=33.0)

    def test_zero_input_exact_root(self):
        assert nonlin.diode_bandpass_response(self.PARAMS, 0.0) == 0.0

    def test_cutoff_saturation(self):
        ri = self.PARAMS.antenna_resistance_ohm * self.PARAMS.saturation_current_a
        u = nonlin.diode_bandpass_response(self.PARAMS, -10.0)
        np.testing.assert_allclose(u, -ri, rtol=1e-9)

    def test_bisection_oracle_half_volt(self):
        p = self.PARAMS
        ri = p.antenna_resistance_ohm * p.saturation_current_a

        def residual(u):
            return ri * np.expm1(2 * p.alpha_per_volt * (0.5 - u)) - u

        lo, hi = -ri, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if residual(mid) > 0:
                lo = mid
            else:
                hi = mid
        oracle = 0.5 * (lo + hi)
        got = nonlin.diode_bandpass_response(p, 0.5)
        np.testing.assert_allclose(got, oracle, atol=1e-10)

    def test_residual_tolerance_across_inputs(self):
        p = nonlin.DiodeCircuitParams(alpha_per_volt=56.0)
        ri = p.antenna_resistance_ohm * p.saturation_current_a
        for s in np.linspace(-2.0, 2.0, 41):
            u = nonlin.diode_bandpass_response(p, s)
            x = 2 * p.alpha_per_volt * (s - u)
            if x < 700:
                assert abs(ri * np.expm1(x) - u) <= 1e-12

    def test_vector_input_shape(self):
        s = np.array([[0.0, 0.1], [-0.5, 0.3]])
        u = nonlin.diode_bandpass_response(self.PARAMS, s)
        assert u.shape == s.shape
        assert u[0, 0] == 0.0

    def test_bias_folds_into_input(self):
        biased = nonlin.DiodeCircuitParams(alpha_per_volt=33.0, bias_volts=-0.2)
        u1 = nonlin.diode_bandpass_response(biased, 0.5)
        u2 = nonlin.diode_bandpass_response(self.PARAMS, 0.3)
        np.testing.assert_allclose(u1, u2, atol=1e-12)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            nonlin.DiodeCircuitParams(alpha_per_volt=-1.0)
        with pytest.raises(ValueError):
            nonlin.DiodeCircuitParams(alpha_per_volt=1.0, bias_volts=0.1)


class TestDiodeActivation:
    def test_zero_envelope_zero_output(self):
        for bias in (0.0, -0.4):
            p = nonlin.DiodeCircuitParams(alpha_per_volt=33.0, bias_volts=bias)
            act = nonlin.diode_activation(p, v_max=1.0, n_points=512)
            assert act.value(0.0) == 0.0

    def test_alpha_separates_curves(self):
        acts = [
            nonlin.diode_activation(
                nonlin.DiodeCircuitParams(alpha_per_volt=a), v_max=1.0, n_points=512
            )
            for a in (18.0, 33.0)
        ]
        v = 0.5
        assert abs(acts[0].value(v) - acts[1].value(v)) > 1e-3

    def test_tabulation_matches_direct_quadrature(self):
        p = nonlin.DiodeCircuitParams(alpha_per_volt=56.0)
        act = nonlin.diode_activation(p, v_max=0.05)
        dc = nonlin.DiodeCircuit(p)
        rng = np.random.default_rng(23)
        for v in rng.uniform(5e-4, 0.05, 20):
            direct = nonlin.lowpass_from_bandpass(dc, v)
            np.testing.assert_allclose(act.value(v), direct, rtol=1e-4)

    def test_monotone_on_grid(self):
        p = nonlin.DiodeCircuitParams(alpha_per_volt=33.0, bias_volts=-0.4)
        act = nonlin.diode_activation(p, v_max=1.0)
        assert np.all(np.diff(act.values) >= -1e-12 * act.values.max())

    def test_grid_floor_enforced(self):
        p = nonlin.DiodeCircuitParams(alpha_per_volt=33.0)
        with pytest.raises(ValueError):
            nonlin.diode_activation(p, v_max=1.0, n_points=64)


class TestTabulatedActivation:
    def make(self):
        grid = np.array([0.0, 1.0, 2.0, 4.0])
        values = np.array([0.0, 1.0, 1.5, 1.5])
        return nonlin.TabulatedActivation(grid, values)

    def test_interpolation_and_clamp(self):
        act = self.make()
        np.testing.assert_allclose(act.value(0.5), 0.5)
        np.testing.assert_allclose(act.value(3.0), 1.5)
        np.testing.assert_allclose(act.value(10.0), 1.5)

    def test_segment_and_knot_derivatives(self):
        act = self.make()
        np.testing.assert_allclose(act.derivative(0.5), 1.0)
        np.testing.assert_allclose(act.derivative(1.5), 0.5)
        np.testing.assert_allclose(act.derivative(1.0), 0.75)  # knot average
        np.testing.assert_allclose(act.derivative(5.0), 0.0)  # clamped top
        np.testing.assert_allclose(act.derivative(4.0), 0.0)

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            nonlin.TabulatedActivation(np.array([0.0, 0.0, 1.0]), np.zeros(3))

    def test_no_bias_support(self):
        act = self.make()
        with pytest.raises(NotImplementedError):
            act.value(1.0, bias=-0.1)
        assert act.bias_derivative(1.0) is None


class TestReluFit:
    def test_self_fit_recovers_parameters(self):
        target = nonlin.FittedRelu(gain=0.7, knee=0.33)
        fit = nonlin.fit_relu_approximation(target, (0.0, 1.0))
        np.testing.assert_allclose(fit.gain, 0.7, atol=1e-6)
        np.testing.assert_allclose(fit.knee, 0.33, atol=1e-6)
        assert fit.residual_rms < 1e-8

    def test_diode_family_fit_quality(self):
        p = nonlin.DiodeCircuitParams(alpha_per_volt=33.0, bias_volts=-0.4)
        act = nonlin.diode_activation(p, v_max=1.0)
        fit = nonlin.fit_relu_approximation(act, (0.0, 1.0))
        assert fit.knee > 0
        assert fit.residual_rms < 0.05 * act.values.max()

    def test_zero_width_range_rejected(self):
        with pytest.raises(ValueError):
            nonlin.fit_relu_approximation(nonlin.FittedRelu(1.0, 0.1), (0.5, 0.5))

    def test_zero_activation_rejected(self):
        with pytest.raises(ValueError):
            nonlin.fit_relu_approximation(nonlin.ZeroActivation(), (0.0, 1.0))


class TestApplyActivation:
    def test_relu_derived_halving(self):
        act = nonlin.closed_form_lowpass(nonlin.Relu())
        x = 2.0 * np.exp(1j * np.pi / 3)
        got = nonlin.apply_activation(act, x)
        np.testing.assert_allclose(got, np.exp(1j * np.pi / 3), rtol=1e-12)

    def test_zero_maps_to_zero(self):
        for act in (nonlin.ShiftedReluLowpass(), nonlin.ConstantAmplitude(4 / np.pi)):
            assert nonlin.apply_activation(act, 0.0) == 0.0

    @pytest.mark.parametrize(
        "act",
        [
            nonlin.ScaledLinear(0.5),
            nonlin.ShiftedReluLowpass(shift=-0.2),
            nonlin.FittedRelu(gain=0.4, knee=0.1),
            nonlin.ConstantAmplitude(1.0),
            nonlin.PowerLowpass(3, 0.75),
            nonlin.TabulatedActivation(np.linspace(0, 4, 16), np.linspace(0, 2, 16) ** 1.5),
            nonlin.ZeroActivation(),
        ],
        ids=["linear", "shifted", "fitted", "const", "power", "table", "zero"],
    )
    def test_phase_equivariance(self, act):
        rng = np.random.default_rng(31)
        for _ in range(100):
            x = rng.uniform(0.05, 2.0) * np.exp(1j * rng.uniform(0, 2 * np.pi))
            psi = rng.uniform(0, 2 * np.pi)
            lhs = nonlin.apply_activation(act, np.exp(1j * psi) * x)
            rhs = np.exp(1j * psi) * nonlin.apply_activation(act, x)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_batched_application(self):
        act = nonlin.ScaledLinear(0.5)
        x = np.array([2.0, 2j, 0.0, -4.0])
        got = nonlin.apply_activation(act, x)
        np.testing.assert_allclose(got, [1.0, 1j, 0.0, -2.0])


class TestSampling:
    def test_alpha_bounds(self):
        a = nonlin.sample_static_alphas(1000, (55.0, 57.0), np.random.default_rng(2))
        assert np.all((a >= 55.0) & (a <= 57.0))

    def test_alpha_degenerate_interval(self):
        a = nonlin.sample_static_alphas(16, (33.0, 33.0), np.random.default_rng(2))
        np.testing.assert_array_equal(a, np.full(16, 33.0))

    def test_alpha_seed_reproducibility(self):
        a1 = nonlin.sample_static_alphas(64, (55, 57), np.random.default_rng(5))
        a2 = nonlin.sample_static_alphas(64, (55, 57), np.random.default_rng(5))
        np.testing.assert_array_equal(a1, a2)

    def test_bias_init_nonpositive(self):
        b = nonlin.sample_trainable_bias_init(1000, np.random.default_rng(3))
        assert np.all(b <= 0)

    def test_bias_init_half_normal_std(self):
        b = nonlin.sample_trainable_bias_init(100_000, np.random.default_rng(4))
        want = 1e-5 * np.sqrt(1 - 2 / np.pi)
        np.testing.assert_allclose(b.std(), want, rtol=0.02)

    def test_bias_init_seed_reproducibility(self):
        b1 = nonlin.sample_trainable_bias_init(32, np.random.default_rng(6))
        b2 = nonlin.sample_trainable_bias_init(32, np.random.default_rng(6))
        np.testing.assert_array_equal(b1, b2)


class TestSerialization:
    @pytest.mark.parametrize(
        "act",
        [
            nonlin.ScaledLinear(0.5),
            nonlin.ZeroActivation(),
            nonlin.ConstantAmplitude(4 / np.pi),
            nonlin.PowerLowpass(3, 0.75),
            nonlin.ShiftedReluLowpass(shift=-0.3, gain=1.1),
            nonlin.FittedRelu(gain=0.38, knee=0.54),
            nonlin.TabulatedActivation(np.linspace(0, 1, 8), np.linspace(0, 0.5, 8)),
        ],
        ids=["linear", "zero", "const", "power", "shifted", "fitted", "table"],
    )
    def test_round_trip(self, act):
        back = nonlin.activation_from_dict(nonlin.activation_to_dict(act))
        v = np.linspace(0, 0.9, 7)
        np.testing.assert_array_equal(back.value(v), act.value(v))

    def test_table_export(self, tmp_path):
        act = nonlin.FittedRelu(gain=0.5, knee=0.2)
        path = tmp_path / "curve.csv"
        nonlin.export_activation_table(act, path, np.linspace(0, 1, 11))
        rows = np.loadtxt(path, delimiter=",", skiprows=1)
        assert rows.shape == (11, 3)
        np.testing.assert_allclose(rows[-1, 1], 0.4)  # C[1.0]
        header = path.read_text().splitlines()[0]
        assert header == "amplitude,C,dC_dv"
