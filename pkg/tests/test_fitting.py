import json

import numpy as np
import pytest

from sivcav.cqed import cooperativity_from_linewidths
from sivcav.errors import FitError, InvalidParameterError
from sivcav.fitting import (
    CPT_DIP,
    EXP_DECAY,
    EXP_RECOVERY,
    LINEAR,
    LORENTZIAN,
    MODELS,
    SATURATION,
    Spectrum,
    confidence_band,
    fit_cpt_dip,
    fit_exponential,
    fit_lorentzian,
    fit_saturation,
    lm_fit,
)


def fd_jacobian(model, x, p, rel=1e-7):
    """Central finite differences, the independent check of analytic Jacobians."""
    p = np.asarray(p, dtype=float)
    out = np.zeros((len(x), len(p)))
    for k in range(len(p)):
        h = rel * max(abs(p[k]), 1e-6)
        pp, pm = p.copy(), p.copy()
        pp[k] += h
        pm[k] -= h
        out[:, k] = (model.func(x, pp) - model.func(x, pm)) / (2 * h)
    return out


MODEL_POINTS = {
    "lorentzian": (np.linspace(-5, 5, 40), [0.3, 1.7, 2.2, 0.4]),
    "exponential_decay": (np.linspace(0, 5, 40), [2.0, 1.3, 0.5]),
    "exponential_recovery": (np.linspace(0, 5, 40), [1.5, 0.8, 3.0]),
    "saturation": (np.linspace(0.2, 8, 40), [1.4, 1.1]),
    "cpt_dip": (np.linspace(-5, 5, 40), [0.2, 1.1, 0.8, 2.0]),
    "linear": (np.linspace(-3, 3, 40), [1.2, -0.4]),
}


class TestJacobians:
    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_analytic_matches_finite_differences(self, name):
        model = MODELS[name]
        x, p0 = MODEL_POINTS[name]
        rng = np.random.default_rng(hash(name) % 2 ** 32)
        for _ in range(5):
            p = np.array(p0) * rng.uniform(0.5, 1.5, len(p0))
            analytic = model.jac(x, p)
            numeric = fd_jacobian(model, x, p)
            scale = np.max(np.abs(analytic)) + 1e-12
            assert np.max(np.abs(analytic - numeric)) < 1e-6 * scale


class TestLmCore:
    def test_exact_start_converges_immediately(self):
        x = np.linspace(-5, 5, 50)
        p_true = np.array([0.3, 1.7, 2.2, 0.4])
        spec = Spectrum(x, LORENTZIAN.func(x, p_true))
        result = lm_fit(LORENTZIAN, spec, p0=p_true)
        assert result.converged
        assert result.n_iterations <= 2
        assert result.residual_norm < 1e-10

    def test_linear_matches_closed_form(self):
        rng = np.random.default_rng(1)
        x = np.linspace(0, 10, 60)
        y = 2.5 * x - 1.2 + rng.normal(0, 0.3, len(x))
        result = lm_fit(LINEAR, Spectrum(x, y))
        design = np.vstack([x, np.ones_like(x)]).T
        ols, *_ = np.linalg.lstsq(design, y, rcond=None)
        assert result["slope"] == pytest.approx(ols[0], abs=1e-10)
        assert result["intercept"] == pytest.approx(ols[1], abs=1e-10)

    def test_residual_never_worse_than_start(self):
        x = np.linspace(-3, 3, 80)
        y = LORENTZIAN.func(x, [0.1, 0.9, 1.5, 0.2])
        p0 = np.array([0.5, 2.0, 1.0, 0.0])
        start_residual = np.linalg.norm(y - LORENTZIAN.func(x, p0))
        result = lm_fit(LORENTZIAN, Spectrum(x, y), p0=p0)
        assert result.residual_norm <= start_residual

    def test_too_few_points_rejected(self):
        with pytest.raises(FitError):
            lm_fit(LORENTZIAN, Spectrum(np.array([0.0, 1.0, 2.0]),
                                        np.array([1.0, 2.0, 1.0])))

    def test_bounds_respected(self):
        x = np.linspace(-3, 3, 40)
        y = LORENTZIAN.func(x, [0.0, 1.0, 1.0, 0.0])
        result = lm_fit(LORENTZIAN, Spectrum(x, y),
                        p0=np.array([0.2, 1.5, 0.8, 0.1]),
                        bounds=(np.array([-1, 0.5, 0, -1]),
                                np.array([1, 2.0, 2, 1])))
        assert 0.5 <= result["fwhm"] <= 2.0

    def test_result_json_round_trip(self):
        x = np.linspace(-3, 3, 40)
        result = lm_fit(LORENTZIAN, Spectrum(x, LORENTZIAN.func(x, [0, 1, 1, 0])))
        payload = json.loads(result.to_json())
        assert payload["model"] == "lorentzian"
        assert set(payload["params"]) == {"center", "fwhm", "amplitude", "offset"}
        assert {"value", "sigma"} <= set(payload["params"]["fwhm"])
        assert isinstance(payload["converged"], bool)


class TestLorentzianFit:
    def test_noiseless_recovery(self):
        x = np.linspace(406.0e12, 407.6e12, 300)
        p_true = [406.8e12, 273e9, 1.0, 0.05]
        result = fit_lorentzian(Spectrum(x, LORENTZIAN.func(x, p_true)))
        assert result.converged
        for name, truth in zip(("center", "fwhm", "amplitude", "offset"), p_true):
            tol = 1e-3 * abs(truth) if truth else 1e-6
            assert result[name] == pytest.approx(truth, abs=tol)

    def test_noisy_recovery_within_five_percent(self):
        rng = np.random.default_rng(99)
        x = np.linspace(-6, 6, 200)
        y = LORENTZIAN.func(x, [0.0, 2.0, 1.0, 0.1]) + rng.normal(0, 0.05, 200)
        result = fit_lorentzian(Spectrum(x, y))
        assert result["fwhm"] == pytest.approx(2.0, rel=0.05)

    def test_flat_spectrum_no_crash(self):
        x = np.linspace(0, 10, 50)
        result = fit_lorentzian(Spectrum(x, np.full(50, 3.0)))
        assert (not result.converged) or abs(result["amplitude"]) < 1e-6


class TestExponentialFit:
    def test_decay_closure_70ns(self):
        t = np.linspace(0, 1e-6, 300)
        y = EXP_DECAY.func(t, [5.0, 70e-9, 1.0])
        result = fit_exponential(Spectrum(t, y, x_unit="s"), kind="decay")
        assert result["timescale"] == pytest.approx(70e-9, rel=0.01)

    def test_recovery_closure_630ns(self):
        t = np.linspace(0, 4e-6, 200)
        y = EXP_RECOVERY.func(t, [2.0, 630e-9, 6.0])
        result = fit_exponential(Spectrum(t, y, x_unit="s"), kind="recovery")
        assert result["timescale"] == pytest.approx(630e-9, rel=0.01)

    def test_constant_trace_flagged(self):
        t = np.linspace(0, 1, 60)
        result = fit_exponential(Spectrum(t, np.full(60, 2.0)), kind="decay")
        assert "timescale_unidentifiable" in result.flags

    def test_kind_checked(self):
        with pytest.raises(InvalidParameterError):
            fit_exponential(Spectrum(np.arange(10.0), np.arange(10.0)),
                            kind="oscillation")


class TestSaturationFit:
    def test_noiseless_recovery(self):
        p = np.linspace(0.5, 8, 12)
        y = SATURATION.func(p, [157e6, 1.3])
        result = fit_saturation(Spectrum(p, y, x_unit="W"))
        assert result["gamma0"] == pytest.approx(157e6, rel=0.005)
        assert result["p_sat"] == pytest.approx(1.3, rel=0.005)

    def test_single_point_unidentifiable(self):
        with pytest.raises(FitError):
            fit_saturation(Spectrum(np.array([1.0]), np.array([2.0])))

    def test_chain_into_cooperativity(self):
        # on-resonance saturation data extrapolates to gamma_on = 203 MHz,
        # which against gamma0 = 157 MHz gives the measured cooperativity
        p = np.linspace(0.3, 6, 10)
        y = SATURATION.func(p, [203e6, 0.9])
        fit = fit_saturation(Spectrum(p, y, x_unit="W"))
        c, ok = cooperativity_from_linewidths(fit["gamma0"], 157e6, 0.0, 273e9)
        assert ok
        assert c == pytest.approx(0.293, abs=0.005)


class TestCptDipFit:
    def test_synthetic_dip_recovery(self):
        x = np.linspace(-12e6, 12e6, 201)
        y = CPT_DIP.func(x, [0.0, 3.3e6, 0.6, 1.0])
        result, band = fit_cpt_dip(Spectrum(x, y))
        assert result["dip_fwhm"] == pytest.approx(3.3e6, rel=0.02)

    def test_zero_depth_flagged(self):
        x = np.linspace(-5e6, 5e6, 101)
        result, _ = fit_cpt_dip(Spectrum(x, np.full(101, 4.0)))
        assert "width_unidentifiable" in result.flags

    def test_band_covers_noiseless_model(self):
        rng = np.random.default_rng(5)
        x = np.linspace(-12e6, 12e6, 201)
        p_true = [0.0, 3.3e6, 0.6, 1.0]
        clean = CPT_DIP.func(x, p_true)
        noisy = clean + rng.normal(0, 0.01, len(x))
        result, band = fit_cpt_dip(Spectrum(x, noisy))
        lo, hi = band(x)
        inside = np.mean((clean >= lo) & (clean <= hi))
        assert inside >= 0.99


class TestFitProperties:
    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_generate_fit_regenerate_closure(self, name):
        model = MODELS[name]
        x, p_true = MODEL_POINTS[name]
        y = model.func(x, np.array(p_true))
        result = lm_fit(model, Spectrum(x, y), p0=np.array(p_true) * 1.15)
        regen = model.func(x, result.params)
        assert np.max(np.abs(regen - y)) < 1e-6 * (np.max(np.abs(y)) + 1e-12)

    def test_reparameterization_shift_invariance(self):
        x = np.linspace(-6, 6, 150)
        y = LORENTZIAN.func(x, [0.7, 1.9, 1.2, 0.2])
        r1 = fit_lorentzian(Spectrum(x, y))
        shift = 123.456
        r2 = fit_lorentzian(Spectrum(x + shift, y))
        assert r2["center"] - r1["center"] == pytest.approx(shift, rel=1e-9)
        assert r2["fwhm"] == pytest.approx(r1["fwhm"], rel=1e-9)

    def test_sigma_scaling_with_sample_size(self):
        # quadrupling n halves the standard errors (within 20%)
        def run(n, seed):
            rng = np.random.default_rng(seed)
            x = np.linspace(-6, 6, n)
            y = LORENTZIAN.func(x, [0.0, 2.0, 1.0, 0.1]) + rng.normal(0, 0.03, n)
            return fit_lorentzian(Spectrum(x, y))

        small = [run(100, s).sigma_of("fwhm") for s in range(8)]
        large = [run(400, s + 100).sigma_of("fwhm") for s in range(8)]
        ratio = np.mean(small) / np.mean(large)
        assert ratio == pytest.approx(2.0, rel=0.2)

    def test_weighted_fit_uses_sigma(self):
        x = np.linspace(-5, 5, 80)
        y = LORENTZIAN.func(x, [0.0, 2.0, 1.0, 0.0])
        sigma = np.full(80, 0.05)
        result = lm_fit(LORENTZIAN, Spectrum(x, y, sigma=sigma))
        assert result.converged


class TestSpectrumValidation:
    def test_monotone_required(self):
        with pytest.raises(InvalidParameterError):
            Spectrum(np.array([0.0, 2.0, 1.0]), np.zeros(3))

    def test_length_mismatch(self):
        with pytest.raises(InvalidParameterError):
            Spectrum(np.arange(4.0), np.arange(3.0))

    def test_finite_required(self):
        with pytest.raises(InvalidParameterError):
            Spectrum(np.arange(3.0), np.array([0.0, np.nan, 1.0]))

    def test_sigma_positive(self):
        with pytest.raises(InvalidParameterError):
            Spectrum(np.arange(3.0), np.zeros(3), sigma=np.array([1.0, 0.0, 1.0]))

    def test_descending_axis_allowed(self):
        Spectrum(np.array([3.0, 2.0, 1.0]), np.zeros(3))


class TestConfidenceBand:
    def test_band_width_scales_with_sigma_level(self):
        x = np.linspace(-5, 5, 101)
        rng = np.random.default_rng(2)
        y = CPT_DIP.func(x, [0.0, 2.0, 0.5, 1.0]) + rng.normal(0, 0.01, 101)
        result, _ = fit_cpt_dip(Spectrum(x, y))
        b1 = confidence_band(CPT_DIP, result, n_sigma=1.0)
        b3 = confidence_band(CPT_DIP, result, n_sigma=3.0)
        lo1, hi1 = b1(x)
        lo3, hi3 = b3(x)
        assert np.allclose(hi3 - lo3, 3 * (hi1 - lo1), rtol=1e-9)
