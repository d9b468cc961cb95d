"""Damped least-squares estimation of every model the analysis pipeline uses.

A small Levenberg-Marquardt trust region with multiplicative damping (factor
10 up/down, initial lambda 1e-3) drives all fits; each shipped model carries
an analytic Jacobian and a deterministic initial-guess heuristic, so the
default path contains no randomness. Parameter uncertainties are 1-sigma
values from the residual-scaled covariance (J^T J)^-1; confidence bands come
from linear error propagation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError, InvalidParameterError

__all__ = [
    "Spectrum",
    "FitResult",
    "Model",
    "MODELS",
    "lm_fit",
    "fit_lorentzian",
    "fit_exponential",
    "fit_saturation",
    "fit_cpt_dip",
    "confidence_band",
]

_LAMBDA0 = 1e-3
_LAMBDA_FACTOR = 10.0
_LAMBDA_MAX = 1e12
_GRAD_RTOL = 1e-10
_MAX_ITER = 200


@dataclass(frozen=True)
class Spectrum:
    """Sampled 1-d trace. `x_unit` tags the abscissa (Hz, s or W)."""

    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None
    x_unit: str = "Hz"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise InvalidParameterError("x and y must be 1-d arrays of equal length")
        d = np.diff(x)
        if len(x) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise InvalidParameterError("x must be strictly monotone")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise InvalidParameterError("spectrum values must be finite")
        sigma = self.sigma
        if sigma is not None:
            sigma = np.asarray(sigma, dtype=float)
            if sigma.shape != x.shape or np.any(sigma <= 0):
                raise InvalidParameterError("sigma must be positive, same length as x")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class FitResult:
    model: str
    param_names: tuple
    params: np.ndarray
    sigmas: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    n_iterations: int
    flags: tuple = ()

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.param_names.index(name)])

    def sigma_of(self, name: str) -> float:
        return float(self.sigmas[self.param_names.index(name)])

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {n: {"value": float(v), "sigma": float(s)}
                       for n, v, s in zip(self.param_names, self.params, self.sigmas)},
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "n_iterations": int(self.n_iterations),
            "flags": list(self.flags),
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.as_dict(), indent=indent, sort_keys=True)


@dataclass(frozen=True)
class Model:
    """Parametric curve: y = func(x, p), with analytic Jacobian d y / d p."""

    name: str
    param_names: tuple
    func: callable
    jac: callable
    guess: callable            # Spectrum -> p0
    lower: tuple = None        # optional per-parameter bounds
    upper: tuple = None


def lm_fit(model: Model, spectrum: Spectrum, p0=None, bounds=None,
           max_iter: int = _MAX_ITER) -> FitResult:
    """Levenberg-Marquardt fit of `model` to `spectrum`.

    Damping update is multiplicative (factor 10); convergence is declared
    when the gradient norm falls below 1e-10 relative to its initial value.
    Non-convergence returns the best parameters found with converged=False.
    """
    x, y = spectrum.x, spectrum.y
    w = 1.0 / spectrum.sigma if spectrum.sigma is not None else np.ones_like(y)
    npar = len(model.param_names)
    if len(x) < npar + 1:
        raise FitError(
            f"model '{model.name}' needs at least {npar + 1} points, got {len(x)}")

    if p0 is None:
        p0 = model.guess(spectrum)
    p = np.asarray(p0, dtype=float).copy()
    if p.shape != (npar,):
        raise InvalidParameterError(f"expected {npar} initial parameters")

    if bounds is None:
        lo = np.array(model.lower, dtype=float) if model.lower is not None \
            else np.full(npar, -np.inf)
        hi = np.array(model.upper, dtype=float) if model.upper is not None \
            else np.full(npar, np.inf)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if np.any(p < lo) or np.any(p > hi):
        raise InvalidParameterError("initial parameters violate the bounds")

    def residuals(params):
        return (y - model.func(x, params)) * w

    def jacobian(params):
        return -model.jac(x, params) * w[:, None]

    r = residuals(p)
    cost = 0.5 * float(r @ r)
    jac = jacobian(p)
    if not np.all(np.isfinite(jac)):
        raise FitError(f"model '{model.name}' Jacobian is not finite at p0={p}")
    grad = jac.T @ r
    g0 = max(float(np.max(np.abs(grad))), 1e-300)
    lam = _LAMBDA0
    flags = []
    converged = float(np.max(np.abs(grad))) <= _GRAD_RTOL * g0
    it = 0
    while not converged and it < max_iter:
        it += 1
        jtj = jac.T @ jac
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(jtj + lam * np.diag(diag), -grad,
                                           rcond=None)
            p_try = np.clip(p + step, lo, hi)
            r_try = residuals(p_try)
            cost_try = 0.5 * float(r_try @ r_try)
            if np.isfinite(cost_try) and cost_try <= cost:
                p, r, cost = p_try, r_try, cost_try
                lam = max(lam / _LAMBDA_FACTOR, 1e-15)
                accepted = True
                break
            lam *= _LAMBDA_FACTOR
        if not accepted:
            flags.append("damping_exhausted")
            break
        jac = jacobian(p)
        if not np.all(np.isfinite(jac)):
            flags.append("jacobian_overflow")
            break
        grad = jac.T @ r
        converged = float(np.max(np.abs(grad))) <= _GRAD_RTOL * g0

    if converged:
        # one undamped Gauss-Newton polish step; exact for linear models
        try:
            step = np.linalg.solve(jac.T @ jac, -grad)
            p_try = np.clip(p + step, lo, hi)
            r_try = residuals(p_try)
            cost_try = 0.5 * float(r_try @ r_try)
            if np.isfinite(cost_try) and cost_try <= cost:
                p, r, cost = p_try, r_try, cost_try
                jac = jacobian(p)
        except np.linalg.LinAlgError:
            pass

    jtj = jac.T @ jac
    dof = max(len(x) - npar, 1)
    s2 = 2.0 * cost / dof
    try:
        cov = np.linalg.inv(jtj) * s2
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj) * s2
        flags.append("singular_covariance")
    sigmas = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return FitResult(
        model=model.name,
        param_names=tuple(model.param_names),
        params=p,
        sigmas=sigmas,
        covariance=cov,
        residual_norm=math.sqrt(2.0 * cost),
        converged=bool(converged),
        n_iterations=it,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# shipped models
# ---------------------------------------------------------------------------

def _lorentz(x, p):
    center, fwhm, amplitude, offset = p
    h = 0.5 * fwhm
    return amplitude * h * h / ((x - center) ** 2 + h * h) + offset


def _lorentz_jac(x, p):
    center, fwhm, amplitude, offset = p
    h = 0.5 * fwhm
    d2 = (x - center) ** 2
    den = d2 + h * h
    jac = np.empty((len(x), 4))
    jac[:, 0] = amplitude * h * h * 2.0 * (x - center) / den ** 2
    jac[:, 1] = amplitude * h * d2 / den ** 2  # d/d fwhm = (dh/dfwhm=0.5)*2h*d2/den^2
    jac[:, 2] = h * h / den
    jac[:, 3] = 1.0
    return jac


def _peak_width_guess(x, y, baseline, peak_idx):
    """Full width at half amplitude by linear scanning from the peak."""
    half = baseline + 0.5 * (y[peak_idx] - baseline)
    left = x[0]
    for i in range(peak_idx, 0, -1):
        if (y[i] - half) * (y[i - 1] - half) <= 0:
            left = x[i - 1]
            break
    right = x[-1]
    for i in range(peak_idx, len(x) - 1):
        if (y[i] - half) * (y[i + 1] - half) <= 0:
            right = x[i + 1]
            break
    width = abs(right - left)
    if width <= 0:
        width = abs(x[-1] - x[0]) / 10.0
    return width


def _lorentz_guess(spec: Spectrum):
    x, y = spec.x, spec.y
    offset = float(np.min(y))
    peak = int(np.argmax(y))
    amplitude = float(y[peak] - offset)
    fwhm = _peak_width_guess(x, y, offset, peak)
    return np.array([x[peak], fwhm, amplitude, offset])


LORENTZIAN = Model(
    name="lorentzian",
    param_names=("center", "fwhm", "amplitude", "offset"),
    func=_lorentz,
    jac=_lorentz_jac,
    guess=_lorentz_guess,
    lower=(-np.inf, 1e-300, -np.inf, -np.inf),
    upper=None,
)


def _exp_decay(t, p):
    amplitude, timescale, offset = p
    return amplitude * np.exp(-t / timescale) + offset


def _exp_decay_jac(t, p):
    amplitude, timescale, offset = p
    e = np.exp(-t / timescale)
    jac = np.empty((len(t), 3))
    jac[:, 0] = e
    jac[:, 1] = amplitude * e * t / timescale ** 2
    jac[:, 2] = 1.0
    return jac


def _exp_decay_guess(spec: Spectrum):
    t, y = spec.x, spec.y
    offset = float(np.mean(y[max(len(y) - max(len(y) // 10, 2), 1):]))
    amplitude = float(y[0] - offset)
    target = offset + amplitude / math.e
    timescale = (t[-1] - t[0]) / 3.0
    sgn = 1.0 if amplitude >= 0 else -1.0
    for i in range(1, len(t)):
        if sgn * (y[i] - target) <= 0:
            timescale = max(t[i] - t[0], (t[1] - t[0]) / 10.0)
            break
    return np.array([amplitude, timescale, offset])


EXP_DECAY = Model(
    name="exponential_decay",
    param_names=("amplitude", "timescale", "offset"),
    func=_exp_decay,
    jac=_exp_decay_jac,
    guess=_exp_decay_guess,
    lower=(-np.inf, 1e-300, -np.inf),
    upper=None,
)


def _exp_recovery(t, p):
    amplitude, timescale, offset = p
    return offset - amplitude * np.exp(-t / timescale)


def _exp_recovery_jac(t, p):
    amplitude, timescale, offset = p
    e = np.exp(-t / timescale)
    jac = np.empty((len(t), 3))
    jac[:, 0] = -e
    jac[:, 1] = -amplitude * e * t / timescale ** 2
    jac[:, 2] = 1.0
    return jac


def _exp_recovery_guess(spec: Spectrum):
    t, y = spec.x, spec.y
    offset = float(np.mean(y[max(len(y) - max(len(y) // 10, 2), 1):]))
    amplitude = float(offset - y[0])
    target = offset - amplitude / math.e
    timescale = (t[-1] - t[0]) / 3.0
    sgn = 1.0 if amplitude >= 0 else -1.0
    for i in range(1, len(t)):
        if sgn * (target - y[i]) <= 0:
            timescale = max(t[i] - t[0], (t[1] - t[0]) / 10.0)
            break
    return np.array([amplitude, timescale, offset])


EXP_RECOVERY = Model(
    name="exponential_recovery",
    param_names=("amplitude", "timescale", "offset"),
    func=_exp_recovery,
    jac=_exp_recovery_jac,
    guess=_exp_recovery_guess,
    lower=(-np.inf, 1e-300, -np.inf),
    upper=None,
)


def _saturation(power, p):
    gamma0, p_sat = p
    return gamma0 * np.sqrt(1.0 + power / p_sat)


def _saturation_jac(power, p):
    gamma0, p_sat = p
    root = np.sqrt(1.0 + power / p_sat)
    jac = np.empty((len(power), 2))
    jac[:, 0] = root
    jac[:, 1] = -gamma0 * power / (2.0 * p_sat ** 2 * root)
    return jac


def _saturation_guess(spec: Spectrum):
    power, y = spec.x, spec.y
    order = np.argsort(power)
    gamma0 = float(y[order[0]])
    if gamma0 <= 0:
        gamma0 = max(float(np.min(y)), 1e-300)
    p_hi, y_hi = power[order[-1]], y[order[-1]]
    ratio2 = (y_hi / gamma0) ** 2 - 1.0
    p_sat = p_hi / ratio2 if ratio2 > 0 else max(p_hi, 1e-300)
    return np.array([gamma0, p_sat])


SATURATION = Model(
    name="saturation",
    param_names=("gamma0", "p_sat"),
    func=_saturation,
    jac=_saturation_jac,
    guess=_saturation_guess,
    lower=(1e-300, 1e-300),
    upper=None,
)


def _cpt_dip(x, p):
    dip_center, dip_fwhm, depth, background = p
    h = 0.5 * dip_fwhm
    return background - depth * h * h / ((x - dip_center) ** 2 + h * h)


def _cpt_dip_jac(x, p):
    dip_center, dip_fwhm, depth, background = p
    h = 0.5 * dip_fwhm
    d2 = (x - dip_center) ** 2
    den = d2 + h * h
    jac = np.empty((len(x), 4))
    jac[:, 0] = -depth * h * h * 2.0 * (x - dip_center) / den ** 2
    jac[:, 1] = -depth * h * d2 / den ** 2
    jac[:, 2] = -h * h / den
    jac[:, 3] = 1.0
    return jac


def _cpt_dip_guess(spec: Spectrum):
    x, y = spec.x, spec.y
    background = float(np.max(y))
    dip = int(np.argmin(y))
    depth = float(background - y[dip])
    inverted = background - y
    fwhm = _peak_width_guess(x, inverted, 0.0, dip)
    return np.array([x[dip], fwhm, depth, background])


CPT_DIP = Model(
    name="cpt_dip",
    param_names=("dip_center", "dip_fwhm", "depth", "background"),
    func=_cpt_dip,
    jac=_cpt_dip_jac,
    guess=_cpt_dip_guess,
    lower=(-np.inf, 1e-300, -np.inf, -np.inf),
    upper=None,
)


def _linear(x, p):
    a, b = p
    return a * x + b


def _linear_jac(x, p):
    jac = np.empty((len(x), 2))
    jac[:, 0] = x
    jac[:, 1] = 1.0
    return jac


LINEAR = Model(
    name="linear",
    param_names=("slope", "intercept"),
    func=_linear,
    jac=_linear_jac,
    guess=lambda s: np.array([
        (s.y[-1] - s.y[0]) / (s.x[-1] - s.x[0]) if s.x[-1] != s.x[0] else 0.0,
        float(np.mean(s.y)),
    ]),
)


MODELS = {m.name: m for m in
          (LORENTZIAN, EXP_DECAY, EXP_RECOVERY, SATURATION, CPT_DIP, LINEAR)}


# ---------------------------------------------------------------------------
# convenience wrappers
# ---------------------------------------------------------------------------

def fit_lorentzian(spectrum: Spectrum, p0=None) -> FitResult:
    """Fit a Lorentzian peak; initial guess from peak location and half-max width."""
    return lm_fit(LORENTZIAN, spectrum, p0)


def fit_exponential(spectrum: Spectrum, kind: str = "decay", p0=None) -> FitResult:
    """Fit an exponential decay or recovery.

    A fit whose amplitude is consistent with zero (|A| < its own sigma) gets
    the 'timescale_unidentifiable' flag: a constant trace constrains no
    timescale.
    """
    if kind not in ("decay", "recovery"):
        raise InvalidParameterError("kind must be 'decay' or 'recovery'")
    model = EXP_DECAY if kind == "decay" else EXP_RECOVERY
    result = lm_fit(model, spectrum, p0)
    amp = abs(result["amplitude"])
    scale = max(abs(np.max(spectrum.y) - np.min(spectrum.y)), 1e-300)
    if amp < max(result.sigma_of("amplitude"), 1e-12 * scale):
        result = FitResult(**{**result.__dict__,
                              "flags": result.flags + ("timescale_unidentifiable",)})
    return result


def fit_saturation(spectrum: Spectrum, p0=None) -> FitResult:
    """Fit gamma(P) = gamma0*sqrt(1+P/Psat) to linewidth-vs-power data."""
    if len(spectrum.x) < 3:
        raise FitError("saturation fit needs at least 3 power points "
                       "(2 parameters are unidentifiable from fewer)")
    return lm_fit(SATURATION, spectrum, p0)


def fit_cpt_dip(spectrum: Spectrum, p0=None):
    """Fit an inverted-Lorentzian dip; returns (FitResult, 3-sigma band fn).

    The band callable maps x to (lower, upper) bounds of the prediction at
    three standard deviations, by linear propagation of the fit covariance.
    """
    result = lm_fit(CPT_DIP, spectrum, p0)
    depth = abs(result["depth"])
    span = max(abs(np.max(spectrum.y) - np.min(spectrum.y)), 1e-300)
    if depth < max(result.sigma_of("depth"), 1e-12 * span):
        result = FitResult(**{**result.__dict__,
                              "flags": result.flags + ("width_unidentifiable",)})
    band = confidence_band(CPT_DIP, result, n_sigma=3.0)
    return result, band


def confidence_band(model: Model, result: FitResult, n_sigma: float = 3.0):
    """Linear-propagation confidence band evaluator for a fitted model."""

    def band(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = model.func(x, result.params)
        jac = model.jac(x, result.params)
        var = np.einsum("ij,jk,ik->i", jac, result.covariance, jac)
        half = n_sigma * np.sqrt(np.maximum(var, 0.0))
        return y - half, y + half

    return band
