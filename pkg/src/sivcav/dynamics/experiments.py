"""Forward models of the time-domain and scan experiments.

Builds small effective level systems (the 4-level spin-pumping system, the
3-level lambda system, per-emitter reduced systems for laser scans) on top of
the Lindblad engine, with parameters expressed in laboratory units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..constants import K_B_OVER_H, TWO_PI
from ..errors import FitError, InvalidParameterError
from ..fitting import Spectrum, fit_exponential
from ..siv_levels import TransitionTable
from .engine import (
    Decay,
    DensityState,
    Dephasing,
    Drive,
    Level,
    LevelSystem,
    Trace,
    evolve,
    evolve_with_final,
    final_state,
    steady_state,
)

__all__ = [
    "SpinPumpParams", "CptParams", "PleEmitter",
    "simulate_spin_pumping", "extract_initialization_fidelity",
    "simulate_t1_recovery", "simulate_cpt_scan", "simulate_ple_scan",
]


# ---------------------------------------------------------------------------
# optical spin pumping and T1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpinPumpParams:
    """Four-level spin-pumping system: |dn>, |up> ground, |dn'>, |up'> excited.

    The laser drives the spin-preserving transition |dn> -> |dn'>; each
    excited state decays at `optical_rate` in total, a fraction `eta` of it
    through the spin-flipping channel. `t1` is the ground-spin relaxation
    time toward the 50/50 thermal mixture. `background` is an additive
    detection background in the same (rate) units as the signal.
    """

    rabi_freq: float            # Hz
    optical_rate: float         # Hz; excited population decays as exp(-2 pi rate t)
    eta: float                  # spin-flip branching fraction, in [0, 1]
    t1: float                   # s
    f_s_ground: float = 6.8e9   # Hz, bookkeeping only
    f_s_excited: float = 7.0e9  # Hz, bookkeeping only
    background: float = 0.0
    pulse_length: float = 1e-6  # s
    n_pulses: int = 1
    pulse_gap: float = 1e-6     # s
    samples_per_pulse: int = 400

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidParameterError("eta must lie in [0, 1]")
        if self.rabi_freq < 0 or self.optical_rate <= 0:
            raise InvalidParameterError("rabi_freq >= 0 and optical_rate > 0 required")
        if self.t1 <= 0 or self.pulse_length <= 0 or self.pulse_gap < 0:
            raise InvalidParameterError("t1, pulse_length, pulse_gap must be positive")
        if self.n_pulses < 1 or self.samples_per_pulse < 8:
            raise InvalidParameterError("need n_pulses >= 1, samples_per_pulse >= 8")


def _spin_pump_system(p: SpinPumpParams, laser_on: bool) -> LevelSystem:
    levels = (
        Level("g_dn", 0.0),
        Level("g_up", p.f_s_ground),
        Level("e_dn", 4.068e14),
        Level("e_up", 4.068e14 + p.f_s_excited),
    )
    gam = p.optical_rate
    # per-direction ground flip rate r: polarization decays as exp(-t/t1)
    # with our exp(-2 pi rate t) convention, 2 * (2 pi r) = 1/t1
    r_t1 = 1.0 / (4.0 * math.pi * p.t1)
    decays = (
        Decay("e_dn", "g_dn", (1.0 - p.eta) * gam),
        Decay("e_dn", "g_up", p.eta * gam),
        Decay("e_up", "g_up", (1.0 - p.eta) * gam),
        Decay("e_up", "g_dn", p.eta * gam),
        Decay("g_dn", "g_up", r_t1, radiative=False),
        Decay("g_up", "g_dn", r_t1, radiative=False),
    )
    drives = (Drive("g_dn", "e_dn", p.rabi_freq, 0.0),) if laser_on else ()
    return LevelSystem(levels, drives, decays)


def thermal_ground_state(p: SpinPumpParams) -> DensityState:
    """Equal ground-sublevel populations (thermal equilibrium at 4 K)."""
    return DensityState.from_populations([0.5, 0.5, 0.0, 0.0])


def simulate_spin_pumping(p: SpinPumpParams):
    """Pulse train starting from thermal equilibrium; one Trace per pulse.

    Trace signals include the configured detection background.
    """
    sys_on = _spin_pump_system(p, laser_on=True)
    sys_off = _spin_pump_system(p, laser_on=False)
    rho = thermal_ground_state(p)
    traces = []
    t0 = 0.0
    grid = np.linspace(0.0, p.pulse_length, p.samples_per_pulse)
    for _ in range(p.n_pulses):
        tr, rho = evolve_with_final(sys_on, rho, grid)
        traces.append(Trace(tr.times + t0, tr.signal + p.background,
                            tr.populations, tr.labels))
        t0 += p.pulse_length
        if p.pulse_gap > 0:
            rho = final_state(sys_off, rho, p.pulse_gap)
            t0 += p.pulse_gap
    return traces


def extract_initialization_fidelity(trace: Trace) -> float:
    """Spin initialization fidelity F = 1 - 0.5 * (steady / peak signal).

    The peak is the early-pulse maximum (thermal 50/50 start); the steady
    level is the mean over the last tenth of the pulse. Raises FitError when
    the pulse is too short to reach a plateau (shorter than five fitted
    pumping time constants after the peak).
    """
    sig = np.asarray(trace.signal, dtype=float)
    t = np.asarray(trace.times, dtype=float)
    ipk = int(np.argmax(sig))
    s_peak = float(sig[ipk])
    if s_peak <= 0:
        raise FitError("trace has no positive signal peak")
    tail = sig[ipk:]
    t_tail = t[ipk:] - t[ipk]
    if len(tail) < 8:
        raise FitError("too few samples after the signal peak")
    fit = fit_exponential(Spectrum(t_tail, tail, x_unit="s"), kind="decay")
    if "timescale_unidentifiable" not in fit.flags:
        if t_tail[-1] < 5.0 * fit["timescale"]:
            raise FitError(
                "no plateau: pulse extends only "
                f"{t_tail[-1] / fit['timescale']:.2f} fitted time constants "
                "past the peak (need 5)")
    n_last = max(len(sig) // 10, 2)
    s_steady = float(np.mean(sig[-n_last:]))
    return 1.0 - 0.5 * (s_steady / s_peak)


def simulate_t1_recovery(p: SpinPumpParams, taus) -> Spectrum:
    """Early-pulse peak signal versus inter-pulse delay tau.

    The first pulse pumps the spin from thermal equilibrium; after a dark
    interval tau the next pulse's signal is sampled at the (fixed) time where
    the thermal-start pulse peaks. In the rate-equation limit the recovery is
    A - B*exp(-tau/t1) exactly.
    """
    taus = np.asarray(taus, dtype=float)
    if np.any(taus < 0) or not np.all(np.diff(taus) > 0):
        raise InvalidParameterError("taus must be non-negative and increasing")
    sys_on = _spin_pump_system(p, laser_on=True)
    sys_off = _spin_pump_system(p, laser_on=False)
    grid = np.linspace(0.0, p.pulse_length, p.samples_per_pulse)
    first, rho_end = evolve_with_final(sys_on, thermal_ground_state(p), grid)
    i_star = int(np.argmax(first.signal))
    t_star = max(float(first.times[i_star]), float(first.times[1]))

    probe_grid = np.linspace(0.0, t_star, 16)
    peaks = []
    for tau in taus:
        rho = rho_end if tau == 0 else final_state(sys_off, rho_end, float(tau))
        probe = evolve(sys_on, rho, probe_grid)
        peaks.append(float(probe.signal[-1]) + p.background)
    return Spectrum(taus, np.asarray(peaks), x_unit="s")


# ---------------------------------------------------------------------------
# coherent population trapping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CptParams:
    """Lambda system: two ground sublevels split by f_s, one excited level.

    `gamma_s` is the ground-pair dephasing rate in the engine convention
    (coherence decays as exp(-2 pi gamma_s t)), so a dephasing time T2* maps
    to gamma_s = 1/(2 pi T2*) and the weak-drive dark-resonance dip has FWHM
    1/(pi T2*). The optical decay branches equally to both ground states.
    """

    rabi_pump: float       # Hz
    rabi_probe: float      # Hz
    optical_rate: float    # Hz
    gamma_s: float         # Hz
    f_s: float = 6.8e9     # Hz
    t1: float | None = None   # optional ground population exchange, s
    detuning_split: str = "symmetric"  # symmetric | probe

    def __post_init__(self):
        if self.rabi_pump < 0 or self.rabi_probe < 0:
            raise InvalidParameterError("Rabi frequencies must be >= 0")
        if self.optical_rate <= 0:
            raise InvalidParameterError("optical_rate must be positive")
        if self.gamma_s < 0:
            raise InvalidParameterError("gamma_s must be >= 0")
        if self.detuning_split not in ("symmetric", "probe"):
            raise InvalidParameterError("detuning_split must be 'symmetric' or 'probe'")

    @classmethod
    def from_t2_star(cls, t2_star: float, **kwargs) -> "CptParams":
        """Build with gamma_s matching a dephasing time T2* (seconds)."""
        if t2_star <= 0:
            raise InvalidParameterError("t2_star must be positive")
        return cls(gamma_s=1.0 / (TWO_PI * t2_star), **kwargs)

    def dark_dip_fwhm(self) -> float:
        """Weak-drive dip width 1/(pi T2*) = 2*gamma_s, Hz."""
        return 2.0 * self.gamma_s


def _cpt_system(p: CptParams, delta: float) -> LevelSystem:
    if p.detuning_split == "symmetric":
        d_pump, d_probe = 0.5 * delta, -0.5 * delta
    else:
        d_pump, d_probe = 0.0, -delta
    levels = (
        Level("g1", 0.0),
        Level("g2", p.f_s),
        Level("e", 4.068e14),
    )
    drives = (
        Drive("g1", "e", p.rabi_pump, d_pump),
        Drive("g2", "e", p.rabi_probe, d_probe),
    )
    decays = [
        Decay("e", "g1", 0.5 * p.optical_rate),
        Decay("e", "g2", 0.5 * p.optical_rate),
    ]
    if p.t1 is not None:
        r = 1.0 / (4.0 * math.pi * p.t1)
        decays += [Decay("g1", "g2", r, radiative=False),
                   Decay("g2", "g1", r, radiative=False)]
    dephasings = (Dephasing("g1", "g2", p.gamma_s),) if p.gamma_s > 0 else ()
    return LevelSystem(levels, drives, tuple(decays), dephasings)


def simulate_cpt_scan(p: CptParams, detunings) -> Spectrum:
    """Steady-state fluorescence versus two-photon (Raman) detuning.

    The dark resonance sits at zero detuning; with zero ground dephasing and
    equal Rabi frequencies the fluorescence vanishes there exactly.
    """
    detunings = np.asarray(detunings, dtype=float)
    signal = np.empty_like(detunings)
    for i, delta in enumerate(detunings):
        sys_ = _cpt_system(p, float(delta))
        rho = steady_state(sys_)
        signal[i] = float(rho.populations() @ sys_.radiative_rates())
    return Spectrum(detunings, signal, x_unit="Hz")


def fit_cpt_scan_forward(spectrum: Spectrum, p_template: CptParams,
                         p0=None):
    """Fit a CPT scan with the full steady-state lambda lineshape.

    Alternative to the inverted-Lorentzian dip fit: the free parameters are
    (gamma_s, rabi, scale) with pump and probe driven equally, everything
    else taken from `p_template`. The Jacobian is finite-difference since the
    lineshape has no closed form. Returns a FitResult with those parameters.
    """
    from ..fitting import Model, lm_fit

    def forward(x, params):
        gamma_s, rabi, scale = params
        p = replace(p_template, gamma_s=float(gamma_s),
                    rabi_pump=float(rabi), rabi_probe=float(rabi))
        return scale * simulate_cpt_scan(p, x).y

    def fd_jac(x, params):
        params = np.asarray(params, dtype=float)
        out = np.zeros((len(x), len(params)))
        base = forward(x, params)
        for k in range(len(params)):
            h = 1e-4 * max(abs(params[k]), 1e-12)
            stepped = params.copy()
            stepped[k] += h
            out[:, k] = (forward(x, stepped) - base) / h
        return out

    model = Model(
        name="cpt_forward",
        param_names=("gamma_s", "rabi", "scale"),
        func=forward,
        jac=fd_jac,
        guess=lambda s: np.array([p_template.gamma_s, p_template.rabi_pump, 1.0]),
        lower=(0.0, 1e-300, 1e-300),
        upper=None,
    )
    return lm_fit(model, spectrum, p0)


# ---------------------------------------------------------------------------
# PLE scans (single laser, and pump-probe)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PleEmitter:
    """One emitter in a PLE scan: its transition table plus optical parameters.

    `linewidth` is the total optical decay rate (Hz), which is also the zero
    power Lorentzian FWHM in this convention; `rabi` is the bare probe Rabi
    frequency, scaled per transition by sqrt(dipole weight).
    """

    table: TransitionTable
    linewidth: float
    rabi: float
    temperature: float = 4.0  # K, thermal weights of the ground sublevels

    def __post_init__(self):
        if self.linewidth <= 0:
            raise InvalidParameterError("linewidth must be positive")
        if self.rabi < 0:
            raise InvalidParameterError("rabi must be >= 0")
        if self.temperature <= 0:
            raise InvalidParameterError("temperature must be positive")

    def ground_populations(self) -> dict:
        """Boltzmann weights of the distinct ground-state energies."""
        energies = sorted({t.ground_energy for t in self.table.sublevel})
        e0 = energies[0]
        weights = [math.exp(-(e - e0) / (K_B_OVER_H * self.temperature))
                   for e in energies]
        z = sum(weights)
        return {e: w / z for e, w in zip(energies, weights)}


def _two_level_excited_population(rabi_hz, detuning_hz, gamma_hz):
    """Steady excited population of a driven, radiatively damped two-level atom."""
    om = TWO_PI * rabi_hz
    de = TWO_PI * detuning_hz
    ga = TWO_PI * gamma_hz
    return 0.25 * om ** 2 / (de ** 2 + 0.5 * om ** 2 + 0.25 * ga ** 2)


def _single_laser_signal(emitter: PleEmitter, freqs: np.ndarray) -> np.ndarray:
    pops = emitter.ground_populations()
    out = np.zeros_like(freqs)
    for t in emitter.table.sublevel:
        if t.dipole_weight <= 0:
            continue
        om = emitter.rabi * math.sqrt(t.dipole_weight)
        pop = pops[t.ground_energy]
        out += pop * emitter.linewidth * _two_level_excited_population(
            om, freqs - t.frequency, emitter.linewidth)
    return out


def _lower_branch_transitions(table: TransitionTable):
    """Sublevel lines whose ground state lies in the lower orbital branch."""
    ground_energies = sorted({t.ground_energy for t in table.sublevel})
    lower = set(ground_energies[:2])
    return [t for t in table.sublevel if t.ground_energy in lower], sorted(lower)


def _pump_probe_signal(emitter: PleEmitter, freqs, pump_freq, pump_rabi,
                       t1=None, cutoff_linewidths=50.0):
    """Two-laser steady state over a reduced system built per scan point.

    Only transitions starting from the lower (thermally occupied) orbital
    ground branch participate; each laser couples to its nearest transition
    within the cutoff window. Excited-state decay branches to the two ground
    sublevels with the table's dipole weights, renormalized over that pair
    (standing in for fast orbital relaxation of any population that leaves
    the doublet).
    """
    candidates, grounds = _lower_branch_transitions(emitter.table)
    if len(grounds) != 2:
        raise InvalidParameterError("pump-probe scan needs a spin-resolved table")
    g_label = {grounds[0]: "g1", grounds[1]: "g2"}
    cutoff = cutoff_linewidths * emitter.linewidth
    gam = emitter.linewidth

    def nearest(freq):
        best = min(candidates, key=lambda t: abs(t.frequency - freq))
        return best if abs(best.frequency - freq) <= cutoff else None

    t_pump = nearest(pump_freq)

    # decay branching per excited state, renormalized over the ground doublet
    branch = {}
    for t in candidates:
        branch.setdefault(t.excited_energy, {})[t.ground_energy] = t.dipole_weight

    out = np.zeros_like(freqs)
    for i, nu in enumerate(freqs):
        t_probe = nearest(float(nu))
        chosen = []
        if t_pump is not None:
            chosen.append((t_pump, pump_rabi, pump_freq - t_pump.frequency))
        if t_probe is not None and not (
                t_pump is not None
                and t_probe.ground_energy == t_pump.ground_energy
                and t_probe.excited_energy == t_pump.excited_energy):
            chosen.append((t_probe, emitter.rabi, float(nu) - t_probe.frequency))
        if not chosen:
            out[i] = 0.0
            continue

        levels = [Level("g1", grounds[0]), Level("g2", grounds[1])]
        excited = sorted({t.excited_energy for t, _, _ in chosen})
        e_label = {e: f"e{k}" for k, e in enumerate(excited)}
        levels += [Level(e_label[e], 4.068e14 + e) for e in excited]
        drives = [
            Drive(g_label[t.ground_energy], e_label[t.excited_energy],
                  rabi * math.sqrt(t.dipole_weight), det)
            for t, rabi, det in chosen
        ]
        decays = []
        for e in excited:
            weights = branch[e]
            total = sum(weights.values())
            for ge, wt in weights.items():
                decays.append(Decay(e_label[e], g_label[ge], gam * wt / total))
        if t1 is not None:
            r = 1.0 / (4.0 * math.pi * t1)
            decays += [Decay("g1", "g2", r, radiative=False),
                       Decay("g2", "g1", r, radiative=False)]
        sys_ = LevelSystem(tuple(levels), tuple(drives), tuple(decays))
        rho = steady_state(sys_)
        out[i] = float(rho.populations() @ sys_.radiative_rates())
    return out


def simulate_ple_scan(emitters, frequencies, pump=None, t1=None) -> Spectrum:
    """Fluorescence versus scanning-laser frequency.

    Without `pump`, each emitter contributes an incoherent sum of saturated
    Lorentzians (dipole weight times thermal ground population times steady
    two-level excitation). With `pump` = (frequency_hz, rabi_hz) fixed, the
    probe response is computed from the two-laser steady state, which makes
    weak spin-flipping lines appear once optical pumping repopulates the
    sublevel they start from.
    """
    freqs = np.asarray(frequencies, dtype=float)
    if freqs.ndim != 1 or len(freqs) == 0:
        raise InvalidParameterError("frequencies must be a non-empty 1-d array")
    total = np.zeros_like(freqs)
    for emitter in emitters:
        if pump is None:
            total += _single_laser_signal(emitter, freqs)
        else:
            pump_freq, pump_rabi = pump
            total += _pump_probe_signal(emitter, freqs, float(pump_freq),
                                        float(pump_rabi), t1=t1)
    return Spectrum(freqs, total, x_unit="Hz")
