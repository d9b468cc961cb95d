"""SiV ground/excited level structure under strain and magnetic field.

Each manifold (ground or excited) is a spin-orbit doublet treated in the basis

    {|e+ up>, |e+ dn>, |e- up>, |e- dn>}

with the Hamiltonian (all entries in Hz, z = defect symmetry axis)

    H = -lambda_so * (Lz Sz)/hbar^2
        + strain coupling between the orbital branches
          (alpha on the real part, beta on the imaginary part)
        + quench_f * (muB/h) * Bz * Lz/hbar        (orbital Zeeman, z only)
        + g_spin  * (muB/h) * B . S/hbar           (isotropic spin Zeeman)

At zero strain and field this gives two doublets split by lambda_so; strain
increases the splitting to sqrt(lambda_so^2 + 4(alpha^2 + beta^2)); a magnetic
field lifts the spin degeneracy. Four optical lines (A..D, descending
frequency) connect the orbital branches of the two manifolds, and each line
resolves into four spin sublevel transitions (1..4, descending frequency) in a
field. Emitters hosted in nanodiamonds have arbitrary orientation, so the
model carries the symmetry axis explicitly and rotates the lab-frame field
into the defect frame.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import MU_B_OVER_H
from .errors import InvalidParameterError

__all__ = [
    "ManifoldParams",
    "SivModel",
    "OpticalLine",
    "SublevelTransition",
    "TransitionTable",
    "build_hamiltonian",
    "manifold_eigensystem",
    "transition_table",
    "spin_splitting",
    "transition_table_to_csv",
]

_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)
_ID = np.eye(2, dtype=complex)
# normalized orbital operator basis used for the polarization-summed dipole
_ORBITAL_BASIS = (_ID, _SX, _SY, _SZ)

#: |B| below this (tesla) is treated as exactly zero field.
_ZERO_FIELD_TESLA = 1e-12


@dataclass(frozen=True)
class ManifoldParams:
    """Spin-orbit, strain and Zeeman inputs of one orbital manifold."""

    lambda_so: float        # spin-orbit coupling, Hz
    strain_alpha: float = 0.0   # transverse strain, Hz (real orbital coupling)
    strain_beta: float = 0.0    # transverse strain, Hz (imaginary orbital coupling)
    quench_f: float = 0.1       # orbital Zeeman quenching factor, in [0, 1]
    g_spin: float = 2.0         # spin g-factor

    def __post_init__(self):
        vals = (self.lambda_so, self.strain_alpha, self.strain_beta,
                self.quench_f, self.g_spin)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidParameterError("ManifoldParams fields must be finite")
        if self.lambda_so <= 0:
            raise InvalidParameterError("lambda_so must be positive")
        if not 0.0 <= self.quench_f <= 1.0:
            raise InvalidParameterError("quench_f must lie in [0, 1]")
        if self.g_spin <= 0:
            raise InvalidParameterError("g_spin must be positive")

    @property
    def orbital_splitting(self) -> float:
        """Zero-field splitting sqrt(lambda^2 + 4(alpha^2+beta^2)), Hz."""
        return math.sqrt(self.lambda_so ** 2
                         + 4.0 * (self.strain_alpha ** 2 + self.strain_beta ** 2))


@dataclass(frozen=True)
class SivModel:
    """Complete emitter model: both manifolds, optical center, field, orientation.

    `b_field` is given in the lab frame; `axis` is the defect symmetry axis in
    the lab frame (normalized on construction). The default axis is lab z.
    """

    ground: ManifoldParams
    excited: ManifoldParams
    zpl_center: float               # weighted central optical frequency, Hz
    b_field: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not (math.isfinite(self.zpl_center) and self.zpl_center > 0):
            raise InvalidParameterError("zpl_center must be positive and finite")
        b = np.asarray(self.b_field, dtype=float)
        a = np.asarray(self.axis, dtype=float)
        if b.shape != (3,) or not np.all(np.isfinite(b)):
            raise InvalidParameterError("b_field must be a finite 3-vector")
        if a.shape != (3,) or not np.all(np.isfinite(a)) or np.linalg.norm(a) == 0:
            raise InvalidParameterError("axis must be a nonzero 3-vector")
        object.__setattr__(self, "b_field", tuple(b))
        object.__setattr__(self, "axis", tuple(a / np.linalg.norm(a)))

    def b_field_defect_frame(self) -> np.ndarray:
        """Rotate the lab-frame field into the defect frame (z' = axis)."""
        z_ax = np.array(self.axis)
        # deterministic in-plane basis; spectra are invariant under rotations
        # about the symmetry axis, so the in-plane choice is free
        trial = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(trial, z_ax)) > 0.9:
            trial = np.array([0.0, 1.0, 0.0])
        x_ax = trial - np.dot(trial, z_ax) * z_ax
        x_ax /= np.linalg.norm(x_ax)
        y_ax = np.cross(z_ax, x_ax)
        b = np.array(self.b_field)
        return np.array([np.dot(b, x_ax), np.dot(b, y_ax), np.dot(b, z_ax)])


def build_hamiltonian(m: ManifoldParams, b_field) -> np.ndarray:
    """4x4 Hermitian manifold Hamiltonian (Hz), field in the defect frame."""
    b = np.asarray(b_field, dtype=float)
    if b.shape != (3,) or not np.all(np.isfinite(b)):
        raise InvalidParameterError("b_field must be a finite 3-vector")
    lz = np.kron(_SZ, _ID)                 # Lz/hbar
    lz_sz = 0.5 * np.kron(_SZ, _SZ)        # (Lz/hbar)(Sz/hbar)
    strain_orb = np.array(
        [[0.0, m.strain_alpha - 1j * m.strain_beta],
         [m.strain_alpha + 1j * m.strain_beta, 0.0]], dtype=complex)
    h = -m.lambda_so * lz_sz
    h = h + np.kron(strain_orb, _ID)
    h = h + m.quench_f * MU_B_OVER_H * b[2] * lz
    h = h + 0.5 * m.g_spin * MU_B_OVER_H * (
        b[0] * np.kron(_ID, _SX) + b[1] * np.kron(_ID, _SY) + b[2] * np.kron(_ID, _SZ))
    return h


def _fix_degenerate_eigenvectors(w, v):
    """Resolve degenerate pairs into spin-projection eigenstates.

    Within each (numerically) degenerate eigenvalue group the basis returned
    by the dense solver is arbitrary; re-diagonalize Sz there and order by
    ascending <Sz> so the table is deterministic at zero field.
    """
    sz_full = 0.5 * np.kron(_ID, _SZ)
    scale = max(np.max(np.abs(w)), 1.0)
    i = 0
    n = len(w)
    while i < n:
        j = i + 1
        while j < n and abs(w[j] - w[i]) < 1e-9 * scale:
            j += 1
        if j - i > 1:
            block = v[:, i:j]
            sz_block = block.conj().T @ sz_full @ block
            sz_vals, sz_vecs = np.linalg.eigh(sz_block)
            v[:, i:j] = block @ sz_vecs  # eigh returns ascending <Sz>
        i = j
    # deterministic global phases: largest-magnitude component real positive
    for k in range(n):
        idx = int(np.argmax(np.abs(v[:, k])))
        phase = v[idx, k] / abs(v[idx, k])
        v[:, k] = v[:, k] / phase
    return w, v


def manifold_eigensystem(m: ManifoldParams, b_field):
    """Eigenvalues (ascending, Hz) and eigenvectors of one manifold."""
    w, v = np.linalg.eigh(build_hamiltonian(m, b_field))
    return _fix_degenerate_eigenvectors(w, v)


def _spin_overlap_sq(v_ground: np.ndarray, v_excited: np.ndarray) -> float:
    """Squared spin overlap of two orbit*spin eigenvectors.

    Polarization-summed dipole model: the optical dipole acts on the orbital
    sector only, so the transition strength is summed over a complete orbital
    operator basis and reduces to |<chi_e|chi_g>|^2 for product states.
    """
    total = 0.0
    for op in _ORBITAL_BASIS:
        total += abs(np.vdot(v_excited, np.kron(op, _ID) @ v_ground)) ** 2
    return 0.5 * total


@dataclass(frozen=True)
class OpticalLine:
    label: str        # A..D, descending frequency
    frequency: float  # Hz


@dataclass(frozen=True)
class SublevelTransition:
    label: str            # 1..4 within the parent, descending frequency
    parent: str           # A..D
    frequency: float      # Hz
    dipole_weight: float  # normalized within the parent
    spin_character: str   # preserving | flipping | mixed | undefined
    ground_energy: float  # Hz, manifold eigenvalue of the lower state
    excited_energy: float  # Hz, manifold eigenvalue of the upper state


@dataclass(frozen=True)
class TransitionTable:
    optical: tuple
    sublevel: tuple
    delta_gs: float
    delta_es: float
    f_s_ground: float
    f_s_excited: float
    spin_resolved: bool   # False at zero field (spin characters undefined)

    def lines_of(self, parent: str):
        return [t for t in self.sublevel if t.parent == parent]


def _spin_character(raw_overlap: float, spin_resolved: bool) -> str:
    if not spin_resolved:
        return "undefined"
    if abs(raw_overlap - 0.5) < 1e-9:
        return "mixed"
    return "preserving" if raw_overlap > 0.5 else "flipping"


def transition_table(model: SivModel) -> TransitionTable:
    """Optical lines A..D and their spin sublevel structure."""
    b = model.b_field_defect_frame()
    wg, vg = manifold_eigensystem(model.ground, b)
    we, ve = manifold_eigensystem(model.excited, b)
    spin_resolved = float(np.linalg.norm(b)) > _ZERO_FIELD_TESLA

    branches = {"lower": (0, 1), "upper": (2, 3)}
    parents = [
        ("lower", "upper"),  # ground lower -> excited upper
        ("upper", "upper"),
        ("lower", "lower"),
        ("upper", "lower"),
    ]
    entries = []
    for gbr, ebr in parents:
        gi = branches[gbr]
        ei = branches[ebr]
        freq = model.zpl_center + 0.5 * (we[ei[0]] + we[ei[1]]) \
            - 0.5 * (wg[gi[0]] + wg[gi[1]])
        subs = []
        for i in gi:
            for f_ in ei:
                raw = _spin_overlap_sq(vg[:, i], ve[:, f_])
                subs.append({
                    "frequency": model.zpl_center + we[f_] - wg[i],
                    "raw": raw,
                    "ground_energy": wg[i],
                    "excited_energy": we[f_],
                })
        entries.append({"frequency": freq, "subs": subs})

    # label parents A..D by descending parent frequency
    entries.sort(key=lambda e: -e["frequency"])
    optical = []
    sublevel = []
    for parent_label, entry in zip("ABCD", entries):
        optical.append(OpticalLine(parent_label, entry["frequency"]))
        subs = sorted(entry["subs"], key=lambda s: -s["frequency"])
        norm = sum(s["raw"] for s in subs)
        for k, s in enumerate(subs, start=1):
            weight = s["raw"] / norm if norm > 0 else 0.25
            sublevel.append(SublevelTransition(
                label=str(k),
                parent=parent_label,
                frequency=s["frequency"],
                dipole_weight=weight,
                spin_character=_spin_character(s["raw"], spin_resolved),
                ground_energy=s["ground_energy"],
                excited_energy=s["excited_energy"],
            ))

    return TransitionTable(
        optical=tuple(optical),
        sublevel=tuple(sublevel),
        delta_gs=0.5 * (wg[2] + wg[3]) - 0.5 * (wg[0] + wg[1]),
        delta_es=0.5 * (we[2] + we[3]) - 0.5 * (we[0] + we[1]),
        f_s_ground=wg[1] - wg[0],
        f_s_excited=we[1] - we[0],
        spin_resolved=spin_resolved,
    )


def spin_splitting(model: SivModel) -> dict:
    """Spin splittings of the lower orbital branch of each manifold, Hz.

    Returns {'f_s_ground', 'f_s_excited', 'degenerate'}; at zero field the
    splittings are zero and the degeneracy flag is set.
    """
    b = model.b_field_defect_frame()
    if float(np.linalg.norm(b)) <= _ZERO_FIELD_TESLA:
        return {"f_s_ground": 0.0, "f_s_excited": 0.0, "degenerate": True}
    wg, _ = manifold_eigensystem(model.ground, b)
    we, _ = manifold_eigensystem(model.excited, b)
    return {
        "f_s_ground": float(wg[1] - wg[0]),
        "f_s_excited": float(we[1] - we[0]),
        "degenerate": False,
    }


def transition_table_to_csv(table: TransitionTable) -> str:
    """CSV export, header: label,parent,frequency_hz,dipole_weight,spin_character."""
    buf = io.StringIO()
    buf.write("label,parent,frequency_hz,dipole_weight,spin_character\n")
    for t in table.sublevel:
        buf.write(f"{t.label},{t.parent},{t.frequency:.6f},"
                  f"{t.dipole_weight:.12f},{t.spin_character}\n")
    return buf.getvalue()
