"""Physical constants in the frequency-per-SI-unit form used throughout.

All spectroscopic quantities in this package are ordinary frequencies (Hz),
i.e. angular frequencies divided by 2*pi. Conversion to angular units happens
only inside the dynamics engine.
"""

import scipy.constants as _const

#: Bohr magneton over Planck constant, Hz per tesla.
MU_B_OVER_H = _const.value("Bohr magneton in Hz/T")

#: Boltzmann constant over Planck constant, Hz per kelvin.
K_B_OVER_H = _const.k / _const.h

#: Speed of light, m/s.
C_LIGHT = _const.c

#: Vacuum permeability, T*m/A.
MU_0 = _const.mu_0

TWO_PI = 2.0 * _const.pi
