"""Physical constants (CODATA, via scipy) and unit conversion factors."""

from scipy import constants as _c

MU_0 = _c.mu_0  # T m / A
PLANCK = _c.h  # J s
HBAR = _c.hbar  # J s

NM = 1e-9  # m per nm
KHZ_PER_MT_TO_HZ_PER_T = 1e6
KHZ_PER_MT_TO_MHZ_PER_MT = 1e-3
KHZ = 1e3  # Hz per kHz
