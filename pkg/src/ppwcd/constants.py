"""SI constants shared by every module.

Time convention is exp(+j*omega*t) throughout, so outgoing waves carry
exp(-j*k*r) and Hankel functions are of the second kind.
"""
import numpy as np
from scipy import constants as _sc

C0 = _sc.c
MU0 = _sc.mu_0
EPS0 = _sc.epsilon_0
ETA0 = float(np.sqrt(MU0 / EPS0))


def wavenumber(frequency):
    return 2.0 * np.pi * np.asarray(frequency, dtype=float) / C0


def wavelength(frequency):
    return C0 / np.asarray(frequency, dtype=float)
