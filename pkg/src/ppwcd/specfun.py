"""Hankel functions of the second kind and complete elliptic integrals.

Elliptic integrals here take the eccentricity ``e`` as argument, i.e.
K(e) = int_0^{pi/2} dt / sqrt(1 - e^2 sin^2 t). scipy's routines use the
parameter m = e^2, so the conversion happens once, here.
"""
import numpy as np
from scipy import special


class SpecialFunctionDomainError(ValueError):
    pass


def hankel2(order, x):
    """H^(2)_order(x) = J_order(x) - j Y_order(x) for real x > 0, order in {0, 1, 2}."""
    if order not in (0, 1, 2):
        raise SpecialFunctionDomainError(f"unsupported Hankel order {order!r}")
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise SpecialFunctionDomainError("Hankel argument must be finite and > 0")
    return special.hankel2(order, x)


def hankel2_all(x):
    """(H0, H1, H2) at x, sharing one validity check; H2 from the recurrence."""
    h0 = hankel2(0, x)
    h1 = hankel2(1, x)
    h2 = 2.0 * h1 / np.asarray(x, dtype=float) - h0
    return h0, h1, h2


def _check_e(e, allow_one):
    e = np.asarray(e, dtype=float)
    bad = (e < 0) | ~np.isfinite(e) | ((e > 1) if allow_one else (e >= 1))
    if np.any(bad):
        rng = "[0, 1]" if allow_one else "[0, 1)"
        raise SpecialFunctionDomainError(f"eccentricity must lie in {rng}")
    return e


def ellip_k(e):
    """Complete elliptic integral of the first kind K(e), 0 <= e < 1."""
    e = _check_e(e, allow_one=False)
    # 1 - e^2 formed as a product keeps precision as e -> 1
    return special.ellipkm1((1.0 - e) * (1.0 + e))


def ellip_e(e):
    """Complete elliptic integral of the second kind E(e), 0 <= e <= 1."""
    e = _check_e(e, allow_one=True)
    return special.ellipe(e * e)


def _series_coeffs(n=16):
    # c_j = ((2j-1)!! / (2j)!!)^2, so K = pi/2 sum c_j e^(2j)
    c = np.ones(n)
    for j in range(1, n):
        c[j] = c[j - 1] * ((2 * j - 1) / (2 * j)) ** 2
    return c


_C = _series_coeffs()
_J = np.arange(len(_C))
_SMALL_E = 0.1


def ellip_k_de(e):
    """dK/de = (E - (1 - e^2) K) / (e (1 - e^2)); power series below e = 0.1."""
    e = _check_e(e, allow_one=False)
    ep2 = (1.0 - e) * (1.0 + e)
    small = e < _SMALL_E
    es = np.where(small, 0.5, e)
    exact = (ellip_e(es) - ep2 * ellip_k(es)) / (es * ep2)
    ee = np.asarray(e)[..., None]
    series = 0.5 * np.pi * np.sum((_C * 2 * _J)[1:] * ee ** (2 * _J[1:] - 1), axis=-1)
    return np.where(small, series, exact)


def ellip_e_de(e):
    """dE/de = (E - K) / e; power series below e = 0.1."""
    e = _check_e(e, allow_one=False)
    small = e < _SMALL_E
    es = np.where(small, 0.5, e)
    exact = (ellip_e(es) - ellip_k(es)) / es
    ee = np.asarray(e)[..., None]
    j = _J[1:]
    series = -0.5 * np.pi * np.sum(_C[1:] / (2 * j - 1) * 2 * j * ee ** (2 * j - 1), axis=-1)
    return np.where(small, series, exact)
