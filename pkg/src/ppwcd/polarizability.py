"""Element polarizabilities: intrinsic models, radiation-reaction (RR) correction,
passivity audit and retrieval of dipole moments from aperture field grids.
"""
from dataclasses import dataclass
import csv
import warnings

import numpy as np
from scipy.special import comb

from .constants import EPS0, MU0
from .greens import self_terms
from .scene import EllipticIris, ExplicitPolarizability, Lorentzian
from .specfun import ellip_e, ellip_k


class PolarizabilityError(ValueError):
    pass


class SingularPolarizabilityError(PolarizabilityError):
    pass


def lorentzian(F, omega0, Gamma, omega):
    """F w^2 / (w0^2 - w^2 + j Gamma w)."""
    if not omega > 0:
        raise PolarizabilityError("omega must be > 0")
    if Gamma < 0:
        raise PolarizabilityError("Gamma must be >= 0")
    den = omega0**2 - omega**2 + 1j * Gamma * omega
    if den == 0:
        raise ZeroDivisionError("undamped Lorentzian evaluated at resonance")
    return F * omega**2 / den


# ---------------------------------------------------------------- elliptic iris

_NSER = 40
_n = np.arange(_NSER + 2)
_C2 = comb(2 * _n, _n) ** 2 / 16.0**_n      # squared Maclaurin coefficients of (2/pi) K
_S_SWITCH = 0.25                            # series below e = 0.5


def _series_d1(s, deriv=False):
    # D1 = (K - E)/s = pi/2 sum_{n>=1} c_n^2 (2n/(2n-1)) s^(n-1)
    n = _n[1:_NSER + 1]
    coef = _C2[1:_NSER + 1] * 2 * n / (2 * n - 1)
    p = n - 1
    if deriv:
        coef, p = coef[1:] * p[1:], p[1:] - 1
    return 0.5 * np.pi * np.polynomial.polynomial.polyval(s, np.r_[np.zeros(p[0]), coef])


def _series_d2(s, deriv=False):
    # D2 = (E - (1-s)K)/s = pi/2 sum_{n>=0} (c_n^2 - c_{n+1}^2 (2n+2)/(2n+1)) s^n
    n = _n[:_NSER]
    coef = _C2[:_NSER] - _C2[1:_NSER + 1] * (2 * n + 2) / (2 * n + 1)
    if deriv:
        coef = coef[1:] * n[1:]
    return 0.5 * np.pi * np.polynomial.polynomial.polyval(s, coef)


def _kd(s):
    """K, E, D1, D2 and their s-derivatives, s = e^2, without cancellation near s = 0."""
    s = np.asarray(s, dtype=float)
    e = np.sqrt(s)
    K, E = ellip_k(e), ellip_e(e)
    small = s < _S_SWITCH
    ss = np.where(small, 0.5, s)
    d1 = np.where(small, _series_d1(s), (ellip_k(np.sqrt(ss)) - ellip_e(np.sqrt(ss))) / ss)
    d2 = np.where(small, _series_d2(s),
                  (ellip_e(np.sqrt(ss)) - (1 - ss) * ellip_k(np.sqrt(ss))) / ss)
    # dK/ds = (dK/de)/(2e) = D2/(2(1-s)); dE/ds = (dE/de)/(2e) = -D1/2
    dK = d2 / (2 * (1 - s))
    dE = -0.5 * d1
    dd1 = np.where(small, _series_d1(s, True), (d2 / (2 * (1 - s)) - 0.5 * d1) / ss)
    dd2 = np.where(small, _series_d2(s, True), (K - 0.5 * d1 - 1.5 * d2) / ss)
    return K, E, d1, d2, dK, dE, dd1, dd2


def _ellipse_check(l1, l2):
    if not (np.all(np.asarray(l1) > 0) and np.all(np.asarray(l2) > 0) and np.all(np.asarray(l2) <= np.asarray(l1))):
        raise PolarizabilityError("elliptic iris needs 0 < l2 <= l1")


def intrinsic_ellipse(l1, l2):
    """Quasi-static intrinsic polarizabilities (alpha_e, alpha_xx, alpha_yy) of an elliptic iris.

    Major axis along x. With e the eccentricity,
    alpha_e = -pi l1^3 (1-e^2) / (3E), alpha_xx = pi l1^3 e^2 / (3(K-E)),
    alpha_yy = pi l1^3 e^2 (1-e^2) / (3(E-(1-e^2)K)).
    """
    _ellipse_check(l1, l2)
    l1 = np.asarray(l1, float)
    s = 1.0 - (np.asarray(l2, float) / l1) ** 2
    s = np.clip(s, 0.0, None)
    _, E, d1, d2, *_ = _kd(s)
    c = np.pi * l1**3 / 3.0
    return -c * (1 - s) / E, c / d1, c * (1 - s) / d2


def intrinsic_ellipse_dl2(l1, l2):
    """Derivatives of (alpha_e, alpha_xx, alpha_yy) with respect to l2."""
    _ellipse_check(l1, l2)
    l1 = np.asarray(l1, float)
    l2 = np.asarray(l2, float)
    s = np.clip(1.0 - (l2 / l1) ** 2, 0.0, None)
    _, E, d1, d2, _, dE, dd1, dd2 = _kd(s)
    ds = -2.0 * l2 / l1**2
    c = np.pi * l1**3 / 3.0
    dae = -c * (-1.0 / E - (1 - s) * dE / E**2)
    daxx = -c * dd1 / d1**2
    dayy = c * (-1.0 / d2 - (1 - s) * dd2 / d2**2)
    return dae * ds, daxx * ds, dayy * ds


# ---------------------------------------------------------------- RR correction

def rr_correct_magnetic(A_int, k, h):
    """A = A_int (I - j Im{G(0)} A_int)^-1."""
    A_int = np.asarray(A_int, dtype=complex)
    if abs(A_int[0, 1] - A_int[1, 0]) > 1e-12 * max(np.abs(A_int).max(), 1e-300):
        raise PolarizabilityError("intrinsic magnetic polarizability must be symmetric")
    g0, _ = self_terms(k, h)
    M = np.eye(2) - 1j * g0 * A_int
    if np.linalg.cond(M) > 1e12:
        raise SingularPolarizabilityError("RR bracket is numerically singular")
    A = A_int @ np.linalg.inv(M)
    return 0.5 * (A + A.T)


def rr_correct_electric(alpha_int, k, h):
    """alpha_e = alpha_int / (1 + j alpha_int (k^3/(3 pi) + k^2/(4h)))."""
    b = k**3 / (3 * np.pi) + k**2 / (4.0 * h)
    den = 1.0 + 1j * alpha_int * b
    if abs(den) < 1e-15 * max(1.0, abs(alpha_int * b)):
        raise SingularPolarizabilityError("electric RR denominator vanishes")
    return alpha_int / den


def intrinsic_from_effective_magnetic(A, k, h):
    """Inverse of rr_correct_magnetic: A_int^-1 = A^-1 + j Im{G(0)}."""
    g0, _ = self_terms(k, h)
    return np.linalg.inv(np.linalg.inv(np.asarray(A, complex)) + 1j * g0 * np.eye(2))


def intrinsic_from_effective_electric(alpha_e, k, h):
    b = k**3 / (3 * np.pi) + k**2 / (4.0 * h)
    return 1.0 / (1.0 / alpha_e - 1j * b)


@dataclass(frozen=True)
class PassivityReport:
    magnetic_slack: float
    electric_slack: float
    magnetic_bound: float
    electric_bound: float
    passed: bool

    def __str__(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} magnetic slack {self.magnetic_slack:.6g} (bound {self.magnetic_bound:.6g}), "
                f"electric slack {self.electric_slack:.6g} (bound {self.electric_bound:.6g})")


def audit_passivity(A, alpha_e, k, h, rtol=1e-9):
    """Min eigenvalue of Im{A^-1} + Im{G(0)} I and Im{1/alpha_e} minus its bound.

    A zero polarizability is a missing dipole and counts as passive.
    """
    g0, _ = self_terms(k, h)
    bm = -g0
    be = k**3 / (3 * np.pi) + k**2 / (4.0 * h)
    A = np.asarray(A, complex)
    Ainv = _inv2(A)
    if np.all(A == 0):
        sm = np.inf
    elif Ainv is not None:
        im = 0.5 * ((Ainv - Ainv.conj().T) / 1j)
        sm = float(np.linalg.eigvalsh(im + g0 * np.eye(2))[0])
    else:
        # rank one (e.g. a missing Lorentz axis): audit along the active direction v,
        # v^H (-Im{A} + Im{G(0)} A^H A) v / |A v|^2, which is Im{1/a} + Im{G(0)} for diag(a, 0)
        _, sv, vh = np.linalg.svd(A)
        v = vh[0].conj()
        im = 0.5 * ((A - A.conj().T) / 1j)
        sm = float((v.conj() @ (-im + g0 * (A.conj().T @ A)) @ v).real / sv[0] ** 2)
    se = np.inf if alpha_e == 0 else float((1.0 / alpha_e).imag - be)
    ok = sm >= -rtol * bm and se >= -rtol * be
    return PassivityReport(sm, se, bm, be, bool(ok))


# ---------------------------------------------------------------- per-element evaluation

@dataclass(frozen=True)
class ElementPolarizability:
    A: np.ndarray          # effective 2x2
    alpha_e: complex       # effective
    A_inv: np.ndarray | None
    alpha_e_inv: complex | None


def _axis(ax, omega):
    return 0.0 if ax is None else lorentzian(ax.F, ax.omega0, ax.gamma, omega)


def intrinsic_of(element, omega):
    """Intrinsic (A_int, alpha_e_int), or None when the element stores effective values."""
    r = element.response
    if isinstance(r, EllipticIris):
        ae, axx, ayy = intrinsic_ellipse(r.l1, r.l2)
        if r.rotation_deg == 90:
            axx, ayy = ayy, axx
        return np.diag([axx, ayy]).astype(complex), complex(ae)
    if isinstance(r, Lorentzian):
        return np.diag([_axis(r.xx, omega), _axis(r.yy, omega)]).astype(complex), complex(_axis(r.e, omega))
    if isinstance(r, ExplicitPolarizability):
        if r.intrinsic:
            return r.matrix, complex(r.alpha_e)
        return None
    raise PolarizabilityError(f"unknown element response {type(r).__name__}")


def _inv2(M):
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if det == 0 or not np.isfinite(det):
        return None
    return np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]]) / det


def element_polarizability(element, k, h, omega):
    g0, _ = self_terms(k, h)
    be = k**3 / (3 * np.pi) + k**2 / (4.0 * h)
    intr = intrinsic_of(element, omega)
    if intr is None:
        A = element.response.matrix
        ae = complex(element.response.alpha_e)
        return ElementPolarizability(A, ae, _inv2(A) if np.any(A != 0) else None,
                                     (1.0 / ae) if ae != 0 else None)
    A_int, ae_int = intr
    if np.any(A_int != 0):
        Ainv_int = _inv2(A_int)
        if Ainv_int is None:
            # rank-deficient intrinsic model (e.g. one Lorentz axis absent)
            A = rr_correct_magnetic(A_int, k, h)
            A_inv = _inv2(A)
        else:
            A_inv = Ainv_int - 1j * g0 * np.eye(2)
            A = _inv2(A_inv)
    else:
        A, A_inv = np.zeros((2, 2), complex), None
    if ae_int != 0:
        ae_inv = 1.0 / ae_int + 1j * be
        ae = 1.0 / ae_inv
    else:
        ae, ae_inv = 0j, None
    return ElementPolarizability(A, ae, A_inv, ae_inv)


def scene_polarizabilities(scene):
    return [element_polarizability(e, scene.k, scene.h, scene.omega) for e in scene.elements]


# ---------------------------------------------------------------- retrieval

@dataclass(frozen=True)
class FieldGrid:
    x: np.ndarray
    y: np.ndarray
    Ex: np.ndarray
    Ey: np.ndarray
    area: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a).ravel() for a in (self.x, self.y, self.Ex, self.Ey, self.area)]
        if len({len(a) for a in arrs}) != 1:
            raise PolarizabilityError("field grid columns differ in length")
        if len(arrs[0]) and np.any(arrs[4] <= 0):
            raise PolarizabilityError("cell areas must be positive")
        for name, a in zip(("x", "y", "Ex", "Ey", "area"), arrs):
            object.__setattr__(self, name, a)

    @classmethod
    def structured(cls, xs, ys, Ex, Ey):
        """Tensor grid with trapezoidal weights; Ex, Ey shaped (len(ys), len(xs))."""
        wx = _trap_weights(np.asarray(xs, float))
        wy = _trap_weights(np.asarray(ys, float))
        X, Y = np.meshgrid(xs, ys)
        W = np.outer(wy, wx)
        return cls(X, Y, np.asarray(Ex, complex), np.asarray(Ey, complex), W)

    def scaled(self, a):
        return FieldGrid(self.x, self.y, a * self.Ex, a * self.Ey, self.area)

    def __add__(self, other):
        return FieldGrid(self.x, self.y, self.Ex + other.Ex, self.Ey + other.Ey, self.area)


def _trap_weights(t):
    if len(t) < 2:
        raise PolarizabilityError("structured grid needs at least two samples per axis")
    w = np.zeros(len(t))
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def read_field_grid(path):
    cols = {k: [] for k in ("x_m", "y_m", "Ex_re", "Ex_im", "Ey_re", "Ey_im", "area_m2")}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(cols) - set(reader.fieldnames or [])
        if missing:
            raise PolarizabilityError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            for k in cols:
                cols[k].append(float(row[k]))
    c = {k: np.array(v) for k, v in cols.items()}
    return FieldGrid(c["x_m"], c["y_m"], c["Ex_re"] + 1j * c["Ex_im"], c["Ey_re"] + 1j * c["Ey_im"], c["area_m2"])


def write_field_grid(grid, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_m", "y_m", "Ex_re", "Ex_im", "Ey_re", "Ey_im", "area_m2"])
        for row in zip(grid.x, grid.y, grid.Ex, grid.Ey, grid.area):
            x, y, ex, ey, a = (complex(v) for v in row)
            w.writerow([repr(v) for v in (x.real, y.real, ex.real, ex.imag, ey.real, ey.imag, a.real)])


def retrieve_moments(grid, omega):
    """(m_x, m_y, p) from the tangential aperture field; coordinates centred on the element.

    The electric moment keeps the factor 1/2 that removes the ground-plane image
    already present in the Green's functions.
    """
    if len(grid.area) == 0:
        raise PolarizabilityError("empty field grid")
    w = grid.area
    jwm = 1j * omega * MU0
    mx = np.sum(w * grid.Ey) / jwm
    my = -np.sum(w * grid.Ex) / jwm
    p = 0.5 * EPS0 * np.sum(w * (grid.x * grid.Ex + grid.y * grid.Ey))
    return complex(mx), complex(my), complex(p)


@dataclass(frozen=True)
class RetrievedPolarizability:
    A: np.ndarray
    alpha_e: complex
    asymmetry: float      # |a_xy - a_yx| / max|A| before symmetrization
    alpha_xy: complex
    alpha_yx: complex


def retrieve_polarizabilities(grid_0deg, grid_90deg, h0x, E0, omega):
    """Effective polarizabilities from the upright and 90-degree rotated aperture fields."""
    mx, my, p = retrieve_moments(grid_0deg, omega)
    mtx, mty, _ = retrieve_moments(grid_90deg, omega)
    scale = max(abs(h0x), abs(E0), 1e-300)
    if abs(h0x) < 1e-12 * scale or h0x == 0:
        raise PolarizabilityError("incident magnetic field h0x is too small")
    if abs(E0) < 1e-12 * scale or E0 == 0:
        raise PolarizabilityError("incident electric field E0 is too small")
    if mx == my == p == mtx == mty == 0:
        warnings.warn("all retrieved moments are zero", RuntimeWarning, stacklevel=2)
    axx, axy = mx / h0x, my / h0x
    ayy, ayx = mtx / h0x, -mty / h0x
    ae = p / (EPS0 * E0)
    off = 0.5 * (axy + ayx)
    A = np.array([[axx, off], [off, ayy]], dtype=complex)
    ref = max(np.abs([axx, ayy, axy, ayx]).max(), 1e-300)
    asym = float(abs(axy - ayx) / ref) if ref > 1e-300 else 0.0
    return RetrievedPolarizability(A, complex(ae), asym, complex(axy), complex(ayx))
