"""Feed excitation, the coupled operator K and the dipole-moment solve.

Unknowns are ordered x = [m_x1, m_y1, ..., m_xN, m_yN, p_1, ..., p_N]. A dipole
whose polarizability is exactly zero is absent: its rows and columns are
dropped from K and its moment is reported as zero.
"""
from dataclasses import dataclass
import csv
import warnings

import numpy as np
from scipy import linalg

from .constants import EPS0, ETA0
from .greens import GeometryError, assemble_interactions, pair_geometry
from .polarizability import SingularPolarizabilityError, scene_polarizabilities
from .specfun import hankel2

MODES = ("unified", "magnetic_only")


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExcitationMatrices:
    Hf: np.ndarray      # 2N x Nf, A/m per A
    Hf_e: np.ndarray    # N x Nf, V/m per A

    @property
    def stacked(self):
        return np.vstack([self.Hf, self.Hf_e])


def feed_excitation(scene):
    pos = scene.positions()
    feeds = scene.feed_positions()
    n, nf = len(pos), len(feeds)
    Hf = np.zeros((2 * n, nf), complex)
    He = np.zeros((n, nf), complex)
    if n and nf:
        rho, psi = pair_geometry(pos, feeds)
        if np.any(rho <= 0):
            i, j = np.argwhere(rho <= 0)[0]
            raise GeometryError(f"element {i} coincides with feed {j}")
        k = scene.k
        h1 = hankel2(1, k * rho)
        Hf[0::2] = 0.25j * k * h1 * np.sin(psi)
        Hf[1::2] = -0.25j * k * h1 * np.cos(psi)
        He[:] = -0.25 * k * ETA0 * hankel2(0, k * rho)
    return ExcitationMatrices(Hf, He)


@dataclass(frozen=True)
class CoupledOperator:
    K: np.ndarray          # active rows/cols only
    active: np.ndarray     # indices into the full 3N unknown vector
    n: int
    mode: str
    lu: tuple              # LU of the equilibrated matrix D K D
    scale: np.ndarray      # D, chosen so D K D has unit-modulus diagonal
    rcond: float           # reciprocal 1-norm condition estimate of D K D
    # block-diagonal inverse polarizability on the active set (K = Ainv - G_mut)
    Ainv: np.ndarray

    @property
    def cond(self):
        return np.inf if self.rcond == 0 else 1.0 / self.rcond

    def _d(self, b):
        return self.scale.reshape((-1,) + (1,) * (np.ndim(b) - 1))

    def solve(self, b):
        d = self._d(b)
        return d * linalg.lu_solve(self.lu, d * b, check_finite=False)

    def solve_h(self, b):
        """Solves K^H y = b."""
        d = self._d(b)
        return d * linalg.lu_solve(self.lu, d * b, trans=2, check_finite=False)

    def expand(self, xa):
        """Active-set vector(s) to the full 3N ordering with zeros for absent dipoles."""
        out = np.zeros((3 * self.n,) + np.shape(xa)[1:], complex)
        out[self.active] = xa
        return out


def inverse_polarizability(scene, mode="unified", pols=None):
    """Diagonal-block A^-1 over the full 3N ordering plus the active index set."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    n = len(scene.elements)
    pols = scene_polarizabilities(scene) if pols is None else pols
    Ainv = np.zeros((3 * n, 3 * n), complex)
    active = []
    for i, pol in enumerate(pols):
        sl = slice(2 * i, 2 * i + 2)
        if pol.A_inv is not None:
            Ainv[sl, sl] = pol.A_inv
            active += [2 * i, 2 * i + 1]
        elif np.any(pol.A != 0):
            d = np.diag(pol.A)
            if pol.A[0, 1] != 0 or np.all(d == 0):
                raise SingularPolarizabilityError(f"element {i}: magnetic polarizability is singular")
            for c in (0, 1):
                if d[c] != 0:
                    Ainv[2 * i + c, 2 * i + c] = 1.0 / d[c]
                    active.append(2 * i + c)
        if mode == "unified" and pol.alpha_e_inv is not None:
            Ainv[2 * n + i, 2 * n + i] = pol.alpha_e_inv / EPS0
            active.append(2 * n + i)
    active = np.array(sorted(active), dtype=int)
    if not np.all(np.isfinite(Ainv)):
        bad = np.argwhere(~np.isfinite(Ainv))[0][0]
        el = bad // 2 if bad < 2 * n else bad - 2 * n
        raise SingularPolarizabilityError(f"element {el}: inverse polarizability is not finite")
    return Ainv, active


def factor_operator(K, active, n, mode="unified", Ainv=None, warn=True):
    """Equilibrate and LU-factor an active-set operator K."""
    if not np.all(np.isfinite(K)):
        raise NumericalError("coupled operator has non-finite entries")
    diag = np.abs(np.diag(K))
    if np.any(diag == 0):
        diag = np.where(diag == 0, max(diag.max(initial=0.0), 1.0), diag)
    d = 1.0 / np.sqrt(diag)
    Ks = d[:, None] * K * d[None, :]
    if len(active):
        with warnings.catch_warnings():
            # an exactly singular pivot is reported below through rcond
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu = linalg.lu_factor(Ks, check_finite=False)
        gecon = linalg.get_lapack_funcs("gecon", (lu[0],))
        rcond, _ = gecon(lu[0], np.abs(Ks).sum(axis=0).max(), norm="1")
        rcond = float(rcond)
        if rcond == 0.0:
            raise NumericalError("coupled operator K is singular")
        if warn and rcond < 1e-10:
            warnings.warn(f"K is near-singular (cond ~ {1 / rcond:.3g}); coupled resonance", RuntimeWarning,
                          stacklevel=3)
    else:
        lu, rcond = (np.zeros((0, 0)), np.zeros(0, np.int32)), 1.0
    return CoupledOperator(K, np.asarray(active, int), n, mode, lu, d, rcond, Ainv)


def assemble_K(scene, interactions=None, mode="unified", pols=None, warn=True):
    inter = assemble_interactions(scene) if interactions is None else interactions
    Ainv, active = inverse_polarizability(scene, mode, pols)
    K = (Ainv - inter.mutual())[np.ix_(active, active)]
    return factor_operator(K, active, len(scene.elements), mode, Ainv[np.ix_(active, active)], warn)


@dataclass(frozen=True)
class DipoleState:
    m: np.ndarray   # 2N
    p: np.ndarray   # N

    @property
    def x(self):
        return np.concatenate([self.m, self.p])

    @classmethod
    def from_x(cls, x):
        x = np.asarray(x, complex)
        n = len(x) // 3
        return cls(x[:2 * n].copy(), x[2 * n:].copy())

    def __add__(self, other):
        return DipoleState(self.m + other.m, self.p + other.p)


def solve_dipoles(op, excitation, currents):
    currents = np.asarray(currents, complex).ravel()
    Hbar = excitation.stacked
    if Hbar.shape[1] != len(currents):
        raise ValueError(f"expected {Hbar.shape[1]} feed currents, got {len(currents)}")
    if Hbar.shape[0] != 3 * op.n:
        raise ValueError("excitation and operator sizes differ")
    b = Hbar[op.active] @ currents
    xa = op.solve(b) if len(op.active) else np.zeros(0, complex)
    res = np.linalg.norm(op.K @ xa - b)
    if res > 1e-10 * max(np.linalg.norm(b), 1e-300) and np.linalg.norm(b) > 0:
        raise NumericalError(f"solve residual {res:.3g} exceeds tolerance")
    return DipoleState.from_x(op.expand(xa))


def solve_scene(scene, currents=None, mode="unified"):
    """Convenience: interactions, operator, excitation and state in one call."""
    if currents is None:
        currents = scene.feed_currents()
        if currents is None:
            raise ValueError("feed currents not given and not stored in the scene")
    inter = assemble_interactions(scene)
    op = assemble_K(scene, inter, mode)
    exc = feed_excitation(scene)
    return solve_dipoles(op, exc, currents), op, exc, inter


def write_state(state, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "mx_re", "mx_im", "my_re", "my_im", "p_re", "p_im"])
        for n in range(len(state.p)):
            mx, my, p = complex(state.m[2 * n]), complex(state.m[2 * n + 1]), complex(state.p[n])
            w.writerow([n, repr(mx.real), repr(mx.imag), repr(my.real), repr(my.imag), repr(p.real), repr(p.imag)])


def read_state(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    m = np.zeros(2 * len(rows), complex)
    p = np.zeros(len(rows), complex)
    for r in rows:
        n = int(r["n"])
        m[2 * n] = float(r["mx_re"]) + 1j * float(r["mx_im"])
        m[2 * n + 1] = float(r["my_re"]) + 1j * float(r["my_im"])
        p[n] = float(r["p_re"]) + 1j * float(r["p_im"])
    return DipoleState(m, p)
