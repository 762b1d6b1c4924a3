"""Power bookkeeping: dipole supplied/radiated power and the feed input impedance."""
from dataclasses import dataclass
import csv

import numpy as np

from .constants import ETA0, MU0
from .greens import GeometryError, g_ee_wg, g_em_wg, pair_geometry
from .solver import assemble_K
from .specfun import hankel2


@dataclass(frozen=True)
class PowerBalance:
    p_sup: float
    p_rad: float
    slack: float

    def tol_abs(self):
        return 1e-9 * max(self.p_sup, 1e-6)

    @property
    def passive(self):
        return self.slack >= -self.tol_abs()


def moment_weights(n):
    """Diagonal of S: mu0 on magnetic moments, 1 on electric moments."""
    return np.concatenate([np.full(2 * n, MU0), np.ones(n)])


def _imform(x, S, M):
    return float(np.imag(np.vdot(x, S * (M @ x))))


def power_balance(scene, interactions, state, op=None):
    """P_sup = w/2 Im{x^H S K x}, P_rad = -w/2 Im{x^H S G_full x}."""
    n = len(scene.elements)
    x = state.x
    if len(x) != 3 * n or interactions.n != n:
        raise ValueError("state, scene and interactions disagree in size")
    if op is None:
        op = assemble_K(scene, interactions, "unified", warn=False)
    a = op.active
    S = moment_weights(n)
    xa = x[a]
    if np.any(np.delete(x, a) != 0):
        raise ValueError("state excites dipoles that the scene does not have")
    w = scene.omega
    G = interactions.full()[np.ix_(a, a)]
    p_sup = 0.5 * w * _imform(xa, S[a], op.K)
    p_rad = -0.5 * w * _imform(xa, S[a], G)
    return PowerBalance(p_sup, p_rad, p_sup - p_rad)


def self_impedance(k, h, wire_radius, eta=ETA0):
    """Thin-wire feed self impedance 0.25 eta k h (1 - j (2/pi) ln(0.89 k b_w))."""
    return 0.25 * eta * k * h * (1.0 - 1j * (2.0 / np.pi) * np.log(0.89 * k * wire_radius))


def feed_feed(scene):
    """G_ff: E_z at feed i per unit current at feed j, zero diagonal."""
    fp = scene.feed_positions()
    nf = len(fp)
    G = np.zeros((nf, nf), complex)
    if nf > 1:
        rho, _ = pair_geometry(fp, fp)
        off = ~np.eye(nf, dtype=bool)
        if np.any(rho[off] <= 0):
            i, j = np.argwhere((rho <= 0) & off)[0]
            raise GeometryError(f"feeds {i} and {j} coincide")
        G[off] = -0.25 * scene.k * ETA0 * hankel2(0, scene.k * rho[off])
    return G


def feed_coupling(scene):
    """G_f = [G_fm, G_fp]: waveguide E_z at each feed per unit dipole moment (Nf x 3N)."""
    fp, pos = scene.feed_positions(), scene.positions()
    nf, n = len(fp), len(pos)
    G = np.zeros((nf, 3 * n), complex)
    if nf and n:
        rho, psi = pair_geometry(fp, pos)
        if np.any(rho <= 0):
            raise GeometryError("an element coincides with a feed")
        G[:, :2 * n] = g_em_wg(rho, psi, scene.k, scene.h).reshape(nf, 2 * n)
        G[:, 2 * n:] = g_ee_wg(rho, scene.k, scene.h)
    return G


@dataclass(frozen=True)
class InputImpedance:
    Z: np.ndarray
    R: np.ndarray


def input_impedance(scene, interactions, op, excitation):
    """Z_in = Z_self I - h (G_ff + G_f K^-1 Hbar_f)."""
    nf = len(scene.feeds)
    k, h = scene.k, scene.h
    Z = self_impedance(k, h, scene.wire_radius) * np.eye(nf, dtype=complex) - h * feed_feed(scene)
    if len(op.active):
        a = op.active
        X = op.solve(excitation.stacked[a])
        Z = Z - h * (feed_coupling(scene)[:, a] @ X)
    R = 0.5 * (Z + Z.conj().T)
    return InputImpedance(Z, R)


def accepted_power(Z, currents):
    i = np.asarray(currents, complex)
    return 0.5 * float(np.real(np.vdot(i, Z.R @ i)))


def source_voltages(Z, currents, Z_load=0.0):
    i = np.asarray(currents, complex)
    return Z.Z @ i + Z_load * i


def write_impedance_sweep(rows, path):
    """rows: iterable of (f_hz, Z matrix)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f_hz", "i", "j", "Zre_ohm", "Zim_ohm"])
        for f, Z in rows:
            for i in range(Z.shape[0]):
                for j in range(Z.shape[1]):
                    w.writerow([repr(float(f)), i, j, repr(float(Z[i, j].real)), repr(float(Z[i, j].imag))])
