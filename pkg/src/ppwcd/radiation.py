"""Fields radiated above the top plate: NF/FF channel matrices, patterns and metrics.

Rows of a channel come in pairs (theta, phi polarization) per observation
point; columns follow the dipole ordering [m_x1, m_y1, ..., p_1, ...].
Angles are radians; theta is measured from +z and stays in the upper half-space.
"""
from dataclasses import dataclass
import csv

import numpy as np

from .constants import EPS0, ETA0


class RadiationError(ValueError):
    pass


def theta_hat(theta, phi):
    return np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)], -1)


def phi_hat(phi):
    phi = np.asarray(phi, float)
    return np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], -1)


def spherical_to_cartesian(r, theta, phi):
    r, theta, phi = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float), np.asarray(phi, float))
    st = np.sin(theta)
    return np.stack([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)], -1)


def projection_matrix(obs, r_n, center=(0.0, 0.0)):
    """T mapping the local (theta, phi) basis of dipole n to the common basis at the observer.

    obs is (r, theta, phi) about ``center``; r_n is the in-plane dipole position.
    """
    r, th, ph = obs
    s = spherical_to_cartesian(r, th, ph)
    d = s - np.array([r_n[0] - center[0], r_n[1] - center[1], 0.0])
    R = np.linalg.norm(d)
    if R == 0:
        raise RadiationError("observer coincides with the dipole")
    thn, phn = np.arccos(np.clip(d[2] / R, -1, 1)), np.arctan2(d[1], d[0])
    tl, pl = theta_hat(th, ph), phi_hat(ph)
    tn, pn = theta_hat(thn, phn), phi_hat(phn)
    return np.array([[tl @ tn, tl @ pn], [pl @ tn, pl @ pn]])


@dataclass(frozen=True)
class ChannelMatrix:
    H: np.ndarray      # 2L x 3N
    regime: str

    def compose(self, X):
        """Currents-to-fields channel Hc = H X for X = K^-1 Hbar_f (full 3N rows)."""
        return self.H @ X

    def fields(self, state):
        e = self.H @ state.x
        return e[0::2], e[1::2]


def _rows(k, g, stn, ctn, spn, cpn, T=None):
    """Assemble channel rows from per-(point, dipole) angles and propagators g."""
    L, N = g.shape
    a_tx, a_ty = spn * g, -cpn * g
    a_px, a_py = cpn * ctn * g, spn * ctn * g
    a_e = -stn * g
    if T is not None:
        t00, t01, t10, t11 = T
        a_tx, a_px = t00 * a_tx + t01 * a_px, t10 * a_tx + t11 * a_px
        a_ty, a_py = t00 * a_ty + t01 * a_py, t10 * a_ty + t11 * a_py
        a_e, a_ep = t00 * a_e, t10 * a_e
    else:
        a_ep = np.zeros_like(a_e)
    H = np.empty((2 * L, 3 * N), complex)
    H[0::2, 0:2 * N:2] = ETA0 * k**2 * a_tx
    H[0::2, 1:2 * N:2] = ETA0 * k**2 * a_ty
    H[1::2, 0:2 * N:2] = ETA0 * k**2 * a_px
    H[1::2, 1:2 * N:2] = ETA0 * k**2 * a_py
    H[0::2, 2 * N:] = k**2 / EPS0 * a_e
    H[1::2, 2 * N:] = k**2 / EPS0 * a_ep
    return H


def _center(scene, center):
    return scene.plate.center if center is None else np.asarray(center, float)


def channel_nf(scene, r, theta, phi, center=None):
    """Radiative near-field channel at points (r, theta, phi) about the array centre."""
    r, theta, phi = (np.atleast_1d(np.asarray(a, float)) for a in np.broadcast_arrays(r, theta, phi))
    if np.any(theta > 0.5 * np.pi + 1e-12) or np.any(theta < 0):
        raise RadiationError("observation points must lie in the upper half-space (0 <= theta <= pi/2)")
    c = _center(scene, center)
    pos = scene.positions() - c
    s = spherical_to_cartesian(r, theta, phi)
    d = s[:, None, :] - np.concatenate([pos, np.zeros((len(pos), 1))], 1)[None, :, :]
    R = np.linalg.norm(d, axis=-1)
    if np.any(R == 0):
        raise RadiationError("observation point coincides with a dipole")
    k = scene.k
    ctn = np.clip(d[..., 2] / R, -1, 1)
    stn = np.sqrt(np.clip(1 - ctn**2, 0, None))
    phn = np.arctan2(d[..., 1], d[..., 0])
    cpn, spn = np.cos(phn), np.sin(phn)
    # projection T from local to common basis (inner products of unit vectors)
    ct, st = np.cos(theta)[:, None], np.sin(theta)[:, None]
    cp, sp = np.cos(phi)[:, None], np.sin(phi)[:, None]
    cdp = cp * cpn + sp * spn            # cos(phi - phi_n)
    sdp = sp * cpn - cp * spn            # sin(phi - phi_n)
    t00 = ct * ctn * cdp + st * stn
    t01 = ct * sdp
    t10 = -ctn * sdp
    t11 = cdp
    g = np.exp(-1j * k * R) / (2 * np.pi * R)
    H = _rows(k, g, stn, ctn, spn, cpn, (t00, t01, t10, t11))
    return ChannelMatrix(H, "NF")


def channel_ff(scene, theta, phi, r_ref=1.0, center=None):
    """Far-field channel: common angles, R_ln ~ R - u.r_n in the phase, 1/R amplitude."""
    theta, phi = (np.atleast_1d(np.asarray(a, float)) for a in np.broadcast_arrays(theta, phi))
    c = _center(scene, center)
    pos = scene.positions() - c
    k = scene.k
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    sp, cp = np.sin(phi)[:, None], np.cos(phi)[:, None]
    proj = st * cp * pos[:, 0][None, :] + st * sp * pos[:, 1][None, :]
    g = np.exp(-1j * k * (r_ref - proj)) / (2 * np.pi * r_ref)
    one = np.ones_like(proj)
    H = _rows(k, g, st * one, ct * one, sp * one, cp * one)
    return ChannelMatrix(H, "FF")


def aperture_size(positions):
    """Largest distance between two elements."""
    p = np.asarray(positions, float).reshape(-1, 2)
    if len(p) < 2:
        return 0.0
    d = p[:, None, :] - p[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def fraunhofer_distance(D, wavelength):
    return 2.0 * D**2 / wavelength


def reactive_nf_distance(D, wavelength):
    return 0.62 * np.sqrt(D**3 / wavelength)


# ---------------------------------------------------------------- patterns

@dataclass(frozen=True)
class PatternGrid:
    theta: np.ndarray     # n_theta, radians
    phi: np.ndarray       # n_phi, radians, uniform over [0, 2 pi)
    etheta: np.ndarray    # n_theta x n_phi
    ephi: np.ndarray

    @property
    def emag(self):
        return np.sqrt(np.abs(self.etheta) ** 2 + np.abs(self.ephi) ** 2)

    def same_lattice(self, other):
        return (self.theta.shape == other.theta.shape and self.phi.shape == other.phi.shape
                and np.allclose(self.theta, other.theta, atol=1e-9) and np.allclose(self.phi, other.phi, atol=1e-9))


def hemisphere_grid(n_theta, n_phi):
    if n_theta < 2 or n_phi < 2:
        raise RadiationError("pattern grids need at least 2 samples per axis")
    return np.linspace(0.0, 0.5 * np.pi, n_theta), 2 * np.pi * np.arange(n_phi) / n_phi


def solid_angle_weights(theta, phi):
    """Trapezoidal weights in theta (times sin theta); periodic rule in phi."""
    t = np.asarray(theta, float)
    wt = np.zeros(len(t))
    dt = np.diff(t)
    wt[:-1] += 0.5 * dt
    wt[1:] += 0.5 * dt
    wp = np.full(len(phi), 2 * np.pi / len(phi))
    return np.outer(wt * np.sin(t), wp)


def radiation_pattern(scene, state, grid_res=(91, 360), distance="ff", center=None, chunk=4096):
    """Field of a dipole state on the hemisphere lattice, FF (r = 1 m) or NF at ``distance``."""
    th, ph = hemisphere_grid(*grid_res)
    TT, PP = np.meshgrid(th, ph, indexing="ij")
    tf, pf = TT.ravel(), PP.ravel()
    x = state.x
    e = np.empty(2 * len(tf), complex)
    for a in range(0, len(tf), chunk):
        sl = slice(a, a + chunk)
        if distance == "ff":
            ch = channel_ff(scene, tf[sl], pf[sl], 1.0, center)
        else:
            ch = channel_nf(scene, float(distance), tf[sl], pf[sl], center)
        e[2 * a:2 * a + 2 * len(tf[sl])] = ch.H @ x
    shape = TT.shape
    return PatternGrid(th, ph, e[0::2].reshape(shape), e[1::2].reshape(shape))


def directivity(grid):
    e2 = grid.emag**2
    tot = np.sum(solid_angle_weights(grid.theta, grid.phi) * e2)
    if not tot > 0:
        raise RadiationError("zero radiated field")
    return 4 * np.pi * e2 / tot


def directivity_map(scene, state, grid_res=(91, 360)):
    grid = radiation_pattern(scene, state, grid_res, "ff")
    return grid, directivity(grid)


def pattern_metrics(a, b):
    """(eps_pat, eps_int): total-variation distance of normalized patterns, integral mismatch."""
    if not a.same_lattice(b):
        raise RadiationError("patterns are sampled on different grids")
    w = solid_angle_weights(a.theta, a.phi)
    ea, eb = a.emag, b.emag
    Ia, Ib = np.sum(w * ea), np.sum(w * eb)
    if not (Ia > 0 and Ib > 0):
        raise RadiationError("pattern integral is zero")
    eps_pat = 0.5 * np.sum(w * np.abs(ea / Ia - eb / Ib))
    return float(min(eps_pat, 1.0)), float((Ib - Ia) / Ia)


def normalized_intensity(grid):
    e = grid.emag
    top = e.max()
    if not top > 0:
        raise RadiationError("zero radiated field")
    with np.errstate(divide="ignore"):
        return 20 * np.log10(e / top)


def write_pattern(grid, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_deg", "phi_deg", "etheta_re", "etheta_im", "ephi_re", "ephi_im", "emag"])
        mag = grid.emag
        for i, t in enumerate(grid.theta):
            for j, p in enumerate(grid.phi):
                et, ep = complex(grid.etheta[i, j]), complex(grid.ephi[i, j])
                w.writerow([repr(float(np.degrees(t))), repr(float(np.degrees(p))), repr(et.real), repr(et.imag),
                            repr(ep.real), repr(ep.imag), repr(float(mag[i, j]))])


def read_pattern(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise RadiationError(f"{path}: empty pattern file")
    t = np.array([float(r["theta_deg"]) for r in rows])
    p = np.array([float(r["phi_deg"]) for r in rows])
    th = np.unique(t)
    ph = np.unique(p)
    if len(th) * len(ph) != len(rows):
        raise RadiationError(f"{path}: samples do not form a theta x phi lattice")
    it = np.searchsorted(th, t)
    ip = np.searchsorted(ph, p)
    et = np.zeros((len(th), len(ph)), complex)
    ep = np.zeros_like(et)
    et[it, ip] = [float(r["etheta_re"]) + 1j * float(r["etheta_im"]) for r in rows]
    ep[it, ip] = [float(r["ephi_re"]) + 1j * float(r["ephi_im"]) for r in rows]
    return PatternGrid(np.radians(th), np.radians(ph), et, ep)
