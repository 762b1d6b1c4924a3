"""Green's functions between dipoles on the top plate of a parallel-plate waveguide.

Every coupling is the sum of a waveguide (WG) part, carried by the TEM
cylindrical wave between the plates, and a free-space (FS) part above the
top plate that already includes the ground-plane image. Entries are "field
per unit dipole moment": magnetic moments in A*m^2, electric moments in C*m.

Pair geometry is (rho, psi) with psi = atan2(y_obs - y_src, x_obs - x_src).
"""
from dataclasses import dataclass

import numpy as np

from .constants import EPS0, ETA0
from .specfun import hankel2, hankel2_all


class GeometryError(ValueError):
    pass


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(~(rho > 0)):
        raise GeometryError("pair distance rho must be > 0")
    return rho


def _mat2(xx, xy, yy):
    out = np.empty(np.shape(xx) + (2, 2), dtype=complex)
    out[..., 0, 0] = xx
    out[..., 0, 1] = xy
    out[..., 1, 0] = xy
    out[..., 1, 1] = yy
    return out


def g_mm_wg(rho, psi, k, h):
    rho = _check_rho(rho)
    h0, _, h2 = hankel2_all(k * rho)
    c = -1j * k**2 / (8.0 * h)
    c2, s2 = np.cos(2 * psi), np.sin(2 * psi)
    return _mat2(c * (h0 + c2 * h2), c * s2 * h2, c * (h0 - c2 * h2))


def g_mm_fs(rho, psi, k):
    rho = _check_rho(rho)
    kr = k * rho
    scale = k**2 * np.exp(-1j * kr) / (2 * np.pi * rho)
    a = (3.0 / kr**2 + 3j / kr - 1.0) * scale
    b = (1.0 - 1j / kr - 1.0 / kr**2) * scale
    c, s = np.cos(psi), np.sin(psi)
    return _mat2(a * c * c + b, a * c * s, a * s * s + b)


def g_mm(rho, psi, k, h):
    """2x2 magnetic field at the observer per unit in-plane magnetic moment."""
    return g_mm_wg(rho, psi, k, h) + g_mm_fs(rho, psi, k)


def _vec2(zx, zy):
    return np.stack([zx, zy], axis=-1)


def g_em_wg(rho, psi, k, h, eta=ETA0):
    rho = _check_rho(rho)
    c = k**2 * eta / (4.0 * h) * hankel2(1, k * rho)
    return _vec2(-c * np.sin(psi), c * np.cos(psi))


def g_em_fs(rho, psi, k, eta=ETA0):
    rho = _check_rho(rho)
    kr = k * rho
    c = eta * k**2 * np.exp(-1j * kr) / (2 * np.pi * rho) * (1.0 - 1j / kr)
    return _vec2(-c * np.sin(psi), c * np.cos(psi))


def g_em(rho, psi, k, h, eta=ETA0):
    """[E_z per m_x, E_z per m_y] at the observer."""
    return g_em_wg(rho, psi, k, h, eta) + g_em_fs(rho, psi, k, eta)


def g_me_wg(rho, psi, k, h, eta=ETA0, eps0=EPS0):
    # H_x, H_y of a z-directed electric dipole inside the guide
    rho = _check_rho(rho)
    c = k**2 / (4.0 * h * eta * eps0) * hankel2(1, k * rho)
    return _vec2(-c * np.sin(psi), c * np.cos(psi))


def g_me_fs(rho, psi, k, eta=ETA0, eps0=EPS0):
    # duality applied to the FS em pair, same observer/source orientation
    return g_em_fs(rho, psi, k, eta) / (eta**2 * eps0)


def g_me(rho, psi, k, h, eta=ETA0, eps0=EPS0):
    """[H_x per p_z, H_y per p_z] at the observer."""
    return g_me_wg(rho, psi, k, h, eta, eps0) + g_me_fs(rho, psi, k, eta, eps0)


def g_ee_wg(rho, k, h, eps0=EPS0):
    rho = _check_rho(rho)
    return k**2 / (4j * eps0 * h) * hankel2(0, k * rho)


def g_ee_fs(rho, k, eps0=EPS0):
    rho = _check_rho(rho)
    kr = k * rho
    return (1.0 - 1j / kr - 1.0 / kr**2) * k**2 * np.exp(-1j * kr) / (2 * eps0 * np.pi * rho)


def g_ee(rho, k, h, eps0=EPS0):
    """E_z at the observer per unit z-directed electric moment."""
    return g_ee_wg(rho, k, h, eps0) + g_ee_fs(rho, k, eps0)


def self_terms(k, h, eps0=EPS0):
    """Imaginary parts of the self Green's functions (mm scalar on I2, ee scalar)."""
    im_mm = -(k**3 / (3 * np.pi) + k**2 / (8.0 * h))
    im_ee = -(k**3 / (3 * eps0 * np.pi) + k**2 / (4.0 * eps0 * h))
    return im_mm, im_ee


def pair_geometry(obs, src):
    """rho, psi for every (observer, source) pair; obs (P, 2), src (Q, 2)."""
    d = np.asarray(obs, float)[:, None, :] - np.asarray(src, float)[None, :, :]
    return np.hypot(d[..., 0], d[..., 1]), np.arctan2(d[..., 1], d[..., 0])


@dataclass(frozen=True)
class InteractionSet:
    Gmm: np.ndarray
    Gme: np.ndarray
    Gem: np.ndarray
    Gee: np.ndarray
    self_im_mm: float
    self_im_ee: float
    # waveguide share of the mutual 3N x 3N matrix; scales as 1/h
    wg_mutual: np.ndarray

    @property
    def n(self):
        return self.Gee.shape[0]

    def mutual(self):
        return np.block([[self.Gmm, self.Gme], [self.Gem, self.Gee]])

    def self_imag_diag(self):
        n = self.n
        return np.concatenate([np.full(2 * n, self.self_im_mm), np.full(n, self.self_im_ee)])

    def full(self):
        """Mutual blocks plus j*Im of the self terms on the diagonal."""
        return self.mutual() + 1j * np.diag(self.self_imag_diag())


def _interleave_mm(blocks):
    # (N, N, 2, 2) -> (2N, 2N) with [2n:2n+2, 2j:2j+2] = blocks[n, j]
    n = blocks.shape[0]
    return blocks.transpose(0, 2, 1, 3).reshape(2 * n, 2 * n)


def assemble_blocks(positions, k, h, eta=ETA0, eps0=EPS0):
    """WG and FS mutual matrices, each 3N x 3N, ordered [m_x1, m_y1, ..., p_1, ...]."""
    pos = np.asarray(positions, float).reshape(-1, 2)
    n = len(pos)
    rho, psi = pair_geometry(pos, pos)
    off = ~np.eye(n, dtype=bool)
    if n > 1 and np.any(rho[off] <= 0):
        i, j = np.argwhere((rho <= 0) & off)[0]
        raise GeometryError(f"elements {i} and {j} coincide")
    r, p = rho[off], psi[off]
    parts = {}
    for tag in ("wg", "fs"):
        mm = np.zeros((n, n, 2, 2), complex)
        em = np.zeros((n, n, 2), complex)
        me = np.zeros((n, n, 2), complex)
        ee = np.zeros((n, n), complex)
        if n > 1:
            if tag == "wg":
                mm[off] = g_mm_wg(r, p, k, h)
                em[off] = g_em_wg(r, p, k, h, eta)
                me[off] = g_me_wg(r, p, k, h, eta, eps0)
                ee[off] = g_ee_wg(r, k, h, eps0)
            else:
                mm[off] = g_mm_fs(r, p, k)
                em[off] = g_em_fs(r, p, k, eta)
                me[off] = g_me_fs(r, p, k, eta, eps0)
                ee[off] = g_ee_fs(r, k, eps0)
        # reciprocity exactly: the (j, n) block is the transpose of the (n, j) block
        iu = np.triu_indices(n, 1)
        mm[iu[1], iu[0]] = mm[iu].transpose(0, 2, 1)
        Gmm = _interleave_mm(mm)
        Gem = em.reshape(n, 2 * n)
        Gme = me.transpose(0, 2, 1).reshape(2 * n, n)
        parts[tag] = np.block([[Gmm, Gme], [Gem, ee]])
    return parts["wg"], parts["fs"]


def assemble_interactions(scene):
    k, h = scene.k, scene.h
    wg, fs = assemble_blocks(scene.positions(), k, h)
    G = wg + fs
    n = len(scene.elements)
    m2 = 2 * n
    im_mm, im_ee = self_terms(k, h)
    out = InteractionSet(
        Gmm=G[:m2, :m2], Gme=G[:m2, m2:], Gem=G[m2:, :m2], Gee=G[m2:, m2:],
        self_im_mm=float(im_mm), self_im_ee=float(im_ee), wg_mutual=wg,
    )
    scale = 1.0 / (ETA0**2 * EPS0)
    ref = max(np.abs(out.Gme).max(initial=0.0), 1e-300)
    if np.abs(out.Gme + scale * out.Gem.T).max(initial=0.0) > 1e-10 * ref:
        raise AssertionError("Gme and Gem violate the duality transpose relation")
    return out
