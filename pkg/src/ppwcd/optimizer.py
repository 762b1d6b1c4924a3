"""Sector beamforming design: optimal beam gain, soft-min objective, gradients and layout search.

For fixed geometry the best feed currents toward a direction solve a
generalized Rayleigh quotient with Q = Hc^H Hc (Hc = H(Omega) K^-1 Hbar_f) and
the accepted-power matrix R = Herm(Z_in). The geometry (minor semi-axes l2 and
plate separation h) is then tuned to raise the soft-min of that gain over a
sector, and a successive-halving search picks the layout density exponent.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import json
import os

import numpy as np
from scipy import linalg, optimize

from .constants import EPS0, ETA0
from .greens import assemble_blocks, self_terms
from .polarizability import intrinsic_ellipse, intrinsic_ellipse_dl2, intrinsic_of
from .power import feed_coupling, feed_feed, self_impedance
from .radiation import channel_ff
from .scene import Clearances, EllipticIris, LayoutSampler, iris_layout, save_scene
from .solver import factor_operator, feed_excitation, inverse_polarizability, solve_scene


class DegenerateEigenvalueError(ArithmeticError):
    """Dominant generalized eigenvalue is repeated; its derivative is not defined."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class IndefiniteRError(ValueError):
    """Accepted-power matrix is not positive definite (passivity broken upstream)."""


# ---------------------------------------------------------------- design spec

def sector_directions(theta_deg=(0.0, 30.0, 2.0), phi_deg=(0.0, 90.0, 2.0)):
    """(T, 2) array of (theta, phi) in radians on an inclusive degree lattice."""
    def axis(lo, hi, step):
        if step <= 0 or hi < lo:
            raise ValueError("sector axis needs lo <= hi and a positive step")
        return np.radians(np.linspace(lo, hi, int(round((hi - lo) / step)) + 1))

    th, ph = axis(*theta_deg), axis(*phi_deg)
    T, P = np.meshgrid(th, ph, indexing="ij")
    return np.stack([T.ravel(), P.ravel()], -1)


@dataclass(frozen=True)
class DesignSpec:
    directions: np.ndarray          # (T, 2) radians
    n_elements: int
    l2_min: float
    l1: float
    h_min: float
    h_max: float
    gammas: tuple = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
    n_init: int = 16
    n_final: int = 128
    alpha: float | None = None
    p_tot: float = 10.0
    r: float = 1.0
    restarts: int = 3
    max_iter: int = 500
    clearances: Clearances | None = None

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.directions, float))
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if d.shape[1] != 2 or len(d) < 1:
            raise ValueError("directions must be a non-empty (T, 2) array")
        if not 0 < self.l2_min <= self.l1:
            raise ValueError("need 0 < l2_min <= l1")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if not self.gammas or min(self.gammas) < 0:
            raise ValueError("gamma candidates must be a non-empty set of values >= 0")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.n_elements < 1 or self.n_init < 1 or self.n_final < 1 or self.restarts < 1:
            raise ValueError("element count, budgets and restarts must be positive")
        if not (self.p_tot > 0 and self.r > 0):
            raise ValueError("total power and reference distance must be positive")


def design_spec_from_dict(d):
    if "directions_deg" in d:
        dirs = np.radians(np.asarray(d["directions_deg"], float))
    else:
        s = d.get("sector", {})
        dirs = sector_directions(tuple(s.get("theta_deg", (0, 30, 2))), tuple(s.get("phi_deg", (0, 90, 2))))
    clr = d.get("clearances")
    return DesignSpec(
        directions=dirs, n_elements=int(d["n_elements"]), l2_min=float(d["l2_min_m"]), l1=float(d["l1_m"]),
        h_min=float(d["h_min_m"]), h_max=float(d["h_max_m"]),
        gammas=tuple(d.get("gammas", (0.0, 0.5, 1.0, 1.5, 2.0, 2.5))),
        n_init=int(d.get("n_init", 16)), n_final=int(d.get("n_final", 128)), alpha=d.get("alpha"),
        p_tot=float(d.get("p_tot_w", 10.0)), r=float(d.get("r_m", 1.0)), restarts=int(d.get("restarts", 3)),
        max_iter=int(d.get("max_iter", 500)), clearances=None if clr is None else Clearances(**clr),
    )


def load_design_spec(path):
    with open(path) as fh:
        return design_spec_from_dict(json.load(fh))


# ---------------------------------------------------------------- beam gain

@dataclass(frozen=True)
class BeamGainResult:
    g: float                # W/sr
    i_opt: np.ndarray       # feed currents on the power boundary
    lambda_max: float


def gain_dbi(g, p_tot):
    return 10.0 * np.log10(4 * np.pi * np.asarray(g, float) / p_tot)


def _currents_channel(scene, directions, r):
    """Hc (T, 2, Nf) and R from a plain scene solve."""
    nf = len(scene.feeds)
    if nf == 0:
        raise ValueError("beamforming needs at least one feed")
    _, op, exc, _ = solve_scene(scene, np.zeros(nf))
    a = op.active
    X = op.solve(exc.stacked[a])
    k, h = scene.k, scene.h
    Z = self_impedance(k, h, scene.wire_radius) * np.eye(nf) - h * feed_feed(scene) - h * feed_coupling(scene)[:, a] @ X
    R = 0.5 * (Z + Z.conj().T)
    d = np.atleast_2d(directions)
    H = channel_ff(scene, d[:, 0], d[:, 1], r).H[:, a]
    return (H @ X).reshape(len(d), 2, nf), R


def beam_gain(scene, direction, p_tot, r=1.0):
    """Largest radiation intensity toward ``direction`` under 0.5 i^H R i <= p_tot."""
    Hc, R = _currents_channel(scene, np.asarray(direction, float).reshape(1, 2), r)
    Q = Hc[0].conj().T @ Hc[0]
    try:
        w, V = linalg.eigh(Q, R)
    except linalg.LinAlgError as exc:
        raise IndefiniteRError("accepted-power matrix R is not positive definite") from exc
    lam = float(w[-1])
    u = V[:, -1]
    u = u / np.sqrt(np.real(np.vdot(u, R @ u)))
    return BeamGainResult(r**2 / ETA0 * p_tot * lam, np.sqrt(2 * p_tot) * u, lam)


def softmin(g, alpha):
    """(J, weights) for J = -(1/alpha) ln sum exp(-alpha g), max-shifted."""
    g = np.asarray(g, float)
    m = g.min()
    z = np.exp(-alpha * (g - m))
    s = z.sum()
    return float(m - np.log(s) / alpha), z / s


def default_alpha(g):
    return 5.0 / float(np.median(g))


# ---------------------------------------------------------------- cached layout model

@dataclass
class _Eval:
    g: np.ndarray
    lam: np.ndarray
    J: float | None = None
    grad: np.ndarray | None = None     # d/d(l2_1..l2_N, h)


class LayoutModel:
    """A fixed layout with everything that depends only on positions precomputed.

    The waveguide interactions scale as 1/h and the free-space ones do not
    depend on h; h times the feed coupling is h-independent too.
    """

    def __init__(self, scene, directions, p_tot, r=1.0):
        if not scene.feeds:
            raise ValueError("beamforming needs at least one feed")
        self.scene = scene
        self.directions = np.atleast_2d(np.asarray(directions, float))
        self.p_tot, self.r = float(p_tot), float(r)
        self.n = len(scene.elements)
        self.k = scene.k
        h0 = scene.h
        wg, fs = assemble_blocks(scene.positions(), self.k, h0)
        self.wg_h = wg * h0
        self.fs = fs
        self.Hbar = feed_excitation(scene).stacked
        self.hGf = h0 * feed_coupling(scene)
        self.Gff = feed_feed(scene)
        d = self.directions
        self.H = channel_ff(scene, d[:, 0], d[:, 1], self.r).H
        self.irises = all(isinstance(e.response, EllipticIris) for e in scene.elements)
        if self.irises:
            self.l1 = np.array([e.response.l1 for e in scene.elements])
            self.rot = np.array([e.response.rotation_deg == 90 for e in scene.elements])
        self.intrinsic = np.array([intrinsic_of(e, scene.omega) is not None for e in scene.elements], bool)

    # -- inverse polarizability and its derivatives
    def _ainv_iris(self, l2, h):
        k = self.k
        ae, axx, ayy = intrinsic_ellipse(self.l1, l2)
        axx, ayy = np.where(self.rot, ayy, axx), np.where(self.rot, axx, ayy)
        g0, _ = self_terms(k, h)
        be = k**3 / (3 * np.pi) + k**2 / (4.0 * h)
        d = np.empty(3 * self.n, complex)
        d[0:2 * self.n:2] = 1.0 / axx - 1j * g0
        d[1:2 * self.n:2] = 1.0 / ayy - 1j * g0
        d[2 * self.n:] = (1.0 / ae + 1j * be) / EPS0
        return d

    def _dainv_dl2(self, l2):
        ae, axx, ayy = intrinsic_ellipse(self.l1, l2)
        dae, dxx, dyy = intrinsic_ellipse_dl2(self.l1, l2)
        axx, ayy, dxx, dyy = (np.where(self.rot, ayy, axx), np.where(self.rot, axx, ayy),
                              np.where(self.rot, dyy, dxx), np.where(self.rot, dxx, dyy))
        d = np.empty(3 * self.n, float)
        d[0:2 * self.n:2] = -dxx / axx**2
        d[1:2 * self.n:2] = -dyy / ayy**2
        d[2 * self.n:] = -dae / ae**2 / EPS0
        return d

    def _dainv_dh(self, h):
        k = self.k
        d = np.zeros(3 * self.n, complex)
        m = np.repeat(self.intrinsic, 2)
        d[:2 * self.n][m] = -1j * k**2 / (8 * h**2)
        d[2 * self.n:][self.intrinsic] = -1j * k**2 / (4 * h**2) / EPS0
        return d

    def scene_at(self, l2, h):
        sc = self.scene.with_h(h)
        return sc.with_l2(l2) if l2 is not None else sc

    def evaluate(self, l2=None, h=None, alpha=None, grad=False):
        h = self.scene.h if h is None else float(h)
        n, nf = self.n, len(self.scene.feeds)
        if self.irises and l2 is not None:
            l2 = np.asarray(l2, float)
            a = np.arange(3 * n)
            Ainv = np.diag(self._ainv_iris(l2, h))
        else:
            if grad and l2 is not None:
                raise ValueError("l2 gradients need elliptic iris elements")
            A, a = inverse_polarizability(self.scene_at(l2, h))
            Ainv = A[np.ix_(a, a)]
        K = Ainv - self.wg_h[np.ix_(a, a)] / h - self.fs[np.ix_(a, a)]
        op = factor_operator(K, a, n, warn=False)
        X = op.solve(self.Hbar[a])
        Zs = self_impedance(self.k, h, self.scene.wire_radius)
        hGf = self.hGf[:, a]
        Z = Zs * np.eye(nf) - h * self.Gff - hGf @ X
        R = 0.5 * (Z + Z.conj().T)
        try:
            L = np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise IndefiniteRError("accepted-power matrix R is not positive definite") from exc
        T = len(self.directions)
        Ht = self.H[:, a]
        Hc = Ht @ X                                       # (2T, Nf)
        Y = linalg.solve_triangular(L, Hc.conj().T, lower=True)   # L^-1 Hc^H
        W = Y.conj().T.reshape(T, 2, nf)                  # Hc_t L^-H
        M = np.einsum("tin,tjn->tij", W, W.conj())
        ev, evec = np.linalg.eigh(M)
        lam = np.clip(ev[:, -1], 0.0, None)
        kappa = self.r**2 / ETA0 * self.p_tot
        g = kappa * lam
        out = _Eval(g, lam)
        if alpha is None:
            return out
        out.J, w = softmin(g, alpha)
        if not grad:
            return out
        if nf > 1:
            gap = lam - ev[:, -2]
            bad = np.flatnonzero(gap <= 1e-8 * np.maximum(lam, 1e-300))
            if len(bad):
                raise DegenerateEigenvalueError(
                    f"dominant eigenvalue repeated for direction index {bad[0]}")
        # u_t = L^-H W_t^H v_t / sqrt(lam_t), R-normalized
        v = evec[:, :, -1]
        yv = np.einsum("tin,ti->nt", W.conj(), v) / np.sqrt(np.where(lam > 0, lam, 1.0))
        U = linalg.solve_triangular(L.conj().T, yv, lower=False)     # (Nf, T)
        A_ = X @ U                                                   # a_t
        V = np.einsum("tin,nt->ti", Hc.reshape(T, 2, nf), U)         # Hc_t u_t
        B = np.einsum("tin,ti->nt", Ht.reshape(T, 2, -1).conj(), V)  # H_t^H Hc_t u_t
        Dh = hGf.conj().T @ U
        F = op.solve_h(-2.0 * B - lam[None, :] * Dh)
        om = kappa * w
        P = (F.conj() * om) @ A_.T
        gr = np.zeros(n + 1)
        if l2 is not None:
            dK = self._dainv_dl2(l2)
            t = np.real(dK * np.diag(P))
            gr[:n] = t[0:2 * n:2] + t[1:2 * n:2] + t[2 * n:]
        dA_h = self._dainv_dh(h)[a]
        dK_h = np.diag(dA_h) + self.wg_h[np.ix_(a, a)] / h**2
        uu = np.sum(np.abs(U) ** 2, axis=0)
        uGu = np.real(np.einsum("nt,nm,mt->t", U.conj(), self.Gff, U))
        gr[n] = np.real(np.sum(dK_h * P)) - np.sum(om * lam * (np.real(Zs / h) * uu - uGu))
        out.grad = gr
        return out


def softmin_objective(scene, spec, alpha=None):
    """(J_alpha, per-direction g) for the scene's current geometry."""
    g = LayoutModel(scene, spec.directions, spec.p_tot, spec.r).evaluate().g
    a = alpha if alpha is not None else (spec.alpha if spec.alpha is not None else default_alpha(g))
    return softmin(g, a)[0], g


def grad_J(scene, spec, wrt=("l2", "h"), alpha=None):
    """Analytic gradient of J_alpha; l2 components (one per element) then h, as requested."""
    model = LayoutModel(scene, spec.directions, spec.p_tot, spec.r)
    if alpha is None:
        alpha = spec.alpha if spec.alpha is not None else default_alpha(model.evaluate().g)
    l2 = None
    if "l2" in wrt:
        if not model.irises:
            raise ValueError("l2 gradients need elliptic iris elements")
        l2 = np.array([e.response.l2 for e in scene.elements])
    ev = model.evaluate(l2, scene.h, alpha, grad=True)
    parts = []
    for name in wrt:
        if name == "l2":
            parts.append(ev.grad[:-1])
        elif name == "h":
            parts.append(ev.grad[-1:])
        else:
            raise ValueError(f"unknown gradient variable {name!r}")
    return np.concatenate(parts)


# ---------------------------------------------------------------- inner optimizer

@dataclass(frozen=True)
class InnerResult:
    l2: np.ndarray
    h: float
    J: float
    J_init: float
    alpha: float
    g: np.ndarray
    scene: object
    n_iter: int


def _ascend(model, x0, lo, hi, alpha, max_iter):
    n = model.n
    span = hi - lo

    def to_x(z):
        return np.where(z >= 1.0, hi, np.where(z <= 0.0, lo, lo + z * span))

    J0 = model.evaluate(x0[:n], x0[n], alpha).J
    scale = 1.0 / max(abs(J0), 1e-300)

    def fun(z):
        x = to_x(z)
        try:
            ev = model.evaluate(x[:n], x[n], alpha, grad=True)
        except DegenerateEigenvalueError as exc:
            exc.iterate = (x[:n].copy(), float(x[n]))
            raise
        return -ev.J * scale, -ev.grad * span * scale

    z0 = np.clip((x0 - lo) / np.where(span > 0, span, 1.0), 0.0, 1.0)
    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * (n + 1),
                            options={"maxiter": max_iter, "ftol": 1e-8, "gtol": 1e-12})
    x = to_x(res.x)
    J = model.evaluate(x[:n], x[n], alpha).J
    if J < J0:
        return x0, J0, J0, int(res.nit)
    return x, J, J0, int(res.nit)


def optimize_l2_h(scene, spec, alpha=None, rng=None):
    """Projected quasi-Newton ascent of J_alpha over l2 in [l2_min, l1] and h in [h_min, h_max].

    The first start is the box midpoint; the remaining ``spec.restarts - 1``
    starts are drawn uniformly from the box. The best result is kept.
    """
    rng = np.random.default_rng(rng)
    model = LayoutModel(scene, spec.directions, spec.p_tot, spec.r)
    if not model.irises:
        raise ValueError("geometry optimization needs elliptic iris elements")
    n = model.n
    lo = np.r_[np.full(n, spec.l2_min), spec.h_min]
    hi = np.r_[np.minimum(spec.l1, model.l1), spec.h_max]
    x_mid = 0.5 * (lo + hi)
    if alpha is None:
        alpha = spec.alpha if spec.alpha is not None else default_alpha(model.evaluate(x_mid[:n], x_mid[n]).g)
    starts = [x_mid] + [lo + rng.random(n + 1) * (hi - lo) for _ in range(spec.restarts - 1)]
    best = None
    for x0 in starts:
        x, J, J0, nit = _ascend(model, x0, lo, hi, alpha, spec.max_iter)
        if best is None or J > best[1]:
            best = (x, J, J0, nit)
    x, J, J0, nit = best
    g = model.evaluate(x[:n], x[n]).g
    return InnerResult(x[:n].copy(), float(x[n]), J, J0, float(alpha), g, model.scene_at(x[:n], x[n]), nit)


# ---------------------------------------------------------------- successive halving

@dataclass(frozen=True)
class DesignResult:
    gamma_star: float
    scene: object
    l2_star: np.ndarray
    h_star: float
    directions: np.ndarray
    g: np.ndarray
    p_tot: float
    j_star: float
    alpha: float
    rounds: tuple = field(default_factory=tuple)   # (gamma, budget, mean score) per evaluated arm

    @property
    def g_min_dbi(self):
        return float(gain_dbi(self.g.min(), self.p_tot))

    @property
    def g_max_dbi(self):
        return float(gain_dbi(self.g.max(), self.p_tot))


def _design_template(spec, template):
    sc = template.with_elements([])
    if spec.clearances is not None:
        sc = replace(sc, clearances=spec.clearances)
    c = replace(sc.clearances, l1=spec.l1, l2_min=spec.l2_min, h_min=spec.h_min, h_max=spec.h_max)
    return replace(sc, clearances=c, h=0.5 * (spec.h_min + spec.h_max))


def design_run(spec, scene_template, rng_seed, workers=None):
    """Successive halving over the layout exponent gamma, then a final run under the winner."""
    if rng_seed is None or int(rng_seed) < 0:
        raise ValueError("design runs need a non-negative integer seed")
    seed = int(rng_seed)
    template = _design_template(spec, scene_template)
    sampler = LayoutSampler(template, spec.l1)
    l2_init = 0.5 * (spec.l2_min + spec.l1)

    def job(args):
        gamma, key = args
        rng = np.random.default_rng(np.random.SeedSequence([seed, *key]))
        pos = sampler.sample(spec.n_elements, gamma, rng=rng)
        return optimize_l2_h(iris_layout(template, pos, spec.l1, l2_init), spec, rng=rng)

    workers = workers or min(8, os.cpu_count() or 1)
    rounds = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        arms = list(range(len(spec.gammas)))
        budget, rnd = spec.n_init, 0
        while len(arms) > 1:
            tasks = [(spec.gammas[c], (0, rnd, c, j)) for c in arms for j in range(budget)]
            res = list(pool.map(job, tasks))
            scores = {c: float(np.mean([r.J for r in res[i * budget:(i + 1) * budget]]))
                      for i, c in enumerate(arms)}
            rounds += [(spec.gammas[c], budget, scores[c]) for c in arms]
            ranked = sorted(arms, key=lambda c: (-scores[c], c))
            arms = sorted(ranked[:max(1, len(arms) // 2)])
            budget *= 2
            rnd += 1
        gamma = spec.gammas[arms[0]]
        final = list(pool.map(job, [(gamma, (1, 0, arms[0], j)) for j in range(spec.n_final)]))
    best = max(range(len(final)), key=lambda j: (final[j].g.min(), -j))
    b = final[best]
    return DesignResult(gamma, b.scene, b.l2, b.h, spec.directions.copy(), b.g, spec.p_tot, b.J, b.alpha,
                        tuple(rounds))


def write_design_result(result, out_dir):
    """Optimized scene JSON, per-direction gain CSV and a JSON summary."""
    os.makedirs(out_dir, exist_ok=True)
    save_scene(result.scene, os.path.join(out_dir, "scene.json"))
    with open(os.path.join(out_dir, "gains.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_deg", "phi_deg", "g_w_sr", "gain_dbi"])
        dbi = gain_dbi(result.g, result.p_tot)
        for (t, p), g, G in zip(result.directions, result.g, dbi):
            w.writerow([repr(float(np.degrees(t))), repr(float(np.degrees(p))), repr(float(g)), repr(float(G))])
    summary = {
        "gamma_star": result.gamma_star,
        "h_star_m": result.h_star,
        "l2_star_m": [float(v) for v in result.l2_star],
        "j_star_w_sr": result.j_star,
        "alpha": result.alpha,
        "g_min_w_sr": float(result.g.min()),
        "g_max_w_sr": float(result.g.max()),
        "G_min_dbi": result.g_min_dbi,
        "G_max_dbi": result.g_max_dbi,
        "rounds": [{"gamma": g, "budget": b, "mean_softmin_w_sr": s} for g, b, s in result.rounds],
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
