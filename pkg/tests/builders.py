"""Scene factories shared by the test modules."""
import numpy as np

from ppwcd.constants import C0, EPS0, MU0
from ppwcd.polarizability import FieldGrid
from ppwcd.scene import (Clearances, Element, EllipticIris, ExplicitPolarizability, Feed, Plate, Scene,
                         iris_layout, sample_layout)

F0 = 10e9
L1 = 3.6e-3


def spread_points(rng, n, half, min_sep):
    pts = []
    while len(pts) < n:
        p = rng.uniform(-half, half, 2)
        if all(np.hypot(*(p - q)) >= min_sep for q in pts):
            pts.append(p)
    return np.array(pts).reshape(-1, 2)


def random_iris_scene(rng, n=6, nf=3, half=0.04, h=None, f=F0):
    """Elements and feeds scattered over a square, no feasibility guarantees beyond separation."""
    pts = spread_points(rng, n + nf, half, 6e-3)
    feeds = [Feed(*p) for p in pts[n:]]
    els = [Element(x, y, EllipticIris(L1, rng.uniform(0.3e-3, L1), int(rng.choice([0, 90]))))
           for x, y in pts[:n]]
    hh = rng.uniform(2e-3, 8e-3) if h is None else h
    return Scene(f, Plate(-half - 0.01, half + 0.01, -half - 0.01, half + 0.01), hh, els, feeds, Clearances())


def random_lossless_intrinsic(rng, scale=5e-8):
    """Real symmetric intrinsic A (mixed-sign eigenvalues allowed) and a real alpha_e."""
    q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    ev = rng.uniform(0.2, 1.0, 2) * scale * rng.choice([-1, 1], 2)
    A = q @ np.diag(ev) @ q.T
    return 0.5 * (A + A.T), float(-rng.uniform(0.2, 1.0) * scale)


def random_explicit_scene(rng, n=6, nf=3, lossy_fraction=0.0, half=0.04, h=None):
    pts = spread_points(rng, n + nf, half, 6e-3)
    els = []
    lossy = set(rng.choice(n, int(round(lossy_fraction * n)), replace=False)) if lossy_fraction else set()
    for i, (x, y) in enumerate(pts[:n]):
        A, ae = random_lossless_intrinsic(rng)
        if i in lossy:
            # Im{A_int^-1} > 0 is absorption in the exp(+jwt) convention
            Ainv = np.linalg.inv(A) + 1j * rng.uniform(0.05, 0.5) * np.abs(np.linalg.inv(A)).max() * np.eye(2)
            A = np.linalg.inv(Ainv)
            A = 0.5 * (A + A.T)
            ae = 1.0 / (1.0 / ae + 1j * 0.2 * abs(1.0 / ae))
        els.append(Element(x, y, ExplicitPolarizability(A, ae, intrinsic=True)))
    feeds = [Feed(*p) for p in pts[n:]]
    hh = rng.uniform(2e-3, 8e-3) if h is None else h
    return Scene(F0, Plate(-half - 0.01, half + 0.01, -half - 0.01, half + 0.01), hh, els, feeds, Clearances())


def grid_fed_template(n_elements, n_feeds=25, f=F0, h=5e-3):
    """Square plate of side 0.5 sqrt(N) lambda with feeds on a uniform grid inside the central half."""
    lam = C0 / f
    W = 0.5 * np.sqrt(n_elements) * lam
    m = int(round(np.sqrt(n_feeds)))
    g = np.linspace(-W / 4, W / 4, m) if m > 1 else np.zeros(1)
    feeds = [Feed(x, y) for x in g for y in g]
    clr = Clearances(b=2e-3, b_el=2e-3, b_f=2e-3, l2_min=0.2e-3, l1=L1, h_min=2e-3, h_max=8e-3)
    return Scene(f, Plate(-W / 2, W / 2, -W / 2, W / 2), h, [], feeds, clr)


def sampled_iris_scene(n_elements, seed, n_feeds=4, l2=None, gamma=0.0):
    t = grid_fed_template(n_elements, n_feeds)
    pos = sample_layout(t, n_elements, gamma, rng_seed=seed)
    rng = np.random.default_rng(seed)
    l2v = rng.uniform(0.4e-3, L1, n_elements) if l2 is None else l2
    return iris_layout(t, pos, L1, l2v)


def showcase_scene(seed=0, h=5.21e-3, n=10):
    """150 mm plate, two 1 A feeds at (0, -45) and (0, 45) mm, ten randomly placed irises."""
    rng = np.random.default_rng(seed)
    half = 0.075
    feeds = [Feed(0.0, -0.045, 1.0), Feed(0.0, 0.045, 1.0)]
    pts = []
    while len(pts) < n:
        p = rng.uniform(-0.06, 0.06, 2)
        if min(np.hypot(*(p - q)) for q in [np.array([0, -0.045]), np.array([0, 0.045])]) < L1 + 2e-3:
            continue
        if all(abs(p[0] - q[0]) >= 2 * L1 + 2e-3 or abs(p[1] - q[1]) >= 2 * L1 + 2e-3 for q in pts):
            pts.append(p)
    els = [Element(x, y, EllipticIris(L1, rng.uniform(1.0e-3, 3.4e-3))) for x, y in pts]
    return Scene(F0, Plate(-half, half, -half, half), h, els, feeds, Clearances(l1=L1))


def synthetic_aperture(m, p, omega, a=4e-3, n=61):
    """Aperture field whose moments are exactly (m_x, m_y, p) under the trapezoid rule."""
    xs = np.linspace(-a / 2, a / 2, n)
    Z = np.zeros((n, n))
    g = FieldGrid.structured(xs, xs, Z, Z)
    S = g.area.sum()
    R2 = np.sum(g.area * (g.x**2 + g.y**2))
    jwm = 1j * omega * MU0
    cx, cy = -jwm * m[1] / S, jwm * m[0] / S
    cp = 2 * p / (EPS0 * R2)
    return FieldGrid(g.x, g.y, cx + cp * g.x, cy + cp * g.y, g.area)
