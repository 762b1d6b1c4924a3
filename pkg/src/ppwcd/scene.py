"""Scene description, feasibility rules, excitation map and layout sampling.

All quantities are SI. A scene is immutable; derived scenes are produced with
``dataclasses.replace`` or the ``with_*`` helpers.
"""
from dataclasses import dataclass, field, replace
import json

import numpy as np

from .constants import wavelength, wavenumber
from .specfun import hankel2


class SceneError(ValueError):
    pass


class SaturationError(RuntimeError):
    """The aperture is too crowded to place another element."""


@dataclass(frozen=True)
class Plate:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    @property
    def center(self):
        return np.array([0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)])


@dataclass(frozen=True)
class Clearances:
    b: float = 2e-3
    b_el: float = 2e-3
    b_f: float = 2e-3
    l2_min: float = 0.2e-3
    # footprint used when no element is present yet (layout sampling)
    l1: float | None = None
    h_min: float | None = None
    h_max: float | None = None


@dataclass(frozen=True)
class EllipticIris:
    l1: float
    l2: float
    rotation_deg: int = 0

    def __post_init__(self):
        if not (0 < self.l2 <= self.l1):
            raise SceneError(f"elliptic iris needs 0 < l2 <= l1, got l1={self.l1}, l2={self.l2}")
        if self.rotation_deg not in (0, 90):
            raise SceneError("iris rotation must be 0 or 90 degrees")


@dataclass(frozen=True)
class ExplicitPolarizability:
    """Fixed polarizabilities; ``intrinsic`` selects whether RR correction still applies."""
    A: tuple
    alpha_e: complex = 0j
    intrinsic: bool = False

    def __post_init__(self):
        A = np.asarray(self.A, dtype=complex)
        if A.shape != (2, 2):
            raise SceneError("explicit polarizability A must be 2x2")
        if abs(A[0, 1] - A[1, 0]) > 1e-12 * max(np.abs(A).max(), 1e-300):
            raise SceneError("explicit polarizability A must be symmetric")
        object.__setattr__(self, "A", tuple(map(tuple, A)))

    @property
    def matrix(self):
        return np.array(self.A, dtype=complex)


@dataclass(frozen=True)
class LorentzAxis:
    F: float
    omega0: float
    gamma: float


@dataclass(frozen=True)
class Lorentzian:
    """Per-axis Lorentzian intrinsic polarizabilities; a missing axis is zero."""
    xx: LorentzAxis | None = None
    yy: LorentzAxis | None = None
    e: LorentzAxis | None = None


@dataclass(frozen=True)
class Element:
    x: float
    y: float
    response: object

    @property
    def position(self):
        return np.array([self.x, self.y])

    @property
    def half_extent(self):
        """(a_x, a_y) half widths of the footprint; zero for non-geometric responses."""
        r = self.response
        if isinstance(r, EllipticIris):
            return (r.l1, r.l2) if r.rotation_deg == 0 else (r.l2, r.l1)
        return (0.0, 0.0)

    @property
    def l1(self):
        r = self.response
        return r.l1 if isinstance(r, EllipticIris) else 0.0


@dataclass(frozen=True)
class Feed:
    x: float
    y: float
    current: complex | None = None

    @property
    def position(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Scene:
    frequency: float
    plate: Plate
    h: float
    elements: tuple = ()
    feeds: tuple = ()
    clearances: Clearances = field(default_factory=Clearances)
    wire_radius: float = 0.2e-3

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "feeds", tuple(self.feeds))
        if not (self.frequency > 0 and np.isfinite(self.frequency)):
            raise SceneError("frequency must be positive")
        if not self.h > 0:
            raise SceneError("plate separation h must be positive")
        if not self.wire_radius > 0:
            raise SceneError("wire radius must be positive")
        p = self.plate
        if not (p.x_max > p.x_min and p.y_max > p.y_min):
            raise SceneError("plate bounds are empty")

    @property
    def k(self):
        return float(wavenumber(self.frequency))

    @property
    def omega(self):
        return 2 * np.pi * self.frequency

    @property
    def wavelength(self):
        return float(wavelength(self.frequency))

    @property
    def h_bounds(self):
        c = self.clearances
        lo = 0.0 if c.h_min is None else c.h_min
        hi = 0.5 * self.wavelength if c.h_max is None else min(c.h_max, 0.5 * self.wavelength)
        return lo, hi

    @property
    def l1(self):
        if self.clearances.l1 is not None:
            return self.clearances.l1
        return max((e.l1 for e in self.elements), default=0.0)

    def positions(self):
        return np.array([[e.x, e.y] for e in self.elements], dtype=float).reshape(-1, 2)

    def feed_positions(self):
        return np.array([[f.x, f.y] for f in self.feeds], dtype=float).reshape(-1, 2)

    def feed_currents(self):
        if any(f.current is None for f in self.feeds):
            return None
        return np.array([f.current for f in self.feeds], dtype=complex)

    def with_elements(self, elements):
        return replace(self, elements=tuple(elements))

    def with_h(self, h):
        return replace(self, h=float(h))

    def with_frequency(self, f):
        return replace(self, frequency=float(f))

    def with_currents(self, currents):
        feeds = [replace(fd, current=complex(c)) for fd, c in zip(self.feeds, currents)]
        return replace(self, feeds=tuple(feeds))

    def with_l2(self, l2):
        els = []
        for e, v in zip(self.elements, np.atleast_1d(l2)):
            if not isinstance(e.response, EllipticIris):
                raise SceneError("l2 update needs elliptic iris elements")
            els.append(replace(e, response=replace(e.response, l2=float(v))))
        return self.with_elements(els)


# ---------------------------------------------------------------- feasibility

@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple
    detail: str = ""

    def __str__(self):
        return f"{self.kind}{list(self.indices)}: {self.detail}"


def validate_feasibility(scene):
    """List every violated geometry/fabrication rule; empty list means feasible."""
    out = []
    c = scene.clearances
    p = scene.plate
    pos = scene.positions()
    feeds = scene.feed_positions()
    l1s = np.array([e.l1 for e in scene.elements])
    tol = 1e-12

    h_lo, h_hi = scene.h_bounds
    if not (h_lo - tol <= scene.h <= h_hi + tol):
        out.append(Violation("PlateSeparation", (), f"h={scene.h:.6g} outside [{h_lo:.6g}, {h_hi:.6g}]"))

    for n, e in enumerate(scene.elements):
        m = l1s[n] + 0.5 * c.b
        if not (p.x_min + m - tol <= e.x <= p.x_max - m + tol and p.y_min + m - tol <= e.y <= p.y_max - m + tol):
            out.append(Violation("GeometryBounds", (n,), f"element at ({e.x:.6g}, {e.y:.6g}) too close to the plate edge"))
        r = e.response
        if isinstance(r, EllipticIris) and not (c.l2_min - tol <= r.l2 <= r.l1 + tol):
            out.append(Violation("PolarizabilityBounds", (n,), f"l2={r.l2:.6g} outside [{c.l2_min:.6g}, {r.l1:.6g}]"))

    ext = np.array([e.half_extent for e in scene.elements]).reshape(-1, 2)
    for n in range(len(pos)):
        for m in range(n + 1, len(pos)):
            dx, dy = np.abs(pos[n] - pos[m])
            if dx < ext[n, 0] + ext[m, 0] + c.b_el - tol and dy < ext[n, 1] + ext[m, 1] + c.b_el - tol:
                out.append(Violation("ElementSeparation", (n, m), f"|dx|={dx:.6g}, |dy|={dy:.6g}"))

    for n in range(len(pos)):
        for i in range(len(feeds)):
            d = np.hypot(*(pos[n] - feeds[i]))
            if d < l1s[n] + c.b_f - tol:
                out.append(Violation("FeedClearance", (n, i), f"distance {d:.6g} < {l1s[n] + c.b_f:.6g}"))

    for i, f in enumerate(feeds):
        if not (p.x_min <= f[0] <= p.x_max and p.y_min <= f[1] <= p.y_max):
            out.append(Violation("FeedOutsidePlate", (i,), f"feed at ({f[0]:.6g}, {f[1]:.6g})"))
    return out


# ---------------------------------------------------------------- excitation map

def excitation_map(scene, points, l1=None):
    """Sum over feeds of |H0^(2)(k|r - b_i|)|^2, zero inside the feed-clearance disks."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    l1 = scene.l1 if l1 is None else l1
    radius = l1 + scene.clearances.b_f
    feeds = scene.feed_positions()
    w = np.zeros(len(pts))
    inside = np.zeros(len(pts), dtype=bool)
    for b in feeds:
        d = np.hypot(pts[:, 0] - b[0], pts[:, 1] - b[1])
        inside |= d < radius
        ok = d > 0
        w[ok] += np.abs(hankel2(0, scene.k * d[ok])) ** 2
    w[inside] = 0.0
    return float(w[0]) if single else w


class LayoutSampler:
    """Draws element centres from p(r; gamma) ~ (w(r) + eps)^gamma on the feasible region.

    Elements are placed with l2 = l1 so any later l2 in bounds keeps the layout feasible.
    """

    def __init__(self, scene, l1=None, grid=256):
        self.scene = scene
        self.l1 = scene.l1 if l1 is None else float(l1)
        if self.l1 <= 0:
            raise SceneError("layout sampling needs a positive major semi-axis l1")
        c, p = scene.clearances, scene.plate
        m = self.l1 + 0.5 * c.b
        self.lo = np.array([p.x_min + m, p.y_min + m])
        self.hi = np.array([p.x_max - m, p.y_max - m])
        if np.any(self.hi < self.lo):
            raise SaturationError("plate too small for a single element")
        self.feeds = scene.feed_positions()
        self.r_feed = self.l1 + c.b_f
        self.sep = 2 * self.l1 + c.b_el
        self.w_max = self._w_sup(grid)

    def _w_sup(self, grid):
        # bound for accept/reject: dense grid plus rings just outside each clearance disk
        xs = np.linspace(self.lo[0], self.hi[0], grid)
        ys = np.linspace(self.lo[1], self.hi[1], grid)
        pts = np.stack(np.meshgrid(xs, ys), -1).reshape(-1, 2)
        t = np.linspace(0, 2 * np.pi, 720, endpoint=False)
        rings = [b + self.r_feed * (1 + 1e-9) * np.stack([np.cos(t), np.sin(t)], -1) for b in self.feeds]
        if rings:
            pts = np.vstack([pts] + rings)
        inside = np.all((pts >= self.lo) & (pts <= self.hi), axis=1)
        w = excitation_map(self.scene, pts[inside], self.l1)
        return float(w.max(initial=0.0)) * 1.02

    def default_epsilon(self):
        return 1e-6 * self.w_max / 1.02

    def _draw(self, rng, size, gamma, eps):
        """Batch of points from the density restricted to edge margins and feed clearance."""
        out = []
        n_have = 0
        top = (self.w_max + eps) ** gamma if gamma > 0 else 1.0
        proposals = 0
        while n_have < size:
            batch = max(64, 2 * (size - n_have))
            u = rng.random((batch, 2))
            pts = self.lo + u * (self.hi - self.lo)
            acc = rng.random(batch)
            proposals += batch
            w = excitation_map(self.scene, pts, self.l1)
            ok = np.ones(batch, dtype=bool)
            for b in self.feeds:
                ok &= np.hypot(pts[:, 0] - b[0], pts[:, 1] - b[1]) >= self.r_feed
            if gamma > 0:
                ok &= acc * top <= (w + eps) ** gamma
            pts = pts[ok]
            out.append(pts)
            n_have += len(pts)
            if proposals > 50_000_000:
                raise SaturationError("density proposals exhausted; feasible region is empty")
        return np.vstack(out)[:size]

    def sample_points(self, n, gamma, epsilon=None, rng=None):
        rng = np.random.default_rng(rng)
        eps = self.default_epsilon() if epsilon is None else epsilon
        return self._draw(rng, n, gamma, eps)

    def sample(self, n_elements, gamma, epsilon=None, rng=None, max_attempts=10_000):
        if gamma < 0:
            raise SceneError("gamma must be >= 0")
        rng = np.random.default_rng(rng)
        eps = self.default_epsilon() if epsilon is None else epsilon
        placed = np.empty((n_elements, 2))
        count = 0
        queue = np.empty((0, 2))
        while count < n_elements:
            attempts = 0
            while True:
                if len(queue) == 0:
                    queue = self._draw(rng, 32, gamma, eps)
                cand, queue = queue[0], queue[1:]
                d = np.abs(placed[:count] - cand)
                if not np.any((d[:, 0] < self.sep) & (d[:, 1] < self.sep)):
                    break
                attempts += 1
                if attempts >= max_attempts:
                    raise SaturationError(
                        f"could not place element {count} after {max_attempts} attempts "
                        f"({n_elements} requested)")
            placed[count] = cand
            count += 1
        return placed


def sample_layout(scene_template, n_elements, gamma, epsilon=None, rng_seed=None, l1=None,
                  max_attempts=10_000):
    """Sequential rejection sampling of n_elements feasible centres."""
    return LayoutSampler(scene_template, l1).sample(n_elements, gamma, epsilon, rng_seed, max_attempts)


def iris_layout(scene_template, positions, l1, l2):
    l2 = np.broadcast_to(np.asarray(l2, float), (len(positions),))
    els = [Element(float(x), float(y), EllipticIris(l1, float(v))) for (x, y), v in zip(positions, l2)]
    return scene_template.with_elements(els)


# ---------------------------------------------------------------- serialization

def _cpx(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return complex(v.replace(" ", "").replace("i", "j"))
    return complex(v)


def _cpx_out(v):
    v = complex(v)
    return [v.real, v.imag]


def _axis_in(d):
    if d is None:
        return None
    return LorentzAxis(float(d["F"]), float(d["omega0"]), float(d["gamma"]))


def element_from_dict(d):
    kind = d.get("type", "elliptic_iris")
    if kind == "elliptic_iris":
        resp = EllipticIris(float(d["l1"]), float(d["l2"]), int(d.get("rotation_deg", 0)))
    elif kind == "explicit":
        A = [[_cpx(v) for v in row] for row in d["A"]]
        resp = ExplicitPolarizability(A, _cpx(d.get("alpha_e", 0.0)), bool(d.get("intrinsic", False)))
    elif kind == "lorentzian":
        resp = Lorentzian(_axis_in(d.get("xx")), _axis_in(d.get("yy")), _axis_in(d.get("e")))
    else:
        raise SceneError(f"unknown element type {kind!r}")
    return Element(float(d["x"]), float(d["y"]), resp)


def element_to_dict(e):
    r = e.response
    d = {"x": e.x, "y": e.y}
    if isinstance(r, EllipticIris):
        d.update(type="elliptic_iris", l1=r.l1, l2=r.l2, rotation_deg=r.rotation_deg)
    elif isinstance(r, ExplicitPolarizability):
        d.update(type="explicit", A=[[_cpx_out(v) for v in row] for row in r.A],
                 alpha_e=_cpx_out(r.alpha_e), intrinsic=r.intrinsic)
    else:
        d["type"] = "lorentzian"
        for name in ("xx", "yy", "e"):
            ax = getattr(r, name)
            if ax is not None:
                d[name] = {"F": ax.F, "omega0": ax.omega0, "gamma": ax.gamma}
    return d


def scene_from_dict(d):
    try:
        pl = d["plate"]
        plate = Plate(float(pl["x_min"]), float(pl["x_max"]), float(pl["y_min"]), float(pl["y_max"]))
        cl = d.get("clearances", {})
        clear = Clearances(**{k: (None if v is None else float(v)) for k, v in cl.items()})
        feeds = [Feed(float(f["x"]), float(f["y"]), _cpx(f.get("current"))) for f in d.get("feeds", [])]
        els = [element_from_dict(e) for e in d.get("elements", [])]
        return Scene(float(d["frequency_hz"]), plate, float(d["h_m"]), els, feeds, clear,
                     float(d.get("wire_radius_m", 0.2e-3)))
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene document: {exc!r}") from exc


def scene_to_dict(scene):
    c = scene.clearances
    return {
        "frequency_hz": scene.frequency,
        "plate": {"x_min": scene.plate.x_min, "x_max": scene.plate.x_max,
                  "y_min": scene.plate.y_min, "y_max": scene.plate.y_max},
        "h_m": scene.h,
        "elements": [element_to_dict(e) for e in scene.elements],
        "feeds": [{"x": f.x, "y": f.y, **({"current": _cpx_out(f.current)} if f.current is not None else {})}
                  for f in scene.feeds],
        "clearances": {k: getattr(c, k) for k in ("b", "b_el", "b_f", "l2_min", "l1", "h_min", "h_max")
                       if getattr(c, k) is not None},
        "wire_radius_m": scene.wire_radius,
    }


def load_scene(path):
    with open(path) as fh:
        try:
            return scene_from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise SceneError(f"{path}: not valid JSON ({exc})") from exc


def save_scene(scene, path):
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")
