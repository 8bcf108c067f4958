"""Periodic fiber microstructures and exact geometric predicates.

A microstructure is a rectangular window ``[0, lx) x [0, ly)`` holding a set of
circular fiber cross-sections. Periodic windows tile the plane; all distances
then follow the minimum-image convention. Non-periodic windows (reconstructed
micrographs) keep every measured fiber, including those outside the window,
so that neighbor counts near the window edge can use the full data set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

SCHEMA_VERSION = 1
HEX_PACKING_LIMIT = math.pi / (2.0 * math.sqrt(3.0))


@dataclass(frozen=True)
class Fiber:
    x: float
    y: float
    r: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"fiber center must be finite, got ({self.x}, {self.y})")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError(f"fiber radius must be positive, got {self.r}")


@dataclass(frozen=True)
class Domain:
    lx: float
    ly: float
    periodic: bool = True

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"domain sides must be positive, got {self.lx} x {self.ly}")

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def lengths(self) -> np.ndarray:
        return np.array([self.lx, self.ly], dtype=float)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def wrap_centers(centers: np.ndarray, domain: Domain) -> np.ndarray:
    """Map centers into ``[0, lx) x [0, ly)``."""
    L = domain.lengths
    c = np.mod(np.asarray(centers, dtype=float), L)
    # np.mod can round a tiny negative value up to exactly L
    c = np.where(c >= L, c - L, c)
    return np.where(c < 0, 0.0, c)


@dataclass(frozen=True)
class Microstructure:
    """Immutable fiber arrangement.

    ``centers`` is an ``(n, 2)`` array and ``radii`` an ``(n,)`` array. Periodic
    centers are canonicalized into the window on construction.
    """

    domain: Domain
    centers: np.ndarray
    radii: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 2)
        r = np.array(self.radii, dtype=float).reshape(-1)
        if len(c) != len(r):
            raise ValueError(f"{len(c)} centers but {len(r)} radii")
        if not np.all(np.isfinite(c)):
            raise ValueError("fiber centers must be finite")
        if np.any(~np.isfinite(r)) or np.any(r <= 0):
            raise ValueError("fiber radii must be positive and finite")
        if self.domain.periodic:
            c = wrap_centers(c, self.domain)
        meta = {"schema_version": SCHEMA_VERSION, "units": "normalized"}
        meta.update(self.meta or {})
        object.__setattr__(self, "centers", _readonly(c))
        object.__setattr__(self, "radii", _readonly(r))
        object.__setattr__(self, "meta", meta)

    @classmethod
    def from_fibers(cls, domain: Domain, fibers: Iterable[Fiber], meta: dict | None = None):
        fibers = list(fibers)
        c = np.array([[f.x, f.y] for f in fibers], dtype=float).reshape(-1, 2)
        r = np.array([f.r for f in fibers], dtype=float)
        return cls(domain, c, r, meta or {})

    @property
    def fibers(self) -> list[Fiber]:
        return [Fiber(float(x), float(y), float(r)) for (x, y), r in zip(self.centers, self.radii)]

    @property
    def n(self) -> int:
        return len(self.radii)

    @property
    def mean_radius(self) -> float:
        return float(np.mean(self.radii)) if self.n else 0.0

    def replace(self, centers=None, radii=None, domain=None, **meta_updates) -> "Microstructure":
        meta = dict(self.meta)
        meta.update(meta_updates)
        return Microstructure(
            domain if domain is not None else self.domain,
            self.centers if centers is None else centers,
            self.radii if radii is None else radii,
            meta,
        )

    def in_window(self) -> np.ndarray:
        """Boolean mask of fibers whose center lies inside the window."""
        if self.domain.periodic:
            return np.ones(self.n, dtype=bool)
        c = self.centers
        return (c[:, 0] >= 0) & (c[:, 0] <= self.domain.lx) & (c[:, 1] >= 0) & (c[:, 1] <= self.domain.ly)


def minimum_image(delta: np.ndarray, domain: Domain) -> np.ndarray:
    """Apply the minimum-image convention to displacement vectors (``(..., 2)``)."""
    delta = np.asarray(delta, dtype=float)
    if not domain.periodic:
        return delta
    L = domain.lengths
    return delta - L * np.round(delta / L)


def center_distance(a: Fiber, b: Fiber, d: Domain) -> float:
    delta = minimum_image(np.array([b.x - a.x, b.y - a.y]), d)
    return float(np.hypot(delta[0], delta[1]))


def surface_gap(a: Fiber, b: Fiber, d: Domain) -> float:
    """Signed surface-to-surface distance; negative values mean overlap."""
    return center_distance(a, b, d) - (a.r + b.r)


def pair_gaps(ms: Microstructure, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Surface gaps for index pairs, using the minimum image when periodic."""
    delta = minimum_image(ms.centers[j] - ms.centers[i], ms.domain)
    return np.hypot(delta[..., 0], delta[..., 1]) - ms.radii[i] - ms.radii[j]


def hexagonal_gap(vf: float, radius: float = 1.0) -> float:
    """Surface gap between neighbors of a monodisperse hexagonal packing."""
    return radius * (math.sqrt(2.0 * math.pi / (math.sqrt(3.0) * vf)) - 2.0)


def _circle_rect_area(cx: float, cy: float, r: float, x0: float, x1: float, y0: float, y1: float) -> float:
    a, b = max(x0, cx - r), min(x1, cx + r)
    if a >= b or cy - r >= y1 or cy + r <= y0:
        return 0.0
    if cx - r >= x0 and cx + r <= x1 and cy - r >= y0 and cy + r <= y1:
        return math.pi * r * r

    def chord(x):
        s = math.sqrt(max(r * r - (x - cx) ** 2, 0.0))
        return max(0.0, min(y1, cy + s) - max(y0, cy - s))

    # kinks where the circle crosses y0 / y1
    pts = []
    for yl in (y0, y1):
        dy = yl - cy
        if abs(dy) < r:
            w = math.sqrt(r * r - dy * dy)
            pts += [x for x in (cx - w, cx + w) if a < x < b]
    edges = sorted({a, b, *pts})
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(chord, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return total


def fiber_area_in_window(ms: Microstructure) -> float:
    """Fiber area inside the window; periodic fibers contribute their full area."""
    if ms.domain.periodic:
        return float(np.sum(np.pi * ms.radii**2))
    lx, ly = ms.domain.lx, ms.domain.ly
    return float(
        sum(_circle_rect_area(x, y, r, 0.0, lx, 0.0, ly) for (x, y), r in zip(ms.centers, ms.radii))
    )


def volume_fraction(ms: Microstructure) -> float:
    return fiber_area_in_window(ms) / ms.domain.area


@dataclass(frozen=True)
class ValidationReport:
    min_surface_gap: float
    worst_pair: tuple[int, int] | None
    vf: float
    ok: bool
    messages: tuple[str, ...] = ()


def default_overlap_tol(ms: Microstructure) -> float:
    return 1e-9 * ms.mean_radius if ms.n else 0.0


def candidate_pairs(ms: Microstructure, cutoff: float) -> np.ndarray:
    """Unordered pairs ``(i, j)``, ``i < j``, with center distance <= cutoff.

    Each pair appears once, under its minimum image.
    """
    if ms.n < 2:
        return np.empty((0, 2), dtype=np.intp)
    if ms.domain.periodic:
        if cutoff >= 0.5 * min(ms.domain.lx, ms.domain.ly):
            i, j = np.triu_indices(ms.n, k=1)
            return np.stack([i, j], axis=1)
        tree = cKDTree(ms.centers, boxsize=ms.domain.lengths)
    else:
        tree = cKDTree(ms.centers)
    pairs = tree.query_pairs(cutoff, output_type="ndarray")
    if len(pairs) == 0:
        return np.empty((0, 2), dtype=np.intp)
    pairs = np.sort(pairs, axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def min_gap_pair(ms: Microstructure) -> tuple[float, tuple[int, int] | None]:
    """Global minimum surface gap and the lexicographically first pair attaining it."""
    if ms.n < 2:
        return math.inf, None
    rmax = float(ms.radii.max())
    search = 0.5 * ms.mean_radius
    span = min(ms.domain.lx, ms.domain.ly) if ms.domain.periodic else math.inf
    while True:
        pairs = candidate_pairs(ms, 2.0 * rmax + search)
        if len(pairs):
            gaps = pair_gaps(ms, pairs[:, 0], pairs[:, 1])
            k = int(np.argmin(gaps))  # argmin returns the first minimum; pairs are sorted
            g = float(gaps[k])
            if g <= search or 2.0 * rmax + search >= 0.5 * span:
                return g, (int(pairs[k, 0]), int(pairs[k, 1]))
        search *= 4.0
        if not ms.domain.periodic and search > 4 * max(np.ptp(ms.centers, axis=0).max(), 1.0) + 4 * rmax:
            pairs = candidate_pairs(ms, math.inf)
            gaps = pair_gaps(ms, pairs[:, 0], pairs[:, 1])
            k = int(np.argmin(gaps))
            return float(gaps[k]), (int(pairs[k, 0]), int(pairs[k, 1]))


def validate(ms: Microstructure, overlap_tol: float | None = None) -> ValidationReport:
    tol = default_overlap_tol(ms) if overlap_tol is None else overlap_tol
    messages = []
    if ms.domain.periodic and ms.n:
        inside = np.all((ms.centers >= 0) & (ms.centers < ms.domain.lengths))
        if not inside:
            messages.append("centers outside the periodic window")
    g, pair = min_gap_pair(ms)
    if g < -tol:
        messages.append(f"fibers {pair} overlap by {-g:.3e}")
    vf = volume_fraction(ms)
    if vf > HEX_PACKING_LIMIT + 1e-12:
        messages.append(f"volume fraction {vf:.6f} exceeds the densest packing")
    return ValidationReport(g, pair, vf, not messages, tuple(messages))


# rigid transformations -------------------------------------------------------------


def translate(ms: Microstructure, dx: float, dy: float) -> Microstructure:
    return ms.replace(centers=ms.centers + np.array([dx, dy]))


def rotate90(ms: Microstructure) -> Microstructure:
    """Rotate counter-clockwise by 90 degrees, mapping the window onto itself."""
    c = ms.centers
    rotated = np.stack([ms.domain.ly - c[:, 1], c[:, 0]], axis=1)
    dom = Domain(ms.domain.ly, ms.domain.lx, ms.domain.periodic)
    if dom.periodic:
        rotated = wrap_centers(rotated, dom)
    return Microstructure(dom, rotated, ms.radii, dict(ms.meta))


def scale(ms: Microstructure, s: float) -> Microstructure:
    dom = Domain(ms.domain.lx * s, ms.domain.ly * s, ms.domain.periodic)
    return Microstructure(dom, ms.centers * s, ms.radii * s, dict(ms.meta))


def boundary_clearance(centers: np.ndarray, radii: np.ndarray, domain: Domain) -> float:
    """Smallest distance between any fiber outline and the window edges.

    Fibers cut by an edge count by how far their outline is from being tangent
    to it, which is what produces sliver elements when meshing.
    """
    if len(radii) == 0:
        return math.inf
    L = domain.lengths
    to_edge = np.minimum(centers, L - centers)
    return float(np.min(np.abs(to_edge - radii[:, None])))


def select_window(ms: Microstructure, n_candidates: int = 1000, rng=None) -> Microstructure:
    """Shift a periodic window to keep fiber outlines clear of its edges.

    The identity shift is always among the candidates, so the result is never
    worse than the input.
    """
    if not ms.domain.periodic:
        raise ValueError("window selection requires a periodic microstructure")
    rng = np.random.default_rng(rng)
    offsets = rng.random((n_candidates, 2)) * ms.domain.lengths
    offsets = np.vstack([[0.0, 0.0], offsets])
    best, best_off = -math.inf, offsets[0]
    for off in offsets:
        c = wrap_centers(ms.centers - off, ms.domain)
        val = boundary_clearance(c, ms.radii, ms.domain)
        if val > best:
            best, best_off = val, off
    out = ms.replace(centers=ms.centers - best_off)
    out.meta["window_offset"] = [float(best_off[0]), float(best_off[1])]
    out.meta["boundary_clearance"] = best
    return out


def bounding_window(centers: np.ndarray, radii: np.ndarray) -> tuple[float, float, float, float]:
    lo = np.min(centers - radii[:, None], axis=0)
    hi = np.max(centers + radii[:, None], axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def describe(ms: Microstructure) -> dict[str, Any]:
    return {
        "n_fibers": ms.n,
        "lx": ms.domain.lx,
        "ly": ms.domain.ly,
        "periodic": ms.domain.periodic,
        "vf": volume_fraction(ms),
        "mean_radius": ms.mean_radius,
    }
