"""Spatial statistics of fiber arrangements.

Center-to-center counts feed Ripley's K and the pair distribution; nearest
neighbor and Voronoi neighbor distances are surface-to-surface gaps, which is
what matters once fiber diameters scatter.

Periodic windows are treated as the whole observation area and neighbors are
counted against periodic images. Non-periodic windows (reconstructed
micrographs) use the fibers whose centers fall inside the window as the
sample and count their neighbors against every measured fiber.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Voronoi, cKDTree

from .geometry import Microstructure, minimum_image, volume_fraction


@dataclass(frozen=True)
class EmpiricalDistribution:
    bin_edges: np.ndarray
    density: np.ndarray
    n_samples: int
    mean: float
    std: float
    sample: np.ndarray = field(repr=False, default=None)

    @property
    def bin_widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    def cdf(self, x) -> np.ndarray:
        """Empirical CDF of the raw sample (falls back to the binned PDF)."""
        x = np.asarray(x, dtype=float)
        if self.sample is not None:
            s = np.sort(self.sample)
            return np.searchsorted(s, x, side="right") / len(s)
        cum = np.concatenate([[0.0], np.cumsum(self.density * self.bin_widths)])
        return np.interp(x, self.bin_edges, cum, left=0.0, right=1.0)

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.sample, q))


def default_bins(sample: np.ndarray, n_bins: int = 60) -> np.ndarray:
    lo = min(0.0, float(np.min(sample)))
    hi = float(np.percentile(sample, 99.5))
    if hi <= lo:
        hi = lo + max(abs(lo), 1.0) * 1e-6 + 1e-12
    return np.linspace(lo, hi, n_bins + 1)


def empirical(sample, bins=None) -> EmpiricalDistribution:
    """Binned PDF of ``sample``.

    ``bins`` is ``None`` (60 uniform bins up to the 99.5th percentile), an
    integer bin count over the same range, or explicit edges. Samples outside
    the edges are left out of the PDF but kept in the moments.
    """
    s = np.asarray(sample, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("empty sample")
    if bins is None:
        edges = default_bins(s)
    elif np.isscalar(bins):
        edges = default_bins(s, int(bins))
    else:
        edges = np.asarray(bins, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    counts, _ = np.histogram(s, bins=edges)
    total = counts.sum()
    density = counts / (total * np.diff(edges)) if total else np.zeros(len(edges) - 1)
    return EmpiricalDistribution(edges, density, int(s.size), float(np.mean(s)), float(np.std(s)), s)


# nearest neighbors -----------------------------------------------------------


def _tree(ms: Microstructure) -> cKDTree:
    if ms.domain.periodic:
        return cKDTree(ms.centers, boxsize=ms.domain.lengths)
    return cKDTree(ms.centers)


def _gaps(ms, i, j):
    delta = minimum_image(ms.centers[j] - ms.centers[i], ms.domain)
    return np.hypot(delta[..., 0], delta[..., 1]) - ms.radii[i] - ms.radii[j]


def nearest_gaps(ms: Microstructure) -> tuple[np.ndarray, np.ndarray]:
    """Per-fiber smallest surface gap and the index of that neighbor.

    Only fibers inside the window are returned for non-periodic data; their
    neighbors may lie outside. Exact: the k-nearest-center candidates are
    widened until no farther fiber could have a smaller surface gap.
    """
    if ms.n < 2:
        raise ValueError("need at least two fibers")
    sample_idx = np.nonzero(ms.in_window())[0]
    tree = _tree(ms)
    rmax = float(ms.radii.max())
    k = min(ms.n, 9)
    dist, idx = tree.query(ms.centers[sample_idx], k=k)
    best = np.full(len(sample_idx), np.inf)
    arg = np.full(len(sample_idx), -1)
    for col in range(1, k):
        j = idx[:, col]
        g = _gaps(ms, sample_idx, j)
        g = np.where(j == sample_idx, np.inf, g)
        better = (g < best) | ((g == best) & (j < arg))
        best = np.where(better, g, best)
        arg = np.where(better, j, arg)
    # any unseen fiber is at least dist[:, -1] away from the center
    bound = dist[:, -1] - ms.radii[sample_idx] - rmax
    unsure = np.nonzero((bound <= best) & (k < ms.n))[0]
    span = 0.5 * min(ms.domain.lx, ms.domain.ly) if ms.domain.periodic else math.inf
    for q in unsure:
        i = sample_idx[q]
        reach = best[q] + ms.radii[i] + rmax
        if reach >= span:
            cand = np.arange(ms.n)
        else:
            cand = np.array(tree.query_ball_point(ms.centers[i], reach * (1 + 1e-12) + 1e-300), dtype=int)
        cand = cand[cand != i]
        g = _gaps(ms, np.full(len(cand), i), cand)
        order = np.lexsort((cand, g))
        best[q], arg[q] = g[order[0]], cand[order[0]]
    return best, arg


def nearest_neighbor_distribution(ms: Microstructure, bins=None, normalize: bool = False) -> EmpiricalDistribution:
    gaps, _ = nearest_gaps(ms)
    if normalize:
        gaps = gaps / ms.mean_radius
    return empirical(gaps, bins)


def mean_nn_distance(ms: Microstructure) -> float:
    """Mean nearest-neighbor surface gap divided by the mean radius."""
    gaps, _ = nearest_gaps(ms)
    return float(np.mean(gaps) / ms.mean_radius)


# Voronoi ---------------------------------------------------------------------


@dataclass(frozen=True)
class VoronoiDiagram:
    areas: np.ndarray  # per fiber, NaN where the cell is unbounded or unused
    pairs: np.ndarray  # (m, 2) unordered neighbor pairs, i < j
    pair_gaps: np.ndarray  # surface gap across each pair
    periodic: bool
    fibers: np.ndarray  # indices of fibers the diagram describes

    def neighbors(self, i: int) -> set[int]:
        a = self.pairs
        return set(a[a[:, 0] == i, 1]) | set(a[a[:, 1] == i, 0])


def _polygon_area(v: np.ndarray) -> float:
    c = v.mean(axis=0)
    order = np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]))
    v = v[order]
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def voronoi(ms: Microstructure) -> VoronoiDiagram:
    """Ordinary (center-seeded) Voronoi tessellation, periodic when the window is."""
    if ms.n < 3:
        raise ValueError("need at least three fibers")
    n = ms.n
    if ms.domain.periodic:
        key = np.round(ms.centers / ms.domain.lengths * 2**40)
    else:
        key = ms.centers
    if len(np.unique(key, axis=0)) < n:
        raise ValueError("coincident fiber centers")
    if ms.domain.periodic:
        L = ms.domain.lengths
        shifts = np.array([(0, 0)] + [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)], dtype=float)
        pts = np.concatenate([ms.centers + s * L for s in shifts])
        owner = np.tile(np.arange(n), len(shifts))
        members = np.arange(n)
    else:
        pts = ms.centers
        owner = np.arange(n)
        members = np.nonzero(ms.in_window())[0]
    vor = Voronoi(pts)
    areas = np.full(n, np.nan)
    for i in members:
        region = vor.regions[vor.point_region[i]]
        if len(region) == 0 or -1 in region:
            continue
        areas[i] = _polygon_area(vor.vertices[region])
    rp = vor.ridge_points
    member_mask = np.zeros(len(pts), dtype=bool)
    member_mask[members] = True
    keep = member_mask[rp[:, 0]] | member_mask[rp[:, 1]]
    rp = rp[keep]
    a, b = owner[rp[:, 0]], owner[rp[:, 1]]
    d = pts[rp[:, 1]] - pts[rp[:, 0]]
    gap = np.hypot(d[:, 0], d[:, 1]) - ms.radii[a] - ms.radii[b]
    valid = a != b
    lo, hi, gap = np.minimum(a, b)[valid], np.maximum(a, b)[valid], gap[valid]
    order = np.lexsort((gap, hi, lo))
    lo, hi, gap = lo[order], hi[order], gap[order]
    first = np.ones(len(lo), dtype=bool)
    first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    pairs = np.stack([lo[first], hi[first]], axis=1)
    return VoronoiDiagram(areas, pairs, gap[first], ms.domain.periodic, members)


def voronoi_neighbor_distribution(ms, diagram: VoronoiDiagram | None = None, bins=None, normalize: bool = False):
    diagram = diagram if diagram is not None else voronoi(ms)
    gaps = diagram.pair_gaps
    if normalize:
        gaps = gaps / ms.mean_radius
    return empirical(gaps, bins)


def local_volume_fraction(ms, diagram: VoronoiDiagram | None = None, bins=None) -> EmpiricalDistribution:
    """Fiber area over Voronoi cell area, per fiber."""
    diagram = diagram if diagram is not None else voronoi(ms)
    idx = diagram.fibers[np.isfinite(diagram.areas[diagram.fibers])]
    lvf = np.pi * ms.radii[idx] ** 2 / diagram.areas[idx]
    return empirical(lvf, bins)


def area_weighted_lvf(ms, diagram: VoronoiDiagram) -> float:
    idx = diagram.fibers[np.isfinite(diagram.areas[diagram.fibers])]
    a = diagram.areas[idx]
    lvf = np.pi * ms.radii[idx] ** 2 / a
    return float(np.sum(lvf * a) / np.sum(a))


# Ripley K and pair distribution ------------------------------------------------


@dataclass(frozen=True)
class KFunction:
    h_values: np.ndarray
    k_values: np.ndarray
    window_mode: str

    @property
    def poisson(self) -> np.ndarray:
        return np.pi * self.h_values**2


@dataclass(frozen=True)
class PairDistribution:
    h_values: np.ndarray
    g_values: np.ndarray
    delta_h: float


def _cumulative_counts(ms: Microstructure, radii_h: np.ndarray, window_mode: str, crop=None):
    """Sum over sample fibers of the number of other centers within each h.

    Returns ``(counts, N, A)``.
    """
    hmax = float(np.max(radii_h))
    if window_mode == "periodic_full":
        if not ms.domain.periodic:
            raise ValueError("periodic_full mode needs a periodic microstructure")
        L = ms.domain.lengths
        m = int(math.ceil(hmax / min(L)))
        shifts = np.array([(a, b) for a in range(-m, m + 1) for b in range(-m, m + 1)], dtype=float)
        images = np.concatenate([ms.centers + s * L for s in shifts])
        sample = ms.centers
        N, A = ms.n, ms.domain.area
    elif window_mode == "cropped_against_full":
        x0, y0, x1, y1 = crop if crop is not None else (0.0, 0.0, ms.domain.lx, ms.domain.ly)
        lo = ms.centers.min(axis=0)
        hi = ms.centers.max(axis=0)
        if x0 - hmax < lo[0] or y0 - hmax < lo[1] or x1 + hmax > hi[0] or y1 + hmax > hi[1]:
            raise ValueError(f"crop margin smaller than max(h) = {hmax}")
        inside = (
            (ms.centers[:, 0] >= x0) & (ms.centers[:, 0] <= x1) & (ms.centers[:, 1] >= y0) & (ms.centers[:, 1] <= y1)
        )
        images = ms.centers
        sample = ms.centers[inside]
        N, A = int(inside.sum()), (x1 - x0) * (y1 - y0)
    else:
        raise ValueError(f"unknown window mode {window_mode!r}")
    if N == 0:
        raise ValueError("no fibers in the observation window")
    counts = cKDTree(sample).count_neighbors(cKDTree(images), radii_h).astype(float)
    counts -= N  # each center finds itself at distance 0
    return counts, N, A


def ripley_k(ms: Microstructure, h_values, window_mode: str = "periodic_full", crop=None) -> KFunction:
    """``K(h) = A / N^2 * sum_i n_i(h)`` with center-to-center counts."""
    h = np.asarray(h_values, dtype=float)
    if np.any(h <= 0):
        raise ValueError("h values must be positive")
    counts, N, A = _cumulative_counts(ms, h, window_mode, crop)
    return KFunction(h, A / N**2 * counts, window_mode)


def pair_distribution(ms, h_values, delta_h: float | None = None, window_mode="periodic_full", crop=None):
    """Hoop-count pair distribution, hoop ``(h, h + delta_h]``."""
    h = np.asarray(h_values, dtype=float)
    if delta_h is None:
        delta_h = 0.2 * ms.mean_radius
    if delta_h <= 0:
        raise ValueError("delta_h must be positive")
    if np.any(h <= 0):
        raise ValueError("h values must be positive")
    edges = np.concatenate([h, h + delta_h])
    counts, N, A = _cumulative_counts(ms, edges, window_mode, crop)
    hoop = counts[len(h):] - counts[: len(h)]
    rho = N / A
    g = hoop / N / (2 * np.pi * h * rho * delta_h)
    return PairDistribution(h, g, float(delta_h))


# descriptor sets and comparison ---------------------------------------------------


@dataclass
class DescriptorSet:
    nn: EmpiricalDistribution
    voronoi_nn: EmpiricalDistribution
    lvf: EmpiricalDistribution
    k: KFunction
    g: PairDistribution
    mean_radius: float


PAIR_DELTA_H = 0.2  # hoop width in mean radii


def default_h_values(ms: Microstructure, n: int = 60, h_max_radii: float = 10.0) -> np.ndarray:
    R = ms.mean_radius
    h_max = h_max_radii * R
    if ms.domain.periodic:
        h_max = min(h_max, 0.5 * min(ms.domain.lx, ms.domain.ly))
    return np.linspace(h_max / n, h_max, n)


def compute_descriptors(ms: Microstructure, h_values=None, crop=None) -> DescriptorSet:
    """All descriptors with lengths normalized by the mean fiber radius."""
    R = ms.mean_radius
    unit = ms.replace(centers=ms.centers / R, radii=ms.radii / R, domain=_scaled_domain(ms, 1.0 / R))
    h = np.asarray(h_values, dtype=float) if h_values is not None else default_h_values(unit)
    mode = "periodic_full" if ms.domain.periodic else "cropped_against_full"
    crop_u = None if crop is None else tuple(v / R for v in crop)
    diagram = voronoi(unit)
    return DescriptorSet(
        nn=nearest_neighbor_distribution(unit),
        voronoi_nn=voronoi_neighbor_distribution(unit, diagram),
        lvf=local_volume_fraction(unit, diagram),
        k=ripley_k(unit, h, mode, crop_u),
        g=pair_distribution(unit, h, PAIR_DELTA_H, mode, crop_u),
        mean_radius=R,
    )


def _scaled_domain(ms, s):
    from .geometry import Domain

    return Domain(ms.domain.lx * s, ms.domain.ly * s, ms.domain.periodic)


DISTRIBUTIONS = ("nn", "voronoi_nn", "lvf")


def compare_distributions(a: EmpiricalDistribution, b: EmpiricalDistribution) -> dict:
    if a.sample is not None and b.sample is not None:
        lo = min(a.bin_edges[0], b.bin_edges[0])
        hi = max(a.bin_edges[-1], b.bin_edges[-1])
        edges = np.linspace(lo, hi, max(len(a.bin_edges), len(b.bin_edges)))
        pa, pb = empirical(a.sample, edges).density, empirical(b.sample, edges).density
        xs = np.union1d(a.sample, b.sample)
        ks = float(np.max(np.abs(a.cdf(xs) - b.cdf(xs))))
    else:
        if a.bin_edges.shape != b.bin_edges.shape or not np.allclose(a.bin_edges, b.bin_edges):
            raise ValueError("distributions have different supports and no raw samples to rebin")
        edges, pa, pb = a.bin_edges, a.density, b.density
        ks = float(np.max(np.abs(np.cumsum((pa - pb) * np.diff(edges)))))
    l2 = float(np.sqrt(np.sum((pa - pb) ** 2 * np.diff(edges))))
    scale = max(abs(a.mean), abs(b.mean))
    rel = 0.0 if scale == 0 else abs(a.mean - b.mean) / scale
    return {"l2": l2, "ks": ks, "rel_mean": float(rel)}


def compare_curves(ha, va, hb, vb) -> dict:
    if len(ha) != len(hb) or not np.allclose(ha, hb, rtol=1e-9, atol=0):
        raise ValueError("curves are sampled at different h values")
    va, vb = np.asarray(va), np.asarray(vb)
    scale = max(np.max(np.abs(va)), np.max(np.abs(vb)), 1e-300)
    l2 = float(np.sqrt(np.mean((va - vb) ** 2)) / scale)
    return {"l2": l2, "sup": float(np.max(np.abs(va - vb)) / scale)}


def compare_descriptors(a: DescriptorSet, b: DescriptorSet) -> dict:
    """Per-descriptor distances; ``summary`` is the largest KS statistic."""
    out = {name: compare_distributions(getattr(a, name), getattr(b, name)) for name in DISTRIBUTIONS}
    out["k"] = compare_curves(a.k.h_values, a.k.k_values, b.k.h_values, b.k.k_values)
    out["g"] = compare_curves(a.g.h_values, a.g.g_values, b.g.h_values, b.g.g_values)
    out["summary"] = max(out[name]["ks"] for name in DISTRIBUTIONS)
    return out


def lvf_std(ms: Microstructure) -> float:
    return local_volume_fraction(ms).std


def check_area_weighted(ms: Microstructure) -> float:
    """Difference between the area-weighted LVF mean and the global fraction."""
    return area_weighted_lvf(ms, voronoi(ms)) - volume_fraction(ms)
