"""Fiber arrangement generators.

The random generator grows fiber radii step by step from a Poisson seed
pattern. After every growth step overlapping pairs are pushed apart along
their center line, which leaves them touching; hard-core random moves then
let fibers wander away from their contacts. Little migration therefore keeps
the contact network that growth builds up (clustered, sticky-disk-like
arrangements), while strong migration forgets it (equilibrium hard-disk
arrangements). A large admissible gap forces well-separated, locally
crystalline arrangements.

Regular references (hexagonal packing and hexagonal packings with a symmetric
superlattice of fibers removed) are built here as well.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import _kernels
from .geometry import HEX_PACKING_LIMIT, Domain, Microstructure, volume_fraction

GENERATOR_RULE = "swell-push-hardcore-migrate/v2"
PRNG_NAME = "numpy.PCG64"
# acceptance band for the adaptive migration move
ACCEPT_LOW, ACCEPT_HIGH, MIN_STEP_FRAC = 0.2, 0.5, 1e-3
JAM_STEPS, BACKOFF_STEPS, MAX_BACKOFFS = 10, 5, 40
ANNEAL_STEP, ANNEAL_SWEEPS = 0.05, 200


class GenerationError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class RestrictedRegion:
    """Disc ``(cx, cy, radius)`` or capsule ``(x0, y0, x1, y1, half_width)``."""

    shape: str
    params: tuple
    mode: str = "forbidden_to_enter"

    def __post_init__(self):
        if self.shape not in ("disc", "capsule"):
            raise ValueError(f"unknown region shape {self.shape!r}")
        if self.mode not in ("forbidden_to_enter", "confined_within"):
            raise ValueError(f"unknown region mode {self.mode!r}")
        need = 3 if self.shape == "disc" else 5
        if len(self.params) != need:
            raise ValueError(f"{self.shape} needs {need} parameters, got {len(self.params)}")
        if self.params[-1] <= 0:
            raise ValueError("region radius / half width must be positive")

    def as_row(self) -> list[float]:
        kind = 0.0 if self.shape == "disc" else 1.0
        mode = 0.0 if self.mode == "forbidden_to_enter" else 1.0
        p = list(self.params) + [0.0] * (5 - len(self.params))
        return [kind, mode, *p]

    def to_dict(self) -> dict:
        return {"shape": self.shape, "params": list(self.params), "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "RestrictedRegion":
        return cls(d["shape"], tuple(float(v) for v in d["params"]), d.get("mode", "forbidden_to_enter"))


def _regions_array(regions: Sequence[RestrictedRegion]) -> np.ndarray:
    if not regions:
        return np.zeros((0, 7))
    return np.array([r.as_row() for r in regions], dtype=float)


@dataclass(frozen=True)
class SrmParams:
    """Generation recipe.

    ``migration_intensity`` and ``min_gap`` are in units of the current mean
    radius. ``radius_dist`` is ``"monodisperse"`` or ``("lognormal", mu, sigma)``
    with ``mu``/``sigma`` describing ln(diameter).
    """

    n_fibers: int
    target_vf: float
    swelling_rate: float = 0.01
    migration_intensity: float = 0.0
    min_gap: float = 0.01
    max_steps: int = 200_000
    radius_dist: tuple | str = "monodisperse"
    regions: tuple = ()
    seed: int = 0
    initial_vf: float = 0.02

    def __post_init__(self):
        if self.n_fibers < 1:
            raise ValueError("n_fibers must be >= 1")
        if not (0.0 < self.target_vf < HEX_PACKING_LIMIT):
            raise ValueError(f"target_vf must lie in (0, {HEX_PACKING_LIMIT:.6f}), got {self.target_vf}")
        if self.swelling_rate < 0 or self.migration_intensity < 0 or self.min_gap < 0:
            raise ValueError("swelling_rate, migration_intensity and min_gap must be >= 0")
        rd = self.radius_dist
        if isinstance(rd, (list, tuple)):
            rd = tuple(rd)
            if rd[0] != "lognormal" or len(rd) != 3 or rd[2] < 0:
                raise ValueError(f"bad radius distribution {self.radius_dist!r}")
            object.__setattr__(self, "radius_dist", ("lognormal", float(rd[1]), float(rd[2])))
        elif rd != "monodisperse":
            raise ValueError(f"bad radius distribution {rd!r}")
        object.__setattr__(
            self,
            "regions",
            tuple(r if isinstance(r, RestrictedRegion) else RestrictedRegion.from_dict(r) for r in self.regions),
        )

    def replace(self, **kw) -> "SrmParams":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SrmParams(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regions"] = [r.to_dict() for r in self.regions]
        d["radius_dist"] = list(self.radius_dist) if isinstance(self.radius_dist, tuple) else self.radius_dist
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SrmParams":
        d = dict(d)
        rd = d.get("radius_dist", "monodisperse")
        if isinstance(rd, dict):
            rd = ("lognormal", rd["mu"], rd["sigma"])
        d["radius_dist"] = tuple(rd) if isinstance(rd, list) else rd
        d["regions"] = tuple(RestrictedRegion.from_dict(r) for r in d.get("regions", ()))
        return cls(**d)


@dataclass
class GenerationTrace:
    steps_used: int = 0
    final_vf: float = 0.0
    stalled: bool = False
    swelling_halvings: int = 0
    vf_history: list = field(default_factory=list)


def seed_poisson(n: int, d: Domain, rng=None, regions: Sequence[RestrictedRegion] = ()) -> np.ndarray:
    """``n`` independent uniform points in the window (restricted to admissible areas)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    if not regions:
        return rng.random((n, 2)) * d.lengths
    reg = _regions_array(regions)
    out = np.empty((n, 2))
    k = 0
    tries = 0
    while k < n:
        p = rng.random(2) * d.lengths
        tries += 1
        if _kernels.admissible(p[0], p[1], reg, d.lx, d.ly):
            out[k] = p
            k += 1
        elif tries > 1000 * n:
            raise GenerationError("restricted regions leave no room for seed points")
    return out


def fit_lognormal(diameters) -> tuple[float, float]:
    """Maximum-likelihood (mu, sigma) of ln(diameter)."""
    d = np.asarray(diameters, dtype=float).ravel()
    if d.size < 2:
        raise ValueError("need at least two diameters")
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("diameters must be positive and finite")
    ln = np.log(d)
    mu = float(np.mean(ln))
    sigma = float(np.sqrt(np.mean((ln - mu) ** 2)))
    return mu, sigma


def max_vf_for_gap(min_gap: float) -> float:
    """Densest monodisperse packing when every surface gap is at least ``min_gap * R``."""
    return HEX_PACKING_LIMIT * (2.0 / (2.0 + min_gap)) ** 2


def _draw_relative_radii(p: SrmParams, rng) -> np.ndarray:
    if p.radius_dist == "monodisperse":
        return np.ones(p.n_fibers)
    _, mu, sigma = p.radius_dist
    return 0.5 * np.exp(rng.normal(mu, sigma, p.n_fibers))


def domain_for(n: int, vf: float, mean_radius: float = 1.0, aspect: float = 1.0, rms_ratio: float = 1.0) -> Domain:
    """Window that holds ``n`` fibers of the given mean radius at ``vf``.

    ``rms_ratio`` is ``E[r^2] / E[r]^2`` of the radius distribution.
    """
    area = n * math.pi * mean_radius**2 * rms_ratio / vf
    lx = math.sqrt(area / aspect)
    return Domain(lx, lx * aspect)


def srm_generate(p: SrmParams, d: Domain | None = None, select: bool = False, record_history: bool = False):
    """Generate a periodic arrangement; returns ``(Microstructure, GenerationTrace)``."""
    if d is None:
        d = Domain(1.0, 1.0)
    if not d.periodic:
        raise ValueError("generation needs a periodic window")
    if p.target_vf >= max_vf_for_gap(p.min_gap):
        raise GenerationError(
            f"target_vf {p.target_vf} unreachable with min_gap {p.min_gap}R "
            f"(limit {max_vf_for_gap(p.min_gap):.4f})"
        )
    rng = np.random.default_rng(p.seed)
    regions = _regions_array(p.regions)
    if p.regions:
        _check_region_feasibility(p, d, regions)
    rel = _draw_relative_radii(p, rng)
    centers = seed_poisson(p.n_fibers, d, rng, p.regions)

    area_rel = float(np.sum(np.pi * rel**2))
    s_target = math.sqrt(p.target_vf * d.area / area_rel)
    s = s_target * math.sqrt(min(p.initial_vf, p.target_vf) / p.target_vf)
    trace = GenerationTrace()
    rate = p.swelling_rate if p.swelling_rate > 0 else 0.01
    window, halvings = 500, 0
    vf_window_start, window_start_step = _vf(s, area_rel, d), 0
    resolved = False
    max_passes = 400
    step = 0
    step_frac = 1.0
    jammed, backoffs = 0, 0
    while step < p.max_steps:
        step += 1
        if resolved and s < s_target:
            s = min(s * (1.0 + rate), s_target)
        radii = s * rel
        rmean = float(np.mean(radii))
        eps = 1e-10 * rmean
        passes, worst = _kernels.resolve_overlaps(centers, radii, d.lx, d.ly, p.min_gap, max_passes, regions, eps)
        resolved = worst == 0.0
        jammed = 0 if resolved else jammed + 1
        if jammed >= JAM_STEPS:
            # jammed: shrink back a few growth steps and anneal with hard-core moves
            if backoffs >= MAX_BACKOFFS:
                trace.steps_used, trace.final_vf, trace.stalled = step, _vf(s, area_rel, d), True
                trace.swelling_halvings = halvings
                raise GenerationError(f"packing jammed at vf={_vf(s, area_rel, d):.4f} after {step} steps", trace)
            s /= (1.0 + rate) ** BACKOFF_STEPS
            radii = s * rel
            _kernels.resolve_overlaps(centers, radii, d.lx, d.ly, p.min_gap, max_passes, regions, eps)
            anneal = ANNEAL_STEP * float(np.mean(radii))
            for _ in range(ANNEAL_SWEEPS):
                acc = _sweep(centers, radii, d, p.min_gap, anneal, rng, regions)
                anneal *= 0.8 if acc < ACCEPT_LOW * p.n_fibers else (1.25 if acc > ACCEPT_HIGH * p.n_fibers else 1.0)
            backoffs += 1
            jammed = 0
            vf_window_start, window_start_step = _vf(s, area_rel, d), step
            continue
        if p.migration_intensity > 0:
            acc = _sweep(centers, radii, d, p.min_gap, step_frac * p.migration_intensity * rmean, rng, regions)
            # shrink the move when most are rejected, never beyond the nominal intensity
            if acc < ACCEPT_LOW * p.n_fibers:
                step_frac = max(step_frac * 0.8, MIN_STEP_FRAC)
            elif acc > ACCEPT_HIGH * p.n_fibers:
                step_frac = min(step_frac * 1.25, 1.0)
        vf = _vf(s, area_rel, d)
        if record_history:
            trace.vf_history.append(vf)
        if resolved and s >= s_target:
            break
        if step - window_start_step >= window:
            if vf - vf_window_start < 1e-4:
                if halvings >= 5:
                    trace.steps_used, trace.final_vf, trace.stalled = step, vf, True
                    trace.swelling_halvings = halvings
                    raise GenerationError(f"packing stalled at vf={vf:.4f} after {step} steps", trace)
                halvings += 1
                rate *= 0.5
            vf_window_start, window_start_step = vf, step
    else:
        trace.steps_used, trace.final_vf, trace.stalled = step, _vf(s, area_rel, d), True
        raise GenerationError(f"max_steps={p.max_steps} reached before target", trace)

    trace.steps_used = step
    trace.swelling_halvings = halvings
    radii = s * rel
    meta = {
        "seed": int(p.seed),
        "generator": GENERATOR_RULE,
        "prng": PRNG_NAME,
        "params": p.to_dict(),
        "radius_scale": s,
        "min_gap": p.min_gap,
        "regions_enforced_on": "centers",
    }
    ms = Microstructure(d, centers, radii, meta)
    trace.final_vf = volume_fraction(ms)
    if select:
        from .geometry import select_window

        ms = select_window(ms, rng=rng)
    return ms, trace


def _vf(s, area_rel, d):
    return s * s * area_rel / d.area


def _sweep(centers, radii, d, gap, step, rng, regions):
    n = len(radii)
    order = rng.permutation(n).astype(np.int64)
    u = rng.random((2, n))
    return _kernels.migrate(centers, radii, d.lx, d.ly, gap, step, order, u[0], u[1], regions)


def _check_region_feasibility(p: SrmParams, d: Domain, regions: np.ndarray, res: int = 256):
    """Reject region sets that cannot host the fibers at the target fraction."""
    xs = (np.arange(res) + 0.5) / res
    ok = np.array([[_kernels.admissible(x * d.lx, y * d.ly, regions, d.lx, d.ly) for y in xs] for x in xs])
    frac = ok.mean()
    if frac == 0:
        raise GenerationError("restricted regions leave no admissible area")
    # centers may sit on the region edge, so fibers overhang it by about one radius
    r_mean = math.sqrt(p.target_vf * d.area / (p.n_fibers * math.pi))
    cell = d.lx / res
    grow = max(1, int(round(r_mean / cell)))
    yy, xx = np.mgrid[-grow : grow + 1, -grow : grow + 1]
    dilated = ndimage.maximum_filter(ok.astype(np.uint8), footprint=(xx**2 + yy**2) <= grow**2, mode="wrap") > 0
    local_vf = p.target_vf / dilated.mean()
    if local_vf > max_vf_for_gap(p.min_gap):
        raise GenerationError(
            f"restricted regions force a local fiber fraction of {local_vf:.3f}, above the packing limit"
        )


def srm_generate_restricted(p: SrmParams, d: Domain | None = None):
    """Generation with restricted migration regions; returns the microstructure."""
    if not p.regions:
        raise ValueError("srm_generate_restricted needs at least one region")
    ms, _ = srm_generate(p, d)
    return ms


# relaxation ------------------------------------------------------------------


def _gap_of(ms: Microstructure, min_gap: float | None) -> float:
    if min_gap is not None:
        return float(min_gap)
    return float(ms.meta.get("min_gap", 0.0))


def relax(
    ms: Microstructure,
    migration_rate: float,
    n_snapshots: int,
    steps_per_snapshot: int,
    rng=None,
    min_gap: float | None = None,
) -> list[Microstructure]:
    """Zero-swelling random migration; returns ``n_snapshots`` states, the input first.

    ``migration_rate`` is the move size in units of the mean radius.
    """
    if not ms.domain.periodic:
        raise ValueError("relaxation needs a periodic microstructure")
    rng = np.random.default_rng(rng)
    gap = _gap_of(ms, min_gap)
    regions = np.zeros((0, 7))
    centers = np.array(ms.centers)
    radii = np.array(ms.radii)
    step = migration_rate * ms.mean_radius
    out = [ms]
    total = 0
    for k in range(1, n_snapshots):
        for _ in range(steps_per_snapshot):
            if step > 0:
                _sweep(centers, radii, ms.domain, gap, step, rng, regions)
            total += 1
        out.append(ms.replace(centers=centers.copy(), relax_sweeps=total, relax_rate=migration_rate))
    return out


def match_mnn(
    ms: Microstructure,
    target_d: float,
    tol: float = 0.005,
    rng=None,
    min_gap: float | None = None,
    max_steps: int = 20_000,
    initial_rate: float = 0.05,
) -> Microstructure:
    """Relax until the mean nearest-neighbor gap (in mean radii) is within ``tol`` of ``target_d``.

    Relaxation only opens contacts, so targets below the current value are
    rejected. Sweeps that overshoot the tolerance band are undone and retried
    with a smaller move.
    """
    from .descriptors import mean_nn_distance

    current = mean_nn_distance(ms)
    if abs(current - target_d) <= tol:
        return ms
    if target_d < current:
        raise GenerationError(f"target MNN {target_d:.4f} below current {current:.4f}; relaxation cannot decrease it")
    rng = np.random.default_rng(rng)
    gap = _gap_of(ms, min_gap)
    regions = np.zeros((0, 7))
    centers = np.array(ms.centers)
    radii = np.array(ms.radii)
    rate = initial_rate
    for k in range(max_steps):
        trial = centers.copy()
        _sweep(trial, radii, ms.domain, gap, rate * ms.mean_radius, rng, regions)
        val = mean_nn_distance(ms.replace(centers=trial))
        if val > target_d + tol and rate > 1e-4:
            rate *= 0.5
            continue
        centers = trial
        if abs(val - target_d) <= tol:
            return ms.replace(centers=centers, mnn_matched_to=target_d, relax_sweeps=k + 1)
    raise GenerationError(f"MNN target {target_d:.4f} not reached in {max_steps} sweeps (at {val:.4f})")


# regular lattices ------------------------------------------------------------


def _hex_rows(n_cells_x: int) -> int:
    rows = max(2, int(round(n_cells_x * 2.0 / math.sqrt(3.0))))
    return rows + (rows % 2)


def _hex_sites(n_cells_x: int, n_rows: int, spacing: float):
    i, j = np.meshgrid(np.arange(n_cells_x), np.arange(n_rows), indexing="ij")
    i, j = i.ravel(), j.ravel()
    x = (i + 0.5 * (j % 2) + 0.25) * spacing
    y = (j + 0.5) * spacing * math.sqrt(3.0) / 2.0
    return i, j, np.stack([x, y], axis=1)


def hex_spacing(vf: float, radius: float = 1.0) -> float:
    return radius * math.sqrt(2.0 * math.pi / (math.sqrt(3.0) * vf))


def hexagonal_lattice(vf: float, n_cells_x: int = 6, radius: float = 1.0, n_rows: int | None = None) -> Microstructure:
    """Monodisperse hexagonal packing tiling a periodic rectangle.

    The rectangle is ``n_cells_x`` spacings wide and an even number of rows
    high, so it tiles the plane; ``ly / lx = (sqrt(3)/2) * n_rows / n_cells_x``.
    """
    if not (0.0 < vf <= HEX_PACKING_LIMIT + 1e-15):
        raise ValueError(f"vf must lie in (0, {HEX_PACKING_LIMIT:.6f}], got {vf}")
    if n_rows is None:
        n_rows = _hex_rows(n_cells_x)
    if n_rows % 2:
        raise ValueError("n_rows must be even for a periodic hexagonal window")
    a = hex_spacing(vf, radius)
    _, _, c = _hex_sites(n_cells_x, n_rows, a)
    dom = Domain(n_cells_x * a, n_rows * a * math.sqrt(3.0) / 2.0)
    meta = {"generator": "hexagonal", "lattice_spacing": a, "min_gap": 0.0}
    return Microstructure(dom, c, np.full(len(c), radius), meta)


DEPLETION_PATTERNS = {
    # sqrt(3) x sqrt(3) R30 superlattice: removing it leaves a honeycomb
    "third": np.array([[(ip - j) % 3 == 0 for ip in range(3)] for j in range(3)]),
    # 2 x 2 superlattice: removing it leaves a kagome net
    "quarter": np.array([[ip % 2 == 0 and j % 2 == 0 for ip in range(2)] for j in range(2)]),
}


def _pattern_tiles(mask: np.ndarray, nx: int, ny: int) -> bool:
    mj, mi = mask.shape
    for j in range(mj):
        for ip in range(mi):
            v = mask[j, ip]
            if mask[j, (ip + nx) % mi] != v:
                return False
            if mask[(j + ny) % mj, (ip - ny // 2) % mi] != v:
                return False
    return True


def depleted_hexagonal(
    base_vf: float,
    pattern: str | np.ndarray = "third",
    n_cells_x: int = 12,
    radius: float = 1.0,
    n_rows: int | None = None,
) -> Microstructure:
    """Hexagonal packing with a periodic superlattice of sites removed.

    ``pattern`` is ``"third"``, ``"quarter"`` or a boolean mask indexed
    ``[row % mask_rows, lattice_column % mask_cols]`` in oblique lattice
    coordinates (column ``i' = i - row // 2``); ``True`` sites are removed.
    """
    mask = DEPLETION_PATTERNS[pattern] if isinstance(pattern, str) else np.asarray(pattern, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError("depletion mask must be a non-empty 2D array")
    if n_rows is None:
        n_rows = _hex_rows(n_cells_x)
        # grow rows until the mask tiles, if that is possible at all
        for extra in range(0, 4 * mask.shape[0] * mask.shape[1] + 2, 2):
            if _pattern_tiles(mask, n_cells_x, n_rows + extra):
                n_rows += extra
                break
    if not _pattern_tiles(mask, n_cells_x, n_rows):
        raise ValueError(f"pattern does not tile a {n_cells_x} x {n_rows} hexagonal window")
    base = hexagonal_lattice(base_vf, n_cells_x, radius, n_rows)
    i, j, _ = _hex_sites(n_cells_x, n_rows, base.meta["lattice_spacing"])
    ip = i - j // 2
    removed = mask[j % mask.shape[0], ip % mask.shape[1]]
    keep = ~removed
    name = pattern if isinstance(pattern, str) else "custom"
    return base.replace(
        centers=base.centers[keep], radii=base.radii[keep], generator=f"depleted_hexagonal/{name}", base_vf=base_vf
    )


# regime presets --------------------------------------------------------------

REGIMES = {
    # name: (swelling_rate, migration_intensity)
    "clustered": (0.01, 0.0),
    "clustered_mild": (0.01, 0.1),
    "intermediate": (0.002, 0.1),
    "near_equilibrium": (0.002, 0.3),
    "equilibrium": (0.002, 0.5),
}


def regime_params(regime: str, n_fibers: int, target_vf: float, seed: int = 0, **kw) -> SrmParams:
    try:
        swell, mig = REGIMES[regime]
    except KeyError:
        raise ValueError(f"unknown regime {regime!r}; known: {sorted(REGIMES)}") from None
    kw.setdefault("swelling_rate", swell)
    kw.setdefault("migration_intensity", mig)
    return SrmParams(n_fibers=n_fibers, target_vf=target_vf, seed=seed, **kw)
