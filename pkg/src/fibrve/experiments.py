"""Desk-scale parametric studies: min-gap sweep, stiffness cloud, MNN series,
morphology bracket and the statistical-equivalence workflow.

Stiffness outputs are normalized by the matrix modulus unless noted. Every
study returns plain row dicts; ``write_study`` persists a table plus a JSON
run manifest next to it.
"""

from __future__ import annotations

import dataclasses
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .descriptors import PAIR_DELTA_H, compare_descriptors, compute_descriptors, mean_nn_distance
from .generate import (
    GENERATOR_RULE,
    REGIMES,
    RestrictedRegion,
    SrmParams,
    depleted_hexagonal,
    domain_for,
    fit_lognormal,
    hexagonal_lattice,
    match_mnn,
    regime_params,
    relax,
    srm_generate,
    srm_generate_restricted,
)
from .geometry import Microstructure, volume_fraction
from .homogenize import PHASE_SETS, ElasticPhase, effective_properties, two_step_upper
from .io import ingest_micrograph, write_dict_rows, write_manifest

# property RVEs hold about (L/R)^2 = 40^2 worth of area
PROPERTY_L_OVER_R = 40.0
DESCRIPTOR_L_OVER_R = 55.0
DEFAULT_CELL = 0.1  # grid cell size in mean radii


def resolve_phases(phases) -> tuple[ElasticPhase, ElasticPhase]:
    if isinstance(phases, str):
        try:
            return PHASE_SETS[phases]
        except KeyError:
            raise ValueError(f"unknown phase set {phases!r}; known: {sorted(PHASE_SETS)}") from None
    fiber, matrix = phases
    return fiber, matrix


def fibers_for(vf: float, l_over_r: float = PROPERTY_L_OVER_R) -> int:
    """Fiber count giving a square window of side ``l_over_r`` mean radii."""
    return max(2, int(round(vf * l_over_r**2 / math.pi)))


def grid_size(ms: Microstructure, cell: float = DEFAULT_CELL) -> int:
    """Even cell count for the longer window side at ``cell`` mean radii per cell."""
    n = int(math.ceil(max(ms.domain.lx, ms.domain.ly) / (cell * ms.mean_radius)))
    return max(16, n + (n % 2))


def stiffness(ms: Microstructure, phases, nx: int | None = None, cell: float = DEFAULT_CELL, bc_mode=None) -> dict:
    """Homogenize one RVE; moduli are returned raw and normalized by ``E_m``."""
    fiber, matrix = resolve_phases(phases)
    n = nx if nx is not None else grid_size(ms, cell)
    p = effective_properties(ms, (fiber, matrix), nx=n, bc_mode=bc_mode)
    row = p.as_row()
    row["E_norm"] = p.E_transverse / matrix.E
    row["nx"] = n
    row["vf"] = volume_fraction(ms)
    row["mnn"] = mean_nn_distance(ms) if ms.n >= 2 else math.nan
    row["seconds"] = p.diagnostics.get("seconds")
    return row


def run_tasks(fn: Callable, tasks: Sequence, n_jobs: int = 1) -> list:
    """Map ``fn`` over ``tasks`` in order; ``n_jobs != 1`` uses a process pool."""
    if n_jobs == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(t) for t in tasks)


def _seed_list(seeds) -> list[int]:
    if isinstance(seeds, (int, np.integer)):
        if seeds < 1:
            raise ValueError("need at least one seed")
        return list(range(int(seeds)))
    out = [int(s) for s in seeds]
    if not out:
        raise ValueError("need at least one seed")
    return out


# fits --------------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    intercept: float
    slope: float
    r_squared: float

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x)


def linear_fit(xs, ys) -> FitResult:
    """Ordinary least squares ``y = a + b x``; R^2 is 0 when ``y`` is constant."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D and of equal length")
    if len(np.unique(x)) < 2:
        raise ValueError("linear fit needs at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    sxy = np.sum((x - xm) * (y - ym))
    slope = sxy / sxx
    intercept = ym - slope * xm
    ss_tot = np.sum((y - ym) ** 2)
    if ss_tot == 0:
        r2 = 0.0
    else:
        r2 = 1.0 - np.sum((y - intercept - slope * x) ** 2) / ss_tot
    return FitResult(float(intercept), float(slope), float(min(1.0, max(0.0, r2))))


# sweep spec --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    base: SrmParams
    parameter: str
    values: tuple
    seeds: tuple = tuple(range(10))
    phases: str | tuple = "contrast_26.5"
    nx: int | None = None
    cell: float = DEFAULT_CELL
    output: str | None = None
    regimes: tuple = ("clustered", "equilibrium")
    n_jobs: int = 1

    def __post_init__(self):
        if not self.values:
            raise ValueError("sweep grid is empty")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "seeds", tuple(_seed_list(self.seeds)))
        if self.parameter not in {f.name for f in dataclasses.fields(SrmParams)}:
            raise ValueError(f"unknown SrmParams field {self.parameter!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["base"] = self.base.to_dict()
        return d


def default_min_gap_spec(**kw) -> SweepSpec:
    base = SrmParams(n_fibers=250, target_vf=0.65)
    args = dict(base=base, parameter="min_gap", values=(1e-4, 1e-3, 1e-2, 0.1, 0.25))
    args.update(kw)
    return SweepSpec(**args)


def _gap_task(args):
    p, phases, nx, cell = args
    ms, _ = srm_generate(p, domain_for(p.n_fibers, p.target_vf))
    row = stiffness(ms, phases, nx, cell)
    row.update(seed=p.seed, min_gap_value=p.min_gap)
    return row


def sweep_min_gap(spec: SweepSpec) -> tuple[list[dict], list[dict]]:
    """Mean normalized stiffness per (regime, min_gap); hexagonal reference appended.

    Returns ``(summary_rows, per_rve_rows)``.
    """
    tasks, keys = [], []
    for regime in spec.regimes:
        for v in spec.values:
            for seed in spec.seeds:
                p = regime_params(regime, spec.base.n_fibers, spec.base.target_vf, seed=seed)
                p = p.replace(radius_dist=spec.base.radius_dist, **{spec.parameter: v})
                tasks.append((p, spec.phases, spec.nx, spec.cell))
                keys.append((regime, v, seed))
    raw = run_tasks(_gap_task, tasks, spec.n_jobs)
    per_rve = []
    for (regime, v, seed), row in zip(keys, raw):
        per_rve.append({"regime": regime, spec.parameter: v, "seed": seed, **row})
    summary = []
    for regime in spec.regimes:
        for v in spec.values:
            e = np.array([r["E_norm"] for r in per_rve if r["regime"] == regime and r[spec.parameter] == v])
            summary.append(
                {
                    "regime": regime,
                    spec.parameter: v,
                    "mean": float(e.mean()),
                    "std": float(e.std(ddof=1)) if len(e) > 1 else 0.0,
                    "n": len(e),
                }
            )
    hexrow = hexagonal_reference(spec.base.target_vf, spec.phases)
    summary.append({"regime": "hexagonal", spec.parameter: math.nan, "mean": hexrow, "std": 0.0, "n": 1})
    return summary, per_rve


def hexagonal_reference(vf: float, phases, nx: int = 96) -> float:
    """Normalized transverse stiffness of the hexagonal packing at ``vf``."""
    fiber, matrix = resolve_phases(phases)
    cell = hexagonal_lattice(vf, n_cells_x=1, n_rows=2)
    return effective_properties(cell, (fiber, matrix), nx=nx).E_transverse / matrix.E


# stiffness cloud -----------------------------------------------------------------------

CLOUD_VF = (0.40, 0.50, 0.60, 0.65, 0.70)
CLOUD_REGIMES = tuple(REGIMES)


def _cloud_task(args):
    vf, regime, seed, phases, nx, cell, l_over_r = args
    n = fibers_for(vf, l_over_r)
    p = regime_params(regime, n, vf, seed=seed)
    ms, _ = srm_generate(p, domain_for(n, vf))
    row = stiffness(ms, phases, nx, cell)
    row.update(regime=regime, seed=seed, target_vf=vf)
    return row


def stiffness_cloud(
    vf_grid=CLOUD_VF,
    regimes=CLOUD_REGIMES,
    seeds=5,
    phases="contrast_25",
    nx: int | None = None,
    cell: float = DEFAULT_CELL,
    l_over_r: float = PROPERTY_L_OVER_R,
    depleted: Sequence[tuple[float, str]] = ((0.9, "third"), (0.9, "quarter")),
    n_jobs: int = 1,
    upper_nx: int = 384,
) -> dict:
    """Cloud of SRM stiffnesses with the hexagonal and two-step envelopes.

    Returns ``{"points", "hexagonal", "upper", "depleted"}``, each a list of rows.
    """
    seeds = _seed_list(seeds)
    tasks = [(vf, reg, s, phases, nx, cell, l_over_r) for vf in vf_grid for reg in regimes for s in seeds]
    points = run_tasks(_cloud_task, tasks, n_jobs)
    fiber, matrix = resolve_phases(phases)
    hexagonal = [{"vf": vf, "E_norm": hexagonal_reference(vf, phases)} for vf in vf_grid]
    upper = [{"vf": vf, "E_norm": two_step_upper((fiber, matrix), vf, upper_nx) / matrix.E} for vf in vf_grid]
    dep = []
    for base_vf, pattern in depleted:
        ms = depleted_hexagonal(base_vf, pattern, n_cells_x=6)
        p = effective_properties(ms, (fiber, matrix), nx=grid_size(ms, 0.05))
        dep.append(
            {
                "pattern": pattern,
                "base_vf": base_vf,
                "vf": volume_fraction(ms),
                "E_norm": p.E_transverse / matrix.E,
                "E_x_over_E_y": p.E_x / p.E_y,
                "upper": two_step_upper((fiber, matrix), volume_fraction(ms), upper_nx) / matrix.E,
            }
        )
    return {"points": points, "hexagonal": hexagonal, "upper": upper, "depleted": dep}


def envelope_check(cloud: dict, lower_slack: float = 0.01) -> list[dict]:
    """Per cloud point: position relative to the hexagonal and two-step curves."""
    hexa = {round(r["vf"], 6): r["E_norm"] for r in cloud["hexagonal"]}
    upp = {round(r["vf"], 6): r["E_norm"] for r in cloud["upper"]}
    out = []
    for p in cloud["points"]:
        key = round(p["target_vf"], 6)
        out.append(
            {
                "target_vf": p["target_vf"],
                "regime": p["regime"],
                "seed": p["seed"],
                "E_norm": p["E_norm"],
                "hexagonal": hexa[key],
                "upper": upp[key],
                "above_lower": p["E_norm"] >= hexa[key] * (1 - lower_slack),
                "below_upper": p["E_norm"] <= upp[key],
            }
        )
    return out


# MNN series ------------------------------------------------------------------------------


def _relaxation_states(vf, seed, n_points, n_fibers, migration_rate, sweeps_total, min_gap):
    p = regime_params("clustered", n_fibers, vf, seed=seed, min_gap=min_gap)
    ms, _ = srm_generate(p, domain_for(n_fibers, vf))
    # sweep counts grow geometrically: MNN changes fastest at the start
    marks = np.unique(np.round(np.geomspace(1, sweeps_total, n_points - 1)).astype(int))
    states = [ms]
    done = 0
    rng = np.random.default_rng(seed + 1_000_003)
    cur = ms
    for m in marks:
        seq = relax(cur, migration_rate, 2, int(m - done), rng=rng)
        cur = seq[-1].replace(relax_sweeps=int(m))
        done = m
        states.append(cur)
    return states


def _mnn_task(args):
    ms, phases, nx, cell, seed, k = args
    row = stiffness(ms, phases, nx, cell)
    row.update(seed=seed, snapshot=k, relax_sweeps=ms.meta.get("relax_sweeps", 0))
    return row


def mnn_series(
    vf: float = 0.6,
    n_series_points: int = 6,
    seeds=3,
    phases="contrast_25",
    nx: int | None = None,
    cell: float = DEFAULT_CELL,
    n_fibers: int | None = None,
    migration_rate: float = 0.02,
    sweeps_total: int = 8000,
    min_gap: float = 0.01,
    n_jobs: int = 1,
) -> tuple[list[dict], FitResult]:
    """Stiffness along relaxation paths from clustered starts; OLS of E/E_m on MNN.

    The default path length takes a clustered start at vf 0.6 to about the
    equilibrium MNN (0.084 there), so the snapshots span the whole
    clustered-to-equilibrium range.
    """
    seeds = _seed_list(seeds)
    n = n_fibers or fibers_for(vf)
    tasks = []
    for s in seeds:
        states = _relaxation_states(vf, s, n_series_points, n, migration_rate, sweeps_total, min_gap)
        tasks += [(st, phases, nx, cell, s, k) for k, st in enumerate(states)]
    rows = run_tasks(_mnn_task, tasks, n_jobs)
    fit = linear_fit([r["mnn"] for r in rows], [r["E_norm"] for r in rows])
    return rows, fit


# restricted-migration morphologies ----------------------------------------------------


def pocket_regions(domain, n_pockets: int, radius: float, rng) -> tuple[RestrictedRegion, ...]:
    """Forbidden discs on a jittered grid (matrix pockets)."""
    k = int(math.ceil(math.sqrt(n_pockets)))
    out = []
    for idx in range(n_pockets):
        i, j = divmod(idx, k)
        cx = (i + 0.5 + 0.3 * (rng.random() - 0.5)) * domain.lx / k
        cy = (j + 0.5 + 0.3 * (rng.random() - 0.5)) * domain.ly / k
        out.append(RestrictedRegion("disc", (cx, cy, radius), "forbidden_to_enter"))
    return tuple(out)


def bundle_regions(domain, n_bundles: int, length: float, half_width: float, rng) -> tuple[RestrictedRegion, ...]:
    """Confining capsules ("needles") with random orientation on a jittered grid (fiber bundles)."""
    k = int(math.ceil(math.sqrt(n_bundles)))
    out = []
    for idx in range(n_bundles):
        i, j = divmod(idx, k)
        cx = (i + 0.5) * domain.lx / k
        cy = (j + 0.5) * domain.ly / k
        ang = rng.uniform(0, math.pi)
        dx, dy = 0.5 * length * math.cos(ang), 0.5 * length * math.sin(ang)
        out.append(RestrictedRegion("capsule", (cx - dx, cy - dy, cx + dx, cy + dy, half_width), "confined_within"))
    return tuple(out)


def morphology_set(vf: float = 0.65, seed: int = 0, n_fibers: int | None = None, min_gap: float = 0.01) -> dict:
    """Random-clustered, matrix-pocket and fiber-bundle arrangements at one ``vf``."""
    n = n_fibers or fibers_for(vf)
    d = domain_for(n, vf)
    rng = np.random.default_rng(seed + 7_919)
    R = math.sqrt(vf * d.area / (n * math.pi))  # mean radius of the final packing
    L = d.lx / R
    base = regime_params("clustered", n, vf, seed=seed, min_gap=min_gap)
    clustered, _ = srm_generate(base, d)
    # pockets: matrix area ~ 1 - vf / 0.8 of the window held by forbidden discs
    n_pockets = max(4, int(round((L / 10.0) ** 2)))
    pocket_area = (1.0 - vf / 0.8) * d.area
    pr = math.sqrt(pocket_area / (n_pockets * math.pi))
    pockets = srm_generate_restricted(base.replace(regions=pocket_regions(d, n_pockets, pr, rng)), d)
    # bundles: confined capsules covering about vf / 0.8 of the window
    n_b = max(4, int(round((L / 10.0) ** 2)))
    cell_side = d.lx / math.ceil(math.sqrt(n_b))
    target_area = (vf / 0.78) * d.area / n_b
    length = 0.8 * cell_side
    hw = _capsule_half_width(target_area, length)
    bundles = srm_generate_restricted(base.replace(regions=bundle_regions(d, n_b, length, hw, rng)), d)
    return {"random_clustered": clustered, "matrix_pockets": pockets, "fiber_bundles": bundles}


def _capsule_half_width(area: float, length: float) -> float:
    # area = 2 w length + pi w^2
    return (-2 * length + math.sqrt(4 * length**2 + 4 * math.pi * area)) / (2 * math.pi)


def morphology_bracket(
    vf: float = 0.65,
    seeds=1,
    phases="contrast_25",
    nx: int | None = None,
    cell: float = DEFAULT_CELL,
    n_fibers: int | None = None,
    tol: float = 0.001,
) -> list[dict]:
    """Stiffness of the three morphologies after relaxing them to a common MNN.

    The common target is the largest MNN among the three (relaxation only
    raises it).
    """
    rows = []
    for seed in _seed_list(seeds):
        morph = morphology_set(vf, seed, n_fibers)
        mnn = {k: mean_nn_distance(v) for k, v in morph.items()}
        target = max(mnn.values())
        for k, (name, ms) in enumerate(morph.items()):
            matched = match_mnn(ms, target, tol=tol, rng=seed * 31 + k)
            row = stiffness(matched, phases, nx, cell)
            row.update(
                morphology=name,
                seed=seed,
                mnn_before=mnn[name],
                target_mnn=target,
                lvf_std=_lvf_std(matched),
            )
            rows.append(row)
    return rows


def _lvf_std(ms) -> float:
    from .descriptors import local_volume_fraction

    return float(local_volume_fraction(ms).std)


# statistical equivalence ------------------------------------------------------------------


@dataclass
class EquivalenceReport:
    micrograph: str
    vf: float
    lognormal: tuple[float, float]
    params: dict
    descriptor_summary: list[float]
    reconstructed: dict | None
    generated: list[dict] = field(default_factory=list)
    micrograph_ms: Microstructure | None = field(default=None, repr=False)
    rves: list[Microstructure] = field(default_factory=list, repr=False)

    @property
    def generated_mean(self) -> float:
        return float(np.mean([r["E_transverse"] for r in self.generated]))

    @property
    def generated_std(self) -> float:
        e = [r["E_transverse"] for r in self.generated]
        return float(np.std(e, ddof=1)) if len(e) > 1 else 0.0

    def table(self) -> list[dict]:
        rec = self.reconstructed
        return [
            {
                "vf": self.vf,
                "reconstructed_E": rec["E_transverse"] if rec else math.nan,
                "generated_E_mean": self.generated_mean,
                "generated_E_std": self.generated_std,
                "relative_difference": (self.generated_mean - rec["E_transverse"]) / rec["E_transverse"]
                if rec
                else math.nan,
                "descriptor_ks_max": max(self.descriptor_summary) if self.descriptor_summary else math.nan,
            }
        ]


def common_h_values(rec: Microstructure, gens: Sequence[Microstructure], n: int = 60) -> np.ndarray:
    """Shared h grid (mean radii) valid for the cropped micrograph and every periodic RVE."""
    R = rec.mean_radius
    lo = rec.centers.min(axis=0)
    hi = rec.centers.max(axis=0)
    margin = min(-lo[0], -lo[1], hi[0] - rec.domain.lx, hi[1] - rec.domain.ly) / R
    half = min(0.5 * min(g.domain.lx, g.domain.ly) / g.mean_radius for g in gens)
    # the outermost pair-distribution hoop must stay inside the margin too
    h_max = min(10.0, 0.999 * margin - PAIR_DELTA_H, half)
    if h_max <= 0:
        raise ValueError("micrograph crop leaves no margin for Ripley statistics")
    return np.linspace(h_max / n, h_max, n)


def equivalent_rve(params: SrmParams, seed: int, select: bool = True) -> Microstructure:
    p = params.replace(seed=seed)
    rel_rms = 1.0
    if isinstance(p.radius_dist, (tuple, list)) and p.radius_dist[0] == "lognormal":
        sigma = float(p.radius_dist[2])
        rel_rms = math.exp(sigma**2)  # E[r^2] / E[r]^2 for a log-normal
    d = domain_for(p.n_fibers, p.target_vf, rms_ratio=rel_rms)
    ms, _ = srm_generate(p, d, select=select)
    return ms


def synthetic_micrograph(
    vf: float,
    n_fibers: int = 700,
    mean_diameter: float = 17.0,
    sigma: float = 0.08,
    regime: str = "near_equilibrium",
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Stand-in for a measured fiber table: ``(centers, diameters)`` in micrometres.

    A periodic RVE is scaled to ``mean_diameter`` and viewed through one
    period-sized window at a random offset, so fibers crossing the image edge
    are listed with their centers inside the image, as image analysis reports them.
    """
    p = regime_params(regime, n_fibers, vf, seed=seed, radius_dist=("lognormal", 0.0, sigma))
    ms = equivalent_rve(p, seed, select=False)
    s = 0.5 * mean_diameter / ms.mean_radius
    rng = np.random.default_rng(seed + 7919)
    offset = rng.uniform(0, 1, 2) * ms.domain.lengths
    xy = np.mod(ms.centers - offset, ms.domain.lengths) * s
    return xy, 2.0 * ms.radii * s


def equivalence_workflow(
    micrograph_csv,
    srm_params: SrmParams | None = None,
    seeds=3,
    phases="glass_epoxy",
    nx: int | None = None,
    cell: float = DEFAULT_CELL,
    regime: str = "near_equilibrium",
    crop="auto",
    columns=None,
    homogenize_reconstructed: bool = True,
) -> EquivalenceReport:
    """Fit diameters, generate equivalent RVEs, compare descriptors, homogenize both sides.

    Without ``srm_params`` the named regime is used with the micrograph's
    volume fraction and fitted diameter spread at ``L/R`` about 40.
    """
    rec = ingest_micrograph(micrograph_csv, crop=crop, columns=columns)
    vf = volume_fraction(rec)
    mu, sigma = fit_lognormal(2.0 * rec.radii)
    if srm_params is None:
        srm_params = regime_params(regime, fibers_for(vf), vf, radius_dist=("lognormal", 0.0, sigma))
    seeds = _seed_list(seeds)
    gens = [equivalent_rve(srm_params, s) for s in seeds]
    h = common_h_values(rec, gens)
    ref = compute_descriptors(rec, h)
    summary = [compare_descriptors(ref, compute_descriptors(g, h))["summary"] for g in gens]
    fiber, matrix = resolve_phases(phases)
    recon = None
    if homogenize_reconstructed:
        recon = stiffness(rec, (fiber, matrix), nx, cell, bc_mode="mixed")
    generated = []
    for s, g in zip(seeds, gens):
        row = stiffness(g, (fiber, matrix), nx, cell)
        row["seed"] = s
        generated.append(row)
    return EquivalenceReport(
        str(micrograph_csv), vf, (mu, sigma), srm_params.to_dict(), summary, recon, generated, rec, gens
    )


# persistence ------------------------------------------------------------------------------


def manifest(study: str, params: dict, seeds=None, started: float | None = None) -> dict:
    return {
        "study": study,
        "package_version": __version__,
        "generator": GENERATOR_RULE,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "params": params,
        "seeds": list(seeds) if seeds is not None else None,
        "wall_seconds": None if started is None else time.perf_counter() - started,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }


def write_study(path, rows: Sequence[dict], meta: dict) -> tuple[Path, Path]:
    """Write ``rows`` to ``path`` (CSV) and the manifest to ``<stem>.manifest.json``."""
    path = Path(path)
    csv_path = write_dict_rows(path, rows)
    man_path = write_manifest(path.with_name(path.stem + ".manifest.json"), meta)
    return csv_path, man_path
