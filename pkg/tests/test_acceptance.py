"""Acceptance suite: one test (or a few parts) per numbered criterion.

Each part is reported through ``conftest.record`` and summarized at the end
of the run, one line per criterion. Parts that are known not to hold with
this implementation are marked ``xfail(strict=False)``; they still run at
full tolerance and are reported as FAIL.
"""

import math
import os
import time

import numpy as np
import pytest

from fibrve import descriptors as dsc
from fibrve import experiments as exp
from fibrve.generate import domain_for, hexagonal_lattice, regime_params, srm_generate
from fibrve.geometry import Domain, Microstructure, hexagonal_gap, validate, volume_fraction
from fibrve.homogenize import (
    PHASE_SETS,
    ElasticPhase,
    PeriodicGridModel,
    convergence_study,
    effective_properties,
    effective_properties_grid,
    voigt_reuss,
)

from conftest import FIXTURES, random_disks, record
from test_descriptors import k_oracle, nn_oracle, voronoi_oracle
from test_homogenize import dense_oracle

JOBS = os.cpu_count() or 1

T1 = "Poisson Ripley K"
T2 = "descriptor oracles"
T3 = "hexagonal analytics"
T4 = "generation validity"
T5 = "solver limits"
T6 = "grid convergence"
T7 = "Table 1 reproduction"
T8 = "min-gap sweep"
T9 = "stiffness envelopes"
T10 = "MNN linearity and morphology bracket"


def _check(criterion, title, ok, detail):
    record(criterion, title, ok, detail)
    assert ok, detail


# 1 ------------------------------------------------------------------------------------


def test_c1_poisson_ripley_k():
    t0 = time.perf_counter()
    L = 1.0
    h = np.linspace(0.01, 0.2, 20) * L
    ratios = []
    for seed in range(20):
        pts = np.random.default_rng(seed).uniform(0, L, (2000, 2))
        ms = Microstructure(Domain(L, L), pts, np.full(2000, 1e-9))
        ratios.append(dsc.ripley_k(ms, h).k_values / (np.pi * h**2))
    dev = float(np.max(np.abs(np.mean(ratios, axis=0) - 1)))
    _check(1, T1, dev <= 0.05, f"max |K/(pi h^2) - 1| = {dev:.4f} (<= 0.05), {time.perf_counter() - t0:.1f} s")


# 2 ------------------------------------------------------------------------------------


def test_c2_descriptor_oracles():
    t0 = time.perf_counter()
    worst = {"nn": 0.0, "area": 0.0, "pair": 0.0, "k": 0.0}
    pairs_ok = True
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(5, 101))
        ms = Microstructure(Domain(10, 8), rng.uniform(0, 1, (n, 2)) * [10, 8], rng.uniform(0.05, 0.25, n))
        gaps, _ = dsc.nearest_gaps(ms)
        worst["nn"] = max(worst["nn"], float(np.max(np.abs(gaps - nn_oracle(ms)))))
        diagram = dsc.voronoi(ms)
        areas, pairs = voronoi_oracle(ms)
        worst["area"] = max(worst["area"], float(np.max(np.abs(diagram.areas - areas))))
        got = {tuple(p): g for p, g in zip(diagram.pairs.tolist(), diagram.pair_gaps)}
        pairs_ok &= set(got) == set(pairs)
        if set(got) == set(pairs):
            worst["pair"] = max(worst["pair"], max(abs(got[k] - v) for k, v in pairs.items()))
        h = np.linspace(0.1, 3.9, 25)
        kk = dsc.ripley_k(ms, h).k_values
        worst["k"] = max(worst["k"], float(np.max(np.abs(kk - k_oracle(ms, h)) / k_oracle(ms, h).clip(1e-300))))
    # distances are exact up to the last few ulps of the subtraction
    ok = pairs_ok and worst["nn"] < 1e-12 and worst["pair"] < 1e-12 and worst["area"] <= 1e-9 and worst["k"] < 1e-12
    _check(
        2,
        T2,
        ok,
        f"neighbor sets equal={pairs_ok}, max NN err {worst['nn']:.1e}, pair gap err {worst['pair']:.1e}, "
        f"area err {worst['area']:.1e} (<= 1e-9), K rel err {worst['k']:.1e}, {time.perf_counter() - t0:.1f} s",
    )


# 3 ------------------------------------------------------------------------------------


def test_c3_hexagonal_analytics():
    ms = hexagonal_lattice(0.65, n_cells_x=8)
    exact = hexagonal_gap(0.65)  # sqrt(2 pi / (sqrt(3) 0.65)) - 2 = 0.3623973...
    gaps, _ = dsc.nearest_gaps(ms)
    err = float(np.max(np.abs(gaps - exact)))
    lvf_std = dsc.local_volume_fraction(ms).std
    a = ms.meta["lattice_spacing"]
    dh = 0.02
    h = np.arange(1.0, 3.5, dh)
    g = dsc.pair_distribution(ms, h, delta_h=dh)
    first = int(np.argmax(g.g_values > 0))
    peak = h[first + int(np.argmax(g.g_values[first : first + int(0.5 / dh)]))]
    ok = err <= 1e-6 and abs(lvf_std) <= 1e-12 and peak <= a < peak + dh
    _check(
        3,
        T3,
        ok,
        f"NN gap {float(np.mean(gaps)):.7f} R (exact {exact:.7f}, max err {err:.1e}), LVF std {lvf_std:.1e}, "
        f"g peak hoop ({peak:.3f}, {peak + dh:.3f}] contains spacing {a:.4f}",
    )


# 4 ------------------------------------------------------------------------------------


def test_c4_generation_validity():
    t0 = time.perf_counter()
    bad, worst_vf = [], 0.0
    for regime in ("clustered", "equilibrium"):
        for seed in range(10):
            p = regime_params(regime, 250, 0.65, seed=seed, min_gap=0.01)
            ms, _ = srm_generate(p, domain_for(250, 0.65))
            if not validate(ms).ok:
                bad.append((regime, seed))
            worst_vf = max(worst_vf, abs(volume_fraction(ms) - 0.65))
    ok = not bad and worst_vf <= 1e-3
    _check(4, T4, ok, f"20 RVEs, invalid: {bad or 'none'}, max |vf - 0.65| = {worst_vf:.1e}, {time.perf_counter() - t0:.0f} s")


# 5 ------------------------------------------------------------------------------------


def test_c5_solver_limits():
    fiber, matrix = ElasticPhase(26.5, 0.25), ElasticPhase(1.0, 0.35)
    ms = random_disks(30, lx=10, ly=10, r=0.6, seed=4)
    c1 = effective_properties(ms, (matrix, matrix), nx=32)
    err_c1 = max(abs(c1.E_x - 1), abs(c1.E_y - 1), abs(c1.E_z - 1))
    empty = effective_properties_grid(PeriodicGridModel(np.zeros((16, 16)), 1, 1, fiber, matrix, mixing="voigt"))
    err_v0 = max(abs(empty.E_x - 1), abs(empty.E_z - 1))
    hexa = effective_properties(hexagonal_lattice(0.6, 1, n_rows=2), (fiber, matrix), nx=96)
    rom, _ = voigt_reuss((fiber, matrix), 0.6)
    err_rom = abs(hexa.E_z - rom) / rom
    rnd = effective_properties(random_disks(25, lx=10, ly=10, r=0.7, seed=5), (fiber, matrix), nx=64)
    sym = max(
        abs(rnd.nu_xy / rnd.E_x - rnd.nu_yx / rnd.E_y) / abs(rnd.nu_xy / rnd.E_x),
        rnd.diagnostics["stiffness_asymmetry"],  # before symmetrization
    )
    phi = np.array([[0.3, 0.9], [0.0, 0.55]])
    got = effective_properties_grid(PeriodicGridModel(phi, 1.3, 0.7, fiber, matrix, mixing="voigt")).stiffness
    want = dense_oracle(phi, 1.3, 0.7, fiber, matrix)
    err_dense = float(np.max(np.abs(got - want)) / np.max(np.abs(want)))
    ok = err_c1 <= 5e-3 and err_v0 <= 5e-3 and err_rom <= 0.01 and sym <= 0.01 and err_dense <= 1e-8
    _check(
        5,
        T5,
        ok,
        f"contrast-1 err {err_c1:.1e}, Vf=0 err {err_v0:.1e} (<= 0.5%), E_z vs ROM {err_rom:.2%} (<= 1%), "
        f"compliance asymmetry {sym:.2%} (<= 1%), 2x2 dense oracle {err_dense:.1e} (<= 1e-8)",
    )


# 6 ------------------------------------------------------------------------------------


@pytest.mark.xfail(strict=False, reason="aliasing on a single lattice cell exceeds 1% at 0.14 R; see README")
def test_c6_grid_convergence():
    ms = hexagonal_lattice(0.6, n_cells_x=1, n_rows=2)
    # doubling ladder from the first grid with cell <= 0.15 R
    nx0 = math.ceil(ms.domain.lx / (0.15 * ms.mean_radius))
    nx0 += nx0 % 2
    rows = convergence_study(ms, "glass_epoxy", [nx0 * 2**k for k in range(4)])
    changes = [r["rel_change"] for r in rows[1:]]
    ladder = ", ".join(f"{r['cell_over_radius']:.3f}R: {r['E_transverse']:.3f}" for r in rows)
    ok = max(changes) < 0.01
    _check(6, T6, ok, f"{ladder}; changes {', '.join(f'{c:.2%}' for c in changes)} (each < 1%)")


# 7 ------------------------------------------------------------------------------------


TABLE1 = {0.547: ("micrograph_547.csv", 11.85), 0.673: ("micrograph_673.csv", 17.43)}


@pytest.mark.parametrize("vf", [0.547, 0.673])
def test_c7_table1(vf):
    t0 = time.perf_counter()
    name, target = TABLE1[vf]
    rep = exp.equivalence_workflow(FIXTURES / name, seeds=3, phases="glass_epoxy", homogenize_reconstructed=False)
    mean = rep.generated_mean
    rel = (mean - target) / target
    _check(
        7,
        T7,
        abs(rel) <= 0.05,
        f"vf {vf}: mean E_T {mean:.2f} GPa over 3 seeds x 2 directions vs {target} ({rel:+.1%}, within 5%), "
        f"std {rep.generated_std:.2f}, {time.perf_counter() - t0:.0f} s",
    )


# 8 ------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def gap_sweep():
    t0 = time.perf_counter()
    spec = exp.default_min_gap_spec(n_jobs=JOBS)
    summary, _ = exp.sweep_min_gap(spec)
    return spec, summary, time.perf_counter() - t0


def _series(spec, summary, regime):
    return [next(r for r in summary if r["regime"] == regime and r["min_gap"] == v) for v in spec.values]


def test_c8_non_increasing(gap_sweep):
    spec, summary, secs = gap_sweep
    ok, notes = True, []
    for regime in spec.regimes:
        s = _series(spec, summary, regime)
        for a, b in zip(s, s[1:]):
            rise = b["mean"] - a["mean"]
            good = rise <= max(a["std"], b["std"])
            ok &= good
        notes.append(f"{regime}: " + " > ".join(f"{r['mean']:.3f}" for r in s))
    _check(8, T8, ok, f"non-increasing within 1 std: {'; '.join(notes)} ({secs / 60:.0f} min)")


@pytest.mark.xfail(strict=False, reason="stiffness still falls by about 3% between 1e-4 R and 1e-2 R; see README")
def test_c8_plateau(gap_sweep):
    spec, summary, _ = gap_sweep
    ok, notes = True, []
    for regime in spec.regimes:
        s = {r["min_gap"]: r["mean"] for r in _series(spec, summary, regime)}
        rel = abs(s[1e-2] - s[1e-4]) / s[1e-4]
        ok &= rel < 0.01
        notes.append(f"{regime} {rel:.2%}")
    _check(8, T8, ok, f"plateau |E(0.01R) - E(0.0001R)|/E < 1%: {', '.join(notes)}")


def test_c8_largest_gap_near_hexagonal(gap_sweep):
    spec, summary, _ = gap_sweep
    hexa = next(r["mean"] for r in summary if r["regime"] == "hexagonal")
    gmax = max(spec.values)
    ok, notes = True, []
    for regime in spec.regimes:
        e = next(r["mean"] for r in summary if r["regime"] == regime and r["min_gap"] == gmax)
        rel = (e - hexa) / hexa
        ok &= abs(rel) <= 0.03
        notes.append(f"{regime} {e:.3f} ({rel:+.2%})")
    _check(8, T8, ok, f"gap {gmax}R vs hexagonal {hexa:.3f}: {', '.join(notes)} (within 3%)")


# 9 ------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cloud():
    t0 = time.perf_counter()
    c = exp.stiffness_cloud(seeds=5, phases="contrast_25", n_jobs=JOBS)
    return c, time.perf_counter() - t0


def test_c9_envelopes(cloud):
    c, secs = cloud
    checks = exp.envelope_check(c, lower_slack=0.01)
    below = [(r["target_vf"], r["regime"], r["seed"]) for r in checks if not r["above_lower"]]
    above = [(r["target_vf"], r["regime"], r["seed"]) for r in checks if not r["below_upper"]]
    ok = not below and not above
    _check(
        9,
        T9,
        ok,
        f"{len(checks)} points; below hexagonal - 1%: {below or 'none'}; above two-step: {above or 'none'} "
        f"({secs / 60:.0f} min)",
    )


@pytest.mark.xfail(strict=False, reason="clustered arrangements sit about 40% above hexagonal at 0.65; see README")
def test_c9_clustered_spread(cloud):
    c, _ = cloud
    hexa = next(r["E_norm"] for r in c["hexagonal"] if abs(r["vf"] - 0.65) < 1e-9)
    e = float(np.mean([p["E_norm"] for p in c["points"] if p["regime"] == "clustered" and p["target_vf"] == 0.65]))
    spread = (e - hexa) / hexa
    _check(9, T9, 0.10 <= spread <= 0.30, f"clustered vs hexagonal at 0.65: {e:.3f} vs {hexa:.3f} = {spread:+.1%} (10-30%)")


# 10 -----------------------------------------------------------------------------------


def test_c10_mnn_linearity():
    t0 = time.perf_counter()
    rows, fit = exp.mnn_series(vf=0.6, n_series_points=6, seeds=3, n_jobs=JOBS)
    ok = fit.slope < 0 and fit.r_squared >= 0.9 and len(rows) >= 18
    _check(
        10,
        T10,
        ok,
        f"{len(rows)} snapshots: slope {fit.slope:.2f}, R^2 {fit.r_squared:.3f} (>= 0.9), {time.perf_counter() - t0:.0f} s",
    )


def test_c10_morphology_bracket():
    t0 = time.perf_counter()
    rows = exp.morphology_bracket(vf=0.65, seeds=3)
    mean = {m: float(np.mean([r["E_norm"] for r in rows if r["morphology"] == m])) for m in {r["morphology"] for r in rows}}
    ref = mean["random_clustered"]
    ext = (mean["matrix_pockets"], mean["fiber_bundles"])
    spread = (max(mean.values()) - min(mean.values())) / ref
    ok = min(ext) <= ref <= max(ext) and spread < 0.10
    detail = ", ".join(f"{k} {v:.3f}" for k, v in sorted(mean.items()))
    _check(10, T10, ok, f"matched MNN at 0.65: {detail}; bracketed={min(ext) <= ref <= max(ext)}, spread {spread:.1%} (< 10%), {time.perf_counter() - t0:.0f} s")
