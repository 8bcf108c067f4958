"""Command line front end for fiber RVE generation, statistics and homogenization.

Every subcommand reads an optional YAML config (``--config``); explicit flags
override config values. Exit status: 0 success, 1 domain/data error, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import descriptors as dsc
from . import experiments as exp
from . import io
from .generate import (
    REGIMES,
    GenerationError,
    SrmParams,
    depleted_hexagonal,
    domain_for,
    hexagonal_lattice,
    srm_generate,
)
from .geometry import validate, volume_fraction
from .homogenize import PHASE_SETS, ElasticPhase, SolverError, effective_properties, rasterize, solve, LoadCase

DESCRIPTOR_NAMES = ("nn", "voronoi", "lvf", "ripley", "pair")


class UsageError(Exception):
    pass


# config helpers ----------------------------------------------------------------------


def _cfg(args) -> dict:
    return io.load_config(args.config) if getattr(args, "config", None) else {}


def _pick(flag, cfg: dict, key: str, default=None):
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _phases(name_or_cfg):
    if name_or_cfg is None:
        return PHASE_SETS["glass_epoxy"]
    if isinstance(name_or_cfg, str):
        if name_or_cfg not in PHASE_SETS:
            raise UsageError(f"unknown phase set {name_or_cfg!r}; known: {', '.join(sorted(PHASE_SETS))}")
        return PHASE_SETS[name_or_cfg]
    f, m = name_or_cfg["fiber"], name_or_cfg["matrix"]
    return ElasticPhase(float(f["E"]), float(f["nu"])), ElasticPhase(float(m["E"]), float(m["nu"]))


def _srm_params(args, cfg: dict) -> SrmParams:
    srm = dict(cfg.get("srm", {}))
    regime = _pick(getattr(args, "regime", None), cfg, "regime")
    if regime is not None:
        if regime not in REGIMES:
            raise UsageError(f"unknown regime {regime!r}; known: {', '.join(REGIMES)}")
        sw, mi = REGIMES[regime]
        srm.setdefault("swelling_rate", sw)
        srm.setdefault("migration_intensity", mi)
    for flag, key in (
        ("n_fibers", "n_fibers"),
        ("vf", "target_vf"),
        ("swelling", "swelling_rate"),
        ("migration", "migration_intensity"),
        ("min_gap", "min_gap"),
        ("seed", "seed"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            srm[key] = v
    if "n_fibers" not in srm or "target_vf" not in srm:
        raise UsageError("need --n-fibers and --vf (or srm.n_fibers / srm.target_vf in the config)")
    return SrmParams.from_dict(srm)


def _load_ms(path):
    p = Path(path)
    if p.suffix.lower() == ".csv":
        header, _, _ = io.read_csv_rows(p)
        if [h.lower() for h in header[:3]] == ["x", "y", "r"]:
            return io.import_fibers_csv(p)
        return io.ingest_micrograph(p)
    return io.load_microstructure(p)


def _write_ms(ms, out):
    out = Path(out)
    if out.suffix.lower() == ".csv":
        io.export_fibers_csv(ms, out)
    else:
        io.save_microstructure(ms, out)
    return out


def _figures(args, fn, *a):
    if getattr(args, "figures", False):
        from . import plotting

        return fn(plotting, *a)
    return None


# subcommands ----------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _cfg(args)
    p = _srm_params(args, cfg)
    aspect = float(_pick(args.aspect, cfg, "aspect", 1.0))
    d = domain_for(p.n_fibers, p.target_vf, aspect=aspect)
    select = bool(args.select or cfg.get("select", False))
    ms, trace = srm_generate(p, d, select=select)
    out = _write_ms(ms, args.output)
    print(f"{out}: {ms.n} fibers, vf={volume_fraction(ms):.6f}, steps={trace.steps_used}")
    _figures(args, lambda pl, m, o: pl.plot_microstructure(m, Path(o).with_suffix(".png")), ms, out)
    return 0


def cmd_lattice(args) -> int:
    if args.pattern:
        ms = depleted_hexagonal(args.vf, args.pattern, n_cells_x=args.cells, radius=args.radius)
    else:
        ms = hexagonal_lattice(args.vf, n_cells_x=args.cells, radius=args.radius)
    out = _write_ms(ms, args.output)
    print(f"{out}: {ms.n} fibers, vf={volume_fraction(ms):.6f}")
    _figures(args, lambda pl, m, o: pl.plot_microstructure(m, Path(o).with_suffix(".png")), ms, out)
    return 0


def cmd_stats(args) -> int:
    ms = _load_ms(args.input)
    wanted = [s.strip() for s in args.descriptors.split(",") if s.strip()]
    bad = [w for w in wanted if w not in DESCRIPTOR_NAMES]
    if bad:
        raise UsageError(f"unknown descriptors {bad}; choose from {', '.join(DESCRIPTOR_NAMES)}")
    out_dir = Path(args.out_dir or Path(args.input).parent)
    stem = Path(args.input).stem
    R = ms.mean_radius
    unit = ms.replace(centers=ms.centers / R, radii=ms.radii / R, domain=dsc._scaled_domain(ms, 1.0 / R))
    mode = "periodic_full" if ms.domain.periodic else "cropped_against_full"
    h = dsc.default_h_values(unit, h_max_radii=args.h_max) if args.h_max else dsc.default_h_values(unit)
    if not ms.domain.periodic:
        lo, hi = unit.centers.min(axis=0), unit.centers.max(axis=0)
        margin = min(-lo[0], -lo[1], hi[0] - unit.domain.lx, hi[1] - unit.domain.ly)
        h = h[h <= margin - (dsc.PAIR_DELTA_H if "pair" in wanted else 0.0)]
        if len(h) == 0:
            raise ValueError("crop window leaves no margin for Ripley statistics")
    written = []
    diagram = dsc.voronoi(unit) if {"voronoi", "lvf"} & set(wanted) else None
    for name in wanted:
        path = out_dir / f"{stem}_{name}.csv"
        if name == "nn":
            io.write_distribution_csv(path, dsc.nearest_neighbor_distribution(unit))
        elif name == "voronoi":
            io.write_distribution_csv(path, dsc.voronoi_neighbor_distribution(unit, diagram))
        elif name == "lvf":
            io.write_distribution_csv(path, dsc.local_volume_fraction(unit, diagram))
        elif name == "ripley":
            io.write_k_csv(path, dsc.ripley_k(unit, h, mode))
        elif name == "pair":
            io.write_g_csv(path, dsc.pair_distribution(unit, h, window_mode=mode))
        written.append(path)
    for p in written:
        print(p)
    return 0


def cmd_homog(args) -> int:
    cfg = _cfg(args)
    ms = _load_ms(args.input)
    phases = _phases(_pick(args.phases, cfg, "phases", "glass_epoxy"))
    nx = int(_pick(args.nx, cfg, "nx", 256))
    bc = _pick(args.bc, cfg, "bc_mode")
    props = effective_properties(ms, phases, nx=nx, bc_mode=bc, extrapolate=not args.no_extrapolate)
    row = io.result_row(props, str(args.input))
    out = Path(args.output or Path(args.input).with_suffix(".results.csv"))
    io.write_results_csv(out, [row])
    if args.dump_field:
        grid = rasterize(ms, nx, phases, bc)
        sol = solve(grid, LoadCase.XX)
        nnx = grid.nx if grid.bc_mode == "periodic" else grid.nx + 1
        io.dump_field(args.dump_field, sol.displacement.reshape(nnx, -1, 2))
    print(f"{out}: E_x={props.E_x:.6g} E_y={props.E_y:.6g} E_z={props.E_z:.6g} G_xy={props.G_xy:.6g}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _cfg(args)
    t0 = time.perf_counter()
    kw = {}
    values = args.values or cfg.get("values")
    if values:
        kw["values"] = tuple(float(v) for v in values)
    if "regimes" in cfg:
        kw["regimes"] = tuple(cfg["regimes"])
    base = exp.default_min_gap_spec().base
    base = base.replace(
        n_fibers=int(cfg.get("n_fibers", base.n_fibers)), target_vf=float(cfg.get("vf", base.target_vf))
    )
    spec = exp.default_min_gap_spec(
        base=base,
        seeds=tuple(range(int(_pick(args.seeds, cfg, "seeds", 10)))),
        phases=_pick(args.phases, cfg, "phases", "contrast_26.5"),
        nx=_pick(args.nx, cfg, "nx"),
        cell=float(_pick(args.cell, cfg, "cell", exp.DEFAULT_CELL)),
        n_jobs=int(_pick(args.jobs, cfg, "jobs", 1)),
        **kw,
    )
    summary, per_rve = exp.sweep_min_gap(spec)
    out = Path(args.output)
    exp.write_study(out, summary, exp.manifest("min_gap_sweep", spec.to_dict(), spec.seeds, t0))
    io.write_dict_rows(out.with_name(out.stem + "_rves.csv"), per_rve)
    _figures(args, lambda pl, s, o: pl.plot_min_gap(s, o.with_suffix(".png")), summary, out)
    print(out)
    return 0


def cmd_cloud(args) -> int:
    cfg = _cfg(args)
    t0 = time.perf_counter()
    vfs = args.vf or cfg.get("vf_grid") or exp.CLOUD_VF
    regimes = (args.regimes.split(",") if args.regimes else cfg.get("regimes")) or exp.CLOUD_REGIMES
    seeds = int(_pick(args.seeds, cfg, "seeds", 5))
    params = dict(
        vf_grid=tuple(float(v) for v in vfs),
        regimes=tuple(regimes),
        seeds=seeds,
        phases=_pick(args.phases, cfg, "phases", "contrast_25"),
        nx=_pick(args.nx, cfg, "nx"),
        cell=float(_pick(args.cell, cfg, "cell", exp.DEFAULT_CELL)),
        n_jobs=int(_pick(args.jobs, cfg, "jobs", 1)),
        l_over_r=float(cfg.get("l_over_r", exp.PROPERTY_L_OVER_R)),
    )
    if "depleted" in cfg:
        params["depleted"] = tuple((float(v), str(p)) for v, p in cfg["depleted"])
    cloud = exp.stiffness_cloud(**params)
    out = Path(args.output)
    exp.write_study(out, cloud["points"], exp.manifest("stiffness_cloud", params, range(seeds), t0))
    for key in ("hexagonal", "upper", "depleted"):
        io.write_dict_rows(out.with_name(f"{out.stem}_{key}.csv"), cloud[key])
    _figures(args, lambda pl, c, o: pl.plot_cloud(c, o.with_suffix(".png")), cloud, out)
    print(out)
    return 0


def cmd_mnn(args) -> int:
    cfg = _cfg(args)
    t0 = time.perf_counter()
    seeds = int(_pick(args.seeds, cfg, "seeds", 3))
    params = dict(
        vf=float(_pick(args.vf, cfg, "vf", 0.6)),
        n_series_points=int(_pick(args.points, cfg, "points", 6)),
        seeds=seeds,
        phases=_pick(args.phases, cfg, "phases", "contrast_25"),
        nx=_pick(args.nx, cfg, "nx"),
        cell=float(_pick(args.cell, cfg, "cell", exp.DEFAULT_CELL)),
        n_jobs=int(_pick(args.jobs, cfg, "jobs", 1)),
        n_fibers=cfg.get("n_fibers"),
        sweeps_total=int(cfg.get("sweeps_total", 8000)),
    )
    rows, fit = exp.mnn_series(**params)
    out = Path(args.output)
    meta = exp.manifest("mnn_series", params, range(seeds), t0)
    meta["fit"] = {"intercept": fit.intercept, "slope": fit.slope, "r_squared": fit.r_squared}
    exp.write_study(out, rows, meta)
    _figures(args, lambda pl, r, f, o: pl.plot_mnn(r, f, o.with_suffix(".png")), rows, fit, out)
    print(f"{out}: slope={fit.slope:.4g} R2={fit.r_squared:.3f}")
    return 0


def cmd_equiv(args) -> int:
    cfg = _cfg(args)
    t0 = time.perf_counter()
    crop = args.crop if args.crop != "none" else None
    if crop not in (None, "auto"):
        crop = tuple(float(v) for v in crop.split(","))
    srm = None
    if "srm" in cfg:
        d = dict(cfg["srm"])
        if "target_vf" not in d:
            d["target_vf"] = volume_fraction(io.ingest_micrograph(args.micrograph, crop=crop, columns=args.columns))
        srm = SrmParams.from_dict(d)
    seeds = int(_pick(args.seeds, cfg, "seeds", 3))
    report = exp.equivalence_workflow(
        args.micrograph,
        srm_params=srm,
        seeds=seeds,
        phases=_pick(args.phases, cfg, "phases", "glass_epoxy"),
        nx=_pick(args.nx, cfg, "nx"),
        cell=float(_pick(args.cell, cfg, "cell", exp.DEFAULT_CELL)),
        regime=_pick(args.regime, cfg, "regime", "near_equilibrium"),
        crop=crop,
        columns=args.columns,
    )
    out = Path(args.output)
    meta = exp.manifest("equivalence", {"micrograph": str(args.micrograph), "srm": report.params}, range(seeds), t0)
    meta["lognormal"] = report.lognormal
    meta["descriptor_ks"] = report.descriptor_summary
    threshold = cfg.get("equivalence_threshold")
    if threshold is not None:
        meta["equivalent"] = bool(max(report.descriptor_summary) <= float(threshold))
    exp.write_study(out, report.table(), meta)
    io.write_dict_rows(out.with_name(out.stem + "_rves.csv"), report.generated)
    _figures(
        args,
        lambda pl, r, o: pl.plot_equivalence(r.micrograph_ms, r.rves[0], o.with_suffix(".png")),
        report,
        out,
    )
    print(json.dumps(report.table()[0]))
    return 0


def cmd_validate(args) -> int:
    ms = _load_ms(args.input)
    rep = validate(ms)
    print(
        f"{args.input}: n={ms.n} vf={rep.vf:.6f} min_gap={rep.min_surface_gap:.6g} "
        f"pair={rep.worst_pair} {'OK' if rep.ok else 'INVALID'}"
    )
    for m in rep.messages:
        print(f"  {m}")
    return 0 if rep.ok else 1


# parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fibrve", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, output=True, figures=False):
        p.add_argument("--config", help="YAML config document")
        if output:
            p.add_argument("-o", "--output", required=p.prog.split()[-1] not in ("homog",), help="output file")
        if figures:
            p.add_argument("--figures", action="store_true", help="also render PNG figures next to the output")

    g = sub.add_parser("gen", help="generate a periodic RVE")
    common(g, figures=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-fibers", type=int)
    g.add_argument("--vf", type=float)
    g.add_argument("--regime", choices=list(REGIMES))
    g.add_argument("--swelling", type=float)
    g.add_argument("--migration", type=float)
    g.add_argument("--min-gap", type=float)
    g.add_argument("--aspect", type=float)
    g.add_argument("--select", action="store_true", help="shift the window to maximize boundary clearance")
    g.set_defaults(func=cmd_gen)

    la = sub.add_parser("lattice", help="hexagonal or depleted hexagonal packing")
    common(la, figures=True)
    la.add_argument("--vf", type=float, required=True, help="volume fraction (base fraction with --pattern)")
    la.add_argument("--cells", type=int, default=6)
    la.add_argument("--radius", type=float, default=1.0)
    la.add_argument("--pattern", choices=["third", "quarter"])
    la.set_defaults(func=cmd_lattice)

    st = sub.add_parser("stats", help="spatial descriptors as CSV tables")
    st.add_argument("--in", dest="input", required=True)
    st.add_argument("--descriptors", default=",".join(DESCRIPTOR_NAMES))
    st.add_argument("--out-dir")
    st.add_argument("--h-max", type=float, help="largest h in mean radii")
    st.set_defaults(func=cmd_stats)

    h = sub.add_parser("homog", help="effective elastic properties")
    common(h)
    h.add_argument("--in", dest="input", required=True)
    h.add_argument("--phases")
    h.add_argument("--nx", type=int)
    h.add_argument("--bc", choices=["periodic", "mixed", "displacement"])
    h.add_argument("--no-extrapolate", action="store_true", help="report the raw fine-grid result")
    h.add_argument("--dump-field", help="binary dump of the XX-load displacement field")
    h.set_defaults(func=cmd_homog)

    def study(p):
        common(p, figures=True)
        p.add_argument("--seeds", type=int)
        p.add_argument("--phases")
        p.add_argument("--nx", type=int)
        p.add_argument("--cell", type=float, help="grid cell size in mean radii")
        p.add_argument("--jobs", type=int)

    sw = sub.add_parser("sweep", help="stiffness versus minimum gap")
    study(sw)
    sw.add_argument("--values", type=float, nargs="+")
    sw.set_defaults(func=cmd_sweep)

    cl = sub.add_parser("cloud", help="stiffness cloud with envelopes")
    study(cl)
    cl.add_argument("--vf", type=float, nargs="+")
    cl.add_argument("--regimes")
    cl.set_defaults(func=cmd_cloud)

    mn = sub.add_parser("mnn", help="stiffness versus mean nearest-neighbor gap")
    study(mn)
    mn.add_argument("--vf", type=float)
    mn.add_argument("--points", type=int)
    mn.set_defaults(func=cmd_mnn)

    eq = sub.add_parser("equiv", help="statistical-equivalence workflow for a micrograph table")
    study(eq)
    eq.add_argument("--micrograph", required=True, help="CSV with x,y,d columns")
    eq.add_argument("--crop", default="auto", help="'auto', 'none' or x0,y0,x1,y1")
    eq.add_argument("--columns", help="column mapping such as x=X,y=Y,d=Feret")
    eq.add_argument("--regime", choices=list(REGIMES))
    eq.set_defaults(func=cmd_equiv)

    va = sub.add_parser("validate", help="check overlaps and report the minimum gap")
    va.add_argument("--in", dest="input", required=True)
    va.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"fibrve: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, GenerationError, SolverError, OSError, KeyError) as exc:
        print(f"fibrve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
