"""Command-line pipeline: mesh, homog, optimize, thicken, post, report.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import errors
from .config import RunConfig, load_thickness, save_thickness
from .geometry import relative_density
from .homogenize import (HomogenizationResult, engineering_moduli,
                         hs_upper_bounds, run_homogenization, zener)
from .optimize import (OptimizerConfig, ThicknessField,
                       finite_difference_objective_gradient, load_checkpoint,
                       optimize_isotropy, sensitivity, symmetry_average)
from .postprocess import (analyze_curve, anisotropy_summary,
                          efficiency_and_densification, load_curve,
                          write_report)
from .shellfea import ShellModel
from .stl_io import save_sidecar, save_stl, sidecar_path
from .thicken import export_solid, nodal_thickness, offset_shell

NUMERICAL_ERRORS = (errors.SingularSystem, errors.NonConvergence,
                    errors.ConsistencyFailure, errors.SelfIntersection,
                    errors.NotWatertight, errors.EmptySurface,
                    errors.NonManifold, errors.WeldFailure,
                    errors.DegenerateElement, errors.UnstableTensor,
                    errors.InconsistentStiffness, errors.InsufficientRange,
                    errors.ZeroStress)
USAGE_ERRORS = (errors.SchemaError, errors.MalformedFile, FileNotFoundError,
                KeyError, ValueError, json.JSONDecodeError)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "preset", None):
        cfg.surface_preset = args.preset
        cfg.surface_terms = None
        cfg.surface_name = args.preset
    if getattr(args, "resolution", None):
        cfg.resolution = args.resolution
    if getattr(args, "cell_size", None):
        cfg.cell_size_mm = args.cell_size
    if getattr(args, "tile", None):
        cfg.tile_counts = tuple(args.tile)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "thickness", None):
        cfg.thickness_initial_mm = args.thickness
        cfg.thickness_min_mm = min(cfg.thickness_min_mm, args.thickness)
        cfg.thickness_max_mm = max(cfg.thickness_max_mm, args.thickness)
    # re-validate after overrides
    return RunConfig.from_dict(cfg.to_dict())


def _moduli_doc(result: HomogenizationResult, cfg: RunConfig,
                include_hill: bool = False) -> dict:
    mat = cfg.material()
    rep = engineering_moduli(result.constants, result.rho_bar, mat)
    e_hsu, g_hsu, k_hsu = hs_upper_bounds(result.rho_bar, mat)
    norm = result.rho_bar * mat.E_s
    doc = {
        "constants_mpa": {"c11": result.constants.c11,
                          "c12": result.constants.c12,
                          "c44": result.constants.c44},
        "volume_mm3": result.constants.V,
        "rho_bar": result.rho_bar,
        "zener": rep.zener,
        "poisson": rep.poisson,
        "moduli_mpa": {"E": rep.E, "G": rep.G, "K": rep.K},
        "normalized": {"E": rep.E_norm, "G": rep.G_norm, "K": rep.K_norm},
        "hs_upper_normalized": {"E": e_hsu / norm, "G": g_hsu / norm,
                                "K": k_hsu / norm},
    }
    if include_hill:
        doc["checks"] = {"hydrostatic_cross_check_rel": result.cross_check_rel,
                         "hill_residual_rel": result.hill_rel}
    return doc


def cmd_mesh(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    cfg.write_resolved(cfg.output_dir)
    mesh = cfg.mesh_for_domain(args.domain)
    name = f"{cfg.surface_name}_{args.domain}.stl"
    path = os.path.join(cfg.output_dir, name)
    save_stl(mesh, path, format=args.format)
    save_sidecar(mesh, cfg.cell_spec(args.domain), sidecar_path(path))
    print(f"wrote {path} ({mesh.n_triangles} triangles) and sidecar")
    return 0


def _eighth_and_model(cfg: RunConfig):
    mesh = cfg.eighth_mesh()
    model = ShellModel(mesh, cfg.material(), cfg.cell_spec("eighth"))
    return mesh, model


def cmd_homog(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    cfg.write_resolved(cfg.output_dir)
    mesh, model = _eighth_and_model(cfg)
    if args.thickness_file:
        t = load_thickness(args.thickness_file)
        if len(t.delta) != mesh.n_triangles:
            raise ValueError("thickness file does not match mesh element count")
        delta = t.delta
    else:
        delta = np.full(mesh.n_triangles, cfg.thickness_initial_mm)
    result = run_homogenization(mesh, delta, cfg.material(),
                                cfg.cell_spec("eighth"), model=model,
                                check_condition=True)
    doc = _moduli_doc(result, cfg, include_hill=args.check_hill)
    out = os.path.join(cfg.output_dir, "moduli.json")
    with open(out, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    print(f"wrote {out}  (zener={doc['zener']:.4f}, "
          f"K/(rho*Es)={doc['normalized']['K']:.4f})")
    if args.dump_solution:
        dump = {}
        for kind, sol in result.solutions.items():
            dump[kind] = {
                "e_total_mj": sol.e_total,
                "e_membrane_mj": sol.e_membrane.tolist(),
                "e_bending_mj": sol.e_bending.tolist(),
                "sigma_macro_mpa": sol.sigma_macro.tolist(),
                "sigma_micro_avg_mpa": sol.sigma_micro_avg.tolist(),
                "displacements": sol.displacements.tolist(),
            }
        dump_path = os.path.join(cfg.output_dir, "solution_dump.json")
        with open(dump_path, "w") as f:
            json.dump(dump, f)
        print(f"wrote {dump_path}")
    return 0


def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    cfg.write_resolved(cfg.output_dir)
    mesh, model = _eighth_and_model(cfg)
    spec = cfg.cell_spec("eighth")
    mat = cfg.material()
    t0 = cfg.initial_thickness(mesh.n_triangles)

    if args.fd_check:
        result = run_homogenization(mesh, t0.delta, mat, spec, model=model)
        grad = sensitivity(result.constants, result.solutions, t0)
        rng = np.random.default_rng(0)
        scale = np.max(np.abs(grad))
        candidates = np.flatnonzero(np.abs(grad) > 1e-3 * scale)
        pick = rng.choice(candidates, min(args.fd_check, len(candidates)),
                          replace=False)
        fd = finite_difference_objective_gradient(mesh, model, t0, mat, spec,
                                                  pick, rel_step=1e-2)
        rel = np.abs(grad[pick] - fd) / np.maximum(np.abs(fd), 1e-300)
        worst = float(rel.max())
        print(f"gradient check on {len(pick)} elements: worst rel {worst:.2e}")
        if worst > 1e-4:
            print("gradient check FAILED", file=sys.stderr)
            return 1

    resume = None
    if args.resume:
        t_r, state_r, scale_r = load_checkpoint(args.resume)
        resume = (t_r, state_r, scale_r)
    ckpt = os.path.join(cfg.output_dir, "checkpoint.json")
    opt_cfg = cfg.optimizer_config(checkpoint_path=ckpt)
    t_final, state = optimize_isotropy(mesh, t0, mat, spec, opt_cfg,
                                       model=model, log=print, resume=resume)
    state.write_csv(os.path.join(cfg.output_dir, "history.csv"))
    save_thickness(os.path.join(cfg.output_dir, "thickness.json"), t_final, mesh)
    result = run_homogenization(mesh, t_final.delta, mat, spec, model=model)
    doc = _moduli_doc(result, cfg, include_hill=True)
    doc["iterations"] = state.iteration
    with open(os.path.join(cfg.output_dir, "moduli.json"), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    print(f"converged: zener={doc['zener']:.5f} after {state.iteration} "
          f"iterations; outputs in {cfg.output_dir}")
    return 0


def cmd_thicken(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    cfg.write_resolved(cfg.output_dir)
    mesh = cfg.mesh_for_domain(args.domain)
    if args.thickness_file:
        t = load_thickness(args.thickness_file)
        delta = t.delta
        if args.domain != "eighth":
            raise ValueError("per-element thickness files apply to the eighth cell")
    else:
        delta = np.full(mesh.n_triangles, cfg.thickness_initial_mm)
    nt = nodal_thickness(mesh, delta)
    solid = offset_shell(mesh, nt,
                         check_self_intersections=not args.allow_self_intersections)
    path = os.path.join(cfg.output_dir,
                        f"{cfg.surface_name}_{args.domain}_solid.stl")
    export_solid(solid, path, format=args.format,
                 metrics_path=os.path.join(cfg.output_dir, "solid_metrics.json"),
                 thickness=delta)
    rho = relative_density(mesh, delta)
    print(f"wrote {path}  volume={solid.signed_volume():.4f} mm^3  "
          f"rho_bar={rho:.4f}")
    return 0


def cmd_post(args) -> int:
    reports = []
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    k_m = args.machine_stiffness
    if args.manifest:
        with open(args.manifest) as f:
            doc = json.load(f)
        k_m = doc.get("machine_stiffness_n_mm", k_m)
        entries = doc["curves"]
    for path in args.curve or []:
        entries.append({"path": path, "height_mm": args.height,
                        "area_mm2": args.area, "rho_bar": args.rho,
                        "direction": args.direction or os.path.basename(path)})
    if not entries:
        print("no curves given", file=sys.stderr)
        return 2
    curves = []
    for ent in entries:
        curve = load_curve(ent["path"],
                           height_mm=ent.get("height_mm") or float("nan"),
                           area_mm2=ent.get("area_mm2") or float("nan"),
                           rho_bar=ent.get("rho_bar") or float("nan"),
                           direction=ent.get("direction", ""))
        curves.append(curve)
        reports.append(analyze_curve(curve, k_m=ent.get("machine_stiffness_n_mm",
                                                        k_m)))
    summary = anisotropy_summary(reports) if len(reports) >= 2 else {}
    doc = write_report(os.path.join(out_dir, "post_report.json"), reports, summary)
    if args.plots:
        _post_plots(curves, out_dir)
    print(json.dumps(doc, indent=2))
    return 0


def _post_plots(curves, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for c in curves:
        e, s = c.sorted_unique()
        ax.plot(e, s, label=c.direction or None)
    ax.set_xlabel("strain")
    ax.set_ylabel("stress, MPa")
    if any(c.direction for c in curves):
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "stress_strain.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    for c in curves:
        try:
            e, eta, eps_d = efficiency_and_densification(c)
        except Exception:
            continue
        ax.plot(e, eta, label=c.direction or None)
        ax.axvline(eps_d, linestyle=":", linewidth=0.8)
    ax.set_xlabel("strain")
    ax.set_ylabel("energy-absorption efficiency")
    if any(c.direction for c in curves):
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "efficiency.svg"))
    plt.close(fig)


def cmd_report(args) -> int:
    rows = []
    for root, _, files in sorted(os.walk(args.dir)):
        for fn in sorted(files):
            if fn == "moduli.json":
                with open(os.path.join(root, fn)) as f:
                    doc = json.load(f)
                rows.append((os.path.relpath(root, args.dir), doc))
    if not rows:
        print(f"no moduli.json found under {args.dir}", file=sys.stderr)
        return 2
    out_dir = args.out or args.dir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "comparison.csv")
    with open(csv_path, "w") as f:
        f.write("label,rho_bar,zener,E_norm,G_norm,K_norm,"
                "hs_E_norm,hs_G_norm,hs_K_norm\n")
        for label, doc in rows:
            n, h = doc["normalized"], doc["hs_upper_normalized"]
            f.write(f"{label},{doc['rho_bar']:.6g},{doc['zener']:.6g},"
                    f"{n['E']:.6g},{n['G']:.6g},{n['K']:.6g},"
                    f"{h['E']:.6g},{h['G']:.6g},{h['K']:.6g}\n")
    _report_plot(rows, os.path.join(out_dir, "comparison.svg"))
    print(f"wrote {csv_path} and comparison.svg ({len(rows)} runs)")
    return 0


def _report_plot(rows, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, key, label in ((axes[0], "E", "E/(rho Es)"),
                           (axes[1], "G", "G/(rho Es)")):
        for name, doc in rows:
            ax.scatter(doc["normalized"]["K"], doc["normalized"][key], s=28)
            ax.annotate(name, (doc["normalized"]["K"], doc["normalized"][key]),
                        fontsize=7, xytext=(3, 3), textcoords="offset points")
        hs_k = rows[0][1]["hs_upper_normalized"]["K"]
        hs_v = rows[0][1]["hs_upper_normalized"][key]
        ax.axvline(hs_k, linestyle="--", linewidth=0.8, color="gray")
        ax.axhline(hs_v, linestyle="--", linewidth=0.8, color="gray")
        ax.set_xlabel("K/(rho Es)")
        ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isoshell",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, thickness=False):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--preset", help="surface preset (iwp, frd, n)")
        sp.add_argument("--resolution", type=int)
        sp.add_argument("--cell-size", type=float, dest="cell_size")
        sp.add_argument("--out", help="output directory")
        if thickness:
            sp.add_argument("--thickness", type=float,
                            help="uniform shell thickness, mm")

    sp = sub.add_parser("mesh", help="generate mid-surface STL + sidecar")
    common(sp)
    sp.add_argument("--domain", default="eighth",
                    choices=("fundamental", "eighth", "unit", "tiled"))
    sp.add_argument("--tile", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
    sp.add_argument("--format", default="binary", choices=("binary", "ascii"))
    sp.set_defaults(func=cmd_mesh)

    sp = sub.add_parser("homog", help="homogenize the eighth cell")
    common(sp, thickness=True)
    sp.add_argument("--thickness-file", help="per-element thickness JSON")
    sp.add_argument("--check-hill", action="store_true",
                    help="include stress-consistency residuals in the report")
    sp.add_argument("--dump-solution", action="store_true")
    sp.set_defaults(func=cmd_homog)

    sp = sub.add_parser("optimize", help="drive the Zener index to one")
    common(sp, thickness=True)
    sp.add_argument("--resume", help="checkpoint file to continue from")
    sp.add_argument("--fd-check", type=int, metavar="N",
                    help="verify N gradient entries against finite differences "
                         "before optimizing")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("thicken", help="offset the mid-surface into a solid STL")
    common(sp, thickness=True)
    sp.add_argument("--domain", default="eighth",
                    choices=("fundamental", "eighth", "unit", "tiled"))
    sp.add_argument("--tile", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
    sp.add_argument("--thickness-file")
    sp.add_argument("--format", default="binary", choices=("binary", "ascii"))
    sp.add_argument("--allow-self-intersections", action="store_true",
                    help="export even if grazing self-contacts are detected")
    sp.set_defaults(func=cmd_thicken)

    sp = sub.add_parser("post", help="analyze compression-test curves")
    sp.add_argument("--curve", action="append", help="CSV file (repeatable)")
    sp.add_argument("--manifest", help="JSON manifest of curves")
    sp.add_argument("--height", type=float, help="specimen height, mm")
    sp.add_argument("--area", type=float, help="end-face area, mm^2")
    sp.add_argument("--rho", type=float, help="relative density")
    sp.add_argument("--direction", help="direction label")
    sp.add_argument("--machine-stiffness", type=float,
                    help="machine stiffness, N/mm (inf for rigid)")
    sp.add_argument("--plots", action="store_true", help="write SVG plots")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_post)

    sp = sub.add_parser("report", help="collect moduli reports into CSV + SVG")
    sp.add_argument("--dir", required=True, help="directory tree to scan")
    sp.add_argument("--out", help="output directory (default: scanned dir)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
