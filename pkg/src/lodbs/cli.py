"""Command line entry point: ``lodbs {run,convergence,correctors,infsup}``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from .coefficients import make_random_coefficient, make_smooth_coefficient
from .errors import infsup_constant
from .experiments import EXPERIMENTS, DEFAULT_SEED, default_config, load_config, run_experiment
from .lod import CLEMENT, FORM_PLAIN, FORM_SHIFTED, NODAL, corrector_decay_profile
from .mesh import GAMMA_BOTTOM, GAMMA_FULL, build_bulk_mesh, refine_boundary, restrict_to_boundary


def _print_result(res) -> int:
    for label in sorted(res.series):
        rows = res.series[label]
        print(f"[{label}]")
        x = "H_Gamma" if res.config.boundary_levels else "H_Omega"
        print(f"  {x:>10} {'m':>3} {'err_u_L2':>11} {'err_p_L2':>11} {'err_p_full_H1':>13}")
        for r in rows:
            m = "" if r["m"] is None else r["m"]
            print(f"  {r[x]:10.3e} {m!s:>3} {r['err_u_L2']:11.4e} {r['err_p_L2']:11.4e}"
                  f" {r['err_p_full_H1']:13.4e}")
    for f in res.failures:
        print(f"FAILED {f['series']} n={f['n']} levels={f['levels']}: {f['error']}", file=sys.stderr)
    if res.output_dir is not None:
        print(f"wrote {res.output_dir}")
    print(f"total {res.timings['total']:.1f}s")
    return 1 if res.failures else 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    return _print_result(run_experiment(cfg))


def cmd_convergence(args) -> int:
    cfg = default_config(args.experiment, full_scale=args.full_scale)
    cfg.output_dir = args.output_dir or f"out/{args.experiment}"
    if args.workers:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed = args.seed
    if args.dump_config:
        print(cfg.to_toml())
        return 0
    return _print_result(run_experiment(cfg))


def cmd_correctors(args) -> int:
    n = round(1.0 / args.H)
    if abs(n * args.H - 1.0) > 1e-12:
        raise SystemExit("--H must be 1/n")
    gamma = GAMMA_BOTTOM if args.bottom else GAMMA_FULL
    coarse = restrict_to_boundary(build_bulk_mesh(n, gamma))
    h = args.h if args.h else args.epsilon / 4.0
    levels = max(int(round(math.log2(args.H / h))), 0)
    fine = refine_boundary(coarse, levels)
    if args.coefficient == "smooth":
        c = make_smooth_coefficient(args.epsilon)
    else:
        length = 4.0 if gamma == GAMMA_FULL else 1.0
        c = make_random_coefficient(args.epsilon, args.seed, length, periodic=gamma == GAMMA_FULL)
    m_max = args.m_max if args.m_max is not None else math.ceil(math.log2(1.0 / args.H)) + 4
    prof = corrector_decay_profile(fine, coarse, c, args.form, args.kind, m_max)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["m", "relative_energy_error"])
        for m, e in prof:
            w.writerow([m, f"{e:.12e}"])
    finally:
        if args.output:
            out.close()
    return 0


def cmd_infsup(args) -> int:
    gamma = GAMMA_BOTTOM if args.bottom else GAMMA_FULL
    rows = []
    for i in range(args.levels):
        n = 4 * 2**i
        r = infsup_constant(build_bulk_mesh(n, gamma))
        rows.append({"n": n, "beta": r.beta, "degenerate": r.degenerate,
                     "n_multipliers": r.n_multipliers})
        print(f"n={n:4d}  beta={r.beta:.6f}  multipliers={r.n_multipliers}")
    betas = [r["beta"] for r in rows]
    if betas and min(betas) > 0:
        print(f"max/min = {max(betas) / min(betas):.4f}")
    if args.output:
        Path(args.output).write_text(json.dumps(rows, indent=2) + "\n")
    return 1 if any(r["degenerate"] for r in rows) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lodbs",
                                description="Bulk-surface heat equation with multiscale dynamic "
                                            "boundary conditions")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a TOML or JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("convergence", help="run a predefined convergence study")
    c.add_argument("--experiment", required=True, choices=[e for e in EXPERIMENTS if e != "custom"])
    c.add_argument("--paper-scale", dest="full_scale", action="store_true",
                   help="long run with eps = 2^-9, H down to 2^-8 and a 1024 reference grid")
    c.add_argument("--output-dir")
    c.add_argument("--workers", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--dump-config", action="store_true", help="print the TOML config and exit")
    c.set_defaults(func=cmd_convergence)

    k = sub.add_parser("correctors", help="corrector localization error against patch layers")
    k.add_argument("--epsilon", type=float, required=True)
    k.add_argument("--H", type=float, required=True)
    k.add_argument("--h", type=float, help="fine boundary mesh size (default epsilon/4)")
    k.add_argument("--m-max", type=int)
    k.add_argument("--coefficient", choices=["smooth", "random"], default="smooth")
    k.add_argument("--seed", type=int, default=DEFAULT_SEED)
    k.add_argument("--form", choices=[FORM_PLAIN, FORM_SHIFTED], default=FORM_SHIFTED)
    k.add_argument("--kind", choices=[CLEMENT, NODAL], default=CLEMENT)
    k.add_argument("--bottom", action="store_true", help="use the bottom edge instead of the loop")
    k.add_argument("--output", help="CSV path (default stdout)")
    k.set_defaults(func=cmd_correctors)

    s = sub.add_parser("infsup", help="inf-sup estimates on n = 4, 8, ... meshes")
    s.add_argument("--levels", type=int, default=5)
    s.add_argument("--bottom", action="store_true")
    s.add_argument("--output", help="JSON path")
    s.set_defaults(func=cmd_infsup)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.func(args))


if __name__ == "__main__":
    sys.exit(main())
