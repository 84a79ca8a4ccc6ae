"""Configuration-driven convergence studies.

Three setups on the unit square with ``u_t - kappa Lap u = f``:

* ``exp1-smooth`` / ``exp1-random``: dynamic condition on the whole
  boundary, ``f = 1``, ``g = t``, ``u0 = sin(pi x) cos(5 pi y / 2 + 1)``;
  uniform FEM against PG-LOD with nodal interpolation.
* ``exp2-mixed``: dynamic condition on the bottom edge only, ``f = 1``,
  ``g = 0``, ``u0 = sin(pi x) cos(5 pi y / 2)``, random coefficient,
  Clement-type LOD with fixed or growing patch layers.
* ``exp3-boundary-refine``: bottom edge, smooth coefficient with
  ``eps = 1/4``, ``u0 = sin(3 pi x) cos(5 pi y / 2 + 1)``, fixed bulk mesh
  and uniformly refined P1 boundary meshes.

Every run writes ``report.csv`` (primary series), ``report_<series>.csv``
for each series, ``summary.json`` and ``convergence.svg``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .coefficients import make_constant_coefficient, make_random_coefficient, make_smooth_coefficient
from .errors import REPORT_COLUMNS, compute_reference, error_norms, fitted_order, observed_orders, order_over_last
from .lod import CLEMENT, FORM_PLAIN, FORM_SHIFTED, NODAL, compute_correctors, lod_basis_matrix
from .mesh import GAMMA_BOTTOM, GAMMA_FULL, build_bulk_mesh, refine_boundary, restrict_to_boundary
from .pdae_solver import PGLOD, STANDARD, ProblemData, assemble_system, implicit_euler

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

EXPERIMENTS = ("exp1-smooth", "exp1-random", "exp2-mixed", "exp3-boundary-refine", "custom")
UNIFORM = "uniform-fem"
DEFAULT_SEED = 20240601


@dataclass
class ExperimentConfig:
    experiment: str = "exp1-smooth"
    coefficient: str = "smooth"          # smooth | random | constant
    epsilon: float = 2.0**-6
    seed: int = DEFAULT_SEED
    kappa: float = 0.1
    tau: float = 0.01
    T_end: float = 0.1
    gamma_dyn: str = GAMMA_FULL
    initial: str = "exp1"                # exp1 | exp2 | exp3
    boundary_load: str = "t"             # t | zero
    H: list = field(default_factory=lambda: [2.0**-k for k in range(2, 7)])
    m_policy: str = "fixed"              # fixed | log-scaled
    m_values: list = field(default_factory=lambda: [1])
    m_offset: int = 0
    interpolation: str = NODAL
    form: str = FORM_PLAIN
    variants: list = field(default_factory=lambda: [UNIFORM, PGLOD])
    boundary_levels: list = field(default_factory=list)
    n_ref: int = 512
    ref_boundary_levels: int = 0
    output_dir: str = "out"
    workers: int = 1
    memory_budget_gb: float = 4.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(tomllib.loads(text))

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.coefficient not in ("smooth", "random", "constant"):
            raise ValueError(f"unknown coefficient kind {self.coefficient!r}")
        if self.m_policy not in ("fixed", "log-scaled"):
            raise ValueError(f"unknown m policy {self.m_policy!r}")
        if self.interpolation not in (NODAL, CLEMENT):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.form not in (FORM_PLAIN, FORM_SHIFTED):
            raise ValueError(f"unknown form {self.form!r}")
        for v in self.variants:
            if v not in (UNIFORM, PGLOD):
                raise ValueError(f"unknown variant {v!r}")
        for h in self.H:
            n = round(1.0 / h)
            if n < 1 or abs(n * h - 1.0) > 1e-12 or self.n_ref % n:
                raise ValueError(f"H={h} is not a divisor of the reference grid")


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return ExperimentConfig.from_dict(json.loads(text))
    return ExperimentConfig.from_toml(text)


def default_config(experiment: str, full_scale: bool = False) -> ExperimentConfig:
    """Desk-scale defaults, or the original parameters with ``full_scale``.

    The random-coefficient setups keep ``eps = 2^-9`` even at desk scale:
    with ``eps = 2^-6`` the finest coarse mesh already resolves the cells and
    no preasymptotic behaviour is left to observe.  Their reference uses two
    extra boundary refinements so that every cell carries four elements.
    """
    if experiment in ("exp1-smooth", "exp1-random"):
        cfg = ExperimentConfig(experiment=experiment,
                               coefficient="smooth" if experiment == "exp1-smooth" else "random")
        if experiment == "exp1-random":
            cfg.epsilon = 2.0**-9
            cfg.H = [2.0**-k for k in range(2, 9)]
            cfg.ref_boundary_levels = 2
        if full_scale:
            cfg.epsilon = 2.0**-9
            cfg.H = [2.0**-k for k in range(2, 9)]
            cfg.n_ref = 1024
            cfg.ref_boundary_levels = 1
            cfg.memory_budget_gb = 8.0
    elif experiment == "exp2-mixed":
        cfg = ExperimentConfig(experiment=experiment, coefficient="random", epsilon=2.0**-9,
                               gamma_dyn=GAMMA_BOTTOM, initial="exp2", boundary_load="zero",
                               H=[2.0**-k for k in range(2, 8)], m_policy="log-scaled",
                               m_values=[1, 2, 3], interpolation=CLEMENT, form=FORM_SHIFTED,
                               variants=[PGLOD], ref_boundary_levels=2)
        if full_scale:
            cfg.n_ref = 1024
            cfg.ref_boundary_levels = 1
            cfg.memory_budget_gb = 8.0
    elif experiment == "exp3-boundary-refine":
        cfg = ExperimentConfig(experiment=experiment, coefficient="smooth", epsilon=0.25,
                               gamma_dyn=GAMMA_BOTTOM, initial="exp3", boundary_load="zero",
                               H=[2.0**-3], variants=[UNIFORM], boundary_levels=[0, 1, 2, 3, 4, 5])
        if full_scale:
            cfg.H = [2.0**-3, 2.0**-6]
            cfg.boundary_levels = [0, 1, 2, 3, 4, 5, 6, 7]
            cfg.n_ref = 1024
            cfg.memory_budget_gb = 8.0
    else:
        cfg = ExperimentConfig(experiment="custom")
    cfg.validate()
    return cfg


def _initial(name: str):
    if name == "exp1":
        return lambda x, y: np.sin(np.pi * x) * np.cos(2.5 * np.pi * y + 1.0)
    if name == "exp2":
        return lambda x, y: np.sin(np.pi * x) * np.cos(2.5 * np.pi * y)
    if name == "exp3":
        return lambda x, y: np.sin(3.0 * np.pi * x) * np.cos(2.5 * np.pi * y + 1.0)
    raise ValueError(f"unknown initial condition {name!r}")


def _boundary_length(gamma_dyn: str) -> float:
    return 4.0 if gamma_dyn == GAMMA_FULL else 1.0


def make_coefficient(cfg: ExperimentConfig):
    if cfg.coefficient == "smooth":
        return make_smooth_coefficient(cfg.epsilon)
    if cfg.coefficient == "random":
        return make_random_coefficient(cfg.epsilon, cfg.seed, _boundary_length(cfg.gamma_dyn),
                                       periodic=cfg.gamma_dyn == GAMMA_FULL)
    return make_constant_coefficient(1.0)


def make_problem(cfg: ExperimentConfig) -> ProblemData:
    g = (lambda s, t: np.full(np.shape(s), t)) if cfg.boundary_load == "t" else 0.0
    return ProblemData(gamma_dyn=cfg.gamma_dyn, coefficient=make_coefficient(cfg),
                       u0=_initial(cfg.initial), f=1.0, g=g, kappa=cfg.kappa, tau=cfg.tau,
                       T_end=cfg.T_end)


def log_scaled_m(H: float, offset: int = 0) -> int:
    return max(int(math.ceil(math.log2(1.0 / H) - 1e-12)) + offset, 0)


@dataclass(frozen=True)
class Run:
    series: str
    variant: str
    n: int
    m: Optional[int] = None
    levels: int = 0


def plan_runs(cfg: ExperimentConfig) -> list[Run]:
    runs = []
    ns = [int(round(1.0 / h)) for h in cfg.H]
    if cfg.boundary_levels:
        finest = cfg.n_ref * 2**cfg.ref_boundary_levels
        for n in ns:
            label = "standard-fem" if len(ns) == 1 else f"standard-fem-n{n}"
            # boundary meshes finer than the reference carry no information
            runs += [Run(label, STANDARD, n, None, lv) for lv in cfg.boundary_levels
                     if n * 2**lv <= finest]
        return runs
    for v in cfg.variants:
        if v == UNIFORM:
            runs += [Run(UNIFORM, STANDARD, n) for n in ns]
            continue
        fixed = list(cfg.m_values)
        if cfg.m_policy == "log-scaled":
            runs += [Run("pglod-mlog", PGLOD, n, log_scaled_m(1.0 / n, cfg.m_offset)) for n in ns]
            for m in fixed:
                runs += [Run(f"pglod-m{m}", PGLOD, n, int(m)) for n in ns]
        else:
            for m in fixed:
                label = "pglod" if len(fixed) == 1 else f"pglod-m{m}"
                runs += [Run(label, PGLOD, n, int(m)) for n in ns]
    return runs


def primary_series(runs: list[Run]) -> str:
    labels = [r.series for r in runs]
    for pref in ("pglod-mlog", "pglod"):
        if pref in labels:
            return pref
    pg = [s for s in labels if s.startswith("pglod")]
    return pg[0] if pg else labels[0]


def run_one(run: Run, cfg: ExperimentConfig, problem: ProblemData, ref) -> dict:
    mesh = build_bulk_mesh(run.n, cfg.gamma_dyn)
    c = problem.coefficient
    if run.variant == STANDARD:
        q = None
        if run.levels:
            q = refine_boundary(restrict_to_boundary(mesh), run.levels)
        sys = assemble_system(mesh, c, problem.kappa, STANDARD, q_mesh=q)
    else:
        coarse = restrict_to_boundary(mesh)
        ratio = ref.boundary_mesh.n_segments // coarse.n_segments
        fine = refine_boundary(coarse, int(round(math.log2(ratio))))
        cb = compute_correctors(fine, coarse, c, run.m, cfg.form, cfg.interpolation)
        sys = assemble_system(mesh, c, problem.kappa, PGLOD, lod_basis_matrix(cb))
    traj = implicit_euler(sys, problem.tau, problem.T_end, problem.u0, problem.f, problem.g)
    return error_norms(traj, sys, ref)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12e}"


def report_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in REPORT_COLUMNS])
    return buf.getvalue()


def series_orders(rows: list[dict], x: str) -> dict:
    out = {}
    H = [r[x] for r in rows]
    cols = REPORT_COLUMNS[3:] + [k for k in ("err_p_L2_coarse",) if rows and k in rows[0]]
    for col in cols:
        e = [r[col] for r in rows]
        entry = {"pairwise": [None if not np.isfinite(o) else round(float(o), 6)
                              for o in observed_orders(e, H)]}
        if len(rows) >= 4:
            o = order_over_last(e, H, 3)
            entry["last3"] = None if not np.isfinite(o) else round(o, 6)
        if len(rows) >= 2:
            o = fitted_order(e, H)
            entry["fitted"] = None if not np.isfinite(o) else round(o, 6)
        out[col] = entry
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    series: dict
    primary: str
    failures: list
    timings: dict
    output_dir: Optional[Path] = None

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Compute every planned row against one shared reference and emit the bundle."""
    cfg.validate()
    t0 = time.perf_counter()
    problem = make_problem(cfg)
    ref = compute_reference(problem, cfg.n_ref, cfg.ref_boundary_levels,
                            memory_budget=cfg.memory_budget_gb * 1e9)
    timings = {"reference": time.perf_counter() - t0}
    runs = plan_runs(cfg)

    def job(run):
        t = time.perf_counter()
        try:
            return run, run_one(run, cfg, problem, ref), None, time.perf_counter() - t
        except Exception as exc:  # reported per row
            return run, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(job, runs))
    else:
        results = [job(r) for r in runs]

    series, failures = {}, []
    for run, row, err, dt in results:
        key = f"{run.series}/n{run.n}/l{run.levels}"
        timings[key] = dt
        if err is not None:
            failures.append({"series": run.series, "n": run.n, "m": run.m, "levels": run.levels,
                             "error": err})
            continue
        series.setdefault(run.series, []).append(row)
    timings["total"] = time.perf_counter() - t0
    res = ExperimentResult(cfg, series, primary_series(runs), failures, timings)
    if write:
        res.output_dir = write_bundle(res)
    return res


def summary_dict(res: ExperimentResult, include_timings: bool = True) -> dict:
    x = "H_Gamma" if res.config.boundary_levels else "H_Omega"
    d = {
        "experiment": res.config.experiment,
        "config": res.config.to_dict(),
        "primary_series": res.primary,
        "orders": {k: series_orders(v, x) for k, v in sorted(res.series.items())},
        "failures": res.failures,
    }
    if include_timings:
        d["timings_seconds"] = {k: round(v, 3) for k, v in res.timings.items()}
    return d


def write_bundle(res: ExperimentResult) -> Path:
    out = Path(res.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report_csv_text(res.series.get(res.primary, [])))
    for label, rows in sorted(res.series.items()):
        (out / f"report_{label}.csv").write_text(report_csv_text(rows))
    (out / "summary.json").write_text(json.dumps(summary_dict(res), indent=2, sort_keys=True) + "\n")
    if res.series:
        emit_plot(res.series, out / "convergence.svg", style=plot_style(res.config))
    return out


def plot_style(cfg: ExperimentConfig) -> dict:
    if cfg.boundary_levels:
        return {"x": "H_Gamma", "fields": ["err_u_L2", "err_p_L2"], "guides": [1, 2],
                "title": "boundary refinement, fixed bulk mesh"}
    if cfg.experiment == "exp2-mixed":
        return {"x": "H_Omega", "fields": ["err_p_full_H1"], "guides": [1],
                "title": "H1 error of p against patch layers"}
    return {"x": "H_Omega", "fields": ["err_u_L2", "err_p_L2"], "guides": [2],
            "title": "L2 errors at final time"}


def emit_plot(series: dict, path, style: Optional[dict] = None) -> Path:
    """Log-log error plot with optional order guide lines, as a reproducible SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    style = style or {"x": "H_Omega", "fields": ["err_u_L2", "err_p_L2"], "guides": [2]}
    if not series or not any(series.values()):
        raise ValueError("nothing to plot")
    xk = style.get("x", "H_Omega")
    markers = "osv^D<>ph"
    with matplotlib.rc_context({"svg.hashsalt": "lodbs", "svg.fonttype": "none",
                                "path.simplify": False}):
        fig, ax = plt.subplots(figsize=(6.0, 4.5))
        k = 0
        for label in sorted(series):
            rows = series[label]
            x = [r[xk] for r in rows]
            for fld in style.get("fields", ["err_u_L2"]):
                y = [r[fld] for r in rows]
                ax.loglog(x, y, marker=markers[k % len(markers)], label=f"{label} {fld}")
                k += 1
        allx = sorted({r[xk] for rows in series.values() for r in rows})
        ally = [r[f] for rows in series.values() for r in rows for f in style.get("fields", [])]
        ally = [v for v in ally if v > 0]
        if len(allx) > 1 and ally:
            x0, x1 = allx[0], allx[-1]
            y1 = min(ally)
            for s in style.get("guides", []):
                # anchored at the smallest H and error: y = y1 (x / x0)^s
                ax.loglog([x0, x1], [y1, y1 * (x1 / x0) ** s], "k--", linewidth=0.8,
                          label=f"order {s}")
        ax.set_xlabel(xk)
        ax.set_ylabel("error")
        if style.get("title"):
            ax.set_title(style["title"])
        ax.legend(fontsize=7)
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return path
