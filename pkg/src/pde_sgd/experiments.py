"""Experiment drivers behind the ``pde-sgd`` subcommands.

Each driver takes an :class:`~pde_sgd.config.ExperimentConfig`, writes its
CSV files into ``cfg.output.dir`` and returns a dict of the main results so
tests can use the drivers without re-reading the files.  Wall-clock times go
to ``*.timing.csv`` side files so that data files are byte-identical for a
fixed seed.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, fem
from . import optimizer as opt
from . import randfield as rf
from .config import ExperimentConfig
from .mesh import TriMesh, dump_mesh, parse_mesh_dump, prolong_p0, uniform_mesh
from .spaces import P0Function

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentError", "make_problem", "make_field", "make_rule", "make_schedule", "make_psg_config",
    "derive_seed", "estimate_objective", "objective_table",
    "fem_convergence", "sc_run", "ref_solution", "sc_ensemble", "avg_sweep", "compare", "theory",
    "fields_report", "load_reference", "save_control", "load_control",
]


class ExperimentError(RuntimeError):
    pass


# -- factories -----------------------------------------------------------------

def make_problem(cfg: ExperimentConfig) -> fem.TrackingProblem:
    if cfg.problem.variant == "strongly-convex":
        return fem.strongly_convex_problem(cfg.problem.lam)
    return fem.convex_problem()


def make_field(cfg: ExperimentConfig) -> rf.FieldSpec:
    builders = {
        "example1": rf.kl_example1,
        "example2": rf.kl_example2,
        "example3": rf.example3,
        "example3-modified": rf.example3_modified,
    }
    f = cfg.field
    kwargs = {}
    if f.a0 is not None:
        kwargs["a0"] = f.a0
    if f.m is not None:
        kwargs["m"] = f.m
    if f.l is not None:
        kwargs.update({"l": f.l} if f.family == "example1" else {"l1": f.l, "l2": f.l})
    if f.sigma is not None:
        kwargs["sigma"] = f.sigma
    spec = builders[f.family](**kwargs)
    if cfg.field.s is not None:
        spec.s = cfg.field.s
    if cfg.field.t is not None:
        spec.t = cfg.field.t
    return spec


def default_theta(cfg: ExperimentConfig, rule: str) -> float:
    if rule == "strongly-convex":
        return 1.0 / (2.0 * cfg.problem.lam) + 1.01
    return 1.0


def make_rule(cfg: ExperimentConfig, spec: rf.FieldSpec, n_steps: int,
              rule: Optional[str] = None, theta: Optional[float] = None) -> opt.StepRule:
    rule = rule or cfg.step.rule
    theta = theta if theta is not None else (cfg.step.theta if cfg.step.theta is not None
                                             else default_theta(cfg, rule))
    if rule == "strongly-convex":
        if cfg.problem.lam <= 0:
            raise ExperimentError("the strongly convex rule needs lam > 0")
        nu = cfg.step.nu if cfg.step.nu is not None else opt.derive_nu(theta, cfg.step.K, cfg.problem.lam)
        return opt.StronglyConvex(theta, nu)
    M = cfg.step.M if cfg.step.M is not None else noise_bound(cfg, spec)
    if rule == "constant":
        return opt.ConstantAveraging(cfg.step.d_ad, M, n_steps)
    return opt.VariableAveraging(theta, cfg.step.d_ad, M)


def noise_bound(cfg: ExperimentConfig, spec: rf.FieldSpec) -> float:
    problem = make_problem(cfg)
    u_norm = max(abs(problem.u_a), abs(problem.u_b))  # |D| = 1
    return opt.compute_M_bound(spec.a_min, problem.y_d_norm, problem.e_d_norm, u_norm)


def make_schedule(cfg: ExperimentConfig, spec: rf.FieldSpec, p: Optional[float] = None,
                  max_level: Optional[int] = None) -> opt.MeshSchedule:
    s = cfg.schedule
    p = p if p is not None else (s.p if s.p is not None else spec.p)
    return opt.MeshSchedule(c=s.c, p=p, refine=s.refine, initial_level=s.initial_level,
                            max_level=max_level if max_level is not None else s.max_level)


def derive_seed(master: int, *keys: int) -> int:
    """Independent stream seed for (master, keys...)."""
    return int(np.random.SeedSequence([master, *keys]).generate_state(1, dtype=np.uint64)[0] >> 1)


def make_psg_config(cfg: ExperimentConfig, n_steps: int, seed: int, rule: Optional[str] = None,
                    snapshots: Sequence[int] = (), problem=None, spec=None) -> opt.PsgConfig:
    problem = problem or make_problem(cfg)
    spec = spec or make_field(cfg)
    return opt.PsgConfig(problem=problem, field_spec=spec,
                         rule=make_rule(cfg, spec, n_steps, rule),
                         schedule=make_schedule(cfg, spec), n_steps=n_steps, seed=seed,
                         alpha=cfg.step.alpha, solver=fem.Solver(cfg.solver.method, cfg.solver.tol),
                         snapshots=tuple(snapshots))


def reference_psg_config(cfg: ExperimentConfig, problem=None, spec=None) -> opt.PsgConfig:
    r = cfg.reference
    problem = problem or make_problem(cfg)
    spec = spec or make_field(cfg)
    rule = r.rule or cfg.step.rule
    return opt.PsgConfig(problem=problem, field_spec=spec,
                         rule=make_rule(cfg, spec, r.n_steps, rule, r.theta),
                         schedule=make_schedule(cfg, spec, p=r.p, max_level=r.max_level),
                         n_steps=r.n_steps, seed=r.seed,
                         alpha=r.alpha if r.alpha is not None else cfg.step.alpha,
                         solver=fem.Solver(cfg.solver.method, cfg.solver.tol))


# -- Monte Carlo objective -------------------------------------------------------

def _finest(meshes: Sequence[TriMesh]) -> TriMesh:
    return max(meshes, key=lambda m: m.level)


def objective_table(controls: Sequence[P0Function], problem: fem.TrackingProblem, spec: rf.FieldSpec,
                    m: int, rng: np.random.Generator, solver: fem.Solver = fem.Solver("direct"),
                    common_mesh: bool = False) -> np.ndarray:
    """Sample objectives J_h(u, xi_i) with the same m draws for every control.

    Returns shape (m, len(controls)).  With ``common_mesh`` every control is
    prolonged to the finest mesh among them; otherwise each is evaluated on
    its own mesh.
    """
    fields = [rf.sample_realization(spec, rng) for _ in range(m)]
    out = np.empty((m, len(controls)))
    if common_mesh:
        target = _finest([u.mesh for u in controls])
        groups = {target.level: list(range(len(controls)))}
        lifted = [prolong_p0(u, target) for u in controls]
    else:
        groups, lifted = {}, list(controls)
        for j, u in enumerate(controls):
            groups.setdefault(u.mesh.level, []).append(j)
    for idx in groups.values():
        out[:, idx] = fem.objective_samples([lifted[j] for j in idx], fields, problem, solver)
    return out


def _mean_stderr(samples: np.ndarray):
    samples = np.asarray(samples)
    mean = samples.mean(axis=0)
    if samples.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])


def estimate_objective(u_h: P0Function, problem: fem.TrackingProblem, spec: rf.FieldSpec, m: int,
                       rng: np.random.Generator, solver: fem.Solver = fem.Solver("direct")):
    """Monte Carlo mean of J_h(u_h, xi) over m fresh draws, with its standard error."""
    if m < 1:
        raise ValueError("need m >= 1")
    mean, se = _mean_stderr(objective_table([u_h], problem, spec, m, rng, solver)[:, 0])
    return float(mean), float(se)


# -- file helpers ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            values = [row[h] for h in header] if isinstance(row, dict) else list(row)
            w.writerow([_fmt(v) for v in values])
    return path


def read_csv(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def save_control(u: P0Function, directory: Path, stem: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{stem}_mesh.txt").write_text(dump_mesh(u.mesh), encoding="utf-8")
    write_csv(directory / f"{stem}_control.csv", ("cell", "value"), enumerate(u.values))


def load_control(directory: Path, stem: str) -> P0Function:
    mesh_file = directory / f"{stem}_mesh.txt"
    ctrl_file = directory / f"{stem}_control.csv"
    if not mesh_file.exists() or not ctrl_file.exists():
        raise ExperimentError(f"missing stored control {stem!r} in {directory}")
    mesh = parse_mesh_dump(mesh_file.read_text(encoding="utf-8"))
    values = np.array([float(r["value"]) for r in read_csv(ctrl_file)])
    return P0Function(mesh, values)


def _out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output.dir)


def reference_dir(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.reference.path)
    return p if p.is_absolute() else Path(os.path.normpath(_out(cfg) / p))


def load_reference(cfg: ExperimentConfig) -> P0Function:
    d = reference_dir(cfg)
    if not (d / "reference_control.csv").exists():
        raise ExperimentError(f"no reference solution in {d}; run `pde-sgd ref-solution` first")
    return load_control(d, "reference")


def _trace_files(directory: Path, stem: str, rows: list) -> None:
    data_fields = [f for f in opt.RunRecord.ROW_FIELDS if f != "wall_s"]
    write_csv(directory / f"{stem}.csv", data_fields, rows)
    write_csv(directory / f"{stem}.timing.csv", ("n", "wall_s"), rows)


def _snapshot_grid(n_steps: int, count: int, skip: float) -> list:
    """Log-spaced points over the run plus evenly spaced points in the fit window."""
    start = max(1, math.ceil(skip * n_steps))
    pts = set(np.unique(np.round(np.geomspace(1, n_steps, count)).astype(int)).tolist())
    pts |= set(np.unique(np.round(np.linspace(start, n_steps, count)).astype(int)).tolist())
    return sorted(pts)


# -- subcommands ---------------------------------------------------------------------

def fem_convergence(cfg: ExperimentConfig) -> dict:
    """Manufactured solution y = sin(pi x1) sin(pi x2) with a = 1."""

    def exact(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    rows, errs, hs = [], [], []
    for level in cfg.run.levels:
        mesh = uniform_mesh(level)
        A = fem.assemble_stiffness(mesh, P0Function.constant(mesh, 1.0))
        b = fem.load_from_function(mesh, lambda x: 2 * np.pi**2 * exact(x))
        y = fem.solve_spd(fem.SparseSystem(A, b, mesh), tol=cfg.solver.tol, method=cfg.solver.method)
        err = fem.l2_error(y, exact)
        rate = math.log(errs[-1] / err) / math.log(hs[-1] / mesh.h_max) if errs else float("nan")
        errs.append(err)
        hs.append(mesh.h_max)
        rows.append({"level": level, "h": mesh.h_max, "n_triangles": mesh.n_triangles,
                     "n_vertices": mesh.n_vertices, "l2_error": err, "rate": rate})
    fit = analysis.fit_loglog_slope(hs, errs)
    write_csv(_out(cfg) / "fem_convergence.csv",
              ("level", "h", "n_triangles", "n_vertices", "l2_error", "rate"), rows)
    write_csv(_out(cfg) / "fem_convergence_fit.csv", ("slope", "stderr", "n_points"),
              [{"slope": fit.slope, "stderr": fit.stderr, "n_points": fit.n_points}])
    return {"rows": rows, "fit": fit}


def sc_run(cfg: ExperimentConfig) -> dict:
    """One PSG run with objective estimates along the trajectory."""
    problem, spec = make_problem(cfg), make_field(cfg)
    N = cfg.run.n_steps
    snaps = _snapshot_grid(N, cfg.run.snapshots, 0.0)
    pcfg = make_psg_config(cfg, N, derive_seed(cfg.run.seed, 1), snapshots=snaps, problem=problem, spec=spec)
    t0 = time.perf_counter()
    rec = opt.run_psg(pcfg)
    run_time = time.perf_counter() - t0
    controls = [rec.snapshots[n] for n in snaps]
    J = objective_table(controls, problem, spec, cfg.estimate.samples,
                        np.random.default_rng(derive_seed(cfg.run.seed, 2)),
                        fem.Solver(cfg.solver.estimate_method, cfg.solver.tol))
    mean, se = _mean_stderr(J)
    obj_rows = [{"n": n, "h": u.mesh.h_max, "level": u.mesh.level, "j_hat": mean[k], "stderr": se[k]}
                for k, (n, u) in enumerate(zip(snaps, controls))]
    out = _out(cfg)
    _trace_files(out, "trace", rec.rows)
    write_csv(out / "objective.csv", ("n", "h", "level", "j_hat", "stderr"), obj_rows)
    write_csv(out / "sc_run.timing.csv", ("quantity", "wall_s"), [("psg_run", run_time)])
    save_control(rec.final, out, "final")
    return {"record": rec, "objective": obj_rows, "j_final": obj_rows[-1]["j_hat"],
            "stderr_final": obj_rows[-1]["stderr"], "h_final": rec.final.mesh.h_max, "wall_s": run_time}


def ref_solution(cfg: ExperimentConfig) -> dict:
    """Long run producing the reference control, stored with its mesh."""
    pcfg = reference_psg_config(cfg)
    t0 = time.perf_counter()
    rec = opt.run_psg(pcfg, progress=_progress_logger("reference", pcfg.n_steps))
    wall = time.perf_counter() - t0
    u_ref = rec.averaged if rec.averaged is not None else rec.final
    d = reference_dir(cfg)
    save_control(u_ref, d, "reference")
    _trace_files(d, "reference_trace", rec.rows)
    summary = {"n_steps": pcfg.n_steps, "seed": pcfg.seed, "rule": type(pcfg.rule).__name__,
               "averaged": int(rec.averaged is not None), "level": u_ref.mesh.level,
               "h_final": u_ref.mesh.h_max, "h_bound_final": rec.rows[-1]["h_bound"],
               "capped": int(any(r["capped"] for r in rec.rows)), "control_l2_norm": u_ref.l2_norm()}
    summary.update({f"rule_{k}": v for k, v in vars(pcfg.rule).items()})
    write_csv(d / "reference_summary.csv", ("key", "value"), summary.items())
    write_csv(d / "reference.timing.csv", ("quantity", "wall_s"), [("psg_run", wall)])
    return {"record": rec, "reference": u_ref, "summary": summary}


def _progress_logger(label: str, total: int):
    step = max(1, total // 10)

    def cb(row):
        if row["n"] % step == 0:
            log.info("%s: n=%d/%d level=%d h=%.4g", label, row["n"], total, row["level"], row["h_n"])
    return cb


def sc_ensemble(cfg: ExperimentConfig) -> dict:
    """Mean error and objective gap over seeds, with log-log slopes against n + nu."""
    problem, spec = make_problem(cfg), make_field(cfg)
    u_ref = load_reference(cfg)
    N = cfg.run.n_steps
    snaps = _snapshot_grid(N, cfg.run.snapshots, cfg.run.fit_skip)
    fields_rng_seed = derive_seed(cfg.run.seed, 3)
    est_solver = fem.Solver(cfg.solver.estimate_method, cfg.solver.tol)
    errors, gaps, timing, nu = [], [], [], None
    for k in range(cfg.run.ensemble):
        pcfg = make_psg_config(cfg, N, derive_seed(cfg.run.seed, 4, k), snapshots=snaps,
                               problem=problem, spec=spec)
        if not isinstance(pcfg.rule, opt.StronglyConvex):
            raise ExperimentError("sc-ensemble needs the strongly-convex step rule")
        nu = pcfg.rule.nu
        t0 = time.perf_counter()
        rec = opt.run_psg(pcfg)
        timing.append((k, time.perf_counter() - t0))
        lifted = [_lift(rec.snapshots[n], u_ref.mesh) for n in snaps]
        errors.append([(u - _lift(u_ref, u.mesh)).l2_norm() for u in lifted])
        # common draws across seeds and snapshots
        J = objective_table(lifted + [u_ref], problem, spec, cfg.estimate.samples,
                            np.random.default_rng(fields_rng_seed), est_solver, common_mesh=True)
        gaps.append(np.abs((J[:, :-1] - J[:, -1:]).mean(axis=0)))
        log.info("ensemble member %d done", k)
    E, G = np.mean(errors, axis=0), np.mean(gaps, axis=0)
    rows = [{"n": n, "n_plus_nu": n + nu, "mean_error": E[i], "std_error": np.std([e[i] for e in errors]),
             "mean_objective_gap": G[i]} for i, n in enumerate(snaps)]
    x = np.array(snaps, dtype=float) + nu
    window = np.array(snaps) >= max(1, math.ceil(cfg.run.fit_skip * N))
    fits = {"error": analysis.fit_loglog_slope(x[window], E[window]),
            "objective_gap": analysis.fit_loglog_slope(x[window], G[window])}
    out = _out(cfg)
    write_csv(out / "ensemble.csv", ("n", "n_plus_nu", "mean_error", "std_error", "mean_objective_gap"), rows)
    write_csv(out / "ensemble_slopes.csv", ("quantity", "slope", "stderr", "n_points", "n_min", "n_max"),
              [{"quantity": q, "slope": f.slope, "stderr": f.stderr, "n_points": f.n_points,
                "n_min": int(np.array(snaps)[window][0]), "n_max": N} for q, f in fits.items()])
    write_csv(out / "ensemble.timing.csv", ("member", "wall_s"), timing)
    return {"rows": rows, "fits": fits, "nu": nu}


def _lift(u: P0Function, mesh: TriMesh) -> P0Function:
    """Prolong to ``mesh`` if that is finer, otherwise leave ``u`` alone."""
    return prolong_p0(u, mesh) if mesh.level > u.mesh.level else u


def avg_sweep(cfg: ExperimentConfig) -> dict:
    """Fresh averaged runs for every N in the sweep and every rule, against the stored reference."""
    problem, spec = make_problem(cfg), make_field(cfg)
    u_ref = load_reference(cfg)
    rows, timing, averaged = [], [], []
    for N in cfg.run.sweep:
        for rule in cfg.run.rules:
            for r in range(cfg.run.replicates):
                pcfg = make_psg_config(cfg, N, derive_seed(cfg.run.seed, 5, N, r),
                                       rule=rule, problem=problem, spec=spec)
                t0 = time.perf_counter()
                rec = opt.run_psg(pcfg)
                wall = time.perf_counter() - t0
                averaged.append(rec.averaged)
                rows.append({"N": N, "rule": rule, "replicate": r, "h_final": rec.averaged.mesh.h_max,
                             "level_final": rec.averaged.mesh.level,
                             "capped": int(any(x["capped"] for x in rec.rows))})
                timing.append({"N": N, "rule": rule, "replicate": r, "wall_s": wall})
        log.info("sweep N=%d done", N)
    J = objective_table(averaged + [u_ref], problem, spec, cfg.estimate.samples,
                        np.random.default_rng(derive_seed(cfg.run.seed, 6)),
                        fem.Solver(cfg.solver.estimate_method, cfg.solver.tol), common_mesh=True)
    mean, se = _mean_stderr(J)
    gap_mean, gap_se = _mean_stderr(J[:, :-1] - J[:, -1:])
    for i, row in enumerate(rows):
        row.update({"j_hat": mean[i], "stderr": se[i], "j_ref": mean[-1],
                    "j_gap": gap_mean[i], "j_gap_stderr": gap_se[i]})
    summary, fits = [], {}
    for rule in cfg.run.rules:
        Ns, gaps = [], []
        for N in cfg.run.sweep:
            g = [row["j_gap"] for row in rows if row["N"] == N and row["rule"] == rule]
            summary.append({"N": N, "rule": rule, "mean_gap": float(np.mean(g)),
                            "sem_gap": float(np.std(g, ddof=1) / math.sqrt(len(g))) if len(g) > 1 else 0.0})
            Ns.append(N)
            gaps.append(float(np.mean(g)))
        try:
            fits[rule] = analysis.fit_loglog_slope(Ns, gaps, skip_fraction=cfg.run.fit_skip)
        except ValueError as exc:
            log.warning("no slope for rule %s: %s", rule, exc)
            fits[rule] = None
    out = _out(cfg)
    write_csv(out / "sweep.csv", ("N", "rule", "replicate", "j_hat", "stderr", "j_ref", "j_gap",
                                  "j_gap_stderr", "h_final", "level_final", "capped"), rows)
    write_csv(out / "sweep.timing.csv", ("N", "rule", "replicate", "wall_s"), timing)
    write_csv(out / "sweep_summary.csv", ("N", "rule", "mean_gap", "sem_gap"), summary)
    write_csv(out / "sweep_slopes.csv", ("rule", "slope", "stderr", "n_points"),
              [{"rule": k, "slope": f.slope if f else float("nan"), "stderr": f.stderr if f else float("nan"),
                "n_points": f.n_points if f else 0} for k, f in fits.items()])
    return {"rows": rows, "summary": summary, "fits": fits}


def compare(cfg: ExperimentConfig) -> dict:
    """Errors of the stored final iterate of ``sc-run`` against the stored reference."""
    problem, spec = make_problem(cfg), make_field(cfg)
    u_ref = load_reference(cfg)
    u = load_control(_out(cfg), "final")
    if not u_ref.mesh.is_descendant_of(u.mesh):
        raise ExperimentError("the run's mesh is not an ancestor of the reference mesh")
    u_f = prolong_p0(u, u_ref.mesh)
    J = objective_table([u_f, u_ref], problem, spec, cfg.estimate.samples,
                        np.random.default_rng(derive_seed(cfg.run.seed, 7)),
                        fem.Solver(cfg.solver.estimate_method, cfg.solver.tol))
    mean, se = _mean_stderr(J)
    gap, gap_se = _mean_stderr(J[:, 0] - J[:, 1])
    result = {"l2_error": (u_f - u_ref).l2_norm(), "j_run": mean[0], "j_run_stderr": se[0],
              "j_ref": mean[1], "j_ref_stderr": se[1], "j_gap": float(gap), "j_gap_stderr": float(gap_se),
              "run_level": u.mesh.level, "reference_level": u_ref.mesh.level}
    write_csv(_out(cfg) / "compare.csv", ("quantity", "value"), result.items())
    return result


def theory(cfg: ExperimentConfig) -> dict:
    """Step sizes, mesh bounds and the recursion certificate for the configured rule."""
    spec = make_field(cfg)
    N = cfg.run.n_steps
    rule = make_rule(cfg, spec, N)
    sched = make_schedule(cfg, spec)
    M = cfg.step.M if cfg.step.M is not None else noise_bound(cfg, spec)
    consts = {"rule": type(rule).__name__, "p": sched.p, "c": sched.c, "M": M, "a_min": spec.a_min}
    rows = []
    bound_curve = None
    if isinstance(rule, opt.StronglyConvex):
        e1 = make_problem(cfg).u_b ** 2  # |u^1 - u|^2 <= D_ad^2 for u^1 = 0 in [-1, 1]
        params = analysis.recursion_params_for(e1, cfg.problem.lam, rule.theta, rule.nu, cfg.step.K, M)
        rho = analysis.rho(e1, cfg.problem.lam, rule.theta, rule.nu, cfg.step.K, M)
        seq = analysis.recursion_iterate(params, N)
        bound_curve = rho / (np.arange(1, N + 1) + rule.nu)
        consts.update({"theta": rule.theta, "nu": rule.nu, "K": cfg.step.K, "rho": rho,
                       "certificate_violations": int(np.sum(seq > bound_curve * (1 + 1e-12)))})
    for n in range(1, N + 1):
        h = opt.mesh_bound(sched, rule, n)
        level = max(0, math.ceil(math.log2(math.sqrt(0.5) / h))) if h < math.sqrt(0.5) else 0
        row = {"n": n, "t_n": opt.step_size(rule, n), "h_bound": h, "required_level": level}
        if bound_curve is not None:
            row.update({"recursion_e_sq": seq[n - 1], "rho_bound": bound_curve[n - 1]})
        rows.append(row)
    header = ["n", "t_n", "h_bound", "required_level"] + (["recursion_e_sq", "rho_bound"] if bound_curve is not None else [])
    write_csv(_out(cfg) / "theory.csv", header, rows)
    write_csv(_out(cfg) / "theory_constants.csv", ("key", "value"), consts.items())
    return {"rows": rows, "constants": consts}


def fields_report(cfg: ExperimentConfig, n_samples: int = 10_000) -> dict:
    """Eigenvalue ordering and coefficient bounds for every field family."""
    rows = []
    rng = np.random.default_rng(derive_seed(cfg.run.seed, 8))
    for name, spec in (("example1", rf.kl_example1()), ("example2", rf.kl_example2()),
                       ("example3", rf.example3()), ("example3-modified", rf.example3_modified())):
        lo, hi = rf.certify_bounds(spec, n_samples=n_samples, rng=rng)
        ev = spec.eigenvalues
        rows.append({"family": name, "m": spec.m, "p": spec.p,
                     "eigen_descending": int(np.all(np.diff(ev) <= 0)),
                     "a_min": spec.a_min, "a_max": spec.a_max,
                     "a_min_empirical": lo, "a_max_empirical": hi})
    spec2 = rf.kl_example2()
    w = spec2.omegas[0]
    resid = float(np.max(np.abs(rf.root_residuals(w, spec2.params["l1"]))))
    write_csv(_out(cfg) / "fields.csv", ("family", "m", "p", "eigen_descending", "a_min", "a_max",
                                         "a_min_empirical", "a_max_empirical"), rows)
    write_csv(_out(cfg) / "fields_roots.csv", ("index", "omega", "kind", "eigenvalue_1d"),
              [{"index": i + 1, "omega": float(x), "kind": "cos" if i % 2 == 0 else "sin",
                "eigenvalue_1d": float(v)}
               for i, (x, v) in enumerate(zip(w, rf.eigenvalues_1d(w, spec2.params["l1"])))])
    return {"rows": rows, "max_root_residual": resid}
