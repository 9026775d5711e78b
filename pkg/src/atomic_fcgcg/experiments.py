"""Config-driven experiments: validation, problem assembly, runs and reports.

A config is a JSON object validated against :data:`SCHEMA` before anything is
computed.  All randomness comes from ``data_seed``, which is derived from the
config's ``seed`` and ``experiment_id`` and written to every report.

Output directory of a run::

    telemetry.csv     k, objective, residual, active_size, insertion_value, wall_ms
    diagnostics.csv   k, exact_objective, pinning, subproblem_tol
    atoms.csv         final active set (problem-specific columns)
    spikes.csv        heat only: x, y, coefficient
    config.json       resolved config, including data_seed
    report.json       verification report
    plot.gp           gnuplot script; convergence.png when matplotlib is present
"""
from __future__ import annotations

import copy
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import telemetry
from .baseline import BaselineConfig, default_M0, solve_gcg
from .core import (
    ActiveIterate,
    SolverConfig,
    SolverError,
    Termination,
    solve,
    with_reference,
)
from .diagnostics import (
    InsufficientData,
    fit_linear_rate,
    noise_floor,
    report_json,
    sublinear_bound_check,
    surrogate_ratios,
    verify_active_pinning,
    verify_first_order,
    verify_monotone,
    verify_residual_dominance,
)
from .heat import (
    BoundaryTooClose,
    HeatGrid,
    HeatProblem,
    check_nondegeneracy,
    make_dataset,
    nodal_gradient,
    quadratic_growth_margin,
)
from .mineffort import (
    EffortInstance,
    EffortProblem,
    binariness_check,
    e2_sweep,
    make_operator,
    synthetic_instance,
    two_cell_instance,
)
from .plotting import IoError, emit_plot_script, have_matplotlib, render_figures
from .trace import TraceProblem, growth_probe, planted_instance, spectral_gap_check

log = logging.getLogger("atomic_fcgcg")

SHIPPED = ("heat_414", "trace_d1", "mineffort_two_cell", "mineffort_gaussian")

# tolerances of the verification report
MONOTONE_TOL = 1e-10
FIRST_ORDER_TOL = 1e-6
PINNING_FACTOR = 10.0
DOMINANCE_TOL = 1e-12


class ConfigInvalid(ValueError):
    pass


_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "atomic_fcgcg experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment_id", "problem", "solver"],
    "properties": {
        "experiment_id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "problem": {"enum": ["heat", "trace", "mineffort"]},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "heat": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 3},
                "dt": _pos,
                "T": _pos,
                "beta": _pos,
                "noise_rel": _nonneg,
                "spikes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["position", "coefficient"],
                        "properties": {
                            "position": {
                                "type": "array",
                                "minItems": 2,
                                "maxItems": 2,
                                "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                            },
                            "coefficient": {"type": "number"},
                        },
                    },
                },
                "nondegeneracy_radius": _count,
                "gamma_min": _pos,
            },
        },
        "trace": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": _count,
                "m": _count,
                "beta": _pos,
                "ensemble": {"enum": ["gaussian", "rank_one"]},
                "amplitude": _pos,
                "noise_rel": _nonneg,
                "growth_samples": _count,
            },
        },
        "mineffort": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["two_cell", "identity", "gaussian", "smoothing"]},
                "n": _count,
                "m": _count,
                "alpha": _pos,
                "noise_rel": _nonneg,
                "width": _pos,
                "eps": _pos,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iter": _count,
                "stop_tol": _pos,
                "prune_tol": _pos,
                "subproblem_tol": _pos,
            },
        },
        "reference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"max_iter": _count, "stop_tol": _pos},
        },
        "baseline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M0": {"oneOf": [_pos, {"const": "auto"}]},
                "stepsize_rule": {"enum": ["exact", "harmonic"]},
                "max_iter": _count,
            },
        },
    },
    "allOf": [
        {"if": {"properties": {"problem": {"const": p}}}, "then": {"required": [p]}}
        for p in ("heat", "trace", "mineffort")
    ],
}

DEFAULTS = {
    "heat": {
        "n": 127, "dt": 1e-3, "T": 0.1, "beta": 1e-3, "noise_rel": 0.1,
        "spikes": [{"position": [0.75, 0.75], "coefficient": 25.0},
                   {"position": [0.25, 0.25], "coefficient": -10.0}],
        "nondegeneracy_radius": 6, "gamma_min": 1e-6,
    },
    "trace": {"n": 16, "m": 128, "beta": 0.05, "ensemble": "gaussian", "amplitude": 1.0,
              "noise_rel": 0.0, "growth_samples": 1000},
    "mineffort": {"kind": "gaussian", "n": 64, "m": 8, "alpha": 0.1, "noise_rel": 0.05,
                  "width": 0.05, "eps": 1e-3},
    "solver": {"max_iter": 100, "stop_tol": 1e-9, "prune_tol": 1e-12, "subproblem_tol": 1e-12},
    "reference": {"max_iter": 100, "stop_tol": 1e-14},
    "baseline": {"M0": "auto", "stepsize_rule": "exact", "max_iter": 100},
}


def shipped_config(name: str) -> dict:
    """One of the configs in :data:`SHIPPED`, parsed."""
    if name not in SHIPPED:
        raise KeyError(name)
    text = resources.files("atomic_fcgcg").joinpath("configs", name + ".json").read_text()
    return json.loads(text)


def data_seed(seed: int, experiment_id: str) -> int:
    """Seed for all random draws of an experiment, scoped by its id."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(experiment_id.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def resolve(config: dict, seed: Optional[int] = None) -> dict:
    """Validate ``config`` and fill in defaults; ``seed`` overrides the config's.

    Raises
    ------
    ConfigInvalid
        Schema violation or inconsistent values.
    """
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigInvalid(f"{where}: {exc.message}") from None
    prob = config["problem"]
    stray = [p for p in ("heat", "trace", "mineffort") if p != prob and p in config]
    if stray:
        raise ConfigInvalid(f"parameter block {stray[0]!r} does not match problem {prob!r}")
    out = copy.deepcopy(config)
    for block in (prob, "solver", "reference", "baseline"):
        if block == "baseline" and block not in config:
            continue
        out[block] = {**DEFAULTS[block], **config.get(block, {})}
    if seed is not None:
        if seed < 0:
            raise ConfigInvalid("seed must be nonnegative")
        out["seed"] = int(seed)
    out.setdefault("seed", 0)
    out.setdefault("output_dir", str(Path("runs") / out["experiment_id"]))
    out["data_seed"] = data_seed(out["seed"], out["experiment_id"])
    if prob == "heat":
        p = out["heat"]
        steps = p["T"] / p["dt"]
        if abs(steps - round(steps)) > 1e-12 * max(1.0, steps):
            raise ConfigInvalid(f"heat: T/dt = {steps} is not an integer")
    if prob == "mineffort" and out["mineffort"]["kind"] == "identity":
        out["mineffort"]["m"] = out["mineffort"]["n"]
    return out


def load_config(path, seed: Optional[int] = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: not valid JSON ({exc})") from None
    return resolve(raw, seed)


def solver_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(max_iter=s["max_iter"], stop_tol=s["stop_tol"], prune_tol=s["prune_tol"],
                        subproblem_tol=s["subproblem_tol"], rng_seed=cfg["data_seed"])


@dataclass
class Built:
    problem: object
    context: dict = field(default_factory=dict)


def build(cfg: dict) -> Built:
    """Assemble the problem described by a resolved config."""
    prob, seed = cfg["problem"], cfg["data_seed"]
    p = cfg[prob]
    if prob == "heat":
        grid = HeatGrid(p["n"], p["dt"], p["T"])
        truth = [(s["position"], s["coefficient"]) for s in p["spikes"]]
        data = make_dataset(truth, p["noise_rel"], seed, grid)
        return Built(HeatProblem(grid, data.y_d, p["beta"]), {"dataset": data})
    if prob == "trace":
        inst = planted_instance(p["n"], p["m"], seed, p["beta"], ensemble=p["ensemble"],
                                amplitude=p["amplitude"], noise_rel=p["noise_rel"])
        return Built(TraceProblem(inst), {"instance": inst})
    if p["kind"] == "two_cell":
        inst = two_cell_instance()
    elif p["kind"] == "identity":
        inst = EffortInstance(make_operator("identity", p["n"]), p["alpha"],
                              synthetic_instance(p["n"], "identity", p["alpha"], seed,
                                                 noise_rel=p["noise_rel"]).y_d,
                              np.full(p["n"], 1.0 / p["n"]))
    else:
        inst = synthetic_instance(p["n"], p["kind"], p["alpha"], seed, m=p["m"], noise_rel=p["noise_rel"])
    return Built(EffortProblem(inst), {"instance": inst})


@dataclass
class RunData:
    """In-memory outcome of one FC-GCG experiment."""

    cfg: dict
    built: Built
    iterate: ActiveIterate
    records: list
    termination: Optional[Termination]
    error: Optional[str]
    reference: float
    reference_records: list
    trajectory: list = field(repr=False, default_factory=list)

    @property
    def problem(self):
        return self.built.problem


def _progress(quiet):
    def cb(res):
        if not quiet:
            st = res.state
            log.info("k=%d  active=%d  insertion=%.12g%s", st.k, len(st.iterate), res.insertion_value,
                     f"  -> {res.termination.value}" if res.termination else "")
    return cb


def reference_objective(problem, iterate: ActiveIterate, records, cfg: dict):
    """Refine the final iterate with a much tighter stopping test.

    Returns ``(J_star, reference_records)`` with ``J_star`` the smallest
    objective seen in either run.
    """
    ref = cfg["reference"]
    sc = solver_config(cfg)
    rcfg = SolverConfig(max_iter=ref["max_iter"], stop_tol=ref["stop_tol"], prune_tol=sc.prune_tol,
                        subproblem_tol=sc.subproblem_tol, rng_seed=sc.rng_seed)
    ws = iterate if len(iterate) and np.all(iterate.weights > 0) else None
    try:
        rrecs = solve(problem, rcfg, warm_start=ws).records
    except SolverError as exc:
        # the refinement may exhaust double precision; what it reached still counts
        rrecs = exc.records
    J = min(r.objective for r in list(records) + list(rrecs))
    return float(J), rrecs


def execute(cfg: dict, quiet: bool = True) -> RunData:
    built = build(cfg)
    problem = built.problem
    trajectory = []
    prev = [ActiveIterate()]
    progress = _progress(quiet)

    def cb(res):
        # the candidate was computed at the iterate before this step
        trajectory.append((prev[0], res.candidate, None))
        prev[0] = res.state.iterate
        progress(res)

    error = None
    try:
        result = solve(problem, solver_config(cfg), callback=cb)
        iterate, records, term = result
    except SolverError as exc:
        iterate, records, term = exc.iterate or ActiveIterate(), exc.records, None
        error = f"{type(exc).__name__}: {exc}"
    if records:
        trajectory = [(it, cand, rec.objective) for (it, cand, _), rec in zip(trajectory, records)]
        J, rrecs = reference_objective(problem, iterate, records, cfg)
    else:
        J, rrecs = float("nan"), []
    return RunData(cfg, built, iterate, with_reference(records, J) if records else [], term, error,
                   J, rrecs, trajectory)


# ----------------------------------------------------------------------------
# reports


def _rate(residuals, reference):
    try:
        return fit_linear_rate(residuals, floor=noise_floor(reference))
    except InsufficientData as exc:
        return {"error": str(exc)}


def _pinning_summary(records):
    ratios = [r.pinning / r.subproblem_tol for r in records
              if math.isfinite(r.pinning) and math.isfinite(r.subproblem_tol) and r.subproblem_tol > 0]
    worst = max(ratios) if ratios else 0.0
    return {"checked": len(ratios), "max_pinning_over_tol": worst, "factor": PINNING_FACTOR,
            "passed": worst <= PINNING_FACTOR}


def generic_report(records, reference: float) -> dict:
    """Checks that need only the telemetry (and diagnostics) rows."""
    objs = [r.objective for r in records]
    exact = [r.exact_objective for r in records]
    res = [r.objective - reference for r in records]
    out = {
        "iterations": records[-1].k if records else 0,
        "reference_objective": reference,
        "final_objective": objs[-1] if objs else None,
        "final_residual": res[-1] if res else None,
        "max_active_size": max((r.active_size for r in records), default=0),
        "monotone": {"tol": MONOTONE_TOL, "measure": verify_monotone(objs, MONOTONE_TOL),
                     "exact": verify_monotone(exact, MONOTONE_TOL)} if objs else None,
        "pinning": _pinning_summary(records),
        "rate_fit": _rate(res, reference),
    }
    if all(math.isfinite(x) for x in exact) and exact:
        out["dominance"] = verify_residual_dominance(exact, objs, reference, DOMINANCE_TOL)
    try:
        out["sublinear_c_hat"] = sublinear_bound_check([max(r, 0.0) for r in res])
    except ValueError:
        out["sublinear_c_hat"] = None
    return out


def heat_report(problem: HeatProblem, iterate: ActiveIterate, cfg: dict, trajectory=()) -> dict:
    p = cfg["heat"]
    grid, beta = problem.grid, problem.beta
    dual = problem.dual_from_gradient(problem.loss_grad(iterate.observation(problem.observation_dim)))
    z = dual.z
    nodes = sorted({a.payload.node for a in iterate.atoms})
    zmax = float(np.abs(z).max())
    active_min = min((abs(float(z[i])) for i in nodes), default=float("nan"))
    support = {
        "max_abs_z": zmax,
        "min_abs_z_active": active_min,
        "beta": beta,
        "passed": bool(zmax <= beta * (1 + FIRST_ORDER_TOL)
                       and (not nodes or active_min >= beta * (1 - FIRST_ORDER_TOL))),
    }
    nondeg = []
    for node in nodes:
        entry = {"node": node, "position": grid.coords(node).tolist()}
        try:
            rep = check_nondegeneracy(z, node, grid, p["nondegeneracy_radius"], p["gamma_min"])
            margin = corrected = float("nan")
            if rep.gamma > 0:
                margin = quadratic_growth_margin(z, beta, node, rep.gamma, rep.growth_radius, grid)
                corrected = quadratic_growth_margin(z, beta, node, rep.gamma, rep.growth_radius, grid,
                                                    gradient=nodal_gradient(z, node, grid))
            entry.update(report=rep, growth_margin=margin, growth_margin_corrected=corrected,
                         growth_passed=bool(margin >= -FIRST_ORDER_TOL * beta))
        except BoundaryTooClose as exc:
            entry.update(error=str(exc))
        nondeg.append(entry)
    h = grid.h
    spikes = problem.spikes(iterate)
    matches = []
    for s in p["spikes"]:
        pos = np.asarray(s["position"])
        if spikes:
            d = [float(np.linalg.norm(np.array(sp_[:2]) - pos)) for sp_ in spikes]
            j = int(np.argmin(d))
            same = math.copysign(1, spikes[j][2]) == math.copysign(1, s["coefficient"])
            matches.append({"truth": s, "nearest": spikes[j], "distance": d[j],
                            "distance_over_h": d[j] / h, "sign_match": bool(same)})
    out = {"h": h, "spikes": spikes, "support": support, "nondegeneracy": nondeg, "truth_match": matches}
    if trajectory and len(iterate):
        out["surrogate"] = surrogate_ratios(problem, trajectory, iterate.atoms, problem.atom_distance,
                                            radius=0.1, reference=trajectory[-1][2])
    return out


def trace_report(problem: TraceProblem, iterate: ActiveIterate, cfg: dict) -> dict:
    inst = problem.instance
    beta = problem.beta
    P = problem.dual_matrix(problem.loss_grad(iterate.observation(problem.observation_dim)))
    gap = spectral_gap_check(P, beta)
    comp = problem.compress(iterate)
    w = np.sort(comp.weights)[::-1]
    frac = float(w[0] / w.sum()) if w.size else 0.0
    out = {"raw_active_size": len(iterate), "compressed_active_size": len(comp),
           "dominant_fraction": frac, "spectral_gap": gap}
    if len(comp):
        h1 = comp.atoms[int(np.argmax(comp.weights))].payload.h
        kappa = (gap.sigma1 - gap.sigma2) * beta / 2 - 1e-6
        out["growth"] = growth_probe(P, h1, beta, cfg["trace"]["growth_samples"], seed=cfg["data_seed"],
                                     instance=inst, kappa_min=kappa)
        out["growth_kappa_min"] = kappa
        if inst.truth is not None:
            U = problem.matrix(iterate)
            out["relative_error_to_truth"] = float(np.linalg.norm(U - inst.truth) / np.linalg.norm(inst.truth))
    return out


def mineffort_report(problem: EffortProblem, iterate: ActiveIterate, cfg: dict) -> dict:
    inst = problem.instance
    p = cfg["mineffort"]
    u = problem.control(iterate)
    dual = problem.dual_from_gradient(problem.loss_grad(iterate.observation(problem.observation_dim)))
    pv = dual.p
    sweep = e2_sweep(pv, inst.cell_measure, max_zero_cells=inst.K.shape[0])
    out = {"control": u, "dual": pv, "e2": sweep,
           "binariness": binariness_check(u, pv, p["eps"], tol=1e-6)}
    if p["kind"] == "two_cell":
        out["closed_form_error"] = float(np.abs(u - np.array([1.5, -1.5])).max())
    return out


def problem_report(run: RunData) -> dict:
    prob = run.cfg["problem"]
    if not len(run.iterate) and prob != "mineffort":
        return {}
    if prob == "heat":
        return heat_report(run.problem, run.iterate, run.cfg, run.trajectory)
    if prob == "trace":
        return trace_report(run.problem, run.iterate, run.cfg)
    return mineffort_report(run.problem, run.iterate, run.cfg)


def full_report(run: RunData) -> dict:
    rep = {
        "experiment_id": run.cfg["experiment_id"],
        "problem": run.cfg["problem"],
        "seed": run.cfg["seed"],
        "data_seed": run.cfg["data_seed"],
        "termination": run.termination.value if run.termination else None,
        "error": run.error,
    }
    if run.records:
        rep.update(generic_report(run.records, run.reference))
        rep["first_order"] = verify_first_order(run.iterate, run.problem, FIRST_ORDER_TOL)
        y = run.iterate.observation(run.problem.observation_dim)
        dual = run.problem.dual_from_gradient(run.problem.loss_grad(y))
        if len(run.iterate):
            rep["final_pinning"] = verify_active_pinning(
                dual, run.iterate, PINNING_FACTOR * max(run.records[-1].subproblem_tol, 0.0)
                if math.isfinite(run.records[-1].subproblem_tol) else PINNING_FACTOR)
        rep["reference_run"] = {"iterations": len(run.reference_records) - 1 if run.reference_records else 0,
                                "stop_tol": run.cfg["reference"]["stop_tol"]}
        rep[run.cfg["problem"]] = problem_report(run)
    return rep


# ----------------------------------------------------------------------------
# writing


def _ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {path}: {exc}") from exc
    return path


def write_run(run: RunData, out_dir, plots: bool = True) -> dict:
    """Write all artifacts of ``run`` into ``out_dir``; returns the report."""
    out = _ensure_dir(out_dir)
    report = full_report(run)
    try:
        telemetry.write_telemetry(out / "telemetry.csv", run.records)
        telemetry.write_diagnostics(out / "diagnostics.csv", run.records)
        telemetry.write_rows(out / "atoms.csv", run.problem.atom_header, run.problem.atom_rows(run.iterate))
        if run.cfg["problem"] == "heat":
            telemetry.write_rows(out / "spikes.csv", ("x", "y", "coefficient"), run.problem.spikes(run.iterate))
        (out / "config.json").write_text(json.dumps(run.cfg, indent=2, sort_keys=True) + "\n")
        (out / "report.json").write_text(report_json(report) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write run output to {out}: {exc}") from exc
    if plots:
        series = [(run.cfg["experiment_id"], out / "telemetry.csv")]
        emit_plot_script(series, out / "plot.gp", title=run.cfg["experiment_id"])
        if have_matplotlib():
            render_figures(series, out / "convergence.png", title=run.cfg["experiment_id"])
    return report


def exit_code(termination: Optional[Termination]) -> int:
    if termination in (Termination.OPTIMAL, Termination.REINSERTION_OPTIMAL):
        return 0
    if termination is Termination.MAX_ITER:
        return 2
    return 3


def run_config(cfg: dict, out_dir=None, quiet: bool = True, plots: bool = True):
    """Execute and write one experiment; returns ``(exit_code, report)``."""
    out_dir = Path(out_dir if out_dir is not None else cfg["output_dir"])
    _ensure_dir(out_dir)
    run = execute(cfg, quiet=quiet)
    report = write_run(run, out_dir, plots=plots)
    return exit_code(run.termination), report


def baseline_config(cfg: dict, problem) -> BaselineConfig:
    b = cfg["baseline"]
    M0 = default_M0(problem) if b["M0"] == "auto" else float(b["M0"])
    return BaselineConfig(M0=M0, stepsize_rule=b["stepsize_rule"], max_iter=b["max_iter"],
                          rng_seed=cfg["data_seed"])


COMPARE_COLUMNS = ("k", "fcgcg_objective", "fcgcg_residual", "fcgcg_active_size", "fcgcg_wall_ms",
                   "gcg_objective", "gcg_residual", "gcg_active_size", "gcg_wall_ms")


def compare_config(cfg: dict, out_dir=None, quiet: bool = True, plots: bool = True):
    """Run FC-GCG and the plain GCG baseline on the same problem instance.

    Writes ``fcgcg/`` (a full run directory), ``gcg/`` (telemetry, atoms),
    ``compare.csv``, ``wallclock.csv`` and ``summary.json``.  Residuals of
    both methods are taken against the smallest objective either reached.
    """
    if "baseline" not in cfg:
        raise ConfigInvalid("compare needs a baseline block")
    out = _ensure_dir(out_dir if out_dir is not None else cfg["output_dir"])
    run = execute(cfg, quiet=quiet)
    problem = run.problem
    bcfg = baseline_config(cfg, problem)
    try:
        g_it, g_recs, _ = solve_gcg(problem, bcfg)
        g_err = None
    except SolverError as exc:
        g_it, g_recs, g_err = ActiveIterate(), exc.records, f"{type(exc).__name__}: {exc}"
    objs = [r.objective for r in run.records] + [r.objective for r in g_recs]
    J = min([run.reference] + objs) if objs else float("nan")
    run.reference = J
    run.records = with_reference(run.records, J)
    g_recs = with_reference(g_recs, J)
    fc_report = write_run(run, out / "fcgcg", plots=False)
    gdir = _ensure_dir(out / "gcg")
    try:
        telemetry.write_telemetry(gdir / "telemetry.csv", g_recs)
        telemetry.write_diagnostics(gdir / "diagnostics.csv", g_recs)
        telemetry.write_rows(gdir / "atoms.csv", problem.atom_header, problem.atom_rows(g_it))
        rows = []
        by_k_fc = {r.k: r for r in run.records}
        by_k_g = {r.k: r for r in g_recs}
        for k in range(max(list(by_k_fc) + list(by_k_g), default=-1) + 1):
            a, b = by_k_fc.get(k), by_k_g.get(k)
            rows.append((k,
                         *(a and (a.objective, a.residual, a.active_size, a.wall_ms) or (None,) * 4),
                         *(b and (b.objective, b.residual, b.active_size, b.wall_ms) or (None,) * 4)))
        telemetry.write_rows(out / "compare.csv", COMPARE_COLUMNS, rows)
        wall = [("fcgcg", r.k, r.wall_ms, r.residual) for r in run.records] + \
               [("gcg", r.k, r.wall_ms, r.residual) for r in g_recs]
        telemetry.write_rows(out / "wallclock.csv", ("solver", "k", "wall_ms", "residual"), wall)
        summary = {
            "experiment_id": cfg["experiment_id"],
            "seed": cfg["seed"],
            "data_seed": cfg["data_seed"],
            "reference_objective": J,
            "fcgcg": {"termination": run.termination.value if run.termination else None,
                      "error": run.error,
                      "iterations": run.records[-1].k if run.records else 0,
                      "final_residual": run.records[-1].residual if run.records else None,
                      "rate_fit": _rate([r.residual for r in run.records], J)},
            "gcg": {"M0": bcfg.M0, "stepsize_rule": bcfg.stepsize_rule, "error": g_err,
                    "iterations": g_recs[-1].k if g_recs else 0,
                    "final_residual": g_recs[-1].residual if g_recs else None,
                    "active_size": [r.active_size for r in g_recs],
                    "rate_fit": _rate([r.residual for r in g_recs], J)},
            "residual_vs_wallclock": [{"solver": s, "k": k, "wall_ms": t, "residual": r} for s, k, t, r in wall],
        }
        (out / "summary.json").write_text(report_json(summary) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write comparison output to {out}: {exc}") from exc
    if plots:
        series = [("FC-GCG", out / "fcgcg" / "telemetry.csv"), ("GCG", gdir / "telemetry.csv")]
        emit_plot_script(series, out / "plot.gp", title=cfg["experiment_id"])
        if have_matplotlib():
            render_figures(series, out / "convergence.png", title=cfg["experiment_id"])
    summary["fcgcg_report"] = fc_report
    return exit_code(run.termination), summary


# ----------------------------------------------------------------------------
# offline verification


def verify_directory(out_dir) -> tuple:
    """Re-check an archived run from its CSV files.

    Uses ``telemetry.csv`` and ``diagnostics.csv`` for the monotonicity,
    pinning and dominance checks.  When ``config.json`` and ``atoms.csv`` are
    present, the problem is rebuilt and first-order optimality of the stored
    active set is re-verified.  A comparison directory is accepted too; its
    ``fcgcg`` subdirectory is checked.

    Returns ``(passed, report)``.
    """
    d = Path(out_dir)
    if not (d / "telemetry.csv").is_file() and (d / "fcgcg" / "telemetry.csv").is_file():
        d = d / "fcgcg"
    tel = d / "telemetry.csv"
    if not tel.is_file():
        raise IoError(f"no telemetry.csv in {out_dir}")
    try:
        records = telemetry.read_records(tel, d / "diagnostics.csv")
    except (OSError, ValueError, KeyError) as exc:
        raise IoError(f"cannot read {tel}: {exc}") from exc
    if not records:
        raise IoError(f"{tel} has no rows")
    ref = None
    if all(r.residual is not None for r in records):
        refs = [r.objective - r.residual for r in records]
        ref = float(np.median(refs))
    rep = {"directory": str(d)}
    checks = []
    if ref is not None:
        g = generic_report(records, ref)
        rep.update(g)
        checks += [g["monotone"]["measure"], g["pinning"]["passed"]]
        if "dominance" in g:
            checks.append(g["dominance"].dominance and g["dominance"].equality)
    else:
        rep["monotone"] = verify_monotone([r.objective for r in records], MONOTONE_TOL)
        checks.append(rep["monotone"])
    cfg_path, atoms_path = d / "config.json", d / "atoms.csv"
    if cfg_path.is_file() and atoms_path.is_file():
        try:
            cfg = json.loads(cfg_path.read_text())
            stored_seed = cfg.pop("data_seed", None)
            cfg = resolve(cfg)
        except (OSError, json.JSONDecodeError) as exc:
            raise IoError(f"cannot read {cfg_path}: {exc}") from exc
        if stored_seed is not None and stored_seed != cfg["data_seed"]:
            raise ConfigInvalid("data_seed in config.json does not match seed and experiment_id")
        problem = build(cfg).problem
        _, rows = telemetry.read_rows(atoms_path)
        iterate = problem.iterate_from_rows(rows)
        fo = verify_first_order(iterate, problem, FIRST_ORDER_TOL)
        rep["first_order"] = fo
        checks.append(fo.passed)
        if ref is not None:
            from .core import objective
            J = objective(iterate, problem)
            rep["atoms_objective"] = J
            rep["atoms_match_telemetry"] = bool(abs(J - records[-1].objective) <= 1e-9 * (1 + abs(J)))
            checks.append(rep["atoms_match_telemetry"])
    ok = bool(all(checks))
    rep["passed"] = ok
    return ok, rep
