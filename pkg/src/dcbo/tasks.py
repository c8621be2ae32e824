"""Experiment tasks and their on-disk artifacts.

Every task writes into its own output directory.  CSV floats use ``%.17g``;
JSON floats use Python's shortest round-trip ``repr``.  No timestamps or
host data are written, so identical configs give identical bytes.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .certificates import (
    check_theorem_3_2,
    check_theorem_A1,
    empirical_error,
    laplace_estimate,
    laplace_quadrature,
    sample_initial,
)
from .config import ExperimentConfig, render
from .dynamics import RunConfig, RunTrace, replay_check, run_batch
from .ensemble import Ensemble, diameters
from .exceptions import UsageError
from .noise import SchemeKind, decay_rate, make_scheme
from .stability import check_stability, moment_table, stability_boundary_modelA

__all__ = ["SCHEMA_VERSION", "trace_columns", "run_task", "verify_replay", "write_csv",
           "write_json", "read_csv"]

SCHEMA_VERSION = 1
REPLAY_TOL = 1e-10


def trace_columns(d: int) -> List[str]:
    return (["step", "diameter", "spread"] + [f"mean_{l}" for l in range(1, d + 1)]
            + [f"consensus_{l}" for l in range(1, d + 1)])


# -- serialization ----------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def write_csv(path: Path, header: Sequence[str], rows) -> Dict[str, object]:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return {"schema_version": SCHEMA_VERSION, "columns": list(header)}


_BOOL_CELLS = {"true": 1.0, "false": 0.0}


def read_csv(path: Path):
    """Numeric CSV artifact as ``(header, rows)``; boolean cells read as 1/0."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = text[0].split(",")
    rows = np.array([[_BOOL_CELLS[c] if c in _BOOL_CELLS else float(c)
                      for c in line.split(",")] for line in text[1:]], dtype=float)
    return header, rows.reshape(len(text) - 1, len(header))


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def write_json(path: Path, payload: dict):
    body = {"schema_version": SCHEMA_VERSION}
    body.update(_plain(payload))
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n",
                          encoding="utf-8", newline="\n")


# -- tasks ------------------------------------------------------------------

def _header(cfg: ExperimentConfig) -> dict:
    return {
        "task": cfg.task,
        "seed": cfg.seed,
        "scheme": cfg.build_scheme().describe(),
        "objective": cfg.build_objective().spec,
        "initial_law": cfg.build_law().describe(),
        "warnings": list(cfg.warnings),
    }


def _task_run(cfg: ExperimentConfig, out: Path) -> int:
    obj, law = cfg.build_objective(), cfg.build_law()
    rc = RunConfig(cfg.beta, cfg.build_scheme(), cfg.max_steps, cfg.consensus_tol,
                   cfg.record_noise, cfg.seed)
    init = np.stack([sample_initial(law, cfg.n_particles, cfg.seed, r)
                     for r in range(cfg.replicas)])
    # Only replica 0 keeps its trace; the rest are identical with or without it.
    results = run_batch(init[:1], obj, rc, [0], keep_trace=True)
    if cfg.replicas > 1:
        results += run_batch(init[1:], obj, rc, range(1, cfg.replicas), workers=cfg.workers,
                             keep_trace=False)
    first = results[0]
    d = cfg.dim
    artifacts = {}
    tr = first.trace
    rows = [[k, tr.diameter[k], tr.spread[k], *tr.mean[k], *tr.consensus[k]]
            for k in range(len(tr.diameter))]
    artifacts["trace.csv"] = write_csv(out / "trace.csv", trace_columns(d), rows)
    artifacts["initial.csv"] = write_csv(out / "initial.csv",
                                         [f"x_{l}" for l in range(1, d + 1)], init[0])
    if cfg.record_noise:
        artifacts["noise.csv"] = write_csv(
            out / "noise.csv", ["step"] + [f"eta_{l}" for l in range(1, d + 1)],
            [[k, *tr.noise[k]] for k in range(len(tr.noise))])

    def record(res):
        return {
            "replica": res.replica,
            "limit_point": res.limit_point,
            "steps": res.steps_taken,
            "consensus_reached": res.consensus_reached,
            "L_limit_point": float(obj(res.limit_point)),
            "final_diameter": float(diameters(res.final.positions)),
        }

    summary = dict(_header(cfg), **record(first))
    summary["artifacts"] = artifacts
    if cfg.replicas > 1:
        summary["replicas"] = [record(r) for r in results]
        summary["consensus_count"] = sum(r.consensus_reached for r in results)
    write_json(out / "summary.json", summary)
    return 0


def _task_stability(cfg: ExperimentConfig, out: Path) -> int:
    kind = SchemeKind.parse(cfg.model)
    if kind is SchemeKind.GENERIC:
        raise UsageError("the stability task sweeps (lambda, h) and needs ModelA/B/C")
    lams = np.linspace(cfg.lambda_min, cfg.lambda_max, cfg.grid_points)
    hs = np.linspace(cfg.h_min, cfg.h_max, cfg.grid_points)
    rows, boundary = [], []
    dh = hs[1] - hs[0]
    worst = 0.0
    for lam in lams:
        stable = []
        for h in hs:
            s = make_scheme(kind, lam, cfg.sigma, h)
            rep = check_stability(s)
            stable.append(rep.l2_consensus)
            rows.append([float(lam), float(h), s.gamma, s.zeta, rep.rate, rep.l2_consensus])
        idx = [k for k in range(1, len(hs)) if stable[k - 1] and not stable[k]]
        crossing = float(hs[idx[0]]) if idx else float("nan")
        predicted = stability_boundary_modelA(lam, cfg.sigma) if kind is SchemeKind.MODEL_A \
            else float("nan")
        if kind is SchemeKind.MODEL_A and cfg.h_min < predicted < cfg.h_max:
            worst = max(worst, abs(crossing - predicted) / dh)
        boundary.append([float(lam), predicted, crossing])
    artifacts = {
        "stability.csv": write_csv(out / "stability.csv",
                                   ["lambda", "h", "gamma", "zeta", "rate", "l2_stable"], rows),
        "boundary.csv": write_csv(out / "boundary.csv",
                                  ["lambda", "predicted_h", "first_unstable_grid_h"], boundary),
    }
    summary = dict(_header(cfg), sigma=cfg.sigma, grid_points=cfg.grid_points,
                   h_spacing=float(dh), artifacts=artifacts)
    if kind is SchemeKind.MODEL_A:
        summary["max_boundary_offset_in_grid_steps"] = worst
        summary["boundary_within_grid_resolution"] = bool(worst <= 1.0)
    write_json(out / "summary.json", summary)
    return 0


def _task_moments(cfg: ExperimentConfig, out: Path) -> int:
    scheme = cfg.build_scheme()
    table = moment_table(scheme, cfg.replicas, cfg.steps, cfg.seed, cfg.beta)
    cols = table.columns()
    header = list(cols)
    rows = [[int(cols["n"][k])] + [cols[c][k] for c in header[1:]] for k in range(len(table.n))]
    z1, z2 = table.zscores()
    artifacts = {"moments.csv": write_csv(out / "moments.csv", header, rows)}
    write_json(out / "moments.json", dict(
        _header(cfg), replicas=cfg.replicas, steps=cfg.steps,
        max_abs_z_E_diff=float(np.max(np.abs(z1))),
        max_abs_z_E_diff2=float(np.nanmax(np.abs(z2[1:]))) if len(z2) > 1 else 0.0,
        l2_factor=1.0 - decay_rate(scheme), artifacts=artifacts))
    return 0


def _task_laplace(cfg: ExperimentConfig, out: Path) -> int:
    obj, law = cfg.build_objective(), cfg.build_law()
    betas = cfg.betas or (cfg.beta,)
    d = cfg.dim
    l_star = float(obj(obj.minimizer)) if obj.minimizer is not None else float("nan")
    quad_ok = d == 1 and law.kind == "uniform_box"
    rows, records = [], []
    for b in betas:
        est = laplace_estimate(obj, law, b, cfg.samples, cfg.seed)
        quad = laplace_quadrature(obj, law, b) if quad_ok else float("nan")
        explicit = l_star + d / 2.0 * math.log(b) / b
        rows.append([b, est.value, est.stderr, est.ess, quad, est.value - explicit,
                     quad - explicit])
        records.append({"beta": b, "estimate": est.value, "stderr": est.stderr,
                        "ess": est.ess, "quadrature": quad,
                        "beta_times_residual": b * (quad - explicit) if quad_ok else None})
    artifacts = {"laplace.csv": write_csv(
        out / "laplace.csv",
        ["beta", "estimate", "stderr", "ess", "quadrature", "residual_mc", "residual_quadrature"],
        rows)}
    write_json(out / "laplace.json", dict(_header(cfg), samples=cfg.samples, estimates=records,
                                          artifacts=artifacts))
    return 0


def _task_certify(cfg: ExperimentConfig, out: Path) -> int:
    obj, law, scheme = cfg.build_objective(), cfg.build_law(), cfg.build_scheme()
    record = dict(_header(cfg), beta=cfg.beta, N=cfg.n_particles, replicas=cfg.replicas)
    t32 = check_theorem_3_2(obj, law, scheme, cfg.beta, cfg.epsilon, cfg.n_particles,
                            cfg.replicas, cfg.seed, cfg.samples)
    record["laplace_certificate"] = t32.as_dict()
    est = laplace_estimate(obj, law, cfg.beta, cfg.samples, cfg.seed)
    rows = [["well_preparedness", t32.well_preparedness, t32.well_preparedness_stderr],
            ["laplace_estimate", est.value, est.stderr]]
    if cfg.delta is not None:
        a1 = check_theorem_A1(obj, law, scheme, cfg.beta, cfg.epsilon, cfg.delta,
                              cfg.n_particles, cfg.replicas, cfg.seed, cfg.samples, cfg.variant)
        record["sup_certificate"] = dict(a1.as_dict(), variant=cfg.variant)
    if cfg.empirical:
        emp = empirical_error(obj, law, scheme, cfg.beta, cfg.n_particles, cfg.replicas,
                              cfg.max_steps, cfg.consensus_tol, cfg.seed, cfg.epsilon, cfg.delta,
                              cfg.workers)
        record["empirical"] = emp.as_dict()
        rows.append(["min_L_at_limit", emp.min_L_at_limit, float("nan")])
    record["artifacts"] = {"certificate.csv": write_csv(
        out / "certificate.csv", ["quantity", "value", "stderr"], rows)}
    write_json(out / "certificate.json", record)
    return 0


_SWEEP_KEYS = {"beta": "beta", "h": "h", "lambda": "lambda", "sigma": "sigma", "N": "N"}


def _task_sweep(cfg: ExperimentConfig, out: Path) -> int:
    points = cfg.sweep_points()
    axes = list(points[0])

    def one(k):
        values = {_SWEEP_KEYS[a]: (int(v) if a == "N" else v) for a, v in points[k].items()}
        values["task"] = cfg.sweep_task
        sub = cfg.with_values(values)
        name = f"point_{k:04d}"
        target = out / name
        target.mkdir(parents=True, exist_ok=True)
        (target / "config.txt").write_text(render(sub), encoding="utf-8", newline="\n")
        return name, TASK_RUNNERS[sub.task](sub, target)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            done = list(pool.map(one, range(len(points))))
    else:
        done = [one(k) for k in range(len(points))]
    rows = [[k, name, *[points[k][a] for a in axes], status]
            for k, (name, status) in enumerate(done)]
    artifacts = {"manifest.csv": write_csv(out / "manifest.csv",
                                           ["index", "dir", *axes, "status"], rows)}
    write_json(out / "manifest.json", dict(_header(cfg), sweep_task=cfg.sweep_task, axes=axes,
                                           points=[dict(p, dir=n, status=s) for p, (n, s)
                                                   in zip(points, done)],
                                           artifacts=artifacts))
    return max(s for _, s in done)


TASK_RUNNERS = {
    "run": _task_run,
    "stability": _task_stability,
    "moments": _task_moments,
    "laplace": _task_laplace,
    "certify": _task_certify,
    "sweep": _task_sweep,
}


def run_task(cfg: ExperimentConfig, out=None) -> int:
    """Run ``cfg.task`` writing artifacts under ``out`` (default ``cfg.out``); returns exit status."""
    target = Path(out if out is not None else cfg.out)
    target.mkdir(parents=True, exist_ok=True)
    (target / "config.txt").write_text(render(cfg), encoding="utf-8", newline="\n")
    return TASK_RUNNERS[cfg.task](cfg, target)


def verify_replay(out) -> dict:
    """Replay the run stored in ``out`` and compare with the product identity.

    Needs ``config.txt``, ``initial.csv`` and ``noise.csv`` from a ``run``
    task with ``record_noise = true``.
    """
    from .config import parse_config

    out = Path(out)
    noise_path = out / "noise.csv"
    if not noise_path.is_file():
        raise UsageError(f"{noise_path} is missing; rerun with record_noise = true")
    cfg = parse_config(str(out / "config.txt"))
    _, init = read_csv(out / "initial.csv")
    _, noise = read_csv(noise_path)
    rc = RunConfig(cfg.beta, cfg.build_scheme(), cfg.max_steps, cfg.consensus_tol, True, cfg.seed)
    initial = Ensemble(init)
    trace = RunTrace(np.empty(0), np.empty(0), np.empty(0), np.empty(0),
                     noise=noise[:, 1:].reshape(len(noise), cfg.dim))
    err = replay_check(trace, initial, cfg.build_objective(), rc)
    scale = max(1.0, float(diameters(initial.positions)))
    report = {"max_abs_error": err, "initial_diameter": float(diameters(initial.positions)),
              "tolerance": REPLAY_TOL * scale, "passed": err <= REPLAY_TOL * scale,
              "steps": len(noise)}
    write_json(out / "replay.json", report)
    return report
