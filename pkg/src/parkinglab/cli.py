"""Experiment runner: config in, deterministic CSV/JSON out.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure,
3 invariant-audit failure.  Result files are byte-identical across reruns
of the same (config, seed); wall-clock metadata lives only in the
manifest.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .realization import ModelParams, RealizationSource, TruncatedBox

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_AUDIT = 3


def _header_lines(cfg: ExperimentConfig) -> list[str]:
    mdl = cfg.to_dict()["model"]
    return [
        f"# parkinglab {__version__}",
        f"# kind = {cfg.kind}",
        f"# d = {mdl['d']}, p = {mdl['p']}, domain = {mdl['domain']}, size = {mdl['size']}",
        f"# seed = {mdl['seed']}, reps = {cfg.reps}",
        f"# t_grid = {' '.join(str(t) for t in cfg.t_grid)}",
    ]


def write_csv(cfg: ExperimentConfig, path: Path, columns: list[str], rows) -> None:
    with open(path, "w") as fh:
        for line in _header_lines(cfg):
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_json(cfg: ExperimentConfig, path: Path, payload: dict) -> None:
    body = {"version": __version__, "config": cfg.to_dict(), **payload}
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _curve_rows(curve):
    return [
        (t, float(q), float(se))
        for t, q, se in zip(curve.t_grid, curve.survival_hat, curve.stderr)
    ]


# ---------------------------------------------------------------------------
# experiment implementations: each returns (files, summary, audit_ok)


def _run_tail(cfg: ExperimentConfig, sigma: bool):
    from .estimators import FitInfeasibleError, fit_exponent, tail_curve_tau
    from .supercritical import tail_curve_sigma

    if sigma:
        curve = tail_curve_sigma(cfg.params.p, cfg.t_grid, cfg.reps, cfg.params.seed)
        target = 0.5
    else:
        curve = tail_curve_tau(cfg.params, cfg.t_grid, cfg.reps)
        target = cfg.params.d / (cfg.params.d + 2)
    files = {}
    files["curve.csv"] = (["t", "p_hat", "stderr"], _curve_rows(curve))
    summary = [f"{cfg.kind}: reps={cfg.reps} grid={list(cfg.t_grid)}"]
    fit_payload = {"target_exponent": target}
    try:
        fit = fit_exponent(curve)
        fit_payload.update(
            slope=fit.slope,
            intercept=fit.intercept,
            r_squared=fit.r_squared,
            fit_window=list(fit.fit_window),
            n_points=fit.n_points,
        )
        summary.append(
            f"fitted exponent {fit.slope:.4f} (target {target:.4f}), "
            f"r^2 = {fit.r_squared:.4f}, window {fit.fit_window}"
        )
    except FitInfeasibleError as exc:
        fit_payload.update(error=str(exc))
        summary.append(f"exponent fit infeasible: {exc}")
    return files, {"fit.json": fit_payload}, summary, True


def _run_duality(cfg: ExperimentConfig):
    from .estimators import duality_check

    rep = duality_check(cfg.params, cfg.t_grid[0], cfg.reps)
    ok = abs(rep.z) < 3.0
    payload = {
        "t": rep.t,
        "reps": rep.reps,
        "ev_hat": rep.ev_hat,
        "tail_sum": rep.tail_sum,
        "diff": rep.diff,
        "paired_se": rep.paired_se,
        "z": rep.z,
        "p_hat": rep.p_hat,
        "ev_stderr": rep.ev_stderr,
        "passed": ok,
    }
    summary = [
        f"duality: E V_t = {rep.ev_hat:.5f}, sum P(tau>=s) = {rep.tail_sum:.5f}, z = {rep.z:.3f}",
        f"audit {'PASS' if ok else 'FAIL'} (|z| < 3)",
    ]
    return {}, {"duality.json": payload}, summary, ok


def _run_total_visits(cfg: ExperimentConfig):
    from .estimators import total_visits_estimate

    est = total_visits_estimate(cfg.params, cfg.reps, cfg.options["t_max"])
    p = cfg.params.p
    payload = {
        "ev_hat": est.value,
        "stderr": est.stderr,
        "t_max": est.t_max,
        "reps": est.reps,
        "survival_at_horizon": est.survival_at_horizon,
        "tail_bound": est.tail_bound,
        "tail_negligible": est.tail_negligible,
        "lower_bound_p_plus_p2": p + p * p,
    }
    ok = est.value >= p + p * p - 3 * est.stderr
    payload["lower_bound_ok"] = ok
    summary = [
        f"total visits: {est.value:.6f} +/- {est.stderr:.6f}, tail <= {est.tail_bound:.3g}"
        + ("" if est.tail_negligible else " [TAIL NOT NEGLIGIBLE]"),
        f"E V >= p + p^2 - 3se: {'PASS' if ok else 'FAIL'}",
    ]
    return {}, {"total_visits.json": payload}, summary, ok


def _run_spectral_audit(cfg: ExperimentConfig):
    from .busy import enumerate_animals
    from .spectral import sandwich_check

    n_max = cfg.options["n_max"]
    reports = []
    failures = 0
    for h in enumerate_animals(cfg.params.d, n_max):
        for t in cfg.t_grid:
            rep = sandwich_check(h, t)
            reports.append(rep)
            failures += 0 if rep.passed else 1
    payload = {
        "n_max": n_max,
        "t_grid": list(cfg.t_grid),
        "checked": len(reports),
        "failures": failures,
    }
    files = {"sandwich.jsonl": [r.to_json() for r in reports]}
    summary = [f"spectral audit: {len(reports)} checks, {failures} failures"]
    return files, {"spectral_audit.json": payload}, summary, failures == 0


def _run_busy_audit(cfg: ExperimentConfig):
    from .busy import extract_certificate
    from .engine_fast import tail_values

    t = cfg.t_grid[-1] if cfg.t_grid else cfg.options.get("t_max", 30)
    want = cfg.options.get("conditioned", 1000)
    d, p, seed = cfg.params.d, cfg.params.p, cfg.params.seed
    taus = tail_values(d, p, seed, cfg.reps, t)
    hits = np.flatnonzero(taus > t)
    checked = 0
    for r in hits[:want]:
        src = RealizationSource(
            ModelParams(d=d, p=p, seed=seed ^ int(r), domain=TruncatedBox(2 * t))
        )
        extract_certificate(src, t)  # raises on any invariant violation
        checked += 1
    payload = {
        "t": t,
        "raw_replications": cfg.reps,
        "conditioned_found": int(hits.size),
        "certificates_checked": checked,
        "violations": 0,
    }
    summary = [f"busy audit: {checked} certificates checked, 0 violations"]
    return {}, {"busy_audit.json": payload}, summary, checked > 0


def _run_union_bound(cfg: ExperimentConfig):
    from .busy import union_bound_rhs
    from .engine_fast import tail_values

    p, d = cfg.params.p, cfg.params.d
    j_cap = cfg.options.get("j_cap", 12)
    t_max = max(cfg.t_grid)
    taus = tail_values(d, p, cfg.params.seed, cfg.reps, t_max)
    rows, table_rows, ok = [], [], True
    for t in cfg.t_grid:
        res = union_bound_rhs(p, d, t, j_cap)
        phat = float((taus > t).mean())
        se = math.sqrt(max(phat * (1 - phat), 1e-300) / cfg.reps)
        dominated = res.enumerated >= phat - 3 * se
        ok &= dominated
        rows.append((t, res.enumerated, res.tail_bound, phat, se, int(dominated)))
        if t == t_max:
            table_rows = [
                (r.j, r.count, r.bound_term, r.survival_max) for r in res.rows
            ]
    files = {
        "bound.csv": (["t", "enumerated_rhs", "tail_bound", "tau_phat", "stderr", "dominates"], rows),
        "animals.csv": (["j", "count", "bound_term", "survival_max"], table_rows),
    }
    payload = {"j_cap": j_cap, "dominates_everywhere": ok}
    summary = [f"union bound: dominance {'PASS' if ok else 'FAIL'} over t = {list(cfg.t_grid)}"]
    return files, {"union_bound.json": payload}, summary, ok


def _run_probe(cfg: ExperimentConfig):
    from .estimators import lower_bound_probe

    p, d = cfg.params.p, cfg.params.d
    rows, ok = [], True
    for t in cfg.t_grid:
        res = lower_bound_probe(p, d, t, cfg.reps, cfg.params.seed)
        se = math.sqrt(max(res.tau_survival_hat * (1 - res.tau_survival_hat), 1e-300) / cfg.reps)
        dominated = res.probe_hat <= res.tau_survival_hat + 3 * se
        ok &= dominated and res.implication_violations == 0
        rows.append(
            (t, res.m, res.probe_hat, res.all_cars_hat, res.confined_hat,
             res.tau_survival_hat, res.implication_violations)
        )
    files = {
        "probe.csv": (
            ["t", "M", "probe_hat", "all_cars_hat", "confined_hat", "tau_survival", "violations"],
            rows,
        )
    }
    summary = [f"lower-bound probe: {'PASS' if ok else 'FAIL'} over t = {list(cfg.t_grid)}"]
    return files, {"probe.json": {"passed": ok}}, summary, ok


def _run_d1_labels(cfg: ExperimentConfig):
    from .supercritical import (
        build_ledger,
        evolve_with_repairing,
        label_cars,
        pair_cars_spots,
    )

    w = cfg.options["window"]
    r_max = cfg.options.get("r_max", 32)
    t = cfg.t_grid[-1] if cfg.t_grid else 0
    seed = cfg.params.seed
    totals = {"transfers": 0, "repairs": 0, "thefts": 0, "leftward_violations": 0,
              "coincidences": 0, "labels": 0, "confident": 0}
    repair_lines = []
    for r in range(cfg.reps):
        src = RealizationSource(
            ModelParams(d=1, p=cfg.params.p, seed=seed ^ r, domain=cfg.params.domain)
        )
        ledger = build_ledger(src, w)
        labels = label_cars(ledger, r_max)
        totals["labels"] += len(labels.positions)
        totals["confident"] += sum(labels.confident)
        pairing = pair_cars_spots(src, labels)
        if t > 0:
            result = evolve_with_repairing(src, labels, pairing, t)
            totals["transfers"] += result.audit.transfers
            totals["repairs"] += result.audit.repairs
            totals["thefts"] += result.audit.thefts
            totals["leftward_violations"] += result.audit.leftward_violations
            totals["coincidences"] += result.audit.coincidences
            if r < 3:
                repair_lines.extend(ev.to_json() for ev in result.pairing.repair_log)
    ok = totals["leftward_violations"] == 0
    payload = {"window": w, "r_max": r_max, "t": t, "reps": cfg.reps, **totals, "passed": ok}
    summary = [
        f"d1 labels: {totals['labels']} labels over {cfg.reps} replications, "
        f"{totals['transfers']} transfers, {totals['leftward_violations']} leftward violations",
        f"audit {'PASS' if ok else 'FAIL'}",
    ]
    files = {"repair_log.jsonl": repair_lines}
    return files, {"d1_labels.json": payload}, summary, ok


RUNNERS = {
    "tau_tail": lambda cfg: _run_tail(cfg, sigma=False),
    "sigma_tail": lambda cfg: _run_tail(cfg, sigma=True),
    "duality": _run_duality,
    "total_visits": _run_total_visits,
    "spectral_audit": _run_spectral_audit,
    "busy_audit": _run_busy_audit,
    "union_bound": _run_union_bound,
    "lower_bound_probe": _run_probe,
    "d1_labels": _run_d1_labels,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment; writes result files and a manifest."""
    if cfg.workers > 0:
        import numba

        numba.set_num_threads(cfg.workers)
    if cfg.kind in ("tau_tail", "union_bound", "total_visits", "lower_bound_probe"):
        from .estimators import p0_threshold

        p0 = p0_threshold(cfg.params.d)
        if cfg.params.p >= p0:
            print(
                f"warning: p = {cfg.params.p} >= p0({cfg.params.d}) = {p0:.6g}; "
                "the geometric tail of the union bound diverges there"
            )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    status, audit_ok, written = "complete", True, []
    try:
        files, json_files, summary, audit_ok = RUNNERS[cfg.kind](cfg)
        for name, content in files.items():
            path = cfg.out_dir / name
            if name.endswith(".jsonl"):
                path.write_text("".join(line + "\n" for line in content))
            else:
                columns, rows = content
                write_csv(cfg, path, columns, rows)
            written.append(name)
        for name, payload in json_files.items():
            write_json(cfg, cfg.out_dir / name, payload)
            written.append(name)
        for line in summary:
            print(line)
    except Exception as exc:  # noqa: BLE001 - the manifest records the failure
        status = f"failed: {exc}"
        _write_manifest(cfg, started, written, status, audit_ok=False)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_manifest(cfg, started, written, status, audit_ok)
    return EXIT_OK if audit_ok else EXIT_AUDIT


def _write_manifest(cfg, started, files, status, audit_ok):
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "out_dir": str(cfg.out_dir),
        "workers": cfg.workers,
        "started_at": started,
        "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "files": sorted(files),
        "status": status,
        "audit_ok": audit_ok,
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="parkinglab",
        description="Parking-model experiments: tail curves, audits, bounds.",
    )
    parser.add_argument("--config", required=True, help="path to an INI experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--workers", type=int, default=None, help="compute threads")
    parser.add_argument("--out", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.workers, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
