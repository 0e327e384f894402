"""Monte-Carlo experiment driver, metrics, and table emission.

Replications are independent tasks keyed by (master seed, replication
index); their per-interval results land in a line-per-record CSV store so
interrupted experiments resume by computing only the missing indices.
Aggregation is a pure second pass over the store, producing coverage
tables (per signal-strength group) and an estimation-error table across
problem sizes.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .dgp import DgpConfig, generate, make_beta
from .hybrid import StatisticEngine, hybrid_ci_one_sided, hybrid_ci_two_sided
from .inference import SIDE_ONE, SIDE_TWO, StatConfig, iv_interval, t_interval
from .iv_estimator import SingularGramError
from .ps import InfeasibleTruncationError, ps_interval
from .resampler import combined_estimate, generate_w

WORKERS_ENV_VAR = "MARTINGALE_CI_WORKERS"
SIGNAL_GROUPS = (0.6, 0.4, 0.2, 0.1)
# Nonzero-count per signal strength in the canonical coefficient vector.
GROUP_SIZES = {0.6: 2, 0.4: 1, 0.2: 3, 0.1: 4}
# Known error scale for the post-selection baseline: unit-variance noise
# everywhere except the GARCH setting, whose stationary sd is 0.5.
PS_SIGMA = {"LAI": 1.0, "GARCH": 0.5, "AR": 1.0, "IID": 1.0, "MVN": 1.0}

RECORD_COLUMNS = ("kind", "rep", "j", "beta_true", "method", "lb", "ub", "m",
                  "amse", "flags")


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulation experiment: a setting crossed with problem sizes."""

    setting: str
    sizes: tuple[tuple[int, int], ...]
    reps: int
    B: int = 50
    alpha: float = 0.2
    kmax: int = 5
    q: int = 1
    methods: tuple[str, ...] = ("t", "iv", "ps", "hr")
    side: str = SIDE_ONE
    seed: int = 0
    out_dir: Path | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must be in (0, 0.5)")
        bad = set(self.methods) - {"t", "iv", "ps", "hr"}
        if bad:
            raise ValueError(f"unknown methods: {sorted(bad)}")
        if self.side != SIDE_ONE and "ps" in self.methods:
            raise ValueError("the ps method provides one-sided bounds only")


@dataclass
class MetricsReport:
    """Aggregated per-group metrics for one (setting, n, p) cell."""

    setting: str
    n: int
    p: int
    reps: int
    methods: tuple[str, ...]
    ns: dict[float, float]
    cr: dict[str, dict[float, float]]
    mlb: dict[str, dict[float, float]]
    slb: dict[str, dict[float, float]]
    overall_cr: dict[str, float]
    amse: float
    degenerate: int = 0
    failures: dict[str, int] = field(default_factory=dict)


def derive_dataset_seed(master: int, rep: int) -> int:
    """64-bit dataset seed for one replication of one experiment."""
    return int(np.random.SeedSequence([master, rep]).generate_state(1, np.uint64)[0])


def run_replication(
    setting: str,
    n: int,
    p: int,
    master_seed: int,
    rep: int,
    B: int,
    alpha: float,
    kmax: int,
    q: int,
    methods: tuple[str, ...],
    side: str = SIDE_ONE,
) -> dict:
    """One full replication: dataset, selection, estimates, all intervals.

    Failures of a single method for a single coefficient are recorded in
    that row's flags; they never abort the replication.
    """
    beta = make_beta(p)
    cfg = DgpConfig(setting=setting, n=n, p=p,
                    seed=derive_dataset_seed(master_seed, rep))
    ds = generate(cfg, beta)

    stat_cfg = StatConfig(kmax=kmax, q=q, side=side)
    engine = StatisticEngine(ds.X, stat_cfg)
    fit = engine.fit(ds.Y)
    j_hat = fit.selection.j_hat
    out = {"rep": rep, "m": int(len(j_hat)), "amse": math.nan,
           "flags": "ok", "intervals": []}
    if len(j_hat) == 0:
        out["flags"] = "degenerate"
        return out

    beta_comb, _ = combined_estimate(ds, j_hat, kmax=kmax,
                                     half_selection_size=len(j_hat))
    err = beta_comb - beta.values[j_hat]
    out["amse"] = float(np.sqrt(np.mean(err**2)))
    if not np.any(beta_comb != 0.0):
        out["flags"] = "degenerate"

    rs = None
    two_engine = None
    if "hr" in methods:
        rs = generate_w(ds, j_hat, engine.factors.F_hat, B,
                        np.random.SeedSequence([master_seed, rep, 1]),
                        kmax=kmax, half_selection_size=len(j_hat))
        if side != SIDE_ONE:
            two_engine = StatisticEngine(
                ds.X, StatConfig(kmax=kmax, q=q, side=SIDE_TWO))

    for j in j_hat:
        j = int(j)
        bt = float(beta.values[j])
        for method in methods:
            lb, ub, flags = math.nan, math.inf, "ok"
            try:
                if method == "t":
                    rep_t = t_interval(ds.X, ds.Y, j_hat, j, alpha, side)
                    lb, ub = rep_t.lower, rep_t.upper
                elif method == "iv":
                    rep_iv = iv_interval(fit.estimate, fit.cov, j, alpha, side)
                    lb, ub = rep_iv.lower, rep_iv.upper
                elif method == "ps":
                    rep_ps = ps_interval(ds.X, ds.Y, fit.selection, j, alpha,
                                         PS_SIGMA[setting])
                    lb, ub = rep_ps.lower, rep_ps.upper
                elif method == "hr":
                    if side == SIDE_ONE:
                        rep_hr = hybrid_ci_one_sided(
                            ds.X, ds.Y, j, rs, alpha,
                            stat_cfg=stat_cfg, engine=engine)
                    else:
                        rep_hr = hybrid_ci_two_sided(
                            ds.X, ds.Y, j, rs, alpha,
                            stat_cfg=two_engine.cfg, engine=two_engine)
                    lb, ub = rep_hr.lower, rep_hr.upper
                    if not rep_hr.diagnostics.get("converged", True):
                        flags = "nonconverged"
                    elif rep_hr.diagnostics.get("fallbacks", 0):
                        flags = "fallback"
            except (SingularGramError, InfeasibleTruncationError,
                    np.linalg.LinAlgError) as exc:
                flags = f"failed:{type(exc).__name__}"
            out["intervals"].append((j, bt, method, lb, ub, flags))
    return out


def _run_task(payload: tuple) -> dict:
    return run_replication(*payload)


def _format_float(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x))


def _records_from_result(result: dict) -> list[dict]:
    rows = []
    for (j, bt, method, lb, ub, flags) in result["intervals"]:
        rows.append({"kind": "interval", "rep": result["rep"], "j": j + 1,
                     "beta_true": bt, "method": method, "lb": lb, "ub": ub,
                     "m": "", "amse": "", "flags": flags})
    rows.append({"kind": "rep", "rep": result["rep"], "j": "", "beta_true": "",
                 "method": "", "lb": "", "ub": "", "m": result["m"],
                 "amse": result["amse"], "flags": result["flags"]})
    return rows


def load_records(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def completed_reps(records: list[dict]) -> set[int]:
    return {int(r["rep"]) for r in records if r["kind"] == "rep"}


def _append_records(path: Path, rows: list[dict], write_header: bool) -> None:
    mode = "w" if write_header else "a"
    with path.open(mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS)
        if write_header:
            writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("beta_true", "lb", "ub", "amse"):
                if isinstance(out[key], float):
                    out[key] = _format_float(out[key])
            writer.writerow(out)


def _worker_count(cfg: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(1, int(env))
    return max(1, cfg.workers)


def _pin_blas_threads() -> None:
    # Children inherit these and read them at their own numpy import, which
    # keeps every replication single-BLAS-threaded regardless of pool size.
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def ensure_records(cfg: ExperimentConfig, n: int, p: int, path: Path) -> list[dict]:
    """Compute any replications missing from the record store at ``path``."""
    existing = load_records(path)
    done = completed_reps(existing)
    missing = [r for r in range(cfg.reps) if r not in done]
    if not missing:
        return existing

    payloads = [(cfg.setting, n, p, cfg.seed, r, cfg.B, cfg.alpha, cfg.kmax,
                 cfg.q, tuple(cfg.methods), cfg.side) for r in missing]
    workers = _worker_count(cfg)
    _pin_blas_threads()
    results: dict[int, dict] = {}
    with ProcessPoolExecutor(max_workers=workers,
                             mp_context=get_context("spawn")) as pool:
        for res in pool.map(_run_task, payloads):
            results[res["rep"]] = res

    new_rows: list[dict] = []
    for r in sorted(results):
        new_rows.extend(_records_from_result(results[r]))
    _append_records(path, new_rows, write_header=not existing)
    return existing + new_rows


def aggregate(records: list[dict], setting: str, n: int, p: int,
              methods: tuple[str, ...]) -> MetricsReport:
    """Coverage, bound moments, selection counts, and estimation error."""
    if not records:
        raise ValueError("no records to aggregate")
    interval_rows = [r for r in records if r["kind"] == "interval"]
    rep_rows = [r for r in records if r["kind"] == "rep"]

    seen_pairs: set[tuple[int, int]] = set()
    group_pairs: dict[float, set[tuple[int, int]]] = {g: set() for g in SIGNAL_GROUPS}
    by_method_group: dict[str, dict[float, list[tuple[float, float]]]] = {
        m: {g: [] for g in SIGNAL_GROUPS} for m in methods
    }
    failures = {m: 0 for m in methods}

    for row in interval_rows:
        rep, j = int(row["rep"]), int(row["j"])
        bt = float(row["beta_true"])
        method = row["method"]
        if method not in by_method_group:
            continue
        group = next((g for g in SIGNAL_GROUPS if math.isclose(bt, g)), None)
        seen_pairs.add((rep, j))
        if group is None:
            continue
        group_pairs[group].add((rep, j))
        if row["flags"].startswith("failed") or row["lb"] == "":
            failures[method] += 1
            continue
        by_method_group[method][group].append((float(row["lb"]), bt))

    ns = {g: len(group_pairs[g]) / GROUP_SIZES[g] for g in SIGNAL_GROUPS}
    cr: dict[str, dict[float, float]] = {}
    mlb: dict[str, dict[float, float]] = {}
    slb: dict[str, dict[float, float]] = {}
    overall: dict[str, float] = {}
    for m in methods:
        cr[m], mlb[m], slb[m] = {}, {}, {}
        covered_total = 0
        count_total = 0
        for g in SIGNAL_GROUPS:
            vals = by_method_group[m][g]
            if not vals:
                cr[m][g] = math.nan
                mlb[m][g] = math.nan
                slb[m][g] = math.nan
                continue
            lbs = np.array([v[0] for v in vals])
            covered = int(np.sum(lbs <= g + 1e-12))
            cr[m][g] = covered / len(vals)
            with np.errstate(invalid="ignore"):
                mlb[m][g] = float(np.mean(lbs))
                slb[m][g] = float(np.std(lbs, ddof=1)) if len(lbs) > 1 else 0.0
            covered_total += covered
            count_total += len(vals)
        overall[m] = covered_total / count_total if count_total else math.nan

    amse_vals = [float(r["amse"]) for r in rep_rows if r["amse"] != ""]
    amse = float(np.mean(amse_vals)) if amse_vals else math.nan
    degenerate = sum(1 for r in rep_rows if r["flags"] == "degenerate")
    return MetricsReport(setting=setting, n=n, p=p, reps=len(rep_rows),
                         methods=tuple(methods), ns=ns, cr=cr, mlb=mlb,
                         slb=slb, overall_cr=overall, amse=amse,
                         degenerate=degenerate, failures=failures)


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "NA"
    return f"{x:.4f}"


def coverage_table_rows(report: MetricsReport) -> list[list[str]]:
    header = ["metric", "method"] + [f"{g}" for g in SIGNAL_GROUPS] + ["overall"]
    rows = [header]
    rows.append(["NS", ""] + [_fmt(report.ns[g]) for g in SIGNAL_GROUPS] + [""])
    for metric, table in (("CR", report.cr), ("mLB", report.mlb),
                          ("sLB", report.slb)):
        for m in report.methods:
            vals = [_fmt(table[m][g]) for g in SIGNAL_GROUPS]
            extra = _fmt(report.overall_cr[m]) if metric == "CR" else ""
            rows.append([metric, m] + vals + [extra])
    return rows


def emit_tables(reports: list[MetricsReport], out_dir: Path) -> list[Path]:
    """Write per-cell coverage tables and one estimation-error table.

    Inputs are sorted internally, so the emitted bytes depend only on the
    aggregated values, never on worker scheduling.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    reports = sorted(reports, key=lambda r: (r.setting, r.n, r.p))

    for rep in reports:
        stem = f"coverage_{rep.setting}_n{rep.n}_p{rep.p}"
        rows = coverage_table_rows(rep)
        csv_path = out_dir / f"{stem}.csv"
        with csv_path.open("w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        md_path = out_dir / f"{stem}.md"
        with md_path.open("w") as fh:
            fh.write("| " + " | ".join(rows[0]) + " |\n")
            fh.write("|" + "---|" * len(rows[0]) + "\n")
            for row in rows[1:]:
                fh.write("| " + " | ".join(row) + " |\n")
        written.extend([csv_path, md_path])

    if reports:
        setting = reports[0].setting
        amse_csv = out_dir / f"amse_{setting}.csv"
        with amse_csv.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["setting", "n", "p", "reps", "amse"])
            for rep in reports:
                writer.writerow([rep.setting, rep.n, rep.p, rep.reps,
                                 _fmt(rep.amse)])
        amse_md = out_dir / f"amse_{setting}.md"
        with amse_md.open("w") as fh:
            fh.write("| setting | n | p | reps | amse |\n")
            fh.write("|---|---|---|---|---|\n")
            for rep in reports:
                fh.write(f"| {rep.setting} | {rep.n} | {rep.p} | {rep.reps} "
                         f"| {_fmt(rep.amse)} |\n")
        written.extend([amse_csv, amse_md])
    return written


def run_experiment(cfg: ExperimentConfig) -> list[MetricsReport]:
    """Run (or resume) every cell of an experiment and emit its tables."""
    out_dir = Path(cfg.out_dir) if cfg.out_dir else Path("martingale_ci_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for (n, p) in cfg.sizes:
        store = out_dir / f"records_{cfg.setting}_n{n}_p{p}.csv"
        records = ensure_records(cfg, n, p, store)
        reports.append(aggregate(records, cfg.setting, n, p, cfg.methods))
    emit_tables(reports, out_dir)
    return reports
