"""Desk-scale experiment grids written as plot-ready CSV.

Every experiment draws instance ``i`` from substream ``i`` of the configured
seed, so runs are deterministic functions of (spec, seed) regardless of
``jobs``.  Output files start with ``#`` comment lines recording the spec,
channel config and package version; ``pandas.read_csv(path, comment="#")``
reads them directly.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .channel import ChannelConfig, generate_instance
from .multi_carrier import exhaustive_oracle, ftpc, jspa
from .scheduler import RATE_FLOOR, run_frame

EXPERIMENTS = ("wsr-vs-k", "opcount-vs-k", "pf-frame", "oracle-gap")
FORMAT_VERSION = 1

POINT_COLUMNS = ["experiment", "solver", "K", "M", "metric", "n", "mean", "ci95_low", "ci95_high", "failed"]
SEED_COLUMNS = ["seed", "solver", "K", "M", "metric", "value", "error"]
PF_SUMMARY_COLUMNS = ["seed", "solver", "K", "M", "fairness_index", "sum_rate"]
PF_FRAME_COLUMNS = ["seed", "solver", "t", "k", "rate", "avg_rate", "weight"]

_DEFAULTS = {
    # K, M, N
    "wsr-vs-k": ([5, 10, 15, 20, 25, 30], [1, 2, 3], 10),
    "opcount-vs-k": ([5, 10, 15, 20, 25, 30], [1, 2, 3], 10),
    "pf-frame": ([30], [2], 10),
    "oracle-gap": ([5], [2], 3),
}
_DEFAULT_SOLVERS = {
    "wsr-vs-k": ["jspa"],
    "opcount-vs-k": ["jspa"],
    "pf-frame": ["jspa", "ftpc"],
    "oracle-gap": ["jspa"],
}


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    experiment: str
    K: list | None = None
    M: list | None = None
    seeds: int = 200
    epsilon: float = 1e-4
    solvers: list | None = None
    out: str = "results.csv"
    seed: int = 0
    N: int | None = None
    T: int = 20
    jobs: int = 1
    channel: dict = field(default_factory=dict)  # extra ChannelConfig fields

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise SpecError(f"experiment: must be one of {', '.join(EXPERIMENTS)}")
        K0, M0, N0 = _DEFAULTS[self.experiment]
        self.K = K0 if self.K is None else self.K
        self.M = M0 if self.M is None else self.M
        self.N = N0 if self.N is None else int(self.N)
        self.K = [int(k) for k in self.K]
        self.M = [int(m) for m in self.M]
        if not self.K or any(not 1 <= k <= 64 for k in self.K):
            raise SpecError("K: values must lie in [1, 64]")
        if not self.M or any(m < 1 for m in self.M):
            raise SpecError("M: values must be at least 1")
        if int(self.seeds) < 1:
            raise SpecError("seeds: must be at least 1")
        if self.epsilon <= 0:
            raise SpecError("epsilon: must be positive")
        if int(self.jobs) < 1:
            raise SpecError("jobs: must be at least 1")
        if self.solvers is None:
            self.solvers = list(_DEFAULT_SOLVERS[self.experiment])
        bad = [s for s in self.solvers if s not in ("jspa", "ftpc")]
        if bad:
            raise SpecError(f"solvers: unsupported {bad}; experiments use jspa and ftpc")
        if self.experiment == "oracle-gap" and (max(self.K) > 6 or self.N > 4):
            raise SpecError("oracle-gap is limited to K <= 6 and N <= 4")

    def channel_config(self) -> ChannelConfig:
        data = dict(self.channel)
        data.update(seed=int(self.seed), N=int(self.N))
        return ChannelConfig.from_dict(data)


def _solve(name, inst, epsilon):
    return jspa(inst, epsilon=epsilon) if name == "jspa" else ftpc(inst)


# ---------------------------------------------------------------------------
# per-seed tasks; each returns (records, extras) and never raises


def _wsr_task(spec: ExperimentSpec, K: int, i: int):
    cfg = spec.channel_config()
    out = []
    for M in spec.M:
        for name in spec.solvers:
            try:
                rep = _solve(name, generate_instance(cfg, K, M, substream=i), spec.epsilon)
                out.append((i, name, K, M, "wsr", rep.wsr, ""))
            except Exception as exc:  # recorded, run continues
                out.append((i, name, K, M, "wsr", math.nan, f"{type(exc).__name__}: {exc}"))
    return out, []


def _opcount_task(spec: ExperimentSpec, K: int, i: int):
    cfg = spec.channel_config()
    out = []
    for M in spec.M:
        for name in spec.solvers:
            try:
                rep = _solve(name, generate_instance(cfg, K, M, substream=i), spec.epsilon)
                per_iter = float(np.mean(rep.ops_per_iteration)) if rep.ops_per_iteration else float(rep.ops.total)
                out.append((i, name, K, M, "ops_total", float(rep.ops.total), ""))
                out.append((i, name, K, M, "ops_per_iteration", per_iter, ""))
                out.append((i, name, K, M, "iterations", float(rep.iterations), ""))
            except Exception as exc:
                out.append((i, name, K, M, "ops_total", math.nan, f"{type(exc).__name__}: {exc}"))
    return out, []


def _oracle_task(spec: ExperimentSpec, K: int, i: int):
    cfg = spec.channel_config()
    out = []
    for M in spec.M:
        try:
            inst = generate_instance(cfg, K, M, substream=i)
            best = exhaustive_oracle(inst).wsr
        except Exception as exc:
            for name in spec.solvers:
                out.append((i, name, K, M, "wsr_ratio", math.nan, f"{type(exc).__name__}: {exc}"))
            continue
        for name in spec.solvers:
            try:
                rep = _solve(name, inst, spec.epsilon)
                out.append((i, name, K, M, "wsr_ratio", rep.wsr / best, ""))
                out.append((i, name, K, M, "relative_gap", (best - rep.wsr) / best, ""))
            except Exception as exc:
                out.append((i, name, K, M, "wsr_ratio", math.nan, f"{type(exc).__name__}: {exc}"))
    return out, []


def _pf_task(spec: ExperimentSpec, K: int, i: int):
    cfg = spec.channel_config()
    out, frames = [], []
    for M in spec.M:
        inst = generate_instance(cfg, K, M, substream=i)
        for name in spec.solvers:
            try:
                res = run_frame(inst, name, T=spec.T, floor=RATE_FLOOR, epsilon=spec.epsilon)
                out.append((i, name, K, M, "fairness_index", res.fairness, ""))
                out.append((i, name, K, M, "sum_rate", res.sum_rate, ""))
                for t, rates, avg, weights in res.slots:
                    for k in range(K):
                        frames.append((i, name, t, k, rates[k], avg[k], weights[k]))
            except Exception as exc:
                out.append((i, name, K, M, "sum_rate", math.nan, f"{type(exc).__name__}: {exc}"))
    return out, frames


_TASKS = {
    "wsr-vs-k": _wsr_task,
    "opcount-vs-k": _opcount_task,
    "pf-frame": _pf_task,
    "oracle-gap": _oracle_task,
}


def _run_one(args):
    spec, K, i = args
    return _TASKS[spec.experiment](spec, K, i)


# ---------------------------------------------------------------------------
# aggregation and output


def mean_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Sample mean with a Student-t confidence interval (nan width for n < 2)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan, math.nan
    m = float(v.mean())
    if v.size < 2:
        return m, math.nan, math.nan
    half = float(stats.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size))
    return m, m - half, m + half


def aggregate(spec: ExperimentSpec, records) -> list[tuple]:
    groups: dict[tuple, list] = {}
    failed: dict[tuple, int] = {}
    for seed, solver, K, M, metric, value, err in records:
        key = (solver, K, M, metric)
        groups.setdefault(key, [])
        if err:
            failed[key] = failed.get(key, 0) + 1
        elif math.isfinite(value):
            groups[key].append(value)
        else:
            failed[key] = failed.get(key, 0) + 1
    rows = []
    for (solver, K, M, metric) in sorted(groups):
        vals = groups[(solver, K, M, metric)]
        m, lo, hi = mean_ci(vals)
        rows.append((spec.experiment, solver, K, M, metric, len(vals), m, lo, hi, failed.get((solver, K, M, metric), 0)))
    return rows


def header_lines(spec: ExperimentSpec) -> list[str]:
    return [
        f"# noma_wsr {__version__} format {FORMAT_VERSION}",
        f"# seed: {spec.seed}",
        "# spec: " + json.dumps(asdict(spec), sort_keys=True),
        "# channel: " + json.dumps(spec.channel_config().as_dict(), sort_keys=True),
        "# fairness_index uses the natural log; rates in bit/s",
    ]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_csv(path: Path, columns, rows, header):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run the grid and write the output files; returns their paths and the points."""
    tasks = [(spec, K, i) for K in spec.K for i in range(int(spec.seeds))]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=int(spec.jobs)) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * spec.jobs))))
    else:
        results = [_run_one(t) for t in tasks]
    records = [r for rec, _ in results for r in rec]
    frames = [f for _, fr in results for f in fr]
    points = aggregate(spec, records)

    out = Path(spec.out)
    header = header_lines(spec)
    files = {"points": out, "seeds": sibling(out, "seeds")}
    _write_csv(out, POINT_COLUMNS, points, header)
    _write_csv(files["seeds"], SEED_COLUMNS, records, header)
    if spec.experiment == "pf-frame":
        by_key: dict[tuple, dict] = {}
        for seed, solver, K, M, metric, value, err in records:
            by_key.setdefault((seed, solver, K, M), {})[metric] = value
        summary = [
            (seed, solver, K, M, d.get("fairness_index", math.nan), d.get("sum_rate", math.nan))
            for (seed, solver, K, M), d in sorted(by_key.items())
        ]
        files["summary"] = sibling(out, "summary")
        files["frames"] = sibling(out, "frames")
        _write_csv(files["summary"], PF_SUMMARY_COLUMNS, summary, header)
        _write_csv(files["frames"], PF_FRAME_COLUMNS, frames, header)
    failures = sum(1 for r in records if r[6])
    return {"files": {k: str(v) for k, v in files.items()}, "points": points, "failures": failures}
