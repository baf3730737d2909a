"""Monte-Carlo harness: channel sampling, baselines, sweeps, output files.

Randomness is reproducible and order-independent: every sampled snapshot
gets its own generator seeded from (seed, purpose, index), where purpose
separates simulation trials from codebook-training draws. Records are
assembled in a fixed order no matter how many worker threads ran, so output
files are byte-identical across thread counts.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocator import SolverConfig, waterfill
from .codebook import Codebook, TrainingSet, gain_vector_cost, select_index
from .errors import BracketFailure, DimensionMismatch, InfeasibleTarget
from .estimator import blue_variance_from_gains
from .model import NetworkRealization

__all__ = [
    "SimulationConfig",
    "TrialRecord",
    "SweepSummary",
    "sample_realization",
    "build_training_set",
    "equal_power_baseline",
    "run_trial",
    "monte_carlo",
    "eval_feedback",
    "write_records_csv",
    "write_summary_json",
    "write_feedback_csv",
    "CSV_COLUMNS",
]

_PURPOSE_TRIAL = 0
_PURPOSE_TRAINING = 1

CSV_COLUMNS = (
    "trial",
    "d0",
    "k",
    "l",
    "cost_full",
    "cost_equal",
    "cost_quantized",
    "variance_quantized",
    "k1",
    "feasible",
)


@dataclass(frozen=True)
class SimulationConfig:
    """Scenario description for sweeps and codebook training.

    Channel gains compose a fixed reference loss, power-law distance decay
    and Rayleigh fading with unit mean-square. Observation gains are drawn
    Gaussian and rescaled so their empirical mean power hits
    ``h_power_target``; observation-noise variances are uniform on
    ``sigma_o2_range`` (optionally rescaled to ``noise_power_target``).
    """

    k: int = 50
    d0_grid: tuple[float, ...] = (0.005, 0.01, 0.02, 0.05)
    sigma_theta2: float = 1.0
    h_mean: float = 1.0
    h_var: float = 0.09
    h_power_target: float = 1.2
    sigma_o2_range: tuple[float, float] = (0.05, 0.15)
    noise_power_target: float | None = None
    sigma_c2: float = 1e-12
    eta0: float = 1e-3
    ref_dist: float = 1.0
    alpha: float = 2.0
    dist_range: tuple[float, float] = (50.0, 150.0)
    trials: int = 10000
    seed: int = 0
    codebook_bits: int | None = None
    training_m: int = 5000
    lloyd_epsilon: float = 1e-4
    codebook_d0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "d0_grid", tuple(float(v) for v in self.d0_grid))
        object.__setattr__(
            self, "sigma_o2_range", tuple(float(v) for v in self.sigma_o2_range)
        )
        object.__setattr__(
            self, "dist_range", tuple(float(v) for v in self.dist_range)
        )
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if len(self.d0_grid) == 0 or any(
            not (v > 0.0 and math.isfinite(v)) for v in self.d0_grid
        ):
            raise ValueError("d0_grid must be a non-empty list of positive numbers")
        for name in ("sigma_theta2", "h_power_target", "sigma_c2", "eta0", "ref_dist"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be > 0, got {v!r}")
        if self.h_var < 0.0:
            raise ValueError(f"h_var must be >= 0, got {self.h_var!r}")
        if self.h_mean == 0.0 and self.h_var == 0.0:
            raise ValueError("h_mean and h_var cannot both be zero")
        lo, hi = self.sigma_o2_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"sigma_o2_range must satisfy 0 < low <= high, got {self.sigma_o2_range}")
        lo, hi = self.dist_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"dist_range must satisfy 0 < low <= high, got {self.dist_range}")
        if self.noise_power_target is not None and not self.noise_power_target > 0.0:
            raise ValueError("noise_power_target must be > 0 when set")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.codebook_bits is not None and self.codebook_bits < 1:
            raise ValueError(f"codebook_bits must be >= 1 when set, got {self.codebook_bits}")
        if self.training_m < 1:
            raise ValueError(f"training_m must be >= 1, got {self.training_m}")
        if not self.lloyd_epsilon > 0.0:
            raise ValueError(f"lloyd_epsilon must be > 0, got {self.lloyd_epsilon!r}")
        if self.codebook_d0 is not None and not self.codebook_d0 > 0.0:
            raise ValueError("codebook_d0 must be > 0 when set")


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one Monte-Carlo trial at one variance target."""

    trial: int
    d0: float
    feasible: bool
    cost_full: float | None = None
    cost_equal: float | None = None
    cost_quantized: float | None = None
    variance_quantized: float | None = None
    variance_full: float | None = None
    k1: int | None = None


@dataclass(frozen=True)
class SweepSummary:
    """Per-cell aggregates plus the raw records they were computed from."""

    cells: dict
    records: tuple[TrialRecord, ...]


def _substream(seed: int, purpose: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, purpose, index)))


def _sample(cfg: SimulationConfig, purpose: int, index: int, d0: float) -> NetworkRealization:
    rng = _substream(cfg.seed, purpose, index)
    h = rng.normal(cfg.h_mean, math.sqrt(cfg.h_var), cfg.k)
    mean_power = float(np.mean(h * h))
    if mean_power == 0.0:
        raise ValueError("sampled observation gains are identically zero")
    h = h * math.sqrt(cfg.h_power_target / mean_power)
    sigma_o2 = rng.uniform(cfg.sigma_o2_range[0], cfg.sigma_o2_range[1], cfg.k)
    if cfg.noise_power_target is not None:
        sigma_o2 = sigma_o2 * (cfg.noise_power_target / float(np.mean(sigma_o2)))
    dist = rng.uniform(cfg.dist_range[0], cfg.dist_range[1], cfg.k)
    fade = rng.rayleigh(math.sqrt(0.5), cfg.k)
    g = cfg.eta0 * (dist / cfg.ref_dist) ** (-cfg.alpha) * fade
    return NetworkRealization.from_arrays(
        h, sigma_o2, g, cfg.sigma_c2, cfg.sigma_theta2, d0
    )


def sample_realization(
    cfg: SimulationConfig, trial_index: int, d0: float | None = None
) -> NetworkRealization:
    """Deterministic snapshot for a simulation trial.

    The draw order is fixed (observation gains, observation-noise variances,
    distances, fading) and depends only on (seed, trial_index), never on the
    variance target, so the same physical network can be solved at several
    targets.
    """
    if trial_index < 0:
        raise ValueError(f"trial_index must be >= 0, got {trial_index}")
    d0 = cfg.d0_grid[0] if d0 is None else float(d0)
    return _sample(cfg, _PURPOSE_TRIAL, trial_index, d0)


def build_training_set(
    cfg: SimulationConfig,
    m: int | None = None,
    d0: float | None = None,
    solver_cfg: SolverConfig | None = None,
) -> tuple[TrainingSet, int]:
    """Solve ``m`` fresh snapshots and collect their optimal gain vectors.

    Training snapshots come from a substream disjoint from simulation
    trials, so evaluation stays out-of-sample. Infeasible snapshots are
    skipped (never redrawn); the skip count is returned alongside the set.
    """
    m = cfg.training_m if m is None else int(m)
    if d0 is None:
        d0 = cfg.codebook_d0 if cfg.codebook_d0 is not None else cfg.d0_grid[0]
    vectors, costs = [], []
    skipped = 0
    for i in range(m):
        real = _sample(cfg, _PURPOSE_TRAINING, i, d0)
        try:
            res = waterfill(real, solver_cfg)
        except InfeasibleTarget:
            skipped += 1
            continue
        vectors.append(res.a2)
        costs.append(res.cost_j)
    if not vectors:
        raise InfeasibleTarget(
            f"every one of the {m} training snapshots was infeasible at d0={d0!r}"
        )
    training = TrainingSet(
        vectors=np.stack(vectors),
        costs=np.array(costs),
        meta={
            "k": cfg.k,
            "d0": float(d0),
            "seed": cfg.seed,
            "m_requested": m,
            "skipped_infeasible": skipped,
        },
    )
    return training, skipped


def equal_power_baseline(
    realization: NetworkRealization,
    rtol: float = 1e-12,
    feasibility_margin: float = 1e-9,
) -> tuple[float, float]:
    """Uniform-power reference: every sensor spends the same power.

    Solves for the single power level at which the fused variance meets the
    snapshot's target exactly (the variance is strictly decreasing in the
    level, so plain bisection works). Returns (per-sensor power, L2 cost).
    """
    r = realization
    usable = ~r.degenerate
    total_beta = math.fsum(r.beta[usable].tolist())
    target = r.sigma_theta2 / r.d0_target
    min_var = r.sigma_theta2 / total_beta if total_beta > 0.0 else math.inf
    if not (target < total_beta * (1.0 - feasibility_margin)):
        raise InfeasibleTarget(
            f"variance target {r.d0_target!r} is unreachable at any uniform "
            f"power; the minimum achievable variance is {min_var!r}",
            min_achievable_variance=min_var,
        )
    denom = r.sigma_o2 * (1.0 + r.beta)

    def variance_at(p: float) -> float:
        return blue_variance_from_gains(r, p / denom)

    hi = 1.0
    for _ in range(400):
        if variance_at(hi) <= r.d0_target:
            break
        hi *= 2.0
    else:
        raise BracketFailure("no uniform power level reaches the variance target")
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if variance_at(mid) > r.d0_target:
            lo = mid
        else:
            hi = mid
    p = 0.5 * (lo + hi)
    return p, math.sqrt(realization.k) * p


def run_trial(
    cfg: SimulationConfig,
    trial_index: int,
    book: Codebook | None = None,
    d0: float | None = None,
    solver_cfg: SolverConfig | None = None,
) -> TrialRecord:
    """One Monte-Carlo trial: solve, baseline, and optionally quantize.

    Infeasible snapshots are recorded as such and excluded from aggregation
    downstream; they are never redrawn. A quantized allocation is evaluated
    exactly as the sensors would apply it, so its achieved variance may
    overshoot the target.
    """
    d0 = cfg.d0_grid[0] if d0 is None else float(d0)
    real = sample_realization(cfg, trial_index, d0)
    try:
        res = waterfill(real, solver_cfg)
    except InfeasibleTarget:
        return TrialRecord(trial=trial_index, d0=d0, feasible=False)
    _, cost_eq = equal_power_baseline(real)
    cost_q = None
    var_q = None
    if book is not None:
        if book.k != real.k:
            raise DimensionMismatch(
                f"codebook is for {book.k} sensors, simulation uses {real.k}"
            )
        idx = select_index(book, res.a2, sigma_o2=real.sigma_o2, beta=real.beta)
        a2_q = book.entries[idx]
        cost_q = gain_vector_cost(a2_q, real.sigma_o2, real.beta)
        var_q = blue_variance_from_gains(real, a2_q)
    return TrialRecord(
        trial=trial_index,
        d0=d0,
        feasible=True,
        cost_full=res.cost_j,
        cost_equal=cost_eq,
        cost_quantized=cost_q,
        variance_quantized=var_q,
        variance_full=res.variance,
        k1=res.k1,
    )


def _map_tasks(worker, tasks, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def _mean_se(values) -> tuple[float | None, float | None]:
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return None, None
    mean = float(np.mean(arr))
    se = float(np.std(arr, ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return mean, se


def _cell_key(d0: float, k: int, bits: int | None) -> str:
    return f"d0={d0!r},k={k},l={bits if bits is not None else 'none'}"


def _aggregate_cell(
    d0: float, k: int, bits: int | None, records: list[TrialRecord]
) -> dict:
    feasible = [rec for rec in records if rec.feasible]
    cell = {
        "d0": d0,
        "k": k,
        "l": bits,
        "trials": len(records),
        "feasible": len(feasible),
        "infeasible": len(records) - len(feasible),
    }
    cf_mean, cf_se = _mean_se(rec.cost_full for rec in feasible)
    ce_mean, ce_se = _mean_se(rec.cost_equal for rec in feasible)
    cell["cost_full_mean"], cell["cost_full_se"] = cf_mean, cf_se
    cell["cost_equal_mean"], cell["cost_equal_se"] = ce_mean, ce_se
    k1_mean, _ = _mean_se(rec.k1 for rec in feasible)
    cell["k1_mean"] = k1_mean
    if bits is not None:
        cq_mean, cq_se = _mean_se(rec.cost_quantized for rec in feasible)
        cell["cost_quantized_mean"], cell["cost_quantized_se"] = cq_mean, cq_se
        overshoots = [
            1.0 if rec.variance_quantized is not None and rec.variance_quantized > rec.d0 else 0.0
            for rec in feasible
        ]
        cell["variance_overshoot_fraction"] = (
            float(np.mean(overshoots)) if overshoots else None
        )
    else:
        cell["cost_quantized_mean"] = None
        cell["cost_quantized_se"] = None
        cell["variance_overshoot_fraction"] = None
    return cell


def monte_carlo(
    cfg: SimulationConfig,
    book: Codebook | None = None,
    threads: int = 1,
    solver_cfg: SolverConfig | None = None,
) -> SweepSummary:
    """Full sweep over the config's variance-target grid.

    Results are independent of ``threads``: each trial is self-contained
    and the records are reassembled in (d0, trial) order before anything is
    aggregated or written.
    """
    if book is not None and book.k != cfg.k:
        raise DimensionMismatch(
            f"codebook is for {book.k} sensors, config says k={cfg.k}"
        )
    tasks = [(d0, t) for d0 in cfg.d0_grid for t in range(cfg.trials)]

    def worker(task):
        d0, t = task
        return run_trial(cfg, t, book=book, d0=d0, solver_cfg=solver_cfg)

    records = _map_tasks(worker, tasks, threads)
    bits = book.bits if book is not None else None
    cells = {}
    for i, d0 in enumerate(cfg.d0_grid):
        chunk = records[i * cfg.trials : (i + 1) * cfg.trials]
        cells[_cell_key(d0, cfg.k, bits)] = _aggregate_cell(d0, cfg.k, bits, chunk)
    return SweepSummary(cells=cells, records=tuple(records))


def eval_feedback(
    cfg: SimulationConfig,
    books: list[Codebook],
    threads: int = 1,
    solver_cfg: SolverConfig | None = None,
) -> tuple[list[dict], dict]:
    """Compare full feedback against each codebook on shared realizations.

    Every trial is solved once; each codebook then quantizes the same
    optimal allocation. Returns per-d0 aggregate rows plus the raw
    per-trial costs keyed by d0 (useful for paired statistics).
    """
    if not books:
        raise ValueError("eval_feedback needs at least one codebook")
    for book in books:
        if book.k != cfg.k:
            raise DimensionMismatch(
                f"codebook is for {book.k} sensors, config says k={cfg.k}"
            )

    def worker(task):
        d0, t = task
        real = sample_realization(cfg, t, d0)
        try:
            res = waterfill(real, solver_cfg)
        except InfeasibleTarget:
            return None
        out = [res.cost_j]
        for book in books:
            idx = select_index(book, res.a2, sigma_o2=real.sigma_o2, beta=real.beta)
            a2_q = book.entries[idx]
            out.append(gain_vector_cost(a2_q, real.sigma_o2, real.beta))
        return out

    rows = []
    raw = {}
    for d0 in cfg.d0_grid:
        tasks = [(d0, t) for t in range(cfg.trials)]
        results = _map_tasks(worker, tasks, threads)
        kept = [r for r in results if r is not None]
        mat = np.array(kept, dtype=float) if kept else np.zeros((0, 1 + len(books)))
        full_mean, full_se = _mean_se(mat[:, 0]) if mat.size else (None, None)
        row = {
            "d0": d0,
            "n_feasible": int(mat.shape[0]),
            "cost_full_mean": full_mean,
            "cost_full_se": full_se,
            "books": [],
        }
        for j, book in enumerate(books):
            q_mean, q_se = _mean_se(mat[:, 1 + j]) if mat.size else (None, None)
            gap = (
                abs(q_mean - full_mean) / full_mean
                if q_mean is not None and full_mean not in (None, 0.0)
                else None
            )
            row["books"].append(
                {"bits": book.bits, "cost_mean": q_mean, "cost_se": q_se, "rel_gap": gap}
            )
        rows.append(row)
        raw[d0] = {
            "cost_full": mat[:, 0].copy() if mat.size else np.zeros(0),
            "cost_quantized": mat[:, 1:].T.copy() if mat.size else np.zeros((len(books), 0)),
        }
    return rows, raw


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_records_csv(
    records, k: int, bits: int | None, path: str | Path
) -> None:
    """Trial records in a fixed column order with full-precision floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    _fmt(rec.trial),
                    _fmt(rec.d0),
                    _fmt(k),
                    _fmt(bits),
                    _fmt(rec.cost_full),
                    _fmt(rec.cost_equal),
                    _fmt(rec.cost_quantized),
                    _fmt(rec.variance_quantized),
                    _fmt(rec.k1),
                    _fmt(rec.feasible),
                ]
            )


def write_summary_json(summary: SweepSummary, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump({"cells": summary.cells}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def feedback_column_names(books) -> list[str]:
    """Stable per-book column prefixes; duplicate bit widths get a position suffix."""
    names = []
    seen = {}
    for book in books:
        base = f"l{book.bits}"
        if base in seen:
            seen[base] += 1
            names.append(f"{base}_{seen[base]}")
        else:
            seen[base] = 1
            names.append(base)
    return names


def write_feedback_csv(rows: list[dict], path: str | Path) -> None:
    """Per-d0 comparison of full feedback against each codebook."""
    if not rows:
        raise ValueError("no rows to write")
    class _Named:
        def __init__(self, bits):
            self.bits = bits
    names = feedback_column_names([_Named(b["bits"]) for b in rows[0]["books"]])
    header = ["d0", "n_feasible", "cost_full_mean", "cost_full_se"]
    for name in names:
        header += [f"cost_{name}_mean", f"cost_{name}_se", f"rel_gap_{name}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            out = [
                _fmt(row["d0"]),
                _fmt(row["n_feasible"]),
                _fmt(row["cost_full_mean"]),
                _fmt(row["cost_full_se"]),
            ]
            for info in row["books"]:
                out += [_fmt(info["cost_mean"]), _fmt(info["cost_se"]), _fmt(info["rel_gap"])]
            writer.writerow(out)
