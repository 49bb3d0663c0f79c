"""Transfer metrics: required steps, transfer success and relative transfer cost."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

NOT_REACHED = "not reached"
UNDEFINED = "undefined"


def required_steps(log, threshold=0.9, n_max=None, task=None):
    """First evaluated env step with success >= ``threshold``; ``NOT_REACHED`` otherwise.

    No interpolation between evaluations. Records past ``n_max`` are ignored.
    """
    for step, s in log.success_curve(task):
        if n_max is not None and step > n_max:
            break
        if s >= threshold:
            return step
    return NOT_REACHED


def reached(steps):
    return steps != NOT_REACHED


def transfer_success(logs, threshold=0.9, n_max=None, task=None):
    """Fraction of runs (one per seed) that reached ``threshold`` within ``n_max``."""
    if not logs:
        raise ValueError("need at least one run")
    hits = sum(reached(required_steps(lg, threshold, n_max, task)) for lg in logs)
    return hits / len(logs)


def mean_required_steps(logs, threshold=0.9, n_max=None, task=None):
    """Mean required steps over the runs that reached the threshold (``NOT_REACHED`` if none did)."""
    vals = [required_steps(lg, threshold, n_max, task) for lg in logs]
    vals = [v for v in vals if reached(v)]
    return sum(vals) / len(vals) if vals else NOT_REACHED


def relative_cost(n_t, alpha_t, n_s, alpha_s):
    """``(n_t / alpha_t) / (n_s / alpha_s)``; ``UNDEFINED`` when either success rate is zero."""
    for a in (alpha_t, alpha_s):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"success rate {a} outside [0, 1]")
    if alpha_t == 0 or alpha_s == 0 or not reached(n_t) or not reached(n_s):
        return UNDEFINED
    if n_s <= 0:
        raise ValueError("scratch step count must be positive")
    return (n_t / alpha_t) / (n_s / alpha_s)


def cost_sort_key(c):
    """Orders costs with undefined ones last (they count as failures)."""
    return math.inf if c == UNDEFINED else c


def median_cost(costs):
    """Median with undefined entries ranked as +inf."""
    vals = sorted(cost_sort_key(c) for c in costs)
    if not vals:
        raise ValueError("no costs")
    m = len(vals)
    mid = vals[m // 2] if m % 2 else 0.5 * (vals[m // 2 - 1] + vals[m // 2])
    return UNDEFINED if math.isinf(mid) or math.isnan(mid) else mid


@dataclass
class TransferReport:
    task: str
    n_transfer: object
    alpha_transfer: float
    n_scratch: object
    alpha_scratch: float
    relative_cost: object
    rows: list = field(default_factory=list)

    @property
    def per_seed_costs(self):
        return [r["relative_cost"] for r in self.rows]

    @property
    def median_seed_cost(self):
        return median_cost(self.per_seed_costs)


def build_report(task, transfer_logs, scratch_logs, seeds=None, threshold=0.9, n_max=None):
    """Aggregates paired runs (same seeds, same order) into a ``TransferReport``."""
    if len(transfer_logs) != len(scratch_logs):
        raise ValueError("transfer and scratch runs must be paired")
    seeds = list(range(len(transfer_logs))) if seeds is None else list(seeds)
    rows = []
    for seed, lt, ls in zip(seeds, transfer_logs, scratch_logs):
        nt = required_steps(lt, threshold, n_max)
        ns = required_steps(ls, threshold, n_max)
        rows.append({"seed": seed, "n_transfer": nt, "n_scratch": ns,
                     "relative_cost": relative_cost(nt, float(reached(nt)), ns, float(reached(ns)))})
    a_t = transfer_success(transfer_logs, threshold, n_max)
    a_s = transfer_success(scratch_logs, threshold, n_max)
    n_t = mean_required_steps(transfer_logs, threshold, n_max)
    n_s = mean_required_steps(scratch_logs, threshold, n_max)
    return TransferReport(task, n_t, a_t, n_s, a_s, relative_cost(n_t, a_t, n_s, a_s), rows)


REPORT_COLUMNS = ("task", "n_transfer", "alpha_transfer", "n_scratch", "alpha_scratch",
                  "relative_cost", "cost_success")


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, float) and x.is_integer() and abs(x) >= 1:
        return str(int(x))
    return f"{x:.4g}" if isinstance(x, float) else str(x)


def report_csv(reports) -> str:
    """One row per task; ``cost_success`` pairs cost and transfer success as ``cost/alpha``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        cost = r.relative_cost if r.relative_cost == UNDEFINED else round(r.relative_cost, 3)
        pair = f"{_fmt(cost) if cost != UNDEFINED else '-'}/{r.alpha_transfer:.1f}"
        w.writerow([r.task, _fmt(r.n_transfer), _fmt(float(r.alpha_transfer)), _fmt(r.n_scratch),
                    _fmt(float(r.alpha_scratch)), _fmt(cost), pair])
    return buf.getvalue()


SEED_COLUMNS = ("task", "seed", "n_transfer", "n_scratch", "relative_cost")


def seed_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SEED_COLUMNS)
    for r in reports:
        for row in r.rows:
            c = row["relative_cost"]
            w.writerow([r.task, row["seed"], _fmt(row["n_transfer"]), _fmt(row["n_scratch"]),
                        _fmt(c if c == UNDEFINED else round(c, 3))])
    return buf.getvalue()
