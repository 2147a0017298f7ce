"""Budgeted request admission with a previous-period threshold.

Choosing which decision points get a request under a per-period budget is a
0/1 knapsack with (nearly) unit costs, whose greedy solution ranks by
``uplift / cost``.  Scores arrive online, so the cut-off is taken from the
previous period: the minimum score among its top ``M`` percent.  A hard cap
``theta`` on granted requests per period enforces the budget regardless of
how well the previous period predicts the current one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BudgetConfig:
    theta: int = 100
    target_fraction: float = 50.0   # M, in percent
    lam: float = 1.0                # per-request cost; cancels in the ranking
    period_length: int = 1000
    # never admit a point whose score is <= 0 (no value to buy)
    positive_only: bool = False

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")
        if not 0.0 < self.target_fraction <= 100.0:
            raise ValueError("target fraction must lie in (0, 100]")
        if self.period_length < 1:
            raise ValueError("period length must be >= 1")


@dataclass
class PeriodTelemetry:
    period: int
    threshold: float | None
    granted: int
    offered: int

    @property
    def fraction(self) -> float:
        return self.granted / self.offered if self.offered else 0.0

    def row(self) -> list:
        thr = "" if self.threshold is None else repr(float(self.threshold))
        return [self.period, thr, self.granted, self.offered, f"{self.fraction:.6f}"]


TELEMETRY_HEADER = ["period", "threshold", "granted", "offered", "fraction"]


@dataclass
class ThresholdState:
    threshold: float | None = None
    prev_scores: list[float] = field(default_factory=list)
    cur_scores: list[float] = field(default_factory=list)
    granted: int = 0
    period: int = 0
    telemetry: list[PeriodTelemetry] = field(default_factory=list)


def rank_score(pred, cfg: BudgetConfig | None = None):
    """Uplift per unit cost.  With a constant cost this preserves the uplift order.

    ``pred`` is a raw uplift score or anything with a ``v_uplift`` field.
    """
    lam = 1.0 if cfg is None else cfg.lam
    v = getattr(pred, "v_uplift", pred)
    return v / lam


def compute_threshold(scores, target_fraction: float) -> float | None:
    """Minimum of the top ``ceil(M n / 100)`` scores; ``None`` for an empty reservoir."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        return None
    k = max(1, math.ceil(target_fraction * s.size / 100.0 - 1e-9))
    k = min(k, s.size)
    return float(np.sort(s)[::-1][k - 1])


def decide(score: float, state: ThresholdState, cfg: BudgetConfig) -> bool:
    """Request iff the score clears the threshold and budget remains.

    Before any threshold exists (first period) every point is admitted until
    ``theta`` is used up.  The score joins the current reservoir either way.
    """
    state.cur_scores.append(float(score))
    open_budget = state.granted < cfg.theta
    ok = open_budget and (state.threshold is None or score >= state.threshold)
    if cfg.positive_only and score <= 0:
        ok = False
    if ok:
        state.granted += 1
    return ok


def rollover(state: ThresholdState, cfg: BudgetConfig) -> ThresholdState:
    state.telemetry.append(PeriodTelemetry(state.period, state.threshold, state.granted,
                                           len(state.cur_scores)))
    state.prev_scores = state.cur_scores
    state.cur_scores = []
    state.granted = 0
    state.period += 1
    if state.prev_scores:
        state.threshold = compute_threshold(state.prev_scores, cfg.target_fraction)
    return state


class DRPController:
    """Threshold state machine with automatic rollover every ``period_length`` points.

    ``warm_scores`` stand in for a previous period, so the first period
    already has a threshold instead of admitting everything up to ``theta``.
    """

    def __init__(self, cfg: BudgetConfig, warm_scores=None):
        self.cfg = cfg
        self.state = ThresholdState()
        if warm_scores is not None and len(warm_scores):
            self.state.prev_scores = [float(s) for s in warm_scores]
            self.state.threshold = compute_threshold(self.state.prev_scores, cfg.target_fraction)

    def __call__(self, score: float) -> bool:
        ok = decide(rank_score(score, self.cfg), self.state, self.cfg)
        if len(self.state.cur_scores) >= self.cfg.period_length:
            rollover(self.state, self.cfg)
        return ok

    def finish(self) -> list[PeriodTelemetry]:
        """Close a partial last period and return all telemetry."""
        if self.state.cur_scores:
            rollover(self.state, self.cfg)
        return self.state.telemetry


def knapsack_bruteforce(values, costs, budget: float) -> float:
    """Exhaustive 0/1 knapsack optimum with the strict constraint ``sum(cost) < budget``."""
    values = list(map(float, values))
    costs = list(map(float, costs))
    if len(values) != len(costs):
        raise ValueError("values and costs differ in length")
    if len(values) > 20:
        raise ValueError("brute force is limited to 20 items")
    best = 0.0
    n = len(values)
    for mask in itertools.product((0, 1), repeat=n):
        c = sum(ci for ci, m in zip(costs, mask) if m)
        if c < budget:
            v = math.fsum(vi for vi, m in zip(values, mask) if m)
            best = max(best, v)
    return best


def subset_value(values, chosen) -> float:
    """Exactly rounded sum, so equal subsets give equal values in any order."""
    return math.fsum(float(values[i]) for i in chosen)


def greedy_admission(values, costs, budget: float) -> list[int]:
    """Indices admitted by ratio order while positive and within ``sum(cost) < budget``."""
    values = np.asarray(values, dtype=float)
    costs = np.asarray(costs, dtype=float)
    order = sorted(range(len(values)), key=lambda i: (-values[i] / costs[i], i))
    chosen, spent = [], 0.0
    for i in order:
        if values[i] <= 0:
            break
        if spent + costs[i] < budget:
            chosen.append(i)
            spent += costs[i]
    return chosen
