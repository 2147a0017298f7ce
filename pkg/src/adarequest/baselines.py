"""Request strategies behind one decision interface.

A strategy sees the decision points of one simulation step (all sessions in
lockstep) and returns a Request/Skip flag per point.  Model-based strategies
score the points and hand the scores to a budgeted threshold controller;
non-adaptive ones apply a fixed rule.  For offline evaluation every strategy
also emits one score per recorded case, non-adaptive ones their 0/1 decision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .crest import UpliftModel
from .drp import BudgetConfig, DRPController, PeriodTelemetry
from .features import CaseTable

# session-stat columns used by the rule-based strategies
_T, _POOL, _OFFSET = 0, 5, 6


@dataclass
class DecisionPoint:
    session: int
    t: int                 # exposures so far
    pool_remaining: int
    offset: int            # exposures since the last refresh
    trigger: str
    # ground truth (simulation only): intent moved since the last refresh
    stale: bool = False


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------

def static_offsets(page_size: int, k: int) -> list[int]:
    if k >= page_size:
        raise ValueError("k must be smaller than the page size")
    return [(j * page_size) // (k + 1) for j in range(1, k + 1)]


def static_r(offset_in_page: int, k: int, page_size: int = 50) -> bool:
    """Request exactly at the ``k`` evenly spaced in-page offsets."""
    return k > 0 and offset_in_page in static_offsets(page_size, k)


def rand_r(rng: np.random.Generator, p: float) -> bool:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    return bool(rng.random() < p)


def pool_r(remaining: int, threshold: int) -> bool:
    """Request iff fewer than ``threshold`` candidates remain on the edge."""
    if remaining < 0:
        raise ValueError("pool size must be >= 0")
    return remaining < threshold


# ---------------------------------------------------------------------------
# model scores
# ---------------------------------------------------------------------------

def greedy_score(table: CaseTable, model: UpliftModel) -> np.ndarray:
    """Predicted purchase probability of a pooled single-head model."""
    return model.predict_table(table).p_ctrl


def two_model_uplift(table: CaseTable, model_t: UpliftModel, model_c: UpliftModel) -> np.ndarray:
    return model_t.predict_table(table).p_ctrl - model_c.predict_table(table).p_ctrl


def one_model_uplift(table: CaseTable, model: UpliftModel) -> np.ndarray:
    """``P(x, signal=1) - P(x, signal=0)`` from two forward passes."""
    return model.predict_table(table).cate_hat


def uplift_score(table: CaseTable, model: UpliftModel) -> np.ndarray:
    """Model decision score (``v_uplift`` for the two-net head)."""
    return model.predict_table(table).score


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------

class Strategy:
    name = "base"
    needs = None  # None, "features" or "oracle"

    def reset(self, n_sessions: int) -> None:
        pass

    def decide(self, points: Sequence[DecisionPoint], scores: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    def offline_scores(self, table: CaseTable) -> np.ndarray:
        raise NotImplementedError

    def telemetry(self) -> list[PeriodTelemetry]:
        return []


class NoR(Strategy):
    name = "NoR"

    def decide(self, points, scores=None):
        return np.zeros(len(points), dtype=bool)

    def offline_scores(self, table):
        return np.zeros(len(table))


class StaticR(Strategy):
    """``k`` requests per ``page_size`` exposures at evenly spaced offsets.

    Online, a request goes to the first decision point at or after each
    target offset of the exposure clock.  Offline, a case counts as a request
    when it lies within ``scroll_n`` exposures after a target, the longest
    possible gap between decision points.
    """

    name = "StaticR"

    def __init__(self, k: int = 2, page_size: int = 50, scroll_n: int = 6):
        self.k = k
        self.page_size = page_size
        self.scroll_n = scroll_n
        self.offsets = static_offsets(page_size, k) if k > 0 else []
        self._next: dict[int, int] = {}

    def reset(self, n_sessions):
        self._next = {}

    def decide(self, points, scores=None):
        out = np.zeros(len(points), dtype=bool)
        if not self.offsets:
            return out
        P = self.page_size
        for n, p in enumerate(points):
            # next target on the exposure clock not yet served
            nxt = self._next.get(p.session, self.offsets[0])
            if p.t >= nxt:
                out[n] = True
                span, off = divmod(p.t, P)
                later = [span * P + o for o in self.offsets if o > off]
                self._next[p.session] = later[0] if later else (span + 1) * P + self.offsets[0]
        return out

    def offline_scores(self, table):
        t = table.cols["ctx"][: len(table), _T].astype(int) % self.page_size
        hit = np.zeros(len(table))
        for o in self.offsets:
            hit = np.maximum(hit, ((t >= o) & (t < o + self.scroll_n)).astype(float))
        return hit


class RandR(Strategy):
    name = "RandR"

    def __init__(self, p: float = 0.1, seed=0):
        self.p = p
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, n_sessions):
        self.rng = np.random.default_rng(self.seed)

    def decide(self, points, scores=None):
        return np.array([rand_r(self.rng, self.p) for _ in points], dtype=bool)

    def offline_scores(self, table):
        rng = np.random.default_rng(self.seed)
        return (rng.random(len(table)) < self.p).astype(float)


class PoolR(Strategy):
    name = "PoolR"

    def __init__(self, threshold: int = 10):
        self.threshold = threshold

    def decide(self, points, scores=None):
        return np.array([pool_r(p.pool_remaining, self.threshold) for p in points], dtype=bool)

    def offline_scores(self, table):
        return (table.cols["ctx"][: len(table), _POOL] < self.threshold).astype(float)


class ScoredStrategy(Strategy):
    """Scores feed a budgeted threshold controller."""

    needs = "features"

    def __init__(self, name: str, scorer: Callable[[CaseTable], np.ndarray],
                 budget: BudgetConfig | None = None, warm_scores=None):
        self.name = name
        self.scorer = scorer
        self.budget = budget or BudgetConfig()
        self.warm_scores = warm_scores
        self.reset(0)

    def reset(self, n_sessions):
        self.drp = DRPController(self.budget, self.warm_scores)
        self.seen: list[float] = []

    def decide(self, points, scores=None):
        if scores is None:
            raise ValueError(f"{self.name} needs scores")
        self.seen.extend(float(s) for s in scores)
        return np.array([self.drp(float(s)) for s in scores], dtype=bool)

    def offline_scores(self, table):
        return np.asarray(self.scorer(table), dtype=float)

    def telemetry(self):
        return self.drp.finish()


class OracleStrategy(ScoredStrategy):
    """Scores decision points by the simulator's ground-truth effect."""

    needs = "oracle"

    def __init__(self, budget: BudgetConfig | None = None, warm_scores=None):
        budget = budget or BudgetConfig(positive_only=True)
        super().__init__("Oracle", lambda table: table.true_cate, budget, warm_scores)


def make_model_strategy(kind: str, models: dict[str, UpliftModel],
                        budget: BudgetConfig | None = None, warm_scores=None) -> ScoredStrategy:
    """Scored strategy for one of the model-based kinds."""
    if kind == "Greedy":
        m = models["Greedy"]
        scorer = lambda t: greedy_score(t, m)
    elif kind == "TwoModel":
        mt, mc = models["TwoModel.t"], models["TwoModel.c"]
        scorer = lambda t: two_model_uplift(t, mt, mc)
    elif kind == "OneModel":
        m = models["OneModel"]
        scorer = lambda t: one_model_uplift(t, m)
    elif kind in models:
        m = models[kind]
        scorer = lambda t: uplift_score(t, m)
    else:
        raise KeyError(f"no model for strategy {kind!r}")
    return ScoredStrategy(kind, scorer, budget, warm_scores)


NON_ADAPTIVE = ("NoR", "StaticR", "RandR", "PoolR")
MODEL_BASED = ("Greedy", "ClassTrans", "TwoModel", "OneModel", "AdaRequest")
