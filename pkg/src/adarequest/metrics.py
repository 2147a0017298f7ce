"""Offline uplift and purchase metrics, plus the online purchase-rate-in-N.

Cases are ranked by descending score with ties broken by ascending case id,
so every metric is a deterministic function of its inputs.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

DEFAULT_GRID = np.arange(1, 101, dtype=float)


class MetricError(ValueError):
    """A metric is undefined on the given cases (e.g. a missing group or class)."""


def _arrays(score, z, y, case_id=None):
    s = np.asarray(score, dtype=float)
    z = np.asarray(z).astype(np.int64)
    y = np.asarray(y).astype(np.int64)
    if not (s.shape == z.shape == y.shape) or s.ndim != 1:
        raise MetricError("score, z and y must be 1-d arrays of equal length")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    cid = np.arange(len(s)) if case_id is None else np.asarray(case_id)
    return s, z, y, cid


def rank_order(score, case_id) -> np.ndarray:
    """Indices sorted by score descending, then case id ascending."""
    return np.lexsort((np.asarray(case_id), -np.asarray(score, dtype=float)))


def top_count(n: int, phi: float) -> int:
    """Number of cases in the top ``phi`` percent (rounded down)."""
    return int(np.floor(phi * n / 100.0 + 1e-9))


def qini_curve(score, z, y, case_id=None, grid=DEFAULT_GRID) -> np.ndarray:
    s, z, y, cid = _arrays(score, z, y, case_id)
    n_t, n_c = int(z.sum()), int((1 - z).sum())
    if n_t == 0 or n_c == 0:
        raise MetricError("Qini needs both treatment and control cases")
    order = rank_order(s, cid)
    cum_t = np.concatenate([[0], np.cumsum((y * z)[order])])
    cum_c = np.concatenate([[0], np.cumsum((y * (1 - z))[order])])
    k = np.array([top_count(len(s), p) for p in np.asarray(grid, dtype=float)])
    return cum_t[k] / n_t - cum_c[k] / n_c


def qini_at(score, z, y, phi: float, case_id=None) -> float:
    """``n_t,y=1(phi)/N_t - n_c,y=1(phi)/N_c`` over the top ``phi`` percent."""
    return float(qini_curve(score, z, y, case_id, [phi])[0])


def qini_auuc(score, z, y, case_id=None, grid=DEFAULT_GRID) -> float:
    """Trapezoid area between the Qini curve and the random line, on a 0..1 axis."""
    grid = np.asarray(grid, dtype=float)
    q = qini_curve(score, z, y, case_id, grid)
    q_all = qini_at(score, z, y, 100.0, case_id)
    gap = q - grid / 100.0 * q_all
    return float(np.trapezoid(gap, grid / 100.0))


def curve_rows(score, z, y, case_id=None, grid=DEFAULT_GRID) -> list[tuple[float, float, float]]:
    """``(phi, Q, Q_rand)`` rows for export."""
    grid = np.asarray(grid, dtype=float)
    q = qini_curve(score, z, y, case_id, grid)
    q_all = qini_at(score, z, y, 100.0, case_id)
    return [(float(p), float(a), float(p / 100.0 * q_all)) for p, a in zip(grid, q)]


def transformed_outcome(z, y, p: float) -> np.ndarray:
    """``Y* = y z / p - y (1 - z) / (1 - p)``; its conditional mean is the CATE."""
    if not 0.0 < p < 1.0:
        raise MetricError("propensity must lie strictly between 0 and 1")
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    return y * z / p - y * (1.0 - z) / (1.0 - p)


def mse_ystar(cate_hat, z, y, p: float | None = None) -> float:
    z = np.asarray(z, dtype=float)
    p = float(z.mean()) if p is None else p
    ystar = transformed_outcome(z, y, p)
    return float(np.mean((ystar - np.asarray(cate_hat, dtype=float)) ** 2))


def auc(scores, labels) -> float:
    """Rank AUC: probability a random positive outranks a random negative, ties 1/2."""
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(lab.sum()), int((~lab).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes")
    ranks = rankdata(s)  # average ranks for ties
    return float((ranks[lab].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mse(p, y) -> float:
    return float(np.mean((np.asarray(p, dtype=float) - np.asarray(y, dtype=float)) ** 2))


def log_loss(p, y, eps: float = 1e-12) -> float:
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    y = np.asarray(y, dtype=float)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def offline_report(score, cate_hat, p_obs, z, y, case_id=None) -> dict[str, float]:
    """Qini AUUC, Qini(50), MSE Y*, AUC, MSE and log-loss.

    Purchase metrics are NaN when the model has no purchase probability; MSE Y*
    is NaN when it has no uplift estimate.
    """
    p_obs = np.asarray(p_obs, dtype=float)
    cate_hat = np.asarray(cate_hat, dtype=float)
    out = {
        "qini_auuc": qini_auuc(score, z, y, case_id),
        "qini_50": qini_at(score, z, y, 50.0, case_id),
        "mse_ystar": mse_ystar(cate_hat, z, y) if np.all(np.isfinite(cate_hat)) else float("nan"),
    }
    if np.all(np.isfinite(p_obs)):
        out["auc"] = auc(p_obs, y)
        out["mse"] = mse(p_obs, y)
        out["log_loss"] = log_loss(p_obs, y)
    else:
        out.update(auc=float("nan"), mse=float("nan"), log_loss=float("nan"))
    return out


def pr_in_n(sessions: Iterable[tuple[Sequence[int], Sequence[int]]], N: int) -> float:
    """Mean over requests of purchases in the next ``N`` exposures divided by the window.

    Each session is ``(purchases, request_at)``: a per-exposure 0/1 purchase
    array and the exposure indices right after which a request took effect
    (the window starts at that index).  Windows cut by the session end use the
    exposures actually shown as the denominator.
    """
    if N < 1:
        raise MetricError("N must be >= 1")
    rates = []
    for purchases, request_at in sessions:
        purchases = np.asarray(purchases, dtype=float)
        for t in request_at:
            window = purchases[t:t + N]
            if len(window):
                rates.append(window.sum() / len(window))
    return float(np.mean(rates)) if rates else 0.0
