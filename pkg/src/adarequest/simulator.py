"""Synthetic waterfall feed with latent intents and known request effects.

Users carry a historical interest ``h`` and a current intent ``i`` (unit
vectors); items carry an attribute vector ``a``.  The edge shows items from a
pool ranked by the cloud against the intent at the time of the last refresh.
At every exposure the intent may jump to a uniformly random direction, which
leaves the remaining pool stale until the next refresh.  Clicks and purchases
both depend on the match ``m = <i, a>``::

    P(click)            = sigmoid(c1 m + c0)
    P(buy | click)      = sigmoid(kappa m + b_u + beta rho^age)

where ``b_u`` tracks the user's purchase level and the last term is a
short-lived purchase boost after an intent shift (``age`` exposures ago).

Each exposure is one step: (a) possible intent shift, (b) expose the pool
head, (c) automatic paging refresh when the pool runs empty.  An inserted
request refreshes the pool right before (a).  All random numbers of a session
are drawn up front per exposure index, so Request and Skip branches of the
same session differ only through the pool.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import roots_jacobi

from .features import EVENT_KINDS, CaseTable, ItemCatalog, SchemaConfig
from .nn.autograd import sigmoid_np

KIND = {k: j + 1 for j, k in enumerate(EVENT_KINDS)}


@dataclass
class SimConfig:
    latent_dim: int = 8
    n_users: int = 2000
    n_items: int = 3000
    n_categories: int = 24
    n_brands: int = 60
    page_size: int = 50
    pages_per_session: int = 4
    hazard: float = 0.02
    click_slope: float = 5.0
    click_intercept: float = -3.5
    purchase_slope: float = 3.0
    purchase_intercept: float = -2.5
    purchase_level_effect: float = 0.5
    shift_boost: float = 1.0
    boost_decay: float = 0.9
    stop_slope: float = 2.0
    stop_intercept: float = -2.5
    delete_prob: float = 0.01
    category_spread: float = 0.6
    history_min: int = 5
    history_max: int = 50
    scroll_n: int = 6
    window: int = 20
    price_mu: float = 3.0
    price_sigma: float = 0.8
    p_treat: float = 0.5
    train_frac: float = 0.85
    period_length: int = 1000
    mc_intents: int = 512
    quad_nodes: int = 64
    max_exp: int = 50
    max_sclk: int = 20
    max_clk: int = 50
    max_cands: int = 30
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hazard <= 1.0:
            raise ValueError("hazard must lie in [0, 1]")
        if self.page_size < 1:
            raise ValueError("page size must be >= 1")
        if self.latent_dim < 2:
            raise ValueError("latent dimension must be >= 2")
        if self.window < 0:
            raise ValueError("window must be >= 0")

    @property
    def session_length(self) -> int:
        return self.page_size * self.pages_per_session

    @property
    def n_levels(self) -> int:
        return 5

    def schema(self) -> SchemaConfig:
        return SchemaConfig(max_exp=self.max_exp, max_sclk=self.max_sclk, max_clk=self.max_clk,
                            max_cands=self.max_cands, n_items=self.n_items,
                            n_categories=self.n_categories, n_brands=self.n_brands,
                            n_positions=self.page_size, n_pages=self.pages_per_session + 4,
                            dense_dim=self.latent_dim + 2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown simulator config keys: {sorted(unknown)}")
        return cls(**d)


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# world
# ---------------------------------------------------------------------------

class SimWorld:
    """Item universe, users and the precomputed expectation tables."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0])
        d = cfg.latent_dim
        centroids = _unit(rng.normal(size=(cfg.n_categories, d)))
        self.category = rng.integers(cfg.n_categories, size=cfg.n_items)
        self.brand = rng.integers(cfg.n_brands, size=cfg.n_items)
        noise = rng.normal(size=(cfg.n_items, d)) * cfg.category_spread / math.sqrt(d) * 2.0
        self.A = _unit(centroids[self.category] + noise)
        self.price = np.exp(cfg.price_mu + cfg.price_sigma * rng.normal(size=cfg.n_items))
        cuts = np.quantile(self.price, np.linspace(0.1, 0.9, 9))
        self.price_level = np.searchsorted(cuts, self.price, side="right")

        self.H = _unit(rng.normal(size=(cfg.n_users, d)))
        self.attrs = np.stack([rng.integers(2, size=cfg.n_users), rng.integers(6, size=cfg.n_users),
                               rng.integers(cfg.n_levels, size=cfg.n_users),
                               rng.integers(3, size=cfg.n_users)], axis=1)
        self.level = self.attrs[:, 2]
        self.b_user = cfg.purchase_intercept + cfg.purchase_level_effect * (self.level - 2)

        # popularity analogs over a sample of interests; these are item properties
        probe = _unit(rng.normal(size=(256, d)))
        mm = self.A @ probe.T
        ctr = sigmoid_np(cfg.click_slope * mm + cfg.click_intercept).mean(axis=1)
        cvr = sigmoid_np(cfg.purchase_slope * mm + cfg.purchase_intercept).mean(axis=1)
        self.dense = np.round(np.column_stack([self.A, ctr, cvr]), 4)

        self.history = [self._history(rng, u) for u in range(cfg.n_users)]
        self._tables_for = -1
        self._catalog: ItemCatalog | None = None
        self._build_tables(max(cfg.window, 1))

    def _history(self, rng, u):
        cfg = self.cfg
        L = int(rng.integers(cfg.history_min, cfg.history_max + 1))
        logits = 4.0 * (self.A @ self.H[u])
        p = np.exp(logits - logits.max())
        items = rng.choice(cfg.n_items, size=L, p=p / p.sum())
        pos = rng.integers(cfg.page_size, size=L)
        dwell = np.round(4.0 + rng.exponential(10.0, size=L), 3)
        page = rng.integers(cfg.pages_per_session, size=L)
        return ([KIND["click"]] * L, dwell.tolist(), pos.tolist(), items.tolist(), pos.tolist(),
                page.tolist())

    # -- purchase-probability expectations -----------------------------------
    def q(self, m, b):
        """Expected purchases of one exposure: ``P(click) P(buy | click)``."""
        cfg = self.cfg
        return (sigmoid_np(cfg.click_slope * np.asarray(m) + cfg.click_intercept)
                * sigmoid_np(cfg.purchase_slope * np.asarray(m) + b))

    def _build_tables(self, max_age: int) -> None:
        """``rand[level, age]`` for a stale item and ``top[level, age, rank]`` for a fresh one."""
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, 7])
        alpha = (cfg.latent_dim - 3) / 2.0
        nodes, weights = roots_jacobi(cfg.quad_nodes, alpha, alpha)
        weights = weights / weights.sum()
        intents = _unit(rng.normal(size=(cfg.mc_intents, cfg.latent_dim)))
        scores = intents @ self.A.T
        P = cfg.page_size
        top = -np.sort(-scores, axis=1)[:, :P]   # [S, P]
        ages = np.arange(max_age)
        boost = cfg.shift_boost * cfg.boost_decay ** ages
        b = self.b_user_levels()[:, None] + boost[None, :]     # [L, A]
        self.q_rand = (self.q(nodes[None, None, :], b[..., None]) * weights).sum(-1)
        self.q_top = self.q(top[None, None], b[..., None, None]).mean(axis=2)   # [L, A, P]
        self.m_nodes, self.m_weights = nodes, weights
        self._tables_for = max_age

    def b_user_levels(self) -> np.ndarray:
        cfg = self.cfg
        return cfg.purchase_intercept + cfg.purchase_level_effect * (np.arange(cfg.n_levels) - 2)

    def ensure_tables(self, max_age: int) -> None:
        if max_age > self._tables_for:
            self._build_tables(max_age)

    def schema(self) -> SchemaConfig:
        return self.cfg.schema()

    def catalog(self) -> ItemCatalog:
        """Item catalog whose row ``j`` is item ``j`` (built once, shared by tables)."""
        if self._catalog is None:
            cat = ItemCatalog(self.cfg.schema().dense_dim)
            for j in range(self.cfg.n_items):
                cat.add(j, int(self.category[j]), int(self.brand[j]), int(self.price_level[j]),
                        self.dense[j].tolist())
            self._catalog = cat
        return self._catalog

    def new_table(self, capacity: int = 1024) -> CaseTable:
        return CaseTable(self.schema(), capacity=capacity, catalog=self.catalog())


# ---------------------------------------------------------------------------
# triggers
# ---------------------------------------------------------------------------

class TriggerTracker:
    """Turns per-exposure event kinds into decision-point trigger kinds."""

    def __init__(self, n: int):
        self.n = n
        self.count = 0

    def feed(self, kind: str) -> str | None:
        if kind == "click":
            trig = "click"
        elif kind == "delete":
            trig = "delete"
        elif kind == "scroll-stop":
            trig = "scroll-stop"
        else:
            self.count += 1
            if self.count < self.n:
                return None
            trig = "scroll"
        self.count = 0
        return trig


def triggers(kinds, n: int) -> list[tuple[int, str]]:
    """``(exposure index, trigger kind)`` for an event-kind stream."""
    tr = TriggerTracker(n)
    out = []
    for idx, k in enumerate(kinds):
        trig = tr.feed(k)
        if trig is not None:
            out.append((idx, trig))
    return out


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------

@dataclass
class Event:
    t: int
    item: int
    kind: str
    click: bool
    purchase: bool
    dwell: float
    requested: bool
    trigger: str | None


class Session:
    def __init__(self, world: SimWorld, user: int, seed, start: bool = True):
        self.world = world
        self.cfg = world.cfg
        self.user = user
        self.L = self.cfg.session_length
        self._draw(np.random.default_rng(seed), 0)
        self.intent = world.H[user].copy()
        self.last_shift = -1
        self.t = 0
        self.page = -1
        self.pool: list[int] = []
        self.exposed: set[int] = set()
        self.exp_log: list[tuple] = []
        self.sclk_log: list[tuple] = []
        self.purchases: list[int] = []
        self.requests_at: list[int] = []
        self.clicks = 0
        self.inserted = 0
        self.last_insert_t = 0
        self.last_refresh_t = 0
        self.last_click_t = -1
        self.tracker = TriggerTracker(self.cfg.scroll_n)
        self.pending: str | None = None
        if start:
            self.refresh()

    def _draw(self, rng: np.random.Generator, start: int) -> None:
        n = self.L - start
        U = rng.random((n, 5))
        G = rng.normal(size=(n, self.cfg.latent_dim))
        E = rng.exponential(size=(n, 3))
        if start == 0:
            self.U, self.G, self.E = U, G, E
        else:
            self.U = np.concatenate([self.U[:start], U])
            self.G = np.concatenate([self.G[:start], G])
            self.E = np.concatenate([self.E[:start], E])

    def clone(self, seed=None) -> "Session":
        s = Session.__new__(Session)
        s.__dict__.update(self.__dict__)
        s.intent = self.intent.copy()
        s.pool = list(self.pool)
        s.exposed = set(self.exposed)
        s.exp_log = list(self.exp_log)
        s.sclk_log = list(self.sclk_log)
        s.purchases = list(self.purchases)
        s.requests_at = list(self.requests_at)
        s.tracker = TriggerTracker(self.cfg.scroll_n)
        s.tracker.count = self.tracker.count
        if seed is not None:
            s._draw(np.random.default_rng(seed), self.t)
        return s

    @property
    def done(self) -> bool:
        return self.t >= self.L

    def ranking(self, intent: np.ndarray, exclude=()) -> np.ndarray:
        """Unexposed items ordered by match with ``intent`` (ties by id)."""
        w = self.world
        scores = w.A @ intent
        ban = np.fromiter(self.exposed, dtype=np.int64, count=len(self.exposed))
        keep = np.ones(len(scores), dtype=bool)
        keep[ban] = False
        if len(exclude):
            keep[np.asarray(list(exclude), dtype=np.int64)] = False
        idx = np.nonzero(keep)[0]
        return idx[np.lexsort((idx, -scores[idx]))]

    def _top(self, k: int) -> list[int]:
        w = self.world
        scores = w.A @ self.intent
        if self.exposed:
            scores = scores.copy()
            scores[np.fromiter(self.exposed, dtype=np.int64, count=len(self.exposed))] = -np.inf
        k = min(k, len(scores))
        part = np.argpartition(-scores, k - 1)[:k]
        part = part[np.isfinite(scores[part])]
        return part[np.lexsort((part, -scores[part]))].tolist()

    def refresh(self) -> None:
        self.pool = self._top(self.cfg.page_size)
        self.page += 1
        self.last_refresh_t = self.t

    def step(self, request: bool = False) -> Event:
        if self.done:
            raise RuntimeError("session is over")
        cfg, w, t = self.cfg, self.world, self.t
        if request:
            self.refresh()
            self.inserted += 1
            self.last_insert_t = t
            self.requests_at.append(t)
        u = self.U[t]
        if u[0] < cfg.hazard:
            self.intent = _unit(self.G[t])
            self.last_shift = t
        item = self.pool.pop(0)
        pos = t - self.last_refresh_t
        m = float(w.A[item] @ self.intent)
        click = u[1] < 1.0 / (1.0 + math.exp(-(cfg.click_slope * m + cfg.click_intercept)))
        purchase = False
        if click:
            b = w.b_user[self.user]
            if self.last_shift >= 0:
                b += cfg.shift_boost * cfg.boost_decay ** (t - self.last_shift)
            purchase = u[2] < 1.0 / (1.0 + math.exp(-(cfg.purchase_slope * m + b)))
        stop = (not click) and u[3] < 1.0 / (1.0 + math.exp(-(cfg.stop_slope * m + cfg.stop_intercept)))
        delete = (not click) and (not stop) and u[4] < cfg.delete_prob
        e = self.E[t]
        dwell = 0.8 * e[0]
        if click:
            kind = "click"
            dwell += 4.0 + 10.0 * e[1]
        elif delete:
            kind = "delete"
        elif stop:
            kind = "scroll-stop"
            dwell += 2.0 + 2.0 * e[2]
        else:
            kind = "exposure"
        dwell = round(dwell, 3)
        pos_c = min(pos, cfg.page_size - 1)
        entry = (KIND[kind], dwell, pos_c, item, pos_c, self.page)
        self.exp_log.append(entry)
        if click:
            self.sclk_log.append(entry)
            self.clicks += 1
            self.last_click_t = t
        self.exposed.add(item)
        self.purchases.append(int(purchase))
        self.t += 1
        if not self.pool and not self.done:
            self.refresh()
        trig = self.tracker.feed(kind)
        self.pending = trig if not self.done else None
        return Event(t, item, kind, bool(click), bool(purchase), dwell, request, trig)

    # -- features ------------------------------------------------------------
    def session_stats(self) -> list[float]:
        t = self.t
        since_click = t - self.last_click_t if self.last_click_t >= 0 else t + 1
        return [float(t), float(self.clicks), float(self.inserted), float(t - self.last_insert_t),
                float(since_click), float(len(self.pool)), float(t - self.last_refresh_t),
                float(self.page)]

    def case_fields(self) -> dict:
        cfg, w = self.cfg, self.world

        def cols(log, n):
            log = log[-n:]
            return tuple(list(c) for c in zip(*log)) if log else ([], [], [], [], [], [])

        cands = self.pool[:cfg.max_cands]
        return {
            "groups": {"exp": cols(self.exp_log, cfg.max_exp),
                       "sclk": cols(self.sclk_log, cfg.max_sclk),
                       "clk": tuple(c[-cfg.max_clk:] for c in w.history[self.user])},
            "cands": (cands, list(range(len(cands))), [self.page] * len(cands)),
            "user_attrs": w.attrs[self.user].tolist(),
            "session_stats": self.session_stats(),
        }

    def stale_since_refresh(self) -> bool:
        """Whether the intent moved after the pool was last ranked."""
        return self.last_shift >= self.last_refresh_t and self.last_shift >= 0


# ---------------------------------------------------------------------------
# ground-truth effect
# ---------------------------------------------------------------------------

def true_cate(sess: Session, N: int | None = None) -> float:
    """``E[purchases in next N | Request] - E[... | Skip]`` at a decision point.

    No decisions are taken inside the window, only paging.  Given no intent
    shift in the window the exposed items are deterministic and the value is
    exact.  Paths with shifts use the world tables: a stale item has the
    expectation over a uniformly random intent, a refreshed one the
    expectation of the item at that rank under a random intent (exclusions of
    already-exposed items are ignored there).
    """
    w, cfg = sess.world, sess.cfg
    N = cfg.window if N is None else N
    K = min(N, sess.L - sess.t)
    if K <= 0:
        return 0.0
    w.ensure_tables(K)
    P = cfg.page_size
    R = sess.pool
    rank = sess.ranking(sess.intent)
    req_items = rank[:K]
    skip_items = list(R[:K])
    if len(skip_items) < K:
        in_r = set(R)
        rest = [j for j in rank[:K + len(R)] if j not in in_r]
        skip_items += rest[:K - len(skip_items)]
    m_req = w.A[np.asarray(req_items)] @ sess.intent
    m_skip = w.A[np.asarray(skip_items)] @ sess.intent
    k = np.arange(1, K + 1)
    r_req = P * ((k - 1) // P)
    LR = len(R)
    r_skip = np.where(k <= LR, 0, LR + P * (np.maximum(k - 1 - LR, 0) // P))
    b_u = w.b_user[sess.user]
    level = w.level[sess.user]
    h = cfg.hazard
    if sess.last_shift >= 0:
        boost0 = cfg.shift_boost * cfg.boost_decay ** (sess.t + k - 1 - sess.last_shift)
    else:
        boost0 = np.zeros(K)
    no_shift = (1.0 - h) ** k
    q_rand, q_top = w.q_rand[level], w.q_top[level]

    def expected(m, r):
        total = float(np.sum(no_shift * w.q(m, b_u + boost0)))
        if h == 0.0:
            return total
        for kk in range(1, K + 1):
            s = np.arange(1, kk + 1)
            wt = h * (1.0 - h) ** (kk - s)
            age = kk - s
            rk = r[kk - 1]
            j = kk - rk - 1
            fresh = s <= rk
            vals = np.where(fresh, q_top[age, min(j, P - 1)], q_rand[age])
            total += float(np.sum(wt * vals))
        return total

    return expected(m_req, r_req) - expected(m_skip, r_skip)


def true_cate_mc(sess: Session, N: int | None = None, samples: int = 1000,
                 rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Paired Monte-Carlo estimate (mean, standard error) with common random numbers."""
    cfg = sess.cfg
    N = cfg.window if N is None else N
    rng = rng if rng is not None else np.random.default_rng(0)
    K = min(N, sess.L - sess.t)
    if K <= 0:
        return 0.0, 0.0
    diffs = np.empty(samples)
    for n in range(samples):
        seed = int(rng.integers(2**63))
        a, b = sess.clone(seed), sess.clone(seed)
        pa = pb = 0
        for step in range(K):
            pa += a.step(request=step == 0).purchase
            pb += b.step(request=False).purchase
        diffs[n] = pa - pb
    return float(diffs.mean()), float(diffs.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0


# ---------------------------------------------------------------------------
# data collection
# ---------------------------------------------------------------------------

@dataclass
class Collected:
    train: CaseTable
    test: CaseTable
    world: SimWorld
    # per case: the intent moved since the pool was ranked
    train_stale: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    test_stale: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))


def collect(world: SimWorld, n_cases: int, seed: int | None = None,
            split: bool = True, trace: list | None = None) -> Collected | CaseTable:
    """Balanced random-treatment data collection.

    At each decision point outside a running label window, ``z ~ Bern(p)``
    picks Request or Skip; the label is any purchase within the next ``N``
    exposures, during which no further decisions are taken.  When ``trace``
    is a list, each session appends ``(purchases, requests_at, [(case_id, t, z)])``.
    """
    cfg = world.cfg
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 11])
    table = world.new_table(capacity=max(n_cases, 1))
    stale = []
    N = cfg.window
    s_idx = 0
    while len(table) < n_cases:
        user = int(rng.integers(cfg.n_users))
        sess = Session(world, user, [seed, 12, s_idx])
        s_idx += 1
        cases = []
        cooldown = 0
        request = False
        while not sess.done:
            sess.step(request)
            request = False
            if sess.pending is None or sess.t < cooldown or len(table) + len(cases) >= n_cases:
                continue
            z = int(rng.random() < cfg.p_treat)
            f = sess.case_fields()
            cases.append((sess.t, sess.pending, z, true_cate(sess, N), f, sess.stale_since_refresh()))
            request = bool(z)
            cooldown = sess.t + N
        purchases = np.asarray(sess.purchases)
        if trace is not None:
            trace.append((list(sess.purchases), list(sess.requests_at),
                          [(len(table) + n, c[0], c[2]) for n, c in enumerate(cases)]))
        for t, trig, z, tc, f, st in cases:
            y = int(purchases[t:t + N].any()) if N > 0 else 0
            cid = len(table)
            table.append_raw(case_id=cid, user_id=sess.user, period_index=cid // cfg.period_length,
                             trigger_kind=trig, groups=f["groups"], cands=f["cands"],
                             user_attrs=f["user_attrs"], session_stats=f["session_stats"], z=z, y=y,
                             true_cate=tc)
            stale.append(st)
    stale = np.asarray(stale, dtype=bool)
    if not split:
        return table
    perm = np.random.default_rng([seed, 13]).permutation(len(table))
    n_train = int(round(cfg.train_frac * len(table)))
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return Collected(table.subset(tr), table.subset(te), world, stale[tr], stale[te])


# ---------------------------------------------------------------------------
# online policy evaluation
# ---------------------------------------------------------------------------

@dataclass
class PolicyResult:
    strategy: str
    sessions: int
    exposures: int
    decision_points: int
    inserted: int
    paging: int
    purchases: int
    gmv: float
    pr_in: dict
    qps: float          # refreshes (paging + inserted) per exposure
    extra_qps: float    # inserted requests per exposure
    rel_qps: float      # qps over the paging-only rate
    telemetry: list = field(default_factory=list)

    def row(self) -> dict:
        d = {k: getattr(self, k) for k in ("strategy", "sessions", "exposures", "decision_points",
                                           "inserted", "paging", "purchases", "gmv", "qps",
                                           "extra_qps", "rel_qps")}
        for n, v in sorted(self.pr_in.items()):
            d[f"pr_in_{n}"] = v
        return d


def paging_rate(cfg: SimConfig) -> float:
    """Refreshes per exposure without inserted requests (the initial page included)."""
    return math.ceil(cfg.session_length / cfg.page_size) / cfg.session_length


def evaluate_policy(world: SimWorld, strategy, budget=None, horizon: int = 500, seed: int = 0,
                    windows=(10, 20)) -> PolicyResult:
    """Run ``horizon`` sessions in lockstep under ``strategy``.

    Each step advances every live session by one exposure; the decision
    points raised by that step are scored together (in session order) and the
    decisions take effect at the next exposure.  Users and per-session random
    streams depend only on ``(seed, k)``, so runs with different strategies
    are paired.  PR-in-N is taken over inserted requests, or over decision
    points for a strategy that never inserts.
    """
    from .baselines import DecisionPoint
    from .drp import BudgetConfig

    cfg = world.cfg
    if budget is not None and hasattr(strategy, "budget"):
        strategy.budget = budget if isinstance(budget, BudgetConfig) else BudgetConfig(**budget)
    strategy.reset(horizon)
    users = np.random.default_rng([seed, 20]).integers(cfg.n_users, size=horizon)
    sessions = [Session(world, int(u), [seed, 21, k]) for k, u in enumerate(users)]
    if strategy.needs == "oracle":
        world.ensure_tables(max(windows))
    request = np.zeros(horizon, dtype=bool)
    points_at: list[list[int]] = [[] for _ in range(horizon)]
    for _ in range(cfg.session_length):
        pts = []
        for k, sess in enumerate(sessions):
            if sess.done:
                continue
            sess.step(bool(request[k]))
            request[k] = False
            if sess.pending is not None:
                pts.append(DecisionPoint(k, sess.t, len(sess.pool), sess.t - sess.last_refresh_t,
                                         sess.pending, sess.stale_since_refresh()))
        if not pts:
            continue
        scores = None
        if strategy.needs == "features":
            table = world.new_table(capacity=len(pts))
            for p in pts:
                f = sessions[p.session].case_fields()
                table.append_raw(case_id=p.session, user_id=sessions[p.session].user,
                                 period_index=0, trigger_kind=p.trigger, groups=f["groups"],
                                 cands=f["cands"], user_attrs=f["user_attrs"],
                                 session_stats=f["session_stats"], z=0, y=0, true_cate=0.0)
            scores = strategy.offline_scores(table)
        elif strategy.needs == "oracle":
            scores = np.array([true_cate(sessions[p.session], cfg.window) for p in pts])
        dec = strategy.decide(pts, scores)
        for p, d in zip(pts, dec):
            points_at[p.session].append(p.t)
            request[p.session] = bool(d)
    exposures = sum(s.t for s in sessions)
    inserted = sum(s.inserted for s in sessions)
    refreshes = sum(s.page + 1 for s in sessions)
    purchases = sum(sum(s.purchases) for s in sessions)
    gmv = float(sum(world.price[e[3]] for s in sessions
                    for e, b in zip(s.exp_log, s.purchases) if b))
    if inserted:
        refs = [(s.purchases, s.requests_at) for s in sessions]
    else:
        refs = [(s.purchases, pa) for s, pa in zip(sessions, points_at)]
    from .metrics import pr_in_n
    qps = refreshes / exposures
    return PolicyResult(
        strategy=strategy.name, sessions=horizon, exposures=exposures,
        decision_points=sum(len(p) for p in points_at), inserted=inserted,
        paging=refreshes - inserted, purchases=purchases, gmv=gmv,
        pr_in={n: pr_in_n(refs, n) for n in windows}, qps=qps,
        extra_qps=inserted / exposures, rel_qps=qps / paging_rate(cfg),
        telemetry=strategy.telemetry())


def calibrate(world: SimWorld, factory, target_qps: float, lo: float, hi: float,
              horizon: int = 200, seed: int = 0, iters: int = 8, integer: bool = False):
    """Knob of ``factory(knob)`` whose QPS is closest to ``target_qps``.

    Bisection on a pilot run; QPS is assumed non-decreasing in the knob.
    Returns ``(knob, qps)``.
    """
    best = None
    cache: dict = {}

    def run(x):
        if x not in cache:
            cache[x] = evaluate_policy(world, factory(x), horizon=horizon, seed=seed).qps
        return cache[x]

    for _ in range(iters):
        mid = (lo + hi) / 2.0
        if integer:
            mid = int(round(mid))
        q = run(mid)
        if best is None or abs(q - target_qps) < abs(best[1] - target_qps):
            best = (mid, q)
        if q < target_qps:
            lo = mid
        else:
            hi = mid
        if integer and hi - lo <= 1:
            for x in (int(lo), int(hi)):
                q = run(x)
                if abs(q - target_qps) < abs(best[1] - target_qps):
                    best = (x, q)
            break
    return best
