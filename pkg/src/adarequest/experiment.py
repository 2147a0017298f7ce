"""Experiment orchestration shared by the CLI, the scripts and the acceptance suite.

An ``ExperimentConfig`` bundles the simulator, training and budget settings
with a strategy roster and one master seed.  Every command derives its own
random substream from that seed, so re-running any command with the same
config reproduces its outputs byte for byte.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics
from .baselines import (MODEL_BASED, NON_ADAPTIVE, NoR, OracleStrategy, PoolR, RandR, StaticR,
                        make_model_strategy)
from .crest import CubeConfig, TrainConfig, UpliftModel, train
from .drp import BudgetConfig
from .features import CaseTable
from .simulator import SimConfig, SimWorld, collect, evaluate_policy

ENV_PREFIX = "ADAREQ_"
STRATEGIES = NON_ADAPTIVE + MODEL_BASED


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


def substream(seed: int, name: str) -> int:
    """Per-command seed derived from the master seed and a stream name."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class EvalConfig:
    horizon: int = 400               # sessions per policy run
    seeds: int = 5                   # paired evaluation seeds
    static_k: int = 2
    pool_threshold: int = 10
    randr_p: float = 0.1
    pilot_horizon: int = 150         # sessions per calibration pilot
    phi_grid: list[float] = field(default_factory=lambda: list(range(1, 101)))


@dataclass
class ExperimentConfig:
    seed: int
    n_cases: int = 50_000
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    # model baselines get the plain mean-pool backbone
    baseline_backbone: str = "meanpool"

    def __post_init__(self):
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if self.n_cases < 1:
            raise ConfigError("n_cases must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "ExperimentConfig":
        d = dict(d)
        if seed is not None:
            d["seed"] = seed
        if d.get("seed") is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            sim = SimConfig.from_dict(d.pop("sim", {}))
            tr = dict(d.pop("train", {}))
            if "cube" in tr:
                tr["cube"] = CubeConfig(**tr["cube"])
            trn = TrainConfig.from_dict(tr)
            budget = BudgetConfig(**d.pop("budget", {}))
            ev = EvalConfig(**d.pop("eval", {}))
            out = cls(sim=sim, train=trn, budget=budget, eval=ev, **d)
            for part in (out, sim, trn, trn.cube, budget, ev):
                _check_types(part)
            return out
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


def _check_types(obj) -> None:
    """Reject values whose type disagrees with the field default (ints widen to floats)."""
    for f in fields(obj):
        default = f.default
        v = getattr(obj, f.name)
        if isinstance(default, bool):
            ok = isinstance(v, bool)
        elif isinstance(default, int):
            ok = isinstance(v, (int, np.integer)) and not isinstance(v, bool)
        elif isinstance(default, float):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
            if ok:
                setattr(obj, f.name, float(v))
        elif isinstance(default, str):
            ok = isinstance(v, str)
        else:
            continue
        if not ok:
            raise ConfigError(f"{type(obj).__name__}.{f.name}: expected {type(default).__name__}, "
                              f"got {v!r}")


def _set_path(d: dict, path: list[str], value) -> None:
    for key in path[:-1]:
        d = d.setdefault(key, {})
    d[path[-1]] = value


def apply_env(d: dict, environ=None) -> dict:
    """Overrides from ``ADAREQ_<SECTION>__<KEY>=<json value>`` variables.

    ``ADAREQ_TRAIN__EPOCHS=2`` sets ``train.epochs``; ``ADAREQ_SEED=3`` sets
    the master seed.  Values are parsed as JSON, falling back to the raw string.
    """
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(d))
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        raw = environ[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(out, path, value)
    return out


def load_config(path: str | Path | None, seed: int | None = None, environ=None
                ) -> ExperimentConfig:
    d: dict = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
    return ExperimentConfig.from_dict(apply_env(d, environ), seed=seed)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def make_world(cfg: ExperimentConfig) -> SimWorld:
    return SimWorld(replace(cfg.sim, seed=substream(cfg.seed, "world")))


def simulate(cfg: ExperimentConfig, world: SimWorld | None = None):
    world = world or make_world(cfg)
    return collect(world, cfg.n_cases, seed=substream(cfg.seed, "simgen"))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def train_config_for(kind: str, cfg: ExperimentConfig, seed: int) -> dict[str, TrainConfig]:
    """Training configs (by model role) behind one model-based strategy."""
    base = replace(cfg.train, seed=seed)
    if kind == "AdaRequest":
        return {"AdaRequest": base}
    plain = replace(base, backbone=cfg.baseline_backbone, no_cube_meanpool=False,
                    no_backbone_share=False, class_transform_head=False,
                    one_model_condition=False, no_uplift_greedy=False)
    if kind == "Greedy":
        return {"Greedy": replace(plain, no_uplift_greedy=True)}
    if kind == "ClassTrans":
        return {"ClassTrans": replace(plain, class_transform_head=True)}
    if kind == "OneModel":
        return {"OneModel": replace(plain, one_model_condition=True)}
    if kind == "TwoModel":
        return {"TwoModel.t": replace(plain, subset="treatment"),
                "TwoModel.c": replace(plain, subset="control")}
    raise ConfigError(f"{kind} is not a model-based strategy")


def fit(kind: str, table: CaseTable, cfg: ExperimentConfig, seed: int | None = None,
        valid: CaseTable | None = None, on_epoch=None) -> tuple[dict[str, UpliftModel], dict]:
    seed = substream(cfg.seed, "train") if seed is None else seed
    models, logs = {}, {}
    for role, tc in train_config_for(kind, cfg, seed).items():
        res = train(table, tc, valid=valid, on_epoch=on_epoch)
        models[role], logs[role] = res.model, res.log
    return models, logs


def non_adaptive(kind: str, cfg: ExperimentConfig, seed: int = 0):
    ev = cfg.eval
    if kind == "NoR":
        return NoR()
    if kind == "StaticR":
        return StaticR(ev.static_k, cfg.sim.page_size, cfg.sim.scroll_n)
    if kind == "RandR":
        return RandR(ev.randr_p, seed=substream(seed, "randr"))
    if kind == "PoolR":
        return PoolR(ev.pool_threshold)
    raise ConfigError(f"{kind} is not a non-adaptive strategy")


def scores_for(kind: str, models: dict, table: CaseTable, cfg: ExperimentConfig, seed: int = 0):
    """``(score, cate_hat, p_obs)`` per case for the offline report."""
    nan = np.full(len(table), np.nan)
    if kind in NON_ADAPTIVE:
        return non_adaptive(kind, cfg, seed).offline_scores(table), nan, nan
    if kind == "TwoModel":
        pt = models["TwoModel.t"].predict_table(table).p_ctrl
        pc = models["TwoModel.c"].predict_table(table).p_ctrl
        return pt - pc, pt - pc, np.where(table.z == 1, pt, pc)
    pred = models[kind].predict_table(table)
    cate = nan if kind == "Greedy" else pred.cate_hat
    return pred.score, cate, pred.observed_p(table.z)


def offline_eval(kind: str, models: dict, table: CaseTable, cfg: ExperimentConfig,
                 seed: int = 0) -> tuple[dict, list]:
    score, cate, p = scores_for(kind, models, table, cfg, seed)
    rep = metrics.offline_report(score, cate, p, table.z, table.y, table.case_id)
    curve = metrics.curve_rows(score, table.z, table.y, table.case_id, cfg.eval.phi_grid)
    return rep, curve


ABLATIONS = {"w/o CUBE": "no_cube_meanpool", "w/o Uplift": "no_uplift_greedy",
             "w/o Share": "no_backbone_share"}


def offline_study(cfg: ExperimentConfig, data, kinds=STRATEGIES, ablations=(), seeds=None,
                  log=None) -> dict[str, list[float]]:
    """Qini AUUC on the test split per strategy (and ablation) and training seed.

    Also records the ``Oracle`` (true effect) AUUC.  ``ablations`` names keys
    of ``ABLATIONS``; each is AdaRequest trained with that flag set.
    """
    seeds = list(range(cfg.eval.seeds)) if seeds is None else list(seeds)
    te = data.test
    out: dict[str, list[float]] = {"Oracle": [metrics.qini_auuc(te.true_cate, te.z, te.y, te.case_id)]}
    for s in seeds:
        tseed = substream(cfg.seed, f"train{s}")
        for kind in kinds:
            if kind in NON_ADAPTIVE:
                score = non_adaptive(kind, cfg, tseed).offline_scores(te)
            else:
                models, _ = fit(kind, data.train, cfg, seed=tseed)
                score = scores_for(kind, models, te, cfg)[0]
            out.setdefault(kind, []).append(metrics.qini_auuc(score, te.z, te.y, te.case_id))
            if log:
                log(f"seed {s} {kind} {out[kind][-1]!r}")
        for name in ablations:
            acfg = replace(cfg, train=replace(cfg.train, **{ABLATIONS[name]: True}))
            models, _ = fit("AdaRequest", data.train, acfg, seed=tseed)
            score = models["AdaRequest"].predict_table(te).score
            out.setdefault(name, []).append(metrics.qini_auuc(score, te.z, te.y, te.case_id))
            if log:
                log(f"seed {s} {name} {out[name][-1]!r}")
    return out


# ---------------------------------------------------------------------------
# policy simulation
# ---------------------------------------------------------------------------

def online_strategy(kind: str, models: dict, cfg: ExperimentConfig, budget: BudgetConfig,
                    seed: int = 0, warm_scores=None):
    if kind in NON_ADAPTIVE:
        return non_adaptive(kind, cfg, seed)
    if kind == "Oracle":
        return OracleStrategy(replace(budget, positive_only=True), warm_scores)
    return make_model_strategy(kind, models, budget, warm_scores)


def pilot_scores(kind: str, models: dict, cfg: ExperimentConfig, world: SimWorld) -> list[float]:
    """Decision-point scores from a pilot run, used as the controller's previous period."""
    if kind in NON_ADAPTIVE:
        return []
    budget = replace(cfg.budget, theta=cfg.budget.period_length)
    strat = online_strategy(kind, models, cfg, budget)
    evaluate_policy(world, strat, horizon=cfg.eval.pilot_horizon, seed=substream(cfg.seed, "pilot"))
    return strat.seen[-cfg.budget.period_length:]


def sweep(cfg: ExperimentConfig, world: SimWorld, models: dict, thetas, strategies=None,
          seeds=None) -> list[dict]:
    """Policy rows for a theta grid, with RandR matched to each AdaRequest cell.

    Budgeted strategies run once per theta with ``theta`` grants per period;
    the other non-adaptive ones run once as single operating points.  For
    each theta a RandR row uses the admission rate AdaRequest realized at
    that theta, so the two sit at matched request rates.
    """
    strategies = list(strategies or cfg.strategies)
    seeds = list(range(cfg.eval.seeds)) if seeds is None else list(seeds)
    warm = {k: pilot_scores(k, models, cfg, world) for k in strategies}
    rows = []

    def run(name, strat, theta, s, knob=""):
        r = evaluate_policy(world, strat, horizon=cfg.eval.horizon, seed=substream(cfg.seed, f"eval{s}"))
        row = {"strategy": name, "theta": theta, "knob": knob, "seed": s}
        row.update({k: v for k, v in r.row().items() if k != "strategy"})
        rows.append(row)
        return r

    for s in seeds:
        for kind in strategies:
            if kind in NON_ADAPTIVE:
                run(kind, non_adaptive(kind, cfg, s), "", s)
        for theta in thetas:
            budget = replace(cfg.budget, theta=int(theta))
            for kind in strategies:
                if kind in NON_ADAPTIVE:
                    continue
                r = run(kind, online_strategy(kind, models, cfg, budget, s, warm[kind]), int(theta), s)
                if kind == "AdaRequest" and "RandR" in strategies:
                    p = r.inserted / max(r.decision_points, 1)
                    run("RandR@AdaRequest", RandR(p, seed=substream(s, "randr")), int(theta), s,
                        f"{p:.6f}")
    return rows


def matched_qps(cfg: ExperimentConfig, world: SimWorld, models: dict, seeds=None,
                strategies=("NoR", "StaticR", "RandR", "PoolR", "AdaRequest")) -> list[dict]:
    """Policy rows with every strategy tuned to StaticR's request rate.

    The StaticR rate on a pilot run is the target.  RandR's probability,
    PoolR's threshold and the budgeted strategies' target fraction ``M`` are
    then set by bisection on the same pilot (budgeted ones without a binding
    cap, their threshold warm-started from pilot scores), and all strategies
    run on the paired evaluation seeds.
    """
    from .simulator import calibrate

    seeds = list(range(cfg.eval.seeds)) if seeds is None else list(seeds)
    pilot_seed = substream(cfg.seed, "pilot")
    ph = cfg.eval.pilot_horizon
    target = evaluate_policy(world, non_adaptive("StaticR", cfg), horizon=ph, seed=pilot_seed).qps
    open_budget = replace(cfg.budget, theta=cfg.budget.period_length)
    factories = {
        "NoR": None, "StaticR": None,
        "RandR": (lambda p: RandR(p, seed=substream(cfg.seed, "randr")), 0.0, 1.0, False),
        "PoolR": (lambda k: PoolR(int(k)), 0, cfg.sim.page_size, True),
    }
    knobs = {}
    for kind in strategies:
        if kind in MODEL_BASED or kind == "Oracle":
            warm = pilot_scores(kind, models, cfg, world)
            fac = (lambda m, kind=kind, warm=warm: online_strategy(
                kind, models, cfg, replace(open_budget, target_fraction=max(m, 1e-3)), 0, warm),
                0.0, 100.0, False)
        else:
            fac = factories[kind]
        if fac is None:
            knobs[kind] = None
            continue
        make, lo, hi, integer = fac
        knob, _ = calibrate(world, make, target, lo, hi, horizon=ph, seed=pilot_seed,
                            iters=10, integer=integer)
        knobs[kind] = (make, knob)
    rows = []
    for s in seeds:
        es = substream(cfg.seed, f"eval{s}")
        for kind in strategies:
            if knobs[kind] is None:
                strat, knob = non_adaptive(kind, cfg, s), ""
            else:
                make, knob = knobs[kind]
                strat = make(knob)
            r = evaluate_policy(world, strat, horizon=cfg.eval.horizon, seed=es)
            row = {"strategy": kind, "knob": knob, "seed": s, "target_qps": target}
            row.update({k: v for k, v in r.row().items() if k != "strategy"})
            rows.append(row)
    return rows


def write_tsv(path: str | Path, rows: list[dict], header: list[str] | None = None) -> None:
    header = header or (list(rows[0].keys()) if rows else [])
    with open(path, "w") as f:
        f.write("\t".join(header) + "\n")
        for r in rows:
            f.write("\t".join(_fmt(r.get(h, "")) for h in header) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)
