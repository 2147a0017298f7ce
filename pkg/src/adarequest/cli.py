"""Command line: ``simgen``, ``train``, ``eval`` and ``sweep``.

All reports are tab-separated text with full-precision floats and no
timestamps, so identical config and seed give byte-identical files.
Configuration comes from a JSON file (``--config``), environment overrides
``ADAREQ_<SECTION>__<KEY>=<json>`` and finally explicit flags.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import experiment as X
from .crest import CheckpointError, NumericError, load_checkpoint, save_checkpoint
from .features import SchemaConfig, SchemaError, load_table, write_dataset
from .metrics import MetricError

log = logging.getLogger("adarequest")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


def _out_dir(path: str | None) -> Path:
    if path is None:
        raise X.ConfigError("--out is required")
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {p}: {e}") from e
    return p


def _dataset(path: str | None) -> tuple[Path, SchemaConfig]:
    if path is None:
        raise X.ConfigError("--dataset is required")
    d = Path(path)
    if not (d / "schema.json").exists():
        raise DataError(f"{d} holds no schema.json (not a simgen output)")
    return d, SchemaConfig.load(d / "schema.json")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simgen(args, cfg: X.ExperimentConfig) -> None:
    out = _out_dir(args.out)
    world = X.make_world(cfg)
    data = X.simulate(cfg, world)
    schema = world.schema()
    schema.save(out / "schema.json")
    n_tr = write_dataset(out / "train.jsonl", data.train.records())
    n_te = write_dataset(out / "test.jsonl", data.test.records())
    rows = []
    for part, t in (("train", data.train), ("test", data.test)):
        rows += [{"case_id": int(c), "split": part, "true_cate": float(v)}
                 for c, v in zip(t.case_id, t.true_cate)]
    rows.sort(key=lambda r: r["case_id"])
    X.write_tsv(out / "truth.tsv", rows, ["case_id", "split", "true_cate"])
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    z = np.concatenate([data.train.z, data.test.z])
    y = np.concatenate([data.train.y, data.test.y])
    X.write_tsv(out / "summary.tsv", [
        {"key": "train_cases", "value": n_tr}, {"key": "test_cases", "value": n_te},
        {"key": "treated_fraction", "value": float(z.mean())},
        {"key": "purchase_rate", "value": float(y.mean())},
    ], ["key", "value"])
    log.info("wrote %d train and %d test cases to %s", n_tr, n_te, out)


def _strategy(args, default="AdaRequest") -> str:
    s = args.strategy or default
    if s not in X.STRATEGIES:
        raise X.ConfigError(f"unknown strategy {s!r}; choose from {', '.join(X.STRATEGIES)}")
    return s


def _ckpt_paths(out: Path, roles) -> dict[str, Path]:
    if len(roles) == 1:
        return {roles[0]: out}
    return {r: out.with_name(f"{out.stem}.{r.split('.')[-1]}{out.suffix}") for r in roles}


def cmd_train(args, cfg: X.ExperimentConfig) -> None:
    kind = _strategy(args)
    if kind in X.NON_ADAPTIVE:
        raise X.ConfigError(f"{kind} has no model to train")
    d, schema = _dataset(args.dataset)
    if args.out is None:
        raise X.ConfigError("--out is required")
    train_t = load_table(d / "train.jsonl", schema)
    test_t = load_table(d / "test.jsonl", schema) if (d / "test.jsonl").exists() else None
    rows = []
    seed = X.substream(cfg.seed, "train")
    models, logs = X.fit(kind, train_t, cfg, seed=seed, valid=test_t)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    for role, path in _ckpt_paths(out, list(models)).items():
        tc = X.train_config_for(kind, cfg, seed)[role]
        meta = {"strategy": kind, "role": role, "ablation": tc.ablation,
                "train_config": asdict(tc)}
        save_checkpoint(path, models[role], meta)
        for row in logs[role]:
            rows.append({"role": role, **row})
    X.write_tsv(out.with_suffix(".log.tsv"), rows)
    log.info("trained %s -> %s", kind, out)


def _load_models(paths, schema) -> tuple[str | None, dict]:
    models, kinds = {}, set()
    for p in paths or []:
        m, meta = load_checkpoint(p, expect_schema=schema)
        models[meta.get("role", meta.get("strategy"))] = m
        kinds.add(meta.get("strategy"))
    if len(kinds) > 1:
        raise X.ConfigError(f"checkpoints belong to different strategies: {sorted(kinds)}")
    return (kinds.pop() if kinds else None), models


def cmd_eval(args, cfg: X.ExperimentConfig) -> None:
    d, schema = _dataset(args.dataset)
    out = _out_dir(args.out)
    kind, models = _load_models(args.checkpoint, schema)
    if args.strategy:
        kind = _strategy(args) if kind is None or args.strategy == kind else None
        if kind is None:
            raise X.ConfigError("--strategy disagrees with the checkpoint")
    if kind is None:
        raise X.ConfigError("give --checkpoint or a non-adaptive --strategy")
    if kind in X.MODEL_BASED and not models:
        raise X.ConfigError(f"{kind} needs --checkpoint")
    test_t = load_table(d / "test.jsonl", schema)
    rep, curve = X.offline_eval(kind, models, test_t, cfg, seed=cfg.seed)
    X.write_tsv(out / "report.tsv", [{"strategy": kind, "metric": k, "value": v}
                                     for k, v in rep.items()], ["strategy", "metric", "value"])
    X.write_tsv(out / "qini_curve.tsv", [{"phi": a, "q": b, "q_rand": c} for a, b, c in curve],
                ["phi", "q", "q_rand"])
    for k, v in rep.items():
        print(f"{kind}\t{k}\t{v!r}")


def cmd_sweep(args, cfg: X.ExperimentConfig) -> None:
    out = _out_dir(args.out)
    models = {}
    strategies = list(cfg.strategies)
    if args.strategy:
        strategies = [s.strip() for s in args.strategy.split(",") if s.strip()]
        for s in strategies:
            if s not in X.STRATEGIES and s != "Oracle":
                raise X.ConfigError(f"unknown strategy {s!r}")
    schema = X.make_world(cfg).schema()
    for p in args.checkpoint or []:
        m, meta = load_checkpoint(p, expect_schema=schema)
        models[meta.get("role", meta.get("strategy"))] = m
    roles = {"TwoModel": ("TwoModel.t", "TwoModel.c")}
    for s in strategies:
        if s in X.MODEL_BASED and not all(r in models for r in roles.get(s, (s,))):
            raise X.ConfigError(f"{s} needs a --checkpoint")
    thetas = [int(t) for t in (args.theta_grid or "50,100,200").split(",")]
    if any(t < 0 for t in thetas):
        raise X.ConfigError("theta values must be >= 0")
    world = X.make_world(cfg)
    rows = X.sweep(cfg, world, models, thetas, strategies)
    X.write_tsv(out / "sweep.tsv", rows)
    if args.plot:
        from .plots import gmv_qps_svg
        gmv_qps_svg(rows, out / "gmv_qps.svg")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adarequest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output directory or checkpoint path")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("simgen", help="simulate a randomized-request dataset")
    common(sp)
    sp.add_argument("--n-cases", type=int)
    sp = sub.add_parser("train", help="train one model-based strategy")
    common(sp)
    sp.add_argument("--dataset", help="simgen output directory")
    sp.add_argument("--strategy", help="AdaRequest (default) or a model baseline")
    sp = sub.add_parser("eval", help="offline metrics on the test split")
    common(sp)
    sp.add_argument("--dataset")
    sp.add_argument("--checkpoint", action="append")
    sp.add_argument("--strategy")
    sp = sub.add_parser("sweep", help="policy simulation over a theta grid")
    common(sp)
    sp.add_argument("--checkpoint", action="append")
    sp.add_argument("--strategy", help="comma-separated roster (default: config)")
    sp.add_argument("--theta-grid", help="comma-separated budgets per period")
    sp.add_argument("--plot", action="store_true", help="also write an SVG of GMV vs QPS")
    return p


COMMANDS = {"simgen": cmd_simgen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = X.load_config(args.config, seed=args.seed)
        if getattr(args, "n_cases", None):
            cfg = replace(cfg, n_cases=args.n_cases)
        COMMANDS[args.command](args, cfg)
    except X.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SchemaError, CheckpointError, MetricError, OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
