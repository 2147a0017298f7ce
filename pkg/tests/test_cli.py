import json

import numpy as np
import pytest

from adarequest import cli
from adarequest import experiment as X

TINY = {
    "seed": 1, "n_cases": 300,
    "sim": {"n_users": 40, "n_items": 300, "n_categories": 6, "n_brands": 8, "page_size": 20,
            "pages_per_session": 3, "window": 10, "mc_intents": 64, "quad_nodes": 16,
            "max_exp": 8, "max_sclk": 4, "max_clk": 6, "max_cands": 6,
            "click_intercept": -4.0, "purchase_intercept": -3.0, "period_length": 50},
    "train": {"epochs": 1, "batch_size": 64, "hidden": [8]},
    "budget": {"period_length": 50, "theta": 10},
    "eval": {"horizon": 12, "seeds": 2, "pilot_horizon": 8},
}


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_seed_is_mandatory():
    with pytest.raises(X.ConfigError):
        X.ExperimentConfig.from_dict({})
    assert X.ExperimentConfig.from_dict({}, seed=4).seed == 4


def test_unknown_and_mistyped_keys():
    with pytest.raises(X.ConfigError):
        X.ExperimentConfig.from_dict({"seed": 0, "simm": {}})
    with pytest.raises(X.ConfigError):
        X.ExperimentConfig.from_dict({"seed": 0, "train": {"epochs": "3"}})
    with pytest.raises(X.ConfigError):
        X.ExperimentConfig.from_dict({"seed": 0, "strategies": ["Nope"]})
    c = X.ExperimentConfig.from_dict({"seed": 0, "train": {"lr": 1}})
    assert c.train.lr == 1.0 and isinstance(c.train.lr, float)


def test_env_overrides():
    env = {"ADAREQ_TRAIN__EPOCHS": "7", "ADAREQ_SIM__PAGE_SIZE": "30", "OTHER": "x",
           "ADAREQ_TRAIN__CUBE__HIDDEN_BEH": "5"}
    c = X.load_config(None, seed=2, environ=env)
    assert c.train.epochs == 7 and c.sim.page_size == 30 and c.train.cube.hidden_beh == 5
    # explicit --seed beats the environment
    assert X.load_config(None, seed=2, environ={"ADAREQ_SEED": "9"}).seed == 2
    assert X.load_config(None, environ={"ADAREQ_SEED": "9"}).seed == 9


def test_config_roundtrip():
    c = X.ExperimentConfig.from_dict(TINY)
    assert X.ExperimentConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_substreams_distinct_and_stable():
    a = X.substream(0, "train")
    assert a == X.substream(0, "train")
    assert len({X.substream(0, n) for n in ("train", "simgen", "world", "eval0")}) == 4
    assert X.substream(1, "train") != a


def test_train_configs_per_kind():
    c = X.ExperimentConfig.from_dict(TINY)
    roles = X.train_config_for("TwoModel", c, 3)
    assert set(roles) == {"TwoModel.t", "TwoModel.c"}
    assert {r.subset for r in roles.values()} == {"treatment", "control"}
    assert X.train_config_for("AdaRequest", c, 3)["AdaRequest"].model_spec().backbone == "cube"
    for kind in ("Greedy", "ClassTrans", "OneModel"):
        tc = X.train_config_for(kind, c, 3)[kind]
        assert tc.model_spec().backbone == "meanpool" and tc.seed == 3
    with pytest.raises(X.ConfigError):
        X.train_config_for("NoR", c, 0)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def dataset(cfg_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "d"
    assert cli.main(["simgen", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


def test_simgen_outputs(dataset):
    for name in ("train.jsonl", "test.jsonl", "schema.json", "truth.tsv", "config.json"):
        assert (dataset / name).exists()
    n_tr = sum(1 for _ in open(dataset / "train.jsonl"))
    n_te = sum(1 for _ in open(dataset / "test.jsonl"))
    assert n_tr + n_te == 300
    assert abs(n_te / 300 - 0.15) < 0.08
    truth = (dataset / "truth.tsv").read_text().splitlines()
    assert truth[0] == "case_id\tsplit\ttrue_cate" and len(truth) == 301


def test_train_eval_roundtrip(cfg_path, dataset, tmp_path, capsys):
    ck = tmp_path / "ada.ckpt"
    assert cli.main(["train", "--config", str(cfg_path), "--dataset", str(dataset),
                     "--out", str(ck)]) == 0
    log = (tmp_path / "ada.log.tsv").read_text().splitlines()
    assert log[0].split("\t")[:3] == ["role", "epoch", "loss"] and len(log) == 2
    assert cli.main(["eval", "--config", str(cfg_path), "--dataset", str(dataset),
                     "--checkpoint", str(ck), "--out", str(tmp_path / "ev")]) == 0
    rep = (tmp_path / "ev" / "report.tsv").read_text().splitlines()[1:]
    metrics = [r.split("\t")[1] for r in rep]
    assert metrics == ["qini_auuc", "qini_50", "mse_ystar", "auc", "mse", "log_loss"]
    curve = (tmp_path / "ev" / "qini_curve.tsv").read_text().splitlines()
    assert len(curve) == 101
    assert "AdaRequest\tqini_auuc" in capsys.readouterr().out


def test_ablation_flag_in_checkpoint(cfg_path, dataset, tmp_path, monkeypatch):
    from adarequest.crest import load_checkpoint

    monkeypatch.setenv("ADAREQ_TRAIN__NO_UPLIFT_GREEDY", "true")
    ck = tmp_path / "abl.ckpt"
    assert cli.main(["train", "--config", str(cfg_path), "--dataset", str(dataset),
                     "--out", str(ck)]) == 0
    _, meta = load_checkpoint(ck)
    assert meta["ablation"] == "no_uplift_greedy" and meta["strategy"] == "AdaRequest"


def test_two_model_checkpoints(cfg_path, dataset, tmp_path):
    ck = tmp_path / "two.ckpt"
    assert cli.main(["train", "--config", str(cfg_path), "--dataset", str(dataset),
                     "--strategy", "TwoModel", "--out", str(ck)]) == 0
    t, c = tmp_path / "two.t.ckpt", tmp_path / "two.c.ckpt"
    assert t.exists() and c.exists()
    assert cli.main(["eval", "--config", str(cfg_path), "--dataset", str(dataset),
                     "--checkpoint", str(t), "--checkpoint", str(c),
                     "--out", str(tmp_path / "ev")]) == 0


def test_eval_non_adaptive_needs_no_checkpoint(cfg_path, dataset, tmp_path):
    assert cli.main(["eval", "--config", str(cfg_path), "--dataset", str(dataset),
                     "--strategy", "PoolR", "--out", str(tmp_path / "ev")]) == 0


def test_sweep_outputs(cfg_path, tmp_path):
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(cfg_path), "--strategy", "NoR,StaticR,RandR",
                     "--theta-grid", "5", "--out", str(out)]) == 0
    rows = (out / "sweep.tsv").read_text().splitlines()
    header = rows[0].split("\t")
    assert {"strategy", "theta", "seed", "qps", "gmv", "pr_in_10", "pr_in_20"} <= set(header)
    assert len(rows) == 1 + 3 * 2


@pytest.mark.parametrize("argv,code", [
    (["simgen", "--out", "{tmp}/x"], 2),                                       # no seed
    (["train", "--seed", "0", "--strategy", "Bogus", "--dataset", "{tmp}", "--out", "{tmp}/m"], 2),
    (["train", "--seed", "0", "--strategy", "NoR", "--dataset", "{tmp}", "--out", "{tmp}/m"], 2),
    (["eval", "--seed", "0", "--dataset", "{tmp}/missing", "--strategy", "NoR",
      "--out", "{tmp}/e"], 3),
    (["eval", "--seed", "0", "--dataset", "{data}", "--checkpoint", "{tmp}/nope.ckpt",
      "--out", "{tmp}/e"], 3),
    (["sweep", "--seed", "0", "--strategy", "AdaRequest", "--out", "{tmp}/s"], 2),
    (["sweep", "--seed", "0", "--strategy", "NoR", "--theta-grid", "-1", "--out", "{tmp}/s"], 2),
])
def test_exit_codes(argv, code, tmp_path, dataset, capsys):
    argv = [a.format(tmp=tmp_path, data=dataset) for a in argv]
    assert cli.main(argv) == code
    assert capsys.readouterr().err.strip()


def test_bad_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert cli.main(["simgen", "--config", str(p), "--seed", "0", "--out", str(tmp_path)]) == 2
    assert cli.main(["simgen", "--config", str(tmp_path / "none.json"), "--seed", "0",
                     "--out", str(tmp_path)]) == 2


def test_numeric_failure_exit_code(cfg_path, dataset, tmp_path, monkeypatch):
    from adarequest import crest as R

    orig = R.UpliftModel.loss
    monkeypatch.setattr(R.UpliftModel, "loss", lambda self, b, *a, **k: orig(self, b) * np.nan)
    assert cli.main(["train", "--config", str(cfg_path), "--dataset", str(dataset),
                     "--out", str(tmp_path / "m.ckpt")]) == 4


def test_pipeline_byte_identical(cfg_path, tmp_path):
    def run(root):
        d, ck = root / "d", root / "m.ckpt"
        base = ["--config", str(cfg_path)]
        assert cli.main(["simgen", *base, "--out", str(d)]) == 0
        assert cli.main(["train", *base, "--dataset", str(d), "--out", str(ck)]) == 0
        assert cli.main(["eval", *base, "--dataset", str(d), "--checkpoint", str(ck),
                         "--out", str(root / "e")]) == 0
        return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    assert a.keys() == b.keys() and all(a[k] == b[k] for k in a)


def test_offline_study_and_warm_sweep():
    cfg = X.ExperimentConfig.from_dict(TINY)
    world = X.make_world(cfg)
    data = X.simulate(cfg, world)
    res = X.offline_study(cfg, data, kinds=["StaticR", "Greedy"], ablations=["w/o Uplift"],
                          seeds=[0, 1])
    assert set(res) == {"Oracle", "StaticR", "Greedy", "w/o Uplift"}
    assert len(res["Greedy"]) == 2 and len(res["Oracle"]) == 1
    # rule-based scores do not depend on the training seed
    assert res["StaticR"][0] == res["StaticR"][1]
    models, _ = X.fit("AdaRequest", data.train, cfg)
    warm = X.pilot_scores("AdaRequest", models, cfg, world)
    assert 0 < len(warm) <= cfg.budget.period_length
    rows = X.sweep(cfg, world, models, [3], ["NoR", "RandR", "AdaRequest"], seeds=[0])
    names = [r["strategy"] for r in rows]
    assert names == ["NoR", "RandR", "AdaRequest", "RandR@AdaRequest"]
    ada = rows[2]
    assert ada["inserted"] <= 3 * (ada["decision_points"] // cfg.budget.period_length + 1)
