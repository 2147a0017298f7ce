import zipfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adarequest import crest as R
from adarequest import features as F
from adarequest import nn
from adarequest.cube import CubeConfig
from adarequest.nn import autograd as ag

from _factories import make_record, small_schema


@pytest.fixture(scope="module")
def schema():
    return small_schema()


@pytest.fixture(scope="module")
def table(schema):
    rng = np.random.default_rng(0)
    recs = [make_record(rng, schema, case_id=i, z=i % 2) for i in range(64)]
    return F.CaseTable.from_records(recs, schema)


def _model(schema, seed=0, **kw):
    return R.UpliftModel(schema, R.TrainConfig(**kw).model_spec(), np.random.default_rng(seed))


def test_prediction_example():
    p = R.make_prediction(np.array([0.0]), np.array([np.log(3.0)]))
    assert p.p_ctrl[0] == 0.5
    assert p.p_trt[0] == pytest.approx(0.75, abs=1e-15)
    assert p.cate_hat[0] == pytest.approx(0.25, abs=1e-15)
    assert p.score[0] == pytest.approx(np.log(3.0))


def test_invariants_on_random_inputs():
    rng = np.random.default_rng(1)
    l = rng.normal(scale=8, size=10_000)
    v = rng.normal(scale=8, size=10_000)
    v[:100] = 0.0
    v[100:200] = rng.normal(scale=1e-12, size=100)
    p = R.make_prediction(l, v)
    assert np.array_equal(p.p_ctrl, ag.sigmoid_np(l))
    assert np.array_equal(p.p_trt, ag.sigmoid_np(l + v))
    assert np.array_equal(np.sign(p.cate_hat), np.sign(v))
    assert np.allclose(p.cate_hat, p.p_trt - p.p_ctrl, atol=1e-14)


@given(st.floats(-700, 700), st.floats(-700, 700))
def test_sigmoid_diff_sign(l, v):
    d = float(R.sigmoid_diff(l, v))
    assert np.isfinite(d)
    if np.sign(d) != np.sign(v):
        # only allowed when the exact value is below the float64 range
        assert d == 0.0
        assert np.log(abs(v) / 4) - abs(l) / 2 - abs(l + v) / 2 < -700


def test_crest_loss_per_group():
    l = nn.Tensor(np.array([0.3, -0.2]))
    v = nn.Tensor(np.array([1.0, 0.5]))
    z, y = np.array([0, 1]), np.array([1, 0])
    loss = R.crest_loss(l, v, z, y).item()
    p0 = 1 / (1 + np.exp(-0.3))
    p1 = 1 / (1 + np.exp(-0.3))  # sigmoid(-0.2 + 0.5)
    expect = 0.5 * (-np.log(p0) - np.log(1 - p1))
    assert loss == pytest.approx(expect, abs=1e-12)


def test_control_cases_do_not_train_uplift(schema, table):
    spec = R.ModelSpec("cube", "crest", True, [8], CubeConfig(), uplift_zero_init=False)
    m = R.UpliftModel(schema, spec, np.random.default_rng(0))
    idx = np.nonzero(table.z == 0)[0][:8]
    loss = m.loss(table.batch(idx))
    loss.backward()
    for name, t in m.named_parameters():
        if name.startswith("uplift_net"):
            assert t.grad is None or np.all(t.grad == 0), name


def test_uplift_head_starts_at_zero(schema, table):
    m = _model(schema)
    pred = m.predict(table.batch(np.arange(5)))
    assert np.all(pred.v_uplift == 0) and np.all(pred.cate_hat == 0)


def test_full_model_gradient_check(schema, table):
    spec = R.ModelSpec("cube", "crest", True, [6], CubeConfig(hidden_beh=3, hidden_item=4),
                       uplift_zero_init=False)
    m = R.UpliftModel(schema, spec, np.random.default_rng(3))
    b = table.batch(np.array([0, 1]))
    err = nn.grad_check(lambda: m.loss(b), m.parameters(), probes=6,
                        rng=np.random.default_rng(0), floor=1e-3)
    assert err < 1e-4


@pytest.mark.parametrize("flag,head", [
    ("class_transform_head", "class_transform"), ("one_model_condition", "one_model"),
    ("no_uplift_greedy", "single"),
])
def test_ablation_heads(schema, table, flag, head):
    cfg = R.TrainConfig(**{flag: True})
    assert cfg.ablation == flag
    spec = cfg.model_spec()
    assert spec.head == head
    m = R.UpliftModel(schema, spec, np.random.default_rng(0))
    pred = m.predict(table.batch(np.arange(6)))
    assert pred.score.shape == (6,) and np.all(np.isfinite(pred.score))


def test_ablation_flags_exclusive():
    with pytest.raises(ValueError):
        R.TrainConfig(no_cube_meanpool=True, class_transform_head=True)
    with pytest.raises(ValueError):
        R.TrainConfig.from_dict({"epochs": 1, "bogus": 2})
    spec = R.TrainConfig(no_cube_meanpool=True).model_spec()
    assert spec.backbone == "cube" and spec.cube.pooling == "mean"
    assert R.TrainConfig(backbone="meanpool").model_spec().backbone == "meanpool"


def test_one_model_score_is_signal_contrast(schema, table):
    m = _model(schema, one_model_condition=True)
    b = table.batch(np.arange(4))
    h = m.heads(b)
    pred = m.predict(b)
    assert np.allclose(pred.cate_hat, ag.sigmoid_np(h["l1"].data) - ag.sigmoid_np(h["l0"].data))


def test_class_transform_recovers_uplift():
    rng = np.random.default_rng(4)
    n = 200_000
    z = (rng.random(n) < 0.5).astype(int)
    y = (rng.random(n) < 0.3 + 0.1 * z).astype(int)
    t = R.class_transform_target(z, y)
    est = R.class_transform_uplift(t.mean())
    se = 2 * t.std() / np.sqrt(n)
    assert abs(est - 0.1) < 3 * se
    assert R.class_transform_target([1, 1, 0, 0], [1, 0, 1, 0]).tolist() == [1, 0, 0, 1]


def test_class_transform_prediction_has_no_probabilities(schema, table):
    pred = _model(schema, class_transform_head=True).predict(table.batch(np.arange(3)))
    assert np.all(np.isnan(pred.p_ctrl))
    assert np.all(np.isfinite(pred.cate_hat))


def test_no_share_backbone_independent(schema, table):
    m = _model(schema, no_backbone_share=True)
    names = [n for n, _ in m.named_parameters()]
    assert any(n.startswith("backbone_u.") for n in names)
    b = table.batch(np.arange(4))
    before = m.predict(b)
    for t in m.backbone_u.parameters():
        t.data += 0.5
    after = m.predict(b)
    assert np.array_equal(before.p_ctrl, after.p_ctrl)


def test_training_determinism(table):
    cfg = R.TrainConfig(epochs=2, batch_size=16, seed=7, hidden=[8])
    a = R.train(table, cfg)
    b = R.train(table, cfg)
    for (n1, t1), (n2, t2) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert n1 == n2 and np.array_equal(t1.data, t2.data)
    assert a.log == b.log
    c = R.train(table, R.TrainConfig(epochs=2, batch_size=16, seed=8, hidden=[8]))
    assert not np.array_equal(c.model.parameters()[0].data, a.model.parameters()[0].data)


def test_training_lowers_loss(table):
    r = R.train(table, R.TrainConfig(epochs=6, batch_size=16, hidden=[8], lr=5e-3), valid=table)
    assert r.log[-1]["loss"] < r.log[0]["loss"]
    assert "qini_auuc" in r.log[0]


def test_train_rejects_single_group(schema):
    rng = np.random.default_rng(5)
    t = F.CaseTable.from_records([make_record(rng, schema, case_id=i, z=1) for i in range(8)], schema)
    with pytest.raises(ValueError):
        R.train(t, R.TrainConfig(epochs=1))
    # one-group fits are allowed for the two-model baseline
    R.train(t, R.TrainConfig(epochs=1, subset="treatment"))
    with pytest.raises(ValueError):
        R.train(t, R.TrainConfig(epochs=1, subset="control"))


def test_non_finite_loss_raises(table):
    cfg = R.TrainConfig(epochs=1, batch_size=16, hidden=[8])
    orig = R.UpliftModel.loss

    def bad(self, batch, *a, **k):
        return orig(self, batch, *a, **k) * float("nan")

    R.UpliftModel.loss = bad
    try:
        with pytest.raises(R.NumericError):
            R.train(table, cfg)
    finally:
        R.UpliftModel.loss = orig


def test_checkpoint_roundtrip(tmp_path, schema, table):
    m = R.train(table, R.TrainConfig(epochs=1, batch_size=32, hidden=[8])).model
    path = tmp_path / "m.ckpt"
    R.save_checkpoint(path, m, {"note": "x"})
    m2, meta = R.load_checkpoint(path, expect_schema=schema, expect_spec=m.spec)
    assert meta == {"note": "x"}
    b = table.batch()
    assert np.array_equal(m.predict(b).score, m2.predict(b).score)
    # byte-identical on re-save
    R.save_checkpoint(tmp_path / "m2.ckpt", m2, {"note": "x"})
    assert (tmp_path / "m2.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_corruption(tmp_path, schema):
    m = _model(schema)
    path = tmp_path / "m.ckpt"
    R.save_checkpoint(path, m)
    with zipfile.ZipFile(path) as zf:
        meta, blob = zf.read("meta.json"), bytearray(zf.read("params.f64"))
    blob[10] ^= 0xFF
    bad = tmp_path / "bad.ckpt"
    with zipfile.ZipFile(bad, "w") as zf:
        zf.writestr("meta.json", meta)
        zf.writestr("params.f64", bytes(blob))
    with pytest.raises(R.CheckpointError):
        R.load_checkpoint(bad)
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes(path.read_bytes()[:100])
    with pytest.raises(R.CheckpointError):
        R.load_checkpoint(trunc)


def test_checkpoint_cross_architecture(tmp_path, schema):
    path = tmp_path / "m.ckpt"
    R.save_checkpoint(path, _model(schema))
    other = R.TrainConfig(no_cube_meanpool=True).model_spec()
    with pytest.raises(R.CheckpointError):
        R.load_checkpoint(path, expect_spec=other)
    with pytest.raises(R.CheckpointError):
        R.load_checkpoint(path, expect_schema=small_schema(max_exp=7))


def test_predict_table_matches_batches(table):
    m = R.train(table, R.TrainConfig(epochs=1, batch_size=32, hidden=[8])).model
    full = m.predict(table.batch())
    chunked = m.predict_table(table, batch_size=10)
    assert np.allclose(full.score, chunked.score, atol=1e-12)
