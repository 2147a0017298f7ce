"""Uplift heads on top of the behavior encoder, training and checkpoints.

The default architecture shares one backbone between a Control-net, which
predicts the purchase logit without an inserted request, and an Uplift-net,
which predicts the logit increment a request causes::

    p_ctrl = sigmoid(l)      p_trt = sigmoid(l + v)      cate = p_trt - p_ctrl

Control cases are fitted on ``p_ctrl`` and treatment cases on ``p_trt``.
Other heads (class transformation, one conditioned model, a single purchase
head) reuse the same backbones so baselines and ablations differ only where
they are meant to.
"""

from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .cube import Cube, CubeConfig, CubeOutput, MeanPoolEncoder
from .features import Batch, CaseTable, FeatureEmbedder, SchemaConfig
from .nn import autograd as ag

CHECKPOINT_VERSION = 1
HEADS = ("crest", "class_transform", "one_model", "single")
ABLATIONS = ("no_cube_meanpool", "no_backbone_share", "class_transform_head",
             "one_model_condition", "no_uplift_greedy")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(ValueError):
    """Unreadable, corrupted or incompatible checkpoint."""


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass
class ModelSpec:
    """Architecture: backbone kind, head kind and whether the two heads share it."""

    backbone: str = "cube"
    head: str = "crest"
    share_backbone: bool = True
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    cube: CubeConfig = field(default_factory=CubeConfig)
    uplift_zero_init: bool = True

    def __post_init__(self):
        if isinstance(self.cube, dict):
            self.cube = CubeConfig(**self.cube)
        if self.backbone not in ("cube", "meanpool"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if not self.share_backbone and self.head != "crest":
            raise ValueError("separate backbones only apply to the two-net head")


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 256
    lr: float = 2e-3
    seed: int = 0
    no_cube_meanpool: bool = False
    no_backbone_share: bool = False
    class_transform_head: bool = False
    one_model_condition: bool = False
    no_uplift_greedy: bool = False
    # baselines swap the backbone without counting as an ablation
    backbone: str | None = None
    # fit only one group (two-model baseline)
    subset: str | None = None
    stop_grad_trt: bool = False
    pos_weight: float = 1.0
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    cube: CubeConfig = field(default_factory=CubeConfig)

    def __post_init__(self):
        if isinstance(self.cube, dict):
            self.cube = CubeConfig(**self.cube)
        active = [a for a in ABLATIONS if getattr(self, a)]
        if len(active) > 1:
            raise ValueError(f"at most one ablation flag may be set, got {active}")
        if self.subset not in (None, "control", "treatment"):
            raise ValueError(f"unknown subset {self.subset!r}")

    @property
    def ablation(self) -> str | None:
        active = [a for a in ABLATIONS if getattr(self, a)]
        return active[0] if active else None

    def model_spec(self) -> ModelSpec:
        backbone = self.backbone or "cube"
        cube = self.cube
        if self.no_cube_meanpool:
            cube = replace(cube, pooling="mean")
        head = "crest"
        if self.class_transform_head:
            head = "class_transform"
        elif self.one_model_condition:
            head = "one_model"
        elif self.no_uplift_greedy or self.subset is not None:
            head = "single"
        return ModelSpec(backbone=backbone, head=head, share_backbone=not self.no_backbone_share,
                         hidden=list(self.hidden), cube=cube)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------

@dataclass
class UpliftPrediction:
    logits_ctrl: np.ndarray
    v_uplift: np.ndarray
    p_ctrl: np.ndarray
    p_trt: np.ndarray
    cate_hat: np.ndarray
    # decision score: v_uplift for the two-net head, estimated uplift or purchase
    # probability for the others
    score: np.ndarray

    def observed_p(self, z: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(z) == 1, self.p_trt, self.p_ctrl)

    def take(self, idx) -> "UpliftPrediction":
        return UpliftPrediction(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def sigmoid_diff(l: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``sigmoid(l + v) - sigmoid(l)`` without cancellation; its sign is the sign of ``v``."""
    l, v = np.asarray(l, dtype=float), np.asarray(v, dtype=float)
    with np.errstate(over="ignore"):
        return np.sinh(0.5 * v) / (2.0 * np.cosh(0.5 * l) * np.cosh(0.5 * (l + v)))


def make_prediction(logits_ctrl, v_uplift, score=None) -> UpliftPrediction:
    l = np.asarray(logits_ctrl, dtype=float)
    v = np.asarray(v_uplift, dtype=float)
    p_c, p_t = ag.sigmoid_np(l), ag.sigmoid_np(l + v)
    cate = sigmoid_diff(l, v)
    return UpliftPrediction(l, v, p_c, p_t, cate, v if score is None else np.asarray(score, float))


def class_transform_target(z, y, p_treat: float = 0.5) -> np.ndarray:
    """``Z = y z + (1 - y)(1 - z)``: 1 for treated buyers and for control non-buyers."""
    if not 0.0 < p_treat < 1.0:
        raise ValueError("propensity must lie strictly between 0 and 1")
    z, y = np.asarray(z), np.asarray(y)
    return (y * z + (1 - y) * (1 - z)).astype(float)


def class_transform_uplift(p_z, p_treat: float = 0.5) -> np.ndarray:
    """Uplift implied by ``P(Z=1|x)``; exact for balanced assignment."""
    if not 0.0 < p_treat < 1.0:
        raise ValueError("propensity must lie strictly between 0 and 1")
    return 2.0 * np.asarray(p_z, dtype=float) - 1.0


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def fuse(cube_out: CubeOutput, user_vec: nn.Tensor, context_vec: nn.Tensor) -> nn.Tensor:
    """``cands_emb || M_exp || M_sclk || M_clk || F_user || F_context``."""
    return ag.concat(cube_out.parts() + [user_vec, context_vec], axis=-1)


class Backbone(nn.Module):
    def __init__(self, schema: SchemaConfig, spec: ModelSpec, rng: np.random.Generator):
        self.emb = FeatureEmbedder(schema, rng)
        if spec.backbone == "cube":
            self.encoder = Cube(schema, spec.cube, rng)
        else:
            self.encoder = MeanPoolEncoder(schema)
        self.fusion_dim = sum(self.encoder.out_dims) + schema.user_dim + schema.context_dim

    def encode(self, batch: Batch) -> CubeOutput:
        return self.encoder(self.emb, batch)

    def __call__(self, batch: Batch) -> nn.Tensor:
        return fuse(self.encode(batch), self.emb.user_vec(batch), self.emb.context_vec(batch))


class UpliftModel(nn.Module):
    def __init__(self, schema: SchemaConfig, spec: ModelSpec, rng: np.random.Generator):
        self.schema = schema
        self.spec = spec
        self.backbone = Backbone(schema, spec, rng)
        d = self.backbone.fusion_dim
        act = "tanh"
        if spec.head == "crest":
            if not spec.share_backbone:
                self.backbone_u = Backbone(schema, spec, rng)
            self.control_net = nn.MLP(d, spec.hidden, 1, rng, act)
            self.uplift_net = nn.MLP(d, spec.hidden, 1, rng, act,
                                     out_init="zero" if spec.uplift_zero_init else "glorot")
        elif spec.head == "one_model":
            self.net = nn.MLP(d + 1, spec.hidden, 1, rng, act)
        else:
            self.net = nn.MLP(d, spec.hidden, 1, rng, act)

    # -- forward pieces -----------------------------------------------------
    def _flat(self, t: nn.Tensor) -> nn.Tensor:
        return ag.reshape(t, (t.shape[0],))

    def heads(self, batch: Batch) -> dict[str, nn.Tensor]:
        """Raw logits as tensors; keys depend on the head kind."""
        spec = self.spec
        f = self.backbone(batch)
        if spec.head == "crest":
            f_u = f if spec.share_backbone else self.backbone_u(batch)
            return {"l": self._flat(self.control_net(f)), "v": self._flat(self.uplift_net(f_u))}
        if spec.head == "one_model":
            B = len(batch)
            l0 = self.net(ag.concat([f, nn.Tensor(np.zeros((B, 1)))], axis=-1))
            l1 = self.net(ag.concat([f, nn.Tensor(np.ones((B, 1)))], axis=-1))
            return {"l0": self._flat(l0), "l1": self._flat(l1)}
        return {"g": self._flat(self.net(f))}

    def loss(self, batch: Batch, stop_grad_trt: bool = False, pos_weight: float = 1.0
             ) -> nn.Tensor:
        spec = self.spec
        z, y = batch.z, batch.y
        if spec.head == "crest":
            h = self.heads(batch)
            l = h["l"]
            if stop_grad_trt:
                l = l * (1.0 - z) + nn.Tensor(l.data) * z
            logit = l + h["v"] * z
            target = y
        elif spec.head == "one_model":
            f = self.backbone(batch)
            logit = self._flat(self.net(ag.concat([f, nn.Tensor(z[:, None])], axis=-1)))
            target = y
        elif spec.head == "class_transform":
            logit = self.heads(batch)["g"]
            target = class_transform_target(z, y)
        else:
            logit = self.heads(batch)["g"]
            target = y
        return nn.bce_with_logits(logit, target, pos_weight=pos_weight).mean()

    def predict(self, batch: Batch) -> UpliftPrediction:
        h = {k: v.data for k, v in self.heads(batch).items()}
        head = self.spec.head
        if head == "crest":
            return make_prediction(h["l"], h["v"])
        if head == "one_model":
            pred = make_prediction(h["l0"], h["l1"] - h["l0"])
            pred.score = pred.cate_hat
            return pred
        if head == "class_transform":
            u = class_transform_uplift(ag.sigmoid_np(h["g"]))
            nan = np.full_like(u, np.nan)
            return UpliftPrediction(nan, nan, nan, nan, u, u)
        # single purchase head: no counterfactual, score is the purchase probability
        p = ag.sigmoid_np(h["g"])
        zero = np.zeros_like(p)
        return UpliftPrediction(h["g"], zero, p, p, zero, p)

    def predict_table(self, table: CaseTable, batch_size: int = 1024) -> UpliftPrediction:
        parts = [self.predict(table.batch(np.arange(i, min(i + batch_size, len(table)))))
                 for i in range(0, len(table), batch_size)]
        if not parts:
            raise ValueError("empty table")
        return UpliftPrediction(*(np.concatenate([getattr(p, f) for p in parts])
                                  for f in UpliftPrediction.__dataclass_fields__))


def predict(f_fusion: nn.Tensor, control_net: nn.MLP, uplift_net: nn.MLP) -> UpliftPrediction:
    """Two-net prediction from a fusion vector batch ``[B, d]``."""
    l = control_net(f_fusion).data[..., 0]
    v = uplift_net(f_fusion).data[..., 0]
    return make_prediction(l, v)


def crest_loss(logits_ctrl: nn.Tensor, v_uplift: nn.Tensor, z, y) -> nn.Tensor:
    """Mean over cases of ``bce(p_ctrl, y)`` for ``z=0`` and ``bce(p_trt, y)`` for ``z=1``."""
    z = np.asarray(z, dtype=float)
    return nn.bce_with_logits(logits_ctrl + v_uplift * z, y).mean()


def infer_uplift(model: UpliftModel, batch: Batch) -> UpliftPrediction:
    return model.predict(batch)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: UpliftModel
    config: TrainConfig
    log: list[dict]


def train(table: CaseTable, cfg: TrainConfig, valid: CaseTable | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Seeded mini-batch Adam over shuffled mixed-group batches."""
    from . import metrics

    z = table.z
    idx_all = np.arange(len(table))
    if cfg.subset is not None:
        idx_all = idx_all[z == (1 if cfg.subset == "treatment" else 0)]
        if len(idx_all) == 0:
            raise ValueError(f"no {cfg.subset} cases to train on")
    elif z.min() == z.max():
        raise ValueError("dataset holds a single group; uplift is not learnable")
    spec = cfg.model_spec()
    init_rng = np.random.default_rng([cfg.seed, 1])
    shuffle_rng = np.random.default_rng([cfg.seed, 2])
    model = UpliftModel(table.schema, spec, init_rng)
    params = model.parameters()
    opt = nn.Adam(params, lr=cfg.lr)
    log = []
    for epoch in range(cfg.epochs):
        order = idx_all[shuffle_rng.permutation(len(idx_all))]
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            bidx = np.sort(order[start:start + cfg.batch_size])
            batch = table.batch(bidx)
            opt.zero_grad()
            loss = model.loss(batch, cfg.stop_grad_trt, cfg.pos_weight)
            val = loss.item()
            if not np.isfinite(val):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += val * len(bidx)
            count += len(bidx)
        row = {"epoch": epoch + 1, "loss": total / count}
        if valid is not None and len(valid):
            pred = model.predict_table(valid)
            row["qini_auuc"] = metrics.qini_auuc(pred.score, valid.z, valid.y, valid.case_id)
        log.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return TrainResult(model, cfg, log)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _spec_dict(spec: ModelSpec) -> dict:
    d = asdict(spec)
    return d


def architecture_hash(schema: SchemaConfig, spec: ModelSpec, shapes: dict) -> str:
    blob = json.dumps({"schema": schema.to_dict(), "spec": _spec_dict(spec),
                       "shapes": {k: list(v) for k, v in shapes.items()}}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(path: str | Path, model: UpliftModel, meta: dict | None = None) -> None:
    """Zip container: ``meta.json`` plus one raw little-endian float64 blob in order."""
    ps = model.param_set()
    shapes = ps.shapes()
    flat = np.concatenate([t.data.reshape(-1) for t in ps.tensors()]).astype("<f8")
    blob = flat.tobytes()
    header = {
        "version": CHECKPOINT_VERSION,
        "schema": model.schema.to_dict(),
        "spec": _spec_dict(model.spec),
        "names": ps.names(),
        "shapes": {k: list(v) for k, v in shapes.items()},
        "arch_hash": architecture_hash(model.schema, model.spec, shapes),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(header, sort_keys=True, indent=1))
        info = zipfile.ZipInfo("params.f64", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, blob)


def load_checkpoint(path: str | Path, expect_schema: SchemaConfig | None = None,
                    expect_spec: ModelSpec | None = None) -> tuple[UpliftModel, dict]:
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("meta.json"))
            blob = zf.read("params.f64")
    except (zipfile.BadZipFile, KeyError, OSError, json.JSONDecodeError, zipfile.LargeZipFile) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')} not supported")
    if hashlib.sha256(blob).hexdigest() != header.get("sha256"):
        raise CheckpointError("parameter payload does not match its checksum")
    schema = SchemaConfig.from_dict(header["schema"])
    spec = ModelSpec(**header["spec"])
    if expect_schema is not None and expect_schema.to_dict() != schema.to_dict():
        raise CheckpointError("checkpoint schema differs from the dataset schema")
    if expect_spec is not None and _spec_dict(expect_spec) != _spec_dict(spec):
        raise CheckpointError("checkpoint architecture differs from the requested one")
    model = UpliftModel(schema, spec, np.random.default_rng(0))
    ps = model.param_set()
    if ps.names() != header["names"] or {k: list(v) for k, v in ps.shapes().items()} != header["shapes"]:
        raise CheckpointError("parameter layout does not match the architecture")
    if architecture_hash(schema, spec, ps.shapes()) != header["arch_hash"]:
        raise CheckpointError("architecture hash mismatch")
    flat = np.frombuffer(blob, dtype="<f8")
    if flat.size != ps.count():
        raise CheckpointError("parameter payload has the wrong size")
    off = 0
    for t in ps.tensors():
        n = t.data.size
        t.data[...] = flat[off:off + n].reshape(t.shape)
        off += n
    return model, header["meta"]
