"""Case records, bucketization, embedding tables and the dataset file format.

Two representations of the same data live here:

* :class:`CaseRecord` and friends: one decision point as plain dataclasses;
  this is what the JSONL dataset files hold.
* :class:`CaseTable`: a columnar, left-padded store of many records.  Static
  item attributes (category, brand, price level, dense stats) sit in an item
  catalog keyed by ``item_id``; sequences hold catalog row indices.  Training
  batches are cut from the table with :meth:`CaseTable.batch`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import nn
from .nn import autograd as ag

SCHEMA_VERSION = 1

EVENT_KINDS = ("exposure", "click", "scroll-stop", "delete")
TRIGGER_KINDS = ("click", "scroll", "scroll-stop", "delete")
GROUPS = ("exp", "sclk", "clk")
USER_ATTRS = ("gender", "age_level", "purchase_level", "os")
SESSION_STATS = ("view_depth", "session_clicks", "session_requests", "dist_last_request",
                 "dist_last_click", "pool_remaining", "offset_in_page", "page_index")

# item categorical columns, in embedding order
ITEM_FIELDS = ("item_id", "category_id", "brand_id", "position_in_page", "page_number",
               "price_level")
_HASHED = {"item_id", "category_id", "brand_id"}


class SchemaError(ValueError):
    """Malformed record, unknown schema version, or inconsistent catalog."""


# ---------------------------------------------------------------------------
# record types
# ---------------------------------------------------------------------------

@dataclass
class ItemFeatures:
    item_id: int
    category_id: int
    brand_id: int
    position_in_page: int
    page_number: int
    price_level: int
    dense_stats: list[float]

    def __post_init__(self):
        if min(self.item_id, self.category_id, self.brand_id) < 0:
            raise SchemaError("categorical ids must be >= 0")


@dataclass
class BehaviorEvent:
    kind: str
    dwell: float
    position: int

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise SchemaError(f"unknown event kind {self.kind!r}")
        if self.dwell < 0:
            raise SchemaError("dwell must be >= 0")


@dataclass
class SequenceGroup:
    behavior_seq: list[BehaviorEvent] = field(default_factory=list)
    item_seq: list[ItemFeatures] = field(default_factory=list)

    def __post_init__(self):
        if len(self.behavior_seq) != len(self.item_seq):
            raise SchemaError("behavior and item sequences differ in length")

    def __len__(self) -> int:
        return len(self.item_seq)


@dataclass
class ContextFeatures:
    user_attrs: list[int]
    session_stats: list[float]


@dataclass
class CaseRecord:
    case_id: int
    user_id: int
    period_index: int
    trigger_kind: str
    exp: SequenceGroup
    sclk: SequenceGroup
    clk: SequenceGroup
    cands: list[ItemFeatures]
    context: ContextFeatures
    z: int
    y: int
    true_cate: float | None = None

    def __post_init__(self):
        if not self.cands:
            raise SchemaError(f"case {self.case_id}: empty candidate list")
        if self.z not in (0, 1) or self.y not in (0, 1):
            raise SchemaError(f"case {self.case_id}: z and y must be binary")


# ---------------------------------------------------------------------------
# schema config, bucketizer, padding
# ---------------------------------------------------------------------------

@dataclass
class Bucketizer:
    boundaries: list[float]

    def __post_init__(self):
        b = self.boundaries
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("bucket boundaries must be strictly increasing")

    @property
    def n_buckets(self) -> int:
        return len(self.boundaries) + 1

    def __call__(self, x):
        """Count of boundaries ``<= x``; scalar or array."""
        return np.searchsorted(np.asarray(self.boundaries, dtype=float), x, side="right")


def bucketize(x: float, b: Bucketizer) -> int:
    return int(b(x))


def pad_truncate(seq: Sequence, max_len: int, pad=0) -> tuple[list, list[int]]:
    """Keep the latest ``max_len`` elements and left-pad; returns (values, mask)."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    kept = list(seq)[-max_len:]
    n_pad = max_len - len(kept)
    return [pad] * n_pad + kept, [0] * n_pad + [1] * len(kept)


_DEFAULT_STAT_BOUNDS = {
    "view_depth": [5, 10, 20, 40, 60, 80, 100, 130, 160],
    "session_clicks": [1, 2, 3, 5, 8, 12, 20],
    "session_requests": [1, 2, 3, 5, 8],
    "dist_last_request": [2, 4, 6, 8, 11, 15, 20, 25, 30, 40],
    "dist_last_click": [1, 2, 3, 4, 6, 8, 11, 15, 20, 30],
    "pool_remaining": [3, 6, 10, 15, 20, 25, 30, 40, 48],
    "offset_in_page": [2, 5, 10, 15, 20, 25, 30, 35, 40, 45],
    "page_index": [1, 2, 3, 4],
}


@dataclass
class SchemaConfig:
    """Dimensions, sequence lengths, vocabularies and bucket boundaries."""

    version: int = SCHEMA_VERSION
    max_exp: int = 50
    max_sclk: int = 20
    max_clk: int = 50
    max_cands: int = 30
    embed_dim: int = 8
    ctx_embed_dim: int = 4
    n_items: int = 3000
    n_categories: int = 24
    n_brands: int = 60
    n_positions: int = 50
    n_pages: int = 8
    n_price_levels: int = 10
    dense_dim: int = 10
    user_attr_sizes: list[int] = field(default_factory=lambda: [2, 6, 5, 3])
    dwell_bounds: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
    stat_bounds: dict[str, list[float]] = field(default_factory=lambda: {
        k: list(v) for k, v in _DEFAULT_STAT_BOUNDS.items()})

    def max_len(self, group: str) -> int:
        return {"exp": self.max_exp, "sclk": self.max_sclk, "clk": self.max_clk,
                "cands": self.max_cands}[group]

    def item_vocab(self) -> dict[str, int]:
        return {"item_id": self.n_items + 1, "category_id": self.n_categories + 1,
                "brand_id": self.n_brands + 1, "position_in_page": self.n_positions + 1,
                "page_number": self.n_pages + 1, "price_level": self.n_price_levels + 1}

    def behavior_vocab(self) -> list[int]:
        return [len(EVENT_KINDS) + 1, len(self.dwell_bounds) + 2, self.n_positions + 1]

    def stat_bucketizers(self) -> list[Bucketizer]:
        return [Bucketizer(list(self.stat_bounds[k])) for k in SESSION_STATS]

    @property
    def item_input_dim(self) -> int:
        return len(ITEM_FIELDS) * self.embed_dim + self.dense_dim

    @property
    def behavior_input_dim(self) -> int:
        return 3 * self.embed_dim + 1

    @property
    def user_dim(self) -> int:
        return len(self.user_attr_sizes) * self.ctx_embed_dim

    @property
    def context_dim(self) -> int:
        return len(SESSION_STATS) * self.ctx_embed_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaConfig":
        if d.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise SchemaError(f"schema version {d.get('version')} not supported")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "SchemaConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def vocab_index(value, vocab: int, hashed: bool) -> np.ndarray:
    """Map raw non-negative ids to embedding rows ``1..vocab-1`` (0 is padding)."""
    v = np.asarray(value, dtype=np.int64)
    if hashed:
        return np.where(v + 1 < vocab, v + 1, 1 + np.mod(v, vocab - 1))
    return np.clip(v, 0, vocab - 2) + 1


# ---------------------------------------------------------------------------
# columnar storage
# ---------------------------------------------------------------------------

class ItemCatalog:
    """Static item attributes keyed by item id."""

    def __init__(self, dense_dim: int):
        self.dense_dim = dense_dim
        self._row: dict[int, int] = {}
        self.item_id: list[int] = []
        self.category: list[int] = []
        self.brand: list[int] = []
        self.price_level: list[int] = []
        self.dense: list[list[float]] = []
        self._frozen = None

    def __len__(self) -> int:
        return len(self.item_id)

    def add(self, item_id: int, category: int, brand: int, price_level: int,
            dense: Sequence[float]) -> int:
        row = self._row.get(item_id)
        if row is not None:
            if (self.category[row], self.brand[row], self.price_level[row]) != (
                    category, brand, price_level) or list(self.dense[row]) != list(dense):
                raise SchemaError(f"item {item_id}: static features differ between occurrences")
            return row
        if len(dense) != self.dense_dim:
            raise SchemaError(f"item {item_id}: dense_stats length {len(dense)} != {self.dense_dim}")
        row = len(self.item_id)
        self._row[item_id] = row
        self.item_id.append(int(item_id))
        self.category.append(int(category))
        self.brand.append(int(brand))
        self.price_level.append(int(price_level))
        self.dense.append([float(x) for x in dense])
        self._frozen = None
        return row

    def add_item(self, it: ItemFeatures) -> int:
        return self.add(it.item_id, it.category_id, it.brand_id, it.price_level, it.dense_stats)

    def arrays(self) -> dict[str, np.ndarray]:
        if self._frozen is None:
            self._frozen = {
                "item_id": np.asarray(self.item_id, dtype=np.int64),
                "category_id": np.asarray(self.category, dtype=np.int64),
                "brand_id": np.asarray(self.brand, dtype=np.int64),
                "price_level": np.asarray(self.price_level, dtype=np.int64),
                "dense": np.asarray(self.dense, dtype=np.float64).reshape(-1, self.dense_dim),
            }
        return self._frozen


@dataclass
class GroupInput:
    """Model-ready arrays for one sequence group; ``beh_*`` is absent for candidates."""

    item_cat: np.ndarray      # [B, T, len(ITEM_FIELDS)] embedding rows
    item_dense: np.ndarray    # [B, T, dense_dim]
    mask: np.ndarray          # [B, T] 1 for real positions
    beh_cat: np.ndarray | None = None    # [B, T, 3]
    beh_dense: np.ndarray | None = None  # [B, T, 1]

    @property
    def empty(self) -> np.ndarray:
        return self.mask.sum(axis=1) == 0


@dataclass
class Batch:
    """Model-input bundle for a set of cases."""

    groups: dict[str, GroupInput]
    cands: GroupInput
    user_cat: np.ndarray   # [B, n_user_attrs]
    ctx_cat: np.ndarray    # [B, n_session_stats]
    z: np.ndarray
    y: np.ndarray
    true_cate: np.ndarray
    case_id: np.ndarray

    def __len__(self) -> int:
        return len(self.z)


class CaseTable:
    """Columnar collection of cases sharing one schema and one item catalog."""

    _SEQ_COLS = ("kind", "dwell", "bpos", "item", "ipos", "page")

    def __init__(self, schema: SchemaConfig, capacity: int = 1024,
                 catalog: ItemCatalog | None = None):
        self.schema = schema
        self.catalog = catalog if catalog is not None else ItemCatalog(schema.dense_dim)
        self.n = 0
        self._cap = 0
        self.cols: dict[str, np.ndarray] = {}
        self._grow(max(capacity, 1))

    # -- construction --------------------------------------------------------
    def _alloc(self, cap: int) -> dict[str, np.ndarray]:
        s = self.schema
        c: dict[str, np.ndarray] = {}
        for g in GROUPS:
            T = s.max_len(g)
            c[f"{g}.kind"] = np.zeros((cap, T), np.int8)
            c[f"{g}.dwell"] = np.zeros((cap, T), np.float64)
            c[f"{g}.bpos"] = np.zeros((cap, T), np.int16)
            c[f"{g}.item"] = np.full((cap, T), -1, np.int32)
            c[f"{g}.ipos"] = np.zeros((cap, T), np.int16)
            c[f"{g}.page"] = np.zeros((cap, T), np.int16)
        C = s.max_cands
        c["cands.item"] = np.full((cap, C), -1, np.int32)
        c["cands.ipos"] = np.zeros((cap, C), np.int16)
        c["cands.page"] = np.zeros((cap, C), np.int16)
        c["user"] = np.zeros((cap, len(s.user_attr_sizes)), np.int16)
        c["ctx"] = np.zeros((cap, len(SESSION_STATS)), np.float64)
        c["case_id"] = np.zeros(cap, np.int64)
        c["user_id"] = np.zeros(cap, np.int64)
        c["period_index"] = np.zeros(cap, np.int64)
        c["trigger"] = np.zeros(cap, np.int8)
        c["z"] = np.zeros(cap, np.int8)
        c["y"] = np.zeros(cap, np.int8)
        c["true_cate"] = np.full(cap, np.nan)
        return c

    def _grow(self, cap: int) -> None:
        new = self._alloc(cap)
        for k, v in self.cols.items():
            new[k][: self.n] = v[: self.n]
        self.cols = new
        self._cap = cap

    def _reserve(self) -> int:
        if self.n >= self._cap:
            self._grow(self._cap * 2)
        i = self.n
        self.n += 1
        return i

    def __len__(self) -> int:
        return self.n

    def append_raw(self, *, case_id: int, user_id: int, period_index: int, trigger_kind: str,
                   groups: dict[str, tuple], cands: tuple, user_attrs: Sequence[int],
                   session_stats: Sequence[float], z: int, y: int,
                   true_cate: float | None = None) -> int:
        """Append one case from catalog row indices.

        ``groups[g] = (kind, dwell, bpos, item_rows, ipos, page)`` as equal-length
        sequences in chronological order; ``cands = (item_rows, ipos, page)``
        in rank order.  Sequences longer than the schema maximum keep their
        latest elements (candidates keep their first).
        """
        if len(cands[0]) == 0:
            raise SchemaError(f"case {case_id}: empty candidate list")
        i = self._reserve()
        c = self.cols
        for g in GROUPS:
            T = self.schema.max_len(g)
            seq = groups[g]
            L = min(len(seq[0]), T)
            if L:
                for col, vals in zip(self._SEQ_COLS, seq):
                    c[f"{g}.{col}"][i, T - L:] = vals[len(vals) - L:]
        C = self.schema.max_cands
        L = min(len(cands[0]), C)
        for col, vals in zip(("item", "ipos", "page"), cands):
            c[f"cands.{col}"][i, :L] = vals[:L]
        c["user"][i] = user_attrs
        c["ctx"][i] = session_stats
        c["case_id"][i] = case_id
        c["user_id"][i] = user_id
        c["period_index"][i] = period_index
        c["trigger"][i] = TRIGGER_KINDS.index(trigger_kind)
        c["z"][i] = z
        c["y"][i] = y
        c["true_cate"][i] = np.nan if true_cate is None else true_cate
        return i

    def append(self, r: CaseRecord) -> int:
        add = self.catalog.add_item
        groups = {}
        for g in GROUPS:
            grp: SequenceGroup = getattr(r, g)
            groups[g] = ([EVENT_KINDS.index(b.kind) + 1 for b in grp.behavior_seq],
                         [b.dwell for b in grp.behavior_seq],
                         [b.position for b in grp.behavior_seq],
                         [add(it) for it in grp.item_seq],
                         [it.position_in_page for it in grp.item_seq],
                         [it.page_number for it in grp.item_seq])
        cands = ([add(it) for it in r.cands], [it.position_in_page for it in r.cands],
                 [it.page_number for it in r.cands])
        if len(r.context.user_attrs) != len(self.schema.user_attr_sizes):
            raise SchemaError(f"case {r.case_id}: expected {len(self.schema.user_attr_sizes)} user attrs")
        if len(r.context.session_stats) != len(SESSION_STATS):
            raise SchemaError(f"case {r.case_id}: expected {len(SESSION_STATS)} session stats")
        return self.append_raw(case_id=r.case_id, user_id=r.user_id, period_index=r.period_index,
                               trigger_kind=r.trigger_kind, groups=groups, cands=cands,
                               user_attrs=r.context.user_attrs,
                               session_stats=r.context.session_stats, z=r.z, y=r.y,
                               true_cate=r.true_cate)

    @classmethod
    def from_records(cls, records: Iterable[CaseRecord], schema: SchemaConfig) -> "CaseTable":
        t = cls(schema)
        for r in records:
            t.append(r)
        return t

    # -- views ----------------------------------------------------------------
    def subset(self, idx: np.ndarray) -> "CaseTable":
        idx = np.asarray(idx, dtype=np.int64)
        t = CaseTable(self.schema, capacity=max(len(idx), 1), catalog=self.catalog)
        for k, v in self.cols.items():
            t.cols[k][: len(idx)] = v[: self.n][idx]
        t.n = len(idx)
        return t

    @property
    def z(self) -> np.ndarray:
        return self.cols["z"][: self.n].astype(np.int64)

    @property
    def y(self) -> np.ndarray:
        return self.cols["y"][: self.n].astype(np.int64)

    @property
    def true_cate(self) -> np.ndarray:
        return self.cols["true_cate"][: self.n]

    @property
    def case_id(self) -> np.ndarray:
        return self.cols["case_id"][: self.n]

    def _item(self, row: int, ipos: int, page: int) -> ItemFeatures:
        cat = self.catalog
        return ItemFeatures(cat.item_id[row], cat.category[row], cat.brand[row], int(ipos),
                            int(page), cat.price_level[row], list(cat.dense[row]))

    def record(self, i: int) -> CaseRecord:
        c = self.cols
        groups = {}
        for g in GROUPS:
            valid = np.nonzero(c[f"{g}.item"][i] >= 0)[0]
            beh = [BehaviorEvent(EVENT_KINDS[c[f"{g}.kind"][i, t] - 1], float(c[f"{g}.dwell"][i, t]),
                                 int(c[f"{g}.bpos"][i, t])) for t in valid]
            items = [self._item(c[f"{g}.item"][i, t], c[f"{g}.ipos"][i, t], c[f"{g}.page"][i, t])
                     for t in valid]
            groups[g] = SequenceGroup(beh, items)
        valid = np.nonzero(c["cands.item"][i] >= 0)[0]
        cands = [self._item(c["cands.item"][i, t], c["cands.ipos"][i, t], c["cands.page"][i, t])
                 for t in valid]
        tc = float(c["true_cate"][i])
        return CaseRecord(
            case_id=int(c["case_id"][i]), user_id=int(c["user_id"][i]),
            period_index=int(c["period_index"][i]),
            trigger_kind=TRIGGER_KINDS[c["trigger"][i]], exp=groups["exp"], sclk=groups["sclk"],
            clk=groups["clk"], cands=cands,
            context=ContextFeatures([int(v) for v in c["user"][i]], [float(v) for v in c["ctx"][i]]),
            z=int(c["z"][i]), y=int(c["y"][i]), true_cate=None if math.isnan(tc) else tc)

    def records(self) -> Iterator[CaseRecord]:
        for i in range(self.n):
            yield self.record(i)

    # -- model input ----------------------------------------------------------
    def _items(self, rows: np.ndarray, ipos: np.ndarray, page: np.ndarray) -> tuple:
        s = self.schema
        vocab = s.item_vocab()
        cat = self.catalog.arrays()
        valid = rows >= 0
        r = np.where(valid, rows, 0)
        raw = {"item_id": cat["item_id"][r], "category_id": cat["category_id"][r],
               "brand_id": cat["brand_id"][r], "position_in_page": ipos, "page_number": page,
               "price_level": cat["price_level"][r]}
        idx = np.stack([vocab_index(raw[f], vocab[f], f in _HASHED) for f in ITEM_FIELDS], axis=-1)
        idx = idx * valid[..., None]
        dense = cat["dense"][r] * valid[..., None] if len(cat["dense"]) else np.zeros(
            (*rows.shape, s.dense_dim))
        return idx, dense, valid

    def batch(self, idx: np.ndarray | None = None, trim: bool = True) -> Batch:
        """Model-input bundle for rows ``idx``; ``trim`` drops all-padding columns."""
        s = self.schema
        c = self.cols
        idx = np.arange(self.n) if idx is None else np.asarray(idx, dtype=np.int64)
        groups = {}
        bv = s.behavior_vocab()
        dwell_b = Bucketizer(s.dwell_bounds)
        for g in GROUPS:
            rows = c[f"{g}.item"][idx]
            if trim:
                keep = np.nonzero((rows >= 0).any(axis=0))[0]
                start = keep[0] if len(keep) else rows.shape[1] - 1
                sl = slice(start, None)
            else:
                sl = slice(None)
            rows = rows[:, sl]
            item_cat, item_dense, valid = self._items(rows, c[f"{g}.ipos"][idx][:, sl],
                                                      c[f"{g}.page"][idx][:, sl])
            dwell = c[f"{g}.dwell"][idx][:, sl]
            kind = c[f"{g}.kind"][idx][:, sl].astype(np.int64)
            beh_cat = np.stack([kind,
                                vocab_index(dwell_b(dwell), bv[1], False),
                                vocab_index(c[f"{g}.bpos"][idx][:, sl], bv[2], False)], axis=-1)
            beh_cat = beh_cat * valid[..., None]
            beh_dense = (np.log1p(dwell) * valid)[..., None]
            groups[g] = GroupInput(item_cat, item_dense, valid.astype(np.float64), beh_cat, beh_dense)
        rows = c["cands.item"][idx]
        if trim:
            keep = np.nonzero((rows >= 0).any(axis=0))[0]
            rows = rows[:, : keep[-1] + 1]
        C = rows.shape[1]
        item_cat, item_dense, valid = self._items(rows, c["cands.ipos"][idx][:, :C],
                                                  c["cands.page"][idx][:, :C])
        cands = GroupInput(item_cat, item_dense, valid.astype(np.float64))
        user = np.stack([vocab_index(c["user"][idx][:, j], n + 1, False)
                         for j, n in enumerate(s.user_attr_sizes)], axis=-1)
        ctx = np.stack([vocab_index(b(c["ctx"][idx][:, j]), b.n_buckets + 1, False)
                        for j, b in enumerate(s.stat_bucketizers())], axis=-1)
        return Batch(groups, cands, user, ctx, c["z"][idx].astype(np.float64),
                     c["y"][idx].astype(np.float64), c["true_cate"][idx].copy(),
                     c["case_id"][idx].copy())


def encode_record(r: CaseRecord, schema: SchemaConfig) -> Batch:
    """Model-input bundle for a single record (batch of one, no trimming)."""
    return CaseTable.from_records([r], schema).batch(trim=False)


# ---------------------------------------------------------------------------
# embedding tables
# ---------------------------------------------------------------------------

class FeatureEmbedder(nn.Module):
    """Embedding tables for items, behaviors, user attributes and session stats.

    Item tables are shared across the exp/sclk/clk/cands groups; continuous
    values are passed through next to the embeddings.
    """

    def __init__(self, schema: SchemaConfig, rng: np.random.Generator):
        self.schema = schema
        vocab = schema.item_vocab()
        self.item = {f: nn.Embedding(vocab[f], schema.embed_dim, rng) for f in ITEM_FIELDS}
        self.behavior = [nn.Embedding(v, schema.embed_dim, rng) for v in schema.behavior_vocab()]
        self.user = [nn.Embedding(n + 1, schema.ctx_embed_dim, rng) for n in schema.user_attr_sizes]
        self.context = [nn.Embedding(b.n_buckets + 1, schema.ctx_embed_dim, rng)
                        for b in schema.stat_bucketizers()]

    def items(self, g: GroupInput) -> nn.Tensor:
        parts = [self.item[f](g.item_cat[..., j]) for j, f in enumerate(ITEM_FIELDS)]
        return ag.concat(parts + [nn.Tensor(g.item_dense)], axis=-1)

    def behaviors(self, g: GroupInput) -> nn.Tensor:
        parts = [emb(g.beh_cat[..., j]) for j, emb in enumerate(self.behavior)]
        return ag.concat(parts + [nn.Tensor(g.beh_dense)], axis=-1)

    def user_vec(self, b: Batch) -> nn.Tensor:
        return ag.concat([emb(b.user_cat[:, j]) for j, emb in enumerate(self.user)], axis=-1)

    def context_vec(self, b: Batch) -> nn.Tensor:
        return ag.concat([emb(b.ctx_cat[:, j]) for j, emb in enumerate(self.context)], axis=-1)


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def _item_to_json(it: ItemFeatures) -> dict:
    return asdict(it)


def _group_to_json(g: SequenceGroup) -> dict:
    return {"behavior_seq": [asdict(b) for b in g.behavior_seq],
            "item_seq": [_item_to_json(it) for it in g.item_seq]}


def record_to_json(r: CaseRecord) -> dict:
    return {"schema_version": SCHEMA_VERSION, "case_id": r.case_id, "user_id": r.user_id,
            "period_index": r.period_index, "trigger_kind": r.trigger_kind,
            "exp": _group_to_json(r.exp), "sclk": _group_to_json(r.sclk),
            "clk": _group_to_json(r.clk), "cands": [_item_to_json(it) for it in r.cands],
            "context": asdict(r.context), "z": r.z, "y": r.y, "true_cate": r.true_cate}


_RECORD_FIELDS = ("schema_version", "case_id", "user_id", "period_index", "trigger_kind", "exp",
                  "sclk", "clk", "cands", "context", "z", "y")


def record_from_json(d: dict) -> CaseRecord:
    for k in _RECORD_FIELDS:
        if k not in d:
            raise SchemaError(f"missing field {k!r}")
    if d["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"schema version {d['schema_version']} not supported "
                          f"(expected {SCHEMA_VERSION})")

    def item(x):
        return ItemFeatures(**x)

    def group(x):
        return SequenceGroup([BehaviorEvent(**b) for b in x["behavior_seq"]],
                             [item(i) for i in x["item_seq"]])

    try:
        return CaseRecord(
            case_id=int(d["case_id"]), user_id=int(d["user_id"]),
            period_index=int(d["period_index"]), trigger_kind=d["trigger_kind"],
            exp=group(d["exp"]), sclk=group(d["sclk"]), clk=group(d["clk"]),
            cands=[item(i) for i in d["cands"]], context=ContextFeatures(**d["context"]),
            z=int(d["z"]), y=int(d["y"]), true_cate=d.get("true_cate"))
    except (TypeError, KeyError) as e:
        raise SchemaError(f"malformed record: {e}") from e


def write_dataset(path: str | Path, records: Iterable[CaseRecord]) -> int:
    n = 0
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(record_to_json(r), separators=(",", ":")))
            f.write("\n")
            n += 1
    return n


def read_dataset(path: str | Path) -> Iterator[CaseRecord]:
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield record_from_json(json.loads(line))
            except (SchemaError, json.JSONDecodeError) as e:
                raise SchemaError(f"{path}:{lineno}: {e}") from e


def load_table(path: str | Path, schema: SchemaConfig) -> CaseTable:
    return CaseTable.from_records(read_dataset(path), schema)
