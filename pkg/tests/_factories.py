"""Random but valid records for tests."""

import numpy as np

from adarequest import features as F


def make_item(rng, schema: F.SchemaConfig, item_id=None, pos=None):
    iid = int(rng.integers(schema.n_items)) if item_id is None else item_id
    # static attributes are a function of the id so catalogs stay consistent
    r = np.random.default_rng(iid)
    return F.ItemFeatures(
        item_id=iid, category_id=int(r.integers(schema.n_categories)),
        brand_id=int(r.integers(schema.n_brands)),
        position_in_page=int(rng.integers(schema.n_positions)) if pos is None else pos,
        page_number=int(rng.integers(4)), price_level=int(r.integers(schema.n_price_levels)),
        dense_stats=[round(float(v), 4) for v in r.normal(size=schema.dense_dim)])


def make_group(rng, schema, length):
    beh = [F.BehaviorEvent(F.EVENT_KINDS[int(rng.integers(4))], round(float(rng.exponential(2.0)), 3),
                           int(rng.integers(schema.n_positions))) for _ in range(length)]
    return F.SequenceGroup(beh, [make_item(rng, schema) for _ in range(length)])


def make_record(rng, schema: F.SchemaConfig, case_id=0, lengths=None, n_cands=None, z=None):
    lengths = lengths or {g: int(rng.integers(0, schema.max_len(g) + 1)) for g in F.GROUPS}
    n_cands = n_cands or int(rng.integers(1, schema.max_cands + 1))
    return F.CaseRecord(
        case_id=case_id, user_id=int(rng.integers(100)), period_index=int(rng.integers(5)),
        trigger_kind=F.TRIGGER_KINDS[int(rng.integers(4))],
        exp=make_group(rng, schema, lengths["exp"]), sclk=make_group(rng, schema, lengths["sclk"]),
        clk=make_group(rng, schema, lengths["clk"]),
        cands=[make_item(rng, schema, pos=j) for j in range(n_cands)],
        context=F.ContextFeatures([int(rng.integers(n)) for n in schema.user_attr_sizes],
                                  [float(rng.integers(0, 60)) for _ in F.SESSION_STATS]),
        z=int(rng.integers(2)) if z is None else z, y=int(rng.integers(2)),
        true_cate=float(rng.normal()) if rng.random() < 0.5 else None)


def small_schema(**kw):
    base = dict(max_exp=6, max_sclk=4, max_clk=5, max_cands=5, n_items=40, n_categories=5,
                n_brands=7, n_positions=10, dense_dim=3)
    base.update(kw)
    return F.SchemaConfig(**base)
