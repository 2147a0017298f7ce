"""Behavior encoder: per-group GRU branches, candidate encoder and attention matching.

Each feature group (exp, sclk, clk) has its own branch with two GRUs, one for
the behavior sequence and one for the item sequence.  Their hidden states are
concatenated position-wise into ``F_embs``.  The candidate list is encoded by a
GRU, self-attention and mean pooling into a single vector, which then queries
every branch: keys are the item-GRU states and values are ``F_embs``.  With
``pooling="mean"`` the match is replaced by a masked mean of ``F_embs``.

``MeanPoolEncoder`` is the ablation without any of this: each group is the
masked mean of its raw concatenated feature embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .features import GROUPS, Batch, FeatureEmbedder, SchemaConfig
from .nn import autograd as ag


@dataclass
class CubeConfig:
    hidden_beh: int = 8
    hidden_item: int = 8
    cand_heads: int = 1
    match_heads: int = 1
    # learned query/key/value maps for the single-head match (always on for several heads)
    match_projections: bool = False
    init: str = "uniform"
    # "mean" swaps every candidate-query match for a masked mean of F_embs
    pooling: str = "attention"

    def __post_init__(self):
        if self.pooling not in ("attention", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    # the candidate encoder output is the match query, so its size is pinned
    @property
    def hidden_cand(self) -> int:
        return self.hidden_item

    @property
    def branch_dim(self) -> int:
        return self.hidden_beh + self.hidden_item


@dataclass
class CubeOutput:
    m: dict[str, nn.Tensor]     # per group, [B, branch_dim]
    cands_emb: nn.Tensor        # [B, cand_dim]
    empty: dict[str, np.ndarray]

    def parts(self) -> list[nn.Tensor]:
        return [self.cands_emb] + [self.m[g] for g in GROUPS]


class Branch(nn.Module):
    def __init__(self, d_beh: int, d_item: int, cfg: CubeConfig, rng: np.random.Generator):
        self.beh = nn.GRU(d_beh, cfg.hidden_beh, rng, init=cfg.init)
        self.item = nn.GRU(d_item, cfg.hidden_item, rng, init=cfg.init)
        heads = cfg.match_heads
        self.match = None
        if cfg.pooling == "attention":
            self.match = nn.Attention(cfg.hidden_item, cfg.branch_dim, rng, heads=heads,
                                      projections=heads > 1 or cfg.match_projections,
                                      scaled=heads > 1)


class Cube(nn.Module):
    def __init__(self, schema: SchemaConfig, cfg: CubeConfig, rng: np.random.Generator):
        self.cfg = cfg
        d_beh, d_item = schema.behavior_input_dim, schema.item_input_dim
        self.branches = {g: Branch(d_beh, d_item, cfg, rng) for g in GROUPS}
        self.cand_gru = nn.GRU(d_item, cfg.hidden_cand, rng, init=cfg.init)
        self.cand_attn = nn.Attention(cfg.hidden_cand, cfg.hidden_cand, rng,
                                      heads=cfg.cand_heads, projections=True, scaled=True)

    @property
    def out_dims(self) -> list[int]:
        return [self.cfg.hidden_cand] + [self.cfg.branch_dim] * len(GROUPS)

    def grus(self) -> list[nn.GRU]:
        out = []
        for g in GROUPS:
            out += [self.branches[g].beh, self.branches[g].item]
        return out + [self.cand_gru]

    def __call__(self, emb: FeatureEmbedder, batch: Batch) -> CubeOutput:
        seqs, masks = [], []
        for g in GROUPS:
            gi = batch.groups[g]
            seqs += [emb.behaviors(gi), emb.items(gi)]
            masks += [gi.mask, gi.mask]
        seqs.append(emb.items(batch.cands))
        masks.append(batch.cands.mask)
        # one fused recurrence for all seven encoders
        states = nn.gru_encode_many(seqs, self.grus(), masks)
        cands_emb = encode_candidates_from_states(states[-1], batch.cands.mask, self.cand_attn)
        m = {}
        for k, g in enumerate(GROUPS):
            h_beh, h_item = states[2 * k], states[2 * k + 1]
            f_embs = ag.concat([h_beh, h_item], axis=-1)
            mask = batch.groups[g].mask
            if self.cfg.pooling == "mean":
                m[g] = nn.mean_pool(f_embs, mask)
            else:
                m[g] = match(cands_emb, h_item, f_embs, mask, self.branches[g].match)
        return CubeOutput(m, cands_emb, {g: batch.groups[g].empty for g in GROUPS})


class MeanPoolEncoder(nn.Module):
    """Ablation backbone: masked mean of raw feature embeddings per group."""

    def __init__(self, schema: SchemaConfig):
        self.schema = schema

    @property
    def out_dims(self) -> list[int]:
        s = self.schema
        return [s.item_input_dim] + [s.behavior_input_dim + s.item_input_dim] * len(GROUPS)

    def __call__(self, emb: FeatureEmbedder, batch: Batch) -> CubeOutput:
        m = {}
        for g in GROUPS:
            gi = batch.groups[g]
            feats = ag.concat([emb.behaviors(gi), emb.items(gi)], axis=-1)
            m[g] = nn.mean_pool(feats, gi.mask)
        cands = nn.mean_pool(emb.items(batch.cands), batch.cands.mask)
        return CubeOutput(m, cands, {g: batch.groups[g].empty for g in GROUPS})


# ---------------------------------------------------------------------------
# functional pieces
# ---------------------------------------------------------------------------

def encode_branch(beh: nn.Tensor, items: nn.Tensor, mask: np.ndarray, branch: Branch
                  ) -> tuple[nn.Tensor, nn.Tensor]:
    """Returns ``(F_embs, item_states)`` for one group; ``F_embs = h_beh || h_item``."""
    h_beh, h_item = nn.gru_encode_many([beh, items], [branch.beh, branch.item], [mask, mask])
    return ag.concat([h_beh, h_item], axis=-1), h_item


def encode_candidates_from_states(states: nn.Tensor, mask: np.ndarray, attn: nn.Attention
                                  ) -> nn.Tensor:
    if np.any(np.asarray(mask).sum(axis=-1) == 0):
        raise ValueError("candidate list is empty")
    return nn.mean_pool(nn.self_attention(states, attn, mask), mask)


def encode_candidates(cands: nn.Tensor, mask: np.ndarray, gru: nn.GRU, attn: nn.Attention
                      ) -> nn.Tensor:
    """Mean of self-attended GRU states over the ranked candidate list."""
    if cands.shape[-2] == 0:
        raise ValueError("candidate list is empty")
    return encode_candidates_from_states(nn.gru_encode(cands, gru, mask), mask, attn)


def match(cands_emb: nn.Tensor, item_states: nn.Tensor, f_embs: nn.Tensor, mask: np.ndarray,
          attn: nn.Attention) -> nn.Tensor:
    """Candidate-query attention over one branch.  Fully masked rows give zeros."""
    return nn.attention_pool(cands_emb, item_states, f_embs, attn, mask)


def match_weights(cands_emb: nn.Tensor, item_states: nn.Tensor, mask: np.ndarray,
                  attn: nn.Attention) -> np.ndarray:
    q = ag.reshape(cands_emb, (*cands_emb.shape[:-1], 1, cands_emb.shape[-1]))
    return attn.weights(q, item_states, mask).data[..., 0, 0, :]


def cube_forward(emb: FeatureEmbedder, batch: Batch, encoder: Cube | MeanPoolEncoder
                 ) -> CubeOutput:
    return encoder(emb, batch)
