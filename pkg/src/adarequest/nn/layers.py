from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import DTYPE, ShapeError, Tensor
from .recurrent import EmptySequenceError, gru_recurrence


def param(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


class Module:
    """Container whose parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in self.__dict__.items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item
            elif isinstance(value, dict):
                for k in value:
                    item = value[k]
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_set(self) -> "ParamSet":
        return ParamSet(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class ParamSet:
    """Ordered, uniquely named view over a model's parameter tensors."""

    def __init__(self, items: Iterator[tuple[str, Tensor]] | Sequence[tuple[str, Tensor]]):
        self._items: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in items:
            if name in self._items:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._items[name] = t

    def __iter__(self):
        return iter(self._items.items())

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def names(self) -> list[str]:
        return list(self._items)

    def tensors(self) -> list[Tensor]:
        return list(self._items.values())

    def grads(self) -> list[np.ndarray]:
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in self._items.values()]

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self._items.items()}

    def count(self) -> int:
        return int(sum(t.data.size for t in self._items.values()))


def glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out))


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 activation: str = "linear", init: str = "glorot"):
        if activation not in ag.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        w = np.zeros((n_in, n_out)) if init == "zero" else glorot(rng, n_in, n_out)
        self.weight = param(w)
        self.bias = param(np.zeros(n_out))
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(x, self.weight, self.bias, self.activation)


def dense_forward(x: Tensor, weight: Tensor, bias: Tensor, activation: str = "linear") -> Tensor:
    """``act(x W + b)``."""
    x = ag.as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    return ag.ACTIVATIONS[activation](ag.matmul(x, weight) + bias)


class MLP(Module):
    """Hidden layers with a shared activation followed by a linear output layer."""

    def __init__(self, n_in: int, hidden: Sequence[int], n_out: int, rng: np.random.Generator,
                 activation: str = "tanh", out_init: str = "glorot"):
        dims = [n_in, *hidden]
        self.layers = [Dense(a, b, rng, activation) for a, b in zip(dims[:-1], dims[1:])]
        self.out = Dense(dims[-1], n_out, rng, "linear", init=out_init)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.out(x)


class Embedding(Module):
    """Lookup table; row 0 is padding (kept at zero and never updated)."""

    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, scale: float = 0.1):
        w = rng.normal(0.0, scale, size=(vocab, dim))
        w[0] = 0.0
        self.table = param(w)
        self.vocab = vocab
        self.dim = dim

    def __call__(self, idx: np.ndarray) -> Tensor:
        return ag.embedding(self.table, idx)


class GRU(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, init: str = "uniform"):
        if init == "zero":
            mk = lambda shape: np.zeros(shape)  # noqa: E731
        else:
            lim = 1.0 / np.sqrt(hidden)
            mk = lambda shape: rng.uniform(-lim, lim, size=shape)  # noqa: E731
        self.w_ih = param(mk((n_in, 3 * hidden)))
        self.w_hh = param(mk((hidden, 3 * hidden)))
        self.b_ih = param(mk(3 * hidden))
        self.b_hh = param(mk(3 * hidden))
        self.n_in = n_in
        self.hidden = hidden

    def input_gates(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.w_ih) + self.b_ih

    def __call__(self, seq: Tensor, mask: np.ndarray | None = None,
                 h0: np.ndarray | None = None) -> Tensor:
        return gru_encode(seq, self, mask=mask, h0=h0)


def gru_encode(seq: Tensor, gru: GRU, mask: np.ndarray | None = None,
               h0: np.ndarray | None = None) -> Tensor:
    """Full hidden-state sequence of one GRU.

    ``seq`` is ``[T, in]`` or ``[B, T, in]``; the result has the same leading
    shape with the feature axis replaced by the hidden size.
    """
    seq = ag.as_tensor(seq)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = ag.reshape(seq, (1, *seq.shape))
        if mask is not None:
            mask = np.asarray(mask)[None]
        if h0 is not None:
            h0 = np.asarray(h0, dtype=DTYPE)[None]
    if seq.shape[1] == 0:
        raise EmptySequenceError("gru_encode: empty sequence")
    if mask is None:
        mask = np.ones(seq.shape[:2])
    (out,) = gru_recurrence([gru.input_gates(seq)], [gru.w_hh], [gru.b_hh], [mask],
                            None if h0 is None else [h0])
    if squeeze:
        out = ag.reshape(out, out.shape[1:])
    return out


def gru_encode_many(seqs: Sequence[Tensor], grus: Sequence[GRU],
                    masks: Sequence[np.ndarray]) -> list[Tensor]:
    """Encode several batched sequences with their own GRUs in one time loop."""
    gates = [g.input_gates(s) for s, g in zip(seqs, grus)]
    return gru_recurrence(gates, [g.w_hh for g in grus], [g.b_hh for g in grus], masks)


# ---------------------------------------------------------------------------
# pooling and attention
# ---------------------------------------------------------------------------

def mean_pool(seq: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Masked mean over the position axis (-2).  Fully masked rows give zeros."""
    seq = ag.as_tensor(seq)
    if seq.shape[-2] == 0:
        raise EmptySequenceError("mean_pool: empty sequence")
    if mask is None:
        return ag.tmean(seq, axis=-2)
    mask = np.asarray(mask, dtype=DTYPE)
    count = mask.sum(axis=-1, keepdims=True)
    weights = mask / np.where(count > 0, count, 1.0)
    return ag.tsum(seq * weights[..., None], axis=-2)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # [..., L, d] -> [..., heads, L, d/heads]
    *lead, L, d = x.shape
    x = ag.reshape(x, (*lead, L, heads, d // heads))
    return ag.swapaxes(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    # [..., heads, L, dh] -> [..., L, heads*dh]
    x = ag.swapaxes(x, -2, -3)
    *lead, L, h, dh = x.shape
    return ag.reshape(x, (*lead, L, h * dh))


class Attention(Module):
    """Dot-product attention with optional learned projections.

    ``projections=False`` means identity projections and no output merge.
    Scores are scaled by ``1/sqrt(d/heads)`` when ``scaled`` is set.
    """

    def __init__(self, d_query: int, d_value: int, rng: np.random.Generator, heads: int = 1,
                 projections: bool = False, scaled: bool | None = None, d_model: int | None = None):
        d_model = d_model or d_query
        if d_model % heads:
            raise ShapeError(f"model dim {d_model} not divisible by {heads} heads")
        if not projections and heads != 1:
            raise ValueError("multi-head attention requires projections")
        self.heads = heads
        self.projections = projections
        self.scaled = (heads > 1 or projections) if scaled is None else scaled
        self.d_model = d_model
        if projections:
            self.w_q = param(glorot(rng, d_query, d_model))
            self.w_k = param(glorot(rng, d_query, d_model))
            self.w_v = param(glorot(rng, d_value, d_value if heads == 1 else d_model))
            dv = d_value if heads == 1 else d_model
            self.w_o = param(glorot(rng, dv, d_value))

    def weights(self, query: Tensor, keys: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Attention weights ``[..., heads, Lq, L]``; query is ``[..., Lq, d]``."""
        q, k = query, keys
        if self.projections:
            q, k = ag.matmul(q, self.w_q), ag.matmul(k, self.w_k)
        d = q.shape[-1]
        qh, kh = _split_heads(q, self.heads), _split_heads(k, self.heads)
        scores = ag.matmul(qh, ag.swapaxes(kh, -1, -2))
        if self.scaled:
            scores = scores * (1.0 / np.sqrt(d / self.heads))
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)[..., None, None, :]
        return ag.masked_softmax(scores, mask, axis=-1)

    def __call__(self, query: Tensor, keys: Tensor, values: Tensor,
                 mask: np.ndarray | None = None) -> Tensor:
        """Query ``[..., Lq, d]``, keys ``[..., L, d]``, values ``[..., L, v]`` -> ``[..., Lq, v]``."""
        if keys.shape[-2] == 0:
            raise EmptySequenceError("attention over an empty sequence")
        alpha = self.weights(query, keys, mask)
        v = values
        if self.projections:
            v = ag.matmul(v, self.w_v)
        heads = self.heads if self.heads > 1 else 1
        vh = _split_heads(v, heads)
        out = _merge_heads(ag.matmul(alpha, vh))
        if self.projections:
            out = ag.matmul(out, self.w_o)
        return out


def attention_pool(query: Tensor, keys: Tensor, values: Tensor, attn: Attention,
                   mask: np.ndarray | None = None) -> Tensor:
    """Single query vector per row: query ``[..., d]`` -> output ``[..., v]``."""
    query = ag.as_tensor(query)
    q = ag.reshape(query, (*query.shape[:-1], 1, query.shape[-1]))
    out = attn(q, ag.as_tensor(keys), ag.as_tensor(values), mask)
    return ag.reshape(out, (*out.shape[:-2], out.shape[-1]))


def self_attention(seq: Tensor, attn: Attention, mask: np.ndarray | None = None) -> Tensor:
    seq = ag.as_tensor(seq)
    return attn(seq, seq, seq, mask)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

EPS = 1e-12


def bce_loss(p, y) -> Tensor:
    """Elementwise cross-entropy on probabilities clamped to ``[EPS, 1-EPS]``."""
    p = ag.clip(ag.as_tensor(p), EPS, 1.0 - EPS)
    y = np.asarray(y, dtype=DTYPE)
    return -(ag.log(p) * y) - ag.log(1.0 - p) * (1.0 - y)


def bce_with_logits(logits: Tensor, y, pos_weight: float = 1.0) -> Tensor:
    """Elementwise cross-entropy of ``sigmoid(logits)``; same value as :func:`bce_loss`."""
    y = np.asarray(y, dtype=DTYPE)
    # -y log s(l) - (1-y) log(1-s(l)) = softplus(l) - y l
    sp = ag.softplus(logits)
    if pos_weight == 1.0:
        return sp - logits * y
    # positive term: y * softplus(-l) = y * (softplus(l) - l)
    return (sp - logits) * (y * pos_weight) + sp * (1.0 - y)
