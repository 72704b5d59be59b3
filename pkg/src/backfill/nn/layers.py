"""Parameter containers and the layers the revision models are built from."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .tensor import (
    ACTIVATIONS,
    DTensor,
    add,
    bmm,
    einsum,
    matmul,
    reshape,
    mul,
    sigmoid,
    softmax,
    sub,
    tanh,
    transpose,
    tsum,
)


class ParamSet:
    """Ordered, named collection of trainable tensors.

    Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and
    learnable initial states start at zero.  Parameters are created in
    declaration order from a single generator, so re-declaring with the
    same seed reproduces every value bit for bit.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, DTensor] = {}

    def weight(self, name: str, shape: tuple[int, ...], fan_in: int | None = None) -> DTensor:
        fan_in = shape[-2] if fan_in is None else fan_in
        bound = 1.0 / np.sqrt(fan_in)
        return self._add(name, self._rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> DTensor:
        return self._add(name, np.zeros(shape))

    def _add(self, name: str, data: np.ndarray) -> DTensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = DTensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> DTensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[DTensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def count(self, prefix: str = "") -> int:
        return sum(p.data.size for n, p in self._params.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, p in self._params.items():
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name!r}: {value.shape} vs {p.shape}")
            p.data = value.copy()


def declare_gru(ps: ParamSet, prefix: str, n_in: int, n_hidden: int) -> None:
    ps.weight(f"{prefix}.w_in", (n_in, 3 * n_hidden))
    ps.weight(f"{prefix}.w_hid", (n_hidden, 3 * n_hidden))
    ps.zeros(f"{prefix}.b_in", (3 * n_hidden,))
    ps.zeros(f"{prefix}.b_hid", (3 * n_hidden,))


def gru_cell(x: DTensor, h: DTensor, ps: ParamSet, prefix: str) -> DTensor:
    """One GRU step over the last axis; leading axes are batch.

    r = σ(x W_r + h U_r + b),  u = σ(x W_u + h U_u + b),
    n = tanh(x W_n + b_n + r ⊙ (h U_n + c_n)),  h' = (1 - u) ⊙ n + u ⊙ h
    """
    w_in, w_hid = ps[f"{prefix}.w_in"], ps[f"{prefix}.w_hid"]
    m = w_hid.shape[0]
    if x.shape[-1] != w_in.shape[0] or h.shape[-1] != m:
        raise ValueError(f"GRU {prefix}: got x{x.shape}, h{h.shape} for in={w_in.shape[0]}, hidden={m}")
    gx = add(matmul(x, w_in), ps[f"{prefix}.b_in"])
    gh = add(matmul(h, w_hid), ps[f"{prefix}.b_hid"])
    reset = sigmoid(add(gx[..., :m], gh[..., :m]))
    update = sigmoid(add(gx[..., m : 2 * m], gh[..., m : 2 * m]))
    cand = tanh(add(gx[..., 2 * m :], mul(reset, gh[..., 2 * m :])))
    return add(mul(sub(1.0, update), cand), mul(update, h))


def normalized_adjacency(n_nodes: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 for an undirected edge list over node indices."""
    a = np.eye(n_nodes)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def gconv(a_hat: np.ndarray, feats: DTensor, weight: DTensor, activation: str = "relu") -> DTensor:
    """Graph convolution ReLU(Â H W) over the node axis (second to last)."""
    n = a_hat.shape[0]
    if feats.shape[-2] != n:
        raise ValueError(f"gconv: {feats.shape[-2]} feature rows for {n} graph nodes")
    mixed = bmm(DTensor(a_hat), feats)
    return ACTIVATIONS[activation](matmul(mixed, weight))


def declare_ffn(ps: ParamSet, prefix: str, sizes: Sequence[int]) -> None:
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        ps.weight(f"{prefix}.w{i}", (a, b))
        ps.zeros(f"{prefix}.b{i}", (b,))


def ffn(x: DTensor, ps: ParamSet, prefix: str, n_layers: int,
        activation: str = "relu", final: str = "linear") -> DTensor:
    """Affine/activation stack; the last layer uses `final`."""
    act = ACTIVATIONS[activation]
    for i in range(n_layers):
        x = add(matmul(x, ps[f"{prefix}.w{i}"]), ps[f"{prefix}.b{i}"])
        x = ACTIVATIONS[final](x) if i == n_layers - 1 else act(x)
    return x


def declare_node_ffn(ps: ParamSet, prefix: str, n_nodes: int, sizes: Sequence[int]) -> None:
    """Independent FFN per node, stored as stacked (n_nodes, in, out) weights."""
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        ps.weight(f"{prefix}.w{i}", (n_nodes, a, b), fan_in=a)
        ps.zeros(f"{prefix}.b{i}", (n_nodes, b))


def node_ffn(x: DTensor, ps: ParamSet, prefix: str, n_layers: int,
             activation: str = "relu") -> DTensor:
    """Apply node i's own FFN to x[..., i, :]; x is (n, d) or (batch, n, d)."""
    act = ACTIVATIONS[activation]
    batched = x.ndim == 3
    # node axis leading: (n, batch, d) @ (n, d, o)
    x = transpose(x, (1, 0, 2)) if batched else reshape(x, (x.shape[0], 1, x.shape[1]))
    for i in range(n_layers):
        b = ps[f"{prefix}.b{i}"]
        x = add(bmm(x, ps[f"{prefix}.w{i}"]), reshape(b, (b.shape[0], 1, b.shape[1])))
        if i < n_layers - 1:
            x = act(x)
    if batched:
        return transpose(x, (1, 0, 2))
    return reshape(x, (x.shape[0], x.shape[2]))


def mult_attention(query: DTensor, keys: DTensor, w: DTensor) -> tuple[DTensor, DTensor]:
    """Multiplicative attention of a scalar query over keys.

    query: () or (batch,); keys: (n, m) or (batch, n, m); w: (m,).
    Returns (alphas, pooled) with alphas summing to one over the key axis.
    """
    if keys.shape[-2] == 0:
        raise ValueError("attention over an empty key set")
    if keys.ndim == 2:
        scores = mul(query, einsum("nm,m->n", keys, w))
        alphas = softmax(scores, axis=-1)
        return alphas, einsum("n,nm->m", alphas, keys)
    q = reshape(query, (query.shape[0], 1))
    scores = mul(q, einsum("bnm,m->bn", keys, w))
    alphas = softmax(scores, axis=-1)
    return alphas, einsum("bn,bnm->bm", alphas, keys)


def sq_error_sum(pred: DTensor, target, mask: np.ndarray | None = None) -> DTensor:
    diff = sub(pred, target)
    sq = mul(diff, diff)
    if mask is not None:
        sq = mul(sq, mask)
    return tsum(sq)
