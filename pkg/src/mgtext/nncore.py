"""Differentiable numeric substrate: a small reverse-mode autodiff engine on numpy.

Every operation records a backward closure on a tape of parent tensors;
``Tensor.backward()`` walks the graph in reverse topological order and
accumulates gradients into ``.grad``. Ops compute in the dtype of their
inputs, so the same code runs in float32 for training and float64 for the
finite-difference harness.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, LabelError, ShapeError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Rank-0..4 real array with optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``.grad``."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.data) if seed is None else np.asarray(seed)
        }
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    return _node(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    return _node(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; trailing two axes contract, leading axes broadcast.

    Backward: dA = dC @ B^T, dB = A^T @ dC (summed over broadcast axes).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner extents disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(data, (a, b), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    data = x.data.reshape(shape)
    return _node(data, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(tensors), backward)


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _node(
        np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),)
    )


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.size
    return _node(
        np.asarray(x.data.mean()),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.shape).copy(),),
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return ((g - inner) * s,)

    return _node(s, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must be shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form x * Phi(x) (not the tanh approximation)."""
    x = _as_tensor(x)
    phi = ndtr(x.data)
    out = x.data * phi

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (phi + x.data * pdf),)

    return _node(out, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over all positions of -log softmax(logits)[target].

    ``logits`` has shape (..., T, K); ``targets`` holds integer ids of
    shape (..., T). Every position contributes, padding included.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    k = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"targets shape {targets.shape} does not match logits {logits.shape}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise LabelError(f"target id outside [0, {k})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)
    n = targets.size
    loss = np.asarray(-picked.sum() / n)

    def backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return (g * (p - onehot) / n,)

    return _node(loss, (logits,), backward)


@dataclass
class AttentionParams:
    """Learned projections for multi-head self-attention."""

    heads: int
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for field in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            yield f"{prefix}.{field}", getattr(self, field)


def multi_head_self_attention(
    x: Tensor, params: AttentionParams, return_weights: bool = False
):
    """Scaled dot-product attention with ``params.heads`` heads.

    ``x`` is (S, D) or (B, S, D); per-head width is D/heads, scores are
    scaled by 1/sqrt(D/heads), and the concatenated heads are projected
    back to D. Optionally also returns the attention weights as a plain
    array (detached) for inspection.
    """
    x = _as_tensor(x)
    d = x.shape[-1]
    h = params.heads
    if d % h != 0:
        raise ConfigError(f"embed width {d} not divisible by {h} heads")
    dh = d // h
    squeeze = x.ndim == 2
    if squeeze:
        x3 = reshape(x, (1,) + x.shape)
    else:
        x3 = x
    b, s, _ = x3.shape

    def split_heads(t):
        return transpose(reshape(t, (b, s, h, dh)), (0, 2, 1, 3))

    q = split_heads(add(matmul(x3, params.wq), params.bq))
    k = split_heads(add(matmul(x3, params.wk), params.bk))
    v = split_heads(add(matmul(x3, params.wv), params.bv))

    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, s, d))
    out = add(matmul(merged, params.wo), params.bo)
    if squeeze:
        out = reshape(out, (s, d))
    if return_weights:
        return out, attn.data.copy()
    return out


class ParamSet:
    """Ordered name -> Tensor map; iteration order is lexicographic."""

    def __init__(self, named: dict[str, Tensor] | Iterable[tuple[str, Tensor]]):
        items = list(named.items()) if isinstance(named, dict) else list(named)
        names = [n for n, _ in items]
        if len(names) != len(set(names)):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(f"duplicate parameter names: {dup}")
        self._params: OrderedDict[str, Tensor] = OrderedDict(
            sorted(items, key=lambda kv: kv[0])
        )

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def total_size(self) -> int:
        return sum(t.size for t in self._params.values())


# --- deterministic initialization helpers ---


def seeded_rng(seed: int, name: str = "") -> np.random.Generator:
    """Generator whose stream depends only on (seed, name), not creation order."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.random.default_rng(np.random.SeedSequence(int.from_bytes(digest[:8], "little")))


def trunc_normal(
    rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02, dtype=np.float32
) -> np.ndarray:
    """Normal(0, std) truncated at +/-2 std via inverse-CDF sampling."""
    lo, hi = ndtr(-2.0), ndtr(2.0)
    u = rng.uniform(lo, hi, size=shape)
    return (ndtri(u) * std).astype(dtype)


# --- finite-difference harness (double precision) ---


def numerical_gradient(f: Callable[[], float], t: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. every entry of ``t``."""
    grad = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4
) -> float:
    """Max |a-n| / max(|a|, |n|, floor); floor guards near-zero entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(
    f: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    h: float = 1e-4,
    tol: float = 1e-3,
) -> float:
    """FD-check d f() / d t for every t in ``wrt``; returns the worst error.

    ``f`` must rebuild the graph on each call (it is re-evaluated under
    perturbed inputs). Raises AssertionError above ``tol``.
    """
    for t in wrt:
        t.zero_grad()
    loss = f()
    loss.backward()
    worst = 0.0
    for t in wrt:
        assert t.grad is not None, "parameter received no gradient"
        num = numerical_gradient(lambda: float(f().data), t, h=h)
        err = max_relative_error(t.grad, num)
        worst = max(worst, err)
    if worst >= tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e}")
    return worst
