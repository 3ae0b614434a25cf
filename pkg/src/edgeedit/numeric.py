"""Small dense-tensor core with reverse-mode autodiff and Adam.

Every primitive builds a node holding its forward value and a closure that
pushes the upstream gradient to its inputs. ``Tensor.backward`` walks the
graph in reverse topological order. Arrays are float64 unless the caller
passes something else.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
CHECKPOINT_FORMAT = "edgeedit-checkpoint"
CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Backpropagate from a scalar. Gradients accumulate into ``.grad``."""
        if self.data.size != 1:
            raise DimensionError(f"backward: expected a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and _needs_grad(p):
                    stack.append((p, False))
        upstream: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if pg is None or not _needs_grad(parent):
                        continue
                    key = id(parent)
                    upstream[key] = upstream[key] + pg if key in upstream else pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    live = [p for p in parents if _needs_grad(p)]
    out = Tensor(data, _parents=live, op=op)
    if live:
        out._backward = backward
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- primitives ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot broadcast {a.shape} and {b.shape}") from exc
    return _result(out, (a, b), "add", lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), "scale", lambda g: ((a, g * c),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _result(out, (a, b), "matmul", lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)))


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = xW + b"""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])

    def backward(g):
        parts = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            parts.append((t, g[tuple(index)]))
        return parts

    return _result(out, tensors, "concat", backward)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding: index out of range for table of {table.shape[0]} rows")

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return ((table, dt),)

    return _result(table.data[ids], (table,), "embedding", backward)


take_rows = embedding


def max_pool(x: Tensor, groups: Sequence[Sequence[int]]) -> Tensor:
    """Row-wise max over each group of rows of ``x``; one output row per group."""
    if x.data.ndim != 2:
        raise DimensionError(f"max_pool: expected 2-D input, got {x.shape}")
    rows, argmax = [], []
    for grp in groups:
        idx = np.asarray(grp, dtype=np.int64)
        if idx.size == 0:
            raise DimensionError("max_pool: empty group")
        block = x.data[idx]
        arg = block.argmax(axis=0)
        rows.append(block[arg, np.arange(block.shape[1])])
        argmax.append(idx[arg])
    out = np.stack(rows) if rows else np.zeros((0, x.shape[1]), dtype=DTYPE)
    winners = np.stack(argmax) if argmax else np.zeros((0, x.shape[1]), dtype=np.int64)

    def backward(g):
        dx = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(x.shape[1]), winners.shape)
        np.add.at(dx, (winners, cols), g)
        return ((x, dx),)

    return _result(out, (x,), "max_pool", backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), "relu", lambda g: ((x, g * mask),))


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: an explicit rng is required in train mode")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * mask, (x,), "dropout", lambda g: ((x, g * mask),))


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return ((x, p * (g - (g * p).sum(axis=-1, keepdims=True))),)

    return _result(p, (x,), "softmax", backward)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return ((x, g - p * g.sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), "log_softmax", backward)


def nll_loss(logp: Tensor, targets, reduction: str = "sum") -> Tensor:
    """Negative log-likelihood of integer ``targets`` under row log-probabilities."""
    targets = np.asarray(targets, dtype=np.int64)
    if logp.data.ndim != 2 or targets.shape != (logp.shape[0],):
        raise DimensionError(f"nll_loss: logp {logp.shape} vs targets {targets.shape}")
    rows = np.arange(targets.size)
    total = -logp.data[rows, targets].sum()
    denom = max(targets.size, 1) if reduction == "mean" else 1

    def backward(g):
        d = np.zeros_like(logp.data)
        d[rows, targets] = -g.reshape(-1)[0] / denom
        return ((logp, d),)

    return _result(np.array(total / denom), (logp,), "nll_loss", backward)


def bilinear(a: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """All-pairs bilinear map: out[n, m, k] = sum_ij a[n, i] w[k, i, j] b[m, j]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or w.data.ndim != 3 or w.shape[1:] != (a.shape[1], b.shape[1]):
        raise DimensionError(f"bilinear: a {a.shape}, w {w.shape}, b {b.shape}")
    k, di, dj = w.shape
    n, m = a.shape[0], b.shape[0]
    # u[n, k, j] = sum_i a[n, i] w[k, i, j]
    u = (a.data @ w.data.transpose(1, 0, 2).reshape(di, k * dj)).reshape(n, k, dj)
    out = (u.reshape(n * k, dj) @ b.data.T).reshape(n, k, m).transpose(0, 2, 1)

    def backward(g):
        gk = g.transpose(0, 2, 1)  # n, k, m
        gb = (gk.reshape(n * k, m) @ b.data).reshape(n, k, dj)  # sum_m g[n,m,k] b[m,j]
        da = gb.reshape(n, k * dj) @ w.data.transpose(0, 2, 1).reshape(k * dj, di)
        dw = (a.data.T @ gb.reshape(n, k * dj)).reshape(di, k, dj).transpose(1, 0, 2)
        db = gk.transpose(2, 0, 1).reshape(m, n * k) @ u.reshape(n * k, dj)
        return ((a, da), (w, dw), (b, db))

    return _result(np.ascontiguousarray(out), (a, w, b), "bilinear", backward)


def gather_pairs(x: Tensor, heads, tails) -> Tensor:
    """Pick x[heads[p], tails[p]] from an (n, m, k) tensor, giving (P, k)."""
    heads = np.asarray(heads, dtype=np.int64)
    tails = np.asarray(tails, dtype=np.int64)

    def backward(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (heads, tails), g)
        return ((x, dx),)

    return _result(x.data[heads, tails], (x,), "gather_pairs", backward)


def total(x: Tensor) -> Tensor:
    return _result(np.array(x.data.sum()), (x,), "sum", lambda g: ((x, np.broadcast_to(g, x.shape).copy()),))


def sum_tensors(tensors: Iterable[Tensor]) -> Tensor:
    tensors = list(tensors)
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out


# -- parameters and optimizer ---------------------------------------------------


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class ParamStore:
    params: dict[str, Tensor] = field(default_factory=dict)
    adam: dict[str, AdamState] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=DTYPE), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.data.size for t in self.params.values())


def adam_step(
    store: ParamStore,
    lr: float = 0.001,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> ParamStore:
    """One Adam update (PyTorch defaults); parameters without a gradient are skipped."""
    if all(t.grad is None for t in store.params.values()):
        raise ValueError("adam_step: no parameter has a gradient")
    b1, b2 = betas
    for name, t in store.params.items():
        if t.grad is None:
            continue
        state = store.adam.get(name)
        if state is None:
            state = store.adam[name] = AdamState(np.zeros_like(t.data), np.zeros_like(t.data))
        state.step += 1
        state.m = b1 * state.m + (1 - b1) * t.grad
        state.v = b2 * state.v + (1 - b2) * t.grad * t.grad
        m_hat = state.m / (1 - b1**state.step)
        v_hat = state.v / (1 - b2**state.step)
        t.data = t.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    store.step += 1
    store.zero_grad()
    return store


def grad_check(
    f: Callable[[], Tensor],
    store: ParamStore,
    epsilon: float = 1e-6,
    n_coords: int = 100,
    seed: int = 0,
    floor: float = 1e-3,
) -> float:
    """Max relative error between backprop gradients and central differences.

    Coordinates are drawn per parameter so that small tensors are always
    covered; at least ``n_coords`` coordinates are checked in total. The
    relative error uses ``max(|analytic|, |numeric|, floor)`` as denominator,
    so components below ``floor`` are judged on absolute error. Central
    differences carry about ``1e-16 * |f| / epsilon`` of roundoff.
    """
    rng = np.random.default_rng(seed)
    store.zero_grad()
    f().backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in store.items()}
    store.zero_grad()

    names = list(store.params)
    sizes = [store[n].data.size for n in names]
    per = max(1, math.ceil(n_coords / max(len(names), 1)))
    picks: list[tuple[str, int]] = []
    for name, size in zip(names, sizes):
        k = min(size, per)
        picks.extend((name, int(i)) for i in rng.choice(size, size=k, replace=False))
    if len(picks) < min(n_coords, sum(sizes)):
        taken = set(picks)
        rest = [(name, i) for name, size in zip(names, sizes) for i in range(size) if (name, i) not in taken]
        extra = rng.choice(len(rest), size=min(n_coords, sum(sizes)) - len(picks), replace=False)
        picks.extend(rest[int(k)] for k in sorted(extra))

    worst = 0.0
    for name, idx in picks:
        flat = store[name].data.reshape(-1)
        old = flat[idx]
        flat[idx] = old + epsilon
        up = f().item()
        flat[idx] = old - epsilon
        down = f().item()
        flat[idx] = old
        numeric = (up - down) / (2 * epsilon)
        a = analytic[name].reshape(-1)[idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    store.zero_grad()
    return worst


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path: str | Path, store: ParamStore, meta: dict) -> None:
    """Write parameters, Adam state and ``meta`` (JSON-able) into one ``.npz``."""
    arrays: dict[str, np.ndarray] = {}
    for name, t in store.items():
        arrays[f"param/{name}"] = t.data
        state = store.adam.get(name)
        if state is not None:
            arrays[f"adam_m/{name}"] = state.m
            arrays[f"adam_v/{name}"] = state.v
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": store.step,
        "adam_steps": {n: s.step for n, s in store.adam.items()},
        "order": list(store.params),
        "meta": meta,
    }
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(z["__header__"].tobytes().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not an edgeedit checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        store = ParamStore(step=header["step"])
        for name in header["order"]:
            store.add(name, z[f"param/{name}"])
        for name, step in header["adam_steps"].items():
            store.adam[name] = AdamState(z[f"adam_m/{name}"].copy(), z[f"adam_v/{name}"].copy(), step)
    return store, header["meta"]
