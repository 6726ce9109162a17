"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active ``Tape`` when any input
requires a gradient; outside a tape they only compute values, which is what
inference uses.

    with Tape() as tape:
        loss = model_loss(...)
    tape.backward(loss)
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch, TapeConsumed

_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise NonScalarLoss(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for the common cases
    def __matmul__(self, other): return matmul(self, other)
    def __add__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __mul__(self, other): return mul(self, other) if isinstance(other, Tensor) else scale(self, other)
    __rmul__ = __mul__

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations; consumed by a single ``backward``."""

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring a gradient."""
        if self.consumed:
            raise TapeConsumed("backward already run on this tape; record a new one")
        if loss.data.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        self.consumed = True
        if not loss.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for parent, pg in zip(rec.parents, rec.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._leaf:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg
        self.records.clear()


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _result(value: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = value
    out.grad = None
    out.name = None
    out.requires_grad = False
    out._leaf = True
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._leaf = False
        tape.records.append(_Record(out, tuple(parents), backward))
    return out


def _need_2d(name: str, *ts: Tensor) -> None:
    for t in ts:
        if t.data.ndim != 2:
            raise ShapeMismatch(f"{name}: expected a 2-d tensor, got shape {t.shape}")


# --------------------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _result(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def transpose(a: Tensor) -> Tensor:
    _need_2d("transpose", a)
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    for axis, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_bias_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    ok = (a.data.ndim == b.data.ndim == 2 and
          all(bs == as_ or bs == 1 for as_, bs in zip(a.shape, b.shape)))
    if not ok:
        raise ShapeMismatch(f"{name}: {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x m row or n x 1 column broadcast over ``a``."""
    _check_bias_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, sb) if sb != sa else g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_bias_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (g, -(_reduce_to(g, sb) if sb != sa else g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} and {b.shape}")
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along each row (max-subtracted)."""
    _need_2d("row_softmax", a)
    y = _softmax_rows(a.data)
    # Jacobian-vector product: y * (g - <g, y>)
    return _result(y, (a,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,))


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b`` below ``a``."""
    _need_2d("concat_rows", a, b)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"concat_rows: {a.shape} and {b.shape}")
    n = a.shape[0]
    return _result(np.vstack([a.data, b.data]), (a, b), lambda g: (g[:n], g[n:]))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Place ``b`` to the right of ``a``."""
    _need_2d("concat_cols", a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"concat_cols: {a.shape} and {b.shape}")
    m = a.shape[1]
    return _result(np.hstack([a.data, b.data]), (a, b), lambda g: (g[:, :m], g[:, m:]))


def mean_over_columns(a: Tensor) -> Tensor:
    """d x N -> d x 1 column mean."""
    _need_2d("mean_over_columns", a)
    n = a.shape[1]
    return _result(a.data.mean(axis=1, keepdims=True), (a,),
                   lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def pick_row(a: Tensor, i: int) -> Tensor:
    _need_2d("pick_row", a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[i] = g[0]
        return (out,)
    return _result(a.data[i:i + 1].copy(), (a,), back)


def pick_col(a: Tensor, j: int) -> Tensor:
    _need_2d("pick_col", a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[:, j] = g[:, 0]
        return (out,)
    return _result(a.data[:, j:j + 1].copy(), (a,), back)


def take_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Gather rows ``idx`` of ``a`` (embedding lookup)."""
    _need_2d("take_rows", a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeMismatch(f"take_rows: index out of range for {a.shape}")
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)
    return _result(a.data[idx], (a,), back)


def dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: retained units scaled by 1/(1-rate) in training, identity otherwise."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


def bce_with_logits(z: Tensor, target: float, weight: float = 1.0) -> Tensor:
    """Binary cross-entropy of sigmoid(z) against a 0/1 target, computed stably from the logit."""
    if z.data.size != 1:
        raise ShapeMismatch(f"bce_with_logits expects a single logit, got {z.shape}")
    x = float(z.data.reshape(()))
    y = float(target)
    loss = max(x, 0.0) - x * y + np.log1p(np.exp(-abs(x)))
    p = float(_sigmoid(np.array([x]))[0])
    shape = z.shape
    return _result(np.array(weight * loss), (z,), lambda g: (np.full(shape, float(g) * weight * (p - y)),))


def softmax_cross_entropy(logits: Tensor, target: int, weight: float = 1.0) -> Tensor:
    """-weight * log softmax(logits)[target] for a 1 x C logit row."""
    _need_2d("softmax_cross_entropy", logits)
    if logits.shape[0] != 1 or not 0 <= target < logits.shape[1]:
        raise ShapeMismatch(f"softmax_cross_entropy: logits {logits.shape}, target {target}")
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    p = np.exp(z - lse)
    onehot = np.zeros_like(p)
    onehot[0, target] = 1.0
    loss = -(z[0, target] - lse)
    return _result(np.array(weight * loss), (logits,), lambda g: (float(g) * weight * (p - onehot),))


# --------------------------------------------------------------------------- RNG and checkpoints

def make_rng(seed: int, *stream: object) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by the seed and a stream name path."""
    h = hashlib.blake2b(repr((int(seed),) + tuple(stream)).encode(), digest_size=16).digest()
    key = np.frombuffer(h, dtype="<u8")
    return np.random.Generator(np.random.Philox(key=key))


CHECKPOINT_FORMAT = "adlex-arrays"
CHECKPOINT_VERSION = 1


def encode_arrays(arrays: dict[str, np.ndarray]) -> dict:
    return {
        name: {"shape": list(a.shape),
               "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")}
        for name, a in sorted(arrays.items())
    }


def decode_arrays(obj: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in obj.items():
        raw = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
        out[name] = raw.reshape(entry["shape"]).astype(np.float64)
    return out


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """JSON file of named float64 arrays (little-endian bytes, base64); lossless round trip."""
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "meta": meta or {},
           "arrays": encode_arrays(arrays)}
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    return decode_arrays(doc["arrays"]), doc.get("meta", {})


# --------------------------------------------------------------------------- gradient check

def fd_check(f: Callable[[], Tensor], params: Iterable[Tensor], epsilon: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must be deterministic and read the parameters' current data.
    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    params = list(params)
    for p in params:
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = f().item()
            flat[i] = orig - epsilon
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
