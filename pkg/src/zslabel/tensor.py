"""Dense float64 tensors with reverse-mode autodiff on a dynamic tape.

Arrays are plain numpy ndarrays; every primitive records a backward
closure on the thread-local active tape. Rebuilding the tape each
forward pass keeps the graph trivially correct for control flow.
Randomness comes from an explicit 64-bit seeded generator (splitmix64)
so every run is bit-reproducible.
"""

from __future__ import annotations

import json
import threading

import numpy as np

from .errors import (
    CheckpointVersionError,
    ContractError,
    DimensionError,
    NumericError,
)

CHECKPOINT_FORMAT_VERSION = 1

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z: int) -> int:
    """splitmix64 finalizer on a python int."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based splitmix64 stream with an explicit 64-bit seed.

    Draw i of a stream seeded with s is mix(s + i*gamma), so blocks of
    any size can be generated vectorized without changing the stream.
    """

    def __init__(self, seed: int):
        self._seed = seed & _MASK64
        self._count = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        z = np.uint64(self._seed) + idx * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self._count += n
        return z

    def uniform(self, shape=None) -> np.ndarray | float:
        """float64 samples in [0, 1); scalar when shape is None."""
        if shape is None:
            return float((int(self._raw(1)[0]) >> 11) * 2.0**-53)
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        vals = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return vals.reshape(shape)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"randbelow requires n >= 1, got {n}")
        return (int(self._raw(1)[0]) * n) >> 64

    def shuffle(self, items) -> None:
        """In-place Fisher-Yates shuffle of a list or 1-D array."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def subset(self, n: int, k: int) -> list[int]:
        """k distinct indices drawn uniformly from range(n), sorted."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return sorted(pool[:k])

    def child(self, tag: int) -> "Rng":
        """Independent stream derived from this seed and an integer tag."""
        return Rng(_mix64(self._seed ^ _mix64((tag + 1) * _GAMMA)))


class Tensor:
    """A numpy float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def grad_array(self) -> np.ndarray:
        """Gradient buffer, materialized as zeros when never touched."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


_ACTIVE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_ACTIVE, "tape", None)


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Execution order is a topological order of the dynamically built
    graph, so backward is a single reverse sweep. Gradients accumulate
    additively into each input's buffer.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = _ACTIVE.stack = []
        stack.append(self)
        _ACTIVE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.stack.pop()
        _ACTIVE.tape = _ACTIVE.stack[-1] if _ACTIVE.stack else None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        out.requires_grad = True
        self._records.append((out, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self._records)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss.

    Parameters recorded on the tape but not reachable from this loss
    get an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    else:
        loss.grad = loss.grad + np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape._records):
        if out.grad is None:
            continue
        grads = backward_fn(out.grad)
        for tensor, grad in zip(inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.grad is None:
                # copy: backward closures may hand back shared arrays
                tensor.grad = np.array(grad)
            else:
                tensor.grad += grad
    for _, inputs, _ in tape._records:
        for tensor in inputs:
            if tensor.requires_grad and tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)


def _maybe_record(out, inputs, backward_fn) -> None:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_fn)


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError("non-finite values in elementwise operand")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    am = a.data.T if transpose_a else a.data
    bm = b.data.T if transpose_b else b.data
    if am.ndim != 2 or bm.ndim != 2 or am.shape[1] != bm.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {am.shape} x {bm.shape}"
            f" (from {a.shape} and {b.shape})"
        )
    out = Tensor(am @ bm)

    def backward_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ bm.T
            if transpose_a:
                ga = ga.T
        if b.requires_grad:
            gb = am.T @ g
            if transpose_b:
                gb = gb.T
        return ga, gb

    _maybe_record(out, (a, b), backward_fn)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b with a 1 x D bias row."""
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} x {w.shape}")
    if b.data.shape != (1, w.data.shape[1]):
        raise DimensionError(f"linear bias must be (1, {w.data.shape[1]}), got {b.shape}")
    out = Tensor(x.data @ w.data + b.data)

    def backward_fn(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = g.sum(axis=0, keepdims=True) if b.requires_grad else None
        return gx, gw, gb

    _maybe_record(out, (x, w, b), backward_fn)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_finite(a.data, b.data)
    try:
        out = Tensor(a.data + b.data)
    except ValueError as exc:
        raise DimensionError(f"add shapes {a.shape} and {b.shape}: {exc}") from exc

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    _maybe_record(out, (a, b), backward_fn)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_finite(a.data, b.data)
    try:
        out = Tensor(a.data * b.data)
    except ValueError as exc:
        raise DimensionError(f"mul shapes {a.shape} and {b.shape}: {exc}") from exc

    def backward_fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    _maybe_record(out, (a, b), backward_fn)
    return out


def scale(a: Tensor, factor: float, offset: float = 0.0) -> Tensor:
    _check_finite(a.data)
    out = Tensor(a.data * factor + offset)

    def backward_fn(g):
        return (g * factor,)

    _maybe_record(out, (a,), backward_fn)
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    _check_finite(a.data)
    if not np.isfinite(exponent):
        raise NumericError(f"power exponent must be finite, got {exponent}")
    result = a.data**exponent
    if not np.isfinite(result).all():
        raise NumericError(f"power({exponent}) produced non-finite values")
    out = Tensor(result)

    def backward_fn(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    _maybe_record(out, (a,), backward_fn)
    return out


def tanh(a: Tensor) -> Tensor:
    _check_finite(a.data)
    out = Tensor(np.tanh(a.data))

    def backward_fn(g):
        return (g * (1.0 - out.data**2),)

    _maybe_record(out, (a,), backward_fn)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    """Stable logistic: exp() only ever sees non-positive arguments."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    _check_finite(a.data)
    out = Tensor(_sigmoid(a.data))

    def backward_fn(g):
        return (g * out.data * (1.0 - out.data),)

    _maybe_record(out, (a,), backward_fn)
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-form gaussian error linear unit (smooth, so finite
    differences stay valid in gradient checks)."""
    _check_finite(a.data)
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * (x2 * x))
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def backward_fn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    _maybe_record(out, (a,), backward_fn)
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    if x.data.ndim != 2 or x.data.shape[1] < 1:
        raise DimensionError(f"softmax_rows needs a 2-D tensor with >=1 column, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=1, keepdims=True))

    def backward_fn(g):
        p = out.data
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    _maybe_record(out, (x,), backward_fn)
    return out


def reduce_sum(a: Tensor) -> Tensor:
    out = Tensor(np.array([[a.data.sum()]]))

    def backward_fn(g):
        return (np.full_like(a.data, g[0, 0]),)

    _maybe_record(out, (a,), backward_fn)
    return out


def _reduce_extremum(a: Tensor, argfn) -> Tensor:
    flat_idx = argfn(a.data)  # first attaining index in row-major order
    out = Tensor(np.array([[a.data.reshape(-1)[flat_idx]]]))

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga.reshape(-1)[flat_idx] = g[0, 0]
        return (ga,)

    _maybe_record(out, (a,), backward_fn)
    return out


def reduce_min(a: Tensor) -> Tensor:
    """Minimum over all elements; subgradient flows to the first
    attaining index (row-major), which makes ties deterministic."""
    return _reduce_extremum(a, np.argmin)


def reduce_max(a: Tensor) -> Tensor:
    return _reduce_extremum(a, np.argmax)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Row lookup (also the embedding lookup); backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows indices must be 1-D, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise DimensionError(
            f"gather_rows index out of range for {a.data.shape[0]} rows"
        )
    out = Tensor(a.data[idx])

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    _maybe_record(out, (a,), backward_fn)
    return out


def dropout(a: Tensor, prob: float, rng: Rng) -> Tensor:
    """Inverted dropout; identity when prob == 0."""
    if prob == 0.0:
        return a
    if not 0.0 <= prob < 1.0:
        raise NumericError(f"dropout prob must be in [0, 1), got {prob}")
    keep = (rng.uniform(a.shape) >= prob) / (1.0 - prob)
    out = Tensor(a.data * keep)

    def backward_fn(g):
        return (g * keep,)

    _maybe_record(out, (a,), backward_fn)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learned gain and bias (1 x D)."""
    _check_finite(x.data)
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = centered * ivar
    out = Tensor(xhat * gain.data + bias.data)

    def backward_fn(g):
        gx = ggain = gbias = None
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=0, keepdims=True)
        if bias.requires_grad:
            gbias = g.sum(axis=0, keepdims=True)
        if x.requires_grad:
            dxhat = g * gain.data
            gx = ivar * (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )
        return gx, ggain, gbias

    _maybe_record(out, (x, gain, bias), backward_fn)
    return out


def bce_with_logits(logit: Tensor, target: float) -> Tensor:
    """Binary cross-entropy computed from the logit: softplus(z) - y*z."""
    if logit.data.size != 1:
        raise ContractError(f"bce_with_logits expects a scalar logit, got {logit.shape}")
    z = logit.data
    loss = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - target * z

    out = Tensor(loss.reshape(1, 1))

    def backward_fn(g):
        return (g.reshape(logit.shape) * (_sigmoid(z) - target),)

    _maybe_record(out, (logit,), backward_fn)
    return out


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    num_heads: int,
    key_keep: np.ndarray,
    dropout_prob: float = 0.0,
    rng: Rng | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Multi-head scaled dot-product attention over N x D inputs.

    Returns the attended output and the pre-dropout attention
    distributions with shape (num_heads, N, N). Positions where
    key_keep is False receive exactly zero attention.
    """
    n, d = q.data.shape
    if k.data.shape != (n, d) or v.data.shape != (n, d):
        raise DimensionError(
            f"attention operands must share shape: {q.shape}, {k.shape}, {v.shape}"
        )
    if d % num_heads != 0:
        raise DimensionError(f"width {d} not divisible by {num_heads} heads")
    keep = np.asarray(key_keep, dtype=bool)
    if keep.shape != (n,):
        raise DimensionError(f"key_keep must have shape ({n},), got {keep.shape}")
    if not keep.any():
        raise ContractError("attention requires at least one unmasked key")
    _check_finite(q.data, k.data, v.data)

    dh = d // num_heads
    inv_scale = 1.0 / np.sqrt(dh)
    col_mask = np.where(keep, 0.0, -np.inf)[None, None, :]

    def split(m):  # (N, D) -> (H, N, dh)
        return m.reshape(n, num_heads, dh).transpose(1, 0, 2)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = qh @ kh.transpose(0, 2, 1) * inv_scale + col_mask
    scores -= scores.max(axis=2, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=2, keepdims=True)
    used = probs
    drop_masks = None
    if dropout_prob > 0.0:
        if rng is None:
            raise ContractError("attention dropout requires an rng")
        drop_masks = (rng.uniform((num_heads, n, n)) >= dropout_prob) / (1.0 - dropout_prob)
        used = probs * drop_masks
    out = Tensor((used @ vh).transpose(1, 0, 2).reshape(n, d))

    def backward_fn(g):
        gh = split(g)
        gq = gk = gv = None
        dused = gh @ vh.transpose(0, 2, 1)
        dp = dused if drop_masks is None else dused * drop_masks
        dscores = probs * (dp - (dp * probs).sum(axis=2, keepdims=True))
        if v.requires_grad:
            gv = (used.transpose(0, 2, 1) @ gh).transpose(1, 0, 2).reshape(n, d)
        if q.requires_grad:
            gq = (dscores @ kh * inv_scale).transpose(1, 0, 2).reshape(n, d)
        if k.requires_grad:
            gk = (dscores.transpose(0, 2, 1) @ qh * inv_scale).transpose(1, 0, 2).reshape(n, d)
        return gq, gk, gv

    _maybe_record(out, (q, k, v), backward_fn)
    return out, probs


def glorot_init(shape, rng: Rng) -> Tensor:
    """Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)) on 2-D shapes."""
    if len(shape) != 2:
        raise DimensionError(f"glorot_init needs a 2-D shape, got {tuple(shape)}")
    fan_in, fan_out = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter((rng.uniform(shape) * 2.0 - 1.0) * bound)


# ---------------------------------------------------------------------------
# parameter checkpoints
# ---------------------------------------------------------------------------


def save_params(path, params: dict[str, Tensor], meta: dict) -> None:
    """Write named parameters plus JSON metadata; round-trips bit-exactly."""
    payload = {f"param/{name}": t.data for name, t in params.items()}
    payload["__format_version__"] = np.array(CHECKPOINT_FORMAT_VERSION)
    payload["__meta_json__"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **payload)


def load_params(path) -> tuple[dict[str, Tensor], dict]:
    with np.load(path, allow_pickle=False) as archive:
        version = int(archive["__format_version__"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint format {version} unsupported"
                f" (expected {CHECKPOINT_FORMAT_VERSION})"
            )
        meta = json.loads(str(archive["__meta_json__"]))
        params = {
            name[len("param/"):]: parameter(archive[name])
            for name in archive.files
            if name.startswith("param/")
        }
    return params, meta
