"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Each op builds a node holding its inputs and a backward closure; calling
``backward()`` on a scalar output walks the recorded graph in reverse
topological order and accumulates gradients into every tensor that
requires them. The graph lives only as long as the output tensor, so one
forward/backward pass per batch leaves nothing behind.

Verification runs in float64; training typically uses float32 for speed.
``grad_check`` compares every analytic gradient against central finite
differences and is the oracle the rest of the model code is tested with.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, NumericError

_CKPT_MAGIC = b"LPCK"
BCE_CLAMP = 1e-7


class Tensor:
    """A dense array with an optional gradient and a backward record."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False,
                 parents: tuple = (), backward=None):
        self.values = np.asarray(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.values.size != 1:
            raise ConfigError(f"backward needs a scalar, got shape {self.shape}")
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())


def constant(values, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(values, dtype=dtype))


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ConfigError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def back(g):
        a._accumulate(g)
        b._accumulate(g)

    return Tensor(a.values + b.values, parents=(a, b), backward=back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    _same_shape(a, b, "mul")

    def back(g):
        a._accumulate(g * b.values)
        b._accumulate(g * a.values)

    return Tensor(a.values * b.values, parents=(a, b), backward=back)


def scale(a: Tensor, c: float) -> Tensor:
    def back(g):
        a._accumulate(g * c)

    return Tensor(a.values * c, parents=(a,), backward=back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d @ 2-d or 2-d @ 1-d product."""
    if a.values.ndim != 2 or b.values.ndim not in (1, 2):
        raise ConfigError(f"matmul: unsupported ranks {a.values.ndim} "
                          f"and {b.values.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul: inner dims disagree {a.shape} vs {b.shape}")

    def back(g):
        if b.values.ndim == 2:
            a._accumulate(g @ b.values.T)
            b._accumulate(a.values.T @ g)
        else:
            a._accumulate(np.outer(g, b.values))
            b._accumulate(a.values.T @ g)

    return Tensor(a.values @ b.values, parents=(a, b), backward=back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast over rows."""
    if x.values.ndim != 2 or w.values.ndim != 2 or b.values.ndim != 1:
        raise ConfigError("affine expects x[n,d], w[d,k], b[k]")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ConfigError(f"affine: shapes disagree x{x.shape} w{w.shape} "
                          f"b{b.shape}")

    def back(g):
        x._accumulate(g @ w.values.T)
        w._accumulate(x.values.T @ g)
        b._accumulate(g.sum(axis=0))

    return Tensor(x.values @ w.values + b.values, parents=(x, w, b),
                  backward=back)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows; the backward scatter-adds into the source."""
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.values)
        np.add.at(x.grad, idx, g)

    return Tensor(x.values[idx], parents=(x,), backward=back)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return Tensor(np.concatenate([t.values for t in parts], axis=axis),
                  parents=tuple(parts), backward=back)


def flatten(x: Tensor) -> Tensor:
    shape = x.shape

    def back(g):
        x._accumulate(g.reshape(shape))

    return Tensor(x.values.reshape(-1), parents=(x,), backward=back)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0

    def back(g):
        x._accumulate(g * mask)

    return Tensor(np.where(mask, x.values, 0.0), parents=(x,), backward=back)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.values > 0

    def back(g):
        x._accumulate(g * np.where(mask, 1.0, slope))

    return Tensor(np.where(mask, x.values, slope * x.values), parents=(x,),
                  backward=back)


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                   np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def back(g):
        x._accumulate(g * out * (1.0 - out))

    return Tensor(out, parents=(x,), backward=back)


def mean(x: Tensor) -> Tensor:
    n = x.values.size

    def back(g):
        x._accumulate(np.full_like(x.values, float(g) / n))

    return Tensor(np.asarray(x.values.mean()), parents=(x,), backward=back)


def segment_softmax(logits: Tensor, segments: np.ndarray,
                    num_segments: int) -> Tensor:
    """Softmax within each contiguous segment of a flat logit vector.

    ``segments`` assigns each entry to a segment id and must be sorted
    non-decreasing; each non-empty segment's outputs sum to one. An empty
    input yields an empty output.
    """
    segments = np.asarray(segments, dtype=np.int64)
    if logits.values.ndim != 1 or segments.shape != logits.shape:
        raise ConfigError("segment_softmax expects flat logits with one "
                          "segment id each")
    if len(segments) and np.any(np.diff(segments) < 0):
        raise ConfigError("segment ids must be sorted non-decreasing")
    if len(segments) and (segments[0] < 0 or segments[-1] >= num_segments):
        raise ConfigError("segment id out of range")

    if len(segments) == 0:
        return Tensor(np.zeros(0, dtype=logits.dtype), parents=(logits,),
                      backward=lambda g: None)

    # max-subtraction keeps the exponentials in range
    seg_max = np.full(num_segments, -np.inf, dtype=logits.dtype)
    np.maximum.at(seg_max, segments, logits.values)
    shifted = logits.values - seg_max[segments]
    e = np.exp(shifted)
    denom = np.bincount(segments, weights=e, minlength=num_segments)
    out = e / denom[segments]

    def back(g):
        dot = np.bincount(segments, weights=g * out, minlength=num_segments)
        logits._accumulate(out * (g - dot[segments]))

    return Tensor(out, parents=(logits,), backward=back)


def segment_weighted_sum(values: Tensor, weights: Tensor,
                         segments: np.ndarray, num_segments: int) -> Tensor:
    """Per-segment sum of value rows scaled by their weights; empty
    segments produce zero rows."""
    segments = np.asarray(segments, dtype=np.int64)
    if values.values.ndim != 2 or weights.values.ndim != 1:
        raise ConfigError("segment_weighted_sum expects values[m,d], weights[m]")
    if values.shape[0] != weights.shape[0] or values.shape[0] != len(segments):
        raise ConfigError("segment_weighted_sum: row counts disagree")
    d = values.shape[1]
    out = np.zeros((num_segments, d), dtype=values.dtype)
    np.add.at(out, segments, values.values * weights.values[:, None])

    def back(g):
        picked = g[segments]
        values._accumulate(picked * weights.values[:, None])
        weights._accumulate((picked * values.values).sum(axis=1))

    return Tensor(out, parents=(values, weights), backward=back)


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of x by scalar w[i]."""
    if x.values.ndim != 2 or w.values.ndim != 1 or x.shape[0] != w.shape[0]:
        raise ConfigError("scale_rows expects x[m,d], w[m]")

    def back(g):
        x._accumulate(g * w.values[:, None])
        w._accumulate((g * x.values).sum(axis=1))

    return Tensor(x.values * w.values[:, None], parents=(x, w), backward=back)


def sparse_matmul(s: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times dense tensor."""
    s = s.tocsr()

    def back(g):
        x._accumulate(s.T @ g)

    return Tensor(s @ x.values, parents=(x,), backward=back)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a mask drawn from the supplied generator."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    mask = mask.astype(x.dtype)

    def back(g):
        x._accumulate(g * mask)

    return Tensor(x.values * mask, parents=(x,), backward=back)


def bce_loss(p: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of probabilities against 0/1 labels.

    Probabilities are clamped into [1e-7, 1 - 1e-7]; the gradient is cut
    outside the clamp interval.
    """
    y = np.asarray(labels, dtype=p.dtype)
    if y.shape != p.shape:
        raise ConfigError(f"bce_loss: {p.shape} probabilities vs "
                          f"{y.shape} labels")
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be 0 or 1")
    lo, hi = BCE_CLAMP, 1.0 - BCE_CLAMP
    clamped = np.clip(p.values, lo, hi)
    losses = -(y * np.log(clamped) + (1.0 - y) * np.log1p(-clamped))
    n = max(y.size, 1)

    def back(g):
        interior = (p.values > lo) & (p.values < hi)
        dp = (-y / clamped + (1.0 - y) / (1.0 - clamped)) / n
        p._accumulate(float(g) * dp * interior)

    return Tensor(np.asarray(losses.mean() if y.size else 0.0,
                             dtype=p.dtype), parents=(p,), backward=back)


class ParamStore:
    """Named trainable tensors plus per-parameter optimizer state."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(values, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        self.moment1[name] = np.zeros_like(t.values)
        self.moment2[name] = np.zeros_like(t.values)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: t.values.copy() for k, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            if k not in values:
                raise DataError(f"checkpoint is missing parameter {k!r}")
            if values[k].shape != t.values.shape:
                raise DataError(f"parameter {k!r} has shape "
                                f"{values[k].shape}, expected {t.values.shape}")
            t.values = values[k].astype(self.dtype)

    def save(self, path: str | Path) -> None:
        """Write the checkpoint: magic "LPCK" then one record per tensor
        (u32 name length, name, u32 rank, u32 dims, f32 payload), LE."""
        parts = [_CKPT_MAGIC]
        for name, t in self.params.items():
            encoded = name.encode("utf-8")
            dims = t.values.shape
            parts.append(struct.pack("<I", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<I", len(dims)))
            parts.append(struct.pack(f"<{len(dims)}I", *dims))
            parts.append(np.ascontiguousarray(t.values,
                                              dtype="<f4").tobytes())
        Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint file back into name -> float32 array."""
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected "
                        f"{_CKPT_MAGIC!r}")
    offset = 4
    out: dict[str, np.ndarray] = {}
    while offset < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        out[name] = values.reshape(dims).copy()
    return out


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps_opt: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """One Adam update with decoupled weight decay; zeroes gradients and
    advances the step counter."""
    missing = [k for k, t in store.params.items() if t.grad is None]
    if missing:
        raise NumericError(f"adam_step: no gradient for {missing[:3]}"
                           f"{'...' if len(missing) > 3 else ''}")
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, param in store.params.items():
        g = param.grad
        m = store.moment1[name]
        v = store.moment2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        param.values = param.values - lr * (mhat / (np.sqrt(vhat) + eps_opt)
                                            + weight_decay * param.values)
    store.zero_grad()


def grad_check(f, store: ParamStore, h: float = 1e-5,
               max_coords_per_param: int = 16, seed: int = 0) -> float:
    """Max relative disagreement between backward gradients and central
    finite differences, sampled over parameter coordinates.

    ``f`` must rebuild its computation from the current parameter values
    and return a scalar Tensor.
    """
    if h <= 0:
        raise ConfigError(f"step size must be positive, got {h}")
    rng = np.random.default_rng(seed)
    store.zero_grad()
    out = f()
    out.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None
                    else np.zeros_like(t.values))
                for k, t in store.params.items()}
    store.zero_grad()

    worst = 0.0
    for name, param in store.params.items():
        flat = param.values.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if n <= max_coords_per_param
                  else rng.choice(n, size=max_coords_per_param, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            hi = float(f().values)
            flat[c] = orig - h
            lo = float(f().values)
            flat[c] = orig
            numeric = (hi - lo) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[c])
            err = abs(a - numeric) / max(1.0, abs(a))
            worst = max(worst, err)
    return worst
