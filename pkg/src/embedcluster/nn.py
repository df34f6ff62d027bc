"""A small reverse-mode autodiff engine over numpy arrays.

Only the layers the three networks need are provided: dense, grouped 1-d
convolution, batch normalization, ELU, average pooling, dropout, sigmoid and
the BCE / MSE losses, plus Adam. Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BCE_CLAMP = 1e-7


class ShapeError(ValueError):
    pass


class Tensor:
    """An array node in the computation graph."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def total(x: Tensor) -> Tensor:
    return _node(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    """Flatten all but the leading batch axis."""
    return reshape(x, (x.shape[0], -1))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(x.data > 0, x.data, neg)
    slope = np.where(x.data > 0, 1.0, neg + alpha)
    return _node(out, (x,), lambda g: (g * slope,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def dense_forward(x, W, b) -> Tensor:
    """``y = W x + b`` for x of shape (n_in,) or (batch, n_in)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.data.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"dense shapes incompatible: x{x.shape} W{W.shape} b{b.shape}")
    out = x.data @ W.data.T + b.data

    def backward(g):
        gx = g @ W.data
        gW = np.outer(g, x.data) if x.data.ndim == 1 else g.T @ x.data
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gW, gb

    return _node(out, (x, W, b), backward)


def _same_pad(K: int) -> tuple[int, int]:
    left = (K - 1) // 2
    return left, K - 1 - left


def _windows(xp: np.ndarray, K: int) -> np.ndarray:
    """(N, G, C, Lp) -> (N, G, L_out, C*K) patch matrix."""
    N, G, C, Lp = xp.shape
    win = sliding_window_view(xp, K, axis=3)  # N, G, C, L_out, K
    return win.transpose(0, 1, 3, 2, 4).reshape(N, G, Lp - K + 1, C * K)


def _correlate(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Grouped valid cross-correlation: (N, G, C, Lp) x (G, O, C, K) -> (N, G, O, L_out)."""
    G, O, C, K = w.shape
    patches = _windows(xp, K)
    out = np.matmul(patches, w.reshape(G, O, C * K).transpose(0, 2, 1))
    return out.transpose(0, 1, 3, 2)


def conv1d_forward(x, kernels, groups: int = 1, padding: str = "valid") -> Tensor:
    """Grouped cross-correlation without bias.

    ``x`` is (C_in, L) or (batch, C_in, L); ``kernels`` is (C_out, C_in/groups, K).
    ``same`` padding puts the extra zero on the right for even K.
    """
    x, w = as_tensor(x), as_tensor(kernels)
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"conv1d expects (N, C, L) input and (C_out, C_in/g, K) kernels, got {x.shape}, {w.shape}")
    N, C_in, L = xd.shape
    C_out, C_per, K = w.shape
    if groups < 1 or C_in % groups or C_out % groups or C_in // groups != C_per:
        raise ShapeError(f"group mismatch: C_in={C_in}, C_out={C_out}, groups={groups}, kernel in-channels={C_per}")
    if padding == "same":
        left, right = _same_pad(K)
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if K > L + left + right:
        raise ShapeError(f"kernel length {K} exceeds padded input length {L + left + right}")

    G, O = groups, C_out // groups
    xp = np.pad(xd, ((0, 0), (0, 0), (left, right))).reshape(N, G, C_per, -1)
    L_out = xp.shape[3] - K + 1
    wg = w.data.reshape(G, O, C_per, K)
    out = _correlate(xp, wg).reshape(N, C_out, L_out)

    def backward(g):
        gg = np.ascontiguousarray(g.reshape(N, G, O, L_out))
        patches = _windows(xp, K)  # N, G, L_out, C*K
        gw = np.einsum("ngla,ngol->goa", patches, gg, optimize=True).reshape(w.shape)
        # input gradient: full correlation of the output gradient with the flipped kernel
        gpad = np.pad(gg, ((0, 0), (0, 0), (0, 0), (K - 1, K - 1)))
        wflip = wg[..., ::-1].transpose(0, 2, 1, 3)  # G, C, O, K
        gxp = _correlate(gpad, np.ascontiguousarray(wflip)).reshape(N, C_in, -1)
        gx = gxp[:, :, left : left + L]
        return (gx if batched else gx[0]), gw

    out = out if batched else out[0]
    return _node(out, (x, w), backward)


def avg_pool(x, width: int) -> Tensor:
    """Non-overlapping mean over the last axis."""
    x = as_tensor(x)
    L = x.shape[-1]
    if width < 1 or L % width:
        raise ShapeError(f"length {L} not divisible by pool width {width}")
    out = x.data.reshape(*x.shape[:-1], L // width, width).mean(axis=-1)
    return _node(out, (x,), lambda g: (np.repeat(g, width, axis=-1) / width,))


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or when p == 0."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


class BatchNorm:
    """Per-channel batch normalization over (batch, C, L) or (C, L) inputs."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.beta")
        self.momentum = momentum
        self.eps = eps
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    @property
    def params(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def __call__(self, x, training: bool) -> Tensor:
        return batchnorm_forward(x, self, training)


def batchnorm_forward(x, bn: BatchNorm, training: bool) -> Tensor:
    x = as_tensor(x)
    xd = x.data if x.data.ndim == 3 else x.data[None]
    C = xd.shape[1]
    if bn.gamma.shape != (C,):
        raise ShapeError(f"batchnorm has {bn.gamma.shape[0]} channels, input has {C}")
    axes = (0, 2)
    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if bn.running_mean is None:
            bn.running_mean, bn.running_var = mean.copy(), var.copy()
        else:
            m = bn.momentum
            bn.running_mean = (1 - m) * bn.running_mean + m * mean
            bn.running_var = (1 - m) * bn.running_var + m * var
    else:
        if bn.running_mean is None:
            raise RuntimeError("batchnorm running statistics are uninitialized; run a training step first")
        mean, var = bn.running_mean, bn.running_var
    inv = 1.0 / np.sqrt(var + bn.eps)
    xhat = (xd - mean[None, :, None]) * inv[None, :, None]
    out = bn.gamma.data[None, :, None] * xhat + bn.beta.data[None, :, None]
    count = xd.shape[0] * xd.shape[2]
    squeeze = x.data.ndim == 2

    def backward(g):
        gd = g[None] if squeeze else g
        ggamma = (gd * xhat).sum(axis=axes)
        gbeta = gd.sum(axis=axes)
        gxhat = gd * bn.gamma.data[None, :, None]
        if training:
            gx = (
                inv[None, :, None]
                / count
                * (
                    count * gxhat
                    - gxhat.sum(axis=axes)[None, :, None]
                    - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None]
                )
            )
        else:
            gx = gxhat * inv[None, :, None]
        return (gx[0] if squeeze else gx), ggamma, gbeta

    return _node(out[0] if squeeze else out, (x, bn.gamma, bn.beta), backward)


def bce_loss(pred, label, weights=None) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].

    Optional per-sample ``weights`` multiply each term before the mean.
    """
    pred = as_tensor(pred)
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    p = pred.data.reshape(-1)
    if p.shape != y.shape:
        raise ShapeError(f"prediction length {p.shape[0]} != label length {y.shape[0]}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    n = y.shape[0]
    pc = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    value = -np.sum(w * (y * np.log(pc) + (1 - y) * np.log(1 - pc))) / n
    inside = (p > BCE_CLAMP) & (p < 1 - BCE_CLAMP)

    def backward(g):
        gp = -w * (y / pc - (1 - y) / (1 - pc)) / n * inside
        return (g * gp.reshape(pred.shape),)

    return _node(max(float(value), 0.0), (pred,), backward)


def mse_loss(pred, target) -> Tensor:
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {t.shape}")
    diff = pred.data - t
    return _node(np.mean(diff**2), (pred,), lambda g: (g * 2.0 * diff / diff.size,))


def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> list[np.ndarray]:
    """Accumulate d loss / d node into ``.grad`` for every node reaching ``loss``.

    ``params`` not reachable from the loss get a zero gradient. Returns the
    gradients of ``params`` in order.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward needs the Tensor produced by a forward pass")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    for p in params:
        p.grad = np.zeros_like(p.data)

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = np.array(pg, dtype=np.float64)
    return [p.grad for p in params]


def numerical_gradient(f: Callable[[], float], param: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One in-place Adam update of ``params``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
    state.t += 1
    c1 = 1 - state.beta1**state.t
    c2 = 1 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
