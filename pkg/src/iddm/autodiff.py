"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each operation records its parents and a closure that routes the output
gradient backwards; `backward` seeds the root and walks the recorded graph
in reverse topological order. The op set is exactly what the networks need:
broadcast arithmetic, 2-D matmul, same/strided 3x3 convolution via im2col,
nearest-neighbour upsampling, channel concatenation, SiLU/softplus, abs and
mean reductions. Dtype follows the inputs, so the same graph runs in float32
for training and float64 for finite-difference checks.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._grad_fn = None
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _op(a.data + b.data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _op(a.data - b.data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _op(a.data * b.data, (a, b), grad_fn)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return (g @ b.data.T, a.data.T @ g)

    return _op(a.data @ b.data, (a, b), grad_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s

    def grad_fn(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return _op(out, (a,), grad_fn)


def softplus(a) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return (g * _sigmoid(a.data),)

    return _op(np.logaddexp(0.0, a.data), (a,), grad_fn)


def abs_(a) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return (g * np.sign(a.data),)

    return _op(np.abs(a.data), (a,), grad_fn)


def mean_(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size

    def grad_fn(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)

    return _op(np.asarray(a.data.mean(), dtype=a.dtype), (a,), grad_fn)


def sum_(a) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return (np.full(a.shape, g, dtype=a.dtype),)

    return _op(np.asarray(a.data.sum(), dtype=a.dtype), (a,), grad_fn)


def concat_channels(parts: list) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[-1] for p in parts]

    def grad_fn(g):
        grads, pos = [], 0
        for n in sizes:
            grads.append(g[..., pos : pos + n])
            pos += n
        return tuple(grads)

    return _op(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), grad_fn)


def upsample_nearest2x(a) -> Tensor:
    """(B, H, W, C) -> (B, 2H, 2W, C) by pixel duplication."""
    a = as_tensor(a)
    out = a.data.repeat(2, axis=1).repeat(2, axis=2)

    def grad_fn(g):
        b, h2, w2, c = g.shape
        return (g.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4)),)

    return _op(out, (a,), grad_fn)


def conv2d(x, w, b, stride: int = 1) -> Tensor:
    """Same-padded KxK convolution over (B, H, W, Cin).

    Kernel layout is (Cin, KH, KW, Cout) to match the im2col patch order;
    padding is KH//2 zeros, so stride 2 halves even spatial dims exactly.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    cin, kh, kw, cout = w.shape
    if x.data.ndim != 4 or x.shape[-1] != cin:
        raise ValueError(f"conv input {x.shape} incompatible with kernel {w.shape}")
    pad = kh // 2
    bsz, h, wdt, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    cols = win.reshape(bsz * oh * ow, cin * kh * kw)
    wflat = w.data.reshape(cin * kh * kw, cout)
    out = (cols @ wflat + b.data).reshape(bsz, oh, ow, cout)

    def grad_fn(g):
        # skip whichever side is frozen; stage-2 backpropagates through the
        # frozen denoiser's inputs without paying for its weight gradients
        gflat = g.reshape(bsz * oh * ow, cout)
        gw = (cols.T @ gflat).reshape(w.shape) if w.requires_grad else None
        gb = gflat.sum(axis=0) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gflat @ wflat.T).reshape(bsz, oh, ow, cin, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :, i : i + stride * oh : stride, j : j + stride * ow : stride, :
                    ] += dcols[:, :, :, :, i, j]
            gx = gxp[:, pad : pad + h, pad : pad + wdt, :]
        return (gx, gw, gb)

    return _op(out, (x, w, b), grad_fn)


def backward(root: Tensor, grad: np.ndarray | None = None) -> None:
    """Populate gradients of every grad-requiring node reachable from root.

    A second call on the same root without a fresh forward pass is an error.
    """
    if not root.requires_grad:
        raise RuntimeError("root does not require grad; nothing to backpropagate")
    if root._spent:
        raise RuntimeError("backward already called on this graph; rerun the forward pass")
    root._spent = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    if grad is None:
        grad = np.ones_like(root.data)
    root.grad = np.asarray(grad, dtype=root.dtype)

    for node in reversed(topo):
        if node._grad_fn is None:
            continue
        gs = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, gs):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
        if node is not root:
            node.grad = None  # free intermediate buffers
