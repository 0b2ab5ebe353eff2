"""Dense tensor engine with reverse-mode differentiation.

Supports exactly the operations the glimpse pipeline needs: 2-D convolution,
dense layers, relu, a joint softmax over a 2-D map, max pooling, per-channel
normalization, a handful of structural ops, an l1 loss, and the Adam
optimizer. Storage is float32 by default with float64 accumulation in
reductions; every op also runs in float64 for shadow-precision gradient
verification.

The tape is a plain DAG of ``Tensor`` nodes rebuilt on every forward pass.
There is no broadcasting beyond bias addition: all shapes are explicit.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(ValueError):
    """An operation received or produced non-finite values."""


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32, copy=False)


class Tensor:
    """A dense float array plus an optional slot on the backward tape.

    ``data`` is row-major float32 (or float64 in shadow-precision runs).
    ``grad`` stays ``None`` until a backward pass reaches this node; it then
    always matches ``data``'s shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.grad = None
        # Graph edges are only kept where gradient can flow.
        if self.requires_grad and _backward is not None:
            self._parents = _parents
            self._backward = _backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self):
        """A copy of the value with no tape history."""
        return Tensor(self.data.copy())

    def backward(self):
        """Reverse-mode sweep from this scalar through the tape."""
        if self.data.size != 1:
            raise ShapeError("backward() must start from a scalar, got shape %r"
                             % (self.shape,))
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, " \
               f"requires_grad={self.requires_grad})"


def _toposort(root):
    """Iterative postorder over the grad-requiring subgraph."""
    order = []
    seen = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen and p.requires_grad:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: input contains non-finite values")


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution of a [C_in,H,W] input with an [C_out,C_in,kH,kW] kernel.

    Output spatial dims follow floor((dim + 2*padding - k)/stride) + 1.
    Differentiable w.r.t. input, kernel, and bias. im2col + sgemm inside.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d: input must be [C,H,W], got {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be [C_out,C_in,kH,kW], got {kernel.shape}")
    c_in, h, w = x.shape
    c_out, ck, kh, kw = kernel.shape
    if ck != c_in:
        raise ShapeError(f"conv2d: kernel expects {ck} input channels, input has {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d: padding must be non-negative, got {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = np.empty((c_in, kh, kw, h_out, w_out), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
    cols2 = cols.reshape(c_in * kh * kw, h_out * w_out)
    kmat = kernel.data.reshape(c_out, -1)
    out = kmat @ cols2
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(c_out, h_out, w_out)

    def backward(grad):
        g2 = grad.reshape(c_out, -1)
        if kernel.requires_grad:
            kernel.accumulate_grad((g2 @ cols2.T).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(np.sum(g2, axis=1, dtype=np.float64).astype(bias.dtype))
        if x.requires_grad:
            dcols = (kmat.T @ g2).reshape(c_in, kh, kw, h_out, w_out)
            dxp = np.zeros((c_in, hp, wp), dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += dcols[:, i, j]
            if padding:
                dxp = dxp[:, padding:padding + h, padding:padding + w]
            x.accumulate_grad(dxp)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out, _parents=parents, _backward=backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Dense layer: weight @ x + bias, for a 1-D input."""
    if x.data.ndim != 1 or weight.data.ndim != 2:
        raise ShapeError(f"linear: need 1-D input and 2-D weight, got {x.shape}, {weight.shape}")
    d_out, d_in = weight.shape
    if x.shape != (d_in,):
        raise ShapeError(f"linear: weight expects input of width {d_in}, got {x.shape}")
    if bias.shape != (d_out,):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({d_out},)")
    out = weight.data @ x.data + bias.data

    def backward(grad):
        if weight.requires_grad:
            weight.accumulate_grad(np.outer(grad, x.data))
        if bias.requires_grad:
            bias.accumulate_grad(grad)
        if x.requires_grad:
            x.accumulate_grad(weight.data.T @ grad)

    return Tensor(out, _parents=(x, weight, bias), _backward=backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x). np.maximum keeps NaN in the output so a
    non-finite forward pass stays visible to divergence checks."""
    mask = x.data > 0
    out = np.maximum(x.data, 0)

    def backward(grad):
        x.accumulate_grad(grad * mask)

    return Tensor(out, _parents=(x,), _backward=backward)


def softmax_flat(x: Tensor) -> Tensor:
    """Softmax over all entries of a 2-D map jointly; output sums to 1.

    Computed with max subtraction; the normalizer accumulates in float64.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_flat: input must be 2-D, got {x.shape}")
    _check_finite(x.data, "softmax_flat")
    e = np.exp((x.data - x.data.max()).astype(np.float64))
    p64 = e / e.sum()
    out = p64.astype(x.dtype)

    def backward(grad):
        inner = np.sum(grad * p64, dtype=np.float64)
        x.accumulate_grad((p64 * (grad - inner)).astype(grad.dtype))

    return Tensor(out, _parents=(x,), _backward=backward)


def maxpool2d(x: Tensor, size: int = 2, stride: int | None = None,
              padding: int = 0) -> Tensor:
    """Max pooling over [C,H,W]; padding cells never win the max."""
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2d: input must be [C,H,W], got {x.shape}")
    if stride is None:
        stride = size
    c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if size > hp or size > wp:
        raise ShapeError(f"maxpool2d: window {size} exceeds padded input {hp}x{wp}")
    h_out = (hp - size) // stride + 1
    w_out = (wp - size) // stride + 1
    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    windows = np.empty((size * size, c, h_out, w_out), dtype=x.data.dtype)
    for i in range(size):
        for j in range(size):
            windows[i * size + j] = xp[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
    arg = np.argmax(windows, axis=0)
    out = np.take_along_axis(windows, arg[None], axis=0)[0]

    def backward(grad):
        dxp = np.zeros((c, hp, wp), dtype=grad.dtype)
        for i in range(size):
            for j in range(size):
                sel = arg == (i * size + j)
                view = dxp[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
                view += np.where(sel, grad, 0)
        if padding:
            dxp = dxp[:, padding:padding + h, padding:padding + w]
        x.accumulate_grad(dxp)

    return Tensor(out, _parents=(x,), _backward=backward)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel of [C,H,W] over its spatial extent, then scale
    and shift per channel. Statistics come from the current input only."""
    if x.data.ndim != 3:
        raise ShapeError(f"channel_norm: input must be [C,H,W], got {x.shape}")
    c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"channel_norm: gamma/beta must be ({c},), got {gamma.shape}, {beta.shape}")
    n = h * w
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=(1, 2), keepdims=True)
    var = x64.var(axis=(1, 2), keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xn = (x64 - mu) * ivar
    out = (gamma.data[:, None, None] * xn + beta.data[:, None, None]).astype(x.dtype)

    def backward(grad):
        g64 = grad.astype(np.float64)
        if gamma.requires_grad:
            gamma.accumulate_grad((g64 * xn).sum(axis=(1, 2)).astype(gamma.dtype))
        if beta.requires_grad:
            beta.accumulate_grad(g64.sum(axis=(1, 2)).astype(beta.dtype))
        if x.requires_grad:
            dxn = g64 * gamma.data.astype(np.float64)[:, None, None]
            s1 = dxn.sum(axis=(1, 2), keepdims=True)
            s2 = (dxn * xn).sum(axis=(1, 2), keepdims=True)
            dx = ivar * (dxn - s1 / n - xn * s2 / n)
            x.accumulate_grad(dx.astype(grad.dtype))

    return Tensor(out, _parents=(x, gamma, beta), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(grad):
        if a.requires_grad:
            a.accumulate_grad(grad)
        if b.requires_grad:
            b.accumulate_grad(grad)

    return Tensor(out, _parents=(a, b), _backward=backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar."""
    out = x.data * x.data.dtype.type(factor)

    def backward(grad):
        x.accumulate_grad(grad * factor)

    return Tensor(out, _parents=(x,), _backward=backward)


def matvec(matrix: np.ndarray, x: Tensor) -> Tensor:
    """Constant matrix times a 1-D tensor (used for fixed affine maps)."""
    m = np.asarray(matrix, dtype=np.float64)
    if x.data.ndim != 1 or m.ndim != 2 or m.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: matrix {m.shape} incompatible with vector {x.shape}")
    out = (m @ x.data.astype(np.float64)).astype(x.dtype)

    def backward(grad):
        x.accumulate_grad((m.T @ grad.astype(np.float64)).astype(grad.dtype))

    return Tensor(out, _parents=(x,), _backward=backward)


def reshape(x: Tensor, shape) -> Tensor:
    """View with a new shape; element count must match."""
    out = x.data.reshape(shape)

    def backward(grad):
        x.accumulate_grad(grad.reshape(x.shape))

    return Tensor(out, _parents=(x,), _backward=backward)


def concat(parts) -> Tensor:
    """Concatenate 1-D tensors end to end."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: no tensors given")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat: all parts must be 1-D, got {p.shape}")
    out = np.concatenate([p.data for p in parts])
    offsets = np.cumsum([0] + [p.size for p in parts])

    def backward(grad):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate_grad(grad[lo:hi])

    return Tensor(out, _parents=tuple(parts), _backward=backward)


def l1_loss(pred: Tensor, target) -> Tensor:
    """Sum of absolute componentwise differences; target is a constant."""
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if tgt.shape != pred.shape:
        raise ShapeError(f"l1_loss: pred {pred.shape} vs target {tgt.shape}")
    diff = pred.data - tgt
    out = np.sum(np.abs(diff), dtype=np.float64).astype(pred.dtype).reshape(())

    def backward(grad):
        pred.accumulate_grad(np.sign(diff) * grad)

    return Tensor(out, _parents=(pred,), _backward=backward)


def mean_of(losses) -> Tensor:
    """Arithmetic mean of scalar tensors (batch loss aggregation)."""
    losses = list(losses)
    total = losses[0]
    for t in losses[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(losses))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment buffers and a step counter for a parameter list.

    Hyperparameters follow the standard defaults: beta1=0.9, beta2=0.999,
    eps=1e-8.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(state: AdamState, lr: float) -> None:
    """One Adam update with bias correction over state.params, in place."""
    if lr <= 0:
        raise ValueError(f"adam_step: learning rate must be positive, got {lr}")
    for p in state.params:
        if p.grad is None:
            raise ValueError("adam_step: parameter has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(state.params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def grad_check(fn, inputs, step=None, max_coords_per_input=None, rng=None,
               dtype=np.float32):
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps a list of leaf tensors to a scalar Tensor. The finite
    difference reference is always evaluated in float64; the reverse-mode
    side runs at ``dtype``. The default step is 1e-3 for float32 graphs and
    1e-5 for float64 shadow runs (the coarser step's O(step^2) truncation
    error exceeds the tighter float64 tolerance on softmax paths). When
    ``max_coords_per_input`` is set, only that many randomly chosen
    coordinates per input are probed (seeded via ``rng``).

    Relative error per coordinate uses denominator
    max(|ad|, |fd|, 1e-3 * gmax) where gmax is the largest gradient magnitude
    seen, so near-zero components are compared at the gradient's own scale.
    """
    if step is None:
        step = 1e-3 if dtype == np.float32 else 1e-5
    leafs = [Tensor(np.asarray(p.data if isinstance(p, Tensor) else p, dtype=dtype),
                    requires_grad=True) for p in inputs]
    out = fn(leafs)
    if out.size != 1:
        raise ShapeError("grad_check: function must be scalar-valued")
    out.backward()
    ad_grads = []
    for leaf in leafs:
        if leaf.grad is None:
            ad_grads.append(np.zeros_like(leaf.data))
        else:
            ad_grads.append(leaf.grad.copy())

    base64 = [leaf.data.astype(np.float64) for leaf in leafs]

    def eval64(arrays):
        val = fn([Tensor(a.copy()) for a in arrays])
        v = float(val.data.reshape(-1)[0])
        if not np.isfinite(v):
            raise NonFiniteError("grad_check: function returned a non-finite value")
        return v

    if rng is None:
        rng = np.random.default_rng(0)

    checked = []  # (ad, fd) pairs
    for idx, base in enumerate(base64):
        flat = base.reshape(-1)
        n = flat.size
        if max_coords_per_input is not None and n > max_coords_per_input:
            coords = rng.choice(n, size=max_coords_per_input, replace=False)
        else:
            coords = range(n)
        ad_flat = ad_grads[idx].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            f_plus = eval64(base64)
            flat[c] = orig - step
            f_minus = eval64(base64)
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            checked.append((float(ad_flat[c]), fd))

    if not checked:
        return 0.0
    gmax = max(max(abs(a), abs(f)) for a, f in checked)
    floor = max(1e-3 * gmax, 1e-12)
    max_rel = 0.0
    for a, f in checked:
        rel = abs(a - f) / max(abs(a), abs(f), floor)
        max_rel = max(max_rel, rel)
    if not np.isfinite(max_rel):
        raise NonFiniteError("grad_check: non-finite gradient encountered")
    return max_rel
