"""Minimal reverse-mode autodiff over 64-bit numpy matrices.

Everything trainable in this package (the BiLSTM inverse model, the
feedforward synthesizer, frozen encoders, linear probes) runs on the Tensor
class below: a value, an accumulated gradient, and a closure that pushes the
output gradient back to the parents. The BiLSTM is a single fused node with a
hand-written backward pass so the per-frame recursion stays at numpy speed.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

__all__ = [
    "Tensor",
    "ParameterSet",
    "Adam",
    "DimensionError",
    "NumericError",
    "OptimizerStateError",
    "GradCheckError",
    "constant",
    "dense_forward",
    "bilstm_forward",
    "init_bilstm_params",
    "init_dense_params",
    "cosine_distance_loss",
    "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class OptimizerStateError(RuntimeError):
    """Optimizer invoked with missing or inconsistent gradients."""


class GradCheckError(RuntimeError):
    """Gradient checking contract violated (e.g. non-deterministic loss)."""


def _as_array(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None,
                 _check_finite=True):
        self.value = _as_array(value)
        if _check_finite and not np.all(np.isfinite(self.value)):
            raise NumericError("tensor constructed with non-finite values")
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self, seed=None):
        """Reverse sweep from this node; accumulates into .grad fields."""
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)

        visit(self)
        if seed is None:
            seed = np.ones_like(self.value)
        self._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def _binary(self, other, fwd, bwd_self, bwd_other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_val = fwd(self.value, other.value)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(bwd_self(g, a.value, b.value), a.value.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(bwd_other(g, a.value, b.value), b.value.shape))

        return Tensor(out_val, _parents=(a, b), _backward=backward, _check_finite=False)

    def __add__(self, other):
        return self._binary(other, lambda x, y: x + y,
                            lambda g, x, y: g, lambda g, x, y: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda x, y: x - y,
                            lambda g, x, y: g, lambda g, x, y: -g)

    def __rsub__(self, other):
        return Tensor(other).__sub__(self)

    def __mul__(self, other):
        return self._binary(other, lambda x, y: x * y,
                            lambda g, x, y: g * y, lambda g, x, y: g * x)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda x, y: x / y,
                            lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))

    def __rtruediv__(self, other):
        return Tensor(other).__truediv__(self)

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.value.ndim != 2 or other.value.ndim != 2 \
                or self.value.shape[1] != other.value.shape[0]:
            raise DimensionError(
                f"matmul shapes {self.value.shape} x {other.value.shape}")
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ b.value.T)
            if b.requires_grad:
                b._accumulate(a.value.T @ g)

        return Tensor(a.value @ b.value, _parents=(a, b), _backward=backward,
                      _check_finite=False)

    def _unary(self, fwd, bwd):
        out_val = fwd(self.value)
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(bwd(g, a.value, out_val))

        return Tensor(out_val, _parents=(a,), _backward=backward, _check_finite=False)

    def exp(self):
        return self._unary(np.exp, lambda g, x, y: g * y)

    def log(self):
        return self._unary(np.log, lambda g, x, y: g / x)

    def sqrt(self):
        return self._unary(np.sqrt, lambda g, x, y: g * 0.5 / y)

    def square(self):
        return self._unary(np.square, lambda g, x, y: g * 2.0 * x)

    def tanh(self):
        return self._unary(np.tanh, lambda g, x, y: g * (1.0 - y * y))

    def sigmoid(self):
        return self._unary(lambda x: 1.0 / (1.0 + np.exp(-x)),
                           lambda g, x, y: g * y * (1.0 - y))

    def relu(self):
        return self._unary(lambda x: np.maximum(x, 0.0),
                           lambda g, x, y: g * (x > 0.0))

    def cos(self):
        return self._unary(np.cos, lambda g, x, y: -g * np.sin(x))

    def gelu(self):
        """tanh-approximated GELU (frozen-encoder nonlinearity code 2)."""
        c = math.sqrt(2.0 / math.pi)

        def fwd(x):
            return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))

        def bwd(g, x, y):
            t = np.tanh(c * (x + 0.044715 * x ** 3))
            dt = (1.0 - t * t) * c * (1.0 + 3 * 0.044715 * x * x)
            return g * (0.5 * (1.0 + t) + 0.5 * x * dt)

        return self._unary(fwd, bwd)

    def clamp(self, lo, hi):
        """Hard clamp; gradient passes through in the interior only."""
        return self._unary(lambda x: np.clip(x, lo, hi),
                           lambda g, x, y: g * ((x > lo) & (x < hi)))

    def sum(self, axis=None, keepdims=False):
        a = self

        def backward(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.value.shape))
            else:
                ge = np.expand_dims(g, axis) if not keepdims else g
                a._accumulate(np.broadcast_to(ge, a.value.shape))

        return Tensor(self.value.sum(axis=axis, keepdims=keepdims),
                      _parents=(a,), _backward=backward, _check_finite=False)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def __getitem__(self, key):
        a = self

        def backward(g):
            if a.requires_grad:
                # Basic slicing only (no repeated fancy indices anywhere in
                # this package), so in-place add is a correct scatter.
                full = np.zeros_like(a.value)
                full[key] += g
                a._accumulate(full)

        return Tensor(self.value[key], _parents=(a,), _backward=backward,
                      _check_finite=False)

    def flip_rows(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g[::-1])

        return Tensor(self.value[::-1], _parents=(a,), _backward=backward,
                      _check_finite=False)

    def item(self):
        return float(self.value)


def constant(value):
    return Tensor(value, requires_grad=False)


def concat_cols(tensors):
    """Concatenate 2-D tensors along columns."""
    widths = [t.value.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)
    parents = tuple(tensors)

    def backward(g):
        for t, lo, hi in zip(parents, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(g[:, lo:hi])

    return Tensor(np.concatenate([t.value for t in tensors], axis=1),
                  _parents=parents, _backward=backward, _check_finite=False)


def concat_rows(tensors):
    heights = [t.value.shape[0] for t in tensors]
    offsets = np.cumsum([0] + heights)
    parents = tuple(tensors)

    def backward(g):
        for t, lo, hi in zip(parents, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(g[lo:hi])

    return Tensor(np.concatenate([t.value for t in tensors], axis=0),
                  _parents=parents, _backward=backward, _check_finite=False)


# ---------------------------------------------------------------------------
# Parameters and optimization
# ---------------------------------------------------------------------------

class ParameterSet:
    """Ordered, named trainable tensors with one gradient slot each."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name, value):
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._entries[name] = Tensor(value, requires_grad=True)
        return self._entries[name]

    def __getitem__(self, name) -> Tensor:
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self):
        return list(self._entries)

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = np.zeros_like(t.value)

    def clear_grad(self):
        for t in self._entries.values():
            t.grad = None

    def set_trainable(self, flag):
        for t in self._entries.values():
            t.requires_grad = flag

    def copy_values(self):
        return {name: t.value.copy() for name, t in self._entries.items()}

    def load_values(self, values):
        for name, t in self._entries.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.value.shape:
                raise DimensionError(
                    f"parameter {name!r}: expected {t.value.shape}, got {arr.shape}")
            t.value = arr.copy()

    def checksum(self):
        """Order-sensitive digest of all parameter values (frozen-freeze tests)."""
        h = hashlib.sha256()
        for name, t in self._entries.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.value).tobytes())
        return h.hexdigest()


class Adam:
    """Standard Adam with bias correction; zeroes gradients after each step."""

    def __init__(self, params: ParameterSet, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.value) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.value) for n, t in params.items()}

    def step(self):
        for name, t in self.params.items():
            if t.grad is None:
                raise OptimizerStateError(f"missing gradient for {name!r}")
            if t.grad.shape != t.value.shape:
                raise OptimizerStateError(f"gradient shape mismatch for {name!r}")
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for name, t in self.params.items():
            g = t.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            t.value = t.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            t.grad = np.zeros_like(t.value)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

_ACTIVATIONS = {"tanh", "relu", "sigmoid", "gelu", "identity"}


def init_dense_params(params: ParameterSet, name, d_in, d_out, rng):
    scale = 1.0 / math.sqrt(d_in)
    params.add(f"{name}_W", rng.uniform(-scale, scale, size=(d_in, d_out)))
    params.add(f"{name}_b", np.zeros(d_out))


def dense_forward(x: Tensor, weight: Tensor, bias: Tensor, activation="identity"):
    """y = act(x W + b), rowwise over frames."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if x.value.ndim != 2 or weight.value.ndim != 2:
        raise DimensionError("dense_forward expects 2-D input and weight")
    if x.value.shape[1] != weight.value.shape[0]:
        raise DimensionError(
            f"input dim {x.value.shape[1]} != weight rows {weight.value.shape[0]}")
    if bias.value.reshape(-1).shape[0] != weight.value.shape[1]:
        raise DimensionError("bias length != weight cols")
    if not np.all(np.isfinite(x.value)):
        raise NumericError("non-finite dense input")
    y = x @ weight + bias
    if activation == "tanh":
        return y.tanh()
    if activation == "relu":
        return y.relu()
    if activation == "sigmoid":
        return y.sigmoid()
    if activation == "gelu":
        return y.gelu()
    return y


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_direction(x: Tensor, w: Tensor, u: Tensor, b: Tensor, reverse: bool):
    """One LSTM direction over a T x Din sequence as a single fused graph node.

    Gate order along the 4H axis: input, forget, cell, output. Zero initial
    hidden/cell state. Backward is classic BPTT, checked against finite
    differences in the test suite.
    """
    xv = x.value[::-1] if reverse else x.value
    T = xv.shape[0]
    H = u.value.shape[0]
    wv, uv, bv = w.value, u.value, b.value.reshape(-1)

    pre_x = xv @ wv + bv  # T x 4H, input contribution precomputed
    h = np.zeros((T, H))
    c = np.zeros((T, H))
    gates = np.zeros((T, 4 * H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        z = pre_x[t] + h_prev @ uv
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:])
        c_t = f * c_prev + i * g
        h_t = o * np.tanh(c_t)
        gates[t, :H], gates[t, H:2 * H] = i, f
        gates[t, 2 * H:3 * H], gates[t, 3 * H:] = g, o
        c[t], h[t] = c_t, h_t
        h_prev, c_prev = h_t, c_t

    out_val = h[::-1] if reverse else h

    def backward(grad_out):
        dh_out = grad_out[::-1] if reverse else grad_out
        dW = np.zeros_like(wv)
        dU = np.zeros_like(uv)
        db = np.zeros_like(bv)
        dx = np.zeros_like(xv)
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            i, f = gates[t, :H], gates[t, H:2 * H]
            g, o = gates[t, 2 * H:3 * H], gates[t, 3 * H:]
            c_prev_t = c[t - 1] if t > 0 else np.zeros(H)
            h_prev_t = h[t - 1] if t > 0 else np.zeros(H)
            tc = np.tanh(c[t])
            dh = dh_out[t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di, df, dg = dc * g, dc * c_prev_t, dc * i
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            dW += np.outer(xv[t], dz)
            dU += np.outer(h_prev_t, dz)
            db += dz
            dx[t] = dz @ wv.T
            dh_next = dz @ uv.T
            dc_next = dc * f
        if x.requires_grad:
            x._accumulate(dx[::-1] if reverse else dx)
        if w.requires_grad:
            w._accumulate(dW)
        if u.requires_grad:
            u._accumulate(dU)
        if b.requires_grad:
            b._accumulate(db.reshape(b.value.shape))

    return Tensor(out_val, _parents=(x, w, u, b), _backward=backward,
                  _check_finite=False)


def init_bilstm_params(params: ParameterSet, d_in, hidden, layers, rng, prefix="lstm"):
    """Uniform(-1/sqrt(hidden), +1/sqrt(hidden)) init for all gate weights."""
    scale = 1.0 / math.sqrt(hidden)
    d = d_in
    for layer in range(layers):
        for direction in ("fwd", "bwd"):
            base = f"{prefix}_l{layer}_{direction}"
            params.add(f"{base}_W", rng.uniform(-scale, scale, size=(d, 4 * hidden)))
            params.add(f"{base}_U", rng.uniform(-scale, scale, size=(hidden, 4 * hidden)))
            params.add(f"{base}_b", np.zeros(4 * hidden))
        d = 2 * hidden


def bilstm_forward(x: Tensor, params: ParameterSet, layers, hidden, prefix="lstm"):
    """Stacked bidirectional LSTM; frame t output is [fwd_state; bwd_state]."""
    if x.value.ndim != 2 or x.value.shape[0] == 0:
        raise DimensionError("bilstm_forward requires a nonempty T x D input")
    out = x
    for layer in range(layers):
        fwd = _lstm_direction(out, params[f"{prefix}_l{layer}_fwd_W"],
                              params[f"{prefix}_l{layer}_fwd_U"],
                              params[f"{prefix}_l{layer}_fwd_b"], reverse=False)
        bwd = _lstm_direction(out, params[f"{prefix}_l{layer}_bwd_W"],
                              params[f"{prefix}_l{layer}_bwd_U"],
                              params[f"{prefix}_l{layer}_bwd_b"], reverse=True)
        out = concat_cols([fwd, bwd])
    return out


# ---------------------------------------------------------------------------
# Losses and gradient checking
# ---------------------------------------------------------------------------

COSINE_EPS = 1e-8


def cosine_distance_loss(z: Tensor, z_hat: Tensor):
    """Mean over frames of (1 - cos(z_t, z_hat_t)); in [0, 2] for nonzero rows.

    The stabilizer on the norm product makes an all-zero frame count as
    orthogonal (distance 1) instead of dividing by zero.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    z_hat = z_hat if isinstance(z_hat, Tensor) else Tensor(z_hat)
    if z.value.shape != z_hat.value.shape:
        raise DimensionError(
            f"cosine loss shapes {z.value.shape} vs {z_hat.value.shape}")
    dots = (z * z_hat).sum(axis=1)
    nz = (z.square().sum(axis=1) + 1e-30).sqrt()
    nh = (z_hat.square().sum(axis=1) + 1e-30).sqrt()
    per_frame = 1.0 - dots / (nz * nh + COSINE_EPS)
    return per_frame.mean()


def grad_check(f, params: ParameterSet, h=1e-5, tol=1e-5):
    """Central-difference check of d f / d params.

    `f` must be a deterministic zero-argument callable returning a scalar
    Tensor built from `params`. Returns {name: {"max_rel_err", "ok",
    "worst_index"}} plus an "ok" aggregate under key "__all__".
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError("step h must be in [1e-6, 1e-3]")
    v0 = f().item()
    v1 = f().item()
    if v0 != v1:
        raise GradCheckError("loss function is not deterministic")

    params.zero_grad()
    loss = f()
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in params.items()}

    report = {}
    all_ok = True
    for name, t in params.items():
        base = t.value.copy()
        fd = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            t.value = base.copy()
            t.value[idx] = base[idx] + h
            fp = f().item()
            t.value[idx] = base[idx] - h
            fm = f().item()
            fd[idx] = (fp - fm) / (2.0 * h)
            it.iternext()
        t.value = base
        diff = np.abs(fd - analytic[name])
        scale = np.maximum(np.maximum(np.abs(fd), np.abs(analytic[name])), 1e-4)
        rel = diff / scale
        # Tiny gradients drown in finite-difference noise; an absolute pass
        # at the h^2 truncation scale keeps the check meaningful there.
        rel = np.where(diff < 10.0 * h * h, 0.0, rel)
        worst = np.unravel_index(np.argmax(rel), rel.shape) if rel.size else ()
        ok = bool(rel.size == 0 or rel.max() < tol)
        report[name] = {
            "max_rel_err": float(rel.max()) if rel.size else 0.0,
            "ok": ok,
            "worst_index": worst,
            "bad_indices": [tuple(ix) for ix in np.argwhere(rel >= tol)],
        }
        all_ok = all_ok and ok
    params.clear_grad()
    report["__all__"] = all_ok
    return report
