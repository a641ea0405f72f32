"""Dense float64 tensors with reverse-mode automatic differentiation.

Each ``Tensor`` wraps a contiguous numpy array plus a backward closure that
scatters the output adjoint onto its parents.  ``backward()`` runs one
reverse topological sweep; gradients accumulate additively, so a tensor
consumed twice receives the sum of both path adjoints.

Design constraints: float64 everywhere, row-major dense storage, and no
views -- ``reshape``/``transpose``/``narrow`` copy, which keeps aliasing out
of the gradient rules.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GraphCycle, NonScalarLoss, ShapeMismatch

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715  # cubic coefficient of the tanh-form approximation


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    # -- basics ----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self.op!r})"

    @staticmethod
    def as_tensor(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    # -- graph plumbing ---------------------------------------------------

    def _child(self, data, parents, backward, op) -> "Tensor":
        req = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=req, _parents=parents if req else (),
                     _backward=backward if req else None, op=op)
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- elementwise ops --------------------------------------------------

    def add(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        try:
            data = self.data + other.data
        except ValueError:
            raise ShapeMismatch(f"add: cannot broadcast {self.shape} with {other.shape}")
        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))
        return self._child(data, (self, other), backward, "add")

    def sub(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        try:
            data = self.data - other.data
        except ValueError:
            raise ShapeMismatch(f"sub: cannot broadcast {self.shape} with {other.shape}")
        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))
        return self._child(data, (self, other), backward, "sub")

    def mul(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        try:
            data = self.data * other.data
        except ValueError:
            raise ShapeMismatch(f"mul: cannot broadcast {self.shape} with {other.shape}")
        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))
        return self._child(data, (self, other), backward, "mul")

    def div(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        try:
            data = self.data / other.data
        except ValueError:
            raise ShapeMismatch(f"div: cannot broadcast {self.shape} with {other.shape}")
        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / (other.data * other.data), other.shape))
        return self._child(data, (self, other), backward, "div")

    def neg(self) -> "Tensor":
        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)
        return self._child(-self.data, (self,), backward, "neg")

    def scalar_mul(self, c: float) -> "Tensor":
        c = float(c)
        def backward(g):
            if self.requires_grad:
                self._accumulate(g * c)
        return self._child(self.data * c, (self,), backward, "scalar_mul")

    def relu(self) -> "Tensor":
        keep = self.data > 0.0
        def backward(g):
            if self.requires_grad:
                self._accumulate(g * keep)
        return self._child(np.where(keep, self.data, 0.0), (self,), backward, "relu")

    def gelu(self) -> "Tensor":
        x = self.data
        u = _GELU_C * (x + _GELU_A * x ** 3)
        t = np.tanh(u)
        data = 0.5 * x * (1.0 + t)
        def backward(g):
            if self.requires_grad:
                du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
                self._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))
        return self._child(data, (self,), backward, "gelu")

    def exp(self) -> "Tensor":
        data = np.exp(self.data)
        def backward(g):
            if self.requires_grad:
                self._accumulate(g * data)
        return self._child(data, (self,), backward, "exp")

    def sqrt(self) -> "Tensor":
        data = np.sqrt(self.data)
        def backward(g):
            if self.requires_grad:
                self._accumulate(g * 0.5 / data)
        return self._child(data, (self,), backward, "sqrt")

    def square(self) -> "Tensor":
        def backward(g):
            if self.requires_grad:
                self._accumulate(g * 2.0 * self.data)
        return self._child(self.data * self.data, (self,), backward, "square")

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(gg, self.shape).copy())
        return self._child(data, (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.mean(axis=axis, keepdims=keepdims)
        if axis is None:
            count = self.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.shape[a] for a in axis]))
        else:
            count = self.shape[axis]
        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g / count, self.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(gg / count, self.shape).copy())
        return self._child(data, (self,), backward, "mean")

    # -- structural ops (always copy) --------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(old))
        return self._child(self.data.reshape(shape).copy(), (self,), backward, "reshape")

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        def backward(g):
            if self.requires_grad:
                self._accumulate(np.ascontiguousarray(g.transpose(inv)))
        return self._child(np.ascontiguousarray(self.data.transpose(axes)), (self,), backward, "transpose")

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        """Copy a contiguous slice ``[start, start+length)`` along ``axis``."""
        if not (0 <= start and start + length <= self.shape[axis]):
            raise ShapeMismatch(
                f"narrow: slice [{start}, {start + length}) out of range for axis {axis} of {self.shape}")
        idx = tuple(slice(None) if i != axis else slice(start, start + length)
                    for i in range(len(self.shape)))
        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                full[idx] = g
                self._accumulate(full)
        return self._child(self.data[idx].copy(), (self,), backward, "narrow")

    # -- composites --------------------------------------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        # Subtracting a detached max leaves both value and gradient unchanged.
        shift = Tensor(self.data.max(axis=axis, keepdims=True))
        e = self.sub(shift).exp()
        return e.div(e.sum(axis=axis if axis >= 0 else self.data.ndim + axis, keepdims=True))

    def diff(self, axis: int) -> "Tensor":
        """First difference x[i+1] - x[i] along ``axis``."""
        n = self.shape[axis]
        if n < 2:
            raise ShapeMismatch(f"diff: axis {axis} of {self.shape} too short")
        return self.narrow(axis, 1, n - 1).sub(self.narrow(axis, 0, n - 1))

    # python operators

    __add__ = add
    __sub__ = sub
    __mul__ = mul
    __truediv__ = div
    __neg__ = neg

    def __radd__(self, other):
        return Tensor.as_tensor(other).add(self)

    def __rsub__(self, other):
        return Tensor.as_tensor(other).sub(self)

    def __rmul__(self, other):
        return Tensor.as_tensor(other).mul(self)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor.as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeMismatch(f"matmul: need rank >= 2, got {self.shape} @ {other.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch(f"matmul: inner dims disagree, {self.shape} @ {other.shape}")
        try:
            data = np.matmul(a, b)
        except ValueError:
            raise ShapeMismatch(f"matmul: batch dims do not broadcast, {self.shape} @ {other.shape}")
        def backward(g):
            if self.requires_grad:
                ga = np.matmul(g, np.swapaxes(b, -1, -2))
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.matmul(np.swapaxes(a, -1, -2), g)
                other._accumulate(_unbroadcast(gb, other.shape))
        return self._child(data, (self, other), backward, "matmul")

    __matmul__ = matmul

    # -- backward ----------------------------------------------------------

    def backward(self) -> None:
        """Populate grads of every reachable ``requires_grad`` tensor.

        The loss must be scalar.  Nodes are visited once, in reverse
        topological order built by an iterative DFS (a cycle, which should
        be unreachable by construction, raises ``GraphCycle``).
        """
        if self.size != 1:
            raise NonScalarLoss(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        state: dict[int, int] = {}  # 1 = in progress, 2 = done
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            nid = id(node)
            if processed:
                state[nid] = 2
                order.append(node)
                continue
            st = state.get(nid)
            if st == 2:
                continue
            if st == 1:
                # An in-progress node is re-entered only via its own ancestry.
                raise GraphCycle("backward graph contains a cycle")
            state[nid] = 1
            stack.append((node, True))
            for p in node._parents:
                if state.get(id(p)) != 2:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """Normalize ``x`` to zero mean / unit variance along ``axis``, then affine."""
    if axis < 0:
        axis = x.data.ndim + axis
    mu = x.mean(axis=axis, keepdims=True)
    xc = x.sub(mu)
    var = xc.mul(xc).mean(axis=axis, keepdims=True)
    xhat = xc.div(var.add(Tensor(np.full(var.shape, eps))).sqrt())
    return xhat.mul(gain).add(bias)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x.softmax(axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor.as_tensor(a).matmul(b)


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------


@dataclass
class Parameter:
    name: str
    tensor: Tensor

    @property
    def count(self) -> int:
        return self.tensor.size


def parameter_count(params: Iterable[Parameter]) -> int:
    return sum(p.count for p in params)


def cosine_lr(base_lr: float, iteration: int, total_iterations: int) -> float:
    """Cosine decay from ``base_lr`` at iteration 0 to 0 at ``total_iterations``."""
    if total_iterations <= 0:
        return base_lr
    frac = min(max(iteration, 0), total_iterations) / total_iterations
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Adam with cosine-decayed learning rate.

    ``step()`` consumes the ``grad`` buffers of the registered parameters;
    updates are deterministic functions of the gradient history.
    """

    def __init__(self, params: Sequence[Parameter], base_lr: float = 1e-4,
                 total_iterations: int = 0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.base_lr = base_lr
        self.total_iterations = total_iterations
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.iteration = 0
        self._m = [np.zeros_like(p.tensor.data) for p in self.params]
        self._v = [np.zeros_like(p.tensor.data) for p in self.params]

    @property
    def lr(self) -> float:
        return cosine_lr(self.base_lr, self.iteration, self.total_iterations)

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()

    def step(self) -> float:
        lr = self.lr
        t = self.iteration + 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.tensor.grad
            if g is None:
                continue
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * g
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * g * g
            mhat = self._m[i] / (1.0 - b1 ** t)
            vhat = self._v[i] / (1.0 - b2 ** t)
            p.tensor.data -= lr * mhat / (np.sqrt(vhat) + self.eps)
        self.iteration += 1
        return lr


# ---------------------------------------------------------------------------
# checkpoint format: little-endian binary
#   magic "SCKP", u32 version, u64 param count, then per parameter:
#   u32 name length, name bytes (utf-8), u32 rank, u64 x rank dims,
#   float64 payload in row-major order.
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"SCKP"
_CKPT_VERSION = 1


def save_checkpoint(path, named_arrays: Sequence[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(named_arrays)))
        for name, arr in named_arrays:
            raw = name.encode("utf-8")
            a = np.ascontiguousarray(arr, dtype=np.float64)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", a.ndim))
            for d in a.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(a.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    from .errors import SchemaMismatch
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise SchemaMismatch(f"not a checkpoint file: bad magic {magic!r}")
        version, count = struct.unpack("<IQ", fh.read(12))
        if version != _CKPT_VERSION:
            raise SchemaMismatch(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack("<" + "Q" * rank, fh.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(dims)
            out[name] = payload.astype(np.float64).copy()
    return out
