"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op builds a node with a backward closure; Tensor.backward() runs the
tape in reverse topological order from a scalar loss. Broadcasting follows
numpy and gradients are summed back over broadcast axes. This is deliberately
just enough machinery for the sine-activation MLP (including differentiating
its analytic spatial gradient with respect to the weights), the per-bin conv
regressor, and the training losses; it is not a general tensor library.
"""

from __future__ import annotations

import numpy as np


class NumericalFailure(RuntimeError):
    """Raised when training or optimization produces non-finite numbers."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach its shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    # -- graph plumbing ----------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        self.grad = g if self.grad is None else self.grad + g

    @staticmethod
    def _node(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self) -> None:
        """Reverse-accumulate d(self)/d(leaf) for every grad-requiring leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tracked parameter")
        order: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        out = self._node(self.data + other.data, (self, other), None)

        def back(g):
            self._accumulate(g)
            other._accumulate(g)

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = self._node(-self.data, (self,), None)
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = self._node(self.data * other.data, (self, other), None)

        def back(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = self._node(self.data / other.data, (self, other), None)

        def back(g):
            self._accumulate(g / other.data)
            other._accumulate(-g * self.data / (other.data * other.data))

        out._backward = back
        return out

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = self._node(self.data**exponent, (self,), None)
        out._backward = lambda g: self._accumulate(
            g * exponent * self.data ** (exponent - 1)
        )
        return out

    def __matmul__(self, other):
        other = self._lift(other)
        out = self._node(self.data @ other.data, (self, other), None)

        def back(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        out._backward = back
        return out

    @property
    def T(self):
        out = self._node(self.data.T, (self,), None)
        out._backward = lambda g: self._accumulate(g.T)
        return out

    def reshape(self, *shape):
        old = self.data.shape
        out = self._node(self.data.reshape(*shape), (self,), None)
        out._backward = lambda g: self._accumulate(g.reshape(old))
        return out

    def __getitem__(self, index):
        out = self._node(self.data[index], (self,), None)

        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            self._accumulate(full)

        out._backward = back
        return out

    # -- reductions --------------------------------------------------------

    def sum(self):
        out = self._node(self.data.sum(), (self,), None)
        out._backward = lambda g: self._accumulate(np.broadcast_to(g, self.data.shape))
        return out

    def mean(self):
        n = self.data.size
        out = self._node(self.data.mean(), (self,), None)
        out._backward = lambda g: self._accumulate(
            np.broadcast_to(g / n, self.data.shape)
        )
        return out

    # -- elementwise functions --------------------------------------------

    def sin(self):
        out = self._node(np.sin(self.data), (self,), None)
        out._backward = lambda g: self._accumulate(g * np.cos(self.data))
        return out

    def cos(self):
        out = self._node(np.cos(self.data), (self,), None)
        out._backward = lambda g: self._accumulate(-g * np.sin(self.data))
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = self._node(y, (self,), None)
        out._backward = lambda g: self._accumulate(g * (1.0 - y * y))
        return out

    def relu(self):
        out = self._node(np.maximum(self.data, 0.0), (self,), None)
        out._backward = lambda g: self._accumulate(g * (self.data > 0.0))
        return out

    def abs(self):
        out = self._node(np.abs(self.data), (self,), None)
        out._backward = lambda g: self._accumulate(g * np.sign(self.data))
        return out

    def sqrt(self):
        y = np.sqrt(self.data)
        out = self._node(y, (self,), None)
        out._backward = lambda g: self._accumulate(g * 0.5 / y)
        return out

    def float(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to the first argument."""
    a, b = Tensor._lift(a), Tensor._lift(b)
    take_a = a.data <= b.data
    out = Tensor._node(np.where(take_a, a.data, b.data), (a, b), None)

    def back(g):
        a._accumulate(g * take_a)
        b._accumulate(g * ~take_a)

    out._backward = back
    return out


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first argument."""
    a, b = Tensor._lift(a), Tensor._lift(b)
    take_a = a.data >= b.data
    out = Tensor._node(np.where(take_a, a.data, b.data), (a, b), None)

    def back(g):
        a._accumulate(g * take_a)
        b._accumulate(g * ~take_a)

    out._backward = back
    return out


def smooth_l1(x, beta: float) -> Tensor:
    """Elementwise smooth-L1: quadratic inside |x| < beta, linear outside."""
    if beta <= 0.0:
        raise ValueError("smooth-L1 transition beta must be positive")
    x = Tensor._lift(x)
    ax = np.abs(x.data)
    inner = ax < beta
    val = np.where(inner, 0.5 * x.data * x.data / beta, ax - 0.5 * beta)
    out = Tensor._node(val, (x,), None)

    def back(g):
        x._accumulate(g * np.where(inner, x.data / beta, np.sign(x.data)))

    out._backward = back
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Batched 1-D correlation with zero 'same' padding.

    x is (batch, in_channels, width), w is (out_channels, in_channels, taps)
    with an odd tap count, b is (out_channels,). Returns (batch, out, width).
    """
    xb, wb, bb = Tensor._lift(x), Tensor._lift(w), Tensor._lift(b)
    batch, cin, width = xb.data.shape
    cout, cin_w, taps = wb.data.shape
    if cin != cin_w:
        raise ValueError("channel mismatch between input and kernel")
    if taps % 2 != 1:
        raise ValueError("kernel tap count must be odd for same padding")
    pad = taps // 2

    xp = np.zeros((batch, cin, width + 2 * pad))
    xp[:, :, pad : pad + width] = xb.data
    # im2col: (batch, cin, width, taps) -> (batch*width, cin*taps)
    view = np.lib.stride_tricks.sliding_window_view(xp, taps, axis=2)
    cols = np.ascontiguousarray(view.transpose(0, 2, 1, 3)).reshape(
        batch * width, cin * taps
    )
    wmat = wb.data.reshape(cout, cin * taps)
    out_mat = cols @ wmat.T
    out_data = out_mat.reshape(batch, width, cout).transpose(0, 2, 1) + bb.data[
        None, :, None
    ]
    out = Tensor._node(out_data, (xb, wb, bb), None)

    def back(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(batch * width, cout)
        bb._accumulate(g.sum(axis=(0, 2)))
        wb._accumulate((g_mat.T @ cols).reshape(cout, cin, taps))
        g_cols = (g_mat @ wmat).reshape(batch, width, cin, taps)
        gxp = np.zeros_like(xp)
        for k in range(taps):
            gxp[:, :, k : k + width] += g_cols[:, :, :, k].transpose(0, 2, 1)
        xb._accumulate(gxp[:, :, pad : pad + width])

    out._backward = back
    return out
