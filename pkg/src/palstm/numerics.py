"""Dense float64 kernel with a small reverse-mode gradient tape.

Only the operations the autoencoder needs are supported: affine maps,
sigmoid / tanh / ReLU, elementwise sum and product, concatenation,
slicing, a fused LSTM step and a squared-error reduction. Vectors may carry a leading batch axis, in which
case every row is treated as an independent sample.
"""

from __future__ import annotations

from typing import Callable, Iterator, Mapping

import numpy as np

ACTIVATIONS = ("sigmoid", "tanh", "relu")


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class ContractError(RuntimeError):
    """Raised when a loss graph uses something the tape cannot differentiate."""


def _check_finite(value, where):
    # a sum is non-finite iff some entry is (barring overflow near 1e308)
    if not np.isfinite(np.add.reduce(value, axis=None)):
        raise NonFiniteError(f"non-finite value produced by {where}")
    return value


def _sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def affine(W, x, b=None):
    """Return ``W @ x + b`` for a vector ``x`` or ``x @ W.T + b`` for a batch of rows."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"cannot apply W{W.shape} to x{x.shape}")
    out = x @ W.T
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (W.shape[0],):
            raise DimensionError(f"bias{b.shape} does not match W{W.shape}")
        out = out + b
    return _check_finite(out, "affine")


def activate(v, kind):
    v = np.asarray(v, dtype=np.float64)
    if kind == "sigmoid":
        return _sigmoid(v)
    if kind == "tanh":
        return np.tanh(v)
    if kind == "relu":
        return np.maximum(v, 0.0)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


class ParameterStore(Mapping):
    """Named float64 arrays with fixed shapes, iterated in sorted name order.

    Entries can be replaced, never reshaped; :meth:`add` is the only way to
    introduce a new name.
    """

    def __init__(self, entries=None):
        self._data: dict[str, np.ndarray] = {}
        for name, value in (entries or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._data:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        if arr.ndim not in (1, 2):
            raise DimensionError(f"parameter {name!r} must be 1-D or 2-D, got {arr.shape}")
        self._data[name] = _check_finite(arr, name)

    def __setitem__(self, name: str, value) -> None:
        if name not in self._data:
            raise KeyError(f"unknown parameter {name!r}")
        arr = np.array(value, dtype=np.float64)
        if arr.shape != self._data[name].shape:
            raise DimensionError(
                f"parameter {name!r} has shape {self._data[name].shape}, got {arr.shape}"
            )
        self._data[name] = _check_finite(arr, name)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._data))

    def __len__(self) -> int:
        return len(self._data)

    def shapes(self) -> dict[str, tuple]:
        return {name: self._data[name].shape for name in self}

    def copy(self):
        return type(self)({name: self._data[name].copy() for name in self})

    def size(self) -> int:
        return sum(v.size for v in self._data.values())

    def __repr__(self):
        return f"{type(self).__name__}({len(self)} entries, {self.size()} values)"


class GradientStore(ParameterStore):
    """Gradient buffers mirroring a :class:`ParameterStore` key-for-key."""

    @classmethod
    def zeros_like(cls, params: ParameterStore) -> "GradientStore":
        return cls({name: np.zeros_like(params[name]) for name in params})

    def reset(self) -> None:
        for name in self:
            self._data[name] = np.zeros_like(self._data[name])

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(self._data[n] ** 2)) for n in self)))

    def scale(self, factor: float) -> None:
        for name in self:
            self._data[name] = self._data[name] * factor

    def matches(self, params: ParameterStore) -> bool:
        return self.shapes() == params.shapes()


class Node:
    __slots__ = ("value", "grad", "tape", "needs_grad", "_parents", "_backward")

    def __init__(self, value, tape, parents=(), backward=None, needs_grad=True):
        self.value = value
        self.grad = None
        self.tape = tape
        self.needs_grad = needs_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def _accumulate(node, g):
    if not node.needs_grad:
        return
    node.grad = g if node.grad is None else node.grad + g


class Tape:
    """Records operations on :class:`Node` values and replays them in reverse.

    With ``record=False`` the same methods evaluate eagerly and keep no
    history, which is how inference runs.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes: list[Node] = []

    def __len__(self):
        return len(self._nodes)

    def _emit(self, value, where, parents=(), backward=None):
        _check_finite(value, where)
        if not self.record:
            return Node(value, self)
        node = Node(value, self, parents, backward)
        self._nodes.append(node)
        return node

    def _own(self, *nodes):
        for n in nodes:
            if not isinstance(n, Node):
                raise ContractError(f"expected a tape node, got {type(n).__name__}")
            if n.tape is not self:
                raise ContractError("node belongs to a different tape")

    def variable(self, value) -> Node:
        return self._emit(np.asarray(value, dtype=np.float64), "variable")

    def constant(self, value) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), self, needs_grad=False)
        _check_finite(node.value, "constant")
        return node

    def affine(self, W: Node, x: Node, b: Node | None = None) -> Node:
        self._own(W, x)
        Wv, xv = W.value, x.value
        if Wv.ndim != 2 or xv.shape[-1] != Wv.shape[1]:
            raise DimensionError(f"cannot apply W{Wv.shape} to x{xv.shape}")
        out = xv @ Wv.T
        if b is not None:
            self._own(b)
            if b.shape != (Wv.shape[0],):
                raise DimensionError(f"bias{b.shape} does not match W{Wv.shape}")
            out = out + b.value

        def backward(g):
            if xv.ndim == 2:
                _accumulate(W, g.T @ xv)
            else:
                _accumulate(W, np.outer(g, xv))
            if x.needs_grad:
                _accumulate(x, g @ Wv)
            if b is not None:
                _accumulate(b, g.sum(axis=0) if g.ndim == 2 else g)

        return self._emit(out, "affine", (W, x, b), backward)

    def add(self, a: Node, b: Node) -> Node:
        self._own(a, b)
        if a.shape != b.shape:
            raise DimensionError(f"cannot add {a.shape} and {b.shape}")

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return self._emit(a.value + b.value, "add", (a, b), backward)

    def mul(self, a: Node, b: Node) -> Node:
        self._own(a, b)
        if a.shape != b.shape:
            raise DimensionError(f"cannot multiply {a.shape} and {b.shape}")
        av, bv = a.value, b.value

        def backward(g):
            _accumulate(a, g * bv)
            _accumulate(b, g * av)

        return self._emit(av * bv, "mul", (a, b), backward)

    def sigmoid(self, a: Node) -> Node:
        self._own(a)
        s = _sigmoid(a.value)
        return self._emit(s, "sigmoid", (a,), lambda g: _accumulate(a, g * s * (1.0 - s)))

    def tanh(self, a: Node) -> Node:
        self._own(a)
        t = np.tanh(a.value)
        return self._emit(t, "tanh", (a,), lambda g: _accumulate(a, g * (1.0 - t * t)))

    def relu(self, a: Node) -> Node:
        self._own(a)
        mask = a.value > 0
        return self._emit(
            np.where(mask, a.value, 0.0), "relu", (a,), lambda g: _accumulate(a, g * mask)
        )

    def activate(self, a: Node, kind: str) -> Node:
        if kind not in ACTIVATIONS:
            raise ContractError(f"unsupported activation {kind!r}")
        return getattr(self, kind)(a)

    def concat(self, parts: list[Node]) -> Node:
        self._own(*parts)
        lead = {p.shape[:-1] for p in parts}
        if len(lead) != 1:
            raise DimensionError(f"cannot concatenate shapes {[p.shape for p in parts]}")
        widths = [p.shape[-1] for p in parts]
        bounds = np.cumsum([0] + widths)

        def backward(g):
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                _accumulate(p, g[..., lo:hi])

        return self._emit(
            np.concatenate([p.value for p in parts], axis=-1), "concat", tuple(parts), backward
        )

    def stack_rows(self, parts: list[Node]) -> Node:
        """Stack matrices (or vectors) along their first axis."""
        self._own(*parts)
        if len({p.shape[1:] for p in parts}) != 1:
            raise DimensionError(f"cannot stack shapes {[p.shape for p in parts]}")
        bounds = np.cumsum([0] + [p.shape[0] for p in parts])

        def backward(g):
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                _accumulate(p, g[lo:hi])

        return self._emit(
            np.concatenate([p.value for p in parts], axis=0), "stack_rows", tuple(parts), backward
        )

    def slice(self, a: Node, lo: int, hi: int) -> Node:
        """Columns ``lo:hi`` of the last axis."""
        self._own(a)
        if not 0 <= lo < hi <= a.shape[-1]:
            raise DimensionError(f"slice [{lo}:{hi}] out of range for {a.shape}")
        value = a.value[..., lo:hi]

        def backward(g):
            full = np.zeros_like(a.value)
            full[..., lo:hi] = g
            _accumulate(a, full)

        return self._emit(value, "slice", (a,), backward)

    def lstm_cell(self, x: Node, state: Node, Wx: Node, Wh: Node, b: Node) -> Node:
        """Fused LSTM step.

        ``state`` holds ``[h | c]`` along its last axis; the stacked weights
        hold the forget, input, candidate and output gates in that row order.
        Returns the next ``[h | c]``. Same arithmetic as composing
        affine/sigmoid/tanh/mul nodes, with the backward pass written out.
        """
        self._own(x, state, Wx, Wh, b)
        H = Wh.shape[1]
        if Wh.shape != (4 * H, H) or Wx.shape[0] != 4 * H or b.shape != (4 * H,):
            raise DimensionError(f"gate weights Wx{Wx.shape} Wh{Wh.shape} b{b.shape} do not conform")
        if state.shape[-1] != 2 * H or x.shape[-1] != Wx.shape[1] or x.shape[:-1] != state.shape[:-1]:
            raise DimensionError(f"x{x.shape} / state{state.shape} do not fit hidden size {H}")
        xv, sv = x.value, state.value
        h_prev, c_prev = sv[..., :H], sv[..., H:]
        z = xv @ Wx.value.T + h_prev @ Wh.value.T + b.value
        f = _sigmoid(z[..., :H])
        i = _sigmoid(z[..., H : 2 * H])
        cand = np.tanh(z[..., 2 * H : 3 * H])
        o = _sigmoid(z[..., 3 * H :])
        c = f * c_prev + i * cand
        tc = np.tanh(c)
        h = o * tc

        def backward(g):
            gh, gc = g[..., :H], g[..., H:]
            dc = gc + gh * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc * c_prev * f * (1.0 - f),
                    dc * cand * i * (1.0 - i),
                    dc * i * (1.0 - cand * cand),
                    gh * tc * o * (1.0 - o),
                ],
                axis=-1,
            )
            if dz.ndim == 2:
                _accumulate(Wx, dz.T @ xv)
                _accumulate(Wh, dz.T @ h_prev)
                _accumulate(b, dz.sum(axis=0))
            else:
                _accumulate(Wx, np.outer(dz, xv))
                _accumulate(Wh, np.outer(dz, h_prev))
                _accumulate(b, dz)
            if x.needs_grad:
                _accumulate(x, dz @ Wx.value)
            if state.needs_grad:
                _accumulate(state, np.concatenate([dz @ Wh.value, dc * f], axis=-1))

        return self._emit(np.concatenate([h, c], axis=-1), "lstm_cell", (x, state, Wx, Wh, b), backward)

    def squared_error(self, preds: list[Node], target) -> Node:
        """Mean of ``(pred_t - target_t)**2`` over every step and entry."""
        self._own(*preds)
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (len(preds),) + preds[0].shape:
            raise DimensionError(
                f"{len(preds)} predictions of {preds[0].shape} vs target {target.shape}"
            )
        diffs = [p.value - target[t] for t, p in enumerate(preds)]
        n = target.size
        total = sum(float(np.sum(d * d)) for d in diffs) / n

        def backward(g):
            for p, d in zip(preds, diffs):
                _accumulate(p, g * (2.0 / n) * d)

        return self._emit(np.asarray(total), "squared_error", tuple(preds), backward)

    def backward(self, loss: Node) -> None:
        self._own(loss)
        if not self.record:
            raise ContractError("tape was created with record=False")
        if loss.value.shape != ():
            raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
        loss.grad = np.asarray(1.0)
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def gradient_of(
    loss_fn: Callable[[Tape, Mapping[str, Node], object], Node],
    params: ParameterStore,
    inputs=None,
) -> tuple[float, GradientStore]:
    """Evaluate ``loss_fn(tape, nodes, inputs)`` and differentiate it w.r.t. every parameter."""
    tape = Tape()
    nodes = {name: tape.variable(params[name]) for name in params}
    loss = loss_fn(tape, nodes, inputs)
    if not isinstance(loss, Node) or loss.tape is not tape:
        raise ContractError("loss_fn must return a node recorded on the supplied tape")
    tape.backward(loss)
    grads = GradientStore.zeros_like(params)
    for name, node in nodes.items():
        if node.grad is not None:
            grads[name] = node.grad
    return float(loss.value), grads
