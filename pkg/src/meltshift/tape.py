"""Reverse-mode gradient tape over dense float64 numpy arrays.

All model arithmetic runs through this module: each primitive records its
inputs and a backward closure on a :class:`Tape`, and ``Tape.backward``
replays the records in exact reverse order, accumulating gradients into
every leaf. One finite-difference proof of this machinery covers every
head architecture built on top of it.

Conventions
-----------
* Everything is float64. Vectors are 1-D arrays, matrices 2-D, and
  scalars are shape-``(1,)`` arrays so they compose with the other ops.
* Parameters enter a tape via :meth:`Tape.leaf` with a unique name;
  binding the same array object twice returns the same node, so shared
  parameters accumulate gradients correctly.
* LayerNorm uses the population (divide-by-n) variance.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError, StateError

Array = np.ndarray

DEFAULT_LAYERNORM_EPS = 1e-5


def as_vector(x, what: str = "vector") -> Array:
    """Coerce to a finite 1-D float64 array of positive length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ConfigError(f"{what}: expected nonempty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{what}: contains non-finite entries")
    return v


def as_matrix(x, what: str = "matrix") -> Array:
    """Coerce to a finite 2-D float64 array with positive dimensions."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ConfigError(f"{what}: expected nonempty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{what}: contains non-finite entries")
    return m


class Node:
    """One value in the computation graph. Leaves may carry a name."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value: Array, name: str | None = None):
        self.value = value
        self.grad: Array | None = None
        self.name = name

    def add_grad(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self) -> str:  # pragma: no cover
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Node shape={self.value.shape}{tag}>"


class Tape:
    """Records primitive operations for one forward pass.

    A tape is single-use: run the forward by calling primitives, then
    call :meth:`backward` exactly once. Parameters persist outside the
    tape as plain arrays; a fresh tape is built per training step.
    """

    def __init__(self):
        self._records: list[tuple[Node, tuple[Node, ...], object]] = []
        self._leaves: list[Node] = []
        self._leaf_by_id: dict[int, Node] = {}
        self._names: set[str] = set()
        self._consumed = False

    # ------------------------------------------------------------------
    # graph construction

    def leaf(self, value, name: str | None = None) -> Node:
        """Register an input or parameter array and return its node.

        Passing the same array object again returns the existing node,
        so a parameter used in several places receives one accumulated
        gradient.
        """
        key = id(value) if isinstance(value, np.ndarray) else None
        if key is not None and key in self._leaf_by_id:
            node = self._leaf_by_id[key]
            if name is not None and node.name != name:
                raise ConfigError(
                    f"leaf bound twice under different names: {node.name!r} vs {name!r}"
                )
            return node
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"leaf {name or '<input>'}: non-finite entries")
        if name is not None:
            if name in self._names:
                raise ConfigError(f"duplicate parameter name on tape: {name!r}")
            self._names.add(name)
        node = Node(arr, name)
        self._leaves.append(node)
        if key is not None:
            self._leaf_by_id[key] = node
        return node

    def _emit(self, value: Array, inputs: tuple[Node, ...], backward) -> Node:
        out = Node(value)
        self._records.append((out, inputs, backward))
        return out

    # ------------------------------------------------------------------
    # primitives

    def add(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ConfigError(f"add: shape mismatch {a.value.shape} vs {b.value.shape}")

        def backward(g: Array) -> None:
            a.add_grad(g)
            b.add_grad(g)

        return self._emit(a.value + b.value, (a, b), backward)

    def sub(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ConfigError(f"sub: shape mismatch {a.value.shape} vs {b.value.shape}")

        def backward(g: Array) -> None:
            a.add_grad(g)
            b.add_grad(-g)

        return self._emit(a.value - b.value, (a, b), backward)

    def scale(self, s: Node, x: Node) -> Node:
        """Learned scalar times tensor: ``s`` must have shape (1,)."""
        if s.value.shape != (1,):
            raise ConfigError(f"scale: scalar must have shape (1,), got {s.value.shape}")
        sval, xval = s.value, x.value

        def backward(g: Array) -> None:
            s.add_grad(np.array([np.sum(g * xval)]))
            x.add_grad(sval[0] * g)

        return self._emit(sval[0] * xval, (s, x), backward)

    def const_scale(self, c: float, x: Node) -> Node:
        """Fixed constant times tensor; no gradient flows to ``c``."""
        c = float(c)

        def backward(g: Array) -> None:
            x.add_grad(c * g)

        return self._emit(c * x.value, (x,), backward)

    def linear(self, W: Node, x: Node, b: Node) -> Node:
        """Affine map ``W @ x + b`` with W (m,n), x (n,), b (m,)."""
        if W.value.ndim != 2 or x.value.ndim != 1 or b.value.ndim != 1:
            raise ConfigError(
                f"linear: need W 2-D, x 1-D, b 1-D; got {W.value.shape}, "
                f"{x.value.shape}, {b.value.shape}"
            )
        m, n = W.value.shape
        if x.value.shape[0] != n or b.value.shape[0] != m:
            raise ConfigError(
                f"linear: W {W.value.shape} expects x ({n},) and b ({m},); "
                f"got x {x.value.shape}, b {b.value.shape}"
            )
        Wval, xval = W.value, x.value

        def backward(g: Array) -> None:
            W.add_grad(np.outer(g, xval))
            x.add_grad(Wval.T @ g)
            b.add_grad(g)

        return self._emit(Wval @ xval + b.value, (W, x, b), backward)

    def outer_flatten(self, u: Node, v: Node) -> Node:
        """Row-major flattened outer product: out[i*d + j] = u[i] * v[j]."""
        if u.value.shape != v.value.shape or u.value.ndim != 1:
            raise ConfigError(
                f"outer_flatten: need equal-length vectors, got {u.value.shape} "
                f"vs {v.value.shape}"
            )
        d = u.value.shape[0]
        uval, vval = u.value, v.value

        def backward(g: Array) -> None:
            G = g.reshape(d, d)
            u.add_grad(G @ vval)
            v.add_grad(G.T @ uval)

        return self._emit(np.outer(uval, vval).reshape(d * d), (u, v), backward)

    def layernorm(self, x: Node, gamma: Node, beta: Node,
                  eps: float = DEFAULT_LAYERNORM_EPS) -> Node:
        """gamma * (x - mean) / sqrt(var + eps) + beta, population variance."""
        if not (x.value.shape == gamma.value.shape == beta.value.shape):
            raise ConfigError(
                f"layernorm: shape mismatch x {x.value.shape}, gamma "
                f"{gamma.value.shape}, beta {beta.value.shape}"
            )
        if eps <= 0:
            raise ConfigError(f"layernorm: eps must be positive, got {eps}")
        n = x.value.shape[0]
        mu = x.value.mean()
        var = x.value.var()
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.value - mu) * inv_std
        gval = gamma.value

        def backward(g: Array) -> None:
            gamma.add_grad(g * xhat)
            beta.add_grad(g)
            dxhat = g * gval
            # standard layernorm input gradient with population variance
            dx = (inv_std / n) * (
                n * dxhat - dxhat.sum() - xhat * (dxhat * xhat).sum()
            )
            x.add_grad(dx)

        return self._emit(gval * xhat + beta.value, (x, gamma, beta), backward)

    def concat(self, parts: list[Node]) -> Node:
        if not parts:
            raise ConfigError("concat: empty part list")
        for p in parts:
            if p.value.ndim != 1:
                raise ConfigError(f"concat: parts must be 1-D, got {p.value.shape}")
        sizes = [p.value.shape[0] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def backward(g: Array) -> None:
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                p.add_grad(g[lo:hi])

        return self._emit(np.concatenate([p.value for p in parts]),
                          tuple(parts), backward)

    def mean_scalars(self, items: list[Node]) -> Node:
        """Mean of shape-(1,) scalars, summed in list order."""
        if not items:
            raise ConfigError("mean_scalars: empty list")
        for it in items:
            if it.value.shape != (1,):
                raise ConfigError(
                    f"mean_scalars: need shape (1,) items, got {it.value.shape}"
                )
        n = len(items)
        total = np.zeros(1)
        for it in items:  # fixed summation order keeps reduction deterministic
            total = total + it.value

        def backward(g: Array) -> None:
            share = g / n
            for it in items:
                it.add_grad(share)

        return self._emit(total / n, tuple(items), backward)

    def mse(self, x: Node, target) -> Node:
        """Mean squared error against a constant target; scalar output."""
        t = np.asarray(target, dtype=np.float64)
        if t.ndim == 0:
            t = t.reshape(1)
        if t.shape != x.value.shape:
            raise ConfigError(f"mse: target shape {t.shape} vs value {x.value.shape}")
        diff = x.value - t
        n = diff.size

        def backward(g: Array) -> None:
            x.add_grad((2.0 / n) * diff * g[0])

        return self._emit(np.array([np.mean(diff * diff)]), (x,), backward)

    # ------------------------------------------------------------------
    # reverse pass

    def backward(self, output: Node, seed: float = 1.0) -> dict[str, Array]:
        """Run the reverse pass from a scalar output node.

        Returns gradients for every named leaf (zeros if the forward never
        touched it). Unnamed leaves keep their gradient on ``node.grad``.
        """
        if self._consumed:
            raise StateError("backward already ran on this tape")
        if not self._records:
            raise StateError("backward before forward: tape has no recorded ops")
        if output.value.shape != (1,):
            raise ConfigError(
                f"backward: output must be scalar shape (1,), got {output.value.shape}"
            )
        self._consumed = True
        output.grad = np.array([float(seed)])
        for out, _inputs, bwd in reversed(self._records):
            if out.grad is not None:
                bwd(out.grad)
        grads: dict[str, Array] = {}
        for node in self._leaves:
            if node.name is None:
                continue
            g = node.grad if node.grad is not None else np.zeros_like(node.value)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {node.name!r}")
            grads[node.name] = g
        return grads
