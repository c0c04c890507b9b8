"""Dense linear algebra with minimal reverse-mode differentiation.

Everything is float64 numpy. The computation graph is rebuilt on every
evaluation ("define by run") and garbage-collected with it; only leaf
``Var`` objects (parameters) survive across steps. The primitive set is
deliberately small: the networks trained here have width <= 128 and
depth <= 7, so a general autodiff framework buys nothing and a closed
primitive set keeps runs bit-reproducible.

A differentiation tape (graph) must stay confined to one thread; values
are plain arrays and safe to share once built.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConvergenceError, DimensionError, NumericError

Array = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 stream.

    Every random draw in this package flows through a generator built
    here, so runs are reproducible from the seeds alone. PCG64 is the
    fixed algorithm; do not swap it without revalidating golden values.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent child PCG64 streams for parallel-safe trials."""
    seq = np.random.SeedSequence(int(seed))
    return [np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(int(count))]


class Var:
    """Node in the differentiation graph.

    ``value`` is a float64 array, ``parents`` the input nodes and
    ``_vjp`` maps the upstream adjoint to one adjoint per parent.
    Leaves have no parents; their ``grad`` is populated by
    :func:`backward`.
    """

    __slots__ = ("value", "parents", "_vjp", "grad")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self._vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    # Arithmetic sugar so layer code reads like numpy.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, leaf={self._vjp is None})"


def as_var(x) -> Var:
    """Wrap arrays/scalars as constant leaves; pass Vars through."""
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum an adjoint down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, (a, b),
              lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)))
    return out


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)))


def mul(a, b) -> Var:
    """Elementwise (broadcasting) product."""
    a, b = as_var(a), as_var(b)
    return Var(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.value.shape),
                          _unbroadcast(g * a.value, b.value.shape)))


def scale(a, c: float) -> Var:
    a = as_var(a)
    c = float(c)
    return Var(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Var:
    """Matrix product with the usual reverse rules (da = g b^T, db = a^T g)."""
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.value.shape} @ {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.value.shape} @ {b.value.shape}")
    return Var(a.value @ b.value, (a, b),
               lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a) -> Var:
    a = as_var(a)
    return Var(a.value.T, (a,), lambda g: (g.T,))


def concat_rows(a, b) -> Var:
    """Stack two matrices along axis 0."""
    a, b = as_var(a), as_var(b)
    na = a.value.shape[0]
    return Var(np.concatenate([a.value, b.value], axis=0), (a, b),
               lambda g: (g[:na], g[na:]))


def sum_all(a) -> Var:
    a = as_var(a)
    return Var(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, a.value.shape).copy(),))


def square(a) -> Var:
    a = as_var(a)
    return Var(a.value ** 2, (a,), lambda g: (2.0 * a.value * g,))


def exp(a) -> Var:
    a = as_var(a)
    e = np.exp(a.value)
    return Var(e, (a,), lambda g: (g * e,))


def reciprocal(a) -> Var:
    a = as_var(a)
    r = 1.0 / a.value
    return Var(r, (a,), lambda g: (-g * r * r,))


def tanh(a) -> Var:
    a = as_var(a)
    t = np.tanh(a.value)
    return Var(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a) -> Var:
    a = as_var(a)
    mask = a.value > 0.0
    return Var(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def max_with_const(a, c: float) -> Var:
    """max(a, c) elementwise against a constant.

    On the tie a == c the gradient is routed to ``a`` (subgradient 1),
    which is what the trainers rely on.
    """
    a = as_var(a)
    c = float(c)
    mask = a.value >= c
    return Var(np.where(mask, a.value, c), (a,), lambda g: (g * mask,))


def solve(a, b) -> Var:
    """X = A^{-1} B through LU with partial pivoting (LAPACK gesv).

    Reverse rule: dB = A^{-T} G, dA = -A^{-T} G X^T. Never forms an
    explicit inverse or adjugate.
    """
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or a.value.shape[0] != a.value.shape[1]:
        raise DimensionError(f"solve expects a square matrix, got {a.value.shape}")
    if b.value.ndim != 2 or b.value.shape[0] != a.value.shape[0]:
        raise DimensionError(f"solve rhs mismatch: {a.value.shape} vs {b.value.shape}")
    if not (np.all(np.isfinite(a.value)) and np.all(np.isfinite(b.value))):
        raise NumericError("solve received non-finite input")
    try:
        x = np.linalg.solve(a.value, b.value)
    except np.linalg.LinAlgError as err:
        raise NumericError(f"linear solve failed: {err}") from err

    def vjp(g):
        gb = np.linalg.solve(a.value.T, g)
        return (-gb @ x.T, gb)

    return Var(x, (a, b), vjp)


def backward(out: Var) -> None:
    """Reverse pass seeding d(out)/d(out) = 1; ``out`` must be scalar.

    Adjoints accumulate into ``.grad`` of every reachable node; callers
    reset leaf grads (``clear_grads``) between passes.
    """
    if out.value.ndim != 0 and out.value.size != 1:
        raise DimensionError(f"backward expects a scalar output, got shape {out.value.shape}")

    topo: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    out.grad = np.ones_like(out.value)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node._vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + g


def clear_grads(params: Sequence[Var]) -> None:
    for p in params:
        p.grad = None


def grad_of(p: Var) -> Array:
    """Gradient of a leaf after backward(); zeros if it was unreachable."""
    if p.grad is None:
        return np.zeros_like(p.value)
    return p.grad


# ---------------------------------------------------------------------------
# Spectral norm by power iteration
# ---------------------------------------------------------------------------

def top_singular_vectors(w: Array, v0: Array | None = None, tol: float = 1e-9,
                         max_iter: int = 500) -> tuple[Array, Array, float, float]:
    """Power iteration on W^T W; returns (u, v, sigma, residual).

    ``residual`` is the relative eigen-residual ||W^T W v - lam v|| / lam
    at exit. Raises ConvergenceError (carrying the last iterate) when the
    budget runs out before the residual falls under ``tol``.
    """
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[1]
    if v0 is None:
        v = np.ones(n) / np.sqrt(n)
    else:
        v = np.asarray(v0, dtype=np.float64)
        nv = np.linalg.norm(v)
        if not np.isfinite(nv) or nv == 0.0:
            v = np.ones(n) / np.sqrt(n)
        else:
            v = v / nv
    residual = np.inf
    for _ in range(int(max_iter)):
        wv = w @ v
        z = w.T @ wv
        lam = float(v @ z)
        if lam <= 0.0:
            break
        residual = float(np.linalg.norm(z - lam * v) / lam)
        if residual <= tol:
            sigma = float(np.linalg.norm(wv))
            u = wv / sigma
            return u, v, sigma, residual
        v = z / np.linalg.norm(z)
    raise ConvergenceError(
        f"power iteration did not reach residual {tol} in {max_iter} iterations "
        f"(last residual {residual:.3e})", last_iterate=v)


def spectral_norm(w, tol: float = 1e-9, max_iter: int = 500) -> float:
    """Largest singular value of ``w`` by power iteration on W^T W.

    Starts from the deterministic normalized all-ones vector so repeated
    runs agree bit for bit.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionError(f"spectral_norm expects a matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NumericError("spectral_norm received non-finite entries")
    if not np.any(w):
        raise ValueError("spectral_norm of the zero matrix is undefined here (precondition w != 0)")
    if tol <= 0.0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    _, _, sigma, _ = top_singular_vectors(w, None, tol, max_iter)
    return sigma


# ---------------------------------------------------------------------------
# Cayley map onto matrices with orthonormal stacked columns
# ---------------------------------------------------------------------------

def cayley(u, v) -> tuple[Var, Var]:
    """Map free (U, V) to (Q1, Q2) with Q1^T Q1 + Q2^T Q2 = I.

    Z = U - U^T + V^T V, Q1 = (I+Z)^{-1}(I-Z), Q2 = -2 V (I+Z)^{-1}.
    sym(Z) >= 0 makes I+Z nonsingular for every real input, so a solve
    failure can only mean non-finite parameters.
    """
    u, v = as_var(u), as_var(v)
    n = u.value.shape[0]
    if u.value.ndim != 2 or u.value.shape != (n, n):
        raise DimensionError(f"cayley: u must be square, got {u.value.shape}")
    if v.value.ndim != 2 or v.value.shape[1] != n:
        raise DimensionError(f"cayley: v must have {n} columns, got {v.value.shape}")
    eye = np.eye(n)
    z = add(sub(u, transpose(u)), matmul(transpose(v), v))
    a = add(eye, z)
    q1 = solve(a, sub(eye, z))
    # Right division V (I+Z)^{-1} via the transposed system.
    q2 = scale(transpose(solve(transpose(a), transpose(v))), -2.0)
    return q1, q2


# ---------------------------------------------------------------------------
# Finite-difference validation of the engine
# ---------------------------------------------------------------------------

def _rel_err(a: Array, b: Array) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def grad_check(f: Callable[[Var], Var], theta, step: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f`` maps one Var to a scalar Var. The denominator is clamped at 1
    so tiny gradients are compared absolutely; a constant f scores 0.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    leaf = Var(theta.copy())
    out = f(leaf)
    if not np.all(np.isfinite(out.value)):
        raise NumericError("grad_check: f(theta) is not finite")
    backward(out)
    g = grad_of(leaf)

    fd = np.zeros_like(theta)
    flat = fd.reshape(-1)
    for i in range(theta.size):
        bump = np.zeros_like(theta).reshape(-1)
        bump[i] = step
        bump = bump.reshape(theta.shape)
        hi = float(f(Var(theta + bump)).value)
        lo = float(f(Var(theta - bump)).value)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError("grad_check: f is not finite at a probe point")
        flat[i] = (hi - lo) / (2.0 * step)
    return _rel_err(g, fd)


def grad_check_params(loss_fn: Callable[[], Var], params: Sequence[Var],
                      step: float = 1e-4) -> float:
    """grad_check over a list of parameter leaves.

    ``loss_fn`` rebuilds the scalar loss from the params' current values,
    so central differences can be taken by perturbing ``param.value`` in
    place. Returns the max relative error over every coordinate of every
    parameter.
    """
    clear_grads(params)
    out = loss_fn()
    backward(out)
    grads = [grad_of(p).copy() for p in params]

    worst = 0.0
    for p, g in zip(params, grads):
        base = p.value.copy()
        flat_fd = np.zeros(base.size)
        for i in range(base.size):
            delta = np.zeros(base.size)
            delta[i] = step
            p.value = (base.reshape(-1) + delta).reshape(base.shape)
            hi = float(loss_fn().value)
            p.value = (base.reshape(-1) - delta).reshape(base.shape)
            lo = float(loss_fn().value)
            flat_fd[i] = (hi - lo) / (2.0 * step)
        p.value = base
        worst = max(worst, _rel_err(g.reshape(-1), flat_fd))
    return worst
