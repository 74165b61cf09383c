"""Covariance Intersection: weight optimization, fusion and iterative CI rounds."""

from __future__ import annotations

import enum
import functools
import math
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .gaussian import GaussianInfo
from .info_filter import InfoIncrement

IMPROVEMENT_TOL = 1e-10
MAX_ITERS = 200
# Objective differences below this are treated as ties and resolved toward
# uniform weights.
TIE_ATOL = 1e-12


class CIObjective(str, enum.Enum):
    LOG_DET = "log_det"
    TRACE = "trace"


class InfeasibleError(ValueError):
    """No convex combination of the inputs is invertible."""


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


@functools.lru_cache(maxsize=8)
def _lower_weights(n: int) -> np.ndarray:
    # tr(S^-1 I) for symmetric I from the lower triangle of S^-1 alone:
    # strictly lower entries count twice, the diagonal once, the upper zero.
    tri = np.tril(np.full((n, n), 2.0))
    tri.flat[:: n + 1] = 1.0
    return tri.ravel()


class _Objective:
    """``J((sum_j w_j I_j)^-1)`` and its gradient for a fixed stack of matrices."""

    def __init__(self, stack: np.ndarray, kind: CIObjective):
        self.stack = stack
        self.flat = stack.reshape(stack.shape[0], -1)
        self.n = stack.shape[1]
        self.kind = CIObjective(kind)
        self._flat_lower: np.ndarray | None = None
        self._last: tuple[bytes, np.ndarray | None] | None = None

    def combine(self, w: np.ndarray) -> np.ndarray:
        return (w @ self.flat).reshape(self.n, self.n)

    def _factor(self, w: np.ndarray) -> np.ndarray | None:
        key = w.tobytes()
        if self._last is not None and self._last[0] == key:
            return self._last[1]
        L, info = lapack.dpotrf(self.combine(w), lower=1, clean=0)
        L = L if info == 0 else None
        self._last = (key, L)
        return L

    def value(self, w: np.ndarray) -> float:
        L = self._factor(w)
        if L is None:
            return math.inf
        if self.kind is CIObjective.LOG_DET:
            return float(-2.0 * np.log(np.diagonal(L)).sum())
        return float(np.trace(self._inverse(L)))

    def _inverse(self, L: np.ndarray) -> np.ndarray:
        inv, _ = lapack.dpotri(L, lower=1)
        # dpotri fills the lower triangle only
        return np.tril(inv) + np.tril(inv, -1).T

    def grad(self, w: np.ndarray) -> np.ndarray:
        L = self._factor(w)
        if self.kind is CIObjective.TRACE:
            S_inv = self._inverse(L)
            return -(self.flat @ (S_inv @ S_inv).ravel())
        if self._flat_lower is None:
            self._flat_lower = self.flat * _lower_weights(self.n)
        inv, _ = lapack.dpotri(L, lower=1)
        return -(self._flat_lower @ inv.ravel())


def _golden_section(f, lo=0.0, hi=1.0, tol=1e-11) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _pair_scalar_objective(objective: _Objective):
    """Cheap scalar form of ``w -> J((w I_1 + (1 - w) I_2)^-1)``.

    With ``V^T I_2 V = 1`` and ``V^T I_1 V = diag(lam)`` the combination is
    congruent to ``diag(w lam + 1 - w)``, so each evaluation costs O(n).
    Returns None when neither matrix is positive definite.
    """
    I1, I2 = objective.stack
    for a, b, flip in ((I1, I2, False), (I2, I1, True)):
        try:
            lam, V = linalg.eigh(a, b, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        break
    else:
        return None
    if objective.kind is CIObjective.LOG_DET:
        base = -objective.value(np.array([0.0, 1.0]) if not flip else np.array([1.0, 0.0]))

        def f(t):
            d = t * lam + (1.0 - t)
            return math.inf if d.min() <= 0 else -(base + np.log(d).sum())
    else:
        col = (V * V).sum(axis=0)

        def f(t):
            d = t * lam + (1.0 - t)
            return math.inf if d.min() <= 0 else float((col / d).sum())

    if flip:
        return lambda w: f(1.0 - w)
    return f


def _gap(objective: _Objective, w: np.ndarray) -> float:
    """Upper bound on ``J(w) - min J`` from convexity: ``g.w - min_j g_j``."""
    g = objective.grad(w)
    return float(g @ w - g.min())


def _projected_gradient(obj: _Objective, w: np.ndarray, fw: float) -> tuple[np.ndarray, float]:
    t = 1.0
    for _ in range(MAX_ITERS):
        g = obj.grad(w)
        # Convexity bounds the remaining improvement by g.w - min_j g_j.
        if g @ w - g.min() < IMPROVEMENT_TOL:
            break
        while True:
            w_new = project_simplex(w - t * g)
            step = w_new - w
            f_new = obj.value(w_new)
            # sufficient decrease for the projected step
            if f_new <= fw + g @ step + (step @ step) / (2.0 * t) or t < 1e-20:
                break
            t *= 0.5
        improvement = fw - f_new
        if improvement > 0:
            w, fw = w_new, f_new
        if improvement < IMPROVEMENT_TOL:
            break
        t *= 2.0
    return w, fw


def optimize_weights(
    infos: Sequence[np.ndarray],
    obj: CIObjective = CIObjective.LOG_DET,
    vertex_values: Sequence[float] | None = None,
) -> np.ndarray:
    """CI weights minimizing ``J((sum_j w_j infos[j])^-1)`` over the simplex.

    Two inputs are handled by golden-section search on the scalar weight,
    more by projected gradient descent from uniform weights. The result is
    never worse than the best single input (vertex), and flat objectives
    resolve to the feasible optimum nearest uniform weights.
    ``vertex_values`` may carry precomputed ``J(infos[j]^-1)``.
    """
    if len(infos) == 0:
        raise ValueError("optimize_weights needs at least one information matrix")
    stack = np.asarray([np.asarray(m, dtype=float) for m in infos])
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise ValueError("information matrices must be square and of equal size")
    m = stack.shape[0]
    uniform = np.full(m, 1.0 / m)
    if m == 1:
        if _Objective(stack, obj).value(uniform) == math.inf:
            raise InfeasibleError("the only information matrix is singular")
        return uniform
    if all(np.array_equal(stack[0], s) for s in stack[1:]):
        if _Objective(stack, obj).value(uniform) == math.inf:
            raise InfeasibleError("information matrices are singular")
        return uniform

    objective = _Objective(stack, obj)
    candidates = []
    f_uniform = objective.value(uniform)
    if f_uniform < math.inf and _gap(objective, uniform) < IMPROVEMENT_TOL:
        # uniform weights are already within tolerance of the optimum
        candidates.append((f_uniform, uniform))
    elif m == 2:
        scalar = _pair_scalar_objective(objective)
        if scalar is None:
            scalar = lambda a: objective.value(np.array([a, 1.0 - a]))  # noqa: E731
        w1 = _golden_section(scalar)
        w = np.array([w1, 1.0 - w1])
        candidates.append((objective.value(w), w))
    elif f_uniform < math.inf:
        w, fw = _projected_gradient(objective, uniform, f_uniform)
        candidates.append((fw, w))
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        fe = objective.value(e) if vertex_values is None else vertex_values[j]
        candidates.append((fe, e))
    f_best, w_best = min(candidates, key=lambda c: c[0])
    if f_best == math.inf:
        raise InfeasibleError("every convex combination examined is singular")
    if f_uniform <= f_best + TIE_ATOL * max(1.0, abs(f_best)):
        return uniform
    return w_best


def ci_fuse(estimates: Sequence[GaussianInfo], w) -> GaussianInfo:
    w = np.asarray(w, dtype=float)
    if len(estimates) != w.size:
        raise ValueError(f"{len(estimates)} estimates but {w.size} weights")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must lie on the simplex, got {w}")
    dims = {e.dim for e in estimates}
    if len(dims) != 1:
        raise ValueError(f"estimates have mismatched dimensions {sorted(dims)}")
    n = estimates[0].dim
    y = w @ np.array([e.info_vec for e in estimates])
    Y = (w @ np.array([e.info_mat.ravel() for e in estimates])).reshape(n, n)
    return GaussianInfo(y, 0.5 * (Y + Y.T))


def ici_round(
    agent_inputs: Sequence[Sequence[GaussianInfo]],
    obj: CIObjective = CIObjective.LOG_DET,
    increments: Sequence[Sequence[InfoIncrement]] | None = None,
) -> list[GaussianInfo]:
    """One synchronous round of iterative CI.

    ``agent_inputs[i]`` holds the estimates agent ``i`` received this round,
    its own included. If ``increments`` is given (same nesting), each
    estimate is augmented with its sender's increment before fusion.
    """
    out = []
    # keyed by id; the array is stored too so its id cannot be recycled
    vertex_cache: dict[int, tuple[np.ndarray, float]] = {}

    def vertex_value(Y: np.ndarray) -> float:
        if id(Y) not in vertex_cache:
            vertex_cache[id(Y)] = (Y, _Objective(Y[None], obj).value(np.ones(1)))
        return vertex_cache[id(Y)][1]

    for i, inputs in enumerate(agent_inputs):
        if len(inputs) == 0:
            raise ValueError(f"agent {i} has an empty neighbourhood; it must include itself")
        if increments is not None:
            inputs = [
                GaussianInfo(e.info_vec + d.di, e.info_mat + d.dI)
                for e, d in zip(inputs, increments[i], strict=True)
            ]
        if len(inputs) == 1:
            out.append(inputs[0])
            continue
        first = inputs[0]
        if all(e is first or (np.array_equal(e.info_mat, first.info_mat)
                              and np.array_equal(e.info_vec, first.info_vec))
               for e in inputs[1:]):
            # fusing an estimate with itself returns it for any weights
            out.append(first)
            continue
        w = optimize_weights([e.info_mat for e in inputs], obj,
                             [vertex_value(e.info_mat) for e in inputs])
        out.append(ci_fuse(inputs, w))
    return out


def lyapunov(infos: Sequence[np.ndarray], obj: CIObjective = CIObjective.LOG_DET) -> float:
    """Network Lyapunov function ``sum_i J(Y_i^-1)``."""
    return sum(_Objective(np.asarray([Y]), obj).value(np.ones(1)) for Y in infos)
