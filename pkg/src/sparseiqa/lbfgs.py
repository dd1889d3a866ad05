"""Limited-memory BFGS with a strong-Wolfe line search.

Two-loop recursion over the last `memory` curvature pairs (Nocedal &
Wright, Numerical Optimization 2e, Alg. 7.4) and the bracketing/zoom line
search of Alg. 3.5/3.6 with cubic interpolation.  Deterministic: results
depend only on the objective and the start point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_C1 = 1e-4   # sufficient-decrease constant
_C2 = 0.9    # curvature constant


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad_norm: float
    n_iterations: int
    stop_reason: str              # "gradient" | "ftol" | "max_iter" | "line_search"
    line_search_failed: bool
    f_history: list = field(default_factory=list)


def _cubic_min(x1, f1, g1, x2, f2, g2):
    """Minimizer of the cubic through (x1,f1,g1), (x2,f2,g2); None if ill-posed."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    rad = d1 * d1 - g1 * g2
    if rad < 0:
        return None
    d2 = np.sqrt(rad)
    if x1 <= x2:
        pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
    else:
        pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
    if not np.isfinite(pos):
        return None
    return pos


class _LineEval:
    """phi(alpha) = f(x + alpha d), tracking the best point seen so far."""

    def __init__(self, fg, x, d):
        self.fg = fg
        self.x = x
        self.d = d
        self.n_evals = 0
        self.best = None  # (f, alpha, x_new, g_new)

    def __call__(self, alpha):
        x_new = self.x + alpha * self.d
        f, g = self.fg(x_new)
        self.n_evals += 1
        if np.isfinite(f) and (self.best is None or f < self.best[0]):
            self.best = (f, alpha, x_new, g)
        return f, g, float(g @ self.d), x_new


def _zoom(phi, lo, hi, f0, dphi0, max_evals):
    """Alg. 3.6: shrink [lo, hi] until a strong-Wolfe point is found.

    lo/hi are (alpha, f, dphi, x, g) tuples; lo always has the lowest f
    seen among Wolfe-candidate endpoints.
    """
    for _ in range(max_evals):
        a_lo, f_lo, d_lo = lo[0], lo[1], lo[2]
        a_hi, f_hi, d_hi = hi[0], hi[1], hi[2]
        width = abs(a_hi - a_lo)
        if width < 1e-16 * max(1.0, abs(a_lo)):
            break
        a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
        left, right = min(a_lo, a_hi), max(a_lo, a_hi)
        margin = 0.1 * width
        if a is None or not (left + margin <= a <= right - margin):
            a = 0.5 * (a_lo + a_hi)
        f, g, dphi, x_new = phi(a)
        if not np.isfinite(f):
            hi = (a, f, dphi, x_new, g)
            continue
        if f > f0 + _C1 * a * dphi0 or f >= f_lo:
            hi = (a, f, dphi, x_new, g)
        else:
            if abs(dphi) <= -_C2 * dphi0:
                return (a, f, dphi, x_new, g)
            if dphi * (a_hi - a_lo) >= 0:
                hi = lo
            lo = (a, f, dphi, x_new, g)
    return None


def _strong_wolfe(fg, x, f0, g0, d, alpha0, max_evals=30):
    """Find alpha satisfying the strong Wolfe conditions along d.

    Returns (alpha, f, x_new, g_new, ok).  On failure ok is False and the
    best (lowest-f) point evaluated is returned instead, which may be the
    start point itself.
    """
    dphi0 = float(g0 @ d)
    phi = _LineEval(fg, x, d)
    prev = (0.0, f0, dphi0, x, g0)
    alpha = alpha0
    result = None
    while phi.n_evals < max_evals:
        f, g, dphi, x_new = phi(alpha)
        cur = (alpha, f, dphi, x_new, g)
        if not np.isfinite(f):
            alpha = 0.5 * (prev[0] + alpha)  # back off from overflow territory
            continue
        if f > f0 + _C1 * alpha * dphi0 or (phi.n_evals > 1 and f >= prev[1]):
            result = _zoom(phi, prev, cur, f0, dphi0, max_evals - phi.n_evals)
            break
        if abs(dphi) <= -_C2 * dphi0:
            result = cur
            break
        if dphi >= 0:
            result = _zoom(phi, cur, prev, f0, dphi0, max_evals - phi.n_evals)
            break
        prev = cur
        alpha = min(2.0 * alpha, 1e10)

    if result is not None:
        a, f, _, x_new, g = result
        return a, f, x_new, g, True
    if phi.best is not None and phi.best[0] < f0:
        f, a, x_new, g = phi.best
        return a, f, x_new, g, False
    return 0.0, f0, x, g0, False


def _two_loop(g, s_list, y_list, rho_list):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def lbfgs_minimize(
    f_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    memory: int = 10,
    max_iter: int = 400,
    gtol: float = 1e-5,
    ftol: float = 1e-9,
    callback: Callable | None = None,
) -> LbfgsResult:
    """Minimize f starting from x0.

    Stops when the gradient infinity norm drops below `gtol`, when the
    relative objective change falls below `ftol`, or after `max_iter`
    accepted iterations.  A line search that cannot make progress stops
    the run at the last accepted iterate with `line_search_failed` set.

    `callback(k, x, f, grad_inf_norm)` is invoked at the start point
    (k = 0) and after every accepted iteration.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = f_and_grad(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("objective is not finite at the start point")
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    history = [f]
    if callback is not None:
        callback(0, x, f, gnorm)
    if gnorm <= gtol:
        return LbfgsResult(x, f, gnorm, 0, "gradient", False, history)

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    ls_failed = False
    reason = "max_iter"
    k = 0
    while k < max_iter:
        d = -_two_loop(g, s_list, y_list, rho_list)
        dg = float(g @ d)
        if dg >= 0:  # stale curvature produced an ascent direction
            s_list.clear(); y_list.clear(); rho_list.clear()
            d = -g
            dg = -float(g @ g)
        alpha0 = 1.0 if s_list else min(1.0, 1.0 / max(np.sqrt(-dg), 1e-12))

        alpha, f_new, x_new, g_new, ok = _strong_wolfe(f_and_grad, x, f, g, d, alpha0)
        if not ok and s_list:
            # retry once from steepest descent before giving up
            s_list.clear(); y_list.clear(); rho_list.clear()
            d = -g
            alpha0 = min(1.0, 1.0 / max(float(np.linalg.norm(g)), 1e-12))
            alpha, f_new, x_new, g_new, ok = _strong_wolfe(f_and_grad, x, f, g, d, alpha0)
        if not ok and f_new >= f:
            ls_failed = True
            reason = "line_search"
            break

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > memory:
                s_list.pop(0); y_list.pop(0); rho_list.pop(0)

        df = f - f_new
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.max(np.abs(g)))
        history.append(f)
        k += 1
        if callback is not None:
            callback(k, x, f, gnorm)
        if not ok:
            ls_failed = True
            reason = "line_search"
            break
        if gnorm <= gtol:
            reason = "gradient"
            break
        if df <= ftol * max(1.0, abs(f)):
            reason = "ftol"
            break

    return LbfgsResult(x, f, gnorm, k, reason, ls_failed, history)
