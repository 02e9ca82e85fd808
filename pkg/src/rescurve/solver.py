"""Tikhonov minimizers over whole grids of regularization parameters.

Diagonal operators are handled in closed form by spectral filtering. Dense
operators use a multi-shift conjugate gradient method on the normal
equations: every ``(A^T A + alpha I) x = A^T y`` shares the Krylov space of
``A^T A``, so one recurrence serves all grid values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _dd

__all__ = [
    "SolverError",
    "ConvergenceError",
    "AlphaGrid",
    "TikhonovResult",
    "Sweep",
    "tikhonov_spectral",
    "tikhonov_cg_shifted",
    "tikhonov_direct",
    "sweep",
    "write_sweep_csv",
    "read_sweep_csv",
]

log = logging.getLogger(__name__)

DEFAULT_Q = 10.0 ** -0.1
DEFAULT_STEPS = 121
DEFAULT_TOL = 1e-10
DEFAULT_MAXIT = 5000


class SolverError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Raised when some shifts miss the tolerance within ``maxit`` iterations.

    ``results`` holds every shift, converged or not; check ``converged``.
    """

    def __init__(self, message, results):
        super().__init__(message)
        self.results = results

    @property
    def unconverged(self):
        return [r.alpha for r in self.results if not r.converged]


@dataclass(frozen=True)
class AlphaGrid:
    """Geometric grid ``alpha_i = alpha0 * q**(i-1)``, ``i = 1..steps``."""

    alpha0: float = 1.0
    q: float = DEFAULT_Q
    steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise SolverError("alpha0 must be positive")
        if not 0 < self.q < 1:
            raise SolverError("q must lie strictly between 0 and 1")
        if self.steps < 1:
            raise SolverError("grid needs at least one step")

    @property
    def values(self) -> np.ndarray:
        return self.alpha0 * self.q ** np.arange(self.steps, dtype=float)

    @classmethod
    def spanning(cls, alpha_max, alpha_min, per_decade=10):
        """Grid from ``alpha_max`` down to ``alpha_min`` with ``per_decade`` points."""
        decades = np.log10(alpha_max / alpha_min)
        steps = int(round(decades * per_decade)) + 1
        return cls(alpha_max, 10.0 ** (-1.0 / per_decade), steps)


@dataclass(frozen=True, eq=False)
class TikhonovResult:
    alpha: float
    x: np.ndarray
    residual_norm: float
    solution_norm: float
    gradient_norm: float
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class Sweep:
    """Tikhonov solves ordered by decreasing alpha."""

    grid: AlphaGrid | None
    points: list
    problem_meta: dict = field(default_factory=dict)
    ynorm: float | None = None

    @property
    def alphas(self):
        return np.array([p.alpha for p in self.points])

    @property
    def residuals(self):
        return np.array([p.residual_norm for p in self.points])

    @property
    def xnorms(self):
        return np.array([p.solution_norm for p in self.points])

    @property
    def gradnorms(self):
        return np.array([p.gradient_norm for p in self.points])

    def __len__(self):
        return len(self.points)


def _check_alpha(alpha):
    if not alpha > 0:
        raise SolverError(f"alpha must be positive, got {alpha}")


def tikhonov_spectral(p, alpha) -> TikhonovResult:
    """Closed-form Tikhonov solution for a diagonal operator."""
    if p.operator.kind != "diagonal":
        raise SolverError("tikhonov_spectral needs a diagonal operator")
    _check_alpha(alpha)
    s = p.operator.singular_values
    y = p.y_noisy
    denom = s * s + alpha
    x = s * y / denom
    res = alpha * y / denom
    # A^*(Ax - y) = -alpha x holds componentwise, so the gradient is formed directly
    grad = s * res
    return TikhonovResult(
        alpha=float(alpha),
        x=x,
        residual_norm=float(np.hypot(np.linalg.norm(res), p.residual_floor)),
        solution_norm=float(np.linalg.norm(x)),
        gradient_norm=float(np.linalg.norm(grad)),
    )


def _dense_result(a, y, floor, alpha, x, converged, iterations, refine=False):
    if refine:
        x, res, grad = _refine(a, y, alpha, x)
    else:
        res = a @ x - y
        grad = a.T @ res
    return TikhonovResult(
        alpha=float(alpha),
        x=x,
        residual_norm=float(np.hypot(np.linalg.norm(res), floor)),
        solution_norm=float(np.linalg.norm(x)),
        gradient_norm=float(np.linalg.norm(grad)),
        converged=converged,
        iterations=iterations,
    )


def _cg_shift(a, shift, rhs, tol_abs, maxit):
    """Plain CG for ``(A^T A + shift I) c = rhs`` from zero."""
    c = np.zeros_like(rhs)
    r = rhs.copy()
    pvec = r.copy()
    rr = r @ r
    for _ in range(maxit):
        if np.sqrt(rr) <= tol_abs:
            break
        q = a.T @ (a @ pvec) + shift * pvec
        d = pvec @ q
        if d <= 0:
            break
        step = rr / d
        c += step * pvec
        r -= step * q
        rr_new = r @ r
        pvec = r + (rr_new / rr) * pvec
        rr = rr_new
    return c


def _refine(a, y, shift, x, maxsteps=12, rtol=1e-26):
    """Iterative refinement with double-double residuals.

    Returns the refined solution as a double-double pair together with the
    data residual ``A x - y`` and gradient ``A^T (A x - y)``, both evaluated
    in double-double and rounded to float64.
    """
    yd = _dd.from_float(y)
    bnorm = np.linalg.norm(a.T @ y)
    xd = _dd.from_float(x)
    best = None
    for _ in range(maxsteps + 1):
        r = _dd.add(yd, _dd.neg(_dd.matvec(a, xd)))
        g = _dd.matvec(a.T, r)
        e = _dd.add(g, _dd.neg(_dd.scale(shift, xd)))
        enorm = np.linalg.norm(e[0])
        if best is None or enorm < best[0]:
            best = (enorm, xd, r, g)
        elif enorm > 0.5 * best[0]:
            break
        if enorm <= rtol * bnorm:
            break
        corr = _cg_shift(a, shift, e[0], 1e-3 * enorm, 10 * a.shape[1] + 100)
        xd = _dd.add(xd, _dd.from_float(corr))
    _, xd, r, g = best
    return xd[0] + xd[1], -r[0], -g[0]


def _normal_residual(a, y, shift, x):
    return a.T @ (y - a @ x) - shift * x


def _cgls_shift(a, y, shift, x0, tol_abs, maxit):
    """CGLS for ``min ||Ax - y||^2 + shift ||x||^2`` from a warm start."""
    x = x0.copy()
    r = y - a @ x
    s = a.T @ r - shift * x
    pvec = s.copy()
    gamma = s @ s
    it = 0
    while np.sqrt(gamma) > tol_abs and it < maxit:
        q = a @ pvec
        d = q @ q + shift * (pvec @ pvec)
        if d <= 0:
            break
        step = gamma / d
        x += step * pvec
        r -= step * q
        s = a.T @ r - shift * x
        g_new = s @ s
        pvec = s + (g_new / gamma) * pvec
        gamma = g_new
        it += 1
    return x, it


REFINE_MAX_ENTRIES = 40_000


def tikhonov_cg_shifted(p, grid, tol=DEFAULT_TOL, maxit=DEFAULT_MAXIT, refine=None):
    """Solve the shifted normal equations for every grid value at once.

    Returns one :class:`TikhonovResult` per grid value, in grid order. Each
    result satisfies ``||(A^T A + alpha I) x - A^T y|| <= tol * ||A^T y||``;
    shifts where the shared recurrence lost accuracy are finished by a
    restarted single-shift CG. Raises :class:`ConvergenceError` if any shift
    is still above tolerance after ``maxit`` iterations.

    With ``refine`` (default: on for matrices up to ``REFINE_MAX_ENTRIES``
    entries) each solution is polished by iterative refinement whose
    residuals are evaluated in double-double arithmetic. The reported
    residual and gradient norms then stay accurate for shifts far below
    ``eps * ||A||^2``, where float64 residuals are dominated by rounding.
    """
    if p.operator.kind != "dense":
        raise SolverError("tikhonov_cg_shifted needs a dense operator")
    if not tol > 0:
        raise SolverError("tol must be positive")
    alphas = grid.values if isinstance(grid, AlphaGrid) else np.asarray(grid, dtype=float)
    for al in alphas:
        _check_alpha(al)
    a = p.operator.matrix
    y = p.y_noisy
    n = a.shape[1]
    if refine is None:
        refine = a.size <= REFINE_MAX_ENTRIES
    b = a.T @ y
    bnorm = float(np.linalg.norm(b))
    nshift = alphas.size
    xs = np.zeros((nshift, n))
    iters = np.zeros(nshift, dtype=int)

    if bnorm == 0.0:
        return [_dense_result(a, y, p.residual_floor, al, xs[i], True, 0) for i, al in enumerate(alphas)]

    tol_abs = tol * bnorm
    r = b.copy()
    pvec = b.copy()
    ps = np.tile(b, (nshift, 1))
    rr = float(r @ r)
    zeta = np.ones(nshift)
    zeta_prev = np.ones(nshift)
    a_prev, b_prev = 1.0, 0.0
    active = np.ones(nshift, dtype=bool)
    breakdown = False

    with np.errstate(all="ignore"):
        for k in range(maxit):
            ap = a @ pvec
            pmp = float(ap @ ap)
            if not pmp > 0 or not np.isfinite(pmp):
                breakdown = True
                break
            step = rr / pmp
            idx = np.flatnonzero(active)
            z, zp, sh = zeta[idx], zeta_prev[idx], alphas[idx]
            denom = step * b_prev * (zp - z) + zp * a_prev * (1.0 + sh * step)
            z_new = z * zp * a_prev / denom
            if not np.all(np.isfinite(z_new)) or np.any(denom <= 0):
                breakdown = True
                break
            step_s = step * z_new / z
            xs[idx] += step_s[:, None] * ps[idx]
            r -= step * (a.T @ ap)
            rr_new = float(r @ r)
            beta = rr_new / rr
            beta_s = beta * (z_new / z) ** 2
            ps[idx] = z_new[:, None] * r + beta_s[:, None] * ps[idx]
            pvec = r + beta * pvec
            zeta_prev[idx] = z
            zeta[idx] = z_new
            iters[idx] = k + 1
            a_prev, b_prev, rr = step, beta, rr_new
            done = np.abs(z_new) * np.sqrt(rr) <= tol_abs
            active[idx[done]] = False
            if not active.any() or rr == 0.0:
                break

    if breakdown:
        log.warning("shifted CG breakdown after %d iterations; restarting per shift", int(iters.max()))

    results = []
    for i, al in enumerate(alphas):
        x = xs[i]
        it = int(iters[i])
        true_res = np.linalg.norm(_normal_residual(a, y, al, x))
        if true_res > tol_abs:
            x, extra = _cgls_shift(a, y, al, x, tol_abs, maxit)
            it += extra
            true_res = np.linalg.norm(_normal_residual(a, y, al, x))
        results.append(
            _dense_result(a, y, p.residual_floor, al, x, bool(true_res <= tol_abs), it, refine)
        )

    bad = [r.alpha for r in results if not r.converged]
    if bad:
        raise ConvergenceError(
            f"{len(bad)} of {nshift} shifts did not reach tol={tol:g} within {maxit} iterations",
            results,
        )
    return results


def tikhonov_direct(p, alpha, refine=False) -> TikhonovResult:
    """Dense direct solve of the normal equations (reference path)."""
    _check_alpha(alpha)
    op = p.operator
    a = op.matrix if op.kind == "dense" else np.diag(op.singular_values)
    m = a.T @ a + alpha * np.eye(a.shape[1])
    x = np.linalg.solve(m, a.T @ p.y_noisy)
    return _dense_result(a, p.y_noisy, p.residual_floor, alpha, x, True, 0, refine)


def sweep(p, grid=None, tol=DEFAULT_TOL, maxit=DEFAULT_MAXIT, refine=None) -> Sweep:
    """Solve on every grid value, dispatching on the operator kind."""
    grid = grid or AlphaGrid()
    if p.operator.kind == "diagonal":
        points = [tikhonov_spectral(p, al) for al in grid.values]
    else:
        points = tikhonov_cg_shifted(p, grid, tol=tol, maxit=maxit, refine=refine)
    points.sort(key=lambda r: -r.alpha)
    return Sweep(grid=grid, points=points, problem_meta=dict(p.meta), ynorm=p.ynorm)


SWEEP_HEADER = "alpha,residual,xnorm,gradnorm"


def write_sweep_csv(s: Sweep, path) -> None:
    lines = [SWEEP_HEADER]
    for pt in s.points:
        lines.append(
            f"{pt.alpha:.17g},{pt.residual_norm:.17g},{pt.solution_norm:.17g},{pt.gradient_norm:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_sweep_csv(path, ynorm=None) -> Sweep:
    """Load a sweep CSV; solution vectors are not stored, so ``x`` is empty."""
    rows = Path(path).read_text().strip().splitlines()
    if rows[0].strip() != SWEEP_HEADER:
        raise SolverError(f"unexpected sweep header {rows[0]!r}")
    points = []
    for line in rows[1:]:
        al, r, xn, gn = (float(v) for v in line.split(","))
        points.append(TikhonovResult(al, np.empty(0), r, xn, gn))
    points.sort(key=lambda t: -t.alpha)
    return Sweep(grid=None, points=points, ynorm=ynorm)
