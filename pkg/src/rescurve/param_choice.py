"""Regularization parameter choice rules and their comparison.

Rules take a finished :class:`~rescurve.solver.Sweep` (or residual curve) and
return an ``alpha``. The a-priori rule needs ``mu`` and the norm ``rho`` of a
source representation, the discrepancy principle needs ``delta``; the
heuristic discrepancy principle, the L-curve and the residual differential
method (RDM) use only the sweep. The RDM minimizes ``dr/dalpha``, the plain
derivative in ``alpha``, unlike the log-log slope used for stage detection.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .analysis import ResidualCurve, residual_curve
from .solver import AlphaGrid, Sweep, sweep, tikhonov_direct, tikhonov_spectral

__all__ = [
    "ChoiceError",
    "ChoiceResult",
    "choose_apriori",
    "choose_discrepancy",
    "choose_heuristic_dp",
    "choose_lcurve",
    "choose_rdm",
    "choose_oracle",
    "source_norm",
    "solve_at",
    "compare_rules",
    "choices_to_csv",
    "choices_to_json",
    "TABLE1_RULES",
]

TABLE1_RULES = ("oracle", "dp:1.01", "apriori", "dp:1.1", "heuristic_dp", "rdm")


class ChoiceError(ValueError):
    """A rule could not produce a parameter for this input."""


@dataclass(frozen=True)
class ChoiceResult:
    rule: str
    alpha: float | None
    error_ratio: float | None = None
    residual_ratio: float | None = None
    diagnostics: dict = field(default_factory=dict)
    failure: str | None = None

    @property
    def ok(self):
        return self.failure is None


def choose_apriori(delta, mu, rho):
    """``(delta / rho)^(2 / (2 mu + 1))``."""
    if not delta > 0:
        raise ChoiceError("delta must be positive")
    if not 0 < mu <= 1:
        raise ChoiceError("mu must lie in (0, 1]")
    if not rho > 0:
        raise ChoiceError("rho must be positive")
    return float((delta / rho) ** (2.0 / (2.0 * mu + 1.0)))


def source_norm(p, mu, rtol=1e-14):
    """``||w||`` for the source representation ``x = (A^* A)^mu w``.

    Uses ``w_i = sigma_i^(-2 mu) x_i`` and stops accumulating at the first
    index whose term no longer changes the sum by ``rtol`` relative; if the
    sum keeps growing the whole stored spectrum is used.
    """
    if p.operator.kind != "diagonal" or p.x_true is None:
        raise ChoiceError("source norm needs a diagonal operator and x_true")
    s = p.operator.singular_values
    w2 = (s ** (-2.0 * mu) * p.x_true) ** 2
    acc = np.cumsum(w2)
    small = np.flatnonzero(w2[1:] <= rtol * acc[:-1])
    stop = int(small[0]) + 1 if small.size else w2.size
    return float(np.sqrt(acc[stop - 1]))


def solve_at(p, alpha):
    """Tikhonov solution at an arbitrary ``alpha``, by the cheapest exact path."""
    if p.operator.kind == "diagonal":
        return tikhonov_spectral(p, alpha)
    return tikhonov_direct(p, alpha)


def choose_discrepancy(s: Sweep, delta, tau, problem=None, max_bisect=30):
    """Discrepancy principle: largest ``alpha`` with ``r(alpha) <= tau delta``.

    The largest admissible grid value is refined by bisection in
    ``log alpha`` towards the crossing ``r = tau delta`` inside the
    bracketing grid interval. With ``problem`` the residual is re-solved at
    each trial value, otherwise ``log r`` is interpolated linearly.
    Returns ``(alpha, diagnostics)``.
    """
    if not tau > 1:
        raise ChoiceError("tau must exceed 1")
    if not delta > 0:
        raise ChoiceError("delta must be positive")
    alphas, r = s.alphas, s.residuals
    target = tau * delta
    ok = np.flatnonzero(r <= target)
    if ok.size == 0:
        raise ChoiceError(f"no grid point has residual below tau*delta = {target:.6g}")
    k = int(ok[0])
    diag = {"tau": float(tau), "delta": float(delta), "grid_alpha": float(alphas[k]), "bisections": 0}
    if k == 0:
        return float(alphas[0]), diag

    hi, lo = float(alphas[k - 1]), float(alphas[k])  # r(hi) > target >= r(lo)
    if problem is not None:
        def resid(a):
            return solve_at(problem, a).residual_norm
    else:
        x0, x1 = np.log(alphas[k - 1]), np.log(alphas[k])
        y0, y1 = np.log(r[k - 1]), np.log(r[k])

        def resid(a):
            t = (np.log(a) - x0) / (x1 - x0)
            return float(np.exp(y0 + t * (y1 - y0)))

    for it in range(max_bisect):
        mid = float(np.sqrt(hi * lo))
        if mid in (hi, lo):
            break
        if resid(mid) <= target:
            lo = mid
        else:
            hi = mid
        diag["bisections"] = it + 1
    return lo, diag


def choose_heuristic_dp(s: Sweep):
    """Grid minimizer of ``r(alpha)^2 / alpha``; ties go to the larger alpha."""
    alphas, r = s.alphas, s.residuals
    f = r**2 / alphas
    k = int(np.flatnonzero(f == f.min())[0])
    return float(alphas[k])


def _menger(p0, p1, p2):
    """Signed Menger curvature; negative for a clockwise turn."""
    a = p1 - p0
    b = p2 - p1
    c = p2 - p0
    cross = a[0] * b[1] - a[1] * b[0]
    den = np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(c)
    return 0.0 if den == 0 else 2.0 * cross / den


def choose_lcurve(s: Sweep, min_arm=1.0):
    """Corner of the L-curve ``(log r, log ||x||)``.

    The polyline is smoothed by a 3-point moving average and the corner is
    the point of largest clockwise Menger curvature. A corner also needs a
    vertical arm: ``log ||x||`` must still rise by ``min_arm`` beyond it.
    Raises :class:`ChoiceError` ("no corner") otherwise.
    Returns ``(alpha, diagnostics)``.
    """
    alphas = s.alphas
    if alphas.size < 5:
        raise ChoiceError("the L-curve needs at least 5 points")
    xn = s.xnorms
    if np.any(xn <= 0):
        raise ChoiceError("the L-curve needs nonzero solution norms")
    pts = np.column_stack([np.log(s.residuals), np.log(xn)])
    sm = pts.copy()
    sm[1:-1] = (pts[:-2] + pts[1:-1] + pts[2:]) / 3.0
    kap = np.array([-_menger(sm[i - 1], sm[i], sm[i + 1]) for i in range(1, len(sm) - 1)])
    k = int(np.argmax(kap)) + 1
    diag = {"corner_curvature": float(kap[k - 1])}
    if not kap[k - 1] > 1e-12:
        raise ChoiceError("no corner: the L-curve is collinear")
    rise = float(pts[-1, 1] - pts[k, 1])
    diag["vertical_arm"] = rise
    if rise < min_arm:
        raise ChoiceError("no corner: the L-curve has no vertical arm")
    return float(alphas[k]), diag


def choose_rdm(c: ResidualCurve | Sweep):
    """Residual differential method.

    Minimizes the centered difference ``(r[i+1] - r[i-1]) / (a[i+1] - a[i-1])``
    over interior grid points; ties go to the smaller alpha.
    """
    if len(c) < 3:
        raise ChoiceError("RDM needs at least 3 points")
    if isinstance(c, Sweep):
        c = residual_curve(c)
    a, r = c.alphas, c.r
    d = (r[2:] - r[:-2]) / (a[2:] - a[:-2])
    k = int(np.flatnonzero(d == d.min())[-1]) + 1
    return float(a[k])


def _errors(s: Sweep, x_true):
    return np.array([np.linalg.norm(pt.x - x_true) for pt in s.points])


def choose_oracle(s: Sweep, x_true):
    """Grid value with the smallest reconstruction error."""
    if x_true is None:
        raise ChoiceError("the oracle rule needs x_true")
    err = _errors(s, np.asarray(x_true, dtype=float))
    return float(s.alphas[int(np.argmin(err))])


def _parse_rule(rule):
    name, _, arg = rule.partition(":")
    if name == "dp":
        return name, float(arg) if arg else 1.1
    if arg:
        raise ChoiceError(f"rule {name!r} takes no argument")
    if name not in ("apriori", "heuristic_dp", "lcurve", "rdm", "oracle"):
        raise ChoiceError(f"unknown rule {rule!r}")
    return name, None


def compare_rules(p=None, grid: AlphaGrid | None = None, rules=TABLE1_RULES, delta=None, mu=None, rho=None, s=None):
    """Apply each rule and report errors and residuals relative to the oracle.

    ``rules`` holds names ``apriori``, ``dp:<tau>``, ``heuristic_dp``,
    ``lcurve``, ``rdm`` and ``oracle``. Unset ``delta``/``mu``/``rho`` are
    taken from the problem's ground truth where available. Without a
    problem, a precomputed sweep ``s`` is required and no ratios are
    reported. A failing rule yields a result with ``failure`` set.
    """
    if p is None and s is None:
        raise ChoiceError("compare_rules needs a problem or a sweep")
    s = s if s is not None else sweep(p, grid)
    if p is not None:
        if delta is None:
            delta = p.delta_true
        if mu is None:
            mu = p.meta.get("mu_star")
    have_truth = p is not None and p.x_true is not None

    ref_alpha = ref_err = ref_res = None
    if have_truth:
        ref_alpha = choose_oracle(s, p.x_true)
        k = int(np.flatnonzero(s.alphas == ref_alpha)[0])
        ref_err = float(np.linalg.norm(s.points[k].x - p.x_true))
        ref_res = s.points[k].residual_norm

    out = []
    for rule in rules:
        diag = {}
        try:
            name, arg = _parse_rule(rule)
            if name == "oracle":
                if not have_truth:
                    raise ChoiceError("the oracle rule needs x_true")
                alpha = ref_alpha
            elif name == "apriori":
                if not delta or mu is None:
                    raise ChoiceError("the a-priori rule needs delta and mu")
                if rho is None and p is None:
                    raise ChoiceError("the a-priori rule needs rho without a problem")
                r_ = rho if rho is not None else source_norm(p, mu)
                alpha = choose_apriori(delta, mu, r_)
                diag = {"delta": float(delta), "mu": float(mu), "rho": float(r_)}
            elif name == "dp":
                if not delta:
                    raise ChoiceError("the discrepancy principle needs delta > 0")
                alpha, diag = choose_discrepancy(s, delta, arg, problem=p)
            elif name == "heuristic_dp":
                alpha = choose_heuristic_dp(s)
            elif name == "lcurve":
                alpha, diag = choose_lcurve(s)
            else:
                alpha = choose_rdm(s)
        except ChoiceError as exc:
            out.append(ChoiceResult(rule, None, diagnostics=diag, failure=str(exc)))
            continue
        err_ratio = res_ratio = None
        if have_truth:
            sol = solve_at(p, alpha)
            if ref_err > 0:
                err_ratio = float(np.linalg.norm(sol.x - p.x_true)) / ref_err
            if ref_res > 0:
                res_ratio = sol.residual_norm / ref_res
        out.append(ChoiceResult(rule, float(alpha), err_ratio, res_ratio, diag))
    return out


def _fmt(v):
    return "" if v is None else f"{v:.17g}"


def choices_to_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rule", "alpha", "err_ratio", "res_ratio"])
    for c in results:
        w.writerow([c.rule, _fmt(c.alpha), _fmt(c.error_ratio), _fmt(c.residual_ratio)])
    return buf.getvalue()


def choices_to_json(results) -> str:
    return json.dumps(
        [
            {
                "rule": c.rule,
                "alpha": c.alpha,
                "err_ratio": c.error_ratio,
                "res_ratio": c.residual_ratio,
                "diagnostics": c.diagnostics,
                "failure": c.failure,
            }
            for c in results
        ],
        indent=2,
    )
