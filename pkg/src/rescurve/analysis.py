"""Residual-curve analysis: stages, smoothness and noise estimation.

The residual ``r(alpha) = ||A x_alpha - y||`` traced over a geometric grid
passes through a burn-in stage (``r ~ ||y||``), an approximation stage where
``r ~ alpha^(mu + 1/2)``, a noise plateau (``r ~ delta``) and, for discretized
or misspecified problems, a floor. The functions here locate those stages
and read off the smoothness index ``mu`` and noise level ``delta``.

All logarithms are natural logarithms.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .solver import Sweep

__all__ = [
    "AnalysisError",
    "Thresholds",
    "ResidualCurve",
    "StageSegmentation",
    "SmoothnessEstimate",
    "NoiseEstimate",
    "residual_curve",
    "curve_from_arrays",
    "write_curve_csv",
    "estimates_to_json",
    "segment_stages",
    "estimate_noise",
    "estimate_smoothness",
    "classify_curvature",
    "estimate",
    "residual_decomposition",
    "lemma_sum",
    "tail_sum_ratio",
]

log = logging.getLogger(__name__)

HOLDER = "holder"
HIGH = "high_smoothness"
LOW = "low_smoothness"
NOISE = "noise_dominated"
NO_SC = "no_source_condition"


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class Thresholds:
    """Tunable constants of the stage detection and classification."""

    burn_in_fraction: float = 0.9
    burn_in_slope: float = 0.05
    approx_band: float = 0.03
    approx_median: tuple = (0.4, 1.0)
    plateau_slope: float = 0.05
    plateau_min: int = 5
    floor_slope: float = 0.9
    min_fit_points: int = 8
    r2_min: float = 0.995
    # natural-log units; the Hoelder model's own pre-asymptotic bend on a
    # ten-point-per-decade grid reaches about 0.006
    curvature: float = 0.0075
    boundary_mu: tuple = (0.02, 0.48)
    # residuals below this multiple of delta_hat are too close to the
    # plateau for the noise-corrected fit
    noise_margin: float = 2.0
    oscillation_sign_changes: int = 4
    oscillation_min_amplitude: float = 1e-3


@dataclass(frozen=True, eq=False)
class ResidualCurve:
    """Residuals and log-log slopes on a decreasing alpha grid.

    ``dr[i]`` is the slope between points ``i-1`` and ``i``; ``dr[0]`` is NaN.
    """

    alphas: np.ndarray
    r: np.ndarray
    dr: np.ndarray

    def __len__(self):
        return self.alphas.size


@dataclass(frozen=True)
class StageSegmentation:
    """Half-open index ranges ``(start, stop)``; empty ranges have start == stop."""

    burn_in: tuple
    approximation: tuple
    plateau: tuple
    floor: tuple

    @staticmethod
    def size(rng):
        return rng[1] - rng[0]

    def as_dict(self):
        return {k: list(v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SmoothnessEstimate:
    kappa: float
    mu: float
    fit_quality: float
    curvature: float
    classification: str
    window: tuple = (0, 0)
    noise_corrected: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        # NaN is not valid JSON; an impossible fit is reported as null
        num = lambda v: float(v) if np.isfinite(v) else None  # noqa: E731
        return {
            "kappa": num(self.kappa),
            "mu": num(self.mu),
            "fit_quality": num(self.fit_quality),
            "curvature": num(self.curvature),
            "classification": self.classification,
        }


@dataclass(frozen=True)
class NoiseEstimate:
    """``alpha_star``/``delta_hat`` are None when no plateau was found."""

    alpha_star: float | None
    delta_hat: float | None
    index: int | None = None

    @property
    def found(self):
        return self.delta_hat is not None

    def to_json(self):
        if not self.found:
            return {"alpha_star": None, "delta_hat": None, "status": "no plateau detected"}
        return {"alpha_star": self.alpha_star, "delta_hat": self.delta_hat}


def _slopes(alphas, r):
    dr = np.full(alphas.size, np.nan)
    dr[1:] = (np.log(r[1:]) - np.log(r[:-1])) / (np.log(alphas[1:]) - np.log(alphas[:-1]))
    return dr


def curve_from_arrays(alphas, r) -> ResidualCurve:
    alphas = np.asarray(alphas, dtype=float)
    r = np.asarray(r, dtype=float)
    order = np.argsort(-alphas, kind="stable")
    alphas, r = alphas[order], r[order]
    keep = r > 0
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} points with zero residual", stacklevel=2)
        alphas, r = alphas[keep], r[keep]
    if alphas.size < 3:
        raise AnalysisError("residual curve needs at least 3 points")
    return ResidualCurve(alphas, r, _slopes(alphas, r))


def residual_curve(s: Sweep) -> ResidualCurve:
    """Residuals of a sweep together with their log-log finite-difference slopes."""
    return curve_from_arrays(s.alphas, s.residuals)


def write_curve_csv(c: ResidualCurve, path) -> None:
    """CSV ``alpha,residual,dr``; the undefined first slope is written empty."""
    lines = ["alpha,residual,dr"]
    for a, r, d in zip(c.alphas, c.r, c.dr):
        lines.append(f"{a:.17g},{r:.17g}," + ("" if np.isnan(d) else f"{d:.17g}"))
    Path(path).write_text("\n".join(lines) + "\n")


def _runs(mask):
    """(start, stop) of maximal True runs."""
    out = []
    i, n = 0, mask.size
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


def stable_window(dr, lo, hi, band, median_range):
    """Longest run in ``dr[lo:hi]`` staying within ``band`` of its own median."""
    best = (lo, lo)
    mlo, mhi = median_range
    for i in range(lo, hi):
        if not np.isfinite(dr[i]):
            continue
        for j in range(hi, i + (best[1] - best[0]), -1):
            seg = dr[i:j]
            if not np.all(np.isfinite(seg)):
                continue
            med = np.median(seg)
            if mlo < med < mhi and np.all(np.abs(seg - med) <= band):
                best = (i, j)
                break
    return best


def segment_stages(c: ResidualCurve, ynorm=None, thr: Thresholds = Thresholds()) -> StageSegmentation:
    """Split the curve into burn-in, approximation, plateau and floor."""
    r, dr = c.r, c.dr
    n = len(c)
    if ynorm is None:
        ynorm = r[0]
    b = 0
    while b < n and r[b] >= thr.burn_in_fraction * ynorm and (b == 0 or abs(dr[b]) <= thr.burn_in_slope):
        b += 1

    flat = np.zeros(n, dtype=bool)
    flat[b:] = dr[b:] <= thr.plateau_slope
    plateau_runs = [(i, j) for i, j in _runs(flat) if j - i >= thr.plateau_min]
    p0, p1 = plateau_runs[0] if plateau_runs else (n, n)

    approx = stable_window(dr, b, p0, thr.approx_band, thr.approx_median)
    if plateau_runs and approx[1] > approx[0] and approx[1] > p0:
        approx = (approx[0], p0)

    plateau = (p0, p1) if plateau_runs else (n, n)
    floor = (n, n)
    if plateau_runs and p1 < n:
        tail = dr[p1:]
        level = np.median(r[p0:p1])
        descent = np.flatnonzero(tail >= thr.floor_slope)
        stagnant = [
            (i, j)
            for i, j in _runs((tail <= thr.plateau_slope) & (r[p1:] < thr.burn_in_fraction * level))
            if j - i >= thr.plateau_min
        ]
        if descent.size or stagnant:
            floor = (p1, n)
    elif not plateau_runs:
        # no plateau: a trailing discrete descent still counts as floor
        start = approx[1] if approx[1] > approx[0] else b
        steep = np.flatnonzero(dr[start:] >= thr.floor_slope)
        if steep.size and approx[1] > approx[0] and np.median(dr[approx[0]:approx[1]]) < thr.floor_slope:
            floor = (start + steep[0], n)
    return StageSegmentation((0, b), approx, plateau, floor)


def estimate_noise(c: ResidualCurve, seg: StageSegmentation) -> NoiseEstimate:
    """Noise level at the flattest point between approximation and floor."""
    if seg.size(seg.plateau) == 0:
        return NoiseEstimate(None, None)
    lo = max(seg.approximation[1], seg.burn_in[1], 1)
    hi = seg.floor[0] if seg.size(seg.floor) else len(c)
    lo = max(lo, seg.plateau[0]) if seg.size(seg.approximation) == 0 else lo
    window = c.dr[lo:hi]
    if window.size == 0 or not np.any(np.isfinite(window)):
        return NoiseEstimate(None, None)
    m = np.nanmin(window)
    # ties go to the smallest alpha
    k = lo + int(np.flatnonzero(window == m)[-1])
    return NoiseEstimate(float(c.alphas[k]), float(c.r[k]), k)


def _polyfit(x, y, deg):
    coef = np.polyfit(x, y, deg)
    fit = np.polyval(coef, x)
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return coef, y - fit, r2


def _sign_changes(v):
    s = np.sign(v[v != 0])
    return int(np.sum(s[1:] != s[:-1]))


def classify_curvature(curvature, thr: Thresholds = Thresholds()):
    """Sign convention: negative quadratic coefficient (concave) means high smoothness."""
    if curvature < -thr.curvature:
        return HIGH
    if curvature > thr.curvature:
        return LOW
    return None


def estimate_smoothness(
    c: ResidualCurve,
    seg: StageSegmentation,
    delta_hat=None,
    thr: Thresholds = Thresholds(),
) -> SmoothnessEstimate:
    """Fit ``log r = log c + kappa log alpha`` over the approximation stage.

    With ``delta_hat`` the plateau level is removed first,
    ``r_a = sqrt(r^2 - delta_hat^2)``, which undoes the bias the noise puts on
    the slope near the end of the approximation stage; the stable window is
    then searched again on the corrected curve, restricted to residuals above
    ``noise_margin * delta_hat``.
    """
    alphas, r = c.alphas, c.r
    window = seg.approximation
    corrected = False
    stop = seg.plateau[0] if seg.size(seg.plateau) else seg.floor[0]
    dr = c.dr
    if delta_hat is not None and delta_hat > 0:
        usable = np.flatnonzero(r[:stop] >= thr.noise_margin * delta_hat)
        if usable.size:
            cut = int(usable[-1]) + 1
            ra = np.sqrt(r[:cut] ** 2 - delta_hat**2)
            dr_a = _slopes(alphas[:cut], ra)
            w = stable_window(dr_a, seg.burn_in[1], cut, thr.approx_band, thr.approx_median)
            if w[1] - w[0] >= thr.min_fit_points:
                window, corrected, stop, dr = w, True, cut, dr_a
                r = np.concatenate([ra, r[cut:]])

    i, j = window
    if j - i < thr.min_fit_points:
        return SmoothnessEstimate(np.nan, np.nan, np.nan, np.nan, NOISE, window, corrected)

    x = np.log(alphas[i:j])
    y = np.log(r[i:j])
    (kappa, _), res_lin, r2 = _polyfit(x, y, 1)
    kappa = float(kappa)
    mu = kappa - 0.5

    # The stable window is by construction the straightest stretch, so the
    # curvature is read over the whole approximation stage instead: from the
    # end of the initial rise up to the plateau.
    med = float(np.median(dr[i:j]))
    risen = np.flatnonzero(dr[seg.burn_in[1]:j] >= med - thr.approx_band)
    ci = seg.burn_in[1] + int(risen[0]) if risen.size else i
    cj = max(j, stop)
    (quad, _, _), _, _ = _polyfit(np.log(alphas[ci:cj]), np.log(r[ci:cj]), 2)
    (_, _, _), res_quad, _ = _polyfit(x, y, 2)
    quad = float(quad)

    rms_lin = float(np.sqrt(np.mean(res_lin**2)))
    rms_quad = float(np.sqrt(np.mean(res_quad**2)))
    changes = _sign_changes(res_lin)
    oscillating = (
        changes >= thr.oscillation_sign_changes
        and rms_quad >= 0.5 * rms_lin
        and float(np.max(np.abs(res_lin))) >= thr.oscillation_min_amplitude
    )
    diagnostics = {
        "sign_changes": changes,
        "rms_linear": rms_lin,
        "rms_quadratic": rms_quad,
        "alpha_range": [float(alphas[i]), float(alphas[j - 1])],
        "curvature_range": [float(alphas[ci]), float(alphas[cj - 1])],
    }

    curv_class = classify_curvature(quad, thr)
    if oscillating:
        label = NO_SC
    elif curv_class is not None:
        label = curv_class
    elif not 0.5 < kappa < 1.0:
        label = HIGH if kappa >= 1.0 else LOW
    elif r2 < thr.r2_min:
        label = NO_SC
    else:
        label = HOLDER
        mu_lo, mu_hi = thr.boundary_mu
        if mu >= mu_hi:
            # saturation: r ~ alpha whenever mu >= 1/2, so nothing finer is visible
            label = HIGH
        elif mu <= mu_lo and abs(quad) > 0.5 * thr.curvature:
            label = HIGH if quad < 0 else LOW
    return SmoothnessEstimate(kappa, mu, r2, quad, label, window, corrected, diagnostics)


def estimate(c: ResidualCurve, ynorm=None, thr: Thresholds = Thresholds(), correct_noise=True):
    """Full estimation: segmentation, noise level, then smoothness."""
    seg = segment_stages(c, ynorm, thr)
    noise = estimate_noise(c, seg)
    smooth = estimate_smoothness(c, seg, noise.delta_hat if correct_noise else None, thr)
    return seg, smooth, noise


def estimates_to_json(seg, smooth, noise) -> str:
    return json.dumps(
        {
            "segmentation": seg.as_dict(),
            "smoothness": smooth.to_json(),
            "noise": noise.to_json(),
        },
        indent=2,
    )


def _diag_truth(p):
    if p.operator.kind != "diagonal":
        raise AnalysisError("needs a diagonal operator")
    if p.x_true is None:
        raise AnalysisError("needs ground truth x_true")
    return p.operator.singular_values, p.x_true


def residual_decomposition(p, alpha):
    """Norms of the approximation and noise parts of the residual.

    Returns ``(approx_norm, noise_norm)`` with
    ``approx_norm = ||sum sigma alpha/(sigma^2+alpha) <x,v> u||`` and
    ``noise_norm = ||sum alpha/(sigma^2+alpha) <eps,u> u||``. A modelling
    error floor, if any, belongs to the noise part.
    """
    s, x = _diag_truth(p)
    if p.y_exact is None:
        raise AnalysisError("needs exact data")
    f = alpha / (s * s + alpha)
    approx = float(np.linalg.norm(s * f * x))
    noise = float(np.hypot(np.linalg.norm(f * (p.y_noisy - p.y_exact)), p.residual_floor))
    return approx, noise


def lemma_sum(p, q_exp, p_exp, lam):
    """``sum sigma^q lam^2 / (sigma^p + lam)^2 <x, v>^2`` over the stored spectrum."""
    if not lam > 0:
        raise AnalysisError("lambda must be positive")
    s, x = _diag_truth(p)
    terms = s**q_exp * lam**2 / (s**p_exp + lam) ** 2 * x**2
    return float(np.sum(np.sort(terms)))


def tail_sum_ratio(p, k, q_exp, p_exp, mu):
    """``(sum_{i<=k} sigma_i^(q-2p) <x,v_i>^2) / sigma_k^(q+4mu-2p)``, needs ``q+4mu-2p < 0``."""
    e = q_exp + 4 * mu - 2 * p_exp
    if not e < 0:
        raise AnalysisError(f"need q + 4 mu - 2 p < 0, got {e}")
    s, x = _diag_truth(p)
    if not 1 <= k <= s.size:
        raise AnalysisError(f"k must lie in [1, {s.size}]")
    head = s[:k] ** (q_exp - 2 * p_exp) * x[:k] ** 2
    return float(np.sum(np.sort(head)) / s[k - 1] ** e)
