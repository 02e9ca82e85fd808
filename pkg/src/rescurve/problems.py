"""Test problems with known smoothness, and controlled noise injection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .operators import DenseOperator, DiagonalOperator

__all__ = [
    "ProblemError",
    "ProblemInstance",
    "SmoothnessSpec",
    "NoiseSpec",
    "mu_star",
    "make_model_problem",
    "make_spectral_problem",
    "add_noise",
    "phi",
    "save_problem",
    "load_problem",
]

DEFAULT_N = 4096


class ProblemError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Forward operator plus data, with optional ground truth.

    ``residual_floor`` is the norm of a noise component lying outside the
    range of the operator (modelling error). It is carried alongside
    ``y_noisy`` rather than inside it, and enters every residual norm in
    quadrature.
    """

    operator: DiagonalOperator | DenseOperator
    y_noisy: np.ndarray
    x_true: np.ndarray | None = None
    y_exact: np.ndarray | None = None
    delta_true: float | None = None
    residual_floor: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m, n = self.operator.dims
        for name, length in (("y_noisy", m), ("y_exact", m), ("x_true", n)):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.array(v, dtype=float)
            if v.shape != (length,):
                raise ProblemError(f"{name} must have length {length}, got {v.shape}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.residual_floor < 0:
            raise ProblemError("residual_floor must be nonnegative")

    @property
    def ynorm(self) -> float:
        """Norm of the full measured datum, including the off-range part."""
        return float(np.hypot(np.linalg.norm(self.y_noisy), self.residual_floor))

    @property
    def noise(self) -> np.ndarray | None:
        if self.y_exact is None:
            return None
        return self.y_noisy - self.y_exact


@dataclass(frozen=True)
class SmoothnessSpec:
    """Solution smoothness class.

    ``kind`` is one of ``"holder"`` (uses ``eta``; ``x_i = i^-eta``),
    ``"exponential"`` or ``"logarithmic"`` (use ``kappa``).
    """

    kind: str
    n: int = DEFAULT_N
    eta: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ProblemError("n must be at least 2")
        if self.kind == "holder":
            if self.eta is None or not self.eta > 0.5:
                raise ProblemError("holder smoothness needs eta > 1/2")
        elif self.kind in ("exponential", "logarithmic"):
            if self.kappa is None or not self.kappa > 0:
                raise ProblemError(f"{self.kind} smoothness needs kappa > 0")
        else:
            raise ProblemError(f"unknown smoothness kind {self.kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    relative_level: float
    seed: int = 0
    off_range_fraction: float = 0.0

    def __post_init__(self):
        if not self.relative_level >= 0:
            raise ProblemError("relative_level must be nonnegative")
        if not 0.0 <= self.off_range_fraction <= 1.0:
            raise ProblemError("off_range_fraction must lie in [0, 1]")


def mu_star(eta, beta):
    """Smoothness index ``(2 eta - 1) / (4 beta)`` of the power-law model problem."""
    if not eta > 0.5 or not beta > 0:
        raise ProblemError("need eta > 1/2 and beta > 0")
    return (2.0 * eta - 1.0) / (4.0 * beta)


def _power_sigma(beta, n):
    return np.arange(1, n + 1, dtype=float) ** (-float(beta))


def make_model_problem(eta, beta, n=DEFAULT_N):
    """Diagonal problem with ``sigma_i = i^-beta`` and ``x_i = i^-eta`` (noise free)."""
    if not eta > 0.5:
        raise ProblemError("eta must exceed 1/2 for a square-summable solution")
    if not beta > 0:
        raise ProblemError("beta must be positive")
    if n < 2:
        raise ProblemError("n must be at least 2")
    i = np.arange(1, n + 1, dtype=float)
    sigma = i ** (-float(beta))
    x = i ** (-float(eta))
    meta = {
        "problem": "model",
        "eta": float(eta),
        "beta": float(beta),
        "n": int(n),
        "mu_star": mu_star(eta, beta),
    }
    return ProblemInstance(
        operator=DiagonalOperator(sigma),
        x_true=x,
        y_exact=sigma * x,
        y_noisy=sigma * x,
        delta_true=0.0,
        meta=meta,
    )


def phi(kind, kappa):
    """Index function of a generalized smoothness class.

    exponential: ``exp(-t^(-1/kappa))``; logarithmic: ``(-log t)^(-kappa)``.
    """
    if kind == "exponential":
        return lambda t: np.exp(-np.power(t, -1.0 / kappa))
    if kind == "logarithmic":
        return lambda t: np.power(-np.log(t), -kappa)
    raise ProblemError(f"no index function for {kind!r}")


def make_spectral_problem(spec: SmoothnessSpec, beta):
    """Diagonal problem whose solution tails match a prescribed index function.

    Squared coefficients are telescoped, ``x_k^2 = phi(s_k^2)^2 - phi(s_{k+1}^2)^2``,
    so that ``sum_{i>=k} x_i^2 = phi(s_k^2)^2`` holds exactly; the last coefficient
    takes the remaining tail. For the logarithmic class ``phi(1)`` is infinite and
    the first coefficient copies the second.
    """
    if not beta > 0:
        raise ProblemError("beta must be positive")
    if spec.kind == "holder":
        p = make_model_problem(spec.eta, beta, spec.n)
        return p
    sigma = _power_sigma(beta, spec.n)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        tails = phi(spec.kind, spec.kappa)(sigma**2) ** 2
    tails = np.where(np.isnan(tails), 0.0, tails)
    head_inf = not np.isfinite(tails[0])
    if head_inf:
        tails = tails.copy()
        tails[0] = np.nan
    finite = tails[1:] if head_inf else tails
    if np.any(np.diff(finite) > 0):
        raise ProblemError("index function values are not monotone along the spectrum")
    coef2 = np.empty_like(sigma)
    coef2[:-1] = tails[:-1] - tails[1:]
    coef2[-1] = tails[-1]
    if head_inf:
        coef2[0] = coef2[1]
    x = np.sqrt(np.clip(coef2, 0.0, None))
    meta = {
        "problem": spec.kind,
        "kappa": float(spec.kappa),
        "beta": float(beta),
        "n": int(spec.n),
    }
    return ProblemInstance(
        operator=DiagonalOperator(sigma),
        x_true=x,
        y_exact=sigma * x,
        y_noisy=sigma * x,
        delta_true=0.0,
        meta=meta,
    )


def add_noise(p: ProblemInstance, spec: NoiseSpec) -> ProblemInstance:
    """Add rescaled Gaussian noise of total norm ``relative_level * ||y||``.

    A share ``off_range_fraction`` of the noise energy is placed outside the
    operator range and stored as ``residual_floor``; the rest is added to the
    data vector. The in-range and floor parts combine in quadrature to the
    requested level exactly.
    """
    if p.y_exact is None:
        raise ProblemError("add_noise needs exact data")
    delta = spec.relative_level * float(np.linalg.norm(p.y_exact))
    floor = np.sqrt(spec.off_range_fraction) * delta
    in_range = np.sqrt(1.0 - spec.off_range_fraction) * delta
    rng = np.random.default_rng(spec.seed)
    eps = rng.standard_normal(p.y_exact.size)
    if in_range > 0:
        eps *= in_range / np.linalg.norm(eps)
        y_noisy = p.y_exact + eps
        # adding small noise to large data rounds away low bits of eps;
        # rescale against the realized difference until its norm is exact
        exact = False
        for _ in range(8):
            realized = np.linalg.norm(y_noisy - p.y_exact)
            exact = abs(realized - in_range) <= 1e-14 * in_range
            if exact or realized == 0:
                break
            eps *= in_range / realized
            y_noisy = p.y_exact + eps
        if not exact:
            # the float grid near large |y_i| is too coarse; settle the norm on
            # the component with the finest resolution
            j = int(np.argmin(np.abs(p.y_exact)))
            d = y_noisy - p.y_exact
            rest = in_range**2 - (np.sum(d**2) - d[j] ** 2)
            if rest > 0:
                y_noisy[j] = p.y_exact[j] + np.copysign(np.sqrt(rest), d[j])
    else:
        y_noisy = p.y_exact.copy()
    meta = dict(p.meta)
    meta["noise"] = {
        "relative_level": float(spec.relative_level),
        "seed": int(spec.seed),
        "off_range_fraction": float(spec.off_range_fraction),
    }
    return replace(
        p,
        y_noisy=y_noisy,
        delta_true=float(delta),
        residual_floor=float(floor),
        meta=meta,
    )


def _vec(v):
    return None if v is None else [float(x) for x in v]


def problem_to_dict(p: ProblemInstance) -> dict:
    d = {}
    if p.operator.kind == "diagonal":
        d["sigma"] = _vec(p.operator.singular_values)
    else:
        d["matrix"] = [_vec(row) for row in p.operator.matrix]
    d.update(
        x_true=_vec(p.x_true),
        y_exact=_vec(p.y_exact),
        y_noisy=_vec(p.y_noisy),
        delta_true=p.delta_true,
        residual_floor=p.residual_floor,
        meta=p.meta,
    )
    return d


def problem_from_dict(d: dict) -> ProblemInstance:
    if "sigma" in d:
        op = DiagonalOperator(d["sigma"])
    elif "matrix" in d:
        op = DenseOperator(np.array(d["matrix"], dtype=float))
    else:
        raise ProblemError("problem document needs 'sigma' or 'matrix'")

    def arr(key):
        v = d.get(key)
        return None if v is None else np.array(v, dtype=float)

    return ProblemInstance(
        operator=op,
        y_noisy=arr("y_noisy"),
        x_true=arr("x_true"),
        y_exact=arr("y_exact"),
        delta_true=d.get("delta_true"),
        residual_floor=float(d.get("residual_floor", 0.0) or 0.0),
        meta=d.get("meta", {}),
    )


def save_problem(p: ProblemInstance, path) -> None:
    # json emits shortest round-trip reprs, so floats reload bit-exactly
    Path(path).write_text(json.dumps(problem_to_dict(p)))


def load_problem(path) -> ProblemInstance:
    return problem_from_dict(json.loads(Path(path).read_text()))
