"""Analytic next-state coverage probabilities under Gaussian system noise.

Two notions of coverage are implemented, each with a Monte-Carlo estimator of
the underlying event:

* tolerance coverage ``p_s_coverage``: a policy next state lies within
  ``epsilon`` (sup-norm) of at least one of N expert next states, with all
  next states ~ N(mu, sigma^2 I);
* ball coverage ``p_b_coverage``: a policy next state lies inside the sup-norm
  ball around the expert sample mean whose radius reaches the farthest expert
  sample, with linear dynamics s' = s + alpha * a and Gaussian policy noise.

The closed forms multiply per-comparison probabilities as if the N
comparisons were independent. They share the policy sample (and the sample
center), so for N > 1 the closed forms differ from the Monte-Carlo estimates
of the joint event; see ``README.md``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, erfc

SQRT2 = math.sqrt(2.0)
# P_B inner integral: integrate the standardized integrand over [0, _UPPER];
# the dropped tail is at most 2 * (1 - Phi(10)) < 1e-22.
_UPPER = 10.0
QUAD_TOL = 1e-10
# trials simulated per vectorized chunk in the Monte-Carlo estimators
_MC_CHUNK = 50_000


class QuadratureError(ArithmeticError):
    def __init__(self, achieved: float, tol: float):
        super().__init__(f"adaptive quadrature did not converge: error estimate {achieved:.3e} > {tol:.3e}")
        self.achieved = achieved
        self.tol = tol


@dataclass(frozen=True)
class CoverageParamsS:
    sigma: float
    epsilon: float
    n: int
    d: int = 1

    def __post_init__(self):
        if not (self.sigma > 0 and self.epsilon >= 0):
            raise ValueError("sigma must be positive and epsilon nonnegative")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")


@dataclass(frozen=True)
class CoverageParamsB:
    sigma_s: float
    sigma_p: float
    alpha: float = 1.0
    n: int = 10
    d: int = 1

    def __post_init__(self):
        if not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")
        if not self.sigma_p >= 0:
            raise ValueError("sigma_p must be nonnegative")
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")

    @property
    def sigma_expert(self) -> float:
        """Std of an expert sample's offset from the sample center."""
        return math.sqrt(1.0 + 1.0 / self.n) * self.sigma_s

    @property
    def sigma_policy(self) -> float:
        """Std of the policy sample's offset from the sample center."""
        return math.sqrt(self.sigma_expert ** 2 + (self.alpha * self.sigma_p) ** 2)


# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1] (nonnegative half).
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
# Gauss weights for the nodes _XGK[1], _XGK[3], _XGK[5], _XGK[7]
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GWEIGHTS = np.zeros(15)
_GWEIGHTS[[1, 3, 5]] = _WG[:3]
_GWEIGHTS[[13, 11, 9]] = _WG[:3]
_GWEIGHTS[7] = _WG[3]


def _gk15(f: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> tuple[float, float]:
    half = 0.5 * (b - a)
    vals = f(0.5 * (a + b) + half * _NODES)
    kronrod = half * float(np.dot(_KWEIGHTS, vals))
    gauss = half * float(np.dot(_GWEIGHTS, vals))
    return kronrod, abs(kronrod - gauss)


def adaptive_gk(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                tol: float = QUAD_TOL, max_intervals: int = 2000) -> tuple[float, float]:
    """Globally adaptive Gauss-Kronrod 7/15 quadrature of vectorized ``f`` on [a, b].

    Repeatedly bisects the interval with the largest error estimate until the
    summed estimate is below ``tol``. Returns (integral, error estimate).
    """
    intervals = [(a, b, *_gk15(f, a, b))]
    while True:
        total_err = sum(iv[3] for iv in intervals)
        if total_err <= tol:
            break
        if len(intervals) >= max_intervals:
            raise QuadratureError(total_err, tol)
        worst = max(range(len(intervals)), key=lambda i: intervals[i][3])
        lo, hi, _, _ = intervals.pop(worst)
        mid = 0.5 * (lo + hi)
        intervals.append((lo, mid, *_gk15(f, lo, mid)))
        intervals.append((mid, hi, *_gk15(f, mid, hi)))
    intervals.sort(key=lambda iv: iv[0])
    return math.fsum(iv[2] for iv in intervals), total_err


def p_s_coverage(params: CoverageParamsS) -> float:
    """1 - (1 - erf(eps / (2 sigma))^d)^n, evaluated without cancellation."""
    x = params.epsilon / (2.0 * params.sigma)
    # erf(x)^d = exp(d * log1p(-erfc(x))) keeps precision when erf(x) ~ 1
    log_hit = params.d * math.log1p(-float(erfc(x))) if x > 0 else -math.inf
    miss_one = -math.expm1(log_hit)
    if miss_one == 0.0:
        return 1.0
    return float(-math.expm1(params.n * math.log(miss_one)))


def inner_integral(params: CoverageParamsB, tol: float = QUAD_TOL) -> float:
    """Probability that one policy offset exceeds one expert offset in magnitude.

    Evaluates (2/s_pi) * int_0^inf f(x/s_pi) erf(x / (sqrt(2) s_E)) dx after the
    substitution u = x / s_pi, with f the standard normal density.
    """
    ratio = params.sigma_policy / (SQRT2 * params.sigma_expert)

    def integrand(u):
        return 2.0 * np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi) * erf(ratio * u)

    value, _ = adaptive_gk(integrand, 0.0, _UPPER, tol=tol)
    return value


def p_b_coverage(params: CoverageParamsB, tol: float = QUAD_TOL) -> float:
    """(1 - q^(n d))^d with q the inner integral; q^(n d) formed in log space."""
    q = min(inner_integral(params, tol), 1.0)
    if q <= 0.0:
        return 1.0
    all_exceed = math.exp(params.n * params.d * math.log(q))
    if all_exceed >= 1.0:
        return 0.0
    return math.exp(params.d * math.log1p(-all_exceed))


def _binomial_estimate(hits: int, trials: int) -> tuple[float, float]:
    mean = hits / trials
    return mean, math.sqrt(mean * (1.0 - mean) / trials)


def mc_coverage_s(params: CoverageParamsS, trials: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate (mean, standard error) of tolerance coverage.

    Each trial draws N expert next states and one policy next state from
    N(0, sigma^2 I) and checks min_i ||s' - s'_i||_inf <= epsilon. Uses
    numpy's PCG64 seeded with ``seed``; chunks are drawn sequentially.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, trials, _MC_CHUNK):
        m = min(_MC_CHUNK, trials - start)
        experts = rng.normal(0.0, params.sigma, size=(m, params.n, params.d))
        policy = rng.normal(0.0, params.sigma, size=(m, 1, params.d))
        nearest = np.abs(policy - experts).max(axis=2).min(axis=1)
        hits += int(np.count_nonzero(nearest <= params.epsilon))
    return _binomial_estimate(hits, trials)


def mc_coverage_b(params: CoverageParamsB, trials: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate (mean, standard error) of ball coverage.

    Expert next states ~ N(0, sigma_s^2 I), policy next state
    ~ N(0, (sigma_s^2 + alpha^2 sigma_p^2) I); a trial succeeds when the policy
    state is no farther (sup-norm) from the expert sample mean than the
    farthest expert sample.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    policy_std = math.sqrt(params.sigma_s ** 2 + (params.alpha * params.sigma_p) ** 2)
    hits = 0
    for start in range(0, trials, _MC_CHUNK):
        m = min(_MC_CHUNK, trials - start)
        experts = rng.normal(0.0, params.sigma_s, size=(m, params.n, params.d))
        policy = rng.normal(0.0, policy_std, size=(m, params.d))
        center = experts.mean(axis=1)
        radius = np.abs(experts - center[:, None, :]).max(axis=(1, 2))
        hits += int(np.count_nonzero(np.abs(policy - center).max(axis=1) <= radius))
    return _binomial_estimate(hits, trials)


@dataclass(frozen=True)
class CurveSpec:
    """Grids for the two coverage panels.

    Panel ``ps``: tolerance coverage versus sigma, one series per sample size.
    Panel ``pb``: ball coverage versus sigma_s at fixed ``pb_n``, one series per
    policy-noise level ``pb_sigma_p * k`` for k in ``pb_multipliers``.
    """

    sigmas: Sequence[float] = tuple(np.round(np.linspace(0.005, 0.2, 40), 6))
    ps_ns: Sequence[int] = (1, 10, 100, 1000)
    ps_epsilon: float = 0.05
    pb_n: int = 10
    pb_sigma_p: float = 0.05
    pb_multipliers: Sequence[float] = (1.0, 2.0, 3.0)
    alpha: float = 1.0
    d: int = 1
    panels: Sequence[str] = ("ps", "pb")

    def __post_init__(self):
        if not self.sigmas or any(not s > 0 for s in self.sigmas):
            raise ValueError("sigma grid must be nonempty and positive")
        for p in self.panels:
            if p not in ("ps", "pb"):
                raise ValueError(f"unknown panel {p!r}")


def emit_coverage_curves(spec: CurveSpec) -> list[tuple[str, float, str, float]]:
    """Rows (panel, x_sigma, series, value); each value equals the scalar operation."""
    rows = []
    if "ps" in spec.panels:
        for n in spec.ps_ns:
            for s in spec.sigmas:
                v = p_s_coverage(CoverageParamsS(float(s), spec.ps_epsilon, int(n), spec.d))
                rows.append(("ps", float(s), f"N={n}", v))
    if "pb" in spec.panels:
        for k in spec.pb_multipliers:
            sp = spec.pb_sigma_p * k
            for s in spec.sigmas:
                v = p_b_coverage(CoverageParamsB(float(s), sp, spec.alpha, spec.pb_n, spec.d))
                rows.append(("pb", float(s), f"sigma_p={sp:.17g}", v))
    return rows


def curves_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["panel", "x_sigma", "series", "value"])
    for panel, x, series, value in rows:
        writer.writerow([panel, f"{x:.17g}", series, f"{value:.17g}"])
    return buf.getvalue()
