import logging
import math
from typing import Literal, Optional

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from schemas import CountDistribution, MomentSummary, RuleParams
from substitution_utils import SubstitutionError

logger = logging.getLogger(__name__)

# |kp - 1| below this uses the geometric series instead of the quotient
SINGULAR_BAND = 1e-8
# exp() overflows a double above this
LOG_OVERFLOW = 709.0

DISPERSION_GRID_STEP = 1e-4


def _check_iteration(i: int, minimum: int = 1) -> None:
    if i < minimum:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be at least {minimum}, got {i}")


def _geometric_sum(ratio: float, terms: int) -> float:
    """1 + r + ... + r^(terms-1), continuous through r = 1."""
    if abs(ratio - 1.0) < SINGULAR_BAND:
        return math.fsum(ratio ** j for j in range(terms))
    return (1.0 - ratio ** terms) / (1.0 - ratio)


def _overflows(i: int, ratio: float) -> bool:
    return ratio > 1.0 and i * math.log(ratio) > LOG_OVERFLOW


def mean(i: int, params: RuleParams) -> float:
    """Expected number of ones, (kp)^i."""
    _check_iteration(i)
    y = params.k * params.p
    if _overflows(i, y):
        logger.warning(f"Mean (kp)^i overflows for i={i}, k={params.k}, p={params.p}")
        return math.inf
    return y ** i


def second_moment(i: int, params: RuleParams,
                  method: Literal["closed_form", "recurrence"] = "closed_form") -> float:
    """E_i(X^2) from the closed form or from the one-step recurrence.

    The recurrence is E_i(X^2) = kp(1-p) E_{i-1}(X) + (kp)^2 E_{i-1}(X^2) starting
    from the seed, where both moments equal one.
    """
    _check_iteration(i)
    k, p = params.k, params.p
    y = k * p
    if method == "recurrence":
        m1, m2 = 1.0, 1.0
        for _ in range(i):
            m1, m2 = y * m1, y * (1.0 - p) * m1 + y * y * m2
        return m2
    if method != "closed_form":
        raise SubstitutionError("INVALID_PARAMS", f"unknown method {method!r}")
    if _overflows(2 * i, y):
        return math.inf
    return y ** i * (1.0 + (k - 1) * p * _geometric_sum(y, i))


def log_variance(i: int, params: RuleParams) -> float:
    """Natural log of VAR_i, finite for any i (-inf when the variance is zero)."""
    _check_iteration(i)
    k, p = params.k, params.p
    if p == 0.0 or p == 1.0:
        return -math.inf
    log_y = math.log(k * p)
    # VAR = (1-p) * sum_{j=i}^{2i-1} y^j
    return math.log1p(-p) + float(logsumexp(log_y * np.arange(i, 2 * i)))


def variance(i: int, params: RuleParams) -> float:
    """VAR_i(p, k) = (1-p) (kp)^i (1 - (kp)^i) / (1 - kp), extended continuously at kp = 1."""
    _check_iteration(i)
    k, p = params.k, params.p
    if p == 0.0 or p == 1.0:
        return 0.0
    y = k * p
    if _overflows(2 * i, y):
        log_var = log_variance(i, params)
        if log_var > LOG_OVERFLOW:
            logger.warning(f"Variance overflows for i={i}, k={k}, p={p}")
            return math.inf
        return math.exp(log_var)
    if abs(y - 1.0) < SINGULAR_BAND:
        return (1.0 - p) * y ** i * _geometric_sum(y, i)
    if y > 1.0:
        return (1.0 - p) * y ** i * (y ** i - 1.0) / (y - 1.0)
    return (1.0 - p) * y ** i * (1.0 - y ** i) / (1.0 - y)


def dispersion_index(i: int, params: RuleParams) -> float:
    """D_i = VAR_i / E_i(X) = (1-p) (1 - (kp)^i) / (1 - kp); equals 1 at p = 0."""
    _check_iteration(i)
    k, p = params.k, params.p
    if p == 1.0:
        return 0.0
    y = k * p
    if _overflows(i, y):
        return math.inf
    return (1.0 - p) * _geometric_sum(y, i)


def dispersion_argmax(i: int, k: int) -> float:
    """Location of the interior maximum of D_i(p, k)."""
    _check_iteration(i, 2)
    grid = np.linspace(0.0, 1.0, int(round(1.0 / DISPERSION_GRID_STEP)) + 1)
    values = np.array([dispersion_index(i, RuleParams(k=k, p=float(p))) for p in grid])
    j = int(np.argmax(values))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    result = optimize.minimize_scalar(
        lambda p: -dispersion_index(i, RuleParams(k=k, p=float(p))),
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
    )
    return float(result.x)


def dispersion_unity_crossing(i: int, k: int) -> float:
    """Largest p in (0, 1) where D_i crosses 1 from above.

    The crossing approaches 1 as i grows, so the scan runs over a fine grid that
    includes p = 1, where D_i is 0.
    """
    _check_iteration(i, 2)
    grid = np.linspace(0.0, 1.0, int(round(1.0 / DISPERSION_GRID_STEP)) + 1)
    excess = np.array([dispersion_index(i, RuleParams(k=k, p=float(p))) - 1.0 for p in grid])
    down = np.flatnonzero((excess[:-1] > 0.0) & (excess[1:] <= 0.0))
    if len(down) == 0:
        raise SubstitutionError("NO_SIGN_CHANGE", f"D_{i} never crosses 1 for k={k}",
                                {"i": i, "k": k})
    j = int(down[-1])
    if excess[j + 1] == 0.0:
        return float(grid[j + 1])
    root = optimize.bisect(
        lambda p: dispersion_index(i, RuleParams(k=k, p=float(p))) - 1.0,
        grid[j], grid[j + 1], xtol=1e-12,
    )
    return float(root)


def zeros_mean(i: int, params: RuleParams) -> float:
    """Expected number of zeros, k^i (1 - p^i)."""
    _check_iteration(i)
    return float(params.k) ** i * (1.0 - params.p ** i)


def ones_zeros_ratio(i: int, params: RuleParams) -> float:
    """p^i / (1 - p^i); infinite at p = 1 where no zeros remain."""
    _check_iteration(i)
    pi = params.p ** i
    if pi >= 1.0:
        return math.inf
    return pi / (1.0 - pi)


def ratio_unity_probability(i: int) -> float:
    """The p where ones and zeros are equally expected: p^i = 1/2."""
    _check_iteration(i)
    return 2.0 ** (-1.0 / i)


def moment_summary(i: int, params: RuleParams) -> MomentSummary:
    """Closed-form moments and indices at iteration i."""
    mu = mean(i, params)
    var = variance(i, params)
    m2 = second_moment(i, params)
    return MomentSummary(
        iteration=i, k=params.k, p=params.p,
        mean=mu, second_moment=m2, variance=var, std_dev=math.sqrt(var),
        dispersion=dispersion_index(i, params),
        zeros_mean=zeros_mean(i, params),
        ones_zeros_ratio=ones_zeros_ratio(i, params),
        overflow=any(math.isinf(v) for v in (mu, var, m2)),
    )


def moments_from_distribution(dist: CountDistribution) -> MomentSummary:
    """Moments computed directly from an exact distribution."""
    x = dist.support.astype(float)
    probs = dist.probs
    mu = math.fsum(x * probs)
    m2 = math.fsum(x * x * probs)
    var = max(m2 - mu * mu, 0.0)
    dispersion: Optional[float] = var / mu if mu > 0.0 else None
    if dispersion is None:
        logger.debug(f"Dispersion undefined for a distribution with zero mean (i={dist.iteration})")
    n = float(dist.k) ** dist.iteration
    return MomentSummary(
        iteration=dist.iteration, k=dist.k, p=dist.p,
        mean=mu, second_moment=m2, variance=var, std_dev=math.sqrt(var),
        dispersion=dispersion,
        zeros_mean=n - mu,
        ones_zeros_ratio=mu / (n - mu) if n > mu else math.inf,
    )


def bernoulli_moments(length: int, p: float) -> MomentSummary:
    """Moments of the number of ones in a Bernoulli sequence of the given length."""
    if length < 1:
        raise SubstitutionError("INVALID_PARAMS", f"length must be at least 1, got {length}")
    mu = length * p
    var = length * p * (1.0 - p)
    return MomentSummary(
        iteration=1, k=1, p=p,
        mean=mu, second_moment=length * p * (1.0 + (length - 1) * p),
        variance=var, std_dev=math.sqrt(var),
        dispersion=(1.0 - p) if p > 0.0 else None,
        zeros_mean=length * (1.0 - p),
        ones_zeros_ratio=p / (1.0 - p) if p < 1.0 else math.inf,
    )
