import logging
import math
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import entr

from concurrent_sweep import sweep_grid
from dist_core import bernoulli_distribution, distribution
from extrema import variance_argmax
from moments import variance
from schemas import EntropyVector, HVarCurve, HVarPoint, RuleParams, SignChangeReport
from substitution_utils import SubstitutionError, check_support

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)

SIGN_CHANGE_RESOLUTION = 1e-3
SIGN_CHANGE_XTOL = 1e-9
ARGMAX_RESOLUTION = 1e-2
# Inputs this close to an extremum have no distinct partner
PARTNER_EXCLUSION = 1e-6
PARTNER_XTOL = 1e-15


def sequence_entropies(ones: np.ndarray, n: int) -> np.ndarray:
    """Entropy of length-n sequences for each count of ones in the array."""
    ones = np.asarray(ones, dtype=float)
    values = (entr(ones / n) + entr((n - ones) / n)) / LN2
    return np.minimum(values, 1.0)


def sequence_entropy(j: int, n: int) -> float:
    """Binary frequency entropy of a length-n sequence holding j ones.

    Args:
        j: Number of ones, 0 <= j <= n
        n: Sequence length, at least 1

    Returns:
        Entropy in bits, 0 for single-symbol sequences and 1 for balanced ones
    """
    if n < 1:
        raise SubstitutionError("INVALID_PARAMS", f"sequence length must be at least 1, got {n}")
    if not 0 <= j <= n:
        raise SubstitutionError("INVALID_PARAMS", f"number of ones {j} outside 0..{n}")
    if j == 0 or j == n:
        return 0.0
    return float(sequence_entropies(np.array([j]), n)[0])


@lru_cache(maxsize=32)
def _entropy_values(n: int) -> np.ndarray:
    values = sequence_entropies(np.arange(n + 1), n)
    values.setflags(write=False)
    return values


def entropy_vector(i: int, k: int, support_cap: Optional[int] = None) -> EntropyVector:
    """Entropy of a length-k^i sequence for every possible number of ones."""
    if i < 0:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be non-negative, got {i}")
    check_support(k, i, support_cap)
    return EntropyVector(iteration=i, k=k, values=_entropy_values(k ** i))


def mean_entropy(i: int, params: RuleParams, support_cap: Optional[int] = None) -> float:
    """H_i(p): the entropy vector weighted by the exact count distribution."""
    dist = distribution(i, params, support_cap)
    h = _entropy_values(params.k ** i)
    return min(max(math.fsum(h * dist.probs), 0.0), 1.0)


def bernoulli_mean_entropy(length: int, p: float) -> float:
    """Mean entropy of a Bernoulli sequence of the given length."""
    if length < 1:
        raise SubstitutionError("INVALID_PARAMS", f"length must be at least 1, got {length}")
    probs = bernoulli_distribution(length, p)
    return min(math.fsum(_entropy_values(length) * probs), 1.0)


def differential_entropy(i: int, params: RuleParams, support_cap: Optional[int] = None) -> float:
    """h_i(p) = H_{i+1}(p) - H_i(p)."""
    if i < 1:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be at least 1, got {i}")
    return mean_entropy(i + 1, params, support_cap) - mean_entropy(i, params, support_cap)


def differential_sign_change(i: int, k: int, resolution: float = SIGN_CHANGE_RESOLUTION,
                             max_workers: int = 1,
                             support_cap: Optional[int] = None) -> SignChangeReport:
    """Locate where h_i turns from negative to positive.

    Scans a grid of the given resolution and refines the largest crossing by
    bisection.

    Args:
        i: Iteration, at least 1
        k: Substitution length
        resolution: Grid step of the scan
        max_workers: Threads used for the scan
        support_cap: Optional override of the configured support cap

    Returns:
        SignChangeReport with the refined root and the number of crossings seen
    """
    if not 0.0 < resolution < 1.0:
        raise SubstitutionError("INVALID_PARAMS", f"resolution must lie in (0, 1), got {resolution}")

    def h(p: float) -> float:
        return differential_entropy(i, RuleParams(k=k, p=float(p)), support_cap)

    grid = np.linspace(0.0, 1.0, int(round(1.0 / resolution)) + 1)
    values = np.array(sweep_grid(h, grid, max_workers=max_workers))
    up = np.flatnonzero((values[:-1] < 0.0) & (values[1:] > 0.0))
    if len(up) == 0:
        raise SubstitutionError("NO_SIGN_CHANGE", f"h_{i} never turns positive for k={k}",
                                {"i": i, "k": k, "resolution": resolution})
    if len(up) > 1:
        logger.warning(f"h_{i} changes sign {len(up)} times for k={k}; reporting the largest")

    j = int(up[-1])
    root = optimize.bisect(h, grid[j], grid[j + 1], xtol=SIGN_CHANGE_XTOL)
    logger.debug(f"Sign change of h_{i} (k={k}) at p={root:.10f}")
    return SignChangeReport(root=float(root), crossings=len(up))


def entropy_per_digit(i: int, params: RuleParams, support_cap: Optional[int] = None) -> float:
    return mean_entropy(i, params, support_cap) / params.k ** i


@lru_cache(maxsize=128)
def entropy_argmax(i: int, k: int, resolution: float = ARGMAX_RESOLUTION) -> float:
    """Location of the maximum of H_i(p)."""
    if i < 1:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be at least 1, got {i}")
    grid = np.linspace(0.0, 1.0, int(round(1.0 / resolution)) + 1)
    values = np.array([mean_entropy(i, RuleParams(k=k, p=float(p))) for p in grid])
    j = int(np.argmax(values))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    result = optimize.minimize_scalar(
        lambda p: -mean_entropy(i, RuleParams(k=k, p=float(p))),
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
    )
    return float(result.x)


def hvar_curve(i: int, k: int, p_grid: Sequence[float], max_workers: int = 1,
               normalized: bool = False, support_cap: Optional[int] = None) -> HVarCurve:
    """Sample the parametric curve (VAR_i(p), H_i(p)) over a grid of p.

    Args:
        i: Iteration, at least 1
        k: Substitution length
        p_grid: Grid of probabilities in [0, 1]
        max_workers: Threads used for the grid
        normalized: Locate p_r on axes scaled by their maxima
        support_cap: Optional override of the configured support cap

    Returns:
        HVarCurve with its farthest point p_r
    """
    def point(p: float) -> HVarPoint:
        params = RuleParams(k=k, p=p)
        return HVarPoint(p=p, variance=variance(i, params),
                         mean_entropy=mean_entropy(i, params, support_cap))

    points = sweep_grid(point, p_grid, max_workers=max_workers)
    curve = HVarCurve(iteration=i, k=k, points=points)
    curve.p_r = farthest_point(curve, normalized=normalized, support_cap=support_cap)
    return curve


def farthest_point(curve: HVarCurve, normalized: bool = False,
                   support_cap: Optional[int] = None) -> float:
    """Parameter of the curve point farthest from the origin.

    The best grid point (the smaller p on ties) is refined by a golden-section
    search between its neighbours.  With normalized=True each axis is divided by
    its largest sampled value first.
    """
    ps = np.array([pt.p for pt in curve.points])
    var = np.array([pt.variance for pt in curve.points])
    ent = np.array([pt.mean_entropy for pt in curve.points])
    if len(ps) == 1:
        return float(ps[0])

    var_scale = var.max() if normalized and var.max() > 0.0 else 1.0
    ent_scale = ent.max() if normalized and ent.max() > 0.0 else 1.0
    distance = (var / var_scale) ** 2 + (ent / ent_scale) ** 2
    j = int(np.argmax(distance))
    if j == 0 or j == len(ps) - 1:
        return float(ps[j])

    def neg_distance(p: float) -> float:
        params = RuleParams(k=curve.k, p=float(np.clip(p, 0.0, 1.0)))
        v = variance(curve.iteration, params) / var_scale
        h = mean_entropy(curve.iteration, params, support_cap) / ent_scale
        return -(v * v + h * h)

    lo, mid, hi = ps[j - 1], ps[j], ps[j + 1]
    try:
        result = optimize.minimize_scalar(neg_distance, bracket=(lo, mid, hi),
                                          method="golden", tol=1e-10)
        p_r = float(result.x)
        if not lo <= p_r <= hi:
            raise ValueError(f"golden section left the bracket: {p_r}")
    except ValueError as e:
        logger.debug(f"Falling back to a bounded search: {e}")
        result = optimize.minimize_scalar(neg_distance, bounds=(lo, hi), method="bounded",
                                          options={"xatol": 1e-12})
        p_r = float(result.x)
    if neg_distance(p_r) > neg_distance(mid):
        return float(mid)
    return p_r


def _partner(func, p_ref: float, p_peak: float, label: str) -> float:
    if abs(p_ref - p_peak) < PARTNER_EXCLUSION:
        raise SubstitutionError("NO_PARTNER", f"p={p_ref} sits at the {label} maximum {p_peak}",
                                {"p_ref": p_ref, "p_peak": p_peak})
    target = func(p_ref)
    if target == 0.0:
        # Both endpoints share the null value
        return 1.0 if p_ref < p_peak else 0.0
    lo, hi = (p_peak, 1.0) if p_ref < p_peak else (0.0, p_peak)
    try:
        p_alt = optimize.bisect(lambda p: func(p) - target, lo, hi, xtol=PARTNER_XTOL)
    except ValueError as e:
        raise SubstitutionError("BRACKET_FAILURE", f"no {label} partner bracketed for p={p_ref}: {e}",
                                {"p_ref": p_ref}) from e
    mismatch = abs(func(p_alt) - target)
    if mismatch > 1e-9 * abs(target):
        logger.warning(f"{label} partner of {p_ref} matches only to {mismatch:.3e}")
    return float(p_alt)


def match_variance(i: int, k: int, p_ref: float) -> float:
    """The other p with the same VAR_i as p_ref, across the variance maximum."""
    if not 0.0 <= p_ref <= 1.0:
        raise SubstitutionError("INVALID_PARAMS", f"p must lie in [0, 1], got {p_ref}")
    return _partner(lambda p: variance(i, RuleParams(k=k, p=float(p))),
                    p_ref, variance_argmax(i, k), "variance")


def match_entropy(i: int, k: int, p_ref: float) -> float:
    """The other p with the same H_i as p_ref, across the entropy maximum."""
    if not 0.0 <= p_ref <= 1.0:
        raise SubstitutionError("INVALID_PARAMS", f"p must lie in [0, 1], got {p_ref}")
    return _partner(lambda p: mean_entropy(i, RuleParams(k=k, p=float(p))),
                    p_ref, entropy_argmax(i, k), "entropy")
