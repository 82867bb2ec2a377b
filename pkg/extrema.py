import logging
import math
from typing import Iterable, Literal, Optional, Sequence, Tuple, Union

import lmfit
import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from concurrent_sweep import parallel_map
from moments import variance
from schemas import FitResult, RuleParams
from substitution_utils import SubstitutionError

logger = logging.getLogger(__name__)

# Above this iteration the maximum is located through the log-variance slope
LARGE_ITERATION = 60
ARGMAX_XTOL = 1e-13
DEFAULT_I_RANGE = (2, 40)
FIT_SEED = (0.5, 1.0)
FIT_MULTISTART = [(a, b) for a in (0.3, 0.6, 1.0) for b in (0.8, 1.1, 1.4)]
FIT_MAX_EVALUATIONS = 10 ** 5
FIT_LOWER_BOUND = 1e-9


# dVAR_i/dp = k^i p^(i-1) r_{k,i}(p); the unique root of r_{k,i} in (0, 1) is the variance maximum
def _poly_coefficients(i: int, k: int) -> np.ndarray:
    """Coefficients of r_{k,i} in powers of y = kp, lowest degree first."""
    coeffs = np.empty(i + 1)
    coeffs[0] = i
    j = np.arange(1, i)
    coeffs[1:i] = (k - 1) / k * (i + j)
    coeffs[i] = -2.0 * i / k
    return coeffs


def variance_derivative_poly(i: int, k: int, p: float) -> float:
    """r_{k,i}(p), evaluated by Horner's rule in y = kp (may overflow for very large i)."""
    if i < 2:
        raise SubstitutionError("INVALID_PARAMS", f"polynomial needs i >= 2, got {i}")
    coeffs = _poly_coefficients(i, k)
    return float(np.polynomial.polynomial.polyval(k * p, coeffs))


def scaled_variance_derivative_poly(i: int, k: int, p: float) -> float:
    """r_{k,i}(p) divided by the sum of the absolute values of its terms.

    Sign-preserving and bounded by 1.  For y = kp > 1 the terms are divided by
    y^i first and evaluated in 1/y, so nothing overflows.
    """
    if i < 2:
        raise SubstitutionError("INVALID_PARAMS", f"polynomial needs i >= 2, got {i}")
    coeffs = _poly_coefficients(i, k)
    y = k * p
    if y <= 1.0:
        value = np.polynomial.polynomial.polyval(y, coeffs)
        scale = np.polynomial.polynomial.polyval(y, np.abs(coeffs))
    else:
        z = 1.0 / y
        value = np.polynomial.polynomial.polyval(z, coeffs[::-1])
        scale = np.polynomial.polynomial.polyval(z, np.abs(coeffs[::-1]))
    return float(value / scale)


def derivative_partial_sum(i: int, k: int, p: float,
                           method: Literal["terms", "closed"] = "terms") -> float:
    """sum_{j=1}^{i-1} (i+j) k^(j-1) p^j, term by term or by its summed closed form."""
    if method == "terms" or k * p == 1.0:
        return math.fsum((i + j) * k ** (j - 1) * p ** j for j in range(1, i))
    if method != "closed":
        raise SubstitutionError("INVALID_PARAMS", f"unknown method {method!r}")
    y = k * p
    numerator = (1 + i) * y - i * y ** 2 - 2 * i * y ** i + (2 * i - 1) * y ** (i + 1)
    return numerator / (k * (y - 1.0) ** 2)


def log_variance_slope(i: int, k: int, p: float) -> float:
    """d log VAR_i / dp = -1/(1-p) + E[j]/p with weights y^j over j = i..2i-1."""
    if not 0.0 < p < 1.0:
        raise SubstitutionError("INVALID_PARAMS", f"slope needs p in (0, 1), got {p}")
    j = np.arange(i, 2 * i)
    log_weights = j * math.log(k * p)
    mean_power = math.exp(logsumexp(log_weights, b=j) - logsumexp(log_weights))
    return mean_power / p - 1.0 / (1.0 - p)


def variance_argmax(i: int, k: int) -> float:
    """p in (0, 1) where VAR_i(p, k) is largest."""
    if i < 1:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be at least 1, got {i}")
    if i == 1:
        # VAR_1 = kp(1-p)
        return 0.5
    try:
        if i > LARGE_ITERATION:
            p_m = optimize.bisect(lambda p: log_variance_slope(i, k, p),
                                  1e-12, 1.0 - 1e-12, xtol=ARGMAX_XTOL, maxiter=200)
        else:
            p_m = optimize.bisect(lambda p: scaled_variance_derivative_poly(i, k, p),
                                  0.0, 1.0, xtol=ARGMAX_XTOL, maxiter=200)
    except ValueError as e:
        raise SubstitutionError("BRACKET_FAILURE", f"variance maximum not bracketed for i={i}, k={k}: {e}",
                                {"i": i, "k": k}) from e

    peak = variance(i, RuleParams(k=k, p=p_m))
    for nearby in (p_m - 1e-4, p_m + 1e-4):
        if 0.0 < nearby < 1.0 and variance(i, RuleParams(k=k, p=nearby)) > peak:
            logger.warning(f"Variance at {nearby} exceeds the value at the located maximum {p_m} (i={i}, k={k})")
    return float(p_m)


def root_curve_model(i: Union[int, np.ndarray], alpha: float, beta: float) -> Union[float, np.ndarray]:
    """r_k(i) = 1 / (1 + alpha / (alpha + (i-1)^beta))."""
    shifted = np.power(np.asarray(i, dtype=float) - 1.0, beta)
    value = 1.0 / (1.0 + alpha / (alpha + shifted))
    return float(value) if np.ndim(value) == 0 else value


def fit_root_curve(k: int, i_range: Tuple[int, int] = DEFAULT_I_RANGE,
                   max_workers: int = 1,
                   max_evaluations: int = FIT_MAX_EVALUATIONS) -> FitResult:
    """Least-squares fit of the variance-maximum locations p_m(i) to root_curve_model.

    Args:
        k: Substitution length
        i_range: Inclusive iteration range, at least four iterations, each >= 2
        max_workers: Threads used for the per-iteration root finds
        max_evaluations: Objective evaluation budget shared by all starts

    Returns:
        FitResult with the best (alpha, beta) over a multi-start Nelder-Mead search
    """
    lo, hi = i_range
    if lo < 2 or hi - lo + 1 < 4:
        raise SubstitutionError("INVALID_PARAMS", f"fit needs at least four iterations >= 2, got {lo}..{hi}")

    iterations = list(range(lo, hi + 1))
    roots = parallel_map(lambda i: variance_argmax(i, k), iterations, max_workers=max_workers)
    i_arr = np.array(iterations, dtype=float)
    p_arr = np.array(roots)

    def residual(params: lmfit.Parameters) -> np.ndarray:
        return p_arr - root_curve_model(i_arr, params["alpha"].value, params["beta"].value)

    starts = [FIT_SEED] + FIT_MULTISTART
    budget = max_evaluations
    best: Optional[lmfit.minimizer.MinimizerResult] = None
    evaluations = 0
    for alpha0, beta0 in starts:
        if budget <= 0:
            break
        params = lmfit.Parameters()
        params.add("alpha", value=alpha0, min=FIT_LOWER_BOUND)
        params.add("beta", value=beta0, min=FIT_LOWER_BOUND)
        result = lmfit.minimize(residual, params, method="nelder", max_nfev=budget,
                                options={"xatol": 1e-10, "fatol": 1e-16, "maxfev": budget})
        budget -= result.nfev
        evaluations += result.nfev
        if not result.success:
            logger.debug(f"Start ({alpha0}, {beta0}) did not converge: {result.message}")
            continue
        if best is None or result.chisqr < best.chisqr:
            best = result

    if best is None or not math.isfinite(best.chisqr):
        raise SubstitutionError("NO_CONVERGENCE", f"root-curve fit did not converge for k={k}",
                                {"k": k, "evaluations": evaluations})

    alpha = float(best.params["alpha"].value)
    beta = float(best.params["beta"].value)
    rss = float(best.chisqr)
    logger.info(f"Fitted k={k} over i={lo}..{hi}: alpha={alpha:.4f}, beta={beta:.4f}, RSS={rss:.3e}")
    return FitResult(
        k=k, i_range=(lo, hi), alpha=alpha, beta=beta, rss=rss,
        roots=list(zip(iterations, (float(r) for r in roots))),
        evaluations=evaluations,
    )


def fit_root_curves(k_values: Iterable[int], i_range: Tuple[int, int] = DEFAULT_I_RANGE,
                    max_workers: int = 1) -> Sequence[FitResult]:
    """Fit each substitution length in turn."""
    return [fit_root_curve(k, i_range, max_workers=max_workers) for k in k_values]
