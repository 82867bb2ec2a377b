import logging
import math
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import optimize, stats
from scipy.special import betaln

from schemas import CountDistribution, RuleParams
from substitution_utils import SubstitutionError, check_support, kahan_accumulate

logger = logging.getLogger(__name__)

# Largest transition block (rows x columns) evaluated as a dense array; larger
# steps accumulate windowed columns instead.
DENSE_ENTRY_LIMIT = 2 ** 22
# Cached distributions: up to 256 of at most this many entries, plus a few larger ones
SMALL_CACHE_ENTRIES = 2 ** 14
LARGE_CACHE_SIZE = 4

# Half width of the binomial window, in standard deviations plus a constant.
# Mass outside it is below 1e-130 of the column weight.
WINDOW_SIGMAS = 40.0
WINDOW_PAD = 200.0

NULL_LIMIT_TOL = 1e-14
NULL_LIMIT_MAX_STEPS = 10 ** 6


def binomial_pmf(n: int, p: float) -> np.ndarray:
    """Binomial(n, p) probabilities for 0..n ones.

    Args:
        n: Number of independent positions
        p: Probability of a 1 at each position

    Returns:
        Vector of length n+1
    """
    if n < 0:
        raise SubstitutionError("INVALID_PARAMS", f"n must be non-negative, got {n}")
    if not 0.0 <= p <= 1.0:
        raise SubstitutionError("INVALID_PARAMS", f"p must lie in [0, 1], got {p}")
    probs = np.zeros(n + 1)
    if n == 0 or p == 0.0:
        probs[0] = 1.0
        return probs
    if p == 1.0:
        probs[n] = 1.0
        return probs
    return stats.binom.pmf(np.arange(n + 1), n, p)


def bernoulli_distribution(length: int, p: float) -> np.ndarray:
    """Count law of a Bernoulli sequence of the given length (both symbols refilled at p)."""
    return binomial_pmf(length, p)


@lru_cache(maxsize=64)
def _log_binomial_table(k: int, columns: int, rows: int) -> np.ndarray:
    """log C(k*m, x) for x < rows, m < columns; -inf where x > k*m."""
    n = k * np.arange(columns)[None, :]
    x = np.arange(rows)[:, None]
    valid = x <= n
    with np.errstate(invalid='ignore', divide='ignore'):
        table = -betaln(np.where(valid, n - x + 1, 1), x + 1) - np.log(n + 1)
    table = np.where(valid, table, -np.inf)
    table.setflags(write=False)
    return table


def _transition_block(k: int, columns: int, p: float) -> np.ndarray:
    """Dense one-step transition matrix M[x, m] = C(km, x) p^x q^(km-x)."""
    rows = k * (columns - 1) + 1
    log_c = _log_binomial_table(k, columns, rows)
    log_p, log_q = math.log(p), math.log1p(-p)
    x = np.arange(rows)[:, None]
    n = k * np.arange(columns)[None, :]
    # x log p + (n - x) log q; entries with x > n carry -inf from the table
    return np.exp(log_c + x * (log_p - log_q) + n * log_q)


def _binomial_window(n: int, p: float) -> Tuple[int, int]:
    mu = n * p
    half = WINDOW_SIGMAS * math.sqrt(n * p * (1.0 - p)) + WINDOW_PAD
    return max(0, int(math.floor(mu - half))), min(n, int(math.ceil(mu + half)))


def _step_probs(prev: np.ndarray, k: int, p: float) -> np.ndarray:
    """One substitution step: m ones become Binomial(k*m, p) ones."""
    columns = len(prev)
    rows = k * (columns - 1) + 1
    new = np.zeros(rows)

    # Degenerate rules move the mass without spreading it
    if p == 0.0:
        new[0] = math.fsum(prev)
        return new
    if p == 1.0:
        new[::k] = prev
        return new

    if rows * columns <= DENSE_ENTRY_LIMIT:
        block = _transition_block(k, columns, p)
        # Row sums over a contiguous axis use numpy's pairwise summation
        return np.sum(block * prev[None, :], axis=1)

    compensation = np.zeros(rows)
    for m in np.flatnonzero(prev):
        n = k * int(m)
        if n == 0:
            kahan_accumulate(new, compensation, 0, np.array([prev[m]]))
            continue
        lo, hi = _binomial_window(n, p)
        terms = prev[m] * stats.binom.pmf(np.arange(lo, hi + 1), n, p)
        kahan_accumulate(new, compensation, lo, terms)
    return new


def step_distribution(prev: CountDistribution, params: RuleParams,
                      support_cap: Optional[int] = None) -> CountDistribution:
    """Advance a count distribution by one substitution.

    Args:
        prev: Distribution at iteration i
        params: Rule parameters; params.k must match prev.k
        support_cap: Optional override of the configured support cap

    Returns:
        Distribution at iteration i+1
    """
    if prev.k != params.k:
        raise SubstitutionError(
            "INVALID_PARAMS",
            f"distribution has k={prev.k} but rule has k={params.k}",
        )
    check_support(params.k, prev.iteration + 1, support_cap)
    probs = _step_probs(prev.probs, params.k, params.p)
    return CountDistribution(iteration=prev.iteration + 1, k=params.k, p=params.p, probs=probs)


def _compute_probs(i: int, k: int, p: float) -> np.ndarray:
    if i == 0:
        probs = np.array([0.0, 1.0])
    else:
        probs = _step_probs(_distribution_probs(i - 1, k, p), k, p)
        logger.debug(f"Computed distribution i={i}, k={k}, p={p} ({len(probs)} entries)")
    probs.setflags(write=False)
    return probs


_small_probs = lru_cache(maxsize=256)(_compute_probs)
_large_probs = lru_cache(maxsize=LARGE_CACHE_SIZE)(_compute_probs)


def _distribution_probs(i: int, k: int, p: float) -> np.ndarray:
    # Large arrays live in the short cache
    if k ** i + 1 <= SMALL_CACHE_ENTRIES:
        return _small_probs(i, k, p)
    return _large_probs(i, k, p)


def distribution(i: int, params: RuleParams, support_cap: Optional[int] = None) -> CountDistribution:
    """Exact distribution of the number of ones after i substitutions of (1).

    Args:
        i: Number of iterations (0 gives the seed itself)
        params: Rule parameters
        support_cap: Optional override of the configured support cap

    Returns:
        CountDistribution over 0..k^i
    """
    if i < 0:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be non-negative, got {i}")
    check_support(params.k, i, support_cap)
    probs = _distribution_probs(i, params.k, float(params.p))
    return CountDistribution(iteration=i, k=params.k, p=params.p, probs=probs)


def substitution_matrix(i: int, params: RuleParams, max_entries: int = 2 ** 20) -> np.ndarray:
    """Dense transition matrix from iteration i-1 to iteration i.

    Shape (k^i + 1, k^(i-1) + 1); column m is the Binomial(k*m, p) law.
    """
    if i < 1:
        raise SubstitutionError("INVALID_PARAMS", f"matrix needs i >= 1, got {i}")
    columns = params.k ** (i - 1) + 1
    rows = params.k ** i + 1
    if rows * columns > max_entries:
        raise SubstitutionError(
            "RESOURCE_LIMIT",
            f"matrix of {rows}x{columns} entries exceeds {max_entries}",
        )
    matrix = np.zeros((rows, columns))
    for m in range(columns):
        matrix[: params.k * m + 1, m] = binomial_pmf(params.k * m, params.p)
    return matrix


def null_sequence_prob(i: int, params: RuleParams) -> float:
    """Probability that the sequence is all zeros after i iterations.

    P_1(0) = q^k and P_{i+1}(0) = (P_i(0) p + q)^k.
    """
    if i < 0:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be non-negative, got {i}")
    k, p, q = params.k, params.p, params.q
    prob = 0.0
    for _ in range(i):
        prob = (prob * p + q) ** k
    return prob


def critical_probability(k: int) -> float:
    """Threshold 1/k below which extinction is certain."""
    if k < 2:
        raise SubstitutionError("INVALID_PARAMS", f"k must be at least 2, got {k}")
    return 1.0 / k


def null_sequence_limit(params: RuleParams) -> float:
    """Smallest fixed point in [0, 1] of phi = (phi p + q)^k.

    Iterates the map from 0, which increases monotonically towards the lowest
    fixed point, then polishes the estimate with a bracketed root of
    p (1 + s + ... + s^(k-1)) = 1 in s = phi p + q.
    """
    k, p, q = params.k, params.p, params.q
    if p <= critical_probability(k):
        return 1.0
    if p == 1.0:
        return 0.0

    phi = 0.0
    converged = False
    for step in range(NULL_LIMIT_MAX_STEPS):
        nxt = (phi * p + q) ** k
        if abs(nxt - phi) < NULL_LIMIT_TOL:
            phi = nxt
            converged = True
            break
        phi = nxt
    if not converged:
        logger.warning(f"Fixed-point iteration for k={k}, p={p} stopped after {NULL_LIMIT_MAX_STEPS} steps")

    powers = np.arange(k)

    def excess(s: float) -> float:
        return p * float(np.sum(s ** powers)) - 1.0

    try:
        s = optimize.brentq(excess, 0.0, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    except ValueError as e:
        raise SubstitutionError("NO_CONVERGENCE", f"null-sequence limit root failed: {e}",
                                {"k": k, "p": p}) from e
    polished = s ** k
    if converged and abs(polished - phi) > 1e-9:
        logger.warning(f"Fixed-point estimate {phi!r} and polished root {polished!r} disagree")
    return polished
