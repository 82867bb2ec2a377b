import logging
import math
from collections import Counter
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from concurrent_sweep import parallel_map
from dist_core import distribution
from entropy import sequence_entropies
from schemas import (CountDistribution, EmpiricalStats, EnsembleHistogram, RuleParams,
                     SubstitutionRule)
from substitution_utils import SubstitutionError, get_default_seed, get_sequence_cap

logger = logging.getLogger(__name__)

# Runs simulated together in count mode; part of the stream key, so changing it
# changes the realizations
ENSEMBLE_BLOCK = 1024
# Counts must stay representable as int64
MAX_COUNT_LENGTH = 2 ** 62


# Philox streams keyed by (seed, run or block, step)
def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _cantor(k: int = 3, p: float = 1.0) -> SubstitutionRule:
    return SubstitutionRule(name="cantor", word0=[0, 0, 0], word1=[1, 0, 1], seed_symbol=1)


def _morse_thue(k: int = 2, p: float = 1.0) -> SubstitutionRule:
    return SubstitutionRule(name="morse_thue", word0=[0, 1], word1=[1, 0], seed_symbol=0)


def _fibonacci(k: int = 2, p: float = 1.0) -> SubstitutionRule:
    # The seed counts as the first generation
    return SubstitutionRule(name="fibonacci", word0=[1], word1=[1, 0], seed_symbol=0,
                            generation_offset=1)


def _mandelbrot(k: int = 2, p: float = 0.5) -> SubstitutionRule:
    params = RuleParams(k=k, p=p)
    return SubstitutionRule(name="mandelbrot", word0=[0.0] * params.k,
                            word1=[params.p] * params.k, seed_symbol=1)


def _bernoulli(k: int = 2, p: float = 0.5) -> SubstitutionRule:
    params = RuleParams(k=k, p=p)
    return SubstitutionRule(name="bernoulli", word0=[params.p] * params.k,
                            word1=[params.p] * params.k, seed_symbol=1)


# Preset name -> rule factory taking (k, p); deterministic presets ignore both
PRESET_RULES: Dict[str, Callable[..., SubstitutionRule]] = {
    "cantor": _cantor,
    "morse_thue": _morse_thue,
    "fibonacci": _fibonacci,
    "mandelbrot": _mandelbrot,
    "bernoulli": _bernoulli,
}


def preset(name: str, k: int = 2, p: float = 0.5) -> SubstitutionRule:
    """
    Build a named substitution rule.

    Args:
        name: One of PRESET_RULES
        k: Substitution length of the random presets
        p: Fill probability of the random presets

    Returns:
        The SubstitutionRule
    """
    factory = PRESET_RULES.get(name.lower().replace("-", "_"))
    if factory is None:
        raise SubstitutionError("UNKNOWN_PRESET", f"unknown preset {name!r}; choose from {sorted(PRESET_RULES)}",
                                {"name": name})
    return factory(k, p)


def iterate_sequence(rule: SubstitutionRule, seed_symbol: Optional[int] = None, i: int = 0,
                     rng_seed: Optional[int] = None, run_index: int = 0,
                     sequence_cap: Optional[int] = None) -> np.ndarray:
    """
    Apply a rule repeatedly to a single starting symbol.

    Every position of a replacement word becomes a 1 independently with its fill
    probability.  Rules with a generation offset count the seed as that many
    generations already.

    Args:
        rule: Substitution rule
        seed_symbol: Starting symbol, defaults to the rule's own
        i: Generation to reach
        rng_seed: Stream seed, defaults to the configured seed
        run_index: Realization index, part of the stream key
        sequence_cap: Maximum sequence length, defaults to the configured cap

    Returns:
        int8 array of symbols
    """
    if i < 0:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be non-negative, got {i}")
    seed_symbol = rule.seed_symbol if seed_symbol is None else seed_symbol
    if seed_symbol not in (0, 1):
        raise SubstitutionError("INVALID_PARAMS", f"seed symbol must be 0 or 1, got {seed_symbol}")
    rng_seed = get_default_seed() if rng_seed is None else rng_seed
    cap = get_sequence_cap() if sequence_cap is None else sequence_cap

    width = max(len(rule.word0), len(rule.word1))
    words = np.zeros((2, width))
    words[0, :len(rule.word0)] = rule.word0
    words[1, :len(rule.word1)] = rule.word1
    word_lengths = np.array([len(rule.word0), len(rule.word1)])

    seq = np.array([seed_symbol], dtype=np.int8)
    for step in range(max(i - rule.generation_offset, 0)):
        lengths = word_lengths[seq]
        total = int(lengths.sum())
        if total > cap:
            raise SubstitutionError(
                "RESOURCE_LIMIT",
                f"sequence of {total} symbols at step {step + 1} exceeds cap {cap}",
                {"length": total, "cap": cap},
            )
        symbols = np.repeat(seq, lengths)
        starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
        positions = np.arange(total) - starts
        probs = words[symbols, positions]
        draws = _rng(rng_seed, run_index, step).random(total)
        seq = (draws < probs).astype(np.int8)
    return seq


def kronecker_expand(generator: Sequence[int], v: Sequence[int]) -> np.ndarray:
    """(v_1 g, v_2 g, ..., v_m g) for a generator g; one Cantor-like step."""
    g, v = np.asarray(generator), np.asarray(v)
    if g.size == 0 or v.size == 0:
        raise SubstitutionError("INVALID_PARAMS", "Kronecker expansion needs non-empty vectors")
    return np.kron(v, g)


def _count_block(params: RuleParams, i: int, rng_seed: int, block: int, size: int) -> np.ndarray:
    ones = np.ones(size, dtype=np.int64)
    for step in range(i):
        rng = _rng(rng_seed, block, step)
        ones = rng.binomial(params.k * ones, params.p)
    return ones


def _sequence_count(params: RuleParams, i: int, rng_seed: int, run: int,
                    sequence_cap: Optional[int]) -> int:
    rule = _mandelbrot(params.k, params.p)
    return int(iterate_sequence(rule, 1, i, rng_seed, run, sequence_cap).sum())


def ensemble_counts(params: RuleParams, i: int, runs: int, rng_seed: Optional[int] = None,
                    mode: str = "count", max_workers: int = 1,
                    sequence_cap: Optional[int] = None) -> EnsembleHistogram:
    """
    Histogram of the number of ones over independent realizations.

    Count mode tracks only the number of ones: given m ones the next generation
    holds Binomial(k*m, p).  Sequence mode materializes every realization.

    Args:
        params: Rule parameters
        i: Number of iterations
        runs: Number of realizations
        rng_seed: Stream seed, defaults to the configured seed
        mode: "count" or "sequence"
        max_workers: Threads used for blocks or runs
        sequence_cap: Length cap for sequence mode

    Returns:
        EnsembleHistogram of the counts
    """
    if runs < 1:
        raise SubstitutionError("INVALID_PARAMS", f"runs must be at least 1, got {runs}")
    if i < 0:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be non-negative, got {i}")
    rng_seed = get_default_seed() if rng_seed is None else rng_seed

    if mode == "count":
        if params.k ** i > MAX_COUNT_LENGTH:
            raise SubstitutionError("RESOURCE_LIMIT", f"k^i = {params.k}^{i} does not fit in 64 bits",
                                    {"k": params.k, "iteration": i})
        blocks = [(b, min(ENSEMBLE_BLOCK, runs - b * ENSEMBLE_BLOCK))
                  for b in range(math.ceil(runs / ENSEMBLE_BLOCK))]
        chunks = parallel_map(lambda bs: _count_block(params, i, rng_seed, *bs), blocks,
                              max_workers=max_workers)
        counts = Counter(int(x) for x in np.concatenate(chunks))
    elif mode == "sequence":
        values = parallel_map(lambda run: _sequence_count(params, i, rng_seed, run, sequence_cap),
                              range(runs), max_workers=max_workers)
        counts = Counter(values)
    else:
        raise SubstitutionError("INVALID_PARAMS", f"unknown mode {mode!r}")

    logger.info(f"Simulated {runs} runs of k={params.k}, p={params.p}, i={i} in {mode} mode "
                f"({len(counts)} distinct counts)")
    return EnsembleHistogram(iteration=i, k=params.k, p=params.p, runs=runs,
                             counts=dict(counts), seed=rng_seed, mode=mode)


def _rule_count_block(rule: SubstitutionRule, steps: int, rng_seed: int, block: int,
                      size: int) -> np.ndarray:
    ones = np.full(size, rule.seed_symbol, dtype=np.int64)
    zeros = 1 - ones
    for step in range(steps):
        rng = _rng(rng_seed, block, step)
        total = len(rule.word1) * (ones + zeros)
        ones = sum(rng.binomial(ones, w1) + rng.binomial(zeros, w0)
                   for w0, w1 in zip(rule.word0, rule.word1))
        zeros = total - ones
    return ones


def rule_ensemble(rule: SubstitutionRule, i: int, runs: int, rng_seed: Optional[int] = None,
                  mode: str = "count", max_workers: int = 1,
                  sequence_cap: Optional[int] = None) -> EnsembleHistogram:
    """
    Histogram of the number of ones for an arbitrary constant-length rule.

    In count mode each position j of a word contributes Binomial(ones, word1[j])
    plus Binomial(zeros, word0[j]) ones to the next generation.  The histogram's
    p is the mean fill probability of the 1-word.
    """
    if not rule.is_constant_length:
        raise SubstitutionError("INVALID_PARAMS",
                                f"rule {rule.name!r} has words of different lengths; "
                                "the number of ones has no fixed support",
                                {"word0": len(rule.word0), "word1": len(rule.word1)})
    k = len(rule.word1)
    if k < 2 or rule.generation_offset:
        raise SubstitutionError("INVALID_PARAMS", f"rule {rule.name!r} cannot be simulated as an ensemble")
    if runs < 1:
        raise SubstitutionError("INVALID_PARAMS", f"runs must be at least 1, got {runs}")
    if i < 0:
        raise SubstitutionError("INVALID_PARAMS", f"iteration must be non-negative, got {i}")
    rng_seed = get_default_seed() if rng_seed is None else rng_seed

    if mode == "count":
        if k ** i > MAX_COUNT_LENGTH:
            raise SubstitutionError("RESOURCE_LIMIT", f"k^i = {k}^{i} does not fit in 64 bits",
                                    {"k": k, "iteration": i})
        blocks = [(b, min(ENSEMBLE_BLOCK, runs - b * ENSEMBLE_BLOCK))
                  for b in range(math.ceil(runs / ENSEMBLE_BLOCK))]
        chunks = parallel_map(lambda bs: _rule_count_block(rule, i, rng_seed, *bs), blocks,
                              max_workers=max_workers)
        counts = Counter(int(x) for x in np.concatenate(chunks))
    elif mode == "sequence":
        values = parallel_map(
            lambda run: int(iterate_sequence(rule, None, i, rng_seed, run, sequence_cap).sum()),
            range(runs), max_workers=max_workers)
        counts = Counter(values)
    else:
        raise SubstitutionError("INVALID_PARAMS", f"unknown mode {mode!r}")

    logger.info(f"Simulated {runs} runs of rule {rule.name!r}, i={i} in {mode} mode "
                f"({len(counts)} distinct counts)")
    return EnsembleHistogram(iteration=i, k=k, p=float(np.mean(rule.word1)), runs=runs,
                             counts=dict(counts), seed=rng_seed, mode=mode)


def merge_histograms(a: EnsembleHistogram, b: EnsembleHistogram) -> EnsembleHistogram:
    """Pool two ensembles of the same process; the seed of the first is kept."""
    if (a.iteration, a.k, a.p, a.mode) != (b.iteration, b.k, b.p, b.mode):
        raise SubstitutionError("INVALID_PARAMS", "histograms describe different processes")
    counts = Counter(a.counts) + Counter(b.counts)
    return EnsembleHistogram(iteration=a.iteration, k=a.k, p=a.p, runs=a.runs + b.runs,
                             counts=dict(counts), seed=a.seed, mode=a.mode)


def empirical_stats(hist: EnsembleHistogram) -> EmpiricalStats:
    """Sample mean, unbiased variance and mean entropy of an ensemble."""
    if hist.runs < 2:
        raise SubstitutionError("INVALID_PARAMS", f"statistics need at least two runs, got {hist.runs}")
    x = np.repeat(np.array(list(hist.counts), dtype=np.int64), list(hist.counts.values()))
    n = hist.k ** hist.iteration
    entropies = sequence_entropies(x, n) if n > 1 else np.zeros(len(x))
    return EmpiricalStats(
        mean=float(np.mean(x)),
        variance=float(np.var(x, ddof=1)),
        mean_entropy=float(np.mean(entropies)),
        runs=hist.runs,
    )


def total_variation(hist: EnsembleHistogram, dist: CountDistribution) -> float:
    """Half the L1 distance between the normalized histogram and an exact law."""
    if (hist.k, hist.iteration) != (dist.k, dist.iteration):
        raise SubstitutionError("INVALID_PARAMS", "histogram and distribution differ in k or iteration")
    empirical = np.zeros(dist.support_length)
    empirical[list(hist.counts)] = np.array(list(hist.counts.values())) / hist.runs
    return 0.5 * math.fsum(np.abs(empirical - dist.probs))


def exact_distribution_or_none(hist: EnsembleHistogram,
                               support_cap: Optional[int] = None) -> Optional[CountDistribution]:
    """Exact law matching a histogram, or None when it exceeds the support cap."""
    try:
        return distribution(hist.iteration, RuleParams(k=hist.k, p=hist.p), support_cap)
    except SubstitutionError as e:
        if e.error_code != "RESOURCE_LIMIT":
            raise
        logger.info(f"Exact comparison skipped: {e.message}")
        return None
