import logging
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, validator

logger = logging.getLogger(__name__)


class RuleParams(BaseModel):
    """Substitution length and fill probability of the random rule"""
    k: int = Field(..., ge=2, description="Substitution length")
    p: float = Field(..., ge=0.0, le=1.0, description="Probability of inserting a 1")

    class Config:
        frozen = True

    @property
    def q(self) -> float:
        return 1.0 - self.p


class CountDistribution(BaseModel):
    """Exact law of the number of ones after a number of iterations"""
    iteration: int = Field(..., ge=0, description="Number of substitutions applied to the seed (1)")
    k: int = Field(..., ge=2, description="Substitution length")
    p: float = Field(..., ge=0.0, le=1.0, description="Fill probability")
    probs: np.ndarray = Field(..., description="probs[x] = P(X = x) for x = 0..k^iteration")

    class Config:
        arbitrary_types_allowed = True

    @validator('probs', pre=True)
    def validate_probs(cls, v, values):
        probs = np.asarray(v, dtype=float)
        if probs.ndim != 1:
            raise ValueError("probs must be a vector")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probs must be finite and non-negative")
        k, iteration = values.get('k'), values.get('iteration')
        if k is not None and iteration is not None and len(probs) != k ** iteration + 1:
            raise ValueError(f"expected {k ** iteration + 1} entries, got {len(probs)}")
        total = float(np.sum(probs))
        if abs(total - 1.0) > 1e-9:
            logger.warning(f"Distribution mass drifted from one: {total!r}")
        return probs

    @property
    def support_length(self) -> int:
        return len(self.probs)

    @property
    def support(self) -> np.ndarray:
        return np.arange(len(self.probs))


class MomentSummary(BaseModel):
    """First two moments of the number of ones and derived indices"""
    iteration: int = Field(..., ge=0)
    k: int = Field(..., ge=1, description="Substitution length (1 for a plain Bernoulli sequence)")
    p: float = Field(..., ge=0.0, le=1.0)
    mean: float = Field(..., ge=0.0)
    second_moment: float = Field(..., ge=0.0)
    variance: float = Field(..., ge=0.0)
    std_dev: float = Field(..., ge=0.0)
    dispersion: Optional[float] = Field(default=None, description="Variance/mean, None when undefined")
    zeros_mean: Optional[float] = Field(default=None, ge=0.0, description="Expected number of zeros")
    ones_zeros_ratio: Optional[float] = Field(default=None, ge=0.0, description="Expected ones over expected zeros")
    overflow: bool = Field(default=False, description="True when a value exceeded the double range")

    @validator('variance', pre=True)
    def clamp_variance(cls, v):
        # Cancellation in E(X^2) - E(X)^2 can leave a tiny negative residue.
        if -1e-12 < v < 0:
            return 0.0
        return v


class EntropyVector(BaseModel):
    """Frequency entropy of a sequence of length k^i for every possible number of ones"""
    iteration: int = Field(..., ge=0)
    k: int = Field(..., ge=2)
    values: np.ndarray

    class Config:
        arbitrary_types_allowed = True

    @validator('values', pre=True)
    def validate_values(cls, v, values):
        arr = np.asarray(v, dtype=float)
        if np.any(arr < 0) or np.any(arr > 1 + 1e-15):
            raise ValueError("entropies must lie in [0, 1]")
        if arr[0] != 0.0 or arr[-1] != 0.0:
            raise ValueError("sequences of a single symbol have null entropy")
        return arr


class HVarPoint(BaseModel):
    p: float = Field(..., ge=0.0, le=1.0)
    variance: float = Field(..., ge=0.0)
    mean_entropy: float = Field(..., ge=0.0, le=1.0)


class HVarCurve(BaseModel):
    """Sampled parametric curve (variance, mean entropy) over p"""
    iteration: int = Field(..., ge=1)
    k: int = Field(..., ge=2)
    points: List[HVarPoint]
    p_r: Optional[float] = Field(default=None, description="Parameter of the point farthest from the origin")

    @validator('points')
    def validate_points(cls, v):
        if not v:
            raise ValueError("curve needs at least one point")
        ps = [pt.p for pt in v]
        if any(b < a for a, b in zip(ps, ps[1:])):
            raise ValueError("points must be ordered by p")
        return v


class FitResult(BaseModel):
    """Two-parameter fit of the variance-maximum locations across iterations"""
    k: int = Field(..., ge=2)
    i_range: Tuple[int, int]
    alpha: float = Field(..., gt=0.0)
    beta: float = Field(..., gt=0.0)
    rss: float = Field(..., ge=0.0, description="Residual sum of squares")
    roots: List[Tuple[int, float]]
    evaluations: int = Field(default=0, ge=0)

    @validator('roots')
    def validate_roots(cls, v):
        for i, p_m in v:
            if not 0.0 < p_m < 1.0:
                raise ValueError(f"root for i={i} outside (0, 1): {p_m}")
        return v


class SubstitutionRule(BaseModel):
    """Two-symbol substitution: each symbol becomes a word of per-position fill probabilities"""
    word0: List[float] = Field(..., min_items=1, description="Replacement word for symbol 0")
    word1: List[float] = Field(..., min_items=1, description="Replacement word for symbol 1")
    name: str = Field(default="custom")
    seed_symbol: Literal[0, 1] = Field(default=1, description="Default starting symbol")
    generation_offset: int = Field(default=0, ge=0, description="Generations the seed itself counts for")

    @validator('word0', 'word1', each_item=True)
    def validate_probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"fill probability outside [0, 1]: {v}")
        return v

    @property
    def is_constant_length(self) -> bool:
        return len(self.word0) == len(self.word1)

    @property
    def is_deterministic(self) -> bool:
        return all(w in (0.0, 1.0) for w in self.word0 + self.word1)


class EnsembleHistogram(BaseModel):
    """Counts of the number of ones over independent realizations"""
    iteration: int = Field(..., ge=0)
    k: int = Field(..., ge=2)
    p: float = Field(..., ge=0.0, le=1.0)
    runs: int = Field(..., ge=1)
    counts: Dict[int, int]
    seed: int = Field(..., ge=0)
    mode: Literal["count", "sequence"] = "count"

    @validator('counts')
    def validate_counts(cls, v, values):
        runs = values.get('runs')
        if runs is not None and sum(v.values()) != runs:
            raise ValueError(f"counts sum to {sum(v.values())}, expected {runs}")
        k, iteration = values.get('k'), values.get('iteration')
        if k is not None and iteration is not None:
            length = k ** iteration
            bad = [x for x in v if not 0 <= x <= length]
            if bad:
                raise ValueError(f"counts outside 0..{length}: {bad[:5]}")
        return dict(sorted(v.items()))


class EmpiricalStats(BaseModel):
    mean: float
    variance: float = Field(..., ge=0.0)
    mean_entropy: float = Field(..., ge=0.0, le=1.0)
    runs: int = Field(..., ge=2)


class SignChangeReport(BaseModel):
    """Location of a sign change and how many were seen on the scan grid"""
    root: float = Field(..., gt=0.0, lt=1.0)
    crossings: int = Field(..., ge=1)


class RunConfig(BaseModel):
    """Validated command-line configuration"""
    subcommand: Literal["dist", "moments", "entropy", "hvar", "extrema", "simulate"]
    k: int = Field(default=2, ge=2)
    k_list: Optional[List[int]] = Field(default=None, description="Substitution lengths for the root-curve fit")
    p: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    p_grid: Optional[List[float]] = None
    i: Optional[int] = Field(default=None, ge=0)
    i_range: Optional[Tuple[int, int]] = None
    runs: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    output_format: Literal["csv", "json"] = "csv"
    output: Optional[str] = None
    support_cap: Optional[int] = Field(default=None, ge=2)
    preset: Optional[str] = None
    mode: Literal["count", "sequence"] = "count"
    workers: int = Field(default=1, ge=1)
    normalized: bool = False

    @validator('k_list', each_item=True)
    def validate_k_list(cls, v):
        if v < 2:
            raise ValueError("substitution lengths must be at least 2")
        return v

    @validator('p_grid')
    def validate_grid(cls, v):
        if v is None:
            return v
        if not v:
            raise ValueError("p-grid is empty")
        if any(not 0.0 <= x <= 1.0 for x in v):
            raise ValueError("p-grid must lie within [0, 1]")
        return sorted(v)

    @validator('i_range')
    def validate_i_range(cls, v):
        if v is None:
            return v
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError(f"empty or invalid iteration range {lo}:{hi}")
        return v

    @property
    def k_values(self) -> List[int]:
        return list(self.k_list) if self.k_list else [self.k]

    @property
    def iterations(self) -> List[int]:
        if self.i_range is not None:
            return list(range(self.i_range[0], self.i_range[1] + 1))
        if self.i is not None:
            return [self.i]
        return []

    @property
    def grid(self) -> List[float]:
        if self.p_grid is not None:
            return self.p_grid
        if self.p is not None:
            return [self.p]
        return []


def validate_run_config(config_data: dict) -> RunConfig:
    """Validate command-line values against the RunConfig schema

    Args:
        config_data: Parsed flag values

    Returns:
        The validated configuration

    Raises:
        ValidationError: When any field is invalid
    """
    try:
        config = RunConfig(**config_data)
        logger.debug(f"Validated configuration for '{config.subcommand}'")
        return config
    except ValidationError as e:
        # Log each failing field so the user sees which flag is wrong
        for err in e.errors():
            field = ".".join(str(part) for part in err.get("loc", ()))
            logger.error(f"Invalid value for '{field}': {err.get('msg')}")
        raise
