import os
import logging
from typing import Any, Dict, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv("RSUB_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

ENV_PREFIX = "RSUB_"

DEFAULT_SUPPORT_CAP = 2 ** 20
DEFAULT_SEQUENCE_CAP = 2 ** 24
DEFAULT_SEED = 20240521
DEFAULT_MAX_WORKERS = 1


def _env_int(name: str, default: int, minimum: int = 1) -> int:
    """Read a positive integer override from the environment.

    Args:
        name: Variable name without the prefix
        default: Value used when the variable is unset or malformed
        minimum: Smallest accepted value

    Returns:
        The configured integer
    """
    raw = os.getenv(ENV_PREFIX + name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring malformed {ENV_PREFIX}{name}={raw!r}, using {default}")
        return default
    if value < minimum:
        logger.warning(f"Ignoring {ENV_PREFIX}{name}={value} below {minimum}, using {default}")
        return default
    return value


def get_support_cap() -> int:
    """Maximum number of entries a count distribution may have."""
    return _env_int("SUPPORT_CAP", DEFAULT_SUPPORT_CAP, minimum=2)


def get_sequence_cap() -> int:
    """Maximum number of symbols a materialized sequence may have."""
    return _env_int("SEQUENCE_CAP", DEFAULT_SEQUENCE_CAP, minimum=1)


def get_default_seed() -> int:
    return _env_int("SEED", DEFAULT_SEED, minimum=0)


def get_max_workers() -> int:
    return _env_int("MAX_WORKERS", DEFAULT_MAX_WORKERS, minimum=1)


# Error classification
ERROR_CODES = {
    "INVALID_PARAMS": "Invalid parameters",
    "UNKNOWN_PRESET": "Unknown substitution preset",
    "NO_PARTNER": "No distinct partner value exists",
    "RESOURCE_LIMIT": "Configured resource cap exceeded",
    "NO_CONVERGENCE": "Numerical procedure did not converge",
    "NO_SIGN_CHANGE": "No sign change found on the scanned grid",
    "BRACKET_FAILURE": "Root is not bracketed by the search interval",
}

# Process exit status for each error code
EXIT_CODES = {
    "INVALID_PARAMS": 2,
    "UNKNOWN_PRESET": 2,
    "NO_PARTNER": 2,
    "RESOURCE_LIMIT": 3,
    "NO_CONVERGENCE": 4,
    "NO_SIGN_CHANGE": 4,
    "BRACKET_FAILURE": 4,
}


class SubstitutionError(Exception):
    """Custom exception for substitution analysis errors"""
    def __init__(self, error_code: str, message: Optional[str] = None,
                 context: Optional[Dict[str, Any]] = None):
        self.error_code = error_code
        self.message = message or ERROR_CODES.get(error_code, "Unknown error")
        self.context = context or {}
        super().__init__(self.message)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.error_code, 1)


def check_support(k: int, iteration: int, support_cap: Optional[int] = None) -> int:
    """Check that a distribution over 0..k^iteration fits under the support cap.

    Args:
        k: Substitution length
        iteration: Iteration index
        support_cap: Optional cap override, defaults to the configured cap

    Returns:
        The support length k^iteration + 1

    Raises:
        SubstitutionError: RESOURCE_LIMIT when the cap is exceeded
    """
    cap = support_cap if support_cap is not None else get_support_cap()
    support = k ** iteration + 1
    if support > cap:
        raise SubstitutionError(
            "RESOURCE_LIMIT",
            f"Support of {support} entries at iteration {iteration} (k={k}) exceeds cap {cap}",
            {"k": k, "iteration": iteration, "support": support, "cap": cap},
        )
    return support


def kahan_accumulate(total: np.ndarray, compensation: np.ndarray,
                     start: int, terms: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Add terms into total[start:start+len(terms)] with Kahan compensation.

    Both arrays are updated in place and returned.
    """
    seg = slice(start, start + len(terms))
    y = terms - compensation[seg]
    t = total[seg] + y
    compensation[seg] = (t - total[seg]) - y
    total[seg] = t
    return total, compensation
