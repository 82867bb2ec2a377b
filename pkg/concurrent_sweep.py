import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


def parallel_map(func: Callable[[Any], T], items: Sequence[Any], max_workers: int = 1) -> List[T]:
    """
    Evaluate func over items, optionally on a thread pool.

    Results come back in the order of items whatever the completion order, so
    output built from them does not depend on the schedule.

    Args:
        func: Function of a single item
        items: Items to evaluate (grid points, iterations, run indices)
        max_workers: Maximum number of concurrent workers; 1 runs inline

    Returns:
        List of results aligned with items
    """
    items = list(items)
    if max_workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    start_time = time.time()
    results: List[Any] = [None] * len(items)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_index = {executor.submit(func, item): idx for idx, item in enumerate(items)}
        try:
            for future in as_completed(future_to_index):
                idx = future_to_index[future]
                results[idx] = future.result()
        except Exception as e:
            logger.error(f"Worker failed on item {items[future_to_index[future]]!r}: {e}")
            for pending in future_to_index:
                pending.cancel()
            raise

    elapsed = time.time() - start_time
    logger.debug(f"Evaluated {len(items)} items on {max_workers} workers in {elapsed:.2f}s")
    return results


def sweep_grid(func: Callable[[float], T], p_grid: Sequence[float], max_workers: int = 1) -> List[T]:
    """Evaluate a function of p over a sorted grid."""
    grid = sorted(float(p) for p in p_grid)
    logger.info(f"Sweeping {len(grid)} grid points on {max_workers} worker(s)")
    return parallel_map(func, grid, max_workers=max_workers)
