from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from src.config.index import appConfig
from src.config.logging import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(
    fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None
) -> List[R]:
    """Apply fn to every item and return the results in input order.

    Work items must derive all of their randomness from their own index, so
    the output does not depend on the worker count.
    """
    workers = workers or appConfig["workers"]
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug("ordered_map_started", workers=workers, items=len(items))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        # Executor.map yields in submission order regardless of completion order
        return list(executor.map(fn, items))
