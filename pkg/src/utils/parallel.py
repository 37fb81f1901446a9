import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from src.utils.errors import ConfigError
from src.utils import console

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "RADPAIR_THREADS"


def worker_count() -> int:
    """
    读取 RADPAIR_THREADS 环境变量，确定工作线程数

    Returns:
        int: 线程数；未设置时为 min(8, CPU 数)
    """
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return max(1, min(8, os.cpu_count() or 1))
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(THREADS_ENV, f"expected a positive integer, got {raw!r}")
    if value < 1:
        raise ConfigError(THREADS_ENV, f"expected a positive integer, got {value}")
    return value


def map_ordered(fn: Callable[[T], R], items: Iterable[T], desc: str = "") -> List[R]:
    """Apply fn to every item on the worker pool; results come back in input order."""
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in console.progress(items, total=len(items), desc=desc)]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, item) for item in items]
        return [f.result() for f in console.progress(futures, total=len(futures), desc=desc)]
