from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar
import os

T = TypeVar("T")  # type of the items handed to workers
R = TypeVar("R")  # type of the results

THREADS_ENV: str = "STE_DEFLICK_THREADS"


def resolve_threads(requested: int = 0) -> int:
    """
    0 means auto: the STE_DEFLICK_THREADS variable, then the cpu count.
    """
    if requested < 0:
        raise ValueError("Invalid thread count:{}".format(requested))
    if requested > 0:
        return requested
    from_env: Optional[str] = os.environ.get(THREADS_ENV)
    if from_env:
        try:
            value: int = int(from_env)
        except ValueError:
            raise ValueError("Invalid {}:{}".format(THREADS_ENV, from_env))
        if value > 0:
            return value
    return os.cpu_count() or 1


class WorkerPool:
    def __init__(self, threads: int = 1) -> None:
        self.threads: int = resolve_threads(threads)
        self._executor: Optional[ThreadPoolExecutor] = None
        if self.threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.threads)

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        # results always come back in input order
        if self._executor is None or len(items) < 2:
            return [fn(item) for item in items]
        return list(self._executor.map(fn, items))

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> WorkerPool:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return "WorkerPool(threads={})".format(self.threads)


def serial_pool() -> WorkerPool:
    return WorkerPool(1)
