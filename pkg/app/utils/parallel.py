"""Ordered parallel map."""

from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from typing import Literal, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(
    fn: Callable[[T], R],
    items: Iterable[T],
    workers: int = 1,
    kind: Literal["thread", "process"] = "thread",
) -> list[R]:
    """Apply ``fn`` to every item and return results in submission order.

    ``workers <= 1`` runs serially in the calling thread. Process pools need a
    picklable module-level ``fn``.
    """
    jobs = list(items)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]

    executor_cls = ProcessPoolExecutor if kind == "process" else ThreadPoolExecutor
    with executor_cls(max_workers=workers) as executor:
        return list(executor.map(fn, jobs))
