"""Small shared helpers."""

from concurrent.futures import ThreadPoolExecutor


def ordered_parallel_map(fn, items, threads: int = 1) -> list:
    """Map fn over items, optionally with a thread pool.

    Results keep item order, so output is identical to the serial path as
    long as fn is pure per item (all pipeline jobs derive their RNG from
    item indices, never from execution order).
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
