"""Order-preserving map over worker processes."""
import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "EPIVAR_WORKERS"


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def pmap(fn, items, workers=None):
    """``[fn(x) for x in items]``, optionally across processes.

    Results come back in input order regardless of completion order. With one
    worker everything runs in-process, which also allows unpicklable ``fn``.
    """
    items = list(items)
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
