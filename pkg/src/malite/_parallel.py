import os
from concurrent.futures import ThreadPoolExecutor


def n_workers():
    """Worker cap from ``MALITE_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("MALITE_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def ordered_map(fn, items):
    """``map`` over a thread pool; results come back in input order."""
    items = list(items)
    workers = min(n_workers(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
