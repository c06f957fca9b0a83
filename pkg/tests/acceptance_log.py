"""Collects one verdict per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str, limit_s: float | None = None):
    """Time the block, record PASS/FAIL and re-raise any failure.

    The block yields a dict where it can put a short ``detail`` string."""
    info = {"detail": ""}
    start = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        slow = limit_s is not None and elapsed >= limit_s
        verdict = "PASS" if ok and not slow else "FAIL"
        budget = f" (limit {limit_s:g}s)" if limit_s is not None else ""
        note = " runtime over limit" if slow else ""
        line = f"[{verdict}] criterion {number}: {title} | {info['detail']} | {elapsed:.2f}s{budget}{note}"
        RESULTS[number] = line
        print(line)
    if slow:
        raise AssertionError(f"criterion {number} took {elapsed:.2f}s, limit {limit_s}s")
