"""Brute-force enumeration of complete assignments.

Ground truth for tests.  It shares nothing with the engine: no propagation,
no search order, just the Cartesian product filtered by the reference
evaluator.  Chunks of the product are evaluated as numpy columns.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Assignment, Model, evaluate

__all__ = ["DEFAULT_CAP", "OracleTooLarge", "count_all", "enumerate_all"]

DEFAULT_CAP = 10**7
CHUNK = 1 << 18


class OracleTooLarge(ValueError):
    pass


def _solution_rows(m: Model, cap: int):
    refs = m.variables
    domains = [np.fromiter(m.domain_of(r), dtype=np.int64) for r in refs]
    shape = tuple(len(d) for d in domains)
    total = math.prod(shape)
    if total > cap:
        raise OracleTooLarge(f"{total} assignments exceed the oracle cap of {cap}")
    column = {ref: i for i, ref in enumerate(refs)}
    for start in range(0, total, CHUNK):
        flat = np.arange(start, min(start + CHUNK, total), dtype=np.int64)
        # C-order unravel puts the first variable in the most significant place
        digits = np.unravel_index(flat, shape) if shape else ()
        cols = [d[idx] for d, idx in zip(domains, digits)]
        keep = np.ones(len(flat), dtype=bool)
        for c in m.constraints:
            keep &= np.asarray(evaluate(c, lambda ref: cols[column[ref]]), dtype=bool)
            if not keep.any():
                break
        if not keep.any():
            continue
        yield np.stack(cols, axis=1)[keep] if cols else np.zeros((int(keep.sum()), 0), dtype=np.int64)


def enumerate_all(m: Model, cap: int = DEFAULT_CAP) -> list[Assignment]:
    """All solutions of ``m`` in lexicographic order (declaration order, ascending values)."""
    refs = m.variables
    return [Assignment(zip(refs, row.tolist())) for chunk in _solution_rows(m, cap) for row in chunk]


def count_all(m: Model, cap: int = DEFAULT_CAP) -> int:
    return sum(len(chunk) for chunk in _solution_rows(m, cap))
