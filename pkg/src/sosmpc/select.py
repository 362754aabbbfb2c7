"""Linear-time selection on plain Python lists.

The knapsack solvers call this on lists of floats in tight loops, so it
stays in pure Python: converting to arrays would cost more than the
selection itself for the list sizes seen in the median searches.
"""

import random

__all__ = ["select_kth", "lower_median"]

_rng = random.Random(0x5EED)


def select_kth(values, k):
    """Return the k-th smallest element (0-based) of ``values``.

    Randomised quickselect with three-way partitioning; after a depth of
    ``2*log2(n)`` rounds it falls back to sorting what is left, which caps
    the worst case at ``O(n log n)`` while keeping the expected cost linear.
    """
    n = len(values)
    if not 0 <= k < n:
        raise IndexError("selection index out of range")
    items = values
    depth = 2 * max(1, n.bit_length())
    while True:
        m = len(items)
        if m <= 16 or depth == 0:
            return sorted(items)[k]
        depth -= 1
        a, b, c = items[_rng.randrange(m)], items[_rng.randrange(m)], items[_rng.randrange(m)]
        pivot = max(min(a, b), min(max(a, b), c))
        lo = [v for v in items if v < pivot]
        if k < len(lo):
            items = lo
            continue
        n_eq = m - len(lo) - sum(1 for v in items if v > pivot)
        if k < len(lo) + n_eq:
            return pivot
        k -= len(lo) + n_eq
        items = [v for v in items if v > pivot]


def lower_median(values):
    """Element of rank ``(n-1)//2``: the lower median of a non-empty list."""
    if not values:
        raise ValueError("median of an empty list")
    return select_kth(values, (len(values) - 1) // 2)
