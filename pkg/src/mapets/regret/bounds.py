from __future__ import annotations

import math


class PreconditionViolated(ValueError):
    pass


def sequence_ratio_bound(xs):
    """Return (sum x_k / sqrt(X_{k-1}), (sqrt2 + 1) sqrt(X_n)).

    X_k = max(1, x_1 + ... + x_k); every x_k must satisfy 0 <= x_k <= X_{k-1}.
    """
    lhs = 0.0
    total = 0.0
    for k, x in enumerate(xs):
        prev = max(1.0, total)
        if x < 0 or x > prev:
            raise PreconditionViolated(f"x[{k}]={x} outside [0, {prev}]")
        lhs += x / math.sqrt(prev)
        total += x
    rhs = (math.sqrt(2.0) + 1.0) * math.sqrt(max(1.0, total))
    if lhs > rhs:
        raise AssertionError(f"inequality violated: {lhs} > {rhs}")
    return lhs, rhs
