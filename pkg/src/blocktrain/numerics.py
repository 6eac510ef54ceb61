"""Flat parameter vectors and the deterministic arithmetic every strategy shares.

All model state in this package travels as a :class:`ParamVector`: an
immutable, finite, 1-D float64 array holding every trainable parameter of one
model. Reductions always sum in ascending worker order, so the centralized
mean and the sharded (reduce-scatter style) mean agree bit for bit.

Random streams come from numpy's counter-based Philox generator, keyed by a
64-bit seed plus an optional tuple of non-negative integer tags. The same
(seed, tags) pair yields the same stream on every platform; that
reproducibility, not the particular generator, is the contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ParamVector",
    "axpy",
    "mean_reduce",
    "make_rng",
    "substream",
]


def frozen(arr: np.ndarray) -> np.ndarray:
    """Mark ``arr`` read-only and return it (helper for zero-copy wrapping)."""
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Immutable 1-D float64 vector; the unit of synchronization.

    Construction validates that the data is one-dimensional and finite.
    Writable input arrays are copied; arrays already marked read-only are
    wrapped without a copy (see :func:`frozen`).
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"parameter vector must be 1-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("parameter vector contains non-finite values")
        if arr.flags.writeable:
            arr = frozen(arr.copy())
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]

    @staticmethod
    def zeros(length: int) -> "ParamVector":
        return ParamVector(frozen(np.zeros(length)))


def _require_same_length(x: ParamVector, y: ParamVector) -> None:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``a * x + y`` as a new vector."""
    if not np.isfinite(a):
        raise ValueError(f"scale must be finite, got {a!r}")
    _require_same_length(x, y)
    return ParamVector(frozen(a * x.values + y.values))


def mean_reduce(vs: Sequence[ParamVector]) -> ParamVector:
    """Arithmetic mean over workers, summed in ascending worker index.

    Computed in the centered form ``vs[0] + sum_i(vs[i] - vs[0]) / N``. This
    keeps the mean of N identical vectors exactly equal to that vector and
    performs the same per-element operation sequence as the sharded
    aggregation path, so both agree bit for bit.
    """
    if len(vs) == 0:
        raise ValueError("mean_reduce needs at least one vector")
    base = vs[0].values
    for v in vs[1:]:
        if v.values.shape[0] != base.shape[0]:
            raise ValueError(
                f"length mismatch: {v.values.shape[0]} vs {base.shape[0]}"
            )
    acc = np.zeros_like(base)
    for v in vs[1:]:
        acc += v.values - base
    acc /= len(vs)
    acc += base
    return ParamVector(frozen(acc))


def make_rng(seed: int) -> np.random.Generator:
    """Philox stream for ``seed``; identical seed, identical stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Independent Philox stream keyed by ``(seed, *tags)``.

    Tags must be non-negative integers. Distinct tag tuples give streams that
    are independent for all practical purposes.
    """
    entropy = [int(seed)] + [int(t) for t in tags]
    if any(t < 0 for t in entropy[1:]):
        raise ValueError("substream tags must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
