"""Deterministic float64 tensors, seeded sampling, and summary statistics.

All numeric state in the package flows through this module: dense arrays are
plain ``numpy.ndarray`` objects coerced to 64-bit floats, random draws come
from counter-based streams that can be split into independent sub-streams,
and distribution summaries are computed once and carried around as frozen
records.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTensorError, InvalidParameterError, ShapeMismatchError

# Every tensor in the package is a float64 ndarray.
Tensor = np.ndarray

_ALGEBRA_OPS = ("matmul", "add", "sub", "hadamard", "scale")
_SAMPLE_DISTS = ("normal", "uniform", "bernoulli")


def as_tensor(data) -> Tensor:
    """Coerce ``data`` to a contiguous float64 array."""
    return np.ascontiguousarray(np.asarray(data, dtype=np.float64))


def zeros(shape) -> Tensor:
    return np.zeros(shape, dtype=np.float64)


def ones(shape) -> Tensor:
    return np.ones(shape, dtype=np.float64)


class RngStream:
    """Counter-based random stream with reproducible, splittable sub-streams.

    Built on the Philox counter generator, so two streams created from the
    same seed produce bitwise-identical draws regardless of what any other
    stream did in between.  ``split`` derives an independent child stream
    from a text label; the same (seed, label) pair always yields the same
    child.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed % (1 << 128)))

    def split(self, label: str) -> "RngStream":
        digest = hashlib.blake2b(
            f"{self.seed}/{label}".encode("utf-8"), digest_size=8
        ).digest()
        return RngStream(int.from_bytes(digest, "big"))

    def normal(self, mean: float, std: float, shape) -> Tensor:
        if std < 0:
            raise InvalidParameterError(f"normal std must be >= 0, got {std}")
        if std == 0:
            return np.full(shape, float(mean), dtype=np.float64)
        return self._gen.normal(loc=mean, scale=std, size=shape).astype(np.float64)

    def uniform(self, low: float, high: float, shape) -> Tensor:
        if not low < high:
            raise InvalidParameterError(f"uniform needs low < high, got [{low}, {high}]")
        return self._gen.uniform(low=low, high=high, size=shape).astype(np.float64)

    def bernoulli(self, p: float, shape) -> Tensor:
        if not 0.0 <= p <= 1.0:
            raise InvalidParameterError(f"bernoulli p must lie in [0, 1], got {p}")
        return (self._gen.random(size=shape) < p).astype(np.float64)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high); used for index sampling."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def seeded_sample(rng: RngStream, dist: str, shape, **params) -> Tensor:
    """Draw a tensor from ``dist`` using ``rng``.

    Supported distributions: ``normal(mean, std)``, ``uniform(low, high)``,
    ``bernoulli(p)``.
    """
    if dist == "normal":
        return rng.normal(params.get("mean", 0.0), params.get("std", 1.0), shape)
    if dist == "uniform":
        return rng.uniform(params.get("low", 0.0), params.get("high", 1.0), shape)
    if dist == "bernoulli":
        return rng.bernoulli(params.get("p", 0.5), shape)
    raise InvalidParameterError(
        f"unknown distribution {dist!r}, expected one of {_SAMPLE_DISTS}"
    )


@dataclass(frozen=True)
class SummaryStats:
    """Distribution summary of one tensor (population moments, ddof=0)."""

    mean: float
    variance: float
    std: float
    min: float
    max: float
    abs_mean: float
    count: int
    _sorted: np.ndarray = field(repr=False, compare=False)

    def percentile(self, q: float) -> float:
        """Linearly interpolated percentile, q in [0, 100]."""
        if not 0.0 <= q <= 100.0:
            raise InvalidParameterError(f"percentile q must lie in [0, 100], got {q}")
        return float(np.percentile(self._sorted, q))


def _stats_from_flat(flat: np.ndarray) -> SummaryStats:
    return SummaryStats(
        mean=float(flat.mean()),
        variance=float(flat.var()),
        std=float(flat.std()),
        min=float(flat.min()),
        max=float(flat.max()),
        abs_mean=float(np.abs(flat).mean()),
        count=int(flat.size),
        _sorted=np.sort(flat),
    )


def reduce_stats(t, axis: int | None = None):
    """Summarize ``t`` as a whole, or per slice along ``axis``.

    With ``axis=k`` the result is a list of SummaryStats, one per index of
    axis ``k`` (each summarizing the slice with that index fixed).
    """
    arr = as_tensor(t)
    if arr.size == 0:
        raise EmptyTensorError("cannot summarize an empty tensor")
    if axis is None:
        return _stats_from_flat(arr.ravel())
    if not -arr.ndim <= axis < arr.ndim:
        raise InvalidParameterError(f"axis {axis} out of range for shape {arr.shape}")
    moved = np.moveaxis(arr, axis, 0)
    return [_stats_from_flat(moved[i].ravel()) for i in range(moved.shape[0])]


def tensor_algebra(a, b, op: str) -> Tensor:
    """Dense algebra with explicit shape validation.

    ``matmul`` multiplies two rank-2 tensors; ``add``/``sub``/``hadamard``
    require equal shapes or a rank-1 right operand matching the last axis
    (the bias-row case); ``scale`` takes a scalar right operand.
    """
    x = as_tensor(a)
    if op == "scale":
        if np.ndim(b) != 0:
            raise ShapeMismatchError(
                f"scale needs a scalar right operand, got shape {np.shape(b)}"
            )
        return x * float(b)
    y = as_tensor(b)
    if op == "matmul":
        if x.ndim != 2 or y.ndim != 2:
            raise ShapeMismatchError(
                f"matmul needs rank-2 operands, got {x.shape} and {y.shape}"
            )
        if x.shape[1] != y.shape[0]:
            raise ShapeMismatchError(
                f"matmul inner dimensions differ: {x.shape} vs {y.shape}"
            )
        return x @ y
    if op in ("add", "sub", "hadamard"):
        if x.shape != y.shape and not (y.ndim == 1 and x.ndim >= 1 and x.shape[-1] == y.shape[0]):
            raise ShapeMismatchError(
                f"{op} needs matching shapes (or a rank-1 row), got {x.shape} vs {y.shape}"
            )
        if op == "add":
            return x + y
        if op == "sub":
            return x - y
        return x * y
    raise InvalidParameterError(f"unknown op {op!r}, expected one of {_ALGEBRA_OPS}")
