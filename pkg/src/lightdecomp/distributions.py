"""Hue/value histograms and the distance metrics used to compare them.

All metrics accept either :class:`Histogram` objects (whose kinds must match)
or plain 1-D arrays of equal length. Arrays are treated as already normalized
distributions; only their bin count is checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

HUE = "hue"
VALUE = "value"
BIN_COUNTS = {HUE: 360, VALUE: 100}

SMOOTHING = 1e-8
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class Histogram:
    """A normalized discrete distribution over hue (360 bins) or value (100 bins)."""

    kind: str
    bins: np.ndarray

    def __post_init__(self):
        if self.kind not in BIN_COUNTS:
            raise ValueError(f"unknown histogram kind {self.kind!r}")
        bins = np.array(self.bins, dtype=np.float64)
        if bins.shape != (BIN_COUNTS[self.kind],):
            raise ValueError(
                f"{self.kind} histogram needs {BIN_COUNTS[self.kind]} bins, got shape {bins.shape}"
            )
        if not np.all(np.isfinite(bins)) or np.any(bins < 0):
            raise ValueError("histogram bins must be finite and non-negative")
        total = bins.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"histogram must sum to 1, got {total!r}")
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)

    @classmethod
    def from_counts(cls, kind: str, counts) -> "Histogram":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if not total > 0:
            raise ValueError("cannot normalize an all-zero histogram")
        return cls(kind, counts / total)

    @classmethod
    def uniform(cls, kind: str) -> "Histogram":
        n = BIN_COUNTS[kind]
        return cls(kind, np.full(n, 1.0 / n))

    @classmethod
    def delta(cls, kind: str, index: int) -> "Histogram":
        bins = np.zeros(BIN_COUNTS[kind])
        bins[index] = 1.0
        return cls(kind, bins)

    @property
    def bin_count(self) -> int:
        return self.bins.shape[0]

    def to_json(self) -> dict:
        return {"kind": self.kind, "bins": self.bins.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Histogram":
        return cls(data["kind"], np.asarray(data["bins"], dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, Histogram):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.bins, other.bins)

    def __hash__(self):
        return hash((self.kind, self.bins.tobytes()))

    def __repr__(self):
        return f"Histogram(kind={self.kind!r}, bins=<{self.bin_count}>)"


HistLike = Union[Histogram, np.ndarray, list, tuple]


def _pair(p: HistLike, q: HistLike) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, Histogram) and isinstance(q, Histogram) and p.kind != q.kind:
        raise ValueError(f"histogram kind mismatch: {p.kind} vs {q.kind}")
    a = np.asarray(p.bins if isinstance(p, Histogram) else p, dtype=np.float64)
    b = np.asarray(q.bins if isinstance(q, Histogram) else q, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"histogram shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def smooth(p: np.ndarray, eps: float = SMOOTHING) -> np.ndarray:
    p = p + eps
    return p / p.sum()


def l1_distance(p: HistLike, q: HistLike) -> float:
    a, b = _pair(p, q)
    return float(np.abs(a - b).sum())


def wasserstein_1d(p: HistLike, q: HistLike, circular: bool = False) -> float:
    """Earth mover's distance with bin support spread over the unit interval.

    With ``circular=True`` the support wraps around (useful for hue); the
    optimal circular transport subtracts the median of the CDF difference.
    """
    a, b = _pair(p, q)
    diff = np.cumsum(a) - np.cumsum(b)
    if circular:
        diff = diff - np.median(diff)
    return float(np.abs(diff).sum() / a.shape[0])


def kl_divergence(p: HistLike, q: HistLike) -> float:
    a, b = _pair(p, q)
    a, b = smooth(a), smooth(b)
    return float(np.sum(a * np.log(a / b)))


def js_divergence(p: HistLike, q: HistLike) -> float:
    a, b = _pair(p, q)
    a, b = smooth(a), smooth(b)
    m = 0.5 * (a + b)
    return float(0.5 * np.sum(a * np.log(a / m)) + 0.5 * np.sum(b * np.log(b / m)))


def bhattacharyya(p: HistLike, q: HistLike) -> float:
    a, b = _pair(p, q)
    a, b = smooth(a), smooth(b)
    # clamp guards against coefficient rounding a hair above 1 for identical inputs
    coeff = min(float(np.sum(np.sqrt(a * b))), 1.0)
    return -math.log(coeff)


def cosine_similarity(p: HistLike, q: HistLike) -> float:
    a, b = _pair(p, q)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(min(np.dot(a, b) / (na * nb), 1.0))


METRICS = {
    "l1": l1_distance,
    "wasserstein": wasserstein_1d,
    "js": js_divergence,
    "kl": kl_divergence,
    "bhattacharyya": bhattacharyya,
    "cosine": cosine_similarity,
}


def all_metrics(p: HistLike, q: HistLike) -> dict[str, float]:
    """Every metric in :data:`METRICS`, ``p`` taken as the target distribution."""
    return {name: fn(p, q) for name, fn in METRICS.items()}


def wrap_hue(h: float) -> float:
    h = math.fmod(h, TWO_PI)
    if h < 0:
        h += TWO_PI
    # fmod of a tiny negative can round up to exactly 2*pi
    return 0.0 if h >= TWO_PI else h


def hue_distance(x: float, y: float) -> float:
    d = abs(x - y)
    return min(d, TWO_PI - d)


def value_distance(x: float, y: float) -> float:
    return abs(x - y)


@dataclass(frozen=True)
class ScalarHV:
    """One light's control: a hue angle in radians and a value in [0, 1]."""

    hue: float
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.hue) and math.isfinite(self.value)):
            raise ValueError("hue and value must be finite")
        object.__setattr__(self, "hue", wrap_hue(float(self.hue)))
        object.__setattr__(self, "value", min(max(float(self.value), 0.0), 1.0))

    def to_json(self) -> dict:
        return {"h": self.hue, "v": self.value}

    @classmethod
    def from_json(cls, data: dict) -> "ScalarHV":
        return cls(float(data["h"]), float(data["v"]))
