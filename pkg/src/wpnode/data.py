"""Scaling, sliding windows and weak-form subdomain layouts."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class MinMaxScaler:
    data_min: np.ndarray
    data_max: np.ndarray

    def __post_init__(self):
        if np.any(self.data_max <= self.data_min):
            raise ConfigurationError("degenerate dimension: max equals min")

    @property
    def span(self) -> np.ndarray:
        return self.data_max - self.data_min

    def to_dict(self) -> dict:
        return {"min": self.data_min.tolist(), "max": self.data_max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def minmax_fit(x) -> MinMaxScaler:
    x = np.asarray(getattr(x, "states", x), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ConfigurationError("fit needs at least two rows")
    return MinMaxScaler(x.min(axis=0), x.max(axis=0))


def minmax_apply(scaler: MinMaxScaler, x):
    # no clipping: values outside the training range map outside [0, 1]
    return (np.asarray(x, dtype=np.float64) - scaler.data_min) / scaler.span


def minmax_invert(scaler: MinMaxScaler, x_scaled):
    return np.asarray(x_scaled, dtype=np.float64) * scaler.span + scaler.data_min


@dataclass(frozen=True)
class WindowSet:
    """Windows of ``length`` consecutive rows; ``segments[i, 0]`` is the initial state."""

    length: int
    stride: int
    starts: np.ndarray
    segments: np.ndarray

    def __len__(self) -> int:
        return self.starts.size

    @property
    def initial_states(self) -> np.ndarray:
        return self.segments[:, 0]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.length, self.stride, self.starts[idx], self.segments[idx])


def sliding_windows(x, length: int, stride: int = 1) -> WindowSet:
    """Windows starting at 0, stride, 2*stride, ... with ``start + length <= N``.

    There are ``(N - length) // stride + 1`` of them.
    """
    x = np.asarray(getattr(x, "states", x), dtype=np.float64)
    n = x.shape[0]
    if length < 2 or stride < 1:
        raise ConfigurationError("need length >= 2 and stride >= 1")
    if length > n:
        raise ConfigurationError(f"window length {length} exceeds series length {n}")
    starts = np.arange(0, n - length + 1, stride)
    segments = x[starts[:, None] + np.arange(length)[None, :]]
    return WindowSet(length, stride, starts, segments)


@dataclass(frozen=True)
class SubdomainLayout:
    size: int
    starts: np.ndarray
    dt: float = 1.0

    @property
    def count(self) -> int:
        return self.starts.size

    @property
    def length(self) -> float:
        return (self.size - 1) * self.dt

    @property
    def nodes(self) -> np.ndarray:
        return reference_nodes(self.size)

    def node_indices(self) -> np.ndarray:
        """(K, M) row indices of each subdomain's grid points."""
        return self.starts[:, None] + np.arange(self.size)[None, :]

    def subset(self, idx) -> "SubdomainLayout":
        return SubdomainLayout(self.size, self.starts[idx], self.dt)

    def to_dict(self) -> dict:
        return {"M": self.size, "K": self.count, "dt": self.dt, "starts": self.starts.tolist()}


def reference_nodes(m: int) -> np.ndarray:
    s = np.linspace(-1.0, 1.0, m)
    s[0], s[-1] = -1.0, 1.0
    return s


def make_subdomains(n: int, m: int, k: int, dt: float = 1.0) -> SubdomainLayout:
    """``k`` subdomains of ``m`` points with starts evenly spread over ``[0, n - m]``."""
    if m < 2 or m > n:
        raise ConfigurationError(f"subdomain size {m} must be in [2, {n}]")
    if k < 1:
        raise ConfigurationError("need at least one subdomain")
    distinct = n - m + 1
    if k > distinct:
        warnings.warn(f"K={k} exceeds the {distinct} distinct subdomains; capping", stacklevel=2)
        k = distinct
    if k == 1:
        starts = np.zeros(1, dtype=np.int64)
    else:
        starts = np.rint(np.arange(k) * ((n - m) / (k - 1))).astype(np.int64)
    return SubdomainLayout(m, starts, dt)


def to_reference(a: float, b: float, s):
    """Affine map from the reference interval [-1, 1] onto [a, b]."""
    return (b - a) / 2.0 * np.asarray(s) + (a + b) / 2.0


def from_reference(a: float, b: float, t):
    return (2.0 * np.asarray(t) - (a + b)) / (b - a)
