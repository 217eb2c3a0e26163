"""
Conversion between real values and spike times.

Direct encoding maps one value to one spike, with larger values spiking first. GRF
encoding maps one value to ``m`` spikes through Gaussian tuning curves. Outputs are
decoded as the difference of two first spike times.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "EncodingSpec",
    "DecodeSpec",
    "encode_direct",
    "encode_grf",
    "encode",
    "decode_pair",
    "TargetAffine",
]


@dataclass(frozen=True)
class EncodingSpec:
    kind: str = "direct"
    x_min: float = 0.0
    x_max: float = 1.0
    t_trans: float = 2.0
    grf_m: int = 5
    grf_beta: float = 1.5

    def __post_init__(self):
        if self.kind not in ("direct", "grf"):
            raise ValueError(f"unknown encoding kind {self.kind!r}")
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if not self.t_trans > 0:
            raise ValueError("t_trans must be positive")
        if self.kind == "grf":
            if self.grf_m < 3:
                raise ValueError("GRF encoding needs at least 3 neurons")
            if not self.grf_beta > 0:
                raise ValueError("grf_beta must be positive")

    @property
    def n_channels(self) -> int:
        return 1 if self.kind == "direct" else self.grf_m

    @property
    def sigma(self) -> float:
        return (self.x_max - self.x_min) / (self.grf_beta * (self.grf_m - 2))

    @property
    def centers(self) -> np.ndarray:
        m = self.grf_m
        return self.x_min + np.arange(m) * (self.x_max - self.x_min) / m


@dataclass(frozen=True)
class DecodeSpec:
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        flat = sorted(i for pr in self.pairs for i in pr)
        if flat != list(range(len(flat))):
            raise ValueError("decode pairs must be disjoint and cover the output layer")

    @classmethod
    def consecutive(cls, n_values: int) -> "DecodeSpec":
        return cls(tuple((2 * q, 2 * q + 1) for q in range(n_values)))


def _clamp(X: float, spec: EncodingSpec) -> float:
    if X < spec.x_min or X > spec.x_max:
        log.debug("clamping input %r to [%r, %r]", X, spec.x_min, spec.x_max)
        return min(max(X, spec.x_min), spec.x_max)
    return X


def encode_direct(X: float, spec: EncodingSpec) -> tuple[float, float]:
    """Spike time ``(1 - (X - x_min)/(x_max - x_min)) * t_trans`` and its derivative in X."""
    X = _clamp(float(X), spec)
    span = spec.x_max - spec.x_min
    t = (1.0 - (X - spec.x_min) / span) * spec.t_trans
    return t, -spec.t_trans / span


def encode_grf(X: float, spec: EncodingSpec) -> tuple[np.ndarray, np.ndarray]:
    """
    Gaussian receptive field spike times ``t_i = (1 - r_i / max_j r_j) * t_trans`` and
    their derivatives in X. The winning (maximal) response is treated as locally fixed.
    """
    X = _clamp(float(X), spec)
    c = spec.centers
    s2 = spec.sigma ** 2
    r = np.exp(-((X - c) ** 2) / (2 * s2))
    k = int(np.argmax(r))
    ratio = r / r[k]
    t = (1.0 - ratio) * spec.t_trans
    # d(r_i/r_k)/dX = ratio * (-(X-c_i) + (X-c_k)) / s2
    dratio = ratio * ((c - X) - (c[k] - X)) / s2
    return t, -spec.t_trans * dratio


def encode(x, specs: list[EncodingSpec]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """
    Encode an input vector into per-channel spike lists.

    Returns ``(spikes, dt_dx)`` where ``dt_dx[c]`` has shape ``(1, n_dims)`` so that it can
    be fed to :func:`qifsnn.grad.input_sensitivity`.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != len(specs):
        raise ValueError(f"expected {len(specs)} input dims, got {x.size}")
    spikes, derivs = [], []
    for d, (xd, spec) in enumerate(zip(x, specs)):
        if spec.kind == "direct":
            t, dt = encode_direct(xd, spec)
            ts, dts = np.array([t]), np.array([dt])
        else:
            ts, dts = encode_grf(xd, spec)
        for ti, di in zip(ts, dts):
            spikes.append(np.array([ti]))
            row = np.zeros((1, x.size))
            row[0, d] = di
            derivs.append(row)
    return spikes, derivs


def decode_pair(first_spike_a: float, first_spike_b: float) -> float:
    return first_spike_b - first_spike_a


@dataclass(frozen=True)
class TargetAffine:
    """Maps physical targets ``y`` to decoded values ``z = scale * y + offset``."""

    scale: float = 1.0
    offset: float = 0.0

    @classmethod
    def fit(cls, y_min: float, y_max: float, T: float, frac: float = 0.4) -> "TargetAffine":
        """Affine map sending ``[y_min, y_max]`` onto ``[-frac*T, frac*T]``."""
        if y_max <= y_min:
            return cls(1.0, -y_min)
        scale = 2 * frac * T / (y_max - y_min)
        return cls(scale, -frac * T - scale * y_min)

    def forward(self, y):
        return self.scale * np.asarray(y) + self.offset

    def inverse(self, z):
        return (np.asarray(z) - self.offset) / self.scale
