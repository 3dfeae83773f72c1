"""Axis-aligned boxes, diagonal Gaussians, and closed-form energies between them.

A box is a center vector plus strictly positive per-axis offsets; it doubles
as the diagonal Gaussian whose mean is the center and whose per-axis standard
deviation is the offset.  All energies (Bhattacharyya distance/coefficient,
KL divergence, log-volume) are evaluated in log space so they stay stable up
to a thousand dimensions or so.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Variances below this are clamped during energy evaluation only; stored
# distributions are validated strictly positive instead.
VAR_FLOOR = 1e-12


class FloorDiagnostics:
    """Counter for variance coordinates clamped to VAR_FLOOR in energy calls."""

    def __init__(self) -> None:
        self.events = 0

    def record(self, n: int) -> None:
        self.events += int(n)

    def reset(self) -> None:
        self.events = 0


floor_diagnostics = FloorDiagnostics()


def _as_vector(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {a.shape}")
    if a.shape[0] == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must contain only finite values")
    return a


@dataclass(frozen=True)
class Box:
    """Axis-aligned hyperrectangle spanning [center - offset, center + offset].

    Offsets must be strictly positive in every dimension, so the box always
    has nonzero extent on every axis.
    """

    center: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _as_vector(self.center, "center"))
        object.__setattr__(self, "offset", _as_vector(self.offset, "offset"))
        if self.center.shape != self.offset.shape:
            raise ValueError(
                f"center and offset must have equal length, got "
                f"{self.center.shape[0]} and {self.offset.shape[0]}"
            )
        if not np.all(self.offset > 0.0):
            raise ValueError("offsets must be strictly positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def lower(self) -> np.ndarray:
        return self.center - self.offset

    def upper(self) -> np.ndarray:
        return self.center + self.offset


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance, stored as mean and per-axis variance."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _as_vector(self.mean, "mean"))
        object.__setattr__(self, "variance", _as_vector(self.variance, "variance"))
        if self.mean.shape != self.variance.shape:
            raise ValueError(
                f"mean and variance must have equal length, got "
                f"{self.mean.shape[0]} and {self.variance.shape[0]}"
            )
        if not np.all(self.variance > 0.0):
            raise ValueError("variances must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def box_to_gaussian(b: Box) -> DiagGaussian:
    """Read a box as the Gaussian N(center, diag(offset^2))."""
    return DiagGaussian(mean=b.center, variance=b.offset * b.offset)


def gaussian_to_box(g: DiagGaussian, level: float = 1.0) -> Box:
    """Cut a box out of a Gaussian at `level` standard deviations per axis.

    level=1 recovers the box whose offsets are the per-axis standard
    deviations; larger levels widen every side proportionally.
    """
    level = float(level)
    if not np.isfinite(level) or level <= 0.0:
        raise ValueError(f"sigma level must be a positive finite number, got {level}")
    return Box(center=g.mean, offset=level * np.sqrt(g.variance))


def _floored(v: np.ndarray) -> np.ndarray:
    below = v < VAR_FLOOR
    n = int(np.count_nonzero(below))
    if n:
        floor_diagnostics.record(n)
        v = np.maximum(v, VAR_FLOOR)
    return v


def _check_pair(p: DiagGaussian, q: DiagGaussian) -> None:
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")


def bhattacharyya_distance(p: DiagGaussian, q: DiagGaussian) -> float:
    """Bhattacharyya distance between two diagonal Gaussians.

    With the midpoint variance m = (v_p + v_q) / 2 per axis, the distance is
    (1/8) * sum((mu_p - mu_q)^2 / m) + (1/2) * sum(ln m - (ln v_p + ln v_q) / 2).
    Symmetric, zero iff the Gaussians coincide.
    """
    _check_pair(p, q)
    vp = _floored(p.variance)
    vq = _floored(q.variance)
    m = 0.5 * (vp + vq)
    diff = p.mean - q.mean
    quad = 0.125 * float(np.sum(diff * diff / m))
    shape = 0.5 * float(np.sum(np.log(m)) - 0.5 * (np.sum(np.log(vp)) + np.sum(np.log(vq))))
    return quad + shape


def bhattacharyya_coefficient(p: DiagGaussian, q: DiagGaussian) -> float:
    """Overlap score exp(-bhattacharyya_distance), in (0, 1]."""
    return float(np.exp(-bhattacharyya_distance(p, q)))


def kl_divergence(p: DiagGaussian, q: DiagGaussian) -> float:
    """KL(p || q) for diagonal Gaussians, in nats.  Asymmetric, nonnegative."""
    _check_pair(p, q)
    vp = _floored(p.variance)
    vq = _floored(q.variance)
    diff = q.mean - p.mean
    d = p.dim
    return 0.5 * float(
        np.sum(vp / vq)
        + np.sum(diff * diff / vq)
        - d
        + np.sum(np.log(vq))
        - np.sum(np.log(vp))
    )


def log_volume(g: DiagGaussian) -> float:
    """Half log-determinant of the covariance: sum of per-axis ln(sigma)."""
    v = _floored(g.variance)
    return 0.5 * float(np.sum(np.log(v)))
