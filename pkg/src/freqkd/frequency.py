"""Band decomposition of feature vectors and feature standardization.

A :class:`BandSplit` partitions the half spectrum at a cutoff bin: bins
``[0, cutoff)`` form the low band (always including DC), bins
``[cutoff, K)`` the high band. Reconstructing each masked spectrum gives two
real vectors that sum back to the input; because the masks act on the half
spectrum, conjugate symmetry is preserved and no imaginary residue appears.

Both band projections are orthogonal projections of R^D and therefore
self-adjoint: propagating a gradient through ``decompose`` is the same
projection applied to the upstream gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import NORM_EPS


@dataclass(frozen=True)
class BandSplit:
    """Cutoff position inside a length-K half spectrum."""

    threshold: float
    spectrum_len: int

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.spectrum_len < 2:
            raise ConfigError(f"spectrum length must be >= 2, got {self.spectrum_len}")

    @classmethod
    def for_dim(cls, dim: int, threshold: float) -> "BandSplit":
        if dim < 2 or dim % 2 != 0:
            raise DimensionError(f"feature dimension must be even and >= 2, got {dim}")
        return cls(threshold=threshold, spectrum_len=dim // 2 + 1)

    @property
    def cutoff(self) -> int:
        return max(1, math.floor(self.spectrum_len * self.threshold))

    @property
    def low_bin_count(self) -> int:
        return self.cutoff

    def masks(self):
        low = np.zeros(self.spectrum_len, dtype=np.float64)
        low[: self.cutoff] = 1.0
        return low, 1.0 - low


class FrequencyBands(NamedTuple):
    """Reconstructed low/high components; ``low + high`` recovers the input."""

    low: np.ndarray
    high: np.ndarray


def _check_dim(x, split: BandSplit):
    d = x.shape[-1]
    if d < 2 or d % 2 != 0:
        raise DimensionError(f"feature dimension must be even and >= 2, got {d}")
    if split.spectrum_len != d // 2 + 1:
        raise DimensionError(
            f"band split expects spectrum length {d // 2 + 1} for dimension {d}, "
            f"got {split.spectrum_len}"
        )


def decompose(x, split: BandSplit) -> FrequencyBands:
    """Split vectors (rows along the last axis) into low/high reconstructions."""
    arr = np.asarray(x, dtype=np.float64)
    _check_dim(arr, split)
    spectrum = np.fft.rfft(arr, axis=-1)
    low_mask, high_mask = split.masks()
    low = np.fft.irfft(spectrum * low_mask, n=arr.shape[-1], axis=-1)
    high = np.fft.irfft(spectrum * high_mask, n=arr.shape[-1], axis=-1)
    return FrequencyBands(low=low, high=high)


def band_project(g, split: BandSplit, band: str) -> np.ndarray:
    """Apply one band's projection; used as the adjoint in backward passes."""
    arr = np.asarray(g, dtype=np.float64)
    _check_dim(arr, split)
    low_mask, high_mask = split.masks()
    mask = low_mask if band == "low" else high_mask
    return np.fft.irfft(np.fft.rfft(arr, axis=-1) * mask, n=arr.shape[-1], axis=-1)


class Standardized(NamedTuple):
    values: np.ndarray
    degenerate: np.ndarray


class _NormalizeCache(NamedTuple):
    y: np.ndarray
    inv_norm: np.ndarray
    degenerate: np.ndarray
    centered: bool


def _normalize_fwd(x, centered: bool):
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] < 2:
        raise DimensionError(f"need dimension >= 2, got {arr.shape[-1]}")
    c = arr - arr.mean(axis=-1, keepdims=True) if centered else arr
    norm = np.linalg.norm(c, axis=-1, keepdims=True)
    degenerate = norm[..., 0] < NORM_EPS
    inv_norm = 1.0 / np.maximum(norm, NORM_EPS)
    y = c * inv_norm
    y = np.where(degenerate[..., None], 0.0, y)
    return y, _NormalizeCache(y=y, inv_norm=inv_norm, degenerate=degenerate, centered=centered)


def _normalize_bwd(cache: _NormalizeCache, g) -> np.ndarray:
    """Gradient of the normalization; degenerate rows propagate zero."""
    g = np.asarray(g, dtype=np.float64)
    proj = g - cache.y * np.sum(cache.y * g, axis=-1, keepdims=True)
    dc = proj * cache.inv_norm
    if cache.centered:
        dc = dc - dc.mean(axis=-1, keepdims=True)
    return np.where(cache.degenerate[..., None], 0.0, dc)


def standardize(x) -> Standardized:
    """Center each vector to zero mean, then scale to unit L2 norm.

    Constant vectors (centered norm below 1e-12) come back as zeros with the
    degenerate flag set; their gradient is defined as zero.
    """
    y, cache = _normalize_fwd(x, centered=True)
    return Standardized(values=y, degenerate=cache.degenerate)


def standardize_fwd(x):
    return _normalize_fwd(x, centered=True)


def unit_norm_fwd(x):
    """Plain L2 normalization, for vectors whose mean is already zero."""
    return _normalize_fwd(x, centered=False)


def normalize_bwd(cache: _NormalizeCache, g) -> np.ndarray:
    return _normalize_bwd(cache, g)


class StandardizedBands(NamedTuple):
    low: np.ndarray
    high: np.ndarray
    low_degenerate: np.ndarray
    high_degenerate: np.ndarray


def standardize_bands(bands: FrequencyBands) -> StandardizedBands:
    """Standardize both bands of a decomposition.

    The low band is centered and normalized. The high band carries no DC
    component, so the centering step is already implied and only the L2
    normalization is applied.
    """
    low = standardize(bands.low)
    high_y, high_cache = unit_norm_fwd(bands.high)
    return StandardizedBands(
        low=low.values,
        high=high_y,
        low_degenerate=low.degenerate,
        high_degenerate=high_cache.degenerate,
    )
