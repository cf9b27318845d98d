"""Deterministic numerical kernels: real-input DFT, cosine similarity, seeded RNG streams.

Transform convention, fixed package-wide: the forward transform is
unnormalized, ``bins[k] = sum_n x[n] * exp(-2i*pi*k*n/D)`` for
``k = 0 .. D/2``, and the inverse carries the ``1/D`` factor. Only even
lengths are supported, so a length-``K`` half spectrum always comes from
``D = 2*(K - 1)`` real samples.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, SpectrumError

NORM_EPS = 1e-12
SYMMETRY_TOL = 1e-9


def _as_real_vector(x, name="x"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Spectrum:
    """Half spectrum of a real vector: K = D/2 + 1 complex bins.

    Bin 0 (DC) and bin D/2 (Nyquist) must be purely real; the remaining
    negative-frequency bins are implied by conjugate symmetry.
    """

    bins: np.ndarray
    source_dim: int

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        object.__setattr__(self, "bins", bins)
        if self.source_dim < 2 or self.source_dim % 2 != 0:
            raise DimensionError(
                f"source_dim must be even and >= 2, got {self.source_dim}"
            )
        if bins.ndim != 1 or bins.shape[0] != self.source_dim // 2 + 1:
            raise DimensionError(
                f"expected {self.source_dim // 2 + 1} bins for source_dim="
                f"{self.source_dim}, got shape {bins.shape}"
            )

    def check_symmetry(self):
        """Raise SpectrumError unless the DC and Nyquist bins are real."""
        scale = max(1.0, float(np.max(np.abs(self.bins)))) if self.bins.size else 1.0
        worst = max(abs(self.bins[0].imag), abs(self.bins[-1].imag))
        if worst > SYMMETRY_TOL * scale:
            raise SpectrumError(
                f"DC/Nyquist bins must be real, found imaginary magnitude {worst:g}"
            )


def rdft(x) -> Spectrum:
    """Forward real-input DFT of an even-length vector."""
    arr = _as_real_vector(x)
    d = arr.shape[0]
    if d < 2 or d % 2 != 0:
        raise DimensionError(f"transform length must be even and >= 2, got {d}")
    return Spectrum(bins=np.fft.rfft(arr), source_dim=d)


def irdft(s: Spectrum) -> np.ndarray:
    """Inverse of :func:`rdft`; returns a real vector of length ``source_dim``."""
    s.check_symmetry()
    return np.fft.irfft(s.bins, n=s.source_dim)


class Cosine(NamedTuple):
    value: float
    degenerate: bool


def cosine_similarity(a, b) -> Cosine:
    """Cosine of the angle between two vectors.

    Returns 0 with ``degenerate=True`` when either norm falls below 1e-12.
    """
    va = _as_real_vector(a, "a")
    vb = _as_real_vector(b, "b")
    if va.shape != vb.shape:
        raise DimensionError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < NORM_EPS or nb < NORM_EPS:
        return Cosine(0.0, True)
    return Cosine(float(np.dot(va, vb) / (na * nb)), False)


@dataclass(frozen=True)
class SeededRng:
    """Root of a family of named, independently seeded generators.

    Streams are addressed by ``(tag, index)`` and derived by hashing, so any
    stream can be reconstructed in isolation: generation order and thread
    placement never change the draws. Generators returned by :meth:`stream`
    are single-owner; share the SeededRng, never a Generator.
    """

    seed: int

    def stream(self, tag: str, index: int = 0) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}:{tag}:{index}".encode()).digest()
        entropy = int.from_bytes(digest[:16], "little")
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
