"""Spectral synthesis of the truncated log-correlated Gaussian field.

The field is ``X(y) = sum_n sqrt(lam(n)) A_n e^{i n.y}`` over every mode the
grid represents, with ``lam(n) = <n>^{-d} / |S^{d-1}|``. The sphere-area factor
makes the covariance ``R_N(x) = -log|x| + g_N(x)`` with ``g_N`` bounded; without
it the logarithm would carry a factor ``|S^{d-1}|``.

``A_0`` is real N(0,1); paired modes have independent real and imaginary parts
of variance 1/2 with ``A_{-n} = conj(A_n)``; self-paired (Nyquist) modes are real
N(0,1). These are exactly the normalized DFT coefficients of nodal white noise,
which is how :func:`sample_field` draws them.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .torus import GridField, TorusGrid


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def spectral_density(grid: TorusGrid) -> np.ndarray:
    """Per-mode variance lam(n) in FFT order."""
    return grid.bracket ** (-grid.dim) / sphere_area(grid.dim)


@dataclass(frozen=True)
class FieldSpec:
    beta: float
    grid: TorusGrid
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta**2 < self.grid.dim:
            raise ValueError(
                f"beta squared must lie in (0, d): beta^2={self.beta**2:g}, d={self.grid.dim}"
            )


@dataclass
class CovarianceKernel:
    R_values: GridField
    sigma2: float

    @property
    def grid(self) -> TorusGrid:
        return self.R_values.grid


def substream(seed: int, name: str, index: int) -> np.random.Generator:
    """Counter-based generator addressed by (seed, stream name, index).

    Realization ``i`` of stream ``name`` is the same no matter which worker
    draws it or in which order.
    """
    key = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()), int(index)))
    return np.random.Generator(np.random.Philox(key))


@lru_cache(maxsize=32)
def _covariance_cached(dim: int, n: int) -> tuple[np.ndarray, float]:
    grid = TorusGrid(dim, n)
    R = np.fft.ifftn(spectral_density(grid)).real * grid.size
    R.setflags(write=False)
    return R, float(R.flat[0])


def truncated_covariance(grid: TorusGrid) -> CovarianceKernel:
    R, sigma2 = _covariance_cached(grid.dim, grid.n)
    return CovarianceKernel(GridField(grid, R.copy()), sigma2)


def synthesize(grid: TorusGrid, noise: np.ndarray) -> np.ndarray:
    """Map nodal white noise (trailing axes = grid axes) to field values."""
    axes = tuple(range(-grid.dim, 0))
    amp = np.sqrt(spectral_density(grid) * grid.size)
    return np.fft.ifftn(np.fft.fftn(noise, axes=axes) * amp, axes=axes).real


def sample_field(spec: FieldSpec, rng: np.random.Generator) -> GridField:
    noise = rng.standard_normal(spec.grid.shape)
    return GridField(spec.grid, synthesize(spec.grid, noise))


def sample_fields(spec: FieldSpec, indices, stream: str = "field") -> np.ndarray:
    """Realizations for ``indices`` from substreams ``(spec.seed, stream, i)``.

    Returns an array of shape ``(len(indices), *grid.shape)``.
    """
    indices = list(indices)
    noise = np.empty((len(indices),) + spec.grid.shape)
    for k, i in enumerate(indices):
        noise[k] = substream(spec.seed, stream, i).standard_normal(spec.grid.shape)
    return synthesize(spec.grid, noise)


def iter_field_batches(spec: FieldSpec, count: int, stream: str = "field", batch: int = 512):
    """Yield ``(start, fields)`` blocks covering realizations 0..count-1."""
    for start in range(0, count, batch):
        stop = min(start + batch, count)
        yield start, sample_fields(spec, range(start, stop), stream=stream)


@dataclass
class SmoothPart:
    """g_N on the admissible nodes; ``mask`` is False inside the exclusion radius."""

    values: np.ndarray
    mask: np.ndarray
    grid: TorusGrid

    @property
    def excluded(self) -> int:
        return int(np.count_nonzero(~self.mask))


def extract_g(kernel: CovarianceKernel, exclusion: float = 2.0) -> SmoothPart:
    """g_N(x) = R_N(x) + log|x| on nodes at distance >= exclusion*h from the pole.

    Excluded nodes hold NaN and are flagged by ``mask``.
    """
    grid = kernel.grid
    dist = grid.distance_from((0,) * grid.dim)
    mask = dist >= exclusion * grid.h * (1 - 1e-12)
    g = np.full(grid.shape, np.nan)
    g[mask] = kernel.R_values.values[mask] + np.log(dist[mask])
    return SmoothPart(g, mask, grid)
