"""Wick exponentials, discrete GMC measures and their exact moments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .log_field import CovarianceKernel
from .torus import GridField, TorusGrid


@dataclass
class GmcRealization:
    grid: TorusGrid
    atom_weights: np.ndarray
    beta: float
    realization_id: int = 0

    @property
    def mass(self) -> float:
        return float(np.sum(self.atom_weights))


def wick_exponential(X: GridField, sigma2: float, beta: float) -> GridField:
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    return GridField(X.grid, np.exp(beta * X.values - 0.5 * beta**2 * sigma2))


def wick_values(X: np.ndarray, sigma2: float, beta: float) -> np.ndarray:
    """Array version of :func:`wick_exponential` (works on stacked realizations)."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    return np.exp(beta * X - 0.5 * beta**2 * sigma2)


def gmc_realization(X: GridField, sigma2: float, beta: float, realization_id: int = 0) -> GmcRealization:
    atoms = X.grid.cell_volume * wick_exponential(X, sigma2, beta).values
    return GmcRealization(X.grid, atoms, beta, realization_id)


def gmc_integrate(m: GmcRealization, psi: GridField) -> float:
    if psi.grid != m.grid:
        raise ValueError("psi and measure live on different grids")
    return float(np.sum(psi.values * m.atom_weights))


def kernel_convolve(values: np.ndarray, kernel_values: np.ndarray, h_d: float) -> np.ndarray:
    """(K * v)(x) = sum_j K(x - y_j) v(y_j) h^d, cyclic, via FFT."""
    axes = tuple(range(kernel_values.ndim))
    out = np.fft.ifftn(np.fft.fftn(kernel_values) * np.fft.fftn(values, axes=axes), axes=axes)
    return out.real * h_d


def second_moment_predict(psi: GridField, beta: float, beta2: float, kernel: CovarianceKernel) -> float:
    """sum_{j,k} psi_j psi_k exp(beta*beta2*R_N(y_j - y_k)) h^{2d}.

    The discrete analogue of E[mu_beta(psi) mu_beta2(psi)], evaluated as one
    cyclic convolution rather than a double sum.
    """
    d = psi.grid.dim
    if beta * beta2 >= d:
        raise ValueError(f"beta*beta2 = {beta * beta2:g} must be < d = {d}")
    if kernel.grid != psi.grid:
        raise ValueError("kernel and psi grids differ")
    H = np.exp(beta * beta2 * kernel.R_values.values)
    hd = psi.grid.cell_volume
    conv = kernel_convolve(psi.values, H, hd)
    return float(np.sum(psi.values * conv) * hd)


@dataclass
class MomentCheck:
    name: str
    estimate: float
    stderr: float
    predicted: float

    @property
    def z_score(self) -> float:
        return (self.estimate - self.predicted) / self.stderr if self.stderr > 0 else math.inf

    @property
    def passed(self) -> bool:
        return abs(self.estimate - self.predicted) <= 3.0 * self.stderr

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "predicted": self.predicted,
            "pass": self.passed,
        }


def mean_and_stderr(samples: np.ndarray) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    # math.fsum keeps the reduction independent of summation order
    mean = math.fsum(samples) / samples.size
    var = math.fsum((samples - mean) ** 2) / (samples.size - 1)
    return mean, math.sqrt(var / samples.size)
