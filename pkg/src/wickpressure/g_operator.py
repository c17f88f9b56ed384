"""The convolution operator G_alpha as a Fourier multiplier.

``G_alpha phi(z) = int exp(alpha R_N(z - y)) phi(y) dy``. On the grid the
integral is the cyclic sum with weight h^d, so G multiplies the normalized
coefficients of phi by ``H_hat(n) = h^d sum_j exp(alpha R_N(x_j)) e^{-i n.x_j}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .log_field import CovarianceKernel
from .torus import SpectralField, TorusGrid


class PositivityError(RuntimeError):
    """A kernel coefficient came out nonpositive."""


@dataclass
class MultiplierTable:
    alpha: float
    grid: TorusGrid
    H_hat: np.ndarray


def kernel_coefficients(alpha: float, kernel: CovarianceKernel) -> MultiplierTable:
    grid = kernel.grid
    if not 0 < alpha < grid.dim:
        raise ValueError(f"alpha must lie in (0, d), got {alpha}")
    H = np.exp(alpha * kernel.R_values.values)
    H_hat = np.fft.fftn(H).real * grid.cell_volume
    bad = np.argwhere(H_hat <= 0)
    if bad.size:
        raise PositivityError(f"{len(bad)} nonpositive kernel coefficients, first at index {tuple(bad[0])}")
    return MultiplierTable(alpha, grid, H_hat)


@dataclass
class DecayReport:
    alpha: float
    d: int
    slope: float
    intercept: float
    residual: float
    tolerance: float
    bins: list = field(default_factory=list)

    @property
    def expected_slope(self) -> float:
        return self.alpha - self.d

    @property
    def passed(self) -> bool:
        return abs(self.slope - self.expected_slope) <= self.tolerance

    @property
    def band(self) -> tuple[float, float]:
        """Min and max of H_hat / <n>^{alpha-d} over the fit range."""
        return min(b["ratio_min"] for b in self.bins), max(b["ratio_max"] for b in self.bins)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "d": self.d,
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "expected_slope": self.expected_slope,
            "pass": self.passed,
            "bins": self.bins,
        }


def verify_decay(table: MultiplierTable, kmin: float = 8.0, tolerance: float = 0.15) -> DecayReport:
    """Fit log H_hat against log <n> over dyadic shells kmin <= |n| <= N/4.

    Each shell contributes its mean (log <n>, log H_hat) so that the densely
    populated outer shells do not dominate the fit. When the range holds fewer
    than three octaves (N < 256 with kmin = 8) the shells are split at half
    octaves so the fit still has at least two points.
    """
    grid = table.grid
    if grid.n < 64:
        raise ValueError("decay fit needs n_per_axis >= 64")
    kmax = grid.n / 4
    if kmin >= kmax:
        raise ValueError(f"kmin = {kmin:g} leaves an empty fit range (N/4 = {kmax:g})")
    ratio = 2.0 if kmax / kmin >= 8 else math.sqrt(2.0)
    absn = np.sqrt(grid.mode_norm2)
    logb = np.log(grid.bracket)
    logH = np.log(table.H_hat)
    law = table.alpha - grid.dim
    xs, ys, bins = [], [], []
    k = kmin
    while k < kmax * (1 - 1e-12):
        hi = min(ratio * k, kmax)
        last = hi >= kmax * (1 - 1e-12)
        m = (absn >= k) & ((absn <= kmax) if last else (absn < hi))
        ratio_n = table.H_hat[m] * grid.bracket[m] ** (-law)
        xs.append(logb[m].mean())
        ys.append(logH[m].mean())
        bins.append(
            {
                "k": float(k),
                "Hmin": float(table.H_hat[m].min()),
                "Hmax": float(table.H_hat[m].max()),
                "ratio_min": float(ratio_n.min()),
                "ratio_max": float(ratio_n.max()),
            }
        )
        k = hi
    xs, ys = np.array(xs), np.array(ys)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = float(np.sqrt(np.mean((ys - (slope * xs + intercept)) ** 2)))
    return DecayReport(table.alpha, grid.dim, float(slope), float(intercept), resid, tolerance, bins)


def _check_grid(table: MultiplierTable, grid: TorusGrid):
    if table.grid != grid:
        raise ValueError(f"grid mismatch: table on {table.grid}, field on {grid}")


def apply_G(table: MultiplierTable, u: SpectralField) -> SpectralField:
    _check_grid(table, u.grid)
    return SpectralField(u.grid, table.H_hat * u.coeffs, u.hermitian)


def cutoff_mask(grid: TorusGrid, mode_cutoff: int) -> np.ndarray:
    if mode_cutoff <= 0:
        raise ValueError("mode_cutoff must be positive")
    if mode_cutoff > grid.n // 2:
        raise ValueError(f"mode_cutoff {mode_cutoff} exceeds N/2 = {grid.n // 2}")
    return grid.mode_sup <= mode_cutoff


def invert_G(table: MultiplierTable, f: SpectralField, mode_cutoff: int) -> SpectralField:
    """Mode-wise division by H_hat; modes with |n|_inf > mode_cutoff are zeroed."""
    _check_grid(table, f.grid)
    keep = cutoff_mask(f.grid, mode_cutoff)
    coeffs = np.where(keep, f.coeffs / table.H_hat, 0.0)
    return SpectralField(f.grid, coeffs, f.hermitian)


def amplification(table: MultiplierTable, mode_cutoff: int) -> float:
    """Largest gain 1/H_hat(n) of :func:`invert_G` over the retained modes."""
    keep = cutoff_mask(table.grid, mode_cutoff)
    return float(np.max(1.0 / table.H_hat[keep]))


def sobolev_band(table: MultiplierTable, active: np.ndarray | None = None) -> tuple[float, float]:
    """[c, C] = min/max of H_hat(n) <n>^{d-alpha} over ``active`` modes."""
    r = table.H_hat * table.grid.bracket ** (table.grid.dim - table.alpha)
    if active is not None:
        r = r[active]
    return float(r.min()), float(r.max())


def project_between_chaoses(
    phi: SpectralField, beta: float, beta2: float, kernel: CovarianceKernel
) -> SpectralField:
    """phi_{beta2} with G_{beta*beta2} phi = G_{beta2^2} phi_{beta2}, mode-wise."""
    d = kernel.grid.dim
    if not (0 < beta < np.sqrt(d) and 0 < beta2 < np.sqrt(d)):
        raise ValueError("beta and beta2 must lie in (0, sqrt(d))")
    if beta * beta2 >= d or beta2**2 >= d:
        raise ValueError("need beta*beta2 < d and beta2^2 < d")
    if kernel.grid != phi.grid:
        raise ValueError(f"grid mismatch: kernel on {kernel.grid}, field on {phi.grid}")
    if beta == beta2:
        return SpectralField(phi.grid, phi.coeffs.copy(), phi.hermitian)
    num = kernel_coefficients(beta * beta2, kernel).H_hat
    den = kernel_coefficients(beta2**2, kernel).H_hat
    return SpectralField(phi.grid, num / den * phi.coeffs, phi.hermitian)
