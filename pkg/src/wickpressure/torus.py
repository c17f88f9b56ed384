"""Uniform periodic grids on the flat torus [0, 2pi)^d and Fourier utilities.

Coefficient convention: ``coeff(n) = N^{-d} sum_j f(x_j) exp(-i n.x_j)``, so a
constant field has ``coeff(0)`` equal to that constant. Coefficients are stored
in numpy FFT order; :meth:`TorusGrid.modes` gives the matching integer modes in
``{-N/2, ..., N/2 - 1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n_per_axis must be even and >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def volume(self) -> float:
        return TWO_PI**self.dim

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.h
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @cached_property
    def modes(self) -> tuple[np.ndarray, ...]:
        k = np.fft.fftfreq(self.n, 1.0 / self.n).astype(int)
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def mode_norm2(self) -> np.ndarray:
        """|n|^2 per mode."""
        return sum(k.astype(float) ** 2 for k in self.modes)

    @cached_property
    def bracket(self) -> np.ndarray:
        """<n> = (1 + |n|^2)^{1/2} per mode."""
        return np.sqrt(1.0 + self.mode_norm2)

    @cached_property
    def mode_sup(self) -> np.ndarray:
        """|n|_inf per mode."""
        return np.max(np.abs(np.stack(self.modes)), axis=0)

    def point(self, index) -> np.ndarray:
        return np.asarray(index, dtype=float) * self.h

    def distance_from(self, index) -> np.ndarray:
        """Torus distance from node ``index`` to every node."""
        return distance_field(self, self.point(index))

    def refines(self, coarse: "TorusGrid") -> bool:
        return self.dim == coarse.dim and self.n % coarse.n == 0

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n": self.n}


@dataclass
class GridField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("GridField values must be finite")


@dataclass
class SpectralField:
    grid: TorusGrid
    coeffs: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(f"coeffs shape {self.coeffs.shape} != grid shape {self.grid.shape}")

    def coeff(self, n) -> complex:
        """Coefficient of integer mode ``n`` (any representative mod N)."""
        idx = tuple(int(k) % self.grid.n for k in np.atleast_1d(n))
        return complex(self.coeffs[idx])


def reflect(a: np.ndarray, axes=None) -> np.ndarray:
    """a(-n) in FFT index order (index j -> -j mod N on each axis)."""
    axes = range(a.ndim) if axes is None else axes
    out = a
    for ax in axes:
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def is_hermitian(coeffs: np.ndarray, rtol: float = 1e-12) -> bool:
    scale = max(np.max(np.abs(coeffs)), 1e-300)
    return bool(np.max(np.abs(coeffs - np.conj(reflect(coeffs)))) <= rtol * scale)


def minimal_image(delta: np.ndarray) -> np.ndarray:
    """Reduce each component into [-pi, pi]."""
    return (np.asarray(delta, dtype=float) + np.pi) % TWO_PI - np.pi


def torus_distance(x, y) -> float:
    """Euclidean norm of the minimal-image difference of two points."""
    d = minimal_image(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return float(np.sqrt(np.sum(d * d)))


def distance_field(grid: TorusGrid, point) -> np.ndarray:
    point = np.broadcast_to(np.asarray(point, dtype=float), (grid.dim,))
    sq = sum(minimal_image(c - p) ** 2 for c, p in zip(grid.coords, point))
    return np.sqrt(sq)


def forward_transform(f: GridField) -> SpectralField:
    coeffs = np.fft.fftn(f.values) / f.grid.size
    return SpectralField(f.grid, coeffs, hermitian=True)


def inverse_transform(F: SpectralField, real: bool = True) -> GridField:
    """Synthesize nodal values from coefficients.

    With ``real=True`` the coefficients must be Hermitian (checked numerically,
    regardless of the flag); otherwise the real part would silently discard
    information.
    """
    if real and not is_hermitian(F.coeffs, rtol=1e-10):
        raise ValueError("non-Hermitian coefficients cannot define a real field")
    vals = np.fft.ifftn(F.coeffs) * F.grid.size
    return GridField(F.grid, vals.real)


def sobolev_norm(F: SpectralField, s: float) -> float:
    """sqrt(sum_n <n>^{2s} |coeff(n)|^2) over the representable lattice."""
    w = F.grid.bracket ** (2.0 * s)
    return float(np.sqrt(np.sum(w * np.abs(F.coeffs) ** 2)))


def weighted_lp_norm(f: GridField, w: GridField, p: float = 2.0) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if np.any(w.values < 0):
        raise ValueError("weight must be nonnegative")
    total = np.sum(np.abs(f.values) ** p * w.values) * f.grid.cell_volume
    return float(total ** (1.0 / p))
