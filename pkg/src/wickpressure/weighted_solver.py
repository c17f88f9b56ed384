"""Finite-volume solver for -div(w grad u) = div(w f) on the periodic grid.

Unknowns sit on nodes; face ``i + h/2 e_k`` joins node ``i`` to ``i + e_k`` and
is stored at index ``i`` of axis ``k``. Vector data ``f`` is sampled on the same
faces. The operator is symmetric positive semidefinite with the constants as
its nullspace; solves run preconditioned CG on the mean-zero subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .log_field import truncated_covariance
from .torus import GridField, TorusGrid, torus_distance

WEIGHT_MODES = ("kernel", "power")
FACE_RULES = ("geometric", "harmonic")


class IncompatibleRHS(ValueError):
    """Right-hand side does not sum to zero."""


@dataclass
class WeightField:
    grid: TorusGrid
    pole: tuple
    beta: float
    mode: str
    floor: float
    values: np.ndarray

    def as_field(self) -> GridField:
        return GridField(self.grid, self.values)


def power_weight(grid: TorusGrid, pole, exponent: float, floor: float = 0.0) -> np.ndarray:
    """|y - z|^exponent with the pole node set to max(floor, h^exponent).

    Accepts any exponent, including ones outside A_2.
    """
    dist = grid.distance_from(pole)
    at_pole = dist == 0
    w = np.where(at_pole, grid.h**exponent, np.where(at_pole, 1.0, dist) ** exponent)
    return np.maximum(w, floor)


def build_weight(grid: TorusGrid, pole, beta: float, mode: str = "kernel", floor: float = 0.0) -> WeightField:
    """w_z(y) for a pole on a grid node.

    ``kernel``: exp(-beta^2 R_N(y - z)), which at the pole equals
    exp(-beta^2 sigma_N^2). ``power``: |y - z|^{beta^2} with the pole floored at
    h^{beta^2}.
    """
    if mode not in WEIGHT_MODES:
        raise ValueError(f"unknown weight mode {mode!r}")
    if beta**2 >= grid.dim:
        raise ValueError(f"beta squared exceeds dimension: {beta**2:g} >= {grid.dim}")
    if floor < 0:
        raise ValueError("floor must be nonnegative")
    pole = tuple(int(p) % grid.n for p in pole)
    if len(pole) != grid.dim:
        raise ValueError("pole must have one index per axis")
    if mode == "kernel":
        R = truncated_covariance(grid).R_values.values
        w = np.maximum(np.exp(-(beta**2) * np.roll(R, pole, axis=tuple(range(grid.dim)))), floor)
    else:
        w = power_weight(grid, pole, beta**2, floor)
    return WeightField(grid, pole, beta, mode, floor, w)


def face_weights(w: np.ndarray, axis: int, rule: str = "geometric") -> np.ndarray:
    a, b = w, np.roll(w, -1, axis=axis)
    if rule == "geometric":
        return np.sqrt(a * b)
    if rule == "harmonic":
        s = a + b
        return np.where(s > 0, 2 * a * b / np.where(s > 0, s, 1.0), 0.0)
    raise ValueError(f"unknown face rule {rule!r}")


@dataclass
class DiscreteOperator:
    grid: TorusGrid
    trans: np.ndarray  # (d, *grid.shape): face weight / h^2
    rule: str = "geometric"

    def matvec(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for k in range(self.grid.dim):
            flux = self.trans[k] * (u - np.roll(u, -1, axis=k))
            out += flux - np.roll(flux, 1, axis=k)
        return out

    __call__ = matvec

    def energy_form(self, u: np.ndarray) -> float:
        """sum over faces of t_face (u_i - u_{i+e_k})^2."""
        return float(
            sum(np.sum(self.trans[k] * (u - np.roll(u, -1, axis=k)) ** 2) for k in range(self.grid.dim))
        )

    def to_sparse(self) -> sp.csr_matrix:
        g = self.grid
        idx = np.arange(g.size).reshape(g.shape)
        rows, cols, vals = [], [], []
        for k in range(g.dim):
            i = idx.ravel()
            j = np.roll(idx, -1, axis=k).ravel()
            t = self.trans[k].ravel()
            rows += [i, j, i, j]
            cols += [i, j, j, i]
            vals += [t, t, -t, -t]
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(g.size, g.size))
        return A.tocsr()


def assemble_operator(w: WeightField, rule: str = "geometric") -> DiscreteOperator:
    g = w.grid
    trans = np.stack([face_weights(w.values, k, rule) for k in range(g.dim)]) / g.h**2
    return DiscreteOperator(g, trans, rule)


def face_coords(grid: TorusGrid, axis: int) -> tuple[np.ndarray, ...]:
    c = list(grid.coords)
    c[axis] = c[axis] + 0.5 * grid.h
    return tuple(c)


def sample_faces(grid: TorusGrid, components) -> np.ndarray:
    """Evaluate ``components[k](*coords)`` at the axis-k faces."""
    return np.stack([np.broadcast_to(fk(*face_coords(grid, k)), grid.shape) for k, fk in enumerate(components)])


def assemble_rhs(w: WeightField, f, rule: str = "geometric") -> GridField:
    """Discrete div(w f) with f given on faces, shape (d, *grid.shape)."""
    g = w.grid
    f = np.asarray(f, dtype=float)
    if f.shape != (g.dim,) + g.shape:
        raise ValueError(f"f must have shape {(g.dim,) + g.shape}, got {f.shape}")
    rhs = np.zeros(g.shape)
    for k in range(g.dim):
        F = face_weights(w.values, k, rule) * f[k]
        rhs += (F - np.roll(F, 1, axis=k)) / g.h
    return GridField(g, rhs)


@dataclass
class SolveReport:
    u: GridField
    iterations: int
    residual: float
    energy: float
    converged: bool
    tol: float
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "energy": self.energy,
            "converged": self.converged,
            "tol": self.tol,
            "mean": float(np.mean(self.u.values)),
        }


def _laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    return sum(4.0 * np.sin(0.5 * k * grid.h) ** 2 for k in grid.modes)


def spectral_preconditioner(L: DiscreteOperator):
    """Inverse of the constant-coefficient operator with the mean transmissibility."""
    grid = L.grid
    sym = _laplacian_symbol(grid) * float(np.mean(L.trans))
    inv = np.zeros_like(sym)
    inv[sym > 0] = 1.0 / sym[sym > 0]

    def apply(r):
        return np.fft.ifftn(np.fft.fftn(r) * inv).real

    return apply


def solve_pde(L: DiscreteOperator, rhs, tol: float = 1e-10, max_iter: int = 5000) -> SolveReport:
    b = rhs.values if isinstance(rhs, GridField) else np.asarray(rhs, dtype=float)
    scale = float(np.sum(np.abs(b)))
    if abs(math.fsum(b.ravel())) > 1e-10 * max(scale, 1e-300):
        raise IncompatibleRHS(f"rhs sums to {math.fsum(b.ravel()):.3e}, expected 0")
    b = b - b.mean()
    grid = L.grid
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return SolveReport(GridField(grid, x), 0, 0.0, 0.0, True, tol)

    M = spectral_preconditioner(L)
    r = b.copy()
    z = M(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    history = []
    it = 0
    rel = 1.0
    while it < max_iter:
        Ap = L.matvec(p)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        r -= r.mean()
        it += 1
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if rel <= tol:
            # guard against drift of the recursive residual
            r = b - L.matvec(x)
            r -= r.mean()
            rel = float(np.linalg.norm(r)) / bnorm
            if rel <= tol:
                break
        z = M(r)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        p -= p.mean()
        rz = rz_new
    x -= x.mean()
    rel = float(np.linalg.norm(b - L.matvec(x))) / bnorm
    energy = L.energy_form(x) * grid.cell_volume
    return SolveReport(GridField(grid, x), it, rel, energy, rel <= tol, tol, history)


def green_function(L: DiscreteOperator, source, tol: float = 1e-12, max_iter: int = 5000) -> SolveReport:
    """Mean-zero solution of L G = delta_source / h^d - 1/(2pi)^d."""
    grid = L.grid
    rhs = np.full(grid.shape, -1.0 / grid.volume)
    rhs[tuple(int(s) % grid.n for s in source)] += 1.0 / grid.cell_volume
    return solve_pde(L, rhs, tol=tol, max_iter=max_iter)


def _ball(grid: TorusGrid, center, radius: float) -> np.ndarray:
    return grid.distance_from(center) <= radius * (1 + 1e-12)


def a2_constant(w, radii, centers, grid: TorusGrid | None = None) -> float:
    """sup over sampled balls of (avg w)(avg 1/w) using nodal averages."""
    if isinstance(w, WeightField):
        grid, vals = w.grid, w.values
    elif isinstance(w, GridField):
        grid, vals = w.grid, w.values
    else:
        vals = np.asarray(w, dtype=float)
        if grid is None:
            raise ValueError("grid required for a raw weight array")
    if np.any(vals <= 0):
        raise ValueError("A_2 constant needs a strictly positive weight")
    best = 1.0
    for r in radii:
        if r < 2 * grid.h * (1 - 1e-12):
            raise ValueError(f"radius {r:g} below 2h = {2 * grid.h:g}")
        for c in centers:
            m = _ball(grid, c, r)
            best = max(best, float(np.mean(vals[m]) * np.mean(1.0 / vals[m])))
    return best


def gradient_energy_density(u: np.ndarray, h: float) -> np.ndarray:
    """|grad u|^2 at nodes, averaging the two adjacent face differences per axis."""
    out = np.zeros_like(u)
    for k in range(u.ndim):
        fwd = ((np.roll(u, -1, axis=k) - u) / h) ** 2
        out += 0.5 * (fwd + np.roll(fwd, 1, axis=k))
    return out


@dataclass
class RegularityReport:
    radii: np.ndarray
    osc: np.ndarray
    energy: np.ndarray
    osc_exponent: float
    osc_residual: float
    energy_exponent: float
    energy_residual: float
    data_norm: float | None = None

    def to_dict(self) -> dict:
        return {
            "radii": self.radii.tolist(),
            "osc": self.osc.tolist(),
            "energy": self.energy.tolist(),
            "osc_exponent": self.osc_exponent,
            "osc_residual": self.osc_residual,
            "energy_exponent": self.energy_exponent,
            "energy_residual": self.energy_residual,
            "data_norm": self.data_norm,
        }


def _loglog_fit(x, y):
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    return float(slope), float(np.sqrt(np.mean((ly - slope * lx - icpt) ** 2)))


def default_probe_radii(grid: TorusGrid, count: int = 6) -> np.ndarray:
    # pi/4 is the 2pi-period counterpart of radius 1/4 on [-1, 1]^d
    if 8 * grid.h > np.pi / 4 * (1 + 1e-12):
        raise ValueError(f"n_per_axis = {grid.n} leaves less than an octave in [4h, pi/4]; need n >= 64")
    return np.geomspace(4 * grid.h, np.pi / 4, count)


def regularity_probe(u: GridField, w: WeightField, f=None, radii=None, center=None) -> RegularityReport:
    """Fit osc_{B_rho} u ~ rho^a and avg_{B_rho}|grad u|^2 dnu ~ rho^b.

    Balls are centred on the weight pole unless ``center`` is given. When face
    data ``f`` is supplied its L^2(w) average over the largest ball is reported
    as ``data_norm``.
    """
    grid = u.grid
    center = w.pole if center is None else center
    radii = default_probe_radii(grid) if radii is None else np.asarray(radii, dtype=float)
    if radii.size < 2 or np.ptp(radii) == 0:
        raise ValueError("need at least two distinct radii")
    if radii.min() < 4 * grid.h * (1 - 1e-9) or radii.max() > np.pi / 4 * (1 + 1e-9):
        raise ValueError(f"radii must lie in [4h, pi/4] = [{4 * grid.h:g}, {np.pi / 4:g}]")
    dens = gradient_energy_density(u.values, grid.h)
    osc, en = [], []
    for r in radii:
        m = _ball(grid, center, r)
        vals = u.values[m]
        osc.append(vals.max() - vals.min())
        en.append(np.sum(dens[m] * w.values[m]) / np.sum(w.values[m]))
    osc, en = np.array(osc), np.array(en)
    a, ares = _loglog_fit(radii, osc)
    b, bres = _loglog_fit(radii, en)
    data_norm = None
    if f is not None:
        m = _ball(grid, center, radii.max())
        fsq = np.sum(np.asarray(f) ** 2, axis=0)
        data_norm = float(np.sqrt(np.sum(fsq[m] * w.values[m]) / np.sum(w.values[m])))
    return RegularityReport(radii, osc, en, a, ares, b, bres, data_norm)


def green_bound_ratio(G: GridField, source, pole, beta: float, C: float = 4 * np.pi) -> float:
    """sup over x != y of |G(x)| (|x-z| v |y-z|)^{beta^2} / b(|x-y|).

    b(r) = log(C/r) for d = 2 and r^{2-d} for d = 3. The max-distance factor
    is floored at h so a source on the pole stays finite. C must exceed the
    torus diameter so that the logarithm stays positive.
    """
    grid = G.grid
    d = grid.dim
    if d < 2:
        raise ValueError("the bound is stated for d >= 2")
    if C <= np.pi * np.sqrt(d):
        raise ValueError("C must exceed the torus diameter")
    dxy = grid.distance_from(source)
    dxz = grid.distance_from(pole)
    dyz = torus_distance(grid.point(source), grid.point(pole))
    far = np.maximum(np.maximum(dxz, dyz), grid.h)
    off = dxy > 0
    base = np.log(C / dxy[off]) if d == 2 else dxy[off] ** (2.0 - d)
    return float(np.max(np.abs(G.values[off]) * far[off] ** (beta**2) / base))
