"""The z-parameterized family of weighted solves and the stochastic solution.

Tensors over y-grid x z-grid are stored with the y axes first:
``u[y_0, ..., y_{d-1}, z_0, ..., z_{d-1}]``. z-grids must nest inside the y-grid
so that every pole z sits on a y node.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .g_operator import MultiplierTable, cutoff_mask, kernel_coefficients
from .gmc import GmcRealization, mean_and_stderr, wick_values
from .log_field import CovarianceKernel, FieldSpec, iter_field_batches, truncated_covariance
from .torus import GridField, TorusGrid, distance_field, forward_transform, sobolev_norm, torus_distance
from .weighted_solver import (
    SolveReport,
    _loglog_fit,
    assemble_operator,
    assemble_rhs,
    build_weight,
    sample_faces,
    solve_pde,
)


class FamilySolveError(RuntimeError):
    def __init__(self, failed, family):
        self.failed = failed
        self.family = family
        super().__init__(f"{len(failed)} z-slices failed to converge: {failed[:10]}")


def _check_nested(y_grid: TorusGrid, z_grid: TorusGrid):
    if y_grid.dim != z_grid.dim or y_grid.n % z_grid.n:
        raise ValueError(f"z-grid n={z_grid.n} does not nest in y-grid n={y_grid.n}")


def z_nodes(z_grid: TorusGrid) -> list[tuple]:
    return list(np.ndindex(*z_grid.shape))


@dataclass
class VectorFieldFamily:
    """Face-sampled data f(y; z).

    ``deterministic``: components has shape (d, *y_shape) and is shared by all z.
    ``parameterized``: components has shape (*z_shape, d, *y_shape).
    """

    y_grid: TorusGrid
    z_grid: TorusGrid
    components: np.ndarray
    provenance: str = "deterministic"
    descriptor: str = ""

    def __post_init__(self):
        _check_nested(self.y_grid, self.z_grid)
        d = self.y_grid.dim
        want = (d,) + self.y_grid.shape
        if self.provenance == "parameterized":
            want = self.z_grid.shape + want
        elif self.provenance != "deterministic":
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.components.shape != want:
            raise ValueError(f"components shape {self.components.shape} != {want}")
        if not np.all(np.isfinite(self.components)):
            raise ValueError("components must be finite")

    def at(self, z_index) -> np.ndarray:
        if self.provenance == "deterministic":
            return self.components
        return self.components[tuple(z_index)]


def reference_flux(y_grid: TorusGrid, z_grid: TorusGrid) -> VectorFieldFamily:
    """Deterministic smooth data f_k(y) = sin(y_{k+1 mod d}).

    For d >= 2 it is divergence free, so the solution is driven entirely by the
    variation of the weight around its pole.
    """
    d = y_grid.dim
    comps = [(lambda k: (lambda *x: np.sin(x[(k + 1) % d])))(k) for k in range(d)]
    return VectorFieldFamily(
        y_grid, z_grid, sample_faces(y_grid, comps), "deterministic", "f_k(y) = sin(y_{k+1 mod d})"
    )


@dataclass
class SolutionFamily:
    y_grid: TorusGrid
    z_grid: TorusGrid
    u: np.ndarray
    beta: float
    reports: list = field(default_factory=list, repr=False)
    band_limit: int = 0
    mode: str = "kernel"

    def __post_init__(self):
        if not self.band_limit:
            self.band_limit = self.z_grid.n // 2

    def slice_z(self, z_index) -> np.ndarray:
        d = self.y_grid.dim
        return self.u[(slice(None),) * d + tuple(z_index)]

    def at_y(self, y_index) -> np.ndarray:
        return self.u[tuple(y_index)]


def solve_family(
    f: VectorFieldFamily,
    beta: float,
    mode: str = "kernel",
    floor: float = 0.0,
    tol: float = 1e-10,
    max_iter: int = 5000,
    rule: str = "geometric",
    workers: int = 1,
) -> SolutionFamily:
    """One weighted solve per z node, pole at z."""
    yg, zg = f.y_grid, f.z_grid
    stride = yg.n // zg.n
    nodes = z_nodes(zg)

    def one(zi) -> SolveReport:
        pole = tuple(stride * k for k in zi)
        w = build_weight(yg, pole, beta, mode, floor)
        L = assemble_operator(w, rule)
        return solve_pde(L, assemble_rhs(w, f.at(zi), rule), tol=tol, max_iter=max_iter)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, nodes))
    else:
        reports = [one(zi) for zi in nodes]

    u = np.empty(yg.shape + zg.shape)
    d = yg.dim
    for zi, rep in zip(nodes, reports):
        u[(slice(None),) * d + zi] = rep.u.values
    fam = SolutionFamily(yg, zg, u, beta, reports, zg.n // 2, mode)
    failed = [zi for zi, rep in zip(nodes, reports) if not rep.converged]
    if failed:
        raise FamilySolveError(failed, fam)
    return fam


def _pad_axis(C: np.ndarray, axis: int, nc: int, nf: int) -> np.ndarray:
    """Zero-pad normalized coefficients along one axis, splitting the Nyquist mode."""
    C = np.moveaxis(C, axis, 0)
    out = np.zeros((nf,) + C.shape[1:], dtype=complex)
    half = nc // 2
    out[:half] = C[:half]
    out[nf - half + 1 :] = C[half + 1 :]
    out[half] += 0.5 * C[half]
    out[nf - half] += 0.5 * C[half]
    return np.moveaxis(out, 0, axis)


def spectral_resample(values: np.ndarray, axes, nc: int, nf: int) -> np.ndarray:
    """Trigonometric interpolation of ``values`` from nc to nf nodes per axis."""
    out = values
    for ax in axes:
        C = np.fft.fft(out, axis=ax) / nc
        out = np.fft.ifft(_pad_axis(C, ax, nc, nf), axis=ax).real * nf
    return out


def z_interpolate(fam: SolutionFamily, fine: TorusGrid) -> SolutionFamily:
    if not fine.refines(fam.z_grid):
        raise ValueError(f"fine z-grid n={fine.n} does not refine n={fam.z_grid.n}")
    d = fam.y_grid.dim
    u = spectral_resample(fam.u, range(d, 2 * d), fam.z_grid.n, fine.n)
    return SolutionFamily(fam.y_grid, fine, u, fam.beta, fam.reports, fam.band_limit, fam.mode)


@dataclass
class PhiField:
    y_grid: TorusGrid
    z_grid: TorusGrid
    phi: np.ndarray
    mode_cutoff: int
    beta: float
    table: MultiplierTable = field(repr=False, default=None)

    def at_y(self, y_index) -> np.ndarray:
        return self.phi[tuple(y_index)]


def _z_axes(d: int) -> tuple:
    return tuple(range(d, 2 * d))


def apply_G_in_z(table: MultiplierTable, tensor: np.ndarray) -> np.ndarray:
    d = table.grid.dim
    ax = _z_axes(d)
    return np.fft.ifftn(np.fft.fftn(tensor, axes=ax) * table.H_hat, axes=ax).real


def band_limit_in_z(tensor: np.ndarray, z_grid: TorusGrid, mode_cutoff: int) -> np.ndarray:
    ax = _z_axes(z_grid.dim)
    keep = cutoff_mask(z_grid, mode_cutoff)
    return np.fft.ifftn(np.fft.fftn(tensor, axes=ax) * keep, axes=ax).real


def invert_in_z(fam: SolutionFamily, kernel: CovarianceKernel | None = None, mode_cutoff: int | None = None) -> PhiField:
    """phi(y; .) = G_{beta^2}^{-1} u(y; .) on modes |n|_inf <= mode_cutoff."""
    zg = fam.z_grid
    kernel = truncated_covariance(zg) if kernel is None else kernel
    if kernel.grid != zg:
        raise ValueError("covariance kernel must live on the family's z-grid")
    table = kernel_coefficients(fam.beta**2, kernel)
    cutoff = fam.band_limit if mode_cutoff is None else int(mode_cutoff)
    keep = cutoff_mask(zg, cutoff)
    ax = _z_axes(zg.dim)
    coeffs = np.fft.fftn(fam.u, axes=ax)
    phi = np.fft.ifftn(np.where(keep, coeffs / table.H_hat, 0.0), axes=ax).real
    return PhiField(fam.y_grid, zg, phi, cutoff, fam.beta, table)


def phi_consistency(phi: PhiField, fam: SolutionFamily) -> float:
    """max |G phi - P u| with P the band limit at phi's cutoff, relative to max|u|."""
    lhs = apply_G_in_z(phi.table, phi.phi)
    rhs = band_limit_in_z(fam.u, fam.z_grid, phi.mode_cutoff)
    return float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(fam.u)), 1e-300))


def sobolev_budget(phi: PhiField, fam: SolutionFamily, y_index) -> dict:
    """Compare ||phi(y;.)||_{-s} with C ||u(y;.)||_{s}, s = (d - beta^2)/2.

    C = max over retained modes of 1/(H_hat <n>^{d - beta^2}).
    """
    zg = phi.z_grid
    s = 0.5 * (zg.dim - phi.beta**2)
    keep = cutoff_mask(zg, phi.mode_cutoff)
    C = float(np.max(1.0 / (phi.table.H_hat[keep] * zg.bracket[keep] ** (2 * s))))
    phi_norm = sobolev_norm(forward_transform(GridField(zg, phi.at_y(y_index))), -s)
    u_norm = sobolev_norm(forward_transform(GridField(zg, fam.at_y(y_index))), s)
    return {"s": s, "C": C, "phi_norm": phi_norm, "u_norm": u_norm, "holds": phi_norm <= C * u_norm * (1 + 1e-12)}


def assemble_solution(phi: PhiField, m: GmcRealization) -> GridField:
    """U(y) = sum_j phi(y; z_j) * atom_weight_j."""
    if m.grid != phi.z_grid:
        raise ValueError("GMC realization grid must match phi's z-grid")
    yg = phi.y_grid
    U = phi.phi.reshape(yg.size, -1) @ m.atom_weights.ravel()
    return GridField(yg, U.reshape(yg.shape))


@dataclass
class TargetResult:
    y: tuple
    z: tuple
    estimate: float
    stderr: float
    reference: float

    @property
    def passed(self) -> bool:
        return abs(self.estimate - self.reference) <= 3.0 * self.stderr

    def to_dict(self) -> dict:
        return {
            "y": list(self.y),
            "z": list(self.z),
            "estimate": self.estimate,
            "stderr": self.stderr,
            "reference": self.reference,
            "pass": self.passed,
        }


@dataclass
class VerificationReport:
    targets: list
    realizations: int
    beta: float

    @property
    def pass_count(self) -> int:
        return sum(t.passed for t in self.targets)

    @property
    def pass_rate(self) -> float:
        return self.pass_count / len(self.targets)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "realizations": self.realizations,
            "pass_count": self.pass_count,
            "pass_rate": self.pass_rate,
            "targets": [t.to_dict() for t in self.targets],
        }


def _flat(grid: TorusGrid, idx) -> int:
    return int(np.ravel_multi_index(tuple(int(i) % grid.n for i in idx), grid.shape))


def s_transform_mc(
    phi: PhiField,
    spec: FieldSpec,
    targets,
    M: int,
    reference=None,
    stream: str = "mc",
    batch: int = 512,
) -> VerificationReport:
    """Estimate E[U(y) exp(beta X(z) - beta^2 sigma^2/2)] for (y, z) targets.

    ``y`` indexes the y-grid and ``z`` the field grid (phi's z-grid). The
    reference defaults to (G_{beta^2} phi)(y; z); pass a SolutionFamily on the
    same z-grid to compare against solver output instead.
    """
    zg = phi.z_grid
    if spec.grid != zg:
        raise ValueError("field grid must equal phi's z-grid")
    if not math.isclose(spec.beta, phi.beta):
        raise ValueError("field beta differs from phi beta")
    if M < 1000:
        raise ValueError("need at least 1000 realizations")
    targets = [(tuple(y), tuple(z)) for y, z in targets]
    for y, z in targets:
        if torus_distance(phi.y_grid.point(y), zg.point(z)) == 0:
            raise ValueError(f"target y={y} coincides with z={z}")
    yflat = [_flat(phi.y_grid, y) for y, _ in targets]
    zflat = [_flat(zg, z) for _, z in targets]
    Phi_t = phi.phi.reshape(phi.y_grid.size, zg.size)[yflat]  # (T, Nz)
    sigma2 = truncated_covariance(zg).sigma2
    beta = spec.beta

    samples = np.empty((M, len(targets)))
    for start, X in iter_field_batches(spec, M, stream=stream, batch=batch):
        Xf = X.reshape(len(X), -1)
        wick = wick_values(Xf, sigma2, beta)
        U = (wick * zg.cell_volume) @ Phi_t.T  # (B, T)
        samples[start : start + len(X)] = U * wick[:, zflat]

    if reference is None:
        ref_tensor = apply_G_in_z(phi.table, phi.phi)
    elif isinstance(reference, SolutionFamily):
        if reference.z_grid != zg:
            raise ValueError("reference family must share phi's z-grid")
        ref_tensor = reference.u
    else:
        ref_tensor = np.asarray(reference)
    ref_flat = ref_tensor.reshape(phi.y_grid.size, zg.size)

    results = []
    for t, (y, z) in enumerate(targets):
        mean, se = mean_and_stderr(samples[:, t])
        results.append(TargetResult(y, z, mean, se, float(ref_flat[yflat[t], zflat[t]])))
    return VerificationReport(results, M, beta)


def wick_moments_mc(spec: FieldSpec, pairs, M: int, stream: str = "mc", batch: int = 512) -> list[dict]:
    """E[e^{X_b(z)}] and E[e^{X_b(z)} e^{X_b(z')}] against 1 and exp(b^2 R_N(z - z'))."""
    grid = spec.grid
    kern = truncated_covariance(grid)
    flat_pairs = [(_flat(grid, a), _flat(grid, b)) for a, b in pairs]
    singles = np.empty((M, len(pairs)))
    doubles = np.empty((M, len(pairs)))
    for start, X in iter_field_batches(spec, M, stream=stream, batch=batch):
        W = wick_values(X.reshape(len(X), -1), kern.sigma2, spec.beta)
        for t, (a, b) in enumerate(flat_pairs):
            singles[start : start + len(X), t] = W[:, a]
            doubles[start : start + len(X), t] = W[:, a] * W[:, b]
    R = kern.R_values.values
    out = []
    for t, (a, b) in enumerate(pairs):
        delta = tuple((int(i) - int(j)) % grid.n for i, j in zip(a, b))
        m1, s1 = mean_and_stderr(singles[:, t])
        m2, s2 = mean_and_stderr(doubles[:, t])
        pred = math.exp(spec.beta**2 * R[delta])
        out.append(
            {
                "z": list(a),
                "z2": list(b),
                "single": m1,
                "single_se": s1,
                "single_pass": abs(m1 - 1.0) <= 3 * s1,
                "pair": m2,
                "pair_se": s2,
                "pair_predicted": pred,
                "pair_pass": abs(m2 - pred) <= 3 * s2,
            }
        )
    return out


@dataclass
class ZRegularityReport:
    x_nodes: list
    s: float
    norms: list
    exponents: list

    @property
    def max_norm(self) -> float:
        return max(self.norms)

    @property
    def spread(self) -> float:
        return max(self.norms) / min(self.norms) if min(self.norms) > 0 else math.inf

    @property
    def min_exponent(self):
        fitted = [e for e in self.exponents if e is not None]
        return min(fitted) if fitted else None

    def to_dict(self) -> dict:
        return {
            "x_nodes": [list(x) for x in self.x_nodes],
            "s": self.s,
            "norms": self.norms,
            "max_norm": self.max_norm,
            "spread": self.spread,
            "exponents": self.exponents,
            "min_exponent": self.min_exponent,
        }


def difference_quotient_exponent(fam: SolutionFamily, x, axis: int = 0, rmax: float = np.pi):
    """Slope of log max|D_z u(x; .)| over dyadic annuli against log |x - z|.

    Returns None when u(x; .) is constant in z.
    """
    zg = fam.z_grid
    ux = fam.at_y(x)
    if np.max(np.abs(ux - ux.flat[0])) <= 1e-12 * max(np.max(np.abs(ux)), 1e-300):
        return None
    q = np.abs(np.roll(ux, -1, axis=axis) - ux) / zg.h
    mid = list(fam.y_grid.point(x))
    shift = np.zeros(zg.dim)
    shift[axis] = 0.5 * zg.h
    r = distance_field(zg, np.asarray(mid) - shift)
    edges = []
    lo = zg.h
    while lo < rmax:
        edges.append((lo, min(2 * lo, rmax)))
        lo *= 2
    rs, qs = [], []
    for a, b in edges:
        m = (r >= a) & (r < b)
        if np.any(m) and q[m].max() > 0:
            rs.append(math.sqrt(a * b))
            qs.append(q[m].max())
    if len(rs) < 2:
        return None
    return _loglog_fit(np.array(rs), np.array(qs))[0]


def z_regularity_probe(fam: SolutionFamily, x_nodes, s: float | None = None) -> ZRegularityReport:
    """Discrete H^s(z) norm of u(x; .) per x, plus the near-diagonal exponent."""
    zg = fam.z_grid
    s = zg.dim / 2 if s is None else s
    norms, exps = [], []
    for x in x_nodes:
        norms.append(sobolev_norm(forward_transform(GridField(zg, fam.at_y(x))), s))
        exps.append(difference_quotient_exponent(fam, x))
    return ZRegularityReport([tuple(x) for x in x_nodes], s, norms, exps)
