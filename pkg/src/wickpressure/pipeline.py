"""End-to-end chain: field -> GMC moments -> multiplier decay -> solution family
-> z-interpolation -> inversion -> S-transform Monte Carlo.

Every stage writes schema-checked JSON and checksummed TGF1 tensors into one
output directory. Family tensors are stored as a stack of y-grid fields, one
per z node in row-major z order.
"""

from __future__ import annotations

import json
import logging
import math
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .family import (
    FamilySolveError,
    PhiField,
    SolutionFamily,
    invert_in_z,
    phi_consistency,
    reference_flux,
    s_transform_mc,
    solve_family,
    z_interpolate,
)
from .g_operator import PositivityError, kernel_coefficients, verify_decay
from .gmc import MomentCheck, mean_and_stderr, second_moment_predict, wick_values
from .log_field import FieldSpec, iter_field_batches, sample_fields, substream, truncated_covariance
from .torus import GridField, TorusGrid
from .weighted_solver import IncompatibleRHS, assemble_operator, assemble_rhs, build_weight, green_function, solve_pde

log = logging.getLogger(__name__)

# the S-transform estimator needs at least this many realizations
MIN_MC = 1000
PASS_RATE = 0.9
CONSISTENCY_TOL = 1e-10
NUMERICAL_ERRORS = (
    io.ChecksumError,
    io.FormatError,
    FamilySolveError,
    PositivityError,
    IncompatibleRHS,
    ArithmeticError,
    np.linalg.LinAlgError,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def grid_dict(grid: TorusGrid) -> dict:
    return grid.to_dict()


def to_stack(tensor: np.ndarray, y_grid: TorusGrid, z_grid: TorusGrid) -> np.ndarray:
    """(*y, *z) -> (#z, *y)."""
    return tensor.reshape(y_grid.size, z_grid.size).T.reshape((z_grid.size,) + y_grid.shape)


def from_stack(stack: np.ndarray, y_grid: TorusGrid, z_grid: TorusGrid) -> np.ndarray:
    if stack.shape != (z_grid.size,) + y_grid.shape:
        raise io.FormatError(f"stack shape {stack.shape} does not match grids {y_grid}, {z_grid}")
    return stack.reshape(z_grid.size, y_grid.size).T.reshape(y_grid.shape + z_grid.shape)


def grids(cfg: RunConfig) -> tuple[TorusGrid, TorusGrid]:
    return TorusGrid(cfg.dim, cfg.grid_y), TorusGrid(cfg.dim, cfg.grid_z)


# ---------------------------------------------------------------- stages


def field_stage(cfg: RunConfig, manifest: io.Manifest, indices=(0,)) -> dict:
    yg, _ = grids(cfg)
    spec = FieldSpec(cfg.beta, yg, cfg.seed)
    indices = list(indices)
    X = sample_fields(spec, indices, stream="field")
    files = []
    for i, Xi in zip(indices, X):
        name = f"field_{i:06d}.tgf"
        manifest.write_tgf(name, yg, Xi)
        files.append(name)
    ens = {
        "seed": cfg.seed,
        "stream": "field",
        "grid": grid_dict(yg),
        "beta": cfg.beta,
        "count": cfg.realizations,
        "sigma2": truncated_covariance(yg).sigma2,
        "files": files,
    }
    manifest.write_json("ensemble.json", ens, "ensemble_manifest")
    return ens


def gmc_stage(cfg: RunConfig, manifest: io.Manifest, cross=(0.4, 0.6)) -> list[MomentCheck]:
    """Mass and cos-moment of mu_beta over the ensemble, plus a cross moment."""
    yg, _ = grids(cfg)
    kern = truncated_covariance(yg)
    spec = FieldSpec(cfg.beta, yg, cfg.seed)
    M = cfg.realizations
    hd = yg.cell_volume
    psi = np.cos(yg.coords[0])
    mass = np.empty(M)
    mpsi = np.empty(M)
    cross_prod = np.empty(M)
    b1, b2 = cross
    for start, X in iter_field_batches(spec, M, stream="field"):
        Xf = X.reshape(len(X), -1)
        W = wick_values(Xf, kern.sigma2, cfg.beta)
        mass[start : start + len(X)] = W.sum(axis=1) * hd
        mpsi[start : start + len(X)] = W @ psi.ravel() * hd
        cross_prod[start : start + len(X)] = (
            wick_values(Xf, kern.sigma2, b1).sum(axis=1) * wick_values(Xf, kern.sigma2, b2).sum(axis=1) * hd**2
        )
    io.write_csv(
        manifest.root / "gmc_ensemble.csv",
        ["realization_id", "mass", "psi_cos_y0"],
        ((i, mass[i], mpsi[i]) for i in range(M)),
    )
    manifest.add("gmc_ensemble.csv", "csv")

    one = GridField(yg, np.ones(yg.shape))
    checks = []
    m, se = mean_and_stderr(mass / yg.volume)
    checks.append(MomentCheck("first_moment", m, se, 1.0))
    m, se = mean_and_stderr(mpsi)
    checks.append(MomentCheck("psi_moment", m, se, float(np.sum(psi) * hd)))
    m, se = mean_and_stderr(mass**2)
    checks.append(MomentCheck("second_moment", m, se, second_moment_predict(one, cfg.beta, cfg.beta, kern)))
    if b1 * b2 < yg.dim and max(b1, b2) ** 2 < yg.dim:
        m, se = mean_and_stderr(cross_prod)
        checks.append(MomentCheck(f"cross_moment_{b1:g}_{b2:g}", m, se, second_moment_predict(one, b1, b2, kern)))
    doc = {
        "grid": grid_dict(yg),
        "beta": cfg.beta,
        "seed": cfg.seed,
        "realizations": M,
        "sigma2": kern.sigma2,
        "checks": [c.to_dict() for c in checks],
    }
    manifest.write_json("gmc_prediction.json", doc, "gmc_prediction")
    return checks


def decay_report(alpha: float, dim: int = 2, n: int = 256, tolerance: float = 0.15) -> dict:
    grid = TorusGrid(dim, n)
    table = kernel_coefficients(alpha, truncated_covariance(grid))
    positive = bool(np.all(table.H_hat > 0))
    rep = verify_decay(table, tolerance=tolerance)
    doc = rep.to_dict()
    doc.update(n_per_axis=n, positive=positive)
    doc["pass"] = bool(rep.passed and positive)
    io.validate(doc, "fit_report")
    return doc


def decay_stage(cfg: RunConfig, manifest: io.Manifest) -> dict:
    # 256 gives three octaves in the fit range; 256^3 is too large for a smoke run
    n = 256 if cfg.dim <= 2 else 128
    doc = decay_report(cfg.beta**2, cfg.dim, n)
    manifest.write_json("fit_report.json", doc, "fit_report")
    return doc


@dataclass
class FamilyArtifacts:
    family: SolutionFamily
    fine: SolutionFamily
    phi: PhiField
    consistency: float
    sidecar: dict = field(default_factory=dict)


def family_stage(cfg: RunConfig, manifest: io.Manifest) -> FamilyArtifacts:
    yg, zg = grids(cfg)
    f = reference_flux(yg, zg)
    try:
        fam = solve_family(
            f,
            cfg.beta,
            cfg.weight_mode,
            cfg.weight_floor,
            cfg.solver_tol,
            cfg.solver_max_iter,
            cfg.transmissibility,
            cfg.workers,
        )
    except FamilySolveError as exc:
        manifest.write_tgf("family.tgf", yg, to_stack(exc.family.u, yg, zg))
        raise
    manifest.write_tgf("family.tgf", yg, to_stack(fam.u, yg, zg))
    fine = z_interpolate(fam, yg)
    manifest.write_tgf("family_fine.tgf", yg, to_stack(fine.u, yg, yg))
    phi = invert_in_z(fine, mode_cutoff=cfg.cutoff)
    manifest.write_tgf("phi.tgf", yg, to_stack(phi.phi, yg, yg))
    cons = phi_consistency(phi, fine)
    sidecar = {
        "y_grid": grid_dict(yg),
        "z_grid": grid_dict(zg),
        "fine_z_grid": grid_dict(yg),
        "beta": cfg.beta,
        "mode": cfg.weight_mode,
        "floor": cfg.weight_floor,
        "rule": cfg.transmissibility,
        "flux": f.descriptor,
        "layout": "stack of y-grid fields, one per z node in row-major z order",
        "tensor": "family.tgf",
        "interpolated": "family_fine.tgf",
        "phi": "phi.tgf",
        "mode_cutoff": phi.mode_cutoff,
        "consistency": cons,
        "solves": {
            "count": len(fam.reports),
            "max_iterations": max(r.iterations for r in fam.reports),
            "max_residual": max(r.residual for r in fam.reports),
            "all_converged": all(r.converged for r in fam.reports),
        },
    }
    manifest.write_json("family.json", sidecar, "family_sidecar")
    return FamilyArtifacts(fam, fine, phi, cons, sidecar)


def load_family(cfg: RunConfig, manifest: io.Manifest) -> tuple[SolutionFamily, PhiField]:
    """Reload the interpolated family and phi, verifying checksums."""
    side = json.loads((manifest.root / "family.json").read_text())
    io.validate(side, "family_sidecar")
    yg, _ = grids(cfg)
    if side["y_grid"] != grid_dict(yg) or not math.isclose(side["beta"], cfg.beta):
        raise io.FormatError("persisted family does not match the configuration")
    g1, fine_stack = manifest.read_tgf(side["interpolated"])
    g2, phi_stack = manifest.read_tgf(side["phi"])
    if g1 != yg or g2 != yg:
        raise io.FormatError("persisted tensors live on the wrong grid")
    fine = SolutionFamily(yg, yg, from_stack(fine_stack, yg, yg), cfg.beta, band_limit=side["mode_cutoff"])
    table = kernel_coefficients(cfg.beta**2, truncated_covariance(yg))
    phi = PhiField(yg, yg, from_stack(phi_stack, yg, yg), side["mode_cutoff"], cfg.beta, table)
    return fine, phi


def pick_targets(cfg: RunConfig, count: int | None = None) -> list[tuple]:
    """Random (y, z) pairs with z on coarse z nodes and y != z."""
    yg, zg = grids(cfg)
    stride = yg.n // zg.n
    rng = substream(cfg.seed, "targets", 0)
    count = cfg.targets if count is None else count
    out = []
    while len(out) < count:
        y = tuple(int(v) for v in rng.integers(0, yg.n, yg.dim))
        z = tuple(stride * int(v) for v in rng.integers(0, zg.n, zg.dim))
        if y != z:
            out.append((y, z))
    return out


def verify_stage(cfg: RunConfig, manifest: io.Manifest, fine: SolutionFamily, phi: PhiField, targets=None) -> dict:
    yg, _ = grids(cfg)
    M = max(cfg.realizations, MIN_MC)
    targets = pick_targets(cfg) if targets is None else targets
    rep = s_transform_mc(phi, FieldSpec(cfg.beta, yg, cfg.seed), targets, M, reference=fine, stream="mc")
    doc = rep.to_dict()
    doc.update(seed=cfg.seed, threshold=PASS_RATE, **{"pass": rep.pass_rate >= PASS_RATE})
    manifest.write_json("verification.json", doc, "verification_report")
    return doc


def solve_single(cfg: RunConfig, pole) -> tuple:
    yg, zg = grids(cfg)
    pole = tuple(int(p) % yg.n for p in pole)
    w = build_weight(yg, pole, cfg.beta, cfg.weight_mode, cfg.weight_floor)
    L = assemble_operator(w, cfg.transmissibility)
    f = reference_flux(yg, zg).components
    rep = solve_pde(L, assemble_rhs(w, f, cfg.transmissibility), cfg.solver_tol, cfg.solver_max_iter)
    doc = rep.to_dict()
    doc.update(grid=grid_dict(yg), pole=list(pole), beta=cfg.beta, mode=cfg.weight_mode)
    io.validate(doc, "solve_report")
    return rep, doc


def green_single(cfg: RunConfig, source, pole) -> tuple:
    """Green column G(.; source) plus a symmetry check against a second source."""
    yg, _ = grids(cfg)
    pole = tuple(int(p) % yg.n for p in pole)
    source = tuple(int(s) % yg.n for s in source)
    other = tuple((s + yg.n // 4) % yg.n for s in source)
    w = build_weight(yg, pole, cfg.beta, cfg.weight_mode, cfg.weight_floor)
    L = assemble_operator(w, cfg.transmissibility)
    tol = min(cfg.solver_tol, 1e-12)
    rep = green_function(L, source, tol, cfg.solver_max_iter)
    rep2 = green_function(L, other, tol, cfg.solver_max_iter)
    scale = float(np.max(np.abs(rep.u.values)))
    sym = abs(rep.u.values[other] - rep2.u.values[source])
    doc = rep.to_dict()
    doc.update(
        grid=grid_dict(yg),
        pole=list(pole),
        source=list(source),
        beta=cfg.beta,
        mode=cfg.weight_mode,
        symmetry=float(sym / scale),
        converged=bool(rep.converged and rep2.converged),
    )
    io.validate(doc, "solve_report")
    return rep, doc


# ------------------------------------------------------------ aggregation


def aggregate(root) -> tuple[int, dict]:
    """Collect every JSON document under ``root`` and re-verify checksums."""
    root = Path(root)
    manifest = io.Manifest.load(root)
    bad = manifest.verify()
    docs = {}
    for name, entry in sorted(manifest.entries.items()):
        if entry["kind"] == "json" and name not in bad:
            docs[name] = json.loads((root / name).read_text())
    if bad:
        status, code = "checksum_failure", EXIT_NUMERIC
    else:
        summ = docs.get("summary.json")
        ok = summ is None or summ["status"] == "pass"
        status, code = ("pass", EXIT_PASS) if ok else ("fail", EXIT_FAIL)
    report = {"root": str(root), "status": status, "checksum_failures": bad, "documents": docs}
    io.validate(report, "report")
    return code, report


# ----------------------------------------------------------------- driver


@dataclass
class PipelineResult:
    exit_code: int
    summary: dict
    root: Path


def _check(passed, **values) -> dict:
    return {"pass": bool(passed), **values}


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    root = cfg.output_dir()
    root.mkdir(parents=True, exist_ok=True)
    manifest = io.Manifest(root)
    checks: dict[str, dict] = {}
    summary = {"experiment": cfg.experiment, "config": cfg.to_dict(), "checks": checks}
    stage = "setup"
    try:
        stage = "field"
        field_stage(cfg, manifest)

        stage = "gmc"
        for c in gmc_stage(cfg, manifest):
            checks[f"gmc_{c.name}"] = _check(c.passed, estimate=c.estimate, stderr=c.stderr, predicted=c.predicted)

        stage = "decay"
        fit = decay_stage(cfg, manifest)
        checks["multiplier_decay"] = _check(fit["pass"], slope=fit["slope"], expected=fit["expected_slope"])

        stage = "family"
        arts = family_stage(cfg, manifest)
        s = arts.sidecar["solves"]
        checks["family_solves"] = _check(s["all_converged"], max_residual=s["max_residual"], count=s["count"])
        checks["phi_consistency"] = _check(arts.consistency <= CONSISTENCY_TOL, value=arts.consistency)

        stage = "verify"
        # reload through the manifest so a damaged tensor aborts the run
        fine, phi = load_family(cfg, manifest)
        ver = verify_stage(cfg, manifest, fine, phi)
        checks["s_transform"] = _check(ver["pass"], pass_count=ver["pass_count"], targets=len(ver["targets"]), realizations=ver["realizations"])
    except NUMERICAL_ERRORS + (ValueError, RuntimeError) as exc:
        return _abort(cfg, manifest, summary, stage, exc)

    passed = all(c["pass"] for c in checks.values())
    summary["status"] = "pass" if passed else "fail"
    manifest.write_json("summary.json", summary, "summary")
    manifest.save()
    return PipelineResult(EXIT_PASS if passed else EXIT_FAIL, summary, root)


def _abort(cfg, manifest, summary, stage, exc) -> PipelineResult:
    log.error("stage %s failed: %s", stage, exc)
    summary["status"] = "error"
    summary["failure"] = {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
    failure = dict(summary["failure"], traceback=traceback.format_exception_only(type(exc), exc), retained=sorted(manifest.entries))
    io.write_json(manifest.root / "failure.json", failure)
    manifest.add("failure.json", "json")
    manifest.write_json("summary.json", summary, "summary")
    manifest.save()
    return PipelineResult(EXIT_NUMERIC, summary, manifest.root)
