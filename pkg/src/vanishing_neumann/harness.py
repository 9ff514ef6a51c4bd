"""Epsilon sweeps and the evidence checks built on them.

For every epsilon a fresh half-ball mesh graded toward the rim of
``epsilon * V`` is built; the limit and the perturbed eigenvalue are both
computed on that mesh, so the gap ``d(eps) = lambda - lambda^eps`` is a
difference of two Rayleigh-Ritz values over nested discrete spaces and is
positive exactly.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .fem.quadrature import BallIntegrator
from .fem.solvers import Field
from .frequency import FrequencyContext, UnderResolvedRadius
from .geometry.patch import PatchSpec
from .geometry.tagging import UnderResolvedPatch, tag_boundary
from .spectrum import (
    EigenMeshParams,
    build_patch_mesh,
    check_simplicity,
    compute_dirichlet_eigs,
    compute_mixed_eigs,
    estimate_vanishing_order,
    extract_psi,
)

log = logging.getLogger(__name__)

# calibrated from pilot runs of the default half-ball sweep
SLOPE_TOL = 0.3
COEFF_TOL = 0.25
BLOWUP_TOL = 0.2
# coefficient of the unit disk with psi = x_N in three dimensions (penny crack)
C_UNIT_DISK = 4.0 / 3.0


class SweepError(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


def check_diameter(epsilon: float, patch: PatchSpec, radius: float) -> None:
    """Require ``epsilon * diam(V) < radius`` so that ``epsilon V`` stays inside the flat face."""
    if epsilon * patch.diameter() >= radius:
        raise ValueError(
            f"diameter constraint violated: epsilon * diam(V) = {epsilon * patch.diameter():.4g} "
            f"must be below the domain radius {radius:.4g}"
        )


@dataclass
class SweepConfig:
    radius: float = 1.0
    patch: PatchSpec = field(default_factory=lambda: PatchSpec.disk(1.0))
    epsilons: tuple = (0.4, 0.3, 0.2, 0.15, 0.1)
    n0: int = 1
    mesh: EigenMeshParams = field(default_factory=EigenMeshParams)
    keep_fields: int = 2
    jobs: int = 1
    out_dir: Optional[str] = None

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=float)
        if len(eps) == 0 or np.any(eps <= 0):
            raise ValueError("epsilon list must contain positive values")
        if np.any(np.diff(eps) >= 0):
            raise ValueError("epsilon list must be strictly decreasing")
        check_diameter(eps[0], self.patch, self.radius)
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        self.epsilons = tuple(float(e) for e in eps)


@dataclass
class EpsilonRecord:
    epsilon: float
    lam_eps: float
    lam: float
    d: float
    fingerprint: str
    n_vertices: int
    under_resolved: bool = False
    spectrum: list = field(default_factory=list)
    seconds: float = 0.0
    fields: Optional[dict] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        # wall time is logged, not reported, so that reports are reproducible
        d.pop("fields")
        d.pop("seconds")
        return d


def _solve_one(cfg: SweepConfig, eps: float, keep: bool) -> EpsilonRecord:
    t0 = time.perf_counter()
    mesh = build_patch_mesh(cfg.radius, cfg.patch, eps, cfg.mesh)
    count = cfg.n0 + 1
    dirichlet = compute_dirichlet_eigs(tag_boundary(mesh, None, 0.0), count)
    check_simplicity(dirichlet.values, cfg.n0)
    under = False
    try:
        tagged = tag_boundary(mesh, cfg.patch, eps)
    except UnderResolvedPatch:
        # keep going with the coarse tagging; the point is excluded from fits
        under = True
        tagged = tag_boundary(mesh, cfg.patch, eps, min_patch_facets=1)
    mixed = compute_mixed_eigs(tagged, cfg.n0, reference=dirichlet.pairs)
    i = cfg.n0 - 1
    lam, lam_e = dirichlet.values[i], mixed.values[i]
    fields = None
    if keep:
        fields = {"dirichlet": dirichlet.pairs[i].field, "mixed": mixed.pairs[i].field}
    return EpsilonRecord(eps, float(lam_e), float(lam), float(lam - lam_e), mesh.fingerprint(),
                         mesh.n_vertices, under, dirichlet.values.tolist(),
                         time.perf_counter() - t0, fields)


def fit_rate(eps: Sequence[float], d: Sequence[float]) -> dict:
    """Least squares of ``ln d`` against ``ln eps``."""
    eps = np.asarray(eps, dtype=float)
    d = np.asarray(d, dtype=float)
    if len(eps) != len(d):
        raise ValueError("eps and d differ in length")
    if len(eps) < 3:
        raise ValueError("rate fit needs at least 3 points")
    if np.any(d <= 0) or np.any(eps <= 0):
        raise ValueError("rate fit needs positive eps and d")
    res = stats.linregress(np.log(eps), np.log(d))
    return {"slope": float(res.slope), "intercept": float(res.intercept),
            "stderr": float(res.stderr), "intercept_stderr": float(res.intercept_stderr)}


@dataclass
class SweepResult:
    config: SweepConfig
    records: list
    gamma_hat: float
    gamma: int
    c: float
    psi_coefficients: list
    fit: dict
    exponent: int
    C_pred: Optional[float]
    C_unit: Optional[float]
    frequency: dict = field(default_factory=dict)

    @property
    def eps(self) -> np.ndarray:
        return np.array([r.epsilon for r in self.records])

    @property
    def d(self) -> np.ndarray:
        return np.array([r.d for r in self.records])

    @property
    def C_emp(self) -> np.ndarray:
        return self.d / self.eps ** self.exponent

    def record(self, eps: float) -> EpsilonRecord:
        for r in self.records:
            if abs(r.epsilon - eps) <= 1e-12 * eps:
                return r
        raise KeyError(eps)

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {"radius": cfg.radius, "patch": cfg.patch.to_dict(),
                       "epsilons": list(cfg.epsilons), "n0": cfg.n0, "mesh": asdict(cfg.mesh)},
            "records": [r.to_dict() for r in self.records],
            "C_emp": self.C_emp.tolist(),
            "gamma_hat": self.gamma_hat, "gamma": self.gamma, "c": self.c,
            "psi_coefficients": self.psi_coefficients,
            "fit": self.fit, "exponent": self.exponent,
            "C_pred": self.C_pred, "C_unit": self.C_unit,
            "frequency": self.frequency,
        }

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / "sweep.json", "csv": out / "sweep.csv",
                 "plot": out / "sweep_loglog.dat", "plot_script": out / "sweep_loglog.plot"}
        paths["json"].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        with open(paths["csv"], "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epsilon", "lambda_eps", "lambda", "d", "C_emp"])
            for r, ce in zip(self.records, self.C_emp):
                wr.writerow([repr(r.epsilon), repr(r.lam_eps), repr(r.lam), repr(r.d), repr(float(ce))])
        with open(paths["plot"], "w") as fh:
            fh.write("# ln(epsilon) ln(d)\n")
            for e, d in zip(self.eps, self.d):
                fh.write(f"{np.log(e):.17g} {np.log(d):.17g}\n")
        paths["plot_script"].write_text(
            "# gnuplot: log-log rate plot with the fitted line\n"
            f"slope = {self.fit.get('slope', float('nan')):.17g}\n"
            f"intercept = {self.fit.get('intercept', float('nan')):.17g}\n"
            "set xlabel 'ln eps'; set ylabel 'ln d'\n"
            "plot 'sweep_loglog.dat' using 1:2 with points title 'd(eps)', "
            "intercept + slope*x title 'fit'\n"
        )
        return {k: str(v) for k, v in paths.items()}


def _blowup_data(cfg: SweepConfig, rec: EpsilonRecord, fit_radius: Optional[float]):
    phi = rec.fields["dirichlet"]
    mesh = phi.mesh
    ctx = FrequencyContext(mesh)
    radii = []
    for r in np.geomspace(0.02, 0.4, 16) * cfg.radius:
        try:
            ctx.check([r])
            radii.append(float(r))
        except UnderResolvedRadius:
            continue
    if len(radii) < 1:
        raise SweepError("no resolved radius near 0 for the vanishing order")
    vo = estimate_vanishing_order(phi, rec.lam, radii[:4], ctx)
    if fit_radius is None:
        # smallest radius (at least 0.1 of the domain) holding 6 local mesh sizes
        cen = np.linalg.norm(mesh.centroids(), axis=1)
        diam = mesh.cell_diameters()
        for r in np.geomspace(0.1, 0.5, 17) * cfg.radius:
            if r >= 6 * float(diam[cen < r].max()):
                fit_radius = float(r)
                break
        else:
            raise SweepError("mesh too coarse near 0 to fit the blow-up polynomial")
    fit = extract_psi(phi, vo.gamma, fit_radius)
    return vo, fit


def phi_dim(rec: EpsilonRecord) -> int:
    return rec.fields["dirichlet"].mesh.dim


def run_epsilon_sweep(config: SweepConfig, C_unit: Optional[float] = None,
                      fit_radius: Optional[float] = None) -> SweepResult:
    """Run the per-epsilon solves and assemble the rate and coefficient evidence.

    ``C_unit`` is the coefficient of the patch for the unit-coefficient
    blow-up polynomial (``psi = x_N``); when omitted and the patch is the
    unit disk the closed-form value ``4/3`` is used.
    """
    cfg = config
    keep = set(sorted(cfg.epsilons)[: cfg.keep_fields])
    records: dict = {}
    try:
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
                futs = {e: ex.submit(_solve_one, cfg, e, e in keep) for e in cfg.epsilons}
                for e, f in futs.items():
                    records[e] = f.result()
        else:
            for e in cfg.epsilons:
                records[e] = _solve_one(cfg, e, e in keep)
                log.info("eps=%g d=%.6g (%.1fs)", e, records[e].d, records[e].seconds)
    except Exception as exc:
        partial = [records[e] for e in cfg.epsilons if e in records]
        if cfg.out_dir:
            Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
            (Path(cfg.out_dir) / "sweep_partial.json").write_text(
                json.dumps([r.to_dict() for r in partial], indent=2))
        raise SweepError(f"sweep aborted at some epsilon: {exc}", partial) from exc
    recs = [records[e] for e in cfg.epsilons]  # keyed by epsilon, order independent of completion
    eps_min = min(cfg.epsilons)
    vo, fit = _blowup_data(cfg, records[eps_min], fit_radius)
    k = phi_dim(records[eps_min]) + 2 * vo.gamma - 2
    ok = [r for r in recs if not r.under_resolved]
    rate = fit_rate([r.epsilon for r in ok], [r.d for r in ok]) if len(ok) >= 3 else {}
    c = float(fit.psi.coefficients[0]) if vo.gamma == 1 else float(np.linalg.norm(fit.psi.coefficients))
    if C_unit is None and vo.gamma == 1 and cfg.patch.kind == "disk":
        C_unit = C_UNIT_DISK * cfg.patch.radius ** 3
    C_pred = None
    if C_unit is not None and vo.gamma == 1:
        C_pred = c * c * C_unit
    freq = {"gamma_hat": vo.gamma_hat, "radii": vo.series.radii.tolist(), "N": vo.series.N.tolist(),
            "fit_condition": fit.condition, "fit_points": fit.n_points}
    res = SweepResult(cfg, recs, vo.gamma_hat, vo.gamma, c, list(fit.psi.coefficients), rate, k,
                      C_pred, C_unit, freq)
    if cfg.out_dir:
        res.write(cfg.out_dir)
    return res


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------
def sandwich_check(result: SweepResult, C_unit_disk: float = C_UNIT_DISK,
                   tol: float = COEFF_TOL) -> dict:
    """Inscribed / circumscribed disk bounds on ``C_emp(eps_min)``."""
    patch = result.config.patch
    if patch.kind not in ("disk", "polygon", "radial"):
        raise ValueError(f"cannot compute the inscribed/circumscribed radii of {patch.kind!r}")
    rV, RV = patch.inradius(), patch.circumradius()
    k = result.exponent
    base = result.c ** 2 * C_unit_disk
    lower = base * rV ** k * (1 - tol)
    upper = base * RV ** k * (1 + tol)
    ce = float(result.C_emp[-1])
    return {"r_V": rV, "R_V": RV, "lower": lower, "upper": upper, "C_emp": ce,
            "epsilon": float(result.eps[-1]), "pass": bool(lower <= ce <= upper)}


def _ball_norms(f: Field, r: float, integ: Optional[BallIntegrator] = None) -> tuple[float, float]:
    integ = integ or BallIntegrator(f.mesh)
    I = integ.integrals(f.values, r)
    return I["l2"], I["grad2"]


def blowup_norm_check(fields: dict, R: float, U: Field, c: float, gamma: int = 1,
                      tol: float = BLOWUP_TOL, U_norms: Optional[tuple] = None,
                      check_normalization: bool = True, reference_fields: Optional[dict] = None,
                      psi=None) -> dict:
    """Scaled norms of ``phi^eps`` on ``B_{R eps}^+`` against those of ``c U`` on ``B_R^+``.

    ``fields`` maps epsilon to the perturbed eigenfield (L2-normalized).
    ``reference_fields`` optionally maps epsilon to the limit eigenfield on
    the same mesh; its scaled norms are compared with those of ``psi`` (the
    blow-up polynomial including ``c``) and reported as ``baseline_L2`` and
    ``baseline_H1``.  These measure how far the limit eigenfunction itself
    is from its blow-up on ``B_{R eps}^+``, i.e. the part of the deviation
    that is not caused by the patch.
    """
    if len(fields) < 2:
        raise ValueError("need fields for at least two epsilon values")
    N = U.mesh.dim
    if U_norms is None:
        U_norms = _ball_norms(U, R)
    uL2, uH1 = c * c * U_norms[0], c * c * U_norms[1]
    rows = []
    for eps in sorted(fields, reverse=True):
        f = fields[eps]
        extent = float(np.linalg.norm(f.mesh.vertices, axis=1).max())
        if R * eps >= extent:
            raise ValueError(f"B_(R eps) with R eps = {R * eps} leaves the mesh")
        integ = BallIntegrator(f.mesh)
        l2, h1 = _ball_norms(f, R * eps, integ)
        # total mass over the whole mesh: 1 for an L2-normalized eigenfield
        mass = integ.integrals(f.values, 2 * extent)["l2"]
        rows.append({"epsilon": eps,
                     "ratio_L2": eps ** (-N - 2 * gamma) * l2 / uL2,
                     "ratio_H1": eps ** (-N - 2 * gamma + 2) * h1 / uH1,
                     "norm2": mass})
        if reference_fields and eps in reference_fields and psi is not None:
            l2r, h1r = _ball_norms(reference_fields[eps], R * eps, integ)
            rows[-1]["baseline_L2"] = eps ** (-N - 2 * gamma) * l2r / psi.l2_ball(R)
            rows[-1]["baseline_H1"] = eps ** (-N - 2 * gamma + 2) * h1r / psi.energy(R)
    last, prev = rows[-1], rows[-2]
    dev = lambda row: max(abs(row["ratio_L2"] - 1), abs(row["ratio_H1"] - 1))
    improving = (abs(last["ratio_L2"] - 1) < abs(prev["ratio_L2"] - 1)
                 and abs(last["ratio_H1"] - 1) < abs(prev["ratio_H1"] - 1))
    normalized = all(abs(r["norm2"] - 1) < 1e-3 for r in rows)
    if check_normalization and not normalized:
        log.warning("eigenfields are not L2-normalized (norms^2 %s); ratios carry that factor",
                    [round(r["norm2"], 6) for r in rows])
    return {"R": R, "rows": rows, "normalized": bool(normalized), "improving": bool(improving),
            "within_tol": bool(dev(last) <= tol), "tol": tol,
            "pass": bool(improving and dev(last) <= tol)}


def eigen_convergence_check(result: SweepResult, nested: bool = True) -> dict:
    """``d(eps) > 0``, nonincreasing as eps decreases, and ``d(eps_min) < 0.1 lambda``."""
    if len(result.records) < 3:
        raise ValueError("convergence check needs at least 3 epsilon values")
    d = result.d
    lam = np.array([r.lam for r in result.records])
    positive = bool(np.all(d > 0))
    monotone = bool(np.all(np.diff(d) <= 0))
    small = bool(d[-1] < 0.1 * lam[-1])
    status = "PASS" if positive and small and monotone else "FAIL"
    if positive and small and not monotone and not nested:
        status = "WARN"
    return {"positive": positive, "monotone": monotone, "small": small, "status": status,
            "pass": status == "PASS"}
