"""Command line entry point.

Subcommands ``mesh``, ``eig``, ``profile``, ``frequency``, ``sweep`` and
``report`` read one configuration document (JSON, or YAML by extension) and
write reproducible reports into the output directory.

Exit codes: 0 success, 1 a requested ``--check`` failed, 2 numerical
failure, 3 configuration or usage error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import warnings
from importlib import metadata
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import yaml

log = logging.getLogger("vanishing_neumann")

EXIT_OK, EXIT_CHECK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "domain": _obj({
        "kind": {"enum": ["half_ball"]},
        "radius": _pos,
        "dim": {"enum": [3]},
    }, required=["radius"]),
    "patch": _obj({
        "kind": {"enum": ["disk", "square", "polygon", "radial"]},
        "radius": _pos,
        "half_side": _pos,
        "vertices": {"type": "array", "items": {"type": "array", "items": _num,
                                                "minItems": 2, "maxItems": 2}},
        "rho": {"type": "array", "items": _pos},
    }, required=["kind"]),
    "sweep": _obj({
        "epsilon_list": {"type": "array", "items": _pos, "minItems": 1},
        "epsilon": {"type": "number", "minimum": 0},
        "n0": {"type": "integer", "minimum": 1},
    }),
    "numerics": _obj({
        "h_far": _pos,
        "grading": _obj({
            "rim_resolution": _pos, "slope": _pos, "near_patch": _pos,
            "h_origin": _pos, "origin_reach": _pos,
        }),
        "boundary": {"enum": ["dirichlet", "mixed", "neumann_face"]},
        "count": {"type": "integer", "minimum": 1},
        "tolerances": _obj({"slope": _pos, "coefficient": _pos, "blowup": _pos, "eigen": _pos}),
        "R_list": {"type": "array", "items": _pos, "minItems": 2},
        "h_rim": _pos,
        "far": _pos,
        "psi": _obj({"gamma": {"type": "integer", "minimum": 1},
                     "coefficients": {"type": "array", "items": _num}}),
        "radii": {"type": "array", "items": _pos},
        "blowup_R": _pos,
        "doubling_cap": _pos,
    }),
    "outputs": _obj({
        "dir": {"type": "string"},
        "formats": {"type": "array", "items": {"enum": ["json", "csv", "mesh", "plot"]}},
    }),
}, required=["domain"])

DEFAULTS = {
    "domain": {"kind": "half_ball", "dim": 3},
    "patch": {"kind": "disk", "radius": 1.0},
    "sweep": {"epsilon_list": [0.4, 0.3, 0.2, 0.15, 0.1], "epsilon": 0.0, "n0": 1},
    "numerics": {
        "h_far": 0.12, "grading": {}, "boundary": "dirichlet", "count": 3,
        "tolerances": {"slope": 0.3, "coefficient": 0.25, "blowup": 0.2, "eigen": 1e-8},
        "R_list": [4.0, 8.0, 16.0], "h_rim": 0.02, "far": 0.35,
        "psi": {"gamma": 1, "coefficients": [1.0]}, "radii": None, "blowup_R": 4.0,
        "doubling_cap": 50.0,
    },
    "outputs": {"dir": "out", "formats": ["json", "csv", "mesh", "plot"]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _error_path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate_config(raw: dict) -> dict:
    """Schema check, defaults and cross-field constraints; returns the full config."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.path))
    if errors:
        msgs = []
        for e in errors:
            if e.validator == "required":
                missing = [k for k in e.validator_value if k not in e.instance]
                msgs.append(f"missing key {'/'.join(missing)} in {_error_path(e)}")
            elif e.validator == "additionalProperties":
                extra = sorted(set(e.instance) - set(e.schema["properties"]))
                msgs.append(f"unknown key {', '.join(extra)} in {_error_path(e)}")
            else:
                msgs.append(f"{_error_path(e)}: {e.message}")
        raise ConfigError("; ".join(msgs))
    cfg = _merge(DEFAULTS, raw)
    from .geometry.patch import PatchError

    try:
        patch = patch_from(cfg)
    except (PatchError, KeyError) as exc:
        raise ConfigError(f"invalid patch: {exc}") from exc
    eps_list = cfg["sweep"]["epsilon_list"]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("sweep.epsilon_list must be strictly decreasing")
    r0 = cfg["domain"]["radius"]
    for eps in [max(eps_list), cfg["sweep"]["epsilon"]]:
        if eps * patch.diameter() >= r0:
            raise ConfigError(
                f"diameter constraint violated: epsilon * diam(V) = {eps * patch.diameter():.4g} "
                f"must be below the domain radius r0 = {r0:.4g}"
            )
    psi = cfg["numerics"]["psi"]
    from .polynomials import harmonic_odd_basis

    nb = len(harmonic_odd_basis(3, psi["gamma"]))
    if len(psi["coefficients"]) != nb:
        raise ConfigError(f"numerics.psi.coefficients needs {nb} entries for gamma={psi['gamma']}")
    return cfg


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text) if p.suffix in (".yml", ".yaml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def versions() -> dict:
    out = {}
    for name in ("artifact", "numpy", "scipy", "pyamg", "sympy"):
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


# ---------------------------------------------------------------------------
# builders from a validated config
# ---------------------------------------------------------------------------
def patch_from(cfg: dict):
    from .geometry.patch import PatchSpec

    p = cfg["patch"]
    if p["kind"] == "disk":
        return PatchSpec.disk(p.get("radius", 1.0))
    if p["kind"] == "square":
        return PatchSpec.square(p.get("half_side", 1.0))
    return PatchSpec.from_dict(p)


def psi_from(cfg: dict):
    from .polynomials import PsiSpec

    p = cfg["numerics"]["psi"]
    return PsiSpec(p["gamma"], tuple(p["coefficients"]), 3)


def mesh_params(cfg: dict):
    from .spectrum import EigenMeshParams

    return EigenMeshParams(h_far=cfg["numerics"]["h_far"], **cfg["numerics"]["grading"])


def profile_numerics(cfg: dict):
    from .profile import ProfileNumerics

    n = cfg["numerics"]
    return ProfileNumerics(R_factors=tuple(n["R_list"]), h_rim=n["h_rim"], far=n["far"])


def _mesh_for(cfg: dict, epsilon: float):
    from .spectrum import build_patch_mesh

    patch = patch_from(cfg) if epsilon > 0 else None
    return build_patch_mesh(cfg["domain"]["radius"], patch, epsilon, mesh_params(cfg))


def _tagging(cfg: dict, mesh, epsilon: float):
    from .geometry.tagging import tag_boundary, whole_flat_face

    mode = cfg["numerics"]["boundary"]
    if mode == "neumann_face":
        return whole_flat_face(mesh)
    if mode == "dirichlet":
        return tag_boundary(mesh, None, 0.0)
    return tag_boundary(mesh, patch_from(cfg), epsilon)


class Output:
    def __init__(self, cfg: dict, out_dir, command: str):
        self.cfg = cfg
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.formats = set(cfg["outputs"]["formats"])

    def meta(self) -> dict:
        return {"command": self.command, "config_hash": config_hash(self.cfg),
                "versions": versions()}

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        doc = {"meta": self.meta(), **payload}
        path.write_text(json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n")
        print(f"wrote {path}")
        return path


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def save_field(path, field, lam: Optional[float] = None) -> None:
    np.savez(path, vertices=field.mesh.vertices, cells=field.mesh.cells, values=field.values,
             **({} if lam is None else {"lam": np.float64(lam)}))


def load_field(path):
    from .fem.solvers import Field
    from .geometry.mesh import Mesh

    with np.load(path) as z:
        mesh = Mesh(z["vertices"], z["cells"])
        return Field(mesh, np.array(z["values"]))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_mesh(cfg: dict, args) -> int:
    from .geometry.io import write_mesh

    out = Output(cfg, args.out, "mesh")
    eps = cfg["sweep"]["epsilon"]
    mesh = _mesh_for(cfg, eps)
    tagged = _tagging(cfg, mesh, eps)
    path = Path(args.mesh_out) if args.mesh_out else out.dir / "mesh.txt"
    write_mesh(path, tagged)
    r = cfg["domain"]["radius"]
    exact = 2.0 * np.pi * r ** 3 / 3.0
    summary = {
        "mesh_file": str(path), "fingerprint": mesh.fingerprint(),
        "n_vertices": mesh.n_vertices, "n_cells": mesh.n_cells,
        "volume": mesh.total_volume(), "exact_half_ball_volume": exact,
        "min_dihedral_angle_deg": float(mesh.min_dihedral_angle()),
        "max_cell_diameter": float(mesh.cell_diameters().max()),
        "facet_counts": tagged.counts(), "epsilon": eps,
    }
    print(f"wrote {path}")
    print(f"volume {summary['volume']:.6f} (half ball {exact:.6f}); "
          f"{mesh.n_vertices} vertices, {mesh.n_cells} cells; "
          f"min dihedral angle {summary['min_dihedral_angle_deg']:.2f} deg")
    out.json("mesh.json", summary)
    return EXIT_OK


def cmd_eig(cfg: dict, args) -> int:
    from .spectrum import compute_dirichlet_eigs, compute_mixed_eigs

    out = Output(cfg, args.out, "eig")
    eps = cfg["sweep"]["epsilon"]
    mode = cfg["numerics"]["boundary"]
    mesh = _mesh_for(cfg, eps if mode == "mixed" else 0.0)
    tagged = _tagging(cfg, mesh, eps)
    count = cfg["numerics"]["count"]
    tol = cfg["numerics"]["tolerances"]["eigen"]
    if mode == "dirichlet":
        res = compute_dirichlet_eigs(tagged, count, tol)
    else:
        res = compute_mixed_eigs(tagged, count, tol=tol)
    files = []
    for i, p in enumerate(res.pairs):
        f = out.dir / f"field_{i + 1}.npz"
        save_field(f, p.field, p.value)
        files.append(f.name)  # relative to the report, so outputs do not depend on --out
    for i, v in enumerate(res.values):
        print(f"lambda_{i + 1} = {v:.10g}")
    out.json("spectrum.json", {"boundary": mode, **res.to_dict(), "fields": files,
                               "facet_counts": tagged.counts()})
    return EXIT_OK


def cmd_profile(cfg: dict, args) -> int:
    from .fem.quadrature import BallIntegrator
    from .profile import (
        compute_C,
        compute_chi,
        compute_flux_identity,
        compute_g_R,
        chi_closed_form,
        profile_U,
        scaling_self_test,
    )

    out = Output(cfg, args.out, "profile")
    patch, psi = patch_from(cfg), psi_from(cfg)
    numerics = profile_numerics(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = compute_C(patch, psi, numerics)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for note in rep.warnings:
        print(f"warning: {note}", file=sys.stderr)
    payload = {"report": rep.to_dict()}
    print(f"m = {rep.m_extrapolated:.8g}, C = {rep.C:.8g} (R = {rep.R_list})")
    status = EXIT_OK
    checks = args.check or []
    if "chi" in checks:
        if psi.is_zero():
            raise ConfigError("--check chi needs a nonzero psi")
        U = profile_U(rep)
        rows = []
        for r, tol in ((1.0, 0.02), (2.0, 0.05)):
            val = compute_chi(U, r, psi)
            ref = chi_closed_form(r, psi, rep.m_extrapolated)
            err = abs(val - ref) / abs(ref)
            rows.append({"r": r, "chi": val, "closed_form": ref, "relative_error": err,
                         "tol": tol, "pass": bool(err <= tol)})
            print(f"{'PASS' if err <= tol else 'FAIL'} chi({r:g}) = {val:.6g} vs {ref:.6g} "
                  f"(rel err {err:.2e}, tol {tol})")
        gR = {R: compute_g_R(R, patch, psi, rep.nested) for R in rep.R_list[:2]}
        flux = compute_flux_identity(U, rep.R_list[0], psi, rep.m_extrapolated,
                                     BallIntegrator(U.mesh))
        payload["chi"] = rows
        payload["g_R"] = {str(k): {a: b for a, b in v.items() if a != "field"}
                          for k, v in gR.items()}
        payload["flux"] = flux
        if not all(r["pass"] for r in rows):
            status = EXIT_CHECK
    if "scaling" in checks:
        rep2 = scaling_self_test(2.0, psi, numerics, base=rep)
        tol = 0.02
        ok = rep2["relative_error"] <= tol
        print(f"{'PASS' if ok else 'FAIL'} scaling C(2V)/C(V) = {rep2['ratio']:.6g} "
              f"vs {rep2['expected']:g} (rel err {rep2['relative_error']:.2e}, tol {tol})")
        payload["scaling"] = {**rep2, "tol": tol, "pass": bool(ok)}
        if not ok:
            status = EXIT_CHECK
    out.json("profile.json", payload)
    return status


def _radii(cfg: dict, ctx, r_max: float) -> list:
    from .frequency import UnderResolvedRadius

    radii = cfg["numerics"]["radii"]
    if radii:
        return list(radii)
    good = []
    for r in np.geomspace(0.02, 0.9, 24) * r_max:
        try:
            ctx.check([r])
            good.append(float(r))
        except UnderResolvedRadius:
            pass
    return good


def cmd_frequency(cfg: dict, args) -> int:
    from .frequency import FrequencyContext, check_doubling_bound, frequency_series

    if args.field is None or args.lam is None:
        raise ConfigError("frequency needs --field PATH and --lambda VALUE")
    out = Output(cfg, args.out, "frequency")
    v = load_field(args.field)
    ctx = FrequencyContext(v.mesh)
    r_max = float(np.linalg.norm(v.mesh.vertices, axis=1).max())
    radii = _radii(cfg, ctx, r_max)
    series = frequency_series(v, args.lam, sorted(radii), ctx)
    series.to_csv(out.dir / "frequency.csv")
    print(f"wrote {out.dir / 'frequency.csv'}")
    payload = {"series": series.to_dict(), "field": str(args.field)}
    if len(series) >= 3:
        payload["doubling"] = check_doubling_bound(series, cfg["numerics"]["doubling_cap"]).to_dict()
    for r, n in zip(series.radii, series.N):
        print(f"r = {r:.5g}  N = {n:.6f}")
    out.json("frequency.json", payload)
    return EXIT_OK


def cmd_sweep(cfg: dict, args) -> int:
    from .harness import (
        SweepConfig,
        blowup_norm_check,
        eigen_convergence_check,
        run_epsilon_sweep,
        sandwich_check,
    )
    from .profile import compute_C, profile_U
    from .polynomials import PsiSpec

    out = Output(cfg, args.out, "sweep")
    tol = cfg["numerics"]["tolerances"]
    scfg = SweepConfig(radius=cfg["domain"]["radius"], patch=patch_from(cfg),
                       epsilons=tuple(cfg["sweep"]["epsilon_list"]), n0=cfg["sweep"]["n0"],
                       mesh=mesh_params(cfg), jobs=args.jobs)
    res = run_epsilon_sweep(scfg)
    paths = res.write(out.dir)
    payload = {"sweep": res.to_dict(), "files": paths, "checks": {}}
    k = res.exponent
    slope = res.fit.get("slope", float("nan"))
    print(f"slope {slope:.4f} (expected {k}, band +-{tol['slope']}); "
          f"C_emp(eps_min) = {res.C_emp[-1]:.6g}; C_pred = {res.C_pred}")
    conv = eigen_convergence_check(res)
    payload["checks"]["convergence"] = conv
    print(f"{conv['status']} eigenvalue convergence")
    status = EXIT_OK
    checks = args.check or []
    if "sandwich" in checks:
        rep = sandwich_check(res, tol=tol["coefficient"])
        payload["checks"]["sandwich"] = rep
        print(f"{'PASS' if rep['pass'] else 'FAIL'} sandwich: {rep['lower']:.6g} <= "
              f"C_emp({rep['epsilon']:g}) = {rep['C_emp']:.6g} <= {rep['upper']:.6g} "
              f"(r_V = {rep['r_V']:.4g}, R_V = {rep['R_V']:.4g})")
        status = status if rep["pass"] else EXIT_CHECK
    if "blowup" in checks:
        fields = {r.epsilon: r.fields["mixed"] for r in res.records if r.fields}
        limit = {r.epsilon: r.fields["dirichlet"] for r in res.records if r.fields}
        prof = compute_C(scfg.patch, PsiSpec.linear(), profile_numerics(cfg))
        R = cfg["numerics"]["blowup_R"]
        rep = blowup_norm_check(fields, R, profile_U(prof), res.c, res.gamma, tol=tol["blowup"],
                                reference_fields=limit, psi=PsiSpec.linear(res.c))
        payload["checks"]["blowup"] = rep
        print(f"blow-up ratios at R = {R:g}:")
        print("  epsilon    ratio_L2   ratio_H1   baseline_L2 baseline_H1")
        for row in rep["rows"]:
            print(f"  {row['epsilon']:<9g}  {row['ratio_L2']:.5f}    {row['ratio_H1']:.5f}    "
                  f"{row.get('baseline_L2', float('nan')):.5f}     "
                  f"{row.get('baseline_H1', float('nan')):.5f}")
        print(f"{'PASS' if rep['pass'] else 'FAIL'} blow-up ratios within {rep['tol']} of 1 "
              f"and improving")
        status = status if rep["pass"] else EXIT_CHECK
    if "json" in out.formats:
        out.json("sweep_report.json", payload)
    return status


def cmd_report(cfg: dict, args) -> int:
    d = Path(args.out)
    found = sorted(p for p in d.glob("*.json")) if d.is_dir() else []
    if not found:
        raise ConfigError(f"no JSON reports in {d}")
    for p in found:
        doc = json.loads(p.read_text())
        meta = doc.get("meta", {})
        print(f"{p.name}: command={meta.get('command', '?')} config={meta.get('config_hash', '?')[:12]}")
        if "sweep" in doc:
            s = doc["sweep"]
            print(f"  slope {s['fit'].get('slope')}, C_pred {s['C_pred']}, C_emp {s['C_emp']}")
            for name, c in doc.get("checks", {}).items():
                print(f"  check {name}: {'PASS' if c.get('pass') else c.get('status', 'FAIL')}")
        if "report" in doc:
            print(f"  m {doc['report']['m_extrapolated']}, C {doc['report']['C']}")
        if "eigenvalues" in doc:
            print(f"  eigenvalues {doc['eigenvalues']}")
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "eig": cmd_eig, "profile": cmd_profile,
            "frequency": cmd_frequency, "sweep": cmd_sweep, "report": cmd_report}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vanishing-neumann", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON or YAML configuration file")
    p.add_argument("--out", help="output directory (overrides outputs.dir)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--check", action="append", choices=["sandwich", "blowup", "chi", "scaling"])
    p.add_argument("--mesh-out", help="mesh file path for the mesh command")
    p.add_argument("--field", help="field file (.npz written by eig)")
    p.add_argument("--lambda", dest="lam", type=float, help="eigenvalue of the field")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    from .fem.solvers import SolverError
    from .frequency import FrequencyError
    from .geometry.mesh import MeshError
    from .harness import SweepError
    from .profile import ProfileError
    from .spectrum import SpectrumError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "report":
            cfg = validate_config(load_config(args.config) if args.config else {"domain": {"radius": 1.0}})
        elif not args.config:
            raise ConfigError("--config is required")
        else:
            cfg = load_config(args.config)
        args.out = args.out or cfg["outputs"]["dir"]
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SpectrumError, ProfileError, SweepError, FrequencyError, MeshError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
