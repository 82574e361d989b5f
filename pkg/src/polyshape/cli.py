"""Command-line front end.

    polyshape <command> --config cfg.json [--out DIR] [--seed N] [--threads N]
                        [--bypass-validation] [--h H] [--steps t1,t2,...]

Commands: validate, spectral, solve, shape-derivative, singularity-fit.
Exit status: 0 when every embedded audit passes, 1 when an audit fails,
2 for configuration errors, 3 for numerical or geometric failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PolyshapeError, SpecError
from .fan import TWO_PI, VertexFan
from .fem import (assemble, boundary_mean, density_from_config, flux_balance, galerkin_audit, solve_neumann,
                  write_solution_csv)
from .mesh import audit_mesh, triangulate
from .partition import (AdmissibilityParams, VertexVelocity, build_partition, validate_partition,
                        vertex_fan_at)
from .shape import MeshControls, derivative_report
from .spectral import characteristic_determinant, eigenfunction, find_exponents
from .studies import fit_from_solution

log = logging.getLogger("polyshape")

COMMANDS = ("validate", "spectral", "solve", "shape-derivative", "singularity-fit")
EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(Exception):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------- config access

def _get(block, key, path, kind=None, default=...):
    if key not in block:
        if default is ...:
            raise ConfigError(f"{path}.{key}", "missing")
        return default
    val = block[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{path}.{key}", f"expected a number, got {val!r}")
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{path}.{key}", f"expected an integer, got {val!r}")
        return val
    if kind is list and not isinstance(val, list):
        raise ConfigError(f"{path}.{key}", f"expected a list, got {type(val).__name__}")
    if kind is dict and not isinstance(val, dict):
        raise ConfigError(f"{path}.{key}", f"expected an object, got {type(val).__name__}")
    return val


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError("$", "top level must be an object")
    return cfg, path.parent


def partition_spec(cfg: dict, base: Path) -> dict:
    """Inline partition keys, or a ``partition`` path relative to the config."""
    if "partition" in cfg:
        ref = cfg["partition"]
        if isinstance(ref, dict):
            return ref
        if not isinstance(ref, str):
            raise ConfigError("$.partition", "expected a file path or an object")
        p = Path(ref) if Path(ref).is_absolute() else base / ref
        if not p.exists():
            raise ConfigError("$.partition", f"file {p} not found")
        with open(p) as fh:
            return json.load(fh)
    if "domain" in cfg:
        return {k: cfg[k] for k in ("domain", "polygons", "sigma", "admissibility") if k in cfg}
    raise ConfigError("$.partition", "no partition given (inline keys or a file path)")


def config_hash(cfg: dict, overrides: dict) -> str:
    blob = json.dumps({"config": cfg, "overrides": overrides}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class Output:
    """Writes files that all carry the tool version, config hash and seed."""

    def __init__(self, out_dir: Path, meta: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = meta
        self.files = []

    def json(self, name, data):
        path = self.dir / name
        with open(path, "w") as fh:
            json.dump({**self.meta, **data}, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        self.files.append(str(path))
        return path

    def csv(self, name, header, rows):
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            for k in sorted(self.meta):
                fh.write(f"# {k}={self.meta[k]}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self.files.append(str(path))
        return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# ---------------------------------------------------------------- commands

def _partition(cfg, base):
    spec = partition_spec(cfg, base)
    try:
        return build_partition(spec)
    except SpecError as exc:
        raise ConfigError("$.partition", str(exc)) from None


def _params(cfg, P):
    block = cfg.get("validate", {})
    if not isinstance(block, dict):
        raise ConfigError("$.validate", "expected an object")
    raw = block.get("admissibility")
    if raw is None:
        if P.admissibility is None:
            raise ConfigError("$.admissibility", "no admissibility parameters")
        return P.admissibility
    try:
        return AdmissibilityParams(*(float(raw[k]) for k in ("d0", "r1", "beta_bar", "c0")))
    except KeyError as exc:
        raise ConfigError(f"$.validate.admissibility.{exc.args[0]}", "missing") from None
    except SpecError as exc:
        raise ConfigError("$.validate.admissibility", str(exc)) from None


def _require_admissible(P, cfg, args):
    if args.bypass_validation:
        return {"bypassed": True}
    report = validate_partition(P, _params(cfg, P), strict=True)
    return report.to_dict()


def cmd_validate(cfg, base, args, out: Output) -> int:
    P = _partition(cfg, base)
    report = validate_partition(P, _params(cfg, P), bypass=args.bypass_validation)
    fans = []
    for j in range(P.n_vertices):
        try:
            fan = vertex_fan_at(P, j)
        except PolyshapeError:
            continue
        fans.append({"vertex": j, "K": fan.K, "angle_sum": float(fan.widths.sum()),
                     "widths": fan.widths.tolist(), "sigmas": fan.sigmas.tolist()})
    out.json("validation.json", {"command": "validate", "report": report.to_dict(), "fans": fans,
                                 "n_polygons": len(P.polygons)})
    return EXIT_OK if report.passed else EXIT_AUDIT


def _fan_from_block(block, cfg, base, args):
    if "fan" in block:
        fb = _get(block, "fan", "$.spectral", dict)
        sig = _get(fb, "sigmas", "$.spectral.fan", list)
        if "widths" in fb:
            w = _get(fb, "widths", "$.spectral.fan", list)
            try:
                w = [float(x) for x in w]
                if len(w) == len(sig) - 1:
                    w = w + [TWO_PI - sum(w)]
                return VertexFan.from_sectors(w, [float(s) for s in sig])
            except PolyshapeError as exc:
                raise ConfigError("$.spectral.fan", str(exc)) from None
        ang = _get(fb, "angles", "$.spectral.fan", list)
        try:
            return VertexFan(np.array(ang, dtype=float), np.array(sig, dtype=float))
        except PolyshapeError as exc:
            raise ConfigError("$.spectral.fan", str(exc)) from None
    j = _get(block, "vertex", "$.spectral", int)
    P = _partition(cfg, base)
    if not 0 <= j < P.n_vertices:
        raise ConfigError("$.spectral.vertex", f"no vertex {j}")
    return vertex_fan_at(P, j)


def cmd_spectral(cfg, base, args, out: Output) -> int:
    block = _get(cfg, "spectral", "$", dict)
    fan = _fan_from_block(block, cfg, base, args)
    gmax = _get(block, "gamma_max", "$.spectral", float, 5.0)
    if gmax < 1:
        raise ConfigError("$.spectral.gamma_max", "must be at least 1")
    n_theta = _get(block, "theta_samples", "$.spectral", int, 361)
    exps = find_exponents(fan, gmax)
    out.csv("exponents.csv", ["j", "gamma_j", "multiplicity", "det_residual"],
            [(j + 1, e.gamma, e.multiplicity, e.det_residual) for j, e in enumerate(exps)])
    theta = np.linspace(0.0, TWO_PI, n_theta)
    cols, header, audits = [theta, fan.a(theta)], ["theta", "a"], []
    J = _get(block, "J", "$.spectral", int, min(5, len(exps)))
    count = 0
    for e in exps:
        for ef in eigenfunction(fan, e.gamma):
            if count >= J:
                break
            cols.append(ef(theta))
            header.append(f"v_{count + 1}")
            res = ef.interface_residuals()
            audits.append(float(np.max(np.abs(res))) if np.size(res) else 0.0)
            count += 1
    out.csv("eigenfunctions.csv", header, zip(*cols))
    grid = np.linspace(0.01, gmax, 500)
    out.csv("determinant.csv", ["gamma", "D"], [(g, characteristic_determinant(g, fan)) for g in grid])
    interface_ok = all(r < 1e-10 for r in audits)
    summary = {
        "command": "spectral",
        "fan": {"K": fan.K, "widths": fan.widths.tolist(), "sigmas": fan.sigmas.tolist(), "offset": fan.offset},
        "gamma_max": gmax,
        "exponents": [{"gamma": e.gamma, "multiplicity": e.multiplicity, "det_residual": e.det_residual} for e in exps],
        "gamma_1": exps[0].gamma if exps else None,
        "det_at_half": characteristic_determinant(0.5, fan),
        "interface_residuals": audits,
        "audits_passed": interface_ok,
    }
    out.json("spectral.json", summary)
    return EXIT_OK if interface_ok else EXIT_AUDIT


def _controls(block, path, args, default_h=None):
    h = args.h if args.h is not None else _get(block, "h", path, float, default_h)
    if h is None:
        raise ConfigError(f"{path}.h", "missing (or pass --h)")
    grade = _get(block, "grade", path, dict, {})
    return MeshControls(
        float(h),
        tuple(int(j) for j in _get(grade, "vertices", f"{path}.grade", list, [])),
        _get(grade, "factor", f"{path}.grade", float, 0.5),
        _get(grade, "rings", f"{path}.grade", int, 6),
        _get(grade, "radius", f"{path}.grade", float, None),
        _get(grade, "power", f"{path}.grade", float, 0.5),
    )


def _density(block, key, path):
    raw = block.get(key)
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}.{key}", "expected an object")
    try:
        return density_from_config(raw)
    except (PolyshapeError, KeyError) as exc:
        raise ConfigError(f"{path}.{key}", str(exc)) from None


def cmd_solve(cfg, base, args, out: Output) -> int:
    block = _get(cfg, "solve", "$", dict)
    P = _partition(cfg, base)
    validation = _require_admissible(P, cfg, args)
    c = _controls(block, "$.solve", args)
    f = _density(block, "f", "$.solve")
    plan = c.plan(P)
    mesh = triangulate(P, c.h, plan=plan)
    audit = audit_mesh(mesh, P, plan)
    sol = solve_neumann(assemble(mesh, P.conductivities), f)
    balance = flux_balance(sol)
    galerkin = galerkin_audit(sol, 50, args.seed)
    norm = max(float(np.linalg.norm(sol.values)), 1e-300)
    mean_rel = abs(boundary_mean(sol)) * np.sqrt(mesh.n_nodes) / norm if np.any(sol.values) else 0.0
    write_solution_csv(sol, out.dir / "solution.csv", [f"{k}={out.meta[k]}" for k in sorted(out.meta)])
    out.files.append(str(out.dir / "solution.csv"))
    ok = audit.conforming and audit.positive_areas and galerkin < 1e-9 and \
        balance["relative_difference"] <= 1e-9 and mean_rel < 1e-10
    out.json("solve.json", {
        "command": "solve", "validation": validation, "mesh": {"n_nodes": mesh.n_nodes,
                                                              "n_triangles": mesh.n_triangles,
                                                              "controls": c.describe()},
        "mesh_audit": audit.to_dict(), "solver": sol.stats.to_dict(), "flux": sol.flux,
        "flux_balance": balance, "galerkin_residual": galerkin, "boundary_mean_relative": mean_rel,
        "audits_passed": bool(ok),
    })
    return EXIT_OK if ok else EXIT_AUDIT


def _velocity(block, P, path):
    raw = _get(block, "V", path)
    if isinstance(raw, dict):
        j = _get(raw, "vertex", f"{path}.V", int)
        v = _get(raw, "velocity", f"{path}.V", list)
        if not 0 <= j < P.n_vertices or len(v) != 2:
            raise ConfigError(f"{path}.V", "needs a valid vertex index and a 2-vector")
        return VertexVelocity.single(P.n_vertices, j, [float(x) for x in v])
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (P.n_vertices, 2):
        raise ConfigError(f"{path}.V", f"expected {P.n_vertices} two-vectors")
    return VertexVelocity(arr)


def cmd_shape_derivative(cfg, base, args, out: Output) -> int:
    path = "$.shape-derivative"
    block = _get(cfg, "shape-derivative", "$", dict)
    P = _partition(cfg, base)
    validation = _require_admissible(P, cfg, args)
    c = _controls(block, path, args)
    V = _velocity(block, P, path)
    f, g = _density(block, "f", path), _density(block, "g", path)
    steps = args.steps
    if steps is None:
        steps = [float(t) for t in _get(block, "steps", path, list, [1e-2, 5e-3, 2.5e-3])]
    sweep = [float(h) for h in _get(block, "h_sweep", path, list, [])]
    report = derivative_report(P, V, f, g, c, steps, sweep, bypass=args.bypass_validation,
                               run_fd=bool(block.get("finite_differences", True)))
    green = abs(report.udot_pairing - report.volume_form) / max(abs(report.volume_form), 1e-300)
    ok = green <= 1e-8 or (report.volume_form == 0 and report.udot_pairing == 0)
    data = report.to_dict()
    data.update({"command": "shape-derivative", "validation": validation, "green_identity_relative": green,
                 "audits_passed": bool(ok)})
    out.json("derivative.json", data)
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_singularity_fit(cfg, base, args, out: Output) -> int:
    path = "$.singularity-fit"
    block = _get(cfg, "singularity-fit", "$", dict)
    P = _partition(cfg, base)
    validation = _require_admissible(P, cfg, args)
    j = _get(block, "vertex", path, int)
    if not 0 <= j < P.n_vertices:
        raise ConfigError(f"{path}.vertex", f"no vertex {j}")
    c = _controls(block, path, args)
    if j not in c.grade_vertices:
        c = MeshControls(c.h, tuple(sorted(set(c.grade_vertices) | {j})), c.grade_factor, c.grade_rings,
                         c.grade_radius, c.grade_power)
    _get(block, "f", path, dict)
    f = _density(block, "f", path)
    rb = _get(block, "radii", path, dict, {})
    radii = np.geomspace(_get(rb, "min", f"{path}.radii", float, 1e-3), _get(rb, "max", f"{path}.radii", float, 1e-1),
                         _get(rb, "n", f"{path}.radii", int, 25))
    direction = block.get("direction")
    fan = vertex_fan_at(P, j)
    mesh = triangulate(P, c.h, plan=c.plan(P))
    sol = solve_neumann(assemble(mesh, P.conductivities), f)
    fit = fit_from_solution(sol, fan, radii, None if direction is None else float(direction))
    out.csv("gradient_samples.csv", ["r", "grad_norm"], fit.samples.tolist())
    out.csv("singularity_fit.csv", ["vertex", "gamma_hat", "gamma_1", "relative_difference", "residual_rms"],
            [(j, fit.gamma_hat, fit.gamma_1, fit.relative_difference, fit.diagnostics.residual_rms)])
    out.json("singularity_fit.json", {
        "command": "singularity-fit", "validation": validation, "vertex": j, "direction": fit.direction,
        "gamma_hat": fit.gamma_hat, "gamma_1": fit.gamma_1, "relative_difference": fit.relative_difference,
        "fit": dict(fit.diagnostics.__dict__), "mesh": {"n_nodes": mesh.n_nodes, "controls": c.describe()},
        "audits_passed": True,
    })
    return EXIT_OK


HANDLERS = {
    "validate": cmd_validate,
    "spectral": cmd_spectral,
    "solve": cmd_solve,
    "shape-derivative": cmd_shape_derivative,
    "singularity-fit": cmd_singularity_fit,
}


# ---------------------------------------------------------------- entry point

def _steps(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad step list {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("steps must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyshape", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for randomised audits (recorded in outputs)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (recorded; the runner is single-threaded)")
    p.add_argument("--bypass-validation", action="store_true", help="skip admissibility checks (recorded)")
    p.add_argument("--h", type=float, default=None, help="mesh size override")
    p.add_argument("--steps", type=_steps, default=None, help="finite-difference steps, comma separated")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed < 0 or args.seed >= 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, base = load_config(args.config)
        overrides = {"command": args.command, "seed": args.seed, "bypass_validation": args.bypass_validation,
                     "h": args.h, "steps": args.steps}
        meta = {"tool_version": __version__, "config_hash": config_hash(cfg, overrides), "seed": args.seed,
                "threads": args.threads, "bypass_validation": args.bypass_validation}
        out = Output(Path(args.out), meta)
        status = HANDLERS[args.command](cfg, base, args, out)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PolyshapeError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in out.files:
        print(f)
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
