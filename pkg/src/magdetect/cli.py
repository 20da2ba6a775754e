"""Command line front end: scenario files, synthetic data, inversion runs,
validation and field comparison.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 numerical
failure.  Data files (CSV, inversion JSON) depend only on the effective
configuration and seed; timings go to ``report.json`` only.
"""

import argparse
import copy
import csv
import hashlib
import io
import json
import os
import sys
import time

import jsonschema
import numpy as np

from .errors import ArgumentError, ConfigError, NumericalError
from .forward import (Anomaly, AnomalyScene, Background, Discretization,
                      FieldSamples, bem_oracle_perturbation, core_model,
                      dipole_perturbation)
from .geometry import PointSet, sample_cap, sphere_grid
from .inverse import invert

__all__ = ["main", "load_config", "read_fields", "write_fields", "compare"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 3,
        "maxItems": 3}
_POS = {"type": "number", "exclusiveMinimum": 0}
_LEVEL = {"type": "integer", "minimum": 0, "maximum": 5}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scene"],
    "properties": {
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "required": ["core_radius_m", "shell_radius_m", "anomalies"],
            "properties": {
                "core_radius_m": _POS,
                "shell_radius_m": _POS,
                "center_m": _VEC,
                "mu0_relative": _POS,
                "background": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["dipole", "uniform"]},
                        "moment_A_m2": _VEC,
                        "position_m": _VEC,
                        "field_A_per_m": _VEC,
                    },
                },
                "anomalies": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["center_m", "delta_m", "mu_relative"],
                        "properties": {
                            "center_m": _VEC,
                            "delta_m": _POS,
                            "mu_relative": _POS,
                            "sigma_S_per_m": {"type": "number", "minimum": 0},
                            "shape": {"enum": ["ball", "ellipsoid"]},
                            "semi_axes_relative": _VEC,
                        },
                    },
                },
            },
        },
        "measurement": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radius_m": _POS,
                "layout": {"enum": ["grid", "cap"]},
                "n_theta": {"type": "integer", "minimum": 2},
                "axis": _VEC,
                "half_angle_rad": {"type": "number", "exclusiveMinimum": 0,
                                   "maximum": np.pi},
                "count": {"type": "integer", "minimum": 1},
                "noise_fraction": {"type": "number", "minimum": 0},
                "seed": {"anyOf": [{"type": "null"},
                                   {"type": "integer", "minimum": 0,
                                    "maximum": 2 ** 64 - 1}]},
                "components": {"enum": ["vector", "normal"]},
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "core_level": _LEVEL,
                "anomaly_level": _LEVEL,
                "degree_cap": {"type": "integer", "minimum": 1},
                "ridge": {"type": "number", "minimum": 0},
                "moment_degree": {"type": "integer", "minimum": 1},
                "grid_cells": {"type": "integer", "minimum": 2},
                "max_evaluations": {"type": "integer", "minimum": 1},
                "n_starts": {"type": "integer", "minimum": 1},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "model": {"enum": ["asymptotic", "oracle"]},
                "count": {"type": "integer", "minimum": 1},
                "data_csv": {"type": ["string", "null"]},
                "fields_csv": {"type": "string"},
                "inversion_json": {"type": "string"},
            },
        },
    },
}

DEFAULTS = {
    "scene": {
        "center_m": [0.0, 0.0, 0.0],
        "mu0_relative": 1.0,
        "background": {"kind": "dipole", "moment_A_m2": [0.0, 0.0, 1.0],
                       "position_m": [0.0, 0.0, 0.0],
                       "field_A_per_m": [0.0, 0.0, 1.0]},
    },
    "anomaly": {"sigma_S_per_m": 0.0, "shape": "ball",
                "semi_axes_relative": [1.0, 1.0, 1.0]},
    "measurement": {"radius_m": 1.25, "layout": "grid", "n_theta": 14,
                    "axis": [0.0, 0.0, 1.0], "half_angle_rad": float(np.pi),
                    "count": 400, "noise_fraction": 0.0, "seed": None,
                    "components": "vector"},
    "numerics": {"core_level": 3, "anomaly_level": 3, "degree_cap": 6,
                 "ridge": 1e-8, "moment_degree": 4, "grid_cells": 16,
                 "max_evaluations": 400, "n_starts": 3},
    "run": {"model": "asymptotic", "count": None, "data_csv": None,
            "fields_csv": "fields.csv", "inversion_json": "inversion.json"},
}


def _fill(raw):
    cfg = copy.deepcopy(raw)
    sc = cfg["scene"]
    for k, v in DEFAULTS["scene"].items():
        if k == "background":
            sc[k] = {**copy.deepcopy(v), **sc.get(k, {})}
        else:
            sc.setdefault(k, copy.deepcopy(v))
    sc["anomalies"] = [{**copy.deepcopy(DEFAULTS["anomaly"]), **a}
                       for a in sc["anomalies"]]
    for block in ("measurement", "numerics", "run"):
        cfg[block] = {**copy.deepcopy(DEFAULTS[block]), **cfg.get(block, {})}
    if cfg["run"]["count"] is None:
        cfg["run"]["count"] = len(sc["anomalies"])
    return cfg


def load_config(source, seed=None):
    """Parse, validate and complete a scenario configuration.

    Parameters
    ----------
    source : str or dict
        Path to a JSON file or an already parsed mapping.
    seed : int, optional
        Overrides ``measurement.seed``.

    Returns
    -------
    dict
        Effective configuration with every default filled in.
    """
    if isinstance(source, dict):
        raw = source
    else:
        try:
            with open(source) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {exc.message}") from exc
    cfg = _fill(raw)
    meas = cfg["measurement"]
    if seed is not None:
        meas["seed"] = int(seed)
    if meas["noise_fraction"] > 0 and meas["seed"] is None:
        raise ConfigError("config field measurement/seed: required when "
                          "noise_fraction > 0")
    build_scene(cfg)
    return cfg


def build_scene(cfg):
    """AnomalyScene from an effective configuration (re-validates it)."""
    sc = cfg["scene"]
    bg = sc["background"]
    anomalies = []
    for a in sc["anomalies"]:
        semi = tuple(a["semi_axes_relative"]) if a["shape"] == "ellipsoid" else None
        anomalies.append(Anomaly(a["center_m"], a["delta_m"], a["mu_relative"],
                                 a["sigma_S_per_m"], a["shape"], semi))
    try:
        return AnomalyScene(
            sc["core_radius_m"], sc["shell_radius_m"], anomalies,
            Background(bg["kind"], bg["moment_A_m2"], bg["position_m"],
                       bg["field_A_per_m"]),
            sc["mu0_relative"], sc["center_m"])
    except ArgumentError as exc:
        raise ConfigError(f"config field scene: {exc}") from exc


def measurement_points(cfg):
    m = cfg["measurement"]
    c = cfg["scene"]["center_m"]
    if m["layout"] == "grid":
        return sphere_grid(m["radius_m"], m["n_theta"], c)
    return sample_cap(m["radius_m"], m["axis"], m["half_angle_rad"],
                      m["count"], c)


def _fmt(x):
    return repr(float(x))


def write_fields(path, points, values):
    """Write samples as CSV; imaginary parts get ``_im`` columns."""
    values = np.asarray(values)
    cplx = np.iscomplexobj(values) and np.any(values.imag != 0)
    head = ["x", "y", "z", "Hx", "Hy", "Hz"]
    if cplx:
        head += ["Hx_im", "Hy_im", "Hz_im"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for p, v in zip(points, values):
        row = [_fmt(t) for t in p] + [_fmt(t) for t in np.real(v)]
        if cplx:
            row += [_fmt(t) for t in np.imag(v)]
        w.writerow(row)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_fields(path):
    """Read a field CSV.

    Returns
    -------
    points : (P, 3) array
    values : (P, 3) real or complex array
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ArgumentError(f"cannot read fields: {exc}") from exc
    if not rows or rows[0][:6] != ["x", "y", "z", "Hx", "Hy", "Hz"]:
        raise ArgumentError(f"{path}: expected header x,y,z,Hx,Hy,Hz")
    try:
        data = np.array([[float(t) for t in r] for r in rows[1:]])
    except ValueError as exc:
        raise ArgumentError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(rows[0]):
        raise ArgumentError(f"{path}: ragged or empty table")
    vals = data[:, 3:6]
    if data.shape[1] == 9:
        vals = vals + 1j * data[:, 6:9]
    return data[:, :3], vals


def _points_hash(points):
    return hashlib.sha256(
        ",".join(_fmt(t) for t in np.ravel(points)).encode()).hexdigest()


def compare(path_a, path_b):
    """Difference report between two field files on the same points.

    Relative differences are taken against the second file.
    """
    pa, va = read_fields(path_a)
    pb, vb = read_fields(path_b)
    if pa.shape != pb.shape or _points_hash(pa) != _points_hash(pb):
        raise ArgumentError("point sets differ")
    d = va - vb
    nb = np.linalg.norm(vb, axis=1)
    rel = np.linalg.norm(d, axis=1) / np.where(nb > 0, nb, 1.0)
    out = {
        "points": int(len(pa)),
        "points_sha256": _points_hash(pa),
        "max_relative": float(rel.max()),
        "mean_relative": float(rel.mean()),
        "global_relative": float(np.linalg.norm(d)
                                 / max(np.linalg.norm(vb), 1e-300)),
        "channels": {},
    }
    for i, ch in enumerate(("Hx", "Hy", "Hz")):
        out["channels"][ch] = {"norm_a": float(np.linalg.norm(va[:, i])),
                               "norm_b": float(np.linalg.norm(vb[:, i])),
                               "norm_difference": float(np.linalg.norm(d[:, i]))}
    return out


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _vec(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}
    return a.tolist()


def _simulate(cfg, scene, pts, model):
    disc = Discretization(cfg["numerics"]["core_level"],
                          cfg["numerics"]["anomaly_level"])
    fn = bem_oracle_perturbation if model == "oracle" else dipole_perturbation
    return fn(scene, pts, disc).values


def _run_synth(cfg, out, oracle, report):
    scene = build_scene(cfg)
    pts = measurement_points(cfg)
    model = "oracle" if oracle else cfg["run"]["model"]
    t = time.perf_counter()
    vals = _simulate(cfg, scene, pts, model)
    report["timings_s"]["simulate"] = time.perf_counter() - t
    meas = cfg["measurement"]
    if meas["noise_fraction"] > 0:
        rng = np.random.default_rng(meas["seed"])
        scale = meas["noise_fraction"] * np.abs(vals).max()
        vals = vals + scale * rng.standard_normal(vals.shape)
    path = os.path.join(out, cfg["run"]["fields_csv"])
    write_fields(path, pts.points, vals)
    return [path]


def _run_forward(cfg, out, oracle, report):
    scene = build_scene(cfg)
    pts = measurement_points(cfg)
    files = []
    t = time.perf_counter()
    asym = _simulate(cfg, scene, pts, "asymptotic")
    report["timings_s"]["asymptotic"] = time.perf_counter() - t
    files.append(os.path.join(out, "asymptotic.csv"))
    write_fields(files[-1], pts.points, asym)
    if oracle:
        t = time.perf_counter()
        orc = _simulate(cfg, scene, pts, "oracle")
        report["timings_s"]["oracle"] = time.perf_counter() - t
        files.append(os.path.join(out, "oracle.csv"))
        write_fields(files[-1], pts.points, orc)
        summary = compare(files[0], files[1])
        files.append(os.path.join(out, "difference.json"))
        _write_json(files[-1], summary)
    return files


def _samples_from_csv(cfg, path):
    pts, vals = read_fields(path)
    expected = measurement_points(cfg)
    if expected.points.shape == pts.shape and np.allclose(
            expected.points, pts, rtol=0, atol=1e-12):
        ps = expected
    else:
        c = np.asarray(cfg["scene"]["center_m"], dtype=float)
        r = np.linalg.norm(pts - c, axis=1)
        ps = PointSet(pts, float(r.mean()), center=c)
    return FieldSamples(ps, np.real(vals), "csv")


def _run_invert(cfg, out, oracle, report):
    scene = build_scene(cfg)
    run, num = cfg["run"], cfg["numerics"]
    path = run["data_csv"] or os.path.join(out, run["fields_csv"])
    samples = _samples_from_csv(cfg, path)
    count = run["count"]
    deltas = None
    if count == len(scene.anomalies):
        deltas = [a.delta for a in scene.anomalies]
    t = time.perf_counter()
    res = invert(samples, count, scene.core_radius, scene.shell_radius,
                 scene=scene, delta=deltas, core_level=num["core_level"],
                 continuation={"N": num["degree_cap"], "ridge": num["ridge"]},
                 grid=num["grid_cells"],
                 components=cfg["measurement"]["components"],
                 moment_degree=num["moment_degree"],
                 max_nfev=num["max_evaluations"], n_starts=num["n_starts"])
    report["timings_s"]["invert"] = time.perf_counter() - t
    core = core_model(scene.core_radius, tuple(scene.center), num["core_level"])
    report["conditions"]["core_neumann"] = core.neumann_factor.condition
    if res.continuation is not None:
        report["conditions"]["continuation"] = res.continuation.condition
    m = res.moment
    doc = {
        "moment": {"v0": _vec(m.v0), "v2": _vec(m.v2),
                   "quadrupole": _vec(m.quadrupole),
                   "q0_projection": _vec(m.q0_projection),
                   "fit_residual": m.residual, "radius_m": m.radius,
                   "method": m.method},
        "dipoles": [{"position_m": _vec(e.position),
                     "moment_A_m2": _vec(e.moment),
                     "position_std_m": _vec(e.position_std),
                     "moment_std_A_m2": _vec(e.moment_std),
                     "mu_relative": e.mu, "pruned": e.pruned}
                    for e in res.dipoles],
        "relative_residual": res.residual,
        "truth_distance_m": [
            min(float(np.linalg.norm(e.position - a.center))
                for e in res.dipoles) for a in scene.anomalies],
    }
    path = os.path.join(out, run["inversion_json"])
    _write_json(path, doc)
    return [path]


def _run_validate(args, out, report):
    from .validation import run_checks
    nums = None
    if args.checks:
        try:
            nums = sorted({int(t) for t in args.checks.split(",")})
        except ValueError as exc:
            raise ArgumentError(f"--checks: {exc}") from exc
    t = time.perf_counter()
    results = run_checks(nums)
    report["timings_s"]["validate"] = time.perf_counter() - t
    lines = []
    for r in results:
        lines.append(r.line())
        lines.extend(f"     {s}" for s in r.info)
        report["checks"].append({"number": r.number, "title": r.title,
                                 "passed": r.passed,
                                 "parts": [{"name": p.name, "passed": p.passed,
                                            "detail": p.detail}
                                           for p in r.parts]})
    text = "\n".join(lines) + "\n"
    print(text, end="")
    path = os.path.join(out, "validation.txt")
    with open(path, "w") as fh:
        fh.write(text)
    return [path]


def _parser():
    p = argparse.ArgumentParser(
        prog="magdetect",
        description="Forward simulation and inversion of magnetized "
                    "anomalies in a spherical shell.")
    sub = p.add_subparsers(dest="mode", required=True)
    for mode, text in (("synth", "write synthetic field samples"),
                       ("forward", "write asymptotic (and oracle) fields"),
                       ("invert", "recover moments and anomaly positions")):
        s = sub.add_parser(mode, help=text)
        s.add_argument("--config", required=True)
        s.add_argument("--out", default=".")
        s.add_argument("--oracle", action="store_true",
                       help="use the boundary-element oracle")
        s.add_argument("--seed", type=int, help="overrides measurement.seed")
    v = sub.add_parser("validate", help="run the acceptance checks")
    v.add_argument("--out", default=".")
    v.add_argument("--checks", help="comma-separated check numbers")
    c = sub.add_parser("compare", help="difference report of two field CSVs")
    c.add_argument("fields_a")
    c.add_argument("fields_b")
    c.add_argument("--out", help="directory for compare.json")
    return p


def _run(args, report):
    if args.mode == "compare":
        res = compare(args.fields_a, args.fields_b)
        print(json.dumps(res, indent=2, sort_keys=True))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, "compare.json")
            _write_json(path, res)
            return [path]
        return []
    os.makedirs(args.out, exist_ok=True)
    if args.mode == "validate":
        return _run_validate(args, args.out, report)
    if args.seed is not None and args.seed < 0:
        raise ArgumentError("--seed must be non-negative")
    cfg = load_config(args.config, args.seed)
    report["config"] = cfg
    run = {"synth": _run_synth, "forward": _run_forward,
           "invert": _run_invert}[args.mode]
    return run(cfg, args.out, args.oracle, report)


def main(argv=None):
    """Entry point; returns the process exit code."""
    args = _parser().parse_args(argv)
    report = {"mode": args.mode, "timings_s": {}, "conditions": {},
              "checks": [], "manifest": []}
    try:
        files = _run(args, report)
    except ArgumentError as exc:
        print(f"magdetect: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"magdetect: numerical failure ({type(exc).__name__}): {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC
    if args.mode != "compare" or files:
        report["manifest"] = [{"path": os.path.basename(f),
                               "sha256": _sha256(f)} for f in files]
        _write_json(os.path.join(os.path.dirname(files[0]) if files
                                 else args.out, "report.json"), report)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
