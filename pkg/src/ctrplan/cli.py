"""Command-line pipeline: fit, cluster, plan, simulate, export-obj.

Every stage reads and writes plain files so runs can be resumed from any
artifact.  JSON is written with sorted keys and Python's shortest
round-trip float formatting, so identical inputs give identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FIT = 3
EXIT_INFEASIBLE = 4
EXIT_STALLED = 5

THREADS_ENV = "CTRPLAN_THREADS"

log = logging.getLogger("ctrplan")


class StageError(Exception):
    def __init__(self, stage: str, message: str, code: int):
        super().__init__(message)
        self.stage = stage
        self.code = code


@dataclass
class PipelineConfig:
    input: str | None = None
    unit_scale: float | None = None
    c_th: float = 2.0
    delta: float = 0.1
    n_tubes: int = 1
    nodes_per_segment: int = 11
    bounds: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    fixed_idx: list | None = None
    solver: dict = field(default_factory=dict)
    step_max_iter: int | None = None
    target_eigen_bound: str = "literal"
    threads: int | None = None

    def validate(self) -> None:
        if not self.c_th >= 1:
            raise ValueError(f"c_th must be >= 1, got {self.c_th}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.n_tubes >= 1:
            raise ValueError(f"n_tubes must be >= 1, got {self.n_tubes}")
        if self.nodes_per_segment < 2:
            raise ValueError("nodes_per_segment must be >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ValueError(f"unknown config keys: {', '.join(extra)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# file helpers


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _read_json(path, stage: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise StageError(stage, f"file not found: {path}", EXIT_VALIDATION) from None
    except json.JSONDecodeError as exc:
        raise StageError(stage, f"{path}: invalid JSON ({exc})", EXIT_VALIDATION) from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Config file (JSON) updated by ``key=value`` overrides; values parse as JSON when they can."""
    d = {} if path is None else _read_json(path, "config")
    for item in overrides:
        if "=" not in item:
            raise StageError("config", f"override {item!r} is not key=value", EXIT_VALIDATION)
        key, value = item.split("=", 1)
        d[key.strip()] = _parse_value(value)
    try:
        cfg = PipelineConfig.from_dict(d)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise StageError("config", str(exc), EXIT_VALIDATION) from None
    return cfg


def _apply_threads(cfg: PipelineConfig) -> None:
    n = os.environ.get(THREADS_ENV) or cfg.threads
    if not n:
        return
    n = str(int(n))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)
    flags = os.environ.get("XLA_FLAGS", "")
    if "intra_op_parallelism_threads" not in flags:
        os.environ["XLA_FLAGS"] = f"{flags} --xla_cpu_multi_thread_eigen={'true' if n != '1' else 'false'} intra_op_parallelism_threads={n}".strip()


# ---------------------------------------------------------------------------
# geometry file


def geometry_to_dict(skull, hemis, target, obstacles, delta_mri=None) -> dict:
    hemi = None if not hemis else (hemis[0].to_dict() if len(hemis) == 1 else [h.to_dict() for h in hemis])
    d = {
        "skull": skull.to_dict(),
        "hemisphere": hemi,
        "target": target.to_dict(),
        "obstacles": [e.to_dict() for e in obstacles],
    }
    if delta_mri is not None:
        d["delta_mri"] = delta_mri
    return d


def geometry_from_dict(d: dict):
    """(skull, list of admissible half-spaces, target, obstacles)."""
    from ctrplan.geometry import Ellipsoid, HalfSpace

    try:
        skull = Ellipsoid.from_dict(d["skull"])
        target = Ellipsoid.from_dict(d["target"])
        obstacles = [Ellipsoid.from_dict(e) for e in d.get("obstacles", [])]
        h = d.get("hemisphere")
        if h is None:
            hemis = []
        elif isinstance(h, list):
            hemis = [HalfSpace.from_dict(x) for x in h]
        else:
            hemis = [HalfSpace.from_dict(h)]
    except (KeyError, TypeError, ValueError) as exc:
        raise StageError("geometry", f"invalid geometry file: {exc}", EXIT_VALIDATION) from None
    return skull, hemis, target, obstacles


# ---------------------------------------------------------------------------
# subcommands


def _load_cloud(cfg: PipelineConfig):
    from ctrplan.ingestion import CloudFormatError, load_cloud

    if not cfg.input:
        raise StageError("load", "no input cloud given", EXIT_VALIDATION)
    try:
        return load_cloud(cfg.input, cfg.unit_scale)
    except FileNotFoundError:
        raise StageError("load", f"file not found: {cfg.input}", EXIT_VALIDATION) from None
    except (CloudFormatError, ValueError) as exc:
        raise StageError("load", str(exc), EXIT_VALIDATION) from None


def _obstacles(cloud, cfg: PipelineConfig):
    from ctrplan.clustering import ObstacleSet, build_obstacles
    from ctrplan.fitting import FitError

    if len(cloud.obstacle) == 0:
        return ObstacleSet([], [])
    try:
        return build_obstacles(cloud.obstacle, cfg.c_th, cloud.delta_mri, seed=cfg.seed)
    except (FitError, ValueError) as exc:
        raise StageError("obstacles", str(exc), EXIT_FIT) from None


def _cluster_report(obs) -> list:
    return [asdict(d) for d in obs.diagnostics]


def cmd_fit(cfg: PipelineConfig) -> dict:
    """Fit all constraint geometry; writes geometry.json, fit_report.json and clusters.csv."""
    from ctrplan.fitting import FitError, fit_hyperplane, fit_skull, fit_target, select_hemisphere
    from ctrplan.geometry import GeometryError

    cloud = _load_cloud(cfg)
    out = Path(cfg.output_dir)
    report = {"counts": cloud.counts(), "delta_mri": cloud.delta_mri}

    def stage(name, fn):
        try:
            return fn()
        except (FitError, GeometryError, ValueError) as exc:
            raise StageError(name, str(exc), EXIT_FIT) from None

    if len(cloud.hemisphere) == 0:
        raise StageError("hyperplane", "no hemisphere points in the cloud", EXIT_FIT)
    if len(cloud.target) == 0:
        raise StageError("target", "no target points in the cloud", EXIT_FIT)
    if len(cloud.skull) == 0:
        raise StageError("skull", "no skull points in the cloud", EXIT_FIT)
    h, halves = stage("hyperplane", lambda: fit_hyperplane(cloud.hemisphere))
    hemis = select_hemisphere(halves, cloud.target)
    report["hyperplane"] = {"h": h.tolist(), "straddling": len(hemis) == 2}
    skull = stage("skull", lambda: fit_skull(cloud.skull, hemis[0] if len(hemis) == 1 else None))
    report["skull"] = {"objective": skull.objective, "residual_max": skull.residual_max, "points": len(cloud.skull)}
    target = stage("target", lambda: fit_target(cloud.target, cloud.delta_mri, cfg.target_eigen_bound))
    report["target"] = {"objective": target.objective, "residual_max": target.residual_max, "points": len(cloud.target)}
    obs = _obstacles(cloud, cfg)
    report["obstacles"] = {"count": len(obs.ellipsoids), "points": len(cloud.obstacle), "clusters": _cluster_report(obs)}
    geom = geometry_to_dict(skull.ellipsoid, hemis, target.ellipsoid, obs.ellipsoids, cloud.delta_mri)
    _write(out / "geometry.json", dumps(geom))
    _write(out / "fit_report.json", dumps(report))
    _write(out / "clusters.csv", obs.diagnostics_csv())
    return geom


def cmd_cluster(cfg: PipelineConfig, geometry: str | None = None) -> dict:
    """Rebuild the obstacle ellipsoids; updates ``geometry`` in place when given."""
    cloud = _load_cloud(cfg)
    obs = _obstacles(cloud, cfg)
    out = Path(cfg.output_dir)
    doc = {"obstacles": [e.to_dict() for e in obs.ellipsoids], "clusters": _cluster_report(obs)}
    _write(out / "obstacles.json", dumps(doc))
    _write(out / "clusters.csv", obs.diagnostics_csv())
    if geometry is not None:
        geom = _read_json(geometry, "geometry")
        geom["obstacles"] = doc["obstacles"]
        _write(Path(geometry), dumps(geom))
    return doc


def lambda_log_csv(stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "status", "iterations", "objective"])
    for s in stats:
        w.writerow([repr(float(s["lambda"])), s["status"], s["iterations"], repr(float(s["objective"]))])
    return buf.getvalue()


def cmd_plan(cfg: PipelineConfig, geometry: str):
    """Plan on a geometry file; writes result.json, path.csv and lambda_log.csv."""
    from ctrplan.planner import PlanBounds, PlannerConfig, PlanProblem, default_fixed_idx, plan_hemispheres

    skull, hemis, target, obstacles = geometry_from_dict(_read_json(geometry, "geometry"))
    try:
        bounds = PlanBounds.from_dict(cfg.bounds)
        problems = [
            PlanProblem(skull, h, target, tuple(obstacles), frozenset(), cfg.n_tubes, bounds)
            for h in (hemis or [None])
        ]
        fixed = cfg.fixed_idx
        if fixed is None:
            fixed = sorted(default_fixed_idx(problems[0]))
        pcfg = PlannerConfig.from_dict({
            "nodes_per_segment": cfg.nodes_per_segment,
            "delta": cfg.delta,
            "solver": cfg.solver,
            "fixed_idx": fixed,
            "step_max_iter": cfg.step_max_iter,
        })
        problems = [p.with_obstacles(p.obstacles, fixed) for p in problems]
    except (TypeError, ValueError) as exc:
        raise StageError("plan", str(exc), EXIT_VALIDATION) from None
    result = plan_hemispheres(problems, None, pcfg)
    out = Path(cfg.output_dir)
    _write(out / "lambda_log.csv", lambda_log_csv(result.solver_stats))
    _write(out / "result.json", dumps(result.to_dict()))
    if result.path is not None:
        _write(out / "path.csv", result.path.to_csv())
    return result


def cmd_simulate(params: str, out_path: str, nodes_per_segment: int = 50):
    """Forward kinematics of a tube parameter file; writes the path CSV (and JSON alongside)."""
    import numpy as np

    from ctrplan.kinematics import ShootingError, TubeSet, TubeSetError, shoot_forward

    d = _read_json(params, "simulate")
    try:
        tubes = TubeSet.from_dict(d)
        p0 = np.asarray(d.get("p0", [0.0, 0.0, 0.0]), float)
        R0 = np.asarray(d["R0"], float).reshape(3, 3) if "R0" in d else None
    except (TubeSetError, KeyError, TypeError, ValueError) as exc:
        raise StageError("simulate", f"invalid tube parameters: {exc}", EXIT_VALIDATION) from None
    try:
        path = shoot_forward(tubes, p0, R0, nodes_per_segment=nodes_per_segment)
    except ShootingError as exc:
        res = exc.args[1] if len(exc.args) > 1 else float("nan")
        raise StageError("simulate", f"torsion shooting did not converge (residual {res:.3e})", EXIT_INFEASIBLE) from None
    out = Path(out_path)
    _write(out, path.to_csv())
    _write(out.with_suffix(".json"), dumps(path.to_dict()))
    return path


def ellipsoid_mesh(e, n_lat: int = 12, n_lon: int = 24):
    """UV-sphere vertices mapped through Q^{-1/2}, plus quad/triangle faces (0-based)."""
    import numpy as np

    w, V = np.linalg.eigh(e.Q)
    A = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
    verts = [e.c + A @ np.array([0.0, 0.0, 1.0])]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append(e.c + A @ np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)]))
    verts.append(e.c + A @ np.array([0.0, 0.0, -1.0]))
    ring = lambda i, j: 1 + (i - 1) * n_lon + j % n_lon  # noqa: E731
    faces = [(0, ring(1, j), ring(1, j + 1)) for j in range(n_lon)]
    for i in range(1, n_lat - 1):
        faces += [(ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1)) for j in range(n_lon)]
    last = len(verts) - 1
    faces += [(ring(n_lat - 1, j + 1), ring(n_lat - 1, j), last) for j in range(n_lon)]
    return np.array(verts), faces


def _read_path_points(path_file: str):
    import numpy as np

    p = Path(path_file)
    if p.suffix.lower() == ".json":
        d = _read_json(p, "export-obj")
        d = d.get("path", d)
        if d is None:
            return np.zeros((0, 3))
        return np.asarray(d["p"], float).reshape(-1, 3)
    with p.open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["px"]), float(r["py"]), float(r["pz"])] for r in rows]).reshape(-1, 3)


def obj_text(geometry: dict, path_points=None, n_lat: int = 12, n_lon: int = 24) -> str:
    skull, _, target, obstacles = geometry_from_dict(geometry)
    lines = ["# ellipsoid meshes and path polyline"]
    offset = 1
    named = [("skull", skull), ("target", target)] + [(f"obstacle_{j}", e) for j, e in enumerate(obstacles)]
    for name, e in named:
        verts, faces = ellipsoid_mesh(e, n_lat, n_lon)
        lines.append(f"o {name}")
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in verts.tolist()]
        lines += ["f " + " ".join(str(offset + k) for k in f) for f in faces]
        offset += len(verts)
    if path_points is not None and len(path_points):
        lines.append("o path")
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in path_points.tolist()]
        lines.append("l " + " ".join(str(offset + k) for k in range(len(path_points))))
    return "\n".join(lines) + "\n"


def cmd_export_obj(geometry: str, out_path: str, path_file: str | None = None, n_lat: int = 12, n_lon: int = 24) -> str:
    pts = None if path_file is None else _read_path_points(path_file)
    text = obj_text(_read_json(geometry, "export-obj"), pts, n_lat, n_lon)
    _write(Path(out_path), text)
    return text


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctrplan", description="Concentric tube robot planning pipeline.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON pipeline config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (value parsed as JSON when possible)")
        p.add_argument("--out", help="output directory (overrides output_dir)")

    p = sub.add_parser("fit", help="fit hemisphere, skull, target and obstacle ellipsoids")
    common(p)
    p.add_argument("--input", help="labelled point cloud (JSON or CSV)")

    p = sub.add_parser("cluster", help="rebuild obstacle ellipsoids from a cloud")
    common(p)
    p.add_argument("--input", help="labelled point cloud (JSON or CSV)")
    p.add_argument("--geometry", help="geometry file whose obstacle list is replaced")

    p = sub.add_parser("plan", help="plan a path on a fitted geometry file")
    common(p)
    p.add_argument("geometry", help="geometry JSON from 'fit'")

    p = sub.add_parser("simulate", help="forward kinematics of a tube parameter file")
    p.add_argument("params", help="tube parameter JSON")
    p.add_argument("-o", "--output", default="path.csv")
    p.add_argument("--nodes", type=int, default=50, help="RK4 nodes per segment")

    p = sub.add_parser("export-obj", help="Wavefront OBJ of the geometry and a path")
    p.add_argument("geometry")
    p.add_argument("-o", "--output", default="scene.obj")
    p.add_argument("--path", help="path CSV or result/path JSON")
    p.add_argument("--resolution", type=int, default=12, help="latitude bands per ellipsoid")
    return ap


def _config(args) -> PipelineConfig:
    overrides = list(args.set)
    if getattr(args, "input", None):
        overrides.append(f"input={json.dumps(args.input)}")
    if args.out:
        overrides.append(f"output_dir={json.dumps(args.out)}")
    cfg = load_config(args.config, overrides)
    _apply_threads(cfg)
    return cfg


_PLAN_CODES = {"optimal": EXIT_OK, "infeasible": EXIT_INFEASIBLE, "homotopy_stalled": EXIT_STALLED}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            cmd_fit(_config(args))
        elif args.command == "cluster":
            cmd_cluster(_config(args), args.geometry)
        elif args.command == "plan":
            result = cmd_plan(_config(args), args.geometry)
            print(f"status={result.status} lambda={result.lambda_reached!r} objective={result.objective!r}")
            code = _PLAN_CODES[result.status]
            if code:
                print(f"error [plan/{result.stage}]: {result.status}", file=sys.stderr)
            return code
        elif args.command == "simulate":
            path = cmd_simulate(args.params, args.output, args.nodes)
            print(f"tip={path.tip.tolist()!r}")
        elif args.command == "export-obj":
            cmd_export_obj(args.geometry, args.output, args.path, args.resolution, 2 * args.resolution)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
