"""Command-line entry point and batch orchestration.

Exit codes: 0 success, 2 configuration error, 3 I/O or data error,
4 run completed but some placements were skipped by validation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .core import Aabb, ObjectRecord, SceneRecord, TriangleMesh
from .errors import OffGridAzimuthError, PcrError
from .fusion import labels_to_json, place_at_azimuth, recombine
from .insertion_map import InsertionConfig, InsertionMap, build_insertion_map, validate_placement
from .io import (
    CloudFileFormat,
    atomic_write_text,
    read_mesh,
    read_object_record,
    read_point_cloud,
    read_scene_record,
    write_mesh,
    write_object_record,
    write_point_cloud,
    write_scene_record,
)
from .metrics import DEFAULT_TAU, compare, format_table_row, noise_reference, occlusion_roi, prune_to_roi
from .metrics import reports_to_csv, reports_to_json
from .occlusion import OCCLUSION_EPS, compute_occlusion, remove_points
from .registration import RegistrationConfig, RegistrationResult, register_mesh_to_cloud
from .synthgen import VirtualScanner, load_world, render_object_in_lab, render_scan

logger = logging.getLogger("pcrecomb")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class SceneEntry:
    id: str
    path: Path


@dataclass(frozen=True)
class ObjectEntry:
    id: str
    path: Path
    mesh: Path


@dataclass(frozen=True)
class RunConfig:
    """Everything a batch run depends on; paths are resolved against the config file."""

    seed: int
    scenes: tuple
    objects: tuple
    output_dir: Path
    mesh_dir: Path | None = None
    placements: dict = field(default_factory=dict)  # object id -> list of degrees or "auto"
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    insertion: InsertionConfig = field(default_factory=InsertionConfig)
    occlusion_eps: float = OCCLUSION_EPS
    occlusion_literal: bool = False
    tau: float = DEFAULT_TAU
    format: CloudFileFormat = CloudFileFormat.PLY_BINARY_LE
    auto_stride_deg: float = 15.0
    auto_count: int = 4

    @classmethod
    def load(cls, path, seed: int | None = None, tau: float | None = None,
             format: str | None = None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw, path.parent, seed=seed, tau=tau, format=format)

    @classmethod
    def from_dict(cls, raw: dict, base: Path, seed=None, tau=None, format=None) -> "RunConfig":
        base = Path(base)

        def resolve(p) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base / p

        seed = raw.get("seed") if seed is None else seed
        if seed is None:
            raise ConfigError("seed is required")
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if "output_dir" not in raw:
            raise ConfigError("output_dir is required")
        mesh_dir = resolve(raw["mesh_dir"]) if "mesh_dir" in raw else None

        scenes = []
        for i, s in enumerate(raw.get("scene", [])):
            if "path" not in s:
                raise ConfigError(f"scene #{i}: path is required")
            scenes.append(SceneEntry(str(s.get("id", Path(s["path"]).stem)), resolve(s["path"])))
        objects = []
        for i, o in enumerate(raw.get("object", [])):
            if "path" not in o or "mesh" not in o:
                raise ConfigError(f"object #{i}: path and mesh are required")
            mesh = Path(o["mesh"])
            mesh = mesh if mesh.is_absolute() else (mesh_dir / mesh if mesh_dir else base / mesh)
            objects.append(ObjectEntry(str(o.get("id", Path(o["path"]).stem)), resolve(o["path"]), mesh))
        if not scenes or not objects:
            raise ConfigError("at least one [[scene]] and one [[object]] are required")
        for kind, entries in (("scene", scenes), ("object", objects)):
            ids = [e.id for e in entries]
            if len(set(ids)) != len(ids):
                raise ConfigError(f"duplicate {kind} ids")

        placements = dict(raw.get("placements", {}))
        known = {o.id for o in objects}
        for k, v in placements.items():
            if k not in known:
                raise ConfigError(f"placements refer to unknown object {k!r}")
            if v != "auto" and not (isinstance(v, list) and all(isinstance(a, (int, float)) for a in v)):
                raise ConfigError(f"placements.{k} must be a list of degrees or \"auto\"")

        try:
            reg = _build(RegistrationConfig, raw.get("registration", {}), seed=seed)
            ins = _build(InsertionConfig, raw.get("insertion", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        occ = raw.get("occlusion", {})
        auto = raw.get("auto", {})
        tau = raw.get("tau", DEFAULT_TAU) if tau is None else tau
        if not tau > 0:
            raise ConfigError("tau must be positive")
        try:
            fmt = CloudFileFormat.parse(format or raw.get("format", "ply_binary_le"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(
            seed=seed,
            scenes=tuple(scenes),
            objects=tuple(objects),
            output_dir=resolve(raw["output_dir"]),
            mesh_dir=mesh_dir,
            placements=placements,
            registration=reg,
            insertion=ins,
            occlusion_eps=float(occ.get("eps", OCCLUSION_EPS)),
            occlusion_literal=bool(occ.get("literal", False)),
            tau=float(tau),
            format=fmt,
            auto_stride_deg=float(auto.get("stride_deg", 15.0)),
            auto_count=int(auto.get("count", 4)),
        )
        cfg.validate_paths()
        return cfg

    def validate_paths(self) -> None:
        for s in self.scenes:
            if not s.path.is_file():
                raise ConfigError(f"scene file not found: {s.path}")
        for o in self.objects:
            if not o.path.is_file():
                raise ConfigError(f"object file not found: {o.path}")
            if not o.mesh.is_file():
                raise ConfigError(f"mesh file not found: {o.mesh}")

    def canonical(self) -> dict:
        """Path-independent description used for the config hash."""
        return {
            "seed": self.seed,
            "scenes": [[s.id, _file_digest(s.path)] for s in self.scenes],
            "objects": [[o.id, _file_digest(o.path), _file_digest(o.mesh)] for o in self.objects],
            "placements": self.placements,
            "registration": _plain(asdict(self.registration)),
            "insertion": _plain(asdict(self.insertion)),
            "occlusion": {"eps": self.occlusion_eps, "literal": self.occlusion_literal},
            "tau": self.tau,
            "format": self.format.value,
            "auto": {"stride_deg": self.auto_stride_deg, "count": self.auto_count},
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _build(cls, section: dict, **overrides):
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in section.items()}
    kwargs.update({k: v for k, v in overrides.items() if k in names})
    return cls(**kwargs)


def _plain(d):
    return json.loads(json.dumps(d, default=list))


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# pipeline steps shared by single commands and batch


def _registration_json(res: RegistrationResult) -> str:
    t = res.transform
    payload = {
        "best_rotation_deg": res.best_rotation_deg,
        "chamfer": res.chamfer,
        "scale": res.scale,
        "symmetry_risk": res.symmetry_risk,
        "transform": {"rotation": t.rotation.tolist(), "translation": t.translation.tolist(), "scale": t.scale},
        "attempts": [
            {"rotation_deg": a.rotation_deg, "chamfer": None if math.isinf(a.chamfer) else a.chamfer, "error": a.error}
            for a in res.attempts
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _ext(fmt: CloudFileFormat) -> str:
    return {"ply": ".ply", "pcd": ".pcd", "xyz": ".csv"}[fmt.value.split("_")[0]]


def _az_tag(deg: float) -> str:
    return f"az{deg:07.2f}".replace(".", "p").replace("-", "m")


def auto_azimuths(obj: ObjectRecord, mesh: TriangleMesh, imap: InsertionMap, scene: SceneRecord,
                  stride_deg: float, count: int) -> list[float]:
    """First ``count`` valid grid azimuths, scanning from the measured bearing in ``stride_deg`` steps."""
    step = math.degrees(imap.config.azimuth_step)
    start = round(math.degrees(obj.azimuth) / step) * step
    out = []
    n = max(1, int(round(360.0 / stride_deg)))
    for k in range(n):
        deg = ((start + k * stride_deg + 180.0) % 360.0) - 180.0
        deg = round(deg / step) * step
        if validate_placement(obj, mesh, imap, scene.cloud, math.radians(deg)).ok:
            out.append(deg)
            if len(out) >= count:
                break
    return out


def _placement_task(args):
    """Worker: one (scene, object, azimuth) tuple. Inputs are immutable, nothing is written here."""
    scene, obj, mesh, imap, deg, eps, literal = args
    t0 = time.perf_counter()
    az = obj.azimuth if deg is None else math.radians(deg)
    verdict = validate_placement(obj, mesh, imap, scene.cloud, az)
    t1 = time.perf_counter()
    if not verdict.ok:
        return {"verdict": verdict, "timings": {"validate": t1 - t0}}
    placed, placed_mesh = place_at_azimuth(obj, mesh, az, imap.config.azimuth_step)
    occ = compute_occlusion(scene.cloud, placed_mesh, eps, literal)
    t2 = time.perf_counter()
    rec = recombine(scene, placed, occ, placed_mesh)
    t3 = time.perf_counter()
    return {
        "verdict": verdict,
        "recombined": rec,
        "n_occluded": len(occ),
        "timings": {"validate": t1 - t0, "occlusion": t2 - t1, "recombine": t3 - t2},
    }


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))  # order follows tasks


def _register_task(args):
    mesh, cloud, cfg = args
    t0 = time.perf_counter()
    res = register_mesh_to_cloud(mesh, cloud, cfg)
    return res, time.perf_counter() - t0


def run_batch(cfg: RunConfig, jobs: int = 1, timings_path: Path | None = None) -> int:
    """Register every object, map every scene, recombine every valid placement.

    Output tree (under ``cfg.output_dir``): ``registration/<object>.ply|.json``,
    ``maps/<scene>.csv``, ``recombined/<scene>__<object>__<az>.<ext>`` with a
    ``.labels.json`` per cloud, and ``manifest.json``. Wall-clock timings are
    kept out of the tree so reruns are byte-identical; pass ``timings_path``
    to record them.
    """
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {"registration": {}, "insertion_map": {}, "placements": {}}
    written: list[Path] = []

    scenes = [(s, read_scene_record(s.path)) for s in cfg.scenes]
    objects = [(o, read_object_record(o.path), read_mesh(o.mesh)) for o in cfg.objects]

    reg_results = _map(_register_task, [(m, rec.cloud, cfg.registration) for _, rec, m in objects], jobs)
    aligned = {}
    registration_summary = {}
    for (o, _, _), (res, dt) in zip(objects, reg_results):
        aligned[o.id] = res.aligned_mesh
        timings["registration"][o.id] = dt
        mp, jp = out / "registration" / f"{o.id}.ply", out / "registration" / f"{o.id}.json"
        write_mesh(res.aligned_mesh, mp)
        atomic_write_text(jp, _registration_json(res))
        written += [mp, jp]
        registration_summary[o.id] = {"chamfer": res.chamfer, "best_rotation_deg": res.best_rotation_deg,
                                      "symmetry_risk": res.symmetry_risk}
        if res.symmetry_risk:
            logger.warning("object %s: ambiguous registration (symmetry risk)", o.id)

    maps = {}
    for s, rec in scenes:
        t0 = time.perf_counter()
        imap = build_insertion_map(rec.cloud, cfg.insertion)
        timings["insertion_map"][s.id] = time.perf_counter() - t0
        maps[s.id] = imap
        p = out / "maps" / f"{s.id}.csv"
        atomic_write_text(p, imap.to_csv())
        written.append(p)

    tasks, keys, skipped = [], [], []
    for s, srec in scenes:
        for o, orec, _ in objects:
            spec = cfg.placements.get(o.id)
            mesh = aligned[o.id]
            if spec == "auto":
                degs = auto_azimuths(orec, mesh, maps[s.id], srec, cfg.auto_stride_deg, cfg.auto_count)
                if not degs:
                    skipped.append({"scene": s.id, "object": o.id, "azimuth_deg": None,
                                    "violations": ["no-valid-azimuth"]})
            elif spec is None:
                degs = [None]
            else:
                degs = [float(d) for d in spec]
            for deg in degs:
                if deg is not None:
                    try:
                        place_at_azimuth(orec, mesh, math.radians(deg), cfg.insertion.azimuth_step)
                    except OffGridAzimuthError as exc:
                        raise ConfigError(f"placements.{o.id}: {exc}") from exc
                tasks.append((srec, orec, mesh, maps[s.id], deg, cfg.occlusion_eps, cfg.occlusion_literal))
                keys.append((s.id, o.id, deg, orec))

    results = _map(_placement_task, tasks, jobs)
    placements = []
    for (sid, oid, deg, orec), res in zip(keys, results):
        az_deg = math.degrees(orec.azimuth) if deg is None else deg
        tag = f"{sid}__{oid}__{_az_tag(az_deg)}"
        timings["placements"][tag] = res["timings"]
        verdict = res["verdict"]
        if not verdict.ok:
            skipped.append({"scene": sid, "object": oid, "azimuth_deg": az_deg,
                            "violations": list(verdict.violations), "details": _plain(verdict.details)})
            logger.warning("skipped %s: %s", tag, ", ".join(verdict.violations))
            continue
        rec = res["recombined"]
        cp = out / "recombined" / f"{tag}{_ext(cfg.format)}"
        lp = out / "recombined" / f"{tag}.labels.json"
        write_point_cloud(rec.cloud, cp, cfg.format)
        atomic_write_text(lp, labels_to_json(rec.labels, frame=tag))
        written += [cp, lp]
        placements.append({"scene": sid, "object": oid, "azimuth_deg": az_deg, "cloud": cp.name,
                           "labels": lp.name, "n_scene": rec.n_scene, "n_object": rec.n_object,
                           "n_occluded": res["n_occluded"], "filled_attributes": list(rec.filled_attributes)})

    manifest = {
        "version": __version__,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "tau": cfg.tau,
        "registration": registration_summary,
        "placements": placements,
        "skipped": skipped,
        "outputs": {p.relative_to(out).as_posix(): _file_digest(p) for p in sorted(written)},
    }
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for section, values in timings.items():
        for k, v in values.items():
            logger.info("timing %s %s: %s", section, k, v)
    if timings_path is not None:
        atomic_write_text(timings_path, json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return EXIT_VALIDATION if skipped else EXIT_OK


# ---------------------------------------------------------------------------
# subcommands


def _load_optional(args) -> dict | None:
    """Sections of a config file for single-step commands (paths are not required there)."""
    if not getattr(args, "config", None):
        return None
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return raw


def _reg_config(args) -> RegistrationConfig:
    raw = _load_optional(args) or {}
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    try:
        return _build(RegistrationConfig, raw.get("registration", {}), seed=seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _ins_config(args) -> InsertionConfig:
    raw = _load_optional(args) or {}
    try:
        return _build(InsertionConfig, raw.get("insertion", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _tau(args) -> float:
    raw = _load_optional(args) or {}
    tau = args.tau if args.tau is not None else raw.get("tau", DEFAULT_TAU)
    if not tau > 0:
        raise ConfigError("tau must be positive")
    return float(tau)


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def cmd_register(args) -> int:
    cfg = _reg_config(args)
    obj = read_object_record(_need(args.object))
    mesh = read_mesh(_need(args.mesh))
    res = register_mesh_to_cloud(mesh, obj.cloud, cfg)
    out = Path(args.out)
    write_mesh(res.aligned_mesh, out / "aligned.ply")
    atomic_write_text(out / "registration.json", _registration_json(res))
    print(f"chamfer {res.chamfer:.6g} m^2 at {res.best_rotation_deg:g} deg"
          + (" (symmetry risk)" if res.symmetry_risk else ""))
    return EXIT_OK


def cmd_occlude(args) -> int:
    scene = read_point_cloud(_need(args.scene))
    mesh = read_mesh(_need(args.mesh))
    raw = _load_optional(args) or {}
    occ_cfg = raw.get("occlusion", {})
    eps = args.eps if args.eps is not None else float(occ_cfg.get("eps", OCCLUSION_EPS))
    literal = args.literal or bool(occ_cfg.get("literal", False))
    occ = compute_occlusion(scene, mesh, eps, literal)
    out = Path(args.out)
    fmt = CloudFileFormat.parse(args.format)
    write_point_cloud(remove_points(scene, occ.occluded_indices), out / f"filtered{_ext(fmt)}", fmt)
    payload = {"occluded_indices": occ.occluded_indices.tolist(), "skipped_indices": occ.skipped_indices.tolist(),
               "eps": eps, "literal": literal}
    atomic_write_text(out / "occlusion.json", json.dumps(payload, sort_keys=True) + "\n")
    print(f"{len(occ)} of {len(scene)} scene points occluded")
    return EXIT_OK


def cmd_recombine(args) -> int:
    scene = read_scene_record(_need(args.scene))
    obj = read_object_record(_need(args.object))
    mesh = read_mesh(_need(args.mesh))
    raw = _load_optional(args) or {}
    occ_cfg = raw.get("occlusion", {})
    ins = _ins_config(args)
    if args.azimuth is not None:
        try:
            obj, mesh = place_at_azimuth(obj, mesh, math.radians(args.azimuth), ins.azimuth_step)
        except OffGridAzimuthError as exc:
            raise ConfigError(str(exc)) from exc
    if args.validate:
        imap = build_insertion_map(scene.cloud, ins)
        verdict = validate_placement(obj, mesh, imap, scene.cloud)
        if not verdict.ok:
            print("placement rejected: " + ", ".join(verdict.violations), file=sys.stderr)
            return EXIT_VALIDATION
    occ = compute_occlusion(scene.cloud, mesh, float(occ_cfg.get("eps", OCCLUSION_EPS)),
                            bool(occ_cfg.get("literal", False)))
    rec = recombine(scene, obj, occ, mesh)
    out = Path(args.out)
    fmt = CloudFileFormat.parse(args.format)
    write_point_cloud(rec.cloud, out / f"recombined{_ext(fmt)}", fmt)
    atomic_write_text(out / "labels.json", labels_to_json(rec.labels, frame="recombined"))
    print(f"{rec.n_scene} scene + {rec.n_object} object points, {len(occ)} occluded")
    return EXIT_OK


def cmd_insertion_map(args) -> int:
    scene = read_point_cloud(_need(args.scene))
    imap = build_insertion_map(scene, _ins_config(args))
    atomic_write_text(Path(args.out), imap.to_csv())
    print(f"{int(imap.valid.sum())} of {imap.valid.size} cells valid")
    return EXIT_OK


def _parse_roi(text: str) -> Aabb:
    try:
        v = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError("--roi expects xmin,ymin,zmin,xmax,ymax,zmax")
    if len(v) != 6:
        raise ConfigError("--roi expects xmin,ymin,zmin,xmax,ymax,zmax")
    return Aabb(np.array(v[:3]), np.array(v[3:]))


def _emit_reports(rows, fmt: str, out: str | None) -> None:
    text = reports_to_csv(rows) if fmt == "csv" else reports_to_json(rows)
    if out:
        atomic_write_text(Path(out), text)
    else:
        sys.stdout.write(text)


def cmd_metrics(args) -> int:
    ref = read_point_cloud(_need(args.reference))
    cand = read_point_cloud(_need(args.candidate))
    roi = None
    if args.roi:
        roi = _parse_roi(args.roi)
    elif args.roi_mesh:
        roi = occlusion_roi(read_mesh(_need(args.roi_mesh)))
    if roi is not None:
        ref, cand = prune_to_roi(ref, cand, roi)
    rep = compare(cand, ref, _tau(args))
    _emit_reports([({"reference": args.reference, "candidate": args.candidate}, rep)], args.format, args.out)
    print(format_table_row("candidate", rep), file=sys.stderr)
    return EXIT_OK


def cmd_noise_ref(args) -> int:
    a = read_point_cloud(_need(args.scan_a))
    b = read_point_cloud(_need(args.scan_b))
    rep = noise_reference(a, b, _tau(args))
    _emit_reports([({"scan_a": args.scan_a, "scan_b": args.scan_b}, rep)], args.format, args.out)
    print(format_table_row("Noise Reference", rep), file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        world, scanner = load_world(_need(args.world))
    except ValueError as exc:
        raise ConfigError(f"{args.world}: {exc}") from exc
    scanner = scanner or VirtualScanner()
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    fmt = CloudFileFormat.parse(args.format)
    if args.lab_object is not None:
        if not 0 <= args.lab_object < len(world.primitives):
            raise ConfigError(f"--lab-object {args.lab_object} out of range")
        prim = world.primitives[args.lab_object]
        pos = np.asarray(getattr(prim, "position", (0.0, 0.0, 0.0)), dtype=np.float64)
        rng = float(np.hypot(pos[0], pos[1]))
        rec, mesh = render_object_in_lab(prim, scanner, rng, math.atan2(pos[1], pos[0]), -pos[2], seed,
                                         mesh_id=args.name, object_type=type(prim).__name__.lower())
        write_object_record(rec, out, args.name, fmt)
        write_mesh(mesh, out / f"{args.name}.gt.ply")
        print(f"{len(rec.cloud)} object returns")
        return EXIT_OK
    cloud = render_scan(world, scanner, seed)
    write_scene_record(SceneRecord(cloud, args.sensor_height, {"world": Path(args.world).name, "seed": seed}),
                       out, args.name, fmt)
    write_mesh(world.mesh(), out / f"{args.name}.gt.ply")
    print(f"{len(cloud)} returns")
    return EXIT_OK


def cmd_batch(args) -> int:
    if not args.config:
        raise ConfigError("batch needs --config")
    cfg = RunConfig.load(args.config, seed=args.seed, tau=args.tau, format=args.format)
    return run_batch(cfg, jobs=args.jobs, timings_path=Path(args.timings) if args.timings else None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcrecomb", description="Insert scanned objects into LiDAR scenes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    cloud_formats = [f.value for f in CloudFileFormat]

    def common(sp, tau=False, fmt=None):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int, default=1)
        if tau:
            sp.add_argument("--tau", type=float, help=f"F1 threshold in meters (default {DEFAULT_TAU})")
        if fmt == "cloud":
            sp.add_argument("--format", default="ply_binary_le", choices=cloud_formats)
        elif fmt == "report":
            sp.add_argument("--format", default="csv", choices=["csv", "json"])

    sp = sub.add_parser("register", help="align a mesh to an object scan")
    sp.add_argument("--object", required=True, help="object cloud with .meta.json sidecar")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_register)

    sp = sub.add_parser("occlude", help="remove scene points shadowed by a mesh")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--mesh", required=True, help="mesh in the scene's sensor frame")
    sp.add_argument("--out", required=True)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--literal", action="store_true", help="mark every ray that hits the mesh at any distance")
    common(sp, fmt="cloud")
    sp.set_defaults(func=cmd_occlude)

    sp = sub.add_parser("recombine", help="occlude and insert one object")
    sp.add_argument("--scene", required=True, help="scene cloud with .meta.json sidecar")
    sp.add_argument("--object", required=True)
    sp.add_argument("--mesh", required=True, help="registered mesh at the object's measured pose")
    sp.add_argument("--azimuth", type=float, help="target bearing in degrees")
    sp.add_argument("--validate", action="store_true", help="check the placement against the insertion map")
    sp.add_argument("--out", required=True)
    common(sp, fmt="cloud")
    sp.set_defaults(func=cmd_recombine)

    sp = sub.add_parser("insertion-map", help="grid of valid placement cells")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out", required=True, help="CSV path")
    common(sp)
    sp.set_defaults(func=cmd_insertion_map)

    sp = sub.add_parser("metrics", help="compare a candidate cloud to a reference")
    sp.add_argument("reference")
    sp.add_argument("candidate")
    sp.add_argument("--roi", help="xmin,ymin,zmin,xmax,ymax,zmax")
    sp.add_argument("--roi-mesh", help="derive the ROI from this mesh and its shadow")
    sp.add_argument("--out")
    common(sp, tau=True, fmt="report")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("noise-ref", help="baseline metrics between two scans of one scene")
    sp.add_argument("scan_a")
    sp.add_argument("scan_b")
    sp.add_argument("--out")
    common(sp, tau=True, fmt="report")
    sp.set_defaults(func=cmd_noise_ref)

    sp = sub.add_parser("synth", help="render a synthetic world file")
    sp.add_argument("world")
    sp.add_argument("--out", required=True)
    sp.add_argument("--name", default="scan")
    sp.add_argument("--sensor-height", type=float, default=1.5)
    sp.add_argument("--lab-object", type=int, help="render only this primitive (0-based) as an object record")
    common(sp, fmt="cloud")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("batch", help="run a full configuration")
    sp.add_argument("--timings", help="write wall-clock timings here (kept out of the output tree)")
    common(sp, tau=True)
    sp.add_argument("--format", choices=cloud_formats, help="override the config's cloud format")
    sp.set_defaults(func=cmd_batch)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, PcrError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
