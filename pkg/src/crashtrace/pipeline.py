"""End-to-end per-case orchestration, batch runs, and the exclusion ledger.

Every case either yields a package directory (verbatim report, summary,
pruned map, OpenDRIVE map, scene document, validation report) or exactly
one exclusion reason; a batch never aborts on a bad case, so the ledger is
a total accounting of its inputs. Deterministic: the same fixtures produce
byte-identical packages at any parallelism.

Replay validation deliberately runs off the freshly written artifacts
rather than in-memory state, so ``replay_command`` on a package reproduces
its ``validation.json`` byte for byte.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from . import crash_api, errors, estimator, opendrive, osm, reports
from .estimator import EstimationSettings, SceneSpec, parse_scene, serialize_scene
from .geometry import PlanarPoint, project
from .reports import CaseKey, CrashReport
from .roadnet import (
    DEFAULT_LANE_WIDTH_M,
    GEO_VALIDATION_TOLERANCE,
    build_road_network,
    locate_crash_point,
    unify_lanes,
    validate_geometry,
)
from .simulator import (
    DEFAULT_DT_S,
    ValidationReport,
    VehicleBody,
    simulate,
    validate_reconstruction,
    validation_to_json,
)
from .trajectory import Trajectory, Waypoint, generate_trajectory


class ExclusionReason(Enum):
    UNSUPPORTED_VERTICAL_GEOMETRY = "UnsupportedVerticalGeometry"
    INCOMPLETE_INFO = "IncompleteInfo"
    INCONSISTENT_CRASH_LOCATION = "InconsistentCrashLocation"
    GEOMETRY_VALIDATION_FAILED = "GeometryValidationFailed"
    ESTIMATION_FAILED = "EstimationFailed"
    FAILED_TO_COLLIDE = "FailedToCollide"
    VALIDATION_FAILED = "ValidationFailed"
    NOT_DUAL_VEHICLE = "NotDualVehicle"
    FETCH_FAILED = "FetchFailed"


PACKAGE_FILES = (
    "report.xml", "summary.md", "map.osm", "map.xodr", "scenario.json", "validation.json",
)


@dataclass(frozen=True)
class CasePackage:
    case_key: CaseKey
    directory: Path


@dataclass(frozen=True)
class CaseOutcome:
    case_key: CaseKey
    package: CasePackage | None = None
    reason: ExclusionReason | None = None

    @property
    def excluded(self) -> bool:
        return self.reason is not None

    def ledger_line(self) -> str:
        if self.excluded:
            return f"{self.case_key.slug}\texcluded\t{self.reason.value}"
        return f"{self.case_key.slug}\tpackage\t-"


@dataclass
class PipelineConfig:
    api_base_url: str = crash_api.DEFAULT_API_BASE
    overpass_url: str = osm.DEFAULT_OVERPASS_URL
    cache_dir: Path | None = None
    offline: bool = False
    fixtures_dir: Path | None = None
    out_dir: Path = field(default_factory=lambda: Path("out"))
    radius_m: float = 500.0
    lane_width_m: float = DEFAULT_LANE_WIDTH_M
    geo_tolerance: float = GEO_VALIDATION_TOLERANCE
    estimator_mode: str = "heuristic"
    llm_endpoint: str | None = None
    llm_model: str | None = None
    max_retries: int = estimator.DEFAULT_MAX_RETRIES
    dt_s: float = DEFAULT_DT_S
    horizon_s: float = estimator.DEFAULT_HORIZON_S
    default_speed_mps: float = estimator.DEFAULT_SPEED_MPS
    body_length_m: float = 4.5
    body_width_m: float = 1.9
    parallelism: int | None = None
    # test seams: injectable transports
    report_transport: Callable[[str], str] | None = None
    osm_transport: Callable[[str, str], str] | None = None
    llm_transport: Callable[[str], str] | None = None

    def estimation_settings(self) -> EstimationSettings:
        return EstimationSettings(
            mode=self.estimator_mode,
            max_retries=self.max_retries,
            horizon_s=self.horizon_s,
            default_speed_mps=self.default_speed_mps,
            llm_endpoint=self.llm_endpoint,
            llm_model=self.llm_model,
            llm_transport=self.llm_transport,
        )

    def bodies(self) -> tuple[VehicleBody, VehicleBody]:
        body = VehicleBody(self.body_length_m, self.body_width_m)
        return (body, body)


@dataclass(frozen=True)
class Clients:
    report_client: crash_api.CrashApiClient
    osm_client: osm.OsmClient


def build_clients(config: PipelineConfig) -> Clients:
    return Clients(
        crash_api.CrashApiClient(
            base_url=config.api_base_url,
            cache_dir=config.cache_dir,
            offline=config.offline,
            fixtures_dir=config.fixtures_dir,
            transport=config.report_transport,
        ),
        osm.OsmClient(
            url=config.overpass_url,
            cache_dir=config.cache_dir,
            offline=config.offline,
            fixtures_dir=config.fixtures_dir,
            transport=config.osm_transport,
        ),
    )


# ---------------------------------------------------------------------------
# scenario document (scene schema plus embedded waypoints)
# ---------------------------------------------------------------------------


def scenario_document(scene: SceneSpec, trajectories: Sequence[Trajectory]) -> str:
    doc = json.loads(serialize_scene(scene))
    by_id = {t.vehicle_id: t for t in trajectories}
    for entry in doc["vehicles"]:
        traj = by_id[entry["id"]]
        entry["waypoints"] = [
            {
                "x": w.position.x,
                "y": w.position.y,
                "heading_deg": math.degrees(w.heading),
                "target_speed_mps": w.target_speed,
            }
            for w in traj.waypoints
        ]
    return json.dumps(doc, indent=2) + "\n"


def parse_scenario(text: str) -> tuple[SceneSpec, tuple[Trajectory, ...]]:
    scene = parse_scene(text)
    doc = json.loads(text)
    trajectories = []
    for entry in doc["vehicles"]:
        waypoints = tuple(
            Waypoint(
                PlanarPoint(float(w["x"]), float(w["y"])),
                math.radians(float(w["heading_deg"])),
                float(w["target_speed_mps"]),
            )
            for w in entry.get("waypoints", ())
        )
        trajectories.append(Trajectory(int(entry["id"]), waypoints))
    return scene, tuple(trajectories)


# ---------------------------------------------------------------------------
# single case
# ---------------------------------------------------------------------------


class _Excluded(Exception):
    def __init__(self, reason: ExclusionReason):
        self.reason = reason


def _stage(exc_map: dict, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except tuple(exc_map) as exc:
        for exc_type, reason in exc_map.items():
            if isinstance(exc, exc_type):
                raise _Excluded(reason) from exc
        raise


_FETCH_ERRORS = {
    errors.NetworkError: ExclusionReason.FETCH_FAILED,
    errors.NotFound: ExclusionReason.FETCH_FAILED,
    errors.CacheMiss: ExclusionReason.FETCH_FAILED,
}

_ESTIMATION_ERRORS = {
    errors.NoCandidates: ExclusionReason.ESTIMATION_FAILED,
    errors.NoValidPlacement: ExclusionReason.ESTIMATION_FAILED,
    errors.EstimationFailed: ExclusionReason.ESTIMATION_FAILED,
    errors.EndpointError: ExclusionReason.ESTIMATION_FAILED,
}


def run_case(key: CaseKey, config: PipelineConfig, clients: Clients | None = None) -> CaseOutcome:
    """Run one case through every stage; failures become exclusion reasons."""
    clients = clients or build_clients(config)
    try:
        artifacts = _reconstruct(key, config, clients)
    except _Excluded as exc:
        return CaseOutcome(key, reason=exc.reason)

    package_dir = Path(config.out_dir) / f"case_{key.slug}"
    package_dir.mkdir(parents=True, exist_ok=True)
    for name, content in artifacts.items():
        (package_dir / name).write_text(content, encoding="utf-8")
    return CaseOutcome(key, package=CasePackage(key, package_dir))


def _reconstruct(key: CaseKey, config: PipelineConfig, clients: Clients) -> dict[str, str]:
    raw = _stage(_FETCH_ERRORS, clients.report_client.fetch_case, key)
    report = _stage(
        {errors.MalformedDocument: ExclusionReason.INCOMPLETE_INFO},
        reports.parse_report, raw,
    )
    verdict = reports.check_completeness(report)
    if not verdict.accepted:
        raise _Excluded(ExclusionReason.INCOMPLETE_INFO)
    if not reports.filter_dual_vehicle(report):
        raise _Excluded(ExclusionReason.NOT_DUAL_VEHICLE)

    origin = report.crash_coords
    graph = _stage(
        {**_FETCH_ERRORS, errors.EmptyExtract: ExclusionReason.INCONSISTENT_CRASH_LOCATION},
        clients.osm_client.retrieve_osm, origin, config.radius_m,
    )
    pruned = _stage(
        {errors.EmptyAfterPrune: ExclusionReason.INCONSISTENT_CRASH_LOCATION},
        osm.prune_osm, graph, origin, config.radius_m,
    )
    if osm.detect_vertical_geometry(pruned):
        raise _Excluded(ExclusionReason.UNSUPPORTED_VERTICAL_GEOMETRY)

    geometry_errors = {
        errors.DegenerateGeometry: ExclusionReason.GEOMETRY_VALIDATION_FAILED,
        errors.OutOfExtent: ExclusionReason.GEOMETRY_VALIDATION_FAILED,
        errors.TooFewNodes: ExclusionReason.GEOMETRY_VALIDATION_FAILED,
    }
    network = _stage(geometry_errors, build_road_network, pruned, origin, config.lane_width_m)
    network = unify_lanes(network)
    geo_check = _stage(geometry_errors, validate_geometry, pruned, network, origin,
                       config.geo_tolerance)
    if not geo_check.passed:
        raise _Excluded(ExclusionReason.GEOMETRY_VALIDATION_FAILED)

    crash_planar = project(origin, origin)
    crash_fix = locate_crash_point(network, crash_planar)
    if crash_fix is None:
        raise _Excluded(ExclusionReason.INCONSISTENT_CRASH_LOCATION)

    settings = config.estimation_settings()
    region = _stage(_ESTIMATION_ERRORS, estimator.candidate_regions,
                    network, report, crash_fix, settings)
    scene, _trace = _stage(_ESTIMATION_ERRORS, estimator.estimate_with_feedback,
                           report, network, region, crash_fix, settings)

    trajectories = []
    for state, vid, maneuver in zip(scene.states, scene.vehicle_ids, scene.maneuvers):
        traj = _stage(
            {errors.UnreachableCrashPoint: ExclusionReason.FAILED_TO_COLLIDE},
            generate_trajectory, state, scene.crash_point, network, maneuver, vid,
        )
        trajectories.append(traj)

    map_osm = osm.write_osm(pruned)
    map_xodr = opendrive.emit_opendrive(network)
    scenario_json = scenario_document(scene, trajectories)

    # replay from the persisted form so a later replay reproduces this bitwise
    scene2, trajectories2 = parse_scenario(scenario_json)
    outcome = simulate(scene2, trajectories2, config.bodies(), config.dt_s)
    validation = validate_reconstruction(outcome, report, scene2.crash_point)
    if not outcome.collided:
        raise _Excluded(ExclusionReason.FAILED_TO_COLLIDE)
    if not validation.passed:
        raise _Excluded(ExclusionReason.VALIDATION_FAILED)

    return {
        "report.xml": raw.body,
        "summary.md": emit_summary(report, validation),
        "map.osm": map_osm,
        "map.xodr": map_xodr,
        "scenario.json": scenario_json,
        "validation.json": validation_to_json(validation),
    }


# ---------------------------------------------------------------------------
# batches and the ledger
# ---------------------------------------------------------------------------


def run_batch(
    case_list: Sequence[CaseKey], config: PipelineConfig
) -> tuple[list[CasePackage], list[CaseOutcome]]:
    """Run cases with bounded parallelism; the ledger covers every input once.

    Results are ordered by the input list, so they do not depend on worker
    scheduling.
    """
    if not case_list:
        raise ValueError("case list is empty")
    clients = build_clients(config)
    workers = config.parallelism
    if workers is None:
        workers = os.cpu_count() or 1
        if not config.offline:
            workers = min(workers, 4)  # politeness cap on external-service calls

    if workers == 1:
        outcomes = [run_case(key, config, clients) for key in case_list]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda key: run_case(key, config, clients), case_list))

    packages = [o.package for o in outcomes if o.package is not None]
    print(batch_summary(outcomes))
    return packages, outcomes


def batch_summary(outcomes: Sequence[CaseOutcome]) -> str:
    counts = Counter(o.reason for o in outcomes if o.excluded)
    parts = [f"packages={sum(1 for o in outcomes if not o.excluded)}"]
    for reason in ExclusionReason:
        if counts[reason]:
            parts.append(f"{reason.value}={counts[reason]}")
    return f"processed {len(outcomes)} cases: " + " ".join(parts)


def write_ledger(outcomes: Sequence[CaseOutcome], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(o.ledger_line() + "\n" for o in outcomes), encoding="utf-8")


# ---------------------------------------------------------------------------
# summary, coverage, replay
# ---------------------------------------------------------------------------


def _display(category) -> str:
    return category.value if category is not None else "(not reported)"


def emit_summary(report: CrashReport, validation: ValidationReport) -> str:
    """Human-readable case digest; deterministic for identical inputs."""
    lines = [f"# Crash case {report.case_key.slug}", ""]
    if report.crash_coords is not None:
        lines.append(
            f"Location: {report.crash_coords.latitude!r}, {report.crash_coords.longitude!r}"
        )
    lines.append(f"Type of collision: {_display(report.collision_type)}")
    lines.append(f"Road topology: {_display(report.road_topology)}")
    lines.append(f"Vehicle trajectory: {_display(report.trajectory_relation)}")
    lines.append("")
    lines.append("## Vehicles")
    lines.append("")
    for v in report.vehicles:
        speed = f"{v.travel_speed:.4f} m/s" if v.travel_speed is not None else "speed unknown"
        clock = f"impact clock {v.impact_clock}" if v.impact_clock is not None \
            else "impact clock unknown"
        lines.append(f"- Vehicle {v.vehicle_id}: {v.maneuver.value}, {speed}, {clock}")
    if report.event_sequence:
        lines.append("")
        lines.append("## Events")
        lines.append("")
        for i, ev in enumerate(report.event_sequence, start=1):
            lines.append(f"{i}. {ev}")
    lines.append("")
    lines.append("## Reconstruction validation")
    lines.append("")
    lines.append("PASSED" if validation.passed else "FAILED")
    if math.isinf(validation.location_error):
        lines.append("- no collision reproduced")
    else:
        lines.append(f"- location error: {validation.location_error:.3f} m")
    for v, dev in zip(report.vehicles, validation.clock_deviation):
        if dev is None:
            lines.append(f"- vehicle {v.vehicle_id}: clock check skipped")
        else:
            lines.append(f"- vehicle {v.vehicle_id}: clock deviation {dev}")
    for v, ok in zip(report.vehicles, validation.direction_match):
        lines.append(f"- vehicle {v.vehicle_id}: direction match {'yes' if ok else 'no'}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CoverageTable:
    collision: dict
    topology: dict
    trajectory: dict
    total: int

    def render(self) -> str:
        from .reports import CollisionType, RoadTopology, TrajectoryRelation

        sections = [
            ("Type of Collision", CollisionType, self.collision),
            ("Road Topology", RoadTopology, self.topology),
            ("Vehicle Trajectory", TrajectoryRelation, self.trajectory),
        ]
        lines = []
        for title, enum_cls, counts in sections:
            lines.append(title)
            for member in enum_cls:
                lines.append(f"  {member.value:<36} {counts.get(member, 0)}")
        return "\n".join(lines) + "\n"


def coverage_stats(package_root: Path) -> CoverageTable:
    """Tally the three category dimensions over every package's report."""
    package_root = Path(package_root)
    report_paths = sorted(package_root.glob("case_*/report.xml"))
    if not report_paths:
        raise errors.EmptyDirectory(f"no case packages under {package_root}")

    from .reports import CollisionType, RoadTopology, TrajectoryRelation

    collision: Counter = Counter()
    topology: Counter = Counter()
    trajectory: Counter = Counter()
    for path in report_paths:
        slug = path.parent.name.removeprefix("case_")
        try:
            state, case, year = (int(v) for v in slug.split("_"))
            key = CaseKey(state, case, year)
        except ValueError:
            key = CaseKey(0, 0, 0)
        report = reports.parse_report(reports.RawCaseDocument(key, path.read_text("utf-8")))
        collision[report.collision_type or CollisionType.OTHER] += 1
        topology[report.road_topology or RoadTopology.OTHER] += 1
        trajectory[report.trajectory_relation or TrajectoryRelation.OTHER] += 1
    return CoverageTable(dict(collision), dict(topology), dict(trajectory), len(report_paths))


def replay_command(
    scenario_path: Path,
    map_path: Path,
    dt: float = DEFAULT_DT_S,
    bodies: tuple[VehicleBody, VehicleBody] | None = None,
) -> ValidationReport:
    """Re-run the replay from persisted artifacts.

    The report document is read from ``report.xml`` next to the scenario
    file (packages always carry it); identical inputs reproduce the stored
    validation verdict exactly.
    """
    scenario_path, map_path = Path(scenario_path), Path(map_path)
    if not scenario_path.is_file():
        raise errors.ParseError(f"missing scenario file {scenario_path}")
    if not map_path.is_file():
        raise errors.ParseError(f"missing map file {map_path}")
    opendrive.parse_opendrive(map_path.read_text("utf-8"))

    try:
        scene, trajectories = parse_scenario(scenario_path.read_text("utf-8"))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise errors.ParseError(f"bad scenario document: {exc}") from exc

    report_path = scenario_path.parent / "report.xml"
    if not report_path.is_file():
        raise errors.ParseError(f"missing report document {report_path}")
    report = reports.parse_report(
        reports.RawCaseDocument(scene.case_key, report_path.read_text("utf-8"))
    )

    bodies = bodies or (VehicleBody(), VehicleBody())
    outcome = simulate(scene, trajectories, bodies, dt)
    return validate_reconstruction(outcome, report, scene.crash_point)


def replay_package(package_dir: Path, dt: float = DEFAULT_DT_S) -> ValidationReport:
    package_dir = Path(package_dir)
    return replay_command(package_dir / "scenario.json", package_dir / "map.xodr", dt)
