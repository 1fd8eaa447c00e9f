"""Initial-state estimation: where each vehicle was before the crash.

The default estimator is deterministic: it traces a backward trajectory
from the crash point along each vehicle's admissible approach (path
distance = reported speed times the approach horizon, 6 s by default),
assigns the rightmost lane for the travel direction, and aligns the
heading with the lane tangent. An external text-completion endpoint can be
used instead; either way every proposal passes through the same analytical
checks, and rejected proposals are re-attempted with the violations fed
back, up to a retry budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Callable, NamedTuple, Sequence

from .errors import (
    EndpointError,
    EstimationFailed,
    NoCandidates,
    NoValidPlacement,
    UnparseableResponse,
)
from .geometry import (
    PlanarPoint,
    bearing,
    cumulative_lengths,
    distance,
    locate_on_polyline,
    offset_point,
    point_in_polygon,
    tangent_at,
    wrap_angle,
)
from .reports import CaseKey, CrashReport, Maneuver
from .roadnet import (
    Junction,
    Road,
    RoadLocation,
    RoadNetwork,
    lane_offset,
    locate_crash_point,
    travel_direction,
)

DEFAULT_HORIZON_S = 6.0
DEFAULT_SPEED_MPS = 13.41  # assigned when the report gives no travel speed
DEFAULT_MAX_RETRIES = 3
ORIENTATION_TOLERANCE_DEG = 30.0
MANEUVER_TOLERANCE_DEG = 45.0
TURN_THRESHOLD_DEG = 30.0


def canonical_heading(rad: float) -> float:
    """Quantize a heading so the degree serialization round-trips exactly."""
    return math.radians(round(math.degrees(wrap_angle(rad)), 9))


@dataclass(frozen=True)
class InitialState:
    position: PlanarPoint
    heading: float      # radians, counterclockwise from east
    speed: float        # m/s
    road_id: int
    lane_index: int     # signed; positive is right of centerline in travel direction


@dataclass(frozen=True)
class SceneSpec:
    case_key: CaseKey
    crash_point: PlanarPoint
    states: tuple[InitialState, InitialState]
    vehicle_ids: tuple[int, int]
    maneuvers: tuple[Maneuver, Maneuver]
    map_file: str = "map.xodr"


@dataclass(frozen=True)
class EstimatorTrace:
    attempts: tuple[tuple[tuple[InitialState, InitialState] | None, tuple[str, ...]], ...]

    @property
    def attempt_count(self) -> int:
        return len(self.attempts)


class Approach(NamedTuple):
    """One admissible spawn interval: travel along a road toward the crash."""

    road_id: int
    s_contact: float   # arc length where the approach meets the crash/junction
    direction: int     # +1 travels toward increasing s
    run: float         # admissible backward distance from the contact point
    hop: int = 0       # 0 on the crash road, 1+ on connected continuations

    @property
    def interval(self) -> tuple[float, float]:
        lo = self.s_contact - self.run if self.direction > 0 else self.s_contact
        return (lo, lo + self.run)


@dataclass(frozen=True)
class CandidateRegion:
    vehicle_approaches: tuple[tuple[Approach, ...], ...]
    crash: RoadLocation
    junction: Junction | None = None


@dataclass(frozen=True)
class EstimationSettings:
    mode: str = "heuristic"  # heuristic | llm
    max_retries: int = DEFAULT_MAX_RETRIES
    horizon_s: float = DEFAULT_HORIZON_S
    default_speed_mps: float = DEFAULT_SPEED_MPS
    llm_endpoint: str | None = None
    llm_model: str | None = None
    llm_transport: Callable[[str], str] | None = None


def _vehicle_distances(report: CrashReport, settings: EstimationSettings) -> list[float]:
    out = []
    for record in report.vehicles:
        speed = record.travel_speed if record.travel_speed is not None \
            else settings.default_speed_mps
        out.append(speed * settings.horizon_s)
    return out


def _road_approaches(road: Road, s_contact: float, d: float, hop: int = 0) -> list[Approach]:
    """Approaches toward ``s_contact`` from both sides, clipped to the road."""
    out = []
    room_below = s_contact
    room_above = road.length - s_contact
    if room_below > 1.0:
        out.append(Approach(road.road_id, s_contact, 1, min(d, room_below), hop))
    if room_above > 1.0:
        out.append(Approach(road.road_id, s_contact, -1, min(d, room_above), hop))
    return out


def _junction_for_crash(network: RoadNetwork, crash: RoadLocation) -> Junction | None:
    crash_road = network.road(crash.road_id)
    crash_pt = offset_point(crash_road.centerline, crash.s, crash.offset)
    containing = [
        j for j in network.junctions if point_in_polygon(crash_pt, j.boundary)
    ]
    if containing:
        return min(containing, key=lambda j: (distance(j.center, crash_pt), j.junction_id))
    near = [
        (distance(j.center, crash_pt), j.junction_id, j)
        for j in network.junctions
        if distance(j.center, crash_pt) <= 30.0
    ]
    return min(near)[2] if near else None


def candidate_regions(
    network: RoadNetwork,
    report: CrashReport,
    crash: RoadLocation,
    settings: EstimationSettings = EstimationSettings(),
) -> CandidateRegion:
    """Admissible spawn intervals per vehicle, derived from topology and
    the reported trafficway relation."""
    from .reports import TrajectoryRelation

    distances = _vehicle_distances(report, settings)
    crash_road = network.road(crash.road_id)
    topology = report.road_topology
    relation = report.trajectory_relation

    junction = None
    if topology is not None and topology.is_intersection:
        junction = _junction_for_crash(network, crash)

    per_vehicle: list[tuple[Approach, ...]] = []
    if junction is not None:
        for d in distances:
            approaches = []
            for member in junction.members:
                road = network.road(member)
                fix = locate_on_polyline(road.centerline, junction.center)
                approaches.extend(_road_approaches(road, fix.s, d))
            per_vehicle.append(tuple(approaches))
    else:
        for i, d in enumerate(distances):
            below, above = [], []
            for a in _road_approaches(crash_road, crash.s, d):
                (below if a.direction > 0 else above).append(a)
            if relation is TrajectoryRelation.SAME_TRAFFICWAY_OPPOSITE_DIRECTION:
                chosen = below if i == 0 else above
                chosen = chosen or (above if i == 0 else below)
            elif relation is TrajectoryRelation.SAME_TRAFFICWAY_SAME_DIRECTION:
                options = below + above
                chosen = [max(options, key=lambda a: (a.run, a.direction))] if options else []
            else:
                chosen = below + above
            per_vehicle.append(tuple(chosen))

    for i, approaches in enumerate(per_vehicle):
        if not approaches:
            raise NoCandidates(f"vehicle {report.vehicles[i].vehicle_id}: no admissible approach")
    return CandidateRegion(tuple(per_vehicle), crash, junction)


def _approach_heading(network: RoadNetwork, approach: Approach) -> float:
    road = network.road(approach.road_id)
    t = tangent_at(road.centerline, max(approach.s_contact - 0.5 * approach.direction, 0.0))
    return t if approach.direction > 0 else wrap_angle(t + math.pi)


def _crash_planar(network: RoadNetwork, crash: RoadLocation) -> PlanarPoint:
    road = network.road(crash.road_id)
    return offset_point(road.centerline, crash.s, crash.offset)


def _pick_approaches(
    region: CandidateRegion, report: CrashReport, network: RoadNetwork
) -> list[Approach]:
    """Deterministic approach assignment; ties break toward low road ids."""
    from .reports import TrajectoryRelation

    relation = report.trajectory_relation
    crash_pt = _crash_planar(network, region.crash)
    order = lambda a: (a.hop, a.road_id, -a.direction, a.s_contact)
    chosen: list[Approach] = []

    for i, record in enumerate(report.vehicles):
        options = sorted(region.vehicle_approaches[i], key=order)
        pick = None
        if record.maneuver in (Maneuver.TURNING_LEFT, Maneuver.TURNING_RIGHT):
            want_left = record.maneuver is Maneuver.TURNING_LEFT
            for a in options:
                h_in = _approach_heading(network, a)
                h_out = _exit_heading(network, region.crash, crash_pt, a)
                turn = math.degrees(wrap_angle(h_out - h_in))
                if (turn >= TURN_THRESHOLD_DEG) == want_left and abs(turn) >= TURN_THRESHOLD_DEG:
                    pick = a
                    break
        elif chosen and relation is TrajectoryRelation.INTERSECTING_PATHS:
            h_prev = _approach_heading(network, chosen[0])
            for a in options:
                dh = abs(wrap_angle(_approach_heading(network, a) - h_prev))
                dh = min(dh, math.pi - dh)
                if math.radians(45.0) <= dh:
                    pick = a
                    break
            if pick is None:
                pick = next((a for a in options if a.road_id != chosen[0].road_id), None)
        elif chosen and relation is TrajectoryRelation.SAME_TRAFFICWAY_OPPOSITE_DIRECTION:
            pick = next(
                (a for a in options
                 if a.road_id == chosen[0].road_id and a.direction != chosen[0].direction),
                None,
            )
            if pick is None:
                # e.g. split arms at a junction: take the antiparallel approach
                h_prev = _approach_heading(network, chosen[0])
                pick = next(
                    (a for a in options
                     if abs(wrap_angle(_approach_heading(network, a) - h_prev - math.pi))
                     <= math.radians(45.0)),
                    None,
                )
        if pick is None:
            pick = options[0]
        chosen.append(pick)
    return chosen


def _exit_heading(network: RoadNetwork, crash: RoadLocation, crash_pt: PlanarPoint,
                  approach: Approach) -> float:
    """Heading out of the junction toward the crash fix."""
    crash_road = network.road(crash.road_id)
    t = tangent_at(crash_road.centerline, crash.s)
    contact = network.road(approach.road_id)
    start = offset_point(contact.centerline, approach.s_contact, 0.0)
    if distance(start, crash_pt) > 1.0:
        return bearing(start, crash_pt)
    return t


def heuristic_estimate(
    region: CandidateRegion,
    report: CrashReport,
    network: RoadNetwork,
    crash: RoadLocation,
    settings: EstimationSettings = EstimationSettings(),
) -> tuple[InitialState, InitialState]:
    """Backward-trajectory placement with right-hand lane assignment."""
    distances = _vehicle_distances(report, settings)
    approaches = _pick_approaches(region, report, network)

    states = []
    for record, d, approach in zip(report.vehicles, distances, approaches):
        road = network.road(approach.road_id)
        back = min(d, approach.run)
        spawn_s = approach.s_contact - approach.direction * back
        lanes_own = road.lanes_forward if approach.direction > 0 else road.lanes_backward
        if lanes_own > 0:
            lane_index = lanes_own  # rightmost through lane for this direction
        else:
            lane_index = -1         # wrong-way: adjacent opposing lane
        try:
            off = lane_offset(road, approach.direction, lane_index)
        except ValueError as exc:
            raise NoValidPlacement(str(exc)) from exc
        cum = cumulative_lengths(road.centerline)
        position = offset_point(road.centerline, spawn_s, off, cum)
        tangent = tangent_at(road.centerline, spawn_s, cum)
        heading = tangent if approach.direction > 0 else wrap_angle(tangent + math.pi)
        speed = record.travel_speed if record.travel_speed is not None \
            else settings.default_speed_mps
        states.append(
            InitialState(position, canonical_heading(heading), speed,
                         road.road_id, lane_index)
        )
    return tuple(states)


# ---------------------------------------------------------------------------
# analytical checks
# ---------------------------------------------------------------------------


def validate_states(
    states: Sequence[InitialState],
    network: RoadNetwork,
    report: CrashReport,
    crash_point: PlanarPoint,
) -> list[str]:
    """Named violations for every check a proposal fails; empty means valid."""
    violations = []
    for state, record in zip(states, report.vehicles):
        tag = f"vehicle {record.vehicle_id}"
        try:
            road = network.road(state.road_id)
        except KeyError:
            violations.append(f"{tag}: unknown road {state.road_id}")
            continue
        fix = locate_on_polyline(road.centerline, state.position)
        tangent = tangent_at(road.centerline, fix.s)
        heading_dir = travel_direction(road, fix.s, state.heading)

        # the admissible direction is the one whose lane layout puts the
        # claimed lane index at the observed lateral offset
        candidates = []
        for d in (1, -1):
            try:
                exp = lane_offset(road, d, state.lane_index)
            except ValueError:
                continue
            candidates.append((abs(fix.offset - exp), 0 if d == heading_dir else 1, d))
        if not candidates:
            violations.append(f"{tag}: lane index {state.lane_index} not on road")
            continue
        lateral_err, _, direction = min(candidates)

        longitudinal_err = math.sqrt(max(fix.dist**2 - fix.offset**2, 0.0))
        if lateral_err > road.lane_width / 2 + 0.05 or longitudinal_err > 0.05:
            violations.append(
                f"{tag}: position outside road boundary "
                f"(lateral error {lateral_err:.2f} m on road {road.road_id})"
            )

        lane_tangent = tangent if direction > 0 else wrap_angle(tangent + math.pi)
        misalign = abs(wrap_angle(state.heading - lane_tangent))
        if misalign > math.radians(ORIENTATION_TOLERANCE_DEG):
            violations.append(
                f"{tag}: orientation misaligned "
                f"({math.degrees(misalign):.1f} deg off the lane tangent)"
            )

        to_crash = distance(state.position, crash_point)
        if record.maneuver is Maneuver.GOING_STRAIGHT and to_crash > 1.0:
            aim = bearing(state.position, crash_point)
            err = abs(wrap_angle(state.heading - aim))
            if err > math.radians(MANEUVER_TOLERANCE_DEG):
                violations.append(
                    f"{tag}: maneuver inconsistent: heading points "
                    f"{math.degrees(err):.1f} deg away from the crash point"
                )
        elif record.maneuver in (Maneuver.TURNING_LEFT, Maneuver.TURNING_RIGHT) \
                and to_crash > 1.0:
            crash_fix = locate_crash_point(network, crash_point)
            if crash_fix is not None:
                crash_road = network.road(crash_fix.road_id)
                t = tangent_at(crash_road.centerline, crash_fix.s)
                aim = bearing(state.position, crash_point)
                h_out = t if abs(wrap_angle(t - aim)) <= math.pi / 2 \
                    else wrap_angle(t + math.pi)
                turn = math.degrees(wrap_angle(h_out - state.heading))
                want_left = record.maneuver is Maneuver.TURNING_LEFT
                if abs(turn) < TURN_THRESHOLD_DEG or (turn > 0) != want_left:
                    violations.append(
                        f"{tag}: maneuver inconsistent: approach does not turn "
                        f"{'left' if want_left else 'right'} onto the crash road"
                    )
    return violations


# ---------------------------------------------------------------------------
# external estimator
# ---------------------------------------------------------------------------


def _load_prompt_template() -> Template:
    text = resources.files("crashtrace").joinpath("templates/estimation_prompt.txt") \
        .read_text(encoding="utf-8")
    return Template(text)


def build_prompt(
    report: CrashReport,
    network: RoadNetwork,
    region: CandidateRegion,
    prior_violations: Sequence[str],
    settings: EstimationSettings,
) -> str:
    narrative = "\n".join(f"  {i + 1}. {ev}" for i, ev in enumerate(report.event_sequence)) \
        or "  (no event narrative)"
    vehicles = []
    for record in report.vehicles:
        speed = f"{record.travel_speed:.2f} m/s" if record.travel_speed is not None \
            else "unknown speed"
        clock = f"impact clock {record.impact_clock}" if record.impact_clock is not None \
            else "impact clock unknown"
        vehicles.append(
            f"  vehicle {record.vehicle_id}: {speed}, {clock}, maneuver {record.maneuver.value}"
        )
    crash_pt = _crash_planar(network, region.crash)
    regions = []
    for i, approaches in enumerate(region.vehicle_approaches):
        for a in approaches:
            lo, hi = a.interval
            arrow = "+s" if a.direction > 0 else "-s"
            regions.append(
                f"  vehicle {report.vehicles[i].vehicle_id}: road {a.road_id}, "
                f"s in [{lo:.1f}, {hi:.1f}] m, travel {arrow}"
            )
    if prior_violations:
        block = (
            "\nPrevious attempt was rejected with these violations; "
            "correct every one of them:\n"
            + "\n".join(f"- {v}" for v in prior_violations)
            + "\n"
        )
    else:
        block = ""
    return _load_prompt_template().substitute(
        narrative=narrative,
        vehicles="\n".join(vehicles),
        crash_x=f"{crash_pt.x:.3f}",
        crash_y=f"{crash_pt.y:.3f}",
        regions="\n".join(regions),
        horizon_s=f"{settings.horizon_s:g}",
        violations_block=block,
    )


def _http_transport(endpoint: str, model: str | None = None) -> Callable[[str], str]:
    def send(prompt: str) -> str:
        import requests

        headers = {"Content-Type": "text/plain"}
        if model:
            headers["X-Model-Name"] = model
        try:
            resp = requests.post(endpoint, data=prompt.encode("utf-8"),
                                 headers=headers, timeout=120)
        except requests.RequestException as exc:
            raise EndpointError(str(exc)) from exc
        if resp.status_code != 200:
            raise EndpointError(f"HTTP {resp.status_code} from {endpoint}")
        return resp.text

    return send


def _extract_json(text: str) -> dict:
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise UnparseableResponse("no JSON object in estimator response")


def llm_estimate(
    report: CrashReport,
    network: RoadNetwork,
    region: CandidateRegion,
    prior_violations: Sequence[str],
    settings: EstimationSettings,
) -> tuple[InitialState, InitialState]:
    """One proposal from the external endpoint; speeds stay report-derived."""
    if settings.llm_transport is not None:
        transport = settings.llm_transport
    elif settings.llm_endpoint:
        transport = _http_transport(settings.llm_endpoint, settings.llm_model)
    else:
        raise EndpointError("no estimation endpoint configured")

    prompt = build_prompt(report, network, region, prior_violations, settings)
    raw = transport(prompt)
    payload = _extract_json(raw)
    entries = payload.get("vehicles")
    if not isinstance(entries, list) or len(entries) != len(report.vehicles):
        raise UnparseableResponse("response must list exactly the reported vehicles")

    states = []
    for record, entry in zip(report.vehicles, entries):
        try:
            position = PlanarPoint(float(entry["x"]), float(entry["y"]))
            heading = canonical_heading(math.radians(float(entry["heading_deg"])))
            road_id = int(entry["road_id"])
            lane_index = int(entry["lane_index"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UnparseableResponse(f"bad vehicle entry {entry!r}") from exc
        speed = record.travel_speed if record.travel_speed is not None \
            else settings.default_speed_mps
        states.append(InitialState(position, heading, speed, road_id, lane_index))
    return tuple(states)


# ---------------------------------------------------------------------------
# feedback loop
# ---------------------------------------------------------------------------


def _snap_state(state: InitialState, network: RoadNetwork) -> InitialState:
    """Clip a state onto its lane: lane-center position, tangent heading."""
    try:
        road = network.road(state.road_id)
    except KeyError:
        return state
    fix = locate_on_polyline(road.centerline, state.position)
    direction = travel_direction(road, fix.s, state.heading)
    lanes_own = road.lanes_forward if direction > 0 else road.lanes_backward
    lane_index = min(max(state.lane_index, 1), lanes_own) if lanes_own else -1
    off = lane_offset(road, direction, lane_index)
    position = offset_point(road.centerline, fix.s, off)
    tangent = tangent_at(road.centerline, fix.s)
    heading = tangent if direction > 0 else wrap_angle(tangent + math.pi)
    return InitialState(position, canonical_heading(heading), state.speed,
                        state.road_id, lane_index)


def estimate_with_feedback(
    report: CrashReport,
    network: RoadNetwork,
    region: CandidateRegion,
    crash: RoadLocation,
    settings: EstimationSettings = EstimationSettings(),
) -> tuple[SceneSpec, EstimatorTrace]:
    """Propose, check, and re-prompt until a valid scene or the retry budget.

    The returned scene always passes :func:`validate_states`. On exhaustion
    raises EstimationFailed carrying the full attempt trace.
    """
    crash_pt = _crash_planar(network, crash)
    attempts: list[tuple[tuple[InitialState, InitialState] | None, tuple[str, ...]]] = []
    violations: list[str] = []

    if settings.mode == "heuristic":
        max_attempts = 2  # one estimate plus the clip-and-retry fallback
    else:
        max_attempts = settings.max_retries + 1

    for attempt in range(max_attempts):
        states = None
        try:
            if settings.mode == "heuristic":
                if attempt == 0:
                    states = heuristic_estimate(region, report, network, crash, settings)
                else:
                    prev = attempts[-1][0]
                    if prev is None:
                        break
                    states = tuple(_snap_state(s, network) for s in prev)
            else:
                states = llm_estimate(report, network, region, violations, settings)
        except (UnparseableResponse, NoValidPlacement) as exc:
            attempts.append((None, (str(exc),)))
            violations = [str(exc)]
            continue

        violations = validate_states(states, network, report, crash_pt)
        attempts.append((states, tuple(violations)))
        if not violations:
            scene = SceneSpec(
                case_key=report.case_key,
                crash_point=crash_pt,
                states=states,
                vehicle_ids=tuple(v.vehicle_id for v in report.vehicles),
                maneuvers=tuple(v.maneuver for v in report.vehicles),
            )
            return scene, EstimatorTrace(tuple(attempts))

    raise EstimationFailed(
        f"no valid estimate after {len(attempts)} attempts",
        trace=EstimatorTrace(tuple(attempts)),
    )


# ---------------------------------------------------------------------------
# scene persistence
# ---------------------------------------------------------------------------


def serialize_scene(spec: SceneSpec) -> str:
    """Deterministic scene document; numbers keep full precision."""
    doc = {
        "case_key": {
            "state": spec.case_key.state,
            "state_case": spec.case_key.state_case,
            "case_year": spec.case_key.case_year,
        },
        "crash_point": {"x": spec.crash_point.x, "y": spec.crash_point.y},
        "vehicles": [
            {
                "id": vid,
                "road_id": state.road_id,
                "lane_index": state.lane_index,
                "spawn": {
                    "x": state.position.x,
                    "y": state.position.y,
                    "heading_deg": round(math.degrees(state.heading), 9),
                    "speed_mps": state.speed,
                },
                "maneuver": maneuver.value,
            }
            for vid, state, maneuver in zip(spec.vehicle_ids, spec.states, spec.maneuvers)
        ],
        "map_file": spec.map_file,
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_scene(text: str) -> SceneSpec:
    """Inverse of :func:`serialize_scene`; ignores embedded extras."""
    doc = json.loads(text)
    key = CaseKey(
        int(doc["case_key"]["state"]),
        int(doc["case_key"]["state_case"]),
        int(doc["case_key"]["case_year"]),
    )
    states = []
    vehicle_ids = []
    maneuvers = []
    for entry in doc["vehicles"]:
        spawn = entry["spawn"]
        states.append(
            InitialState(
                PlanarPoint(float(spawn["x"]), float(spawn["y"])),
                math.radians(float(spawn["heading_deg"])),
                float(spawn["speed_mps"]),
                int(entry["road_id"]),
                int(entry["lane_index"]),
            )
        )
        vehicle_ids.append(int(entry["id"]))
        maneuvers.append(Maneuver(entry["maneuver"]))
    return SceneSpec(
        case_key=key,
        crash_point=PlanarPoint(float(doc["crash_point"]["x"]), float(doc["crash_point"]["y"])),
        states=tuple(states),
        vehicle_ids=tuple(vehicle_ids),
        maneuvers=tuple(maneuvers),
        map_file=doc["map_file"],
    )
