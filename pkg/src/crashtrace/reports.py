"""Crash-report types and the parser that normalizes raw case documents.

The source documents are large semi-structured XML files; this module only
extracts the handful of fields the pipeline consumes. The element paths it
reads are collected in ``EXTRACTION_PATHS`` so the mapping can be re-pointed
at a different document dialect without touching the parsing logic. Every
other field survives only in the verbatim copy kept in the case package.

Speeds are assumed reported in miles per hour and converted to m/s here, so
everything downstream works in one unit.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

from .errors import MalformedDocument
from .geometry import GeoPoint, MPH_TO_MPS


class CaseKey(NamedTuple):
    state: int
    state_case: int
    case_year: int

    @property
    def slug(self) -> str:
        return f"{self.state}_{self.state_case}_{self.case_year}"


@dataclass(frozen=True)
class RawCaseDocument:
    """Verbatim report markup plus the key it was fetched under."""

    case_key: CaseKey
    body: str


class CollisionType(Enum):
    ANGLE = "Angle"
    FRONT_TO_FRONT = "Front-to-Front"
    FRONT_TO_REAR = "Front-to-Rear"
    SIDESWIPE_OPPOSITE = "Sideswipe, Opposite Direction"
    SIDESWIPE_SAME = "Sideswipe, Same Direction"
    REAR_TO_SIDE = "Rear-to-Side"
    REAR_TO_REAR = "Rear-to-Rear"
    OTHER = "Others"


class RoadTopology(Enum):
    NOT_AN_INTERSECTION = "Not an Intersection"
    T_INTERSECTION = "T-Intersection"
    FOUR_WAY = "Four-way Intersection"
    Y_INTERSECTION = "Y-Intersection"
    TRAFFIC_CIRCLE = "Traffic Circle / Roundabout"
    FIVE_POINT_PLUS = "Five-Point, or More"
    L_INTERSECTION = "L-Intersection"
    OTHER = "Others"

    @property
    def is_intersection(self) -> bool:
        return self not in (RoadTopology.NOT_AN_INTERSECTION, RoadTopology.OTHER)


class TrajectoryRelation(Enum):
    SAME_TRAFFICWAY_SAME_DIRECTION = "Same Trafficway, Same Direction"
    SAME_TRAFFICWAY_OPPOSITE_DIRECTION = "Same Trafficway, Opposite Direction"
    CHANGING_TRAFFICWAY_TURNING = "Changing Trafficway, Vehicle Turning"
    INTERSECTING_PATHS = "Intersecting Paths"
    OTHER = "Others"


class Maneuver(Enum):
    GOING_STRAIGHT = "going_straight"
    TURNING_LEFT = "turning_left"
    TURNING_RIGHT = "turning_right"
    OTHER = "other"


@dataclass(frozen=True)
class VehicleRecord:
    vehicle_id: int
    travel_speed: float | None = None   # m/s; None when unknown
    impact_clock: int | None = None     # 1..12; None when unknown
    maneuver: Maneuver = Maneuver.OTHER


@dataclass(frozen=True)
class CrashReport:
    """Normalized extraction of one crash case.

    ``crash_coords``, ``road_topology``, and ``trajectory_relation`` are None
    when the source document omits them; an unrecognized value that is present
    maps to the matching OTHER member instead.
    """

    case_key: CaseKey
    crash_coords: GeoPoint | None = None
    collision_type: CollisionType | None = None
    road_topology: RoadTopology | None = None
    trajectory_relation: TrajectoryRelation | None = None
    event_sequence: tuple[str, ...] = ()
    vehicles: tuple[VehicleRecord, ...] = ()


@dataclass(frozen=True)
class CompletenessVerdict:
    accepted: bool
    missing_fields: tuple[str, ...] = ()


# Element paths read out of a case document, relative to the document root.
# Re-point these to adapt to another dialect of the source schema.
EXTRACTION_PATHS = {
    "latitude": "Crash/Latitude",
    "longitude": "Crash/Longitude",
    "collision_type": "Crash/MannerOfCollision",
    "road_topology": "Crash/TypeOfIntersection",
    "trajectory_relation": "Crash/PreCrashRelation",
    "events": "Crash/Events/Event",
    "vehicles": "Vehicles/Vehicle",
    "vehicle_speed": "TravelSpeed",
    "vehicle_clock": "ImpactClock",
    "vehicle_maneuver": "PreCrashManeuver",
}


def _norm(label: str) -> str:
    return "".join(c for c in label.lower() if c.isalnum())


def _label_map(enum_cls) -> dict[str, object]:
    return {_norm(member.value): member for member in enum_cls}


_COLLISION_LABELS = _label_map(CollisionType)
_COLLISION_LABELS.update({
    _norm("Front-to-Front"): CollisionType.FRONT_TO_FRONT,
    _norm("Sideswipe - Opposite Direction"): CollisionType.SIDESWIPE_OPPOSITE,
    _norm("Sideswipe - Same Direction"): CollisionType.SIDESWIPE_SAME,
    _norm("Other"): CollisionType.OTHER,
})

_TOPOLOGY_LABELS = _label_map(RoadTopology)
_TOPOLOGY_LABELS.update({
    _norm("Four-Way Intersection"): RoadTopology.FOUR_WAY,
    _norm("Roundabout"): RoadTopology.TRAFFIC_CIRCLE,
    _norm("Traffic Circle"): RoadTopology.TRAFFIC_CIRCLE,
    _norm("Five Points or More"): RoadTopology.FIVE_POINT_PLUS,
    _norm("Other"): RoadTopology.OTHER,
})

_RELATION_LABELS = _label_map(TrajectoryRelation)
_RELATION_LABELS.update({
    _norm("Changing Trafficway"): TrajectoryRelation.CHANGING_TRAFFICWAY_TURNING,
    _norm("Other"): TrajectoryRelation.OTHER,
})

_MANEUVER_LABELS = {
    _norm("Going Straight"): Maneuver.GOING_STRAIGHT,
    _norm("going_straight"): Maneuver.GOING_STRAIGHT,
    _norm("Turning Left"): Maneuver.TURNING_LEFT,
    _norm("turning_left"): Maneuver.TURNING_LEFT,
    _norm("Turning Right"): Maneuver.TURNING_RIGHT,
    _norm("turning_right"): Maneuver.TURNING_RIGHT,
}


def _category(text: str | None, labels: dict, other):
    """Closed-category lookup: absent -> None, unrecognized -> ``other``."""
    if text is None or not text.strip():
        return None
    return labels.get(_norm(text), other)


def _float_or_none(text: str | None) -> float | None:
    if text is None or not text.strip():
        return None
    try:
        return float(text)
    except ValueError:
        return None


def parse_report(doc: RawCaseDocument) -> CrashReport:
    """Normalize a raw case document.

    Total on well-formed markup: missing or unrecognized fields degrade to
    None / OTHER members, never to an exception. Only unparsable markup
    raises MalformedDocument.
    """
    try:
        root = ET.fromstring(doc.body)
    except ET.ParseError as exc:
        raise MalformedDocument(f"case {doc.case_key.slug}: {exc}") from exc

    lat = _float_or_none(root.findtext(EXTRACTION_PATHS["latitude"]))
    lon = _float_or_none(root.findtext(EXTRACTION_PATHS["longitude"]))
    coords = None
    if lat is not None and lon is not None and abs(lat) <= 90 and abs(lon) <= 180:
        coords = GeoPoint(lat, lon)

    events = tuple(
        (el.text or "").strip()
        for el in root.iterfind(EXTRACTION_PATHS["events"])
        if (el.text or "").strip()
    )

    vehicles = []
    for i, el in enumerate(root.iterfind(EXTRACTION_PATHS["vehicles"])):
        try:
            vid = int(el.get("number", i + 1))
        except ValueError:
            vid = i + 1
        speed_mph = _float_or_none(el.findtext(EXTRACTION_PATHS["vehicle_speed"]))
        speed = speed_mph * MPH_TO_MPS if speed_mph is not None and speed_mph >= 0 else None
        clock_raw = _float_or_none(el.findtext(EXTRACTION_PATHS["vehicle_clock"]))
        clock = int(clock_raw) if clock_raw is not None and clock_raw in range(1, 13) else None
        maneuver = _category(
            el.findtext(EXTRACTION_PATHS["vehicle_maneuver"]), _MANEUVER_LABELS, Maneuver.OTHER
        ) or Maneuver.OTHER
        vehicles.append(VehicleRecord(vid, speed, clock, maneuver))

    return CrashReport(
        case_key=doc.case_key,
        crash_coords=coords,
        collision_type=_category(
            root.findtext(EXTRACTION_PATHS["collision_type"]), _COLLISION_LABELS,
            CollisionType.OTHER),
        road_topology=_category(
            root.findtext(EXTRACTION_PATHS["road_topology"]), _TOPOLOGY_LABELS,
            RoadTopology.OTHER),
        trajectory_relation=_category(
            root.findtext(EXTRACTION_PATHS["trajectory_relation"]), _RELATION_LABELS,
            TrajectoryRelation.OTHER),
        event_sequence=events,
        vehicles=tuple(vehicles),
    )


def check_completeness(report: CrashReport) -> CompletenessVerdict:
    """Reject reports missing the fields reconstruction cannot do without."""
    missing = []
    if report.crash_coords is None:
        missing.append("crash_coords")
    if report.road_topology is None:
        missing.append("road_topology")
    if report.trajectory_relation is None:
        missing.append("trajectory_relation")
    return CompletenessVerdict(accepted=not missing, missing_fields=tuple(missing))


def filter_dual_vehicle(report: CrashReport) -> bool:
    """Keep exactly-two-vehicle crashes."""
    return len(report.vehicles) == 2
