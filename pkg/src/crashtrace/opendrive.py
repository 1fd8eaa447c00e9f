"""OpenDRIVE 1.4 emission and the matching reader.

The plan view approximates each centerline as a chain of line geometries;
lane sections carry a center lane plus the forward lanes on the right and
backward lanes on the left, all at the road's lane width. The header's
geoReference records the projection so the document stands alone.

Junction boundaries and centers are not part of OpenDRIVE 1.4, so they ride
in a ``userData`` block that only this module's reader interprets; other
consumers see a standard document.
"""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET

from .errors import ParseError, SerializationError
from .geometry import GeoPoint, PlanarPoint, bearing, cumulative_lengths, distance, point_at
from .roadnet import Junction, Road, RoadNetwork


def _fmt(v: float) -> str:
    return repr(float(v))


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def emit_opendrive(network: RoadNetwork) -> str:
    """Serialize a road network as an OpenDRIVE document."""
    if not network.roads:
        raise SerializationError("empty road network")

    xs = [p.x for r in network.roads for p in r.centerline]
    ys = [p.y for r in network.roads for p in r.centerline]
    origin = network.origin
    geo_ref = (
        f"+proj=eqc +lat_ts={origin.latitude!r} +lat_0={origin.latitude!r} "
        f"+lon_0={origin.longitude!r} +x_0=0 +y_0=0 +R=6371000 +units=m +no_defs"
    )

    out = ['<?xml version="1.0" encoding="UTF-8"?>', "<OpenDRIVE>"]
    out.append(
        f'  <header revMajor="1" revMinor="4" name="" version="1.00" '
        f'north="{_fmt(max(ys))}" south="{_fmt(min(ys))}" '
        f'east="{_fmt(max(xs))}" west="{_fmt(min(xs))}">'
    )
    out.append(f"    <geoReference><![CDATA[{geo_ref}]]></geoReference>")
    out.append("  </header>")

    for road in sorted(network.roads, key=lambda r: r.road_id):
        out.extend(_road_xml(road))
    for junction in sorted(network.junctions, key=lambda j: j.junction_id):
        out.extend(_junction_xml(junction))
    out.append("</OpenDRIVE>")
    return "\n".join(out) + "\n"


def _road_xml(road: Road) -> list[str]:
    cum = cumulative_lengths(road.centerline)
    lines = [
        f'  <road name="{_esc(road.name_key)}" length="{_fmt(cum[-1])}" '
        f'id="{road.road_id}" junction="-1">'
    ]
    lines.append("    <planView>")
    for i in range(len(road.centerline) - 1):
        a, b = road.centerline[i], road.centerline[i + 1]
        lines.append(
            f'      <geometry s="{_fmt(cum[i])}" x="{_fmt(a.x)}" y="{_fmt(a.y)}" '
            f'hdg="{_fmt(bearing(a, b))}" length="{_fmt(cum[i + 1] - cum[i])}">'
            "<line/></geometry>"
        )
    lines.append("    </planView>")

    def lane_xml(lane_id: int) -> str:
        return (
            f'          <lane id="{lane_id}" type="driving" level="false">'
            f'<width sOffset="0.0" a="{_fmt(road.lane_width)}" b="0.0" c="0.0" d="0.0"/>'
            "</lane>"
        )

    lines.append("    <lanes>")
    lines.append('      <laneSection s="0.0">')
    if road.lanes_backward:
        lines.append("        <left>")
        for lid in range(road.lanes_backward, 0, -1):
            lines.append(lane_xml(lid))
        lines.append("        </left>")
    lines.append('        <center><lane id="0" type="none" level="false"/></center>')
    if road.lanes_forward:
        lines.append("        <right>")
        for lid in range(1, road.lanes_forward + 1):
            lines.append(lane_xml(-lid))
        lines.append("        </right>")
    lines.append("      </laneSection>")
    lines.append("    </lanes>")
    lines.append("  </road>")
    return lines


def _junction_xml(junction: Junction) -> list[str]:
    lines = [f'  <junction id="{junction.junction_id}" name="">']
    for i, member in enumerate(junction.members):
        lines.append(
            f'    <connection id="{i}" incomingRoad="{member}" '
            f'connectingRoad="{member}" contactPoint="start"/>'
        )
    boundary = " ".join(f"{_fmt(p.x)},{_fmt(p.y)}" for p in junction.boundary)
    lines.append("    <userData>")
    lines.append(
        f'      <center node="{junction.node_id}" x="{_fmt(junction.center.x)}" '
        f'y="{_fmt(junction.center.y)}"/>'
    )
    lines.append(f"      <boundary>{boundary}</boundary>")
    lines.append("    </userData>")
    lines.append("  </junction>")
    return lines


_LAT_RE = re.compile(r"\+lat_0=([-+0-9.eE]+)")
_LON_RE = re.compile(r"\+lon_0=([-+0-9.eE]+)")


def parse_opendrive(text: str) -> RoadNetwork:
    """Read a document produced by :func:`emit_opendrive` back into a network.

    Source node bookkeeping does not survive the format; the returned
    network carries geometry, lanes, and junctions only.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ParseError(f"bad OpenDRIVE document: {exc}") from exc

    geo_ref = root.findtext("header/geoReference") or ""
    lat_m, lon_m = _LAT_RE.search(geo_ref), _LON_RE.search(geo_ref)
    if not lat_m or not lon_m:
        raise ParseError("geoReference missing projection origin")
    origin = GeoPoint(float(lat_m.group(1)), float(lon_m.group(1)))

    roads = []
    for road_el in root.iterfind("road"):
        geoms = list(road_el.iterfind("planView/geometry"))
        if not geoms:
            raise ParseError(f"road {road_el.get('id')} has no plan view")
        pts = [PlanarPoint(float(g.get("x")), float(g.get("y"))) for g in geoms]
        last = geoms[-1]
        hdg, length = float(last.get("hdg")), float(last.get("length"))
        pts.append(
            PlanarPoint(
                pts[-1].x + length * math.cos(hdg), pts[-1].y + length * math.sin(hdg)
            )
        )
        backward = len(road_el.findall("lanes/laneSection/left/lane"))
        forward = len(road_el.findall("lanes/laneSection/right/lane"))
        width_el = road_el.find("lanes/laneSection/right/lane/width")
        if width_el is None:
            width_el = road_el.find("lanes/laneSection/left/lane/width")
        lane_width = float(width_el.get("a")) if width_el is not None else 3.5
        roads.append(
            Road(
                road_id=int(road_el.get("id")),
                centerline=tuple(pts),
                lanes_forward=forward,
                lanes_backward=backward,
                lane_width=lane_width,
                name_key=road_el.get("name", ""),
            )
        )

    junctions = []
    for j_el in root.iterfind("junction"):
        members = tuple(
            sorted({int(c.get("incomingRoad")) for c in j_el.iterfind("connection")})
        )
        center_el = j_el.find("userData/center")
        if center_el is None:
            raise ParseError(f"junction {j_el.get('id')} missing center")
        center = PlanarPoint(float(center_el.get("x")), float(center_el.get("y")))
        boundary_text = j_el.findtext("userData/boundary") or ""
        boundary = tuple(
            PlanarPoint(*(float(v) for v in pair.split(",")))
            for pair in boundary_text.split()
        )
        junctions.append(
            Junction(
                junction_id=int(j_el.get("id")),
                node_id=int(center_el.get("node", "0")),
                center=center,
                members=members,
                boundary=boundary,
            )
        )

    if not roads:
        raise ParseError("document contains no roads")
    return RoadNetwork(origin, tuple(roads), tuple(junctions), {})


def roundtrip_distance_error(a: RoadNetwork, b: RoadNetwork, samples: int = 8) -> float:
    """Worst relative pairwise-distance deviation between matched networks."""
    pts_a, pts_b = [], []
    roads_b = {r.road_id: r for r in b.roads}
    for ra in a.roads:
        rb = roads_b[ra.road_id]
        cum_a = cumulative_lengths(ra.centerline)
        cum_b = cumulative_lengths(rb.centerline)
        for k in range(samples):
            s = cum_a[-1] * k / max(samples - 1, 1)
            pts_a.append(point_at(ra.centerline, s, cum_a))
            pts_b.append(point_at(rb.centerline, min(s, cum_b[-1]), cum_b))
    worst = 0.0
    for i in range(len(pts_a)):
        for j in range(i + 1, len(pts_a)):
            da = distance(pts_a[i], pts_a[j])
            db = distance(pts_b[i], pts_b[j])
            if da > 1e-9:
                worst = max(worst, abs(db - da) / da)
    return worst
