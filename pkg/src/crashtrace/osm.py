"""OpenStreetMap retrieval, parsing, pruning, and the vertical-geometry gate.

Extracts come from an Overpass-style bounding-box query online, or from
local ``.osm`` files in offline mode. Either way the result is an
:class:`OsmGraph`: plain node coordinates plus tagged node chains. Pruning
keeps only road-bearing ways near the crash site; anything tagged as a
bridge, tunnel, or non-zero layer disqualifies the whole case because the
flat-world conversion cannot represent it.
"""

from __future__ import annotations

import math
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import CacheMiss, EmptyAfterPrune, EmptyExtract, NetworkError, OutOfExtent
from .geometry import EARTH_RADIUS_M, GeoPoint, PlanarPoint, project

DEFAULT_OVERPASS_URL = "https://overpass-api.de/api/interpreter"


@dataclass(frozen=True)
class OsmWay:
    nodes: tuple[int, ...]
    tags: dict[str, str]

    @property
    def is_road(self) -> bool:
        return "highway" in self.tags


@dataclass(frozen=True)
class OsmGraph:
    nodes: dict[int, GeoPoint]
    ways: dict[int, OsmWay]

    def road_way_ids(self) -> list[int]:
        return sorted(wid for wid, w in self.ways.items() if w.is_road)


def parse_osm(text: str) -> OsmGraph:
    """Parse ``.osm`` XML; ways keep only references to nodes that exist."""
    root = ET.fromstring(text)
    nodes: dict[int, GeoPoint] = {}
    for el in root.iterfind("node"):
        nodes[int(el.get("id"))] = GeoPoint(float(el.get("lat")), float(el.get("lon")))
    ways: dict[int, OsmWay] = {}
    for el in root.iterfind("way"):
        refs = tuple(
            int(nd.get("ref")) for nd in el.iterfind("nd") if int(nd.get("ref")) in nodes
        )
        if len(refs) < 2:
            continue
        tags = {t.get("k"): t.get("v", "") for t in el.iterfind("tag")}
        ways[int(el.get("id"))] = OsmWay(refs, tags)
    return OsmGraph(nodes, ways)


def write_osm(graph: OsmGraph) -> str:
    """Serialize a graph back to ``.osm`` XML, deterministically ordered."""
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="crashtrace">']
    for nid in sorted(graph.nodes):
        p = graph.nodes[nid]
        lines.append(f'  <node id="{nid}" lat="{p.latitude!r}" lon="{p.longitude!r}"/>')
    for wid in sorted(graph.ways):
        way = graph.ways[wid]
        lines.append(f'  <way id="{wid}">')
        for ref in way.nodes:
            lines.append(f'    <nd ref="{ref}"/>')
        for k in sorted(way.tags):
            lines.append(f'    <tag k="{_xml_escape(k)}" v="{_xml_escape(way.tags[k])}"/>')
        lines.append("  </way>")
    lines.append("</osm>")
    return "\n".join(lines) + "\n"


def _xml_escape(s: str) -> str:
    return (
        s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


def bounding_box(center: GeoPoint, radius_m: float) -> tuple[float, float, float, float]:
    """(south, west, north, east) of the square of half-width ``radius_m``."""
    dlat = math.degrees(radius_m / EARTH_RADIUS_M)
    dlon = math.degrees(radius_m / (EARTH_RADIUS_M * math.cos(math.radians(center.latitude))))
    return (
        center.latitude - dlat,
        center.longitude - dlon,
        center.latitude + dlat,
        center.longitude + dlon,
    )


def overpass_query(center: GeoPoint, radius_m: float) -> str:
    s, w, n, e = bounding_box(center, radius_m)
    return (
        "[out:xml][timeout:60];"
        f'(way["highway"]({s},{w},{n},{e});>;);'
        "out body;"
    )


def _requests_transport(url: str, query: str) -> str:
    import requests

    try:
        resp = requests.post(url, data={"data": query}, timeout=120)
    except requests.RequestException as exc:
        raise NetworkError(str(exc)) from exc
    if resp.status_code != 200:
        raise NetworkError(f"HTTP {resp.status_code} from {url}")
    return resp.text


class OsmClient:
    """Bounding-box extract retrieval with a synchronized read-through cache."""

    def __init__(
        self,
        url: str = DEFAULT_OVERPASS_URL,
        cache_dir: Path | None = None,
        offline: bool = False,
        fixtures_dir: Path | None = None,
        transport: Callable[[str, str], str] | None = None,
    ):
        self.url = url
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.offline = offline
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self._transport = transport or _requests_transport
        self._memory: dict[tuple, str] = {}
        self._lock = threading.Lock()

    def _cache_key(self, center: GeoPoint, radius_m: float) -> tuple:
        return (round(center.latitude, 7), round(center.longitude, 7), round(radius_m, 1))

    def _cache_path(self, center: GeoPoint, radius_m: float) -> Path | None:
        if self.cache_dir is None:
            return None
        lat, lon, rad = self._cache_key(center, radius_m)
        return self.cache_dir / f"osm_{lat:.7f}_{lon:.7f}_{rad:.0f}.osm"

    def retrieve_osm(self, center: GeoPoint, radius_m: float) -> OsmGraph:
        """Extract around ``center``; raises EmptyExtract when no roads exist."""
        if radius_m <= 0:
            raise ValueError("radius must be positive")
        text = self._load(center, radius_m)
        graph = parse_osm(text)
        if not any(w.is_road for w in graph.ways.values()):
            raise EmptyExtract(f"no road-bearing ways within {radius_m} m of {center}")
        return graph

    def _load(self, center: GeoPoint, radius_m: float) -> str:
        key = self._cache_key(center, radius_m)
        with self._lock:
            cached = self._memory.get(key)
        if cached is not None:
            return cached

        text = self._load_uncached(center, radius_m)
        with self._lock:
            self._memory.setdefault(key, text)
        return text

    def _load_uncached(self, center: GeoPoint, radius_m: float) -> str:
        cache_path = self._cache_path(center, radius_m)
        if cache_path is not None and cache_path.is_file():
            return cache_path.read_text(encoding="utf-8")

        if self.offline:
            fixture = self._find_fixture(center)
            if fixture is None:
                raise CacheMiss(f"no offline map fixture covering {center}")
            return fixture.read_text(encoding="utf-8")

        text = self._transport(self.url, overpass_query(center, radius_m))
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            cache_path.write_text(text, encoding="utf-8")
        return text

    def _find_fixture(self, center: GeoPoint) -> Path | None:
        """Pick the fixture whose node bounding box covers ``center``.

        Ties resolve to the bbox center nearest ``center``, then file name.
        """
        if self.fixtures_dir is None or not self.fixtures_dir.is_dir():
            return None
        best: tuple[float, str, Path] | None = None
        for path in sorted(self.fixtures_dir.glob("*.osm")):
            try:
                graph = parse_osm(path.read_text(encoding="utf-8"))
            except ET.ParseError:
                continue
            if not graph.nodes:
                continue
            lats = [p.latitude for p in graph.nodes.values()]
            lons = [p.longitude for p in graph.nodes.values()]
            margin = 0.01  # ~1 km; fixtures need not extend past their roads
            if not (min(lats) - margin <= center.latitude <= max(lats) + margin):
                continue
            if not (min(lons) - margin <= center.longitude <= max(lons) + margin):
                continue
            mid = GeoPoint((min(lats) + max(lats)) / 2, (min(lons) + max(lons)) / 2)
            d = math.hypot(mid.latitude - center.latitude, mid.longitude - center.longitude)
            cand = (d, path.name, path)
            if best is None or cand[:2] < best[:2]:
                best = cand
        return best[2] if best else None


def _way_within(graph: OsmGraph, way: OsmWay, center: GeoPoint, radius_m: float) -> bool:
    """True when any part of the way passes within ``radius_m`` of ``center``."""
    try:
        pts: list[PlanarPoint] = [project(graph.nodes[ref], center) for ref in way.nodes]
    except OutOfExtent:
        return False  # over a degree away: certainly outside any sane radius
    for a, b in zip(pts, pts[1:]):
        dx, dy = b.x - a.x, b.y - a.y
        seg2 = dx * dx + dy * dy
        t = 0.0 if seg2 == 0.0 else min(max(-(a.x * dx + a.y * dy) / seg2, 0.0), 1.0)
        if math.hypot(a.x + t * dx, a.y + t * dy) <= radius_m:
            return True
    return False


def prune_osm(graph: OsmGraph, center: GeoPoint, radius_m: float) -> OsmGraph:
    """Drop non-road ways, far-away ways, and nodes nothing references.

    Distance is measured from ``center`` to the nearest point of the way, so
    roads running past the crash site survive even when all their nodes sit
    outside the radius. Idempotent.
    """
    kept_ways = {
        wid: way
        for wid, way in graph.ways.items()
        if way.is_road and _way_within(graph, way, center, radius_m)
    }
    if not kept_ways:
        raise EmptyAfterPrune(f"no road within {radius_m} m of {center}")
    referenced = {ref for way in kept_ways.values() for ref in way.nodes}
    kept_nodes = {nid: p for nid, p in graph.nodes.items() if nid in referenced}
    return OsmGraph(kept_nodes, kept_ways)


_FLAT_VALUES = {"no", "false", "0"}


def detect_vertical_geometry(graph: OsmGraph) -> list[int]:
    """Way ids carrying bridge/tunnel/layer markers the converter rejects."""
    flagged = []
    for wid, way in graph.ways.items():
        bridge = way.tags.get("bridge", "no").lower()
        tunnel = way.tags.get("tunnel", "no").lower()
        try:
            layer = int(way.tags.get("layer", "0"))
        except ValueError:
            layer = 0
        if bridge not in _FLAT_VALUES or tunnel not in _FLAT_VALUES or layer != 0:
            flagged.append(wid)
    return sorted(flagged)
