import json
import math

import pytest

from crashtrace.errors import EstimationFailed, NoCandidates, UnparseableResponse
from crashtrace.estimator import (
    EstimationSettings,
    InitialState,
    build_prompt,
    candidate_regions,
    estimate_with_feedback,
    heuristic_estimate,
    llm_estimate,
    parse_scene,
    serialize_scene,
    validate_states,
)
from crashtrace.geometry import PlanarPoint, distance
from crashtrace.osm import parse_osm
from crashtrace.reports import CaseKey, RawCaseDocument, parse_report
from crashtrace.roadnet import build_road_network, locate_crash_point, unify_lanes

from corpus import case_origin, cross_layout, osm_xml, report_xml, straight_road_layout

ORIGIN = case_origin(0)
KEY = CaseKey(51, 101, 2023)
CRASH = PlanarPoint(0.0, 0.0)


def _network(nodes, ways):
    graph = parse_osm(osm_xml(ORIGIN, nodes, ways))
    return unify_lanes(build_road_network(graph, ORIGIN))


def _report(**kwargs):
    kwargs.setdefault("coords", ORIGIN)
    return parse_report(RawCaseDocument(KEY, report_xml(**kwargs)))


def _setup(kind="ftf"):
    if kind == "ftf":
        network = _network(*straight_road_layout())
        report = _report()
    elif kind == "cross":
        network = _network(*cross_layout())
        report = _report(
            collision="Angle",
            topology="Four-Way Intersection",
            relation="Intersecting Paths",
        )
    elif kind == "ftr":
        network = _network(*straight_road_layout())
        report = _report(
            collision="Front-to-Rear",
            relation="Same Trafficway, Same Direction",
            vehicles=[
                {"speed_mph": 45, "clock": 12, "maneuver": "Going Straight"},
                {"speed_mph": 11, "clock": 6, "maneuver": "Going Straight"},
            ],
        )
    else:
        raise ValueError(kind)
    crash = locate_crash_point(network, CRASH)
    assert crash is not None
    region = candidate_regions(network, report, crash)
    return network, report, crash, region


# --- candidate regions ---


def test_regions_opposite_direction_on_crash_road():
    network, report, crash, region = _setup("ftf")
    (a1,), (a2,) = region.vehicle_approaches
    assert a1.road_id == a2.road_id == crash.road_id
    assert a1.direction == 1 and a2.direction == -1


def test_regions_four_way_has_all_approaches():
    network, report, crash, region = _setup("cross")
    assert region.junction is not None
    assert len(region.vehicle_approaches[0]) == 4
    assert {a.road_id for a in region.vehicle_approaches[0]} == {10, 11, 12, 13}


def test_regions_clip_to_road_extent():
    network = _network(*straight_road_layout(length=100.0))  # 50 m on each side
    report = _report()
    crash = locate_crash_point(network, CRASH)
    region = candidate_regions(network, report, crash)
    for approaches in region.vehicle_approaches:
        for a in approaches:
            lo, hi = a.interval
            assert 0.0 <= lo <= hi <= network.road(a.road_id).length + 1e-9


def test_regions_no_candidates_for_point_road():
    # under a meter of room on either side of the crash
    network = _network({1: (-0.75, 0.0), 2: (0.75, 0.0)},
                       [(10, [1, 2], {"highway": "residential"})])
    report = _report()
    crash = locate_crash_point(network, CRASH)
    with pytest.raises(NoCandidates):
        candidate_regions(network, report, crash)


# --- deterministic estimator ---


def test_heuristic_backward_distance_and_right_lanes():
    network, report, crash, region = _setup("ftf")
    s1, s2 = heuristic_estimate(region, report, network, crash)
    d = 13.4112 * 6.0
    assert distance(s1.position, CRASH) == pytest.approx(d, abs=0.1)
    assert distance(s2.position, CRASH) == pytest.approx(d, abs=0.1)
    # opposite headings, each on its own right-hand side
    assert abs(math.degrees(s1.heading)) < 5
    assert abs(abs(math.degrees(s2.heading)) - 180) < 5
    assert s1.position.y < 0 < s2.position.y
    assert s1.lane_index == 1 and s2.lane_index == 1


def test_heuristic_default_speed_for_unknown():
    network = _network(*straight_road_layout())
    report = _report(vehicles=[
        {"speed_mph": None, "clock": 12, "maneuver": "Going Straight"},
        {"speed_mph": 30, "clock": 12, "maneuver": "Going Straight"},
    ])
    crash = locate_crash_point(network, CRASH)
    region = candidate_regions(network, report, crash)
    s1, _ = heuristic_estimate(region, report, network, crash)
    assert distance(s1.position, CRASH) == pytest.approx(13.41 * 6.0, abs=0.1)
    assert s1.speed == 13.41


def test_heuristic_clips_to_short_road():
    network = _network(*straight_road_layout(length=80.0))  # 40 m per side
    report = _report()
    crash = locate_crash_point(network, CRASH)
    region = candidate_regions(network, report, crash)
    s1, s2 = heuristic_estimate(region, report, network, crash)
    assert distance(s1.position, CRASH) == pytest.approx(40.0, abs=0.1)
    assert distance(s2.position, CRASH) == pytest.approx(40.0, abs=0.1)


def test_heuristic_crossing_assignment_at_four_way():
    network, report, crash, region = _setup("cross")
    s1, s2 = heuristic_estimate(region, report, network, crash)
    assert s1.road_id == 10  # south arm, northbound
    assert s2.road_id == 12  # west arm, eastbound
    assert s1.position.y < -5 and abs(s1.position.x) < 5
    assert s2.position.x < -5 and abs(s2.position.y) < 5


def test_heuristic_deterministic_bitwise():
    network, report, crash, region = _setup("cross")
    a = heuristic_estimate(region, report, network, crash)
    b = heuristic_estimate(region, report, network, crash)
    assert a == b


def test_heuristic_same_direction_same_lane():
    network, report, crash, region = _setup("ftr")
    s1, s2 = heuristic_estimate(region, report, network, crash)
    assert s1.position.y == pytest.approx(s2.position.y, abs=1e-6)
    assert distance(s1.position, CRASH) > distance(s2.position, CRASH)


# --- analytical checks ---


def test_validate_accepts_heuristic_output():
    network, report, crash, region = _setup("ftf")
    states = heuristic_estimate(region, report, network, crash)
    assert validate_states(states, network, report, CRASH) == []


def test_validate_flags_offroad_position():
    network, report, crash, region = _setup("ftf")
    s1, s2 = heuristic_estimate(region, report, network, crash)
    bad = InitialState(PlanarPoint(s1.position.x, s1.position.y - 10.0),
                       s1.heading, s1.speed, s1.road_id, s1.lane_index)
    violations = validate_states((bad, s2), network, report, CRASH)
    assert any("position outside road boundary" in v for v in violations)


def test_validate_flags_reversed_heading():
    network, report, crash, region = _setup("ftf")
    s1, s2 = heuristic_estimate(region, report, network, crash)
    bad = InitialState(s1.position, s1.heading + math.pi, s1.speed,
                       s1.road_id, s1.lane_index)
    violations = validate_states((bad, s2), network, report, CRASH)
    assert any("orientation misaligned" in v for v in violations)


def test_validate_wrong_way_lane_is_legal():
    # wrong-way travel is encoded by a negative lane index, not a violation
    network, report, crash, region = _setup("ftf")
    road = network.road(crash.road_id)
    state = InitialState(PlanarPoint(-50.0, -1.75), math.pi, 10.0, road.road_id, -1)
    s1, s2 = heuristic_estimate(region, report, network, crash)
    violations = validate_states((state, s2), network, report, CRASH)
    assert not any("orientation" in v for v in violations)


def test_validate_turning_consistency():
    network, _, crash, _ = _setup("cross")
    report = _report(
        topology="Four-Way Intersection",
        relation="Changing Trafficway, Vehicle Turning",
        vehicles=[
            {"speed_mph": 20, "clock": 12, "maneuver": "Turning Left"},
            {"speed_mph": 20, "clock": 12, "maneuver": "Going Straight"},
        ],
    )
    # eastbound on the west arm; the crash sits on the north arm: a left turn
    crash_pt = PlanarPoint(0.0, 40.0)
    v1 = InitialState(PlanarPoint(-60.0, -1.75), 0.0, 8.9408, 12, 1)
    v2 = InitialState(PlanarPoint(-1.75, 120.0), -math.pi / 2, 8.9408, 11, 1)
    assert validate_states((v1, v2), network, report, crash_pt) == []

    right_report = _report(
        topology="Four-Way Intersection",
        relation="Changing Trafficway, Vehicle Turning",
        vehicles=[
            {"speed_mph": 20, "clock": 12, "maneuver": "Turning Right"},
            {"speed_mph": 20, "clock": 12, "maneuver": "Going Straight"},
        ],
    )
    violations = validate_states((v1, v2), network, right_report, crash_pt)
    assert any("maneuver inconsistent" in v for v in violations)


# --- external estimator ---


def _echo_transport(states, report):
    payload = {
        "vehicles": [
            {
                "id": record.vehicle_id,
                "road_id": s.road_id,
                "lane_index": s.lane_index,
                "x": s.position.x,
                "y": s.position.y,
                "heading_deg": round(math.degrees(s.heading), 9),
            }
            for record, s in zip(report.vehicles, states)
        ]
    }

    def transport(prompt):
        return "Here is the placement:\n" + json.dumps(payload)

    return transport


def test_llm_estimate_parses_valid_mock():
    network, report, crash, region = _setup("ftf")
    states = heuristic_estimate(region, report, network, crash)
    settings = EstimationSettings(mode="llm", llm_transport=_echo_transport(states, report))
    parsed = llm_estimate(report, network, region, [], settings)
    assert parsed == states


def test_llm_estimate_unparseable():
    network, report, crash, region = _setup("ftf")
    settings = EstimationSettings(mode="llm", llm_transport=lambda prompt: "no json here")
    with pytest.raises(UnparseableResponse):
        llm_estimate(report, network, region, [], settings)


def test_prompt_contains_directives_and_violations():
    network, report, crash, region = _setup("ftf")
    settings = EstimationSettings(mode="llm")
    prompt = build_prompt(report, network, region, [], settings)
    assert "backward trajectory" in prompt
    assert "right-hand traffic" in prompt
    assert "road" in prompt and "s in [" in prompt
    retry = build_prompt(
        report, network, region,
        ["vehicle 1: position outside road boundary (lateral error 9.99 m on road 10)"],
        settings,
    )
    assert "vehicle 1: position outside road boundary (lateral error 9.99 m on road 10)" in retry


# --- feedback loop ---


def test_feedback_valid_first_attempt():
    network, report, crash, region = _setup("ftf")
    scene, trace = estimate_with_feedback(report, network, region, crash)
    assert trace.attempt_count == 1
    assert validate_states(scene.states, network, report, scene.crash_point) == []
    assert scene.case_key == KEY


def test_feedback_second_attempt_valid():
    network, report, crash, region = _setup("ftf")
    good = heuristic_estimate(region, report, network, crash)
    bad_payload = json.dumps({
        "vehicles": [
            {"id": 1, "road_id": 10, "lane_index": 1, "x": 0.0, "y": 500.0,
             "heading_deg": 0.0},
            {"id": 2, "road_id": 10, "lane_index": 1, "x": 80.0, "y": 1.75,
             "heading_deg": 180.0},
        ]
    })
    responses = [bad_payload, _echo_transport(good, report)("")]
    calls = []

    def transport(prompt):
        calls.append(prompt)
        return responses[len(calls) - 1]

    settings = EstimationSettings(mode="llm", llm_transport=transport, max_retries=3)
    scene, trace = estimate_with_feedback(report, network, region, crash, settings)
    assert trace.attempt_count == 2
    assert len(trace.attempts[0][1]) > 0  # first attempt carries violations
    assert trace.attempts[0][1][0] in calls[1]  # fed back verbatim


def test_feedback_exhausts_retries():
    network, report, crash, region = _setup("ftf")
    bad_payload = json.dumps({
        "vehicles": [
            {"id": 1, "road_id": 10, "lane_index": 1, "x": 0.0, "y": 500.0,
             "heading_deg": 0.0},
            {"id": 2, "road_id": 10, "lane_index": 1, "x": 80.0, "y": 1.75,
             "heading_deg": 180.0},
        ]
    })
    settings = EstimationSettings(mode="llm", llm_transport=lambda p: bad_payload,
                                  max_retries=3)
    with pytest.raises(EstimationFailed) as excinfo:
        estimate_with_feedback(report, network, region, crash, settings)
    trace = excinfo.value.trace
    assert trace.attempt_count == 4
    assert all(len(violations) > 0 for _, violations in trace.attempts)


def test_feedback_unparseable_counts_as_attempt():
    network, report, crash, region = _setup("ftf")
    good = heuristic_estimate(region, report, network, crash)
    responses = ["garbage", _echo_transport(good, report)("")]
    calls = []

    def transport(prompt):
        calls.append(prompt)
        return responses[len(calls) - 1]

    settings = EstimationSettings(mode="llm", llm_transport=transport)
    scene, trace = estimate_with_feedback(report, network, region, crash, settings)
    assert trace.attempt_count == 2
    assert trace.attempts[0][0] is None


# --- persistence ---


def test_scene_roundtrip_identity():
    network, report, crash, region = _setup("ftf")
    scene, _ = estimate_with_feedback(report, network, region, crash)
    text = serialize_scene(scene)
    assert parse_scene(text) == scene
    assert serialize_scene(parse_scene(text)) == text


def test_scene_serialization_deterministic_and_precise():
    network, report, crash, region = _setup("ftf")
    scene, _ = estimate_with_feedback(report, network, region, crash)
    a, b = serialize_scene(scene), serialize_scene(scene)
    assert a == b
    doc = json.loads(a)
    # full-precision coordinates survive
    assert doc["vehicles"][0]["spawn"]["x"] == scene.states[0].position.x


def test_scene_zero_crash_point():
    import dataclasses

    network, report, crash, region = _setup("ftf")
    scene, _ = estimate_with_feedback(report, network, region, crash)
    at_zero = dataclasses.replace(scene, crash_point=PlanarPoint(0.0, 0.0))
    doc = json.loads(serialize_scene(at_zero))
    assert doc["crash_point"]["x"] == 0.0
    assert doc["crash_point"]["y"] == 0.0
    assert parse_scene(serialize_scene(at_zero)) == at_zero
