import math

import numpy as np
import pytest

from lanecast.lanes import (
    CandidateConfig,
    LaneCandidate,
    LaneGraph,
    extract_lane_candidates,
    label_reference_lane,
    lane_trajectory_distance,
    point_to_lane_distance,
    polyline_length,
    project_to_polyline,
    resample_polyline,
    resolve_eta,
    select_nearby_agent,
)


def _line(x0, y0, x1, y1, n=2):
    return np.stack([np.linspace(x0, x1, n), np.linspace(y0, y1, n)], axis=1)


def _cand(points):
    return LaneCandidate(points=np.asarray(points, dtype=np.float64),
                         source_segments=["t"], anchor_arclength=0.0)


# -- config -------------------------------------------------------------------

def test_config_defaults_give_paper_point_count():
    cfg = CandidateConfig().validate()
    assert cfg.n_points == 260


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        CandidateConfig(spacing_m=-1.0).validate()
    with pytest.raises(ValueError):
        CandidateConfig(max_candidates=0).validate()


# -- resampling ---------------------------------------------------------------

def _point_at_arclength(pts, s):
    """Scalar reference: walk segments, extrapolate past the ends."""
    lengths = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = lengths.sum()
    if s < 0:
        d = (pts[1] - pts[0]) / lengths[0]
        return pts[0] + s * d
    if s > total:
        d = (pts[-1] - pts[-2]) / lengths[-1]
        return pts[-1] + (s - total) * d
    acc = 0.0
    for i, L in enumerate(lengths):
        if s <= acc + L:
            t = (s - acc) / L
            return pts[i] + t * (pts[i + 1] - pts[i])
        acc += L
    return pts[-1]


def test_resample_straight_line_defaults():
    cfg = CandidateConfig()
    pts = _line(0, 0, 200, 0)
    out = resample_polyline(pts, cfg, anchor=(50.0, 0.0))
    assert out.shape == (260, 2)
    assert np.allclose(out[0], [20.0, 0.0], atol=1e-9)
    assert np.allclose(out[-1], [149.5, 0.0], atol=1e-9)


def test_resample_reproduces_input_points():
    cfg = CandidateConfig(forward_len_m=3.0, backward_len_m=2.0, spacing_m=1.0)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0], [5.0, 0.0]])
    out = resample_polyline(pts, cfg, anchor=(2.0, 0.0))
    assert np.allclose(out, pts[:5], atol=1e-12)


def test_resample_matches_interpolation_oracle_on_curvy_polyline():
    rng = np.random.default_rng(0)
    steps = rng.uniform(0.5, 3.0, size=20)
    angles = np.cumsum(rng.uniform(-0.2, 0.2, size=20))
    pts = np.cumsum(np.stack([steps * np.cos(angles), steps * np.sin(angles)], axis=1), axis=0)
    cfg = CandidateConfig(forward_len_m=12.0, backward_len_m=6.0, spacing_m=0.75)
    anchor = pts[8] + rng.normal(0, 0.3, size=2)
    out = resample_polyline(pts, cfg, anchor)
    s0, _ = project_to_polyline(pts, anchor)
    for j in range(cfg.n_points):
        expect = _point_at_arclength(pts, s0 - 6.0 + j * 0.75)
        assert np.allclose(out[j], expect, atol=1e-9)


def test_resample_extrapolates_past_both_ends():
    cfg = CandidateConfig(forward_len_m=10.0, backward_len_m=10.0, spacing_m=1.0)
    pts = _line(0, 0, 4, 0)
    out = resample_polyline(pts, cfg, anchor=(2.0, 0.0))
    assert np.allclose(out[0], [-8.0, 0.0])
    assert np.allclose(out[-1], [11.0, 0.0])


def test_resample_degenerate_polyline_errors():
    cfg = CandidateConfig()
    with pytest.raises(ValueError, match="degenerate"):
        resample_polyline(np.array([[1.0, 1.0], [1.0, 1.0]]), cfg, anchor=(0, 0))


def test_resample_spacing_invariant_straight():
    cfg = CandidateConfig(forward_len_m=40.0, backward_len_m=10.0, spacing_m=0.5)
    pts = _line(-3, 7, 90, 55, n=13)
    out = resample_polyline(pts, cfg, anchor=(10.0, 13.0))
    gaps = np.linalg.norm(np.diff(out, axis=0), axis=1)
    assert np.all(np.abs(gaps - 0.5) <= 0.5 * 1e-6)


# -- point/lane distances -------------------------------------------------------

def test_point_to_lane_distance_examples():
    lane = _cand([[0, 0], [1, 0], [2, 0]])
    assert point_to_lane_distance((1.0, 0.0), lane) == 0.0
    assert point_to_lane_distance((0.0, 1.0), lane) == 1.0
    two = _cand([[0, 0], [1, 0]])
    assert np.isclose(point_to_lane_distance((0.5, 1.0), two), math.sqrt(1.25))


def test_lane_trajectory_distance_examples():
    lane = _cand([[0, 0], [1, 0], [2, 0]])
    future = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert lane_trajectory_distance(future, lane) == 0.0
    future = np.array([[0.0, 1.0], [2.0, 2.0]])
    assert np.isclose(lane_trajectory_distance(future, lane, "linear"), 5.0)
    assert np.isclose(lane_trajectory_distance(future, lane, "uniform"), 3.0)


def test_lane_trajectory_distance_translation_invariant():
    rng = np.random.default_rng(1)
    lane_pts = rng.standard_normal((30, 2)) * 10
    future = rng.standard_normal((7, 2)) * 10
    shift = np.array([123.4, -56.7])
    d0 = lane_trajectory_distance(future, _cand(lane_pts))
    d1 = lane_trajectory_distance(future + shift, _cand(lane_pts + shift))
    assert abs(d0 - d1) < 1e-9


def _brute_force_eq6(future, lane_pts, eta):
    weight = resolve_eta(eta)
    total = 0.0
    for i in range(future.shape[0]):
        best = min(math.dist(future[i], lane_pts[m]) for m in range(lane_pts.shape[0]))
        total += weight(i + 1) * best
    return total


def test_label_reference_lane_examples_and_ties():
    up = _cand([[x, 2.0] for x in range(6)])
    down = _cand([[x, -2.0] for x in range(6)])
    future_up = np.array([[1.0, 2.0], [2.0, 2.0]])
    assert label_reference_lane(future_up, [down, up]) == 1
    # exact mirror tie resolves to the smaller index
    tie_future = np.array([[1.0, 0.0], [2.0, 0.0]])
    assert label_reference_lane(tie_future, [down, up]) == 0
    assert label_reference_lane(future_up, [up]) == 0
    with pytest.raises(ValueError):
        label_reference_lane(future_up, [])


def test_label_matches_brute_force_on_random_cases():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n_c = rng.integers(1, 5)
        cands = [_cand(rng.standard_normal((rng.integers(2, 20), 2)) * 5) for _ in range(n_c)]
        future = rng.standard_normal((rng.integers(1, 10), 2)) * 5
        oracle = int(np.argmin([_brute_force_eq6(future, c.points, "linear") for c in cands]))
        assert label_reference_lane(future, cands) == oracle


def test_label_unchanged_by_strictly_farther_candidate():
    rng = np.random.default_rng(3)
    for _ in range(50):
        cands = [_cand(rng.standard_normal((10, 2))) for _ in range(3)]
        future = rng.standard_normal((5, 2))
        idx = label_reference_lane(future, cands)
        far = _cand(cands[idx].points + np.array([1e4, 1e4]))
        assert label_reference_lane(future, cands + [far]) == idx


# -- agent selection -------------------------------------------------------------

def _lane_along_x(length=60.0, spacing=1.0):
    xs = np.arange(0.0, length + spacing, spacing)
    pts = np.stack([xs, np.zeros_like(xs)], axis=1)
    return LaneCandidate(points=pts, source_segments=["s"], anchor_arclength=20.0)


def _past_ending_at(x, y, p=4):
    return np.stack([np.linspace(x - p + 1, x, p), np.full(p, y)], axis=1)


def test_select_nearby_agent_no_agents():
    cfg = CandidateConfig()
    assert select_nearby_agent(_lane_along_x(), [], 20.0, cfg) is None


def test_select_nearby_agent_picks_closest_in_front():
    cfg = CandidateConfig()
    lane = _lane_along_x()
    agents = [("a", _past_ending_at(45.0, 0.0)), ("b", _past_ending_at(30.0, 0.0))]
    chosen = select_nearby_agent(lane, agents, 20.0, cfg)
    assert chosen is not None and chosen[-1, 0] == 30.0


def test_select_nearby_agent_filters_lateral_and_behind():
    cfg = CandidateConfig(agent_lateral_range_m=3.5)
    lane = _lane_along_x()
    off_lane = [("a", _past_ending_at(30.0, 5.0))]
    assert select_nearby_agent(lane, off_lane, 20.0, cfg) is None
    behind = [("a", _past_ending_at(10.0, 0.0))]
    assert select_nearby_agent(lane, behind, 20.0, cfg) is None


def test_select_nearby_agent_exhaustive_oracle():
    cfg = CandidateConfig(agent_lateral_range_m=3.5)
    lane = _lane_along_x()
    rng = np.random.default_rng(4)
    for _ in range(100):
        agents = [(str(i), _past_ending_at(rng.uniform(-10, 70), rng.uniform(-6, 6)))
                  for i in range(rng.integers(0, 6))]
        chosen = select_nearby_agent(lane, agents, 20.0, cfg)
        qualifying = []
        for aid, past in agents:
            present = past[-1]
            lat = min(np.linalg.norm(lane.points - present, axis=1))
            arc, _ = project_to_polyline(lane.points, present)
            if lat <= 3.5 and arc > 20.0:
                qualifying.append((arc - 20.0, aid, past))
        if not qualifying:
            assert chosen is None
        else:
            qualifying.sort(key=lambda q: q[0])
            assert np.array_equal(chosen, qualifying[0][2])


# -- extraction -----------------------------------------------------------------

def _fork_graph():
    stem = _line(-60, 0, 0, 0, n=7)
    mid = _line(0, 0, 70, 0, n=8)
    up = np.stack([np.linspace(0, 70, 8), np.linspace(0, 70, 8) ** 2 * 0.004], axis=1)
    down = np.stack([np.linspace(0, 70, 8), -np.linspace(0, 70, 8) ** 2 * 0.004], axis=1)
    return LaneGraph(
        segments={"stem": stem, "mid": mid, "up": up, "down": down},
        successors={"stem": ["mid", "up", "down"]},
        predecessors={"mid": ["stem"], "up": ["stem"], "down": ["stem"]},
    ).validate()


def test_extract_empty_graph():
    cfg = CandidateConfig()
    assert extract_lane_candidates(LaneGraph(), (0.0, 0.0), cfg) == []


def test_extract_out_of_radius():
    cfg = CandidateConfig(search_radius_m=5.0)
    graph = LaneGraph(segments={"a": _line(100, 100, 200, 100)}).validate()
    assert extract_lane_candidates(graph, (0.0, 0.0), cfg) == []


def test_extract_single_segment_paper_point_count():
    cfg = CandidateConfig()
    graph = LaneGraph(segments={"a": _line(-200, 0, 200, 0)}).validate()
    cands = extract_lane_candidates(graph, (0.0, 0.0), cfg)
    assert len(cands) == 1
    assert cands[0].points.shape == (260, 2)
    gaps = np.linalg.norm(np.diff(cands[0].points, axis=0), axis=1)
    assert np.all(np.abs(gaps - 0.5) < 0.5 * 1e-6)


def test_extract_fork_three_chains_ordered_by_seed_distance():
    cfg = CandidateConfig(search_radius_m=8.0, forward_len_m=40.0,
                          backward_len_m=20.0, spacing_m=0.5, max_candidates=6)
    graph = _fork_graph()
    target = (5.0, 0.0)
    cands = extract_lane_candidates(graph, target, cfg)
    chains = [tuple(c.source_segments) for c in cands]
    assert len(chains) == 3
    assert set(chains) == {("stem", "mid"), ("stem", "up"), ("stem", "down")}
    # target sits on the middle branch, so its seed ranks first
    assert chains[0] == ("stem", "mid")
    # all resampled to the same shape
    for c in cands:
        assert c.points.shape == (cfg.n_points, 2)


def test_extract_brute_force_chain_enumerator():
    cfg = CandidateConfig(search_radius_m=8.0, forward_len_m=40.0,
                          backward_len_m=20.0, spacing_m=0.5, max_candidates=6)
    graph = _fork_graph()
    target = np.array([5.0, 0.3])

    # independent enumeration: all simple chains grown recursively forward
    # then backward from every in-radius segment, no dedup shortcuts
    expected = set()
    for sid, pts in graph.segments.items():
        s0, dist = project_to_polyline(pts, target)
        if dist > cfg.search_radius_m:
            continue

        def grow_fwd(ids):
            # forward growth only appends, so the seed is always ids[0]
            covered = sum(polyline_length(graph.segments[s]) for s in ids) - s0
            succ = [s for s in graph.successors_of(ids[-1]) if s not in ids]
            if covered >= cfg.forward_len_m or not succ:
                return [ids]
            done = []
            for s in succ:
                done.extend(grow_fwd(ids + (s,)))
            return done

        def grow_bwd(ids):
            before = sum(polyline_length(graph.segments[s]) for s in ids[:ids.index(sid)]) + s0
            pred = [p for p in graph.predecessors_of(ids[0]) if p not in ids]
            if before >= cfg.backward_len_m or not pred:
                return [ids]
            done = []
            for p in pred:
                done.extend(grow_bwd((p,) + ids))
            return done

        for fwd_chain in grow_fwd((sid,)):
            for full in grow_bwd(fwd_chain):
                expected.add(full)

    got = {tuple(c.source_segments)
           for c in extract_lane_candidates(graph, target, cfg)}
    assert got == expected


def test_extract_caps_at_n_and_dedups():
    cfg = CandidateConfig(search_radius_m=8.0, forward_len_m=40.0,
                          backward_len_m=20.0, spacing_m=0.5, max_candidates=2)
    cands = extract_lane_candidates(_fork_graph(), (5.0, 0.3), cfg)
    assert len(cands) == 2
    assert len({tuple(c.source_segments) for c in cands}) == 2


def test_extract_truncated_graph_extrapolates_to_full_length():
    # short lane: graph ends before the required forward length
    cfg = CandidateConfig(search_radius_m=10.0, forward_len_m=50.0,
                          backward_len_m=10.0, spacing_m=1.0)
    graph = LaneGraph(segments={"a": _line(-5, 0, 10, 0)}).validate()
    cands = extract_lane_candidates(graph, (0.0, 0.0), cfg)
    assert len(cands) == 1
    assert cands[0].points.shape == (60, 2)
    # offsets span [-10, 49] around the target's projection; both ends
    # extrapolate along the segment direction
    assert np.allclose(cands[0].points[0], [-10.0, 0.0])
    assert np.allclose(cands[0].points[-1], [49.0, 0.0])


def test_graph_validation_errors():
    with pytest.raises(ValueError, match="unknown"):
        LaneGraph(segments={"a": _line(0, 0, 1, 0)}, successors={"a": ["b"]}).validate()
    with pytest.raises(ValueError, match="polyline"):
        LaneGraph(segments={"a": np.array([[0.0, 0.0]])}).validate()
    with pytest.raises(ValueError, match="repeated"):
        LaneGraph(segments={"a": np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])}).validate()
