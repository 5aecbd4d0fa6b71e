"""Synthetic lane-scenario generator for desk-scale training and testing.

Each scenario gets a small lane network (straight, fork, or curve topology,
randomly rotated and translated in the world frame) and agents that follow
centerlines at piecewise-constant speed with Gaussian lateral/longitudinal
noise.  Output is deterministic for a fixed seed.
"""

from dataclasses import dataclass

import numpy as np

from .lanes import LaneGraph, point_at_arclength, polyline_length, tangent_at_arclength
from .scenarios import AgentTrack, Scenario

LANE_WIDTH_M = 3.5
SPEED_RANGE = (4.0, 10.0)
TOPOLOGIES = ("straight", "fork", "curve")


@dataclass
class SyntheticConfig:
    n_scenarios: int = 100
    lane_topology: str = "mixed"
    noise_std_m: float = 0.2
    seed: int = 0
    past_len: int = 4
    horizon: int = 12
    sample_rate_hz: float = 2.0

    def validate(self):
        if self.n_scenarios < 0:
            raise ValueError("n_scenarios must be >= 0")
        if self.lane_topology not in TOPOLOGIES + ("mixed",):
            raise ValueError(f"unknown lane_topology {self.lane_topology!r}")
        if self.noise_std_m < 0:
            raise ValueError("noise_std_m must be >= 0")
        if self.past_len < 2 or self.horizon < 1:
            raise ValueError("past_len must be >= 2 and horizon >= 1")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        return self


def _offset_polyline(pts, offset):
    """Shift a polyline sideways by ``offset`` along its left normal."""
    pts = np.asarray(pts, dtype=np.float64)
    d = np.gradient(pts, axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    normal = np.stack([-d[:, 1], d[:, 0]], axis=1)
    return pts + offset * normal


def _split_segments(prefix, pts, n_splits, rng):
    """Break a polyline into a connected chain of segments."""
    n = pts.shape[0]
    if n_splits <= 1 or n < 4:
        return {f"{prefix}0": pts}, [f"{prefix}0"]
    cut = int(rng.integers(2, n - 1))
    a, b = pts[: cut + 1], pts[cut:]
    return ({f"{prefix}0": a, f"{prefix}1": b}, [f"{prefix}0", f"{prefix}1"])


def _arc(radius, span, direction, start=(0.0, 0.0), start_heading=0.0, step_m=4.0):
    """Circular arc polyline of the given angular span (radians)."""
    n = max(int(abs(radius * span) / step_m) + 2, 3)
    t = np.linspace(0.0, span, n)
    # circle center sits 90 degrees to the left (+1) or right (-1) of heading
    cx = start[0] - direction * radius * np.sin(start_heading)
    cy = start[1] + direction * radius * np.cos(start_heading)
    ang = start_heading - direction * np.pi / 2 + direction * t
    return np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=1)


def _build_straight(rng):
    n_lanes = int(rng.integers(2, 4))
    xs = np.linspace(-80.0, 110.0, 20)
    segments, succ, pred, chains = {}, {}, {}, []
    for j in range(n_lanes):
        pts = np.stack([xs, np.full_like(xs, j * LANE_WIDTH_M)], axis=1)
        segs, ids = _split_segments(f"s{j}_", pts, 2, rng)
        segments.update(segs)
        for a, b in zip(ids[:-1], ids[1:]):
            succ.setdefault(a, []).append(b)
            pred.setdefault(b, []).append(a)
        chains.append(ids)
    return LaneGraph(segments, succ, pred), chains


def _build_fork(rng):
    stem = np.stack([np.linspace(-90.0, 0.0, 10), np.zeros(10)], axis=1)
    segments = {"stem": stem}
    succ = {"stem": []}
    pred = {}
    chains = []
    n_branches = int(rng.integers(2, 4))
    sides = rng.permutation([1.0, -1.0])[: n_branches - 1]
    branch_geoms = [np.stack([np.linspace(0.0, 100.0, 11), np.zeros(11)], axis=1)]
    for side in sides:
        radius = rng.uniform(35.0, 70.0)
        span = rng.uniform(0.5, 1.1)
        branch_geoms.append(_arc(radius, span, side))
    for i, pts in enumerate(branch_geoms):
        bid = f"branch{i}"
        segments[bid] = pts
        succ["stem"].append(bid)
        pred[bid] = ["stem"]
        chains.append(["stem", bid])
    return LaneGraph(segments, succ, pred), chains


def _build_curve(rng):
    radius = rng.uniform(45.0, 90.0)
    direction = float(rng.choice([1.0, -1.0]))
    span = min(200.0 / radius, 1.8)
    inner = _arc(radius, span, direction, start=(-60.0, 0.0))
    segments, succ, pred, chains = {}, {}, {}, []
    n_lanes = int(rng.integers(1, 3)) + 1
    for j in range(n_lanes):
        pts = inner if j == 0 else _offset_polyline(inner, j * LANE_WIDTH_M)
        segs, ids = _split_segments(f"c{j}_", pts, 2, rng)
        segments.update(segs)
        for a, b in zip(ids[:-1], ids[1:]):
            succ.setdefault(a, []).append(b)
            pred.setdefault(b, []).append(a)
        chains.append(ids)
    return LaneGraph(segments, succ, pred), chains


_BUILDERS = {"straight": _build_straight, "fork": _build_fork, "curve": _build_curve}


def _chain_centerline(graph, chain):
    parts = [graph.segments[chain[0]]]
    for sid in chain[1:]:
        pts = graph.segments[sid]
        if np.allclose(parts[-1][-1], pts[0], atol=1e-9):
            pts = pts[1:]
        parts.append(pts)
    return np.concatenate(parts, axis=0)


def _chaikin(pts, rounds=2):
    """Corner-cutting smoothing, endpoints preserved.

    Agents ride the smoothed centerline so a turn (e.g. a fork choice) bends
    the trajectory slightly before the junction, the way real drivers
    pre-position; straight polylines are unchanged.
    """
    for _ in range(rounds):
        q = 0.75 * pts[:-1] + 0.25 * pts[1:]
        r = 0.25 * pts[:-1] + 0.75 * pts[1:]
        mid = np.empty((2 * len(pts) - 2, 2))
        mid[0::2] = q
        mid[1::2] = r
        pts = np.concatenate([pts[:1], mid, pts[-1:]], axis=0)
    return pts


def _drive(centerline, s_present, cfg, rng, speed):
    """Positions for all steps of one agent following a centerline.

    Speed is piecewise constant: with probability 1/2 it switches once to a
    scaled value at a random step.  Gaussian noise is added along the local
    tangent/normal frame.
    """
    dt = 1.0 / cfg.sample_rate_hz
    n_steps = cfg.past_len + cfg.horizon
    speeds = np.full(n_steps, speed)
    if rng.random() < 0.5:
        k = int(rng.integers(1, n_steps))
        speeds[k:] = speed * rng.uniform(0.6, 1.4)
    # arc lengths: step 0 sits behind the present by the accumulated past
    rel = np.concatenate([[0.0], np.cumsum(speeds[1:] * dt)])
    s = s_present - rel[cfg.past_len - 1] + rel
    pts = np.empty((n_steps, 2))
    for i, si in enumerate(s):
        base = point_at_arclength(centerline, si)
        if cfg.noise_std_m > 0:
            tang = tangent_at_arclength(centerline, si)
            normal = np.array([-tang[1], tang[0]])
            lon, lat = rng.normal(0.0, cfg.noise_std_m, size=2)
            base = base + lon * tang + lat * normal
        pts[i] = base
    return pts


def generate_synthetic(cfg):
    """Generate ``cfg.n_scenarios`` scenarios; deterministic under the seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    scenarios = []
    for idx in range(cfg.n_scenarios):
        topo = cfg.lane_topology
        if topo == "mixed":
            topo = TOPOLOGIES[int(rng.integers(0, len(TOPOLOGIES)))]
        graph, chains = _BUILDERS[topo](rng)

        # random rigid placement in the world
        phi = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(phi), np.sin(phi)
        rot = np.array([[c, -s], [s, c]])
        shift = rng.uniform(-300.0, 300.0, size=2)
        graph = LaneGraph(
            segments={k: v @ rot.T + shift for k, v in graph.segments.items()},
            successors=graph.successors,
            predecessors=graph.predecessors,
        )

        dt = 1.0 / cfg.sample_rate_hz
        n_steps = cfg.past_len + cfg.horizon
        steps = np.arange(n_steps, dtype=np.int64)

        # the target: on a fork it picks a branch, otherwise it keeps lane
        target_chain = chains[int(rng.integers(0, len(chains)))]
        center = _chaikin(_chain_centerline(graph, target_chain))
        total = polyline_length(center)
        speed = rng.uniform(*SPEED_RANGE)
        past_span = speed * dt * (cfg.past_len - 1)
        max_future = SPEED_RANGE[1] * 1.4 * dt * cfg.horizon
        lo = past_span + 2.0
        hi = max(total - max_future - 2.0, lo + 1.0)
        if topo == "fork":
            # place the present just before the junction: the future crosses
            # it and the corner-cut drift already shows in the past window
            junction = polyline_length(graph.segments[target_chain[0]])
            lo = max(lo, junction - 8.0)
            hi = max(min(hi, junction + 4.0), lo + 1.0)
        s_present = rng.uniform(lo, hi)
        tracks = [AgentTrack("target", steps.copy(),
                             _drive(center, s_present, cfg, rng, speed))]

        for j in range(int(rng.integers(0, 3))):
            chain = chains[int(rng.integers(0, len(chains)))]
            other_center = _chaikin(_chain_centerline(graph, chain))
            other_speed = rng.uniform(*SPEED_RANGE)
            s_other = rng.uniform(10.0, max(polyline_length(other_center) - 10.0, 11.0))
            tracks.append(AgentTrack(f"agent_{j}", steps.copy(),
                                     _drive(other_center, s_other, cfg, rng, other_speed)))

        scenarios.append(Scenario(
            scenario_id=f"{topo}-{cfg.seed}-{idx:05d}",
            sample_rate_hz=cfg.sample_rate_hz,
            lanes=graph,
            agents=tracks,
            target_agent_id="target",
            present_step=int(cfg.past_len - 1),
        ).validate())
    return scenarios
