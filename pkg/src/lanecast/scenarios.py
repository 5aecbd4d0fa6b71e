"""Scenario schema, JSONL ingestion, and training-instance assembly.

A scenario is one multi-agent track log plus a lane graph.  The JSONL wire
format keeps one scenario object per line with keys: scenario_id,
sample_rate_hz, lanes, agents, target_agent_id, present_step.  Instances are
target-frame training samples with lane/agent slots zero-padded up to N.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .lanes import (
    LaneGraph,
    extract_lane_candidates,
    label_reference_lane,
    point_to_lane_distance,
    select_nearby_agent,
)


class ScenarioFormatError(ValueError):
    """Malformed scenario JSONL; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ScenarioRejected(ValueError):
    """Scenario cannot become a training instance; ``reason`` is a short tag."""

    def __init__(self, reason, detail=""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass
class AgentTrack:
    agent_id: str
    steps: np.ndarray  # (T,) int64, strictly increasing
    xy: np.ndarray     # (T, 2) float64 meters


@dataclass
class Scenario:
    scenario_id: str
    sample_rate_hz: float
    lanes: LaneGraph
    agents: list
    target_agent_id: str
    present_step: int

    def agent(self, agent_id):
        for track in self.agents:
            if track.agent_id == agent_id:
                return track
        raise KeyError(agent_id)

    def validate(self):
        self.lanes.validate()
        ids = [t.agent_id for t in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate agent ids in {self.scenario_id}")
        if self.target_agent_id not in ids:
            raise ValueError(f"target_agent_id {self.target_agent_id!r} has no track")
        for t in self.agents:
            if t.steps.ndim != 1 or t.xy.shape != (t.steps.size, 2):
                raise ValueError(f"agent {t.agent_id!r} track shapes inconsistent")
            if t.steps.size > 1 and np.any(np.diff(t.steps) <= 0):
                raise ValueError(f"agent {t.agent_id!r} steps not strictly increasing")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        return self


# -- JSONL wire format ---------------------------------------------------------

def scenario_to_dict(s):
    return {
        "scenario_id": s.scenario_id,
        "sample_rate_hz": s.sample_rate_hz,
        "lanes": [
            {
                "id": sid,
                "points": np.asarray(pts, dtype=np.float64).tolist(),
                "successors": list(s.lanes.successors.get(sid, [])),
                "predecessors": list(s.lanes.predecessors.get(sid, [])),
            }
            for sid, pts in s.lanes.segments.items()
        ],
        "agents": [
            {
                "id": t.agent_id,
                "states": [
                    {"step": int(st), "x": float(x), "y": float(y)}
                    for st, (x, y) in zip(t.steps.tolist(), t.xy.tolist())
                ],
            }
            for t in s.agents
        ],
        "target_agent_id": s.target_agent_id,
        "present_step": s.present_step,
    }


def _require(d, key, types, line):
    if key not in d:
        raise ScenarioFormatError(f"missing field {key!r}", line)
    v = d[key]
    if not isinstance(v, types):
        raise ScenarioFormatError(f"field {key!r} has wrong type {type(v).__name__}", line)
    return v


def scenario_from_dict(d, line=None):
    sid = _require(d, "scenario_id", str, line)
    rate = _require(d, "sample_rate_hz", (int, float), line)
    lanes_raw = _require(d, "lanes", list, line)
    agents_raw = _require(d, "agents", list, line)
    target = _require(d, "target_agent_id", str, line)
    present = _require(d, "present_step", int, line)

    segments, succ, pred = {}, {}, {}
    for entry in lanes_raw:
        if not isinstance(entry, dict):
            raise ScenarioFormatError("lane entry must be an object", line)
        lid = str(_require(entry, "id", (str, int), line))
        pts = np.asarray(_require(entry, "points", list, line), dtype=np.float64)
        segments[lid] = pts
        succ[lid] = [str(i) for i in entry.get("successors", [])]
        pred[lid] = [str(i) for i in entry.get("predecessors", [])]
    graph = LaneGraph(segments=segments, successors=succ, predecessors=pred)

    agents = []
    for entry in agents_raw:
        if not isinstance(entry, dict):
            raise ScenarioFormatError("agent entry must be an object", line)
        aid = str(_require(entry, "id", (str, int), line))
        states = _require(entry, "states", list, line)
        steps = np.array([_require(st, "step", int, line) for st in states], dtype=np.int64)
        xy = np.array([[_require(st, "x", (int, float), line),
                        _require(st, "y", (int, float), line)] for st in states],
                      dtype=np.float64).reshape(-1, 2)
        agents.append(AgentTrack(agent_id=aid, steps=steps, xy=xy))

    scenario = Scenario(scenario_id=sid, sample_rate_hz=float(rate), lanes=graph,
                        agents=agents, target_agent_id=target, present_step=present)
    try:
        scenario.validate()
    except ValueError as e:
        raise ScenarioFormatError(str(e), line) from e
    return scenario


def load_scenarios(path):
    """Yield scenarios from a JSONL file in file order."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                d = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ScenarioFormatError(f"invalid JSON ({e.msg})", lineno) from e
            yield scenario_from_dict(d, line=lineno)


def save_scenarios(path, scenarios):
    with open(path, "w", encoding="utf-8") as f:
        for s in scenarios:
            f.write(json.dumps(scenario_to_dict(s), separators=(",", ":")) + "\n")


# -- prediction instances --------------------------------------------------------

@dataclass
class PredictionInstance:
    """Normalized training sample in the target frame.

    ``origin`` and ``heading`` record the world-to-target transform so world
    coordinates can be recovered exactly.  ``agent_pasts`` keeps every
    qualifying nearby agent for multi-agent pooling modes, with
    ``agent_lane_assign`` giving each agent's closest valid lane.
    """

    scenario_id: str
    origin: np.ndarray        # (2,) world position of the target at present
    heading: float            # rotation applied after translation, radians
    past: np.ndarray          # (P, 2)
    future: np.ndarray        # (h, 2)
    lanes: np.ndarray         # (N, M, 2), zero rows for invalid slots
    nearby_pasts: np.ndarray  # (N, P, 2), zero rows for absent agents
    lane_valid: np.ndarray    # (N,) bool
    agent_valid: np.ndarray   # (N,) bool
    ref_lane_index: int
    agent_pasts: np.ndarray       # (A, P, 2), A >= 0
    agent_lane_assign: np.ndarray  # (A,) int, closest valid lane per agent

    @property
    def n_valid_lanes(self):
        return int(self.lane_valid.sum())

    def to_world(self, points):
        """Map target-frame points back to world coordinates."""
        c, s = np.cos(self.heading), np.sin(self.heading)
        rot_back = np.array([[c, -s], [s, c]])
        return np.asarray(points) @ rot_back.T + self.origin


def _rotation(heading):
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[c, s], [-s, c]])


def _window(track, steps_needed):
    lookup = {int(s): i for i, s in enumerate(track.steps)}
    idx = []
    for s in steps_needed:
        if s not in lookup:
            return None
        idx.append(lookup[s])
    return track.xy[idx]


def build_instance(scenario, cfg, past_len, horizon, align_heading=False):
    """Assemble a PredictionInstance from one scenario.

    Translates everything so the target's present position is the origin
    (optionally also rotating its last observed heading onto +x), extracts up
    to N lane candidates, auto-labels the reference lane on the translated
    future, and selects one nearby agent per lane.  Missing lane/agent slots
    are zero-filled with their validity flags cleared.

    Raises ScenarioRejected when the target track does not cover the window
    or no lane lies within the search radius.
    """
    target = scenario.agent(scenario.target_agent_id)
    present = scenario.present_step
    past_steps = range(present - past_len + 1, present + 1)
    future_steps = range(present + 1, present + horizon + 1)

    past_raw = _window(target, past_steps)
    if past_raw is None:
        raise ScenarioRejected("short-history",
                               f"target lacks {past_len} steps ending at {present}")
    future_raw = _window(target, future_steps)
    if future_raw is None:
        raise ScenarioRejected("short-future",
                               f"target lacks {horizon} steps after {present}")

    origin = past_raw[-1].copy()
    heading = 0.0
    if align_heading and past_len >= 2:
        v = past_raw[-1] - past_raw[-2]
        if np.linalg.norm(v) > 1e-9:
            heading = float(np.arctan2(v[1], v[0]))
    rot = _rotation(heading)

    past = (past_raw - origin) @ rot.T
    future = (future_raw - origin) @ rot.T
    past[-1] = 0.0  # exact by definition of the frame
    graph = scenario.lanes.transformed(origin, rot)

    candidates = extract_lane_candidates(graph, (0.0, 0.0), cfg)
    if not candidates:
        raise ScenarioRejected("no-lane", f"scenario {scenario.scenario_id}")
    ref_idx = label_reference_lane(future, candidates, cfg.eta)

    # nearby agents: anything except the target with full past coverage
    others = []
    for track in scenario.agents:
        if track.agent_id == scenario.target_agent_id:
            continue
        w = _window(track, past_steps)
        if w is not None:
            others.append((track.agent_id, (w - origin) @ rot.T))

    n = cfg.max_candidates
    m = cfg.n_points
    lanes = np.zeros((n, m, 2))
    nearby = np.zeros((n, past_len, 2))
    lane_valid = np.zeros(n, dtype=bool)
    agent_valid = np.zeros(n, dtype=bool)
    for i, cand in enumerate(candidates):
        lanes[i] = cand.points
        lane_valid[i] = True
        chosen = select_nearby_agent(cand, others, cand.anchor_arclength, cfg)
        if chosen is not None:
            nearby[i] = chosen
            agent_valid[i] = True

    if others:
        agent_pasts = np.stack([p for _, p in others])
        assign = np.array(
            [int(np.argmin([point_to_lane_distance(p[-1], c) for c in candidates]))
             for _, p in others], dtype=np.int64)
    else:
        agent_pasts = np.zeros((0, past_len, 2))
        assign = np.zeros(0, dtype=np.int64)

    return PredictionInstance(
        scenario_id=scenario.scenario_id,
        origin=origin,
        heading=heading,
        past=past,
        future=future,
        lanes=lanes,
        nearby_pasts=nearby,
        lane_valid=lane_valid,
        agent_valid=agent_valid,
        ref_lane_index=ref_idx,
        agent_pasts=agent_pasts,
        agent_lane_assign=assign,
    )


# -- instance JSONL ----------------------------------------------------------------

def instance_to_dict(inst):
    return {
        "scenario_id": inst.scenario_id,
        "origin": inst.origin.tolist(),
        "heading": inst.heading,
        "past": inst.past.tolist(),
        "future": inst.future.tolist(),
        "lanes": inst.lanes.tolist(),
        "nearby_pasts": inst.nearby_pasts.tolist(),
        "lane_valid": inst.lane_valid.astype(int).tolist(),
        "agent_valid": inst.agent_valid.astype(int).tolist(),
        "ref_lane_index": inst.ref_lane_index,
        "agent_pasts": inst.agent_pasts.tolist(),
        "agent_lane_assign": inst.agent_lane_assign.tolist(),
    }


def instance_from_dict(d):
    past = np.asarray(d["past"], dtype=np.float64)
    return PredictionInstance(
        scenario_id=d["scenario_id"],
        origin=np.asarray(d["origin"], dtype=np.float64),
        heading=float(d["heading"]),
        past=past,
        future=np.asarray(d["future"], dtype=np.float64),
        lanes=np.asarray(d["lanes"], dtype=np.float64),
        nearby_pasts=np.asarray(d["nearby_pasts"], dtype=np.float64),
        lane_valid=np.asarray(d["lane_valid"], dtype=bool),
        agent_valid=np.asarray(d["agent_valid"], dtype=bool),
        ref_lane_index=int(d["ref_lane_index"]),
        agent_pasts=np.asarray(d["agent_pasts"], dtype=np.float64).reshape(
            -1, past.shape[0], 2),
        agent_lane_assign=np.asarray(d["agent_lane_assign"], dtype=np.int64),
    )


def save_instances(path, instances):
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(instance_to_dict(inst), separators=(",", ":")) + "\n")


def load_instances(path):
    with open(path, "r", encoding="utf-8") as f:
        return [instance_from_dict(json.loads(line)) for line in f if line.strip()]
