"""Lane-graph geometry: candidate extraction, resampling, and auto-labeling.

All functions are pure over immutable inputs and safe to call concurrently.
Coordinates are meters in whatever frame the caller works in; candidate
extraction only cares about relative geometry.
"""

from dataclasses import dataclass, field

import numpy as np

# Breadth cap while growing segment chains through forks; synthetic and HD
# lane graphs branch far less than this.
_MAX_CHAINS_PER_SEED = 32


def resolve_eta(eta):
    """Map an eta selector to a per-horizon-step weight function.

    ``"linear"`` weights step i by i (penalizing far-horizon deviation more),
    ``"uniform"`` weights every step equally.  Callables pass through.
    """
    if callable(eta):
        return eta
    if eta == "linear":
        return float
    if eta == "uniform":
        return lambda i: 1.0
    raise ValueError(f"unknown eta selector {eta!r}")


@dataclass
class CandidateConfig:
    """Geometry settings for lane-candidate extraction."""

    search_radius_m: float = 10.0
    forward_len_m: float = 100.0
    backward_len_m: float = 30.0
    spacing_m: float = 0.5
    max_candidates: int = 6
    agent_lateral_range_m: float = 3.5
    eta: str = "linear"

    @property
    def n_points(self):
        return int(round((self.forward_len_m + self.backward_len_m) / self.spacing_m))

    def validate(self):
        for name in ("search_radius_m", "forward_len_m", "backward_len_m", "spacing_m",
                     "agent_lateral_range_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if self.n_points < 1:
            raise ValueError("candidate length shorter than spacing")
        resolve_eta(self.eta)
        return self


@dataclass
class LaneGraph:
    """Centerline segments plus connectivity.

    segments: id -> (V, 2) polyline; successors/predecessors: id -> ids.
    """

    segments: dict = field(default_factory=dict)
    successors: dict = field(default_factory=dict)
    predecessors: dict = field(default_factory=dict)

    def validate(self):
        for sid, pts in self.segments.items():
            pts = np.asarray(pts, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
                raise ValueError(f"segment {sid!r} must be a (V>=2, 2) polyline")
            if np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
                raise ValueError(f"segment {sid!r} has repeated consecutive points")
        for table_name, table in (("successors", self.successors),
                                  ("predecessors", self.predecessors)):
            for sid, nbrs in table.items():
                if sid not in self.segments:
                    raise ValueError(f"{table_name} key {sid!r} is not a segment")
                for nid in nbrs:
                    if nid not in self.segments:
                        raise ValueError(f"{table_name} of {sid!r} references unknown {nid!r}")
        return self

    def successors_of(self, sid):
        return self.successors.get(sid, [])

    def predecessors_of(self, sid):
        return self.predecessors.get(sid, [])

    def translated(self, offset):
        return LaneGraph(
            segments={sid: np.asarray(p, dtype=np.float64) - offset
                      for sid, p in self.segments.items()},
            successors=self.successors,
            predecessors=self.predecessors,
        )

    def transformed(self, offset, rotation):
        return LaneGraph(
            segments={sid: (np.asarray(p, dtype=np.float64) - offset) @ rotation.T
                      for sid, p in self.segments.items()},
            successors=self.successors,
            predecessors=self.predecessors,
        )


@dataclass
class LaneCandidate:
    """One resampled centerline instance near the target.

    points: (M, 2) equally spaced along arc length; anchor_arclength: arc
    length from the first point to the target's projection (by construction
    the configured backward length).
    """

    points: np.ndarray
    source_segments: list
    anchor_arclength: float


# -- polyline primitives ----------------------------------------------------

def _segment_lengths(points):
    return np.linalg.norm(np.diff(points, axis=0), axis=1)


def polyline_length(points):
    return float(_segment_lengths(np.asarray(points, dtype=np.float64)).sum())


def point_at_arclength(points, s):
    """Point at arc length ``s`` along a polyline, extrapolating past the ends."""
    pts = np.asarray(points, dtype=np.float64)
    lengths = _segment_lengths(pts)
    total = float(lengths.sum())
    if total <= 0.0:
        raise ValueError("degenerate polyline: zero arc length")
    if s < 0.0:
        return pts[0] + s * (pts[1] - pts[0]) / lengths[0]
    if s > total:
        return pts[-1] + (s - total) * (pts[-1] - pts[-2]) / lengths[-1]
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(lengths) - 1)
    t = (s - cum[i]) / lengths[i]
    return pts[i] + t * (pts[i + 1] - pts[i])


def tangent_at_arclength(points, s):
    """Unit tangent of the polyline segment containing arc length ``s``."""
    pts = np.asarray(points, dtype=np.float64)
    lengths = _segment_lengths(pts)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    i = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(lengths) - 1))
    return (pts[i + 1] - pts[i]) / lengths[i]


def project_to_polyline(points, p):
    """Project ``p`` onto a polyline.

    Returns (arclength of the foot point, Euclidean distance).  Ties across
    segments resolve to the smallest arc length.
    """
    pts = np.asarray(points, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    a = pts[:-1]
    d = pts[1:] - a
    seg_len2 = (d * d).sum(axis=1)
    t = np.clip(((p - a) * d).sum(axis=1) / seg_len2, 0.0, 1.0)
    feet = a + t[:, None] * d
    dist2 = ((feet - p) ** 2).sum(axis=1)
    i = int(np.argmin(dist2))
    lengths = np.sqrt(seg_len2)
    arc = float(np.concatenate([[0.0], np.cumsum(lengths)])[i] + t[i] * lengths[i])
    return arc, float(np.sqrt(dist2[i]))


def resample_polyline(points, cfg, anchor):
    """Resample a polyline to M points equally spaced along arc length.

    Samples sit at arc-length offsets {-backward + j*spacing, j = 0..M-1}
    measured from the anchor's projection; offsets past either end continue
    straight along the terminal segment direction.
    """
    pts = np.asarray(points, dtype=np.float64)
    lengths = _segment_lengths(pts)
    total = float(lengths.sum())
    if total <= 0.0:
        raise ValueError("degenerate polyline: zero arc length")
    keep = lengths > 0.0
    if not keep.all():
        # collapse coincident points so interpolation stays well-defined
        pts = np.concatenate([pts[:1], pts[1:][keep]], axis=0)
        lengths = lengths[keep]
    cum = np.concatenate([[0.0], np.cumsum(lengths)])

    s0, _ = project_to_polyline(pts, anchor)
    m = cfg.n_points
    offsets = s0 - cfg.backward_len_m + np.arange(m) * cfg.spacing_m

    x = np.interp(offsets, cum, pts[:, 0])
    y = np.interp(offsets, cum, pts[:, 1])
    out = np.stack([x, y], axis=1)

    before = offsets < 0.0
    if before.any():
        d0 = (pts[1] - pts[0]) / lengths[0]
        out[before] = pts[0] + offsets[before, None] * d0
    after = offsets > total
    if after.any():
        d1 = (pts[-1] - pts[-2]) / lengths[-1]
        out[after] = pts[-1] + (offsets[after, None] - total) * d1
    return out


# -- candidate extraction -----------------------------------------------------

def extract_lane_candidates(graph, target_pos, cfg):
    """Find up to N lane candidates around the target position.

    Segments within the search radius seed chains that are extended along
    connectivity until they span the configured arc length forward and
    backward of the target's projection (branching spawns one chain per
    successor/predecessor).  Chains are deduplicated, ordered by seed
    distance, capped at N, and resampled to M points each.  An empty list
    means nothing was within the radius; the caller pads.
    """
    target = np.asarray(target_pos, dtype=np.float64)
    seeds = []
    for sid, pts in graph.segments.items():
        _, dist = project_to_polyline(pts, target)
        if dist <= cfg.search_radius_m:
            seeds.append((dist, sid))
    seeds.sort(key=lambda s: (s[0], s[1]))

    seg_len = {sid: polyline_length(p) for sid, p in graph.segments.items()}
    chains = {}  # ids tuple -> (seed_dist, seed order index)
    for order, (dist, seed) in enumerate(seeds):
        s0, _ = project_to_polyline(graph.segments[seed], target)
        frontier = [((seed,), seg_len[seed] - s0, s0)]
        complete = []
        while frontier and len(complete) < _MAX_CHAINS_PER_SEED:
            ids, fwd, bwd = frontier.pop(0)
            if fwd < cfg.forward_len_m:
                nxt = [n for n in graph.successors_of(ids[-1]) if n not in ids]
                if nxt:
                    for n in nxt:
                        frontier.append((ids + (n,), fwd + seg_len[n], bwd))
                    continue
            if bwd < cfg.backward_len_m:
                prv = [n for n in graph.predecessors_of(ids[0]) if n not in ids]
                if prv:
                    for n in prv:
                        frontier.append(((n,) + ids, fwd, bwd + seg_len[n]))
                    continue
            complete.append(ids)
        for ids in complete:
            if ids not in chains:
                chains[ids] = (dist, order)

    ranked = sorted(chains.items(), key=lambda kv: (kv[1][0], kv[1][1], kv[0]))
    candidates = []
    for ids, _ in ranked[: cfg.max_candidates]:
        poly = _chain_polyline(graph, ids)
        points = resample_polyline(poly, cfg, target)
        candidates.append(LaneCandidate(points=points,
                                        source_segments=list(ids),
                                        anchor_arclength=cfg.backward_len_m))
    return candidates


def _chain_polyline(graph, ids):
    parts = [np.asarray(graph.segments[ids[0]], dtype=np.float64)]
    for sid in ids[1:]:
        pts = np.asarray(graph.segments[sid], dtype=np.float64)
        if np.allclose(parts[-1][-1], pts[0], atol=1e-9):
            pts = pts[1:]
        parts.append(pts)
    return np.concatenate(parts, axis=0)


# -- distances and labeling ----------------------------------------------------

def point_to_lane_distance(p, lane):
    """Min Euclidean distance from a point to the lane's M sample points."""
    pts = lane.points if isinstance(lane, LaneCandidate) else np.asarray(lane)
    return float(np.linalg.norm(pts - np.asarray(p, dtype=np.float64), axis=1).min())


def lane_trajectory_distance(future, lane, eta="linear"):
    """Weighted sum over horizon steps of min distance to the lane points.

    Step i (1-based) contributes eta(i) * min_m ||future_i - L_m||.
    """
    fut = np.asarray(future, dtype=np.float64)
    pts = lane.points if isinstance(lane, LaneCandidate) else np.asarray(lane)
    weight_fn = resolve_eta(eta)
    dists = np.linalg.norm(fut[:, None, :] - pts[None, :, :], axis=2).min(axis=1)
    weights = np.array([weight_fn(i) for i in range(1, fut.shape[0] + 1)])
    return float((weights * dists).sum())


def label_reference_lane(future, candidates, eta="linear"):
    """Index of the candidate closest to the future trajectory (ties: smallest)."""
    if not candidates:
        raise ValueError("cannot label a reference lane without candidates")
    dists = [lane_trajectory_distance(future, c, eta) for c in candidates]
    return int(np.argmin(dists))


def select_nearby_agent(lane, agents, target_arclength, cfg):
    """Pick the most influential nearby agent for one lane candidate.

    Among agents whose present position lies within the lateral range of the
    lane and projects ahead of the target along it, returns the past
    trajectory of the one with the smallest arc-length gap (None when no
    agent qualifies).
    """
    best = None
    best_gap = np.inf
    for _, past in agents:
        present = np.asarray(past, dtype=np.float64)[-1]
        if point_to_lane_distance(present, lane) > cfg.agent_lateral_range_m:
            continue
        arc, _ = project_to_polyline(lane.points, present)
        gap = arc - target_arclength
        if gap > 0.0 and gap < best_gap:
            best_gap = gap
            best = np.asarray(past, dtype=np.float64)
    return best
