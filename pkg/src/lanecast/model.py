"""The lane-aware prediction network.

Per lane candidate, three CNN-LSTM encoders (target past, lane centerline,
nearby-agent past) feed a fused per-lane feature; an attention head over the
concatenated per-lane features produces lane weights; the weighted (or
hard-selected) feature, concatenated with the target-past feature through a
skip connection, drives K independent trajectory heads with a shared output
trunk.  Encoder and fusion weights are shared across lane slots.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import (
    LinearLayer,
    LstmLayer,
    Conv1dLayer,
    ParamDict,
    Tensor,
    concat,
    maximum,
    mul,
    relu,
    reshape,
    select_index,
    softmax,
    tsum,
)

# Base widths; every entry scales with ModelConfig.width_scale.
_TRAJ_CONV = (64, 64)
_LANE_CONV = (64, 64, 96, 96)
_ATTN_HIDDEN = (512, 512, 256, 256, 64, 64)
_HEAD_HIDDEN = (512, 512, 256)
_SHARED_HIDDEN = 256


@dataclass
class ModelConfig:
    n_lanes: int = 6
    n_modes: int = 5
    past_len: int = 4
    horizon: int = 12
    lane_points: int = 260
    traj_lstm: int = 512
    lane_lstm: int = 2048
    tfe_out: int = 1024
    selection_mode: str = "soft"
    agent_mode: str = "SL"
    width_scale: float = 1.0
    mask_invalid_lanes: bool = False
    ml_agent_cap: int = 4
    # coordinates are multiplied by this before entering the encoders (a fixed
    # units choice; outputs stay in meters)
    input_scale: float = 0.1

    def scaled(self, dim):
        return max(1, int(round(dim * self.width_scale)))

    def validate(self):
        if self.n_lanes < 1 or self.n_modes < 1:
            raise ValueError("n_lanes and n_modes must be >= 1")
        if self.past_len < 3:
            raise ValueError("past_len must be >= 3 (two k=2 convolutions)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.lane_points < 1:
            raise ValueError("lane_points must be >= 1")
        if not 0.0 < self.width_scale <= 1.0:
            raise ValueError("width_scale must be in (0, 1]")
        if self.input_scale <= 0.0:
            raise ValueError("input_scale must be positive")
        if self.selection_mode not in ("soft", "hard"):
            raise ValueError(f"unknown selection_mode {self.selection_mode!r}")
        if self.agent_mode not in ("SL", "ML", "M"):
            raise ValueError(f"unknown agent_mode {self.agent_mode!r}")
        if self.ml_agent_cap < 1:
            raise ValueError("ml_agent_cap must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown ModelConfig fields: {sorted(extra)}")
        return cls(**d).validate()


@dataclass
class TrajectoryLaneFeature:
    xi: np.ndarray
    xi_vp: np.ndarray
    xi_li: np.ndarray
    xi_vi: np.ndarray


@dataclass
class PredictionOutput:
    trajectories: np.ndarray   # (K, h, 2)
    lane_weights: np.ndarray   # (N,)
    aggregated_xi: np.ndarray  # (tfe_out,)


def aggregate_features(xis, w, mode):
    """Combine per-lane features: soft weighted sum or hard argmax pick."""
    xis = np.asarray(xis, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if mode == "soft":
        return w @ xis
    if mode == "hard":
        return xis[int(np.argmax(w))].copy()
    raise ValueError(f"unknown selection mode {mode!r}")


class _TrajEncoder:
    """conv(k2) x2 + LSTM over a short track: (B, P, 2) -> (B, H)."""

    def __init__(self, cfg, rng):
        ch = [cfg.scaled(c) for c in _TRAJ_CONV]
        self.conv1 = Conv1dLayer(2, ch[0], kernel=2, rng=rng)
        self.conv2 = Conv1dLayer(ch[0], ch[1], kernel=2, rng=rng)
        self.lstm = LstmLayer(ch[1], cfg.scaled(cfg.traj_lstm), rng=rng)

    def forward(self, x):
        h = relu(self.conv1.forward(x))
        h = relu(self.conv2.forward(h))
        return self.lstm.forward(h)

    def register(self, params, prefix):
        params.register(f"{prefix}.conv1", self.conv1.params())
        params.register(f"{prefix}.conv2", self.conv2.params())
        params.register(f"{prefix}.lstm", self.lstm.params())


class _LaneEncoder:
    """conv(k3,p1) x4 + LSTM over the centerline: (B, M, 2) -> (B, H)."""

    def __init__(self, cfg, rng):
        ch = [cfg.scaled(c) for c in _LANE_CONV]
        self.convs = []
        prev = 2
        for c in ch:
            self.convs.append(Conv1dLayer(prev, c, kernel=3, padding=1, rng=rng))
            prev = c
        self.lstm = LstmLayer(prev, cfg.scaled(cfg.lane_lstm), rng=rng)

    def forward(self, x):
        h = x
        for conv in self.convs:
            h = relu(conv.forward(h))
        return self.lstm.forward(h)

    def register(self, params, prefix):
        for i, conv in enumerate(self.convs):
            params.register(f"{prefix}.conv{i + 1}", conv.params())
        params.register(f"{prefix}.lstm", self.lstm.params())


def _fc_stack(dims, rng):
    return [LinearLayer(a, b, rng=rng) for a, b in zip(dims[:-1], dims[1:])]


def _run_stack(layers, x, relu_last):
    h = x
    for i, layer in enumerate(layers):
        h = layer.forward(h)
        if relu_last or i < len(layers) - 1:
            h = relu(h)
    return h


class LanePredictor:
    """Full network with a flat parameter registry for training/serialization."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg.validate()
        rng = np.random.default_rng(seed)
        t_out = cfg.scaled(cfg.tfe_out)
        traj_h = cfg.scaled(cfg.traj_lstm)
        lane_h = cfg.scaled(cfg.lane_lstm)

        self.target_enc = _TrajEncoder(cfg, rng)
        self.lane_enc = _LaneEncoder(cfg, rng)
        self.nearby_enc = _TrajEncoder(cfg, rng)
        cat_dim = traj_h + lane_h + traj_h
        self.fuse = _fc_stack((cat_dim, 2 * t_out, 2 * t_out, t_out, t_out), rng)
        attn_dims = (cfg.n_lanes * t_out,) + tuple(cfg.scaled(d) for d in _ATTN_HIDDEN) \
            + (cfg.n_lanes,)
        self.attn = _fc_stack(attn_dims, rng)
        dec_in = t_out + traj_h
        head_dims = (dec_in,) + tuple(cfg.scaled(d) for d in _HEAD_HIDDEN)
        self.heads = [_fc_stack(head_dims, rng) for _ in range(cfg.n_modes)]
        sh = cfg.scaled(_SHARED_HIDDEN)
        self.shared = _fc_stack((head_dims[-1], sh, cfg.horizon * 2), rng)

        self.params = ParamDict()
        self.target_enc.register(self.params, "target_enc")
        self.lane_enc.register(self.params, "lane_enc")
        self.nearby_enc.register(self.params, "nearby_enc")
        for i, layer in enumerate(self.fuse):
            self.params.register(f"fuse.fc{i + 1}", layer.params())
        for i, layer in enumerate(self.attn):
            self.params.register(f"attn.fc{i + 1}", layer.params())
        for k, head in enumerate(self.heads):
            for i, layer in enumerate(head):
                self.params.register(f"head{k}.fc{i + 1}", layer.params())
        for i, layer in enumerate(self.shared):
            self.params.register(f"shared.fc{i + 1}", layer.params())

    # -- batched graph forward (used by training and evaluation) -----------

    def forward_batch(self, instances):
        return self.forward_arrays(assemble_batch(instances, self.cfg))

    def forward_arrays(self, batch):
        """Run the network on an assembled batch; returns graph tensors."""
        cfg = self.cfg
        past = batch["past"] * cfg.input_scale
        lanes = batch["lanes"] * cfg.input_scale
        slots = batch["agent_slots"] * cfg.input_scale
        slot_valid = batch["slot_valid"]
        B, N = lanes.shape[0], lanes.shape[1]
        A = slots.shape[2]

        xi_vp = self.target_enc.forward(Tensor(past))                        # (B, Ht)
        xi_l = self.lane_enc.forward(Tensor(lanes.reshape(B * N, -1, 2)))    # (B*N, Hl)
        feats = self.nearby_enc.forward(Tensor(slots.reshape(B * N * A, -1, 2)))
        if A == 1:
            xi_v = feats
        else:
            # masked max-pool over agent slots; invalid slots sink to -inf
            traj_h = feats.shape[1]
            feats = reshape(feats, (B * N, A, traj_h))
            m = slot_valid.reshape(B * N, A, 1)
            masked = mul(feats, m) + (1.0 - m) * -1e30
            xi_v = masked[:, 0, :]
            for j in range(1, A):
                xi_v = maximum(xi_v, masked[:, j, :])

        vp_tiled = reshape(concat([xi_vp] * N, axis=1), (B * N, xi_vp.shape[1]))
        fused_in = concat([vp_tiled, xi_l, xi_v], axis=1)
        xis_flat = _run_stack(self.fuse, fused_in, relu_last=True)           # (B*N, T)
        t_out = xis_flat.shape[1]
        xis = reshape(xis_flat, (B, N, t_out))

        logits = _run_stack(self.attn, reshape(xis, (B, N * t_out)), relu_last=False)
        if cfg.mask_invalid_lanes:
            logits = logits + np.where(batch["lane_valid"], 0.0, -1e9)
        w = softmax(logits, axis=-1)                                          # (B, N)

        if cfg.selection_mode == "soft":
            xi = tsum(mul(xis, reshape(w, (B, N, 1))), axis=1)
        else:
            xi = select_index(xis, np.argmax(w.data, axis=1))

        dec_in = concat([xi, xi_vp], axis=1)                                  # (B, T+Ht)
        outs = []
        for head in self.heads:
            h = _run_stack(head, dec_in, relu_last=True)
            h = relu(self.shared[0].forward(h))
            h = self.shared[1].forward(h)
            outs.append(reshape(h, (B, 1, cfg.horizon, 2)))
        traj = concat(outs, axis=1)                                           # (B, K, h, 2)
        return {"trajectories": traj, "lane_weights": w, "xi": xi,
                "xi_vp": xi_vp, "xis": xis}

    # -- single-sample views of the blocks ---------------------------------

    def tfe_forward(self, past, lane, nearby):
        """Per-lane trajectory-lane feature for one sample."""
        s = self.cfg.input_scale
        xi_vp = self.target_enc.forward(Tensor(np.asarray(past)[None] * s))
        xi_li = self.lane_enc.forward(Tensor(np.asarray(lane)[None] * s))
        xi_vi = self.nearby_enc.forward(Tensor(np.asarray(nearby)[None] * s))
        fused = _run_stack(self.fuse, concat([xi_vp, xi_li, xi_vi], axis=1),
                           relu_last=True)
        return TrajectoryLaneFeature(xi=fused.data[0], xi_vp=xi_vp.data[0],
                                     xi_li=xi_li.data[0], xi_vi=xi_vi.data[0])

    def la_forward(self, xis):
        """Lane attention weights for one sample's (N, tfe_out) features."""
        xis = np.asarray(xis, dtype=np.float64)
        logits = _run_stack(self.attn, Tensor(xis.reshape(1, -1)), relu_last=False)
        return softmax(logits, axis=-1).data[0]

    def mtp_forward(self, xi, xi_vp):
        """K trajectory hypotheses for one sample's aggregated features."""
        dec_in = Tensor(np.concatenate([np.asarray(xi), np.asarray(xi_vp)])[None])
        outs = []
        for head in self.heads:
            h = _run_stack(head, dec_in, relu_last=True)
            h = relu(self.shared[0].forward(h))
            h = self.shared[1].forward(h)
            outs.append(h.data.reshape(1, self.cfg.horizon, 2))
        return np.concatenate(outs, axis=0)

    def forward(self, instance):
        """Full pipeline on one instance; returns plain arrays."""
        out = self.forward_batch([instance])
        return PredictionOutput(
            trajectories=out["trajectories"].data[0],
            lane_weights=out["lane_weights"].data[0],
            aggregated_xi=out["xi"].data[0],
        )


def assemble_batch(instances, cfg):
    """Stack instances into dense arrays, building per-lane agent slots.

    SL keeps the single preprocessed agent per lane (zeros when absent).
    ML groups stored agents by their closest lane (nearest first, capped);
    M feeds every stored agent to every lane.  Slot 0 falls back to the
    zero trajectory so pooling always has one valid entry.
    """
    cfg.validate()
    B = len(instances)
    if B == 0:
        raise ValueError("empty batch")
    for inst in instances:
        if inst.lanes.shape != (cfg.n_lanes, cfg.lane_points, 2):
            raise ValueError(
                f"instance lanes shape {inst.lanes.shape} does not match config "
                f"(n_lanes={cfg.n_lanes}, lane_points={cfg.lane_points})")
        if inst.past.shape != (cfg.past_len, 2):
            raise ValueError(
                f"instance past shape {inst.past.shape} does not match "
                f"past_len={cfg.past_len}")
        if inst.future.shape[0] and inst.future.shape != (cfg.horizon, 2):
            raise ValueError(
                f"instance future shape {inst.future.shape} does not match "
                f"horizon={cfg.horizon}")

    past = np.stack([i.past for i in instances])
    lanes = np.stack([i.lanes for i in instances])
    lane_valid = np.stack([i.lane_valid for i in instances])
    futures = np.stack([i.future for i in instances]) if instances[0].future.size \
        else np.zeros((B, cfg.horizon, 2))
    ref_idx = np.array([i.ref_lane_index for i in instances], dtype=np.int64)

    if cfg.agent_mode == "SL":
        slots = np.stack([i.nearby_pasts for i in instances])[:, :, None]
        slot_valid = np.ones((B, cfg.n_lanes, 1))
    else:
        A = cfg.ml_agent_cap
        slots = np.zeros((B, cfg.n_lanes, A, cfg.past_len, 2))
        slot_valid = np.zeros((B, cfg.n_lanes, A))
        slot_valid[:, :, 0] = 1.0  # zero-trajectory fallback
        for b, inst in enumerate(instances):
            for lane_i in range(cfg.n_lanes):
                if cfg.agent_mode == "ML":
                    cand_ids = np.flatnonzero(inst.agent_lane_assign == lane_i)
                    if cand_ids.size and inst.lane_valid[lane_i]:
                        dists = [np.linalg.norm(
                            inst.lanes[lane_i] - inst.agent_pasts[a][-1], axis=1).min()
                            for a in cand_ids]
                        cand_ids = cand_ids[np.argsort(dists, kind="stable")]
                else:  # M: every agent, every lane
                    cand_ids = np.arange(inst.agent_pasts.shape[0])
                for j, a in enumerate(cand_ids[:A]):
                    slots[b, lane_i, j] = inst.agent_pasts[a]
                    slot_valid[b, lane_i, j] = 1.0

    return {"past": past, "lanes": lanes, "lane_valid": lane_valid,
            "agent_slots": slots, "slot_valid": slot_valid,
            "futures": futures, "ref_lane_index": ref_idx}
