"""Training losses: position, lane-off, lane classification, and their
winner-takes-all combination.

Per hypothesis k the prediction loss is beta * pos + (1 - beta) * lane_off;
only the best hypothesis per sample (smallest combined loss, ties to the
smallest k) contributes to the total, which is
alpha * pred + (1 - alpha) * cls averaged over the batch.
"""

from dataclasses import dataclass

import numpy as np

from .nn import Tensor, cross_entropy, mul, pointset_min_dist, select_index, smooth_l1, tmean
from .nn.tensor import _as_tensor


@dataclass
class LossConfig:
    alpha: float = 0.3
    beta: float = 0.7
    eta: str = "linear"

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        return self


def loss_pos(pred, gt):
    """Smooth L1 between one hypothesis and the ground truth, averaged over
    the 2h coordinates.  Returns a graph tensor when given one."""
    return smooth_l1(_as_tensor(pred), np.asarray(gt, dtype=np.float64))


def loss_lane_off(pred, gt, ref_lane):
    """Mean over horizon steps of the prediction's distance to the reference
    lane, counted only where it exceeds the ground truth's distance."""
    pred = _as_tensor(pred)
    lane = ref_lane.points if hasattr(ref_lane, "points") else np.asarray(ref_lane)
    gt = np.asarray(gt, dtype=np.float64)
    d_pred = pointset_min_dist(pred, lane)
    d_gt = np.linalg.norm(gt[:, None, :] - lane[None, :, :], axis=2).min(axis=1)
    exceeded = (d_pred.data > d_gt).astype(np.float64)
    return tmean(mul(d_pred, exceeded))


def loss_cls(w, ref_index):
    """-log w[ref] with an epsilon floor; ``w`` holds softmax probabilities."""
    w = _as_tensor(w)
    if w.data.ndim == 1:
        w = w.reshape(1, -1)
        ref_index = [int(ref_index)]
    return cross_entropy(w, ref_index)


def loss_total(output, instance, cfg):
    """Full loss for one already-computed prediction (plain numbers).

    Returns (total, winner_index, components); ``components`` holds the
    winner's pos/lane-off values plus cls and pred.
    """
    cfg.validate()
    ref_lane = instance.lanes[instance.ref_lane_index]
    per_k = []
    parts = []
    for pred in output.trajectories:
        lp = loss_pos(pred, instance.future).item()
        lo = loss_lane_off(pred, instance.future, ref_lane).item()
        parts.append((lp, lo))
        per_k.append(cfg.beta * lp + (1.0 - cfg.beta) * lo)
    winner = int(np.argmin(per_k))
    l_pred = per_k[winner]
    l_cls = loss_cls(output.lane_weights, instance.ref_lane_index).item()
    total = cfg.alpha * l_pred + (1.0 - cfg.alpha) * l_cls
    components = {
        "pos": parts[winner][0],
        "laneoff": parts[winner][1],
        "cls": l_cls,
        "pred": l_pred,
        "total": total,
    }
    return total, winner, components


def loss_total_batch(model_out, batch, cfg):
    """Graph-building batch loss.

    ``model_out`` comes from LanePredictor.forward_arrays, ``batch`` from
    assemble_batch.  Returns (total tensor, winner indices, component means);
    backward through the total reaches only each sample's winning head.
    """
    cfg.validate()
    traj = model_out["trajectories"]            # (B, K, h, 2)
    w = model_out["lane_weights"]               # (B, N)
    futures = batch["futures"]                  # (B, h, 2)
    ref_idx = batch["ref_lane_index"]           # (B,)
    B, K = traj.shape[0], traj.shape[1]
    rows = np.arange(B)
    ref_lanes = batch["lanes"][rows, ref_idx]   # (B, M, 2)

    pos_elem = smooth_l1(traj, np.broadcast_to(futures[:, None], traj.shape),
                         reduction="none")
    pos_bk = tmean(pos_elem, axis=(2, 3))                        # (B, K)

    d_pred = pointset_min_dist(traj, ref_lanes[:, None])         # (B, K, h)
    d_gt = np.linalg.norm(futures[:, :, None, :] - ref_lanes[:, None, :, :],
                          axis=3).min(axis=2)                    # (B, h)
    exceeded = (d_pred.data > d_gt[:, None, :]).astype(np.float64)
    laneoff_bk = tmean(mul(d_pred, exceeded), axis=2)            # (B, K)

    per_k = mul(pos_bk, cfg.beta) + mul(laneoff_bk, 1.0 - cfg.beta)
    winners = np.argmin(per_k.data, axis=1)
    l_pred = tmean(select_index(per_k, winners))
    l_cls = cross_entropy(w, ref_idx)
    total = mul(l_pred, cfg.alpha) + mul(l_cls, 1.0 - cfg.alpha)

    components = {
        "pos": float(pos_bk.data[rows, winners].mean()),
        "laneoff": float(laneoff_bk.data[rows, winners].mean()),
        "cls": l_cls.item(),
        "pred": l_pred.item(),
        "total": total.item(),
    }
    return total, winners, components
