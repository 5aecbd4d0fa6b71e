"""Displacement-error metrics and dataset-level evaluation."""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricReport:
    per_k: dict                 # k -> {"ade": float, "fde": float}
    count: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"per_k": {str(k): v for k, v in self.per_k.items()},
                "count": self.count, "metadata": self.metadata}

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["k", "ade", "fde"])
            for k in sorted(self.per_k):
                writer.writerow([k, repr(self.per_k[k]["ade"]), repr(self.per_k[k]["fde"])])


def ade_fde(preds, gt, k_eval):
    """Best-of-k average and final displacement error (independent minima).

    preds: (K, h, 2); gt: (h, 2); only the first ``k_eval`` hypotheses count.
    """
    preds = np.asarray(preds, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[1:] != gt.shape:
        raise ValueError(f"prediction shape {preds.shape} incompatible with gt {gt.shape}")
    if not 1 <= k_eval <= preds.shape[0]:
        raise ValueError(f"k_eval={k_eval} outside [1, {preds.shape[0]}]")
    d = preds[:k_eval] - gt[None]
    d2 = d[:, :, 0] ** 2 + d[:, :, 1] ** 2
    # scalar sqrt: numpy's vectorized kernel is not correctly rounded on every
    # platform, and reference implementations must be able to match us exactly
    err = np.array([[math.sqrt(v) for v in row] for row in d2])  # (k_eval, h)
    return float(err.mean(axis=1).min()), float(err[:, -1].min())


def evaluate_dataset(model_or_predictions, instances, k_list, metadata=None):
    """Mean per-instance ADE/FDE over a dataset for each requested k.

    Accepts either a model (anything with ``.forward(instance)`` returning
    trajectories) or a precomputed list of (K, h, 2) arrays.
    """
    if not instances:
        raise ValueError("empty evaluation dataset")
    if isinstance(model_or_predictions, (list, tuple)):
        predictions = [np.asarray(p, dtype=np.float64) for p in model_or_predictions]
        if len(predictions) != len(instances):
            raise ValueError("prediction count does not match instance count")
    else:
        predictions = [model_or_predictions.forward(inst).trajectories
                       for inst in instances]
    k_max = min(p.shape[0] for p in predictions)
    for k in k_list:
        if k > k_max:
            raise ValueError(f"requested k={k} exceeds available hypotheses K={k_max}")

    per_k = {}
    for k in k_list:
        pairs = [ade_fde(p, inst.future, k) for p, inst in zip(predictions, instances)]
        ades, fdes = zip(*pairs)
        per_k[int(k)] = {"ade": float(np.mean(ades)), "fde": float(np.mean(fdes))}
    return MetricReport(per_k=per_k, count=len(instances), metadata=metadata or {})


def constant_velocity_baseline(past, horizon):
    """Extrapolate the last observed velocity for ``horizon`` steps."""
    past = np.asarray(past, dtype=np.float64)
    if past.shape[0] < 2:
        raise ValueError("constant-velocity baseline needs at least 2 past points")
    v = past[-1] - past[-2]
    steps = np.arange(1, horizon + 1)[:, None]
    return past[-1] + steps * v
