"""Optimization loop with plateau LR decay, checkpoints, and reports."""

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .losses import loss_total_batch
from .metrics import evaluate_dataset
from .model import LanePredictor, ModelConfig, assemble_batch
from .nn import AdamState

REPORT_CSV_COLUMNS = ("epoch", "lr", "loss_total", "loss_pos", "loss_laneoff",
                      "loss_cls", "val_total")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch_index):
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")


class PlateauScheduler:
    """Halve-on-plateau learning-rate state machine.

    After ``patience`` consecutive epochs without strict improvement of the
    best seen value, the rate is multiplied by ``factor``; the stall counter
    resets both on improvement and on decay.
    """

    def __init__(self, lr, patience, factor):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = np.inf
        self.stall = 0

    def step(self, val_loss):
        """Advance one epoch; returns True when this epoch improved the best."""
        if val_loss < self.best:
            self.best = val_loss
            self.stall = 0
            return True
        self.stall += 1
        if self.stall >= self.patience:
            self.lr *= self.factor
            self.stall = 0
        return False


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 3e-4
    plateau_patience_epochs: int = 3
    lr_decay_factor: float = 0.5
    max_epochs: int = 30
    seed: int = 0
    val_fraction: float = 0.2

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValueError("lr_decay_factor must be in (0, 1)")
        if self.plateau_patience_epochs < 1:
            raise ValueError("plateau_patience_epochs must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        return self


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # rows of REPORT_CSV_COLUMNS values
    wall_clock_s: float = 0.0
    final_val_metrics: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(REPORT_CSV_COLUMNS)
            for row in self.epochs:
                writer.writerow([row["epoch"], repr(row["lr"])]
                                + [repr(row[c]) for c in REPORT_CSV_COLUMNS[2:]])

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"epochs": self.epochs, "wall_clock_s": self.wall_clock_s,
                       "final_val_metrics": self.final_val_metrics}, f, indent=2)
            f.write("\n")


# -- checkpoints ---------------------------------------------------------------

_CHECKPOINT_FORMAT = "lanecast-checkpoint-v1"


def save_checkpoint(path, model):
    """Self-describing single file: JSON header line + raw parameter blob."""
    manifest, blob = model.params.state_bytes()
    header = json.dumps({"format": _CHECKPOINT_FORMAT,
                         "model_config": model.cfg.to_dict(),
                         "params": manifest}, separators=(",", ":"))
    with open(path, "wb") as f:
        f.write(header.encode() + b"\n")
        f.write(blob)


def load_checkpoint(path, expect_config=None):
    """Rebuild a model from a checkpoint; optionally enforce a config match."""
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        blob = f.read()
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"not a {_CHECKPOINT_FORMAT} file: {path}")
    cfg = ModelConfig.from_dict(header["model_config"])
    if expect_config is not None:
        for name, want in asdict(expect_config).items():
            got = getattr(cfg, name)
            if got != want:
                raise ValueError(
                    f"checkpoint config mismatch on {name!r}: file has {got}, "
                    f"expected {want}")
    model = LanePredictor(cfg, seed=0)
    model.params.load_bytes(header["params"], blob)
    return model


# -- training loop ----------------------------------------------------------------

def split_train_val(instances, val_fraction, seed):
    """Deterministic shuffled split; validation takes the tail fraction."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(instances))
    n_val = int(round(len(instances) * val_fraction))
    val_idx = set(order[len(instances) - n_val:].tolist())
    train = [instances[i] for i in order if i not in val_idx]
    val = [instances[i] for i in order if i in val_idx]
    return train, val


def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _dataset_loss(model, instances, loss_cfg, batch_size):
    totals, counts = [], []
    for chunk in _batches(instances, batch_size):
        batch = assemble_batch(chunk, model.cfg)
        out = model.forward_arrays(batch)
        total, _, _ = loss_total_batch(out, batch, loss_cfg)
        totals.append(total.item() * len(chunk))
        counts.append(len(chunk))
    return float(np.sum(totals) / np.sum(counts))


def train_loop(train_set, val_set, model, loss_cfg, train_cfg, out_dir=None,
               log=None):
    """Winner-takes-all training with Adam and halve-on-plateau LR decay.

    Shuffles per epoch under the seed, evaluates the validation loss each
    epoch, halves the learning rate after ``plateau_patience_epochs``
    consecutive epochs without improvement (counter resets on improvement and
    on decay), and checkpoints the best validation model.  Deterministic for
    a fixed seed in a single-threaded run.
    """
    if not train_set:
        raise ValueError("empty training set")
    loss_cfg.validate()
    train_cfg.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "checkpoint_initial.bin", model)

    opt = AdamState(model.params, lr=train_cfg.lr)
    sched = PlateauScheduler(train_cfg.lr, train_cfg.plateau_patience_epochs,
                             train_cfg.lr_decay_factor)
    rng = np.random.default_rng(train_cfg.seed)
    report = TrainReport()
    t_start = time.monotonic()

    for epoch in range(1, train_cfg.max_epochs + 1):
        lr_in_effect = opt.lr
        order = rng.permutation(len(train_set))
        comp_sums = {"total": 0.0, "pos": 0.0, "laneoff": 0.0, "cls": 0.0}
        seen = 0
        for b_idx, idx_chunk in enumerate(_batches(order, train_cfg.batch_size)):
            chunk = [train_set[i] for i in idx_chunk]
            batch = assemble_batch(chunk, model.cfg)
            out = model.forward_arrays(batch)
            total, _, comps = loss_total_batch(out, batch, loss_cfg)
            if not np.isfinite(comps["total"]):
                raise TrainingDiverged(epoch, b_idx)
            total.backward()
            opt.step()
            for key in comp_sums:
                comp_sums[key] += comps[key] * len(chunk)
            seen += len(chunk)

        val_total = (_dataset_loss(model, val_set, loss_cfg, train_cfg.batch_size)
                     if val_set else comp_sums["total"] / seen)
        row = {
            "epoch": epoch,
            "lr": lr_in_effect,
            "loss_total": comp_sums["total"] / seen,
            "loss_pos": comp_sums["pos"] / seen,
            "loss_laneoff": comp_sums["laneoff"] / seen,
            "loss_cls": comp_sums["cls"] / seen,
            "val_total": val_total,
        }
        report.epochs.append(row)
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr_in_effect:.2e}  "
                f"train {row['loss_total']:.4f}  val {val_total:.4f}")

        if sched.step(val_total):
            if out_dir is not None:
                save_checkpoint(out_dir / "checkpoint_best.bin", model)
        opt.lr = sched.lr

    if out_dir is not None and train_cfg.max_epochs > 0:
        save_checkpoint(out_dir / "checkpoint_final.bin", model)
        if not (out_dir / "checkpoint_best.bin").exists():
            save_checkpoint(out_dir / "checkpoint_best.bin", model)

    if val_set:
        k_list = sorted({1, model.cfg.n_modes})
        report.final_val_metrics = evaluate_dataset(
            model, val_set, k_list).to_dict()
    report.wall_clock_s = time.monotonic() - t_start
    return report
