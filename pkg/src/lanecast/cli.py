"""Command-line pipeline: gen, preprocess, train, eval, predict.

A single JSON config file (sections: candidates, model, loss, train,
synthetic, plus top-level align_heading) drives every stage; flags override
file values.  Every command validates its full config before touching any
output path and echoes the effective config for reproducibility.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 divergence.
"""

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .lanes import CandidateConfig
from .losses import LossConfig
from .metrics import constant_velocity_baseline, evaluate_dataset
from .model import LanePredictor, ModelConfig
from .scenarios import (
    ScenarioFormatError,
    ScenarioRejected,
    build_instance,
    load_instances,
    load_scenarios,
    save_instances,
    save_scenarios,
)
from .synthetic import SyntheticConfig, generate_synthetic
from .training import (
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    split_train_val,
    train_loop,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    candidates: CandidateConfig = field(default_factory=CandidateConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    align_heading: bool = False

    def to_dict(self):
        return {
            "candidates": asdict(self.candidates),
            "model": asdict(self.model),
            "loss": asdict(self.loss),
            "train": asdict(self.train),
            "synthetic": asdict(self.synthetic),
            "align_heading": self.align_heading,
        }

    def validate(self):
        self.candidates.validate()
        self.model.validate()
        self.loss.validate()
        self.train.validate()
        self.synthetic.validate()
        checks = (
            ("model.lane_points", self.model.lane_points, self.candidates.n_points),
            ("model.past_len", self.model.past_len, self.synthetic.past_len),
            ("model.horizon", self.model.horizon, self.synthetic.horizon),
            ("model.n_lanes", self.model.n_lanes, self.candidates.max_candidates),
        )
        for name, got, want in checks:
            if got != want:
                raise ConfigError(f"{name}={got} inconsistent with derived value {want}")
        return self


def _section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    return cls(**raw)


def load_run_config(path=None):
    """Build a RunConfig from a JSON file, deriving dependent model dims.

    The model's lane_points/past_len/horizon/n_lanes default from the
    candidates and synthetic sections so one edit keeps them consistent.
    """
    raw = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - {"candidates", "model", "loss", "train", "synthetic",
                          "align_heading"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    cand = _section(CandidateConfig, raw.get("candidates", {}), "candidates")
    syn = _section(SyntheticConfig, raw.get("synthetic", {}), "synthetic")
    model_raw = dict(raw.get("model", {}))
    model_raw.setdefault("lane_points", cand.n_points)
    model_raw.setdefault("past_len", syn.past_len)
    model_raw.setdefault("horizon", syn.horizon)
    model_raw.setdefault("n_lanes", cand.max_candidates)
    cfg = RunConfig(
        candidates=cand,
        model=_section(ModelConfig, model_raw, "model"),
        loss=_section(LossConfig, raw.get("loss", {}), "loss"),
        train=_section(TrainConfig, raw.get("train", {}), "train"),
        synthetic=syn,
        align_heading=bool(raw.get("align_heading", False)),
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def _revalidate(cfg):
    """Config errors after flag overrides are still usage errors."""
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _file_digest(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:12]


def _echo(cfg, args):
    if not args.quiet:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    parser = _Parser(prog="lanecast",
                     description="Lane-aware multi-modal trajectory prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="JSON run config; flags override file values")
        p.add_argument("--seed", type=int, default=None,
                       help="override synthetic and training seeds")
        p.add_argument("--quiet", action="store_true",
                       help="suppress the effective-config echo and progress")

    g = sub.add_parser("gen", help="generate synthetic scenarios")
    common(g)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n-scenarios", type=int, default=None)
    g.add_argument("--topology", default=None,
                   choices=["straight", "fork", "curve", "mixed"])

    p = sub.add_parser("preprocess", help="scenarios JSONL -> instances JSONL")
    common(p)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a model on preprocessed instances")
    common(t)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--val", type=Path, default=None,
                   help="held-out instances; defaults to a val_fraction split")
    t.add_argument("--out-dir", type=Path, required=True)
    t.add_argument("--max-epochs", type=int, default=None)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--k", default="1,5", help="comma-separated hypothesis counts")
    e.add_argument("--baseline", action="store_true",
                   help="also evaluate the constant-velocity baseline")
    e.add_argument("--out-dir", type=Path, required=True)

    d = sub.add_parser("predict", help="dump per-instance predictions as JSONL")
    common(d)
    d.add_argument("--data", type=Path, required=True)
    d.add_argument("--checkpoint", type=Path, required=True)
    d.add_argument("--out", type=Path, required=True)
    return parser


# -- commands ----------------------------------------------------------------------

def _cmd_gen(args):
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.synthetic.seed = args.seed
    if args.n_scenarios is not None:
        cfg.synthetic.n_scenarios = args.n_scenarios
    if args.topology is not None:
        cfg.synthetic.lane_topology = args.topology
    _revalidate(cfg)
    _echo(cfg, args)
    scenarios = generate_synthetic(cfg.synthetic)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_scenarios(args.out, scenarios)
    print(f"wrote {len(scenarios)} scenarios to {args.out}")
    return EXIT_OK


def _cmd_preprocess(args):
    cfg = load_run_config(args.config)
    _echo(cfg, args)
    accepted, rejected = [], []
    for scenario in load_scenarios(args.inp):
        try:
            accepted.append(build_instance(scenario, cfg.candidates,
                                           cfg.model.past_len, cfg.model.horizon,
                                           align_heading=cfg.align_heading))
        except ScenarioRejected as e:
            rejected.append((scenario.scenario_id, e.reason))
            if not args.quiet:
                print(f"rejected {scenario.scenario_id}: {e.reason}", file=sys.stderr)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_instances(args.out, accepted)
    print(f"accepted {len(accepted)} rejected {len(rejected)} "
          f"of {len(accepted) + len(rejected)}")
    return EXIT_OK


def _cmd_train(args):
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.max_epochs is not None:
        cfg.train.max_epochs = args.max_epochs
    _revalidate(cfg)
    _echo(cfg, args)
    instances = load_instances(args.data)
    if args.val is not None:
        train_set, val_set = instances, load_instances(args.val)
    else:
        train_set, val_set = split_train_val(instances, cfg.train.val_fraction,
                                             cfg.train.seed)
    model = LanePredictor(cfg.model, seed=cfg.train.seed)
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    report = train_loop(train_set, val_set, model, cfg.loss, cfg.train,
                        out_dir=args.out_dir, log=log)
    report.write_csv(args.out_dir / "report.csv")
    report.write_json(args.out_dir / "report.json")
    print(f"trained {len(report.epochs)} epochs; artifacts in {args.out_dir}")
    return EXIT_OK


def _parse_k_list(spec):
    try:
        ks = sorted({int(part) for part in spec.split(",") if part.strip()})
    except ValueError as e:
        raise ConfigError(f"invalid --k list {spec!r}") from e
    if not ks or ks[0] < 1:
        raise ConfigError(f"invalid --k list {spec!r}")
    return ks


def _cmd_eval(args):
    k_list = _parse_k_list(args.k)
    model = load_checkpoint(args.checkpoint)
    if max(k_list) > model.cfg.n_modes:
        raise ConfigError(f"requested k={max(k_list)} exceeds checkpoint "
                          f"K={model.cfg.n_modes}")
    instances = load_instances(args.data)
    metadata = {
        "checkpoint": f"{args.checkpoint.name}:{_file_digest(args.checkpoint)}",
        "dataset": f"{args.data.name}:{_file_digest(args.data)}",
        "config_hash": hashlib.sha256(
            json.dumps(model.cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:12],
    }
    report = evaluate_dataset(model, instances, k_list, metadata=metadata)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    report.write_json(args.out_dir / "metrics.json")
    report.write_csv(args.out_dir / "metrics.csv")
    for k in k_list:
        row = report.per_k[k]
        print(f"K={k}: ADE {row['ade']:.4f}  FDE {row['fde']:.4f}")
    if args.baseline:
        cv_preds = [constant_velocity_baseline(inst.past, model.cfg.horizon)[None]
                    for inst in instances]
        cv = evaluate_dataset(cv_preds, instances, [1],
                              metadata={**metadata, "predictor": "constant-velocity"})
        cv.write_json(args.out_dir / "baseline_metrics.json")
        cv.write_csv(args.out_dir / "baseline_metrics.csv")
        row = cv.per_k[1]
        print(f"baseline: ADE {row['ade']:.4f}  FDE {row['fde']:.4f}")
    return EXIT_OK


def _cmd_predict(args):
    model = load_checkpoint(args.checkpoint)
    instances = load_instances(args.data)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        for inst in instances:
            out = model.forward(inst)
            f.write(json.dumps({
                "scenario_id": inst.scenario_id,
                "trajectories": out.trajectories.tolist(),
                "lane_weights": out.lane_weights.tolist(),
            }, separators=(",", ":")) + "\n")
    print(f"wrote {len(instances)} predictions to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen": _cmd_gen,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
