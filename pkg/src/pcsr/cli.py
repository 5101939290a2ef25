"""Command-line entry points: ``train``, ``sr``, ``bench`` and ``synth``.

Exit codes: 0 success, 2 bad arguments/config/missing files, 3 stage order.
"""
import argparse
import logging
import os
import sys
from pathlib import Path

from . import evalbench
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .data import build_dataset, load_image, save_image, save_label_map, write_synthetic_corpus
from .inference import InferencePolicy, super_resolve
from .models import StateError, build_model
from .training import StageOrderError, train_stage, write_history_csv

logger = logging.getLogger("pcsr")

EXIT_USAGE = 2
EXIT_STAGE = 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def cmd_train(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(str(exc)) from exc
    seed = cfg.seed(args.seed)
    stage = args.stage
    m = cfg.model
    if stage == 0:
        model = build_model(scale=m["scale"], feature_dim=m["feature_dim"],
                            backbone_channels=m["backbone_channels"], kernel=m["kernel"],
                            upsampler_hidden=m["upsampler_hidden"],
                            classifier_hidden=m["classifier_hidden"], seed=seed)
    else:
        if args.resume is None:
            raise CliError(f"stage {stage} needs --resume with a stage-{stage - 1} checkpoint",
                           EXIT_STAGE)
        try:
            model = load_checkpoint(args.resume)
        except CheckpointError as exc:
            raise CliError(str(exc)) from exc
        if model.trained_stage != stage - 1:
            raise CliError(f"checkpoint is at stage {model.trained_stage}, "
                           f"stage {stage} needs stage {stage - 1}", EXIT_STAGE)
    try:
        train_cfg = cfg.train_config(stage, seed, args.iterations)
        dataset = build_dataset(cfg.path("train_dir"), model.scale, "train",
                                cache_dir=cfg.path("cache_dir"))
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    out_dir = Path(args.out_dir) if args.out_dir else cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("training stage %d for %d iterations on %d images",
                stage, train_cfg.iterations, len(dataset))
    try:
        result = train_stage(model, train_cfg, dataset)
    except StageOrderError as exc:
        raise CliError(str(exc), EXIT_STAGE) from exc
    ckpt = out_dir / f"stage{stage}.json"
    save_checkpoint(result.model, ckpt)
    write_history_csv(result.history, out_dir / f"stage{stage}_loss.csv")
    last = result.history[-1]
    print(f"stage {stage}: final total loss {last['total']:.6f} -> {ckpt}")
    return 0


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(str(exc)) from exc


def cmd_sr(args):
    model = _load_ckpt(args.ckpt)
    try:
        lr = load_image(args.input)
        policy = InferencePolicy.parse(args.policy, refine=not args.no_refine)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    try:
        result = super_resolve(model, lr, args.scale, policy)
    except (StateError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    save_image(args.output, result.sr)
    if args.dump_assignment:
        save_label_map(args.dump_assignment, result.assignment.labels, model.num_classes)
    if args.flops_json:
        Path(args.flops_json).write_text(result.flops.to_json(indent=2) + "\n")
    hist = result.assignment.histogram
    print(f"{policy.describe()}: {result.sr.shape[1]}x{result.sr.shape[0]} output, "
          f"{result.flops.total} FLOPs, class fractions "
          + ", ".join(f"{c / hist.sum():.3f}" for c in hist))
    return 0


def _summary(record):
    fr = " ".join(f"{f:.3f}" for f in record.fractions)
    return f"{record.policy:>12s}  psnr {record.psnr_db:8.4f} dB  flops {record.total_flops:>14d}  fractions {fr}"


def cmd_bench(args):
    model = _load_ckpt(args.ckpt)
    if not args.adm and not args.k:
        raise CliError("bench needs --k v1,v2,... or --adm")
    try:
        dataset = build_dataset(args.data, model.scale, "test")
        k_values = [float(v) for v in args.k.split(",")] if args.k else []
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    refine = not args.no_refine
    try:
        records = evalbench.sweep_k(model, dataset, sorted(k_values), refine) if k_values else []
        if args.adm:
            records.append(evalbench.evaluate(model, dataset, InferencePolicy.adm(refine)))
        records += evalbench.baseline_records(model, dataset, seed=args.seed or 0, refine=refine)
    except (StateError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    evalbench.write_records_csv(records, args.out, model.num_classes)
    print(f"{'bilinear':>12s}  psnr {evalbench.bilinear_psnr(dataset):8.4f} dB")
    for r in records:
        print(_summary(r))
    return 0


def cmd_synth(args):
    paths = write_synthetic_corpus(args.out_dir, args.count, args.size, args.seed, args.prefix)
    print(f"wrote {len(paths)} images to {args.out_dir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="pcsr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--resume", help="checkpoint of the previous stage")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int, help="override train.iterations")
    p.add_argument("--out-dir", help="override output_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--scale", type=int)
    p.add_argument("--policy", default="adm", help="fixed:J | k:V | adm")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--dump-assignment")
    p.add_argument("--flops-json")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("bench", help="PSNR/FLOPs sweep over a folder of HR images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", help="comma-separated k values")
    p.add_argument("--adm", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a procedural PNG corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="img")
    p.set_defaults(func=cmd_synth)
    return parser


def _resolve_seed(args):
    if getattr(args, "seed", None) is None and args.command != "train":
        env = os.environ.get("PCSR_SEED")
        args.seed = int(env) if env is not None else None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    _resolve_seed(args)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
