"""Command-line entry point: ``archpredict <command> [flags]``.

Precedence for every option is: built-in default < ``--config`` JSON file <
explicit flag. Output directories default to ``$ARCHPREDICT_OUT`` (or
``runs/``) joined with the command name.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 training
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import ContractError, DimensionError
from .data import (
    FAMILIES,
    PRETRAIN_PLATFORMS,
    TARGET_PLATFORMS,
    Dataset,
    OracleConfig,
    generate_synthetic,
    read_dataset,
    split_leave_one_family_out,
    split_platform_zero_shot,
    split_random,
    write_dataset,
    write_platforms,
)
from .dgsa import DgsaConfig
from .embed import (
    NONE_PLATFORM,
    Encoder,
    EncoderSpec,
    PlatformRecord,
    Vocabulary,
    graph_templates,
    load_platforms,
    render_node_template,
    template_ids,
)
from .graph import SchemaError, TopologyError, derive_masks, parse_architecture
from .metrics import MetricsReport
from .model import FormatError, IntegrityError, Model, ModelConfig, load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainingError, evaluate, finetune, train

log = logging.getLogger("archpredict")

OUT_ENV = "ARCHPREDICT_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3
PLATFORM_SETS = {
    "pretrain": PRETRAIN_PLATFORMS,
    "target": TARGET_PLATFORMS,
    "all": PRETRAIN_PLATFORMS + TARGET_PLATFORMS,
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    task: str = "latency"
    seed: int = 0
    data: str | None = None
    platforms: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    split: str = "none"
    threads: int = 1
    dgsa: dict = field(default_factory=lambda: asdict(DgsaConfig()))
    encoder: dict = field(default_factory=lambda: asdict(EncoderSpec()))
    hyper: dict = field(default_factory=lambda: TrainConfig().to_dict())
    extra: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_config.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--task", choices=["latency", "accuracy"])
    g.add_argument("--d-model", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--gate-mode", help="dynamic | uniform | full")
    g.add_argument("--mask-mode", help="hadamard | additive")
    g.add_argument("--encoder", help="hash (alias pretrained) | random-init | trainable")
    g.add_argument("--train-encoder", action="store_true", default=None)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--no-cosine", dest="cosine", action="store_false", default=None)
    g.add_argument("--eval-data", help="separate evaluation JSONL (overrides the split's test side)")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset JSONL")
    p.add_argument("--platforms", help="platform JSON (defaults to platforms.json beside --data)")
    p.add_argument(
        "--split",
        help="none | leave-out:FAMILY | only:FAMILY | platform:PLATFORM_ID | random:N_TEST",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of defaults; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
    common.add_argument("--threads", type=int, help="evaluation threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="archpredict", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic dataset")
    p.add_argument("--samples", type=int)
    p.add_argument("--families", help="a count (first N families) or comma-separated names")
    p.add_argument("--platform-set", choices=sorted(PLATFORM_SETS))
    p.add_argument("--noise", type=float, help="log-normal noise sigma")
    p.add_argument("--task", choices=["latency", "accuracy"])

    p = sub.add_parser("train", parents=[common], help="train a model from scratch")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("finetune", parents=[common], help="continue training a checkpoint")
    p.add_argument("--checkpoint")
    _add_data_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("eval", parents=[common], help="report metrics of a checkpoint")
    p.add_argument("--checkpoint")
    _add_data_flags(p)
    p.add_argument("--side", choices=["train", "test"], help="which side of --split to score")

    p = sub.add_parser("predict", parents=[common], help="predict one architecture")
    p.add_argument("--checkpoint")
    p.add_argument("--arch", help="architecture JSON file")
    p.add_argument("--platform-id")
    p.add_argument("--platforms")

    p = sub.add_parser("dump", parents=[common], help="print masks, templates or embeddings")
    p.add_argument("what", choices=["masks", "templates", "embeddings"])
    p.add_argument("--arch", help="architecture JSON file")
    p.add_argument("--platform-id")
    p.add_argument("--platforms")
    p.add_argument("--checkpoint", help="take the encoder from this checkpoint")
    p.add_argument("--encoder")
    p.add_argument("--d-model", type=int)
    return parser


# required after merging the config file, so either source may supply them
REQUIRED = {
    "train": ["data"],
    "finetune": ["checkpoint", "data"],
    "eval": ["checkpoint", "data"],
    "predict": ["checkpoint", "arch"],
    "dump": ["arch"],
}

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "verbose": False,
    "samples": 2000,
    "families": "8",
    "platform_set": "pretrain",
    "noise": 0.05,
    "task": "latency",
    "split": "none",
    "side": "test",
    "d_model": 64,
    "heads": 4,
    "layers": 2,
    "gate_mode": "dynamic",
    "mask_mode": "hadamard",
    "encoder": "hash",
    "train_encoder": False,
    "cosine": True,
}


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    file_cfg: dict = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    for key, value in vars(args).items():
        if value is None:
            if key in file_cfg:
                setattr(args, key, file_cfg[key])
            elif key in DEFAULTS:
                setattr(args, key, DEFAULTS[key])
    missing = [k for k in REQUIRED.get(args.command, []) if getattr(args, k, None) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise UsageError(f"{args.command} needs {flags} (flag or config file)")
    return args


# helpers


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / args.command


def _platforms_for(args, data_path: str | None) -> dict[str, PlatformRecord]:
    path = args.platforms
    if path is None and data_path is not None:
        beside = Path(data_path).parent / "platforms.json"
        if beside.exists():
            path = str(beside)
    if path is None:
        return {p.platform_id: p for p in PRETRAIN_PLATFORMS + TARGET_PLATFORMS}
    return load_platforms(path)


def _load(args, path: str) -> Dataset:
    return read_dataset(path, _platforms_for(args, path))


def apply_split(ds: Dataset, spec: str, seed: int = 0) -> tuple[Dataset, Dataset | None]:
    """``(train, test)`` sides for a split spec; ``test`` is None for ``none``."""
    if spec in ("", "none", None):
        return ds, None
    kind, _, arg = spec.partition(":")
    if not arg:
        raise UsageError(f"split {spec!r} needs an argument")
    if kind == "leave-out":
        return split_leave_one_family_out(ds, arg)
    if kind == "only":
        test, train_ = split_leave_one_family_out(ds, arg)
        return train_, test
    if kind == "platform":
        return split_platform_zero_shot(ds, arg)
    if kind == "random":
        try:
            n = int(arg)
        except ValueError as exc:
            raise UsageError(f"random split needs an integer, got {arg!r}") from exc
        return split_random(ds, n, seed)
    raise UsageError(f"unknown split kind {kind!r}")


def _model_config(args) -> ModelConfig:
    dgsa = DgsaConfig(args.d_model, args.heads, args.layers, args.gate_mode, args.mask_mode)
    enc = EncoderSpec(args.encoder, args.d_model, seed=args.seed, trainable=bool(args.train_encoder))
    return ModelConfig(args.task, dgsa, enc)


def _hyper(args, **base) -> TrainConfig:
    d = TrainConfig(**base).to_dict()
    for key in ("epochs", "batch_size", "lr", "cosine"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    d["seed"] = args.seed
    return TrainConfig(**d)


def _build_vocab(cfg: ModelConfig, platforms, train_ds: Dataset) -> Vocabulary:
    vocab = Vocabulary.standard(platforms, open=cfg.encoder.kind == "hash")
    for s in train_ds:
        for t in graph_templates(s.graph, s.platform):
            for w in t.split():
                vocab.add(w)
    return vocab


def write_metrics_csv(r: MetricsReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "count", "mape_pct", "acc_at_10_pct", "kendall_tau"])
        rows = [("all", r)] + sorted(r.per_family.items())
        for scope, m in rows:
            w.writerow([scope, m.count, repr(m.mape_pct), repr(m.acc_at_10_pct),
                        "" if m.kendall_tau is None else repr(m.kendall_tau)])


def _load_arch(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc}") from exc
    return parse_architecture(text)


def _pick_platform(args) -> PlatformRecord:
    if not args.platform_id:
        return NONE_PLATFORM
    table = _platforms_for(args, None)
    if args.platform_id not in table:
        raise KeyError(f"unknown platform id {args.platform_id!r}")
    return table[args.platform_id]


# commands


def cmd_gen_synthetic(args) -> int:
    fam_spec = str(args.families)
    if fam_spec.isdigit():
        k = int(fam_spec)
        if not 1 <= k <= len(FAMILIES):
            raise UsageError(f"--families must lie in 1..{len(FAMILIES)}")
        families = list(FAMILIES)[:k]
    else:
        families = [f.strip() for f in fam_spec.split(",") if f.strip()]
    oracle = OracleConfig(noise_sigma=args.noise, seed=args.seed)
    ds = generate_synthetic(oracle, args.samples, families, PLATFORM_SETS[args.platform_set], args.task)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out / "dataset.jsonl")
    write_platforms(PLATFORM_SETS["all"], out / "platforms.json")
    (out / "oracle.json").write_text(json.dumps(oracle.to_dict(), indent=2, sort_keys=True) + "\n")
    RunConfig(
        "gen-synthetic", args.task, args.seed,
        data=str(out / "dataset.jsonl"), platforms=str(out / "platforms.json"), out=str(out),
        extra={"samples": args.samples, "families": families, "platform_set": args.platform_set,
               "noise": args.noise},
    ).write(out)
    print(f"wrote {len(ds)} samples ({len(families)} families) to {out}")
    return EXIT_OK


def _sides(args) -> tuple[Dataset, Dataset | None]:
    train_ds, test_ds = apply_split(_load(args, args.data), args.split, args.seed)
    if args.eval_data:
        test_ds = _load(args, args.eval_data)
    return train_ds, test_ds


def _train_like(args, model: Model, hyper: TrainConfig, command: str, sides) -> int:
    train_ds, test_ds = sides
    out = _out_dir(args)
    rc = RunConfig(
        command, model.config.task, args.seed, data=args.data, platforms=args.platforms,
        checkpoint=getattr(args, "checkpoint", None), out=str(out), split=args.split,
        threads=args.threads, dgsa=asdict(model.config.dgsa), encoder=asdict(model.config.encoder),
        hyper=hyper.to_dict(),
    )
    rc.write(out)
    if command == "train":
        res = train(model, train_ds, hyper, test_ds, out / "train_log.csv")
    else:
        res = finetune(model, train_ds, hyper, test_ds, out / "train_log.csv")
    save_checkpoint(res.model, out / "model.ckpt", extra={"run_config": asdict(rc)})
    res.model.vocab.save(out / "vocab.txt")
    if test_ds is not None and len(test_ds):
        r = evaluate(res.model, test_ds, threads=args.threads)
        write_metrics_csv(r, out / "metrics.csv")
        print(r.format())
    print(f"checkpoint written to {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _model_config(args)
    sides = _sides(args)
    platforms = list(_platforms_for(args, args.data).values())
    model = Model(cfg, _build_vocab(cfg, platforms, sides[0]), args.seed)
    return _train_like(args, model, _hyper(args), "train", sides)


def cmd_finetune(args) -> int:
    model = load_checkpoint(args.checkpoint)
    return _train_like(args, model, _hyper(args, lr=1e-4, epochs=10), "finetune", _sides(args))


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = _load(args, args.data)
    train_ds, test_ds = apply_split(ds, args.split, args.seed)
    target = train_ds if test_ds is None or args.side == "train" else test_ds
    r = evaluate(model, target, threads=args.threads)
    out = _out_dir(args)
    RunConfig(
        "eval", model.config.task, args.seed, data=args.data, platforms=args.platforms,
        checkpoint=args.checkpoint, out=str(out), split=args.split, threads=args.threads,
        dgsa=asdict(model.config.dgsa), encoder=asdict(model.config.encoder),
        extra={"side": args.side},
    ).write(out)
    write_metrics_csv(r, out / "metrics.csv")
    print(r.format())
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    g = _load_arch(args.arch)
    p = _pick_platform(args)
    value = model.predict(g, p)
    key = "latency_ms" if model.config.task == "latency" else "accuracy"
    print(json.dumps({"name": g.name, "platform_id": p.platform_id, key: value}))
    return EXIT_OK


def _print_grid(title: str, m: np.ndarray) -> None:
    print(f"{title}:")
    for row in m:
        print(" ".join(str(int(v)) for v in row))


def cmd_dump(args) -> int:
    g = _load_arch(args.arch)
    if args.what == "masks":
        masks = derive_masks(g)
        for name in ("grandfather", "father", "son"):
            _print_grid(name, getattr(masks, name))
        return EXIT_OK
    if args.what == "templates":
        for nd in g.nodes:
            print(render_node_template(nd))
        if args.platform_id:
            print(graph_templates(g, _pick_platform(args))[-1])
        return EXIT_OK
    p = _pick_platform(args)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        encoder, vocab = model.encoder, model.vocab
    else:
        spec = EncoderSpec(args.encoder, args.d_model or 64, seed=args.seed)
        vocab = Vocabulary.standard([p], open=spec.kind == "hash")
        encoder = Encoder(spec, vocab)
    ids, mask = template_ids(graph_templates(g, p), vocab, encoder.spec.max_seq_len)
    rows = encoder.encode_ids(ids, mask).data
    w = csv.writer(sys.stdout)
    for i, row in enumerate(rows):
        w.writerow([i] + [repr(float(v)) for v in row])
    return EXIT_OK


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "dump": cmd_dump,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"archpredict: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"archpredict: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"archpredict: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (SchemaError, TopologyError, FormatError, IntegrityError, ContractError,
            DimensionError, KeyError, ValueError, OSError) as exc:
        print(f"archpredict: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
