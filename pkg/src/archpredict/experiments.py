"""Synthetic experiment protocols shared by ``scripts/`` and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import (
    FAMILIES,
    PRETRAIN_PLATFORMS,
    TARGET_PLATFORMS,
    Dataset,
    OracleConfig,
    Sample,
    generate_synthetic,
    split_platform_zero_shot,
    split_random,
)
from .dgsa import DgsaConfig
from .embed import EncoderSpec, PlatformRecord, Vocabulary
from .metrics import MetricsReport
from .model import Model, ModelConfig
from .train import TrainConfig, evaluate, finetune, train

ALL_PLATFORMS = PRETRAIN_PLATFORMS + TARGET_PLATFORMS


def default_vocab(kind: str = "hash") -> Vocabulary:
    return Vocabulary.standard(ALL_PLATFORMS, open=kind == "hash")


def make_model(seed: int = 0, gate_mode: str = "dynamic", encoder: str = "hash", d_model: int = 64,
               n_heads: int = 4, n_layers: int = 2, train_encoder: bool = False) -> Model:
    cfg = ModelConfig(
        dgsa=DgsaConfig(d_model, n_heads, n_layers, gate_mode),
        encoder=EncoderSpec(encoder, d_model, seed=seed, trainable=train_encoder),
    )
    return Model(cfg, default_vocab(cfg.encoder.kind), seed)


# in-distribution end to end


@dataclass
class EndToEndConfig:
    n_train: int = 2000
    n_test: int = 500
    n_families: int = 8
    noise_sigma: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0


@dataclass
class EndToEndResult:
    model: Model
    report: MetricsReport
    train_seconds: float
    log: list[dict] = field(default_factory=list)


def end_to_end(cfg: EndToEndConfig = EndToEndConfig(), eval_every_epoch: bool = False) -> EndToEndResult:
    oracle = OracleConfig(noise_sigma=cfg.noise_sigma, seed=cfg.seed)
    ds = generate_synthetic(oracle, cfg.n_train + cfg.n_test, list(FAMILIES)[: cfg.n_families])
    train_ds, test_ds = split_random(ds, cfg.n_test, cfg.seed)
    model = make_model(cfg.seed)
    hyper = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
    t0 = time.perf_counter()
    res = train(model, train_ds, hyper, test_ds if eval_every_epoch else None)
    seconds = time.perf_counter() - t0
    return EndToEndResult(res.model, evaluate(res.model, test_ds), seconds, res.log)


# cross-platform zero shot


@dataclass
class ZeroShotConfig:
    held_out: str = "beta-fp32"
    per_platform: int = 300
    finetune_epochs: int = 10
    finetune_lr: float = 1e-4
    batch_size: int = 32
    n_families: int = 8
    noise_sigma: float = 0.05
    seed: int = 0


@dataclass
class ZeroShotResult:
    report: MetricsReport
    swapped: dict[str, float]

    @property
    def best_swapped_mape(self) -> float:
        return min(self.swapped.values())


def _with_platform(ds: Dataset, p: PlatformRecord) -> Dataset:
    return Dataset([Sample(s.graph, p, s.target, s.family) for s in ds.samples])


def target_platform_data(cfg: ZeroShotConfig) -> Dataset:
    """``per_platform`` samples on each target (platform, precision) pair."""
    fams = list(FAMILIES)[: cfg.n_families]
    samples = []
    for i, p in enumerate(TARGET_PLATFORMS):
        oracle = OracleConfig(noise_sigma=cfg.noise_sigma, seed=cfg.seed * 1000 + 101 + i)
        samples += generate_synthetic(oracle, cfg.per_platform, fams, [p]).samples
    return Dataset(samples)


def zero_shot(pretrained: Model, cfg: ZeroShotConfig = ZeroShotConfig()) -> ZeroShotResult:
    """Finetune on three target pairs, then score the fourth with and without its own template.

    The ablation keeps graphs and targets of the held-out pair but feeds the
    model each training pair's platform record instead.
    """
    ds = target_platform_data(cfg)
    train_ds, test_ds = split_platform_zero_shot(ds, cfg.held_out)
    hyper = TrainConfig(epochs=cfg.finetune_epochs, lr=cfg.finetune_lr,
                        batch_size=cfg.batch_size, seed=cfg.seed)
    model = finetune(pretrained, train_ds, hyper).model
    report = evaluate(model, test_ds)
    seen = {s.platform.platform_id: s.platform for s in train_ds.samples}
    swapped = {}
    for pid, p in sorted(seen.items()):
        swapped[pid] = evaluate(model, _with_platform(test_ds, p)).mape_pct
    return ZeroShotResult(report, swapped)


# ablations on a held-out family


VARIANTS = {
    "dgsa": {"gate_mode": "dynamic", "encoder": "hash"},
    "uniform_gate": {"gate_mode": "uniform", "encoder": "hash"},
    "random_encoder": {"gate_mode": "dynamic", "encoder": "random"},
}


@dataclass
class AblationConfig:
    held_out: str = "SqueezeNet-like"
    train_families: tuple[str, ...] = tuple(list(FAMILIES)[:8])
    per_family: int = 120
    n_test: int = 300
    epochs: int = 25
    batch_size: int = 32
    noise_sigma: float = 0.05
    platform: str = "syn-gpu-fp32"
    seeds: tuple[int, ...] = (0, 1, 2)
    variants: tuple[str, ...] = tuple(VARIANTS)

    def to_dict(self) -> dict:
        return asdict(self)


def ablation_data(cfg: AblationConfig, seed: int) -> tuple[Dataset, Dataset]:
    fams = [f for f in cfg.train_families if f != cfg.held_out]
    oracle = OracleConfig(noise_sigma=cfg.noise_sigma, seed=seed)
    plats = [p for p in ALL_PLATFORMS if p.platform_id == cfg.platform]
    if not plats:
        raise KeyError(f"unknown platform {cfg.platform!r}")
    train_ds = generate_synthetic(oracle, cfg.per_family * len(fams), fams, plats)
    test_ds = generate_synthetic(replace(oracle, seed=seed + 7919), cfg.n_test, [cfg.held_out], plats)
    return train_ds, test_ds


def ablation(cfg: AblationConfig = AblationConfig(), progress=None) -> dict[str, list[MetricsReport]]:
    """Per-variant held-out-family reports, one per seed."""
    out: dict[str, list[MetricsReport]] = {v: [] for v in cfg.variants}
    for seed in cfg.seeds:
        train_ds, test_ds = ablation_data(cfg, seed)
        for name in cfg.variants:
            model = make_model(seed, **VARIANTS[name])
            hyper = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=seed)
            trained = train(model, train_ds, hyper).model
            r = evaluate(trained, test_ds)
            out[name].append(r)
            if progress is not None:
                progress(name, seed, r)
    return out


def mean_acc(reports: list[MetricsReport]) -> float:
    return float(np.mean([r.acc_at_10_pct for r in reports]))
