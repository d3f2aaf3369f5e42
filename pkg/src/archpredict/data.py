"""Synthetic datasets, dataset files, and split protocols.

The synthetic latency oracle is additive over nodes and multiplicative in
the platform: ``latency = factor(platform) * sum(cost(node)) * noise`` with
``factor = reference_tflops / throughput * precision_multiplier[precision]``
and log-normal noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .autograd import ContractError
from .embed import NONE_PLATFORM, PlatformRecord
from .graph import ArchGraph, SchemaError, build_graph, make_node, parse_architecture
from .model import PredictionTarget


@dataclass(frozen=True)
class OracleConfig:
    base_cost: dict[str, float] = field(
        default_factory=lambda: {
            "Conv": 2.0,
            "DWConv": 0.5,
            "FC": 1.0,
            "BN": 0.3,
            "ReLU": 0.1,
            "Sigmoid": 0.1,
            "Add": 0.15,
            "Concat": 0.2,
            "Pool": 0.3,
            "GlobalPool": 0.2,
        }
    )
    # per-op reference value and exponent for each attribute; cost scales by
    # prod((attr / ref) ** exp)
    attr_scaling: dict[str, list[list[float]]] = field(
        default_factory=lambda: {
            "Conv": [[3, 2.0]],
            "DWConv": [[3, 2.0]],
            "Pool": [[3, 2.0]],
            "FC": [[512, 1.0], [512, 1.0]],
        }
    )
    reference_tflops: float = 10.0
    precision_multiplier: dict[str, float] = field(
        default_factory=lambda: {"FP32": 1.0, "FP16": 0.6, "INT8": 0.35}
    )
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if any(v <= 0 for v in self.base_cost.values()):
            raise ValueError("base costs must be positive")
        if any(v <= 0 for v in self.precision_multiplier.values()):
            raise ValueError("precision multipliers must be positive")
        if self.reference_tflops <= 0 or self.noise_sigma < 0:
            raise ValueError("reference_tflops must be positive and noise_sigma >= 0")

    def node_cost(self, op: str, attrs: Sequence[int]) -> float:
        cost = self.base_cost[op]
        for a, (ref, e) in zip(attrs, self.attr_scaling.get(op, [])):
            cost *= (a / ref) ** e
        return cost

    def platform_factor(self, p: PlatformRecord) -> float:
        return self.reference_tflops / p.throughput_tflops * self.precision_multiplier[p.precision]

    def latency(self, g: ArchGraph, p: PlatformRecord) -> float:
        """Noiseless latency in ms."""
        return self.platform_factor(p) * sum(self.node_cost(nd.op, nd.attrs) for nd in g.nodes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OracleConfig":
        return cls(**d)


# platforms used for pretraining, and the two target devices held apart for
# the cross-platform protocol (alpha and beta, each at FP32 and INT8)
PRETRAIN_PLATFORMS = [
    PlatformRecord("syn-cpu-fp32", "Syn", "CPU", "FP32", 1.2, "GenC", 65),
    PlatformRecord("syn-edge-fp32", "Syn", "GPU", "FP32", 2.5, "GenF", 15),
    PlatformRecord("syn-edge-int8", "Syn", "GPU", "INT8", 20, "GenF", 15),
    PlatformRecord("syn-gpu-fp32", "Syn", "GPU", "FP32", 14, "GenD", 250),
    PlatformRecord("syn-gpu-fp16", "Syn", "GPU", "FP16", 28, "GenD", 250),
    PlatformRecord("syn-npu-int8", "Syn", "NPU", "INT8", 40, "GenE", 10),
    PlatformRecord("syn-dc-fp32", "Syn", "GPU", "FP32", 20, "GenG", 300),
    PlatformRecord("syn-dc-fp16", "Syn", "GPU", "FP16", 60, "GenG", 300),
    PlatformRecord("syn-dc-int8", "Syn", "GPU", "INT8", 160, "GenG", 300),
]
TARGET_PLATFORMS = [
    PlatformRecord("alpha-fp32", "Syn", "GPU", "FP32", 5.5, "GenA", 75),
    PlatformRecord("alpha-int8", "Syn", "GPU", "INT8", 22, "GenA", 75),
    PlatformRecord("beta-fp32", "Syn", "GPU", "FP32", 8.1, "GenB", 70),
    PlatformRecord("beta-int8", "Syn", "GPU", "INT8", 130, "GenB", 70),
]


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.ops: list[tuple[str, tuple[int, ...]]] = []
        self.edges: list[tuple[int, int]] = []

    def add(self, op: str, attrs: Iterable[int] = (), inputs: Iterable[int] = ()) -> int:
        i = len(self.ops)
        self.ops.append((op, tuple(int(a) for a in attrs)))
        for s in inputs:
            self.edges.append((s, i))
        return i

    def __len__(self) -> int:
        return len(self.ops)

    def choice(self, options):
        return options[int(self.rng.integers(len(options)))]


def _vgg(b: _Builder, budget: int) -> None:
    x = b.add("Conv", [3])
    while len(b) + 5 <= budget:
        x = b.add("ReLU", [], [x])
        x = b.add("Conv", [3], [x])
        if b.rng.random() < 0.4:
            x = b.add("Pool", [2], [x])
    x = b.add("GlobalPool", [], [x])
    b.add("FC", [b.choice([256, 512]), 10], [x])


def _resnet(b: _Builder, budget: int) -> None:
    x = b.add("Conv", [b.choice([3, 7])])
    while len(b) + 7 <= budget:
        y = b.add("Conv", [3], [x])
        y = b.add("BN", [], [y])
        y = b.add("ReLU", [], [y])
        y = b.add("Conv", [3], [y])
        x = b.add("Add", [], [x, y])
    x = b.add("GlobalPool", [], [x])
    b.add("FC", [512, b.choice([10, 100])], [x])


def _mobilenet(b: _Builder, budget: int) -> None:
    x = b.add("Conv", [3])
    while len(b) + 7 <= budget:
        y = b.add("Conv", [1], [x])
        y = b.add("DWConv", [3], [y])
        y = b.add("ReLU", [], [y])
        y = b.add("Conv", [1], [y])
        x = b.add("Add", [], [x, y]) if b.rng.random() < 0.6 else y
    x = b.add("GlobalPool", [], [x])
    b.add("FC", [256, 10], [x])


def _inception(b: _Builder, budget: int) -> None:
    x = b.add("Conv", [3])
    while len(b) + 7 <= budget:
        outs = [b.add("Conv", [1], [x]), b.add("Conv", [3], [x])]
        if b.rng.random() < 0.5:
            outs.append(b.add("Conv", [5], [x]))
        outs.append(b.add("Pool", [3], [x]))
        x = b.add("Concat", [], outs)
    x = b.add("GlobalPool", [], [x])
    b.add("FC", [512, 10], [x])


def _squeezenet(b: _Builder, budget: int) -> None:
    x = b.add("Conv", [3])
    while len(b) + 7 <= budget:
        s = b.add("Conv", [1], [x])
        s = b.add("ReLU", [], [s])
        x = b.add("Concat", [], [b.add("Conv", [1], [s]), b.add("Conv", [3], [s])])
    x = b.add("GlobalPool", [], [x])
    b.add("FC", [256, 10], [x])


def _alexnet(b: _Builder, budget: int) -> None:
    x = b.add("Conv", [11])
    x = b.add("Pool", [3], [x])
    while len(b) + 4 <= budget:
        x = b.add("Conv", [b.choice([3, 5])], [x])
        x = b.add("ReLU", [], [x])
    x = b.add("FC", [1024, 512], [x])
    b.add("FC", [512, 10], [x])


def _cell(b: _Builder, budget: int) -> None:
    n = int(b.rng.integers(4, max(5, min(budget, 9)) + 1))
    pool = [("Conv", [1]), ("Conv", [3]), ("Pool", [3]), ("Add", [])]
    b.add("Conv", [3])
    for i in range(1, n - 1):
        op, attrs = pool[int(b.rng.integers(len(pool)))]
        k = 1 if op != "Add" or i < 2 else 2
        srcs = sorted(b.rng.choice(i, size=min(k, i), replace=False).tolist())
        b.add(op, attrs, srcs)
    sinks = [i for i in range(len(b)) if all(s != i for s, _ in b.edges)]
    b.add("Concat", [], sinks)


def _efficientnet(b: _Builder, budget: int) -> None:
    x = b.add("Conv", [3])
    while len(b) + 7 <= budget:
        y = b.add("DWConv", [b.choice([3, 5])], [x])
        g = b.add("GlobalPool", [], [y])
        g = b.add("Sigmoid", [], [g])
        y = b.add("Conv", [1], [y, g])
        x = b.add("Add", [], [x, y])
    x = b.add("GlobalPool", [], [x])
    b.add("FC", [256, 10], [x])


def _densenet(b: _Builder, budget: int) -> None:
    feats = [b.add("Conv", [3])]
    while len(b) + 5 <= budget:
        x = b.add("Concat", [], feats) if len(feats) > 1 else feats[0]
        y = b.add("BN", [], [x])
        y = b.add("Conv", [3], [y])
        feats.append(y)
    x = b.add("Concat", [], feats)
    b.add("FC", [512, 10], [x])


def _mlp(b: _Builder, budget: int) -> None:
    width = b.choice([128, 256, 512])
    x = b.add("FC", [784, width])
    while len(b) + 4 <= budget:
        x = b.add("ReLU", [], [x])
        x = b.add("FC", [width, width], [x])
    x = b.add("ReLU", [], [x])
    b.add("FC", [width, 10], [x])


FAMILIES: dict[str, Callable[[_Builder, int], None]] = {
    "VGG-like": _vgg,
    "ResNet-like": _resnet,
    "MobileNet-like": _mobilenet,
    "Inception-like": _inception,
    "SqueezeNet-like": _squeezenet,
    "NASCell-like": _cell,
    "EfficientNet-like": _efficientnet,
    "DenseNet-like": _densenet,
    "AlexNet-like": _alexnet,
    "MLP-like": _mlp,
}
MIN_NODES, MAX_NODES = 4, 20


def random_architecture(family: str, rng: np.random.Generator, name: str = "") -> ArchGraph:
    builder = _Builder(rng)
    budget = int(rng.integers(MIN_NODES + 4, MAX_NODES + 1))
    FAMILIES[family](builder, budget)
    nodes = [make_node(i, op, attrs) for i, (op, attrs) in enumerate(builder.ops)]
    g = build_graph(nodes, builder.edges, name)
    if not MIN_NODES <= g.n <= MAX_NODES:
        raise AssertionError(f"{family} generator produced {g.n} nodes")
    return g


@dataclass(frozen=True)
class Sample:
    graph: ArchGraph
    platform: PlatformRecord
    target: PredictionTarget
    family: str = ""

    def to_dict(self) -> dict:
        d = self.graph.to_dict()
        key = "latency_ms" if self.target.kind == "latency_ms" else "accuracy"
        d["targets"] = {key: self.target.value}
        d["platform_id"] = self.platform.platform_id
        d["family"] = self.family
        return d


@dataclass
class Dataset:
    samples: list[Sample]
    platforms: dict[str, PlatformRecord] = field(default_factory=dict)

    def __post_init__(self):
        for s in self.samples:
            self.platforms.setdefault(s.platform.platform_id, s.platform)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def families(self) -> list[str]:
        return sorted({s.family for s in self.samples})

    def subset(self, keep: Callable[[Sample], bool]) -> "Dataset":
        return Dataset([s for s in self.samples if keep(s)], dict(self.platforms))

    def targets(self) -> np.ndarray:
        return np.array([s.target.value for s in self.samples])


def generate_synthetic(
    cfg: OracleConfig,
    n_samples: int,
    families: Sequence[str],
    platforms: Sequence[PlatformRecord] = PRETRAIN_PLATFORMS,
    task: str = "latency",
) -> Dataset:
    """Seeded synthetic dataset; families are assigned round-robin."""
    if n_samples <= 0:
        raise ContractError("n_samples must be positive")
    if not families:
        raise ContractError("family spec is empty")
    if not platforms:
        raise ContractError("platform list is empty")
    unknown = [f for f in families if f not in FAMILIES]
    if unknown:
        raise KeyError(f"unknown families {unknown}")
    rng = np.random.default_rng(cfg.seed)
    samples = []
    for i in range(n_samples):
        fam = families[i % len(families)]
        g = random_architecture(fam, rng, f"{fam}-{i}")
        noise = math.exp(cfg.noise_sigma * rng.standard_normal())
        if task == "latency":
            p = platforms[int(rng.integers(len(platforms)))]
            target = PredictionTarget("latency_ms", cfg.latency(g, p) * noise)
        elif task == "accuracy":
            p = NONE_PLATFORM
            target = PredictionTarget("accuracy", _synthetic_accuracy(g, noise))
        else:
            raise ValueError(f"unknown task {task!r}")
        samples.append(Sample(g, p, target, fam))
    return Dataset(samples)


_ACC_WEIGHT = {"Conv": 0.6, "DWConv": 0.4, "FC": 0.2, "Add": 0.5, "Concat": 0.4, "BN": 0.3, "Pool": -0.3}


def _synthetic_accuracy(g: ArchGraph, noise: float) -> float:
    score = sum(_ACC_WEIGHT.get(nd.op, 0.0) for nd in g.nodes) / 4.0
    acc = (0.5 + 0.45 * math.tanh(score - 1.0)) * noise
    return min(max(acc, 0.01), 0.99)


# files


def write_platforms(platforms: Iterable[PlatformRecord], path: str | Path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in platforms], indent=2) + "\n")


def write_dataset(ds: Dataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        for s in ds.samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def read_dataset(path: str | Path, platforms: dict[str, PlatformRecord]) -> Dataset:
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                g = parse_architecture(doc)
                pid = doc.get("platform_id")
                if pid is None:
                    p = NONE_PLATFORM
                elif pid in platforms:
                    p = platforms[pid]
                else:
                    raise SchemaError(f"unknown platform_id {pid!r}")
                targets = doc.get("targets", {})
                if "latency_ms" in targets:
                    t = PredictionTarget("latency_ms", float(targets["latency_ms"]))
                elif "accuracy" in targets:
                    t = PredictionTarget("accuracy", float(targets["accuracy"]))
                else:
                    raise SchemaError("sample has no target")
            except (SchemaError, ContractError, json.JSONDecodeError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            samples.append(Sample(g, p, t, str(doc.get("family", ""))))
    if not samples:
        raise SchemaError(f"{path} contains no samples")
    return Dataset(samples, dict(platforms))


# splits


def split_leave_one_family_out(ds: Dataset, family: str) -> tuple[Dataset, Dataset]:
    if family not in ds.families:
        raise KeyError(f"family {family!r} not in dataset")
    return ds.subset(lambda s: s.family != family), ds.subset(lambda s: s.family == family)


def split_platform_zero_shot(ds: Dataset, platform_id: str) -> tuple[Dataset, Dataset]:
    """Hold out one (platform, precision) pair, identified by its platform id."""
    if not any(s.platform.platform_id == platform_id for s in ds.samples):
        raise KeyError(f"platform {platform_id!r} not in dataset")
    return (
        ds.subset(lambda s: s.platform.platform_id != platform_id),
        ds.subset(lambda s: s.platform.platform_id == platform_id),
    )


def split_random(ds: Dataset, n_test: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < n_test < len(ds):
        raise ContractError(f"n_test must lie in (0, {len(ds)})")
    perm = np.random.default_rng(seed).permutation(len(ds))
    test_idx = set(perm[:n_test].tolist())
    train = [s for i, s in enumerate(ds.samples) if i not in test_idx]
    test = [s for i, s in enumerate(ds.samples) if i in test_idx]
    return Dataset(train, dict(ds.platforms)), Dataset(test, dict(ds.platforms))
