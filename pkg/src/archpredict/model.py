"""Full predictor: embeddings, DGSA stack, readout, platform concat, head."""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Tensor
from .dgsa import DgsaConfig, init_layer_params, transformer_block
from .embed import (
    Encoder,
    EncoderSpec,
    PlatformRecord,
    Vocabulary,
    graph_templates,
    template_ids,
)
from .graph import ArchGraph, derive_masks, extend_masks

TASKS = ("latency", "accuracy")
CHECKPOINT_FORMAT = "archpredict-checkpoint"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Checkpoint has the wrong format version or an incompatible config."""


class IntegrityError(ValueError):
    """Checkpoint content does not match its digest or cannot be decoded."""


@dataclass(frozen=True)
class PredictionTarget:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "latency_ms":
            if not self.value > 0:
                raise ContractError(f"latency target must be positive, got {self.value}")
        elif self.kind == "accuracy":
            if not 0.0 <= self.value <= 1.0:
                raise ContractError(f"accuracy target must lie in [0, 1], got {self.value}")
        else:
            raise ContractError(f"unknown target kind {self.kind!r}")


@dataclass(frozen=True)
class ModelConfig:
    task: str = "latency"
    dgsa: DgsaConfig = field(default_factory=DgsaConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.dgsa.d_model != self.encoder.d_model:
            raise ValueError("encoder and DGSA d_model differ")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(d["task"], DgsaConfig(**d["dgsa"]), EncoderSpec(**d["encoder"]))


def readout(f_final: Tensor, n: int | None = None) -> Tensor:
    """Mean of the architecture rows (all rows but the last platform row)."""
    rows = f_final.shape[-2] - 1 if n is None else n
    if rows <= 0:
        raise ContractError("readout needs at least one architecture row")
    w = np.zeros((1, f_final.shape[-2]))
    w[0, :rows] = 1.0 / rows
    return (Tensor(w) @ f_final).reshape(*f_final.shape[:-2], f_final.shape[-1])


def loss(pred: Tensor, target: PredictionTarget) -> Tensor:
    """Squared error, in log space for latency."""
    if target.kind == "latency_ms":
        return ag.square(ag.log(pred) - math.log(target.value))
    return ag.square(pred - target.value)


@dataclass
class Prepared:
    """Per-sample arrays that do not change during training."""

    n: int
    masks: np.ndarray  # [3, n+1, n+1]
    x0: np.ndarray | None  # frozen embeddings [n+1, d]
    ids: np.ndarray | None  # token ids [n+1, L] for a trainable encoder
    tok_mask: np.ndarray | None


@dataclass
class Batch:
    x0: Tensor
    masks: np.ndarray
    valid: np.ndarray
    readout_w: np.ndarray
    plat_sel: np.ndarray

    @property
    def size(self) -> int:
        return self.valid.shape[0]


class Model:
    def __init__(
        self,
        config: ModelConfig,
        vocab: Vocabulary,
        seed: int = 0,
        params: dict[str, Tensor] | None = None,
    ):
        self.config = config
        self.vocab = vocab
        self.encoder = Encoder(config.encoder, vocab)
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}
        self.extra: dict = {}
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = params
        # trainable encoder params live in the same dict so checkpoints see them
        for k, v in self.encoder.params.items():
            if k in params:
                self.encoder.params[k] = params[k]
            else:
                params[k] = v

    def _init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        cfg = self.config.dgsa
        d = cfg.d_model
        params: dict[str, Tensor] = {}
        for i in range(cfg.n_layers):
            params.update(init_layer_params(cfg, rng, f"L{i}."))
        params["head.w1"] = Tensor(rng.normal(scale=1 / math.sqrt(2 * d), size=(2 * d, d)), True)
        params["head.b1"] = Tensor(np.zeros(d), True)
        params["head.w2"] = Tensor(rng.normal(scale=1 / math.sqrt(d), size=(d, 1)), True)
        params["head.b2"] = Tensor(np.zeros(1), True)
        return params

    def trainable_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    # preparation

    def _embed_templates(self, templates: list[str]) -> np.ndarray:
        missing = [t for t in dict.fromkeys(templates) if t not in self._cache]
        if missing:
            ids, mask = template_ids(missing, self.vocab, self.config.encoder.max_seq_len)
            rows = self.encoder.encode_ids(ids, mask).data
            for t, r in zip(missing, rows):
                self._cache[t] = r
        return np.stack([self._cache[t] for t in templates])

    def prepare(self, g: ArchGraph, p: PlatformRecord) -> Prepared:
        masks = extend_masks(derive_masks(g).stacked())
        templates = graph_templates(g, p)
        if self.encoder.trainable:
            ids, mask = template_ids(templates, self.vocab, self.config.encoder.max_seq_len)
            return Prepared(g.n, masks, None, ids, mask)
        return Prepared(g.n, masks, self._embed_templates(templates), None, None)

    def collate(self, items: Sequence[Prepared]) -> Batch:
        B = len(items)
        N = max(it.n for it in items) + 1
        d = self.config.dgsa.d_model
        masks = np.zeros((B, 3, N, N))
        valid = np.zeros((B, N), dtype=bool)
        rw = np.zeros((B, 1, N))
        sel = np.zeros((B, 1, N))
        for b, it in enumerate(items):
            m = it.n + 1
            masks[b, :, :m, :m] = it.masks
            valid[b, :m] = True
            rw[b, 0, : it.n] = 1.0 / it.n
            sel[b, 0, it.n] = 1.0
        if self.encoder.trainable:
            L = max(it.ids.shape[1] for it in items)
            ids = np.zeros((B, N, L), dtype=np.int64)
            tm = np.zeros((B, N, L), dtype=bool)
            tm[:, :, 0] = True
            for b, it in enumerate(items):
                m, l = it.ids.shape
                ids[b, :m, :l] = it.ids
                tm[b, :m, :] = False
                tm[b, :m, :l] = it.tok_mask
            x0 = self.encoder.encode_ids(ids, tm)
        else:
            x = np.zeros((B, N, d))
            for b, it in enumerate(items):
                x[b, : it.n + 1] = it.x0
            x0 = Tensor(x)
        return Batch(x0, masks, valid, rw, sel)

    # forward

    def forward_batch(self, batch: Batch) -> Tensor:
        """Raw head outputs ``[B]`` (log-latency for the latency task)."""
        p = self.params
        cfg = self.config.dgsa
        x = batch.x0
        for i in range(cfg.n_layers):
            x = transformer_block(x, batch.masks, p, cfg, batch.valid, f"L{i}.")
        rep = Tensor(batch.readout_w) @ x
        f_plat = Tensor(batch.plat_sel) @ batch.x0
        h = ag.concat([rep, f_plat], axis=-1)
        h = ag.gelu(h @ p["head.w1"] + p["head.b1"])
        out = h @ p["head.w2"] + p["head.b2"]
        return out.reshape(batch.size)

    def to_prediction(self, raw: np.ndarray) -> np.ndarray:
        return np.exp(raw) if self.config.task == "latency" else raw

    def predict_prepared(self, items: Sequence[Prepared], batch_size: int = 64) -> np.ndarray:
        out = []
        for i in range(0, len(items), batch_size):
            out.append(self.forward_batch(self.collate(items[i : i + batch_size])).data)
        return self.to_prediction(np.concatenate(out)) if out else np.zeros(0)

    def forward(self, g: ArchGraph, p: PlatformRecord) -> Tensor:
        """Scalar prediction for one sample (latency in ms or accuracy)."""
        raw = self.forward_batch(self.collate([self.prepare(g, p)])).reshape(())
        return ag.exp(raw) if self.config.task == "latency" else raw

    def predict(self, g: ArchGraph, p: PlatformRecord) -> float:
        return self.forward(g, p).item()


def model_forward(g: ArchGraph, p: PlatformRecord, model: Model) -> Tensor:
    return model.forward(g, p)


# checkpoints


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"], validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def _digest(body: dict) -> str:
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def save_checkpoint(model: Model, path: str | Path, extra: dict | None = None) -> None:
    """Atomic write of config, vocabulary and every parameter, bit-exact."""
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "vocab": model.vocab.words,
        "vocab_open": model.vocab.open,
        "params": {k: _encode_array(v.data) for k, v in sorted(model.params.items())},
        "trainable": sorted(k for k, v in model.params.items() if v.requires_grad),
        "extra": extra or {},
    }
    doc = {"sha256": _digest(body), **body}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path, config: ModelConfig | None = None) -> Model:
    """Rebuild a model; ``config``, when given, must match the stored one."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"cannot decode checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {doc.get('version')} != {CHECKPOINT_VERSION}")
    digest = doc.pop("sha256", None)
    if digest != _digest(doc):
        raise IntegrityError(f"checkpoint {path} failed its integrity check")
    stored = ModelConfig.from_dict(doc["config"])
    if config is not None and config != stored:
        raise FormatError(f"checkpoint config {stored} does not match requested {config}")
    vocab = Vocabulary(doc["vocab"][2:], open=doc["vocab_open"])
    trainable = set(doc["trainable"])
    try:
        params = {
            k: Tensor(_decode_array(v), requires_grad=k in trainable)
            for k, v in doc["params"].items()
        }
    except (ValueError, KeyError) as exc:
        raise IntegrityError(f"bad parameter payload in {path}: {exc}") from exc
    model = Model(stored, vocab, doc["seed"], params=params)
    fresh = Model(stored, Vocabulary(doc["vocab"][2:], open=doc["vocab_open"]), 0)
    for k, v in fresh.params.items():
        if k not in params or params[k].shape != v.shape:
            raise FormatError(f"parameter {k} missing or mis-shaped in {path}")
    model.extra = doc.get("extra", {})
    return model
