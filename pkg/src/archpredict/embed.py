"""Language templates for nodes and platforms, tokenization, and encoders.

Three encoders share one interface:

``hash``
    Frozen stand-in for a pretrained language model. Word tokens map to
    vectors seeded by a hash of the word; numeric tokens additionally carry a
    smooth magnitude code, so nearby numbers land near each other. The
    vocabulary is open: unseen words still get their own vector.
``random``
    Frozen random table over a closed vocabulary; no numeric structure.
``trainable``
    Learned token table followed by one self-attention layer; frozen unless
    ``EncoderSpec.trainable`` is set.

All encoders mean-pool over the tokens of a template.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Tensor
from .graph import ArchGraph, NodeRecord, OP_REGISTRY, SchemaError

PAD, UNK = "<pad>", "<unk>"
PRECISIONS = ("FP32", "FP16", "INT8")
ENCODER_KINDS = ("hash", "random", "trainable")
# long names accepted on the command line and in config files
ENCODER_ALIASES = {
    "hash_deterministic": "hash",
    "pretrained": "hash",
    "randomly_initialized": "random",
    "random-init": "random",
    "trainable_small": "trainable",
}


def format_number(v: float) -> str:
    """Bare numeric token: integral values lose their decimal point."""
    v = float(v)
    if v.is_integer():
        return str(int(v))
    return repr(v)


@dataclass(frozen=True)
class PlatformRecord:
    platform_id: str
    vendor: str
    device_class: str
    precision: str
    throughput_tflops: float
    microarch: str
    tdp_watts: float

    @classmethod
    def from_dict(cls, d: dict) -> "PlatformRecord":
        missing = [k for k in cls.__dataclass_fields__ if k not in d]
        if missing:
            raise SchemaError(f"platform record missing {missing}")
        if d["precision"] not in PRECISIONS:
            raise SchemaError(f"unknown precision {d['precision']!r}")
        rec = cls(
            str(d["platform_id"]),
            str(d["vendor"]),
            str(d["device_class"]),
            str(d["precision"]),
            float(d["throughput_tflops"]),
            str(d["microarch"]),
            float(d["tdp_watts"]),
        )
        if rec.throughput_tflops <= 0:
            raise SchemaError("throughput_tflops must be positive")
        return rec

    def to_dict(self) -> dict:
        return asdict(self)


# Used for the accuracy task, where benchmarks define no hardware.
NONE_PLATFORM = PlatformRecord("none", "None", "None", "FP32", 1.0, "None", 0.0)


def load_platforms(path: str | Path) -> dict[str, PlatformRecord]:
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        raw = raw.get("platforms", [raw])
    recs = [PlatformRecord.from_dict(r) for r in raw]
    return {r.platform_id: r for r in recs}


def render_node_template(node: NodeRecord) -> str:
    """``<category> <op> <attr_1> ... <attr_k>``, e.g. ``ParamL Conv 3``."""
    node.validate()
    return " ".join([node.category, node.op, *(str(int(a)) for a in node.attrs)])


def render_platform_template(p: PlatformRecord) -> str:
    """``<vendor> <class> <precision> <throughput> <microarch> <tdp>W``."""
    fields = [p.vendor, p.device_class, p.precision, p.microarch]
    if any(not f or not f.strip() for f in fields):
        raise SchemaError(f"platform {p.platform_id!r} has an empty text field")
    return " ".join(
        [
            p.vendor,
            p.device_class,
            p.precision,
            format_number(p.throughput_tflops),
            p.microarch,
            format_number(p.tdp_watts) + "W",
        ]
    )


class Vocabulary:
    """Word <-> id map with reserved PAD (0) and UNK (1).

    An open vocabulary appends unseen words instead of mapping them to UNK.
    """

    def __init__(self, words: Iterable[str] = (), open: bool = False):
        self.words: list[str] = [PAD, UNK]
        self.index: dict[str, int] = {PAD: 0, UNK: 1}
        self.open = open
        for w in words:
            self.add(w)

    def __len__(self) -> int:
        return len(self.words)

    def add(self, word: str) -> int:
        if word not in self.index:
            self.index[word] = len(self.words)
            self.words.append(word)
        return self.index[word]

    def lookup(self, word: str) -> int:
        if word in self.index:
            return self.index[word]
        return self.add(word) if self.open else self.index[UNK]

    def word(self, i: int) -> str:
        return self.words[i]

    @classmethod
    def from_templates(cls, templates: Iterable[str], open: bool = False) -> "Vocabulary":
        words: dict[str, None] = {}
        for t in templates:
            words.update(dict.fromkeys(t.split()))
        return cls(sorted(words), open=open)

    @classmethod
    def standard(cls, platforms: Iterable[PlatformRecord] = (), open: bool = False) -> "Vocabulary":
        """Categories, op names, common integer attributes, platform words."""
        words = {"ParamL", "ParamN", *OP_REGISTRY}
        words.update(str(i) for i in range(1, 17))
        words.update(str(2**k) for k in range(5, 13))
        words.update(["10", "100", "784", "1000"])
        for p in platforms:
            words.update(render_platform_template(p).split())
        return cls(sorted(words), open=open)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n")

    @classmethod
    def load(cls, path: str | Path, open: bool = False) -> "Vocabulary":
        lines = Path(path).read_text().splitlines()
        if lines[:2] != [PAD, UNK]:
            raise SchemaError("vocabulary file must start with <pad>, <unk>")
        return cls(lines[2:], open=open)


def tokenize(text: str, vocab: Vocabulary, max_seq_len: int = 16) -> list[int]:
    """Whitespace split; numbers stay whole words; unknown words become UNK."""
    return [vocab.lookup(w) for w in text.split()][:max_seq_len]


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "hash"
    d_model: int = 64
    max_seq_len: int = 16
    pooling: str = "mean"
    seed: int = 0
    trainable: bool = False

    def __post_init__(self):
        kind = ENCODER_ALIASES.get(self.kind, self.kind)
        if kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.pooling != "mean":
            raise ValueError("only mean pooling is supported")
        if self.trainable and kind != "trainable":
            raise ValueError(f"encoder kind {kind!r} cannot be trained")


def _word_seed(word: str) -> int:
    return int.from_bytes(hashlib.blake2b(word.encode(), digest_size=8).digest(), "little")


def _as_number(word: str) -> tuple[float, str] | None:
    """``(value, unit)`` for words like ``8.1`` or ``70W``; unit is ``""`` or ``"W"``."""
    unit = "W" if word.endswith("W") and word[:-1] else ""
    try:
        v = float(word[: len(word) - len(unit)])
    except ValueError:
        return None
    return (v, unit) if math.isfinite(v) and v >= 0 else None


class _MagnitudeCode:
    """Fixed smooth code of log-magnitude, projected to d dims."""

    def __init__(self, d: int, unit: str = ""):
        k = d // 2
        self.freqs = np.geomspace(0.2, 3.0, k // 2 + k % 2)
        self.centers = np.linspace(-1.0, 8.0, d - 2 * len(self.freqs))
        # each unit gets its own projection so 70W and 70 do not alias
        proj_rng = np.random.default_rng(_word_seed(f"<magnitude-projection{unit}>") % 2**63)
        q, _ = np.linalg.qr(proj_rng.normal(size=(d, d)))
        self.proj = q

    def __call__(self, value: float) -> np.ndarray:
        x = math.log1p(value)
        feats = np.concatenate(
            [
                np.sin(self.freqs * x),
                np.cos(self.freqs * x),
                np.tanh(x - self.centers),
            ]
        )
        return self.proj @ feats


class Encoder:
    """Maps token id sequences to mean-pooled embedding vectors."""

    def __init__(self, spec: EncoderSpec, vocab: Vocabulary):
        self.spec = spec
        self.vocab = vocab
        self.params: dict[str, Tensor] = {}
        d = spec.d_model
        if spec.kind == "hash":
            self._code = _MagnitudeCode(d)
            self._unit_codes = {"": self._code, "W": _MagnitudeCode(d, "W")}
            self._cache: dict[str, np.ndarray] = {}
            self._hash_table: np.ndarray | None = None
        else:
            rng = np.random.default_rng(spec.seed)
            table = rng.normal(size=(len(vocab), d))
            table[0] = 0.0
            if spec.kind == "random":
                self._table = table
            else:
                s = 1.0 / math.sqrt(d)
                self.params = {
                    "enc.table": Tensor(table),
                    "enc.wq": Tensor(rng.normal(scale=s, size=(d, d))),
                    "enc.wk": Tensor(rng.normal(scale=s, size=(d, d))),
                    "enc.wv": Tensor(rng.normal(scale=s, size=(d, d))),
                }
                for p in self.params.values():
                    p.requires_grad = spec.trainable

    @property
    def trainable(self) -> bool:
        return self.spec.trainable

    def word_vector(self, word: str) -> np.ndarray:
        """Hash-encoder embedding of a single word."""
        vec = self._cache.get(word)
        if vec is None:
            if word == PAD:
                vec = np.zeros(self.spec.d_model)
            else:
                rng = np.random.default_rng(_word_seed(word))
                vec = rng.normal(size=self.spec.d_model)
                num = _as_number(word)
                if num is not None:
                    value, unit = num
                    vec = 0.3 * vec + 2.0 * self._unit_codes[unit](value)
            self._cache[word] = vec
        return vec

    def table(self) -> np.ndarray:
        if self.spec.kind == "hash":
            if self._hash_table is None or len(self._hash_table) != len(self.vocab):
                self._hash_table = np.stack([self.word_vector(w) for w in self.vocab.words])
            return self._hash_table
        if self.spec.kind == "random":
            return self._table
        return self.params["enc.table"].data

    def encode_ids(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """Pool padded id arrays ``[..., L]`` with validity ``mask`` to ``[..., d]``."""
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ContractError("cannot encode an empty token sequence")
        counts = mask.sum(axis=-1, keepdims=True).astype(np.float64)
        weights = mask / counts
        if self.spec.kind == "hash":
            if ids.max(initial=0) >= len(self.vocab):
                raise ContractError("token id outside vocabulary")
            return Tensor(np.einsum("...l,...ld->...d", weights, self.table()[ids]))
        if self.spec.kind == "random":
            ids = np.where(ids < len(self.vocab), ids, 1)
            return Tensor(np.einsum("...l,...ld->...d", weights, self._table[ids]))
        return self._attend_pool(ids, mask, weights)

    def _attend_pool(self, ids, mask, weights) -> Tensor:
        p = self.params
        lead = ids.shape[:-1]
        L = ids.shape[-1]
        d = self.spec.d_model
        flat_ids = ids.reshape(-1, L)
        keep = mask.reshape(-1, 1, L)
        e = ag.take_rows(p["enc.table"], flat_ids)  # [M, L, d]
        q = e @ p["enc.wq"]
        k = e @ p["enc.wk"]
        v = e @ p["enc.wv"]
        att = ag.row_softmax((q @ k.T) * (1.0 / math.sqrt(d)), keep)
        h = e + att @ v
        pooled = Tensor(weights.reshape(-1, 1, L)) @ h  # [M, 1, d]
        return pooled.reshape(*lead, d)

    def encode(self, seq: Sequence[int]) -> Tensor:
        if len(seq) == 0:
            raise ContractError("cannot encode an empty token sequence")
        ids = np.asarray([list(seq)])
        return self.encode_ids(ids, np.ones_like(ids, dtype=bool)).reshape(self.spec.d_model)

    def encode_text(self, text: str) -> Tensor:
        return self.encode(tokenize(text, self.vocab, self.spec.max_seq_len))


def template_ids(
    templates: Sequence[str], vocab: Vocabulary, max_seq_len: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pad tokenized templates into ``[len(templates), L]`` ids and mask."""
    seqs = [tokenize(t, vocab, max_seq_len) for t in templates]
    L = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), L), dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def graph_templates(g: ArchGraph, p: PlatformRecord) -> list[str]:
    """Node templates in topological order, platform template last."""
    return [render_node_template(nd) for nd in g.nodes] + [render_platform_template(p)]


def embed_graph(g: ArchGraph, p: PlatformRecord, encoder: Encoder) -> Tensor:
    """``(n+1) x d`` matrix: one row per node, the platform row last."""
    ids, mask = template_ids(graph_templates(g, p), encoder.vocab, encoder.spec.max_seq_len)
    return encoder.encode_ids(ids, mask)
