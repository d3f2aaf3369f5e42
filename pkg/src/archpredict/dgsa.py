"""Dynamic graph self-attention and the pre-norm transformer block around it.

Inputs are batched: ``x`` has shape ``[..., N, d]`` where row ``N-1`` of each
unpadded sample is the platform token. ``valid`` (``[..., N]`` booleans)
marks real rows; padded rows never act as keys. Branch masks are stacked as
``[..., 3, N, N]`` in the order grandfather, father, son.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ContractError, DimensionError, Tensor

GATE_MODES = ("dynamic", "uniform", "full")
GATE_ALIASES = {"uniform_fixed": "uniform", "disabled_full_attention": "full", "global": "full"}
MASK_MODES = ("hadamard", "additive")
MASK_ALIASES = {"additive_neg_inf": "additive"}


@dataclass(frozen=True)
class DgsaConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    gate_mode: str = "dynamic"
    mask_mode: str = "hadamard"
    # the gate's prefix attention is unscaled unless this is set
    gate_scaled: bool = False
    ffn_mult: int = 4

    def __post_init__(self):
        gate = GATE_ALIASES.get(self.gate_mode, self.gate_mode)
        mask = MASK_ALIASES.get(self.mask_mode, self.mask_mode)
        if gate not in GATE_MODES:
            raise ValueError(f"unknown gate mode {self.gate_mode!r}")
        if mask not in MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        object.__setattr__(self, "gate_mode", gate)
        object.__setattr__(self, "mask_mode", mask)
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def init_layer_params(cfg: DgsaConfig, rng: np.random.Generator, prefix: str = "") -> dict[str, Tensor]:
    d = cfg.d_model
    f = cfg.ffn_mult * d

    def w(fan_in, fan_out):
        return Tensor(rng.normal(scale=1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)), True)

    def const(value, size):
        return Tensor(np.full(size, value, dtype=np.float64), True)

    shapes = {
        "ln1.scale": const(1.0, d),
        "ln1.bias": const(0.0, d),
        "gate.wq": w(d, d),
        "gate.wk": w(d, d),
        "gate.wv": w(d, d),
        "gate.w1": w(d, d),
        "gate.b1": const(0.0, d),
        "gate.w2": w(d, 3),
        "gate.b2": const(0.0, 3),
        "attn.wq": w(d, d),
        "attn.wk": w(d, d),
        "attn.wv": w(d, d),
        "attn.wo": w(d, d),
        "attn.bo": const(0.0, d),
        "ln2.scale": const(1.0, d),
        "ln2.bias": const(0.0, d),
        "ffn.w1": w(d, f),
        "ffn.b1": const(0.0, f),
        "ffn.w2": w(f, d),
        "ffn.b2": const(0.0, d),
    }
    return {prefix + k: v for k, v in shapes.items()}


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, n, d = x.shape
    k = len(lead)
    x = x.reshape(*lead, n, n_heads, d // n_heads)
    return x.transpose(*range(k), k + 1, k, k + 2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, hd = x.shape
    k = len(lead)
    return x.transpose(*range(k), k + 1, k, k + 2).reshape(*lead, n, h * hd)


def _key_keep(valid: np.ndarray | None, n: int) -> np.ndarray:
    """``[..., N, N]`` keys each query may see: the valid rows.

    Padding rows see only themselves so their (discarded) softmax stays defined.
    """
    if valid is None:
        return np.ones((n, n), dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    return valid[..., None, :] | (~valid[..., :, None] & np.eye(n, dtype=bool))


def attend(
    qh: Tensor,
    kh: Tensor,
    vh: Tensor,
    masks: np.ndarray,
    head_dim: int,
    mode: str = "hadamard",
    valid: np.ndarray | None = None,
) -> Tensor:
    """softmax((QK^T o (I+M)) / sqrt(h)) V per head.

    ``qh``/``kh``/``vh`` are ``[..., H, N, h]`` and ``masks`` is ``[..., N, N]``
    (broadcast over heads). In hadamard mode masked-out scores become logit 0
    and still take part in the softmax; additive mode drops them.
    """
    n = qh.shape[-2]
    masks = np.asarray(masks)
    if masks.shape[-2:] != (n, n):
        raise DimensionError(f"mask shape {masks.shape} does not match {n} rows")
    gate = (np.eye(n) + masks)[..., None, :, :]
    scores = qh @ kh.T
    logits = scores * (gate / math.sqrt(head_dim))
    keep = _key_keep(valid, n)[..., None, :, :]
    if mode == "additive":
        keep = keep & (gate > 0)
    elif mode != "hadamard":
        raise ValueError(f"unknown mask mode {mode!r}")
    return ag.row_softmax(logits, keep) @ vh


def masked_attention(
    x: Tensor,
    mask: np.ndarray,
    params: dict[str, Tensor],
    cfg: DgsaConfig,
    valid: np.ndarray | None = None,
    prefix: str = "",
) -> Tensor:
    """One adjacency-masked attention branch, heads concatenated: ``[..., N, d]``."""
    p = params
    qh = _split_heads(x @ p[prefix + "attn.wq"], cfg.n_heads)
    kh = _split_heads(x @ p[prefix + "attn.wk"], cfg.n_heads)
    vh = _split_heads(x @ p[prefix + "attn.wv"], cfg.n_heads)
    return _merge_heads(attend(qh, kh, vh, mask, cfg.head_dim, cfg.mask_mode, valid))


def dynamic_gate(
    x: Tensor,
    params: dict[str, Tensor],
    cfg: DgsaConfig,
    valid: np.ndarray | None = None,
    prefix: str = "",
) -> tuple[Tensor, Tensor]:
    """Per-row branch weights from causal prefix attention.

    Row i attends to rows 0..i (topological prefix); the pooled feature goes
    through a one-hidden-layer MLP and a softmax over the three branches.
    Returns ``(features, weights)`` with weights shaped ``[..., N, 3]``.
    """
    p = params
    n = x.shape[-2]
    if n == 0:
        raise ContractError("empty input to dynamic gate")
    q = x @ p[prefix + "gate.wq"]
    k = x @ p[prefix + "gate.wk"]
    v = x @ p[prefix + "gate.wv"]
    scores = q @ k.T
    if cfg.gate_scaled:
        scores = scores * (1.0 / math.sqrt(cfg.d_model))
    keep = np.tril(np.ones((n, n), dtype=bool)) & _key_keep(valid, n)
    feats = ag.row_softmax(scores, keep) @ v
    hidden = ag.gelu(feats @ p[prefix + "gate.w1"] + p[prefix + "gate.b1"])
    weights = ag.row_softmax(hidden @ p[prefix + "gate.w2"] + p[prefix + "gate.b2"])
    return feats, weights


def dgsa_forward(
    x: Tensor,
    masks: np.ndarray,
    params: dict[str, Tensor],
    cfg: DgsaConfig,
    valid: np.ndarray | None = None,
    prefix: str = "",
    parts: dict | None = None,
) -> Tensor:
    """Gate-weighted sum of the grandfather, father and son branches.

    ``masks`` is ``[..., 3, N, N]`` already extended with the platform row.
    When ``parts`` is a dict it receives the per-branch outputs
    (``[..., 3, N, d]``) and the gate weights.
    """
    p = params
    masks = np.asarray(masks)
    *lead, n, d = x.shape
    if masks.shape[-3:] != (3, n, n):
        raise DimensionError(f"expected masks [..., 3, {n}, {n}], got {masks.shape}")
    if cfg.gate_mode == "full":
        masks = np.ones(masks.shape[:-3] + (1, n, n), dtype=masks.dtype)
    n_branch = masks.shape[-3]

    def heads(w):
        h = _split_heads(x @ p[prefix + w], cfg.n_heads)
        return h.reshape(*lead, 1, *h.shape[len(lead):])

    branch = attend(
        heads("attn.wq"), heads("attn.wk"), heads("attn.wv"),
        masks, cfg.head_dim, cfg.mask_mode,
        None if valid is None else np.asarray(valid)[..., None, :],
    )  # [..., B, H, N, h]

    if cfg.gate_mode == "full":
        weights = None
        combined = branch.reshape(*lead, *branch.shape[len(lead) + 1:])
    else:
        if cfg.gate_mode == "dynamic":
            _, weights = dynamic_gate(x, p, cfg, valid, prefix)
        else:
            weights = Tensor(np.full((*lead, n, 3), 1.0 / 3.0))
        k = len(lead)
        w = weights.transpose(*range(k), k + 1, k).reshape(*lead, 3, 1, n, 1)
        combined = (branch * w).sum(axis=k)
    out = _merge_heads(combined)
    if parts is not None:
        parts["weights"] = weights
        parts["branches"] = _merge_heads(branch) if n_branch == 3 else None
    return out


def transformer_block(
    x: Tensor,
    masks: np.ndarray,
    params: dict[str, Tensor],
    cfg: DgsaConfig,
    valid: np.ndarray | None = None,
    prefix: str = "",
) -> Tensor:
    """Pre-norm residual block: DGSA then a GELU feed-forward."""
    p = params
    h = ag.layer_norm(x, p[prefix + "ln1.scale"], p[prefix + "ln1.bias"])
    a = dgsa_forward(h, masks, p, cfg, valid, prefix)
    x = x + (a @ p[prefix + "attn.wo"] + p[prefix + "attn.bo"])
    h = ag.layer_norm(x, p[prefix + "ln2.scale"], p[prefix + "ln2.bias"])
    f = ag.gelu(h @ p[prefix + "ffn.w1"] + p[prefix + "ffn.b1"])
    return x + (f @ p[prefix + "ffn.w2"] + p[prefix + "ffn.b2"])
