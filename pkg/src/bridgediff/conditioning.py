"""Condition payloads and the learned token encoder.

Three payload kinds stand in for text prompts, instance layouts and semantic
maps: an integer ``label`` from a small vocabulary, a binary ``layout`` mask,
and a ``semantic`` map of class ids. ``none`` yields a single learned null
token. Every kind encodes to an ``(M, token_dim)`` token matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import InvalidConditionError

KINDS = ("label", "layout", "semantic", "none")


@dataclass(frozen=True, eq=False)
class ConditionPayload:
    kind: str
    label: int | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConditionError(f"unknown condition kind {self.kind!r}")
        if self.kind == "label":
            if self.label is None or self.mask is not None:
                raise InvalidConditionError("label condition needs exactly a label")
            if int(self.label) != self.label:
                raise InvalidConditionError(f"label must be an integer, got {self.label}")
            object.__setattr__(self, "label", int(self.label))
        elif self.kind in ("layout", "semantic"):
            if self.mask is None or self.label is not None:
                raise InvalidConditionError(f"{self.kind} condition needs exactly a mask")
            mask = np.asarray(self.mask, dtype=np.float64)
            if mask.ndim != 2:
                raise InvalidConditionError(f"{self.kind} mask must be 2-D, got shape {mask.shape}")
            if np.any(mask != np.round(mask)) or np.any(mask < 0):
                raise InvalidConditionError(f"{self.kind} mask must hold non-negative integer ids")
            if self.kind == "layout" and np.any(mask > 1):
                raise InvalidConditionError("layout mask must be strictly binary")
            object.__setattr__(self, "mask", mask)
        elif self.label is not None or self.mask is not None:
            raise InvalidConditionError("'none' condition carries no payload")

    def __eq__(self, other):
        if not isinstance(other, ConditionPayload):
            return NotImplemented
        if self.kind != other.kind or self.label != other.label:
            return False
        if self.mask is None or other.mask is None:
            return self.mask is other.mask
        return self.mask.shape == other.mask.shape and bool(np.all(self.mask == other.mask))

    @classmethod
    def none(cls) -> "ConditionPayload":
        return cls("none")


class ConditionBatch(NamedTuple):
    """Padded tokens ``(B, M, token_dim)`` and a ``(B, M)`` keep-mask."""

    tokens: object  # np.ndarray or autodiff.Var
    keep: np.ndarray


def sinusoidal_grid(rows: int, cols: int, dim: int) -> np.ndarray:
    """Fixed 2-D positional code of shape ``(rows * cols, dim)``, row-major over the grid."""
    if dim % 4:
        raise InvalidConditionError(f"positional dim must be divisible by 4, got {dim}")
    n = dim // 4
    freqs = 1.0 / (100.0 ** (np.arange(n) / max(n, 1)))
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    r = r.reshape(-1, 1) * freqs
    c = c.reshape(-1, 1) * freqs
    return np.concatenate([np.sin(r), np.cos(r), np.sin(c), np.cos(c)], axis=1)


def patch_features(grid: np.ndarray, classes: int, patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch one-hot pixel pattern ``(M, p*p*K)`` and class histogram ``(M, K)``."""
    grid = np.asarray(grid)
    H, W = grid.shape
    if H % patch or W % patch:
        raise InvalidConditionError(f"mask {H}x{W} not divisible by patch size {patch}")
    ids = grid.astype(np.intp)
    if ids.min() < 0 or ids.max() >= classes:
        raise InvalidConditionError(f"class ids must lie in [0, {classes}), got max {ids.max()}")
    onehot = np.eye(classes)[ids]  # H, W, K
    blocks = onehot.reshape(H // patch, patch, W // patch, patch, classes).transpose(0, 2, 1, 3, 4)
    blocks = blocks.reshape((H // patch) * (W // patch), patch * patch, classes)
    return blocks.reshape(blocks.shape[0], -1), blocks.sum(axis=1)


def init_condition_params(rng: np.random.Generator, vocab: int, classes: int, patch: int, token_dim: int) -> dict:
    def normal(*shape, fan_in):
        return rng.standard_normal(shape) / np.sqrt(fan_in)

    p2 = patch * patch
    return {
        "cond.label": normal(vocab, token_dim, fan_in=1),
        "cond.null": normal(1, token_dim, fan_in=1),
        "cond.layout.pix": normal(p2 * 2, token_dim, fan_in=p2),
        "cond.layout.hist": normal(2, token_dim, fan_in=2),
        "cond.layout.bias": np.zeros(token_dim),
        "cond.semantic.pix": normal(p2 * classes, token_dim, fan_in=p2),
        "cond.semantic.hist": normal(classes, token_dim, fan_in=classes),
        "cond.semantic.bias": np.zeros(token_dim),
    }


def _mask_tokens(P, kind: str, masks: Sequence[np.ndarray], classes: int, patch: int):
    K = 2 if kind == "layout" else classes
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise InvalidConditionError(f"{kind} masks in one batch must share a shape, got {sorted(shapes)}")
    (H, W), = shapes
    feats = [patch_features(m, K, patch) for m in masks]
    pix = np.stack([f[0] for f in feats])
    hist = np.stack([f[1] for f in feats]) / (patch * patch)
    tok = ad.matmul(pix, P[f"cond.{kind}.pix"]) + ad.matmul(hist, P[f"cond.{kind}.hist"]) + P[f"cond.{kind}.bias"]
    d = tok.shape[-1]
    return tok + sinusoidal_grid(H // patch, W // patch, d)


def encode_batch(params, payloads: Sequence[ConditionPayload], vocab: int, classes: int, patch: int) -> ConditionBatch:
    """Encode a batch of payloads into padded tokens.

    ``params`` maps names to arrays or :class:`autodiff.Var`; with Vars the
    returned tokens stay differentiable w.r.t. the encoder weights.
    """
    if len(payloads) == 0:
        raise InvalidConditionError("empty condition batch")
    P = {k: ad.const(v) for k, v in params.items() if k.startswith("cond.")}
    groups: dict[str, list[int]] = {}
    for i, c in enumerate(payloads):
        groups.setdefault(c.kind, []).append(i)

    parts, order = [], []
    for kind in KINDS:
        idx = groups.get(kind)
        if not idx:
            continue
        if kind == "label":
            labels = np.array([payloads[i].label for i in idx])
            if labels.min() < 0 or labels.max() >= vocab:
                raise InvalidConditionError(f"label out of vocabulary [0, {vocab}): {labels.max()}")
            tok = ad.reshape(ad.take(P["cond.label"], labels), (len(idx), 1, -1))
        elif kind == "none":
            tok = ad.take(ad.reshape(P["cond.null"], (1, 1, -1)), np.zeros(len(idx), dtype=int))
        else:
            tok = _mask_tokens(P, kind, [payloads[i].mask for i in idx], classes, patch)
        parts.append(tok)
        order.extend(idx)

    M = max(p.shape[1] for p in parts)
    d = parts[0].shape[2]
    keeps = []
    for j, p in enumerate(parts):
        keep = np.zeros((p.shape[0], M), dtype=bool)
        keep[:, : p.shape[1]] = True
        keeps.append(keep)
        if p.shape[1] < M:
            parts[j] = ad.concat([p, np.zeros((p.shape[0], M - p.shape[1], d))], axis=1)
    inverse = np.argsort(np.asarray(order))
    tokens = ad.take(ad.concat(parts, axis=0), inverse) if len(parts) > 1 else ad.take(parts[0], inverse)
    keep = np.concatenate(keeps)[inverse]
    if not any(isinstance(v, ad.Var) and v.requires_grad for v in params.values()):
        return ConditionBatch(tokens.value, keep)
    return ConditionBatch(tokens, keep)


def _single(params, payload, vocab, classes, patch) -> np.ndarray:
    tokens = encode_batch(params, [payload], vocab, classes, patch).tokens
    return np.asarray(getattr(tokens, "value", tokens))[0]


def encode_label(params, label: int, vocab: int | None = None) -> np.ndarray:
    """Tokens ``(1, token_dim)`` for a vocabulary label."""
    vocab = params["cond.label"].shape[0] if vocab is None else vocab
    return _single(params, ConditionPayload("label", label=label), vocab, 1, 1)


def encode_mask(params, mask, K: int = 2, patch: int = 4, kind: str | None = None) -> np.ndarray:
    """Tokens ``((H/p)(W/p), token_dim)`` for a layout mask or a ``K``-class semantic map.

    ``kind`` defaults to ``layout`` when ``K == 2`` and ``semantic`` otherwise.
    """
    kind = kind or ("layout" if K == 2 else "semantic")
    if kind == "semantic" and params["cond.semantic.hist"].shape[0] != K:
        raise InvalidConditionError(f"encoder holds {params['cond.semantic.hist'].shape[0]} classes, got K={K}")
    payload = ConditionPayload(kind, mask=mask)
    return _single(params, payload, params["cond.label"].shape[0], K, patch)


def null_condition(params) -> np.ndarray:
    return np.asarray(params["cond.null"], dtype=np.float64).copy()
