"""The conditional noise predictor ``eps_theta(z_t, t, z_a, z_c)``.

The latent is cut into ``N`` tokens (one token for flat vectors, ``q x q``
patches for images). Each token sees its ``z_t`` and ``z_a`` values side by
side, plus a fixed grid position code. A stack of residual blocks follows;
each block is an MLP modulated by the time embedding, then a single-head
cross-attention read of the condition tokens. The output head is
zero-initialised so an untrained network predicts exactly zero.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .conditioning import ConditionBatch, ConditionPayload, encode_batch, init_condition_params, sinusoidal_grid
from .exceptions import InvalidConfigError, InvalidShapeError


@dataclass
class DenoiserConfig:
    latent_shape: tuple | None = None  # None: taken from the training data
    patch: int | None = None
    hidden: int = 64
    blocks: int = 2
    attn_dim: int = 32
    token_dim: int = 32
    time_dim: int = 32
    vocab: int = 2
    classes: int = 3
    cond_patch: int = 4

    def __post_init__(self):
        for name in ("hidden", "blocks", "attn_dim", "token_dim", "time_dim", "vocab", "classes", "cond_patch"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.time_dim % 2:
            raise InvalidConfigError("time_dim must be even")
        if self.hidden % 4 or self.token_dim % 4:
            raise InvalidConfigError("hidden and token_dim must be divisible by 4")
        if self.latent_shape is None:
            return
        self.latent_shape = tuple(int(d) for d in self.latent_shape)
        if not self.latent_shape or any(d <= 0 for d in self.latent_shape):
            raise InvalidConfigError(f"bad latent_shape {self.latent_shape}")
        if self.patch is not None:
            if self.patch <= 0:
                raise InvalidConfigError("patch must be positive")
            if len(self.latent_shape) not in (2, 3):
                raise InvalidConfigError("patch tokens need an (H, W) or (H, W, C) latent")
            H, W = self.latent_shape[:2]
            if H % self.patch or W % self.patch:
                raise InvalidConfigError(f"latent {H}x{W} not divisible by patch {self.patch}")

    @property
    def grid(self) -> tuple[int, int]:
        if self.patch is None:
            return 1, 1
        return self.latent_shape[0] // self.patch, self.latent_shape[1] // self.patch

    @property
    def n_tokens(self) -> int:
        r, c = self.grid
        return r * c

    @property
    def token_size(self) -> int:
        return int(np.prod(self.latent_shape)) // self.n_tokens

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.latent_shape is not None:
            d["latent_shape"] = list(self.latent_shape)
        return d

    def with_latent_shape(self, shape) -> "DenoiserConfig":
        shape = tuple(int(d) for d in shape)
        if self.latent_shape is not None and self.latent_shape != shape:
            raise InvalidConfigError(f"model configured for latents {self.latent_shape}, data has {shape}")
        return replace(self, latent_shape=shape)


def time_embed(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding, interleaved ``[sin(t/w_k), cos(t/w_k)]`` with ``w_k`` from 1 to 1e4."""
    if dim % 2 or dim <= 0:
        raise InvalidConfigError(f"time embedding dim must be positive and even, got {dim}")
    k = dim // 2
    omega = np.geomspace(1.0, 1e4, k) if k > 1 else np.ones(1)
    angles = np.asarray(t, dtype=np.float64)[..., None] / omega
    out = np.empty(angles.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def cross_attention(Q, K, V, keep=None) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d)) V`` for ``Q (..., N, d)``, ``K, V (..., M, d)``."""
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise InvalidShapeError(f"attention shapes disagree: Q{Q.shape} K{K.shape} V{V.shape}")
    return _attend(Q, K, V, keep).value


def _attend(q, k, v, keep=None) -> ad.Var:
    d = q.shape[-1]
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d))
    mask = None if keep is None else np.asarray(keep, dtype=bool)[..., None, :]
    return ad.matmul(ad.softmax(scores, mask), v)


def init_params(rng: np.random.Generator, config: DenoiserConfig) -> dict[str, np.ndarray]:
    """Weights ~ N(0, 1/fan_in); biases and the output head start at zero."""

    def normal(*shape):
        return rng.standard_normal(shape) / np.sqrt(shape[0])

    h, d, P = config.hidden, config.attn_dim, config.token_size
    params = {
        "net.in.w": normal(2 * P, h),
        "net.in.b": np.zeros(h),
        "net.time.w": normal(config.time_dim, h),
        "net.time.b": np.zeros(h),
    }
    for i in range(config.blocks):
        b = f"net.blk{i}"
        params.update({
            f"{b}.w1": normal(h, h),
            f"{b}.b1": np.zeros(h),
            f"{b}.scale": normal(h, h),
            f"{b}.shift": normal(h, h),
            f"{b}.w2": normal(h, h),
            f"{b}.b2": np.zeros(h),
            f"{b}.q": normal(h, d),
            f"{b}.k": normal(config.token_dim, d),
            f"{b}.v": normal(config.token_dim, d),
            f"{b}.o": normal(d, h),
        })
    params["net.out.w"] = np.zeros((h, P))
    params["net.out.b"] = np.zeros(P)
    params.update(init_condition_params(rng, config.vocab, config.classes, config.cond_patch, config.token_dim))
    return params


def tokenize(z: np.ndarray, config: DenoiserConfig) -> np.ndarray:
    """``(B, *latent_shape) -> (B, N, P)``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[1:] != config.latent_shape:
        raise InvalidShapeError(f"latent shape {z.shape[1:]} != configured {config.latent_shape}")
    B = z.shape[0]
    if config.patch is None:
        return z.reshape(B, 1, -1)
    q = config.patch
    H, W = config.latent_shape[:2]
    C = config.latent_shape[2] if len(config.latent_shape) == 3 else 1
    x = z.reshape(B, H // q, q, W // q, q, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, config.n_tokens, q * q * C)


def untokenize(x: np.ndarray, config: DenoiserConfig) -> np.ndarray:
    B = x.shape[0]
    if config.patch is None:
        return x.reshape((B,) + config.latent_shape)
    q = config.patch
    H, W = config.latent_shape[:2]
    C = config.latent_shape[2] if len(config.latent_shape) == 3 else 1
    z = x.reshape(B, H // q, W // q, q, q, C).transpose(0, 1, 3, 2, 4, 5)
    return z.reshape((B,) + config.latent_shape)


def encode_conditions(params, payloads: Sequence[ConditionPayload], config: DenoiserConfig) -> ConditionBatch:
    return encode_batch(params, payloads, config.vocab, config.classes, config.cond_patch)


def forward_tokens(params, zt_tok, za_tok, t, cond: ConditionBatch, config: DenoiserConfig) -> ad.Var:
    """Network body on tokenized inputs; ``params`` values may be arrays or Vars."""
    P = {k: ad.const(v) for k, v in params.items() if k.startswith("net.")}
    B = zt_tok.shape[0]
    t = np.broadcast_to(np.asarray(t), (B,))
    inp = np.concatenate([zt_tok, za_tok], axis=-1)
    pos = sinusoidal_grid(*config.grid, config.hidden)
    x = ad.matmul(inp, P["net.in.w"]) + P["net.in.b"] + pos
    temb = ad.silu(ad.matmul(time_embed(t, config.time_dim), P["net.time.w"]) + P["net.time.b"])
    temb = ad.reshape(temb, (B, 1, config.hidden))
    tokens = ad.const(cond.tokens)
    for i in range(config.blocks):
        b = f"net.blk{i}"
        u = ad.matmul(ad.silu(x), P[f"{b}.w1"]) + P[f"{b}.b1"]
        scale = ad.matmul(temb, P[f"{b}.scale"])
        shift = ad.matmul(temb, P[f"{b}.shift"])
        u = u * (scale + 1.0) + shift
        u = ad.matmul(ad.silu(u), P[f"{b}.w2"]) + P[f"{b}.b2"]
        x = x + u
        q = ad.matmul(x, P[f"{b}.q"])
        k = ad.matmul(tokens, P[f"{b}.k"])
        v = ad.matmul(tokens, P[f"{b}.v"])
        x = x + ad.matmul(_attend(q, k, v, cond.keep), P[f"{b}.o"])
    return ad.matmul(ad.silu(x), P["net.out.w"]) + P["net.out.b"]


def denoiser_forward(params, z_t, t, z_a, cond, config: DenoiserConfig) -> np.ndarray:
    """Predict the network target for a batch ``z_t, z_a`` of shape ``(B, *latent_shape)``.

    ``cond`` is either a :class:`ConditionBatch` or a sequence of payloads.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    z_a = np.asarray(z_a, dtype=np.float64)
    if z_t.shape != z_a.shape:
        raise InvalidShapeError(f"z_t {z_t.shape} and z_a {z_a.shape} differ")
    if not isinstance(cond, ConditionBatch):
        cond = encode_conditions(params, cond, config)
    if np.shape(cond.tokens)[0] != z_t.shape[0]:
        raise InvalidShapeError("condition batch size differs from latent batch size")
    out = forward_tokens(params, tokenize(z_t, config), tokenize(z_a, config), t, cond, config)
    return untokenize(out.value, config)


def make_denoiser(params, config: DenoiserConfig) -> Callable:
    """Bind parameters into the ``(z_t, t, z_a, cond)`` callable the sampler expects.

    Condition payloads are encoded once per distinct ``cond`` object and reused
    across the sampling steps.
    """
    cache: dict[int, tuple] = {}

    def fn(z_t, t, z_a, cond):
        if not isinstance(cond, ConditionBatch):
            key = id(cond)
            if key not in cache:
                cache.clear()
                cache[key] = (cond, encode_conditions(params, cond, config))
            cond = cache[key][1]
        return denoiser_forward(params, z_t, t, z_a, cond, config)

    return fn


def oracle_denoiser(sched, z_b, z_a) -> Callable:
    """Test double returning the exact noise-free target ``m_t (z_a - z_b)``."""
    diff = np.asarray(z_a, dtype=np.float64) - np.asarray(z_b, dtype=np.float64)

    def fn(z_t, t, z_a_in, cond=None):
        return sched.m[t] * diff

    return fn
