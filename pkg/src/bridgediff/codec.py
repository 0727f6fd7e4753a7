"""Pixel <-> latent boundary: identity or a trained linear autoencoder."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidConfigError, InvalidShapeError
from .numerics import make_rng
from .optim import Adam


@dataclass
class CodecParams:
    mode: str = "identity"
    input_shape: tuple | None = None
    tensors: dict = field(default_factory=dict)  # encoder (D, k), enc_bias (k,), decoder (k, D), dec_bias (D,)

    def __post_init__(self):
        if self.mode not in ("identity", "linear"):
            raise InvalidConfigError(f"unknown codec mode {self.mode!r}")
        if self.mode == "identity" and self.tensors:
            raise InvalidConfigError("identity codec carries no parameters")
        if self.mode == "linear":
            enc, dec = self.tensors.get("encoder"), self.tensors.get("decoder")
            if enc is None or dec is None or enc.shape[::-1] != dec.shape:
                raise InvalidConfigError("linear codec needs shape-compatible encoder/decoder matrices")
        if self.input_shape is not None:
            self.input_shape = tuple(int(d) for d in self.input_shape)

    @property
    def latent_dim(self) -> int | None:
        return None if self.mode == "identity" else self.tensors["encoder"].shape[1]

    def latent_shape(self, input_shape) -> tuple:
        return tuple(input_shape) if self.mode == "identity" else (self.latent_dim,)


def encode(codec: CodecParams, x) -> np.ndarray:
    """``(B, *input_shape) -> (B, k)``; identity mode returns ``x`` unchanged."""
    x = np.asarray(x, dtype=np.float64)
    if codec.mode == "identity":
        return x
    if x.shape[1:] != codec.input_shape:
        raise InvalidShapeError(f"codec expects inputs of shape {codec.input_shape}, got {x.shape[1:]}")
    t = codec.tensors
    return x.reshape(len(x), -1) @ t["encoder"] + t["enc_bias"]


def decode(codec: CodecParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if codec.mode == "identity":
        return z
    t = codec.tensors
    if z.shape[1:] != (codec.latent_dim,):
        raise InvalidShapeError(f"codec expects latents of shape ({codec.latent_dim},), got {z.shape[1:]}")
    return (z @ t["decoder"] + t["dec_bias"]).reshape((len(z),) + codec.input_shape)


def reconstruction_loss(codec: CodecParams, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean((decode(codec, encode(codec, x)) - x) ** 2))


def relative_error(codec: CodecParams, x) -> float:
    """``||x - D(E(x))|| / ||x||`` over the whole batch."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.linalg.norm(decode(codec, encode(codec, x)) - x) / np.linalg.norm(x))


def train_codec(
    codec: CodecParams,
    data,
    latent_dim: int | None = None,
    steps: int = 500,
    lr: float = 1e-2,
    seed: int = 0,
    polish: bool = True,
    history: list | None = None,
    polish_rounds: int = 50,
) -> CodecParams:
    """Fit a linear autoencoder to ``data`` by full-batch Adam on the squared error.

    ``polish`` then alternates exact least-squares solves for the decoder and
    the encoder, which drives the pair to the principal subspace of the data.
    """
    if codec.mode == "identity":
        warnings.warn("identity codec has nothing to train", stacklevel=2)
        return codec
    x = np.asarray(data, dtype=np.float64)
    if x.ndim < 2 or len(x) == 0:
        raise InvalidShapeError("codec training data must be a non-empty batch")
    k = codec.latent_dim if latent_dim is None else int(latent_dim)
    if k is None or k <= 0:
        raise InvalidConfigError(f"codec bottleneck must be positive, got {k}")
    X = x.reshape(len(x), -1)
    n, D = X.shape
    rng = make_rng(seed, stream=7)
    p = {
        "encoder": rng.standard_normal((D, k)) / np.sqrt(D),
        "enc_bias": np.zeros(k),
        "decoder": rng.standard_normal((k, D)) / np.sqrt(k),
        "dec_bias": X.mean(axis=0),
    }
    opt = Adam(lr)
    m, v = opt.init_state(p)
    for step in range(1, steps + 1):
        Z = X @ p["encoder"] + p["enc_bias"]
        R = Z @ p["decoder"] + p["dec_bias"] - X
        if history is not None:
            history.append(float(np.mean(R * R)))
        gR = 2.0 * R / R.size
        gZ = gR @ p["decoder"].T
        grads = {
            "decoder": Z.T @ gR,
            "dec_bias": gR.sum(axis=0),
            "encoder": X.T @ gZ,
            "enc_bias": gZ.sum(axis=0),
        }
        p, m, v = opt.update(p, grads, m, v, step)
    if polish:
        # alternating least squares: best decoder for the codes, then best codes for the decoder
        for _ in range(polish_rounds):
            Z1 = np.hstack([X @ p["encoder"] + p["enc_bias"], np.ones((n, 1))])
            sol, *_ = np.linalg.lstsq(Z1, X, rcond=None)
            p["decoder"], p["dec_bias"] = sol[:-1], sol[-1]
            pinv = np.linalg.pinv(p["decoder"])
            p["encoder"], p["enc_bias"] = pinv, -p["dec_bias"] @ pinv
        Z1 = np.hstack([X @ p["encoder"] + p["enc_bias"], np.ones((n, 1))])
        sol, *_ = np.linalg.lstsq(Z1, X, rcond=None)
        p["decoder"], p["dec_bias"] = sol[:-1], sol[-1]
    return CodecParams("linear", x.shape[1:], p)


def linear_codec_stub(input_shape, latent_dim: int) -> CodecParams:
    """Untrained linear codec of the requested size (all-zero weights)."""
    if latent_dim <= 0:
        raise InvalidConfigError(f"codec bottleneck must be positive, got {latent_dim}")
    D = int(np.prod(input_shape))
    return CodecParams(
        "linear",
        tuple(input_shape),
        {"encoder": np.zeros((D, latent_dim)), "enc_bias": np.zeros(latent_dim), "decoder": np.zeros((latent_dim, D)), "dec_bias": np.zeros(D)},
    )


class LinearCodec(TransformerMixin, BaseEstimator):
    """scikit-learn wrapper: ``fit`` trains, ``transform`` encodes, ``inverse_transform`` decodes.

    Accepts any ``(n, ...)`` array; transform outputs are ``(n, latent_dim)``.
    """

    def __init__(self, latent_dim: int = 64, steps: int = 500, lr: float = 1e-2, seed: int = 0, polish: bool = True):
        self.latent_dim = latent_dim
        self.steps = steps
        self.lr = lr
        self.seed = seed
        self.polish = polish

    def fit(self, X, y=None):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        stub = linear_codec_stub(X.shape[1:], self.latent_dim)
        self.codec_ = train_codec(stub, X, steps=self.steps, lr=self.lr, seed=self.seed, polish=self.polish)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "codec_")
        return encode(self.codec_, check_array(X, allow_nd=True, dtype=np.float64))

    def inverse_transform(self, Z):
        check_is_fitted(self, "codec_")
        return decode(self.codec_, check_array(Z, dtype=np.float64))
