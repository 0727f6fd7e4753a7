"""scikit-learn style front end.

``X`` holds pre-event latents and ``y`` the matching post-event latents, both
shaped ``(n_samples, *latent_shape)``. Conditions travel as the ``cond``
keyword: ``None`` (unconditional), an integer label array, or a sequence of
:class:`~bridgediff.conditioning.ConditionPayload`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bridge import SampleTrace, sample
from .conditioning import ConditionPayload
from .data import PairedSample
from .denoiser import DenoiserConfig, make_denoiser
from .exceptions import InvalidInputError
from .numerics import make_rng
from .schedule import BridgeSchedule
from .training import Checkpoint, TrainConfig, train_loop


def as_conditions(cond, n: int) -> list[ConditionPayload]:
    if cond is None:
        return [ConditionPayload.none() for _ in range(n)]
    if isinstance(cond, ConditionPayload):
        return [cond] * n
    cond = list(cond)
    if len(cond) != n:
        raise InvalidInputError(f"got {len(cond)} conditions for {n} samples")
    return [c if isinstance(c, ConditionPayload) else ConditionPayload("label", label=int(c)) for c in cond]


class BridgeRegressor(BaseEstimator):
    """Conditional Brownian-bridge generator mapping pre-event to post-event latents.

    ``predict`` runs deterministic reverse sampling over ``sample_steps``
    evenly spaced steps (default: all ``T``).
    """

    def __init__(
        self,
        T: int = 50,
        s: float = 1.0,
        hidden: int = 64,
        blocks: int = 2,
        attn_dim: int = 32,
        token_dim: int = 32,
        time_dim: int = 32,
        patch: int | None = None,
        vocab: int = 2,
        classes: int = 3,
        cond_patch: int = 4,
        steps: int = 2000,
        batch: int = 64,
        lr: float = 1e-3,
        weight_mode: str = "uniform",
        grad_clip: float = 10.0,
        seed: int = 0,
        sample_steps: int | None = None,
        stochastic: bool = False,
    ):
        self.T = T
        self.s = s
        self.hidden = hidden
        self.blocks = blocks
        self.attn_dim = attn_dim
        self.token_dim = token_dim
        self.time_dim = time_dim
        self.patch = patch
        self.vocab = vocab
        self.classes = classes
        self.cond_patch = cond_patch
        self.steps = steps
        self.batch = batch
        self.lr = lr
        self.weight_mode = weight_mode
        self.grad_clip = grad_clip
        self.seed = seed
        self.sample_steps = sample_steps
        self.stochastic = stochastic

    def _train_config(self) -> TrainConfig:
        model = DenoiserConfig(
            patch=self.patch,
            hidden=self.hidden,
            blocks=self.blocks,
            attn_dim=self.attn_dim,
            token_dim=self.token_dim,
            time_dim=self.time_dim,
            vocab=self.vocab,
            classes=self.classes,
            cond_patch=self.cond_patch,
        )
        return TrainConfig(
            T=self.T, s=self.s, batch=self.batch, steps=self.steps, lr=self.lr,
            weight_mode=self.weight_mode, seed=self.seed, grad_clip=self.grad_clip, model=model,
        )

    def fit(self, X, y, cond=None, out_dir=None):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        y = check_array(y, allow_nd=True, dtype=np.float64)
        if X.shape != y.shape:
            raise InvalidInputError(f"X {X.shape} and y {y.shape} must have the same shape")
        conds = as_conditions(cond, len(X))
        dataset = [PairedSample(a, b, c) for a, b, c in zip(X, y, conds)]
        self._set_checkpoint(train_loop(self._train_config(), dataset, out_dir=out_dir))
        return self

    def _set_checkpoint(self, ckpt: Checkpoint):
        self.checkpoint_ = ckpt
        self.schedule_ = BridgeSchedule(ckpt.config.T, ckpt.config.s)
        self.n_features_in_ = int(np.prod(ckpt.config.model.latent_shape))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, **overrides) -> "BridgeRegressor":
        c, m = ckpt.config, ckpt.config.model
        est = cls(
            T=c.T, s=c.s, hidden=m.hidden, blocks=m.blocks, attn_dim=m.attn_dim, token_dim=m.token_dim,
            time_dim=m.time_dim, patch=m.patch, vocab=m.vocab, classes=m.classes, cond_patch=m.cond_patch,
            steps=c.steps, batch=c.batch, lr=c.lr, weight_mode=c.weight_mode, grad_clip=c.grad_clip, seed=c.seed,
        )
        est.set_params(**overrides)
        est._set_checkpoint(ckpt)
        return est

    def sample(self, X, cond=None, rng=None, full_trace: bool = False) -> SampleTrace:
        check_is_fitted(self, "checkpoint_")
        X = check_array(X, allow_nd=True, dtype=np.float64)
        ckpt = self.checkpoint_
        denoiser = make_denoiser(ckpt.params, ckpt.config.model)
        if self.stochastic and rng is None:
            rng = make_rng(self.seed, stream=3)
        return sample(
            self.schedule_, denoiser, X, as_conditions(cond, len(X)), S=self.sample_steps or self.schedule_.T,
            rng=rng, stochastic=self.stochastic, full_trace=full_trace,
        )

    def predict(self, X, cond=None, rng=None) -> np.ndarray:
        return self.sample(X, cond, rng).final
