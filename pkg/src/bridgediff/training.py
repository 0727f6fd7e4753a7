"""Bridge objective, optimisation loop and the BBCK1 checkpoint container."""

from __future__ import annotations

import csv
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .bridge import forward_marginal_sample, network_target
from .codec import CodecParams, encode, linear_codec_stub, train_codec
from .denoiser import DenoiserConfig, encode_conditions, forward_tokens, init_params, tokenize
from .exceptions import FormatError, IntegrityError, InvalidConfigError, InvalidInputError, TrainingDivergedError
from .numerics import make_rng, rng_from_state, rng_state, tensor_to_bytes, read_tensor
from .optim import Adam, clip_by_global_norm
from .schedule import BridgeSchedule, posterior_coefficients

log = logging.getLogger(__name__)

WEIGHT_MODES = ("uniform", "inverse_t", "posterior_ceps")
CHECKPOINT_MAGIC = b"BBCK1"


@dataclass
class TrainConfig:
    """Desk-scale defaults; the reference setting used T=1000 (200 sampling steps) and lr=1e-5."""

    T: int = 50
    s: float = 1.0
    batch: int = 64
    steps: int = 2000
    lr: float = 1e-3
    weight_mode: str = "uniform"
    seed: int = 0
    grad_clip: float = 10.0
    checkpoint_every: int = 0
    codec: str = "identity"
    codec_dim: int | None = None
    codec_steps: int = 500
    model: DenoiserConfig = field(default_factory=DenoiserConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = DenoiserConfig(**self.model)
        for name in ("T", "batch", "steps", "grad_clip"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.lr < 0 or self.s <= 0 or self.seed < 0 or self.checkpoint_every < 0:
            raise InvalidConfigError("lr, seed and checkpoint_every must be non-negative and s positive")
        if self.weight_mode not in WEIGHT_MODES:
            raise InvalidConfigError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if self.codec not in ("identity", "linear"):
            raise InvalidConfigError(f"codec must be 'identity' or 'linear', got {self.codec!r}")
        if self.codec == "linear" and not self.codec_dim:
            raise InvalidConfigError("linear codec needs a positive codec_dim")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        """Strict parse: unknown keys at either level are an error."""
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = dict(raw)
        if "model" in raw:
            model_known = {f.name for f in fields(DenoiserConfig)}
            bad = set(raw["model"]) - model_known
            if bad:
                raise InvalidConfigError(f"unknown model config keys: {sorted(bad)}")
            raw["model"] = DenoiserConfig(**raw["model"])
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict
    opt_m: dict
    opt_v: dict
    step: int
    rng_state: dict
    codec: CodecParams = field(default_factory=CodecParams)

    @property
    def schedule(self) -> BridgeSchedule:
        return BridgeSchedule(self.config.T, self.config.s)


# -- objective --------------------------------------------------------------


def loss_weights(sched: BridgeSchedule, t: np.ndarray, mode: str) -> np.ndarray:
    t = np.asarray(t)
    if mode == "uniform":
        return np.ones(t.shape)
    if mode == "inverse_t":
        return 1.0 / t
    if mode == "posterior_ceps":
        table = np.array([0.0] + [posterior_coefficients(sched, k, k - 1).c_eps for k in range(1, sched.T)])
        return table[t]
    raise InvalidConfigError(f"unknown weight mode {mode!r}")


def draw_training_batch(sched: BridgeSchedule, z_b: np.ndarray, z_a: np.ndarray, rng) -> dict:
    """Sample ``t ~ U{1..T-1}`` and noise per record; return inputs and regression target."""
    t = rng.integers(1, sched.T, size=len(z_b))
    z_t, eps = forward_marginal_sample(sched, z_b, z_a, t, rng)
    return {"t": t, "eps": eps, "z_t": z_t, "target": network_target(sched, z_b, z_a, t, eps)}


def weighted_loss(pred, target, weights):
    """``mean_i w_i ||target_i - pred_i||^2``; ``pred`` may be a Var."""
    B = len(weights)
    w = np.asarray(weights, dtype=np.float64).reshape((B,) + (1,) * (np.ndim(target) - 1)) / B
    diff = ad.add(pred, -np.asarray(target))
    return ad.sum_all(ad.mul(ad.mul(diff, diff), w))


def _stack_batch(batch, codec: CodecParams | None = None):
    if len(batch) == 0:
        raise InvalidInputError("empty batch")
    z_a = np.stack([s.pre for s in batch])
    z_b = np.stack([s.post for s in batch])
    if codec is not None:
        z_a, z_b = encode(codec, z_a), encode(codec, z_b)
    return z_b, z_a, [s.cond for s in batch]


def loss(params, sched, batch, rng, weight_mode: str, config: DenoiserConfig, draws: dict | None = None):
    """Bridge regression loss on ``batch`` (PairedSample records, latent space) and its gradients.

    Returns ``(value, grads, draws)``; pass ``draws`` back in to re-evaluate
    at the same ``(t, eps)``.
    """
    z_b, z_a, conds = _stack_batch(batch)
    if draws is None:
        draws = draw_training_batch(sched, z_b, z_a, rng)
    P = {k: ad.param(v) for k, v in params.items()}
    cond = encode_conditions(P, conds, config)
    pred = forward_tokens(P, tokenize(draws["z_t"], config), tokenize(z_a, config), draws["t"], cond, config)
    w = loss_weights(sched, draws["t"], weight_mode)
    out = weighted_loss(pred, tokenize(draws["target"], config), w)
    ad.backward(out)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in P.items()}
    return float(out.value), grads, draws


# -- optimisation -----------------------------------------------------------


@dataclass
class TrainState:
    config: TrainConfig
    params: dict
    opt_m: dict
    opt_v: dict
    step: int
    rng: np.random.Generator

    @property
    def schedule(self) -> BridgeSchedule:
        return BridgeSchedule(self.config.T, self.config.s)


def init_state(config: TrainConfig) -> TrainState:
    if config.model.latent_shape is None:
        raise InvalidConfigError("model.latent_shape must be set before initialising")
    params = init_params(make_rng(config.seed, stream=1), config.model)
    m, v = Adam(config.lr).init_state(params)
    return TrainState(config, params, m, v, 0, make_rng(config.seed, stream=2))


def train_step(state: TrainState, batch: Sequence, dump_dir: str | os.PathLike | None = None) -> tuple[TrainState, dict]:
    """One clipped Adam step on ``batch``; returns the new state and ``{loss, grad_norm}``."""
    cfg = state.config
    value, grads, draws = loss(state.params, state.schedule, batch, state.rng, cfg.weight_mode, cfg.model)
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        where = ""
        if dump_dir is not None:
            path = Path(dump_dir) / f"diverged_step{state.step + 1}.npz"
            z_b, z_a, _ = _stack_batch(batch)
            np.savez(path, z_a=z_a, z_b=z_b, **draws)
            where = f"; offending batch dumped to {path}"
        raise TrainingDivergedError(f"non-finite loss {value} at step {state.step + 1}{where}")
    grads, norm = clip_by_global_norm(grads, cfg.grad_clip)
    step = state.step + 1
    params, m, v = Adam(cfg.lr).update(state.params, grads, state.opt_m, state.opt_v, step)
    new = replace(state, params=params, opt_m=m, opt_v=v, step=step)
    return new, {"loss": value, "grad_norm": norm}


def to_checkpoint(state: TrainState, codec: CodecParams) -> Checkpoint:
    return Checkpoint(state.config, state.params, state.opt_m, state.opt_v, state.step, rng_state(state.rng), codec)


def from_checkpoint(ckpt: Checkpoint, config: TrainConfig | None = None) -> TrainState:
    cfg = ckpt.config if config is None else config
    return TrainState(cfg, dict(ckpt.params), dict(ckpt.opt_m), dict(ckpt.opt_v), ckpt.step, rng_from_state(ckpt.rng_state))


def prepare_codec(config: TrainConfig, dataset) -> CodecParams:
    if config.codec == "identity":
        return CodecParams()
    images = np.concatenate([np.stack([s.pre for s in dataset]), np.stack([s.post for s in dataset])])
    stub = linear_codec_stub(images.shape[1:], config.codec_dim)
    return train_codec(stub, images, steps=config.codec_steps, seed=config.seed)


def encode_dataset(dataset, codec: CodecParams):
    from .data import PairedSample

    if codec.mode == "identity":
        return list(dataset)
    z_a = encode(codec, np.stack([s.pre for s in dataset]))
    z_b = encode(codec, np.stack([s.post for s in dataset]))
    return [PairedSample(a, b, s.cond) for a, b, s in zip(z_a, z_b, dataset)]


def train_loop(
    config: TrainConfig,
    dataset: Sequence,
    out_dir: str | os.PathLike | None = None,
    resume: Checkpoint | None = None,
    progress=None,
) -> Checkpoint:
    """Train to ``config.steps`` total steps; writes ``metrics.csv`` and checkpoints under ``out_dir``.

    With ``resume`` the run continues from the checkpoint's step, RNG and
    optimizer moments, reproducing the uninterrupted trajectory exactly.
    """
    if len(dataset) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out}: {exc}") from exc

    if resume is not None:
        codec = resume.codec
        state = from_checkpoint(resume, replace(resume.config, steps=config.steps))
    else:
        codec = prepare_codec(config, dataset)
        latent = codec.latent_shape(np.shape(dataset[0].pre))
        config = replace(config, model=config.model.with_latent_shape(latent))
        state = init_state(config)
    latents = encode_dataset(dataset, codec)

    metrics_path = out / "metrics.csv" if out is not None else None
    if metrics_path is not None and (resume is None or not metrics_path.exists()):
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["step", "loss", "grad_norm"])

    n = len(latents)
    cfg = state.config
    rows = []
    while state.step < cfg.steps:
        idx = state.rng.integers(0, n, size=cfg.batch)
        state, info = train_step(state, [latents[i] for i in idx], dump_dir=out)
        rows.append((state.step, repr(info["loss"]), repr(info["grad_norm"])))
        if progress is not None:
            progress(state.step, info)
        if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            _flush_metrics(metrics_path, rows)
            save_checkpoint(to_checkpoint(state, codec), out / f"step{state.step:07d}.bbck")
    ckpt = to_checkpoint(state, codec)
    if out is not None:
        _flush_metrics(metrics_path, rows)
        save_checkpoint(ckpt, out / "final.bbck")
    return ckpt


def _flush_metrics(path, rows):
    if path is None or not rows:
        return
    with open(path, "a", newline="") as fh:
        csv.writer(fh).writerows(rows)
    rows.clear()


def read_metrics(path) -> np.ndarray:
    """``(steps, 3)`` array of ``step, loss, grad_norm`` rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["step", "loss", "grad_norm"]:
            raise FormatError(f"{path}: unexpected metrics header {header}")
        return np.array([[float(x) for x in row] for row in reader]).reshape(-1, 3)


# -- BBCK1 ------------------------------------------------------------------


def _tensor_table(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    table = {}
    for prefix, group in (("param", ckpt.params), ("adam_m", ckpt.opt_m), ("adam_v", ckpt.opt_v), ("codec", ckpt.codec.tensors)):
        for name, arr in group.items():
            table[f"{prefix}/{name}"] = arr
    return dict(sorted(table.items()))


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    blobs, entries, offset = [], [], 0
    for name, arr in _tensor_table(ckpt).items():
        blob = tensor_to_bytes(arr)
        entries.append({"name": name, "offset": offset, "nbytes": len(blob), "shape": list(np.shape(arr))})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format": "BBCK1",
        "config": ckpt.config.to_dict(),
        "schedule": ckpt.schedule.to_config(),
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "codec": {"mode": ckpt.codec.mode, "input_shape": list(ckpt.codec.input_shape) if ckpt.codec.input_shape else None},
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)


def checkpoint_from_bytes(data: bytes, source: str = "<bytes>") -> Checkpoint:
    import io

    if data[:5] != CHECKPOINT_MAGIC:
        raise FormatError(f"{source}: bad checkpoint magic {data[:5]!r}, expected {CHECKPOINT_MAGIC!r}")
    if len(data) < 13:
        raise FormatError(f"{source}: truncated checkpoint header")
    (n,) = struct.unpack("<Q", data[5:13])
    if len(data) < 13 + n:
        raise FormatError(f"{source}: truncated checkpoint manifest")
    try:
        manifest = json.loads(data[13 : 13 + n])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: corrupt checkpoint manifest: {exc}") from exc
    payload = data[13 + n :]
    groups = {"param": {}, "adam_m": {}, "adam_v": {}, "codec": {}}
    for entry in manifest["tensors"]:
        name, off, nb = entry["name"], entry["offset"], entry["nbytes"]
        if off + nb > len(payload):
            raise IntegrityError(f"{source}: tensor {name!r} listed in manifest is missing from payload")
        try:
            arr = read_tensor(io.BytesIO(payload[off : off + nb]))
        except FormatError as exc:
            raise IntegrityError(f"{source}: tensor {name!r}: {exc}") from exc
        if list(arr.shape) != entry["shape"]:
            raise IntegrityError(f"{source}: tensor {name!r} has shape {list(arr.shape)}, manifest says {entry['shape']}")
        prefix, _, key = name.partition("/")
        if prefix not in groups:
            raise IntegrityError(f"{source}: unknown tensor group in {name!r}")
        groups[prefix][key] = arr
    config = TrainConfig.from_dict(manifest["config"])
    if manifest["schedule"] != {"T": config.T, "s": config.s}:
        raise IntegrityError(f"{source}: schedule block disagrees with config")
    cinfo = manifest["codec"]
    codec = CodecParams(cinfo["mode"], cinfo["input_shape"], groups["codec"])
    return Checkpoint(config, groups["param"], groups["adam_m"], groups["adam_v"], manifest["step"], manifest["rng_state"], codec)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(checkpoint_to_bytes(ckpt))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    return checkpoint_from_bytes(data, source=str(path))
