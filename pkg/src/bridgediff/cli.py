"""Command-line interface.

Exit codes: 0 success, 1 check or validation failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bridge import sample
from .codec import decode, encode
from .conditioning import ConditionPayload
from .data import (
    labels_of,
    make_pointcloud_dataset,
    make_scene_dataset,
    read_condition_map,
    read_dataset,
    read_image,
    write_dataset,
    write_image,
)
from .denoiser import make_denoiser
from .evaluation import layout_iou, mmd, mode_accuracy
from .exceptions import BridgeError, TrainingDivergedError
from .numerics import load_tensor, make_rng, save_tensor
from .selfcheck import FAULTS, format_results, run_selfcheck
from .training import TrainConfig, load_checkpoint, train_loop

log = logging.getLogger("bridgediff")

METRICS = ("mmd", "mode_accuracy", "layout_iou")


def parse_cond(text: str) -> ConditionPayload:
    """``label:<int>`` | ``mask:<path.pgm>`` | ``semantic:<path.pgm>`` | ``none``."""
    if text == "none":
        return ConditionPayload.none()
    kind, sep, value = text.partition(":")
    if not sep or not value:
        raise BridgeError(f"bad --cond value {text!r}")
    if kind == "label":
        try:
            return ConditionPayload("label", label=int(value))
        except ValueError as exc:
            raise BridgeError(f"bad label in --cond {text!r}") from exc
    if kind == "mask":
        return read_condition_map(value, "layout")
    if kind == "semantic":
        return read_condition_map(value, "semantic")
    raise BridgeError(f"unknown condition kind in --cond {text!r}")


def _ensure_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _generate(ckpt, pre_pixels, conds, steps, seed, stochastic=False, full_trace=False):
    """Encode, reverse-sample in latent space, decode. Returns ``(pixels, trace)``."""
    sched = ckpt.schedule
    z_a = encode(ckpt.codec, pre_pixels)
    rng = make_rng(seed, stream=4)
    trace = sample(sched, make_denoiser(ckpt.params, ckpt.config.model), z_a, conds, S=steps or sched.T,
                   rng=rng, stochastic=stochastic, full_trace=full_trace)
    return decode(ckpt.codec, trace.final), trace


# -- commands ---------------------------------------------------------------


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(fault=args.inject_fault)
    print(format_results(results))
    if args.json:
        Path(args.json).write_text(json.dumps([r.__dict__ for r in results], indent=2))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"selfcheck failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_make_data(args) -> int:
    rng = make_rng(args.seed)
    if args.kind == "points":
        samples = make_pointcloud_dataset(args.n, rng)
    else:
        samples = make_scene_dataset(args.n, args.size, args.size, rng)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, samples)
    print(f"wrote {len(samples)} {args.kind} records to {out}")
    return 0


def cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    config = TrainConfig.from_dict(raw)
    dataset = read_dataset(args.data)
    out = _ensure_dir(args.out)
    resume = load_checkpoint(args.resume) if args.resume else None

    def progress(step, info):
        if step % max(1, config.steps // 10) == 0:
            log.info("step %d loss %.5f grad_norm %.3f", step, info["loss"], info["grad_norm"])

    ckpt = train_loop(config, dataset, out_dir=out, resume=resume, progress=progress)
    print(f"trained {ckpt.step} steps; checkpoint {out / 'final.bbck'}, metrics {out / 'metrics.csv'}")
    return 0


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    if args.pre:
        pre = load_tensor(args.pre) if args.pre.endswith((".bbt", ".bbt1")) else read_image(args.pre)
        input_shape = tuple(ckpt.config.model.latent_shape) if ckpt.codec.mode == "identity" else ckpt.codec.input_shape
        if pre.shape == input_shape:
            pre = np.broadcast_to(pre, (args.n,) + pre.shape).copy()
        cond = parse_cond(args.cond or "none")
        conds = [cond] * len(pre)
    elif args.data:
        records = read_dataset(args.data)[: args.n]
        pre = np.stack([r.pre for r in records])
        conds = [parse_cond(args.cond) for _ in records] if args.cond else [r.cond for r in records]
    else:
        raise BridgeError("sample needs --pre or --data")
    pixels, trace = _generate(ckpt, pre, conds, args.steps, args.seed, args.stochastic, args.trace)
    out = _ensure_dir(args.out)
    save_tensor(out / "samples.bbt", pixels)
    if pixels.ndim in (3, 4) and (pixels.ndim == 3 or pixels.shape[-1] == 3):
        ext = "pgm" if pixels.ndim == 3 else "ppm"
        for i, img in enumerate(pixels):
            write_image(out / f"sample_{i:04d}.{ext}", img)
    if args.trace:
        save_tensor(out / "trace.bbt", trace.stack())
        (out / "trace_steps.json").write_text(json.dumps(trace.timesteps) + "\n")
    print(f"wrote {len(pixels)} samples to {out}" + (f" with a {len(trace.steps)}-state trace" if args.trace else ""))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    records = read_dataset(args.data)
    if args.n:
        records = records[: args.n]
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise BridgeError(f"unknown metrics {sorted(unknown)}; choose from {METRICS}")
    pre = np.stack([r.pre for r in records])
    generated, _ = _generate(ckpt, pre, [r.cond for r in records], args.steps, args.seed)
    report: dict = {"n": len(records), "steps": args.steps or ckpt.config.T, "seed": args.seed}
    if "mode_accuracy" in metrics:
        if any(r.cond.kind != "label" for r in records):
            raise BridgeError("mode_accuracy needs label-conditioned records")
        report["mode_accuracy"] = mode_accuracy(generated, labels_of(records), pre)
    if "mmd" in metrics:
        ref = read_dataset(args.reference) if args.reference else records
        post = np.stack([r.post for r in ref])
        report["mmd"] = mmd(generated, post)
        report["mmd_pre_baseline"] = mmd(pre, post)
    if "layout_iou" in metrics:
        scores = [layout_iou(g, r.pre, r.cond.mask, args.threshold) for g, r in zip(generated, records) if r.cond.kind == "layout"]
        if not scores:
            raise BridgeError("layout_iou needs layout-conditioned records")
        report["layout_iou"] = float(np.mean(scores))
        report["layout_iou_threshold"] = args.threshold
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for key in sorted(report):
        print(f"{key:>20}: {report[key]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bridgediff", description="Conditional Brownian-bridge diffusion toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("selfcheck", help="run the identity/oracle suite")
    sc.add_argument("--inject-fault", choices=sorted(FAULTS), help=argparse.SUPPRESS)
    sc.add_argument("--json", help="also write results as JSON")
    sc.set_defaults(func=cmd_selfcheck)

    md = sub.add_parser("make-data", help="generate a synthetic BBDS1 dataset")
    md.add_argument("--kind", choices=("points", "scenes"), required=True)
    md.add_argument("--n", type=int, required=True)
    md.add_argument("--out", required=True)
    md.add_argument("--seed", type=int, default=0)
    md.add_argument("--size", type=int, default=16, help="scene height and width")
    md.set_defaults(func=cmd_make_data)

    tr = sub.add_parser("train", help="train a denoiser")
    tr.add_argument("--config", help="JSON training config (defaults if omitted)")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.set_defaults(func=cmd_train)

    sa = sub.add_parser("sample", help="generate post-event samples")
    sa.add_argument("--ckpt", required=True)
    src = sa.add_mutually_exclusive_group(required=True)
    src.add_argument("--pre", help="pre-event input (.bbt tensor or PGM/PPM image)")
    src.add_argument("--data", help="BBDS1 dataset supplying pre-event inputs and conditions")
    sa.add_argument("--cond", help="label:<int> | mask:<path.pgm> | semantic:<path.pgm> | none")
    sa.add_argument("--steps", type=int, default=None, help="inference steps S (default: T)")
    sa.add_argument("--n", type=int, default=1)
    sa.add_argument("--seed", type=int, default=0)
    sa.add_argument("--out", required=True)
    sa.add_argument("--trace", action="store_true", help="store every reverse-chain state")
    sa.add_argument("--stochastic", action="store_true", help="keep the posterior noise term")
    sa.set_defaults(func=cmd_sample)

    ev = sub.add_parser("eval", help="sample from a dataset and score it")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--metrics", default="mmd,mode_accuracy")
    ev.add_argument("--reference", help="dataset whose post-event samples are the MMD reference")
    ev.add_argument("--steps", type=int, default=None)
    ev.add_argument("--n", type=int, default=None)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--threshold", type=float, default=0.3)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BridgeError, TrainingDivergedError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
