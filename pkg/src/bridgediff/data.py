"""Paired pre/post datasets: synthetic generators, the BBDS1 container and PNM ingestion."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditioning import ConditionPayload
from .exceptions import FormatError, InvalidConditionError, InvalidInputError, InvalidShapeError
from .numerics import read_tensor, tensor_to_bytes

DATASET_MAGIC = b"BBDS1"
SHIFT = 2.0
JITTER = 0.1
CHECKER_LEVELS = (0.1, 0.4)
INSERT_LEVEL = 0.9


@dataclass(eq=False)
class PairedSample:
    pre: np.ndarray
    post: np.ndarray
    cond: ConditionPayload

    def __post_init__(self):
        self.pre = np.asarray(self.pre, dtype=np.float64)
        self.post = np.asarray(self.post, dtype=np.float64)
        if self.pre.shape != self.post.shape:
            raise InvalidShapeError(f"pre {self.pre.shape} and post {self.post.shape} differ")
        if self.cond is None:
            self.cond = ConditionPayload.none()

    def __eq__(self, other):
        if not isinstance(other, PairedSample):
            return NotImplemented
        return (
            self.pre.shape == other.pre.shape
            and np.array_equal(self.pre, other.pre)
            and np.array_equal(self.post, other.post)
            and self.cond == other.cond
        )


# -- synthetic generators ---------------------------------------------------


def make_pointcloud_dataset(n: int, rng) -> list[PairedSample]:
    """2-D two-mode task: label 0 moves a point by (+2, 0), label 1 by (-2, 0), plus N(0, 0.1^2) jitter."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    pre = rng.standard_normal((n, 2))
    labels = rng.integers(0, 2, size=n)
    jitter = JITTER * rng.standard_normal((n, 2))
    shift = np.where(labels == 0, SHIFT, -SHIFT)
    post = pre + np.stack([shift, np.zeros(n)], axis=1) + jitter
    return [PairedSample(pre[i], post[i], ConditionPayload("label", label=int(labels[i]))) for i in range(n)]


def checkerboard(H: int, W: int, cell: int = 4, phase: int = 0) -> np.ndarray:
    r, c = np.meshgrid(np.arange(H) // cell, np.arange(W) // cell, indexing="ij")
    lo, hi = CHECKER_LEVELS
    return np.where((r + c + phase) % 2 == 0, lo, hi)


def random_rectangle(H: int, W: int, rng, min_frac: float = 0.1, max_frac: float = 0.4) -> np.ndarray:
    area_lo, area_hi = min_frac * H * W, max_frac * H * W
    while True:
        h = int(rng.integers(1, H + 1))
        w = int(rng.integers(1, W + 1))
        if area_lo <= h * w <= area_hi:
            break
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    mask = np.zeros((H, W))
    mask[top : top + h, left : left + w] = 1.0
    return mask


def insert_object(pre: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask > 0, INSERT_LEVEL, pre)


def make_scene_dataset(n: int, H: int = 16, W: int = 16, rng=None, noise: float = 0.05) -> list[PairedSample]:
    """Gray scenes: checkerboard + noise before, a bright rectangle inserted after.

    The rectangle covers 10-40% of the image and is also the layout condition.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if H < 2 or W < 2 or H % 4 or W % 4:
        raise InvalidShapeError(f"scene dims must be positive multiples of 4, got {H}x{W}")
    out = []
    for _ in range(n):
        phase = int(rng.integers(0, 2))
        pre = checkerboard(H, W, phase=phase) + noise * rng.standard_normal((H, W))
        mask = random_rectangle(H, W, rng)
        out.append(PairedSample(pre, insert_object(pre, mask), ConditionPayload("layout", mask=mask)))
    return out


def labels_of(samples) -> np.ndarray:
    return np.array([s.cond.label for s in samples])


# -- BBDS1 ------------------------------------------------------------------


def _record_entry(s: PairedSample) -> dict:
    entry = {"kind": s.cond.kind, "shape": list(s.pre.shape)}
    if s.cond.kind == "label":
        entry["label"] = s.cond.label
    if s.cond.mask is not None:
        entry["mask_shape"] = list(s.cond.mask.shape)
    return entry


def dataset_to_bytes(samples) -> bytes:
    records = [_record_entry(s) for s in samples]
    manifest = {
        "format": "BBDS1",
        "count": len(samples),
        "kinds": sorted({r["kind"] for r in records}),
        "dims": sorted({tuple(r["shape"]) for r in records}),
        "records": records,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    body = io.BytesIO()
    for s in samples:
        body.write(tensor_to_bytes(s.pre))
        body.write(tensor_to_bytes(s.post))
        if s.cond.mask is not None:
            body.write(tensor_to_bytes(s.cond.mask))
    return DATASET_MAGIC + struct.pack("<Q", len(head)) + head + body.getvalue()


def dataset_from_bytes(data: bytes, source: str = "<bytes>") -> list[PairedSample]:
    if data[:5] != DATASET_MAGIC:
        raise FormatError(f"{source}: bad dataset magic {data[:5]!r}, expected {DATASET_MAGIC!r}")
    if len(data) < 13:
        raise FormatError(f"{source}: truncated dataset header")
    (n,) = struct.unpack("<Q", data[5:13])
    try:
        manifest = json.loads(data[13 : 13 + n])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{source}: corrupt dataset manifest: {exc}") from exc
    records = manifest.get("records", [])
    if manifest.get("count") != len(records):
        raise FormatError(f"{source}: manifest count {manifest.get('count')} != {len(records)} records")
    fh = io.BytesIO(data[13 + n :])
    out = []
    for i, entry in enumerate(records):
        try:
            pre = read_tensor(fh)
            post = read_tensor(fh)
            mask = read_tensor(fh) if entry["kind"] in ("layout", "semantic") else None
            if list(pre.shape) != entry["shape"]:
                raise FormatError(f"shape {list(pre.shape)} != manifest {entry['shape']}")
            cond = ConditionPayload(entry["kind"], label=entry.get("label"), mask=mask)
            out.append(PairedSample(pre, post, cond))
        except (FormatError, InvalidConditionError, InvalidShapeError, KeyError) as exc:
            raise FormatError(f"{source}: record {i}: {exc}") from exc
    if fh.read(1):
        raise FormatError(f"{source}: trailing bytes after record {len(records) - 1}")
    return out


def write_dataset(path, samples) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(samples))


def read_dataset(path) -> list[PairedSample]:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read(), source=str(path))


# -- PGM / PPM --------------------------------------------------------------


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PNM header")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1  # single whitespace byte before the raster


def read_pnm_raw(path) -> np.ndarray:
    """Raw 8-bit raster: ``(H, W)`` for P5, ``(H, W, 3)`` for P6."""
    data = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), start = _pnm_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, FormatError) as exc:
        raise FormatError(f"{path}: bad PNM header: {exc}") from exc
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM type {magic!r} (need P5 or P6)")
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PNM (maxval 255) is supported, got {maxval}")
    ch = 3 if magic == b"P6" else 1
    raster = data[start : start + w * h * ch]
    if len(raster) != w * h * ch:
        raise FormatError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape((h, w, ch) if ch == 3 else (h, w))
    return arr.copy()


def read_image(path) -> np.ndarray:
    return read_pnm_raw(path).astype(np.float64) / 255.0


def write_pnm_raw(path, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise InvalidShapeError(f"cannot write array of shape {arr.shape} as PNM")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def write_image(path, img) -> None:
    """Clip to [0, 1] and quantise with ``round(v * 255)``."""
    write_pnm_raw(path, np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0))


def read_condition_map(path, kind: str) -> ConditionPayload:
    """Load a PGM whose pixel values are class ids (layout: 0/1)."""
    raw = read_pnm_raw(path)
    if raw.ndim != 2:
        raise InvalidConditionError(f"{path}: condition maps must be grayscale PGM")
    try:
        return ConditionPayload(kind, mask=raw.astype(np.float64))
    except InvalidConditionError as exc:
        raise InvalidConditionError(f"{path}: {exc}") from exc


def ingest_image_pairs(dir_pre, dir_post, dir_cond=None, kind: str = "layout") -> list[PairedSample]:
    """Match ``stem.{pgm,ppm}`` files across the directories into samples."""

    def index(d):
        return {p.stem: p for p in sorted(Path(d).iterdir()) if p.suffix.lower() in (".pgm", ".ppm")}

    pre, post = index(dir_pre), index(dir_post)
    conds = index(dir_cond) if dir_cond is not None else {}
    out = []
    for stem, p in pre.items():
        if stem not in post:
            raise InvalidInputError(f"no post-event image for {stem!r} in {dir_post}")
        a, b = read_image(p), read_image(post[stem])
        if a.shape != b.shape:
            raise InvalidShapeError(f"{stem!r}: pre {a.shape} and post {b.shape} differ")
        if kind == "none":
            cond = ConditionPayload.none()
        else:
            if stem not in conds:
                raise InvalidInputError(f"no condition map for {stem!r} in {dir_cond}")
            cond = read_condition_map(conds[stem], kind)
            if cond.mask.shape != a.shape[:2]:
                raise InvalidShapeError(f"{stem!r}: condition {cond.mask.shape} vs image {a.shape[:2]}")
        out.append(PairedSample(a, b, cond))
    extra = set(post) - set(pre)
    if extra:
        raise InvalidInputError(f"post-event images without a pre-event match: {sorted(extra)}")
    return out
