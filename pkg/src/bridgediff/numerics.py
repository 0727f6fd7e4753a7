"""Random streams, tensor validation and the BBT1 binary tensor format.

Tensors are plain C-contiguous ``float64`` numpy arrays; :func:`as_tensor`
is the single gate through which external data enters the library.
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO, Sequence

import numpy as np

from .exceptions import FormatError, InvalidShapeError

BBT1_MAGIC = b"BBT1"
_MAX_ELEMENTS = 2**48


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for the ``(seed, stream)`` pair; identical pairs give identical draws."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(seq))


def split_rng(rng: np.random.Generator) -> tuple[np.random.Generator, np.random.Generator]:
    """Derive two independent child generators.

    The children are keyed by 256 bits drawn from ``rng``, so the parent
    advances and never replays the children's streams.
    """
    entropy = rng.integers(0, 2**64, size=4, dtype=np.uint64)
    seq = np.random.SeedSequence([int(e) for e in entropy])
    left, right = seq.spawn(2)
    return np.random.Generator(np.random.PCG64(left)), np.random.Generator(np.random.PCG64(right))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bitgen = np.random.PCG64()
    bitgen.state = state
    return np.random.Generator(bitgen)


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d <= 0 for d in shape):
        raise InvalidShapeError(f"shape must be non-empty with positive dims, got {shape}")
    total = 1
    for d in shape:
        total *= d
        if total > _MAX_ELEMENTS:
            raise InvalidShapeError(f"shape {shape} overflows the element limit")
    return shape


def sample_standard_normal(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    return rng.standard_normal(check_shape(shape))


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a contiguous float64 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidShapeError(f"{name} contains non-finite values")
    return arr


def check_same_shape(*arrays: np.ndarray, names: Sequence[str] = ()) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        label = ", ".join(names) if names else "inputs"
        raise InvalidShapeError(f"shape mismatch between {label}: {[np.shape(a) for a in arrays]}")


# -- BBT1 ------------------------------------------------------------------


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = BBT1_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> int:
    blob = tensor_to_bytes(arr)
    fh.write(blob)
    return len(blob)


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != BBT1_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {BBT1_MAGIC!r}")
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError("truncated tensor header")
    (rank,) = struct.unpack("<I", raw)
    raw = fh.read(4 * rank)
    if len(raw) != 4 * rank:
        raise FormatError("truncated tensor dims")
    shape = struct.unpack(f"<{rank}I", raw)
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise FormatError(f"truncated tensor payload: expected {8 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    fh = io.BytesIO(blob)
    arr = read_tensor(fh)
    if fh.read(1):
        raise FormatError("trailing bytes after tensor")
    return arr


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
