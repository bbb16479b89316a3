"""Bit-exact reading and writing of safetensors-style checkpoint files.

One file = u64 little-endian header length, a UTF-8 JSON header mapping
tensor names to {"dtype", "shape", "data_offsets"}, then the raw
little-endian payload. Real model snapshots and toy-lab checkpoints go
through the same loader so downstream analysis never special-cases its
input.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np

__all__ = [
    "TensorRecord",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "CheckpointError",
    "HeaderError",
    "PayloadError",
    "DuplicateTensorError",
    "ShapeMismatchError",
    "UnsupportedDtypeError",
    "OverlapError",
    "SUPPORTED_DTYPES",
]

# dtype tag -> (numpy little-endian dtype, bytes per element)
SUPPORTED_DTYPES: Dict[str, Tuple[np.dtype, int]] = {
    "F64": (np.dtype("<f8"), 8),
    "F32": (np.dtype("<f4"), 4),
    "F16": (np.dtype("<f2"), 2),
}

_HEADER_LEN_BYTES = 8
# Defensive cap; a header this large is corruption, not a real checkpoint.
_MAX_HEADER_LEN = 100 * 1024 * 1024


class CheckpointError(Exception):
    """Base class for checkpoint file errors."""


class HeaderError(CheckpointError):
    """Malformed header. `offset` is the absolute byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PayloadError(CheckpointError):
    """Declared tensor spans disagree with the actual payload size."""


class DuplicateTensorError(CheckpointError):
    """Two tensors share a name."""


class ShapeMismatchError(CheckpointError):
    """Declared shape does not match the declared byte span."""


class UnsupportedDtypeError(CheckpointError):
    """Dtype tag outside the supported set."""


class OverlapError(CheckpointError):
    """Two tensor byte spans overlap."""


@dataclass(frozen=True)
class TensorRecord:
    """One named parameter tensor.

    `values` is the flat row-major buffer in the stored dtype; use
    :meth:`as_f64` for analysis so low-precision storage never leaks into
    accumulation.
    """

    name: str
    dtype: str
    shape: Tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ValueError("tensor name must be non-empty")
        if self.dtype not in SUPPORTED_DTYPES:
            raise UnsupportedDtypeError(f"unsupported dtype {self.dtype!r} for tensor {self.name!r}")
        if any(d < 0 for d in self.shape):
            raise ValueError(f"negative extent in shape {self.shape} for tensor {self.name!r}")
        expected = math.prod(self.shape)
        if self.values.ndim != 1 or len(self.values) != expected:
            raise ValueError(
                f"tensor {self.name!r}: shape {self.shape} implies {expected} elements, "
                f"buffer has {self.values.size}"
            )
        np_dtype = SUPPORTED_DTYPES[self.dtype][0]
        if self.values.dtype != np_dtype:
            raise ValueError(
                f"tensor {self.name!r}: buffer dtype {self.values.dtype} does not match tag {self.dtype}"
            )

    @property
    def num_elements(self) -> int:
        return math.prod(self.shape)

    @property
    def num_bytes(self) -> int:
        return self.num_elements * SUPPORTED_DTYPES[self.dtype][1]

    def as_f64(self) -> np.ndarray:
        """Widen to f64 (f16 -> f32 -> f64; every step exact)."""
        if self.dtype == "F16":
            return self.values.astype(np.float32).astype(np.float64)
        return self.values.astype(np.float64)

    def to_bytes(self) -> bytes:
        return self.values.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorRecord):
            return NotImplemented
        return (
            self.name == other.name
            and self.dtype == other.dtype
            and self.shape == other.shape
            and self.to_bytes() == other.to_bytes()
        )

    def __hash__(self):
        return hash((self.name, self.dtype, self.shape))


def tensor_from_array(name: str, array: np.ndarray, dtype: str = "F64") -> TensorRecord:
    """Build a TensorRecord from any numpy array, casting to the stored dtype."""
    np_dtype = SUPPORTED_DTYPES[dtype][0]
    arr = np.ascontiguousarray(array)
    return TensorRecord(
        name=name,
        dtype=dtype,
        shape=tuple(int(d) for d in arr.shape),
        values=arr.reshape(-1).astype(np_dtype),
    )


@dataclass
class Checkpoint:
    """Ordered, immutable-by-convention collection of named tensors."""

    tensors: Dict[str, TensorRecord] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)

    def add(self, record: TensorRecord) -> None:
        if record.name in self.tensors:
            raise DuplicateTensorError(f"duplicate tensor name {record.name!r}")
        self.tensors[record.name] = record

    @property
    def component_count(self) -> int:
        return len(self.tensors)

    def names(self) -> List[str]:
        return sorted(self.tensors)

    def __getitem__(self, name: str) -> TensorRecord:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[TensorRecord]:
        for name in self.names():
            yield self.tensors[name]

    def __len__(self) -> int:
        return len(self.tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if self.meta != other.meta or set(self.tensors) != set(other.tensors):
            return False
        return all(self.tensors[n] == other.tensors[n] for n in self.tensors)


def _parse_header(raw: bytes) -> List[Tuple[str, object]]:
    """Decode the JSON header preserving order and rejecting duplicate keys."""
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise HeaderError("header is not valid UTF-8", _HEADER_LEN_BYTES + exc.start) from exc

    pairs: List[Tuple[str, object]] = []

    def _collect(items):
        # Only the top-level object needs duplicate detection / ordering;
        # json calls the hook innermost-first, so the last call wins.
        nonlocal pairs
        pairs = items
        return dict(items)

    try:
        decoded = json.loads(text, object_pairs_hook=_collect)
    except json.JSONDecodeError as exc:
        raise HeaderError(f"header is not valid JSON: {exc.msg}", _HEADER_LEN_BYTES + exc.pos) from exc
    if not isinstance(decoded, dict):
        raise HeaderError("header must be a JSON object", _HEADER_LEN_BYTES)

    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise DuplicateTensorError(f"duplicate tensor name {key!r} in header")
        seen.add(key)
    return pairs


def _validate_entry(name: str, entry: object) -> Tuple[str, Tuple[int, ...], int, int]:
    if not isinstance(entry, dict):
        raise HeaderError(f"entry for {name!r} must be an object", _HEADER_LEN_BYTES)
    try:
        dtype = entry["dtype"]
        shape = entry["shape"]
        offsets = entry["data_offsets"]
    except (KeyError, TypeError) as exc:
        raise HeaderError(f"entry for {name!r} is missing {exc}", _HEADER_LEN_BYTES) from exc
    if dtype not in SUPPORTED_DTYPES:
        raise UnsupportedDtypeError(f"tensor {name!r} has unsupported dtype {dtype!r}")
    if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise HeaderError(f"tensor {name!r} has invalid shape {shape!r}", _HEADER_LEN_BYTES)
    if (
        not isinstance(offsets, list)
        or len(offsets) != 2
        or not all(isinstance(o, int) and o >= 0 for o in offsets)
        or offsets[0] > offsets[1]
    ):
        raise HeaderError(f"tensor {name!r} has invalid data_offsets {offsets!r}", _HEADER_LEN_BYTES)
    begin, end = offsets
    itemsize = SUPPORTED_DTYPES[dtype][1]
    expected_bytes = math.prod(shape) * itemsize
    if end - begin != expected_bytes:
        raise ShapeMismatchError(
            f"tensor {name!r}: shape {shape} x {dtype} needs {expected_bytes} bytes, "
            f"data_offsets span {end - begin}"
        )
    return dtype, tuple(shape), begin, end


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Load a checkpoint file, validating format, spans, and uniqueness.

    Raises a distinct :class:`CheckpointError` subclass per failure
    category; malformed headers report the offending byte offset.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER_LEN_BYTES:
        raise HeaderError("file too short for header length", 0)
    (header_len,) = struct.unpack("<Q", blob[:_HEADER_LEN_BYTES])
    if header_len > _MAX_HEADER_LEN:
        raise HeaderError(f"header length {header_len} exceeds sanity cap", 0)
    if len(blob) < _HEADER_LEN_BYTES + header_len:
        raise HeaderError(
            f"declared header length {header_len} exceeds file size {len(blob)}", 0
        )

    pairs = _parse_header(blob[_HEADER_LEN_BYTES : _HEADER_LEN_BYTES + header_len])
    payload = blob[_HEADER_LEN_BYTES + header_len :]
    payload_len = len(payload)

    meta: Dict[str, str] = {}
    spans: List[Tuple[int, int, str]] = []
    ckpt = Checkpoint()
    for name, entry in pairs:
        if name == "__metadata__":
            if not isinstance(entry, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in entry.items()
            ):
                raise HeaderError("__metadata__ must be a string-to-string map", _HEADER_LEN_BYTES)
            meta = dict(entry)
            continue
        dtype, shape, begin, end = _validate_entry(name, entry)
        if end > payload_len:
            raise PayloadError(
                f"tensor {name!r} span [{begin}, {end}) exceeds payload of {payload_len} bytes "
                "(truncated payload)"
            )
        spans.append((begin, end, name))
        np_dtype = SUPPORTED_DTYPES[dtype][0]
        values = np.frombuffer(payload[begin:end], dtype=np_dtype).copy()
        ckpt.add(TensorRecord(name=name, dtype=dtype, shape=shape, values=values))

    # Overlap check over non-empty spans and end alignment with file length.
    occupied = sorted((s for s in spans if s[0] != s[1]), key=lambda s: (s[0], s[1]))
    for (b1, e1, n1), (b2, e2, n2) in zip(occupied, occupied[1:]):
        if b2 < e1:
            raise OverlapError(f"tensor {n2!r} span overlaps {n1!r}")
    max_end = max((e for _, e, _ in spans), default=0)
    if max_end != payload_len:
        raise PayloadError(
            f"payload is {payload_len} bytes but tensor spans end at {max_end} (trailing bytes)"
        )

    ckpt.meta = meta
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    """Write the canonical serialization: tensors in lexicographic name
    order, compact JSON, offsets packed back to back.

    Equal checkpoints always produce identical bytes, so saved files can be
    compared with plain byte equality.
    """
    path = Path(path)
    names = ckpt.names()

    header_items: List[str] = []
    if ckpt.meta:
        for k, v in ckpt.meta.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ValueError("checkpoint metadata must map strings to strings")
        header_items.append(
            json.dumps("__metadata__") + ":" + json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":"))
        )

    offset = 0
    chunks: List[bytes] = []
    for name in names:
        rec = ckpt.tensors[name]
        data = rec.to_bytes()
        entry = {
            "dtype": rec.dtype,
            "shape": list(rec.shape),
            "data_offsets": [offset, offset + len(data)],
        }
        header_items.append(json.dumps(name) + ":" + json.dumps(entry, separators=(",", ":")))
        chunks.append(data)
        offset += len(data)

    header = ("{" + ",".join(header_items) + "}").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def checkpoint_from_arrays(
    arrays: Mapping[str, np.ndarray],
    dtype: str = "F64",
    meta: Optional[Mapping[str, str]] = None,
) -> Checkpoint:
    """Convenience constructor used by the toy lab and tests."""
    ckpt = Checkpoint(meta=dict(meta or {}))
    for name, arr in arrays.items():
        ckpt.add(tensor_from_array(name, arr, dtype=dtype))
    return ckpt
