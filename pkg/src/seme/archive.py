"""Tensor archives and model bundles.

On-disk layout::

    [u64 little-endian manifest length N][N bytes UTF-8 JSON manifest][payload]

The manifest maps each tensor name to ``{"dtype": "F32", "shape": [...],
"data_offsets": [begin, end]}`` with offsets relative to the start of the
payload, plus an optional ``"__metadata__"`` string map.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

METADATA_KEY = "__metadata__"
ORIENTATION_KEY = "lm_head_orientation"
LATENT_MAJOR = "latent_major"  # d x v
VOCAB_MAJOR = "vocab_major"  # v x d
_LE_F32 = np.dtype("<f4")


class ArchiveError(ValueError):
    """Raised for malformed archives and invalid tensor content."""


class BundleError(ValueError):
    """Raised when an archive cannot be assembled into a model bundle."""


@dataclass(frozen=True)
class Tensor:
    name: str
    array: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.array, dtype=np.float32)
        if any(int(n) <= 0 for n in arr.shape):
            raise ArchiveError(f"tensor {self.name!r} has non-positive dimension {arr.shape}")
        if arr is self.array:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.array.shape)

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self.array.reshape(-1)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.array).all())


@dataclass(frozen=True)
class TensorArchive:
    tensors: tuple[Tensor, ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tensors", tuple(self.tensors))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None):
        return cls(tuple(Tensor(k, v) for k, v in arrays.items()), metadata or {})

    def names(self) -> list[str]:
        return [t.name for t in self.tensors]

    def __getitem__(self, name: str) -> Tensor:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(t.name == name for t in self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def validate(self) -> None:
        seen = set()
        for t in self.tensors:
            if t.name == METADATA_KEY:
                raise ArchiveError(f"tensor name {METADATA_KEY!r} is reserved")
            if t.name in seen:
                raise ArchiveError(f"duplicate tensor name {t.name!r}")
            seen.add(t.name)
            if not t.is_finite():
                raise ArchiveError(f"tensor {t.name!r} contains non-finite values")
        for k, v in self.metadata.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ArchiveError("metadata must map strings to strings")


def encode_archive(archive: TensorArchive) -> bytes:
    archive.validate()
    manifest: dict[str, object] = {}
    if archive.metadata:
        manifest[METADATA_KEY] = dict(archive.metadata)
    chunks = []
    offset = 0
    for t in archive.tensors:
        buf = t.array.astype(_LE_F32, copy=False).tobytes(order="C")
        manifest[t.name] = {
            "dtype": "F32",
            "shape": list(t.shape),
            "data_offsets": [offset, offset + len(buf)],
        }
        chunks.append(buf)
        offset += len(buf)
    header = json.dumps(manifest, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return struct.pack("<Q", len(header)) + header + b"".join(chunks)


def decode_archive(raw: bytes) -> TensorArchive:
    if len(raw) < 8:
        raise ArchiveError("malformed header: file shorter than 8 bytes")
    (n,) = struct.unpack("<Q", raw[:8])
    if n > len(raw) - 8:
        raise ArchiveError("malformed header: manifest length exceeds file size")
    try:
        manifest = json.loads(raw[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"malformed header: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ArchiveError("malformed header: manifest is not a JSON object")
    payload = memoryview(raw)[8 + n :]

    metadata = manifest.pop(METADATA_KEY, {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise ArchiveError("malformed header: __metadata__ must be a string map")

    entries = []
    for name, info in manifest.items():
        if not isinstance(info, dict):
            raise ArchiveError(f"malformed header: entry {name!r} is not an object")
        dtype = info.get("dtype")
        if dtype != "F32":
            raise ArchiveError(f"unsupported dtype {dtype!r} for tensor {name!r}")
        shape = info.get("shape")
        offsets = info.get("data_offsets")
        if (
            not isinstance(shape, list)
            or not all(isinstance(s, int) and not isinstance(s, bool) and s > 0 for s in shape)
            or not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) and not isinstance(o, bool) for o in offsets)
        ):
            raise ArchiveError(f"malformed header: bad shape/offsets for {name!r}")
        begin, end = offsets
        if begin < 0 or end < begin:
            raise ArchiveError(f"malformed header: bad offsets for {name!r}")
        if end - begin != 4 * int(np.prod(shape, dtype=np.int64)):
            raise ArchiveError(f"malformed header: size of {name!r} does not match its shape")
        entries.append((begin, end, name, shape))

    # Offsets must tile the payload exactly.
    cursor = 0
    for begin, end, name, _ in sorted(entries):
        if begin < cursor:
            raise ArchiveError(f"offset overlap at tensor {name!r}")
        if begin > cursor:
            raise ArchiveError(f"malformed header: gap before tensor {name!r}")
        cursor = end
    if cursor != len(payload):
        raise ArchiveError("malformed header: payload length does not match offsets")

    tensors = []
    for begin, end, name, shape in entries:
        arr = np.frombuffer(payload[begin:end], dtype=_LE_F32).reshape(shape).astype(np.float32)
        if not np.isfinite(arr).all():
            raise ArchiveError(f"tensor {name!r} contains non-finite values")
        tensors.append(Tensor(name, arr))
    return TensorArchive(tuple(tensors), metadata)


def read_archive(path: str | os.PathLike) -> TensorArchive:
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_archive(raw)


def write_atomic(path: str | os.PathLike, data: bytes) -> None:
    """Write bytes to ``path`` via a temp file in the same directory plus rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_archive(archive: TensorArchive, path: str | os.PathLike) -> None:
    write_atomic(path, encode_archive(archive))


def fingerprint_bytes(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def fingerprint_array(arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(arr.dtype).encode())
    h.update(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return "sha256:" + h.hexdigest()


# --------------------------------------------------------------------------
# Model bundles


@dataclass(frozen=True)
class BundleSchema:
    """Naming convention used to find layer groups and the LM-head.

    ``layer_pattern`` must capture the layer index and the in-layer name.
    """

    layer_pattern: str = r"^(?:model\.)?layers\.(\d+)\.(.+)$"
    head_names: tuple[str, ...] = ("lm_head", "lm_head.weight", "head", "head.weight")


@dataclass(frozen=True)
class ModelBundle:
    layers: tuple[dict[str, Tensor], ...]
    lm_head: Tensor
    extras: dict[str, Tensor] = field(default_factory=dict)
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(dict(g) for g in self.layers))
        object.__setattr__(self, "metadata", dict(self.metadata))
        if not self.layers:
            raise BundleError("bundle needs at least one layer group")
        if len(self.lm_head.shape) != 2:
            raise BundleError(f"LM-head must be a matrix, got shape {self.lm_head.shape}")
        ref = _group_signature(self.layers[0])
        for i, group in enumerate(self.layers[1:], start=1):
            if _group_signature(group) != ref:
                raise BundleError(f"layer {i} schema differs from layer 0")
        if self.vocab_size < self.latent_dim:
            logger.warning(
                "vocab_size %d < latent_dim %d: semantic bases are not unique",
                self.vocab_size,
                self.latent_dim,
            )

    @property
    def latent_dim(self) -> int:
        return self.lm_head.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.lm_head.shape[1]

    @property
    def model_id(self) -> str:
        return self.metadata.get("model_id", "")

    def head_matrix(self) -> np.ndarray:
        """LM-head as a d x v array, logits = r @ W."""
        return self.lm_head.array

    def parameters(self) -> dict[str, np.ndarray]:
        """All parameters keyed by archive name, head in canonical d x v orientation."""
        out: dict[str, np.ndarray] = {}
        for group in self.layers:
            for t in group.values():
                out[t.name] = t.array
        for name, t in self.extras.items():
            out[name] = t.array
        out[self.lm_head.name] = self.lm_head.array
        return out

    def with_parameters(self, params: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None):
        """Same schema, new values."""
        layers = tuple({k: Tensor(t.name, params[t.name]) for k, t in g.items()} for g in self.layers)
        extras = {k: Tensor(k, params[k]) for k in self.extras}
        head = Tensor(self.lm_head.name, params[self.lm_head.name])
        return ModelBundle(layers, head, extras, dict(self.metadata if metadata is None else metadata))

    def to_archive(self) -> TensorArchive:
        """Inverse of :func:`load_model_bundle`; restores the stored head orientation."""
        tensors = []
        for group in self.layers:
            tensors.extend(group.values())
        tensors.extend(self.extras.values())
        head = self.lm_head
        if self.metadata.get(ORIENTATION_KEY) == VOCAB_MAJOR:
            head = Tensor(head.name, head.array.T)
        tensors.append(head)
        order = self.metadata.get("_tensor_order")
        if order:
            rank = {n: i for i, n in enumerate(json.loads(order))}
            tensors.sort(key=lambda t: rank.get(t.name, len(rank)))
        meta = {k: v for k, v in self.metadata.items() if not k.startswith("_")}
        return TensorArchive(tuple(tensors), meta)


def _group_signature(group: Mapping[str, Tensor]):
    return sorted((k, t.shape) for k, t in group.items())


def load_model_bundle(archive: TensorArchive, schema: BundleSchema | None = None) -> ModelBundle:
    schema = schema or BundleSchema()
    pattern = re.compile(schema.layer_pattern)
    groups: dict[int, dict[str, Tensor]] = {}
    head = None
    extras: dict[str, Tensor] = {}
    for t in archive.tensors:
        if t.name in schema.head_names:
            if head is not None:
                raise BundleError(f"multiple LM-head tensors: {head.name!r}, {t.name!r}")
            head = t
            continue
        m = pattern.match(t.name)
        if m:
            groups.setdefault(int(m.group(1)), {})[m.group(2)] = t
        else:
            extras[t.name] = t
    if head is None:
        raise BundleError("missing LM-head")
    if not groups:
        raise BundleError("no tensors match the layer pattern")

    meta = dict(archive.metadata)
    head = Tensor(head.name, orient_head(head.array, meta.get(ORIENTATION_KEY)))
    meta[ORIENTATION_KEY] = meta.get(ORIENTATION_KEY) or (
        VOCAB_MAJOR if head.shape != archive[head.name].shape else LATENT_MAJOR
    )
    meta["_tensor_order"] = json.dumps(archive.names())
    layers = tuple(groups[i] for i in sorted(groups))
    return ModelBundle(layers, head, extras, meta)


def orient_head(arr: np.ndarray, tag: str | None) -> np.ndarray:
    """Return the head as d x v.

    Untagged heads are assumed to have ``v >= d``; a square untagged head is
    ambiguous and rejected.
    """
    if arr.ndim != 2:
        raise BundleError(f"LM-head must be 2-D, got shape {arr.shape}")
    if tag == LATENT_MAJOR:
        return arr
    if tag == VOCAB_MAJOR:
        return arr.T
    if tag is not None:
        raise BundleError(f"unknown {ORIENTATION_KEY} tag {tag!r}")
    rows, cols = arr.shape
    if rows == cols:
        raise BundleError("ambiguous LM-head orientation: square head without orientation tag")
    return arr if rows < cols else arr.T


def find_head(archive: TensorArchive, schema: BundleSchema | None = None) -> np.ndarray:
    """Locate and orient the LM-head of an archive without requiring layer groups."""
    schema = schema or BundleSchema()
    found = [t for t in archive.tensors if t.name in schema.head_names]
    if not found:
        raise BundleError("missing LM-head")
    if len(found) > 1:
        raise BundleError("multiple LM-head tensors")
    return orient_head(found[0].array, archive.metadata.get(ORIENTATION_KEY))


def check_congruent(a: ModelBundle, b: ModelBundle) -> None:
    pa, pb = a.parameters(), b.parameters()
    if list(pa) != list(pb):
        raise BundleError("models have different tensor names")
    for name in pa:
        if pa[name].shape != pb[name].shape:
            raise BundleError(f"shape mismatch for {name!r}: {pa[name].shape} vs {pb[name].shape}")


def bundle_from_arrays(
    layers: Iterable[Mapping[str, np.ndarray]],
    lm_head: np.ndarray,
    model_id: str = "",
    head_name: str = "lm_head",
) -> ModelBundle:
    """Convenience constructor; ``lm_head`` is d x v."""
    groups = tuple(
        {k: Tensor(f"layers.{i}.{k}", v) for k, v in g.items()} for i, g in enumerate(layers)
    )
    meta = {ORIENTATION_KEY: LATENT_MAJOR}
    if model_id:
        meta["model_id"] = model_id
    return ModelBundle(groups, Tensor(head_name, lm_head), {}, meta)
