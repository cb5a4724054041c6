"""Weight and embedding files.

Both formats are little-endian throughout and store float32 data row-major with
the last dimension fastest.

Weight file::

    b"GSTRIPW1"
    u32 header_len, header_len bytes of UTF-8 "key=value\\n" lines
    u32 tensor_count
    per tensor: u16 name_len, name, u8 rank, rank x u32 dims, f32 data

Embedding file::

    b"GSTRIPE1"
    u32 bins, u32 dim, u32 count
    per record: u16 id_len, id, u32 label, u16 view_len, view, bins*dim f32

An unlabeled embedding is stored with label 0xFFFFFFFF.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
from loguru import logger
from pydantic import ValidationError

from gaitstrip.modules.ecm import BlockKind, EcmParams
from gaitstrip.modules.errors import (
    GaitStripError,
    BadMagicError,
    FingerprintMismatchError,
    SerializationError,
    TruncatedFileError,
)
from gaitstrip.modules.model import Block, Embedding, ModelConfig, ModelWeights
from gaitstrip.modules.nn_ops import ConvKernel, LinearMap
from gaitstrip.modules.tensor import Tensor

WEIGHT_MAGIC = b"GSTRIPW1"
EMBEDDING_MAGIC = b"GSTRIPE1"
FORMAT_VERSION = "1"
UNLABELED = 0xFFFFFFFF
FUSED_BRANCH = "fused"


class _Reader:
    """Cursor over a byte buffer that names the record being read when it runs out."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int, record: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            detail = f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            raise TruncatedFileError(record, detail)
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, record: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), record))

    def text(self, record: str) -> str:
        (length,) = self.unpack("<H", record)
        raw = self.take(length, record)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            msg = f"{record} is not valid UTF-8"
            raise SerializationError(msg) from e

    def finish(self, what: str) -> None:
        if self.pos != len(self.data):
            msg = f"{len(self.data) - self.pos} trailing bytes after {what}"
            raise SerializationError(msg)


def _check_magic(data: bytes, magic: bytes) -> None:
    if len(data) < len(magic):
        raise TruncatedFileError("magic")
    if data[: len(magic)] != magic:
        msg = f"bad magic {data[: len(magic)]!r}, expected {magic!r}"
        raise BadMagicError(msg)


def _pack_text(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:  # noqa: PLR2004
        msg = f"string of {len(raw)} bytes does not fit a u16 length"
        raise SerializationError(msg)
    return struct.pack("<H", len(raw)) + raw


def encode_tensor_file(header: Mapping[str, str], tensors: Mapping[str, np.ndarray]) -> bytes:
    """Weight-file bytes for an ordered name -> array mapping."""
    lines = []
    for key, value in header.items():
        if "=" in key or "\n" in key or "\n" in value:
            msg = f"header entry {key!r} cannot be written as a key=value line"
            raise SerializationError(msg)
        lines.append(f"{key}={value}\n")
    header_bytes = "".join(lines).encode("utf-8")

    out = bytearray(WEIGHT_MAGIC)
    out += struct.pack("<I", len(header_bytes))
    out += header_bytes
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        if arr.ndim < 1 or arr.ndim > 0xFF:  # noqa: PLR2004
            msg = f"tensor {name!r} has unsupported rank {arr.ndim}"
            raise SerializationError(msg)
        out += _pack_text(name)
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def decode_tensor_file(data: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Inverse of encode_tensor_file."""
    _check_magic(data, WEIGHT_MAGIC)
    reader = _Reader(data)
    reader.pos = len(WEIGHT_MAGIC)
    (header_len,) = reader.unpack("<I", "header length")
    raw_header = reader.take(header_len, "header")
    try:
        header_text = raw_header.decode("utf-8")
    except UnicodeDecodeError as e:
        msg = "weight header is not valid UTF-8"
        raise SerializationError(msg) from e
    header: dict[str, str] = {}
    for line in header_text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            msg = f"malformed header line {line!r}"
            raise SerializationError(msg)
        header[key] = value

    (count,) = reader.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name = reader.text(f"tensor #{i} name")
        if name in tensors:
            msg = f"duplicate tensor name {name!r}"
            raise SerializationError(msg)
        (rank,) = reader.unpack("<B", name)
        dims = reader.unpack(f"<{rank}I", name)
        n = math.prod(dims)
        buf = reader.take(4 * n, name)
        tensors[name] = np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(dims)
    reader.finish("the last tensor")
    return header, tensors


def _block_tensors(prefix: str, block: Block) -> dict[str, np.ndarray]:
    if block.kind is BlockKind.FUSED:
        kernels = {FUSED_BRANCH: block.params}
    else:
        kernels = block.params.present()  # type: ignore[union-attr]
    out = {}
    for branch, kernel in kernels.items():
        out[f"{prefix}.{branch}.weight"] = kernel.weights.numpy()
        out[f"{prefix}.{branch}.bias"] = kernel.bias.numpy()
    return out


def weights_to_tensors(w: ModelWeights) -> dict[str, np.ndarray]:
    """Named tensors in file order: stem, low, high, then bin maps."""
    tensors: dict[str, np.ndarray] = {}
    for section in ("stem", "low", "high"):
        for j, block in enumerate(getattr(w, section)):
            tensors.update(_block_tensors(f"{section}.{j}", block))
    for level, maps in w.maps.items():
        for r, m in enumerate(maps):
            tensors[f"maps.{level}.{r}.weight"] = m.weights.numpy()
            tensors[f"maps.{level}.{r}.bias"] = m.bias.numpy()
    return tensors


def encode_weights(w: ModelWeights) -> bytes:
    """Weight-file bytes for a model."""
    header = {
        "format_version": FORMAT_VERSION,
        "fingerprint": w.fingerprint,
        "fused": "1" if w.fused else "0",
        "seed": "none" if w.seed is None else str(w.seed),
        "config": w.config.model_dump_json(),
    }
    return encode_tensor_file(header, weights_to_tensors(w))


def _take_block(
    tensors: dict[str, np.ndarray],
    prefix: str,
    kind: BlockKind,
) -> Block:
    def kernel(branch: str) -> ConvKernel:
        try:
            w = tensors.pop(f"{prefix}.{branch}.weight")
            b = tensors.pop(f"{prefix}.{branch}.bias")
        except KeyError as e:
            msg = f"weight file is missing {e.args[0]!r}"
            raise SerializationError(msg) from e
        return ConvKernel.of(Tensor(w), Tensor(b))

    if kind is BlockKind.FUSED:
        return Block(kind=kind, params=kernel(FUSED_BRANCH))
    return Block(kind=kind, params=EcmParams(**{br: kernel(br) for br in kind.branches}))


def decode_weights(data: bytes, config: ModelConfig | None = None) -> ModelWeights:
    """Rebuild ModelWeights; when config is given its fingerprint must match the header."""
    header, tensors = decode_tensor_file(data)
    if header.get("format_version") != FORMAT_VERSION:
        msg = f"unsupported weight format version {header.get('format_version')!r}"
        raise SerializationError(msg)
    try:
        stored = ModelConfig.model_validate_json(header["config"])
    except (KeyError, ValidationError) as e:
        msg = "weight header has no readable config"
        raise SerializationError(msg) from e
    fingerprint = header.get("fingerprint", "")
    if stored.fingerprint() != fingerprint:
        msg = f"header fingerprint {fingerprint} does not match its own config"
        raise FingerprintMismatchError(msg)
    if config is not None and config.fingerprint() != fingerprint:
        msg = f"weights were written for {fingerprint}, loading config is {config.fingerprint()}"
        raise FingerprintMismatchError(msg)

    fused = header.get("fused") == "1"
    split = stored.split_after_block
    n = len(stored.block_channels)

    def kind_at(i: int) -> BlockKind:
        if fused and i >= stored.ecm_from_block:
            return BlockKind.FUSED
        return stored.kind_of(i)

    stem = [_take_block(tensors, f"stem.{i}", kind_at(i)) for i in range(split)]
    levels: dict[str, list[Block]] = {"low": [], "high": []}
    maps: dict[str, list[LinearMap]] = {}
    for level in stored.level_names():
        levels[level] = [
            _take_block(tensors, f"{level}.{j}", kind_at(split + j))
            for j in range(n - split)
        ]
    for level in stored.level_names():
        maps[level] = []
        for r in range(stored.bins(level)):
            key = f"maps.{level}.{r}"
            if f"{key}.weight" not in tensors or f"{key}.bias" not in tensors:
                msg = f"weight file is missing {key!r}"
                raise SerializationError(msg)
            maps[level].append(
                LinearMap.of(
                    Tensor(tensors.pop(f"{key}.weight")),
                    Tensor(tensors.pop(f"{key}.bias")),
                ),
            )
    if tensors:
        msg = f"weight file has unexpected tensors {sorted(tensors)[:5]}"
        raise SerializationError(msg)

    seed_raw = header.get("seed", "none")
    return ModelWeights(
        config=stored,
        stem=stem,
        low=levels["low"],
        high=levels["high"],
        maps=maps,
        fused=fused,
        seed=None if seed_raw == "none" else int(seed_raw),
    )


def save_weights(w: ModelWeights, path: str | Path) -> None:
    """Write a weight file."""
    data = encode_weights(w)
    Path(path).write_bytes(data)
    logger.debug(f"wrote {len(data)} bytes of weights to {path}")


def load_weights(path: str | Path, config: ModelConfig | None = None) -> ModelWeights:
    """Read a weight file, optionally checking it against config."""
    data = Path(path).read_bytes()
    logger.debug(f"read {len(data)} bytes of weights from {path}")
    return decode_weights(data, config)


def encode_embeddings(embeddings: Sequence[Embedding]) -> bytes:
    """Embedding-file bytes; every embedding must share one (bins, dim) shape."""
    shapes = {e.values.shape for e in embeddings}
    if len(shapes) > 1:
        msg = f"embeddings disagree on shape: {sorted(shapes)}"
        raise SerializationError(msg)
    bins, dim = shapes.pop() if shapes else (0, 0)
    out = bytearray(EMBEDDING_MAGIC)
    out += struct.pack("<III", bins, dim, len(embeddings))
    for e in embeddings:
        if e.label is not None and not 0 <= e.label < UNLABELED:
            msg = f"label {e.label} of {e.sequence_id!r} does not fit a u32"
            raise SerializationError(msg)
        label = UNLABELED if e.label is None else e.label
        out += _pack_text(e.sequence_id)
        out += struct.pack("<I", label)
        out += _pack_text(e.view)
        out += np.ascontiguousarray(e.values.numpy(), dtype="<f4").tobytes()
    return bytes(out)


def decode_embeddings(data: bytes) -> list[Embedding]:
    """Inverse of encode_embeddings."""
    _check_magic(data, EMBEDDING_MAGIC)
    reader = _Reader(data)
    reader.pos = len(EMBEDDING_MAGIC)
    bins, dim, count = reader.unpack("<III", "embedding header")
    out = []
    for i in range(count):
        seq_id = reader.text(f"record #{i} id")
        record = seq_id or f"record #{i}"
        (label,) = reader.unpack("<I", record)
        view = reader.text(record)
        buf = reader.take(4 * bins * dim, record)
        values = np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(bins, dim)
        try:
            embedding = Embedding(
                values=Tensor(values),
                sequence_id=seq_id,
                label=None if label == UNLABELED else label,
                view=view,
            )
        except GaitStripError as e:
            msg = f"{record} is not a valid embedding: {e}"
            raise SerializationError(msg) from e
        out.append(embedding)
    reader.finish("the last record")
    return out


def save_embeddings(embeddings: Sequence[Embedding], path: str | Path) -> None:
    """Write an embedding file."""
    Path(path).write_bytes(encode_embeddings(embeddings))


def load_embeddings(path: str | Path) -> list[Embedding]:
    """Read an embedding file."""
    return decode_embeddings(Path(path).read_bytes())


def append_embedding(e: Embedding, path: str | Path) -> int:
    """Add one record to an embedding file, creating it if needed; returns the new count."""
    target = Path(path)
    existing = load_embeddings(target) if target.exists() else []
    existing.append(e)
    save_embeddings(existing, target)
    return len(existing)
