"""Binary file formats: labeled embeddings and model snapshots.

Both formats are little-endian, versioned, and carry a trailing CRC-32 over
everything before it. Embedding vectors are stored single precision (the
usual extractor output width); snapshots store all statistics double
precision so a restore is exact. Writes go to a temp file in the target
directory and are renamed into place.

Embedding file layout::

    magic   4 bytes  "ALMD"
    version u32
    dim     u32      (> 0)
    count   u64
    records count x (label u32, vector dim x f32)
    crc     u32

Snapshot file layout::

    magic   4 bytes  "ALMS"
    version u32
    dim     u32
    th      u32
    ridge   f64
    classes u32
    table   classes x (id u32, state u8, count u64, mean dim x f64)
    sigma   dim*dim f64 row-major
    bg_mu   dim f64
    bg_sigma dim*dim f64
    crc     u32
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .engine import ModelSnapshot
from .gaussian import ClassState
from .streams import LabeledEmbeddingSet

__all__ = [
    "BadMagicError",
    "ChecksumError",
    "DimensionError",
    "FileFormatError",
    "TruncatedFileError",
    "VersionMismatchError",
    "read_embeddings",
    "read_snapshot",
    "write_embeddings",
    "write_snapshot",
]

EMBEDDING_MAGIC = b"ALMD"
SNAPSHOT_MAGIC = b"ALMS"
EMBEDDING_VERSION = 1
SNAPSHOT_VERSION = 1

_STATE_CODES = {
    ClassState.INITIAL: 0,
    ClassState.EMERGING: 1,
    ClassState.WELL_LEARNED: 2,
}
_CODE_STATES = {v: k for k, v in _STATE_CODES.items()}


class FileFormatError(ValueError):
    """Malformed file content."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FileFormatError):
    """File declares a format version this reader does not support."""


class ChecksumError(FileFormatError):
    """Trailing CRC-32 does not match the payload."""


class TruncatedFileError(FileFormatError):
    """File ends before the declared payload is complete."""


class DimensionError(FileFormatError):
    """Declared vector dimension is invalid or inconsistent."""


def _atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _with_crc(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _split_crc(raw: bytes, what: str) -> bytes:
    if len(raw) < 4:
        raise TruncatedFileError(f"{what}: file shorter than its checksum")
    payload, (stored,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != stored:
        raise ChecksumError(f"{what}: checksum mismatch")
    return payload


def write_embeddings(path, dataset: LabeledEmbeddingSet) -> None:
    """Write an embedding file; vectors are truncated to single precision."""
    n, dim = dataset.vectors.shape
    if dim == 0:
        raise DimensionError("embedding dimension must be positive")
    if n and int(dataset.labels.max()) > 0xFFFFFFFF:
        raise ValueError("class labels exceed the 32-bit storage range")

    header = struct.pack("<4sIIQ", EMBEDDING_MAGIC, EMBEDDING_VERSION, dim, n)
    labels = dataset.labels.astype("<u4")
    vectors = dataset.vectors.astype("<f4")
    record = np.empty(
        n, dtype=np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))])
    )
    record["label"] = labels
    record["vec"] = vectors
    _atomic_write(Path(path), _with_crc(header + record.tobytes()))


def read_embeddings(path) -> LabeledEmbeddingSet:
    """Read an embedding file; vectors come back as float64.

    Raises:
        BadMagicError, VersionMismatchError, DimensionError,
        TruncatedFileError, ChecksumError: Per defect, in that check order
            (magic and version are validated before the payload length and
            checksum so the error names the first problem found).
    """
    raw = Path(path).read_bytes()
    head_size = struct.calcsize("<4sIIQ")
    if len(raw) < head_size:
        raise TruncatedFileError(f"{path}: too short for an embedding header")
    magic, version, dim, count = struct.unpack("<4sIIQ", raw[:head_size])
    if magic != EMBEDDING_MAGIC:
        raise BadMagicError(f"{path}: not an embedding file (magic {magic!r})")
    if version != EMBEDDING_VERSION:
        raise VersionMismatchError(
            f"{path}: embedding format version {version}, expected {EMBEDDING_VERSION}"
        )
    if dim == 0:
        raise DimensionError(f"{path}: declared dimension is zero")

    record_bytes = count * (4 + 4 * dim)
    expected = head_size + record_bytes + 4
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: {len(raw)} bytes, header implies {expected}"
        )
    if len(raw) > expected:
        raise FileFormatError(f"{path}: {len(raw) - expected} trailing bytes")

    payload = _split_crc(raw, str(path))
    record = np.frombuffer(
        payload,
        dtype=np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))]),
        count=count,
        offset=head_size,
    )
    return LabeledEmbeddingSet(
        vectors=record["vec"].astype(np.float64),
        labels=record["label"].astype(np.int64),
    )


def write_snapshot(path, snap: ModelSnapshot) -> None:
    """Serialize a model snapshot; all statistics kept at full precision."""
    dim = snap.dim
    parts = [
        struct.pack(
            "<4sIIId I",
            SNAPSHOT_MAGIC,
            SNAPSHOT_VERSION,
            dim,
            snap.th,
            snap.ridge,
            len(snap.class_ids),
        )
    ]
    for i, cid in enumerate(snap.class_ids):
        parts.append(
            struct.pack("<IBQ", cid, _STATE_CODES[snap.states[i]], snap.counts[i])
        )
        parts.append(snap.means[i].astype("<f8").tobytes())
    parts.append(snap.sigma.astype("<f8").tobytes())
    parts.append(snap.background_mu.astype("<f8").tobytes())
    parts.append(snap.background_sigma.astype("<f8").tobytes())
    _atomic_write(Path(path), _with_crc(b"".join(parts)))


def read_snapshot(path) -> ModelSnapshot:
    """Deserialize a model snapshot written by ``write_snapshot``."""
    raw = Path(path).read_bytes()
    head_fmt = "<4sIIId I"
    head_size = struct.calcsize(head_fmt)
    if len(raw) < head_size:
        raise TruncatedFileError(f"{path}: too short for a snapshot header")
    magic, version, dim, th, ridge, n_classes = struct.unpack(head_fmt, raw[:head_size])
    if magic != SNAPSHOT_MAGIC:
        raise BadMagicError(f"{path}: not a snapshot file (magic {magic!r})")
    if version != SNAPSHOT_VERSION:
        raise VersionMismatchError(
            f"{path}: snapshot format version {version}, expected {SNAPSHOT_VERSION}"
        )
    if dim == 0:
        raise DimensionError(f"{path}: declared dimension is zero")

    entry = struct.calcsize("<IBQ") + 8 * dim
    expected = head_size + n_classes * entry + 8 * dim * dim + 8 * dim + 8 * dim * dim + 4
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, header implies {expected}")
    if len(raw) > expected:
        raise FileFormatError(f"{path}: {len(raw) - expected} trailing bytes")

    payload = _split_crc(raw, str(path))
    offset = head_size
    class_ids: list[int] = []
    states: list[ClassState] = []
    counts: list[int] = []
    means = np.empty((n_classes, dim), dtype=np.float64)
    for i in range(n_classes):
        cid, state_code, count = struct.unpack_from("<IBQ", payload, offset)
        offset += struct.calcsize("<IBQ")
        if state_code not in _CODE_STATES:
            raise FileFormatError(f"{path}: unknown class state code {state_code}")
        class_ids.append(cid)
        states.append(_CODE_STATES[state_code])
        counts.append(count)
        means[i] = np.frombuffer(payload, dtype="<f8", count=dim, offset=offset)
        offset += 8 * dim

    def take_matrix(rows: int) -> np.ndarray:
        nonlocal offset
        out = np.frombuffer(payload, dtype="<f8", count=rows * dim, offset=offset)
        offset += 8 * rows * dim
        return out.reshape(rows, dim).astype(np.float64)

    sigma = take_matrix(dim)
    background_mu = take_matrix(1)[0]
    background_sigma = take_matrix(dim)
    return ModelSnapshot(
        version=version,
        dim=dim,
        th=th,
        ridge=ridge,
        class_ids=tuple(class_ids),
        states=tuple(states),
        counts=tuple(counts),
        means=means,
        sigma=sigma,
        background_mu=background_mu,
        background_sigma=background_sigma,
    )
