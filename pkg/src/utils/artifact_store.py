# src/utils/artifact_store.py
"""
Artifact Storage

Atomic file writes and a deterministic binary tensor container used for
checkpoints, the synthetic dataset and the generation cache.

Container layout:
    magic (8 bytes) | version (uint32 LE) | header length (uint64 LE)
    | header JSON (UTF-8, sorted keys) | payload (little-endian arrays)

Identical arrays and metadata always produce identical bytes, so
save -> load -> save round-trips byte for byte.

Version: 1.0.0
"""
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from src.utils.constants import TENSOR_STORE_MAGIC, TENSOR_STORE_VERSION
from src.utils.errors import ArtifactError, MissingArtifactError
from src.utils.logging import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

# Supported payload dtypes (little-endian)
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}

_PREAMBLE = struct.Struct("<IQ")


class TensorEntry(BaseModel):
    """Location and shape of one array inside the payload."""

    dtype: str = Field(..., pattern=r"^(f8|i8)$")
    shape: list[int]
    offset: int = Field(..., ge=0)
    nbytes: int = Field(..., ge=0)


class ContainerHeader(BaseModel):
    """JSON header of the tensor container."""

    tensors: Dict[str, TensorEntry]
    metadata: Dict[str, Any] = Field(default_factory=dict)
    payload_sha256: str = Field(..., min_length=64, max_length=64)


def write_bytes_atomic(path: PathLike, data: bytes) -> Path:
    """
    Write bytes so the target either has the old or the new content.

    Args:
        path: Target file path (parent directories are created)
        data: File content

    Returns:
        Resolved target path

    Raises:
        ArtifactError: If the write fails
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(
            prefix=f".{target.name}.", suffix=".tmp", dir=target.parent
        )
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, target)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        raise ArtifactError(target, f"cannot write artifact ({e.strerror})") from e
    return target


def write_text_atomic(path: PathLike, text: str) -> Path:
    """Write UTF-8 text atomically."""
    return write_bytes_atomic(path, text.encode("utf-8"))


def write_json_atomic(path: PathLike, payload: Any) -> Path:
    """Write JSON with sorted keys and a trailing newline, atomically."""
    return write_text_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_json(path: PathLike, producer: str) -> Any:
    """
    Read a JSON artifact.

    Raises:
        MissingArtifactError: If the file does not exist
        ArtifactError: If it cannot be parsed
    """
    source = Path(path)
    if not source.exists():
        raise MissingArtifactError(source, producer)
    try:
        return json.loads(source.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ArtifactError(source, f"cannot parse JSON ({type(e).__name__})") from e


def _dtype_code(array: np.ndarray) -> str:
    if np.issubdtype(array.dtype, np.floating):
        return "f8"
    if np.issubdtype(array.dtype, np.integer) or array.dtype == np.bool_:
        return "i8"
    raise TypeError(f"unsupported array dtype for storage: {array.dtype}")


def encode_container(
    arrays: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None
) -> bytes:
    """
    Serialize named arrays and JSON metadata into container bytes.

    Arrays are written in sorted name order as float64 or int64.
    """
    entries: Dict[str, TensorEntry] = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        array = np.asarray(arrays[name])
        code = _dtype_code(array)
        raw = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()
        entries[name] = TensorEntry(
            dtype=code, shape=list(array.shape), offset=offset, nbytes=len(raw)
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)

    header = ContainerHeader(
        tensors=entries,
        metadata=dict(metadata or {}),
        payload_sha256=hashlib.sha256(payload).hexdigest(),
    )
    header_bytes = json.dumps(
        header.model_dump(), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return (
        TENSOR_STORE_MAGIC
        + _PREAMBLE.pack(TENSOR_STORE_VERSION, len(header_bytes))
        + header_bytes
        + payload
    )


def decode_container(
    data: bytes, source: PathLike = "<memory>"
) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Parse container bytes.

    Returns:
        (arrays, metadata)

    Raises:
        ArtifactError: On bad magic, version, header, size or checksum
    """
    magic_len = len(TENSOR_STORE_MAGIC)
    if len(data) < magic_len + _PREAMBLE.size or not data.startswith(
        TENSOR_STORE_MAGIC
    ):
        raise ArtifactError(source, "parse error: not a tensor container")

    version, header_len = _PREAMBLE.unpack_from(data, magic_len)
    if version != TENSOR_STORE_VERSION:
        raise ArtifactError(source, f"parse error: unsupported version {version}")

    header_start = magic_len + _PREAMBLE.size
    header_end = header_start + header_len
    if header_end > len(data):
        raise ArtifactError(source, "parse error: truncated header")
    try:
        header = ContainerHeader.model_validate(
            json.loads(data[header_start:header_end].decode("utf-8"))
        )
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as e:
        raise ArtifactError(source, f"parse error: bad header ({type(e).__name__})") from e

    payload = data[header_end:]
    if hashlib.sha256(payload).hexdigest() != header.payload_sha256:
        raise ArtifactError(source, "parse error: payload checksum mismatch")

    arrays: Dict[str, np.ndarray] = {}
    for name, entry in header.tensors.items():
        end = entry.offset + entry.nbytes
        dtype = _DTYPES[entry.dtype]
        expected = int(np.prod(entry.shape, dtype=np.int64)) * dtype.itemsize
        if end > len(payload) or expected != entry.nbytes:
            raise ArtifactError(source, f"parse error: bad extent for '{name}'")
        arrays[name] = (
            np.frombuffer(payload[entry.offset : end], dtype=dtype)
            .reshape(entry.shape)
            .copy()
        )
    return arrays, header.metadata


def save_container(
    path: PathLike,
    arrays: Mapping[str, np.ndarray],
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Write a tensor container atomically."""
    target = write_bytes_atomic(path, encode_container(arrays, metadata))
    logger.debug("container_saved", path=str(target), tensors=len(arrays))
    return target


def load_container(
    path: PathLike, producer: str
) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read a tensor container.

    Args:
        path: Container path
        producer: Command that creates this artifact (named in errors)

    Raises:
        MissingArtifactError: If the file does not exist
        ArtifactError: If it cannot be read or parsed
    """
    source = Path(path)
    if not source.exists():
        raise MissingArtifactError(source, producer)
    try:
        data = source.read_bytes()
    except OSError as e:
        raise ArtifactError(source, f"cannot read artifact ({e.strerror})") from e
    return decode_container(data, source)


def sha256_of_arrays(*arrays: np.ndarray) -> str:
    """Content hash of arrays (dtype, shape and bytes)."""
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.dtype).encode("ascii"))
        digest.update(str(array.shape).encode("ascii"))
        digest.update(array.tobytes())
    return digest.hexdigest()
