"""
Named-tensor container files.

Layout: 4 magic bytes, u32 format version, u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 ndim, u32 dims, payload. Integers and the
payload are little-endian. Model checkpoints use magic "CLDR" with f64
payloads; packed mask files reuse the framing with magic "CLDM" and u8 payloads.
"""
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.ndgrad.errors import CheckpointFormatError

FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"CLDR"
MASK_MAGIC = b"CLDM"
_PAYLOAD_DTYPES = {CHECKPOINT_MAGIC: np.dtype("<f8"), MASK_MAGIC: np.dtype("u1")}


def encode_container(tensors: Dict[str, np.ndarray], magic: bytes = CHECKPOINT_MAGIC) -> bytes:
    dtype = _PAYLOAD_DTYPES[magic]
    chunks = [magic, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(array, dtype=dtype)
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def decode_container(blob: bytes, magic: bytes = CHECKPOINT_MAGIC) -> Dict[str, np.ndarray]:
    dtype = _PAYLOAD_DTYPES[magic]
    if blob[:4] != magic:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    offset = 4

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise CheckpointFormatError("truncated container")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    version, count = take("<II")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported container version {version} (reader supports {FORMAT_VERSION})")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if offset + name_len > len(blob):
            raise CheckpointFormatError("truncated tensor name")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointFormatError(f"truncated payload for {name}")
        tensors[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize,
                                      offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointFormatError(f"{len(blob) - offset} trailing bytes")
    return tensors


def save_container(path: Union[str, Path], tensors: Dict[str, np.ndarray], magic: bytes = CHECKPOINT_MAGIC) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(tensors, magic))
    return path


def load_container(path: Union[str, Path], magic: bytes = CHECKPOINT_MAGIC) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Container not found: {path}")
    return decode_container(path.read_bytes(), magic)
