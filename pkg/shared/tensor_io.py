"""
TSEG1 binary tensor container.

Layout: magic b"TSEG1", u8 dtype (0 = f32, 1 = u8), u8 rank,
rank x u32 little-endian dims, then the raw little-endian row-major payload.
"""
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .constants import TSEG_DTYPES, TSEG_MAGIC
from .utils import TSEGFormatError

_CODE_BY_DTYPE = {np.dtype("<f4"): 0, np.dtype("u1"): 1}

PathLike = Union[str, Path]


def encode_tensor(array: np.ndarray) -> bytes:
    """
    Serialize an array as one TSEG1 record.

    Args:
        array: float32 or uint8 array of rank 1-4

    Returns:
        Encoded bytes
    """
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<") if array.dtype.kind == "f" else array.dtype
    if dtype not in _CODE_BY_DTYPE:
        raise TSEGFormatError(f"TSEG1 stores float32 or uint8, got {array.dtype}")
    if not 1 <= array.ndim <= 4:
        raise TSEGFormatError(f"TSEG1 stores rank 1-4 tensors, got rank {array.ndim}")
    header = TSEG_MAGIC + struct.pack("<BB", _CODE_BY_DTYPE[dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=dtype).tobytes(order="C")
    return header + payload


def decode_tensor(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """
    Decode one TSEG1 record starting at `offset`.

    Returns:
        (array, offset just past the record)
    """
    end = offset + len(TSEG_MAGIC)
    if buffer[offset:end] != TSEG_MAGIC:
        raise TSEGFormatError(f"bad magic at offset {offset}")
    if len(buffer) < end + 2:
        raise TSEGFormatError("truncated header")
    code, rank = struct.unpack_from("<BB", buffer, end)
    if code not in TSEG_DTYPES:
        raise TSEGFormatError(f"unknown dtype code {code}")
    if not 1 <= rank <= 4:
        raise TSEGFormatError(f"invalid rank {rank}")
    end += 2
    if len(buffer) < end + 4 * rank:
        raise TSEGFormatError(f"truncated dims: need {4 * rank} bytes at offset {end}")
    dims = struct.unpack_from(f"<{rank}I", buffer, end)
    end += 4 * rank
    dtype = np.dtype(TSEG_DTYPES[code])
    nbytes = int(np.prod(dims)) * dtype.itemsize
    if len(buffer) < end + nbytes:
        raise TSEGFormatError(f"payload truncated: need {nbytes} bytes")
    array = np.frombuffer(buffer, dtype=dtype, count=int(np.prod(dims)), offset=end)
    return array.reshape(dims).copy(), end + nbytes


def write_tensor(path: PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: PathLike) -> np.ndarray:
    buffer = Path(path).read_bytes()
    array, end = decode_tensor(buffer)
    if end != len(buffer):
        raise TSEGFormatError(f"{path}: {len(buffer) - end} trailing bytes")
    return array
