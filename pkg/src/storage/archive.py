"""Single-file named-tensor archive shared by checkpoints ("RDDM") and image sets ("RDDI").

Layout, all integers little-endian:

    magic[4] | version u32 | count u32 |
    count x { name_len u16 | name utf-8 | rank u8 | dims u32 x rank | payload f32 x prod(dims) } |
    crc32 u32 of every preceding byte
"""

import logging
import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping

import numpy as np

from src.storage import formats
from src.storage.checksum import add_checksum, split_checksum, verify_checksum
from src.utils.errors import FormatError

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sII")
NAME_LENGTH = struct.Struct("<H")
RANK = struct.Struct("<B")


class _Reader:

    def __init__(self, data: bytes):

        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:

        end = self.offset + size
        if end > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.offset)
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct, what: str):

        return fmt.unpack(self.take(fmt.size, what))


class TensorArchive:

    @staticmethod
    def encode(magic: bytes, tensors: Mapping[str, np.ndarray]) -> bytes:

        parts = [HEADER.pack(magic, formats.FORMAT_VERSION, len(tensors))]

        for name, value in tensors.items():
            encoded = name.encode('utf-8')
            array = np.asarray(value)

            if len(encoded) > 0xFFFF:
                raise FormatError(f"tensor name too long: {name[:32]}...")
            if array.ndim > 0xFF:
                raise FormatError(f"tensor '{name}' has rank {array.ndim}")

            parts.append(NAME_LENGTH.pack(len(encoded)))
            parts.append(encoded)
            parts.append(RANK.pack(array.ndim))
            parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
            parts.append(np.ascontiguousarray(array, dtype='<f4').tobytes())

        return add_checksum(b"".join(parts))

    @staticmethod
    def decode(data: bytes, magic: bytes) -> Dict[str, np.ndarray]:

        reader = _Reader(data)
        found, version, count = reader.unpack(HEADER, "header")

        if found != magic:
            if formats.is_checkpoint(found) or formats.is_image_archive(found):
                kind = "checkpoint" if formats.is_checkpoint(found) else "image archive"
                raise FormatError(f"file is a {kind} ({found!r}), expected {magic!r}", offset=0)
            raise FormatError(f"bad magic {found!r}, expected {magic!r}", offset=0)
        if version != formats.FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}", offset=4)

        tensors: Dict[str, np.ndarray] = OrderedDict()

        for _ in range(count):
            start = reader.offset
            (length,) = reader.unpack(NAME_LENGTH, "tensor name length")

            try:
                name = reader.take(length, "tensor name").decode('utf-8')
            except UnicodeDecodeError:
                raise FormatError("tensor name is not valid UTF-8", offset=start + NAME_LENGTH.size)

            if name in tensors:
                raise FormatError(f"duplicate tensor '{name}'", offset=start)

            (rank,) = reader.unpack(RANK, f"rank of '{name}'")
            shape = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"dims of '{name}'"))
            count_values = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = reader.take(4 * count_values, f"payload of '{name}'")

            tensors[name] = np.frombuffer(payload, dtype='<f4').astype(np.float64).reshape(shape)

        trailer_offset = reader.offset
        remaining = len(data) - trailer_offset
        if remaining < 4:
            raise FormatError("truncated before checksum", offset=trailer_offset)
        if remaining > 4:
            raise FormatError(f"{remaining - 4} unexpected trailing bytes", offset=trailer_offset)

        payload, checksum = split_checksum(data)
        if not verify_checksum(payload, checksum):
            raise FormatError("checksum mismatch", offset=trailer_offset)

        return tensors

    @staticmethod
    def save(path: str, magic: bytes, tensors: Mapping[str, np.ndarray]):

        blob = TensorArchive.encode(magic, tensors)
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)

        temp_path = f"{path}.tmp"
        with open(temp_path, 'wb') as f:
            f.write(blob)
        os.replace(temp_path, path)

        logger.debug(f"Wrote {len(tensors)} tensors ({len(blob)} bytes) to {path}")

    @staticmethod
    def load(path: str, magic: bytes) -> Dict[str, np.ndarray]:

        with open(path, 'rb') as f:
            data = f.read()

        try:
            return TensorArchive.decode(data, magic)
        except FormatError as e:
            error = FormatError(f"{path}: {e}")
            error.offset = e.offset
            raise error from e


def save_images(path: str, x: np.ndarray, y: np.ndarray = None):

    tensors = OrderedDict([(formats.IMAGE_CLEAN, x)])
    if y is not None:
        tensors[formats.IMAGE_NOISY] = y
    TensorArchive.save(path, formats.IMAGE_MAGIC, tensors)


def load_images(path: str) -> Dict[str, np.ndarray]:

    tensors = TensorArchive.load(path, formats.IMAGE_MAGIC)

    for name, value in tensors.items():
        if value.ndim != 4:
            raise FormatError(f"{path}: image tensor '{name}' must be [N, C, H, W], got {value.shape}")

    return tensors
