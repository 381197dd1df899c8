import struct
import zlib
from typing import Tuple

from src.utils.errors import FormatError

TRAILER = struct.Struct("<I")


def calculate_checksum(data: bytes) -> int:

    return zlib.crc32(data) & 0xFFFFFFFF


def verify_checksum(data: bytes, expected_checksum: int) -> bool:

    return calculate_checksum(data) == expected_checksum


def add_checksum(payload: bytes) -> bytes:

    return payload + TRAILER.pack(calculate_checksum(payload))


def split_checksum(blob: bytes) -> Tuple[bytes, int]:

    if len(blob) < TRAILER.size:
        raise FormatError("file too short for a checksum trailer", offset=len(blob))

    payload = blob[:-TRAILER.size]
    (checksum,) = TRAILER.unpack(blob[-TRAILER.size:])
    return payload, checksum
