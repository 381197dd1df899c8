import struct
from collections import OrderedDict

import numpy as np
import pytest

from src.storage import formats
from src.storage.archive import TensorArchive, load_images, save_images
from src.storage.checksum import add_checksum, calculate_checksum, split_checksum, verify_checksum
from src.utils.errors import FormatError


def _tensors():
    rng = np.random.default_rng(0)
    return OrderedDict([
        ('params/conv.weight', rng.standard_normal((2, 1, 3, 3)).astype(np.float32).astype(np.float64)),
        ('params/conv.bias', np.array([0.5, -0.25])),
        ('meta/iteration', np.array([12.0])),
    ])


def test_checksum_helpers():
    payload = b"residual"
    blob = add_checksum(payload)

    body, checksum = split_checksum(blob)

    assert body == payload
    assert checksum == calculate_checksum(payload)
    assert verify_checksum(payload, checksum)
    assert not verify_checksum(payload + b"!", checksum)


def test_encode_layout():
    blob = TensorArchive.encode(formats.CHECKPOINT_MAGIC, OrderedDict([('a', np.array([[1.0, 2.0]]))]))

    magic, version, count = struct.unpack_from("<4sII", blob, 0)
    (name_length,) = struct.unpack_from("<H", blob, 12)
    rank = blob[15]
    dims = struct.unpack_from("<2I", blob, 16)
    payload = np.frombuffer(blob[24:32], dtype='<f4')

    assert (magic, version, count) == (b"RDDM", 1, 1)
    assert name_length == 1 and blob[14:15] == b"a"
    assert rank == 2 and dims == (1, 2)
    np.testing.assert_array_equal(payload, [1.0, 2.0])
    assert len(blob) == 36
    assert verify_checksum(blob[:-4], struct.unpack("<I", blob[-4:])[0])


def test_decode_restores_tensors_in_order():
    tensors = _tensors()

    decoded = TensorArchive.decode(TensorArchive.encode(formats.CHECKPOINT_MAGIC, tensors), formats.CHECKPOINT_MAGIC)

    assert list(decoded) == list(tensors)
    for name in tensors:
        assert decoded[name].shape == tensors[name].shape
        assert np.array_equal(decoded[name], tensors[name])


def test_save_load_save_is_byte_identical(tmp_path):
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"

    TensorArchive.save(str(first), formats.CHECKPOINT_MAGIC, _tensors())
    TensorArchive.save(str(second), formats.CHECKPOINT_MAGIC, TensorArchive.load(str(first), formats.CHECKPOINT_MAGIC))

    assert first.read_bytes() == second.read_bytes()


def test_tampered_magic_rejected():
    blob = bytearray(TensorArchive.encode(formats.CHECKPOINT_MAGIC, _tensors()))
    blob[0:4] = b"XXXX"

    with pytest.raises(FormatError) as excinfo:
        TensorArchive.decode(bytes(blob), formats.CHECKPOINT_MAGIC)

    assert excinfo.value.offset == 0


def test_wrong_archive_kind_rejected():
    blob = TensorArchive.encode(formats.IMAGE_MAGIC, _tensors())

    with pytest.raises(FormatError, match="image archive"):
        TensorArchive.decode(blob, formats.CHECKPOINT_MAGIC)


def test_unsupported_version_rejected():
    blob = bytearray(TensorArchive.encode(formats.CHECKPOINT_MAGIC, _tensors()))
    blob[4:8] = struct.pack("<I", 9)

    with pytest.raises(FormatError) as excinfo:
        TensorArchive.decode(bytes(blob), formats.CHECKPOINT_MAGIC)

    assert excinfo.value.offset == 4


def test_truncation_reports_offset():
    blob = TensorArchive.encode(formats.CHECKPOINT_MAGIC, _tensors())

    with pytest.raises(FormatError) as excinfo:
        TensorArchive.decode(blob[:40], formats.CHECKPOINT_MAGIC)

    assert excinfo.value.offset is not None
    assert excinfo.value.offset <= 40
    assert "offset" in str(excinfo.value)


def test_flipped_payload_bit_fails_checksum():
    blob = bytearray(TensorArchive.encode(formats.CHECKPOINT_MAGIC, _tensors()))
    blob[60] ^= 0x01

    with pytest.raises(FormatError, match="checksum"):
        TensorArchive.decode(bytes(blob), formats.CHECKPOINT_MAGIC)


def test_trailing_bytes_rejected():
    blob = TensorArchive.encode(formats.CHECKPOINT_MAGIC, _tensors())

    with pytest.raises(FormatError):
        TensorArchive.decode(blob + b"\x00", formats.CHECKPOINT_MAGIC)


def test_load_error_names_file(tmp_path):
    path = tmp_path / "broken.ckpt"
    path.write_bytes(b"RDDM\x01")

    with pytest.raises(FormatError, match="broken.ckpt"):
        TensorArchive.load(str(path), formats.CHECKPOINT_MAGIC)


def test_image_archive_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.random((3, 1, 8, 8)).astype(np.float32).astype(np.float64)
    y = rng.random((3, 1, 8, 8)).astype(np.float32).astype(np.float64)
    path = str(tmp_path / "set.rddi")

    save_images(path, x, y)
    images = load_images(path)

    assert set(images) == {formats.IMAGE_CLEAN, formats.IMAGE_NOISY}
    assert np.array_equal(images['x'], x)
    assert np.array_equal(images['y'], y)


def test_image_archive_requires_four_dims(tmp_path):
    path = str(tmp_path / "flat.rddi")
    TensorArchive.save(path, formats.IMAGE_MAGIC, {'x': np.zeros((2, 3))})

    with pytest.raises(FormatError):
        load_images(path)


def test_split_name_strips_state_prefix():
    assert formats.split_name("adam_v/enc0.weight") == (formats.ADAM_V_PREFIX, "enc0.weight")
    assert formats.split_name(formats.META_CONFIG) == (None, formats.META_CONFIG)
