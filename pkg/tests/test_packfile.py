import struct
import zlib

import numpy as np
import pytest

from conftest import random_example
from solo.errors import (
    ChecksumError,
    DimensionError,
    FormatError,
    MagicMismatchError,
    TruncationError,
    VersionMismatchError,
)
from solo.packfile import (
    deserialize,
    deserialize_corpus,
    iter_deserialize,
    read_packed,
    serialize,
    serialize_corpus,
    write_packed,
)
from solo.packing import pack_examples


def make_sequences(seed, n_examples=12, max_len=64, mode="pretrain"):
    rng = np.random.default_rng(seed)
    exs = [random_example(rng, supervised=mode == "supervised") for _ in range(n_examples)]
    return list(pack_examples(exs, max_len, mode))


def test_header_layout():
    data = serialize([], 2)
    assert data == b"SPKD" + struct.pack("<III", 1, 2, 0)
    assert deserialize(data) == (2, [])


def test_roundtrip():
    seqs = make_sequences(0)
    data = serialize(seqs, 2)
    patch_size, back = deserialize(data)
    assert patch_size == 2 and back == seqs
    assert serialize(back, 2) == data


def test_record_layout_for_small_sequence():
    from solo.encoding import PAD, Text
    from solo.packing import PackedSequence

    seq = PackedSequence([Text(5), Text(6), PAD], [0, 0, 1], [True, False, False])
    data = serialize([seq], 1)
    body = (struct.pack("<I", 3) + b"\x00" + struct.pack("<I", 5) + b"\x00" + struct.pack("<I", 6)
            + b"\x03" + struct.pack("<III", 0, 0, 1) + b"\x01")
    assert data[16:] == body + struct.pack("<I", zlib.crc32(body))


def test_truncation_raises_and_emits_nothing():
    data = serialize(make_sequences(1), 2)
    for cut in (len(data) - 1, len(data) - 5, 20, 10):
        with pytest.raises(TruncationError):
            deserialize(data[:cut])


def test_checksum_error_names_record():
    seqs = make_sequences(2)
    assert len(seqs) >= 2
    data = bytearray(serialize(seqs, 2))
    second_end = len(serialize(seqs[:2], 2))
    data[second_end - 2] ^= 0xFF
    with pytest.raises(ChecksumError) as info:
        deserialize(bytes(data))
    assert info.value.record_index == 1
    assert "record 1" in str(info.value)
    it = iter_deserialize(bytes(data))
    assert next(it) == seqs[0]
    with pytest.raises(ChecksumError):
        next(it)


def test_corrupted_payload_detected():
    seqs = make_sequences(2)
    data = serialize(seqs, 2)
    first = len(serialize(seqs[:1], 2))
    for offset in (first + 4, first + 9, len(data) - 30):
        bad = bytearray(data)
        bad[offset] ^= 0xFF
        with pytest.raises(FormatError) as info:
            deserialize(bytes(bad))
        if not isinstance(info.value, TruncationError):
            assert info.value.record_index >= 1


def test_magic_and_version():
    data = serialize(make_sequences(3), 2)
    with pytest.raises(MagicMismatchError):
        deserialize(b"XXXX" + data[4:])
    with pytest.raises(VersionMismatchError):
        deserialize(data[:4] + struct.pack("<I", 2) + data[8:])


def test_patch_size_mismatch():
    with pytest.raises(DimensionError):
        serialize(make_sequences(4), 3)


def test_file_roundtrip(tmp_path):
    seqs = make_sequences(5, mode="supervised", max_len=96)
    path = tmp_path / "x.spkd"
    write_packed(path, seqs, 2)
    assert read_packed(path) == (2, seqs)


def test_corpus_roundtrip():
    rng = np.random.default_rng(6)
    exs = [random_example(rng, supervised=bool(i % 2)) for i in range(10)]
    ps, back = deserialize_corpus(serialize_corpus(exs, 2))
    assert ps == 2 and back == exs
