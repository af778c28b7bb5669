"""Binary containers for packed sequences (``SPKD``) and ingested corpora (``SEXC``).

All integers are little-endian. A packed file is a 16-byte header
(magic, version, patch size, reserved zero) followed by records::

    u32 element_count
    element_count x (u8 tag, payload)      tag 0 Text u32 id | 1 Patch P*P*3 bytes
                                           tag 2 Special u8 kind | 3 Pad
    element_count x u32 segment_id
    ceil(element_count / 8) bytes loss mask, least significant bit first
    u32 CRC32 of everything above in this record
"""
import os
import struct
import tempfile
import zlib

import numpy as np

from .encoding import PAD, Pad, Patch, Special, SpecialKind, Text
from .errors import (
    CorruptRecordError,
    DimensionError,
    InvalidInputError,
    MagicMismatchError,
    TruncationError,
    VersionMismatchError,
    ChecksumError,
)
from .packing import Example, ExampleKind, PackedSequence

PACKED_MAGIC = b"SPKD"
CORPUS_MAGIC = b"SEXC"
VERSION = 1

TAG_TEXT, TAG_PATCH, TAG_SPECIAL, TAG_PAD = 0, 1, 2, 3

_HEADER = struct.Struct("<4sIII")
_U32 = struct.Struct("<I")
_KIND_CODES = {kind: i for i, kind in enumerate(ExampleKind)}
_KINDS = list(ExampleKind)


def _encode_elements(elements, patch_size, out):
    patch_bytes = patch_size * patch_size * 3
    for el in elements:
        if isinstance(el, Text):
            out += struct.pack("<BI", TAG_TEXT, el.id)
        elif isinstance(el, Patch):
            if len(el.data) != patch_bytes:
                raise DimensionError(
                    f"patch of size {el.patch_size} in a container with patch size {patch_size}"
                )
            out.append(TAG_PATCH)
            out += el.data
        elif isinstance(el, Special):
            out += struct.pack("<BB", TAG_SPECIAL, int(el.kind))
        elif isinstance(el, Pad):
            out.append(TAG_PAD)
        else:
            raise InvalidInputError(f"cannot serialize {el!r}")


def _pack_bits(flags):
    return np.packbits(np.asarray(flags, dtype=bool), bitorder="little").tobytes()


class _Reader:
    """Cursor over a buffer that raises :class:`TruncationError` on short reads."""

    def __init__(self, buf, record_index=None):
        self.buf = memoryview(buf)
        self.pos = 0
        self.record_index = record_index

    def take(self, n):
        end = self.pos + n
        if end > len(self.buf):
            where = "header" if self.record_index is None else f"record {self.record_index}"
            raise TruncationError(
                f"stream ends inside {where}: needed {n} bytes at offset {self.pos}, "
                f"{len(self.buf) - self.pos} available"
            )
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def u8(self):
        return self.take(1)[0]

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def at_end(self):
        return self.pos >= len(self.buf)


def _decode_elements(r, count, patch_size):
    patch_bytes = patch_size * patch_size * 3
    elements = []
    for _ in range(count):
        tag = r.u8()
        if tag == TAG_TEXT:
            elements.append(Text(r.u32()))
        elif tag == TAG_PATCH:
            elements.append(Patch(bytes(r.take(patch_bytes)), patch_size))
        elif tag == TAG_SPECIAL:
            kind = r.u8()
            if kind >= len(SpecialKind):
                raise CorruptRecordError(r.record_index, f"unknown special kind {kind}")
            elements.append(Special(kind))
        elif tag == TAG_PAD:
            elements.append(PAD)
        else:
            raise CorruptRecordError(r.record_index, f"unknown element tag {tag}")
    return elements


def _read_header(r, magic):
    found, version, patch_size, _reserved = _HEADER.unpack(r.take(_HEADER.size))
    if found != magic:
        raise MagicMismatchError(f"expected magic {magic!r}, found {found!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    return patch_size


def _split_record(r, index, parse_body):
    """Parse one record body, verify its CRC trailer, then build the value.

    ``parse_body`` returns a zero-argument builder so that semantic
    validation only runs on checksummed bytes.
    """
    start = r.pos
    r.record_index = index
    build = parse_body(r)
    body = r.buf[start:r.pos]
    stored = r.u32()
    actual = zlib.crc32(body)
    if stored != actual:
        raise ChecksumError(index, stored, actual)
    try:
        return build()
    except InvalidInputError as exc:
        raise CorruptRecordError(index, str(exc)) from exc


def serialize(sequences, patch_size):
    out = bytearray(_HEADER.pack(PACKED_MAGIC, VERSION, patch_size, 0))
    for seq in sequences:
        body = bytearray(_U32.pack(len(seq)))
        _encode_elements(seq.elements, patch_size, body)
        body += np.asarray(seq.segment_ids, dtype="<u4").tobytes()
        body += _pack_bits(seq.loss_mask)
        out += body
        out += _U32.pack(zlib.crc32(body))
    return bytes(out)


def _parse_sequence(patch_size):
    def parse(r):
        count = r.u32()
        elements = _decode_elements(r, count, patch_size)
        seg = np.frombuffer(r.take(4 * count), dtype="<u4")
        bits = np.frombuffer(r.take((count + 7) // 8), dtype=np.uint8)
        mask = np.unpackbits(bits, count=count, bitorder="little").astype(bool)
        return lambda: PackedSequence(elements, seg.tolist(), mask.tolist())

    return parse


def iter_deserialize(data):
    """Yield ``PackedSequence`` records in file order."""
    r = _Reader(data)
    patch_size = _read_header(r, PACKED_MAGIC)
    parse = _parse_sequence(patch_size)
    index = 0
    while not r.at_end():
        yield _split_record(r, index, parse)
        index += 1


def deserialize(data):
    """Return ``(patch_size, sequences)``; raises before returning anything on a bad record."""
    patch_size = _read_header(_Reader(data), PACKED_MAGIC)
    return patch_size, list(iter_deserialize(data))


def _atomic_write(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_packed(path, sequences, patch_size):
    _atomic_write(path, serialize(sequences, patch_size))


def read_packed(path):
    with open(path, "rb") as f:
        return deserialize(f.read())


def serialize_corpus(examples, patch_size):
    """Encode ingested examples.

    Record: u16 name length, UTF-8 dataset name, u8 kind, u8 has_response,
    u32 element_count, elements, optional response bits, CRC32 trailer.
    """
    out = bytearray(_HEADER.pack(CORPUS_MAGIC, VERSION, patch_size, 0))
    for ex in examples:
        name = ex.source_dataset.encode("utf-8")
        body = bytearray(struct.pack("<H", len(name)))
        body += name
        body += struct.pack("<BBI", _KIND_CODES[ex.kind], ex.response is not None, len(ex))
        _encode_elements(ex.elements, patch_size, body)
        if ex.response is not None:
            body += _pack_bits(ex.response)
        out += body
        out += _U32.pack(zlib.crc32(body))
    return bytes(out)


def deserialize_corpus(data):
    r = _Reader(data)
    patch_size = _read_header(r, CORPUS_MAGIC)

    def parse(r):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = bytes(r.take(name_len)).decode("utf-8")
        code = r.u8()
        if code >= len(_KINDS):
            raise CorruptRecordError(r.record_index, f"unknown example kind {code}")
        kind = _KINDS[code]
        has_response = r.u8()
        count = r.u32()
        elements = _decode_elements(r, count, patch_size)
        response = None
        if has_response:
            bits = np.frombuffer(r.take((count + 7) // 8), dtype=np.uint8)
            response = np.unpackbits(bits, count=count, bitorder="little").astype(bool).tolist()
        return lambda: Example(elements, name, kind, response)

    examples = []
    index = 0
    while not r.at_end():
        examples.append(_split_record(r, index, parse))
        index += 1
    return patch_size, examples


def write_corpus(path, examples, patch_size):
    _atomic_write(path, serialize_corpus(examples, patch_size))


def read_corpus(path):
    with open(path, "rb") as f:
        return deserialize_corpus(f.read())
