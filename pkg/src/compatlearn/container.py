"""Self-describing binary container used by checkpoint files.

Layout, all little-endian:

    magic            8 bytes
    format version   u32
    section count    u32
    per section:
        name length  u16
        name         UTF-8 bytes
        payload len  u64
        payload      raw bytes
        checksum     u32 (CRC-32 of the payload)

Readers refuse wrong magic, truncated data, checksum mismatches, trailing
garbage, and versions newer than they understand.
"""

import struct
import zlib
from pathlib import Path

from .errors import CorruptFileError, UnsupportedVersionError

MAGIC_LEN = 8


def write_container(path, magic: bytes, version: int, sections: list[tuple[str, bytes]]) -> None:
    if len(magic) != MAGIC_LEN:
        raise ValueError(f"magic must be exactly {MAGIC_LEN} bytes, got {len(magic)}")
    parts = [magic, struct.pack("<II", version, len(sections))]
    for name, payload in sections:
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
        parts.append(struct.pack("<I", zlib.crc32(payload)))
    Path(path).write_bytes(b"".join(parts))


def read_container(path, magic: bytes, max_version: int) -> tuple[int, dict[str, bytes]]:
    blob = Path(path).read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise CorruptFileError(f"{path}: truncated while reading {what}")
        piece = blob[offset : offset + n]
        offset += n
        return piece

    if take(MAGIC_LEN, "magic") != magic:
        raise CorruptFileError(f"{path}: bad magic, not a {magic!r} file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version > max_version:
        raise UnsupportedVersionError(
            f"{path}: format version {version} is newer than supported ({max_version})"
        )
    sections: dict[str, bytes] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "section name length"))
        try:
            name = take(name_len, "section name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFileError(f"{path}: undecodable section name") from exc
        (payload_len,) = struct.unpack("<Q", take(8, "section length"))
        payload = take(payload_len, f"section {name!r}")
        (crc,) = struct.unpack("<I", take(4, "section checksum"))
        if zlib.crc32(payload) != crc:
            raise CorruptFileError(f"{path}: checksum mismatch in section {name!r}")
        sections[name] = payload
    if offset != len(blob):
        raise CorruptFileError(f"{path}: {len(blob) - offset} trailing bytes")
    return version, sections
