"""NANDIMG1 chip image container.

Layout: 8-byte magic, u32 LE header length, UTF-8 JSON header, then every
page in plane-major/block/page order as one status byte plus the raw page.
"""

import json
import os
import struct

from .errors import BadMagic, HeaderParseError, ImageFormatError, TruncatedFile
from .mirror import BackupImage
from .nand import PROGRAM_STATUSES, STATUS_ERASED, NandGeometry, PageRecord

MAGIC = b"NANDIMG1"
_LEN = struct.Struct("<I")


def _header(image):
    return {
        "geometry": image.geometry.to_dict(),
        "endurance_limit": image.endurance_limit,
        "erase_counts": list(image.erase_counts),
        "bad_blocks": sorted(image.bad_blocks),
        "hidden_regions": {str(b): tag.hex() for b, tag in sorted(image.gate_tags.items())},
        "metadata": image.metadata,
    }


def write_image(fh, image):
    header = json.dumps(_header(image)).encode("utf-8")
    fh.write(MAGIC)
    fh.write(_LEN.pack(len(header)))
    fh.write(header)
    g = image.geometry
    erased = bytes([STATUS_ERASED]) + b"\xff" * g.page_total_bytes
    for pages in image.blocks:
        for page in range(g.pages_per_block):
            rec = pages.get(page)
            if rec is None:
                fh.write(erased)
            else:
                fh.write(bytes([rec.status]))
                fh.write(rec.payload)


def save_image(path, image):
    with open(path, "wb") as fh:
        write_image(fh, image)


def _read_exact(fh, n, offset, expected_total):
    chunk = fh.read(n)
    if len(chunk) != n:
        raise TruncatedFile(expected_total, offset + len(chunk), offset)
    return chunk


def _parse_header(raw):
    try:
        d = json.loads(raw.decode("utf-8"))
        geometry = NandGeometry.from_dict(d["geometry"])
        erase_counts = [int(c) for c in d["erase_counts"]]
        if len(erase_counts) != geometry.block_count:
            raise ValueError("erase_counts length does not match geometry")
        tags = {int(b): bytes.fromhex(t) for b, t in d["hidden_regions"].items()}
        return geometry, int(d["endurance_limit"]), erase_counts, [int(b) for b in d["bad_blocks"]], \
            tags, dict(d["metadata"])
    except json.JSONDecodeError as exc:
        raise HeaderParseError(f"header is not valid JSON: {exc.msg}", 12 + exc.pos) from None
    except UnicodeDecodeError as exc:
        raise HeaderParseError("header is not UTF-8", 12 + exc.start) from None
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise HeaderParseError(f"malformed header field: {exc}", 12) from None


def read_image(fh, size=None):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}", 0)
    raw_len = fh.read(_LEN.size)
    if len(raw_len) != _LEN.size:
        raise TruncatedFile(len(MAGIC) + _LEN.size, len(MAGIC) + len(raw_len), len(MAGIC))
    (hlen,) = _LEN.unpack(raw_len)
    offset = len(MAGIC) + _LEN.size
    raw = fh.read(hlen)
    if len(raw) != hlen:
        raise TruncatedFile(offset + hlen, offset + len(raw), offset)
    geometry, endurance, erase_counts, bad, tags, metadata = _parse_header(raw)
    offset += hlen

    record = 1 + geometry.page_total_bytes
    expected = offset + geometry.total_pages * record
    if size is not None and size < expected:
        raise TruncatedFile(expected, size, offset + (size - offset) // record * record)
    erased_payload = b"\xff" * geometry.page_total_bytes
    blocks = []
    for _ in range(geometry.block_count):
        pages = {}
        for page in range(geometry.pages_per_block):
            chunk = _read_exact(fh, record, offset, expected)
            status, payload = chunk[0], chunk[1:]
            if status == STATUS_ERASED:
                if payload != erased_payload:
                    raise ImageFormatError("erased page carries data", offset)
            elif status in PROGRAM_STATUSES:
                pages[page] = PageRecord(status, payload)
            else:
                raise ImageFormatError(f"unknown page status {status:#04x}", offset)
            offset += record
        blocks.append(pages)
    if fh.read(1):
        raise ImageFormatError("trailing bytes after last page", offset)
    return BackupImage(geometry, endurance, blocks, erase_counts, bad, tags, metadata)


def load_image(path):
    with open(path, "rb") as fh:
        return read_image(fh, os.fstat(fh.fileno()).st_size)
