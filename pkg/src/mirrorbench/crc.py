"""16-bit checksums used for pages, index records and scan manifests."""

import binascii
from functools import lru_cache


def crc16(data, crc=0xFFFF):
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xor-out."""
    return binascii.crc_hqx(data, crc)


def page_checksum(payload):
    return binascii.crc_hqx(payload, 0xFFFF)


@lru_cache(maxsize=16)
def erased_checksum(size):
    # erased pages dominate sparse chips; avoid re-hashing megabytes of 0xFF
    return page_checksum(b"\xff" * size)
