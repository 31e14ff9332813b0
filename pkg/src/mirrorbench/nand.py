"""Physical NAND chip model.

Blocks are numbered linearly, plane-major. Pages that were never programmed
(or were erased) are not stored: they read back as 0xFF with status 0x49,
which keeps the full 2 x 1064 x 256 profile cheap to hold in memory.
"""

import random
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import (
    AddressError,
    BadBlock,
    BlockOutOfRange,
    GateRejected,
    HiddenViewLocked,
    InvalidGeometry,
    PayloadSizeMismatch,
    ProgramOnDirtyPage,
    ResultOutOfBlock,
)

STATUS_ERASED = 0x49
STATUS_NORMAL = 0x61
STATUS_HIDDEN = 0x40
PROGRAM_STATUSES = (STATUS_NORMAL, STATUS_HIDDEN)

HIDDEN_FLAG = 1 << 23
DEFAULT_ENDURANCE = 10_000
GATE_TAG_BYTES = 8

# SK hynix manufacturer code followed by an arbitrary device code
MAKER_ID = 0xAD
DEVICE_ID = 0xDE


@dataclass(frozen=True)
class NandGeometry:
    planes: int
    blocks_per_plane: int
    pages_per_block: int
    sectors_per_page: int
    sector_data_bytes: int
    sector_index_bytes: int

    def __post_init__(self):
        for name in ("planes", "blocks_per_plane", "pages_per_block",
                     "sectors_per_page", "sector_data_bytes", "sector_index_bytes"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidGeometry(f"{name} must be a positive integer, got {value!r}")
        if self.pages_per_block > 256:
            raise InvalidGeometry("page index must fit the low address byte (<= 256 pages per block)")
        if self.block_count > 1 << 15:
            raise InvalidGeometry("block index must fit address bits 22:8")

    @property
    def sector_bytes(self):
        return self.sector_data_bytes + self.sector_index_bytes

    @property
    def page_total_bytes(self):
        return self.sectors_per_page * self.sector_bytes

    @property
    def page_data_bytes(self):
        return self.sectors_per_page * self.sector_data_bytes

    @property
    def block_count(self):
        return self.planes * self.blocks_per_plane

    @property
    def total_pages(self):
        return self.block_count * self.pages_per_block

    @property
    def total_bytes(self):
        return self.total_pages * self.page_total_bytes

    def to_dict(self):
        return {
            "planes": self.planes,
            "blocks_per_plane": self.blocks_per_plane,
            "pages_per_block": self.pages_per_block,
            "sectors_per_page": self.sectors_per_page,
            "sector_data_bytes": self.sector_data_bytes,
            "sector_index_bytes": self.sector_index_bytes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in (
            "planes", "blocks_per_plane", "pages_per_block",
            "sectors_per_page", "sector_data_bytes", "sector_index_bytes")})


PROFILES = {
    "iphone5c-8g": NandGeometry(2, 1064, 256, 4, 4096, 16),
    "desk-small": NandGeometry(1, 16, 16, 4, 256, 16),
    # big enough logical space for the hot ranges near 0x000BD0FF, tiny pages
    "wear-lab": NandGeometry(1, 3400, 256, 4, 32, 16),
}


def geometry_for(profile):
    try:
        return PROFILES[profile]
    except KeyError:
        raise InvalidGeometry(f"unknown geometry profile {profile!r}") from None


@dataclass(frozen=True)
class PageAddress:
    """Row address: bits 7:0 page, bits 22:8 block, bit 23 hidden view."""

    row: int

    def __post_init__(self):
        if not 0 <= self.row < 1 << 32:
            raise AddressError(f"row {self.row!r} is not a 32-bit unsigned value")

    @classmethod
    def of(cls, block, page, hidden=False):
        if not 0 <= page < 256 or not 0 <= block < 1 << 15:
            raise AddressError(f"block {block} / page {page} not encodable")
        return cls((HIDDEN_FLAG if hidden else 0) | block << 8 | page)

    @property
    def page(self):
        return self.row & 0xFF

    @property
    def block(self):
        return (self.row >> 8) & 0x7FFF

    @property
    def hidden(self):
        return bool(self.row & HIDDEN_FLAG)

    @property
    def physical(self):
        return PageAddress(self.row & ~HIDDEN_FLAG)

    def __repr__(self):
        return f"PageAddress(0x{self.row:08X})"


class PageRecord(NamedTuple):
    status: int
    payload: bytes


@dataclass
class BlockState:
    erase_count: int = 0
    is_bad: bool = False
    pages: dict = field(default_factory=dict)  # page index -> PageRecord


def hidden_to_physical(n, pages_per_block=256):
    """Map a hidden-view page index onto the physical page it aliases.

    Pages 0 and 1 are shared; beyond that the hidden view walks the odd
    physical pages (2 -> 3, 3 -> 5, ...).
    """
    if n < 0:
        raise ResultOutOfBlock(f"negative hidden page index {n}")
    physical = n if n < 2 else 2 * n - 1
    if physical >= pages_per_block:
        raise ResultOutOfBlock(
            f"hidden page {n:#x} maps to {physical:#x}, outside a {pages_per_block}-page block")
    return physical


def hidden_page_count(pages_per_block):
    """Number of hidden-view pages that land inside a block."""
    if pages_per_block <= 2:
        return pages_per_block
    return pages_per_block // 2 + 1


class NandChip:
    def __init__(self, geometry, endurance_limit=DEFAULT_ENDURANCE, seed=0, hidden_regions=()):
        if endurance_limit < 1:
            raise InvalidGeometry("endurance limit must be >= 1")
        self.geometry = geometry
        self.endurance_limit = endurance_limit
        self.seed = seed
        self.blocks = [BlockState() for _ in range(geometry.block_count)]
        rng = random.Random(seed)
        self.unique_id = bytes(rng.getrandbits(8) for _ in range(4))
        self.gate_tags = {}
        for block in sorted(hidden_regions):
            self._check_block(block)
            self.gate_tags[block] = bytes(rng.getrandbits(8) for _ in range(GATE_TAG_BYTES))
        self.powered = False
        self.features = {}
        self._unlocked = set()
        self._erased_payload = b"\xff" * geometry.page_total_bytes

    # -- introspection -------------------------------------------------------

    @property
    def hidden_regions(self):
        return frozenset(self.gate_tags)

    @property
    def total_pages(self):
        return self.geometry.total_pages

    @property
    def erased_payload(self):
        return self._erased_payload

    @property
    def id_bytes(self):
        return bytes([MAKER_ID, DEVICE_ID]) + self.unique_id

    def erase_counts(self):
        return [b.erase_count for b in self.blocks]

    def bad_blocks(self):
        return [i for i, b in enumerate(self.blocks) if b.is_bad]

    def programmed_pages(self, block):
        """Sorted page indices holding data in ``block``."""
        return sorted(self.blocks[block].pages)

    def raw_page(self, block, page):
        """Stored record regardless of bad-block state; erased pages synthesized."""
        rec = self.blocks[block].pages.get(page)
        if rec is None:
            return PageRecord(STATUS_ERASED, self._erased_payload)
        return rec

    def snapshot(self):
        """Hashable view of all persistent state, for equality checks."""
        return (
            self.geometry,
            self.endurance_limit,
            tuple((b.erase_count, b.is_bad, tuple(sorted(b.pages.items()))) for b in self.blocks),
            tuple(sorted(self.gate_tags.items())),
        )

    # -- array operations ----------------------------------------------------

    def _check_block(self, block):
        if not 0 <= block < self.geometry.block_count:
            raise BlockOutOfRange(block, self.geometry.block_count)

    def _resolve(self, addr):
        if addr.row >> 24:
            raise AddressError(f"{addr!r} has reserved bits set")
        self._check_block(addr.block)
        if addr.page >= self.geometry.pages_per_block:
            raise AddressError(f"{addr!r} page beyond {self.geometry.pages_per_block}-page block")
        return self.blocks[addr.block]

    def erase_block(self, block):
        self._check_block(block)
        state = self.blocks[block]
        if state.is_bad:
            raise BadBlock(block)
        state.erase_count += 1
        state.pages.clear()
        if state.erase_count > self.endurance_limit:
            state.is_bad = True
            raise BadBlock(block)

    def program_page(self, addr, payload, status=STATUS_NORMAL):
        if addr.hidden:
            raise AddressError("programming goes through the physical view; clear the hidden flag")
        state = self._resolve(addr)
        if state.is_bad:
            raise BadBlock(addr.block)
        if status not in PROGRAM_STATUSES:
            raise AddressError(f"cannot program with status {status:#04x}")
        if len(payload) != self.geometry.page_total_bytes:
            raise PayloadSizeMismatch(
                f"payload is {len(payload)} bytes, page holds {self.geometry.page_total_bytes}")
        if addr.page in state.pages:
            raise ProgramOnDirtyPage(addr.block, addr.page)
        state.pages[addr.page] = PageRecord(status, bytes(payload))

    def read_page(self, addr):
        state = self._resolve(addr)
        if state.is_bad:
            raise BadBlock(addr.block)
        if not addr.hidden:
            return self.raw_page(addr.block, addr.page)
        if addr.block not in self._unlocked:
            raise HiddenViewLocked(addr.block, self._erased_payload, STATUS_ERASED)
        physical = hidden_to_physical(addr.page, self.geometry.pages_per_block)
        rec = self.raw_page(addr.block, physical)
        if rec.status == STATUS_ERASED:
            return rec
        # the alternate view reports its own status byte for the same cells
        return PageRecord(STATUS_HIDDEN, rec.payload)

    # -- hidden-view gate ----------------------------------------------------

    def unlock_hidden(self, block, tag):
        self._check_block(block)
        expected = self.gate_tags.get(block)
        if expected is None or bytes(tag) != expected:
            raise GateRejected(block)
        self._unlocked.add(block)

    def install_gate(self, block, tag):
        self._check_block(block)
        if len(tag) != GATE_TAG_BYTES:
            raise AddressError(f"gate tag must be {GATE_TAG_BYTES} bytes")
        self.gate_tags[block] = bytes(tag)

    def is_unlocked(self, block):
        return block in self._unlocked

    def reset_session(self):
        """Drop volatile state (gate unlocks, features), as on power removal."""
        self._unlocked.clear()
        self.features.clear()

    # -- fault injection -----------------------------------------------------

    def flip_bit(self, block, page, offset, bit=0):
        """Corrupt one stored bit in place, modelling a media fault."""
        state = self.blocks[block]
        rec = state.pages.get(page)
        if rec is None:
            raise AddressError("cannot flip a bit in an erased page")
        data = bytearray(rec.payload)
        data[offset] ^= 1 << bit
        state.pages[page] = PageRecord(rec.status, bytes(data))


def new_chip(geometry, endurance_limit=DEFAULT_ENDURANCE, seed=0, hidden_regions=()):
    return NandChip(geometry, endurance_limit, seed, hidden_regions)
