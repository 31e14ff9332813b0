"""Flash translation layer driven entirely by per-sector index records.

Every programmed page carries four identical 16-byte index records (one per
sector) naming its logical page and a global sequence number, so the whole
logical map can be rebuilt from the media. The live object keeps the same
map incrementally; ``rebuild_map(chip)`` must always agree with it.
"""

import struct
from dataclasses import dataclass, field

from .crc import crc16
from .errors import BadBlock, FtlError, LogicalRangeError, NoFreePages, PayloadSizeMismatch, Unmapped
from .nand import STATUS_ERASED, STATUS_NORMAL, PageAddress

INDEX_BYTES = 16
_INDEX = struct.Struct("<IIB5s")  # lpn, seq, flags, reserved; crc appended
FLAG_VALID = 0x01
FLAG_COUNTER = 0x02

OVER_PROVISIONING = 0.10

# logical pages that the stock firmware rewrites in place
DEFAULT_HOT_REGIONS = (
    (0x000BB100, 0x000BB1FF),
    (0x000BD000, 0x000BD0FF),
    (0x0003B100, 0x0003B1FF),
    (0x0003D000, 0x0003D0FF),
)


@dataclass(frozen=True)
class SectorIndex:
    lpn: int
    seq: int
    flags: int = FLAG_VALID

    def pack(self):
        body = _INDEX.pack(self.lpn, self.seq, self.flags, b"\x00" * 5)
        return body + crc16(body).to_bytes(2, "little")

    @classmethod
    def unpack(cls, raw):
        """Parse a record; ``None`` when the checksum does not verify."""
        if len(raw) != INDEX_BYTES or crc16(raw[:14]) != int.from_bytes(raw[14:], "little"):
            return None
        lpn, seq, flags, _ = _INDEX.unpack(raw[:14])
        return cls(lpn, seq, flags)


def build_page(geometry, data, index):
    sdb = geometry.sector_data_bytes
    record = index.pack()
    return b"".join(data[i * sdb:(i + 1) * sdb] + record for i in range(geometry.sectors_per_page))


def page_index(geometry, payload):
    """The page's index record, or ``None`` if any copy is corrupt or they disagree."""
    sdb, step = geometry.sector_data_bytes, geometry.sector_bytes
    first = payload[sdb:step]
    for i in range(1, geometry.sectors_per_page):
        if payload[i * step + sdb:(i + 1) * step] != first:
            return None
    return SectorIndex.unpack(first)


def page_data(geometry, payload):
    sdb, step = geometry.sector_data_bytes, geometry.sector_bytes
    return b"".join(payload[i * step:i * step + sdb] for i in range(geometry.sectors_per_page))


@dataclass
class FtlConfig:
    hot_bug_regions: tuple = DEFAULT_HOT_REGIONS
    bug_enabled: bool = False
    counter_lpns: range = range(0)

    def is_hot(self, lpn):
        return self.bug_enabled and any(lo <= lpn <= hi for lo, hi in self.hot_bug_regions)


@dataclass
class LogicalMap:
    mapping: dict = field(default_factory=dict)   # lpn -> PageAddress
    seqs: dict = field(default_factory=dict)      # lpn -> sequence number
    max_seq: int = -1
    cursor: tuple = None                          # (active block, next page) or None
    corrupt: list = field(default_factory=list)   # PageAddress of rejected pages

    def same_mapping(self, other):
        return (self.mapping, self.seqs, self.max_seq, self.cursor) == (
            other.mapping, other.seqs, other.max_seq, other.cursor)


def rebuild_map(chip, blocks=None):
    """Reconstruct the logical map by scanning index records on the media."""
    geometry = chip.geometry
    lmap = LogicalMap()
    top = None
    for block in (range(geometry.block_count) if blocks is None else blocks):
        state = chip.blocks[block]
        if state.is_bad:
            continue
        for page in sorted(state.pages):
            addr = PageAddress.of(block, page)
            index = page_index(geometry, state.pages[page].payload)
            if index is None:
                lmap.corrupt.append(addr)
                continue
            if index.seq > lmap.max_seq:
                lmap.max_seq = index.seq
                top = block
            if not index.flags & FLAG_VALID:
                continue
            if index.lpn not in lmap.seqs or index.seq > lmap.seqs[index.lpn]:
                lmap.seqs[index.lpn] = index.seq
                lmap.mapping[index.lpn] = addr
    if top is not None:
        lmap.cursor = (top, max(chip.blocks[top].pages) + 1)
    return lmap


class Ftl:
    """Page-mapped FTL over a set of physical blocks of one chip."""

    def __init__(self, chip, blocks=None, config=None, over_provisioning=OVER_PROVISIONING):
        geometry = chip.geometry
        if geometry.sector_index_bytes != INDEX_BYTES:
            raise FtlError(f"index records need {INDEX_BYTES} spare bytes per sector")
        self.chip = chip
        self.geometry = geometry
        self.blocks = sorted(range(geometry.block_count) if blocks is None else blocks)
        self.config = config or FtlConfig()
        self.capacity = int(len(self.blocks) * geometry.pages_per_block * (1 - over_provisioning))
        if self.config.bug_enabled:
            for lo, hi in self.config.hot_bug_regions:
                if not 0 <= lo <= hi < self.capacity:
                    raise LogicalRangeError(
                        f"hot range {lo:#x}-{hi:#x} outside logical space of {self.capacity:#x} pages")
        self.history = {}  # lpn -> [writes, set of (block, page) locations used]
        self._in_gc = False
        self._load(rebuild_map(chip, self.blocks))

    def _load(self, lmap):
        self.map = {lpn: (a.block, a.page) for lpn, a in lmap.mapping.items()}
        self.seqs = dict(lmap.seqs)
        self.next_seq = lmap.max_seq + 1
        self.owner = {loc: lpn for lpn, loc in self.map.items()}
        self.valid = {b: set() for b in self.blocks}
        for block, page in self.map.values():
            self.valid[block].add(page)
        self.active, self.wp = lmap.cursor if lmap.cursor else (None, 0)
        self.free = {b for b in self.blocks
                     if not self.chip.blocks[b].is_bad and not self.chip.blocks[b].pages
                     and b != self.active}

    def live_map(self):
        lmap = LogicalMap(
            mapping={lpn: PageAddress.of(b, p) for lpn, (b, p) in self.map.items()},
            seqs=dict(self.seqs),
            max_seq=self.next_seq - 1,
        )
        if self.active is not None:
            lmap.cursor = (self.active, self.wp)
        return lmap

    # -- public operations ---------------------------------------------------

    def write(self, lpn, data):
        if not 0 <= lpn < self.capacity:
            raise LogicalRangeError(f"logical page {lpn:#x} beyond capacity {self.capacity:#x}")
        if len(data) != self.geometry.page_data_bytes:
            raise PayloadSizeMismatch(
                f"logical page holds {self.geometry.page_data_bytes} bytes, got {len(data)}")
        flags = FLAG_VALID | (FLAG_COUNTER if lpn in self.config.counter_lpns else 0)
        if lpn in self.map and self.config.is_hot(lpn):
            block, page = self._rewrite_in_place(lpn, data, flags)
        else:
            block, page = self._append(lpn, data, flags)
        entry = self.history.setdefault(lpn, [0, set()])
        entry[0] += 1
        entry[1].add((block, page))
        return PageAddress.of(block, page)

    def read(self, lpn):
        loc = self.map.get(lpn)
        if loc is None:
            raise Unmapped(lpn)
        rec = self.chip.read_page(PageAddress.of(*loc))
        return page_data(self.geometry, rec.payload)

    def reclaim(self):
        """Erase blocks holding only stale or erased pages; returns how many."""
        erased = 0
        for block in self.blocks:
            state = self.chip.blocks[block]
            if state.is_bad or not state.pages or self.valid[block]:
                continue
            if block == self.active and self.wp < self.geometry.pages_per_block:
                continue
            if self._erase(block):
                erased += 1
        return erased

    # -- internals -------------------------------------------------------------

    def _erase(self, block):
        if block == self.active:
            self.active, self.wp = None, 0
        try:
            self.chip.erase_block(block)
        except BadBlock:
            self._retire(block)
            return False
        self.free.add(block)
        return True

    def _retire(self, block):
        self.free.discard(block)
        for page in self.valid[block]:
            lpn = self.owner.pop((block, page))
            del self.map[lpn]
            del self.seqs[lpn]
        self.valid[block].clear()
        if block == self.active:
            self.active, self.wp = None, 0

    def _allocate(self):
        if self.active is not None and self.wp < self.geometry.pages_per_block:
            self.wp += 1
            return self.active, self.wp - 1
        if not self._in_gc and len(self.free) < 2:
            self._collect()
        if not self.free:
            raise NoFreePages("no erased block available and nothing left to reclaim")
        block = min(self.free, key=lambda b: (self.chip.blocks[b].erase_count, b))
        self.free.remove(block)
        self.active, self.wp = block, 1
        return block, 0

    def _append(self, lpn, data, flags):
        block, page = self._allocate()
        seq = self.next_seq
        self.next_seq += 1
        payload = build_page(self.geometry, data, SectorIndex(lpn, seq, flags))
        self.chip.program_page(PageAddress.of(block, page), payload, STATUS_NORMAL)
        old = self.map.get(lpn)
        if old is not None:
            self.valid[old[0]].discard(old[1])
            del self.owner[old]
        self.map[lpn] = (block, page)
        self.seqs[lpn] = seq
        self.owner[(block, page)] = lpn
        self.valid[block].add(page)
        return block, page

    def _rewrite_in_place(self, lpn, data, flags):
        # read-modify-write of the whole block: the defect that concentrates wear
        block, page = self.map[lpn]
        saved = dict(self.chip.blocks[block].pages)
        try:
            self.chip.erase_block(block)
        except BadBlock:
            self._retire(block)
            raise
        payload = build_page(self.geometry, data, SectorIndex(lpn, self.seqs[lpn], flags))
        for pg in sorted(saved):
            rec = saved[pg]
            body = payload if pg == page else rec.payload
            self.chip.program_page(PageAddress.of(block, pg), body, rec.status)
        return block, page

    def _collect(self):
        self._in_gc = True
        try:
            self.reclaim()
            for _ in range(len(self.blocks)):
                if len(self.free) >= 2:
                    break
                victim = self._pick_victim()
                if victim is None:
                    break
                for page in sorted(self.valid[victim]):
                    lpn = self.owner[(victim, page)]
                    rec = self.chip.raw_page(victim, page)
                    index = page_index(self.geometry, rec.payload)
                    self._append(lpn, page_data(self.geometry, rec.payload), index.flags)
                self._erase(victim)
        finally:
            self._in_gc = False

    def _pick_victim(self):
        best = None
        for block in self.blocks:
            state = self.chip.blocks[block]
            if state.is_bad or block in self.free or not state.pages:
                continue
            if block == self.active and self.wp < self.geometry.pages_per_block:
                continue
            live = len(self.valid[block])
            if live >= len(state.pages):
                continue
            key = (live, state.erase_count, block)
            if best is None or key < best:
                best = key
        return None if best is None else best[2]


def is_erased(record):
    return record.status == STATUS_ERASED
