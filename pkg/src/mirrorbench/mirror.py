"""Attacker toolkit: dump, checksum scan, diff, selective restore, clone, verify."""

import json
from dataclasses import dataclass, field

from .bus import BusCommand, CommandKind, execute
from .crc import crc16, erased_checksum, page_checksum
from .device import TimingModel
from .errors import ChipPowered, GeometryMismatch, RegionMismatch
from .nand import STATUS_ERASED, NandChip, PageAddress, PageRecord

READ_RATE_BPS = 40_000_000
WRITE_RATE_BPS = 80_000_000
REFERENCE_COPY_MINUTES = 80  # wall-clock figure reported for the real test board


@dataclass
class BackupImage:
    geometry: object
    endurance_limit: int
    blocks: list                      # per block: dict page -> PageRecord
    erase_counts: list
    bad_blocks: list
    gate_tags: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def hidden_regions(self):
        return frozenset(self.gate_tags)

    def raw_page(self, block, page):
        rec = self.blocks[block].get(page)
        if rec is None:
            return PageRecord(STATUS_ERASED, b"\xff" * self.geometry.page_total_bytes)
        return rec

    def programmed_pages(self, block):
        return sorted(self.blocks[block])

    def __post_init__(self):
        self.bad_blocks = sorted(self.bad_blocks)

    def is_bad(self, block):
        return block in self.bad_blocks


def dump_duration_s(geometry):
    total = geometry.total_bytes
    return total / READ_RATE_BPS + total / WRITE_RATE_BPS


def dump_chip(chip, label="", created_s=0.0):
    """Copy every physical page, plus the hidden-view gate tags, off ``chip``."""
    if chip.powered:
        raise ChipPowered("detach the chip from the powered device before dumping")
    blocks = [dict(state.pages) for state in chip.blocks]
    tags = {}
    for block, tag in sorted(chip.gate_tags.items()):
        # confirm each captured tag actually opens the hidden view
        execute(chip, BusCommand(CommandKind.HIDDEN_UNLOCK, PageAddress.of(block, 0), tag=tag))
        tags[block] = tag
    chip.reset_session()
    metadata = {
        "label": label,
        "created_s": created_s,
        "duration_s": dump_duration_s(chip.geometry),
        "reference_copy_minutes": REFERENCE_COPY_MINUTES,
    }
    return BackupImage(chip.geometry, chip.endurance_limit, blocks, chip.erase_counts(),
                       chip.bad_blocks(), tags, metadata)


def chip_from_image(image, seed=0):
    """Materialise the exact chip an image describes (wear and bad blocks included)."""
    chip = NandChip(image.geometry, image.endurance_limit, seed)
    bad = set(image.bad_blocks)
    for block, state in enumerate(chip.blocks):
        state.pages = dict(image.blocks[block])
        state.erase_count = image.erase_counts[block]
        state.is_bad = block in bad
    chip.gate_tags = dict(image.gate_tags)
    return chip


# -- scan / diff ---------------------------------------------------------------

def _check_regions(regions, block_count):
    out = []
    for lo, hi in regions:
        if not 0 <= lo <= hi < block_count:
            raise RegionMismatch(f"region {lo}-{hi} outside a {block_count}-block chip")
        out.append((lo, hi))
    return out


def block_checksum(source, block):
    """CRC over (status, page CRC) of every page in the block."""
    geometry = source.geometry
    if isinstance(source, NandChip):
        bad, pages = source.blocks[block].is_bad, source.blocks[block].pages
    else:
        bad, pages = source.is_bad(block), source.blocks[block]
    erased = bytes([STATUS_ERASED]) + erased_checksum(geometry.page_total_bytes).to_bytes(2, "big")
    parts = [b"\x01" if bad else b"\x00"]
    for page in range(geometry.pages_per_block):
        rec = pages.get(page)
        if rec is None:
            parts.append(erased)
        else:
            parts.append(bytes([rec.status]) + page_checksum(rec.payload).to_bytes(2, "big"))
    return crc16(b"".join(parts))


@dataclass
class ScanManifest:
    regions: list
    block_crc: dict  # block -> 16-bit checksum

    def to_json(self):
        return json.dumps({
            "regions": [list(r) for r in self.regions],
            "block_crc": {str(b): f"0x{c:04X}" for b, c in sorted(self.block_crc.items())},
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls([tuple(r) for r in d["regions"]], {int(b): int(c, 16) for b, c in d["block_crc"].items()})


@dataclass
class DiffReport:
    regions: list
    block_crc: dict  # changed block -> checksum recorded in the baseline

    @property
    def changed(self):
        return sorted(self.block_crc)

    @property
    def scanned_blocks(self):
        return sum(hi - lo + 1 for lo, hi in self.regions)

    to_json = ScanManifest.to_json

    @classmethod
    def from_json(cls, text):
        m = ScanManifest.from_json(text)
        return cls(m.regions, m.block_crc)


def scan(source, regions):
    regions = _check_regions(regions, source.geometry.block_count)
    crcs = {}
    for lo, hi in regions:
        for block in range(lo, hi + 1):
            crcs[block] = block_checksum(source, block)
    return ScanManifest(regions, crcs)


def diff(manifest, baseline):
    """Blocks whose checksum in ``manifest`` differs from ``baseline``.

    ``baseline`` is a backup image (scanned over the same regions) or a
    manifest produced earlier over identical regions.
    """
    if isinstance(baseline, ScanManifest):
        if [tuple(r) for r in baseline.regions] != [tuple(r) for r in manifest.regions]:
            raise RegionMismatch(f"manifest regions {manifest.regions} vs baseline {baseline.regions}")
        reference = baseline
    else:
        reference = scan(baseline, manifest.regions)
    changed = {b: reference.block_crc[b] for b in sorted(manifest.block_crc)
               if manifest.block_crc[b] != reference.block_crc.get(b)}
    return DiffReport(list(manifest.regions), changed)


# -- restore / clone / verify ------------------------------------------------------

@dataclass(frozen=True)
class RestoreStats:
    blocks_erased: int
    pages_written: int
    duration_s: float


def restore_duration_s(changed, scanned, timing):
    lo, hi = timing.restore_min_s, timing.restore_max_s
    if scanned <= 0:
        return float(lo)
    return float(min(hi, max(lo, lo + changed / scanned * (hi - lo))))


def restore(chip, backup, report, timing=None):
    """Erase the changed blocks and write their used pages back from ``backup``."""
    timing = timing or TimingModel()
    if chip.powered:
        raise ChipPowered("detach the chip before restoring it")
    if chip.geometry != backup.geometry:
        raise GeometryMismatch("backup geometry differs from chip")
    pages = 0
    for block in report.changed:
        chip.erase_block(block)
        if backup.is_bad(block):
            continue
        for page in backup.programmed_pages(block):
            rec = backup.blocks[block][page]
            chip.program_page(PageAddress.of(block, page), rec.payload, rec.status)
            pages += 1
    duration = restore_duration_s(len(report.changed), report.scanned_blocks, timing)
    return RestoreStats(len(report.changed), pages, duration)


def clone(backup, blank, include_hidden=True):
    if blank.geometry != backup.geometry:
        raise GeometryMismatch("blank chip geometry differs from backup")
    if blank.powered:
        raise ChipPowered("blank chip is powered")
    for block, state in enumerate(blank.blocks):
        if state.pages and not state.is_bad:
            blank.erase_block(block)
    for block, pages in enumerate(backup.blocks):
        if backup.is_bad(block):
            continue
        for page in sorted(pages):
            rec = pages[page]
            blank.program_page(PageAddress.of(block, page), rec.payload, rec.status)
    if include_hidden:
        for block, tag in backup.gate_tags.items():
            blank.install_gate(block, tag)
    return blank


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    block: int = None
    page: int = None
    offset: int = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def verify(chip, backup):
    """Byte-compare pages, statuses and gate tags (erase counts are wear, not content)."""
    if chip.geometry != backup.geometry:
        raise GeometryMismatch("geometry differs")
    for block, state in enumerate(chip.blocks):
        bad_backup = backup.is_bad(block)
        if state.is_bad and bad_backup:
            continue
        if state.is_bad != bad_backup:
            return VerifyResult(False, block, detail="bad-block flag differs")
        stored = backup.blocks[block]
        if state.pages == stored:
            continue
        for page in sorted(set(state.pages) | set(stored)):
            a, b = chip.raw_page(block, page), backup.raw_page(block, page)
            if a.status != b.status:
                return VerifyResult(False, block, page, None, f"status {a.status:#04x} vs {b.status:#04x}")
            if a.payload != b.payload:
                offset = next(i for i, (x, y) in enumerate(zip(a.payload, b.payload)) if x != y)
                return VerifyResult(False, block, page, offset, "payload differs")
    if chip.gate_tags != backup.gate_tags:
        blocks = sorted(set(chip.gate_tags) ^ set(backup.gate_tags)
                        | {b for b in chip.gate_tags if backup.gate_tags.get(b) != chip.gate_tags[b]})
        return VerifyResult(False, blocks[0], detail="hidden gate tag differs")
    return VerifyResult(True)
