import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FAST_KDF
from mirrorbench.device import BOOT_LOOP, BOOTED, Device
from mirrorbench.errors import ChipPowered, GeometryMismatch, RegionMismatch
from mirrorbench.ftl import Ftl
from mirrorbench.mirror import (DiffReport, ScanManifest, block_checksum, chip_from_image, clone, diff,
                                dump_chip, dump_duration_s, restore, restore_duration_s, scan, verify)
from mirrorbench.device import TimingModel
from mirrorbench.nand import PageAddress, geometry_for, new_chip
from oracles import changed_blocks, crc16_bitwise

G = geometry_for("desk-small")
ALL = [(0, G.block_count - 1)]


def provisioned(seed=3):
    device = Device.from_seed(seed, G, kdf_iterations=FAST_KDF)
    chip = new_chip(G, seed=seed)
    device.provision(chip, "1234")
    return device, chip


def test_dump_is_exact():
    _, chip = provisioned()
    image = dump_chip(chip)
    assert verify(chip, image)
    assert image.gate_tags == chip.gate_tags
    assert image.erase_counts == chip.erase_counts()


def test_dump_duration_raw_rate():
    g = geometry_for("iphone5c-8g")
    assert dump_duration_s(g) == pytest.approx(g.total_bytes / 40e6 + g.total_bytes / 80e6)


def test_dump_refuses_powered_chip():
    device, chip = provisioned()
    device.boot(chip)
    with pytest.raises(ChipPowered):
        dump_chip(chip)


def test_block_checksum_matches_oracle():
    _, chip = provisioned()
    parts = [b"\x00"]
    for page in range(G.pages_per_block):
        rec = chip.raw_page(4, page)
        parts.append(bytes([rec.status]) + crc16_bitwise(rec.payload).to_bytes(2, "big"))
    assert block_checksum(chip, 4) == crc16_bitwise(b"".join(parts))


def test_scan_diff_restore_cycle():
    device, chip = provisioned()
    backup = dump_chip(chip)
    device.boot(chip)
    for _ in range(5):
        device.advance(device.pending_delay_s)
        device.try_passcode("0000")
    device.power_down()
    device.detach()
    report = diff(scan(chip, ALL), backup)
    assert report.changed == changed_blocks(chip, backup, range(G.block_count))
    assert report.changed
    stats = restore(chip, backup, report)
    assert stats.blocks_erased == len(report.changed)
    assert 30 <= stats.duration_s <= 60
    assert verify(chip, backup)
    assert diff(scan(chip, ALL), backup).changed == []


def test_manifest_json_round_trip():
    _, chip = provisioned()
    m = scan(chip, [(2, 9)])
    assert ScanManifest.from_json(m.to_json()) == m
    d = DiffReport([(2, 9)], {4: 0xBEEF})
    assert DiffReport.from_json(d.to_json()) == d
    assert '"4": "0xBEEF"' in d.to_json()


def test_manifest_baseline_regions_must_match():
    _, chip = provisioned()
    with pytest.raises(RegionMismatch):
        diff(scan(chip, [(0, 3)]), scan(chip, [(0, 4)]))
    with pytest.raises(RegionMismatch):
        scan(chip, [(0, 99)])


def test_restore_duration_bounds():
    t = TimingModel()
    assert restore_duration_s(0, 10, t) == 30
    assert restore_duration_s(10, 10, t) == 60
    assert restore_duration_s(5, 10, t) == 45


def test_clone_with_and_without_hidden():
    device, chip = provisioned()
    backup = dump_chip(chip)
    full = clone(backup, new_chip(G, seed=99))
    assert verify(full, backup)
    assert Device(device.uid, device.layout, kdf_iterations=FAST_KDF).boot(full).outcome == BOOTED
    bare = clone(backup, new_chip(G, seed=99), include_hidden=False)
    result = verify(bare, backup)
    assert not result and "gate" in result.detail
    assert Device(device.uid, device.layout, kdf_iterations=FAST_KDF).boot(bare).outcome == BOOT_LOOP


def test_clone_geometry_checked():
    _, chip = provisioned()
    with pytest.raises(GeometryMismatch):
        clone(dump_chip(chip), new_chip(geometry_for("wear-lab")))


def test_verify_reports_first_difference():
    _, chip = provisioned()
    backup = dump_chip(chip)
    chip.flip_bit(1, 2, 33)
    result = verify(chip, backup)
    assert (result.block, result.page, result.offset) == (1, 2, 33)


def test_image_chip_round_trip():
    _, chip = provisioned()
    chip.erase_block(12)
    image = dump_chip(chip)
    again = chip_from_image(image)
    assert verify(again, image) and again.erase_counts() == chip.erase_counts()


blocks = st.integers(4, 11)


@given(st.lists(st.tuples(blocks, st.integers(0, 2 ** 16)), max_size=40), st.lists(blocks, max_size=3))
def test_restore_scope_and_idempotence(writes, erases):
    """Only diffed blocks are erased, and a second restore changes nothing."""
    _, chip = provisioned()
    backup = dump_chip(chip)
    ftl = Ftl(chip, range(4, 12))
    for lpn, v in writes:
        ftl.write(lpn, v.to_bytes(4, "little") * (G.page_data_bytes // 4))
    for b in erases:
        chip.erase_block(b)
    report = diff(scan(chip, ALL), backup)
    assert report.changed == changed_blocks(chip, backup, range(G.block_count))
    before = chip.erase_counts()
    restore(chip, backup, report)
    after = chip.erase_counts()
    touched = [b for b in range(G.block_count) if after[b] != before[b]]
    assert touched == report.changed
    assert verify(chip, backup)
    again = diff(scan(chip, ALL), backup)
    assert again.changed == []
    restore(chip, backup, again)
    assert chip.erase_counts() == after
