import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrorbench.bus import (COMMAND_GAP_NS, BusCommand, BusMode, CommandKind, TraceEvent, command_cycle_count,
                             command_span_ns, decode, detect_phases, encode, encode_trace, execute,
                             phases_from_commands, read_trace, write_trace)
from mirrorbench.errors import GateRejected, MalformedCommand, UnparseableTrace
from mirrorbench.nand import PageAddress, geometry_for, new_chip

K = CommandKind
rows = st.integers(0, 2 ** 24 - 1).map(PageAddress)
modes = st.sampled_from([BusMode.SDR17, BusMode.PROP50, BusMode.DDR128])
blobs = st.binary(max_size=40)


@st.composite
def commands(draw):
    kind = draw(st.sampled_from(list(K)))
    mode = draw(modes)
    if kind is K.RESET:
        return BusCommand(kind, mode=mode)
    if kind is K.READ_ID:
        return BusCommand(kind, data=draw(blobs), mode=mode, feature=draw(st.integers(0, 255)))
    if kind is K.SET_FEATURE:
        return BusCommand(kind, data=draw(st.binary(min_size=4, max_size=4)), mode=mode,
                          feature=draw(st.integers(0, 255)))
    if kind is K.HIDDEN_UNLOCK:
        return BusCommand(kind, row=draw(rows), mode=mode, tag=draw(st.binary(min_size=8, max_size=8)))
    row = draw(rows)
    if kind is K.HIDDEN_READ:
        row = PageAddress(row.row | 1 << 23)
    elif kind in (K.READ_PAGE, K.PROGRAM_PAGE):
        row = PageAddress(row.row & ~(1 << 23))
    data = b"" if kind is K.ERASE_BLOCK else draw(blobs)
    return BusCommand(kind, row=row, data=data, mode=mode)


@given(st.lists(commands(), min_size=1, max_size=12))
def test_round_trip_and_one_burst_per_unlock(cmds):
    events = encode_trace(cmds)
    decoded, anomalies = decode(events)
    assert decoded == cmds
    bursts = [a for a in anomalies if a.kind == "SmuggledBurst"]
    unlocks = [i for i, c in enumerate(cmds) if c.kind is K.HIDDEN_UNLOCK]
    assert [a.command_index for a in bursts] == unlocks
    for a in bursts:
        assert a.nominal_bps == 256_000_000
        assert a.rate_bps == pytest.approx(256e6, rel=0.02)
        assert a.count == 8
    assert not [a for a in anomalies if a.kind == "SubNanosecondSetup"]


@given(st.lists(commands(), min_size=1, max_size=8))
def test_cycle_accounting(cmds):
    for cmd in cmds:
        ev = encode(cmd, 1000)
        assert len(ev) == command_cycle_count(cmd)
        assert ev[-1].t_ns - ev[0].t_ns == command_span_ns(cmd)
    assert phases_from_commands(cmds) == detect_phases(encode_trace(cmds))


@given(st.lists(commands(), min_size=1, max_size=6))
def test_jsonl_round_trip(cmds):
    events = encode_trace(cmds)
    buf = io.StringIO()
    write_trace(buf, events)
    buf.seek(0)
    assert read_trace(buf) == events


def test_prop50_prefix():
    ev = encode(BusCommand(K.RESET, mode=BusMode.PROP50))
    assert [(e.kind, e.value) for e in ev] == [("cmd", 0x5C), ("cmd", 0xFF)]


def test_read_opcodes():
    cmd = BusCommand(K.READ_PAGE, row=PageAddress.of(0x041A, 2))
    values = [e.value for e in encode(cmd)]
    assert values == [0x00, 0, 0, 0x02, 0x1A, 0x04, 0x30]


def test_unlock_envelope_and_dummy_bit():
    ev = encode(BusCommand(K.HIDDEN_UNLOCK, row=PageAddress.of(3, 0), tag=bytes(8)))
    envelope = [e for e in ev if e.kind != "smuggled_data"]
    burst = [e for e in ev if e.kind == "smuggled_data"]
    assert [e.t_ns for e in envelope] == [0, 1000, 2000, 3000, 5000]
    assert all(e.dummy_bit7 and e.mode is BusMode.SMUGGLED256 for e in burst)
    assert burst[0].t_ns == 4000 and burst[-1].t_ns == 4000 + 7 * 10 ** 9 // 256_000_000


def test_commands_separated_by_gap():
    cmds = [BusCommand(K.RESET), BusCommand(K.RESET)]
    ev = encode_trace(cmds)
    assert ev[1].t_ns - ev[0].t_ns == COMMAND_GAP_NS


def test_sub_nanosecond_setup_flagged():
    ev = [TraceEvent(0, "cmd", 0x90, BusMode.SDR17), TraceEvent(1000, "addr", 0, BusMode.SDR17, True),
          TraceEvent(1023, "data_out", 1, BusMode.SDR17)]
    _, anomalies = decode(ev)
    assert [a.kind for a in anomalies] == ["SubNanosecondSetup"]


@pytest.mark.parametrize("events, offset", [
    ([TraceEvent(0, "addr", 1, BusMode.SDR17)], 0),
    ([TraceEvent(0, "cmd", 0x00, BusMode.SDR17)], 1),
    ([TraceEvent(0, "cmd", 0x42, BusMode.SDR17)], 0),
    ([TraceEvent(5, "cmd", 0xFF, BusMode.SDR17), TraceEvent(5, "cmd", 0xFF, BusMode.SDR17)], 1),
])
def test_unparseable(events, offset):
    with pytest.raises(UnparseableTrace) as err:
        decode(events)
    assert err.value.offset == offset


def test_bad_json_line():
    with pytest.raises(UnparseableTrace):
        read_trace(io.StringIO('{"t_ns": 0}\n'))


def test_malformed_command():
    with pytest.raises(MalformedCommand):
        BusCommand(K.HIDDEN_UNLOCK, row=PageAddress.of(1, 0), tag=b"short").validate()
    with pytest.raises(MalformedCommand):
        BusCommand(K.READ_PAGE).validate()


def test_execute_against_chip():
    g = geometry_for("desk-small")
    chip = new_chip(g, seed=1, hidden_regions=(3,))
    data = bytes(range(256)) * (g.page_total_bytes // 256) + bytes(g.page_total_bytes % 256)
    execute(chip, BusCommand(K.PROGRAM_PAGE, row=PageAddress.of(3, 1), data=data))
    assert execute(chip, BusCommand(K.READ_PAGE, row=PageAddress.of(3, 1))) == data
    with pytest.raises(GateRejected):
        execute(chip, BusCommand(K.HIDDEN_UNLOCK, row=PageAddress.of(3, 0), tag=bytes(8)))
    execute(chip, BusCommand(K.HIDDEN_UNLOCK, row=PageAddress.of(3, 0), tag=chip.gate_tags[3]))
    assert execute(chip, BusCommand(K.HIDDEN_READ, row=PageAddress.of(3, 1, hidden=True))) == data
    assert execute(chip, BusCommand(K.READ_ID)) == chip.id_bytes
