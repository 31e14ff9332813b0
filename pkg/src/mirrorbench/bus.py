"""Cycle-level NAND bus codec.

Commands are framed the ONFi way (command cycle, address cycles, data
cycles, confirm). Proprietary 50 MHz commands carry a 0x5C vendor prefix.
The hidden-view unlock is a slow ~1 MHz envelope with an 8-byte tag burst
clocked at 256 MB/s inside it; the decoder flags such bursts.
"""

import json
import statistics
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple

from .errors import MalformedCommand, UnparseableTrace
from .nand import GATE_TAG_BYTES, STATUS_NORMAL, PageAddress


class BusMode(Enum):
    SDR17 = "SDR17"
    PROP50 = "PROP50"
    DDR128 = "DDR128"
    SMUGGLED256 = "SMUGGLED256"

    @property
    def rate(self):
        """Nominal bytes per second."""
        return _RATES[self]


_RATES = {
    BusMode.SDR17: 17_000_000,
    BusMode.PROP50: 50_000_000,
    BusMode.DDR128: 256_000_000,
    BusMode.SMUGGLED256: 256_000_000,
}

COMMAND_MODES = (BusMode.SDR17, BusMode.PROP50, BusMode.DDR128)


class CommandKind(Enum):
    RESET = "Reset"
    READ_ID = "ReadId"
    READ_PAGE = "ReadPage"
    PROGRAM_PAGE = "ProgramPage"
    ERASE_BLOCK = "EraseBlock"
    SET_FEATURE = "SetFeature"
    HIDDEN_UNLOCK = "HiddenUnlock"
    HIDDEN_READ = "HiddenRead"


OP_READ = 0x00
OP_PROGRAM_CONFIRM = 0x10
OP_READ_CONFIRM = 0x30
OP_VENDOR_PREFIX = 0x5C
OP_ERASE = 0x60
OP_PROGRAM = 0x80
OP_READ_ID = 0x90
OP_HIDDEN_UNLOCK = 0xA5
OP_HIDDEN_CONFIRM = 0xA6
OP_ERASE_CONFIRM = 0xD0
OP_SET_FEATURE = 0xEF
OP_RESET = 0xFF

ENVELOPE_PERIOD_NS = 1000
COMMAND_GAP_NS = 100
DUMMY_BIT7_NS = 23
SMUGGLE_RATIO = 100
SET_FEATURE_PARAMS = 4

CYCLE_KINDS = ("cmd", "addr", "data_in", "data_out", "smuggled_data")
DATA_KINDS = ("data_in", "data_out", "smuggled_data")


@dataclass(frozen=True)
class BusCommand:
    kind: CommandKind
    row: PageAddress = None
    data: bytes = b""
    mode: BusMode = BusMode.SDR17
    tag: bytes = None
    feature: int = 0  # single address byte of ReadId / SetFeature

    def validate(self):
        kind = self.kind
        if self.mode not in COMMAND_MODES:
            raise MalformedCommand(f"{self.mode.value} is not a command clocking mode")
        if not 0 <= self.feature <= 0xFF:
            raise MalformedCommand("feature address must be one byte")
        needs_row = kind in (CommandKind.READ_PAGE, CommandKind.PROGRAM_PAGE, CommandKind.ERASE_BLOCK,
                             CommandKind.HIDDEN_UNLOCK, CommandKind.HIDDEN_READ)
        if needs_row != (self.row is not None):
            raise MalformedCommand(f"{kind.value} {'requires' if needs_row else 'takes no'} row address")
        if self.row is not None and self.row.row >> 24:
            raise MalformedCommand(f"row {self.row!r} does not fit three address cycles")
        if (kind is CommandKind.HIDDEN_UNLOCK) != (self.tag is not None):
            raise MalformedCommand("only HiddenUnlock carries a smuggled tag")
        if kind is CommandKind.HIDDEN_UNLOCK and len(self.tag) != GATE_TAG_BYTES:
            raise MalformedCommand(f"HiddenUnlock tag must be {GATE_TAG_BYTES} bytes")
        if kind is CommandKind.HIDDEN_READ and not self.row.hidden:
            raise MalformedCommand("HiddenRead requires the hidden flag in its address")
        if kind in (CommandKind.READ_PAGE, CommandKind.PROGRAM_PAGE) and self.row.hidden:
            raise MalformedCommand(f"{kind.value} uses the physical view")
        if kind in (CommandKind.RESET, CommandKind.ERASE_BLOCK, CommandKind.HIDDEN_UNLOCK) and self.data:
            raise MalformedCommand(f"{kind.value} carries no data")
        if kind is CommandKind.SET_FEATURE and len(self.data) != SET_FEATURE_PARAMS:
            raise MalformedCommand("SetFeature carries four parameter bytes")
        return self


class TraceEvent(NamedTuple):
    t_ns: int
    kind: str
    value: int
    mode: BusMode
    dummy_bit7: bool = False


@dataclass(frozen=True)
class Anomaly:
    kind: str                 # "SmuggledBurst" | "SubNanosecondSetup"
    offset: int               # index of the first event involved
    command_index: int
    rate_bps: float = None    # measured
    nominal_bps: int = None
    count: int = 0
    detail: str = ""


@dataclass(frozen=True)
class Phase:
    mode: BusMode
    start_ns: int
    end_ns: int
    commands: int
    events: int


# -- encoding ------------------------------------------------------------------

def _row_bytes(row):
    r = row.row
    return [r & 0xFF, (r >> 8) & 0xFF, (r >> 16) & 0xFF]


def _cycles(cmd):
    """(kind, value) cycles of a command, excluding any vendor prefix."""
    kind = cmd.kind
    if kind is CommandKind.RESET:
        return [("cmd", OP_RESET)]
    if kind is CommandKind.READ_ID:
        return [("cmd", OP_READ_ID), ("addr", cmd.feature)] + [("data_out", b) for b in cmd.data]
    if kind in (CommandKind.READ_PAGE, CommandKind.HIDDEN_READ):
        addr = [("addr", 0), ("addr", 0)] + [("addr", b) for b in _row_bytes(cmd.row)]
        return [("cmd", OP_READ)] + addr + [("cmd", OP_READ_CONFIRM)] + [("data_out", b) for b in cmd.data]
    if kind is CommandKind.PROGRAM_PAGE:
        addr = [("addr", 0), ("addr", 0)] + [("addr", b) for b in _row_bytes(cmd.row)]
        return ([("cmd", OP_PROGRAM)] + addr + [("data_in", b) for b in cmd.data]
                + [("cmd", OP_PROGRAM_CONFIRM)])
    if kind is CommandKind.ERASE_BLOCK:
        return [("cmd", OP_ERASE)] + [("addr", b) for b in _row_bytes(cmd.row)] + [("cmd", OP_ERASE_CONFIRM)]
    if kind is CommandKind.SET_FEATURE:
        return [("cmd", OP_SET_FEATURE), ("addr", cmd.feature)] + [("data_in", b) for b in cmd.data]
    if kind is CommandKind.HIDDEN_UNLOCK:
        return ([("cmd", OP_HIDDEN_UNLOCK)] + [("addr", b) for b in _row_bytes(cmd.row)]
                + [("smuggled_data", b) for b in cmd.tag] + [("cmd", OP_HIDDEN_CONFIRM)])
    raise MalformedCommand(f"unknown command kind {kind!r}")


def _offset_ns(i, rate):
    return i * 1_000_000_000 // rate


def encode(cmd, t0=0):
    """Render one command as timestamped bus cycles starting at ``t0``."""
    cmd.validate()
    cycles = _cycles(cmd)
    if cmd.mode is BusMode.PROP50:
        cycles = [("cmd", OP_VENDOR_PREFIX)] + cycles
    if cmd.kind is not CommandKind.HIDDEN_UNLOCK:
        rate = cmd.mode.rate
        return [TraceEvent(t0 + _offset_ns(i, rate), kind, value, cmd.mode)
                for i, (kind, value) in enumerate(cycles)]

    events = []
    slot = 0
    burst = 0
    for kind, value in cycles:
        if kind == "smuggled_data":
            if burst == 0:
                base = t0 + slot * ENVELOPE_PERIOD_NS
                slot += 1
            t = base + _offset_ns(burst, BusMode.SMUGGLED256.rate)
            events.append(TraceEvent(t, kind, value, BusMode.SMUGGLED256, True))
            burst += 1
        else:
            events.append(TraceEvent(t0 + slot * ENVELOPE_PERIOD_NS, kind, value, cmd.mode))
            slot += 1
    return events


def command_cycle_count(cmd):
    """Number of trace events ``encode(cmd)`` produces."""
    fixed = {
        CommandKind.RESET: 1,
        CommandKind.READ_ID: 2,
        CommandKind.READ_PAGE: 7,
        CommandKind.HIDDEN_READ: 7,
        CommandKind.PROGRAM_PAGE: 7,
        CommandKind.ERASE_BLOCK: 5,
        CommandKind.SET_FEATURE: 2,
        CommandKind.HIDDEN_UNLOCK: 5 + GATE_TAG_BYTES,
    }[cmd.kind]
    return fixed + len(cmd.data) + (1 if cmd.mode is BusMode.PROP50 else 0)


def command_span_ns(cmd):
    """Time from the first to the last event of ``encode(cmd)``."""
    if cmd.kind is CommandKind.HIDDEN_UNLOCK:
        envelope_slots = 5 + (1 if cmd.mode is BusMode.PROP50 else 0)  # burst takes one slot
        return (envelope_slots) * ENVELOPE_PERIOD_NS
    return _offset_ns(command_cycle_count(cmd) - 1, cmd.mode.rate)


def encode_trace(cmds, t0=0):
    events = []
    t = t0
    for cmd in cmds:
        chunk = encode(cmd, t)
        events.extend(chunk)
        t = chunk[-1].t_ns + COMMAND_GAP_NS
    return events


# -- decoding ------------------------------------------------------------------

class _Reader:
    def __init__(self, events):
        self.events = events
        self.i = 0

    def peek(self):
        return self.events[self.i] if self.i < len(self.events) else None

    def take(self, kind, count=1):
        values = []
        for _ in range(count):
            e = self.peek()
            if e is None:
                raise UnparseableTrace(f"trace ends inside a command, expected {kind}", self.i)
            if e.kind != kind:
                raise UnparseableTrace(f"expected {kind} cycle, found {e.kind}", self.i)
            values.append(e.value)
            self.i += 1
        return values

    def take_opcode(self, opcode):
        (value,) = self.take("cmd")
        if value != opcode:
            raise UnparseableTrace(f"expected opcode {opcode:#04x}, found {value:#04x}", self.i - 1)

    def take_run(self, kind):
        values = []
        while (e := self.peek()) is not None and e.kind == kind:
            values.append(e.value)
            self.i += 1
        return bytes(values)


def _row(values):
    return PageAddress(values[0] | values[1] << 8 | values[2] << 16)


def _parse_one(rd):
    start = rd.i
    first = rd.peek()
    if first.kind != "cmd":
        raise UnparseableTrace(f"{first.kind} cycle outside any command", start)
    mode = first.mode
    (op,) = rd.take("cmd")
    if op == OP_VENDOR_PREFIX:
        mode = BusMode.PROP50
        (op,) = rd.take("cmd")
    if mode not in COMMAND_MODES:
        raise UnparseableTrace(f"command cycle clocked as {mode.value}", start)

    if op == OP_RESET:
        return BusCommand(CommandKind.RESET, mode=mode)
    if op == OP_READ_ID:
        (feature,) = rd.take("addr")
        return BusCommand(CommandKind.READ_ID, data=rd.take_run("data_out"), mode=mode, feature=feature)
    if op == OP_READ:
        rd.take("addr", 2)
        row = _row(rd.take("addr", 3))
        rd.take_opcode(OP_READ_CONFIRM)
        kind = CommandKind.HIDDEN_READ if row.hidden else CommandKind.READ_PAGE
        return BusCommand(kind, row=row, data=rd.take_run("data_out"), mode=mode)
    if op == OP_PROGRAM:
        rd.take("addr", 2)
        row = _row(rd.take("addr", 3))
        data = rd.take_run("data_in")
        rd.take_opcode(OP_PROGRAM_CONFIRM)
        return BusCommand(CommandKind.PROGRAM_PAGE, row=row, data=data, mode=mode)
    if op == OP_ERASE:
        row = _row(rd.take("addr", 3))
        rd.take_opcode(OP_ERASE_CONFIRM)
        return BusCommand(CommandKind.ERASE_BLOCK, row=row, mode=mode)
    if op == OP_SET_FEATURE:
        (feature,) = rd.take("addr")
        data = bytes(rd.take("data_in", SET_FEATURE_PARAMS))
        return BusCommand(CommandKind.SET_FEATURE, data=data, mode=mode, feature=feature)
    if op == OP_HIDDEN_UNLOCK:
        row = _row(rd.take("addr", 3))
        tag = bytes(rd.take("smuggled_data", GATE_TAG_BYTES))
        rd.take_opcode(OP_HIDDEN_CONFIRM)
        return BusCommand(CommandKind.HIDDEN_UNLOCK, row=row, mode=mode, tag=tag)
    raise UnparseableTrace(f"unknown opcode {op:#04x}", rd.i - 1)


def _scan_anomalies(events, start, end, command_index):
    found = []
    envelope_gaps = [events[k + 1].t_ns - events[k].t_ns for k in range(start, end - 1)
                     if events[k].kind in ("cmd", "addr") and events[k + 1].kind in ("cmd", "addr")]
    envelope_rate = 1e9 / statistics.median(envelope_gaps) if envelope_gaps else None

    k = start
    while k < end:
        if events[k].kind not in DATA_KINDS:
            k += 1
            continue
        run_start = k
        while k < end and events[k].kind == events[run_start].kind:
            k += 1
        n = k - run_start
        if n >= 2 and envelope_rate:
            span = events[k - 1].t_ns - events[run_start].t_ns
            rate = (n - 1) * 1e9 / span
            if rate >= SMUGGLE_RATIO * envelope_rate:
                found.append(Anomaly("SmuggledBurst", run_start, command_index, rate,
                                     events[run_start].mode.rate, n,
                                     f"{n} bytes at {rate / 1e6:.0f} MB/s inside a "
                                     f"{envelope_rate / 1e6:.2f} MHz envelope"))

    for k in range(max(start, 1), end):
        e = events[k]
        if e.kind not in ("data_in", "data_out"):
            continue
        prev = events[k - 1]
        setup = e.t_ns - prev.t_ns - (DUMMY_BIT7_NS if prev.dummy_bit7 else 0)
        if setup < 1:
            found.append(Anomaly("SubNanosecondSetup", k, command_index, count=1,
                                 detail=f"data setup window {setup} ns"))
    return found


def _parse(events):
    for k in range(1, len(events)):
        if events[k].t_ns <= events[k - 1].t_ns:
            raise UnparseableTrace("timestamps not strictly increasing", k)
    rd = _Reader(events)
    spans = []
    anomalies = []
    while rd.peek() is not None:
        start = rd.i
        cmd = _parse_one(rd)
        anomalies.extend(_scan_anomalies(events, start, rd.i, len(spans)))
        spans.append((cmd, start, rd.i))
    return spans, anomalies


def decode(events):
    """Reconstruct commands from a trace; returns ``(commands, anomalies)``."""
    spans, anomalies = _parse(list(events))
    return [cmd for cmd, _, _ in spans], anomalies


def _merge_phases(items):
    phases = []
    for mode, start_ns, end_ns, n_events in items:
        if phases and phases[-1].mode is mode:
            last = phases[-1]
            phases[-1] = Phase(mode, last.start_ns, end_ns, last.commands + 1, last.events + n_events)
        else:
            phases.append(Phase(mode, start_ns, end_ns, 1, n_events))
    return phases


def detect_phases(events):
    events = list(events)
    spans, _ = _parse(events)
    return _merge_phases(
        (cmd.mode, events[s].t_ns, events[e - 1].t_ns, e - s) for cmd, s, e in spans)


def phases_from_commands(cmds, t0=0):
    """Phase report of ``encode_trace(cmds, t0)`` without materialising events."""
    items = []
    t = t0
    for cmd in cmds:
        span = command_span_ns(cmd)
        items.append((cmd.mode, t, t + span, command_cycle_count(cmd)))
        t += span + COMMAND_GAP_NS
    return _merge_phases(items)


# -- execution against a chip ----------------------------------------------------

def execute(chip, cmd):
    """Apply a decoded command to ``chip``; returns the bytes the chip drives back."""
    cmd.validate()
    kind = cmd.kind
    if kind is CommandKind.RESET:
        return b""
    if kind is CommandKind.READ_ID:
        return b"ONFI" if cmd.feature == 0x20 else chip.id_bytes
    if kind in (CommandKind.READ_PAGE, CommandKind.HIDDEN_READ):
        return chip.read_page(cmd.row).payload
    if kind is CommandKind.PROGRAM_PAGE:
        chip.program_page(cmd.row, cmd.data, STATUS_NORMAL)
        return b""
    if kind is CommandKind.ERASE_BLOCK:
        chip.erase_block(cmd.row.block)
        return b""
    if kind is CommandKind.SET_FEATURE:
        chip.features[cmd.feature] = bytes(cmd.data)
        return b""
    if kind is CommandKind.HIDDEN_UNLOCK:
        chip.unlock_hidden(cmd.row.block, cmd.tag)
        return b""
    raise MalformedCommand(f"cannot execute {kind!r}")


def with_response(cmd, response):
    return replace(cmd, data=response) if response else cmd


# -- JSON Lines trace files --------------------------------------------------------

def event_to_json(e):
    return json.dumps({"t_ns": e.t_ns, "kind": e.kind, "value": f"0x{e.value:02X}",
                       "mode": e.mode.value, "dummy_bit7": e.dummy_bit7})


def event_from_json(line, lineno=0):
    try:
        d = json.loads(line)
        kind = d["kind"]
        if kind not in CYCLE_KINDS:
            raise ValueError(f"unknown cycle kind {kind!r}")
        value = int(d["value"], 16)
        if not 0 <= value <= 0xFF:
            raise ValueError("value is not a byte")
        if not isinstance(d["t_ns"], int) or not isinstance(d["dummy_bit7"], bool):
            raise ValueError("t_ns must be an integer and dummy_bit7 a boolean")
        return TraceEvent(d["t_ns"], kind, value, BusMode(d["mode"]), d["dummy_bit7"])
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise UnparseableTrace(f"bad trace line {lineno + 1}: {exc}", lineno) from None


def write_trace(fh, events):
    for e in events:
        fh.write(event_to_json(e))
        fh.write("\n")


def read_trace(fh):
    return [event_from_json(line, n) for n, line in enumerate(fh) if line.strip()]
