"""Simulated phone: boots over the bus, verifies passcodes, keeps its retry
counter in NAND and enforces escalating delays on a virtual clock."""

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from .bus import (
    BusCommand,
    BusMode,
    CommandKind,
    decode,
    detect_phases,
    encode_trace,
    execute,
    phases_from_commands,
    with_response,
)
from .crc import crc16
from .errors import (
    AlreadyPowered,
    DelayPending,
    GateRejected,
    HiddenViewLocked,
    NandError,
    NoChipAttached,
    PoweredOff,
    ResultOutOfBlock,
    Unmapped,
    UnparseableTrace,
    UnsafeRemoval,
)
from .ftl import Ftl, FtlConfig
from .nand import STATUS_ERASED, PageAddress, hidden_page_count, hidden_to_physical

NS = 1_000_000_000
KDF_ITERATIONS = 10_000
KEYBAG_MAGIC = b"KBAG"
FEATURE_TIMING_MODE = 0x01

ERROR_FIRMWARE = 14
ERROR_PROTOCOL = 4013

DELAY_SCHEDULE = {5: 5, 6: 60, 7: 300, 8: 900}
MAX_DELAY_S = 3600


def delay_for(fail_count):
    """Seconds the user must wait after ``fail_count`` consecutive failures."""
    if fail_count < 5:
        return 0
    return DELAY_SCHEDULE.get(fail_count, MAX_DELAY_S)


@lru_cache(maxsize=4096)
def kdf(uid, passcode, iterations=KDF_ITERATIONS):
    """Derive the 32-byte keybag verifier from the device UID and passcode.

    Each round hashes the previous digest with uid, passcode and the round
    counter, so the result cannot be computed without the UID.
    """
    if isinstance(passcode, str):
        passcode = passcode.encode("utf-8")
    state = b""
    for i in range(iterations):
        state = hashlib.sha256(state + uid + passcode + i.to_bytes(4, "big")).digest()
    return state


@dataclass(frozen=True)
class TimingModel:
    boot_s: int = 35
    power_down_s: int = 10
    attempt_entry_s: int = 0
    restore_min_s: int = 30
    restore_max_s: int = 60
    cycle_serial_s: int = 90
    cycle_pool_s: int = 45

    def __post_init__(self):
        if min(self.boot_s, self.power_down_s, self.restore_min_s, self.restore_max_s,
               self.cycle_serial_s, self.cycle_pool_s) <= 0 or self.attempt_entry_s < 0:
            raise ValueError("timing components must be positive")
        if self.restore_min_s > self.restore_max_s:
            raise ValueError("restore_min_s exceeds restore_max_s")
        midpoint = (self.restore_min_s + self.restore_max_s) / 2
        if self.cycle_serial_s != self.boot_s + self.power_down_s + midpoint:
            raise ValueError("cycle_serial_s must equal boot + power-down + midpoint restore")


@dataclass(frozen=True)
class DeviceLayout:
    """Where the phone keeps things on its NAND."""

    firmware_blocks: tuple
    keybag_block: int
    hidden_blocks: tuple
    system_blocks: tuple  # FTL partition holding the retry counter
    counter_lpn: int = 0

    @classmethod
    def for_geometry(cls, geometry, system_size=64):
        n = geometry.block_count
        if n < 8:
            raise ValueError("device layout needs at least 8 blocks")
        hidden = 0x041A if n > 0x041A else 3  # the block seen with a hidden view on real parts
        system = tuple(b for b in range(4, n) if b != hidden)[:system_size]
        return cls((0, 1), 2, (hidden,), system)

    def scan_regions(self, block_count, halo=4):
        lo, hi = min(self.system_blocks), max(self.system_blocks)
        return [(max(0, lo - halo), min(block_count - 1, hi + halo))]

    def counter_config(self):
        return FtlConfig(counter_lpns=range(self.counter_lpn, self.counter_lpn + 1))


@dataclass(frozen=True)
class AttemptResult:
    outcome: str     # "Unlocked" | "Failed" | "Wiped"
    wait_s: int = 0


UNLOCKED = "Unlocked"
FAILED = "Failed"
WIPED = "Wiped"

BOOTED = "Booted"
BOOT_LOOP = "BootLoop"
RECOVERY_REQUIRED = "RecoveryRequired"


@dataclass
class BootReport:
    outcome: str
    duration_s: int
    phases: list = field(default_factory=list)
    error_code: int = None
    detail: str = ""

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "duration_s": self.duration_s,
            "error_code": self.error_code,
            "detail": self.detail,
            "phases": [{"mode": p.mode.value, "start_ns": p.start_ns, "end_ns": p.end_ns,
                        "commands": p.commands, "events": p.events} for p in self.phases],
        }


def _sealed(body, size):
    """Pad/truncate ``body`` to ``size - 2`` bytes and append a CRC."""
    body = body[:size - 2].ljust(size - 2, b"\x00")
    return body + crc16(body).to_bytes(2, "big")


def _seal_ok(payload):
    return crc16(payload[:-2]) == int.from_bytes(payload[-2:], "big")


def firmware_page(firmware_seed, block, page, size):
    body = hashlib.shake_256(f"firmware:{firmware_seed}:{block}:{page}".encode()).digest(size - 2)
    return _sealed(body, size)


class Device:
    def __init__(self, uid, layout, wipe_after_10=False, timing=None, kdf_iterations=KDF_ITERATIONS):
        if len(uid) != 32:
            raise ValueError("uid must be 32 bytes")
        self.uid = bytes(uid)
        self.layout = layout
        self.wipe_after_10 = wipe_after_10
        self.timing = timing or TimingModel()
        self.kdf_iterations = kdf_iterations
        self.power = False
        self.unlocked = False
        self.clock_ns = 0
        self.fail_count = 0
        self.keybag_verifier = None
        self.chip = None
        self.ftl = None
        self.not_before_ns = 0
        self.last_trace = None

    @classmethod
    def from_seed(cls, seed, geometry, **kwargs):
        uid = hashlib.sha256(b"soc-uid" + int(seed).to_bytes(8, "little", signed=True)).digest()
        return cls(uid, DeviceLayout.for_geometry(geometry), **kwargs)

    # -- secrets derived from the SoC ------------------------------------------

    def gate_tag(self, block):
        return hashlib.sha256(self.uid + b"gate" + block.to_bytes(4, "little")).digest()[:8]

    def hidden_payload(self, block, n, size):
        body = hashlib.shake_256(self.uid + b"hidden" + bytes([block & 0xFF, n])).digest(size - 2)
        return _sealed(body, size)

    def verifier(self, passcode):
        return kdf(self.uid, passcode, self.kdf_iterations)

    # -- clock -------------------------------------------------------------------

    @property
    def clock_s(self):
        return self.clock_ns / NS

    def advance(self, seconds):
        self.clock_ns += int(seconds * NS)

    @property
    def pending_delay_s(self):
        return max(0, self.not_before_ns - self.clock_ns) / NS

    # -- chip handling -------------------------------------------------------------

    def attach(self, chip):
        if self.chip is not None and self.chip is not chip:
            raise UnsafeRemoval("another chip is already attached")
        self.chip = chip

    def detach(self):
        if self.power:
            raise UnsafeRemoval("NAND still powered; power down before removing it")
        chip, self.chip = self.chip, None
        return chip

    def provision(self, chip, passcode, firmware_seed=0):
        """Factory-restore ``chip`` for this device with ``passcode``."""
        if self.power or chip.powered:
            raise AlreadyPowered("cannot provision a powered chip")
        geometry = chip.geometry
        size = geometry.page_total_bytes
        for block, state in enumerate(chip.blocks):
            if state.pages and not state.is_bad:
                chip.erase_block(block)
        for block in self.layout.firmware_blocks:
            for page in range(geometry.pages_per_block):
                chip.program_page(PageAddress.of(block, page), firmware_page(firmware_seed, block, page, size))
        keybag = _sealed(KEYBAG_MAGIC + self.verifier(passcode), size)
        chip.program_page(PageAddress.of(self.layout.keybag_block, 0), keybag)
        for block in self.layout.hidden_blocks:
            for n in range(hidden_page_count(geometry.pages_per_block)):
                physical = hidden_to_physical(n, geometry.pages_per_block)
                chip.program_page(PageAddress.of(block, physical), self.hidden_payload(block, n, size))
            chip.install_gate(block, self.gate_tag(block))
        ftl = Ftl(chip, self.layout.system_blocks, self.layout.counter_config())
        ftl.write(self.layout.counter_lpn, self._counter_bytes(0, geometry))

    # -- boot ----------------------------------------------------------------------

    def boot(self, chip=None, record_trace=False):
        if self.power:
            raise AlreadyPowered("device is already running")
        if chip is not None:
            self.attach(chip)
        if self.chip is None:
            raise NoChipAttached("no NAND attached")
        chip = self.chip
        t0 = self.clock_ns
        commands = []

        def run(cmd):
            response = execute(chip, cmd)
            commands.append(with_response(cmd, response))
            return response

        outcome, code, detail = BOOTED, None, ""
        try:
            self._boot_sequence(chip, run)
        except _BootFailure as failure:
            outcome, code, detail = failure.args
        phases = phases_from_commands(commands, t0)
        if record_trace:
            events = encode_trace(commands, t0)
            self.last_trace = events
            try:
                decode(events)
                phases = detect_phases(events)
            except UnparseableTrace as exc:
                outcome, code, detail = RECOVERY_REQUIRED, ERROR_PROTOCOL, str(exc)
        self.advance(self.timing.boot_s)
        report = BootReport(outcome, self.timing.boot_s, phases, code, detail)
        if outcome != BOOTED:
            chip.reset_session()
            return report

        self.power = True
        chip.powered = True
        self.unlocked = False
        self.ftl = Ftl(chip, self.layout.system_blocks, self.layout.counter_config())
        try:
            raw = self.ftl.read(self.layout.counter_lpn)
            self.fail_count = int.from_bytes(raw[:4], "little")
        except Unmapped:
            self.fail_count = 0
        keybag = chip.raw_page(self.layout.keybag_block, 0)
        ok = keybag.status != STATUS_ERASED and _seal_ok(keybag.payload) and keybag.payload[:4] == KEYBAG_MAGIC
        self.keybag_verifier = keybag.payload[4:36] if ok else None
        self.not_before_ns = self.clock_ns + delay_for(self.fail_count) * NS
        return report

    def _boot_sequence(self, chip, run):
        geometry = chip.geometry
        ppb = geometry.pages_per_block
        layout = self.layout
        sdr, prop, ddr = BusMode.SDR17, BusMode.PROP50, BusMode.DDR128

        def read_firmware(block, mode):
            for page in range(ppb):
                try:
                    data = run(BusCommand(CommandKind.READ_PAGE, PageAddress.of(block, page), mode=mode))
                except NandError as exc:
                    raise _BootFailure(RECOVERY_REQUIRED, ERROR_FIRMWARE, str(exc)) from None
                if not _seal_ok(data):
                    raise _BootFailure(RECOVERY_REQUIRED, ERROR_FIRMWARE,
                                       f"firmware checksum mismatch at block {block} page {page}")

        run(BusCommand(CommandKind.RESET, mode=sdr))
        run(BusCommand(CommandKind.READ_ID, mode=sdr))
        read_firmware(layout.firmware_blocks[0], sdr)

        for block in layout.hidden_blocks:
            try:
                run(BusCommand(CommandKind.HIDDEN_UNLOCK, PageAddress.of(block, 0), mode=sdr,
                               tag=self.gate_tag(block)))
                for n in range(hidden_page_count(ppb)):
                    data = run(BusCommand(CommandKind.HIDDEN_READ, PageAddress.of(block, n, hidden=True),
                                          mode=sdr))
                    if data != self.hidden_payload(block, n, geometry.page_total_bytes):
                        raise _BootFailure(BOOT_LOOP, None, f"hidden page {n:#x} of block {block:#x} missing")
            except (GateRejected, HiddenViewLocked, ResultOutOfBlock, NandError) as exc:
                raise _BootFailure(BOOT_LOOP, None, str(exc)) from None

        run(BusCommand(CommandKind.SET_FEATURE, mode=prop, feature=FEATURE_TIMING_MODE,
                       data=bytes([0x25, 0, 0, 0])))
        for block in layout.firmware_blocks[1:]:
            read_firmware(block, prop)
        run(BusCommand(CommandKind.READ_PAGE, PageAddress.of(layout.keybag_block, 0), mode=prop))

        for block in layout.system_blocks:
            if chip.blocks[block].is_bad:
                continue
            for page in chip.programmed_pages(block):
                run(BusCommand(CommandKind.READ_PAGE, PageAddress.of(block, page), mode=ddr))

    # -- passcode entry ------------------------------------------------------------

    def _counter_bytes(self, value, geometry):
        return value.to_bytes(4, "little").ljust(geometry.page_data_bytes, b"\x00")

    def _persist_counter(self):
        self.ftl.write(self.layout.counter_lpn, self._counter_bytes(self.fail_count, self.chip.geometry))

    def try_passcode(self, passcode):
        if not self.power:
            raise PoweredOff("device is off")
        if self.keybag_verifier is None:
            return AttemptResult(WIPED)
        if self.clock_ns < self.not_before_ns:
            raise DelayPending(self.pending_delay_s)
        self.advance(self.timing.attempt_entry_s)
        if self.verifier(passcode) == self.keybag_verifier:
            self.unlocked = True
            if self.fail_count:
                self.fail_count = 0
                self._persist_counter()
            return AttemptResult(UNLOCKED)

        self.unlocked = False
        self.fail_count += 1
        self._persist_counter()  # committed before the user sees the result
        if self.wipe_after_10 and self.fail_count >= 10:
            self.chip.erase_block(self.layout.keybag_block)
            self.keybag_verifier = None
            return AttemptResult(WIPED)
        wait = delay_for(self.fail_count)
        self.not_before_ns = self.clock_ns + wait * NS
        return AttemptResult(FAILED, wait)

    def power_down(self):
        if not self.power:
            raise PoweredOff("device is already off")
        self.advance(self.timing.power_down_s)
        self.power = False
        self.unlocked = False
        self.ftl = None
        self.chip.powered = False
        self.chip.reset_session()


class _BootFailure(Exception):
    pass
