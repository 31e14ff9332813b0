"""Passcode brute force by NAND mirroring: restore-in-place or a pool of clones."""

import itertools
import math
from dataclasses import dataclass, field

from .device import BOOTED, UNLOCKED, WIPED, Device, TimingModel
from .errors import AttackError, BadBlock, EnduranceExceeded, WipedUnexpectedly
from .mirror import clone, diff, dump_chip, restore, scan
from .nand import DEFAULT_ENDURANCE, new_chip

ATTEMPTS_PER_CYCLE = 6
SCAN_HALO = 4


@dataclass(frozen=True)
class PasscodeSpace:
    kind: str                  # "digits" | "explicit"
    digits: int = 0
    codes: tuple = ()
    descending: bool = False

    @classmethod
    def of_digits(cls, n, descending=False):
        if n < 1:
            raise ValueError("digit count must be >= 1")
        return cls("digits", n, descending=descending)

    @classmethod
    def explicit(cls, codes):
        return cls("explicit", codes=tuple(codes))

    @classmethod
    def parse(cls, text):
        """``"4digit"`` style names; anything else is rejected."""
        if text.endswith("digit") and text[:-5].isdigit() and 1 <= int(text[:-5]) <= 10:
            return cls.of_digits(int(text[:-5]))
        raise ValueError(f"unknown passcode space {text!r} (expected e.g. 4digit)")

    @property
    def size(self):
        return 10 ** self.digits if self.kind == "digits" else len(self.codes)

    @property
    def label(self):
        return f"{self.digits}digit" if self.kind == "digits" else f"list:{len(self.codes)}"

    def __iter__(self):
        if self.kind == "explicit":
            return iter(self.codes)
        order = range(self.size - 1, -1, -1) if self.descending else range(self.size)
        return (f"{i:0{self.digits}d}" for i in order)


@dataclass(frozen=True)
class AttackStrategy:
    variant: str               # "inplace" | "pool"
    pool_size: int = 1
    attempts_per_cycle: int = ATTEMPTS_PER_CYCLE

    def __post_init__(self):
        if self.variant not in ("inplace", "pool"):
            raise ValueError(f"unknown strategy {self.variant!r}")
        if self.variant == "pool" and self.pool_size < 2:
            raise ValueError("a clone pool needs at least two chips")
        if self.attempts_per_cycle < 1:
            raise ValueError("attempts_per_cycle must be >= 1")

    @classmethod
    def restore_in_place(cls):
        return cls("inplace")

    @classmethod
    def clone_pool(cls, pool_size=2):
        return cls("pool", pool_size)

    @classmethod
    def parse(cls, text):
        if text == "inplace":
            return cls.restore_in_place()
        if text.startswith("pool:") and text[5:].isdigit():
            return cls.clone_pool(int(text[5:]))
        raise ValueError(f"unknown strategy {text!r} (expected inplace or pool:N)")

    @property
    def label(self):
        return "inplace" if self.variant == "inplace" else f"pool:{self.pool_size}"

    def cycle_s(self, timing):
        return timing.cycle_serial_s if self.variant == "inplace" else timing.cycle_pool_s


def cycles_needed(space, strategy):
    return math.ceil(space.size / strategy.attempts_per_cycle)


def estimate(strategy, space, timing=None):
    """Worst-case virtual seconds to exhaust ``space``."""
    timing = timing or TimingModel()
    return cycles_needed(space, strategy) * strategy.cycle_s(timing)


@dataclass(frozen=True)
class WearBudget:
    feasible: bool
    required: int
    available: int


def wear_budget(space, strategy, endurance_limit):
    cycles = cycles_needed(space, strategy)
    if strategy.variant == "pool":
        required = math.ceil(space.size / (strategy.attempts_per_cycle * strategy.pool_size))
    else:
        required = cycles
    return WearBudget(required <= endurance_limit, required, endurance_limit)


@dataclass
class AttackTemplate:
    """Backup taken at fail count zero plus what is needed to rebuild the phone."""

    backup: object
    uid: bytes
    layout: object
    wipe_after_10: bool = False
    timing: TimingModel = field(default_factory=TimingModel)
    kdf_iterations: int = 10_000
    endurance_limit: int = None

    def make_device(self):
        return Device(self.uid, self.layout, self.wipe_after_10, self.timing, self.kdf_iterations)

    def fresh_chip(self, seed):
        limit = self.endurance_limit or self.backup.endurance_limit
        return clone(self.backup, new_chip(self.backup.geometry, limit, seed))


def make_template(geometry, passcode, seed=0, firmware_seed=0, endurance_limit=DEFAULT_ENDURANCE,
                  **device_options):
    """Provision a chip for a phone and back it up; returns ``(template, chip)``."""
    device = Device.from_seed(seed, geometry, **device_options)
    chip = new_chip(geometry, endurance_limit, seed)
    device.provision(chip, passcode, firmware_seed)
    backup = dump_chip(chip, label=f"phone-{seed}")
    backup.metadata["counter_blocks"] = list(device.layout.system_blocks)
    template = AttackTemplate(backup, device.uid, device.layout, device.wipe_after_10, device.timing,
                              device.kdf_iterations, endurance_limit)
    return template, chip


@dataclass
class AttackReport:
    strategy: str
    space: str
    found: str
    cycles: int
    elapsed_s: int
    erase_cycles: int
    attempts: int = 0
    max_wait_endured_s: float = 0.0
    device_clock_s: float = 0.0
    per_cycle_log: list = field(default_factory=list)

    def to_dict(self, with_log=False):
        d = {
            "strategy": self.strategy,
            "space": self.space,
            "found": self.found,
            "cycles": self.cycles,
            "elapsed_s": self.elapsed_s,
            "erase_cycles": self.erase_cycles,
        }
        if with_log:
            d["per_cycle_log"] = self.per_cycle_log
        return d


def _counter_wear(chips, blocks):
    """Per chip, the erase count of its most-worn counter block."""
    return [max(chip.blocks[b].erase_count for b in blocks) for chip in chips]


def run_attack(template, space, strategy, chip=None):
    """Cycle boot -> six guesses -> power down -> restore until unlocked or exhausted.

    ``chip`` is the victim's own NAND for restore-in-place; clones of the
    backup are made when it is omitted or when running a clone pool.
    """
    device = template.make_device()
    timing = device.timing
    backup = template.backup
    if strategy.variant == "inplace":
        chips = [chip if chip is not None else template.fresh_chip(seed=1)]
    else:
        chips = [template.fresh_chip(seed=100 + i) for i in range(strategy.pool_size)]
    counter_blocks = device.layout.system_blocks
    regions = device.layout.scan_regions(backup.geometry.block_count, SCAN_HALO)
    wear_before = _counter_wear(chips, counter_blocks)

    report = AttackReport(strategy.label, space.label, None, 0, 0, 0)
    codes = iter(space)
    while True:
        batch = list(itertools.islice(codes, strategy.attempts_per_cycle))
        if not batch:
            break
        report.cycles += 1
        slot = (report.cycles - 1) % len(chips)
        target = chips[slot]
        boot = device.boot(target)
        if boot.outcome != BOOTED:
            raise AttackError(f"cycle {report.cycles}: chip {slot} did not boot ({boot.outcome})")
        waits, endured = [], 0.0
        for code in batch:
            pending = device.pending_delay_s
            if pending:
                endured = max(endured, pending)
                device.advance(pending)
            result = device.try_passcode(code)
            report.attempts += 1
            if result.outcome == WIPED:
                raise WipedUnexpectedly(f"device wiped during cycle {report.cycles}")
            waits.append(result.wait_s)
            if result.outcome == UNLOCKED:
                report.found = code
                break
        device.power_down()
        device.detach()
        try:
            stats = restore(target, backup, diff(scan(target, regions), backup), timing)
        except BadBlock as exc:
            raise EnduranceExceeded(exc.block, report.cycles) from None
        report.max_wait_endured_s = max(report.max_wait_endured_s, endured)
        report.per_cycle_log.append({
            "cycle": report.cycles,
            "chip": slot,
            "codes": batch[:len(waits)],
            "waits_s": waits,
            "restore_s": stats.duration_s,
            "blocks_restored": stats.blocks_erased,
            "device_clock_s": device.clock_s,
        })
        if report.found is not None:
            break
    report.elapsed_s = report.cycles * strategy.cycle_s(timing)
    report.erase_cycles = sum(a - b for a, b in zip(_counter_wear(chips, counter_blocks), wear_before))
    report.device_clock_s = device.clock_s
    return report
