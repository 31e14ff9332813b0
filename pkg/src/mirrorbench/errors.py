"""Exception hierarchy shared by every layer of the simulator."""


class MirrorBenchError(Exception):
    """Base class for all domain errors (CLI exit code 1)."""


# -- chip ------------------------------------------------------------------

class NandError(MirrorBenchError):
    pass


class InvalidGeometry(NandError):
    pass


class BlockOutOfRange(NandError):
    def __init__(self, block, block_count):
        super().__init__(f"block {block} out of range (chip has {block_count} blocks)")
        self.block = block


class BadBlock(NandError):
    def __init__(self, block):
        super().__init__(f"block {block} is bad")
        self.block = block


class ProgramOnDirtyPage(NandError):
    def __init__(self, block, page):
        super().__init__(f"page {page} of block {block} is not erased")
        self.block = block
        self.page = page


class PayloadSizeMismatch(NandError):
    pass


class AddressError(NandError):
    pass


class ResultOutOfBlock(NandError):
    pass


class HiddenViewLocked(NandError):
    """Hidden-view read attempted without a gate unlock.

    The chip answers such reads with an erased-looking page; ``payload``
    and ``status`` carry what the bus would have seen.
    """

    def __init__(self, block, payload=b"", status=0x49):
        super().__init__(f"hidden view of block {block} is locked")
        self.block = block
        self.payload = payload
        self.status = status


# -- translation layer -------------------------------------------------------

class FtlError(MirrorBenchError):
    pass


class NoFreePages(FtlError):
    pass


class Unmapped(FtlError):
    def __init__(self, lpn):
        super().__init__(f"logical page {lpn:#x} is not mapped")
        self.lpn = lpn


class LogicalRangeError(FtlError):
    pass


# -- bus ---------------------------------------------------------------------

class BusError(MirrorBenchError):
    pass


class MalformedCommand(BusError):
    pass


class UnparseableTrace(BusError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (event offset {offset})")
        self.offset = offset


class GateRejected(BusError):
    def __init__(self, block):
        super().__init__(f"hidden gate tag rejected for block {block}")
        self.block = block


# -- device ------------------------------------------------------------------

class DeviceError(MirrorBenchError):
    pass


class PoweredOff(DeviceError):
    pass


class AlreadyPowered(DeviceError):
    pass


class DelayPending(DeviceError):
    def __init__(self, remaining_s):
        super().__init__(f"passcode entry locked for another {remaining_s:g} s")
        self.remaining_s = remaining_s


class UnsafeRemoval(DeviceError):
    pass


class NoChipAttached(DeviceError):
    pass


# -- mirror kit / images -----------------------------------------------------

class MirrorError(MirrorBenchError):
    pass


class GeometryMismatch(MirrorError):
    pass


class RegionMismatch(MirrorError):
    pass


class ChipPowered(MirrorError):
    pass


class ImageFormatError(MirrorError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class BadMagic(ImageFormatError):
    pass


class HeaderParseError(ImageFormatError):
    pass


class TruncatedFile(ImageFormatError):
    def __init__(self, expected, actual, offset):
        super().__init__(f"truncated image: expected {expected} bytes, got {actual}", offset)
        self.expected = expected
        self.actual = actual


# -- attack ------------------------------------------------------------------

class AttackError(MirrorBenchError):
    pass


class EnduranceExceeded(AttackError):
    def __init__(self, block, cycle):
        super().__init__(f"counter block {block} wore out during cycle {cycle}")
        self.block = block
        self.cycle = cycle


class WipedUnexpectedly(AttackError):
    pass
