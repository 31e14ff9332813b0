"""NAND mirroring simulator for studying passcode retry-counter bypass."""

from .attack import AttackReport, AttackStrategy, PasscodeSpace, estimate, make_template, run_attack, wear_budget
from .device import Device, DeviceLayout, TimingModel, delay_for
from .ftl import Ftl, FtlConfig, rebuild_map
from .imagefile import load_image, save_image
from .mirror import BackupImage, clone, diff, dump_chip, restore, scan, verify
from .nand import NandChip, NandGeometry, PageAddress, geometry_for, hidden_to_physical, new_chip

__version__ = "0.1.0"
