"""mirrorbench command line: JSON reports on stdout, summaries on stderr."""

import argparse
import json
import os
import sys

from .attack import AttackStrategy, PasscodeSpace, estimate, make_template, run_attack, wear_budget
from .bus import decode, detect_phases, read_trace, write_trace
from .device import Device, DeviceLayout
from .errors import MirrorBenchError
from .imagefile import load_image, save_image
from .mirror import DiffReport, ScanManifest, chip_from_image, clone, diff, dump_chip, restore, scan, verify
from .nand import DEFAULT_ENDURANCE, PROFILES, geometry_for, new_chip
from .wear import DEFAULT_THRESHOLD_RATIO, detect_hotspots, wear_report

SEED_ENV = "MIRRORBENCH_SEED"


def _space(text):
    try:
        return PasscodeSpace.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _strategy(text):
    try:
        return AttackStrategy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _region(text):
    lo, sep, hi = text.partition(":")
    if not sep or not lo.isdigit() or not hi.isdigit():
        raise argparse.ArgumentTypeError(f"region must look like LO:HI, got {text!r}")
    return int(lo), int(hi)


def _emit(obj, summary=None):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    if summary:
        sys.stderr.write(summary + "\n")


def _device_for(image, seed):
    meta = image.metadata
    return Device.from_seed(meta.get("device_seed", seed), image.geometry,
                            wipe_after_10=bool(meta.get("wipe_after_10", False)))


def _regions(args, image):
    if args.region:
        return args.region
    return DeviceLayout.for_geometry(image.geometry).scan_regions(image.geometry.block_count)


def _load_baseline(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == b"NANDIMG1":
        return load_image(path)
    with open(path, encoding="utf-8") as fh:
        return ScanManifest.from_json(fh.read())


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


# -- subcommands -------------------------------------------------------------------

def cmd_provision(args):
    geometry = geometry_for(args.profile)
    device = Device.from_seed(args.seed, geometry, wipe_after_10=args.wipe)
    chip = new_chip(geometry, args.endurance, args.seed)
    device.provision(chip, args.passcode, args.firmware_seed)
    image = dump_chip(chip, label=args.profile)
    image.metadata.update({"device_seed": args.seed, "wipe_after_10": args.wipe,
                           "counter_blocks": list(device.layout.system_blocks)})
    save_image(args.out, image)
    _emit({"out": args.out, "profile": args.profile, "blocks": geometry.block_count,
           "hidden_regions": sorted(image.gate_tags)}, f"provisioned {args.profile} image -> {args.out}")


def cmd_dump(args):
    source = load_image(args.inp)
    image = dump_chip(chip_from_image(source, args.seed), label=source.metadata.get("label", ""))
    image.metadata = {**source.metadata, "duration_s": image.metadata["duration_s"]}
    save_image(args.out, image)
    _emit({"out": args.out, "duration_s": image.metadata["duration_s"]}, f"dumped {args.inp} -> {args.out}")


def cmd_scan(args):
    image = load_image(args.inp)
    manifest = scan(image, _regions(args, image))
    _write_text(args.out, manifest.to_json())
    _emit(json.loads(manifest.to_json()), f"scanned {len(manifest.block_crc)} blocks -> {args.out}")


def cmd_diff(args):
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = ScanManifest.from_json(fh.read())
    report = diff(manifest, _load_baseline(args.baseline))
    if args.out:
        _write_text(args.out, report.to_json())
    _emit(json.loads(report.to_json()), f"{len(report.changed)} changed block(s): {report.changed}")


def cmd_restore(args):
    chip = chip_from_image(load_image(args.inp), args.seed)
    backup = load_image(args.backup)
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            report = DiffReport.from_json(fh.read())
    else:
        report = diff(scan(chip, _regions(args, backup)), backup)
    stats = restore(chip, backup, report)
    image = dump_chip(chip)
    image.metadata = backup.metadata
    save_image(args.out, image)
    _emit({"out": args.out, "blocks_erased": stats.blocks_erased, "pages_written": stats.pages_written,
           "duration_s": stats.duration_s}, f"restored {stats.blocks_erased} block(s) -> {args.out}")


def cmd_clone(args):
    backup = load_image(args.backup)
    blank = new_chip(backup.geometry, backup.endurance_limit, args.seed)
    chip = clone(backup, blank, include_hidden=not args.no_hidden)
    image = dump_chip(chip)
    image.metadata = dict(backup.metadata)
    save_image(args.out, image)
    result = verify(chip, backup)
    _emit({"out": args.out, "hidden": not args.no_hidden, "identical": result.ok, "detail": result.detail},
          f"cloned {args.backup} -> {args.out}")


def cmd_boot(args):
    image = load_image(args.inp)
    device = _device_for(image, args.seed)
    chip = chip_from_image(image, args.seed)
    report = device.boot(chip, record_trace=bool(args.trace))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            write_trace(fh, device.last_trace)
    out = report.to_dict()
    if report.outcome == "Booted":
        attempts = []
        for code in args.attempt:
            pending = device.pending_delay_s
            if pending:
                device.advance(pending)
            result = device.try_passcode(code)
            attempts.append({"passcode": code, "outcome": result.outcome, "wait_s": result.wait_s})
        out["attempts"] = attempts
        out["fail_count"] = device.fail_count
        device.power_down()
    if args.out:
        device.detach()
        updated = dump_chip(chip)
        updated.metadata = image.metadata
        save_image(args.out, updated)
    _emit(out, f"boot outcome: {report.outcome}")


def cmd_attack(args):
    if args.estimate:
        budget = wear_budget(args.space, args.strategy, args.endurance)
        _emit({"strategy": args.strategy.label, "space": args.space.label,
               "estimate_s": estimate(args.strategy, args.space),
               "wear_budget": {"feasible": budget.feasible, "required": budget.required,
                               "available": budget.available}})
        return
    geometry = geometry_for(args.profile)
    template, chip = make_template(geometry, args.planted, seed=args.seed, endurance_limit=args.endurance)
    report = run_attack(template, args.space, args.strategy, chip)
    if args.plot:
        from .plotting import plot_attack_timeline
        plot_attack_timeline(report, args.strategy.cycle_s(template.timing), args.plot)
    _emit(report.to_dict(with_log=args.log),
          f"{report.strategy}: found={report.found} after {report.cycles} cycles ({report.elapsed_s} s virtual)")


def cmd_decode_trace(args):
    with open(args.file, encoding="utf-8") as fh:
        events = read_trace(fh)
    commands, anomalies = decode(events)
    out = {
        "commands": [{"kind": c.kind.value, "row": None if c.row is None else c.row.row,
                      "mode": c.mode.value, "data_len": len(c.data),
                      "tag": None if c.tag is None else c.tag.hex()} for c in commands],
        "anomalies": [{"kind": a.kind, "offset": a.offset, "command_index": a.command_index,
                       "rate_bps": a.rate_bps, "nominal_bps": a.nominal_bps, "count": a.count,
                       "detail": a.detail} for a in anomalies],
        "phases": [{"mode": p.mode.value, "start_ns": p.start_ns, "end_ns": p.end_ns,
                    "commands": p.commands, "events": p.events} for p in detect_phases(events)],
    }
    _emit(out, f"{len(commands)} command(s), {len(anomalies)} anomal{'y' if len(anomalies) == 1 else 'ies'}")


def cmd_wear_report(args):
    image = load_image(args.img)
    plan = (args.strategy, args.space) if args.space else None
    out = wear_report(image, args.threshold, plan=plan)
    if args.plot:
        from .plotting import plot_erase_histogram
        hot = detect_hotspots(image, args.threshold)
        plot_erase_histogram(out["histogram"], args.plot, hot.threshold, hot.ranges)
    risk = out["risk"]["risk"] if out["risk"] else "n/a"
    _emit(out, f"{len(out['hotspots'])} hotspot range(s), {len(out['bad_blocks'])} bad block(s), risk {risk}")


# -- parser ------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", choices=sorted(PROFILES), default="iphone5c-8g")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--endurance", type=int, default=DEFAULT_ENDURANCE)

    parser = argparse.ArgumentParser(prog="mirrorbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kw):
        p = sub.add_parser(name, parents=[common], **kw)
        p.set_defaults(func=func)
        return p

    p = add("provision", cmd_provision, help="create a provisioned chip image")
    p.add_argument("--passcode", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--firmware-seed", type=int, default=0)
    p.add_argument("--wipe", action="store_true", help="enable wipe after 10 failures")

    p = add("dump", cmd_dump, help="copy a chip image as the test board would")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = add("scan", cmd_scan, help="per-block checksum manifest")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--region", type=_region, action="append")

    p = add("diff", cmd_diff, help="compare a manifest with a backup or manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--out")

    p = add("restore", cmd_restore, help="rewrite changed blocks from a backup")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--backup", required=True)
    p.add_argument("--report")
    p.add_argument("--out", required=True)
    p.add_argument("--region", type=_region, action="append")

    p = add("clone", cmd_clone, help="write a backup onto a blank chip")
    p.add_argument("--backup", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-hidden", action="store_true")

    p = add("boot", cmd_boot, help="boot the phone from an image")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--trace", help="write the boot bus trace as JSON Lines")
    p.add_argument("--attempt", action="append", default=[], help="passcode to try after booting")
    p.add_argument("--out", help="save the chip after power-down")

    p = add("attack", cmd_attack, help="brute force a planted passcode")
    p.add_argument("--space", type=_space, required=True)
    p.add_argument("--strategy", type=_strategy, default=AttackStrategy.restore_in_place())
    p.add_argument("--planted", default="")
    p.add_argument("--estimate", action="store_true", help="print the time estimate only")
    p.add_argument("--log", action="store_true", help="include the per-cycle log")
    p.add_argument("--plot", help="PNG timeline path")

    p = add("decode-trace", cmd_decode_trace, help="decode a JSON Lines bus trace")
    p.add_argument("file")

    p = add("wear-report", cmd_wear_report, help="erase histogram, hotspots, endurance risk")
    p.add_argument("img")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD_RATIO)
    p.add_argument("--space", type=_space)
    p.add_argument("--strategy", type=_strategy, default=AttackStrategy.restore_in_place())
    p.add_argument("--plot", help="PNG histogram path")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            args.seed = int(env_seed)
        except ValueError:
            parser.error(f"{SEED_ENV} must be an integer")
    try:
        args.func(args)
    except (MirrorBenchError, OSError, ValueError) as exc:
        sys.stderr.write(f"mirrorbench: {type(exc).__name__}: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
