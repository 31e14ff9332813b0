"""Erase-count forensics over chip images."""

import statistics
from dataclasses import dataclass, field

from .attack import wear_budget

DEFAULT_THRESHOLD_RATIO = 3.0


def erase_histogram(image):
    return list(image.erase_counts)


def _runs(indices):
    runs = []
    for i in sorted(indices):
        if runs and i == runs[-1][1] + 1:
            runs[-1][1] = i
        else:
            runs.append([i, i])
    return [tuple(r) for r in runs]


@dataclass
class HotspotReport:
    threshold_ratio: float
    median: float
    threshold: float
    ranges: list = field(default_factory=list)           # (first block, last block)
    in_place_ranges: list = field(default_factory=list)  # (first lpn, last lpn)

    @property
    def blocks(self):
        return [b for lo, hi in self.ranges for b in range(lo, hi + 1)]


def in_place_ranges(history):
    """Logical runs rewritten more than once without their physical page ever moving."""
    return _runs(lpn for lpn, (writes, locations) in history.items() if writes >= 2 and len(locations) == 1)


def detect_hotspots(image, threshold_ratio=DEFAULT_THRESHOLD_RATIO, history=None):
    if threshold_ratio <= 1:
        raise ValueError("threshold_ratio must exceed 1")
    counts = erase_histogram(image)
    median = statistics.median(counts)
    # an unworn majority gives median 0; treat one erase as the floor
    threshold = threshold_ratio * max(median, 1)
    hot = [b for b, c in enumerate(counts) if c >= threshold]
    return HotspotReport(threshold_ratio, median, threshold, _runs(hot),
                         in_place_ranges(history) if history else [])


def endurance_report(image, strategy, space, counter_blocks=None):
    if counter_blocks is None:
        counter_blocks = image.metadata.get("counter_blocks") or range(image.geometry.block_count)
    limit = image.endurance_limit
    budget = wear_budget(space, strategy, limit)
    per_block = {b: limit - image.erase_counts[b] for b in counter_blocks}
    remaining = min(per_block.values())
    headroom = remaining - budget.required
    if headroom < 0:
        risk = "high"
    elif headroom < 0.1 * limit:
        risk = "medium"
    else:
        risk = "low"
    return {
        "strategy": strategy.label,
        "space": space.label,
        "required": budget.required,
        "remaining": remaining,
        "headroom": headroom,
        "risk": risk,
        "per_block_remaining": {str(b): r for b, r in per_block.items()},
    }


def wear_report(image, threshold_ratio=DEFAULT_THRESHOLD_RATIO, history=None, plan=None):
    hot = detect_hotspots(image, threshold_ratio, history)
    return {
        "histogram": erase_histogram(image),
        "bad_blocks": list(image.bad_blocks),
        "hotspots": [list(r) for r in hot.ranges],
        "in_place_ranges": [list(r) for r in hot.in_place_ranges],
        "risk": endurance_report(image, *plan) if plan else None,
    }
