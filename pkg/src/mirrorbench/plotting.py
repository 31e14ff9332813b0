"""PNG figures for wear and attack reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_erase_histogram(histogram, path, threshold=None, hotspots=()):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(range(len(histogram)), histogram, width=1.0, color="#4477aa")
    for lo, hi in hotspots:
        ax.axvspan(lo - 0.5, hi + 0.5, color="#cc3311", alpha=0.25)
    if threshold is not None:
        ax.axhline(threshold, color="#cc3311", linestyle="--", linewidth=1, label=f"threshold {threshold:g}")
        ax.legend(loc="upper right")
    ax.set_xlabel("block")
    ax.set_ylabel("erase count")
    ax.set_title("Per-block erase counts")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_attack_timeline(report, cycle_s, path):
    """Cumulative guesses against virtual hours, one step per cycle."""
    hours, guesses, total = [0.0], [0], 0
    for entry in report.per_cycle_log:
        total += len(entry["codes"])
        hours.append(entry["cycle"] * cycle_s / 3600)
        guesses.append(total)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.step(hours, guesses, where="post", color="#228833")
    if report.found is not None:
        ax.annotate(f"unlocked: {report.found}", (hours[-1], guesses[-1]),
                    textcoords="offset points", xytext=(-60, -20))
    ax.set_xlabel("virtual time (h)")
    ax.set_ylabel("passcodes tried")
    ax.set_title(f"Attack {report.strategy} over {report.space}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
