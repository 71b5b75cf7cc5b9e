"""Figures for an evaluation run, written next to the CSV/JSON artifacts."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "savefig.dpi": 120,
}
COLORS = {"hybrid": "tab:blue", "baseline": "tab:red", "measured": "0.35"}
LABELS = {"hybrid": "hybrid model", "baseline": "path loss only"}


def _save(fig, path: Path) -> None:
    # no Software/date metadata, so reruns are byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_cdf(curves: dict, path: Path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for name, curve in curves.items():
            ax.step(curve.errors, curve.probabilities, where="post", color=COLORS[name], label=LABELS[name])
        ax.set_xlabel("localization error [m]")
        ax.set_ylabel("CDF")
        ax.set_ylim(0, 1.02)
        ax.set_xlim(left=0)
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def plot_channel_trace(trace: dict, path: Path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        ax.plot(trace["n"], trace["measured"], ".", ms=3, color=COLORS["measured"], label="measured")
        for name in ("hybrid", "baseline"):
            if trace.get(name) is not None:
                ax.plot(trace["n"], trace[name], color=COLORS[name], label=LABELS[name], lw=1.0)
        ax.set_xlabel("time step")
        ax.set_ylabel("RSS [dB]")
        ax.set_title(f"user {trace['user']}", fontsize=9)
        ax.legend(loc="lower right", ncol=3)
        fig.tight_layout()
        _save(fig, path)


def plot_localization(trial: dict, path: Path) -> None:
    city = trial["map"]
    (x0, y0), (x1, y1) = city["extent"]
    heights = [b["height"] for b in city["buildings"]] or [1.0]
    norm = matplotlib.colors.Normalize(vmin=0.0, vmax=max(heights))
    cmap = plt.get_cmap("Greys")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 4.6))
        for b in city["buildings"]:
            (bx, by), (bx1, by1) = b["min"], b["max"]
            ax.add_patch(Rectangle((bx, by), bx1 - bx, by1 - by, color=cmap(0.25 + 0.6 * norm(b["height"])), lw=0))
        users = trial["test_users"]
        ax.plot([u[0] for u in users], [u[1] for u in users], "k*", ms=8, label="true user")
        for name, marker in (("hybrid", "o"), ("baseline", "x")):
            est = [r["estimate"] for r in trial["results"][name] if r["estimate"] is not None]
            ax.plot([e[0] for e in est], [e[1] for e in est], marker, color=COLORS[name], ms=5,
                    mfc="none", label=LABELS[name])
        ax.set_xlim(x0, x1)
        ax.set_ylim(y0, y1)
        ax.set_aspect("equal")
        ax.grid(False)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="upper right", framealpha=0.9)
        fig.tight_layout()
        _save(fig, path)


def render_all(out: Path, trials: list[dict], curves: dict) -> list[Path]:
    fig_dir = Path(out) / "figures"
    fig_dir.mkdir(exist_ok=True)
    written = []
    if curves:
        written.append(fig_dir / "cdf.png")
        plot_cdf(curves, written[-1])
    first = trials[0]
    if first["traces"]:
        written.append(fig_dir / "channel_trace.png")
        plot_channel_trace(first["traces"][0], written[-1])
    written.append(fig_dir / "localization_map.png")
    plot_localization(first, written[-1])
    return written
