"""Matplotlib renderings of a stability report: RD curves per metric, the
gain-versus-loss dependence, and the stability-score ranking."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _amp_label(amp) -> str:
    return "no attack" if amp is None else f"amp {amp:g}"


def render_report_figures(report: dict, out_dir) -> list:
    """Write PNG figures next to the CSV exports; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    metrics = report["metrics"]

    for name in sorted(metrics):
        entry = metrics[name]
        videos = sorted({c["video"] for c in entry["target_curves"]})
        fig, axes = plt.subplots(
            1, len(videos), figsize=(4.2 * len(videos), 3.4),
            squeeze=False, sharey=True,
        )
        for ax, vid in zip(axes[0], videos):
            curves = [c for c in entry["target_curves"] if c["video"] == vid]
            curves.sort(key=lambda c: (c["amplitude"] is not None,
                                       c["amplitude"] or 0.0))
            for c in curves:
                b = [p[0] / 1e6 for p in c["points"]]
                s = [p[1] for p in c["points"]]
                style = "-o" if c["amplitude"] is None else "--s"
                ax.plot(b, s, style, markersize=3,
                        label=_amp_label(c["amplitude"]))
            ax.set_title(f"{name} / {vid}", fontsize=10)
            ax.set_xlabel("bitrate (Mbit/s)")
            ax.grid(alpha=0.3)
        axes[0][0].set_ylabel("metric score")
        axes[0][-1].legend(fontsize=8)
        fig.tight_layout()
        path = out / f"rd_curves_{name}.png"
        fig.savefig(path, dpi=140)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for name in sorted(metrics):
        dep = sorted(metrics[name]["dependence"],
                     key=lambda d: d["proxy_loss"])
        ax.plot([d["proxy_loss"] for d in dep],
                [d["target_gain"] for d in dep], "-o", label=name)
    lo, hi = report["common_proxy_loss_interval"]
    ax.axvspan(lo, hi, color="gray", alpha=0.15,
               label="common interval")
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_xlabel("proxy-metric loss (normalized area)")
    ax.set_ylabel("target-metric gain (normalized area)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out / "dependence.png"
    fig.savefig(path, dpi=140)
    plt.close(fig)
    written.append(path)

    ranked = sorted(metrics.items(), key=lambda kv: -kv[1]["stability_score"])
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    names = [n for n, _ in ranked]
    scores = [e["stability_score"] for _, e in ranked]
    colors = ["#2a8" if s >= 0 else "#c44" for s in scores]
    ax.bar(names, scores, color=colors)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_ylabel("stability score")
    ax.set_title("higher = more resistant to the perturbation attack",
                 fontsize=9)
    fig.tight_layout()
    path = out / "stability_scores.png"
    fig.savefig(path, dpi=140)
    plt.close(fig)
    written.append(path)
    return written
