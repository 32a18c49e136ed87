"""Report figures. Rendered with the Agg backend and written with fixed metadata
so reruns produce identical files."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "svg.hashsalt": "neuricam",
}

PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)


def plot_psnr_progression(reports, path, title="PSNR versus frame number"):
    """One line per report: per-frame PSNR against position within the key interval."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        for rep in reports:
            pts = [(i, p) for i, p in zip(rep.indices, rep.psnr) if math.isfinite(p)]
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", markersize=3, linewidth=1.2, label=rep.channel_set)
        k = reports[0].key_interval if reports else 0
        for key in reports[0].excluded if reports else []:
            ax.axvline(key, color="0.75", linewidth=0.8, linestyle="--")
        ax.set_xlabel(f"frame (key frames every {k}, excluded)")
        ax.set_ylabel("PSNR (dB)")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_power_breakdown(profile, path):
    from .powermodel import average_power, camera_subsystem_power, single_camera_power

    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 3.0), gridspec_kw={"width_ratios": [3, 2]})
        names = [e.name for e in profile.entries]
        vals = [average_power(e) for e in profile.entries]
        colors = ["#4477aa" if e.kind == "sensor" else "#bbbbbb" for e in profile.entries]
        ax1.barh(range(len(vals)), vals, color=colors)
        ax1.set_yticks(range(len(vals)), names)
        ax1.invert_yaxis()
        ax1.set_xlabel("average power (mW)")
        ax1.set_title("node components")
        dual = camera_subsystem_power(profile)
        single = single_camera_power(profile.lr_fps)
        ax2.bar([0, 1], [single, dual], color=["#cc6677", "#4477aa"])
        ax2.set_xticks([0, 1], ["single\ncamera", "dual\nmode"])
        ax2.set_ylabel("sensor power (mW)")
        ax2.set_title(f"{single / dual:.2f}x lower")
        for x, v in enumerate([single, dual]):
            ax2.text(x, v, f"{v:.1f}", ha="center", va="bottom")
        fig.tight_layout()
        _save(fig, path)


def plot_repair(before, after, reference, path, losses=None):
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.4))
        for ax, f, name in zip(axes, (reference, before, after), ("reference", "damaged", "repaired")):
            s = f.samples
            ax.imshow(s[..., 0] if s.shape[2] == 1 else s, cmap="gray", vmin=0, vmax=255, interpolation="nearest")
            ax.set_title(name)
            ax.set_axis_off()
            for start, count in (losses or {}).items():
                ax.axhspan(int(start) - 0.5, int(start) + int(count) - 0.5, color="red", alpha=0.15, linewidth=0)
        fig.tight_layout()
        _save(fig, path)
