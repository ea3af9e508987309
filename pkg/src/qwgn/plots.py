"""Report figures: histogram, Q-Q with bands, PSD, autocorrelation."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.figsize": (6.0, 6.0 * (math.sqrt(5) - 1) / 2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def histogram(report, path) -> Path:
    edges, counts = report.histogram
    width = np.diff(edges)
    n = counts.sum()
    mu, sd = report.meta["mean"], report.meta["std"]
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.bar(edges[:-1], counts / (n * width), width=width, align="edge",
               color="C0", alpha=0.6, label="samples")
        x = np.linspace(edges[0], edges[-1], 400)
        ax.plot(x, np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)),
                color="C3", lw=1.2, label="Gaussian fit")
        ax.set_xlabel("amplitude")
        ax.set_ylabel("density")
        ax.legend()
        return _save(fig, path)


def qq(report, path) -> Path:
    d = report.qq
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        styles = {"normal": ("C2", "pointwise"), "ks": ("C1", "KS")}
        for name, (lo, hi) in sorted(d.bands.items()):
            color, label = styles.get(name, ("C4", name))
            ok = np.isfinite(lo) & np.isfinite(hi)
            ax.plot(d.theoretical[ok], lo[ok], color=color, lw=0.8, label=f"95% {label}")
            ax.plot(d.theoretical[ok], hi[ok], color=color, lw=0.8)
        ax.plot(d.theoretical, d.sample, ".", ms=1.5, color="C0", label="samples")
        lim = float(np.max(np.abs(d.theoretical)))
        ax.plot([-lim, lim], [-lim, lim], "k--", lw=0.8)
        ax.set_xlabel("theoretical quantile")
        ax.set_ylabel("sample quantile")
        ax.legend(loc="upper left")
        return _save(fig, path)


def power_spectrum(report, path) -> Path:
    f, db = np.array(report.psd).T
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(f[1:], db[1:], lw=0.8)
        ax.axhspan(-1, 1, color="0.85", zorder=0)
        ax.set_xlabel("normalized frequency (cycles/sample)")
        ax.set_ylabel("PSD (dB re. mean)")
        return _save(fig, path)


def autocorrelation(report, path) -> Path:
    lag, r = np.array(report.autocorr).T
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(lag[1:], np.abs(r[1:]), ".-", lw=0.6, ms=2)
        ax.axhline(0.01, color="C3", ls="--", lw=0.8)
        ax.set_xlabel("lag")
        ax.set_ylabel("|r(k)|")
        return _save(fig, path)


def render_all(report, outdir, stem: str = "report", fmt: str = "png") -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if report.histogram is not None:
        paths.append(histogram(report, out / f"{stem}_histogram.{fmt}"))
    if report.qq is not None:
        paths.append(qq(report, out / f"{stem}_qq.{fmt}"))
    if report.psd:
        paths.append(power_spectrum(report, out / f"{stem}_psd.{fmt}"))
    if report.autocorr:
        paths.append(autocorrelation(report, out / f"{stem}_autocorr.{fmt}"))
    return paths
