"""Statistical checks on generated noise samples."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.special import ndtr, ndtri
from scipy.stats import chi2, kstwobign

CONFIDENCE = 0.95


def _as_float(samples) -> np.ndarray:
    return np.asarray(samples, dtype=float).ravel()


def measured_cf(samples) -> float:
    """Peak deviation from the mean over the population standard deviation."""
    x = _as_float(samples)
    if x.size < 2:
        raise ValueError("crest factor needs at least 2 samples")
    d = x - x.mean()
    sd = math.sqrt(float(np.mean(d * d)))
    if sd == 0.0:
        raise ValueError("crest factor undefined for zero variance")
    return float(np.max(np.abs(d)) / sd)


def autocorr(samples, max_lag: int = 100) -> np.ndarray:
    """Biased normalized autocorrelation ``r(0..max_lag)``."""
    x = _as_float(samples)
    if x.size < 10 * max_lag:
        raise ValueError("need at least 10 * max_lag samples")
    d = x - x.mean()
    den = float(d @ d)
    if den == 0.0:
        raise ValueError("autocorrelation undefined for zero variance")
    r = np.array([float(d[: d.size - k] @ d[k:]) for k in range(max_lag + 1)]) / den
    r[0] = 1.0
    return r


def psd(samples, segment_length: int = 1024):
    """Welch PSD (Hann, 50 % overlap), in dB relative to the mean in-band power.

    Returns ``(freq, db)`` with frequency in cycles per sample.  DC and
    Nyquist bins are excluded from the reference mean.
    """
    x = _as_float(samples)
    if segment_length < 2 or segment_length & (segment_length - 1):
        raise ValueError("segment_length must be a power of two")
    if x.size < 4 * segment_length:
        raise ValueError("need at least 4 * segment_length samples")
    f, p = signal.welch(x, fs=1.0, window="hann", nperseg=segment_length,
                        noverlap=segment_length // 2, detrend="constant")
    ref = float(np.mean(p[1:-1]))
    return f, 10.0 * np.log10(p / ref)


def flatness(freq, db, band=(0.01, 0.45)) -> float:
    """Largest deviation (dB) from the in-band mean power over ``band``."""
    sel = (freq > band[0]) & (freq < band[1])
    lin = 10.0 ** (db[sel] / 10.0)
    rel = 10.0 * np.log10(lin / lin.mean())
    return float(np.max(np.abs(rel)))


@dataclass
class QQData:
    theoretical: np.ndarray
    sample: np.ndarray
    bands: dict   # method -> (low, high)

    def inside(self, method: str) -> float:
        lo, hi = self.bands[method]
        return float(np.mean((self.sample >= lo) & (self.sample <= hi)))

    def rows(self):
        names = sorted(self.bands)
        for i in range(self.theoretical.size):
            yield [self.theoretical[i], self.sample[i]] + \
                  [v for n in names for v in (self.bands[n][0][i], self.bands[n][1][i])]


def qq_data(samples, confidence: float = CONFIDENCE, standardize: bool = True) -> QQData:
    """Q-Q pairs against N(0, 1) with normal-pointwise and KS bands.

    Plotting positions are ``(i - 0.5) / n``.  The pointwise band uses the
    delta-method standard error of each order statistic; the KS band moves
    the empirical CDF by ``c / sqrt(n)`` and maps it through ``Phi^-1``.
    """
    x = np.sort(_as_float(samples))
    n = x.size
    if n < 100:
        raise ValueError("Q-Q data needs at least 100 samples")
    if standardize:
        sd = x.std()
        if sd == 0.0:
            raise ValueError("zero variance")
        x = (x - x.mean()) / sd
    p = (np.arange(1, n + 1) - 0.5) / n
    t = ndtri(p)
    zc = ndtri(0.5 + confidence / 2.0)
    se = np.sqrt(p * (1.0 - p) / n) / (np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi))
    c = kstwobign.isf(1.0 - confidence) / math.sqrt(n)
    with np.errstate(divide="ignore"):
        ks_lo = ndtri(np.clip(p - c, 0.0, 1.0))
        ks_hi = ndtri(np.clip(p + c, 0.0, 1.0))
    bands = {"normal": (t - zc * se, t + zc * se), "ks": (ks_lo, ks_hi)}
    return QQData(t, x, bands)


def jarque_bera(samples) -> tuple[float, float]:
    """JB statistic with Pearson kurtosis: ``n/6 * (S^2 + (K - 3)^2 / 4)``."""
    x = _as_float(samples)
    n = x.size
    if n < 3:
        raise ValueError("Jarque-Bera needs at least 3 samples")
    d = x - x.mean()
    m2 = float(np.mean(d ** 2))
    if m2 == 0.0:
        raise ValueError("zero variance")
    s = float(np.mean(d ** 3)) / m2 ** 1.5
    k = float(np.mean(d ** 4)) / m2 ** 2
    jb = n / 6.0 * (s * s + (k - 3.0) ** 2 / 4.0)
    return jb, float(chi2.sf(jb, 2))


def dallal_wilkinson_pvalue(d: float, n: int) -> float:
    """Dallal-Wilkinson closed form for the Lilliefors statistic.

    Accurate for p below about 0.1; larger values are only indicative and
    are clipped to 1.
    """
    if n > 100:
        d *= (n / 100.0) ** 0.49
        n = 100
    p = math.exp(-7.01256 * d * d * (n + 2.78019) + 2.99587 * d * math.sqrt(n + 2.78019)
                 - 0.122119 + 0.974598 / math.sqrt(n) + 1.67997 / n)
    return min(max(p, 0.0), 1.0)


def lilliefors(samples) -> tuple[float, float]:
    """KS distance to N(mean, sd^2) with estimated parameters."""
    x = np.sort(_as_float(samples))
    n = x.size
    if n < 5:
        raise ValueError("Lilliefors needs at least 5 samples")
    sd = x.std(ddof=1)
    if sd == 0.0:
        raise ValueError("zero variance")
    cdf = ndtr((x - x.mean()) / sd)
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - cdf)), float(np.max(cdf - (i - 1) / n)))
    return d, dallal_wilkinson_pvalue(d, n)


@dataclass
class StatsReport:
    measured_cf: float
    autocorr: list = field(default_factory=list)        # (lag, r)
    psd: list = field(default_factory=list)             # (freq, dB)
    qq: QQData | None = None
    normality: dict = field(default_factory=dict)       # name -> (stat, p)
    nist_lite: dict = field(default_factory=dict)       # name -> (p, pass)
    histogram: tuple | None = None                      # (edges, counts)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        qq = None
        if self.qq is not None:
            qq = {"n": int(self.qq.theoretical.size),
                  "inside": {m: self.qq.inside(m) for m in self.qq.bands}}
        return {
            "meta": self.meta,
            "measured_cf": self.measured_cf,
            "autocorr_max_abs": max((abs(r) for k, r in self.autocorr if k > 0), default=None),
            "psd_flatness_db": self.meta.get("psd_flatness_db"),
            "qq": qq,
            "normality": {k: {"statistic": s, "p": p, "pass": p > 1 - CONFIDENCE}
                          for k, (s, p) in self.normality.items()},
            "nist_lite": {k: {"p": p, "pass": ok} for k, (p, ok) in self.nist_lite.items()},
        }

    def write(self, outdir, stem: str = "report") -> list[Path]:
        """JSON summary plus one CSV per section."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.json"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2, default=float))

        def table(name, header, rows):
            p = out / f"{stem}_{name}.csv"
            with open(p, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(header)
                wr.writerows(rows)
            paths.append(p)

        if self.autocorr:
            table("autocorr", ["lag", "r"], self.autocorr)
        if self.psd:
            table("psd", ["freq", "power_db"], self.psd)
        if self.qq is not None:
            names = sorted(self.qq.bands)
            header = ["theoretical", "sample"] + [f"{n}_{e}" for n in names for e in ("low", "high")]
            table("qq", header, self.qq.rows())
        if self.histogram is not None:
            edges, counts = self.histogram
            table("histogram", ["left", "right", "count"],
                  zip(edges[:-1], edges[1:], counts))
        return paths


def analyze(samples, max_lag: int = 100, segment_length: int = 1024,
            qq_points: int = 10_000, bits=None, bins: int = 101) -> StatsReport:
    """Run the sample-level battery; ``bits`` adds the NIST-lite tests."""
    x = _as_float(samples)
    f, db = psd(x, segment_length)
    r = autocorr(x, max_lag)
    head = x[:qq_points]
    counts, edges = np.histogram(x, bins=bins)
    rep = StatsReport(
        measured_cf=measured_cf(x),
        autocorr=list(zip(range(max_lag + 1), r.tolist())),
        psd=list(zip(f.tolist(), db.tolist())),
        qq=qq_data(head),
        normality={"jarque_bera": jarque_bera(head), "lilliefors": lilliefors(head)},
        histogram=(edges, counts),
        meta={"n": int(x.size), "qq_n": int(head.size), "psd_flatness_db": flatness(f, db),
              "mean": float(x.mean()), "std": float(x.std())},
    )
    if bits is not None:
        from .nist import nist_lite
        rep.nist_lite = nist_lite(bits)
    return rep
