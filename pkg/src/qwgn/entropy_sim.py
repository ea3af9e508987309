"""Homodyne vacuum-noise entropy source digitized by an ADC."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtr

# Calibration of the reference chip at its optimal LO power.
DEFAULT_SIGMA_Q2 = 767.4
DEFAULT_SIGMA_C2 = 7.9


@dataclass(frozen=True)
class HomodyneConfig:
    sigma_q2: float = DEFAULT_SIGMA_Q2
    sigma_c2: float = DEFAULT_SIGMA_C2
    adc_bits: int = 8
    mid_code: int | None = None
    bandwidth_pole: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma_q2 < 0 or self.sigma_c2 < 0:
            raise ValueError("noise variances must be non-negative")
        if not 4 <= self.adc_bits <= 16:
            raise ValueError("adc_bits must be in [4, 16]")
        if self.mid_code is None:
            object.__setattr__(self, "mid_code", 1 << (self.adc_bits - 1))
        if not 0 <= self.mid_code < (1 << self.adc_bits):
            raise ValueError("mid_code outside the ADC range")
        if self.bandwidth_pole is not None and not 0.0 < self.bandwidth_pole <= 1.0:
            raise ValueError("bandwidth_pole must be in (0, 1]")

    @property
    def sigma_total2(self) -> float:
        return self.sigma_q2 + self.sigma_c2

    @property
    def full_scale(self) -> int:
        return (1 << self.adc_bits) - 1


@dataclass(frozen=True)
class RawBlock:
    codes: np.ndarray
    config: HomodyneConfig

    def __post_init__(self):
        if self.codes.size == 0:
            raise ValueError("RawBlock cannot be empty")
        self.codes.setflags(write=False)

    def __len__(self):
        return self.codes.size

    def to_bytes(self) -> bytes:
        if self.config.adc_bits <= 8:
            return self.codes.astype(np.uint8).tobytes()
        return self.codes.astype("<u2").tobytes()

    def save(self, path) -> Path:
        """Write raw codes plus a ``.json`` sidecar with the config."""
        path = Path(path)
        path.write_bytes(self.to_bytes())
        meta = {"kind": "raw_adc", "count": int(self.codes.size), "config": asdict(self.config)}
        path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=2))
        return path

    @classmethod
    def load(cls, path) -> "RawBlock":
        path = Path(path)
        meta = json.loads(path.with_name(path.name + ".json").read_text())
        config = HomodyneConfig(**meta["config"])
        dtype = np.uint8 if config.adc_bits <= 8 else np.dtype("<u2")
        codes = np.frombuffer(path.read_bytes(), dtype=dtype).astype(np.int64)
        return cls(codes, config)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def simulate_raw(config: HomodyneConfig, n: int) -> RawBlock:
    """Draw ``n`` ADC codes from N(mid_code, sigma_q2 + sigma_c2).

    With ``bandwidth_pole`` set, the noise passes through the one-pole
    low-pass ``y[i] = a*y[i-1] + b*e[i]`` with ``a = 1 - pole`` and
    ``b = sqrt(1 - a**2)``, which keeps the stationary variance unchanged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    sigma = math.sqrt(config.sigma_total2)
    e = rng.standard_normal(n)
    if config.bandwidth_pole is not None and config.bandwidth_pole < 1.0:
        a = 1.0 - config.bandwidth_pole
        b = math.sqrt(1.0 - a * a)
        e = lfilter([b], [1.0, -a], e)
    x = config.mid_code + sigma * e
    codes = np.clip(round_half_away(x), 0, config.full_scale).astype(np.int64)
    return RawBlock(codes, config)


def variance_decompose(sigma_total2: float, sigma_c2: float) -> float:
    """Quantum share of the measured variance."""
    if sigma_total2 < 0 or sigma_c2 < 0:
        raise ValueError("variances must be non-negative")
    if sigma_total2 < sigma_c2:
        raise ValueError(
            f"total variance {sigma_total2} below classical variance {sigma_c2}: invalid calibration")
    return sigma_total2 - sigma_c2


def estimate_min_entropy(block, min_samples: int = 100_000) -> float:
    """Plug-in min-entropy ``-log2(max_k p_k)`` in bits per sample."""
    codes = block.codes if isinstance(block, RawBlock) else np.asarray(block)
    if codes.size == 0:
        raise ValueError("empty block")
    if codes.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples for a stable estimate")
    counts = np.bincount(codes.astype(np.int64).ravel())
    p_max = counts.max() / codes.size
    return abs(-math.log2(p_max))


def central_bin_entropy(config: HomodyneConfig) -> float:
    """Analytic min-entropy from the most probable ADC bin of the unclipped Gaussian."""
    sigma = math.sqrt(config.sigma_total2)
    if sigma == 0:
        return 0.0
    k = np.arange(config.full_scale + 1)
    upper = np.where(k == config.full_scale, np.inf, (k + 0.5 - config.mid_code) / sigma)
    lower = np.where(k == 0, -np.inf, (k - 0.5 - config.mid_code) / sigma)
    mass = ndtr(upper) - ndtr(lower)
    return float(-math.log2(mass.max()))
