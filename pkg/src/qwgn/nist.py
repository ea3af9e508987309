"""Frequency, Block Frequency and Runs tests from NIST SP 800-22 rev1a.

Each test takes a 0/1 array (or a :class:`BitStream`) and returns a p-value.
:func:`battery` splits a long stream into sequences and reports the pass
proportion and the second-level p-value uniformity check for each test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, gammaincc

from .extractor import BitStream

ALPHA = 0.01
MIN_BITS = 100


def _bits(bits) -> np.ndarray:
    if isinstance(bits, BitStream):
        bits = bits.to_bits()
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size < MIN_BITS:
        raise ValueError(f"need at least {MIN_BITS} bits, got {bits.size}")
    return bits


def frequency(bits) -> float:
    """Monobit test: p = erfc(|S_n| / sqrt(2n))."""
    b = _bits(bits)
    s = 2 * int(np.count_nonzero(b)) - b.size
    return float(erfc(abs(s) / math.sqrt(b.size) / math.sqrt(2.0)))


def block_frequency(bits, block: int = 128) -> float:
    b = _bits(bits)
    nblocks = b.size // block
    if nblocks < 1:
        raise ValueError(f"need at least one {block}-bit block")
    pi = b[: nblocks * block].reshape(nblocks, block).mean(axis=1)
    chi2 = 4.0 * block * float(np.sum((pi - 0.5) ** 2))
    return float(gammaincc(nblocks / 2.0, chi2 / 2.0))


def runs(bits) -> float:
    """Runs test; returns 0.0 when the monobit prerequisite fails."""
    b = _bits(bits)
    n = b.size
    pi = np.count_nonzero(b) / n
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return 0.0
    v = 1 + int(np.count_nonzero(b[1:] != b[:-1]))
    num = abs(v - 2.0 * n * pi * (1.0 - pi))
    return float(erfc(num / (2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi))))


TESTS = {
    "frequency": frequency,
    "block_frequency": block_frequency,
    "runs": runs,
}


def nist_lite(bits) -> dict[str, tuple[float, bool]]:
    """Run the three tests on one sequence: ``{name: (p_value, passed)}``."""
    b = _bits(bits)
    out = {}
    for name, fn in TESTS.items():
        p = fn(b)
        out[name] = (p, p >= ALPHA)
    return out


def proportion_floor(sequences: int, alpha: float = ALPHA) -> float:
    """Lower edge of the acceptable pass proportion (three-sigma binomial)."""
    p = 1.0 - alpha
    return p - 3.0 * math.sqrt(p * alpha / sequences)


def uniformity_pvalue(pvalues) -> float:
    """Second-level chi-square over ten equal p-value bins (9 dof)."""
    pv = np.asarray(pvalues, dtype=float)
    counts, _ = np.histogram(pv, bins=10, range=(0.0, 1.0))
    expected = pv.size / 10.0
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    return float(gammaincc(4.5, chi2 / 2.0))


@dataclass
class BatteryResult:
    name: str
    pvalues: np.ndarray
    proportion: float
    uniformity: float
    floor: float

    @property
    def passed(self) -> bool:
        return self.proportion >= self.floor and self.uniformity >= 1e-4

    def summary(self) -> dict:
        return {"test": self.name, "sequences": int(self.pvalues.size),
                "proportion": self.proportion, "proportion_floor": self.floor,
                "uniformity_p": self.uniformity, "passed": self.passed}


def battery(bits, sequences: int, length: int = 1_000_000) -> dict[str, BatteryResult]:
    """Split ``bits`` into ``sequences`` runs of ``length`` bits and test each."""
    if isinstance(bits, BitStream):
        if bits.bit_count < sequences * length:
            raise ValueError(f"need {sequences * length} bits, got {bits.bit_count}")
        bits = np.unpackbits(bits.data, count=sequences * length)
    b = np.asarray(bits, dtype=np.uint8).ravel()
    if b.size < sequences * length:
        raise ValueError(f"need {sequences * length} bits, got {b.size}")
    pv = {name: np.empty(sequences) for name in TESTS}
    for i in range(sequences):
        seq = b[i * length:(i + 1) * length]
        for name, fn in TESTS.items():
            pv[name][i] = fn(seq)
    floor = proportion_floor(sequences)
    return {name: BatteryResult(name, p, float(np.mean(p >= ALPHA)), uniformity_pvalue(p), floor)
            for name, p in pv.items()}


def export_for_sts(bits: BitStream, path) -> None:
    """Write bits in the packed binary layout the reference STS reads (mode 1, MSB-first)."""
    with open(path, "wb") as fh:
        fh.write(bits.data.tobytes())
