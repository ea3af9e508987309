"""End-to-end noise synthesis: entropy source -> extractor -> regroup -> ICDF -> DAC."""

from __future__ import annotations

import math
import queue
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.signal import lfilter

from . import icdf
from .entropy_sim import HomodyneConfig, round_half_away
from .extractor import BitStream, ExtractorParams, ToeplitzExtractor

MAX_GAIN = 2.5
STREAM_CHUNK = 1 << 16


def _check_width(w: int) -> None:
    if w not in icdf.VALID_WIDTHS:
        raise ValueError(f"URN width must be one of {icdf.VALID_WIDTHS}, got {w}")


def regroup(bits: BitStream | np.ndarray, w: int) -> np.ndarray:
    """Cut a bit sequence into consecutive MSB-first ``w``-bit words.

    A trailing group shorter than ``w`` is dropped.
    """
    if isinstance(bits, BitStream):
        if bits.bit_count % 8 == 0:
            return _regroup_bytes(bits.data, w)
        bits = bits.to_bits()
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    n = bits.size // w
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    weights = np.uint64(1) << np.arange(w - 1, -1, -1, dtype=np.uint64)
    return (bits[: n * w].reshape(n, w).astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


def _regroup_bytes(data: np.ndarray, w: int) -> np.ndarray:
    data = np.asarray(data, dtype=np.uint8)
    if w % 8 == 0:
        nb = w // 8
        n = data.size // nb
        b = data[: n * nb].reshape(n, nb).astype(np.uint64)
        out = np.zeros(n, dtype=np.uint64)
        for i in range(nb):
            out = (out << np.uint64(8)) | b[:, i]
        return out
    if w == 12:
        trip = data.size // 3
        b = data[: trip * 3].reshape(trip, 3).astype(np.uint64)
        first = (b[:, 0] << np.uint64(4)) | (b[:, 1] >> np.uint64(4))
        second = ((b[:, 1] & np.uint64(0xF)) << np.uint64(8)) | b[:, 2]
        out = np.stack([first, second], axis=1).ravel()
        if data.size % 3 == 2:   # 16 spare bits hold one more word
            out = np.append(out, (np.uint64(data[-2]) << np.uint64(4)) | np.uint64(data[-1] >> 4))
        return out
    return regroup(np.unpackbits(data), w)


def peak_code(table: icdf.CoefficientTable) -> int:
    """Largest magnitude the datapath can emit for this table."""
    w = table.width
    m = np.arange(1, min(1 << (w - 1), 1 << 16), dtype=np.uint64)
    _, mag = icdf.convert(m, w, table)
    return int(mag.max())


def dac_map(sign, magnitude, gain: float, peak: int) -> np.ndarray:
    """Voltage for sign-magnitude codes.

    ``peak`` (the extreme code of the ICDF table) maps to exactly
    ``gain / 2``, so the configured peak-to-peak span is reachable.
    """
    if gain <= 0:
        raise ValueError("gain must be positive")
    codes = icdf.to_codes(sign, magnitude).astype(float)
    return codes * (0.5 * gain) / peak


@dataclass(frozen=True)
class PipelineConfig:
    homodyne: HomodyneConfig = field(default_factory=HomodyneConfig)
    extractor: ExtractorParams = field(default_factory=ExtractorParams)
    extractor_seed: tuple[int, ...] | None = None   # None = package default seed
    width: int = 12
    gain: float = MAX_GAIN
    count: int | None = 1_000_000                   # None = stream until cancelled

    def __post_init__(self):
        _check_width(self.width)
        if not 0 < self.gain <= MAX_GAIN:
            raise ValueError(f"gain must be in (0, {MAX_GAIN}] V, got {self.gain}")
        if self.count is not None and self.count < 0:
            raise ValueError("count must be non-negative")

    def snapshot(self) -> dict:
        d = asdict(self)
        if self.extractor_seed is not None:
            d["extractor_seed"] = bytes(np.packbits(np.array(self.extractor_seed, np.uint8))).hex()
        return d


@dataclass
class Counters:
    raw_codes: int = 0
    raw_bits: int = 0
    blocks_extracted: int = 0
    extracted_bits: int = 0
    urn_words: int = 0
    samples: int = 0
    bits_carried: int = 0
    words_carried: int = 0
    saturated_high: int = 0
    clamped_low: int = 0
    stage_seconds: dict = field(default_factory=lambda: {
        "entropy": 0.0, "extract": 0.0, "regroup": 0.0, "icdf": 0.0, "dac": 0.0})


@dataclass
class NoiseChunk:
    sign: np.ndarray
    magnitude: np.ndarray
    voltage: np.ndarray

    @property
    def codes(self) -> np.ndarray:
        return icdf.to_codes(self.sign, self.magnitude)

    def __len__(self):
        return self.sign.size


class Pipeline:
    """Stateful generator; the emitted sample sequence is independent of chunk sizes."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        hc = config.homodyne
        if hc.adc_bits != 8:
            raise ValueError("pipeline models an 8-bit ADC")
        p = config.extractor
        if p.n % 8 or p.m % 8:
            raise ValueError("pipeline needs byte-aligned extractor blocks")
        seed = None if config.extractor_seed is None else np.array(config.extractor_seed, np.uint8)
        self.extractor = ToeplitzExtractor(seed, p)
        self.table = icdf.build_table(config.width)
        self.peak = peak_code(self.table)
        self.counters = Counters()
        self._rng = np.random.Generator(np.random.PCG64(hc.seed))
        self._sigma = math.sqrt(hc.sigma_total2)
        self._zi = np.zeros(1)
        self._bit_carry = np.zeros(0, dtype=np.uint8)       # unpacked bits < w
        self._word_carry = np.zeros(0, dtype=np.uint64)

    def _raw_bytes(self, blocks: int) -> np.ndarray:
        hc = self.config.homodyne
        n = blocks * self.config.extractor.n // 8
        e = self._rng.standard_normal(n)
        if hc.bandwidth_pole is not None and hc.bandwidth_pole < 1.0:
            a = 1.0 - hc.bandwidth_pole
            b = math.sqrt(1.0 - a * a)
            e, self._zi = lfilter([b], [1.0, -a], e, zi=self._zi)
        codes = np.clip(round_half_away(hc.mid_code + self._sigma * e), 0, hc.full_scale)
        self.counters.raw_codes += n
        self.counters.raw_bits += 8 * n
        return codes.astype(np.uint8)

    def _words(self, need: int) -> np.ndarray:
        c = self.counters
        w = self.config.width
        p = self.config.extractor
        st = c.stage_seconds
        have = self._word_carry
        while have.size < need:
            missing_bits = (need - have.size) * w - self._bit_carry.size
            blocks = max(1, -(-missing_bits // p.m))
            t0 = time.perf_counter()
            raw = self._raw_bytes(blocks)
            t1 = time.perf_counter()
            out = self.extractor.extract_bytes(raw)
            t2 = time.perf_counter()
            c.blocks_extracted += blocks
            c.extracted_bits += blocks * p.m
            if self._bit_carry.size:
                bits = np.concatenate([self._bit_carry, np.unpackbits(out)])
                words = regroup(bits, w)
                used = words.size * w
                self._bit_carry = bits[used:]
            else:
                words = _regroup_bytes(out, w)
                used = words.size * w
                self._bit_carry = np.unpackbits(out)[used:] if used < out.size * 8 else \
                    np.zeros(0, dtype=np.uint8)
            c.urn_words += words.size
            have = np.concatenate([have, words])
            st["entropy"] += t1 - t0
            st["extract"] += t2 - t1
            st["regroup"] += time.perf_counter() - t2
        self._word_carry = have[need:]
        c.bits_carried = int(self._bit_carry.size)
        c.words_carried = int(self._word_carry.size)
        return have[:need]

    def next_chunk(self, n: int) -> NoiseChunk:
        words = self._words(n)
        t0 = time.perf_counter()
        ec = icdf.EvalCounters()
        sign, mag = icdf.convert(words, self.config.width, self.table, ec)
        t1 = time.perf_counter()
        volts = dac_map(sign, mag, self.config.gain, self.peak)
        c = self.counters
        c.stage_seconds["icdf"] += t1 - t0
        c.stage_seconds["dac"] += time.perf_counter() - t1
        c.saturated_high += ec.saturated_high
        c.clamped_low += ec.clamped_low
        c.samples += n
        return NoiseChunk(sign, mag, volts)

    def words(self, n: int) -> np.ndarray:
        """Raw URN words (bypasses the ICDF stage)."""
        return self._words(n)

    def extracted_bits(self, nbits: int) -> BitStream:
        """Extracted random bits, ``nbits`` rounded up to whole blocks."""
        p = self.config.extractor
        blocks = -(-nbits // p.m)
        raw = self._raw_bytes(blocks)
        out = self.extractor.extract_bytes(raw)
        self.counters.blocks_extracted += blocks
        self.counters.extracted_bits += blocks * p.m
        return BitStream(out, blocks * p.m)


def run_pipeline(config: PipelineConfig, chunk: int = STREAM_CHUNK) -> tuple[NoiseChunk, Counters]:
    """Generate ``config.count`` samples in order."""
    if config.count is None:
        raise ValueError("run_pipeline needs a finite count; use stream() otherwise")
    pipe = Pipeline(config)
    parts = []
    left = config.count
    while left > 0:
        take = min(chunk, left)
        parts.append(pipe.next_chunk(take))
        left -= take
    if not parts:
        empty = np.zeros(0, dtype=np.int64)
        return NoiseChunk(empty, empty, np.zeros(0)), pipe.counters
    return NoiseChunk(np.concatenate([p.sign for p in parts]),
                      np.concatenate([p.magnitude for p in parts]),
                      np.concatenate([p.voltage for p in parts])), pipe.counters


class NoiseStream:
    """Producer thread feeding fixed-size chunks through a bounded queue.

    Iterate to consume; call :meth:`cancel` (or leave a ``with`` block) to
    stop.  A full queue blocks the producer.
    """

    _DONE = object()

    def __init__(self, config: PipelineConfig, chunk: int = STREAM_CHUNK, depth: int = 4):
        self.pipeline = Pipeline(config)
        self.chunk = chunk
        self._q: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._remaining = config.count
        self._thread = threading.Thread(target=self._produce, daemon=True)
        self._thread.start()

    def _produce(self):
        try:
            while not self._stop.is_set():
                if self._remaining is not None and self._remaining <= 0:
                    break
                n = self.chunk if self._remaining is None else min(self.chunk, self._remaining)
                item = self.pipeline.next_chunk(n)
                if self._remaining is not None:
                    self._remaining -= n
                while not self._stop.is_set():
                    try:
                        self._q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
        except BaseException as exc:      # surfaced to the consumer
            self._q.put(exc)
            return
        self._q.put(self._DONE)

    def __iter__(self) -> Iterator[NoiseChunk]:
        while True:
            item = self._q.get()
            if item is self._DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item

    def cancel(self):
        self._stop.set()
        while True:
            try:
                self._q.get_nowait()
            except queue.Empty:
                break
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.cancel()


# ---------------------------------------------------------------------------
# Sample file formats
# ---------------------------------------------------------------------------

GRN_MAGIC = b"QGRN"
GRN_VERSION = 1
_GRN_HEADER = struct.Struct("<4sHBBQd")


def write_i16le(path, chunk: NoiseChunk) -> None:
    """Sign-extended 14-bit codes as little-endian int16."""
    Path(path).write_bytes(chunk.codes.astype("<i2").tobytes())


def read_i16le(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<i2").astype(np.int64)


def write_csv(path, chunk: NoiseChunk) -> None:
    with open(path, "w") as fh:
        fh.write("index,code,voltage\n")
        codes = chunk.codes
        for i in range(0, len(codes), 1 << 16):
            c = codes[i:i + (1 << 16)]
            v = chunk.voltage[i:i + (1 << 16)]
            idx = np.arange(i, i + c.size)
            fh.write("".join(f"{a},{b},{x:.9g}\n" for a, b, x in zip(idx, c, v)))


def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1].astype(np.int64), data[:, 2]


def write_grn(path, chunk: NoiseChunk, width: int, gain: float) -> None:
    """Header then 14-bit words (sign bit, 13 magnitude bits) packed MSB-first."""
    words = (np.asarray(chunk.sign, np.uint64) << np.uint64(13)) | np.asarray(chunk.magnitude, np.uint64)
    shifts = np.arange(13, -1, -1, dtype=np.uint64)
    bits = ((words[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    header = _GRN_HEADER.pack(GRN_MAGIC, GRN_VERSION, width, icdf.OUT_FRAC, len(chunk), gain)
    Path(path).write_bytes(header + np.packbits(bits.ravel()).tobytes())


def read_grn(path) -> tuple[np.ndarray, np.ndarray, dict]:
    data = Path(path).read_bytes()
    magic, version, width, frac, count, gain = _GRN_HEADER.unpack_from(data, 0)
    if magic != GRN_MAGIC or version != GRN_VERSION:
        raise ValueError("not a GRN file")
    bits = np.unpackbits(np.frombuffer(data[_GRN_HEADER.size:], dtype=np.uint8), count=14 * count)
    words = regroup(bits, 14).astype(np.int64)
    sign, mag = words >> 13, words & icdf.OUT_MAX
    return sign, mag, {"width": width, "frac_bits": frac, "count": count, "gain": gain}
