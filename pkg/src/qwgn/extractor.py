"""Toeplitz-hashing randomness extraction over GF(2).

Matrix convention: for an ``m x n`` extractor defined by ``m + n - 1`` seed
bits, ``T[i, j] = seed[i - j + n - 1]``.  The first row is therefore
``seed[n-1], seed[n-2], ..., seed[0]`` and the first column is
``seed[n-1 : m+n-1]``.  Output bit ``i`` is the parity of row ``i`` ANDed
with the raw input.

All bit packing in this package is MSB-first within each byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SEED_TAG = b"qwgn/toeplitz/default/v1"


@dataclass(frozen=True)
class ExtractorParams:
    m: int = 1024
    n: int = 1536
    k: int = 64

    def __post_init__(self):
        if not 0 < self.m < self.n:
            raise ValueError("extractor needs 0 < m < n")
        if self.k <= 0 or self.n % self.k:
            raise ValueError("submatrix width k must divide n")

    @property
    def seed_length(self) -> int:
        return self.m + self.n - 1


@dataclass(frozen=True, eq=False)
class BitStream:
    """Packed bits, MSB-first, with an explicit bit count."""

    data: np.ndarray
    bit_count: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if data.size != (self.bit_count + 7) // 8:
            raise ValueError("storage size does not match bit_count")
        pad = data.size * 8 - self.bit_count
        if pad and data[-1] & ((1 << pad) - 1):
            raise ValueError("trailing pad bits must be zero")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __len__(self):
        return self.bit_count

    def __eq__(self, other):
        return (isinstance(other, BitStream) and self.bit_count == other.bit_count
                and np.array_equal(self.data, other.data))

    @classmethod
    def from_bits(cls, bits) -> "BitStream":
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        return cls(np.packbits(bits), int(bits.size))

    @classmethod
    def from_bytes(cls, data, bit_count: int | None = None) -> "BitStream":
        arr = np.frombuffer(bytes(data), dtype=np.uint8) if isinstance(data, (bytes, bytearray)) \
            else np.asarray(data, dtype=np.uint8)
        if bit_count is None:
            bit_count = arr.size * 8
        return cls(arr[: (bit_count + 7) // 8].copy(), bit_count)

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(self.data, count=self.bit_count)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.data.tobytes()).hexdigest()[:16]

    def save(self, path, **meta) -> Path:
        """Raw packed bytes plus a ``.json`` sidecar (bit_count and extra fields)."""
        path = Path(path)
        path.write_bytes(self.data.tobytes())
        record = {"kind": "bitstream", "bit_count": self.bit_count,
                  "sha256_16": self.fingerprint(), **meta}
        path.with_name(path.name + ".json").write_text(json.dumps(record, indent=2))
        return path

    @classmethod
    def load(cls, path) -> "BitStream":
        path = Path(path)
        side = path.with_name(path.name + ".json")
        raw = path.read_bytes()
        bit_count = json.loads(side.read_text())["bit_count"] if side.exists() else len(raw) * 8
        return cls.from_bytes(raw, bit_count)


def default_seed(params: ExtractorParams = ExtractorParams()) -> np.ndarray:
    """Fixed reproducible seed: SHA-256 in counter mode over a constant tag."""
    nbytes = (params.seed_length + 7) // 8
    chunks, counter = [], 0
    while sum(len(c) for c in chunks) < nbytes:
        chunks.append(hashlib.sha256(DEFAULT_SEED_TAG + counter.to_bytes(4, "big")).digest())
        counter += 1
    data = np.frombuffer(b"".join(chunks)[:nbytes], dtype=np.uint8)
    return np.unpackbits(data, count=params.seed_length)


def load_seed(path, params: ExtractorParams) -> np.ndarray:
    """Seed file: packed MSB-first bits, at least ``m + n - 1`` of them."""
    data = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    if data.size * 8 < params.seed_length:
        raise ValueError(f"seed file holds {data.size * 8} bits, need {params.seed_length}")
    return np.unpackbits(data, count=params.seed_length)


def save_seed(path, seed) -> None:
    Path(path).write_bytes(np.packbits(np.asarray(seed, dtype=np.uint8)).tobytes())


def _check_seed(seed, params: ExtractorParams) -> np.ndarray:
    seed = np.asarray(seed, dtype=np.uint8)
    if seed.ndim != 1 or seed.size != params.seed_length:
        raise ValueError(f"seed must hold exactly m + n - 1 = {params.seed_length} bits")
    if np.any(seed > 1):
        raise ValueError("seed must be a 0/1 array")
    return seed


def toeplitz_submatrix(seed, params: ExtractorParams, col0: int, ncols: int) -> np.ndarray:
    """Columns ``[col0, col0 + ncols)`` of the Toeplitz matrix as a 0/1 array."""
    i = np.arange(params.m)[:, None]
    j = np.arange(col0, col0 + ncols)[None, :]
    return np.asarray(seed, dtype=np.uint8)[i - j + params.n - 1]


def extract_block(seed, params: ExtractorParams, raw) -> np.ndarray:
    """``T @ raw`` over GF(2), accumulated one ``m x k`` submatrix at a time."""
    seed = _check_seed(seed, params)
    raw = np.asarray(raw, dtype=np.uint8).ravel()
    if raw.size != params.n:
        raise ValueError(f"raw block must hold n = {params.n} bits, got {raw.size}")
    acc = np.zeros(params.m, dtype=np.uint8)
    k = params.k
    for s in range(params.n // k):
        sub = toeplitz_submatrix(seed, params, s * k, k).astype(np.int64)
        acc ^= (sub @ raw[s * k:(s + 1) * k].astype(np.int64) & 1).astype(np.uint8)
    return acc


class ToeplitzExtractor:
    """Streaming extractor with per-submatrix byte lookup tables.

    For each input byte position a 256-entry table holds the packed XOR of
    the eight matrix columns that byte selects.  A submatrix partial
    product is the XOR of its ``k / 8`` lookups, and the block output is the
    XOR of the ``n / k`` partial products.  Requires ``m``, ``n``, ``k``
    divisible by 8; other shapes fall back to :func:`extract_block`.
    """

    chunk_blocks = 2048

    def __init__(self, seed=None, params: ExtractorParams = ExtractorParams()):
        self.params = params
        self.seed = _check_seed(default_seed(params) if seed is None else seed, params)
        self.fast = params.m % 8 == 0 and params.n % 8 == 0 and params.k % 8 == 0
        if self.fast:
            self._lut = self._build_lut()

    def seed_fingerprint(self) -> str:
        return hashlib.sha256(np.packbits(self.seed).tobytes()).hexdigest()[:16]

    def _build_lut(self) -> np.ndarray:
        m, n = self.params.m, self.params.n
        cols = np.packbits(toeplitz_submatrix(self.seed, self.params, 0, n).T, axis=1)
        cols = cols.reshape(n // 8, 8, m // 8)     # [byte, bit (MSB first), packed column]
        lut = np.zeros((n // 8, 256, m // 8), dtype=np.uint8)
        for t in range(8):
            b = 1 << t
            lut[:, b:2 * b] = lut[:, :b] ^ cols[:, 7 - t][:, None, :]
        word = np.uint64 if (m // 8) % 8 == 0 else np.uint8
        lut = lut.view(word) if word is np.uint64 else lut
        return lut.reshape((n // 8) * 256, -1)

    def _extract_packed(self, raw_bytes: np.ndarray) -> np.ndarray:
        # raw_bytes: (blocks, n // 8) -> packed output (blocks, m // 8)
        p = self.params
        nb = p.n // 8
        kb = p.k // 8
        base = (np.arange(nb, dtype=np.intp) * 256)[None, :]
        idx = raw_bytes.astype(np.intp) + base
        out = np.zeros((raw_bytes.shape[0], self._lut.shape[1]), dtype=self._lut.dtype)
        for s in range(p.n // p.k):
            part = self._lut[idx[:, s * kb:(s + 1) * kb]]
            out ^= np.bitwise_xor.reduce(part, axis=1)
        return out.view(np.uint8).reshape(raw_bytes.shape[0], p.m // 8)

    def extract_bytes(self, raw: np.ndarray) -> np.ndarray:
        """Extract from whole raw bytes (MSB-first bits); partial final block dropped."""
        p = self.params
        nb = p.n // 8
        blocks = raw.size // nb
        raw = np.asarray(raw[: blocks * nb], dtype=np.uint8).reshape(blocks, nb)
        out = [self._extract_packed(raw[i:i + self.chunk_blocks])
               for i in range(0, blocks, self.chunk_blocks)]
        if not out:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate(out).ravel()

    def extract_stream(self, raw: BitStream) -> BitStream:
        p = self.params
        if raw.bit_count < p.n:
            raise ValueError(f"need at least one {p.n}-bit block, got {raw.bit_count} bits")
        blocks = raw.bit_count // p.n
        if self.fast:
            return BitStream(self.extract_bytes(raw.data[: blocks * p.n // 8]), blocks * p.m)
        bits = raw.to_bits()
        out = [extract_block(self.seed, p, bits[b * p.n:(b + 1) * p.n]) for b in range(blocks)]
        return BitStream.from_bits(np.concatenate(out))


def extract_stream(seed, params: ExtractorParams, raw: BitStream) -> BitStream:
    return ToeplitzExtractor(seed, params).extract_stream(raw)


def codes_to_bitstream(codes, adc_bits: int = 8) -> BitStream:
    """Serialize ADC codes, every bit of each code, MSB first."""
    codes = np.asarray(codes)
    if adc_bits == 8:
        return BitStream(codes.astype(np.uint8), codes.size * 8)
    shifts = np.arange(adc_bits - 1, -1, -1)
    bits = (codes.astype(np.int64)[:, None] >> shifts) & 1
    return BitStream.from_bits(bits.ravel())
