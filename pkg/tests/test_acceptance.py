"""Exit criteria; each test records one PASS/FAIL line in the terminal summary."""

import time

import mpmath
import numpy as np

from qwgn import icdf, nist, stats
from qwgn.entropy_sim import HomodyneConfig, estimate_min_entropy, simulate_raw
from qwgn.extractor import ExtractorParams, extract_block
from qwgn.synth import Pipeline, PipelineConfig, run_pipeline

WIDTHS = (12, 16, 24, 32)
ULP = 2.0 ** -10


def test_01_crest_factor_table(criterion):
    table = {12: 3.5, 16: 4.2, 24: 5.3, 32: 6.2}
    got = {w: icdf.crest_factor(w) for w in WIDTHS}
    ok = all(abs(got[w] - table[w]) <= 0.05 for w in WIDTHS)
    criterion("1 crest factor table", ok, " ".join(f"w{w}={got[w]:.4f}" for w in WIDTHS))


def stratified_words(w: int, total: int, rng) -> np.ndarray:
    """Every word with magnitude < 2**12, then equal random draws per (z, sub) cell."""
    deep = np.arange(1, 1 << 12, dtype=np.uint64)
    cells = [(z, s) for z in range(w - 1) for s in range(4) if (w - 2) - z >= 2]
    per, extra = divmod(total - deep.size, len(cells))
    parts = [deep]
    for i, (z, s) in enumerate(cells):
        r = (w - 2) - z
        lo = (1 << r) + s * (1 << (r - 2))
        parts.append(rng.integers(lo, lo + (1 << (r - 2)), per + (i < extra), dtype=np.uint64))
    mags = np.concatenate(parts)
    signs = rng.integers(0, 2, mags.size, dtype=np.uint64) << np.uint64(w - 1)
    return mags | signs


def test_02_fixed_point_fidelity(criterion):
    t0 = time.perf_counter()
    worst = {}
    for w in (12, 16):
        v = np.arange(1 << w, dtype=np.uint64)
        _, mag = icdf.convert(v, w)
        worst[w] = float(np.max(np.abs(mag * ULP - icdf.ideal_magnitude(v, w))))
    rng = np.random.default_rng(2024)
    for w in (24, 32):
        v = stratified_words(w, 10 ** 7, rng)
        assert v.size == 10 ** 7
        err = 0.0
        for i in range(0, v.size, 1 << 21):
            part = v[i:i + (1 << 21)]
            _, mag = icdf.convert(part, w)
            err = max(err, float(np.max(np.abs(mag * ULP - icdf.ideal_magnitude(part, w)))))
        worst[w] = err
    dt = time.perf_counter() - t0
    ok = all(e <= 2 * ULP for e in worst.values()) and dt < 120
    criterion("2 fixed-point fidelity", ok,
              " ".join(f"w{w}={e / ULP:.3f}ulp" for w, e in worst.items()) + f" ({dt:.1f}s)")


def dense_gf2(seed, m, n, raw):
    t = np.array([[seed[i - j + n - 1] for j in range(n)] for i in range(m)], dtype=np.int64)
    return (t @ raw.astype(np.int64)) % 2


def test_03_extractor_oracle_equivalence(criterion):
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        k = int(rng.choice([d for d in range(1, n + 1) if n % d == 0]))
        m = int(rng.integers(1, n))
        p = ExtractorParams(m, n, k)
        seed = rng.integers(0, 2, p.seed_length, dtype=np.uint8)
        raw = rng.integers(0, 2, n, dtype=np.uint8)
        bad += not np.array_equal(extract_block(seed, p, raw), dense_gf2(seed, m, n, raw))
    criterion("3 extractor oracle equivalence", bad == 0, f"{bad}/1000 mismatches")


def test_04_distribution_battery(criterion):
    lines, ok = [], True
    for w in WIDTHS:
        out, _ = run_pipeline(PipelineConfig(width=w, count=10 ** 4))
        x = out.voltage
        _, p_jb = stats.jarque_bera(x)
        _, p_lf = stats.lilliefors(x)
        inside = stats.qq_data(x).inside("ks")
        ok &= p_jb > 0.05 and p_lf > 0.05 and inside >= 0.95
        lines.append(f"w{w}: JB p={p_jb:.3f} LF p={p_lf:.3f} KS-in={inside:.4f}")
    criterion("4 distribution battery", ok, "; ".join(lines))


def test_05_autocorrelation(criterion):
    worst = {}
    for w in WIDTHS:
        out, _ = run_pipeline(PipelineConfig(width=w, count=10 ** 6))
        r = stats.autocorr(out.voltage, 100)
        worst[w] = float(np.max(np.abs(r[1:])))
    ok = all(v < 0.01 for v in worst.values())
    criterion("5 autocorrelation", ok, " ".join(f"w{w}={v:.4f}" for w, v in worst.items()))


def test_06_spectral_whiteness(criterion):
    dev = {}
    for w in WIDTHS:
        out, _ = run_pipeline(PipelineConfig(width=w, count=10 ** 6))
        f, db = stats.psd(out.voltage, 1024)
        dev[w] = stats.flatness(f, db, (0.01, 0.45))
    ok = all(d <= 1.0 for d in dev.values())
    criterion("6 spectral whiteness", ok, " ".join(f"w{w}=+-{d:.2f}dB" for w, d in dev.items()))


def test_07_nist_lite_battery(criterion):
    pipe = Pipeline(PipelineConfig(count=None))
    bits = pipe.extracted_bits(100 * 10 ** 6)
    res = nist.battery(bits, sequences=100, length=10 ** 6)
    ok = all(r.proportion >= 0.96 for r in res.values())
    criterion("7 NIST-lite battery", ok,
              " ".join(f"{n}={r.proportion:.2f}(unif p={r.uniformity:.3f})" for n, r in res.items()))


def test_08_min_entropy(criterion):
    mpmath.mp.dps = 30
    cfg = HomodyneConfig(767.4, 7.9, seed=8)
    h = estimate_min_entropy(simulate_raw(cfg, 10 ** 7))
    s = mpmath.sqrt(767.4 + 7.9)
    analytic = float(-mpmath.log(mpmath.ncdf(0.5 / s) - mpmath.ncdf(-0.5 / s), 2))
    criterion("8 min-entropy consistency", abs(h - analytic) <= 0.1,
              f"plug-in={h:.4f} analytic={analytic:.4f} (hardware 5.97)")


def test_09_determinism_and_amplitude(criterion):
    checks = []
    for w in WIDTHS:
        a, _ = run_pipeline(PipelineConfig(width=w, gain=2.5, count=200_000))
        b, _ = run_pipeline(PipelineConfig(width=w, gain=2.5, count=200_000))
        c, _ = run_pipeline(PipelineConfig(width=w, gain=0.8, count=200_000))
        same = np.array_equal(a.codes, b.codes) and np.array_equal(a.voltage, b.voltage)
        bound = np.abs(a.voltage).max() <= 1.25 and np.abs(c.voltage).max() <= 0.4
        prop = np.array_equal(a.codes, c.codes) and np.allclose(a.voltage * 0.8, c.voltage * 2.5,
                                                                rtol=1e-15, atol=0)
        checks.append((w, same, bound, prop))
    ok = all(all(c[1:]) for c in checks)
    criterion("9 determinism & amplitude", ok,
              " ".join(f"w{w}:{'ok' if all(r) else r}" for w, *r in checks))


def test_10_throughput(criterion):
    rates = {}
    for w in WIDTHS:
        best = 0.0
        for _ in range(2):
            t0 = time.perf_counter()
            run_pipeline(PipelineConfig(width=w, count=2 * 10 ** 6))
            best = max(best, 2 * 10 ** 6 / (time.perf_counter() - t0))
        rates[w] = best
    ok = all(r >= 1e6 for r in rates.values())
    criterion("10 throughput", ok, " ".join(f"w{w}={r / 1e6:.2f}MS/s" for w, r in rates.items()))
