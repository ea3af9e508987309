"""Command-line front end.

File formats
------------
i16le     little-endian int16 per sample, holding the sign-extended 14-bit
          code (magnitude in Q3.10: real value = code / 1024).
csv       header ``index,code,voltage``; one row per sample.
grn       24-byte header ``<4sHBBQd`` = (b"QGRN", version=1, width,
          frac_bits=10, count, gain) followed by 14-bit words (sign bit,
          then 13 magnitude bits) packed MSB-first, zero padded.
raw       one unsigned byte per ADC code, ``<file>.json`` sidecar with the
          homodyne config.
bits      packed extracted bits, MSB-first in each byte; ``<file>.json``
          sidecar carries bit_count, seed fingerprint and extractor params.
table     header ``<4sHBBBB`` = (b"QWCT", version=1, w, f0, f1, f2) then
          4*(w-1) records ``<qib`` = (c0, c1, c2) ordered by (z, sub).

Exit codes: 0 success, 2 invalid arguments, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import asdict
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import icdf, nist, stats
from .entropy_sim import HomodyneConfig, RawBlock, central_bin_entropy, estimate_min_entropy, simulate_raw
from .extractor import BitStream, ExtractorParams, ToeplitzExtractor, codes_to_bitstream, load_seed
from .synth import (MAX_GAIN, Pipeline, PipelineConfig, read_csv, read_grn, read_i16le,
                    run_pipeline, write_csv, write_grn, write_i16le)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

FORMATS = ("i16le", "csv", "grn")

DEFAULTS = {
    "width": 12,
    "gain": MAX_GAIN,
    "count": 1_000_000,
    "seed": 0,
    "format": "i16le",
    "sigma_q2": HomodyneConfig().sigma_q2,
    "sigma_c2": HomodyneConfig().sigma_c2,
    "bandwidth_pole": None,
    "extractor_seed_file": None,
}


class UsageError(Exception):
    pass


def _pkg_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(command: str, settings: dict, outputs: list, extra: dict | None = None) -> Path:
    """``<first output>.manifest.json``: settings, versions, digests."""
    manifest = {
        "command": command,
        "config": settings,
        "versions": {"qwgn": _pkg_version(), "numpy": np.__version__,
                     "python": platform.python_version()},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = Path(f"{outputs[0]}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _load_config(path) -> dict:
    data = json.loads(Path(path).read_text())
    if "config" in data and isinstance(data["config"], dict):   # a manifest
        data = data["config"]
    return {k.replace("-", "_"): v for k, v in data.items()}


def _resolve(args, keys) -> dict:
    """Flags > config file > defaults."""
    cfg = _load_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for k in keys:
        flag = getattr(args, k, None)
        out[k] = flag if flag is not None else cfg.get(k, DEFAULTS.get(k))
    return out


def _check_width(w) -> int:
    if w not in icdf.VALID_WIDTHS:
        raise UsageError(f"--width must be one of {', '.join(map(str, icdf.VALID_WIDTHS))}; got {w}")
    return w


def _pipeline_config(s: dict) -> PipelineConfig:
    _check_width(s["width"])
    if not 0 < s["gain"] <= MAX_GAIN:
        raise UsageError(f"--gain must be in (0, {MAX_GAIN}] volts; got {s['gain']}")
    if s["count"] is None or s["count"] < 1:
        raise UsageError("--count must be a positive integer")
    if s["format"] not in FORMATS:
        raise UsageError(f"--format must be one of {', '.join(FORMATS)}")
    try:
        hc = HomodyneConfig(sigma_q2=s["sigma_q2"], sigma_c2=s["sigma_c2"],
                            bandwidth_pole=s["bandwidth_pole"], seed=s["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    seed = None
    if s.get("extractor_seed_file"):
        seed = tuple(int(b) for b in load_seed(s["extractor_seed_file"], ExtractorParams()))
    return PipelineConfig(homodyne=hc, extractor_seed=seed, width=s["width"],
                          gain=s["gain"], count=s["count"])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

GEN_KEYS = ("width", "gain", "count", "seed", "format", "sigma_q2", "sigma_c2",
            "bandwidth_pole", "extractor_seed_file")


def cmd_generate(args) -> int:
    s = _resolve(args, GEN_KEYS)
    cfg = _pipeline_config(s)
    out = Path(args.out)
    chunk, counters = run_pipeline(cfg)
    if s["format"] == "i16le":
        write_i16le(out, chunk)
    elif s["format"] == "csv":
        write_csv(out, chunk)
    else:
        write_grn(out, chunk, cfg.width, cfg.gain)
    diag = {k: v for k, v in asdict(counters).items() if k != "stage_seconds"}
    man = write_manifest("generate", s, [out], {"counters": diag})
    print(json.dumps({"out": str(out), "manifest": str(man), **diag}))
    return EXIT_OK


def _read_samples(path: Path, fmt: str | None):
    """Return (real values, metadata)."""
    fmt = fmt or {".csv": "csv", ".grn": "grn"}.get(path.suffix, None)
    if fmt is None:
        with open(path, "rb") as fh:
            fmt = "grn" if fh.read(4) == b"QGRN" else "i16le"
    if fmt == "csv":
        codes, volts = read_csv(path)
        return codes / 1024.0, {"format": "csv"}
    if fmt == "grn":
        sign, mag, meta = read_grn(path)
        return icdf.to_real(sign, mag), {"format": "grn", **meta}
    return read_i16le(path) / 1024.0, {"format": "i16le"}


def cmd_analyze(args) -> int:
    path = Path(args.input)
    x, meta = _read_samples(path, args.format)
    bits = BitStream.load(args.bits) if args.bits else None
    rep = stats.analyze(x, max_lag=args.max_lag, segment_length=args.segment_length,
                        qq_points=args.qq_points, bits=bits)
    rep.meta.update(meta)
    rep.meta["source"] = str(path)
    outdir = Path(args.outdir)
    paths = rep.write(outdir, args.stem)
    if not args.no_plots:
        from . import plots
        paths += plots.render_all(rep, outdir, args.stem)
    man = write_manifest("analyze", {"input": str(path), "max_lag": args.max_lag,
                                     "segment_length": args.segment_length,
                                     "qq_points": args.qq_points}, paths)
    print(json.dumps({"report": str(paths[0]), "manifest": str(man), **rep.to_dict()},
                     default=float))
    return EXIT_OK


def cmd_table(args) -> int:
    if args.load:
        table = icdf.CoefficientTable.from_bytes(Path(args.load).read_bytes())
    else:
        table = icdf.build_table(_check_width(args.width))
    if args.save:
        Path(args.save).write_bytes(table.to_bytes())
    a0, a1, a2 = table.real_coefficients()
    print(f"# width={table.width} f0={table.f0} f1={table.f1} f2={table.f2} "
          f"entries={table.n_entries} max_fit_error={table.max_fit_error.max():.3e}")
    print("z,sub,c0_int,c1_int,c2_int,c0,c1,c2,max_fit_error")
    for z in range(table.width - 1):
        for sub in range(4):
            print(f"{z},{sub},{table.c0[z, sub]},{table.c1[z, sub]},{table.c2[z, sub]},"
                  f"{a0[z, sub]:.12f},{a1[z, sub]:.10f},{a2[z, sub]:.8f},"
                  f"{table.max_fit_error[z, sub]:.3e}")
    return EXIT_OK


def bench(width: int, count: int, seed: int = 0) -> dict:
    cfg = PipelineConfig(homodyne=HomodyneConfig(seed=seed), width=width, count=count)
    t0 = time.perf_counter()
    _, counters = run_pipeline(cfg)
    total = time.perf_counter() - t0
    st = counters.stage_seconds
    return {
        "width": width,
        "samples": count,
        "seconds": total,
        "samples_per_second": count / total,
        "stage_rates": {
            "entropy_codes_per_s": counters.raw_codes / max(st["entropy"], 1e-12),
            "extract_bits_per_s": counters.extracted_bits / max(st["extract"], 1e-12),
            "regroup_words_per_s": counters.urn_words / max(st["regroup"], 1e-12),
            "icdf_samples_per_s": count / max(st["icdf"], 1e-12),
            "dac_samples_per_s": count / max(st["dac"], 1e-12),
        },
    }


def cmd_bench(args) -> int:
    widths = [args.width] if args.width else list(icdf.VALID_WIDTHS)
    results = [bench(_check_width(w), args.count) for w in widths]
    print(json.dumps({"platform": platform.platform(), "results": results}, indent=2))
    return EXIT_OK


def cmd_simulate_raw(args) -> int:
    try:
        hc = HomodyneConfig(sigma_q2=args.sigma_q2, sigma_c2=args.sigma_c2,
                            bandwidth_pole=args.bandwidth_pole, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.count < 1:
        raise UsageError("--count must be positive")
    block = simulate_raw(hc, args.count)
    out = block.save(args.out)
    info = {"out": str(out), "count": args.count, "analytic_min_entropy": central_bin_entropy(hc)}
    if args.count >= 100_000:
        info["min_entropy"] = estimate_min_entropy(block)
    write_manifest("simulate-raw", asdict(hc) | {"count": args.count}, [out, Path(f"{out}.json")])
    print(json.dumps(info))
    return EXIT_OK


def cmd_extract(args) -> int:
    params = ExtractorParams(args.m, args.n, args.k)
    block = RawBlock.load(args.input)
    seed = load_seed(args.seed_file, params) if args.seed_file else None
    ex = ToeplitzExtractor(seed, params)
    raw = codes_to_bitstream(block.codes, block.config.adc_bits)
    try:
        bits = ex.extract_stream(raw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = bits.save(args.out, seed_sha256_16=ex.seed_fingerprint(), params=asdict(params),
                    raw_bits=raw.bit_count, discarded_bits=raw.bit_count % params.n)
    write_manifest("extract", {"input": str(args.input), "seed_file": args.seed_file,
                               **asdict(params)}, [out])
    print(json.dumps({"out": str(out), "bit_count": bits.bit_count, "raw_bits": raw.bit_count}))
    return EXIT_OK


def cmd_export_bits(args) -> int:
    """Extracted bits for external SP 800-22 tooling (packed binary)."""
    if args.bits < 1:
        raise UsageError("--bits must be positive")
    pipe = Pipeline(PipelineConfig(homodyne=HomodyneConfig(seed=args.seed), count=None))
    out = Path(args.out)
    step = 1 << 26
    left = args.bits
    with open(out, "wb") as fh:
        while left > 0:
            take = min(step, left)
            chunk = pipe.extracted_bits(take)
            fh.write(BitStream.from_bytes(chunk.data, take).data.tobytes())
            left -= take
    write_manifest("export-bits", {"seed": args.seed, "bits": args.bits}, [out])
    per = args.bits // max(args.sequences, 1)
    print(json.dumps({"out": str(out), "bit_count": args.bits,
                      "sts_hint": f"assess {per}; input mode 1 (binary); "
                                  f"{args.sequences} bitstreams"}))
    return EXIT_OK


def cmd_nist(args) -> int:
    if args.input:
        bits = BitStream.load(args.input)
    else:
        pipe = Pipeline(PipelineConfig(homodyne=HomodyneConfig(seed=args.seed), count=None))
        bits = pipe.extracted_bits(args.sequences * args.length)
    try:
        res = nist.battery(bits, args.sequences, args.length)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    summary = [r.summary() for r in res.values()]
    print(json.dumps({"sequences": args.sequences, "length": args.length, "results": summary},
                     indent=2))
    return EXIT_OK if all(r.passed for r in res.values()) else EXIT_RUNTIME


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qwgn", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run the full pipeline and write samples")
    g.add_argument("--width", type=int, help="URN width: 12, 16, 24 or 32 (default 12)")
    g.add_argument("--gain", type=float, help=f"output peak-to-peak volts, <= {MAX_GAIN}")
    g.add_argument("--count", type=int, help="number of samples (default 1e6)")
    g.add_argument("--seed", type=int, help="entropy simulator seed (default 0)")
    g.add_argument("--format", help="i16le | csv | grn (default i16le)")
    g.add_argument("--sigma-q2", type=float, dest="sigma_q2")
    g.add_argument("--sigma-c2", type=float, dest="sigma_c2")
    g.add_argument("--bandwidth-pole", type=float, dest="bandwidth_pole")
    g.add_argument("--extractor-seed-file", dest="extractor_seed_file",
                   help="packed Toeplitz seed bits (m + n - 1 = 2559)")
    g.add_argument("--config", help="flat JSON of flag names, or a manifest to replay")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("analyze", help="statistics report, CSV tables and figures")
    a.add_argument("--input", required=True)
    a.add_argument("--format", choices=FORMATS)
    a.add_argument("--outdir", default="report")
    a.add_argument("--stem", default="report")
    a.add_argument("--max-lag", type=int, default=100, dest="max_lag")
    a.add_argument("--segment-length", type=int, default=1024, dest="segment_length")
    a.add_argument("--qq-points", type=int, default=10_000, dest="qq_points")
    a.add_argument("--bits", help="extracted bit file for the NIST-lite tests")
    a.add_argument("--no-plots", action="store_true", dest="no_plots")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("table", help="build or load a coefficient table and dump it")
    t.add_argument("--width", type=int, default=12)
    t.add_argument("--load")
    t.add_argument("--save")
    t.set_defaults(func=cmd_table)

    b = sub.add_parser("bench", help="end-to-end and per-stage throughput")
    b.add_argument("--width", type=int)
    b.add_argument("--count", type=int, default=1_000_000)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("simulate-raw", help="entropy source only: raw ADC codes")
    r.add_argument("--count", type=int, default=1_000_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--sigma-q2", type=float, default=DEFAULTS["sigma_q2"], dest="sigma_q2")
    r.add_argument("--sigma-c2", type=float, default=DEFAULTS["sigma_c2"], dest="sigma_c2")
    r.add_argument("--bandwidth-pole", type=float, dest="bandwidth_pole")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_simulate_raw)

    e = sub.add_parser("extract", help="Toeplitz extraction of a raw file")
    e.add_argument("--input", required=True)
    e.add_argument("--seed-file", dest="seed_file")
    e.add_argument("--m", type=int, default=1024)
    e.add_argument("--n", type=int, default=1536)
    e.add_argument("--k", type=int, default=64)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_extract)

    n = sub.add_parser("nist", help="Frequency / Block Frequency / Runs battery")
    n.add_argument("--input", help="bit file; default generates bits from --seed")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--sequences", type=int, default=100)
    n.add_argument("--length", type=int, default=1_000_000)
    n.set_defaults(func=cmd_nist)

    x = sub.add_parser("export-bits", help="extracted bits for the external SP 800-22 suite")
    x.add_argument("--bits", type=int, default=10**9)
    x.add_argument("--sequences", type=int, default=1000)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_bits)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qwgn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"qwgn {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
