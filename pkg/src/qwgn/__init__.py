"""Bit-exact model of a vacuum-noise quantum white Gaussian noise generator."""

from .entropy_sim import HomodyneConfig, RawBlock, estimate_min_entropy, simulate_raw, variance_decompose
from .extractor import BitStream, ExtractorParams, ToeplitzExtractor, extract_block, extract_stream
from .icdf import (CoefficientTable, Decomposition, GrnWord, build_table, crest_factor, decompose,
                   evaluate, icdf_reference, urn_to_grn)
from .synth import NoiseStream, Pipeline, PipelineConfig, dac_map, regroup, run_pipeline

__all__ = [
    "BitStream", "CoefficientTable", "Decomposition", "ExtractorParams", "GrnWord",
    "HomodyneConfig", "NoiseStream", "Pipeline", "PipelineConfig", "RawBlock",
    "ToeplitzExtractor", "build_table", "crest_factor", "dac_map", "decompose",
    "estimate_min_entropy", "evaluate", "extract_block", "extract_stream", "icdf_reference",
    "regroup", "run_pipeline", "simulate_raw", "urn_to_grn", "variance_decompose",
]
