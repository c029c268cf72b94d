"""Quantitative evaluation: distance metrics, robustness audit, benchmarks."""

from .audit import DEFAULT_AUDIT_SPECS, fid_audit, write_audit_report
from .bench import kernel_bench, latency_bench, write_kernel_report, write_latency_report
from .extractor import (
    EXTRACTOR_VERSION,
    ExtractorConfig,
    FeatureExtractor,
    extract_stats,
    get_extractor,
    resize_image,
    train_extractor,
)
from .fid import FeatureStats, fid, inception_score
from .manipulate import ManipulationSpec, jpeg_roundtrip, manipulate, manipulate_set, palette_quantize
from .metrics import binomial_tail, is_red_dominant, psnr, red_dominance_test

__all__ = [
    "DEFAULT_AUDIT_SPECS",
    "EXTRACTOR_VERSION",
    "ExtractorConfig",
    "FeatureExtractor",
    "FeatureStats",
    "ManipulationSpec",
    "binomial_tail",
    "extract_stats",
    "fid",
    "fid_audit",
    "get_extractor",
    "inception_score",
    "is_red_dominant",
    "jpeg_roundtrip",
    "kernel_bench",
    "latency_bench",
    "manipulate",
    "manipulate_set",
    "palette_quantize",
    "psnr",
    "red_dominance_test",
    "resize_image",
    "train_extractor",
    "write_audit_report",
    "write_kernel_report",
    "write_latency_report",
]
