"""Forensic parsing and analysis of HEIF/HEIC image containers."""

__version__ = "0.1.0"

from .analyzer import Analysis, Finding, ItemRole, Severity, analyze, classify_items, coverage_for  # noqa: E402
from .boxes import BoxTree, compute_coverage, format_tree, parse_tree  # noqa: E402
from .carver import CarveCandidate, extract, scan  # noqa: E402
from .integrity import DigestSet, hash_file, hash_item, verify_mint  # noqa: E402
from .rewriter import ChangeLog, reveal_hidden  # noqa: E402
from .semantics import FileModel, HeifKind, build_file_model, detect_heif, load  # noqa: E402

__all__ = [
    "Analysis", "BoxTree", "CarveCandidate", "ChangeLog", "DigestSet", "FileModel", "Finding",
    "HeifKind", "ItemRole", "Severity", "analyze", "build_file_model", "classify_items",
    "compute_coverage", "coverage_for", "detect_heif", "extract", "format_tree", "hash_file",
    "hash_item", "load", "parse_tree", "reveal_hidden", "scan", "verify_mint", "__version__",
]
