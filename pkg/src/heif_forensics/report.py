"""Full analysis pipeline and its canonical JSON report."""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import __version__
from .analyzer import DEFAULT_SLACK_THRESHOLD, Analysis, analyze, coverage_for
from .boxes import CoverageMap, fourcc_text, parse_tree
from .integrity import DigestSet, MintVerification, hash_file, hash_items, verify_mint
from .rewriter import ChangeLog
from .semantics import FileModel, SemanticError, build_file_model

REPORT_VERSION = 1


class ParseFatal(ValueError):
    """Input does not contain a parseable box structure."""


@dataclass(frozen=True)
class PipelineResult:
    model: FileModel
    coverage: CoverageMap
    analysis: Analysis
    file_digest: DigestSet
    item_digests: dict[int, DigestSet | SemanticError]
    mint: list[MintVerification]


def run_pipeline(data: bytes, filename: str | None = None,
                 slack_threshold: int = DEFAULT_SLACK_THRESHOLD) -> PipelineResult:
    tree = parse_tree(data)
    if tree.fatal or not tree.boxes:
        raise ParseFatal("no box structure found")
    if not (tree.find(b"ftyp") or tree.find(b"meta") or tree.find(b"moov")):
        raise ParseFatal("no ftyp, meta or moov box at top level")
    model = build_file_model(tree, data)
    coverage = coverage_for(model)
    result = analyze(model, coverage, data, filename, slack_threshold)
    return PipelineResult(model, coverage, result, hash_file(data), hash_items(model, data),
                          verify_mint(model, data))


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, bytes):
        return fourcc_text(value) if len(value) == 4 else value.hex()
    if isinstance(value, (set, frozenset)):
        return sorted(_plain(v) for v in value)
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    return str(value)


def _item_entry(result: PipelineResult, item) -> dict:
    role = result.analysis.roles.get(item.item_id)
    digest = result.item_digests.get(item.item_id)
    loc = item.location
    entry = {
        "item_id": item.item_id,
        "type": item.type,
        "name": item.name,
        "hidden": item.hidden,
        "primary": item.item_id == result.model.primary_item,
        "role": role.role.value if role else None,
        "role_label": role.label if role else None,
        "infe_version": item.infe_version,
        "infe_flags": item.infe_flags,
        "infe_offset": item.infe_offset,
        "hidden_bit_byte_offset": item.infe_flags_offset + 2,
        "content_type": item.content_type,
        "content_encoding": item.content_encoding,
        "uri_type": item.uri_type,
        "location": None if loc is None else {
            "construction_method": loc.construction_method,
            "data_reference_index": loc.data_reference_index,
            "base_offset": loc.base_offset,
            "extents": [e.as_dict() for e in loc.extents],
        },
        "properties": [p.as_dict() for p in item.properties],
        "grid": item.grid.as_dict() if item.grid else None,
    }
    if isinstance(digest, DigestSet):
        entry["digests"] = digest.as_dict()
        entry["digest_error"] = None
    else:
        entry["digests"] = None
        entry["digest_error"] = f"{type(digest).__name__}: {digest}" if digest else None
    # Reserved for builds with an image decoder.
    entry["pixel_hash"] = None
    entry["perceptual_hash"] = None
    return entry


def build_report(result: PipelineResult, path: str | None,
                 change_log: ChangeLog | None = None) -> dict:
    model = result.model
    report = {
        "report_version": REPORT_VERSION,
        "tool_version": __version__,
        "input": {
            "path": path,
            "size": model.file_len,
            "digests": result.file_digest.as_dict(),
        },
        "detection": {
            "kind": model.kind.value,
            "brands": model.brands.as_dict() if model.brands else None,
        },
        "handler": fourcc_text(model.handler) if model.handler else None,
        "primary_item": model.primary_item,
        "items": [_item_entry(result, it) for it in model.items],
        "tracks": [{
            "track_id": t.track_id,
            "flags": t.tkhd_flags,
            "enabled": t.enabled,
            "in_presentation": t.in_presentation,
            "in_preview": t.in_preview,
            "enabled_bit_byte_offset": t.tkhd_flags_offset + 2,
            "handler": fourcc_text(t.handler) if t.handler else None,
            "sample_count": t.sample_count,
            "chunks": [list(c) for c in t.chunks],
        } for t in model.tracks],
        "references": [r.as_dict() for r in model.references],
        "derivation_edges": [{"type": fourcc_text(e.ref_type), "from": e.from_item, "to": e.to_item}
                             for e in result.analysis.graph.edges],
        "data_references": [d.as_dict() for d in model.data_references]
        + [d.as_dict() for t in model.tracks for d in t.data_references],
        "findings": [f.as_dict() for f in result.analysis.findings],
        "coverage": {
            "file_length": result.coverage.file_len,
            "unreferenced_bytes": result.coverage.unreferenced_bytes,
            "regions": [{"start": r.start, "end": r.end, "length": r.end - r.start}
                        for r in result.coverage.unreferenced],
        },
        "mint": [m.as_dict() for m in result.mint],
        "diagnostics": [d.as_dict() for d in model.diagnostics],
        "change_log": change_log.as_dict() if change_log is not None else None,
    }
    return _plain(report)


def render_json(report: dict) -> str:
    """Canonical form: insertion-ordered keys, two-space indent, trailing newline."""
    return json.dumps(report, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def roundtrip(text: str) -> str:
    return render_json(json.loads(text))
