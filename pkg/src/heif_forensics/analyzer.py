"""Forensic findings derived from a :class:`~heif_forensics.semantics.FileModel`.

Everything here is a pure function of its inputs: the same model, coverage
map and filename always give the same findings in the same order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum, IntEnum

from .boxes import CoverageMap
from .semantics import (
    CODED_IMAGE_TYPES,
    BRAND_KINDS,
    Brands,
    FileModel,
    HeifKind,
    ItemRecord,
    fourcc_text,
)

DEFAULT_SLACK_THRESHOLD = 8


class Severity(IntEnum):
    INFO = 0
    NOTICE = 1
    WARNING = 2
    ALERT = 3

    @classmethod
    def parse(cls, text: str) -> "Severity":
        return cls[text.strip().upper()]

    def __str__(self) -> str:
        return self.name.lower()


class ItemRole(str, Enum):
    MASTER = "Master"
    DERIVED_GRID = "DerivedGrid"
    DERIVED_OVERLAY = "DerivedOverlay"
    DERIVED_IDENTITY = "DerivedIdentity"
    THUMBNAIL = "Thumbnail"
    AUXILIARY = "Auxiliary"
    METADATA = "Metadata"
    UNKNOWN = "Unknown"

    @property
    def displayable(self) -> bool:
        return self in (ItemRole.MASTER, ItemRole.DERIVED_GRID, ItemRole.DERIVED_OVERLAY,
                        ItemRole.DERIVED_IDENTITY, ItemRole.THUMBNAIL)


_DERIVED_ROLES = {
    b"grid": ItemRole.DERIVED_GRID,
    b"iovl": ItemRole.DERIVED_OVERLAY,
    b"iden": ItemRole.DERIVED_IDENTITY,
}


@dataclass(frozen=True)
class RoleAssignment:
    item_id: int
    role: ItemRole
    primary: bool = False
    metadata_kind: str | None = None

    @property
    def label(self) -> str:
        base = self.role.value
        if self.metadata_kind:
            base += f"({self.metadata_kind})"
        return base + ("+Primary" if self.primary else "")


@dataclass(frozen=True)
class Edge:
    ref_type: bytes
    from_item: int
    to_item: int


@dataclass(frozen=True)
class DerivationGraph:
    nodes: tuple[int, ...]
    edges: tuple[Edge, ...]

    def sources(self, item_id: int, ref_type: bytes = b"dimg") -> list[int]:
        return [e.to_item for e in self.edges if e.from_item == item_id and e.ref_type == ref_type]


@dataclass(frozen=True)
class Finding:
    kind: str
    severity: Severity
    message: str
    offset: int | None = None
    length: int | None = None
    item_id: int | None = None
    track_id: int | None = None
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.offset is None and self.item_id is None and self.track_id is None:
            raise ValueError(f"finding {self.kind} has no locator")

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "severity": str(self.severity),
            "offset": self.offset,
            "length": self.length,
            "item_id": self.item_id,
            "track_id": self.track_id,
            "message": self.message,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class Analysis:
    roles: dict[int, RoleAssignment]
    graph: DerivationGraph
    findings: tuple[Finding, ...]

    def max_severity(self) -> Severity | None:
        return max((f.severity for f in self.findings), default=None)

    def of_kind(self, kind: str) -> list[Finding]:
        return [f for f in self.findings if f.kind == kind]


# -- roles -------------------------------------------------------------------

def _metadata_kind(item: ItemRecord) -> str | None:
    t = item.item_type
    if t == b"Exif":
        return "Exif"
    if t == b"mime" or (t is None and item.content_type):
        ct = (item.content_type or "").lower()
        return "XMP" if "xmp" in ct else "mime"
    if t == b"uri ":
        return "uri"
    if t == b"mint":
        return "mint"
    return None


def classify_items(model: FileModel) -> tuple[dict[int, RoleAssignment], DerivationGraph, list[Finding]]:
    """Assign one role per item and build the reference graph."""
    edges = tuple(Edge(r.ref_type, r.from_item, t) for r in model.references for t in r.to_items)
    graph = DerivationGraph(tuple(i.item_id for i in model.items), edges)
    sources_of = {(e.ref_type, e.from_item) for e in edges}
    roles: dict[int, RoleAssignment] = {}
    findings: list[Finding] = []
    for item in model.items:
        iid = item.item_id
        primary = iid == model.primary_item
        meta_kind = _metadata_kind(item)
        if item.item_type in _DERIVED_ROLES:
            role = _DERIVED_ROLES[item.item_type]
        elif meta_kind is not None:
            role = ItemRole.METADATA
        elif item.item_type in CODED_IMAGE_TYPES:
            if (b"thmb", iid) in sources_of:
                role = ItemRole.THUMBNAIL
            elif (b"auxl", iid) in sources_of or item.property(b"auxC") is not None:
                role = ItemRole.AUXILIARY
            else:
                role = ItemRole.MASTER
        elif (b"cdsc", iid) in sources_of:
            role, meta_kind = ItemRole.METADATA, "other"
        else:
            role = ItemRole.UNKNOWN
            findings.append(Finding(
                "UNKNOWN_ITEM_ROLE", Severity.NOTICE,
                f"item {iid} of type {item.type!r} has no recognised role",
                offset=item.infe_offset, item_id=iid,
                detail={"item_type": item.type, "name": item.name},
            ))
        roles[iid] = RoleAssignment(iid, role, primary, meta_kind)
    return roles, graph, findings


# -- hidden content ----------------------------------------------------------

def _expected_tiles(model: FileModel, graph: DerivationGraph) -> dict[int, list[int]]:
    """Visible grids whose every input is a hidden hvc1 tile -> those tiles.

    The grid descriptor must be readable and declare exactly as many cells as
    there are inputs. The primary item counts as visible even with its hidden
    bit set: viewers ignore that bit on the cover image.
    """
    out: dict[int, list[int]] = {}
    for item in model.items:
        if item.item_type != b"grid":
            continue
        if item.hidden and item.item_id != model.primary_item:
            continue
        tiles = graph.sources(item.item_id)
        if not tiles or item.grid is None or item.grid.tile_count != len(tiles):
            continue
        recs = [model.item(t) for t in tiles]
        if all(r is not None and r.hidden and r.item_type == b"hvc1" for r in recs):
            out[item.item_id] = list(dict.fromkeys(tiles))
    return out


def find_hidden_content(model: FileModel, graph: DerivationGraph | None = None,
                        roles: dict[int, RoleAssignment] | None = None) -> list[Finding]:
    if graph is None or roles is None:
        roles, graph, _ = classify_items(model)
    findings: list[Finding] = []
    grids = _expected_tiles(model, graph)
    expected = {t for tiles in grids.values() for t in tiles}

    for item in model.items:
        if not item.hidden or item.item_id in expected:
            continue
        role = roles.get(item.item_id)
        findings.append(Finding(
            "HIDDEN_ITEM", Severity.ALERT,
            f"item {item.item_id} ({item.type or 'untyped'} {item.name!r}) is flagged hidden",
            offset=item.infe_flags_offset, length=3, item_id=item.item_id,
            detail={
                "item_type": item.type,
                "name": item.name,
                "role": role.label if role else None,
                "infe_offset": item.infe_offset,
                "flags": item.infe_flags,
                "hidden_bit_byte_offset": item.infe_flags_offset + 2,
            },
        ))
        if item.item_id == model.primary_item:
            findings.append(Finding(
                "HIDDEN_COVER", Severity.NOTICE,
                f"primary item {item.item_id} is flagged hidden, which the standard does not allow",
                offset=item.infe_flags_offset, length=3, item_id=item.item_id,
                detail={"infe_offset": item.infe_offset, "flags": item.infe_flags},
            ))

    for grid_id, tiles in grids.items():
        recs = [model.item(t) for t in tiles]
        findings.append(Finding(
            "HIDDEN_TILES_EXPECTED", Severity.INFO,
            f"{len(tiles)} hidden hvc1 tiles feed visible grid item {grid_id}",
            offset=min(r.infe_offset for r in recs), item_id=grid_id,
            detail={"grid_item": grid_id, "tiles": tiles,
                    "hidden_bit_byte_offsets": [r.infe_flags_offset + 2 for r in recs]},
        ))

    for track in model.tracks:
        if not track.enabled:
            findings.append(Finding(
                "DISABLED_TRACK", Severity.WARNING,
                f"track {track.track_id} is disabled (tkhd flags 0x{track.tkhd_flags:06x})",
                offset=track.tkhd_flags_offset, length=3, track_id=track.track_id,
                detail={"flags": track.tkhd_flags, "in_presentation": track.in_presentation,
                        "in_preview": track.in_preview,
                        "enabled_bit_byte_offset": track.tkhd_flags_offset + 2},
            ))
    return findings


# -- external data -----------------------------------------------------------

def find_external_references(model: FileModel) -> list[Finding]:
    findings = []
    entries = list(model.data_references) + [d for t in model.tracks for d in t.data_references]
    for entry in entries:
        if entry.self_contained:
            continue
        users = []
        if entry.scope == "meta":
            users = [i.item_id for i in model.items
                     if i.location is not None and i.location.data_reference_index == entry.index]
            severity = Severity.ALERT if users else Severity.NOTICE
        else:
            severity = Severity.ALERT
        shown = entry.location if entry.scheme == "url" else (entry.name or entry.location)
        msg = f"{entry.scope} dref entry {entry.index} points outside the file: {shown}"
        if entry.scope == "meta" and not users:
            msg += " (declared, no item uses it)"
        track_id = int(entry.scope.split(":")[1]) if entry.scope.startswith("track:") else None
        findings.append(Finding(
            "EXTERNAL_DATA_REF", severity, msg,
            offset=entry.offset, track_id=track_id, item_id=users[0] if len(users) == 1 else None,
            detail={"scheme": entry.scheme, "location": entry.location, "name": entry.name,
                    "index": entry.index, "scope": entry.scope, "items": users},
        ))
    return findings


# -- extension ---------------------------------------------------------------

STILL_EXTENSIONS = {".heic", ".heif", ".hif", ".avci"}
SEQUENCE_EXTENSIONS = {".heics", ".heifs", ".avcs"}
HEIF_EXTENSIONS = STILL_EXTENSIONS | SEQUENCE_EXTENSIONS


def check_extension_consistency(filename: str | None, kind: HeifKind,
                                brands: Brands | None = None) -> list[Finding]:
    """Compare the file extension with what the brands say.

    ``kind`` alone decides unless ``brands`` is given, in which case any HEIF
    brand present (major or compatible) may justify the extension; mixed
    still+sequence files legitimately carry either.
    """
    if not filename:
        return []
    ext = os.path.splitext(filename)[1].lower()
    kinds = {kind}
    if brands is not None:
        kinds |= {BRAND_KINDS[b] for b in brands.all() if b in BRAND_KINDS}
    kinds.discard(HeifKind.NOT_HEIF)
    has_still = any(not k.is_sequence for k in kinds)
    has_seq = any(k.is_sequence for k in kinds)

    problem = None
    if not kinds:
        if ext in HEIF_EXTENSIONS:
            problem = f"extension {ext!r} claims HEIF but no HEIF brand was found"
    elif ext not in HEIF_EXTENSIONS:
        problem = f"HEIF content ({kind.value}) behind extension {ext or '(none)'!r}"
    elif ext in STILL_EXTENSIONS and not has_still:
        problem = f"still-image extension {ext!r} on image-sequence content ({kind.value})"
    elif ext in SEQUENCE_EXTENSIONS and not has_seq:
        problem = f"sequence extension {ext!r} on still-image content ({kind.value})"
    if problem is None:
        return []
    return [Finding("EXT_MISMATCH", Severity.WARNING, problem, offset=0,
                    detail={"filename": os.path.basename(filename), "extension": ext,
                            "kind": kind.value})]


# -- unreferenced bytes ------------------------------------------------------

def _container_path(model: FileModel, offset: int) -> str:
    path = []
    nodes = model.tree.boxes
    while True:
        hit = next((n for n in nodes if n.offset <= offset < n.end), None)
        if hit is None:
            break
        path.append(hit.header.type)
        nodes = hit.children
    return "/".join(path)


def find_unreferenced_regions(model: FileModel, coverage: CoverageMap, data: bytes | None = None,
                              threshold: int = DEFAULT_SLACK_THRESHOLD) -> list[Finding]:
    # A box clamped to the end of the file vouches for nothing, so trailing
    # data starts after the last intact top-level box.
    last_box_end = max((b.end for b in model.tree.boxes if not b.truncated), default=0)
    findings = []
    for region in coverage.unreferenced:
        trailing = region.start >= last_box_end
        if region.length < threshold and not trailing:
            continue
        where = "(no box)" if trailing else _container_path(model, region.start) or "(no box)"
        preview = bytes(data[region.start:region.start + 16]).hex(" ") if data is not None else None
        what = "after the last box" if trailing else f"inside {where}"
        findings.append(Finding(
            "SLACK_REGION", Severity.WARNING,
            f"{region.length} unreferenced bytes at {region.start} {what}",
            offset=region.start, length=region.length,
            detail={"container": where, "trailing": trailing, "hex_preview": preview},
        ))
    return findings


# -- structure ---------------------------------------------------------------

def verify_structure_expectations(model: FileModel,
                                  roles: dict[int, RoleAssignment] | None = None) -> list[Finding]:
    if roles is None:
        roles, _, _ = classify_items(model)
    findings = []
    if model.kind.is_heif and model.has_meta and model.handler != b"pict":
        meta = model.tree.find(b"meta")
        findings.append(Finding(
            "NON_PICT_HANDLER", Severity.NOTICE,
            f"meta handler is {fourcc_text(model.handler) if model.handler else 'missing'}, expected 'pict'",
            offset=meta.offset if meta else 0,
            detail={"handler": fourcc_text(model.handler) if model.handler else None},
        ))
    for track in model.tracks:
        if model.kind.is_heif and track.handler not in (b"pict", None):
            findings.append(Finding(
                "NON_PICT_HANDLER", Severity.NOTICE,
                f"track {track.track_id} handler is {fourcc_text(track.handler)}, expected 'pict'",
                offset=track.trak_offset, track_id=track.track_id,
                detail={"handler": fourcc_text(track.handler)},
            ))

    displayable = [i for i, r in roles.items() if r.role.displayable]
    if model.primary_item is None and len(displayable) > 1:
        findings.append(Finding(
            "MISSING_PRIMARY", Severity.NOTICE,
            f"no pitm box but {len(displayable)} displayable items",
            offset=model.tree.find(b"meta").offset if model.tree.find(b"meta") else 0,
            detail={"displayable": displayable},
        ))

    ids = {i.item_id for i in model.items}
    if model.primary_item is not None and model.primary_item not in ids:
        findings.append(Finding(
            "DANGLING_REF", Severity.WARNING,
            f"pitm names item {model.primary_item}, which is not declared",
            offset=model.pitm_offset, item_id=model.primary_item,
            detail={"source": "pitm", "missing": [model.primary_item]},
        ))
    for ref in model.references:
        missing = [i for i in (ref.from_item, *ref.to_items) if i not in ids]
        if missing:
            findings.append(Finding(
                "DANGLING_REF", Severity.NOTICE,
                f"iref '{fourcc_text(ref.ref_type)}' from {ref.from_item} names undeclared item(s) {missing}",
                offset=ref.offset, item_id=ref.from_item,
                detail={"source": "iref", "ref_type": fourcc_text(ref.ref_type), "missing": missing},
            ))

    for item in model.items:
        if item.infe_version > 3:
            findings.append(Finding(
                "INFE_VERSION", Severity.NOTICE,
                f"item {item.item_id} uses infe version {item.infe_version}",
                offset=item.infe_offset, item_id=item.item_id,
                detail={"version": item.infe_version},
            ))
    for diag in model.diagnostics:
        if diag.code == "DEPTH_LIMIT":
            findings.append(Finding("DEPTH_LIMIT", Severity.NOTICE, diag.message, offset=diag.offset))
    return findings


# Diagnostics surfaced as their own findings; the rest are covered above.
_DIAGNOSTIC_SEVERITY = {
    "EXTENT_OUT_OF_FILE": Severity.WARNING,
    "SIZE_OVERFLOW": Severity.WARNING,
    "TRUNCATED_BOX": Severity.WARNING,
    "INVALID_BOX_SIZE": Severity.WARNING,
    "TRUNCATED_ENTRY": Severity.WARNING,
    "BAD_FIELD_WIDTH": Severity.WARNING,
    "NO_BOX": Severity.WARNING,
}
_HANDLED_ELSEWHERE = {"DEPTH_LIMIT", "NON_PICT_HANDLER", "INFE_VERSION"}


def diagnostic_findings(model: FileModel) -> list[Finding]:
    out = []
    for diag in model.diagnostics:
        if diag.code in _HANDLED_ELSEWHERE:
            continue
        offset = diag.offset if diag.offset >= 0 else None
        if offset is None and diag.item_id is None:
            offset = 0
        out.append(Finding(diag.code, _DIAGNOSTIC_SEVERITY.get(diag.code, Severity.NOTICE),
                           diag.message, offset=offset, item_id=diag.item_id))
    return out


def analyze(model: FileModel, coverage: CoverageMap, data: bytes | None = None,
            filename: str | None = None,
            slack_threshold: int = DEFAULT_SLACK_THRESHOLD) -> Analysis:
    roles, graph, role_findings = classify_items(model)
    findings: list[Finding] = []
    findings += verify_structure_expectations(model, roles)
    findings += role_findings
    findings += find_hidden_content(model, graph, roles)
    findings += find_external_references(model)
    findings += check_extension_consistency(filename, model.kind, model.brands)
    findings += find_unreferenced_regions(model, coverage, data, slack_threshold)
    findings += diagnostic_findings(model)
    return Analysis(roles, graph, tuple(findings))


def coverage_for(model: FileModel) -> CoverageMap:
    from .boxes import compute_coverage
    return compute_coverage(model.tree, model.item_extent_spans(),
                            [(s, e, "sample") for s, e in model.track_chunk_spans()])
