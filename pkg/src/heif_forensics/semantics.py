"""Interpretation of a box tree as a HEIF file.

:func:`build_file_model` is the entry point. It never raises on damaged
input (unless ``strict=True`` and there is no ``ftyp``); everything odd ends up
in ``FileModel.diagnostics``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable

from .boxes import BoxNode, BoxTree, Diagnostic, SizeOverflow, BoxError, fourcc_text, parse_box_header


class SemanticError(ValueError):
    pass


class TruncatedEntry(SemanticError):
    pass


class BadFieldWidth(SemanticError):
    pass


class MissingFtyp(SemanticError):
    pass


class ExternalData(SemanticError):
    """Item data lives outside the file (non-self-contained dref entry)."""


class ExtentOutOfFile(SemanticError):
    pass


class UnresolvedExtent(SemanticError):
    pass


class UnknownItem(SemanticError):
    pass


class HeifKind(str, Enum):
    STILL_ANY_CODEC = "StillAnyCodec"
    SEQUENCE_ANY_CODEC = "SequenceAnyCodec"
    STILL_HEVC = "StillHEVC"
    SEQUENCE_HEVC = "SequenceHEVC"
    NOT_HEIF = "NotHeif"

    @property
    def is_heif(self) -> bool:
        return self is not HeifKind.NOT_HEIF

    @property
    def is_sequence(self) -> bool:
        return self in (HeifKind.SEQUENCE_ANY_CODEC, HeifKind.SEQUENCE_HEVC)


BRAND_KINDS: dict[bytes, HeifKind] = {
    b"mif1": HeifKind.STILL_ANY_CODEC,
    b"msf1": HeifKind.SEQUENCE_ANY_CODEC,
    b"heic": HeifKind.STILL_HEVC,
    b"heix": HeifKind.STILL_HEVC,
    b"hevc": HeifKind.SEQUENCE_HEVC,
    b"hevx": HeifKind.SEQUENCE_HEVC,
    # multi-layer HEVC and H.264 HEIF brands
    b"heim": HeifKind.STILL_HEVC,
    b"heis": HeifKind.STILL_HEVC,
    b"hevm": HeifKind.SEQUENCE_HEVC,
    b"hevs": HeifKind.SEQUENCE_HEVC,
    b"avci": HeifKind.STILL_ANY_CODEC,
    b"avcs": HeifKind.SEQUENCE_ANY_CODEC,
}

CODED_IMAGE_TYPES = frozenset({b"hvc1", b"hev1", b"lhv1", b"avc1", b"av01", b"jpeg", b"j2k1", b"unci", b"vvc1"})
DERIVED_TYPES = frozenset({b"grid", b"iovl", b"iden"})

CONSTRUCTION_FILE = 0
CONSTRUCTION_IDAT = 1
CONSTRUCTION_ITEM = 2


@dataclass(frozen=True)
class Brands:
    major: bytes
    minor_version: int
    compatible: tuple[bytes, ...]

    def all(self) -> tuple[bytes, ...]:
        return (self.major,) + self.compatible

    def as_dict(self) -> dict:
        return {
            "major": fourcc_text(self.major),
            "minor_version": self.minor_version,
            "compatible": [fourcc_text(b) for b in self.compatible],
        }


def classify_brands(brands: Brands | None) -> HeifKind:
    if brands is None:
        return HeifKind.NOT_HEIF
    if brands.major in BRAND_KINDS:
        return BRAND_KINDS[brands.major]
    for brand in brands.compatible:
        if brand in BRAND_KINDS:
            return BRAND_KINDS[brand]
    return HeifKind.NOT_HEIF


class _Reader:
    """Bounded big-endian cursor; every overrun raises TruncatedEntry."""

    def __init__(self, data: bytes, pos: int, end: int, what: str = "entry"):
        self.data = data
        self.pos = pos
        self.end = min(end, len(data))
        self.what = what

    def remaining(self) -> int:
        return self.end - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise TruncatedEntry(f"{self.what}: need {n} bytes at {self.pos}, {self.remaining()} left")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def uint(self, n: int) -> int:
        if n == 0:
            return 0
        return int.from_bytes(self.take(n), "big")

    def u8(self) -> int:
        return self.uint(1)

    def u16(self) -> int:
        return self.uint(2)

    def u32(self) -> int:
        return self.uint(4)

    def s32(self) -> int:
        return struct.unpack(">i", self.take(4))[0]

    def fourcc(self) -> bytes:
        return self.take(4)

    def cstring(self) -> str:
        """Null-terminated UTF-8; an unterminated string runs to the end."""
        if self.pos >= self.end:
            return ""
        nul = self.data.find(b"\x00", self.pos, self.end)
        stop = self.end if nul < 0 else nul
        raw = bytes(self.data[self.pos:stop])
        self.pos = stop + 1 if nul >= 0 else stop
        return raw.decode("utf-8", errors="backslashreplace")


@dataclass(frozen=True)
class Extent:
    construction_method: int
    offset: int            # base_offset + extent_offset, relative to method's origin
    length: int
    index: int = 0
    spans: tuple[tuple[int, int], ...] = ()   # absolute file ranges, when resolved
    external: bool = False
    in_file: bool = True

    @property
    def byte_count(self) -> int:
        return sum(e - s for s, e in self.spans)

    def as_dict(self) -> dict:
        return {
            "construction_method": self.construction_method,
            "offset": self.offset,
            "length": self.length,
            "index": self.index,
            "spans": [list(s) for s in self.spans],
            "external": self.external,
            "in_file": self.in_file,
        }


@dataclass(frozen=True)
class ItemLocation:
    item_id: int
    construction_method: int
    data_reference_index: int
    base_offset: int
    extents: tuple[Extent, ...]


@dataclass(frozen=True)
class ItemProperty:
    fourcc: bytes
    kind: str
    essential: bool
    values: dict = field(default_factory=dict)
    raw: bytes = b""
    index: int = 0
    offset: int = -1

    def as_dict(self) -> dict:
        return {
            "type": fourcc_text(self.fourcc),
            "kind": self.kind,
            "essential": self.essential,
            "index": self.index,
            "offset": self.offset,
            "values": {k: _jsonable(v) for k, v in self.values.items()},
        }


def _jsonable(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, bytes):
        return v.hex()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass(frozen=True)
class GridLayout:
    rows: int
    columns: int
    output_width: int
    output_height: int

    @property
    def tile_count(self) -> int:
        return self.rows * self.columns

    def as_dict(self) -> dict:
        return {"rows": self.rows, "columns": self.columns,
                "output_width": self.output_width, "output_height": self.output_height}


def parse_grid_descriptor(payload: bytes) -> GridLayout:
    r = _Reader(payload, 0, len(payload), "grid descriptor")
    version = r.u8()
    if version != 0:
        raise BadFieldWidth(f"grid descriptor version {version}")
    flags = r.u8()
    rows, cols = r.u8() + 1, r.u8() + 1
    width = 4 if flags & 1 else 2
    return GridLayout(rows, cols, r.uint(width), r.uint(width))


@dataclass(frozen=True)
class ItemRecord:
    item_id: int
    item_type: bytes | None
    name: str
    hidden: bool
    infe_version: int
    infe_flags: int
    infe_offset: int
    infe_flags_offset: int
    protection_index: int = 0
    content_type: str | None = None
    content_encoding: str | None = None
    uri_type: str | None = None
    location: ItemLocation | None = None
    properties: tuple[ItemProperty, ...] = ()
    grid: GridLayout | None = None

    @property
    def type(self) -> str:
        return fourcc_text(self.item_type) if self.item_type else ""

    @property
    def extents(self) -> tuple[Extent, ...]:
        return self.location.extents if self.location else ()

    def property(self, fourcc: bytes) -> ItemProperty | None:
        return next((p for p in self.properties if p.fourcc == fourcc), None)


@dataclass(frozen=True)
class ItemReference:
    ref_type: bytes
    from_item: int
    to_items: tuple[int, ...]
    offset: int = -1

    def as_dict(self) -> dict:
        return {"type": fourcc_text(self.ref_type), "from": self.from_item,
                "to": list(self.to_items), "offset": self.offset}


@dataclass(frozen=True)
class DataReference:
    index: int
    scheme: str
    self_contained: bool
    location: str
    flags: int = 0
    name: str = ""
    offset: int = -1
    scope: str = "meta"

    def as_dict(self) -> dict:
        return {"index": self.index, "scheme": self.scheme, "self_contained": self.self_contained,
                "location": self.location, "name": self.name, "flags": self.flags,
                "offset": self.offset, "scope": self.scope}


@dataclass(frozen=True)
class TrackRecord:
    track_id: int
    tkhd_flags: int
    tkhd_flags_offset: int
    tkhd_version: int = 0
    handler: bytes | None = None
    data_references: tuple[DataReference, ...] = ()
    chunks: tuple[tuple[int, int], ...] = ()
    sample_count: int = 0
    trak_offset: int = -1

    @property
    def enabled(self) -> bool:
        return bool(self.tkhd_flags & 0x1)

    @property
    def in_presentation(self) -> bool:
        return bool(self.tkhd_flags & 0x2)

    @property
    def in_preview(self) -> bool:
        return bool(self.tkhd_flags & 0x4)


@dataclass(frozen=True)
class FileModel:
    brands: Brands | None
    kind: HeifKind
    handler: bytes | None
    primary_item: int | None
    items: tuple[ItemRecord, ...]
    references: tuple[ItemReference, ...]
    data_references: tuple[DataReference, ...]
    tracks: tuple[TrackRecord, ...]
    idat_span: tuple[int, int] | None
    diagnostics: tuple[Diagnostic, ...]
    file_len: int
    tree: BoxTree
    has_meta: bool = False
    pitm_offset: int = -1

    def item(self, item_id: int) -> ItemRecord | None:
        for it in self.items:
            if it.item_id == item_id:
                return it
        return None

    def references_from(self, item_id: int, ref_type: bytes | None = None) -> list[ItemReference]:
        return [r for r in self.references
                if r.from_item == item_id and (ref_type is None or r.ref_type == ref_type)]

    def item_extent_spans(self) -> list[tuple[int, int]]:
        out = []
        for it in self.items:
            for ext in it.extents:
                out.extend(ext.spans)
        return out

    def track_chunk_spans(self) -> list[tuple[int, int]]:
        return [c for t in self.tracks for c in t.chunks]


# -- detection ---------------------------------------------------------------

def parse_ftyp(data: bytes, start: int, end: int) -> Brands:
    r = _Reader(data, start, end, "ftyp")
    major = r.fourcc()
    minor = r.u32()
    compat = []
    while r.remaining() >= 4:
        compat.append(r.fourcc())
    return Brands(major, minor, tuple(compat))


def detect_heif(data: bytes) -> tuple[HeifKind, Brands | None]:
    """Classify by the brands of the first box. Reads nothing past it."""
    try:
        header = parse_box_header(data, 0, len(data))
    except SizeOverflow as exc:
        header = exc.header
    except BoxError:
        return HeifKind.NOT_HEIF, None
    if header.fourcc != b"ftyp":
        return HeifKind.NOT_HEIF, None
    try:
        brands = parse_ftyp(data, header.payload_start, min(header.payload_end, len(data)))
    except TruncatedEntry:
        return HeifKind.NOT_HEIF, None
    return classify_brands(brands), brands


# -- per-box parsers ---------------------------------------------------------

def parse_hdlr(data: bytes, node: BoxNode) -> tuple[bytes, str]:
    r = _Reader(data, node.body_start, node.end, "hdlr")
    r.u32()  # pre_defined
    handler = r.fourcc()
    name = ""
    if r.remaining() >= 12:
        r.take(12)
        name = r.cstring()
    return handler, name


def parse_pitm(data: bytes, node: BoxNode) -> int:
    r = _Reader(data, node.body_start, node.end, "pitm")
    return r.u16() if node.full.version == 0 else r.u32()


def parse_infe(data: bytes, node: BoxNode) -> ItemRecord:
    """Decode one ``infe`` box. Records where its flags live for the rewriter."""
    if node.full is None:
        raise TruncatedEntry(f"infe at {node.offset} has no version/flags")
    version, flags = node.full.version, node.full.flags
    r = _Reader(data, node.body_start, node.end, "infe")
    content_type = content_encoding = uri_type = None
    item_type = None
    if version in (0, 1):
        item_id = r.u16()
        protection = r.u16()
        name = r.cstring()
        content_type = r.cstring()
        if r.remaining() > 0:
            content_encoding = r.cstring()
    else:
        item_id = r.u16() if version == 2 else r.u32()
        protection = r.u16()
        item_type = r.fourcc()
        name = r.cstring()
        if item_type == b"mime":
            content_type = r.cstring()
            if r.remaining() > 0:
                content_encoding = r.cstring()
        elif item_type == b"uri ":
            uri_type = r.cstring()
    return ItemRecord(
        item_id=item_id,
        item_type=item_type,
        name=name,
        hidden=bool(flags & 0x1),
        infe_version=version,
        infe_flags=flags,
        infe_offset=node.offset,
        infe_flags_offset=node.header.payload_start + 1,
        protection_index=protection,
        content_type=content_type,
        content_encoding=content_encoding,
        uri_type=uri_type,
    )


def parse_iloc(data: bytes, node: BoxNode) -> list[ItemLocation]:
    """Decode ``iloc`` into unresolved locations (spans filled in later)."""
    version = node.full.version if node.full else 0
    r = _Reader(data, node.body_start, node.end, "iloc")
    b = r.u8()
    offset_size, length_size = b >> 4, b & 0xF
    b = r.u8()
    base_offset_size = b >> 4
    index_size = b & 0xF if version in (1, 2) else 0
    for name, width in (("offset_size", offset_size), ("length_size", length_size),
                        ("base_offset_size", base_offset_size), ("index_size", index_size)):
        if width not in (0, 4, 8):
            raise BadFieldWidth(f"iloc {name}={width} at {node.offset}")
    count = r.u16() if version < 2 else r.u32()
    out = []
    for _ in range(count):
        item_id = r.u16() if version < 2 else r.u32()
        method = r.u16() & 0xF if version in (1, 2) else 0
        dref_index = r.u16()
        base = r.uint(base_offset_size)
        n_ext = r.u16()
        extents = []
        for _ in range(n_ext):
            index = r.uint(index_size) if index_size else 0
            off = r.uint(offset_size)
            length = r.uint(length_size)
            extents.append(Extent(method, base + off, length, index))
        out.append(ItemLocation(item_id, method, dref_index, base, tuple(extents)))
    return out


def parse_iref(data: bytes, node: BoxNode) -> list[ItemReference]:
    version = node.full.version if node.full else 0
    width = 2 if version == 0 else 4
    refs = []
    for child in node.children:
        r = _Reader(data, child.header.payload_start, child.end, f"iref/{child.header.type}")
        from_id = r.uint(width)
        n = r.u16()
        to = tuple(r.uint(width) for _ in range(n))
        refs.append(ItemReference(child.type, from_id, to, child.offset))
    return refs


def parse_dref(data: bytes, node: BoxNode, scope: str = "meta",
               diags: list[Diagnostic] | None = None) -> list[DataReference]:
    """Decode the url/urn entries of a ``dref`` box (not lexed as a container)."""
    diags = diags if diags is not None else []
    r = _Reader(data, node.body_start, node.end, "dref")
    declared = r.u32()
    entries = []
    pos = r.pos
    index = 0
    while pos + 8 <= node.end and index < declared:
        try:
            h = parse_box_header(data, pos, node.end)
        except BoxError as exc:
            raise TruncatedEntry(f"dref entry at {pos}: {exc}") from exc
        index += 1
        if h.payload_start + 4 > h.payload_end:
            raise TruncatedEntry(f"dref entry at {pos} too short")
        flags = int.from_bytes(data[h.payload_start + 1:h.payload_start + 4], "big")
        er = _Reader(data, h.payload_start + 4, h.payload_end, "dref entry")
        self_contained = bool(flags & 0x1)
        name = location = ""
        if h.fourcc == b"url ":
            scheme = "url"
            location = er.cstring()
        elif h.fourcc == b"urn ":
            scheme = "urn"
            name = er.cstring()
            location = er.cstring()
        else:
            scheme = fourcc_text(h.fourcc)
            location = er.take(er.remaining()).hex()
        if self_contained and location:
            diags.append(Diagnostic("SELF_CONTAINED_WITH_LOCATION", h.offset,
                                    f"self-contained {scheme} entry carries location {location!r}"))
        entries.append(DataReference(index, scheme, self_contained, location, flags, name, h.offset, scope))
        pos = h.end
    if declared == 0 or not entries:
        diags.append(Diagnostic("EMPTY_DREF", node.offset, "dref declares no entries"))
    elif len(entries) < declared:
        diags.append(Diagnostic("DREF_SHORT", node.offset,
                                f"dref declares {declared} entries, {len(entries)} present"))
    return entries


def parse_tkhd(data: bytes, node: BoxNode) -> TrackRecord:
    if node.full is None:
        raise TruncatedEntry(f"tkhd at {node.offset} has no version/flags")
    r = _Reader(data, node.body_start, node.end, "tkhd")
    if node.full.version == 1:
        r.take(16)
    else:
        r.take(8)
    track_id = r.u32()
    return TrackRecord(track_id=track_id, tkhd_flags=node.full.flags,
                       tkhd_flags_offset=node.header.payload_start + 1,
                       tkhd_version=node.full.version)


def _parse_property(data: bytes, node: BoxNode) -> tuple[str, dict]:
    t = node.type
    start = node.header.payload_start
    end = node.end
    if t == b"ispe":
        r = _Reader(data, start + 4, end, "ispe")
        return "ispe", {"width": r.u32(), "height": r.u32()}
    if t == b"irot":
        r = _Reader(data, start, end, "irot")
        return "irot", {"angle": (r.u8() & 0x3) * 90}
    if t == b"imir":
        r = _Reader(data, start, end, "imir")
        return "imir", {"axis": r.u8() & 0x1}
    if t == b"clap":
        r = _Reader(data, start, end, "clap")
        wn, wd, hn, hd = r.u32(), r.u32(), r.u32(), r.u32()
        hon, hod, von, vod = r.s32(), r.u32(), r.s32(), r.u32()

        def frac(n, d):
            return Fraction(n, d) if d else None
        return "clap", {"width": frac(wn, wd), "height": frac(hn, hd),
                        "horiz_off": frac(hon, hod), "vert_off": frac(von, vod)}
    if t == b"pixi":
        r = _Reader(data, start + 4, end, "pixi")
        n = r.u8()
        return "pixi", {"bits_per_channel": [r.u8() for _ in range(n)]}
    if t == b"colr":
        r = _Reader(data, start, end, "colr")
        colour_type = r.fourcc()
        return "colr", {"colour_type": fourcc_text(colour_type), "profile": r.take(r.remaining())}
    if t == b"auxC":
        r = _Reader(data, start + 4, end, "auxC")
        aux_type = r.cstring()
        return "auxC", {"aux_type": aux_type, "subtype": r.take(r.remaining())}
    return "unknown", {}


def parse_properties(data: bytes, iprp: BoxNode,
                     diags: list[Diagnostic] | None = None) -> dict[int, list[ItemProperty]]:
    """Map item_id -> properties in association order."""
    diags = diags if diags is not None else []
    ipco = iprp.find(b"ipco")
    pool = list(ipco.children) if ipco else []
    out: dict[int, list[ItemProperty]] = {}
    for ipma in iprp.find_all(b"ipma"):
        version = ipma.full.version if ipma.full else 0
        flags = ipma.full.flags if ipma.full else 0
        r = _Reader(data, ipma.body_start, ipma.end, "ipma")
        try:
            count = r.u32()
            for _ in range(count):
                item_id = r.u16() if version < 1 else r.u32()
                n = r.u8()
                for _ in range(n):
                    if flags & 1:
                        v = r.u16()
                        essential, index = bool(v >> 15), v & 0x7FFF
                    else:
                        v = r.u8()
                        essential, index = bool(v >> 7), v & 0x7F
                    out.setdefault(item_id, []).append(
                        _property_at(data, pool, index, essential, diags, ipma.offset))
        except TruncatedEntry as exc:
            diags.append(Diagnostic("TRUNCATED_ENTRY", ipma.offset, str(exc)))
    return out


def _property_at(data, pool, index, essential, diags, where) -> ItemProperty:
    if index == 0 or index > len(pool):
        diags.append(Diagnostic("BAD_PROPERTY_INDEX", where,
                                f"property index {index} outside ipco pool of {len(pool)}"))
        return ItemProperty(b"\x00\x00\x00\x00", "unknown", essential, {}, b"", index, -1)
    node = pool[index - 1]
    raw = bytes(data[node.header.payload_start:node.end])
    try:
        kind, values = _parse_property(data, node)
    except TruncatedEntry as exc:
        diags.append(Diagnostic("TRUNCATED_ENTRY", node.offset, str(exc)))
        kind, values = "unknown", {}
    return ItemProperty(node.type, kind, essential, values, raw, index, node.offset)


def _sample_chunks(data: bytes, stbl: BoxNode, diags: list[Diagnostic]) -> tuple[list[tuple[int, int]], int]:
    """Resolve chunk byte ranges from stco/co64 + stsc + stsz."""
    stsz = stbl.find(b"stsz")
    stsc = stbl.find(b"stsc")
    stco = stbl.find(b"stco") or stbl.find(b"co64")
    if stsz is None or stsc is None or stco is None:
        return [], 0
    try:
        r = _Reader(data, stsz.body_start, stsz.end, "stsz")
        uniform = r.u32()
        n_samples = r.u32()
        if uniform:
            sizes = [uniform] * n_samples
        else:
            n_samples = min(n_samples, r.remaining() // 4)
            sizes = [r.u32() for _ in range(n_samples)]
        r = _Reader(data, stsc.body_start, stsc.end, "stsc")
        n = min(r.u32(), r.remaining() // 12)
        runs = [(r.u32(), r.u32(), r.u32())[:2] for _ in range(n)]
        r = _Reader(data, stco.body_start, stco.end, fourcc_text(stco.type))
        width = 8 if stco.type == b"co64" else 4
        n_chunks = min(r.u32(), r.remaining() // width)
        offsets = [r.uint(width) for _ in range(n_chunks)]
    except TruncatedEntry as exc:
        diags.append(Diagnostic("TRUNCATED_ENTRY", stbl.offset, str(exc)))
        return [], 0
    chunks = []
    sample = 0
    for i, off in enumerate(offsets, start=1):
        per_chunk = 0
        for first, spc in runs:
            if first <= i:
                per_chunk = spc
        size = sum(sizes[sample:sample + per_chunk])
        sample += per_chunk
        if size:
            chunks.append((off, off + size))
    return chunks, n_samples


def _parse_track(data: bytes, trak: BoxNode, diags: list[Diagnostic]) -> TrackRecord | None:
    tkhd = trak.find(b"tkhd")
    if tkhd is None:
        diags.append(Diagnostic("MISSING_TKHD", trak.offset, "trak without tkhd"))
        return None
    try:
        track = parse_tkhd(data, tkhd)
    except TruncatedEntry as exc:
        diags.append(Diagnostic("TRUNCATED_ENTRY", tkhd.offset, str(exc)))
        return None
    handler = None
    drefs: list[DataReference] = []
    chunks: list[tuple[int, int]] = []
    n_samples = 0
    mdia = trak.find(b"mdia")
    if mdia is not None:
        hdlr = mdia.find(b"hdlr")
        if hdlr is not None:
            try:
                handler, _ = parse_hdlr(data, hdlr)
            except TruncatedEntry as exc:
                diags.append(Diagnostic("TRUNCATED_ENTRY", hdlr.offset, str(exc)))
        minf = mdia.find(b"minf")
        if minf is not None:
            dinf = minf.find(b"dinf")
            dref = dinf.find(b"dref") if dinf else None
            if dref is not None:
                try:
                    drefs = parse_dref(data, dref, f"track:{track.track_id}", diags)
                except TruncatedEntry as exc:
                    diags.append(Diagnostic("TRUNCATED_ENTRY", dref.offset, str(exc)))
            stbl = minf.find(b"stbl")
            if stbl is not None:
                chunks, n_samples = _sample_chunks(data, stbl, diags)
    return replace(track, handler=handler, data_references=tuple(drefs),
                   chunks=tuple(chunks), sample_count=n_samples, trak_offset=trak.offset)


# -- location resolution -----------------------------------------------------

def _resolve_locations(locations: list[ItemLocation], drefs: list[DataReference],
                       idat_span: tuple[int, int] | None, refs: list[ItemReference],
                       file_len: int, diags: list[Diagnostic]) -> dict[int, ItemLocation]:
    by_index = {d.index: d for d in drefs}
    resolved: dict[int, ItemLocation] = {}
    pending_item_relative = []

    for loc in locations:
        external = False
        if loc.data_reference_index != 0:
            entry = by_index.get(loc.data_reference_index)
            if entry is None:
                diags.append(Diagnostic("DANGLING_DREF_INDEX", -1,
                                        f"item {loc.item_id} uses missing dref entry {loc.data_reference_index}", loc.item_id))
                external = True
            elif not entry.self_contained:
                external = True
        extents = []
        for ext in loc.extents:
            if external:
                extents.append(replace(ext, external=True, in_file=False))
                continue
            if loc.construction_method == CONSTRUCTION_FILE:
                start = ext.offset
                end = file_len if ext.length == 0 else start + ext.length
            elif loc.construction_method == CONSTRUCTION_IDAT:
                if idat_span is None:
                    diags.append(Diagnostic("MISSING_IDAT", -1,
                                            f"item {loc.item_id} uses idat construction but no idat box", loc.item_id))
                    extents.append(replace(ext, in_file=False))
                    continue
                start = idat_span[0] + ext.offset
                end = idat_span[1] if ext.length == 0 else start + ext.length
                if end > idat_span[1]:
                    diags.append(Diagnostic("EXTENT_OUTSIDE_IDAT", start,
                                            f"item {loc.item_id} extent ends at {end}, idat ends at {idat_span[1]}", loc.item_id))
            elif loc.construction_method == CONSTRUCTION_ITEM:
                extents.append(ext)
                continue
            else:
                diags.append(Diagnostic("BAD_CONSTRUCTION_METHOD", -1,
                                        f"item {loc.item_id} construction method {loc.construction_method}", loc.item_id))
                extents.append(replace(ext, in_file=False))
                continue
            in_file = end <= file_len
            if not in_file:
                diags.append(Diagnostic("EXTENT_OUT_OF_FILE", start,
                                        f"item {loc.item_id} extent [{start},{end}) exceeds file length {file_len}", loc.item_id))
            extents.append(replace(ext, spans=((start, end),), in_file=in_file))
        new = replace(loc, extents=tuple(extents))
        resolved[loc.item_id] = new
        if loc.construction_method == CONSTRUCTION_ITEM and not external:
            pending_item_relative.append(loc.item_id)

    for item_id in pending_item_relative:
        resolved[item_id] = _resolve_item_relative(item_id, resolved, refs, diags, depth=0)
    return resolved


def _item_spans(loc: ItemLocation) -> list[tuple[int, int]]:
    return [s for e in loc.extents for s in e.spans]


def _slice_spans(spans: list[tuple[int, int]], offset: int, length: int) -> list[tuple[int, int]] | None:
    out = []
    pos = 0
    want_end = offset + length if length else None
    for s, e in spans:
        seg_start, seg_end = pos, pos + (e - s)
        lo = max(seg_start, offset)
        hi = seg_end if want_end is None else min(seg_end, want_end)
        if lo < hi:
            out.append((s + lo - seg_start, s + hi - seg_start))
        pos = seg_end
    total = pos
    if want_end is not None and want_end > total:
        return None
    return out


def _resolve_item_relative(item_id, resolved, refs, diags, depth) -> ItemLocation:
    loc = resolved[item_id]
    if depth > 8:
        diags.append(Diagnostic("ITEM_REF_LOOP", -1, f"item-relative chain too deep at item {item_id}", item_id))
        return loc
    sources = [t for r in refs if r.from_item == item_id and r.ref_type == b"iloc" for t in r.to_items]
    extents = []
    for ext in loc.extents:
        idx = ext.index or 1
        if idx > len(sources) or sources[idx - 1] not in resolved:
            diags.append(Diagnostic("UNRESOLVED_ITEM_EXTENT", -1,
                                    f"item {item_id} extent references missing source index {idx}", item_id))
            extents.append(replace(ext, in_file=False))
            continue
        src = resolved[sources[idx - 1]]
        if src.construction_method == CONSTRUCTION_ITEM:
            src = _resolve_item_relative(src.item_id, resolved, refs, diags, depth + 1)
        spans = _slice_spans(_item_spans(src), ext.offset, ext.length)
        if spans is None:
            diags.append(Diagnostic("UNRESOLVED_ITEM_EXTENT", -1,
                                    f"item {item_id} extent overruns source item {src.item_id}", item_id))
            extents.append(replace(ext, in_file=False))
            continue
        extents.append(replace(ext, spans=tuple(spans)))
    return replace(loc, extents=tuple(extents))


# -- model -------------------------------------------------------------------

def _guard(diags: list[Diagnostic], node: BoxNode, fn, *args, default=None):
    try:
        return fn(*args)
    except (TruncatedEntry, BadFieldWidth) as exc:
        code = "BAD_FIELD_WIDTH" if isinstance(exc, BadFieldWidth) else "TRUNCATED_ENTRY"
        diags.append(Diagnostic(code, node.offset, str(exc)))
        return default


def build_file_model(tree: BoxTree, data: bytes, strict: bool = False) -> FileModel:
    diags: list[Diagnostic] = list(tree.diagnostics)
    brands = None
    first = tree.boxes[0] if tree.boxes else None
    if first is not None and first.type == b"ftyp":
        brands = _guard(diags, first, parse_ftyp, data, first.header.payload_start, first.end)
    elif strict:
        raise MissingFtyp("first box is not ftyp")
    else:
        ftyp = tree.find(b"ftyp")
        if ftyp is not None:
            diags.append(Diagnostic("FTYP_NOT_FIRST", ftyp.offset, "ftyp is not the first box"))
            brands = _guard(diags, ftyp, parse_ftyp, data, ftyp.header.payload_start, ftyp.end)
        else:
            diags.append(Diagnostic("MISSING_FTYP", 0, "no ftyp box"))
    kind = classify_brands(brands)

    meta = tree.find(b"meta")
    handler = None
    primary = None
    pitm_offset = -1
    items: list[ItemRecord] = []
    refs: list[ItemReference] = []
    drefs: list[DataReference] = []
    idat_span = None
    props: dict[int, list[ItemProperty]] = {}
    locations: list[ItemLocation] = []

    if len(tree.find_all(b"meta")) > 1:
        diags.append(Diagnostic("MULTIPLE_META", tree.find_all(b"meta")[1].offset,
                                "more than one top-level meta box"))
    if meta is not None:
        hdlr = meta.find(b"hdlr")
        if hdlr is not None:
            res = _guard(diags, hdlr, parse_hdlr, data, hdlr)
            handler = res[0] if res else None
        else:
            diags.append(Diagnostic("MISSING_HDLR", meta.offset, "meta without hdlr"))
        pitm = meta.find(b"pitm")
        if pitm is not None and pitm.full is not None:
            primary = _guard(diags, pitm, parse_pitm, data, pitm)
            pitm_offset = pitm.offset
        idat = meta.find(b"idat")
        if idat is not None:
            idat_span = (idat.header.payload_start, idat.end)
        dinf = meta.find(b"dinf")
        dref = dinf.find(b"dref") if dinf else None
        if dref is not None:
            drefs = _guard(diags, dref, parse_dref, data, dref, "meta", diags, default=[])
        iinf = meta.find(b"iinf")
        if iinf is not None:
            for infe in iinf.find_all(b"infe"):
                rec = _guard(diags, infe, parse_infe, data, infe)
                if rec is None:
                    continue
                if rec.infe_version > 3:
                    diags.append(Diagnostic("INFE_VERSION", infe.offset,
                                            f"infe version {rec.infe_version} outside 0..3"))
                if any(i.item_id == rec.item_id for i in items):
                    diags.append(Diagnostic("DUPLICATE_ITEM_ID", infe.offset,
                                            f"item id {rec.item_id} declared twice; later entry ignored"))
                    continue
                items.append(rec)
            declared = _declared_entry_count(data, iinf)
            if declared is not None and declared != len(iinf.find_all(b"infe")):
                diags.append(Diagnostic("IINF_COUNT_MISMATCH", iinf.offset,
                                        f"iinf declares {declared} entries, {len(iinf.find_all(b'infe'))} present"))
        iref = meta.find(b"iref")
        if iref is not None:
            refs = _guard(diags, iref, parse_iref, data, iref, default=[])
        iloc = meta.find(b"iloc")
        if iloc is not None:
            locations = _guard(diags, iloc, parse_iloc, data, iloc, default=[])
        iprp = meta.find(b"iprp")
        if iprp is not None:
            props = parse_properties(data, iprp, diags)
        if kind.is_heif and handler != b"pict":
            diags.append(Diagnostic("NON_PICT_HANDLER", hdlr.offset if hdlr else meta.offset,
                                    f"meta handler is {fourcc_text(handler) if handler else None!r}, expected 'pict'"))

    resolved = _resolve_locations(locations, drefs, idat_span, refs, len(data), diags)
    known = {i.item_id for i in items}
    for item_id in resolved:
        if item_id not in known:
            diags.append(Diagnostic("ILOC_WITHOUT_INFE", -1, f"iloc entry for undeclared item {item_id}", item_id))
    items = [replace(it, location=resolved.get(it.item_id),
                     properties=tuple(props.get(it.item_id, ()))) for it in items]
    items = [_with_grid(it, data, diags) if it.item_type == b"grid" else it for it in items]

    tracks = []
    moov = tree.find(b"moov")
    if moov is not None:
        for trak in moov.find_all(b"trak"):
            t = _parse_track(data, trak, diags)
            if t is not None:
                tracks.append(t)

    return FileModel(
        brands=brands, kind=kind, handler=handler, primary_item=primary,
        items=tuple(items), references=tuple(refs), data_references=tuple(drefs),
        tracks=tuple(tracks), idat_span=idat_span, diagnostics=tuple(diags),
        file_len=len(data), tree=tree, has_meta=meta is not None, pitm_offset=pitm_offset,
    )


def _with_grid(item: ItemRecord, data: bytes, diags: list[Diagnostic]) -> ItemRecord:
    spans = []
    for ext in item.extents:
        if ext.external or not ext.in_file:
            return item
        spans.extend(ext.spans)
    if not spans:
        return item
    payload = b"".join(bytes(data[a:b]) for a, b in spans)
    try:
        return replace(item, grid=parse_grid_descriptor(payload))
    except SemanticError as exc:
        diags.append(Diagnostic("GRID_DESCRIPTOR", spans[0][0], f"item {item.item_id}: {exc}", item.item_id))
        return item


def _declared_entry_count(data: bytes, iinf: BoxNode) -> int | None:
    if iinf.full is None:
        return None
    width = 2 if iinf.full.version == 0 else 4
    start = iinf.body_start
    if start + width > iinf.end:
        return None
    return int.from_bytes(data[start:start + width], "big")


def load(data: bytes, strict: bool = False) -> FileModel:
    """Lex and interpret ``data`` in one step."""
    from .boxes import parse_tree
    return build_file_model(parse_tree(data), data, strict=strict)


# -- payload access ----------------------------------------------------------

def item_spans(model: FileModel, item_id: int) -> list[tuple[int, int]]:
    """Absolute byte ranges of an item in declared extent order.

    Raises ExternalData, ExtentOutOfFile or UnresolvedExtent when the bytes
    cannot be read from this file.
    """
    item = model.item(item_id)
    if item is None:
        raise UnknownItem(f"no item {item_id}")
    if item.location is None:
        raise UnresolvedExtent(f"item {item_id} has no iloc entry")
    spans = []
    for ext in item.extents:
        if ext.external:
            raise ExternalData(f"item {item_id} data lives in dref entry "
                               f"{item.location.data_reference_index}")
        if not ext.in_file:
            if ext.spans:
                raise ExtentOutOfFile(f"item {item_id} extent {ext.spans} beyond end of file ({model.file_len})")
            raise UnresolvedExtent(f"item {item_id} extent could not be resolved")
        spans.extend(ext.spans)
    return spans


def iter_item_chunks(model: FileModel, data: bytes, item_id: int) -> Iterable[bytes]:
    for s, e in item_spans(model, item_id):
        yield bytes(data[s:e])


def item_payload(model: FileModel, data: bytes, item_id: int) -> bytes:
    return b"".join(iter_item_chunks(model, data, item_id))


def exif_tiff_payload(payload: bytes) -> bytes:
    """Strip the 4-byte TIFF-header offset that prefixes an Exif item."""
    if len(payload) < 4:
        raise TruncatedEntry("Exif item shorter than its offset field")
    (skip,) = struct.unpack(">I", payload[:4])
    start = 4 + skip
    if start > len(payload):
        raise TruncatedEntry(f"Exif TIFF offset {skip} beyond payload of {len(payload)} bytes")
    return payload[start:]
