"""Deterministic synthetic HEIF containers for tests and regression corpora.

Payloads are seeded pseudo-random bytes tagged with the item id; nothing
here produces decodable images. :func:`build_with_layout` also returns where
everything landed, computed while emitting and independent of the parser.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field
from typing import Sequence


class InconsistentSpec(ValueError):
    pass


# -- spec --------------------------------------------------------------------

@dataclass(frozen=True)
class PropertySpec:
    fourcc: str
    payload: bytes
    full: bool = False
    essential: bool = False

    def encode(self) -> bytes:
        body = (b"\x00\x00\x00\x00" if self.full else b"") + self.payload
        return box(self.fourcc, body)


def ispe(width: int, height: int, essential: bool = False) -> PropertySpec:
    return PropertySpec("ispe", struct.pack(">II", width, height), full=True, essential=essential)


def irot(angle: int) -> PropertySpec:
    if angle % 90:
        raise InconsistentSpec(f"irot angle {angle} is not a multiple of 90")
    return PropertySpec("irot", bytes([(angle // 90) & 0x3]), essential=True)


def imir(axis: int) -> PropertySpec:
    return PropertySpec("imir", bytes([axis & 0x1]), essential=True)


def clap(width: int, height: int, horiz_off: int = 0, vert_off: int = 0) -> PropertySpec:
    return PropertySpec("clap", struct.pack(">IIIIiIiI", width, 1, height, 1, horiz_off, 1, vert_off, 1),
                        essential=True)


def pixi(*bits: int) -> PropertySpec:
    return PropertySpec("pixi", bytes([len(bits), *bits]), full=True)


def colr_prof(profile: bytes) -> PropertySpec:
    return PropertySpec("colr", b"prof" + profile)


def auxc(aux_type: str, subtype: bytes = b"") -> PropertySpec:
    return PropertySpec("auxC", aux_type.encode() + b"\x00" + subtype, full=True, essential=True)


def opaque_property(fourcc: str, payload: bytes) -> PropertySpec:
    return PropertySpec(fourcc, payload)


@dataclass(frozen=True)
class ItemSpec:
    item_id: int
    item_type: str = "hvc1"
    name: str = "HEVC Image"
    hidden: bool = False
    payload: bytes | None = None
    payload_len: int = 64
    placement: str = "mdat"          # "mdat" or "idat"
    extent_count: int = 1
    properties: tuple[PropertySpec, ...] = ()
    content_type: str | None = None
    infe_version: int = 2
    data_reference_index: int = 0
    extra_flags: int = 0             # infe flag bits other than 0x1


@dataclass(frozen=True)
class ReferenceSpec:
    ref_type: str
    from_item: int
    to_items: tuple[int, ...]


@dataclass(frozen=True)
class TrackSpec:
    track_id: int
    flags: int = 0x1
    samples: int = 2
    sample_len: int = 48
    handler: str = "pict"


@dataclass(frozen=True)
class DrefEntry:
    scheme: str = "url"             # "url" or "urn"
    location: str = ""
    self_contained: bool = True
    name: str = ""


@dataclass(frozen=True)
class MintSpec:
    item_id: int
    target: int
    state: str = "correct"           # "correct" or "corrupted"
    framing: str = "scheme"          # "scheme", "raw" or "box"


@dataclass(frozen=True)
class FixtureSpec:
    items: tuple[ItemSpec, ...] = ()
    references: tuple[ReferenceSpec, ...] = ()
    primary_item: int | None = None
    major_brand: str = "heic"
    minor_version: int = 0
    compatible_brands: tuple[str, ...] = ("mif1", "heic")
    handler: str = "pict"
    tracks: tuple[TrackSpec, ...] = ()
    dref: tuple[DrefEntry, ...] | None = None
    mint: MintSpec | None = None
    trailing_garbage: bytes = b""
    mdat_gap: int = 0                # unindexed bytes after the first mdat extent
    shuffle_extents: bool = True
    seed: int = 0

    def all_items(self) -> tuple[ItemSpec, ...]:
        """Items as emitted, including the generated mint item."""
        if self.mint is None:
            return self.items
        return self.items + (ItemSpec(self.mint.item_id, "mint", "", payload=b""),)

    def all_references(self) -> tuple[ReferenceSpec, ...]:
        if self.mint is None:
            return self.references
        return self.references + (ReferenceSpec("cdsc", self.mint.item_id, (self.mint.target,)),)


@dataclass
class Layout:
    """Where the builder put things (absolute offsets)."""
    item_extents: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    external_items: set[int] = field(default_factory=set)
    item_payloads: dict[int, bytes] = field(default_factory=dict)
    infe_offsets: dict[int, int] = field(default_factory=dict)
    infe_flag_offsets: dict[int, int] = field(default_factory=dict)
    tkhd_flag_offsets: dict[int, int] = field(default_factory=dict)
    track_chunks: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    mdat_span: tuple[int, int] | None = None
    idat_span: tuple[int, int] | None = None
    gap_span: tuple[int, int] | None = None
    trailing_span: tuple[int, int] | None = None
    mint_digest: bytes | None = None
    length: int = 0


# -- byte helpers ------------------------------------------------------------

def box(fourcc: str | bytes, payload: bytes) -> bytes:
    code = fourcc.encode("latin-1") if isinstance(fourcc, str) else fourcc
    if len(code) != 4:
        raise InconsistentSpec(f"bad fourcc {fourcc!r}")
    return struct.pack(">I", 8 + len(payload)) + code + payload


def full_box(fourcc: str, version: int, flags: int, payload: bytes) -> bytes:
    return box(fourcc, bytes([version]) + flags.to_bytes(3, "big") + payload)


def _cstr(text: str) -> bytes:
    return text.encode("utf-8") + b"\x00"


def seeded_payload(seed: int, item_id: int, length: int, item_type: str = "hvc1") -> bytes:
    rng = random.Random(seed * 1_000_003 + item_id)
    tag = struct.pack(">I", item_id & 0xFFFFFFFF)
    if item_type == "Exif":
        head = b"\x00\x00\x00\x00MM\x00*\x00\x00\x00\x08"
        return (head + rng.randbytes(max(length - len(head), 0)))[:max(length, len(head))]
    body = tag + rng.randbytes(max(length - 4, 0))
    return body[:length] if length >= 4 else body


def _split(payload: bytes, parts: int) -> list[bytes]:
    parts = max(1, min(parts, max(len(payload), 1)))
    step, extra = divmod(len(payload), parts)
    out, pos = [], 0
    for i in range(parts):
        n = step + (1 if i < extra else 0)
        out.append(payload[pos:pos + n])
        pos += n
    return out


def _check(spec: FixtureSpec) -> None:
    ids = [i.item_id for i in spec.all_items()]
    if len(ids) != len(set(ids)):
        raise InconsistentSpec(f"duplicate item ids: {ids}")
    tids = [t.track_id for t in spec.tracks]
    if len(tids) != len(set(tids)):
        raise InconsistentSpec(f"duplicate track ids: {tids}")
    for it in spec.all_items():
        if it.placement not in ("mdat", "idat"):
            raise InconsistentSpec(f"item {it.item_id}: placement {it.placement!r}")
        if it.infe_version not in (0, 1, 2, 3):
            raise InconsistentSpec(f"item {it.item_id}: infe version {it.infe_version}")
        if it.infe_version < 3 and it.item_id > 0xFFFF:
            raise InconsistentSpec(f"item {it.item_id} needs infe version 3")
        if it.data_reference_index:
            n = len(spec.dref or ())
            if it.data_reference_index > n:
                raise InconsistentSpec(f"item {it.item_id}: dref index {it.data_reference_index} > {n}")
            if it.placement == "idat":
                raise InconsistentSpec(f"item {it.item_id}: idat items cannot use a data reference")
    if spec.mint is not None:
        target = next((i for i in spec.items if i.item_id == spec.mint.target), None)
        if target is None:
            raise InconsistentSpec(f"mint target {spec.mint.target} is not an item")
        if _is_external(spec, target):
            raise InconsistentSpec("mint target must be stored in the file")


def _is_external(spec: FixtureSpec, item: ItemSpec) -> bool:
    if not item.data_reference_index:
        return False
    return not spec.dref[item.data_reference_index - 1].self_contained


# -- emitters ----------------------------------------------------------------

def _infe(item: ItemSpec) -> bytes:
    flags = (item.extra_flags & ~0x1) | (0x1 if item.hidden else 0)
    v = item.infe_version
    if v in (0, 1):
        body = struct.pack(">HH", item.item_id, 0) + _cstr(item.name) + _cstr(item.content_type or "")
        if v == 1:
            body += _cstr("")
    else:
        body = (struct.pack(">H", item.item_id) if v == 2 else struct.pack(">I", item.item_id))
        body += struct.pack(">H", 0) + item.item_type.encode("latin-1") + _cstr(item.name)
        if item.item_type == "mime":
            body += _cstr(item.content_type or "application/rdf+xml")
    return full_box("infe", v, flags, body)


def _dref(entries: Sequence[DrefEntry]) -> bytes:
    parts = []
    for e in entries:
        flags = 0x1 if e.self_contained else 0
        if e.scheme == "url":
            body = b"" if e.self_contained else _cstr(e.location)
            parts.append(full_box("url ", 0, flags, body))
        elif e.scheme == "urn":
            parts.append(full_box("urn ", 0, flags, _cstr(e.name) + _cstr(e.location)))
        else:
            raise InconsistentSpec(f"dref scheme {e.scheme!r}")
    return full_box("dref", 0, 0, struct.pack(">I", len(entries)) + b"".join(parts))


def _tkhd(track: TrackSpec) -> bytes:
    body = struct.pack(">III", 0, 0, track.track_id) + b"\x00" * 4 + struct.pack(">I", track.samples)
    body += b"\x00" * 8 + b"\x00" * 8
    body += struct.pack(">9I", 0x10000, 0, 0, 0, 0x10000, 0, 0, 0, 0x40000000)
    body += struct.pack(">II", 64 << 16, 64 << 16)
    return full_box("tkhd", 0, track.flags & 0xFFFFFF, body)


def _hdlr(handler: str) -> bytes:
    return full_box("hdlr", 0, 0, struct.pack(">I", 0) + handler.encode("latin-1") + b"\x00" * 12 + b"\x00")


class _Builder:
    def __init__(self, spec: FixtureSpec):
        self.spec = spec
        self.items = spec.all_items()
        self.refs = spec.all_references()
        self.layout = Layout()

    # Payloads -------------------------------------------------------------
    def payloads(self) -> dict[int, bytes]:
        out = {}
        for it in self.items:
            if self.spec.mint is not None and it.item_id == self.spec.mint.item_id:
                continue
            out[it.item_id] = it.payload if it.payload is not None else \
                seeded_payload(self.spec.seed, it.item_id, it.payload_len, it.item_type)
        if self.spec.mint is not None:
            m = self.spec.mint
            target = out[m.target]
            digest = hashlib.md5(target).digest()
            self.layout.mint_digest = digest
            if m.framing == "raw":
                out[m.item_id] = digest
            elif m.framing == "box":
                out[m.item_id] = full_box("md5i", 0, 0, digest)
            else:
                out[m.item_id] = b"md5 " + digest
            if m.state == "corrupted":
                if not target:
                    raise InconsistentSpec("cannot corrupt an empty mint target")
                out[m.target] = target[:-1] + bytes([target[-1] ^ 0xFF])
        return out

    def build(self) -> tuple[bytes, Layout]:
        spec = self.spec
        _check(spec)
        payloads = self.payloads()
        self.layout.item_payloads = dict(payloads)
        rng = random.Random(spec.seed ^ 0x5EED)

        # Plan idat and mdat payload layout (relative offsets).
        idat = bytearray()
        idat_extents: dict[int, list[tuple[int, int]]] = {}
        mdat_chunks: list[tuple[int, int, bytes]] = []     # (item_id, part_index, data)
        external_extents: dict[int, list[tuple[int, int]]] = {}
        for it in self.items:
            data = payloads[it.item_id]
            parts = _split(data, it.extent_count)
            if _is_external(spec, it):
                pos, exts = 0, []
                for p in parts:
                    exts.append((pos, len(p)))
                    pos += len(p)
                external_extents[it.item_id] = exts
                self.layout.external_items.add(it.item_id)
            elif it.placement == "idat":
                exts = []
                for p in parts:
                    exts.append((len(idat), len(p)))
                    idat += p
                idat_extents[it.item_id] = exts
            else:
                for k, p in enumerate(parts):
                    mdat_chunks.append((it.item_id, k, p))
        if spec.shuffle_extents:
            rng.shuffle(mdat_chunks)

        mdat = bytearray()
        mdat_rel: dict[int, dict[int, tuple[int, int]]] = {}
        gap_rel = None
        for n, (iid, k, p) in enumerate(mdat_chunks):
            mdat_rel.setdefault(iid, {})[k] = (len(mdat), len(p))
            mdat += p
            if n == 0 and spec.mdat_gap:
                gap_rel = (len(mdat), spec.mdat_gap)
                mdat += random.Random(spec.seed + 77).randbytes(spec.mdat_gap)
        if spec.mdat_gap and gap_rel is None:
            gap_rel = (len(mdat), spec.mdat_gap)
            mdat += random.Random(spec.seed + 77).randbytes(spec.mdat_gap)
        track_rel: dict[int, list[tuple[int, int]]] = {}
        for t in spec.tracks:
            srng = random.Random(spec.seed * 31 + t.track_id)
            track_rel[t.track_id] = []
            for _ in range(t.samples):
                track_rel[t.track_id].append((len(mdat), t.sample_len))
                mdat += struct.pack(">I", 0xC0DE0000 | (t.track_id & 0xFFFF))[:min(4, t.sample_len)]
                mdat += srng.randbytes(max(t.sample_len - 4, 0))

        ftyp = box("ftyp", spec.major_brand.encode("latin-1") + struct.pack(">I", spec.minor_version)
                   + b"".join(b.encode("latin-1") for b in spec.compatible_brands))

        def assemble(mdat_payload_start: int) -> tuple[bytes, bytes, dict]:
            meta, meta_marks = self._meta(idat, idat_extents, mdat_rel, external_extents,
                                          mdat_payload_start, len(ftyp))
            moov, moov_marks = self._moov(track_rel, mdat_payload_start, len(ftyp) + len(meta))
            return meta, moov, {**meta_marks, **moov_marks}

        meta, moov, _ = assemble(0)
        mdat_payload_start = len(ftyp) + len(meta) + len(moov) + 8
        meta, moov, marks = assemble(mdat_payload_start)
        assert len(ftyp) + len(meta) + len(moov) + 8 == mdat_payload_start

        out = ftyp + meta + moov + box("mdat", bytes(mdat)) + spec.trailing_garbage
        lay = self.layout
        lay.length = len(out)
        lay.mdat_span = (mdat_payload_start, mdat_payload_start + len(mdat))
        if spec.trailing_garbage:
            lay.trailing_span = (len(out) - len(spec.trailing_garbage), len(out))
        if gap_rel:
            lay.gap_span = (mdat_payload_start + gap_rel[0], mdat_payload_start + gap_rel[0] + gap_rel[1])
        for iid, parts in mdat_rel.items():
            lay.item_extents[iid] = [(mdat_payload_start + s, mdat_payload_start + s + n)
                                     for s, n in (parts[k] for k in sorted(parts))]
        if marks.get("idat_start") is not None:
            a = marks["idat_start"]
            lay.idat_span = (a, a + len(idat))
            for iid, exts in idat_extents.items():
                lay.item_extents[iid] = [(a + s, a + s + n) for s, n in exts]
        for iid in external_extents:
            lay.item_extents[iid] = []
        lay.infe_offsets = marks["infe"]
        lay.infe_flag_offsets = {k: v + 9 for k, v in marks["infe"].items()}
        lay.tkhd_flag_offsets = marks.get("tkhd", {})
        lay.track_chunks = {tid: [(mdat_payload_start + s, mdat_payload_start + s + n) for s, n in ch]
                            for tid, ch in track_rel.items()}
        return out, lay

    def _iloc(self, idat_extents, mdat_rel, external_extents, mdat_payload_start) -> bytes:
        wide = any(it.item_id > 0xFFFF for it in self.items)
        version = 2 if wide else 1
        entries = []
        for it in self.items:
            if it.item_id in external_extents:
                method, exts = 0, external_extents[it.item_id]
            elif it.item_id in idat_extents:
                method, exts = 1, idat_extents[it.item_id]
            else:
                parts = mdat_rel.get(it.item_id, {})
                method, exts = 0, [(mdat_payload_start + s, n) for s, n in (parts[k] for k in sorted(parts))]
            e = struct.pack(">I" if wide else ">H", it.item_id)
            e += struct.pack(">HHH", method, it.data_reference_index, len(exts))
            e += b"".join(struct.pack(">II", s, n) for s, n in exts)
            entries.append(e)
        count = struct.pack(">I" if wide else ">H", len(entries))
        return full_box("iloc", version, 0, bytes([0x44, 0x00]) + count + b"".join(entries))

    def _iref(self) -> bytes:
        wide = any(max((r.from_item, *r.to_items)) > 0xFFFF for r in self.refs)
        fmt = ">I" if wide else ">H"
        children = []
        for r in self.refs:
            body = struct.pack(fmt, r.from_item) + struct.pack(">H", len(r.to_items))
            body += b"".join(struct.pack(fmt, t) for t in r.to_items)
            children.append(box(r.ref_type, body))
        return full_box("iref", 1 if wide else 0, 0, b"".join(children))

    def _iprp(self) -> bytes:
        pool: list[bytes] = []
        assoc: list[tuple[int, list[tuple[bool, int]]]] = []
        for it in self.items:
            if not it.properties:
                continue
            links = []
            for p in it.properties:
                enc = p.encode()
                if enc not in pool:
                    pool.append(enc)
                links.append((p.essential, pool.index(enc) + 1))
            assoc.append((it.item_id, links))
        wide_idx = len(pool) > 127
        wide_id = any(i > 0xFFFF for i, _ in assoc)
        body = struct.pack(">I", len(assoc))
        for iid, links in assoc:
            body += struct.pack(">I" if wide_id else ">H", iid) + bytes([len(links)])
            for essential, idx in links:
                if wide_idx:
                    body += struct.pack(">H", (0x8000 if essential else 0) | idx)
                else:
                    body += bytes([(0x80 if essential else 0) | idx])
        ipma = full_box("ipma", 1 if wide_id else 0, 1 if wide_idx else 0, body)
        return box("iprp", box("ipco", b"".join(pool)) + ipma)

    def _meta(self, idat, idat_extents, mdat_rel, external_extents, mdat_payload_start, meta_offset):
        spec = self.spec
        parts: list[bytes] = [_hdlr(spec.handler)]
        if spec.primary_item is not None:
            v = 1 if spec.primary_item > 0xFFFF else 0
            parts.append(full_box("pitm", v, 0, struct.pack(">I" if v else ">H", spec.primary_item)))
        parts.append(self._iloc(idat_extents, mdat_rel, external_extents, mdat_payload_start))

        # iinf: remember where each infe lands
        infe_rel = {}
        iinf_body = struct.pack(">H", len(self.items))
        for it in self.items:
            infe_rel[it.item_id] = len(iinf_body)
            iinf_body += _infe(it)
        iinf_prefix_len = 12  # iinf header(8) + version/flags(4)
        iinf_pos = sum(len(p) for p in parts)
        parts.append(full_box("iinf", 0, 0, iinf_body))
        if self.refs:
            parts.append(self._iref())
        if any(it.properties for it in self.items):
            parts.append(self._iprp())
        if spec.dref is not None:
            parts.append(box("dinf", _dref(spec.dref)))
        idat_pos = None
        if idat or any(it.placement == "idat" for it in self.items):
            idat_pos = sum(len(p) for p in parts)
            parts.append(box("idat", bytes(idat)))

        meta = full_box("meta", 0, 0, b"".join(parts))
        base = meta_offset + 12
        marks = {
            "infe": {iid: base + iinf_pos + iinf_prefix_len + rel for iid, rel in infe_rel.items()},
            "idat_start": None if idat_pos is None else base + idat_pos + 8,
        }
        return meta, marks

    def _moov(self, track_rel, mdat_payload_start, moov_offset):
        if not self.spec.tracks:
            return b"", {}
        mvhd = full_box("mvhd", 0, 0, struct.pack(">IIII", 0, 0, 1000, 0) + b"\x00" * 80)
        traks = []
        tkhd_marks = {}
        pos = moov_offset + 8 + len(mvhd)
        for t in self.spec.tracks:
            chunks = track_rel[t.track_id]
            stsc = full_box("stsc", 0, 0, struct.pack(">IIII", 1, 1, 1, 1))
            stsz = full_box("stsz", 0, 0, struct.pack(">II", 0, len(chunks))
                            + b"".join(struct.pack(">I", n) for _, n in chunks))
            stco = full_box("stco", 0, 0, struct.pack(">I", len(chunks))
                            + b"".join(struct.pack(">I", mdat_payload_start + s) for s, _ in chunks))
            stbl = box("stbl", stsc + stsz + stco)
            mdia = box("mdia", _hdlr(t.handler) + box("minf", stbl))
            trak = box("trak", _tkhd(t) + mdia)
            tkhd_marks[t.track_id] = pos + 8 + 8 + 1   # trak hdr, tkhd hdr, version
            pos += len(trak)
            traks.append(trak)
        return box("moov", mvhd + b"".join(traks)), {"tkhd": tkhd_marks}


def build_with_layout(spec: FixtureSpec) -> tuple[bytes, Layout]:
    return _Builder(spec).build()


def build(spec: FixtureSpec) -> bytes:
    return build_with_layout(spec)[0]


# -- canned specs ------------------------------------------------------------

def minimal_spec(seed: int = 0, **overrides) -> FixtureSpec:
    """One visible hvc1 item, set as primary."""
    base = dict(items=(ItemSpec(1, properties=(ispe(64, 64),)),), primary_item=1, seed=seed)
    base.update(overrides)
    return FixtureSpec(**base)


def burst_spec(n: int = 4, seed: int = 0, hidden: Sequence[int] = ()) -> FixtureSpec:
    """``n`` independent hvc1 images with the first as primary."""
    items = tuple(ItemSpec(i, hidden=i in hidden, payload_len=96, properties=(ispe(128, 96),))
                  for i in range(1, n + 1))
    return FixtureSpec(items=items, primary_item=1, seed=seed)


def grid_payload(rows: int, cols: int, width: int, height: int) -> bytes:
    wide = width > 0xFFFF or height > 0xFFFF
    fmt = ">II" if wide else ">HH"
    return bytes([0, 1 if wide else 0, rows - 1, cols - 1]) + struct.pack(fmt, width, height)


def apple_grid_spec(rows: int = 6, cols: int = 8, seed: int = 0, tile_len: int = 48,
                    tiles_hidden: bool = True) -> FixtureSpec:
    """iPhone-style layout: visible grid primary over hidden 512x512 hvc1 tiles,
    plus a thumbnail and an Exif item."""
    n = rows * cols
    grid_id = 1
    tiles = tuple(ItemSpec(grid_id + 1 + k, hidden=tiles_hidden, payload_len=tile_len,
                           properties=(ispe(512, 512),)) for k in range(n))
    thumb_id = grid_id + n + 1
    exif_id = thumb_id + 1
    grid = ItemSpec(grid_id, "grid", "", payload=grid_payload(rows, cols, 4032, 3024),
                    placement="idat", properties=(ispe(4032, 3024), irot(0)))
    thumb = ItemSpec(thumb_id, "hvc1", "", hidden=False, payload_len=64, properties=(ispe(320, 420),))
    exif = ItemSpec(exif_id, "Exif", "", payload_len=40)
    refs = (ReferenceSpec("dimg", grid_id, tuple(t.item_id for t in tiles)),
            ReferenceSpec("thmb", thumb_id, (grid_id,)),
            ReferenceSpec("cdsc", exif_id, (grid_id,)))
    return FixtureSpec(items=(grid,) + tiles + (thumb, exif), references=refs, primary_item=grid_id,
                       major_brand="heic", compatible_brands=("mif1", "MiHE", "miaf", "MiHB", "heic"),
                       seed=seed)


_TYPES = ("hvc1", "hvc1", "hvc1", "av01", "jpeg", "Exif", "mime", "grid", "iovl")


def random_spec(seed: int, max_items: int = 8) -> FixtureSpec:
    """A random but internally consistent spec; deterministic in ``seed``."""
    rng = random.Random(seed)
    n = rng.randint(1, max_items)
    ids = rng.sample(range(1, 2000), n)
    dref = None
    if rng.random() < 0.3:
        dref = [DrefEntry()]
        if rng.random() < 0.5:
            dref.append(DrefEntry("url", f"http://example.test/{seed}/payload", False))
        if rng.random() < 0.3:
            dref.append(DrefEntry("urn", f"urn:example:{seed}", False, name=f"urn:x-heif:{seed}"))
        dref = tuple(dref)
    items = []
    for iid in ids:
        t = rng.choice(_TYPES)
        version = rng.choice((0, 1, 2, 2, 2, 3))
        if version < 2 and t not in ("mime",):
            t = "hvc1"
        placement = "idat" if rng.random() < 0.2 else "mdat"
        dri = 0
        if dref and placement == "mdat" and rng.random() < 0.3:
            dri = rng.randint(1, len(dref))
        props = []
        if t in ("hvc1", "av01", "jpeg", "grid", "iovl") and rng.random() < 0.8:
            props.append(ispe(rng.choice((64, 512, 320)), rng.choice((64, 512, 420))))
            if rng.random() < 0.3:
                props.append(irot(rng.choice((0, 90, 180, 270))))
            if rng.random() < 0.2:
                props.append(opaque_property("hvcC", rng.randbytes(rng.randint(0, 24))))
        payload = None
        if t == "grid":
            payload = grid_payload(rng.randint(2, 4), rng.randint(2, 4), rng.choice((1024, 4032)),
                                   rng.choice((768, 3024)))
        items.append(ItemSpec(
            iid, t,
            payload=payload,
            name=rng.choice(("HEVC Image", "", "Derived Image", "thumb")),
            hidden=rng.random() < 0.3,
            payload_len=rng.randint(1, 200),
            placement=placement,
            extent_count=rng.randint(1, 3),
            properties=tuple(props),
            content_type="application/rdf+xml" if t == "mime" else None,
            infe_version=version,
            data_reference_index=dri,
            extra_flags=rng.choice((0, 0, 0, 0x10, 0x100)),
        ))
    refs = []
    for _ in range(rng.randint(0, 4)):
        if n < 2:
            break
        a, *rest = rng.sample(ids, rng.randint(2, min(n, 5)))
        refs.append(ReferenceSpec(rng.choice(("dimg", "thmb", "auxl", "cdsc")), a, tuple(rest)))
    tracks = tuple(TrackSpec(tid, flags=rng.randint(0, 7), samples=rng.randint(1, 3),
                             sample_len=rng.randint(8, 64))
                   for tid in range(1, rng.randint(0, 2) + 1))
    mint = None
    internal = [it.item_id for it in items if not it.data_reference_index
                or (dref and dref[it.data_reference_index - 1].self_contained)]
    if internal and rng.random() < 0.2:
        mint = MintSpec(max(ids) + 1, rng.choice(internal), rng.choice(("correct", "corrupted")),
                        rng.choice(("scheme", "raw", "box")))
    return FixtureSpec(
        items=tuple(items),
        references=tuple(refs),
        primary_item=rng.choice(ids) if rng.random() < 0.8 else None,
        tracks=tracks,
        dref=dref,
        mint=mint,
        trailing_garbage=rng.randbytes(rng.randint(1, 64)) if rng.random() < 0.15 else b"",
        seed=seed,
    )


# -- mutations ---------------------------------------------------------------

@dataclass(frozen=True)
class FlipHidden:
    item_id: int


@dataclass(frozen=True)
class DisableTrack:
    track_id: int


@dataclass(frozen=True)
class TruncateAt:
    offset: int


@dataclass(frozen=True)
class Append:
    data: bytes


@dataclass(frozen=True)
class CorruptSize:
    box_index: int
    new_size: int = 0xFFFFFFF0


Mutation = FlipHidden | DisableTrack | TruncateAt | Append | CorruptSize


def mutate(data: bytes, mutation: Mutation) -> bytes:
    """Apply one minimal edit. Targets are located with a fresh parse."""
    from .semantics import load

    if isinstance(mutation, Append):
        return bytes(data) + mutation.data
    if isinstance(mutation, TruncateAt):
        return bytes(data[:mutation.offset])
    out = bytearray(data)
    if isinstance(mutation, CorruptSize):
        from .boxes import parse_tree
        boxes = parse_tree(data).boxes
        if not 0 <= mutation.box_index < len(boxes):
            raise IndexError(f"no top-level box {mutation.box_index}")
        struct.pack_into(">I", out, boxes[mutation.box_index].offset, mutation.new_size)
        return bytes(out)
    model = load(data)
    if isinstance(mutation, FlipHidden):
        item = model.item(mutation.item_id)
        if item is None:
            raise KeyError(f"no item {mutation.item_id}")
        out[item.infe_flags_offset + 2] ^= 0x01
        return bytes(out)
    if isinstance(mutation, DisableTrack):
        track = next((t for t in model.tracks if t.track_id == mutation.track_id), None)
        if track is None:
            raise KeyError(f"no track {mutation.track_id}")
        out[track.tkhd_flags_offset + 2] &= 0xFE
        return bytes(out)
    raise TypeError(f"unknown mutation {mutation!r}")


def dump_corpus(directory: str, specs: dict[str, FixtureSpec]) -> list[str]:
    """Write each spec to ``directory/<name>.heic``; returns the paths."""
    import os
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, spec in sorted(specs.items()):
        path = os.path.join(directory, f"{name}.heic")
        with open(path, "wb") as fh:
            fh.write(build(spec))
        paths.append(path)
    return paths
