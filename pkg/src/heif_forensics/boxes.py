"""Generic ISOBMFF box lexer.

Turns a byte buffer into a tree of boxes with exact byte accounting. Nothing
here knows what a HEIF item is; payload interpretation lives in
:mod:`heif_forensics.semantics`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

MAX_DEPTH = 32

# Boxes whose payload is a sequence of child boxes (possibly after a prefix).
CONTAINER_BOXES = frozenset(
    {b"meta", b"iinf", b"iprp", b"ipco", b"iref", b"dinf",
     b"moov", b"trak", b"mdia", b"minf", b"stbl", b"edts"}
)

# Boxes whose payload starts with version(1) + flags(3).
FULL_BOXES = frozenset(
    {b"meta", b"hdlr", b"pitm", b"iloc", b"iinf", b"infe", b"iref", b"tkhd",
     b"dref", b"url ", b"urn ", b"ipma", b"ispe", b"pixi", b"auxC", b"mvhd",
     b"mdhd", b"stsd", b"stts", b"stsc", b"stsz", b"stco", b"co64", b"stss",
     b"elst", b"vmhd", b"nmhd", b"md5i"}
)

# Payload of these boxes is raw media; it is only "accounted" when an item
# extent or sample chunk points into it.
DATA_BOXES = frozenset({b"mdat", b"idat", b"free", b"skip"})


class BoxError(ValueError):
    """Base class for header-level lexing failures."""

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class TruncatedBox(BoxError):
    pass


class SizeOverflow(BoxError):
    def __init__(self, message: str, offset: int, header: "BoxHeader"):
        super().__init__(message, offset)
        self.header = header


class InvalidBoxSize(BoxError):
    pass


def fourcc_text(code: bytes) -> str:
    """Render a fourcc as text; non-printable bytes become ``\\xNN``."""
    out = []
    for b in code:
        if 0x20 <= b < 0x7F and b != 0x5C:
            out.append(chr(b))
        else:
            out.append("\\x%02x" % b)
    return "".join(out)


def fourcc_bytes(text: str) -> bytes:
    """Inverse of :func:`fourcc_text`."""
    raw = text.encode("latin-1").decode("unicode_escape").encode("latin-1")
    if len(raw) != 4:
        raise ValueError(f"fourcc must be exactly 4 bytes: {text!r}")
    return raw


@dataclass(frozen=True)
class Diagnostic:
    code: str
    offset: int
    message: str
    item_id: int | None = None

    def as_dict(self) -> dict:
        return {"code": self.code, "offset": self.offset, "item_id": self.item_id,
                "message": self.message}


@dataclass(frozen=True)
class BoxHeader:
    offset: int
    declared_size: int
    fourcc: bytes
    header_len: int
    payload_start: int
    payload_end: int
    usertype: bytes | None = None
    largesize: bool = False

    @property
    def end(self) -> int:
        return self.payload_end

    @property
    def size(self) -> int:
        return self.payload_end - self.offset

    @property
    def type(self) -> str:
        return fourcc_text(self.fourcc)


@dataclass(frozen=True)
class FullBoxHeader:
    version: int
    flags: int


@dataclass(frozen=True)
class BoxNode:
    header: BoxHeader
    full: FullBoxHeader | None = None
    children: tuple["BoxNode", ...] = ()
    raw_spans: tuple[tuple[int, int], ...] = ()
    depth: int = 0
    truncated: bool = False

    @property
    def type(self) -> bytes:
        return self.header.fourcc

    @property
    def offset(self) -> int:
        return self.header.offset

    @property
    def end(self) -> int:
        return self.header.end

    @property
    def body_start(self) -> int:
        """First payload byte after the version/flags field, if any."""
        return self.header.payload_start + (4 if self.full is not None else 0)

    def body(self, data: bytes) -> bytes:
        return bytes(data[self.body_start:self.header.payload_end])

    def find(self, fourcc: bytes) -> "BoxNode | None":
        for child in self.children:
            if child.type == fourcc:
                return child
        return None

    def find_all(self, fourcc: bytes) -> list["BoxNode"]:
        return [c for c in self.children if c.type == fourcc]

    def walk(self) -> Iterator["BoxNode"]:
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True)
class BoxTree:
    boxes: tuple[BoxNode, ...]
    diagnostics: tuple[Diagnostic, ...]
    file_len: int
    # Byte ranges at top level that did not lex as boxes.
    unparsed: tuple[tuple[int, int], ...] = ()
    fatal: bool = False

    def walk(self) -> Iterator[BoxNode]:
        for box in self.boxes:
            yield from box.walk()

    def find(self, fourcc: bytes) -> BoxNode | None:
        for box in self.boxes:
            if box.type == fourcc:
                return box
        return None

    def find_all(self, fourcc: bytes) -> list[BoxNode]:
        return [b for b in self.boxes if b.type == fourcc]

    def find_path(self, *path: bytes) -> BoxNode | None:
        nodes: Sequence[BoxNode] = self.boxes
        found = None
        for fourcc in path:
            found = next((n for n in nodes if n.type == fourcc), None)
            if found is None:
                return None
            nodes = found.children
        return found

    @property
    def max_depth_hit(self) -> bool:
        return any(d.code == "DEPTH_LIMIT" for d in self.diagnostics)


def parse_box_header(data: bytes, offset: int, scope_end: int) -> BoxHeader:
    """Read one box header at ``offset``.

    Raises :class:`TruncatedBox` when fewer than 8 bytes remain,
    :class:`InvalidBoxSize` when the size field cannot describe a box and
    :class:`SizeOverflow` (carrying the resolved header) when the box runs past
    ``scope_end``.
    """
    scope_end = min(scope_end, len(data))
    if offset + 8 > scope_end:
        raise TruncatedBox(f"{scope_end - offset} bytes left for a box header", offset)
    size, fourcc = struct.unpack_from(">I4s", data, offset)
    header_len = 8
    largesize = False
    if size == 1:
        if offset + 16 > scope_end:
            raise TruncatedBox("no room for 64-bit largesize", offset)
        (size,) = struct.unpack_from(">Q", data, offset + 8)
        header_len = 16
        largesize = True
    usertype = None
    if fourcc == b"uuid":
        if offset + header_len + 16 > scope_end:
            raise TruncatedBox("no room for uuid usertype", offset)
        usertype = bytes(data[offset + header_len:offset + header_len + 16])
        header_len += 16

    if size == 0:
        end = scope_end
    else:
        if size < header_len:
            raise InvalidBoxSize(f"box size {size} smaller than its header", offset)
        end = offset + size
    header = BoxHeader(
        offset=offset,
        declared_size=size,
        fourcc=bytes(fourcc),
        header_len=header_len,
        payload_start=offset + header_len,
        payload_end=end,
        usertype=usertype,
        largesize=largesize,
    )
    if end > scope_end:
        raise SizeOverflow(
            f"'{fourcc_text(fourcc)}' ends at {end}, beyond scope end {scope_end}",
            offset, header,
        )
    return header


def _full_header(data: bytes, header: BoxHeader) -> FullBoxHeader | None:
    if header.payload_start + 4 > header.payload_end:
        return None
    version = data[header.payload_start]
    flags = int.from_bytes(data[header.payload_start + 1:header.payload_start + 4], "big")
    return FullBoxHeader(version, flags)


def _is_full_box(data: bytes, header: BoxHeader) -> bool:
    if header.fourcc != b"meta":
        return header.fourcc in FULL_BOXES
    # QuickTime writes 'meta' as a plain box; its first child then sits
    # directly at the payload start.
    p = header.payload_start
    return not (p + 8 <= header.payload_end and data[p + 4:p + 8] == b"hdlr")


def _children_start(data: bytes, header: BoxHeader, full: FullBoxHeader | None) -> int:
    start = header.payload_start + (4 if full is not None else 0)
    if header.fourcc == b"iinf" and full is not None:
        start += 2 if full.version == 0 else 4
    return min(start, header.payload_end)


def _parse_scope(data: bytes, start: int, end: int, depth: int,
                 diags: list[Diagnostic]) -> tuple[list[BoxNode], list[tuple[int, int]]]:
    """Lex boxes in [start, end). Returns nodes and leftover byte spans."""
    nodes: list[BoxNode] = []
    leftovers: list[tuple[int, int]] = []
    pos = start
    while pos < end:
        truncated = False
        try:
            header = parse_box_header(data, pos, end)
        except SizeOverflow as exc:
            header = exc.header
            header = BoxHeader(
                header.offset, header.declared_size, header.fourcc,
                min(header.header_len, end - pos), min(header.payload_start, end), end,
                header.usertype, header.largesize,
            )
            diags.append(Diagnostic("SIZE_OVERFLOW", pos, str(exc)))
            truncated = True
        except TruncatedBox as exc:
            diags.append(Diagnostic("TRUNCATED_BOX", pos, str(exc)))
            leftovers.append((pos, end))
            break
        except InvalidBoxSize as exc:
            diags.append(Diagnostic("INVALID_BOX_SIZE", pos, str(exc)))
            leftovers.append((pos, end))
            break

        nodes.append(_build_node(data, header, depth, diags, truncated))
        pos = header.end
    return nodes, leftovers


def _build_node(data: bytes, header: BoxHeader, depth: int,
                diags: list[Diagnostic], truncated: bool) -> BoxNode:
    full = _full_header(data, header) if _is_full_box(data, header) else None
    if header.fourcc not in CONTAINER_BOXES:
        raw = ((header.payload_start, header.payload_end),) if header.payload_end > header.payload_start else ()
        return BoxNode(header, full, (), raw, depth, truncated)
    if depth + 1 >= MAX_DEPTH:
        diags.append(Diagnostic("DEPTH_LIMIT", header.offset,
                                f"nesting deeper than {MAX_DEPTH} not followed"))
        raw = ((header.payload_start, header.payload_end),) if header.payload_end > header.payload_start else ()
        return BoxNode(header, full, (), raw, depth, truncated)

    child_start = _children_start(data, header, full)
    children, leftovers = _parse_scope(data, child_start, header.payload_end, depth + 1, diags)
    raw: list[tuple[int, int]] = []
    if child_start > header.payload_start:
        raw.append((header.payload_start, child_start))
    raw.extend(leftovers)
    return BoxNode(header, full, tuple(children), tuple(raw), depth, truncated)


def parse_tree(data: bytes) -> BoxTree:
    """Lex ``data`` into a box tree. Never raises for malformed input."""
    diags: list[Diagnostic] = []
    n = len(data)
    if n < 8:
        diags.append(Diagnostic("NO_BOX", 0, f"{n} bytes cannot hold a box header"))
        unparsed = ((0, n),) if n else ()
        return BoxTree((), tuple(diags), n, unparsed, fatal=True)
    nodes, leftovers = _parse_scope(data, 0, n, 0, diags)
    fatal = not nodes
    return BoxTree(tuple(nodes), tuple(diags), n, tuple(leftovers), fatal)


def iter_spans(node: BoxNode) -> Iterator[tuple[int, int, str, BoxNode]]:
    """Yield (start, end, label, node) for the header and raw payload spans of
    ``node`` and its descendants. Together with the child spans these tile
    every box exactly."""
    h = node.header
    yield h.offset, h.payload_start, "header", node
    for start, end in node.raw_spans:
        yield start, end, "payload", node
    for child in node.children:
        yield from iter_spans(child)


@dataclass(frozen=True)
class Region:
    start: int
    end: int
    label: str

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class CoverageMap:
    file_len: int
    accounted: tuple[Region, ...]
    unreferenced: tuple[Region, ...] = field(default=())

    @property
    def unreferenced_bytes(self) -> int:
        return sum(r.length for r in self.unreferenced)


def _merge(ranges: Iterable[tuple[int, int, str]]) -> list[Region]:
    merged: list[Region] = []
    for start, end, label in sorted(ranges):
        if end <= start:
            continue
        if merged and start <= merged[-1].end:
            last = merged[-1]
            if end > last.end:
                lab = last.label if last.label == label else f"{last.label}+{label}"
                merged[-1] = Region(last.start, end, lab)
            continue
        merged.append(Region(start, end, label))
    return merged


def compute_coverage(tree: BoxTree, extents: Iterable[tuple[int, int]] = (),
                     extra: Iterable[tuple[int, int, str]] = ()) -> CoverageMap:
    """Build a coverage map of ``tree``.

    Box headers and the payload of metadata boxes count as accounted; payload
    of data boxes (mdat, idat, free, skip) only counts where ``extents`` (item
    extents) or ``extra`` (e.g. track sample chunks) point into it. A box whose
    declared size overran its scope vouches for none of its own bytes.
    """
    n = tree.file_len
    ranges: list[tuple[int, int, str]] = []
    for box in tree.boxes:
        for start, end, label, node in iter_spans(box):
            if node.truncated and (label == "header" or not node.children):
                continue
            if label == "payload" and node.type in DATA_BOXES and not node.children:
                continue
            ranges.append((start, min(end, n), "header" if label == "header" else "payload"))
    for start, end in extents:
        ranges.append((max(0, start), min(end, n), "item"))
    for start, end, label in extra:
        ranges.append((max(0, start), min(end, n), label))
    accounted = _merge(ranges)

    gaps: list[Region] = []
    pos = 0
    for region in accounted:
        if region.start > pos:
            gaps.append(Region(pos, region.start, "unreferenced"))
        pos = max(pos, region.end)
    if pos < n:
        gaps.append(Region(pos, n, "unreferenced"))
    return CoverageMap(n, tuple(accounted), tuple(gaps))


def format_tree(tree: BoxTree) -> str:
    lines = []
    for node in tree.walk():
        h = node.header
        extra = ""
        if node.full is not None:
            extra = f" v{node.full.version} flags=0x{node.full.flags:06x}"
        if node.truncated:
            extra += " [truncated]"
        lines.append(f"{'  ' * node.depth}{h.offset:>10}  {h.size:>10}  {h.type}{extra}")
    return "\n".join(lines)
