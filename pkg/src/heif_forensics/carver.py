"""Signature-and-structure carving of HEIF files out of raw byte blobs.

There is no magic number at offset 0, so the anchor is the ASCII ``ftyp``
that must sit four bytes into the first box. Each hit is validated by parsing
the brands and walking the chain of top-level boxes that follows.
"""

from __future__ import annotations

import mmap
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import BinaryIO, Iterator

from .semantics import Brands, HeifKind, classify_brands, parse_ftyp

SIGNATURE = b"ftyp"
CHUNK_OVERLAP = 8
DEFAULT_CHUNK = 16 << 20

W_BRAND = 0.4
W_PICT = 0.3
W_CHAIN = 0.2
W_CLEAN = 0.1
OPEN_ENDED_CAP = 0.8
MIN_CHAIN = 3

# Four-character codes that are not alphanumeric but do occur at top level.
_FOURCC_OK = set(b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789 ")
_FOURCC_WHITELIST = {b"\xa9too", b"\xa9nam", b"\xa9day", b"\xa9cmt"}
# Only these may run past the end of the blob; an arbitrary printable code
# with a huge size is far more likely to be noise than a cut-off file.
_TOP_LEVEL = frozenset({b"meta", b"moov", b"mdat", b"free", b"skip", b"uuid", b"moof",
                        b"mfra", b"meco", b"idat", b"wide", b"pdin", b"styp", b"sidx"})


@dataclass(frozen=True)
class CarveCandidate:
    start: int
    end: int
    brands: Brands
    kind: HeifKind
    score: float
    boxes_walked: int
    stop_reason: str           # clean_end | invalid_box | scope_exhausted
    has_pict_meta: bool = False
    open_ended: bool = False

    @property
    def heif(self) -> bool:
        return self.kind.is_heif

    @property
    def partial(self) -> bool:
        return self.stop_reason == "scope_exhausted"

    @property
    def length(self) -> int:
        return self.end - self.start

    def as_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "length": self.length,
            "brands": self.brands.as_dict(),
            "kind": self.kind.value,
            "score": round(self.score, 3),
            "boxes_walked": self.boxes_walked,
            "stop_reason": self.stop_reason,
            "partial": self.partial,
        }


@dataclass(frozen=True)
class ScanResult:
    candidates: list[CarveCandidate]
    non_heif: list[CarveCandidate]


def _valid_fourcc(code: bytes) -> bool:
    return code in _FOURCC_WHITELIST or all(b in _FOURCC_OK for b in code)


def find_signatures(blob, chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> list[int]:
    """Offsets of every ``ftyp`` occurrence, searched in chunks that overlap
    by :data:`CHUNK_OVERLAP` bytes so no hit straddling a boundary is lost."""
    n = len(blob)
    chunk_size = max(chunk_size, CHUNK_OVERLAP + 1)
    bounds = [(a, min(a + chunk_size + CHUNK_OVERLAP, n)) for a in range(0, n, chunk_size)]

    def search(bound: tuple[int, int]) -> list[int]:
        a, b = bound
        hits, pos = [], blob.find(SIGNATURE, a, b)
        while pos != -1:
            hits.append(pos)
            pos = blob.find(SIGNATURE, pos + 1, b)
        return hits

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(search, bounds))
    else:
        parts = [search(b) for b in bounds]
    return sorted({p for part in parts for p in part})


def _meta_handler(blob, start: int, end: int) -> bytes | None:
    # Full-box meta puts hdlr after version/flags; QuickTime-style does not.
    for skip in (4, 0):
        h = start + skip
        if h + 8 + 4 + 8 > end:
            continue
        if blob[h + 4:h + 8] == b"hdlr":
            return bytes(blob[h + 16:h + 20])
    return None


def _validate(blob, sig: int) -> CarveCandidate | None:
    n = len(blob)
    start = sig - 4
    if start < 0:
        return None
    size = struct.unpack_from(">I", blob, start)[0]
    if size < 16 or (size - 16) % 4 or start + size > n:
        return None
    brands = parse_ftyp(bytes(blob[start:start + size]), 8, size)
    kind = classify_brands(brands)

    pos = start + size
    walked = 1
    pict = False
    open_ended = False
    stop = "invalid_box"
    while True:
        if pos == n:
            stop = "clean_end"
            break
        if n - pos < 8:
            stop = "clean_end" if not any(blob[pos:n]) else "scope_exhausted"
            break
        head = bytes(blob[pos:pos + 8])
        if head == b"\x00" * 8 or head[4:8] == SIGNATURE:
            stop = "clean_end"
            break
        bsize, code = struct.unpack_from(">I4s", head)
        if not _valid_fourcc(code):
            break
        hlen = 8
        if bsize == 1:
            if n - pos < 16:
                stop = "scope_exhausted"
                pos = n
                break
            bsize = struct.unpack_from(">Q", blob, pos + 8)[0]
            hlen = 16
            if bsize < 16:
                break
        elif bsize == 0:
            if code not in _TOP_LEVEL:
                break
            open_ended = True
            walked += 1
            if code == b"meta" and _meta_handler(blob, pos + 8, n) == b"pict":
                pict = True
            pos = n
            stop = "scope_exhausted"
            break
        elif bsize < 8:
            break
        if pos + bsize > n:
            # Declared beyond the blob: keep what is there, flag as partial.
            if code not in _TOP_LEVEL:
                break
            walked += 1
            pos = n
            stop = "scope_exhausted"
            break
        if code == b"meta" and _meta_handler(blob, pos + hlen, pos + bsize) == b"pict":
            pict = True
        walked += 1
        pos += bsize

    score = 0.0
    if kind.is_heif:
        score += W_BRAND
    if pict:
        score += W_PICT
    if walked >= MIN_CHAIN:
        score += W_CHAIN
    if stop == "clean_end":
        score += W_CLEAN
    if open_ended:
        score = min(score, OPEN_ENDED_CAP)
    return CarveCandidate(start, pos, brands, kind, round(score, 6), walked, stop, pict, open_ended)


def _suppress(cands: list[CarveCandidate]) -> list[CarveCandidate]:
    kept: list[CarveCandidate] = []
    for c in sorted(cands, key=lambda c: (-c.score, c.start)):
        if all(c.end <= k.start or c.start >= k.end for k in kept):
            kept.append(c)
    return sorted(kept, key=lambda c: c.start)


def scan_all(blob, chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> ScanResult:
    heif, other = [], []
    for sig in find_signatures(blob, chunk_size, workers):
        cand = _validate(blob, sig)
        if cand is None:
            continue
        (heif if cand.heif else other).append(cand)
    return ScanResult(_suppress(heif), _suppress(other))


def scan(blob, chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> list[CarveCandidate]:
    """HEIF candidates found in ``blob``, non-overlapping, in offset order."""
    return scan_all(blob, chunk_size, workers).candidates


@contextmanager
def open_blob(path: str) -> Iterator:
    """Read-only memory map of ``path`` (empty files yield ``b''``)."""
    with open(path, "rb") as fh:
        if os.fstat(fh.fileno()).st_size == 0:
            yield b""
            return
        mm = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
        try:
            yield mm
        finally:
            mm.close()


def extract(blob, candidate: CarveCandidate, destination: str | BinaryIO) -> int:
    """Write ``blob[start:end]`` verbatim. Paths are created exclusively."""
    data = blob[candidate.start:candidate.end]
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "xb") as fh:
            written = fh.write(data)
    else:
        written = destination.write(data)
    if written != candidate.end - candidate.start:
        raise OSError(f"short write: {written} of {candidate.end - candidate.start} bytes")
    return written
