"""Evidence hashing and verification of embedded ``mint`` checksums."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import BinaryIO, Iterable

from .semantics import (
    ExtentOutOfFile,
    ExternalData,
    FileModel,
    SemanticError,
    UnresolvedExtent,
    iter_item_chunks,
)

__all__ = [
    "DigestSet", "MintVerification", "hash_file", "hash_stream", "hash_item",
    "hash_items", "verify_mint", "parse_md5i", "ExternalData", "ExtentOutOfFile",
]

CHUNK = 1 << 20


@dataclass(frozen=True)
class DigestSet:
    subject: str              # "file" or "item"
    byte_count: int
    md5: bytes
    sha1: bytes
    sha256: bytes
    item_id: int | None = None

    def as_dict(self) -> dict:
        return {
            "subject": self.subject,
            "item_id": self.item_id,
            "byte_count": self.byte_count,
            "md5": self.md5.hex(),
            "sha1": self.sha1.hex(),
            "sha256": self.sha256.hex(),
        }


def _digest(chunks: Iterable[bytes], subject: str, item_id: int | None = None) -> DigestSet:
    md5, sha1, sha256 = hashlib.md5(), hashlib.sha1(), hashlib.sha256()
    n = 0
    for chunk in chunks:
        md5.update(chunk)
        sha1.update(chunk)
        sha256.update(chunk)
        n += len(chunk)
    return DigestSet(subject, n, md5.digest(), sha1.digest(), sha256.digest(), item_id)


def hash_file(data: bytes) -> DigestSet:
    view = memoryview(data)
    return _digest((view[i:i + CHUNK] for i in range(0, len(view), CHUNK)), "file")


def hash_stream(fh: BinaryIO) -> DigestSet:
    return _digest(iter(lambda: fh.read(CHUNK), b""), "file")


def hash_item(model: FileModel, data: bytes, item_id: int) -> DigestSet:
    """Digest an item's extents concatenated in declared order."""
    return _digest(iter_item_chunks(model, data, item_id), "item", item_id)


def hash_items(model: FileModel, data: bytes) -> dict[int, DigestSet | SemanticError]:
    """Digest every item; items that cannot be read map to the exception."""
    out: dict[int, DigestSet | SemanticError] = {}
    for item in model.items:
        try:
            out[item.item_id] = hash_item(model, data, item.item_id)
        except SemanticError as exc:
            out[item.item_id] = exc
    return out


@dataclass(frozen=True)
class MintVerification:
    item_id: int
    declared_md5: bytes | None
    computed_md5: bytes | None
    target: tuple[int, ...]
    status: str               # match | mismatch | unresolvable
    framing: str = ""
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "declared_md5": self.declared_md5.hex() if self.declared_md5 else None,
            "computed_md5": self.computed_md5.hex() if self.computed_md5 else None,
            "target": list(self.target),
            "status": self.status,
            "framing": self.framing,
            "note": self.note,
        }


def parse_md5i(payload: bytes) -> tuple[bytes | None, str]:
    """Return (digest, framing) for a mint item payload.

    Accepted layouts: bare 16-byte digest; 4-byte scheme code ('md5 ' or
    'md5i') followed by the digest; an ``md5i`` full box wrapping the digest.
    """
    if len(payload) == 16:
        return payload, "raw"
    if len(payload) >= 20 and payload[:4] in (b"md5 ", b"md5i"):
        return payload[4:20], f"scheme:{payload[:4].decode('ascii')}"
    if len(payload) >= 28 and payload[4:8] == b"md5i":
        return payload[12:28], "box:md5i"
    return None, f"unrecognised ({len(payload)} bytes)"


def verify_mint(model: FileModel, data: bytes) -> list[MintVerification]:
    out = []
    for item in model.items:
        if item.item_type != b"mint":
            continue
        iid = item.item_id
        targets = tuple(t for r in model.references_from(iid, b"cdsc") for t in r.to_items)
        try:
            payload = b"".join(iter_item_chunks(model, data, iid))
        except SemanticError as exc:
            out.append(MintVerification(iid, None, None, targets, "unresolvable",
                                        note=f"mint payload unreadable: {exc}"))
            continue
        declared, framing = parse_md5i(payload)
        if declared is None:
            out.append(MintVerification(iid, None, None, targets, "unresolvable", framing,
                                        "payload does not hold an MD5 digest"))
            continue
        if not targets:
            out.append(MintVerification(iid, declared, None, targets, "unresolvable", framing,
                                        "no cdsc reference names what the checksum covers"))
            continue
        md5 = hashlib.md5()
        try:
            for t in targets:
                for chunk in iter_item_chunks(model, data, t):
                    md5.update(chunk)
        except SemanticError as exc:
            out.append(MintVerification(iid, declared, None, targets, "unresolvable", framing,
                                        f"target unreadable: {exc}"))
            continue
        computed = md5.digest()
        note = "computed over raw extent bytes"
        if len(targets) > 1:
            note += " of all targets concatenated in reference order"
        out.append(MintVerification(iid, declared, computed, targets,
                                    "match" if computed == declared else "mismatch", framing, note))
    return out
