"""Working copies with hidden/disabled flags cleared.

Only the hidden bit (0x1 of an ``infe`` flags field) and, optionally, the
enabled bit (0x1 of a ``tkhd`` flags field) are ever touched. All other
bytes, including the other flag bits, are left as they were.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable

from .boxes import parse_tree
from .semantics import FileModel, build_file_model


class ParseFailed(ValueError):
    pass


@dataclass(frozen=True)
class Change:
    offset: int
    old: int
    new: int
    target: str          # "infe" or "tkhd"
    ident: int           # item_id or track_id

    def as_dict(self) -> dict:
        return {"offset": self.offset, "old": self.old, "new": self.new,
                "target": self.target, "id": self.ident}

    def __str__(self) -> str:
        return f"{self.offset}: {self.old:02x}→{self.new:02x}"


@dataclass(frozen=True)
class ChangeLog:
    changes: tuple[Change, ...] = ()
    notes: tuple[str, ...] = field(default=())

    @property
    def nothing_to_reveal(self) -> bool:
        return not self.changes

    def as_dict(self) -> dict:
        return {"changes": [c.as_dict() for c in self.changes], "notes": list(self.notes)}

    def lines(self) -> list[str]:
        return [str(c) for c in self.changes]


def reveal_hidden(data: bytes, items: str | Iterable[int] = "all",
                  also_enable_tracks: bool = False,
                  model: FileModel | None = None) -> tuple[bytes, ChangeLog]:
    """Return a copy of ``data`` with the hidden bit cleared on selected items."""
    if model is None:
        tree = parse_tree(data)
        if tree.fatal:
            raise ParseFailed("input does not parse as a box structure")
        model = build_file_model(tree, data)
    if not model.items and not model.tracks:
        raise ParseFailed("no items or tracks found")

    if items == "all":
        selected = None
    else:
        selected = set(items)
        unknown = selected - {i.item_id for i in model.items}
        if unknown:
            raise ValueError(f"no such item(s): {sorted(unknown)}")

    out = bytearray(data)
    changes: list[Change] = []
    notes: list[str] = []
    for item in model.items:
        if not item.hidden or (selected is not None and item.item_id not in selected):
            continue
        pos = item.infe_flags_offset + 2
        old = out[pos]
        out[pos] = old & 0xFE
        changes.append(Change(pos, old, out[pos], "infe", item.item_id))
        if item.item_id == model.primary_item:
            notes.append(f"item {item.item_id} is the primary item; the standard forbids hiding it")
    if also_enable_tracks:
        for track in model.tracks:
            if track.enabled:
                continue
            pos = track.tkhd_flags_offset + 2
            old = out[pos]
            out[pos] = old | 0x01
            changes.append(Change(pos, old, out[pos], "tkhd", track.track_id))
    if not changes:
        notes.append("nothing to reveal")
    return bytes(out), ChangeLog(tuple(changes), tuple(notes))


def same_file(a: str, b: str) -> bool:
    if os.path.exists(a) and os.path.exists(b):
        return os.path.samefile(a, b)
    return os.path.realpath(a) == os.path.realpath(b)


def write_revealed_copy(src: str, dst: str, items: str | Iterable[int] = "all",
                        also_enable_tracks: bool = False) -> ChangeLog:
    """Read ``src``, write the revealed copy to ``dst``. Refuses ``dst == src``."""
    if same_file(src, dst):
        raise ValueError("refusing to overwrite the evidence file; choose a different output path")
    with open(src, "rb") as fh:
        data = fh.read()
    out, log = reveal_hidden(data, items, also_enable_tracks)
    with open(dst, "xb") as fh:
        fh.write(out)
    return log
