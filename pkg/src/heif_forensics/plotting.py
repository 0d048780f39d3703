"""Byte-layout chart: top-level boxes, item extents and unreferenced regions."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from .boxes import fourcc_text  # noqa: E402

_BOX_COLOURS = {
    b"ftyp": "#4c72b0",
    b"meta": "#55a868",
    b"moov": "#8172b2",
    b"mdat": "#ccb974",
    b"free": "#bbbbbb",
    b"skip": "#bbbbbb",
}
_HIDDEN = "#c44e52"
_VISIBLE = "#64b5cd"
_SLACK = "#d62728"


def render_layout(result, path: str, title: str | None = None) -> str:
    """Draw the layout of an analysed file to ``path`` (format from suffix)."""
    model, coverage = result.model, result.coverage
    n = max(model.file_len, 1)
    fig, ax = plt.subplots(figsize=(11, 3.2))

    for box in model.tree.boxes:
        colour = _BOX_COLOURS.get(box.type, "#937860")
        ax.broken_barh([(box.offset, box.end - box.offset)], (2.1, 0.8),
                       facecolors=colour, edgecolors="black", linewidth=0.5)
        if (box.end - box.offset) / n > 0.06:
            ax.text(box.offset + (box.end - box.offset) / 2, 2.5, fourcc_text(box.type),
                    ha="center", va="center", fontsize=8)

    floor = n * 0.003   # keep tiny evidence regions visible at file scale
    for item in model.items:
        spans = [(s, max(e - s, floor) if item.hidden else e - s)
                 for ext in item.extents for s, e in ext.spans]
        if spans:
            ax.broken_barh(spans, (1.1, 0.8), facecolors=_HIDDEN if item.hidden else _VISIBLE,
                           edgecolors="black", linewidth=0.3)
    for track in model.tracks:
        spans = [(s, e - s) for s, e in track.chunks]
        if spans:
            ax.broken_barh(spans, (1.1, 0.8), facecolors="#8172b2" if track.enabled else _HIDDEN,
                           edgecolors="black", linewidth=0.3, alpha=0.7)

    gaps = [(r.start, max(r.end - r.start, floor)) for r in coverage.unreferenced]
    if gaps:
        ax.broken_barh(gaps, (0.1, 0.8), facecolors=_SLACK)

    ax.set_xlim(0, n)
    ax.set_ylim(0, 3)
    ax.set_yticks([0.5, 1.5, 2.5], ["unreferenced", "items / samples", "boxes"])
    ax.set_xlabel("file offset (bytes)")
    ax.set_title(title or f"{model.kind.value}, {model.file_len} bytes, "
                 f"{coverage.unreferenced_bytes} unreferenced")
    ax.legend(handles=[Patch(color=_VISIBLE, label="visible item"),
                       Patch(color=_HIDDEN, label="hidden item / disabled track"),
                       Patch(color=_SLACK, label="unreferenced bytes")],
              loc="upper center", bbox_to_anchor=(0.5, -0.3), ncol=3, fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
