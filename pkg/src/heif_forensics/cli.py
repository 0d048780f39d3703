"""Command-line interface.

Exit codes: 0 clean, 1 usage or I/O error, 2 input does not parse,
3 a finding at or above ``--fail-on`` was reported.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .analyzer import DEFAULT_SLACK_THRESHOLD, Severity
from .boxes import format_tree, parse_tree
from .integrity import DigestSet
from .report import ParseFatal, build_report, render_json, run_pipeline
from .semantics import ExternalData, SemanticError, detect_heif, exif_tiff_payload, item_payload

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_FINDINGS = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _tsv(*fields) -> str:
    return "\t".join("" if f is None else str(f) for f in fields)


def cmd_inspect(args) -> int:
    data = _read(args.path)
    tree = parse_tree(data)
    kind, brands = detect_heif(data)
    if not kind.is_heif:
        print(f"NotHeif: {args.path} carries no HEIF brand")
    else:
        print(f"# {kind.value} major={brands.as_dict()['major']} "
              f"compatible={','.join(brands.as_dict()['compatible'])}")
    text = format_tree(tree)
    if text:
        print(text)
    for diag in tree.diagnostics:
        print(f"! {diag.code} @{diag.offset}: {diag.message}")
    return EXIT_PARSE if tree.fatal else EXIT_OK


def cmd_analyze(args) -> int:
    data = _read(args.path)
    try:
        result = run_pipeline(data, os.path.basename(args.path), args.slack_threshold)
    except ParseFatal as exc:
        print(f"error: {args.path}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    report = build_report(result, args.path)
    if args.json:
        print(render_json(report), end="")
    else:
        _print_summary(result, report)
    if args.figure:
        from .plotting import render_layout
        render_layout(result, args.figure, title=os.path.basename(args.path))
        print(f"figure written to {args.figure}", file=sys.stderr)
    threshold = Severity.parse(args.fail_on)
    worst = result.analysis.max_severity()
    return EXIT_FINDINGS if worst is not None and worst >= threshold else EXIT_OK


def _print_summary(result, report) -> None:
    det = report["detection"]
    print(f"kind\t{det['kind']}")
    if det["brands"]:
        print(f"brands\t{det['brands']['major']}\t{','.join(det['brands']['compatible'])}")
    print(f"handler\t{report['handler']}")
    print(f"primary_item\t{report['primary_item']}")
    print(f"unreferenced_bytes\t{report['coverage']['unreferenced_bytes']}")
    print()
    print(_tsv("item_id", "type", "role", "hidden", "infe_v", "bytes", "sha256"))
    for it in report["items"]:
        d = it["digests"]
        print(_tsv(it["item_id"], it["type"], it["role_label"], int(it["hidden"]), it["infe_version"],
                   d["byte_count"] if d else "-", d["sha256"] if d else it["digest_error"]))
    if report["tracks"]:
        print()
        print(_tsv("track_id", "flags", "enabled", "samples"))
        for t in report["tracks"]:
            print(_tsv(t["track_id"], f"0x{t['flags']:06x}", int(t["enabled"]), t["sample_count"]))
    if report["mint"]:
        print()
        print(_tsv("mint_item", "status", "declared_md5", "computed_md5"))
        for m in report["mint"]:
            print(_tsv(m["item_id"], m["status"], m["declared_md5"], m["computed_md5"]))
    print()
    print(_tsv("severity", "kind", "offset", "item_id", "track_id", "message"))
    for f in report["findings"]:
        print(_tsv(f["severity"], f["kind"], f["offset"], f["item_id"], f["track_id"], f["message"]))


def cmd_extract(args) -> int:
    data = _read(args.path)
    try:
        result = run_pipeline(data, os.path.basename(args.path))
    except ParseFatal as exc:
        print(f"error: {args.path}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    model = result.model
    if args.all:
        wanted = [it.item_id for it in model.items]
    else:
        known = {it.item_id for it in model.items}
        missing = [i for i in args.item if i not in known]
        if missing:
            print(f"error: no such item(s): {missing}", file=sys.stderr)
            return EXIT_USAGE
        wanted = args.item
    os.makedirs(args.outdir, exist_ok=True)
    for iid in wanted:
        item = model.item(iid)
        safe_type = "".join(c if c.isalnum() else "_" for c in item.type) or "none"
        try:
            payload = item_payload(model, data, iid)
        except ExternalData as exc:
            print(f"notice\tEXTERNAL_DATA_REF\titem {iid} skipped: {exc}")
            continue
        except SemanticError as exc:
            print(f"warning\tSKIPPED\titem {iid}: {exc}")
            continue
        out = os.path.join(args.outdir, f"item_{iid}_{safe_type}.bin")
        with open(out, "xb") as fh:
            fh.write(payload)
        print(_tsv("wrote", out, len(payload)))
        if item.item_type == b"Exif":
            exif = os.path.join(args.outdir, f"item_{iid}_{safe_type}.exif")
            with open(exif, "xb") as fh:
                fh.write(exif_tiff_payload(payload))
            print(_tsv("wrote", exif, os.path.getsize(exif)))
    return EXIT_OK


def _digest_line(label, d: DigestSet) -> str:
    return _tsv(label, d.byte_count, d.md5.hex(), d.sha1.hex(), d.sha256.hex())


def cmd_hash(args) -> int:
    data = _read(args.path)
    print(_tsv("subject", "bytes", "md5", "sha1", "sha256"))
    try:
        result = run_pipeline(data, os.path.basename(args.path))
    except ParseFatal:
        from .integrity import hash_file
        print(_digest_line("file", hash_file(data)))
        return EXIT_PARSE
    print(_digest_line("file", result.file_digest))
    for iid, d in result.item_digests.items():
        if isinstance(d, DigestSet):
            print(_digest_line(f"item:{iid}", d))
        else:
            print(_tsv(f"item:{iid}", "-", f"unavailable: {d}"))
    for m in result.mint:
        print(_tsv(f"mint:{m.item_id}", m.status, m.declared_md5.hex() if m.declared_md5 else "-",
                   m.computed_md5.hex() if m.computed_md5 else "-"))
    return EXIT_OK


def cmd_reveal(args) -> int:
    from .rewriter import ParseFailed, same_file, write_revealed_copy
    if same_file(args.path, args.out):
        print("error: output path is the input file; evidence is never overwritten", file=sys.stderr)
        return EXIT_USAGE
    items = "all" if not args.items else [int(x) for x in args.items.split(",") if x.strip()]
    try:
        log = write_revealed_copy(args.path, args.out, items, args.enable_tracks)
    except ParseFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for change in log.changes:
        print(f"{change}\t{change.target}\t{change.ident}")
    for note in log.notes:
        print(f"# {note}")
    return EXIT_OK


def cmd_carve(args) -> int:
    from .carver import extract, open_blob, scan_all
    os.makedirs(args.outdir, exist_ok=True)
    with open_blob(args.path) as blob:
        found = scan_all(blob, workers=args.workers)
        print(_tsv("start", "end", "score", "stop_reason", "brands", "file"))
        for cand in found.candidates:
            if cand.score < args.min_score:
                print(_tsv(cand.start, cand.end, f"{cand.score:.2f}", cand.stop_reason,
                           ",".join(b.decode("latin-1") for b in cand.brands.all()), "below --min-score"))
                continue
            suffix = ".partial.heif" if cand.partial else ".heif"
            out = os.path.join(args.outdir, f"carved_{cand.start:012d}{suffix}")
            extract(blob, cand, out)
            print(_tsv(cand.start, cand.end, f"{cand.score:.2f}", cand.stop_reason,
                       ",".join(b.decode("latin-1") for b in cand.brands.all()), out))
        for cand in found.non_heif:
            print(_tsv(cand.start, cand.end, f"{cand.score:.2f}", cand.stop_reason,
                       ",".join(b.decode("latin-1") for b in cand.brands.all()), "non-HEIF, not extracted"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="heif-forensics", description="Forensic inspection of HEIF/HEIC containers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("inspect", help="print the box tree")
    s.add_argument("path")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("analyze", help="run all checks and report findings")
    s.add_argument("path")
    s.add_argument("--json", action="store_true", help="emit the JSON report")
    s.add_argument("--fail-on", default="alert", choices=[str(x) for x in Severity],
                   help="exit 3 if any finding is at or above this severity (default: alert)")
    s.add_argument("--slack-threshold", type=int, default=DEFAULT_SLACK_THRESHOLD, metavar="BYTES")
    s.add_argument("--figure", metavar="PNG", help="also write a byte-layout chart")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("extract", help="write item payloads to files")
    s.add_argument("path")
    s.add_argument("outdir")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--item", type=int, action="append", metavar="ID")
    g.add_argument("--all", action="store_true")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("hash", help="whole-file and per-item digests")
    s.add_argument("path")
    s.set_defaults(func=cmd_hash)

    s = sub.add_parser("reveal", help="write a copy with hidden flags cleared")
    s.add_argument("path")
    s.add_argument("out")
    s.add_argument("--items", help="comma-separated item ids (default: all hidden items)")
    s.add_argument("--enable-tracks", action="store_true", help="also set the enabled bit on tracks")
    s.set_defaults(func=cmd_reveal)

    s = sub.add_parser("carve", help="find and extract HEIF files in a raw blob")
    s.add_argument("path")
    s.add_argument("outdir")
    s.add_argument("--min-score", type=float, default=0.5)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_carve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
