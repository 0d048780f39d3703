import json
import random
import os

import pytest

from heif_forensics import fixtures as F
from heif_forensics.cli import main
from heif_forensics.integrity import hash_item
from heif_forensics.report import build_report, render_json, roundtrip, run_pipeline
from heif_forensics.semantics import load
from oracle import tool_digests


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_bytes(data)
    return str(p)


def test_inspect_minimal(tmp_path, capsys):
    p = write(tmp_path, "m.heic", F.build(F.minimal_spec()))
    assert main(["inspect", p]) == 0
    out = capsys.readouterr().out
    types = [line.split()[2] for line in out.splitlines() if not line.startswith("#")]
    assert types == ["ftyp", "meta", "hdlr", "pitm", "iloc", "iinf", "infe", "iprp", "ipco", "ispe",
                     "ipma", "mdat"]


def test_inspect_non_heif(tmp_path, capsys):
    p = write(tmp_path, "x.mp4", F.build(F.minimal_spec(major_brand="isom", compatible_brands=("mp41",))))
    assert main(["inspect", p]) == 0
    assert capsys.readouterr().out.startswith("NotHeif")
    p = write(tmp_path, "tiny", b"abc")
    assert main(["inspect", p]) == 2


def test_analyze_exit_codes(tmp_path, capsys):
    clean = write(tmp_path, "clean.heic", F.build(F.burst_spec(2)))
    hidden = write(tmp_path, "hidden.heic", F.build(F.burst_spec(2, hidden=(2,))))
    assert main(["analyze", clean]) == 0
    assert main(["analyze", hidden, "--fail-on", "alert"]) == 3
    assert main(["analyze", clean, "--fail-on", "info"]) == 0
    bad = write(tmp_path, "bad.heic", b"\x00\x01")
    assert main(["analyze", bad]) == 2
    assert main(["analyze", str(tmp_path / "missing.heic")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["analyze"])
    assert exc.value.code == 1


def test_analyze_json_and_figure(tmp_path, capsys):
    p = write(tmp_path, "h.heic", F.build(F.burst_spec(3, hidden=(3,))))
    fig = str(tmp_path / "layout.png")
    assert main(["analyze", p, "--json", "--figure", fig, "--fail-on", "alert"]) == 3
    text = capsys.readouterr().out
    report = json.loads(text)
    assert report["report_version"] == 1
    assert [f["kind"] for f in report["findings"]] == ["HIDDEN_ITEM"]
    assert roundtrip(text) == text
    with open(fig, "rb") as fh:
        assert fh.read(8) == b"\x89PNG\r\n\x1a\n"


def test_report_is_canonical_and_stable(real_file):
    data = real_file("nokia", "alpha.heic")
    a = render_json(build_report(run_pipeline(data, "alpha.heic"), "alpha.heic"))
    b = render_json(build_report(run_pipeline(data, "alpha.heic"), "alpha.heic"))
    assert a == b and roundtrip(a) == a
    keys = list(json.loads(a))
    assert keys[:3] == ["report_version", "tool_version", "input"]


def test_extract_items(tmp_path, capsys):
    spec = F.FixtureSpec(items=(F.ItemSpec(1), F.ItemSpec(2, payload_len=30), F.ItemSpec(3, "Exif", "")),
                         references=(F.ReferenceSpec("thmb", 2, (1,)),), primary_item=1)
    data = F.build(spec)
    p = write(tmp_path, "e.heic", data)
    out = tmp_path / "out"
    assert main(["extract", p, str(out), "--item", "2"]) == 0
    got = (out / "item_2_hvc1.bin").read_bytes()
    assert tool_digests(got)[2] == hash_item(load(data), data, 2).sha256.hex()
    out2 = tmp_path / "all"
    assert main(["extract", p, str(out2), "--all"]) == 0
    assert sorted(os.listdir(out2)) == ["item_1_hvc1.bin", "item_2_hvc1.bin", "item_3_Exif.bin", "item_3_Exif.exif"]
    assert (out2 / "item_3_Exif.exif").read_bytes()[:4] == b"MM\x00*"
    assert main(["extract", p, str(out2), "--item", "9"]) == 1


def test_extract_one_item_file(tmp_path):
    p = write(tmp_path, "one.heic", F.build(F.minimal_spec()))
    assert main(["extract", p, str(tmp_path / "o"), "--all"]) == 0
    assert len(os.listdir(tmp_path / "o")) == 1


def test_extract_skips_external(tmp_path, capsys):
    spec = F.minimal_spec(items=(F.ItemSpec(1, data_reference_index=1), F.ItemSpec(2)),
                          dref=(F.DrefEntry("url", "http://x.test/p", False),))
    p = write(tmp_path, "x.heic", F.build(spec))
    assert main(["extract", p, str(tmp_path / "o"), "--all"]) == 0
    assert "EXTERNAL_DATA_REF" in capsys.readouterr().out
    assert os.listdir(tmp_path / "o") == ["item_2_hvc1.bin"]


def test_hash_matches_tools(tmp_path, capsys):
    data = F.build(F.burst_spec(2))
    p = write(tmp_path, "h.heic", data)
    assert main(["hash", p]) == 0
    lines = capsys.readouterr().out.splitlines()
    file_line = next(line for line in lines if line.startswith("file\t")).split("\t")
    assert tuple(file_line[2:5]) == tool_digests(data)


def test_reveal_command(tmp_path, capsys):
    p = write(tmp_path, "r.heic", F.build(F.burst_spec(3, hidden=(2,))))
    assert main(["reveal", p, p]) == 1
    out = str(tmp_path / "r2.heic")
    assert main(["reveal", p, out]) == 0
    assert "01→00" in capsys.readouterr().out
    assert not any(i.hidden for i in load(open(out, "rb").read()).items)
    assert main(["reveal", p, str(tmp_path / "r3.heic"), "--items", "7"]) == 1


def test_carve_command(tmp_path, capsys):
    rng = random.Random(12)
    files = [F.build(F.random_spec(s)) for s in range(5)]
    blob = b""
    starts = []
    for f in files:
        blob += rng.randbytes(333)
        starts.append(len(blob))
        blob += f
    p = write(tmp_path, "disk.img", blob)
    outdir = tmp_path / "carved"
    assert main(["carve", p, str(outdir)]) == 0
    names = sorted(os.listdir(outdir))
    assert [int(n.split("_")[1].split(".")[0]) for n in names] == starts
