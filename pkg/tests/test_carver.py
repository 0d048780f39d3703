import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from heif_forensics import fixtures as F
from heif_forensics.carver import (
    CHUNK_OVERLAP,
    extract,
    find_signatures,
    open_blob,
    scan,
    scan_all,
)
from heif_forensics.semantics import load


def embed(pre, file, post):
    return pre + file + post


def test_single_planted_file():
    rng = random.Random(0)
    f = F.build(F.minimal_spec())
    blob = embed(rng.randbytes(1024), f, rng.randbytes(1024))
    (c,) = scan(blob)
    assert (c.start, c.end) == (1024, 1024 + len(f))
    assert c.score >= 0.9 and c.boxes_walked == 3 and c.has_pict_meta


def test_zeros_and_empty():
    assert scan(b"\x00" * 65536) == []
    assert scan(b"") == []


def test_clean_end_scores_full():
    f = F.build(F.minimal_spec())
    (c,) = scan(f)
    assert c.stop_reason == "clean_end" and c.score == pytest.approx(1.0)
    (c,) = scan(f + b"\x00" * 512)
    assert c.stop_reason == "clean_end"


def test_non_heif_goes_to_side_list():
    f = F.build(F.minimal_spec(major_brand="isom", compatible_brands=("mp41",)))
    res = scan_all(b"\x11" * 100 + f)
    assert res.candidates == []
    assert [c.start for c in res.non_heif] == [100]


def test_adjacent_files_both_found():
    a, b = F.build(F.minimal_spec(seed=1)), F.build(F.burst_spec(2, seed=2))
    cands = scan(a + b)
    assert [(c.start, c.end, c.stop_reason) for c in cands] == [(0, len(a), "clean_end"),
                                                               (len(a), len(a) + len(b), "clean_end")]


def test_truncated_candidate_is_partial():
    data, layout = F.build_with_layout(F.burst_spec(3, seed=3))
    mid = (layout.mdat_span[0] + layout.mdat_span[1]) // 2
    blob = b"\x22" * 50 + data[:mid]
    (c,) = scan(blob)
    assert c.partial and c.stop_reason == "scope_exhausted" and c.end == len(blob)


def test_size_zero_mdat_caps_score():
    f = bytearray(F.build(F.minimal_spec()))
    from heif_forensics.boxes import parse_tree
    mdat = parse_tree(bytes(f)).find(b"mdat")
    struct.pack_into(">I", f, mdat.offset, 0)
    (c,) = scan(bytes(f))
    assert c.open_ended and c.score <= 0.8


def test_extract_round_trip(tmp_path):
    rng = random.Random(5)
    spec = F.apple_grid_spec(rows=2, cols=3, seed=5)
    f = F.build(spec)
    blob = rng.randbytes(3000) + f + rng.randbytes(77)
    (c,) = scan(blob)
    dest = tmp_path / "out.heic"
    assert extract(blob, c, str(dest)) == len(f)
    got = dest.read_bytes()
    assert got == f
    a, b = load(f), load(got)
    assert [(i.item_id, i.hidden, i.item_type) for i in a.items] == [(i.item_id, i.hidden, i.item_type) for i in b.items]
    with pytest.raises(FileExistsError):
        extract(blob, c, str(dest))


def test_open_blob_maps_file(tmp_path):
    f = F.build(F.minimal_spec())
    p = tmp_path / "disk.img"
    p.write_bytes(b"\x00" * 4096 + f)
    with open_blob(str(p)) as blob:
        assert [c.start for c in scan(blob)] == [4096]
    empty = tmp_path / "empty.img"
    empty.write_bytes(b"")
    with open_blob(str(empty)) as blob:
        assert scan(blob) == []


@settings(max_examples=80, deadline=None)
@given(st.integers(12, 200), st.integers(0, 400), st.integers(1, 4))
def test_chunk_boundaries_never_lose_hits(chunk, pos, workers):
    blob = bytearray(random.Random(pos).randbytes(600).replace(b"ftyp", b"xxxx"))
    blob[pos:pos + 4] = b"ftyp"
    hits = find_signatures(bytes(blob), chunk_size=chunk, workers=workers)
    assert hits == [pos]


def test_overlap_contract():
    assert CHUNK_OVERLAP == 8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_planted_recall_and_no_overlap(seed):
    rng = random.Random(seed)
    blob = bytearray(rng.randbytes(200_000))
    planted = []
    for k in range(5):
        f = F.build(F.random_spec(seed * 10 + k))
        off = k * 40_000 + rng.randint(0, 40_000 - len(f) - 1)
        blob[off:off + len(f)] = f
        planted.append(off)
    cands = scan(bytes(blob), chunk_size=16_384, workers=2)
    assert planted == [c.start for c in cands if c.start in planted]
    for c in cands:
        assert blob[c.start + 4:c.start + 8] == b"ftyp"
    for a, b in zip(cands, cands[1:]):
        assert a.end <= b.start
