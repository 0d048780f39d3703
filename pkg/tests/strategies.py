"""Hypothesis strategies producing internally consistent fixture specs."""

from hypothesis import strategies as st

from heif_forensics import fixtures as F

CODED = ("hvc1", "av01", "jpeg")
TYPES = CODED + ("Exif", "mime", "grid", "iovl")


@st.composite
def item_specs(draw, item_id, allow_external=False, dref_len=0):
    version = draw(st.sampled_from((0, 1, 2, 2, 3)))
    item_type = draw(st.sampled_from(TYPES)) if version >= 2 else "hvc1"
    placement = draw(st.sampled_from(("mdat", "mdat", "idat")))
    dri = 0
    if allow_external and dref_len and placement == "mdat":
        dri = draw(st.integers(0, dref_len))
    props = ()
    if item_type in CODED and draw(st.booleans()):
        props = (F.ispe(draw(st.integers(1, 8192)), draw(st.integers(1, 8192))),)
    return F.ItemSpec(
        item_id, item_type,
        name=draw(st.text(alphabet="abcXYZ _-", max_size=12)),
        hidden=draw(st.booleans()),
        payload_len=draw(st.integers(1, 300)),
        placement=placement,
        extent_count=draw(st.integers(1, 4)),
        properties=props,
        content_type="application/rdf+xml" if item_type == "mime" else None,
        infe_version=version,
        data_reference_index=dri,
        extra_flags=draw(st.sampled_from((0, 0x2, 0x10, 0x800000))),
    )


@st.composite
def fixture_specs(draw, max_items=6, trailing=True, tracks=True, external=True):
    ids = draw(st.lists(st.integers(1, 60000), min_size=1, max_size=max_items, unique=True))
    dref = None
    if external and draw(st.booleans()):
        dref = (F.DrefEntry(),)
        if draw(st.booleans()):
            dref += (F.DrefEntry("url", draw(st.from_regex(r"https://[a-z]{1,8}\.test/[a-z0-9]{0,8}",
                                                           fullmatch=True)), False),)
    items = tuple(draw(item_specs(i, allow_external=dref is not None, dref_len=len(dref or ())))
                  for i in ids)
    refs = []
    if len(ids) > 1:
        for _ in range(draw(st.integers(0, 3))):
            chosen = draw(st.lists(st.sampled_from(ids), min_size=2, max_size=len(ids), unique=True))
            refs.append(F.ReferenceSpec(draw(st.sampled_from(("dimg", "thmb", "auxl", "cdsc"))),
                                        chosen[0], tuple(chosen[1:])))
    track_specs = ()
    if tracks:
        n = draw(st.integers(0, 2))
        track_specs = tuple(F.TrackSpec(t, flags=draw(st.integers(0, 7)), samples=draw(st.integers(1, 4)),
                                        sample_len=draw(st.integers(4, 80))) for t in range(1, n + 1))
    garbage = draw(st.binary(max_size=40)) if trailing else b""
    return F.FixtureSpec(
        items=items, references=tuple(refs),
        primary_item=draw(st.one_of(st.none(), st.sampled_from(ids))),
        tracks=track_specs, dref=dref, trailing_garbage=garbage,
        seed=draw(st.integers(0, 2**31)),
    )
