import hashlib
import random
import threading

import pytest

from spanprof.dpst import NONE, DpstNode, NodeKind, SpawnSite, Tree
from spanprof.errors import CorruptFile
from spanprof.measure import UNTAGGED, WorkSegment
from spanprof.profile_io import (
    CausalRegion,
    ProfileHeader,
    ProfileWriter,
    canonicalize,
    decode_record,
    dump_text,
    encode_record,
    read_all,
    write_profile,
)
from spanprof.workloads import treesum

from trees import random_header, random_tree

HEADER = ProfileHeader(
    backend="logical",
    sites={3: SpawnSite("a.c", 12, "spawn")},
    regions={0: CausalRegion("hot", "a.c", 5, 9)},
)


def roundtrip(records, header=HEADER, tmp_path=None):
    path = tmp_path / "p.sppf"
    write_profile(path, header, records)
    return read_all(path)


def test_step_record_codec():
    rec = DpstNode(5, 2, NodeKind.STEP, 1, segments=(WorkSegment(UNTAGGED, 10),))
    payload = encode_record(rec)[4:]
    assert decode_record(payload) == rec


def test_async_record_codec():
    rec = DpstNode(2**40, 0, NodeKind.ASYNC, 3, spawn_site=3)
    assert decode_record(encode_record(rec)[4:]) == rec


def test_header_and_records_roundtrip(tmp_path):
    recs = [
        DpstNode(0, NONE, NodeKind.FINISH, 0),
        DpstNode(1, 0, NodeKind.STEP, 0, segments=(WorkSegment(0, 7), WorkSegment(UNTAGGED, 3))),
        DpstNode(2, 0, NodeKind.FINISH, 1),
        DpstNode(3, 2, NodeKind.ASYNC, 0, spawn_site=3),
    ]
    header, got = roundtrip(recs, tmp_path=tmp_path)
    assert got == recs
    assert header.sites == HEADER.sites
    assert header.regions == HEADER.regions
    assert header.backend == "logical" and header.version == 1


def test_random_trees_roundtrip(tmp_path, rng):
    for _ in range(10):
        tree = random_tree(rng, max_nodes=300)
        recs = list(tree.nodes.values())
        _, got = roundtrip(recs, header=random_header(), tmp_path=tmp_path)
        assert got == recs


def test_magic_bytes(tmp_path):
    path = write_profile(tmp_path / "p.sppf", HEADER, [DpstNode(0, NONE, NodeKind.FINISH, 0)])
    data = path.read_bytes()
    assert data[:4] == bytes([0x53, 0x50, 0x50, 0x46])
    assert data[4:8] == (1).to_bytes(4, "little")


def test_truncated_file(tmp_path):
    recs = [DpstNode(0, NONE, NodeKind.FINISH, 0),
            DpstNode(1, 0, NodeKind.STEP, 0, segments=(WorkSegment(UNTAGGED, 1),))]
    path = write_profile(tmp_path / "p.sppf", HEADER, recs)
    data = path.read_bytes()
    for cut in (3, 10, len(data) // 2, len(data) - 1, len(data) - 12):
        path.write_bytes(data[:cut])
        with pytest.raises(CorruptFile):
            read_all(path)


def test_bad_magic_and_version(tmp_path):
    path = write_profile(tmp_path / "p.sppf", HEADER, [DpstNode(0, NONE, NodeKind.FINISH, 0)])
    data = bytearray(path.read_bytes())
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CorruptFile, match="magic"):
        read_all(path)
    data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptFile, match="version"):
        read_all(path)


def test_unknown_region(tmp_path):
    recs = [DpstNode(0, NONE, NodeKind.FINISH, 0),
            DpstNode(1, 0, NodeKind.STEP, 0, segments=(WorkSegment(4, 1),))]
    with pytest.raises(CorruptFile, match="region"):
        roundtrip(recs, tmp_path=tmp_path)


def test_unknown_site(tmp_path):
    recs = [DpstNode(0, NONE, NodeKind.FINISH, 0), DpstNode(1, 0, NodeKind.ASYNC, 0, spawn_site=8)]
    with pytest.raises(CorruptFile, match="site"):
        roundtrip(recs, tmp_path=tmp_path)


def test_duplicate_node_id(tmp_path):
    recs = [DpstNode(0, NONE, NodeKind.FINISH, 0), DpstNode(0, 0, NodeKind.FINISH, 0)]
    with pytest.raises(CorruptFile, match="duplicate"):
        roundtrip(recs, tmp_path=tmp_path)


def test_concurrent_appends(tmp_path):
    n_threads, per_thread = 8, 125_000
    writer = ProfileWriter(tmp_path / "big.sppf", "logical", canonical=False)
    writer.register_site(SpawnSite("x.c", 1))

    def work(k):
        for i in range(per_thread):
            nid = k + n_threads * i
            writer.append(DpstNode(nid, 0, NodeKind.STEP, i, segments=(WorkSegment(UNTAGGED, nid % 977),)))

    threads = [threading.Thread(target=work, args=(k,)) for k in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    writer.close()
    _, recs = read_all(tmp_path / "big.sppf")
    assert len(recs) == n_threads * per_thread
    expected = sum(nid % 977 for nid in range(n_threads * per_thread))
    assert sum(r.segments[0].ticks for r in recs) == expected
    ids = sorted(r.node_id for r in recs)
    assert hashlib.sha256(str(ids).encode()).digest() == \
        hashlib.sha256(str(list(range(n_threads * per_thread))).encode()).digest()


def test_canonical_form_ignores_input_order(rng):
    tree = random_tree(rng, max_nodes=400)
    recs = list(tree.nodes.values())
    h1, c1 = canonicalize(random_header(), recs)
    shuffled = recs[:]
    rng.shuffle(shuffled)
    h2, c2 = canonicalize(random_header(), shuffled)
    assert c1 == c2
    assert c1[0].node_id == 0 and c1[0].parent_id == NONE
    # canonical ids are a relabelling: tree shape unchanged
    assert Tree(c1).count(NodeKind.STEP) == tree.count(NodeKind.STEP)


def test_demo_file_parses(tmp_path, profile_run):
    path = profile_run(treesum(depth=6, base=8), workers=3)
    header, recs = read_all(path)
    assert {r.label for r in header.regions.values()} == {"create_tree", "serial_sum"}
    Tree(recs)
    text = dump_text(path)
    assert text.startswith("# spanprof profile v1 backend=logical")
    assert len([ln for ln in text.splitlines() if not ln.startswith("#")]) == len(recs)
