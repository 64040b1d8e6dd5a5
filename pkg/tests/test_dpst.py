import dataclasses
import itertools
import random

import pytest

from spanprof.dpst import NONE, DpstBuilder, DpstNode, NodeKind, Tree, may_happen_in_parallel
from spanprof.errors import CorruptFile, EmptySegments, NoOpenFinish, RootAlreadyExists, UnknownNode
from spanprof.measure import UNTAGGED, WorkSegment
from spanprof.oracle import parallel_by_schedule

from trees import random_tree

W = lambda ticks, region=UNTAGGED: [WorkSegment(region, ticks)]  # noqa: E731


def replay_treesum_half():
    """Hand replay of the tree-sum program with BASE = n/2 and work everywhere."""
    b = DpstBuilder()
    main = b.open_root()
    ids = {"F0": b.root_id}
    ids["S0"] = b.on_step(main, W(40, 0))
    ids["F1"], ids["A0"], t0 = b.on_spawn(main, 0)
    ids["S1"] = b.on_step(main, W(1))            # main: between spawn and sync
    ids["S2"] = b.on_step(t0, W(1))              # compute_tree_sum(root) entry
    ids["F2"], ids["A1"], t1 = b.on_spawn(t0, 1)
    ids["S4"] = b.on_step(t0, W(1))              # if (n->right)
    f, ids["A2"], t2 = b.on_spawn(t0, 2)
    assert f is None
    ids["S7"] = b.on_step(t0, W(1))              # before sync
    ids["S5"] = b.on_step(t1, W(20, 1))
    ids["S6"] = b.on_step(t2, W(20, 1))
    b.close_task(t1)
    b.close_task(t2)
    assert b.on_sync(t0) == ids["F2"]
    ids["S8"] = b.on_step(t0, W(1))              # *sum = left + right
    b.close_task(t0)
    assert b.on_sync(main) == ids["F1"]
    ids["S9"] = b.on_step(main, W(1))            # print
    b.close_root(main)
    return b.tree(), ids


class TestConstruction:
    def test_open_root(self):
        b = DpstBuilder()
        cur = b.open_root()
        assert b.root_id == 0
        assert cur.scope_id == 0
        b.close_root(cur)
        root = b.nodes[0]
        assert root.kind is NodeKind.FINISH and root.parent_id == NONE

    def test_second_root_rejected(self):
        b = DpstBuilder()
        b.open_root()
        with pytest.raises(RootAlreadyExists):
            b.open_root()

    def test_first_spawn_creates_finish(self):
        b = DpstBuilder()
        main = b.open_root()
        fin, asy, child = b.on_spawn(main, 0)
        assert fin is not None
        assert main.scope_id == fin
        assert child.scope_id == asy
        fin2, asy2, _ = b.on_spawn(main, 0)
        assert fin2 is None
        b.close_task(child)
        b.on_sync(main)
        assert b.nodes[asy].parent_id == fin
        assert b.nodes[fin].parent_id == b.root_id

    def test_spawn_sync_spawn_gets_fresh_finish(self):
        b = DpstBuilder()
        main = b.open_root()
        f1, a1, c1 = b.on_spawn(main, 0)
        b.close_task(c1)
        b.on_sync(main)
        f2, a2, c2 = b.on_spawn(main, 0)
        b.close_task(c2)
        b.on_sync(main)
        b.close_root(main)
        assert f2 is not None and f2 != f1
        t = b.tree()
        assert t.children(t.root) == (f1, f2)
        assert t.children(f1) == (a1,)
        assert t.children(f2) == (a2,)

    def test_sync_without_spawn(self):
        b = DpstBuilder()
        main = b.open_root()
        with pytest.raises(NoOpenFinish):
            b.on_sync(main)

    def test_sync_twice(self):
        b = DpstBuilder()
        main = b.open_root()
        _, _, c = b.on_spawn(main, 0)
        b.close_task(c)
        b.on_sync(main)
        with pytest.raises(NoOpenFinish):
            b.on_sync(main)

    def test_nested_sync_leaves_parent_scope(self):
        b = DpstBuilder()
        main = b.open_root()
        f1, a1, child = b.on_spawn(main, 0)
        before = main.scope_id
        f2, _, grandchild = b.on_spawn(child, 1)
        b.close_task(grandchild)
        b.on_sync(child)
        assert main.scope_id == before == f1
        assert child.scope_id == a1
        assert b.nodes[f2].parent_id == a1

    def test_steps(self):
        b = DpstBuilder()
        main = b.open_root()
        s0 = b.on_step(main, W(0))
        s1 = b.on_step(main, [WorkSegment(1, 7), WorkSegment(UNTAGGED, 3)])
        assert b.nodes[s0].child_index == 0 and b.nodes[s0].parent_id == b.root_id
        assert b.nodes[s0].work == 0
        assert b.nodes[s1].work == 10
        with pytest.raises(EmptySegments):
            b.on_step(main, [])

    def test_after_sync_step_is_right_of_finish(self):
        tree, ids = replay_treesum_half()
        assert tree.children(ids["F0"]) == (ids["S0"], ids["F1"], ids["S9"])

    def test_fixture_shape(self):
        tree, ids = replay_treesum_half()
        assert tree.count(NodeKind.FINISH) == 3
        assert tree.count(NodeKind.ASYNC) == 3
        assert tree.count(NodeKind.STEP) == 9
        assert tree.children(ids["F2"]) == (ids["A1"], ids["S4"], ids["A2"], ids["S7"])

    def test_streaming_emits_without_retaining(self):
        seen = []
        b = DpstBuilder(emit=seen.append)
        main = b.open_root()
        _, _, c = b.on_spawn(main, 0)
        b.on_step(c, W(3))
        b.close_task(c)
        b.on_sync(main)
        b.close_root(main)
        assert b.nodes == {}
        assert [n.kind for n in seen] == [NodeKind.STEP, NodeKind.ASYNC, NodeKind.FINISH,
                                          NodeKind.FINISH]
        assert seen[-1].parent_id == NONE


class TestInvariants:
    def test_node_fields_by_kind(self):
        tree, _ = replay_treesum_half()
        for node in tree.nodes.values():
            if node.kind is NodeKind.ASYNC:
                assert node.spawn_site != NONE and not node.segments
            elif node.kind is NodeKind.STEP:
                assert node.segments and node.spawn_site == NONE
                assert not tree.children(node.node_id)
            else:
                assert node.spawn_site == NONE and not node.segments

    def test_async_subtrees_disjoint(self):
        tree, _ = replay_treesum_half()
        for nid in tree.nodes:
            asyncs = [c for c in tree.children(nid) if tree[c].kind is NodeKind.ASYNC]
            for a, b in itertools.combinations(asyncs, 2):
                assert not tree.subtree(a) & tree.subtree(b)

    def test_nodes_immutable(self):
        tree, ids = replay_treesum_half()
        with pytest.raises(dataclasses.FrozenInstanceError):
            tree[ids["S0"]].child_index = 5


class TestTreeValidation:
    def test_orphan(self):
        with pytest.raises(CorruptFile):
            Tree([DpstNode(0, NONE, NodeKind.FINISH, 0),
                  DpstNode(1, 7, NodeKind.STEP, 0, segments=tuple(W(1)))])

    def test_gap(self):
        with pytest.raises(CorruptFile):
            Tree([DpstNode(0, NONE, NodeKind.FINISH, 0),
                  DpstNode(1, 0, NodeKind.STEP, 0, segments=tuple(W(1))),
                  DpstNode(2, 0, NodeKind.STEP, 2, segments=tuple(W(1)))])

    def test_two_roots(self):
        with pytest.raises(CorruptFile):
            Tree([DpstNode(0, NONE, NodeKind.FINISH, 0), DpstNode(1, NONE, NodeKind.FINISH, 0)])

    def test_unknown_node(self):
        tree, _ = replay_treesum_half()
        with pytest.raises(UnknownNode):
            tree[12345]


class TestMayHappenInParallel:
    def test_fixture_pairs(self):
        tree, ids = replay_treesum_half()
        mhp = lambda a, b: may_happen_in_parallel(tree, ids[a], ids[b])  # noqa: E731
        assert mhp("S5", "S7")
        assert mhp("S5", "S4")
        assert mhp("S5", "S6")
        assert mhp("S1", "S5")  # main's continuation vs the spawned tree
        assert not mhp("S4", "S6")  # S4 runs before A2 is spawned
        assert not mhp("S0", "S5")
        assert not mhp("S8", "S9")

    def test_serial_siblings(self):
        b = DpstBuilder()
        main = b.open_root()
        s1 = b.on_step(main, W(1))
        s2 = b.on_step(main, W(1))
        b.close_root(main)
        assert not may_happen_in_parallel(b.tree(), s1, s2)

    def test_unknown(self):
        tree, ids = replay_treesum_half()
        with pytest.raises(UnknownNode):
            may_happen_in_parallel(tree, ids["S0"], 999)

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_schedule_oracle(self, seed):
        rng = random.Random(seed)
        tree = random_tree(rng, max_nodes=120)
        steps = [n for n, v in tree.nodes.items() if v.kind is NodeKind.STEP]
        pairs = list(itertools.combinations(steps, 2))
        rng.shuffle(pairs)
        for s1, s2 in pairs[:60]:
            got = may_happen_in_parallel(tree, s1, s2)
            assert got == parallel_by_schedule(tree, s1, s2)
            assert got == may_happen_in_parallel(tree, s2, s1)
        for s in steps[:10]:
            assert not may_happen_in_parallel(tree, s, s)
