"""Dynamic program structure tree: node model, construction rules, queries.

A DPST is an ordered n-ary tree. Step nodes are leaves holding measured
work; async nodes mark a task spawn; finish nodes mark a spawn-and-wait
scope. Siblings are ordered left to right in the order the parent task
executed them, and that order never changes once assigned.

:class:`DpstBuilder` applies the construction rules. It can either keep
every node (offline use, tests) or stream each node to a callback as soon as
it is complete, in which case only the currently open scopes stay alive.
:class:`Tree` is the immutable, fully built form used for analysis.
"""

from __future__ import annotations

import enum
import itertools
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field

from .errors import (
    CorruptFile,
    EmptySegments,
    NoOpenFinish,
    RootAlreadyExists,
    UnknownNode,
)
from .measure import WorkSegment

NONE = -1  # parent id of the root / spawn site of non-async nodes


class NodeKind(enum.IntEnum):
    STEP = 0
    ASYNC = 1
    FINISH = 2


@dataclass(frozen=True)
class SpawnSite:
    """Static source location of a spawn. Ids are assigned by the profile header."""

    file: str
    line: int
    label: str = ""

    def __post_init__(self):
        if self.line < 1:
            raise ValueError("spawn site line must be positive")

    def __str__(self):
        return f"{self.file}:{self.line}"


@dataclass(frozen=True)
class DpstNode:
    node_id: int
    parent_id: int
    kind: NodeKind
    child_index: int
    spawn_site: int = NONE
    segments: tuple[WorkSegment, ...] = ()

    @property
    def work(self) -> int:
        return sum(seg.ticks for seg in self.segments)


def validate_node(node: DpstNode) -> None:
    """Raise CorruptFile if the fields present don't match the node kind."""
    if node.kind is NodeKind.STEP:
        if not node.segments:
            raise CorruptFile(f"step node {node.node_id} has no segments")
        if node.spawn_site != NONE:
            raise CorruptFile(f"step node {node.node_id} carries a spawn site")
        if any(seg.ticks < 0 for seg in node.segments):
            raise CorruptFile(f"step node {node.node_id} has negative ticks")
    elif node.kind is NodeKind.ASYNC:
        if node.spawn_site == NONE:
            raise CorruptFile(f"async node {node.node_id} has no spawn site")
        if node.segments:
            raise CorruptFile(f"async node {node.node_id} carries segments")
    else:
        if node.spawn_site != NONE or node.segments:
            raise CorruptFile(f"finish node {node.node_id} carries step/async data")


class _Scope:
    """An open internal node that is still receiving children."""

    __slots__ = ("node_id", "parent_id", "child_index", "next_index")

    def __init__(self, node_id, parent_id, child_index):
        self.node_id = node_id
        self.parent_id = parent_id
        self.child_index = child_index
        self.next_index = 0

    def take_index(self) -> int:
        idx = self.next_index
        self.next_index += 1
        return idx


class TaskCursor:
    """Per-task construction state: where this task's next node attaches.

    ``frames`` models function-call boundaries that own their own sync
    scope (used by parallel_for); each frame holds at most one open finish.
    A cursor must only be touched by the thread running its task.
    """

    __slots__ = ("base", "scopes", "frames", "site")

    def __init__(self, base: _Scope, site: int = NONE):
        self.base = base
        self.site = site
        self.scopes = [base]
        self.frames: list[_Scope | None] = [None]

    @property
    def scope_id(self) -> int:
        return self.scopes[-1].node_id

    @property
    def has_open_finish(self) -> bool:
        return self.frames[-1] is not None

    def push_frame(self) -> None:
        self.frames.append(None)

    def pop_frame(self) -> None:
        if len(self.frames) == 1:
            raise RuntimeError("cannot pop the task's outermost frame")
        if self.frames[-1] is not None:
            raise NoOpenFinish("frame popped with an open finish scope")
        self.frames.pop()


class DpstBuilder:
    """Applies the DPST construction rules.

    With ``emit=None`` every node is retained in :attr:`nodes`. Otherwise each
    node is handed to ``emit`` once complete: steps immediately, finish nodes
    at their sync, async nodes when their task finishes (:meth:`close_task`),
    and the root at :meth:`close_root`.
    """

    def __init__(
        self,
        emit: Callable[[DpstNode], None] | None = None,
        id_alloc: Callable[[], int] | None = None,
    ):
        self.nodes: dict[int, DpstNode] = {}
        self._emit = emit if emit is not None else self._keep
        self._next_id = id_alloc if id_alloc is not None else itertools.count().__next__
        self._root: _Scope | None = None

    def _keep(self, node: DpstNode) -> None:
        self.nodes[node.node_id] = node

    def open_root(self) -> TaskCursor:
        """Create the root finish node and return the program's task cursor."""
        if self._root is not None:
            raise RootAlreadyExists("the root finish node was already opened")
        self._root = _Scope(self._next_id(), NONE, 0)
        return TaskCursor(self._root)

    @property
    def root_id(self) -> int:
        if self._root is None:
            raise UnknownNode("no root opened yet")
        return self._root.node_id

    def close_root(self, cursor: TaskCursor) -> None:
        if cursor.has_open_finish:
            raise NoOpenFinish("root task ended with an unsynced finish scope")
        root = self._root
        self._emit(DpstNode(root.node_id, NONE, NodeKind.FINISH, 0))

    def on_spawn(self, cursor: TaskCursor, site: int) -> tuple[int | None, int, TaskCursor]:
        """Record a spawn; returns (new finish id or None, async id, child cursor)."""
        finish_id = None
        if cursor.frames[-1] is None:
            parent = cursor.scopes[-1]
            finish = _Scope(self._next_id(), parent.node_id, parent.take_index())
            cursor.scopes.append(finish)
            cursor.frames[-1] = finish
            finish_id = finish.node_id
        parent = cursor.scopes[-1]
        child = _Scope(self._next_id(), parent.node_id, parent.take_index())
        return finish_id, child.node_id, TaskCursor(child, site)

    def on_sync(self, cursor: TaskCursor) -> int:
        """Close the current frame's finish scope; returns its node id."""
        finish = cursor.frames[-1]
        if finish is None:
            raise NoOpenFinish("sync without a spawn since task start or last sync")
        cursor.frames[-1] = None
        popped = cursor.scopes.pop()
        assert popped is finish
        self._emit(DpstNode(finish.node_id, finish.parent_id, NodeKind.FINISH, finish.child_index))
        return finish.node_id

    def on_step(self, cursor: TaskCursor, segments: Sequence[WorkSegment]) -> int:
        if not segments:
            raise EmptySegments("a step node needs at least one work segment")
        for seg in segments:
            if seg.ticks < 0:
                raise ValueError("segment ticks must be non-negative")
        parent = cursor.scopes[-1]
        node_id = self._next_id()
        self._emit(
            DpstNode(node_id, parent.node_id, NodeKind.STEP, parent.take_index(),
                     segments=tuple(segments))
        )
        return node_id

    def close_task(self, cursor: TaskCursor) -> int:
        """Emit the async node of a finished spawned task."""
        if cursor.has_open_finish:
            raise NoOpenFinish("task ended with an unsynced finish scope")
        base = cursor.base
        self._emit(DpstNode(base.node_id, base.parent_id, NodeKind.ASYNC, base.child_index,
                            spawn_site=cursor.site))
        return base.node_id

    def tree(self) -> Tree:
        return Tree(self.nodes.values())


class Tree:
    """Immutable DPST with children ordered by child_index."""

    def __init__(self, nodes: Iterable[DpstNode]):
        by_id: dict[int, DpstNode] = {}
        for node in nodes:
            if node.node_id in by_id:
                raise CorruptFile(f"duplicate node id {node.node_id}")
            by_id[node.node_id] = node
        roots = [n.node_id for n in by_id.values() if n.parent_id == NONE]
        if len(roots) != 1:
            raise CorruptFile(f"expected exactly one root, found {len(roots)}")
        root = by_id[roots[0]]
        if root.kind is not NodeKind.FINISH:
            raise CorruptFile("root node must be a finish node")

        grouped: dict[int, list[DpstNode]] = {}
        for node in by_id.values():
            if node.parent_id == NONE:
                continue
            parent = by_id.get(node.parent_id)
            if parent is None:
                raise CorruptFile(f"node {node.node_id} has unknown parent {node.parent_id}")
            if parent.kind is NodeKind.STEP:
                raise CorruptFile(f"step node {parent.node_id} has children")
            grouped.setdefault(node.parent_id, []).append(node)

        children: dict[int, tuple[int, ...]] = {}
        for pid, kids in grouped.items():
            kids.sort(key=lambda n: n.child_index)
            for expect, kid in enumerate(kids):
                if kid.child_index != expect:
                    raise CorruptFile(f"children of {pid} have a child_index gap or duplicate")
            children[pid] = tuple(k.node_id for k in kids)

        self.nodes: Mapping[int, DpstNode] = by_id
        self.root: int = root.node_id
        self._children = children
        self._order = self._preorder()
        if len(self._order) != len(by_id):
            raise CorruptFile("some nodes are unreachable from the root (cycle)")

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node_id):
        return node_id in self.nodes

    def __getitem__(self, node_id) -> DpstNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def children(self, node_id: int) -> tuple[int, ...]:
        return self._children.get(node_id, ())

    def _preorder(self) -> list[int]:
        order = []
        stack = [self.root]
        seen = set()
        while stack:
            nid = stack.pop()
            if nid in seen:
                break
            seen.add(nid)
            order.append(nid)
            stack.extend(reversed(self._children.get(nid, ())))
        return order

    def preorder(self) -> list[int]:
        return list(self._order)

    def postorder(self) -> Iterator[int]:
        """Children before parents (reverse of a right-to-left preorder)."""
        order = []
        stack = [self.root]
        while stack:
            nid = stack.pop()
            order.append(nid)
            stack.extend(self._children.get(nid, ()))
        return reversed(order)

    def count(self, kind: NodeKind) -> int:
        return sum(1 for n in self.nodes.values() if n.kind is kind)

    def ancestors(self, node_id: int) -> list[int]:
        """Path from node_id (inclusive) up to the root."""
        path = [node_id]
        node = self[node_id]
        while node.parent_id != NONE:
            path.append(node.parent_id)
            node = self.nodes[node.parent_id]
        return path

    def subtree(self, node_id: int) -> set[int]:
        out = set()
        stack = [node_id]
        while stack:
            nid = stack.pop()
            out.add(nid)
            stack.extend(self._children.get(nid, ()))
        return out


def may_happen_in_parallel(tree: Tree, s1: int, s2: int) -> bool:
    """True iff step nodes s1 and s2 are logically parallel.

    Find the least common ancestor; the pair is parallel exactly when the
    LCA's child on the path to the left node is an async node.
    """
    for sid in (s1, s2):
        if tree[sid].kind is not NodeKind.STEP:
            raise ValueError(f"node {sid} is not a step node")
    if s1 == s2:
        return False
    path1 = tree.ancestors(s1)[::-1]
    path2 = tree.ancestors(s2)[::-1]
    depth = 0
    while path1[depth] == path2[depth]:
        depth += 1
    # depth >= 1: the root is shared; neither step is an ancestor of the other
    c1, c2 = tree[path1[depth]], tree[path2[depth]]
    left = c1 if c1.child_index < c2.child_index else c2
    return left.kind is NodeKind.ASYNC
