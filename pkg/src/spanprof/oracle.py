"""Infinite-processor schedule simulation over a DPST.

Used as the independent reference for critical work: each node's children
are replayed left to right against a serial clock. A step advances the
clock by its weight, a finish child advances it to the finish's completion
time, and an async child starts at the current clock without advancing it.
A node completes when its last child does. Nothing here shares code with
the bottom-up analysis.
"""

from __future__ import annotations

from collections.abc import Callable

from .dpst import DpstNode, NodeKind, Tree


def simulate(tree: Tree, weight: Callable[[DpstNode], object] | None = None):
    """Return ``(durations, intervals)``.

    ``durations[node]`` is completion minus start for internal nodes and the
    weight for steps; ``intervals[step]`` is the step's ``(start, end)``.
    """
    if weight is None:
        def weight(node):
            return sum(seg.ticks for seg in node.segments)

    nodes = tree.nodes
    durations: dict = {}
    intervals: dict = {}
    zero = 0
    # frame: [node_id, start, clock, completion, next child position]
    stack = [[tree.root, zero, zero, zero, 0]]
    while stack:
        frame = stack[-1]
        nid, start, clock, done, pos = frame
        kids = tree.children(nid)
        if pos == len(kids):
            stack.pop()
            finish = max(done, clock)
            durations[nid] = finish - start
            if stack:
                parent = stack[-1]
                parent[3] = max(parent[3], finish)
                if nodes[nid].kind is NodeKind.FINISH:
                    parent[2] = finish
            continue
        frame[4] = pos + 1
        child = nodes[kids[pos]]
        if child.kind is NodeKind.STEP:
            w = weight(child)
            intervals[child.node_id] = (clock, clock + w)
            durations[child.node_id] = w
            frame[2] = clock + w
            frame[3] = max(done, clock + w)
        else:
            stack.append([child.node_id, clock, clock, clock, 0])
    return durations, intervals


def span(tree: Tree, weight=None):
    durations, _ = simulate(tree, weight)
    return durations[tree.root]


def parallel_by_schedule(tree: Tree, s1: int, s2: int) -> bool:
    """Brute-force parallelism check for two distinct step nodes.

    Give the pair unit weight and everything else zero: if one step must
    precede the other it ends before the other starts, otherwise both start
    at time zero and their intervals overlap.
    """
    def weight(node):
        return 1 if node.node_id in (s1, s2) else 0

    _, iv = simulate(tree, weight)
    (a0, a1), (b0, b1) = iv[s1], iv[s2]
    return a0 < b1 and b0 < a1
