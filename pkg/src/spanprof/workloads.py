"""Built-in task-parallel programs for demos and tests.

Each factory returns a root task body ``body(ctx)``. Logical costs are
explicit parameters, so under the logical backend the profile depends only
on the parameters, never on the machine or the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .runtime import here, region

CREATE_TREE = region("create_tree")
SERIAL_SUM = region("serial_sum")


@dataclass
class WorkloadSpec:
    name: str
    params: dict = field(default_factory=dict)
    has_regions: bool = False


# -- tree sum ---------------------------------------------------------------
#
# The tree is a full binary tree stored in preorder: the subtree of the node
# at ``pos`` with ``size`` nodes occupies values[pos:pos+size], its left
# child starts at pos+1 and its right child at pos+1+(size-1)//2.

class _TreeSum:
    def __init__(self, depth, base, leaf_cost, build_cost, glue_cost, kernel_repeat):
        if depth < 0:
            raise ValueError("depth must be >= 0")
        self.n = 2 ** (depth + 1) - 1
        self.base = base if base is not None else max(1, self.n // 2)
        if self.base < 1:
            raise ValueError("base must be >= 1")
        self.leaf_cost = leaf_cost
        self.build_cost = build_cost
        self.glue_cost = glue_cost
        self.kernel_repeat = kernel_repeat
        self.values = None

    def serial_tree_sum(self, pos, size):
        chunk = self.values[pos:pos + size]
        total = 0
        for _ in range(self.kernel_repeat):
            total = int(chunk.sum())
        return total

    def compute_tree_sum(self, ctx, pos, size):
        ctx.charge(self.glue_cost)
        if size <= self.base:
            with ctx.causal(SERIAL_SUM):
                ctx.charge(self.leaf_cost * size)
                return self.serial_tree_sum(pos, size)
        half = (size - 1) // 2
        left = ctx.spawn(here("compute_tree_sum left"), self.compute_tree_sum, pos + 1, half)
        ctx.charge(self.glue_cost)
        right = ctx.spawn(here("compute_tree_sum right"), self.compute_tree_sum, pos + 1 + half, half)
        ctx.charge(self.glue_cost)
        ctx.sync()
        ctx.charge(self.glue_cost)
        return left.result + right.result + int(self.values[pos])

    def __call__(self, ctx):
        with ctx.causal(CREATE_TREE):
            ctx.charge(self.build_cost * self.n)
            self.values = np.arange(1, self.n + 1, dtype=np.int64)
        ctx.charge(self.glue_cost)
        total = ctx.spawn(here("main"), self.compute_tree_sum, 0, self.n)
        ctx.charge(self.glue_cost)
        ctx.sync()
        ctx.charge(self.glue_cost)  # print the sum
        return total.result


def treesum(depth: int, base: int | None = None, leaf_cost: int = 1, build_cost: int = 1,
            glue_cost: int = 0, kernel_repeat: int = 1):
    """Sum a full binary tree of ``depth`` levels below the root.

    Subtrees with at most ``base`` nodes (default n // 2) are summed serially
    inside the ``serial_sum`` region; larger ones spawn both halves and sync.
    Tree construction runs serially in the ``create_tree`` region. Each node
    summed serially costs ``leaf_cost`` ticks and each node built costs
    ``build_cost``; ``glue_cost`` is charged for every straight-line stretch
    between spawn and sync points so that each of them becomes a step node.
    """
    return _TreeSum(depth, base, leaf_cost, build_cost, glue_cost, kernel_repeat)


# -- pipeline of parallel loops and serial stages ---------------------------

_STAGE_REGIONS: dict[int, object] = {}


def _stage_region(i):
    reg = _STAGE_REGIONS.get(i)
    if reg is None:
        reg = _STAGE_REGIONS[i] = region(f"serial_stage_{i}")
    return reg


def serial_stage_pipeline(n_stages: int, stage_cost: int, loop_size: int, loop_cost: int = 1,
                          grain: int = 8, parallel_stages: bool = False, stage_blocks: int = 100):
    """Alternate a parallel loop with a serial, annotated stage.

    Stage i runs ``parallel_for`` over ``loop_size`` indices (``loop_cost``
    ticks each), then a serial pass over ``loop_size`` units of
    ``stage_cost`` ticks in region ``serial_stage_i``. With
    ``parallel_stages=True`` the serial pass is replaced by a parallel loop
    over ``stage_blocks`` equal blocks, the remedy the causal profile is
    meant to evaluate.
    """
    if n_stages < 1:
        raise ValueError("n_stages must be >= 1")
    if parallel_stages and loop_size % stage_blocks:
        raise ValueError("loop_size must be divisible by stage_blocks")

    data = np.zeros(loop_size, dtype=np.float64)

    def loop_body(ctx, lo, hi):
        ctx.charge(loop_cost * (hi - lo))
        data[lo:hi] += 1.0

    block = loop_size // stage_blocks if parallel_stages else 0

    def block_body(ctx, lo, hi):
        ctx.charge(stage_cost * block * (hi - lo))
        for b in range(lo, hi):
            np.cumsum(data[b * block:(b + 1) * block])

    def body(ctx):
        for i in range(n_stages):
            ctx.parallel_for(here("stage loop"), 0, loop_size, grain, loop_body)
            if parallel_stages:
                ctx.parallel_for(here("parallel stage"), 0, stage_blocks, 1, block_body)
            else:
                with ctx.causal(_stage_region(i)):
                    ctx.charge(stage_cost * loop_size)
                    np.cumsum(data)
        return float(data.sum())

    return body


# -- skewed binary recursion ------------------------------------------------

def unbalanced_spawn(skew: int, depth: int = 6, leaf_cost: int = 100, glue_cost: int = 1):
    """Binary recursion whose right child is ``skew`` times heavier.

    A leaf reached after k right turns costs ``leaf_cost * skew**k``. Between
    the two spawns the task does ``glue_cost`` ticks of serial work, which
    sits to the left of the heavy (late) async on the critical path.
    """
    if skew < 1:
        raise ValueError("skew must be >= 1")

    def rec(ctx, d, weight):
        if d == 0:
            ctx.charge(weight)
            return weight
        left = ctx.spawn(here("unbalanced left"), rec, d - 1, weight)
        ctx.charge(glue_cost)
        right = ctx.spawn(here("unbalanced right"), rec, d - 1, weight * skew)
        ctx.sync()
        return left.result + right.result

    def body(ctx):
        return rec(ctx, depth, leaf_cost)

    return body


WORKLOADS = {
    "treesum": WorkloadSpec("treesum", {"depth": 12, "base": 64, "leaf_cost": 1, "build_cost": 1,
                                        "glue_cost": 0}, has_regions=True),
    "pipeline": WorkloadSpec("pipeline", {"n_stages": 4, "stage_cost": 10, "loop_size": 1000,
                                          "loop_cost": 1, "grain": 8}, has_regions=True),
    "unbalanced": WorkloadSpec("unbalanced", {"skew": 2, "depth": 6, "leaf_cost": 100,
                                              "glue_cost": 1}),
}

FACTORIES = {
    "treesum": treesum,
    "pipeline": serial_stage_pipeline,
    "unbalanced": unbalanced_spawn,
}


def make_workload(name: str, **params):
    spec = WORKLOADS[name]
    merged = {**spec.params, **{k: v for k, v in params.items() if v is not None}}
    return FACTORIES[name](**merged)
