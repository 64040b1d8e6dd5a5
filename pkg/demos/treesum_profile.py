"""
Where does a tree sum lose its parallelism?
===========================================

Profile a recursive tree sum, read the per-spawn-site table, then change the
serial cutoff and watch the profile respond.
"""

import tempfile
from pathlib import Path

from spanprof import ProfileConfig, analyze, read_all, reconstruct, run_profiled
from spanprof.dpst import NodeKind
from spanprof.workloads import treesum

out = Path(tempfile.mkdtemp())

# With the cutoff at half the tree, the recursion stops after one split:
# only two tasks ever sum anything, so the summation (the site spawned from
# main) reaches a parallelism of 2 and no more.
path = run_profiled(treesum(depth=12), ProfileConfig(out / "half.sppf", "logical", workers=4))
header, records = read_all(path)
tree = reconstruct(header, records)
print("finish nodes:", tree.count(NodeKind.FINISH), " async nodes:", tree.count(NodeKind.ASYNC))
print(analyze(header, records).to_table())

# The row marked with a star is the whole program. Creating the tree is
# serial and dominates the critical path, which is why "main" keeps most of
# the critical work. Each spawn site row shows the parallelism of the code it
# launches and how much of the critical path it is responsible for.

# Lower the cutoff and the summation fans out. Tree construction is still
# serial, so the program-wide number barely moves even though the summing
# sites now scale.
path = run_profiled(treesum(depth=12, base=64), ProfileConfig(out / "b64.sppf", "logical", workers=4))
print(analyze(*read_all(path)).to_table())

# Remove the construction cost as well to see the ideal: 2**depth leaves of
# equal work give parallelism exactly 2**depth.
path = run_profiled(treesum(depth=8, base=1, leaf_cost=100, build_cost=0),
                    ProfileConfig(out / "ideal.sppf", "logical", workers=4))
print("ideal parallelism:", analyze(*read_all(path)).program.parallelism)
