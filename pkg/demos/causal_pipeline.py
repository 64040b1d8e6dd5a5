"""
Asking "what if this region were faster?"
=========================================

A pipeline alternates parallel loops with serial stages. The causal profile
estimates what parallelizing the stages would buy before anyone rewrites
them; afterwards we measure the rewrite and compare.
"""

import tempfile
from pathlib import Path

from spanprof import CausalQuery, ProfileConfig, analyze, compute_causal, read_all, reconstruct
from spanprof import render_causal, run_profiled
from spanprof.workloads import serial_stage_pipeline

out = Path(tempfile.mkdtemp())
params = dict(n_stages=4, stage_cost=10, loop_size=1000, grain=8)

path = run_profiled(serial_stage_pipeline(**params), ProfileConfig(out / "before.sppf", "logical", 4))
header, records = read_all(path)
before = analyze(header, records)
print(before.to_table())

# Almost all critical work sits in the serial stages, each annotated as its
# own region. Ask how parallelism changes if all of them, or each one alone,
# ran 2x to 100x faster. Total work is held fixed; only the span shrinks.
tree = reconstruct(header, records)
causal = compute_causal(tree, header, CausalQuery(isolated=True))
print(render_causal(causal))

# Speeding up one stage alone does little: the other three still serialize
# the program. All four together is where the payoff is.
predicted = causal.combined.rows[-1].parallelism

# Now do it for real: replace each serial stage with a parallel loop over
# 100 blocks and profile again.
path = run_profiled(serial_stage_pipeline(**params, parallel_stages=True, stage_blocks=100),
                    ProfileConfig(out / "after.sppf", "logical", 4))
measured = analyze(*read_all(path)).program.parallelism
print(f"before {float(before.program.parallelism):.2f}  "
      f"predicted {float(predicted):.2f}  measured {float(measured):.2f}")
