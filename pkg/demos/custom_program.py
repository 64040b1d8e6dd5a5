"""
Profiling your own fork-join code
=================================

Task bodies take a context as their first argument. ``spawn``/``sync`` and
``parallel_for`` describe the parallel structure, ``charge`` reports logical
cost, and ``causal`` marks a region for what-if analysis.
"""

import tempfile
from pathlib import Path

import numpy as np

from spanprof import CausalQuery, ProfileConfig, analyze, compute_causal, here, read_all
from spanprof import reconstruct, region, render_causal, run_profiled, run_serial

NORMALIZE = region("normalize")
rows = np.random.default_rng(0).random((256, 64))


def row_stats(ctx, lo, hi):
    # each row costs one tick per column
    ctx.charge((hi - lo) * rows.shape[1])
    rows[lo:hi] -= rows[lo:hi].mean(axis=1, keepdims=True)


def histogram(ctx, bins):
    ctx.charge(rows.size // 4)
    return np.histogram(rows, bins=bins)[0]


def program(ctx):
    # the histogram runs alongside the per-row pass
    hist = ctx.spawn(here("histogram"), histogram, 16)
    ctx.parallel_for(here("row pass"), 0, rows.shape[0], 16, row_stats)
    ctx.sync()
    with ctx.causal(NORMALIZE):
        ctx.charge(rows.size)
        rows[:] /= np.abs(rows).max()
    return hist.result


out = Path(tempfile.mkdtemp()) / "custom.sppf"
run_profiled(program, ProfileConfig(out, "logical", workers=2))
header, records = read_all(out)
print(analyze(header, records).to_table())
print(render_causal(compute_causal(reconstruct(header, records), header,
                                   CausalQuery(factors=(2, 8, 32)))))

# The serial elision runs the same program with spawn as a plain call; its
# tick total equals the profiled work.
_, ticks = run_serial(program)
print("serial ticks:", ticks, " profiled work:", analyze(header, records).program.work)

# Switch to wall-clock ticks with counter="clock" (charge() is then ignored);
# cycles/instructions use perf_event_open where the kernel allows it.
