"""Work/span parallelism profiler and causal what-if profiler for fork-join programs."""

from .analysis import (
    NodeMetrics,
    ParallelismProfile,
    aggregate_sites,
    analyze,
    compute_work_span,
    reconstruct,
    render_profile,
)
from .causal import CausalProfile, CausalQuery, compute_causal, render_causal
from .dpst import DpstBuilder, DpstNode, NodeKind, SpawnSite, Tree, may_happen_in_parallel
from .measure import UNTAGGED, WorkSegment, make_backend
from .profile_io import CausalRegion, ProfileHeader, ProfileRecord, read_all
from .runtime import ProfileConfig, TaskContext, here, region, run_profiled, run_serial, run_unprofiled

__all__ = [
    "CausalProfile", "CausalQuery", "CausalRegion", "DpstBuilder", "DpstNode", "NodeKind",
    "NodeMetrics", "ParallelismProfile", "ProfileConfig", "ProfileHeader", "ProfileRecord",
    "SpawnSite", "TaskContext", "Tree", "UNTAGGED", "WorkSegment", "aggregate_sites", "analyze",
    "compute_causal", "compute_work_span", "here", "make_backend", "may_happen_in_parallel",
    "read_all", "reconstruct", "region", "render_causal", "render_profile", "run_profiled",
    "run_serial", "run_unprofiled",
]
