"""Offline analysis: work, critical work and per-spawn-site parallelism.

The bottom-up pass computes for every internal node N

* ``work``   - total ticks in N's subtree,
* ``c_work`` - critical work (span) of N's subtree,
* ``e_work`` - part of ``c_work`` done by N's direct step children and
  finish descendants, not yet attributed to a spawn site,
* ``ss_list`` - spawn sites on the critical path with their exclusive ticks.

Critical work starts as the serial chain through step and finish children.
Each async child A then competes with ``llw(A) + c_work(A)``, where llw is
the serial work of the step and finish siblings to A's left; a strictly
larger candidate replaces the current one.
"""

from __future__ import annotations

import csv
import io
import os
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction

from .dpst import DpstNode, NodeKind, Tree
from .errors import ZeroSpan
from .profile_io import ProfileHeader

STAR = "★"


@dataclass
class NodeMetrics:
    work: int
    c_work: int
    e_work: int
    ss_list: dict[int, int] = field(default_factory=dict)

    @property
    def parallelism(self) -> Fraction:
        return Fraction(self.work, self.c_work) if self.c_work else Fraction(1)


def reconstruct(header: ProfileHeader | None, records: Iterable[DpstNode]) -> Tree:
    """Rebuild the DPST; raises CorruptFile on orphans, gaps or bad roots."""
    return Tree(records)


def _merge(dst: dict[int, int], src: Mapping[int, int]) -> None:
    for site, ticks in src.items():
        dst[site] = dst.get(site, 0) + ticks


def compute_work_span(tree: Tree) -> dict[int, NodeMetrics]:
    """Bottom-up work / critical work / exclusive work / spawn-site list."""
    metrics: dict[int, NodeMetrics] = {}
    nodes = tree.nodes
    for nid in tree.postorder():
        node = nodes[nid]
        if node.kind is NodeKind.STEP:
            w = node.work
            metrics[nid] = NodeMetrics(w, w, w)
            continue

        kids = tree.children(nid)
        work = 0
        c_work = 0
        e_work = 0
        ss: dict[int, int] = {}
        for cid in kids:
            child = nodes[cid]
            m = metrics[cid]
            work += m.work
            if child.kind is NodeKind.STEP:
                c_work += m.work
                e_work += m.work
            elif child.kind is NodeKind.FINISH:
                c_work += m.c_work
                e_work += m.e_work
                _merge(ss, m.ss_list)

        # left-to-right sweep: llw and left exclusive work are prefix sums
        llw = 0
        left_e = 0
        left_ss: dict[int, int] = {}
        for cid in kids:
            child = nodes[cid]
            m = metrics[cid]
            if child.kind is NodeKind.STEP:
                llw += m.work
                left_e += m.work
            elif child.kind is NodeKind.FINISH:
                llw += m.c_work
                left_e += m.e_work
                _merge(left_ss, m.ss_list)
            else:
                if llw + m.c_work > c_work:
                    c_work = llw + m.c_work
                    e_work = left_e
                    ss = dict(left_ss)
                    _merge(ss, m.ss_list)

        if node.kind is NodeKind.ASYNC:
            ss[node.spawn_site] = ss.get(node.spawn_site, 0) + e_work
        metrics[nid] = NodeMetrics(work, c_work, e_work, ss)
    return metrics


def aggregate_sites(tree: Tree, metrics: Mapping[int, NodeMetrics]) -> dict[int, tuple[int, int]]:
    """Per-site (work, c_work) summed over outermost dynamic instances.

    Bottom-up: at each async node, subtract the totals of its nearest
    same-site async descendants, then add its own. Nested instances of a
    recursive site therefore cancel out.
    """
    nodes = tree.nodes
    # preorder with a per-site stack of open asyncs finds the nearest
    # same-site ancestor of every async node
    nearest_desc: dict[int, list[int]] = {}
    open_by_site: dict[int, list[int]] = {}
    stack: list[tuple[int, bool]] = [(tree.root, False)]
    while stack:
        nid, leaving = stack.pop()
        node = nodes[nid]
        if node.kind is not NodeKind.ASYNC:
            if not leaving:
                stack.extend((c, False) for c in reversed(tree.children(nid)))
            continue
        site = node.spawn_site
        if leaving:
            open_by_site[site].pop()
            continue
        chain = open_by_site.setdefault(site, [])
        if chain:
            nearest_desc.setdefault(chain[-1], []).append(nid)
        chain.append(nid)
        stack.append((nid, True))
        stack.extend((c, False) for c in reversed(tree.children(nid)))

    agg: dict[int, list[int]] = {}
    for nid in tree.postorder():
        node = nodes[nid]
        if node.kind is not NodeKind.ASYNC:
            continue
        entry = agg.setdefault(node.spawn_site, [0, 0])
        for d in nearest_desc.get(nid, ()):
            entry[0] -= metrics[d].work
            entry[1] -= metrics[d].c_work
        entry[0] += metrics[nid].work
        entry[1] += metrics[nid].c_work
    return {site: (w, c) for site, (w, c) in agg.items()}


@dataclass
class ProfileRow:
    site_id: int | None  # None for the whole-program row
    file: str
    line: int
    label: str
    work: int
    c_work: int
    parallelism: Fraction | None
    pct_critical: Fraction

    @property
    def is_program(self) -> bool:
        return self.site_id is None

    @property
    def location(self) -> str:
        if self.is_program:
            return f"{STAR} {self.label}"
        name = f"{os.path.basename(self.file)}:{self.line}"
        return f"{name} ({self.label})" if self.label else name


@dataclass
class ParallelismProfile:
    rows: list[ProfileRow]

    @property
    def program(self) -> ProfileRow:
        return next(r for r in self.rows if r.is_program)

    def site_rows(self) -> list[ProfileRow]:
        return [r for r in self.rows if not r.is_program]

    def to_table(self) -> str:
        head = ("spawn site", "work", "critical work", "parallelism", "% critical work")
        body = [
            (
                r.location,
                str(r.work),
                str(r.c_work),
                format_ratio(r.parallelism),
                str(round_half_up(r.pct_critical)),
            )
            for r in self.rows
        ]
        return format_table(head, body)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["site_file", "site_line", "label", "work", "critical_work",
                    "parallelism", "pct_critical"])
        for r in self.rows:
            w.writerow([
                "*" if r.is_program else r.file,
                0 if r.is_program else r.line,
                r.label,
                r.work,
                r.c_work,
                "" if r.parallelism is None else f"{float(r.parallelism):.6f}",
                f"{float(r.pct_critical):.6f}",
            ])
        return buf.getvalue()


def round_half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)) // 1)


def format_ratio(x: Fraction | None) -> str:
    if x is None:
        return "-"
    # half-up to 2 places on the exact value
    hundredths = round_half_up(x * 100)
    return f"{hundredths // 100}.{hundredths % 100:02d}"


def format_table(head, body) -> str:
    widths = [max(len(str(row[i])) for row in [head, *body]) for i in range(len(head))]
    lines = []
    for k, row in enumerate([head, *body]):
        cells = [str(row[0]).ljust(widths[0])]
        cells += [str(v).rjust(widths[i]) for i, v in enumerate(row) if i > 0]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_profile(header: ProfileHeader, root: NodeMetrics,
                   sites: Mapping[int, tuple[int, int]], main_label: str = "main") -> ParallelismProfile:
    """Whole-program row plus one row per spawn site, by % critical work."""
    if root.c_work == 0:
        raise ZeroSpan("program has no measured critical work")
    span = root.c_work
    rows = [ProfileRow(None, "", 0, main_label, root.work, root.c_work,
                       Fraction(root.work, root.c_work), Fraction(100 * root.e_work, span))]
    for sid, (work, c_work) in sites.items():
        site = header.sites[sid]
        rows.append(ProfileRow(
            sid, site.file, site.line, site.label, work, c_work,
            Fraction(work, c_work) if c_work else None,
            Fraction(100 * root.ss_list.get(sid, 0), span),
        ))
    rows.sort(key=lambda r: (-r.pct_critical, not r.is_program, r.file, r.line, r.label))
    return ParallelismProfile(rows)


def analyze(header: ProfileHeader, records: Iterable[DpstNode]) -> ParallelismProfile:
    """reconstruct -> compute_work_span -> aggregate_sites -> render_profile."""
    tree = reconstruct(header, records)
    metrics = compute_work_span(tree)
    sites = aggregate_sites(tree, metrics)
    return render_profile(header, metrics[tree.root], sites)
