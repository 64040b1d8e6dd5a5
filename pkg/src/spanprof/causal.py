"""What-if parallelism for annotated regions.

For a set of regions R and a speedup factor f, every tagged segment whose
region is in R contributes ``ticks / f`` to the span computation while the
total work stays at the raw tick count. The span recurrence is the same
one the parallelism profile uses, minus spawn-site tracking.

Arithmetic is exact: with ``f = p/q`` all step weights are scaled by ``p``
(untagged ``ticks * p``, tagged ``ticks * q``) so the pass runs on integers
and the result is divided by ``p`` once at the root.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

from .analysis import format_ratio, format_table
from .dpst import NodeKind, Tree
from .errors import UnknownRegion
from .measure import UNTAGGED
from .profile_io import ProfileHeader

DEFAULT_FACTORS = (2, 4, 8, 16, 32, 64, 100)


@dataclass
class CausalQuery:
    regions: frozenset[int] | None = None  # None = every region in the header
    factors: tuple[Fraction, ...] = tuple(Fraction(f) for f in DEFAULT_FACTORS)
    isolated: bool = False

    def __post_init__(self):
        self.factors = tuple(Fraction(f) for f in self.factors)
        if not self.factors:
            raise ValueError("at least one factor is required")
        if any(f <= 0 for f in self.factors):
            raise ValueError("speedup factors must be positive")
        if self.regions is not None:
            self.regions = frozenset(self.regions)


@dataclass
class CausalRow:
    factor: Fraction
    work: int
    span: Fraction
    parallelism: Fraction


@dataclass
class CausalTable:
    regions: tuple[int, ...]
    description: str
    rows: list[CausalRow] = field(default_factory=list)


@dataclass
class CausalProfile:
    tables: list[CausalTable]

    @property
    def combined(self) -> CausalTable:
        return self.tables[0]


def adjusted_span(tree: Tree, regions: Iterable[int], factor) -> Fraction:
    """Critical work with tagged segments in ``regions`` divided by ``factor``."""
    factor = Fraction(factor)
    scale_tagged, scale_plain = factor.denominator, factor.numerator
    regions = frozenset(regions)
    nodes = tree.nodes
    cw: dict[int, int] = {}
    for nid in tree.postorder():
        node = nodes[nid]
        if node.kind is NodeKind.STEP:
            cw[nid] = sum(
                s.ticks * (scale_tagged if s.region != UNTAGGED and s.region in regions else scale_plain)
                for s in node.segments
            )
            continue
        kids = tree.children(nid)
        serial = 0
        for cid in kids:
            if nodes[cid].kind is not NodeKind.ASYNC:
                serial += cw[cid]
        best = serial
        llw = 0
        for cid in kids:
            if nodes[cid].kind is NodeKind.ASYNC:
                if llw + cw[cid] > best:
                    best = llw + cw[cid]
            else:
                llw += cw[cid]
        cw[nid] = best
    return Fraction(cw[tree.root], scale_plain)


def total_work(tree: Tree) -> int:
    return sum(n.work for n in tree.nodes.values() if n.kind is NodeKind.STEP)


def compute_causal(tree: Tree, header: ProfileHeader, query: CausalQuery | None = None) -> CausalProfile:
    """Causal profile tables: combined first, then one per region if isolated."""
    query = query or CausalQuery()
    regions = query.regions if query.regions is not None else frozenset(header.regions)
    unknown = [r for r in regions if r not in header.regions]
    if unknown:
        raise UnknownRegion(f"regions not in profile header: {sorted(unknown)}")

    work = total_work(tree)
    sets: list[tuple[int, ...]] = [tuple(sorted(regions))]
    if query.isolated:
        sets += [(r,) for r in sorted(regions)]

    tables = []
    for rset in sets:
        desc = ", ".join(header.regions[r].label for r in rset) or "(no regions)"
        table = CausalTable(rset, desc)
        for f in query.factors:
            sp = adjusted_span(tree, rset, f)
            par = Fraction(work) / sp if sp else Fraction(1)
            table.rows.append(CausalRow(f, work, sp, par))
        tables.append(table)
    return CausalProfile(tables)


def _factor_str(f: Fraction) -> str:
    return str(f.numerator) if f.denominator == 1 else f"{float(f):g}"


def render_causal(profile: CausalProfile) -> str:
    out = []
    for i, table in enumerate(profile.tables):
        kind = "all regions" if i == 0 else "region"
        out.append(f"{kind}: {table.description}")
        body = [(f"{_factor_str(r.factor)}x", format_ratio(r.parallelism)) for r in table.rows]
        out.append(format_table(("speedup", "parallelism"), body))
    return "\n".join(out)


def causal_csv(profile: CausalProfile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["regions", "factor", "work", "span", "parallelism"])
    for table in profile.tables:
        for r in table.rows:
            w.writerow([table.description, _factor_str(r.factor), r.work,
                        f"{float(r.span):.6f}", f"{float(r.parallelism):.6f}"])
    return buf.getvalue()
