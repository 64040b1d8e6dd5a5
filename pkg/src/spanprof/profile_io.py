"""Profile data file: concurrent append-only writer and validating reader.

Layout (all integers little-endian)::

    header   b"SPPF" u32 version
             str backend
             u32 n_sites   { u32 id, u32 line, str file, str label } * n_sites
             u32 n_regions { u32 id, u32 line_start, u32 line_end, str file, str label } * n
    records  { u32 length, payload } *
    trailer  b"SPPE" u64 record_count

    str      u16 byte_length, utf-8 bytes
    payload  u64 node_id, u64 parent_id, u32 child_index, u8 kind, then
             async: u32 site_id
             step:  u32 n_segments { u32 region_id, u64 ticks } * n_segments

A parent id of 2**64-1 marks the root; region id 2**32-1 marks untagged work.
Sibling order is carried by child_index, never by file position.

Writers buffer completed records in one private list per thread and encode
the file in one pass at :meth:`ProfileWriter.close`. With ``canonical=True`` the close
step also renumbers nodes in preorder and sites/regions in sorted order, so
a deterministic program yields a byte-identical file regardless of how its
tasks were scheduled.
"""

from __future__ import annotations

import io
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .dpst import NONE, DpstNode, NodeKind, SpawnSite, validate_node
from .errors import CorruptFile
from .measure import UNTAGGED, WorkSegment

MAGIC = b"SPPF"
TRAILER = b"SPPE"
VERSION = 1

_U64_NONE = 2**64 - 1
_U32_NONE = 2**32 - 1

_LEN = struct.Struct("<I")
_FIXED = struct.Struct("<QQIB")
_U32 = struct.Struct("<I")
_SEG = struct.Struct("<IQ")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")

# the on-disk unit is exactly a completed DPST node
ProfileRecord = DpstNode


@dataclass(frozen=True)
class CausalRegion:
    """An annotated source region whose work can be hypothetically sped up."""

    label: str
    file: str = ""
    line_start: int = 0
    line_end: int = 0

    def __str__(self):
        return self.label


@dataclass
class ProfileHeader:
    backend: str
    sites: dict[int, SpawnSite] = field(default_factory=dict)
    regions: dict[int, CausalRegion] = field(default_factory=dict)
    version: int = VERSION

    def region_id(self, label: str) -> int:
        for rid, region in self.regions.items():
            if region.label == label:
                return rid
        raise KeyError(label)


def encode_record(rec: DpstNode) -> bytes:
    parent = _U64_NONE if rec.parent_id == NONE else rec.parent_id
    body = [_FIXED.pack(rec.node_id, parent, rec.child_index, int(rec.kind))]
    if rec.kind is NodeKind.ASYNC:
        body.append(_U32.pack(rec.spawn_site))
    elif rec.kind is NodeKind.STEP:
        body.append(_U32.pack(len(rec.segments)))
        for seg in rec.segments:
            region = _U32_NONE if seg.region == UNTAGGED else seg.region
            body.append(_SEG.pack(region, seg.ticks))
    payload = b"".join(body)
    return _LEN.pack(len(payload)) + payload


def decode_record(payload: bytes) -> DpstNode:
    try:
        node_id, parent, child_index, kind = _FIXED.unpack_from(payload, 0)
        kind = NodeKind(kind)
    except (struct.error, ValueError) as exc:
        raise CorruptFile(f"bad record: {exc}") from None
    off = _FIXED.size
    site = NONE
    segments: tuple[WorkSegment, ...] = ()
    try:
        if kind is NodeKind.ASYNC:
            (site,) = _U32.unpack_from(payload, off)
            off += _U32.size
        elif kind is NodeKind.STEP:
            (n,) = _U32.unpack_from(payload, off)
            off += _U32.size
            segs = []
            for _ in range(n):
                region, ticks = _SEG.unpack_from(payload, off)
                off += _SEG.size
                segs.append(WorkSegment(UNTAGGED if region == _U32_NONE else region, ticks))
            segments = tuple(segs)
    except struct.error as exc:
        raise CorruptFile(f"truncated record {node_id}: {exc}") from None
    if off != len(payload):
        raise CorruptFile(f"record {node_id} has {len(payload) - off} trailing bytes")
    parent_id = NONE if parent == _U64_NONE else parent
    return DpstNode(node_id, parent_id, kind, child_index, site, segments)


def _pack_str(s: str) -> bytes:
    raw = s.encode()
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for profile header")
    return _U16.pack(len(raw)) + raw


def encode_header(header: ProfileHeader) -> bytes:
    out = [MAGIC, _U32.pack(header.version), _pack_str(header.backend)]
    out.append(_U32.pack(len(header.sites)))
    for sid in sorted(header.sites):
        site = header.sites[sid]
        out += [_U32.pack(sid), _U32.pack(site.line), _pack_str(site.file), _pack_str(site.label)]
    out.append(_U32.pack(len(header.regions)))
    for rid in sorted(header.regions):
        reg = header.regions[rid]
        out += [_U32.pack(rid), _U32.pack(reg.line_start), _U32.pack(reg.line_end),
                _pack_str(reg.file), _pack_str(reg.label)]
    return b"".join(out)


def canonicalize(
    header: ProfileHeader, records: list[DpstNode]
) -> tuple[ProfileHeader, list[DpstNode]]:
    """Renumber nodes in preorder and sites/regions by sorted key."""
    site_map = {old: new for new, old in
                enumerate(sorted(header.sites, key=lambda s: _site_key(header.sites[s])))}
    region_map = {old: new for new, old in
                  enumerate(sorted(header.regions, key=lambda r: _region_key(header.regions[r])))}

    kids: dict[int, list[DpstNode]] = {}
    roots = []
    for rec in records:
        if rec.parent_id == NONE:
            roots.append(rec)
        else:
            kids.setdefault(rec.parent_id, []).append(rec)
    for lst in kids.values():
        lst.sort(key=lambda r: r.child_index)

    id_map: dict[int, int] = {}
    order: list[DpstNode] = []
    stack = sorted(roots, key=lambda r: r.node_id, reverse=True)
    while stack:
        rec = stack.pop()
        id_map[rec.node_id] = len(id_map)
        order.append(rec)
        stack.extend(reversed(kids.get(rec.node_id, ())))
    if len(order) != len(records):
        raise CorruptFile("records do not form a tree; cannot canonicalize")

    out = []
    for rec in order:
        segments = tuple(
            WorkSegment(region_map[s.region] if s.region != UNTAGGED else UNTAGGED, s.ticks)
            for s in rec.segments
        )
        out.append(DpstNode(
            id_map[rec.node_id],
            NONE if rec.parent_id == NONE else id_map[rec.parent_id],
            rec.kind,
            rec.child_index,
            site_map[rec.spawn_site] if rec.spawn_site != NONE else NONE,
            segments,
        ))
    new_header = ProfileHeader(
        backend=header.backend,
        sites={site_map[k]: v for k, v in header.sites.items()},
        regions={region_map[k]: v for k, v in header.regions.items()},
        version=header.version,
    )
    return new_header, out


def _site_key(site: SpawnSite):
    return (site.file, site.line, site.label)


def _region_key(region: CausalRegion):
    return (region.file, region.line_start, region.line_end, region.label)


class ProfileWriter:
    """Collects records from any number of threads and writes them at close."""

    def __init__(self, path, backend: str, canonical: bool = True):
        self.path = Path(path)
        self.backend = backend
        self.canonical = canonical
        self._local = threading.local()
        self._chunks: list[list[DpstNode]] = []
        self._lock = threading.Lock()
        self._sites: dict[SpawnSite, int] = {}
        self._regions: dict[CausalRegion, int] = {}
        self._closed = False
        # fail early on unwritable destinations
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "wb"):
            pass

    def register_site(self, site: SpawnSite) -> int:
        sid = self._sites.get(site)
        if sid is None:
            with self._lock:
                sid = self._sites.setdefault(site, len(self._sites))
        return sid

    def register_region(self, region: CausalRegion) -> int:
        rid = self._regions.get(region)
        if rid is None:
            with self._lock:
                rid = self._regions.setdefault(region, len(self._regions))
        return rid

    def _chunk(self) -> list[DpstNode]:
        chunk = getattr(self._local, "chunk", None)
        if chunk is None:
            chunk = []
            self._local.chunk = chunk
            with self._lock:
                self._chunks.append(chunk)
        return chunk

    def append(self, record: DpstNode) -> None:
        if self._closed:
            raise ValueError("append to a closed profile writer")
        self._chunk().append(record)

    @property
    def header(self) -> ProfileHeader:
        return ProfileHeader(
            backend=self.backend,
            sites={v: k for k, v in self._sites.items()},
            regions={v: k for k, v in self._regions.items()},
        )

    def close(self, canonical: bool | None = None) -> Path:
        """Write the file. ``canonical=False`` keeps arrival order, which is
        what a run aborted by an exception needs: its tree is incomplete."""
        if self._closed:
            return self.path
        self._closed = True
        with self._lock:
            records = [rec for chunk in self._chunks for rec in chunk]
            self._chunks.clear()
        header = self.header
        if self.canonical if canonical is None else canonical:
            header, records = canonicalize(header, records)
        with open(self.path, "wb") as fh:
            fh.write(encode_header(header))
            fh.write(b"".join(map(encode_record, records)))
            fh.write(TRAILER + _U64.pack(len(records)))
        return self.path

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_profile(path, header: ProfileHeader, records, canonical: bool = False) -> Path:
    """Write a complete file from in-memory records (tests, tooling)."""
    if canonical:
        header, records = canonicalize(header, list(records))
    with open(path, "wb") as fh:
        fh.write(encode_header(header))
        count = 0
        for rec in records:
            fh.write(encode_record(rec))
            count += 1
        fh.write(TRAILER + _U64.pack(count))
    return Path(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CorruptFile("unexpected end of file")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def string(self) -> str:
        (n,) = self.unpack(_U16)
        try:
            return self.take(n).decode()
        except UnicodeDecodeError as exc:
            raise CorruptFile(f"bad string in header: {exc}") from None


def read_all(path) -> tuple[ProfileHeader, list[DpstNode]]:
    """Parse and validate a complete profile file."""
    data = Path(path).read_bytes()
    rd = _Reader(data)
    if rd.take(4) != MAGIC:
        raise CorruptFile("bad magic; not a spanprof profile")
    (version,) = rd.unpack(_U32)
    if version != VERSION:
        raise CorruptFile(f"unsupported profile version {version}")
    header = ProfileHeader(backend=rd.string(), version=version)
    (n_sites,) = rd.unpack(_U32)
    for _ in range(n_sites):
        (sid,) = rd.unpack(_U32)
        (line,) = rd.unpack(_U32)
        file, label = rd.string(), rd.string()
        try:
            header.sites[sid] = SpawnSite(file, line, label)
        except ValueError as exc:
            raise CorruptFile(str(exc)) from None
    (n_regions,) = rd.unpack(_U32)
    for _ in range(n_regions):
        rid, start, end = rd.unpack(_U32)[0], rd.unpack(_U32)[0], rd.unpack(_U32)[0]
        file, label = rd.string(), rd.string()
        header.regions[rid] = CausalRegion(label, file, start, end)

    records: list[DpstNode] = []
    seen: set[int] = set()
    while True:
        if data[rd.off:rd.off + 4] == TRAILER:
            rd.take(4)
            (count,) = rd.unpack(_U64)
            break
        (n,) = rd.unpack(_LEN)
        rec = decode_record(rd.take(n))
        if rec.node_id in seen:
            raise CorruptFile(f"duplicate node id {rec.node_id}")
        seen.add(rec.node_id)
        validate_node(rec)
        if rec.kind is NodeKind.ASYNC and rec.spawn_site not in header.sites:
            raise CorruptFile(f"node {rec.node_id} references unknown site {rec.spawn_site}")
        for seg in rec.segments:
            if seg.region != UNTAGGED and seg.region not in header.regions:
                raise CorruptFile(f"node {rec.node_id} references unknown region {seg.region}")
        records.append(rec)
    if rd.off != len(data):
        raise CorruptFile("trailing bytes after trailer")
    if count != len(records):
        raise CorruptFile(f"trailer says {count} records, found {len(records)}")
    return header, records


def dump_text(path) -> str:
    """Line-per-record text rendering for debugging."""
    header, records = read_all(path)
    out = io.StringIO()
    out.write(f"# spanprof profile v{header.version} backend={header.backend}\n")
    for sid in sorted(header.sites):
        s = header.sites[sid]
        out.write(f"# site {sid} {s.file}:{s.line} {s.label}\n".rstrip() + "\n")
    for rid in sorted(header.regions):
        r = header.regions[rid]
        out.write(f"# region {rid} {r.label} {r.file}:{r.line_start}-{r.line_end}\n")
    for rec in records:
        parent = "-" if rec.parent_id == NONE else rec.parent_id
        line = f"{rec.kind.name.lower()} id={rec.node_id} parent={parent} idx={rec.child_index}"
        if rec.kind is NodeKind.ASYNC:
            line += f" site={rec.spawn_site}"
        elif rec.kind is NodeKind.STEP:
            segs = ",".join(
                f"{'-' if s.region == UNTAGGED else s.region}:{s.ticks}" for s in rec.segments
            )
            line += f" segs={segs}"
        out.write(line + "\n")
    return out.getvalue()
