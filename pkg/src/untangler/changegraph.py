"""Statement-level change graphs over old/new file versions.

The graph is the substrate every later stage works on. Nodes are
statements from both versions of each touched file; edges record
syntactic nesting (``AST_PARENT``), def-use data flow (``DATA_DEP``)
and guard nesting (``CONTROL_DEP``). Diff regions mark which statements
changed (the seeds) and pair old statements with their rewritten new
counterparts.

Data-flow edges are def-use only: a statement depends on the latest
prior definition of an identifier it READS. A statement that merely
overwrites a variable does not depend on that variable's declaration,
which is what lets an unrelated rewrite of the same variable fall into
a different connected component.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

from untangler.errors import UntanglerError
from untangler.grammars import (  # noqa: F401  (re-exported contract errors)
    ParseFailure,
    UnsupportedGrammar,
    register_grammar,
    resolve_grammar,
)


class MalformedHunkHeader(UntanglerError):
    """A ``@@`` line that does not parse as a unified hunk header."""


class InconsistentLineCount(UntanglerError):
    """Hunk body does not match the line counts announced in its header."""


class RegionOutOfRange(UntanglerError):
    """A diff region points at lines beyond the end of its file."""


class Version(str, Enum):
    OLD = "OLD"
    NEW = "NEW"


AST_PARENT = "AST_PARENT"
DATA_DEP = "DATA_DEP"
CONTROL_DEP = "CONTROL_DEP"

EDGE_KINDS = (AST_PARENT, DATA_DEP, CONTROL_DEP)

# (start, end) line intervals are closed and 1-based; (s, s-1) is the
# empty interval anchored just before line s.
Span = tuple[int, int]


def span_is_empty(span: Span) -> bool:
    return span[1] < span[0]


def spans_intersect(a: Span, b: Span) -> bool:
    if span_is_empty(a) or span_is_empty(b):
        return False
    return a[0] <= b[1] and b[0] <= a[1]


@dataclass(frozen=True)
class DiffRegion:
    """One contiguous run of removed/added lines from a unified diff."""

    file_path: str
    old_range: Span
    new_range: Span
    removed_lines: tuple[str, ...]
    added_lines: tuple[str, ...]

    def __post_init__(self):
        old_len = 0 if span_is_empty(self.old_range) else self.old_range[1] - self.old_range[0] + 1
        new_len = 0 if span_is_empty(self.new_range) else self.new_range[1] - self.new_range[0] + 1
        if old_len != len(self.removed_lines) or new_len != len(self.added_lines):
            raise ValueError("region ranges do not match their line payloads")
        if not self.removed_lines and not self.added_lines:
            raise ValueError("region removes and adds nothing")


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def _normalize_path(path: str) -> str:
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def parse_unified_diff(diff_text: str) -> list[DiffRegion]:
    """Extract change regions from a unified diff.

    One region per contiguous run of ``-``/``+`` lines inside a hunk;
    ordering follows the diff itself (file order, then line order).
    File headers, index lines and surrounding prose are skipped.
    """
    regions: list[DiffRegion] = []
    lines = diff_text.splitlines()
    i, n = 0, len(lines)
    current_file: str | None = None
    pending_old: str | None = None
    while i < n:
        line = lines[i]
        if line.startswith("--- ") and not line.startswith("----"):
            pending_old = line[4:].split("\t")[0].strip()
            i += 1
            continue
        if line.startswith("+++ "):
            new_path = line[4:].split("\t")[0].strip()
            chosen = new_path if new_path != "/dev/null" else (pending_old or new_path)
            current_file = _normalize_path(chosen)
            pending_old = None
            i += 1
            continue
        if line.startswith("@@"):
            m = _HUNK_RE.match(line)
            if not m:
                raise MalformedHunkHeader(f"bad hunk header: {line!r}")
            if current_file is None:
                raise MalformedHunkHeader(f"hunk header before any file header: {line!r}")
            old_start = int(m.group(1))
            old_len = 1 if m.group(2) is None else int(m.group(2))
            new_start = int(m.group(3))
            new_len = 1 if m.group(4) is None else int(m.group(4))
            # zero-length sides anchor one line early in git's convention
            if old_len == 0:
                old_start += 1
            if new_len == 0:
                new_start += 1
            i = _consume_hunk(
                lines, i + 1, current_file, old_start, old_len, new_start, new_len, regions
            )
            continue
        i += 1
    return regions


def _consume_hunk(lines, i, file_path, old_start, old_len, new_start, new_len, regions):
    old_cur, new_cur = old_start, new_start
    old_left, new_left = old_len, new_len
    removed: list[str] = []
    added: list[str] = []
    run_old = run_new = 0

    def flush():
        if removed or added:
            regions.append(
                DiffRegion(
                    file_path=file_path,
                    old_range=(run_old, run_old + len(removed) - 1),
                    new_range=(run_new, run_new + len(added) - 1),
                    removed_lines=tuple(removed),
                    added_lines=tuple(added),
                )
            )
            removed.clear()
            added.clear()

    while old_left > 0 or new_left > 0:
        if i >= len(lines):
            raise InconsistentLineCount(
                f"{file_path}: hunk ended early ({old_left} old / {new_left} new lines missing)"
            )
        line = lines[i]
        if line.startswith("\\"):
            i += 1
            continue
        tag, body = (line[0], line[1:]) if line else (" ", "")
        if tag == " ":
            if old_left <= 0 or new_left <= 0:
                raise InconsistentLineCount(f"{file_path}: context line beyond header counts")
            flush()
            old_cur += 1
            new_cur += 1
            old_left -= 1
            new_left -= 1
        elif tag == "-":
            if old_left <= 0:
                raise InconsistentLineCount(f"{file_path}: removed line beyond header counts")
            if not removed and not added:
                run_old, run_new = old_cur, new_cur
            removed.append(body)
            old_cur += 1
            old_left -= 1
        elif tag == "+":
            if new_left <= 0:
                raise InconsistentLineCount(f"{file_path}: added line beyond header counts")
            if not removed and not added:
                run_old, run_new = old_cur, new_cur
            added.append(body)
            new_cur += 1
            new_left -= 1
        else:
            raise InconsistentLineCount(f"{file_path}: unexpected hunk body line {line!r}")
        i += 1
    flush()
    return i


def apply_diff_regions(old_text: str, regions: Iterable[DiffRegion]) -> str:
    """Reconstruct the new file text from the old text plus its regions.

    Regions must all belong to the same file and be non-overlapping.
    Raises ValueError when a region's removed lines disagree with the
    old text (a corrupt or misaligned diff).
    """
    lines = old_text.splitlines()
    out: list[str] = []
    cursor = 1
    for region in sorted(regions, key=lambda r: (r.old_range[0], r.new_range[0])):
        start = region.old_range[0]
        if start < cursor:
            raise ValueError("overlapping or unsorted diff regions")
        out.extend(lines[cursor - 1 : start - 1])
        actual = tuple(lines[start - 1 : start - 1 + len(region.removed_lines)])
        if actual != region.removed_lines:
            raise ValueError(
                f"{region.file_path}: removed lines at {region.old_range} do not match old text"
            )
        out.extend(region.added_lines)
        cursor = region.old_range[1] + 1
    if cursor - 1 > len(lines):
        raise ValueError("diff region extends past end of old text")
    out.extend(lines[cursor - 1 :])
    return "\n".join(out) + ("\n" if out else "")


def node_id(file_path: str, version: Version, span: Span) -> str:
    return f"{file_path}|{version.value}|{span[0]}-{span[1]}"


@dataclass(frozen=True)
class StatementNode:
    """One statement in one version of one file."""

    node_id: str
    file_path: str
    version: Version
    span: Span
    kind: str
    text: str
    changed: bool = False
    defs: frozenset[str] = frozenset()
    uses: frozenset[str] = frozenset()
    parent: str | None = None        # enclosing block header node
    scope: str | None = None         # enclosing function signature node
    guards: tuple[str, ...] = ()     # enclosing condition/loop-header nodes


@dataclass
class ChangeGraph:
    """Dual-version statement graph for one or more files."""

    nodes: dict[str, StatementNode] = field(default_factory=dict)
    edges: set[tuple[str, str, str]] = field(default_factory=set)
    seeds: set[str] = field(default_factory=set)
    correspondence: set[tuple[str, str]] = field(default_factory=set)

    def add_node(self, node: StatementNode) -> None:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node id {node.node_id}")
        self.nodes[node.node_id] = node

    def files(self) -> list[str]:
        return sorted({n.file_path for n in self.nodes.values()})

    def nodes_for(self, file_path: str | None = None, version: Version | None = None):
        picked = [
            n
            for n in self.nodes.values()
            if (file_path is None or n.file_path == file_path)
            and (version is None or n.version == version)
        ]
        picked.sort(key=lambda n: (n.file_path, n.version.value, n.span))
        return picked

    def line_count(self, file_path: str, version: Version) -> int:
        ends = [n.span[1] for n in self.nodes.values() if n.file_path == file_path and n.version == version]
        return max(ends) if ends else 0

    def in_edges(self, kinds: Iterable[str] | None = None) -> dict[str, list[tuple[str, str]]]:
        """dst -> [(src, kind)] adjacency, optionally filtered by kind."""
        wanted = set(kinds) if kinds is not None else None
        index: dict[str, list[tuple[str, str]]] = {}
        for src, dst, kind in self.edges:
            if wanted is not None and kind not in wanted:
                continue
            index.setdefault(dst, []).append((src, kind))
        for bucket in index.values():
            bucket.sort()
        return index

    def undirected_adjacency(self, kinds: Iterable[str]) -> dict[str, set[str]]:
        wanted = set(kinds)
        adj: dict[str, set[str]] = {nid: set() for nid in self.nodes}
        for src, dst, kind in self.edges:
            if kind in wanted:
                adj[src].add(dst)
                adj[dst].add(src)
        return adj

    def document(self) -> dict:
        """Stable, JSON-ready form (sorted nodes, edges, seeds, pairs)."""
        return {
            "nodes": [
                {
                    "id": n.node_id,
                    "file": n.file_path,
                    "version": n.version.value,
                    "span": [n.span[0], n.span[1]],
                    "kind": n.kind,
                    "changed": n.changed,
                }
                for n in self.nodes_for()
            ],
            "edges": [
                {"src": s, "dst": d, "kind": k} for s, d, k in sorted(self.edges)
            ],
            "seeds": sorted(self.seeds),
            "correspondence": [list(pair) for pair in sorted(self.correspondence)],
        }


def merge_graphs(graphs: Iterable[ChangeGraph]) -> ChangeGraph:
    merged = ChangeGraph()
    for g in graphs:
        for node in g.nodes.values():
            merged.add_node(node)
        merged.edges |= g.edges
        merged.seeds |= g.seeds
        merged.correspondence |= g.correspondence
    return merged


def build_statement_graph(
    old_source: str,
    new_source: str,
    grammar_id: str = "line",
    file_path: str = "a",
) -> ChangeGraph:
    """Parse both versions of one file into a dual-version graph.

    Nodes carry canonical ids derived from (file, version, span), so
    identical inputs always produce byte-identical serializations.
    """
    grammar = resolve_grammar(grammar_id)
    graph = ChangeGraph()
    for version, source in ((Version.OLD, old_source), (Version.NEW, new_source)):
        try:
            parsed = grammar.parse(source)
        except UntanglerError:
            raise
        except Exception as exc:  # a buggy frontend must not crash the pipeline silently
            raise ParseFailure(str(exc), file_path=file_path) from exc
        _check_partition(parsed, source, file_path)
        ids = [node_id(file_path, version, (p.start, p.end)) for p in parsed]
        for p, nid in zip(parsed, ids):
            graph.add_node(
                StatementNode(
                    node_id=nid,
                    file_path=file_path,
                    version=version,
                    span=(p.start, p.end),
                    kind=p.kind,
                    text=p.text,
                    defs=p.defs,
                    uses=p.uses,
                    parent=ids[p.parent] if p.parent is not None else None,
                    scope=ids[p.scope] if p.scope is not None else None,
                    guards=tuple(ids[g] for g in p.guards),
                )
            )
            if p.parent is not None:
                graph.edges.add((ids[p.parent], nid, AST_PARENT))
    return graph


def _check_partition(parsed, source: str, file_path: str) -> None:
    total = len(source.splitlines())
    cursor = 1
    for p in parsed:
        if p.start != cursor or p.end < p.start:
            raise ParseFailure(
                f"statement spans do not partition the file (gap at line {cursor})",
                file_path=file_path,
                line=cursor,
            )
        cursor = p.end + 1
    if cursor != total + 1:
        raise ParseFailure(
            f"statement spans cover {cursor - 1} of {total} lines", file_path=file_path
        )


def compute_dependencies(graph: ChangeGraph) -> ChangeGraph:
    """Add DATA_DEP and CONTROL_DEP edges from node-level facts.

    Data flow is a per-scope reaching-definition scan in line order:
    each identifier a statement reads links it to the latest prior
    statement that defined that identifier in the same scope. Guards
    recorded by the grammar become CONTROL_DEP edges from every
    enclosing condition/loop header.
    """
    by_group: dict[tuple[str, Version], list[StatementNode]] = {}
    for node in graph.nodes.values():
        by_group.setdefault((node.file_path, node.version), []).append(node)
    for (_, _), stmts in sorted(by_group.items()):
        stmts.sort(key=lambda n: n.span)
        tables: dict[str, dict[str, str]] = {}
        for st in stmts:
            table = tables.setdefault(st.scope or "<file>", {})
            for name in sorted(st.uses):
                origin = table.get(name)
                if origin is not None and origin != st.node_id:
                    graph.edges.add((origin, st.node_id, DATA_DEP))
            for name in st.defs:
                table[name] = st.node_id
            for guard in st.guards:
                graph.edges.add((guard, st.node_id, CONTROL_DEP))
    return graph


def identify_seed_nodes(graph: ChangeGraph, regions: Iterable[DiffRegion]) -> ChangeGraph:
    """Mark statements intersecting diff regions as changed seeds.

    Also records correspondence pairs: within each region, old and new
    changed statements are paired positionally (a modified statement's
    two versions). Regions are validated against file extents first.
    """
    regions = list(regions)
    for region in regions:
        for version, span in (
            (Version.OLD, region.old_range),
            (Version.NEW, region.new_range),
        ):
            if span_is_empty(span):
                continue
            limit = graph.line_count(region.file_path, version)
            if span[0] < 1 or span[1] > limit:
                raise RegionOutOfRange(
                    f"{region.file_path} ({version.value}): lines {span[0]}-{span[1]} "
                    f"outside file of {limit} lines"
                )
    changed_ids: set[str] = set()
    for region in regions:
        touched: dict[Version, list[StatementNode]] = {}
        for version, span in (
            (Version.OLD, region.old_range),
            (Version.NEW, region.new_range),
        ):
            hits = [
                n
                for n in graph.nodes_for(region.file_path, version)
                if spans_intersect(n.span, span)
            ]
            touched[version] = hits
            changed_ids.update(n.node_id for n in hits)
        for old_node, new_node in zip(touched[Version.OLD], touched[Version.NEW]):
            graph.correspondence.add((old_node.node_id, new_node.node_id))
    for nid in changed_ids:
        node = graph.nodes[nid]
        if not node.changed:
            graph.nodes[nid] = replace(node, changed=True)
    graph.seeds |= changed_ids
    return graph
