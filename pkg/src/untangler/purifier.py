"""Minimal change subgraph extraction.

Splits the seed set of a change graph into connected cores and wraps
each core with just enough unchanged context to read it in isolation.
One minimal change subgraph (MCS) is the unit that later gets an intent
profile and a group assignment.

Core discovery walks DATA_DEP and CONTROL_DEP edges between changed
statements only, plus the old/new correspondence pairs of modified
statements (so the two versions of one edit always land in the same
core). Unchanged statements never merge two cores: they are context,
not glue.

Context is a bounded backward slice: starting from the core, follow
dependency edges backwards up to ``bound_k`` hops, collecting unchanged
statements and stopping at any changed statement (those belong to other
cores). The enclosing function signature of every core statement is
always kept so the rendered excerpt stays readable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

from untangler.changegraph import (
    CONTROL_DEP,
    DATA_DEP,
    ChangeGraph,
    Version,
)


@dataclass(frozen=True)
class MinimalChangeSubgraph:
    """One coherent unit of change plus its rendered excerpt."""

    mcs_id: str
    core: tuple[str, ...]       # changed statement node ids, sorted
    context: tuple[str, ...]    # unchanged statement node ids, sorted
    anchor: tuple[str, int]     # (file, first changed line) for ordering
    diff_text: str

    @property
    def size(self) -> int:
        return len(self.core) + len(self.context)

    def document(self) -> dict:
        return {
            "mcs_id": self.mcs_id,
            "core": list(self.core),
            "context": list(self.context),
            "anchor": [self.anchor[0], self.anchor[1]],
            "diff": self.diff_text,
        }


def core_change_sets(graph: ChangeGraph) -> list[frozenset[str]]:
    """Partition the seeds into connected cores.

    Union-find over the seed set; two seeds join when a DATA_DEP or
    CONTROL_DEP edge connects them directly (either direction) or when
    they are the old/new versions of the same modified statement.
    Components come back ordered by their smallest node id.
    """
    seeds = set(graph.seeds)
    parent = {s: s for s in seeds}

    def find(x: str) -> str:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for src, dst, kind in graph.edges:
        if kind in (DATA_DEP, CONTROL_DEP) and src in seeds and dst in seeds:
            union(src, dst)
    for old_id, new_id in graph.correspondence:
        if old_id in seeds and new_id in seeds:
            union(old_id, new_id)

    components: dict[str, set[str]] = {}
    for seed in seeds:
        components.setdefault(find(seed), set()).add(seed)
    return sorted((frozenset(c) for c in components.values()), key=min)


def backward_slice(graph: ChangeGraph, core: Iterable[str], bound_k: int = 1) -> frozenset[str]:
    """Unchanged statements within ``bound_k`` backward dependency hops.

    Changed statements act as barriers: they are neither collected nor
    traversed. Enclosing function signatures of core statements are
    always included (when unchanged), whatever the bound.
    """
    if bound_k < 0:
        raise ValueError("bound_k must be non-negative")
    core = set(core)
    incoming = graph.in_edges(kinds=(DATA_DEP, CONTROL_DEP))
    picked: set[str] = set()
    frontier = sorted(core)
    seen = set(core)
    for _ in range(bound_k):
        nxt: list[str] = []
        for nid in frontier:
            for src, _ in incoming.get(nid, ()):
                if src in seen:
                    continue
                seen.add(src)
                if graph.nodes[src].changed:
                    continue
                picked.add(src)
                nxt.append(src)
        frontier = nxt
    for nid in core:
        scope = graph.nodes[nid].scope
        if scope is not None and not graph.nodes[scope].changed:
            picked.add(scope)
    return frozenset(picked - core)


def render_mcs_diff(graph: ChangeGraph, core: Sequence[str], context: Sequence[str]) -> str:
    """Unified-diff-style excerpt: context lines plus -/+ core lines.

    Context rows are deduplicated by (file, span, text) so an unchanged
    statement present in both versions at the same position renders
    once.
    """
    files = sorted({graph.nodes[n].file_path for n in core})
    chunks: list[str] = []
    for fp in files:
        rows: list[tuple[int, int, tuple[int, int], list[str]]] = []
        seen_ctx: set[tuple[tuple[int, int], str]] = set()
        for nid in sorted(context):
            node = graph.nodes[nid]
            if node.file_path != fp:
                continue
            key = (node.span, node.text)
            if key in seen_ctx:
                continue
            seen_ctx.add(key)
            lines = [" " + ln for ln in (node.text.splitlines() or [""])]
            rows.append((node.span[0], 0, node.span, lines))
        for nid in sorted(core):
            node = graph.nodes[nid]
            if node.file_path != fp:
                continue
            marker = "-" if node.version is Version.OLD else "+"
            rank = 1 if node.version is Version.OLD else 2
            lines = [marker + ln for ln in (node.text.splitlines() or [""])]
            rows.append((node.span[0], rank, node.span, lines))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        body = [ln for row in rows for ln in row[3]]
        chunks.append(f"--- a/{fp}\n+++ b/{fp}\n" + "\n".join(body))
    return "\n".join(chunks) + ("\n" if chunks else "")


def finalize_mcs(
    graph: ChangeGraph, core: Iterable[str], context: Iterable[str]
) -> MinimalChangeSubgraph:
    """Freeze a core + context pair into an MCS with a stable id."""
    core_t = tuple(sorted(core))
    if not core_t:
        raise ValueError("an MCS needs at least one changed statement")
    ctx_t = tuple(sorted(context))
    for nid in ctx_t:
        if graph.nodes[nid].changed:
            raise ValueError(f"context statement {nid} is changed; context must be unchanged")
    digest = hashlib.sha256("\n".join(core_t).encode("utf-8")).hexdigest()
    anchor = min((graph.nodes[n].file_path, graph.nodes[n].span[0]) for n in core_t)
    return MinimalChangeSubgraph(
        mcs_id=f"mcs-{digest[:12]}",
        core=core_t,
        context=ctx_t,
        anchor=anchor,
        diff_text=render_mcs_diff(graph, core_t, ctx_t),
    )


def purify(graph: ChangeGraph, bound_k: int = 1) -> list[MinimalChangeSubgraph]:
    """Extract the ordered list of minimal change subgraphs.

    Ordering is by (file, first changed line) of each core, so callers
    see subgraphs in source order regardless of discovery order.
    """
    subgraphs = [
        finalize_mcs(graph, core, backward_slice(graph, core, bound_k))
        for core in core_change_sets(graph)
    ]
    subgraphs.sort(key=lambda m: (m.anchor, m.mcs_id))
    return subgraphs
