"""End-to-end orchestration: diff in, intent partition out.

Wires the stages together: parse the diff, build the dual-version
statement graph, extract minimal change subgraphs, profile each one,
group greedily by intent, then refine under review. The outcome keeps
every intermediate product so callers (CLI, evaluation, tests) can
inspect or re-score without re-running the model.
"""

from __future__ import annotations

import difflib
import hashlib
from dataclasses import dataclass, field

from untangler import __version__
from untangler.backend import UsageLedger
from untangler.changegraph import (
    ChangeGraph,
    build_statement_graph,
    compute_dependencies,
    identify_seed_nodes,
    merge_graphs,
    parse_unified_diff,
)
from untangler.grouping import Group, greedy_grouping
from untangler.intent import IntentProfile, profile_mcs
from untangler.purifier import MinimalChangeSubgraph, purify
from untangler.review import RefinementTrace, refinement_loop


def render_diff(old_files: dict[str, str], new_files: dict[str, str]) -> str:
    """Zero-context unified diff between two file snapshots."""
    chunks: list[str] = []
    for path in sorted(set(old_files) | set(new_files)):
        old = old_files.get(path, "")
        new = new_files.get(path, "")
        if old == new:
            continue
        lines = difflib.unified_diff(
            old.splitlines(),
            new.splitlines(),
            fromfile=f"a/{path}",
            tofile=f"b/{path}",
            n=0,
            lineterm="",
        )
        chunks.append("\n".join(lines))
    return "\n".join(chunks) + ("\n" if chunks else "")


@dataclass
class UntangleOutcome:
    """Everything one pipeline run produced."""

    graph: ChangeGraph
    subgraphs: list[MinimalChangeSubgraph]
    profiles: dict[str, IntentProfile]
    groups: list[Group]
    trace: RefinementTrace
    predictions: dict[str, int] = field(default_factory=dict)

    @property
    def n_concerns(self) -> int:
        return len(self.groups)


def untangle_files(
    old_files: dict[str, str],
    new_files: dict[str, str],
    diff_text: str | None = None,
    *,
    backend,
    ledger: UsageLedger | None = None,
    bound_k: int = 1,
    max_rounds: int = 3,
    grammar_id: str = "line",
) -> UntangleOutcome:
    """Run the whole pipeline on one (possibly composite) change.

    ``diff_text`` may be supplied (for example a dataset's merged
    diff); otherwise it is regenerated from the snapshots. An empty
    diff yields an empty partition without any model calls.
    """
    if diff_text is None:
        diff_text = render_diff(old_files, new_files)
    regions = parse_unified_diff(diff_text)
    touched = sorted({r.file_path for r in regions})
    graph = merge_graphs(
        build_statement_graph(
            old_files.get(path, ""), new_files.get(path, ""), grammar_id, file_path=path
        )
        for path in touched
    )
    compute_dependencies(graph)
    identify_seed_nodes(graph, regions)
    subgraphs = purify(graph, bound_k)

    profiles: dict[str, IntentProfile] = {}
    for mcs in subgraphs:
        profiles[mcs.mcs_id] = profile_mcs(backend, ledger, mcs)
    groups = greedy_grouping(backend, ledger, subgraphs, profiles)
    groups, trace = refinement_loop(backend, ledger, groups, profiles, max_rounds=max_rounds)

    by_id = {m.mcs_id: m for m in subgraphs}
    predictions = {
        node: index
        for index, group in enumerate(groups)
        for member in group.member_ids
        for node in by_id[member].core
    }
    return UntangleOutcome(
        graph=graph,
        subgraphs=subgraphs,
        profiles=profiles,
        groups=groups,
        trace=trace,
        predictions=predictions,
    )


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def result_document(
    outcome: UntangleOutcome,
    *,
    bound_k: int,
    max_rounds: int,
    grammar_id: str,
    seed: int = 0,
    replay_sha256: str | None = None,
) -> dict:
    """The run's result payload.

    Deliberately excludes anything transport- or timing-dependent
    (backend kind, endpoint, wall time, token counts) so a recorded
    run and its replay serialize byte-identically. Those details live
    in the usage ledger instead.
    """
    return {
        "tool": {"name": "untangler", "version": __version__},
        "config": {
            "bound_k": bound_k,
            "max_rounds": max_rounds,
            "grammar_id": grammar_id,
            "seed": seed,
        },
        "replay_sha256": replay_sha256,
        "n_concerns": outcome.n_concerns,
        "concerns": [
            {
                "group_id": g.group_id,
                "category": g.intent.category.value if g.intent else None,
                "summary": g.intent.summary if g.intent else "",
                "members": list(g.member_ids),
                "statements": sorted(
                    node
                    for member in g.member_ids
                    for node in next(
                        m.core for m in outcome.subgraphs if m.mcs_id == member
                    )
                ),
            }
            for g in outcome.groups
        ],
        "subgraphs": [m.document() for m in outcome.subgraphs],
        "trace": outcome.trace.document(),
    }
