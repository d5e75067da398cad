"""Composite-commit dataset synthesis from atomic commits.

Real multi-concern commits lack ground truth, so the evaluation corpus
is built the other way around: take atomic commits that share a base
version, merge their diffs into one composite diff, and remember which
constituent contributed every changed statement. Merging is refused
whenever provenance would be ambiguous: overlapping or directly
adjacent edits to the same lines, different base versions of a shared
file, or a single statement straddling two constituents.

Commits are mined oldest-first and can be split 80/10/10 by commit
time for train/validation/test hygiene.
"""

from __future__ import annotations

import difflib
import random
from dataclasses import dataclass
from typing import Sequence

import git

from untangler.changegraph import (
    DiffRegion,
    Span,
    Version,
    apply_diff_regions,
    build_statement_graph,
    merge_graphs,
    parse_unified_diff,
    spans_intersect,
)
from untangler.errors import UntanglerError


class NotARepository(UntanglerError):
    """The given path is not a usable git repository."""


class MissingObject(UntanglerError):
    """The requested revision or object does not exist in the repo."""


class OverlappingChanges(UntanglerError):
    """Constituent commits cannot be merged without ambiguous provenance."""


@dataclass(frozen=True)
class AtomicCommit:
    """One single-concern commit: id, time, and both file snapshots."""

    commit_id: str
    timestamp: int
    message: str
    old_files: dict[str, str]
    new_files: dict[str, str]

    def touched_files(self) -> list[str]:
        return sorted(set(self.old_files) | set(self.new_files))

    def regions(self) -> list[DiffRegion]:
        """Change regions regenerated deterministically from snapshots."""
        return parse_unified_diff(self.diff_text())

    def diff_text(self) -> str:
        chunks: list[str] = []
        for path in self.touched_files():
            old = self.old_files.get(path, "")
            new = self.new_files.get(path, "")
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


def _blob_text(blob) -> str | None:
    if blob is None:
        return ""
    try:
        return blob.data_stream.read().decode("utf-8")
    except UnicodeDecodeError:
        return None


def ingest_repo(repo_path, rev: str = "HEAD", limit: int | None = None) -> list[AtomicCommit]:
    """Mine atomic commits from a repository, oldest first.

    Merge commits are skipped; binary files are dropped from a commit's
    snapshots. ``limit`` keeps only the most recent commits after
    ordering by (commit time, commit id).
    """
    try:
        repo = git.Repo(repo_path)
    except (git.InvalidGitRepositoryError, git.NoSuchPathError) as exc:
        raise NotARepository(f"{repo_path}: {exc}") from exc
    try:
        raw = list(repo.iter_commits(rev))
    except (git.GitCommandError, git.BadName, ValueError) as exc:
        raise MissingObject(f"cannot resolve {rev!r} in {repo_path}: {exc}") from exc
    commits = [c for c in raw if len(c.parents) <= 1]
    commits.sort(key=lambda c: (c.committed_date, c.hexsha))
    if limit is not None:
        commits = commits[-limit:]
    return [_commit_to_atomic(c) for c in commits]


def _commit_to_atomic(commit) -> AtomicCommit:
    old_files: dict[str, str] = {}
    new_files: dict[str, str] = {}
    if commit.parents:
        for d in commit.parents[0].diff(commit):
            a_text = _blob_text(d.a_blob)
            b_text = _blob_text(d.b_blob)
            if a_text is None or b_text is None:
                continue
            a_path = d.a_path or d.b_path
            b_path = d.b_path or d.a_path
            if a_path == b_path:
                old_files[a_path] = a_text
                new_files[a_path] = b_text
            else:
                # renames become delete + add so paths stay stable
                old_files[a_path] = a_text
                new_files[a_path] = ""
                old_files[b_path] = ""
                new_files[b_path] = b_text
    else:
        for blob in commit.tree.traverse():
            if blob.type != "blob":
                continue
            text = _blob_text(blob)
            if text is None:
                continue
            old_files[blob.path] = ""
            new_files[blob.path] = text
    return AtomicCommit(
        commit_id=commit.hexsha,
        timestamp=int(commit.committed_date),
        message=str(commit.message),
        old_files=old_files,
        new_files=new_files,
    )


def commit_snapshot(repo_path, rev: str) -> AtomicCommit:
    """Extract one commit's before/after snapshots by revision."""
    try:
        repo = git.Repo(repo_path)
    except (git.InvalidGitRepositoryError, git.NoSuchPathError) as exc:
        raise NotARepository(f"{repo_path}: {exc}") from exc
    try:
        commit = repo.commit(rev)
    except (git.BadName, git.GitCommandError, ValueError, KeyError) as exc:
        raise MissingObject(f"cannot resolve {rev!r} in {repo_path}: {exc}") from exc
    if len(commit.parents) > 1:
        raise MissingObject(f"{rev!r} is a merge commit; pick one of its parents' diffs")
    return _commit_to_atomic(commit)


@dataclass(frozen=True)
class ProvenancedRegion:
    """A constituent's change region plus its merged-file coordinates."""

    constituent: int
    region: DiffRegion
    merged_new_range: Span


@dataclass(frozen=True)
class CompositeCommit:
    """A synthetic tangled commit with per-statement ground truth."""

    composite_id: str
    constituent_ids: tuple[str, ...]
    timestamp: int
    old_files: dict[str, str]
    new_files: dict[str, str]
    regions: tuple[ProvenancedRegion, ...]
    diff_text: str
    ground_truth: dict[str, int]      # statement node id -> constituent index
    total_statements: int
    grammar_id: str

    @property
    def n_concerns(self) -> int:
        return len(self.constituent_ids)

    def document(self) -> dict:
        return {
            "composite_id": self.composite_id,
            "constituents": list(self.constituent_ids),
            "timestamp": self.timestamp,
            "n_concerns": self.n_concerns,
            "grammar_id": self.grammar_id,
            "diff": self.diff_text,
            "old_files": dict(sorted(self.old_files.items())),
            "new_files": dict(sorted(self.new_files.items())),
            "ground_truth": {k: self.ground_truth[k] for k in sorted(self.ground_truth)},
            "total_statements": self.total_statements,
        }


def _interval2(span: Span) -> tuple[int, int]:
    # doubled coordinates so an insertion point sits between two lines
    if span[1] < span[0]:
        return (2 * span[0] - 1, 2 * span[0] - 1)
    return (2 * span[0], 2 * span[1])


def synthesize_composite(
    constituents: Sequence[AtomicCommit], grammar_id: str = "line"
) -> CompositeCommit:
    """Merge two or more atomic commits into one labeled composite.

    Requirements, enforced with OverlappingChanges: every file shared
    by several constituents has the identical old text in each, and no
    two constituents edit overlapping or directly adjacent line runs
    of the same file. Adjacent runs are refused because a zero-context
    merged diff could not keep them apart.
    """
    if len(constituents) < 2:
        raise ValueError("a composite needs at least two constituent commits")

    per_file: dict[str, list[tuple[int, DiffRegion]]] = {}
    old_texts: dict[str, tuple[int, str]] = {}
    for idx, commit in enumerate(constituents):
        for region in commit.regions():
            per_file.setdefault(region.file_path, []).append((idx, region))
            old = commit.old_files.get(region.file_path, "")
            seen = old_texts.get(region.file_path)
            if seen is None:
                old_texts[region.file_path] = (idx, old)
            elif seen[1] != old and seen[0] != idx:
                raise OverlappingChanges(
                    f"{region.file_path}: constituents {seen[0]} and {idx} "
                    "start from different old versions"
                )

    merged_old: dict[str, str] = {}
    merged_new: dict[str, str] = {}
    provenanced: list[ProvenancedRegion] = []
    diff_chunks: list[str] = []
    for path in sorted(per_file):
        rows = sorted(
            per_file[path], key=lambda row: (_interval2(row[1].old_range), row[0])
        )
        prev_hi = None
        prev_idx = None
        for idx, region in rows:
            lo, hi = _interval2(region.old_range)
            if prev_hi is not None and lo - prev_hi <= 2 and idx != prev_idx:
                raise OverlappingChanges(
                    f"{path}: edits from constituents {prev_idx} and {idx} overlap "
                    f"or touch adjacent lines around old line {region.old_range[0]}"
                )
            if prev_hi is not None and lo <= prev_hi:
                raise OverlappingChanges(
                    f"{path}: constituent {idx} edits the same lines twice"
                )
            prev_hi, prev_idx = hi, idx

        old_text = old_texts[path][1]
        merged_old[path] = old_text
        delta = 0
        hunk_lines: list[str] = []
        for idx, region in rows:
            removed = len(region.removed_lines)
            added = len(region.added_lines)
            base = region.old_range[0]
            new_range: Span = (base + delta, base + delta + added - 1)
            provenanced.append(
                ProvenancedRegion(constituent=idx, region=region, merged_new_range=new_range)
            )
            old_anchor = base if removed else base - 1
            new_anchor = new_range[0] if added else new_range[0] - 1
            hunk_lines.append(f"@@ -{old_anchor},{removed} +{new_anchor},{added} @@")
            hunk_lines.extend("-" + ln for ln in region.removed_lines)
            hunk_lines.extend("+" + ln for ln in region.added_lines)
            delta += added - removed
        merged_new[path] = apply_diff_regions(old_text, [r for _, r in rows])
        diff_chunks.append(f"--- a/{path}\n+++ b/{path}\n" + "\n".join(hunk_lines))

    graph = merge_graphs(
        build_statement_graph(merged_old[p], merged_new[p], grammar_id, file_path=p)
        for p in sorted(merged_old)
    )
    ground_truth: dict[str, int] = {}
    for prov in provenanced:
        for version, span in (
            (Version.OLD, prov.region.old_range),
            (Version.NEW, prov.merged_new_range),
        ):
            for node in graph.nodes_for(prov.region.file_path, version):
                if not spans_intersect(node.span, span):
                    continue
                claimed = ground_truth.get(node.node_id)
                if claimed is not None and claimed != prov.constituent:
                    raise OverlappingChanges(
                        f"{node.node_id}: statement straddles constituents "
                        f"{claimed} and {prov.constituent}"
                    )
                ground_truth[node.node_id] = prov.constituent

    changed_ids = set(ground_truth)
    unchanged_new = sum(
        1
        for n in graph.nodes.values()
        if n.version is Version.NEW and n.node_id not in changed_ids
    )
    total_statements = len(ground_truth) + unchanged_new

    return CompositeCommit(
        composite_id="+".join(c.commit_id[:10] for c in constituents),
        constituent_ids=tuple(c.commit_id for c in constituents),
        timestamp=max(c.timestamp for c in constituents),
        old_files=merged_old,
        new_files=merged_new,
        regions=tuple(provenanced),
        diff_text="\n".join(diff_chunks) + ("\n" if diff_chunks else ""),
        ground_truth=ground_truth,
        total_statements=total_statements,
        grammar_id=grammar_id,
    )


def chronological_split(
    commits: Sequence[AtomicCommit],
) -> tuple[list[AtomicCommit], list[AtomicCommit], list[AtomicCommit]]:
    """80/10/10 split by (commit time, commit id), oldest first."""
    ordered = sorted(commits, key=lambda c: (c.timestamp, c.commit_id))
    n = len(ordered)
    b1 = (n * 8) // 10
    b2 = (n * 9) // 10
    return ordered[:b1], ordered[b1:b2], ordered[b2:]


def sample_composites(
    commits: Sequence[AtomicCommit],
    count: int,
    k_choices: Sequence[int] = (2, 3),
    seed: int = 0,
    grammar_id: str = "line",
    max_attempts: int | None = None,
) -> list[CompositeCommit]:
    """Draw mergeable constituent tuples at random, seeded.

    Tuples whose merge is refused are skipped and redrawn; sampling
    stops after ``count`` composites or when the attempt budget runs
    out, whichever comes first.
    """
    rng = random.Random(seed)
    budget = max_attempts if max_attempts is not None else max(50, count * 100)
    pool = sorted(commits, key=lambda c: (c.timestamp, c.commit_id))
    out: list[CompositeCommit] = []
    seen: set[tuple[str, ...]] = set()
    while len(out) < count and budget > 0:
        budget -= 1
        k = rng.choice(list(k_choices))
        if len(pool) < k:
            break
        picked = rng.sample(range(len(pool)), k)
        key = tuple(pool[i].commit_id for i in sorted(picked))
        if key in seen:
            continue
        seen.add(key)
        try:
            out.append(synthesize_composite([pool[i] for i in sorted(picked)], grammar_id))
        except (OverlappingChanges, ValueError):
            continue
    return out
