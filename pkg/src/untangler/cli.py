"""Command line entry points: untangle, evaluate, synthesize."""

from __future__ import annotations

import json
import pathlib
from concurrent.futures import ThreadPoolExecutor

import click

from untangler import __version__
from untangler.backend import (
    LiveBackend,
    RecordingBackend,
    ScriptedBackend,
    UsageLedger,
)
from untangler.dataset import (
    chronological_split,
    commit_snapshot,
    ingest_repo,
    sample_composites,
)
from untangler.errors import UntanglerError
from untangler.metrics import (
    CommitScore,
    NoEligibleCommits,
    aggregate,
    score_commit,
)
from untangler.pipeline import (
    file_sha256,
    render_diff,
    result_document,
    untangle_files,
)

NODE_BUCKETS = ((0, 1000), (1000, 2000), (2000, 7000), (7000, None))


def _bucket_label(lo: int, hi: int | None) -> str:
    return f"[{lo},{hi})" if hi is not None else f"[{lo},inf)"


def _write_json(path: pathlib.Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _load_dir_snapshot(root: str, paths: list[str]) -> dict[str, str]:
    snapshot: dict[str, str] = {}
    base = pathlib.Path(root)
    for rel in paths:
        candidate = base / rel
        if candidate.is_file():
            snapshot[rel] = candidate.read_text(encoding="utf-8")
        else:
            snapshot[rel] = ""
    return snapshot


@click.group()
@click.version_option(version=__version__, prog_name="untangler")
def main() -> None:
    """Split composite commits into coherent atomic concerns."""


@main.command()
@click.option("--repo", type=click.Path(exists=True), help="Git repository to read a commit from.")
@click.option("--commit", "commit_rev", help="Commit revision inside --repo.")
@click.option("--diff", "diff_path", type=click.Path(exists=True), help="Unified diff file.")
@click.option("--old-dir", type=click.Path(exists=True), help="Tree with the old file versions.")
@click.option("--new-dir", type=click.Path(exists=True), help="Tree with the new file versions.")
@click.option(
    "--backend",
    "backend_kind",
    type=click.Choice(["live", "scripted", "record"]),
    default="live",
    show_default=True,
)
@click.option("--replay", "replay_path", type=click.Path(), help="Replay file to read (scripted) or write (record).")
@click.option("--bound-k", type=int, default=1, show_default=True, help="Backward slice depth for context.")
@click.option("--max-rounds", type=int, default=3, show_default=True, help="Review refinement round budget.")
@click.option("--grammar", "grammar_id", default="line", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=".", show_default=True)
def untangle(
    repo,
    commit_rev,
    diff_path,
    old_dir,
    new_dir,
    backend_kind,
    replay_path,
    bound_k,
    max_rounds,
    grammar_id,
    seed,
    out_dir,
):
    """Untangle one composite change into intent concerns."""
    from untangler.changegraph import parse_unified_diff

    diff_text = None
    if repo and commit_rev:
        atomic = commit_snapshot(repo, commit_rev)
        old_files, new_files = atomic.old_files, atomic.new_files
        diff_text = atomic.diff_text()
    elif diff_path:
        if not old_dir or not new_dir:
            raise click.UsageError("--diff needs --old-dir and --new-dir for file contents")
        diff_text = pathlib.Path(diff_path).read_text(encoding="utf-8")
        paths = sorted({r.file_path for r in parse_unified_diff(diff_text)})
        old_files = _load_dir_snapshot(old_dir, paths)
        new_files = _load_dir_snapshot(new_dir, paths)
    else:
        raise click.UsageError("provide --repo with --commit, or --diff with --old-dir/--new-dir")

    if backend_kind in ("scripted", "record") and not replay_path:
        raise click.UsageError(f"--backend {backend_kind} needs --replay")

    ledger = UsageLedger()
    recorder = None
    if backend_kind == "scripted":
        backend = ScriptedBackend.from_path(replay_path)
    elif backend_kind == "record":
        recorder = RecordingBackend(LiveBackend(), replay_path)
        backend = recorder
    else:
        backend = LiveBackend()

    try:
        outcome = untangle_files(
            old_files,
            new_files,
            diff_text,
            backend=backend,
            ledger=ledger,
            bound_k=bound_k,
            max_rounds=max_rounds,
            grammar_id=grammar_id,
        )
    finally:
        if recorder is not None:
            recorder.close()

    replay_sha = file_sha256(replay_path) if replay_path else None
    doc = result_document(
        outcome,
        bound_k=bound_k,
        max_rounds=max_rounds,
        grammar_id=grammar_id,
        seed=seed,
        replay_sha256=replay_sha,
    )
    out = pathlib.Path(out_dir)
    _write_json(out / "result.json", doc)
    _write_json(out / "ledger.json", {"backend": backend_kind, **ledger.snapshot()})
    click.echo(f"concerns: {outcome.n_concerns}")
    for concern in doc["concerns"]:
        click.echo(f"  {concern['group_id']} [{concern['category']}] {concern['summary']}")
    click.echo(f"wrote {out / 'result.json'} and {out / 'ledger.json'}")


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option(
    "--backend",
    "backend_kind",
    type=click.Choice(["live", "scripted", "record"]),
    default="scripted",
    show_default=True,
)
@click.option(
    "--replay",
    "replay_dir",
    type=click.Path(),
    help="Directory of per-composite replay files named <composite_id>.jsonl.",
)
@click.option("--bound-k", type=int, default=1, show_default=True)
@click.option("--max-rounds", type=int, default=3, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True, help="Concurrent composites.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=".", show_default=True)
def evaluate(dataset_path, backend_kind, replay_dir, bound_k, max_rounds, jobs, seed, out_dir):
    """Score the pipeline against a labeled composite dataset."""
    data = json.loads(pathlib.Path(dataset_path).read_text(encoding="utf-8"))
    composites = data.get("composites", [])
    if backend_kind in ("scripted", "record") and not replay_dir:
        raise click.UsageError(f"--backend {backend_kind} needs --replay")
    replay_root = pathlib.Path(replay_dir) if replay_dir else None
    if backend_kind == "record" and replay_root is not None:
        replay_root.mkdir(parents=True, exist_ok=True)

    def run_one(doc: dict):
        ledger = UsageLedger()
        composite_id = doc["composite_id"]
        recorder = None
        if backend_kind == "scripted":
            backend = ScriptedBackend.from_path(replay_root / f"{composite_id}.jsonl")
        elif backend_kind == "record":
            recorder = RecordingBackend(LiveBackend(), replay_root / f"{composite_id}.jsonl")
            backend = recorder
        else:
            backend = LiveBackend()
        try:
            outcome = untangle_files(
                doc["old_files"],
                doc["new_files"],
                doc["diff"],
                backend=backend,
                ledger=ledger,
                bound_k=bound_k,
                max_rounds=max_rounds,
                grammar_id=doc.get("grammar_id", "line"),
            )
        finally:
            if recorder is not None:
                recorder.close()
        truth = {str(k): int(v) for k, v in doc["ground_truth"].items()}
        score = score_commit(
            composite_id,
            outcome.predictions,
            truth,
            int(doc["total_statements"]),
            int(doc["n_concerns"]),
        )
        row = score.document()
        row["nodes"] = len(outcome.graph.nodes)
        row["predicted_concerns"] = outcome.n_concerns
        row["converged"] = outcome.trace.converged
        return row, ledger

    rows: list[dict] = []
    failures: list[dict] = []
    combined = UsageLedger()

    def guarded(doc: dict):
        try:
            return ("ok", run_one(doc))
        except (UntanglerError, OSError, KeyError, ValueError) as exc:
            return ("fail", (doc.get("composite_id", "?"), exc))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(guarded, composites))
    else:
        results = [guarded(doc) for doc in composites]
    for status, payload in results:
        if status == "fail":
            composite_id, exc = payload
            failures.append({"composite_id": composite_id, "error": str(exc)})
            continue
        row, ledger = payload
        rows.append(row)
        combined.absorb(ledger)

    score_objs = [
        CommitScore(
            commit_id=r["commit_id"],
            n_concerns=r["n_concerns"],
            changed=r["changed"],
            total=r["total"],
            correct=r["correct"],
        )
        for r in rows
    ]
    try:
        summary = aggregate(score_objs) if score_objs else None
        aggregate_error = None
    except NoEligibleCommits as exc:
        summary = None
        aggregate_error = str(exc)

    buckets: dict[str, dict] = {}
    for lo, hi in NODE_BUCKETS:
        in_bucket = [r for r in rows if r["nodes"] >= lo and (hi is None or r["nodes"] < hi)]
        label = _bucket_label(lo, hi)
        buckets[label] = {
            "commits": len(in_bucket),
            "mean_acc_changed": (
                sum(r["acc_changed"] for r in in_bucket) / len(in_bucket) if in_bucket else None
            ),
        }

    doc = {
        "tool": {"name": "untangler", "version": __version__},
        "config": {"bound_k": bound_k, "max_rounds": max_rounds, "seed": seed},
        "rows": rows,
        "aggregate": summary,
        "aggregate_error": aggregate_error,
        "node_buckets": buckets,
        "failures": {"count": len(failures), "items": failures},
    }
    out = pathlib.Path(out_dir)
    _write_json(out / "evaluation.json", doc)
    _write_json(out / "ledger.json", {"backend": backend_kind, **combined.snapshot()})
    click.echo(f"scored {len(rows)} composites ({len(failures)} failures)")
    if summary:
        click.echo(
            f"overall_accuracy: {summary['overall_accuracy']:.4f}  "
            f"average_accuracy: {summary['average_accuracy']:.4f}"
        )
    click.echo(f"wrote {out / 'evaluation.json'} and {out / 'ledger.json'}")


@main.command()
@click.option("--repo", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--count", type=int, default=20, show_default=True)
@click.option(
    "--k",
    "k_choices",
    multiple=True,
    type=int,
    default=(2, 3),
    show_default=True,
    help="Constituents per composite; repeat to allow several sizes.",
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--grammar", "grammar_id", default="line", show_default=True)
@click.option(
    "--split",
    type=click.Choice(["train", "val", "test", "all"]),
    default="all",
    show_default=True,
    help="Chronological 80/10/10 slice to sample constituents from.",
)
@click.option("--limit", type=int, default=None, help="Use only the most recent N commits.")
def synthesize(repo, out_path, count, k_choices, seed, grammar_id, split, limit):
    """Build a labeled composite dataset from a repo's atomic commits."""
    commits = ingest_repo(repo, limit=limit)
    if split != "all":
        train, val, test = chronological_split(commits)
        commits = {"train": train, "val": val, "test": test}[split]
    composites = sample_composites(
        commits, count=count, k_choices=tuple(k_choices), seed=seed, grammar_id=grammar_id
    )
    payload = {
        "tool": {"name": "untangler", "version": __version__},
        "meta": {
            "repo": str(repo),
            "split": split,
            "seed": seed,
            "grammar_id": grammar_id,
            "commits_considered": len(commits),
        },
        "composites": [c.document() for c in composites],
    }
    _write_json(pathlib.Path(out_path), payload)
    click.echo(f"wrote {len(composites)} composites to {out_path}")


if __name__ == "__main__":
    main()
