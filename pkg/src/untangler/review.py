"""Reviewer refinement of an intent partition.

Each multi-member group is shown to a reviewer that either accepts it
or rejects it by naming the intent of its largest coherent subset and
the members that fall outside it. Rejected outliers are excised and
rehomed: offered to other same-category groups through the usual
comparative judgment, or placed into a new singleton group. The loop
repeats on groups that changed, up to a fixed round budget so cyclic
reject/rejoin patterns cannot run forever.

Singleton groups are accepted automatically without a model call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from untangler.backend import ChatMessage, ChatRequest, UsageLedger, call
from untangler.errors import UntanglerError
from untangler.grouping import (
    Group,
    category_filter,
    comparative_judgment,
    synthesize_intent,
)
from untangler.intent import (
    IntentError,
    IntentProfile,
    extract_json_payload,
    load_prompt,
)


class ReviewParseFailure(UntanglerError):
    """The review answer stayed unusable after a format reminder."""


@dataclass(frozen=True)
class ReviewDecision:
    group_id: str
    verdict: str                      # ACCEPT or REJECT
    core_intent: str = ""
    outliers: tuple[str, ...] = ()
    auto: bool = False                # singleton accepted without a call

    def document(self) -> dict:
        doc: dict = {"group_id": self.group_id, "verdict": self.verdict, "auto": self.auto}
        if self.verdict == "REJECT":
            doc["core_intent"] = self.core_intent
            doc["outliers"] = list(self.outliers)
        return doc


@dataclass(frozen=True)
class ExciseAction:
    outlier: str
    source: str
    target: str
    created: bool                     # target is a fresh singleton group

    def document(self) -> dict:
        return {
            "outlier": self.outlier,
            "source": self.source,
            "target": self.target,
            "created": self.created,
        }


@dataclass
class RoundTrace:
    round_index: int
    decisions: list[ReviewDecision] = field(default_factory=list)
    actions: list[ExciseAction] = field(default_factory=list)

    def document(self) -> dict:
        return {
            "round": self.round_index,
            "decisions": [d.document() for d in self.decisions],
            "actions": [a.document() for a in self.actions],
        }


@dataclass
class RefinementTrace:
    rounds: list[RoundTrace] = field(default_factory=list)
    converged: bool = False

    def document(self) -> dict:
        return {
            "converged": self.converged,
            "rounds": [r.document() for r in self.rounds],
        }


def _parse_review(text: str, member_ids: list[str]) -> tuple[str, str, tuple[str, ...]] | None:
    """(verdict, core_intent, outliers) or None when unusable.

    A REJECT must name a non-empty proper subset of the group's
    members; anything else (unknown ids, every member an outlier)
    counts as unusable.
    """
    verdict = None
    core_intent = ""
    outliers: list[str] = []
    try:
        payload = extract_json_payload(text)
    except IntentError:
        payload = None
    if payload is not None and isinstance(payload.get("verdict"), str):
        verdict = payload["verdict"].strip().upper()
        core_intent = str(payload.get("core_intent", "")).strip()
        raw = payload.get("outliers", [])
        if isinstance(raw, list):
            outliers = [str(x).strip() for x in raw]
        else:
            return None
    elif payload is None:
        upper = text.upper()
        if "REJECT" in upper:
            verdict = "REJECT"
        elif "ACCEPT" in upper:
            verdict = "ACCEPT"
    if verdict == "ACCEPT":
        return ("ACCEPT", "", ())
    if verdict != "REJECT":
        return None
    known = set(member_ids)
    if not outliers or not set(outliers) <= known or set(outliers) == known:
        return None
    ordered = tuple(m for m in member_ids if m in set(outliers))
    return ("REJECT", core_intent, ordered)


_REVIEW_REMINDER = (
    "Your previous answer could not be used. Reply with only a JSON object: either "
    '{"verdict": "ACCEPT"} or {"verdict": "REJECT", "core_intent": "...", '
    '"outliers": [...]}. Outliers must list some, but not all, of the member '
    "identifiers exactly as given."
)


def review_group(
    backend,
    ledger: UsageLedger | None,
    group: Group,
    profiles: dict[str, IntentProfile],
) -> ReviewDecision:
    """Audit one group. Singletons are accepted without a model call."""
    if len(group.member_ids) <= 1:
        return ReviewDecision(group_id=group.group_id, verdict="ACCEPT", auto=True)
    template = load_prompt("review_v1.txt")
    members = "\n".join(f"- {mid}: {profiles[mid].describe()}" for mid in group.member_ids)
    messages = [
        ChatMessage(
            role="user",
            content=template.format(group_intent=group.intent.describe(), members=members),
        )
    ]
    last_text = ""
    for _ in range(2):
        response = call(
            backend,
            ledger,
            ChatRequest(messages=tuple(messages), purpose_tag="review", subject_id=group.group_id),
        )
        parsed = _parse_review(response.text, group.member_ids)
        if parsed is not None:
            verdict, core_intent, outliers = parsed
            return ReviewDecision(
                group_id=group.group_id,
                verdict=verdict,
                core_intent=core_intent,
                outliers=outliers,
            )
        last_text = response.text
        messages.append(ChatMessage(role="assistant", content=response.text))
        messages.append(ChatMessage(role="user", content=_REVIEW_REMINDER))
    raise ReviewParseFailure(
        f"review of {group.group_id} returned no usable verdict (last answer: {last_text[:200]!r})"
    )


def _next_group_id(groups: list[Group]) -> str:
    highest = 0
    for g in groups:
        if g.group_id.startswith("G") and g.group_id[1:].isdigit():
            highest = max(highest, int(g.group_id[1:]))
    return f"G{highest + 1}"


def excise_and_regroup(
    backend,
    ledger: UsageLedger | None,
    groups: list[Group],
    source: Group,
    decision: ReviewDecision,
    profiles: dict[str, IntentProfile],
) -> list[ExciseAction]:
    """Remove the outliers from a rejected group and rehome them.

    Each outlier is offered to the other same-category groups via
    comparative judgment (new singletons created earlier in the same
    pass are valid targets); with no candidates it founds a new
    singleton. The shrunken source group gets its intent re-derived:
    re-synthesized when several members remain, otherwise reset to the
    sole member's own profile.
    """
    actions: list[ExciseAction] = []
    for outlier in decision.outliers:
        source.member_ids.remove(outlier)
        profile = profiles[outlier]
        candidates = [
            g for g in category_filter(groups, profile.category) if g.group_id != source.group_id
        ]
        target = comparative_judgment(backend, ledger, profile, outlier, candidates)
        if target is None:
            fresh = Group(group_id=_next_group_id(groups), member_ids=[outlier], intent=profile)
            groups.append(fresh)
            actions.append(
                ExciseAction(outlier=outlier, source=source.group_id, target=fresh.group_id, created=True)
            )
        else:
            target.member_ids.append(outlier)
            target.intent = synthesize_intent(
                backend, ledger, target, [profiles[mid] for mid in target.member_ids]
            )
            actions.append(
                ExciseAction(outlier=outlier, source=source.group_id, target=target.group_id, created=False)
            )
    if len(source.member_ids) >= 2:
        source.intent = synthesize_intent(
            backend, ledger, source, [profiles[mid] for mid in source.member_ids]
        )
    else:
        source.intent = profiles[source.member_ids[0]]
    return actions


def refinement_loop(
    backend,
    ledger: UsageLedger | None,
    groups: list[Group],
    profiles: dict[str, IntentProfile],
    max_rounds: int = 3,
) -> tuple[list[Group], RefinementTrace]:
    """Iterate review and excision until every group is accepted.

    Only pending groups (everything in round one; created or modified
    groups afterwards) are re-reviewed. The loop stops early once a
    round ends with no rejections; otherwise it runs ``max_rounds``
    rounds and reports ``converged=False``.
    """
    trace = RefinementTrace()
    if not groups:
        trace.converged = True
        return groups, trace
    pending = {g.group_id for g in groups}
    for round_index in range(1, max_rounds + 1):
        round_trace = RoundTrace(round_index=round_index)
        touched: set[str] = set()
        for group in list(groups):
            if group.group_id not in pending:
                continue
            decision = review_group(backend, ledger, group, profiles)
            round_trace.decisions.append(decision)
            if decision.verdict == "REJECT":
                actions = excise_and_regroup(
                    backend, ledger, groups, group, decision, profiles
                )
                round_trace.actions.extend(actions)
                touched.add(group.group_id)
                touched.update(a.target for a in actions)
        trace.rounds.append(round_trace)
        if not any(d.verdict == "REJECT" for d in round_trace.decisions):
            trace.converged = True
            break
        pending = touched
    return groups, trace


def partition_members(groups: list[Group]) -> list[str]:
    """All member ids across a partition, in group order."""
    return [mid for g in groups for mid in g.member_ids]
