"""Greedy intent-driven grouping of minimal change subgraphs.

Subgraphs are considered one at a time in pipeline order. The first
one founds group G1 with its own profile as the group intent. Every
later subgraph is compared only against groups of the same category;
if any exist, a single comparative judgment call either picks one of
them or answers NEW. Joining a group triggers one synthesis call that
rewrites the group intent to cover the newcomer; otherwise the
subgraph founds the next group. Group ids follow creation order
(G1, G2, ...) and are never reused.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from untangler.backend import ChatMessage, ChatRequest, UsageLedger, call
from untangler.errors import UntanglerError
from untangler.intent import (
    ChangeCategory,
    IntentError,
    IntentProfile,
    extract_json_payload,
    load_prompt,
    parse_synthesis_response,
    synthesis_prompt,
)
from untangler.purifier import MinimalChangeSubgraph


class JudgmentParseFailure(UntanglerError):
    """The judgment answer was not an offered group id or NEW, twice."""


class SynthesisParseFailure(UntanglerError):
    """The synthesized group intent stayed unparseable after a retry."""


@dataclass
class Group:
    """One intent group: ordered members plus a representative intent."""

    group_id: str
    member_ids: list[str] = field(default_factory=list)
    intent: IntentProfile | None = None

    def document(self) -> dict:
        return {
            "group_id": self.group_id,
            "members": list(self.member_ids),
            "intent": self.intent.document() if self.intent else None,
        }


def category_filter(groups: list[Group], category: ChangeCategory) -> list[Group]:
    """Groups whose representative intent has the given category, in order."""
    return [g for g in groups if g.intent is not None and g.intent.category is category]


def _render_groups(groups: list[Group]) -> str:
    return "\n".join(f"{g.group_id}: {g.intent.describe()}" for g in groups)


_CHOICE_RE = re.compile(r"\b(G\d+|NEW)\b", re.IGNORECASE)


def _parse_choice(text: str, offered: set[str]) -> str | None:
    """Group id or NEW from a judgment answer; None when unusable."""
    token: str | None = None
    try:
        payload = extract_json_payload(text)
        raw = payload.get("choice")
        if isinstance(raw, str):
            token = raw.strip()
    except IntentError:
        token = None
    if token is None:
        m = _CHOICE_RE.search(text)
        token = m.group(1) if m else None
    if token is None:
        return None
    token = token.upper() if token.upper() == "NEW" else "G" + token.upper().lstrip("G")
    if token == "NEW" or token in offered:
        return token
    return None


_JUDGMENT_REMINDER = (
    "Your previous answer could not be used. Reply with only a JSON object "
    '{{"choice": "<id>"}} where <id> is one of: {offered}, or NEW.'
)


def comparative_judgment(
    backend,
    ledger: UsageLedger | None,
    candidate: IntentProfile,
    candidate_id: str,
    groups: list[Group],
) -> Group | None:
    """Pick the existing group the candidate belongs to, or None for NEW.

    With no candidate groups this returns None without any model call.
    An answer outside the offered set counts as a parse failure; one
    retry with a reminder, then JudgmentParseFailure.
    """
    if not groups:
        return None
    template = load_prompt("judgment_v1.txt")
    offered = {g.group_id for g in groups}
    by_id = {g.group_id: g for g in groups}
    messages = [
        ChatMessage(
            role="user",
            content=template.format(candidate=candidate.describe(), groups=_render_groups(groups)),
        )
    ]
    last_text = ""
    for _ in range(2):
        response = call(
            backend,
            ledger,
            ChatRequest(messages=tuple(messages), purpose_tag="judge", subject_id=candidate_id),
        )
        choice = _parse_choice(response.text, offered)
        if choice == "NEW":
            return None
        if choice is not None:
            return by_id[choice]
        last_text = response.text
        messages.append(ChatMessage(role="assistant", content=response.text))
        messages.append(
            ChatMessage(
                role="user",
                content=_JUDGMENT_REMINDER.format(offered=", ".join(sorted(offered))),
            )
        )
    raise JudgmentParseFailure(
        f"judgment for {candidate_id} returned no usable choice (last answer: {last_text[:200]!r})"
    )


def synthesize_intent(
    backend,
    ledger: UsageLedger | None,
    group: Group,
    member_profiles: list[IntentProfile],
) -> IntentProfile:
    """One synthesis call that folds the members into a group intent.

    The group's category is pinned: whatever the model reports is
    overwritten with the category the group already has.
    """
    category = member_profiles[0].category if group.intent is None else group.intent.category
    messages = [
        ChatMessage(role="user", content=synthesis_prompt(member_profiles, category))
    ]
    last_error: IntentError | None = None
    for _ in range(2):
        response = call(
            backend,
            ledger,
            ChatRequest(messages=tuple(messages), purpose_tag="synthesize", subject_id=group.group_id),
        )
        try:
            return parse_synthesis_response(response.text, category)
        except IntentError as exc:
            last_error = exc
            messages.append(ChatMessage(role="assistant", content=response.text))
            messages.append(
                ChatMessage(
                    role="user",
                    content=(
                        "Your previous answer could not be parsed. Reply with only a JSON "
                        'object containing "category", "summary", "what", "how", "why".'
                    ),
                )
            )
    raise SynthesisParseFailure(f"synthesis for {group.group_id} failed: {last_error}")


def greedy_grouping(
    backend,
    ledger: UsageLedger | None,
    subgraphs: list[MinimalChangeSubgraph],
    profiles: dict[str, IntentProfile],
) -> list[Group]:
    """Build the initial partition of subgraphs into intent groups.

    Profiles must already exist for every subgraph; this stage makes
    no profiling calls of its own. Invariants: every subgraph lands in
    exactly one group, and all members of a group share its category.
    """
    groups: list[Group] = []
    for mcs in subgraphs:
        profile = profiles[mcs.mcs_id]
        candidates = category_filter(groups, profile.category)
        target = comparative_judgment(backend, ledger, profile, mcs.mcs_id, candidates)
        if target is None:
            groups.append(
                Group(group_id=f"G{len(groups) + 1}", member_ids=[mcs.mcs_id], intent=profile)
            )
            continue
        target.member_ids.append(mcs.mcs_id)
        target.intent = synthesize_intent(
            backend, ledger, target, [profiles[mid] for mid in target.member_ids]
        )
    return groups
