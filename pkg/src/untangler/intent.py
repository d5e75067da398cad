"""Intent profiling of minimal change subgraphs.

Each subgraph is shown to the model inside a four-step analysis prompt
(literal description, functional impact, category inference, intent
summary) and the model reports a structured intent profile: a closed
category plus free-text summary/what/how/why. Parsing is tolerant of
reasoning text around the JSON payload; category names are matched
case- and whitespace-insensitively against the closed list.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources

from untangler.backend import ChatMessage, ChatRequest, UsageLedger, call
from untangler.errors import UntanglerError
from untangler.purifier import MinimalChangeSubgraph


class IntentError(UntanglerError):
    """Base class for intent extraction failures."""


class NoStructuredPayload(IntentError):
    """The response contains no parseable JSON object."""


class MissingField(IntentError):
    """The JSON payload lacks a required profile field."""


class InvalidCategory(IntentError):
    """The reported category is not one of the closed set."""


class ProfileFailure(IntentError):
    """Profiling a subgraph failed even after format-reminder retries."""


class ChangeCategory(Enum):
    BUG_FIX = "Bug Fix"
    FEATURE = "Feature"
    REFACTORING = "Refactoring"
    PERFORMANCE = "Performance"
    DOCUMENTATION = "Documentation"
    TEST = "Test"
    OTHERS = "Others"


_CATEGORY_BY_KEY = {re.sub(r"[^a-z]", "", c.value.lower()): c for c in ChangeCategory}


def normalize_category(text: str) -> ChangeCategory:
    """Match a category name ignoring case, spacing and punctuation."""
    key = re.sub(r"[^a-z]", "", str(text).lower())
    try:
        return _CATEGORY_BY_KEY[key]
    except KeyError:
        raise InvalidCategory(f"not a recognized change category: {text!r}") from None


@dataclass(frozen=True)
class IntentProfile:
    category: ChangeCategory
    summary: str
    what: str = ""
    how: str = ""
    why: str = ""

    def describe(self) -> str:
        """One-line rendering used inside downstream prompts."""
        return f"({self.category.value}) {self.summary}"

    def document(self) -> dict:
        return {
            "category": self.category.value,
            "summary": self.summary,
            "what": self.what,
            "how": self.how,
            "why": self.why,
        }


def load_prompt(name: str) -> str:
    """Read a versioned prompt template shipped with the package."""
    return resources.files("untangler.prompts").joinpath(name).read_text(encoding="utf-8")


def extract_json_payload(text: str) -> dict:
    """Pull the last JSON object out of a free-form model response.

    Scans for balanced top-level ``{...}`` spans (string-aware) and
    parses them last-to-first, so the model's final answer wins over
    examples quoted earlier in its reasoning.
    """
    spans: list[tuple[int, int]] = []
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    spans.append((start, i + 1))
    for lo, hi in reversed(spans):
        try:
            payload = json.loads(text[lo:hi])
        except ValueError:
            continue
        if isinstance(payload, dict):
            return payload
    raise NoStructuredPayload("no JSON object found in model response")


def parse_intent_response(text: str) -> IntentProfile:
    """Decode a profiling response into an IntentProfile.

    ``category`` and ``summary`` are required; ``what``/``how``/``why``
    default to empty strings when omitted.
    """
    payload = extract_json_payload(text)
    for field_name in ("category", "summary"):
        if field_name not in payload or not str(payload[field_name]).strip():
            raise MissingField(f"profile payload is missing {field_name!r}")
    return IntentProfile(
        category=normalize_category(payload["category"]),
        summary=str(payload["summary"]).strip(),
        what=str(payload.get("what", "")).strip(),
        how=str(payload.get("how", "")).strip(),
        why=str(payload.get("why", "")).strip(),
    )


_FORMAT_REMINDER = (
    "Your previous answer could not be parsed. Reply again with only a JSON object "
    'containing the keys "category", "summary", "what", "how", "why". The category '
    "must be one of [Bug Fix, Feature, Refactoring, Performance, Documentation, "
    "Test, Others]."
)


def profile_mcs(
    backend,
    ledger: UsageLedger | None,
    mcs: MinimalChangeSubgraph,
    retries: int = 2,
) -> IntentProfile:
    """Ask the model for the intent profile of one subgraph.

    On a malformed response the exchange is retried with a format
    reminder appended, up to ``retries`` extra calls; after that the
    last parse error is wrapped in ProfileFailure.
    """
    template = load_prompt("iocot_v1.txt")
    messages = [ChatMessage(role="user", content=template.format(diff=mcs.diff_text.rstrip("\n")))]
    last_error: IntentError | None = None
    for _ in range(retries + 1):
        response = call(
            backend,
            ledger,
            ChatRequest(
                messages=tuple(messages),
                purpose_tag="profile",
                subject_id=mcs.mcs_id,
            ),
        )
        try:
            return parse_intent_response(response.text)
        except IntentError as exc:
            last_error = exc
            messages.append(ChatMessage(role="assistant", content=response.text))
            messages.append(ChatMessage(role="user", content=_FORMAT_REMINDER))
    raise ProfileFailure(f"could not profile {mcs.mcs_id}: {last_error}") from last_error


def synthesis_prompt(member_profiles, category: ChangeCategory) -> str:
    """Fill the group-synthesis template for a set of member profiles."""
    template = load_prompt("synthesis_v1.txt")
    members = "\n".join(f"- {p.describe()}" for p in member_profiles)
    return template.format(members=members, category=category.value)


def parse_synthesis_response(text: str, category: ChangeCategory) -> IntentProfile:
    """Decode a synthesis response, pinning the category to the group's."""
    profile = parse_intent_response(text)
    if profile.category is not category:
        profile = replace(profile, category=category)
    return profile
