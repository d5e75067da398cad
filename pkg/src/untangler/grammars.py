"""Statement-segmentation frontends for the change graph builder.

A grammar carves one source file into an ordered list of statement
descriptors: a line span, a coarse statement kind, def/use identifier
sets, and block nesting. Grammars are looked up by id so the graph
builder stays language-agnostic. Two frontends ship by default:

* ``line`` — the universal fallback. Every line (blank lines included)
  is its own statement of kind ``other`` with no structure. Accepts any
  text.
* ``clike`` — a brace-and-semicolon scanner for C-family sources
  (C/C++/Java/C#/JS). It recognizes declarations, assignments, calls,
  conditions, loop headers and function signatures, and extracts the
  def/use sets that drive data-dependency edges.

Both grammars assign every line of the file to exactly one statement
span, so diff lines always map to a unique statement.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from untangler.errors import UntanglerError


class UnsupportedGrammar(UntanglerError):
    """No grammar is registered under the requested id."""


class ParseFailure(UntanglerError):
    """A grammar frontend failed on a source file."""

    def __init__(self, message: str, file_path: str = "", line: int | None = None):
        context = file_path + (f":{line}" if line is not None else "")
        super().__init__(f"{context}: {message}" if context else message)
        self.file_path = file_path
        self.line = line


STATEMENT_KINDS = (
    "declaration",
    "assignment",
    "call",
    "condition",
    "loop-header",
    "signature",
    "other",
)


@dataclass(frozen=True)
class ParsedStatement:
    """One statement as seen by a grammar, before graph assembly.

    ``parent``, ``scope`` and ``guards`` are indices into the statement
    list returned by the same ``parse`` call (``None`` / empty when the
    statement sits at file level).
    """

    start: int
    end: int
    kind: str
    text: str
    defs: frozenset[str] = frozenset()
    uses: frozenset[str] = frozenset()
    parent: int | None = None
    scope: int | None = None
    guards: tuple[int, ...] = ()


class LineGrammar:
    """Degraded one-statement-per-line frontend; accepts any text."""

    grammar_id = "line"

    def parse(self, source: str) -> list[ParsedStatement]:
        return [
            ParsedStatement(start=i, end=i, kind="other", text=line)
            for i, line in enumerate(source.splitlines(), start=1)
        ]


_IDENT_RE = re.compile(r"[A-Za-z_]\w*")
_LABEL_RE = re.compile(r"^[A-Za-z_][\w\s:]*:$")
_CALL_RE = re.compile(r"^[A-Za-z_][\w:.]*(->[\w:.]+)*\s*\(")
_DECL_SHAPE_RE = re.compile(r"^[A-Za-z_][\w\s*&<>,:\[\]]*$")
_INCDEC_RE = re.compile(r"^(\+\+|--)?\s*([A-Za-z_]\w*)\s*(\+\+|--)?$")

_KEYWORDS = frozenset(
    """
    if else for while do switch case default return break continue goto
    sizeof new delete throw throws try catch finally true false null NULL
    nullptr this instanceof typeof in of typedef static const unsigned
    signed volatile register extern inline auto restrict struct union enum
    class interface namespace using template typename public private
    protected internal virtual override final abstract synchronized
    transient implements extends import package var let function void int
    char short long float double bool boolean byte
    """.split()
)

_CONTROL_KINDS = {
    "if": "condition",
    "switch": "condition",
    "for": "loop-header",
    "while": "loop-header",
    "do": "loop-header",
}


def _first_word(code: str) -> str:
    m = _IDENT_RE.match(code.lstrip())
    return m.group(0) if m else ""


def _idents(code: str) -> list[str]:
    """Identifier occurrences, skipping keywords and member accesses."""
    found = []
    for m in _IDENT_RE.finditer(code):
        name = m.group(0)
        if name in _KEYWORDS:
            continue
        before = code[: m.start()].rstrip()
        if before.endswith(".") or before.endswith("->"):
            continue
        found.append(name)
    return found


def _strip_comments(line: str, in_block: bool) -> tuple[str, bool]:
    """Blank out // and /* */ comments, carrying block state across lines."""
    out: list[str] = []
    i, n = 0, len(line)
    while i < n:
        if in_block:
            j = line.find("*/", i)
            if j < 0:
                return "".join(out), True
            i = j + 2
            in_block = False
            continue
        ch = line[i]
        if ch in "\"'":
            quote = ch
            out.append(ch)
            i += 1
            while i < n:
                c = line[i]
                out.append(c)
                i += 1
                if c == "\\" and i < n:
                    out.append(line[i])
                    i += 1
                    continue
                if c == quote:
                    break
            continue
        if ch == "/" and i + 1 < n and line[i + 1] == "/":
            break
        if ch == "/" and i + 1 < n and line[i + 1] == "*":
            in_block = True
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out), in_block


def _blank_literals(code: str) -> str:
    """Replace string/char literal contents with spaces, keeping length."""
    out: list[str] = []
    i, n = 0, len(code)
    while i < n:
        ch = code[i]
        if ch in "\"'":
            out.append(ch)
            i += 1
            while i < n:
                c = code[i]
                if c == "\\" and i + 1 < n:
                    out.append("  ")
                    i += 2
                    continue
                out.append(c if c == ch else " ")
                i += 1
                if c == ch:
                    break
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _split_top_commas(code: str) -> list[str]:
    parts, depth, last = [], 0, 0
    for i, ch in enumerate(code):
        if ch in "([{<":
            depth += 1
        elif ch in ")]}>":
            depth = max(0, depth - 1)
        elif ch == "," and depth == 0:
            parts.append(code[last:i])
            last = i + 1
    parts.append(code[last:])
    return [p for p in (p.strip() for p in parts) if p]


def _find_assignment(code: str) -> tuple[str, str, str] | None:
    """Split ``lhs OP rhs`` at the first top-level assignment operator."""
    depth = 0
    for i, ch in enumerate(code):
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth = max(0, depth - 1)
        elif ch == "=" and depth == 0:
            nxt = code[i + 1] if i + 1 < len(code) else ""
            prev = code[i - 1] if i > 0 else ""
            if nxt == "=" or prev in "=!<>":
                continue
            if prev in "+-*/%&|^":
                return code[: i - 1], prev + "=", code[i + 1 :]
            return code[:i], "=", code[i + 1 :]
    return None


def _last_ident(code: str) -> str | None:
    names = [m.group(0) for m in _IDENT_RE.finditer(code)]
    while names and names[-1] in _KEYWORDS:
        names.pop()
    return names[-1] if names else None


def _ident_count_before_bracket(code: str) -> int:
    head = code.split("[", 1)[0]
    return len(_IDENT_RE.findall(head))


def _looks_like_decl(code: str) -> bool:
    code = code.strip()
    if not code or not _DECL_SHAPE_RE.match(code):
        return False
    if _ident_count_before_bracket(code) < 2:
        return False
    return _last_ident(code) is not None


def _lhs_target(lhs: str) -> tuple[str | None, list[str]]:
    """Base identifier written by an assignment LHS, plus identifiers read
    by the LHS itself (array indices and the like)."""
    base: str | None = None
    reads: list[str] = []
    for m in _IDENT_RE.finditer(lhs):
        name = m.group(0)
        if name in _KEYWORDS:
            continue
        before = lhs[: m.start()].rstrip()
        if before.endswith(".") or before.endswith("->"):
            continue
        if base is None:
            base = name
        else:
            reads.append(name)
    return base, reads


def _param_defs(header: str) -> list[str]:
    """Parameter names declared by a function signature header."""
    open_idx = header.find("(")
    if open_idx < 0:
        return []
    depth = 0
    close_idx = None
    for i in range(open_idx, len(header)):
        if header[i] == "(":
            depth += 1
        elif header[i] == ")":
            depth -= 1
            if depth == 0:
                close_idx = i
                break
    if close_idx is None:
        return []
    inner = header[open_idx + 1 : close_idx]
    defs = []
    for part in _split_top_commas(inner):
        name = _last_ident(part)
        if name:
            defs.append(name)
    return defs


def _classify_simple(code: str) -> tuple[str, list[str], list[str]]:
    """Kind plus (defs, uses) for a semicolon-terminated statement."""
    body = code.strip().rstrip(";").strip()
    if not body:
        return "other", [], []
    first = _first_word(body)
    if first in ("break", "continue", "goto", "typedef"):
        return "other", [], []
    if first in ("return", "throw", "delete", "yield"):
        return "other", [], _idents(body[len(first) :])

    parts = _split_top_commas(body)
    head_assign = _find_assignment(parts[0]) if parts else None
    if head_assign is not None:
        lhs, _, _ = head_assign
        is_decl = (
            _DECL_SHAPE_RE.match(lhs.strip() or "-") is not None
            and _ident_count_before_bracket(lhs) >= 2
        )
        defs: list[str] = []
        uses: list[str] = []
        for part in parts:
            split = _find_assignment(part)
            if split is None:
                if is_decl:
                    name = _last_ident(part)
                    if name:
                        defs.append(name)
                else:
                    uses.extend(_idents(part))
                continue
            plhs, op, prhs = split
            if is_decl:
                name = _last_ident(plhs)
                if name:
                    defs.append(name)
            else:
                base, lhs_reads = _lhs_target(plhs)
                if base:
                    defs.append(base)
                    if op != "=":
                        uses.append(base)
                uses.extend(lhs_reads)
            uses.extend(_idents(prhs))
        return ("declaration" if is_decl else "assignment"), defs, uses

    m = _INCDEC_RE.match(body)
    if m and (m.group(1) or m.group(3)) and m.group(2) not in _KEYWORDS:
        name = m.group(2)
        return "assignment", [name], [name]
    if "(" in body and _CALL_RE.match(body):
        return "call", [], _idents(body)
    if _looks_like_decl(body):
        defs = []
        for i, part in enumerate(parts):
            name = _last_ident(part) if i == 0 else (_idents(part) or [None])[0]
            if name:
                defs.append(name)
        return "declaration", defs, []
    return "other", [], _idents(body)


def _classify_for_header(header: str) -> tuple[list[str], list[str]]:
    """Defs/uses of a ``for (init; cond; step)`` header."""
    open_idx = header.find("(")
    inner = header[open_idx + 1 :].rstrip()
    if inner.endswith(")"):
        inner = inner[:-1]
    defs: list[str] = []
    uses: list[str] = []
    clauses = inner.split(";")
    if clauses:
        kind, d, u = _classify_simple(clauses[0] + ";")
        if kind in ("declaration", "assignment"):
            defs.extend(d)
            uses.extend(u)
        else:
            uses.extend(_idents(clauses[0]))
    for clause in clauses[1:]:
        uses.extend(_idents(clause))
    return defs, uses


@dataclass
class _Block:
    owner: int | None
    owner_kind: str
    scope: int | None


class ClikeGrammar:
    """Brace/semicolon statement scanner for C-family sources."""

    grammar_id = "clike"

    def parse(self, source: str) -> list[ParsedStatement]:
        lines = source.splitlines()
        stmts: list[dict] = []
        stack: list[_Block] = []
        in_comment = False
        pend_start: int | None = None
        pend_code: list[str] = []

        def guard_chain() -> tuple[int, ...]:
            return tuple(
                b.owner
                for b in stack
                if b.owner is not None and b.owner_kind in ("condition", "loop-header")
            )

        def emit(
            start: int,
            end: int,
            kind: str,
            defs: list[str] | tuple = (),
            uses: list[str] | tuple = (),
            scope: int | None | str = "inherit",
        ) -> int:
            idx = len(stmts)
            stmts.append(
                {
                    "start": start,
                    "end": end,
                    "kind": kind,
                    "defs": frozenset(defs),
                    "uses": frozenset(uses),
                    "parent": stack[-1].owner if stack else None,
                    "scope": (stack[-1].scope if stack else None)
                    if scope == "inherit"
                    else scope,
                    "guards": guard_chain(),
                }
            )
            return idx

        def in_function() -> bool:
            return any(b.scope is not None for b in stack)

        for lineno, raw in enumerate(lines, start=1):
            code, in_comment = _strip_comments(raw, in_comment)
            code = _blank_literals(code)
            stripped = code.strip()

            if pend_start is None:
                if not stripped or stripped.startswith("#"):
                    emit(lineno, lineno, "other")
                    continue
                pend_start = lineno
                pend_code = []
            pend_code.append(stripped)

            buf = " ".join(pend_code).strip()
            if buf.count("(") - buf.count(")") > 0:
                continue
            brace = buf.count("{") - buf.count("}")

            if buf.endswith(";") and brace == 0 and not buf.startswith("}"):
                kind, defs, uses = _classify_simple(buf)
                emit(pend_start, lineno, kind, defs, uses)
                pend_start = None
            elif buf.endswith("{") and brace > 0:
                self._open_block(buf, pend_start, lineno, stmts, stack, emit, in_function)
                pend_start = None
            elif brace < 0 or buf.startswith("}"):
                closes = min(len(stack), max(1, -brace))
                rest = buf.lstrip("}").strip()
                if rest.endswith("{"):
                    # close-and-reopen: `} else {`, `} else if (c) {`
                    popped = stack[-1] if stack else None
                    for _ in range(closes):
                        if stack:
                            stack.pop()
                    if _first_word(rest) == "else" and re.search(r"\bif\b", rest):
                        idx = emit(pend_start, lineno, "condition", (), _idents(rest))
                        stack.append(_Block(idx, "condition", stack[-1].scope if stack else None))
                    elif _first_word(rest) == "else" and popped is not None:
                        idx = emit(pend_start, lineno, "other")
                        stack.append(_Block(popped.owner, popped.owner_kind, popped.scope))
                    else:
                        idx = emit(pend_start, lineno, "other", (), _idents(rest))
                        stack.append(_Block(idx, "other", stack[-1].scope if stack else None))
                else:
                    # plain closes, possibly with a trailer (`} while (x);`)
                    emit(pend_start, lineno, "other", (), _idents(rest))
                    for _ in range(closes):
                        if stack:
                            stack.pop()
                pend_start = None
            elif brace == 0 and buf.endswith("}"):
                # balanced one-liner: `if (x) { y = 1; }`
                first = _first_word(buf)
                kind = _CONTROL_KINDS.get(first, "other")
                emit(pend_start, lineno, kind, (), _idents(buf))
                pend_start = None
            elif _LABEL_RE.match(buf):
                emit(pend_start, lineno, "other")
                pend_start = None
            # otherwise the statement continues on the next line

        if pend_start is not None:
            emit(pend_start, len(lines), "other", (), _idents(" ".join(pend_code)))

        return [
            ParsedStatement(
                start=s["start"],
                end=s["end"],
                kind=s["kind"],
                text="\n".join(lines[s["start"] - 1 : s["end"]]),
                defs=s["defs"],
                uses=s["uses"],
                parent=s["parent"],
                scope=s["scope"],
                guards=s["guards"],
            )
            for s in stmts
        ]

    @staticmethod
    def _open_block(buf, start, end, stmts, stack, emit, in_function) -> None:
        header = buf.rstrip("{").strip()
        first = _first_word(header)
        kind = _CONTROL_KINDS.get(first)
        if kind == "loop-header" and first == "for":
            defs, uses = _classify_for_header(header)
            idx = emit(start, end, "loop-header", defs, uses)
        elif kind is not None:
            idx = emit(start, end, kind, (), _idents(header))
        elif "(" in header and not in_function():
            idx = emit(start, end, "signature", _param_defs(header), (), scope=None)
            stmts[idx]["scope"] = idx
            stack.append(_Block(idx, "signature", idx))
            return
        else:
            idx = emit(start, end, "other", (), _idents(header))
        stack.append(_Block(idx, stmts[idx]["kind"], stack[-1].scope if stack else None))


_GRAMMARS: dict[str, object] = {
    "line": LineGrammar(),
    "clike": ClikeGrammar(),
}

_ALIASES = {
    "c": "clike",
    "cpp": "clike",
    "cxx": "clike",
    "h": "clike",
    "java": "clike",
    "cs": "clike",
    "csharp": "clike",
    "js": "clike",
    "ts": "clike",
}


def register_grammar(grammar) -> None:
    """Add a frontend to the registry (keyed by its ``grammar_id``)."""
    _GRAMMARS[grammar.grammar_id] = grammar


def resolve_grammar(grammar_id: str):
    key = _ALIASES.get(grammar_id, grammar_id)
    try:
        return _GRAMMARS[key]
    except KeyError:
        known = ", ".join(sorted(set(_GRAMMARS) | set(_ALIASES)))
        raise UnsupportedGrammar(f"unknown grammar {grammar_id!r} (known: {known})") from None
