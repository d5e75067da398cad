"""Diff parsing, grammars, seeds and dependency extraction."""

from __future__ import annotations

import difflib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from untangler.changegraph import (
    AST_PARENT,
    CONTROL_DEP,
    DATA_DEP,
    DiffRegion,
    InconsistentLineCount,
    MalformedHunkHeader,
    ParseFailure,
    RegionOutOfRange,
    UnsupportedGrammar,
    Version,
    apply_diff_regions,
    build_statement_graph,
    compute_dependencies,
    identify_seed_nodes,
    merge_graphs,
    parse_unified_diff,
    register_grammar,
)
from untangler.grammars import resolve_grammar

C_OLD = """#include <stdio.h>

static bool valid_shell(const char *user)
{
\tconst struct passwd *pw;
\tbool ok = false;

\tpw = getspnam(user);
\tif (NULL != pw) {
\t\tok = true;
\t}
\treturn ok;
}
"""

C_NEW = C_OLD.replace("const struct passwd *pw;", "struct passwd *pw;").replace(
    "getspnam(user)", "getpwnam(user)"
)


def two_concern_diff() -> str:
    lines = difflib.unified_diff(
        C_OLD.splitlines(), C_NEW.splitlines(), fromfile="a/shell.c", tofile="b/shell.c", n=0, lineterm=""
    )
    return "\n".join(lines) + "\n"


class TestParseUnifiedDiff:
    def test_simple_replacement_region(self):
        diff = (
            "--- a/x.txt\n"
            "+++ b/x.txt\n"
            "@@ -2,2 +2,2 @@\n"
            "-old one\n"
            "-old two\n"
            "+new one\n"
            "+new two\n"
        )
        regions = parse_unified_diff(diff)
        assert len(regions) == 1
        r = regions[0]
        assert r.file_path == "x.txt"
        assert r.old_range == (2, 3)
        assert r.new_range == (2, 3)
        assert r.removed_lines == ("old one", "old two")
        assert r.added_lines == ("new one", "new two")

    def test_two_runs_in_one_hunk(self):
        # context line between the runs splits them into two regions
        diff = (
            "--- a/x.txt\n"
            "+++ b/x.txt\n"
            "@@ -1,3 +1,3 @@\n"
            "-a\n"
            "+A\n"
            " keep\n"
            "-c\n"
            "+C\n"
        )
        regions = parse_unified_diff(diff)
        assert [(r.old_range, r.new_range) for r in regions] == [((1, 1), (1, 1)), ((3, 3), (3, 3))]

    def test_interleaved_changes_form_one_run(self):
        diff = (
            "--- a/x.txt\n"
            "+++ b/x.txt\n"
            "@@ -1,2 +1,2 @@\n"
            "-a\n"
            "+A\n"
            "-b\n"
            "+B\n"
        )
        regions = parse_unified_diff(diff)
        assert len(regions) == 1
        assert regions[0].removed_lines == ("a", "b")
        assert regions[0].added_lines == ("A", "B")

    def test_insert_only_region_is_empty_on_old_side(self):
        diff = "--- a/x.txt\n+++ b/x.txt\n@@ -2,0 +3,2 @@\n+p\n+q\n"
        (r,) = parse_unified_diff(diff)
        assert r.old_range == (3, 2)      # empty, anchored before old line 3
        assert r.new_range == (3, 4)
        assert r.removed_lines == ()

    def test_delete_only_region_is_empty_on_new_side(self):
        diff = "--- a/x.txt\n+++ b/x.txt\n@@ -3,2 +2,0 @@\n-p\n-q\n"
        (r,) = parse_unified_diff(diff)
        assert r.old_range == (3, 4)
        assert r.new_range == (3, 2)
        assert r.added_lines == ()

    def test_multiple_files_keep_diff_order(self):
        diff = (
            "--- a/b.txt\n+++ b/b.txt\n@@ -1 +1 @@\n-x\n+y\n"
            "--- a/a.txt\n+++ b/a.txt\n@@ -1 +1 @@\n-x\n+y\n"
        )
        regions = parse_unified_diff(diff)
        assert [r.file_path for r in regions] == ["b.txt", "a.txt"]

    def test_new_file_and_deleted_file_paths(self):
        diff = (
            "--- /dev/null\n+++ b/new.txt\n@@ -0,0 +1 @@\n+hello\n"
            "--- a/gone.txt\n+++ /dev/null\n@@ -1 +0,0 @@\n-bye\n"
        )
        regions = parse_unified_diff(diff)
        assert regions[0].file_path == "new.txt"
        assert regions[0].old_range == (1, 0)
        assert regions[1].file_path == "gone.txt"

    def test_no_newline_marker_is_skipped(self):
        diff = "--- a/x.txt\n+++ b/x.txt\n@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+b\n"
        (r,) = parse_unified_diff(diff)
        assert r.removed_lines == ("a",)
        assert r.added_lines == ("b",)

    def test_empty_input(self):
        assert parse_unified_diff("") == []

    def test_malformed_hunk_header(self):
        with pytest.raises(MalformedHunkHeader):
            parse_unified_diff("--- a/x\n+++ b/x\n@@ nonsense @@\n")

    def test_hunk_before_file_header(self):
        with pytest.raises(MalformedHunkHeader):
            parse_unified_diff("@@ -1 +1 @@\n-a\n+b\n")

    def test_truncated_hunk_body(self):
        with pytest.raises(InconsistentLineCount):
            parse_unified_diff("--- a/x\n+++ b/x\n@@ -1,2 +1,2 @@\n-a\n+b\n")

    def test_overrunning_hunk_body(self):
        with pytest.raises(InconsistentLineCount):
            parse_unified_diff("--- a/x\n+++ b/x\n@@ -1,1 +1,1 @@\n-a\n-extra\n+b\n")


class TestApplyDiffRegions:
    def test_round_trip_hand_case(self):
        old = "a\nb\nc\n"
        new = "a\nB\nB2\nc\n"
        regions = parse_unified_diff(
            "\n".join(
                difflib.unified_diff(
                    old.splitlines(), new.splitlines(), fromfile="a/f", tofile="b/f", n=0, lineterm=""
                )
            )
        )
        assert apply_diff_regions(old, regions) == new

    def test_mismatched_removed_lines_raise(self):
        region = DiffRegion("f", (1, 1), (1, 1), ("not there",), ("x",))
        with pytest.raises(ValueError):
            apply_diff_regions("actual\n", [region])

    @given(
        old_lines=st.lists(st.sampled_from(["a", "b", "c", "dd", "e e", ""]), max_size=12),
        new_lines=st.lists(st.sampled_from(["a", "b", "c", "dd", "e e", "zz"]), max_size=12),
    )
    @settings(max_examples=200, deadline=None)
    def test_parse_apply_round_trip(self, old_lines, new_lines):
        old = "\n".join(old_lines) + ("\n" if old_lines else "")
        new = "\n".join(new_lines) + ("\n" if new_lines else "")
        diff = "\n".join(
            difflib.unified_diff(
                old.splitlines(), new.splitlines(), fromfile="a/f", tofile="b/f", n=0, lineterm=""
            )
        )
        regions = parse_unified_diff(diff)
        rebuilt = apply_diff_regions(old, regions)
        assert rebuilt.splitlines() == new.splitlines()


class TestGrammars:
    def test_unknown_grammar(self):
        with pytest.raises(UnsupportedGrammar):
            build_statement_graph("x", "x", grammar_id="cobol-9000")

    def test_aliases_resolve(self):
        assert resolve_grammar("c").grammar_id == "clike"
        assert resolve_grammar("java").grammar_id == "clike"

    def test_line_grammar_one_node_per_line(self):
        graph = build_statement_graph("a\n\nc\n", "a\n\nc\n", "line", file_path="t.txt")
        old_nodes = graph.nodes_for("t.txt", Version.OLD)
        assert [n.span for n in old_nodes] == [(1, 1), (2, 2), (3, 3)]
        assert all(n.kind == "other" for n in old_nodes)

    def test_clike_kinds_hand_trace(self):
        graph = build_statement_graph(C_OLD, C_OLD, "clike", file_path="shell.c")
        kinds = {n.span: n.kind for n in graph.nodes_for("shell.c", Version.OLD)}
        assert kinds[(3, 4)] == "signature"
        assert kinds[(5, 5)] == "declaration"
        assert kinds[(6, 6)] == "declaration"
        assert kinds[(8, 8)] == "assignment"
        assert kinds[(9, 9)] == "condition"
        assert kinds[(10, 10)] == "assignment"
        assert kinds[(12, 12)] == "other"

    def test_clike_defs_uses_hand_trace(self):
        graph = build_statement_graph(C_OLD, C_OLD, "clike", file_path="shell.c")
        facts = {n.span: (set(n.defs), set(n.uses)) for n in graph.nodes_for("shell.c", Version.OLD)}
        assert facts[(3, 4)] == ({"user"}, set())
        assert facts[(5, 5)] == ({"pw"}, set())
        assert facts[(6, 6)] == ({"ok"}, set())
        assert facts[(8, 8)] == ({"pw"}, {"getspnam", "user"})
        assert facts[(9, 9)] == (set(), {"pw"})
        assert facts[(12, 12)] == (set(), {"ok"})

    def test_clike_loop_and_nesting(self):
        src = (
            "void f(int n)\n"
            "{\n"
            "\tint total = 0;\n"
            "\tfor (int i = 0; i < n; i++) {\n"
            "\t\tif (i > 2) {\n"
            "\t\t\ttotal += i;\n"
            "\t\t}\n"
            "\t}\n"
            "}\n"
        )
        graph = build_statement_graph(src, src, "clike", file_path="l.c")
        by_span = {n.span: n for n in graph.nodes_for("l.c", Version.OLD)}
        assert by_span[(4, 4)].kind == "loop-header"
        assert by_span[(4, 4)].defs == frozenset({"i"})
        assert by_span[(5, 5)].kind == "condition"
        # innermost statement is guarded by both enclosing headers
        guards = set(by_span[(6, 6)].guards)
        assert guards == {by_span[(4, 4)].node_id, by_span[(5, 5)].node_id}
        # compound assignment both defines and reads its target
        assert by_span[(6, 6)].defs == frozenset({"total"})
        assert "total" in by_span[(6, 6)].uses

    def test_clike_else_branch_guarded_by_if(self):
        src = (
            "void f(int a)\n"
            "{\n"
            "\tif (a) {\n"
            "\t\tone();\n"
            "\t} else {\n"
            "\t\ttwo();\n"
            "\t}\n"
            "}\n"
        )
        graph = build_statement_graph(src, src, "clike", file_path="e.c")
        by_span = {n.span: n for n in graph.nodes_for("e.c", Version.OLD)}
        if_id = by_span[(3, 3)].node_id
        assert by_span[(6, 6)].guards == (if_id,)

    def test_clike_multiline_statement_span(self):
        src = "int f(void)\n{\n\treturn foo(1,\n\t           2);\n}\n"
        graph = build_statement_graph(src, src, "clike", file_path="m.c")
        spans = [n.span for n in graph.nodes_for("m.c", Version.OLD)]
        assert (3, 4) in spans

    def test_broken_grammar_raises_parse_failure(self):
        class HoleyGrammar:
            grammar_id = "holey-test"

            def parse(self, source):
                from untangler.grammars import ParsedStatement

                # skips line 1 entirely
                return [ParsedStatement(start=2, end=2, kind="other", text="x")]

        register_grammar(HoleyGrammar())
        with pytest.raises(ParseFailure):
            build_statement_graph("a\nb\n", "a\nb\n", "holey-test")

    @given(st.lists(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), max_size=40), max_size=25))
    @settings(max_examples=150, deadline=None)
    def test_line_grammar_partitions_any_text(self, lines):
        source = "\n".join(lines)
        parsed = resolve_grammar("line").parse(source)
        assert [p.start for p in parsed] == list(range(1, len(source.splitlines()) + 1))

    @given(st.lists(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), max_size=40), max_size=25))
    @settings(max_examples=150, deadline=None)
    def test_clike_grammar_partitions_any_text(self, lines):
        source = "\n".join(lines)
        parsed = resolve_grammar("clike").parse(source)
        cursor = 1
        for p in parsed:
            assert p.start == cursor
            assert p.end >= p.start
            cursor = p.end + 1
        assert cursor == len(source.splitlines()) + 1


class TestDependencies:
    def build(self, src: str, grammar: str = "clike"):
        graph = build_statement_graph(src, src, grammar, file_path="d.c")
        return compute_dependencies(graph)

    def data_edges(self, graph):
        return {
            (graph.nodes[s].span, graph.nodes[d].span)
            for s, d, k in graph.edges
            if k == DATA_DEP and graph.nodes[s].version is Version.OLD
        }

    def test_write_does_not_depend_on_declaration(self):
        src = "void f(void)\n{\n\tint pw;\n\tpw = lookup();\n}\n"
        graph = self.build(src)
        assert ((3, 3), (4, 4)) not in self.data_edges(graph)

    def test_read_depends_on_latest_definition(self):
        src = "void f(void)\n{\n\tint x = 1;\n\tx = 2;\n\tuse(x);\n}\n"
        edges = self.data_edges(self.build(src))
        assert ((4, 4), (5, 5)) in edges       # use(x) reads the x = 2 write
        assert ((3, 3), (5, 5)) not in edges   # not the shadowed initializer

    def test_initializer_reads_count_as_uses(self):
        src = "void f(void)\n{\n\tint a = 1;\n\tint b = a + 2;\n}\n"
        edges = self.data_edges(self.build(src))
        assert ((3, 3), (4, 4)) in edges

    def test_parameter_definition_reaches_body(self):
        # the signature node spans the header line and its open brace
        src = "void f(int n)\n{\n\tuse(n);\n}\n"
        edges = self.data_edges(self.build(src))
        assert ((1, 2), (3, 3)) in edges

    def test_scopes_do_not_leak_between_functions(self):
        src = (
            "void f(void)\n{\n\tint x = 1;\n}\n"
            "void g(void)\n{\n\tuse(x);\n}\n"
        )
        edges = self.data_edges(self.build(src))
        assert ((3, 3), (7, 7)) not in edges

    def test_control_dep_from_every_enclosing_guard(self):
        src = (
            "void f(int a, int b)\n"
            "{\n"
            "\twhile (a) {\n"
            "\t\tif (b) {\n"
            "\t\t\twork();\n"
            "\t\t}\n"
            "\t}\n"
            "}\n"
        )
        graph = self.build(src)
        spans = {
            (graph.nodes[s].span, graph.nodes[d].span)
            for s, d, k in graph.edges
            if k == CONTROL_DEP and graph.nodes[s].version is Version.OLD
        }
        assert ((3, 3), (5, 5)) in spans
        assert ((4, 4), (5, 5)) in spans

    def test_ast_parent_edges_present(self):
        graph = self.build("void f(void)\n{\n\twork();\n}\n")
        kinds = {k for _, _, k in graph.edges}
        assert AST_PARENT in kinds


class TestSeeds:
    def test_two_concern_example_seeds_and_pairs(self):
        graph = build_statement_graph(C_OLD, C_NEW, "clike", file_path="shell.c")
        compute_dependencies(graph)
        identify_seed_nodes(graph, parse_unified_diff(two_concern_diff()))
        assert graph.seeds == {
            "shell.c|OLD|5-5",
            "shell.c|NEW|5-5",
            "shell.c|OLD|8-8",
            "shell.c|NEW|8-8",
        }
        new_seeds = {s for s in graph.seeds if "|NEW|" in s}
        assert len(new_seeds) == 2
        for seed in graph.seeds:
            assert graph.nodes[seed].changed
        assert graph.correspondence == {
            ("shell.c|OLD|5-5", "shell.c|NEW|5-5"),
            ("shell.c|OLD|8-8", "shell.c|NEW|8-8"),
        }

    def test_overlapping_regions_deduplicate(self):
        # both regions touch the same multi-line statement: one seed
        src = "int f(void)\n{\n\treturn foo(1,\n\t           2);\n}\n"
        graph = build_statement_graph(src, src, "clike", file_path="m.c")
        regions = [
            DiffRegion("m.c", (3, 3), (3, 3), ("\treturn foo(1,",), ("\treturn foo(1,",)),
            DiffRegion("m.c", (4, 4), (4, 4), ("\t           2);",), ("\t           2);",)),
        ]
        identify_seed_nodes(graph, regions)
        assert {s for s in graph.seeds if "|OLD|" in s} == {"m.c|OLD|3-4"}

    def test_empty_diff_marks_nothing(self):
        graph = build_statement_graph("x = 1\n", "x = 1\n", "line", file_path="f.py")
        identify_seed_nodes(graph, [])
        assert graph.seeds == set()
        assert len(graph.nodes) == 2
        assert not any(n.changed for n in graph.nodes.values())

    def test_region_past_end_of_file(self):
        graph = build_statement_graph("a\n", "a\n", "line", file_path="f")
        bad = DiffRegion("f", (9, 9), (9, 9), ("x",), ("y",))
        with pytest.raises(RegionOutOfRange):
            identify_seed_nodes(graph, [bad])

    def test_region_for_unknown_file(self):
        graph = build_statement_graph("a\n", "a\n", "line", file_path="f")
        bad = DiffRegion("elsewhere", (1, 1), (1, 1), ("x",), ("y",))
        with pytest.raises(RegionOutOfRange):
            identify_seed_nodes(graph, [bad])

    def test_pure_insertion_marks_only_new_side(self):
        old = "a\nb\n"
        new = "a\nmid\nb\n"
        diff = "\n".join(
            difflib.unified_diff(old.splitlines(), new.splitlines(), fromfile="a/f", tofile="b/f", n=0, lineterm="")
        )
        graph = build_statement_graph(old, new, "line", file_path="f")
        identify_seed_nodes(graph, parse_unified_diff(diff))
        assert graph.seeds == {"f|NEW|2-2"}
        assert graph.correspondence == set()


class TestSerialization:
    def test_documents_are_byte_identical_across_builds(self):
        def build():
            graph = build_statement_graph(C_OLD, C_NEW, "clike", file_path="shell.c")
            compute_dependencies(graph)
            identify_seed_nodes(graph, parse_unified_diff(two_concern_diff()))
            return json.dumps(graph.document(), sort_keys=True)

        assert build() == build()

    def test_merge_graphs_rejects_duplicate_ids(self):
        g1 = build_statement_graph("a\n", "a\n", "line", file_path="f")
        g2 = build_statement_graph("b\n", "b\n", "line", file_path="f")
        with pytest.raises(ValueError):
            merge_graphs([g1, g2])

    def test_merge_graphs_combines_files(self):
        g1 = build_statement_graph("a\n", "a\n", "line", file_path="one")
        g2 = build_statement_graph("b\n", "b\n", "line", file_path="two")
        merged = merge_graphs([g1, g2])
        assert merged.files() == ["one", "two"]
