"""Training-example formatting, filters, shape validation, stats, round trips."""

from __future__ import annotations

import pytest

from autotools.datasynth import (
    TrainingExample,
    TrajectoryStep,
    corpus_stats,
    format_function,
    format_relevance,
    format_understanding,
    read_examples,
    validate_example,
    write_examples,
)
from autotools.errors import FilteredOut, GoldNotInCandidates, GoldRejected
from autotools.funclib import FunctionRecord
from autotools.llmgateway import ChatMessage

from conftest import BAD_MISSING_REQUIRED, GOOD_SEARCH_PERSON


def candidate(name: str) -> FunctionRecord:
    return FunctionRecord(
        name=name, source=f'def {name}():\n    """The {name} helper."""\n    return {{}}'
    )


def step(program: str = "print(run())", result: str = "ok", error: bool = False) -> TrajectoryStep:
    return TrajectoryStep(program=program, env_result=result, error=error)


class TestFormatUnderstanding:
    def test_case_study_pairing(self, tmdb_doc):
        ex = format_understanding(tmdb_doc, GOOD_SEARCH_PERSON)
        assert ex.task == "understanding"
        assert [m.role for m in ex.messages] == ["system", "user", "assistant"]
        assert ex.messages[2].content == GOOD_SEARCH_PERSON
        assert tmdb_doc.name in ex.messages[1].content
        assert validate_example(ex) == []

    def test_gold_missing_required_param_rejected(self, tmdb_doc):
        with pytest.raises(GoldRejected, match="missing_required"):
            format_understanding(tmdb_doc, BAD_MISSING_REQUIRED)

    def test_zero_param_doc_with_trivial_wrapper(self):
        from autotools.docmodel import parse_tool_doc

        doc = parse_tool_doc({"name": "ping", "method": "GET", "url": "http://x/ping"})
        ex = format_understanding(doc, 'def ping():\n    """Ping."""\n    return "pong"')
        assert validate_example(ex) == []


class TestFormatRelevance:
    def test_identifier_concatenation(self):
        candidates = [candidate(f"f{i}") for i in range(8)]
        ex = format_relevance("which helpers?", candidates, ["f2", "f5"])
        assert ex.messages[-1].content == "f2, f5"
        assert ex.meta.n_candidates == 8
        assert validate_example(ex) == []

    def test_gold_absent_from_candidates(self):
        with pytest.raises(GoldNotInCandidates, match="ghost"):
            format_relevance("q", [candidate("a")], ["ghost"])

    def test_gold_may_cover_all_candidates(self):
        candidates = [candidate("a"), candidate("b")]
        ex = format_relevance("q", candidates, ["a", "b"])
        assert ex.messages[-1].content == "a, b"

    def test_candidates_rendered_listwise(self):
        ex = format_relevance("q", [candidate("alpha"), candidate("beta")], ["alpha"])
        user = ex.messages[1].content
        assert "- alpha: The alpha helper." in user
        assert "- beta: The beta helper." in user


class TestFormatFunction:
    def test_two_turn_shape(self):
        ex = format_function(
            "solve it",
            [candidate("run")],
            [step("a = run()", "{}"), step("print('done')", "done")],
        )
        assert [m.role for m in ex.messages] == [
            "system",
            "user",
            "assistant",
            "environment",
            "assistant",
            "environment",
        ]
        assert ex.meta.n_turns == 2
        assert validate_example(ex) == []

    def test_single_turn_is_four_messages(self):
        ex = format_function("solve", [candidate("run")], [step()])
        assert len(ex.messages) == 4

    def test_empty_tool_response_filtered(self):
        with pytest.raises(FilteredOut) as err:
            format_function("q", [candidate("run")], [step(result="   ")])
        assert err.value.reason == "empty_tool_response"

    def test_unsolvable_query_filtered(self):
        with pytest.raises(FilteredOut) as err:
            format_function(
                "q", [candidate("run")], [step(), step(result="Traceback...", error=True)]
            )
        assert err.value.reason == "unsolvable_query"

    def test_bad_params_filtered_under_strict_gold(self):
        trajectory = [step('r = run(key="wrong")', "{}")]
        with pytest.raises(FilteredOut) as err:
            format_function(
                "q",
                [candidate("run")],
                trajectory,
                gold_calls=[("run", {"key": "right"})],
                strict_gold=True,
            )
        assert err.value.reason == "bad_params"

    def test_matching_gold_accepted_under_strict(self):
        trajectory = [step('r = run(key="right")', "{}")]
        ex = format_function(
            "q",
            [candidate("run")],
            trajectory,
            gold_calls=[("run", {"key": "right"})],
            strict_gold=True,
        )
        assert ex.meta.n_turns == 1

    def test_empty_trajectory_is_caller_error(self):
        with pytest.raises(ValueError):
            format_function("q", [candidate("run")], [])


class TestValidator:
    def test_must_start_with_system(self):
        ex = TrainingExample(
            task="understanding",
            messages=(ChatMessage(role="user", content="x"), ChatMessage(role="assistant", content="y")),
        )
        assert validate_example(ex)

    def test_understanding_needs_single_assistant(self):
        ex = TrainingExample(
            task="understanding",
            messages=(
                ChatMessage(role="system", content="s"),
                ChatMessage(role="user", content="u"),
                ChatMessage(role="assistant", content="a"),
                ChatMessage(role="assistant", content="b"),
            ),
        )
        assert validate_example(ex)

    def test_relevance_target_single_line(self):
        ex = TrainingExample(
            task="relevance",
            messages=(
                ChatMessage(role="system", content="s"),
                ChatMessage(role="user", content="u"),
                ChatMessage(role="assistant", content="a\nb"),
            ),
        )
        assert validate_example(ex)

    def test_function_alternation_enforced(self):
        ex = TrainingExample(
            task="function",
            messages=(
                ChatMessage(role="system", content="s"),
                ChatMessage(role="user", content="u"),
                ChatMessage(role="assistant", content="a"),
                ChatMessage(role="assistant", content="a2"),
            ),
        )
        assert validate_example(ex)


class TestStatsAndRoundTrip:
    def test_empty_corpus_zeros(self):
        stats = corpus_stats([])
        assert stats == {
            "count": 0,
            "avg_input_len": 0.0,
            "avg_output_len": 0.0,
            "avg_candidates": 0.0,
            "avg_turns": 0.0,
        }

    def test_avg_turns_hand_average(self):
        one = format_function("q", [candidate("run")], [step()])
        three = format_function("q", [candidate("run")], [step(), step(), step()])
        stats = corpus_stats([one, three])
        assert stats["avg_turns"] == 2.0
        assert stats["count"] == 2

    def test_report_schema_field_names(self):
        stats = corpus_stats([format_function("q", [candidate("run")], [step()])])
        assert set(stats) == {"count", "avg_input_len", "avg_output_len", "avg_candidates", "avg_turns"}

    def test_lengths_are_whitespace_tokens(self):
        ex = TrainingExample(
            task="understanding",
            messages=(
                ChatMessage(role="system", content="one two three"),
                ChatMessage(role="user", content="four five"),
                ChatMessage(role="assistant", content="six seven eight nine"),
            ),
        )
        stats = corpus_stats([ex])
        assert stats["avg_input_len"] == 5.0
        assert stats["avg_output_len"] == 4.0

    def test_jsonl_round_trip(self, tmp_path, tmdb_doc):
        examples = [
            format_understanding(tmdb_doc, GOOD_SEARCH_PERSON),
            format_relevance("q", [candidate("a"), candidate("b")], ["b"]),
            format_function("q", [candidate("run")], [step(), step()]),
        ]
        path = tmp_path / "corpus.jsonl"
        assert write_examples(examples, path) == 3
        loaded = read_examples(path)
        assert loaded == examples
