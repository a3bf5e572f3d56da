import json

import pytest

from kclab.gateway import LLMGateway, MockProvider, cache_key
from kclab.labeling import (
    NOT_USED_NOTE,
    baseline_labels,
    build_label_prompt,
    label_dataset,
    label_submission,
    parse_label_response,
)
from kclab.prompting import ResponseParseError
from kclab.types import AttemptPair, FewShotExample, KnowledgeComponent

from factories import make_submission

KCS = [
    KnowledgeComponent(kc_id="kc1", name="Loops", description="loop constructs"),
    KnowledgeComponent(kc_id="kc2", name="Conditionals", description="branching"),
    KnowledgeComponent(kc_id="kc3", name="Arrays", description="array access"),
]

FEWSHOTS = [
    FewShotExample(
        problem_statement="Example problem.",
        code="return 1;",
        kc_list=(KCS[0],),
        expected_output='```json\n[{"kc_id": "kc1", "used": true, "correct": true, "reasoning": "r"}]\n```',
    ),
    FewShotExample(
        problem_statement="Another example.",
        code="return 2;",
        kc_list=(KCS[1],),
        expected_output='```json\n[{"kc_id": "kc2", "used": false, "correct": false, "reasoning": "r"}]\n```',
    ),
]


def make_pair(score=1.0, code="int x = 0;"):
    sub = make_submission(score=score, code=code)
    return AttemptPair(student_id=sub.student_id, problem_id=sub.problem_id,
                       first=sub, last=sub)


def judgment_block(rows):
    return "Reasoning about the code.\n```json\n" + json.dumps(rows) + "\n```"


class TestBuildLabelPrompt:
    def test_message_count(self, problem):
        request = build_label_prompt(problem, "code", KCS, FEWSHOTS, "cot", "m")
        # 1 system + 2 * (user, assistant) few-shot + 1 final user
        assert len(request.messages) == 6
        roles = [role for role, _ in request.messages]
        assert roles == ["system", "user", "assistant", "user", "assistant", "user"]

    def test_deterministic_decoding(self, problem):
        request = build_label_prompt(problem, "code", KCS, [], "cot", "m")
        assert request.temperature == 0.0
        assert request.top_p == 1.0

    def test_direct_mode_has_no_reasoning_instruction(self, problem):
        cot = build_label_prompt(problem, "code", KCS, [], "cot", "m")
        direct = build_label_prompt(problem, "code", KCS, [], "direct", "m")
        assert "step by step" in cot.messages[0][1]
        assert "step by step" not in direct.messages[0][1]

    def test_empty_kcs_rejected(self, problem):
        with pytest.raises(ValueError):
            build_label_prompt(problem, "code", [], [], "cot", "m")

    def test_fewshots_share_query_format(self, problem):
        request = build_label_prompt(problem, "code", KCS, FEWSHOTS, "cot", "m")
        shot_user = request.messages[1][1]
        final_user = request.messages[-1][1]
        for marker in ("Problem statement:", "Student code:", "Knowledge components:"):
            assert marker in shot_user
            assert marker in final_user


class TestParseLabelResponse:
    def test_not_used_coerced_incorrect(self):
        content = judgment_block([
            {"kc_id": "kc1", "used": True, "correct": True, "reasoning": "a"},
            {"kc_id": "kc2", "used": False, "correct": True, "reasoning": "b"},
        ])
        rows = dict((kc, (used, correct, rationale))
                    for kc, used, correct, rationale
                    in parse_label_response(content, ["kc1", "kc2"]))
        assert rows["kc2"][1] is False
        assert NOT_USED_NOTE in rows["kc2"][2]

    def test_missing_kc_rejected(self):
        content = judgment_block([
            {"kc_id": "kc1", "used": True, "correct": True, "reasoning": ""},
        ])
        with pytest.raises(ResponseParseError, match="kc2"):
            parse_label_response(content, ["kc1", "kc2"])

    def test_extra_kc_rejected(self):
        content = judgment_block([
            {"kc_id": "kc1", "used": True, "correct": True, "reasoning": ""},
            {"kc_id": "kc9", "used": True, "correct": True, "reasoning": ""},
        ])
        with pytest.raises(ResponseParseError, match="kc9"):
            parse_label_response(content, ["kc1"])

    def test_prose_kept_as_rationale_prefix(self):
        content = judgment_block([
            {"kc_id": "kc1", "used": True, "correct": False, "reasoning": "off by one"},
        ])
        ((_, _, _, rationale),) = parse_label_response(content, ["kc1"])
        assert rationale.startswith("Reasoning about the code.")
        assert "off by one" in rationale

    def test_non_boolean_fields_rejected(self):
        content = judgment_block([
            {"kc_id": "kc1", "used": "yes", "correct": True, "reasoning": ""},
        ])
        with pytest.raises(ResponseParseError, match="non-boolean"):
            parse_label_response(content, ["kc1"])

    def test_no_json_rejected(self):
        with pytest.raises(ResponseParseError):
            parse_label_response("just prose, no structure", ["kc1"])


def scripted_gateway(tmp_path, problem, pair, rows, mode="cot"):
    request = build_label_prompt(problem, pair.first.code, KCS, FEWSHOTS, mode, "m")
    fixture = {cache_key(request): judgment_block(rows)}
    return LLMGateway(MockProvider(fixture), tmp_path, backoff=0)


class TestLabelSubmission:
    def test_used_and_unused(self, tmp_path, problem):
        pair = make_pair()
        rows = [
            {"kc_id": "kc1", "used": True, "correct": True, "reasoning": "fine"},
            {"kc_id": "kc2", "used": False, "correct": False, "reasoning": "absent"},
            {"kc_id": "kc3", "used": True, "correct": False, "reasoning": "bug"},
        ]
        gw = scripted_gateway(tmp_path, problem, pair, rows)
        labels = label_submission(pair, problem, KCS, FEWSHOTS, "cot", gw, "m")
        by_kc = {l.kc_id: l for l in labels}
        assert by_kc["kc1"].correct is True
        assert by_kc["kc2"].correct is False and by_kc["kc2"].used is False
        assert by_kc["kc3"].correct is False and by_kc["kc3"].used is True

    def test_reprompt_retry_then_success(self, tmp_path, problem):
        pair = make_pair()
        first_request = build_label_prompt(problem, pair.first.code, KCS, FEWSHOTS,
                                           "cot", "m")
        bad = "sorry, no JSON here"
        rows = [{"kc_id": k.kc_id, "used": True, "correct": True, "reasoning": ""}
                for k in KCS]
        from kclab.gateway import ChatRequest
        from kclab.prompting import load_template
        retry_request = ChatRequest(
            model="m",
            messages=first_request.messages
            + (("assistant", bad), ("user", load_template("format_reminder"))),
        )
        fixture = {cache_key(first_request): bad,
                   cache_key(retry_request): judgment_block(rows)}
        gw = LLMGateway(MockProvider(fixture), tmp_path, backoff=0)
        labels = label_submission(pair, problem, KCS, FEWSHOTS, "cot", gw, "m")
        assert len(labels) == 3

    def test_double_parse_failure_recorded_in_report(self, tmp_path, problem):
        pair = make_pair()

        class ProseProvider:
            provider_id = "prose"

            def complete(self, req):
                return "no structure at all"

        gw = LLMGateway(ProseProvider(), tmp_path, backoff=0)
        labels, report = label_dataset(
            [pair], {problem.problem_id: problem}, lambda p: KCS, FEWSHOTS,
            "cot", gw, "m")
        assert labels == []
        assert report.failed[0]["student_id"] == pair.student_id


class TestBaselineLabels:
    def test_full_score_all_correct(self):
        labels = baseline_labels(make_pair(score=1.0), KCS)
        assert all(l.correct for l in labels)
        assert len(labels) == 3

    def test_zero_score_all_incorrect(self):
        labels = baseline_labels(make_pair(score=0.0), KCS)
        assert not any(l.correct for l in labels)
        assert not any(l.used for l in labels)

    def test_empty_kc_list(self):
        assert baseline_labels(make_pair(), []) == []

    def test_never_calls_gateway(self, problem):
        pairs = [make_pair(score=0.5)]
        labels, report = label_dataset(
            pairs, {problem.problem_id: problem}, lambda p: KCS, [], "baseline",
            None, "m")
        assert len(labels) == 3
        assert report.labeled == 1


class TestLabelDatasetDeterminism:
    def test_rerun_identical_and_cached(self, tmp_path, problem):
        pair = make_pair()
        rows = [{"kc_id": k.kc_id, "used": True, "correct": k.kc_id != "kc3",
                 "reasoning": "r"} for k in KCS]
        gw = scripted_gateway(tmp_path, problem, pair, rows)
        args = ([pair], {problem.problem_id: problem}, lambda p: KCS, FEWSHOTS,
                "cot", gw, "m")
        first, _ = label_dataset(*args)
        second, report = label_dataset(*args)
        assert first == second
        assert report.cache_hit_ratio > 0
