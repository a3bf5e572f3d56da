"""KC-level correctness labeling of first attempts.

Three methods: chain-of-thought prompting (reason about usage, then
correctness, then emit the structured answer), a direct-prompt ablation
(structured answer only), and the problem-level propagation baseline that
never touches the gateway. One LLM call judges all KCs of a submission
jointly; a KC the model marks unused is forced incorrect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import is_problem_correct
from .gateway import ChatRequest, GatewayError, LLMGateway
from .prompting import (
    ResponseParseError,
    extract_json_block,
    format_kc_list,
    load_template,
    render,
)
from .types import (
    AttemptPair,
    FewShotExample,
    KCLabel,
    KnowledgeComponent,
    LabelMethod,
    Problem,
)

NOT_USED_NOTE = "[coerced: KC not used, so labeled incorrect]"


def build_label_prompt(
    problem: Problem,
    code: str,
    kcs: list[KnowledgeComponent],
    fewshots: list[FewShotExample],
    mode: str,
    model: str,
    prompts_dir=None,
) -> ChatRequest:
    """Assemble the labeling chat: system + few-shot exchanges + query.

    Few-shot user turns use the exact same layout as the final query so the
    demonstrations teach the output format.
    """
    if not kcs:
        raise ValueError("KC list must be non-empty")
    if mode not in ("cot", "direct"):
        raise ValueError(f"mode must be 'cot' or 'direct', got {mode!r}")

    system = load_template(f"label_system_{mode}", prompts_dir)
    user_template = load_template("label_user", prompts_dir)

    messages: list[tuple[str, str]] = [("system", system)]
    for shot in fewshots:
        messages.append((
            "user",
            render(user_template,
                   problem_statement=shot.problem_statement,
                   code=shot.code,
                   kc_list=format_kc_list(shot.kc_list)),
        ))
        messages.append(("assistant", shot.expected_output))
    messages.append((
        "user",
        render(user_template,
               problem_statement=problem.statement,
               code=code,
               kc_list=format_kc_list(kcs)),
    ))
    return ChatRequest(model=model, messages=tuple(messages))


def parse_label_response(
    content: str, expected_kcs: list[str]
) -> list[tuple[str, bool, bool, str]]:
    """Extract (kc_id, used, correct, rationale) rows from a response.

    The structured block must cover exactly the expected KCs. Reasoning prose
    preceding the block is kept as a rationale prefix. An entry with
    used=false is coerced to correct=false with a note on its rationale.
    """
    data = extract_json_block(content)
    if not isinstance(data, list):
        raise ResponseParseError("expected a JSON array of per-KC judgments")

    prose = content.split("```")[0].strip()
    rows: dict[str, tuple[bool, bool, str]] = {}
    for item in data:
        if not isinstance(item, dict) or "kc_id" not in item:
            raise ResponseParseError(f"bad judgment entry: {item!r}")
        kc_id = str(item["kc_id"])
        used, correct = item.get("used"), item.get("correct")
        if not isinstance(used, bool) or not isinstance(correct, bool):
            raise ResponseParseError(f"non-boolean used/correct for {kc_id!r}")
        if kc_id in rows:
            raise ResponseParseError(f"duplicate judgment for {kc_id!r}")
        rationale = str(item.get("reasoning", ""))
        if prose:
            rationale = f"{prose}\n{rationale}" if rationale else prose
        if not used and correct:
            correct = False
            rationale = f"{rationale} {NOT_USED_NOTE}".strip()
        rows[kc_id] = (used, correct, rationale)

    expected = set(expected_kcs)
    missing = expected - set(rows)
    extra = set(rows) - expected
    if missing or extra:
        raise ResponseParseError(
            f"judgments do not cover the KC set: missing={sorted(missing)}, "
            f"extra={sorted(extra)}"
        )
    return [(kc_id, *rows[kc_id]) for kc_id in expected_kcs]


def label_submission(
    pair: AttemptPair,
    problem: Problem,
    kcs: list[KnowledgeComponent],
    fewshots: list[FewShotExample],
    mode: str,
    gateway: LLMGateway,
    model: str,
    prompts_dir=None,
) -> list[KCLabel]:
    """Label every KC of the pair's first attempt with one gateway call.

    A parse failure triggers exactly one reprompt with a format reminder;
    a second failure propagates so the caller can record the submission as
    unlabeled.
    """
    request = build_label_prompt(problem, pair.first.code, kcs, fewshots, mode,
                                 model, prompts_dir)
    expected = [kc.kc_id for kc in kcs]
    response = gateway.complete(request)
    try:
        rows = parse_label_response(response.content, expected)
    except ResponseParseError:
        reminder = load_template("format_reminder", prompts_dir)
        retry = ChatRequest(
            model=request.model,
            messages=request.messages
            + (("assistant", response.content), ("user", reminder)),
        )
        rows = parse_label_response(gateway.complete(retry).content, expected)

    method = LabelMethod.LLM_COT if mode == "cot" else LabelMethod.LLM_DIRECT
    return [
        KCLabel(
            student_id=pair.student_id, problem_id=pair.problem_id, kc_id=kc_id,
            used=used, correct=correct, method=method, rationale=rationale,
        )
        for kc_id, used, correct, rationale in rows
    ]


def baseline_labels(
    pair: AttemptPair,
    kcs: list[KnowledgeComponent],
    threshold: float = 1.0,
) -> list[KCLabel]:
    """Propagate problem-level correctness of the first attempt to every KC."""
    correct = is_problem_correct(pair.first, threshold)
    return [
        KCLabel(
            student_id=pair.student_id, problem_id=pair.problem_id, kc_id=kc.kc_id,
            used=correct, correct=correct, method=LabelMethod.BASELINE,
        )
        for kc in kcs
    ]


@dataclass
class RunReport:
    labeled: int = 0
    failed: list[dict] = field(default_factory=list)
    cache_hit_ratio: float = 0.0
    provider_calls: int = 0
    wall_time_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "labeled": self.labeled,
            "failed": self.failed,
            "cache_hit_ratio": self.cache_hit_ratio,
            "provider_calls": self.provider_calls,
            "wall_time_seconds": self.wall_time_seconds,
        }


def label_dataset(
    pairs: list[AttemptPair],
    problems: dict[str, Problem],
    kcs_for_pair,
    fewshots: list[FewShotExample],
    mode: str,
    gateway: LLMGateway | None,
    model: str,
    threshold: float = 1.0,
    prompts_dir=None,
) -> tuple[list[KCLabel], RunReport]:
    """Label every pair; parse/gateway failures are recorded, not fatal.

    ``kcs_for_pair`` maps an AttemptPair to its ordered KC list. ``mode`` is
    one of cot, direct, baseline; baseline needs no gateway.
    """
    import time

    start = time.monotonic()
    report = RunReport()
    labels: list[KCLabel] = []
    for pair in sorted(pairs, key=lambda p: (p.student_id, p.problem_id)):
        kcs = kcs_for_pair(pair)
        if mode == "baseline":
            labels.extend(baseline_labels(pair, kcs, threshold))
            report.labeled += 1
            continue
        try:
            labels.extend(
                label_submission(pair, problems[pair.problem_id], kcs, fewshots,
                                 mode, gateway, model, prompts_dir)
            )
            report.labeled += 1
        except (ResponseParseError, GatewayError) as exc:
            report.failed.append({
                "student_id": pair.student_id,
                "problem_id": pair.problem_id,
                "error": str(exc),
            })
    if gateway is not None:
        report.cache_hit_ratio = gateway.stats.cache_hit_ratio
        report.provider_calls = gateway.stats.provider_calls
    report.wall_time_seconds = time.monotonic() - start
    return labels, report


def load_fewshots(path: str | Path) -> list[FewShotExample]:
    """Few-shot fixture: JSON array of examples with kc_list and expected_output."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    shots = []
    for obj in data:
        kcs = tuple(
            KnowledgeComponent(kc_id=k["kc_id"], name=k["name"],
                               description=k.get("description", ""))
            for k in obj["kc_list"]
        )
        shots.append(FewShotExample(
            problem_statement=obj["problem_statement"],
            code=obj["code"],
            kc_list=kcs,
            expected_output=obj["expected_output"],
        ))
    return shots
