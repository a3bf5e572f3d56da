"""Domain types shared across the pipeline.

Everything here is a plain frozen dataclass; validation happens in
``__post_init__`` so a constructed value is always well-formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum


class ValidationError(ValueError):
    """Raised when input data violates a structural invariant."""


@dataclass(frozen=True)
class Problem:
    problem_id: str
    statement: str
    correct_solution_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.problem_id:
            raise ValidationError("problem_id must be non-empty")
        if not self.statement:
            raise ValidationError(f"problem {self.problem_id!r}: statement must be non-empty")


@dataclass(frozen=True)
class Submission:
    submission_id: str
    student_id: str
    problem_id: str
    attempt_index: int
    timestamp: datetime
    score: float
    code: str

    def __post_init__(self):
        if self.attempt_index < 1:
            raise ValidationError(
                f"submission {self.submission_id!r}: attempt_index must be >= 1, "
                f"got {self.attempt_index}"
            )
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(
                f"submission {self.submission_id!r}: score must be in [0, 1], got {self.score}"
            )


@dataclass(frozen=True)
class AttemptPair:
    """First and last attempt of one student on one problem.

    ``first is last`` when the student made exactly one attempt.
    """

    student_id: str
    problem_id: str
    first: Submission
    last: Submission

    def __post_init__(self):
        if self.first.attempt_index != 1:
            raise ValidationError(
                f"pair ({self.student_id}, {self.problem_id}): first attempt must have index 1"
            )
        if self.last.attempt_index < self.first.attempt_index:
            raise ValidationError(
                f"pair ({self.student_id}, {self.problem_id}): last precedes first"
            )


class KCOrigin(str, Enum):
    HUMAN = "human"
    GENERATED = "generated"


@dataclass(frozen=True)
class KnowledgeComponent:
    kc_id: str
    name: str
    description: str = ""
    origin: KCOrigin = KCOrigin.HUMAN

    def __post_init__(self):
        if not self.kc_id:
            raise ValidationError("kc_id must be non-empty")


class KCSetKind(str, Enum):
    HUMAN = "human"
    GENERATED = "generated"
    SELECTED = "selected"


@dataclass(frozen=True)
class KCSet:
    set_id: str
    kind: KCSetKind
    components: tuple[KnowledgeComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValidationError(f"KC set {self.set_id!r} must be non-empty")
        ids = [c.kc_id for c in self.components]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"KC set {self.set_id!r} has duplicate kc_ids: {dupes}")

    def kc_ids(self) -> set[str]:
        return {c.kc_id for c in self.components}

    def get(self, kc_id: str) -> KnowledgeComponent:
        for c in self.components:
            if c.kc_id == kc_id:
                return c
        raise KeyError(kc_id)


@dataclass(frozen=True)
class QMatrix:
    """Problem-level KC assignment: problem_id -> set of kc_id."""

    entries: dict[str, frozenset[str]]

    def kcs_for(self, problem_id: str) -> frozenset[str]:
        try:
            return self.entries[problem_id]
        except KeyError:
            raise KeyError(f"problem {problem_id!r} not present in Q-matrix") from None

    def all_kc_ids(self) -> set[str]:
        out: set[str] = set()
        for kcs in self.entries.values():
            out |= kcs
        return out


@dataclass(frozen=True)
class CodeKCMap:
    """Per-submission KC assignment: (student_id, problem_id) -> set of kc_id."""

    entries: dict[tuple[str, str], frozenset[str]]

    def __post_init__(self):
        for key, kcs in self.entries.items():
            if not kcs:
                raise ValidationError(f"code-KC map entry {key} is empty")

    def kcs_for(self, student_id: str, problem_id: str) -> frozenset[str]:
        try:
            return self.entries[(student_id, problem_id)]
        except KeyError:
            raise KeyError(
                f"({student_id!r}, {problem_id!r}) not present in code-KC map"
            ) from None


class LabelMethod(str, Enum):
    LLM_COT = "llm_cot"
    LLM_DIRECT = "llm_direct"
    BASELINE = "baseline"


@dataclass(frozen=True)
class KCLabel:
    """Binary correctness judgment for one KC on one first attempt."""

    student_id: str
    problem_id: str
    kc_id: str
    used: bool
    correct: bool
    method: LabelMethod
    rationale: str = ""

    def __post_init__(self):
        if not self.used and self.correct:
            raise ValidationError(
                f"label ({self.student_id}, {self.problem_id}, {self.kc_id}): "
                "an unused KC cannot be correct"
            )


@dataclass(frozen=True)
class FewShotExample:
    problem_statement: str
    code: str
    kc_list: tuple[KnowledgeComponent, ...]
    expected_output: str  # assistant message teaching the answer format

    def __post_init__(self):
        if not self.kc_list:
            raise ValidationError("few-shot example must cover at least one KC")


@dataclass
class OpportunityTable:
    """T values per (student_id, problem_id, kc_id): prior exposures to the KC.

    Opportunity index n = T + 1 is 1-based.
    """

    entries: dict[tuple[str, str, str], int] = field(default_factory=dict)

    def get(self, student_id: str, problem_id: str, kc_id: str) -> int:
        return self.entries[(student_id, problem_id, kc_id)]
