"""Attempt-pair construction, problem-level correctness, opportunity counting."""

from __future__ import annotations

from collections import defaultdict

from .types import (
    AttemptPair,
    CodeKCMap,
    OpportunityTable,
    QMatrix,
    Submission,
    ValidationError,
)


def build_attempt_pairs(submissions: list[Submission]) -> list[AttemptPair]:
    """Collapse submissions into one (first, last) pair per (student, problem).

    Attempt indices within a group must form a contiguous 1..m sequence.
    Output is sorted by (student_id, problem_id) for determinism; the result
    does not depend on input order.
    """
    if not submissions:
        raise ValidationError("no submissions given")

    groups: dict[tuple[str, str], list[Submission]] = defaultdict(list)
    for sub in submissions:
        groups[(sub.student_id, sub.problem_id)].append(sub)

    pairs: list[AttemptPair] = []
    for (student_id, problem_id), subs in sorted(groups.items()):
        indices = sorted(s.attempt_index for s in subs)
        if indices != list(range(1, len(subs) + 1)):
            raise ValidationError(
                f"group ({student_id}, {problem_id}): attempt indices {indices} "
                f"are not a contiguous 1..{len(subs)} sequence"
            )
        by_index = {s.attempt_index: s for s in subs}
        pairs.append(
            AttemptPair(
                student_id=student_id,
                problem_id=problem_id,
                first=by_index[1],
                last=by_index[len(subs)],
            )
        )
    return pairs


def is_problem_correct(submission: Submission, threshold: float = 1.0) -> bool:
    """Problem-level correctness: score at or above the threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    return submission.score >= threshold


def _kcs_for_pair(pair: AttemptPair, kc_map: QMatrix | CodeKCMap) -> frozenset[str]:
    if isinstance(kc_map, CodeKCMap):
        return kc_map.kcs_for(pair.student_id, pair.problem_id)
    return kc_map.kcs_for(pair.problem_id)


def pair_sort_key(pair: AttemptPair) -> tuple:
    """Temporal order of pairs: first-attempt timestamp, ties by problem_id."""
    return (pair.first.timestamp, pair.problem_id)


def opportunity_counts(
    pairs: list[AttemptPair], kc_map: QMatrix | CodeKCMap
) -> OpportunityTable:
    """Count, per (student, pair, KC), that student's earlier exposures to the KC.

    Earlier means a pair with a smaller first-attempt timestamp; ties are
    broken by ascending problem_id.
    """
    missing = []
    kcs_by_pair: dict[tuple[str, str], frozenset[str]] = {}
    for pair in pairs:
        try:
            kcs_by_pair[(pair.student_id, pair.problem_id)] = _kcs_for_pair(pair, kc_map)
        except KeyError:
            missing.append((pair.student_id, pair.problem_id))
    if missing:
        raise ValidationError(f"pairs with no KC assignment: {sorted(missing)}")

    by_student: dict[str, list[AttemptPair]] = defaultdict(list)
    for pair in pairs:
        by_student[pair.student_id].append(pair)

    table = OpportunityTable()
    for student_id, student_pairs in by_student.items():
        seen: dict[str, int] = defaultdict(int)
        for pair in sorted(student_pairs, key=pair_sort_key):
            kcs = kcs_by_pair[(pair.student_id, pair.problem_id)]
            for kc_id in kcs:
                table.entries[(student_id, pair.problem_id, kc_id)] = seen[kc_id]
            for kc_id in kcs:
                seen[kc_id] += 1
    return table
