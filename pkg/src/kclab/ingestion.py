"""Dataset loading, validation and serialization.

On-disk layout under a dataset root:

    submissions.csv   submission_id,student_id,problem_id,attempt,timestamp,score,code,code_path
    problems.csv      problem_id,statement
    kcs.json          [{kc_id, name, description, origin}, ...]        (optional)
    qmatrix.csv       problem_id,kc_id                                 (optional)
    code_kc_map.csv   student_id,problem_id,kc_id                      (optional)
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .types import (
    CodeKCMap,
    KCOrigin,
    KCSet,
    KCSetKind,
    KnowledgeComponent,
    Problem,
    QMatrix,
    Submission,
    ValidationError,
)

SUBMISSION_COLUMNS = [
    "submission_id", "student_id", "problem_id", "attempt",
    "timestamp", "score", "code", "code_path",
]

# Synthetic clock used for rows without timestamps: attempts keep their given
# order, spaced one second apart per student.
_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)

# KCs exercised by fewer problems than this are flagged as too sparse to fit.
SPARSE_KC_THRESHOLD = 3


@dataclass(frozen=True)
class DatasetBundle:
    problems: tuple[Problem, ...]
    submissions: tuple[Submission, ...]
    kc_sets: tuple[KCSet, ...] = ()
    q_matrices: tuple[QMatrix, ...] = ()
    code_kc_map: CodeKCMap | None = None


@dataclass
class ValidationReport:
    student_count: int
    problem_count: int
    submission_count: int
    kc_usage: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "student_count": self.student_count,
            "problem_count": self.problem_count,
            "submission_count": self.submission_count,
            "kc_usage": dict(sorted(self.kc_usage.items())),
            "warnings": list(self.warnings),
        }


def _parse_timestamp(raw: str, row_no: int) -> datetime:
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise ValidationError(f"submissions.csv line {row_no}: bad timestamp {raw!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def _read_submissions(path: Path) -> list[Submission]:
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUBMISSION_COLUMNS:
            raise ValidationError(
                f"{path.name}: expected header {SUBMISSION_COLUMNS}, got {reader.fieldnames}"
            )
        for row_no, row in enumerate(reader, start=2):
            code, code_path = row["code"], row["code_path"]
            if bool(code) == bool(code_path):
                raise ValidationError(
                    f"{path.name} line {row_no}: exactly one of code/code_path must be set"
                )
            if code_path:
                code_file = path.parent / code_path
                if not code_file.is_file():
                    raise ValidationError(
                        f"{path.name} line {row_no}: code_path {code_path!r} not found"
                    )
                code = code_file.read_text(encoding="utf-8")
            try:
                attempt = int(row["attempt"])
                score = float(row["score"])
            except ValueError as exc:
                raise ValidationError(f"{path.name} line {row_no}: {exc}") from None
            ts = _parse_timestamp(row["timestamp"], row_no) if row["timestamp"] else None
            rows.append((row_no, row["submission_id"], row["student_id"],
                         row["problem_id"], attempt, ts, score, code))

    # Duplicate (student, problem, attempt) keys are hard errors.
    seen: dict[tuple[str, str, int], int] = {}
    for row_no, _sid, student, problem, attempt, *_ in rows:
        key = (student, problem, attempt)
        if key in seen:
            raise ValidationError(
                f"{path.name} line {row_no}: duplicate (student, problem, attempt) "
                f"{key} first seen on line {seen[key]}"
            )
        seen[key] = row_no

    # Fill missing timestamps with a per-student monotone clock, then
    # normalize attempt indices to contiguous 1..m per group (sorted by
    # timestamp, original attempt order breaking ties).
    clock: dict[str, int] = defaultdict(int)
    filled = []
    for row_no, sid, student, problem, attempt, ts, score, code in rows:
        if ts is None:
            ts = _EPOCH + timedelta(seconds=clock[student])
            clock[student] += 1
        filled.append((sid, student, problem, attempt, ts, score, code))

    groups: dict[tuple[str, str], list] = defaultdict(list)
    for item in filled:
        groups[(item[1], item[2])].append(item)

    submissions = []
    for group in groups.values():
        group.sort(key=lambda it: (it[4], it[3]))
        for index, (sid, student, problem, _attempt, ts, score, code) in enumerate(group, 1):
            submissions.append(Submission(
                submission_id=sid, student_id=student, problem_id=problem,
                attempt_index=index, timestamp=ts, score=score, code=code,
            ))
    submissions.sort(key=lambda s: (s.student_id, s.problem_id, s.attempt_index))
    return submissions


def _read_problems(path: Path) -> list[Problem]:
    problems = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["problem_id", "statement"]:
            raise ValidationError(
                f"{path.name}: expected header ['problem_id', 'statement'], "
                f"got {reader.fieldnames}"
            )
        for row_no, row in enumerate(reader, start=2):
            if row["problem_id"] in seen:
                raise ValidationError(
                    f"{path.name} line {row_no}: duplicate problem_id {row['problem_id']!r}"
                )
            seen.add(row["problem_id"])
            problems.append(Problem(problem_id=row["problem_id"], statement=row["statement"]))
    problems.sort(key=lambda p: p.problem_id)
    return problems


def _read_kc_sets(path: Path) -> list[KCSet]:
    data = json.loads(path.read_text(encoding="utf-8"))
    components = tuple(
        KnowledgeComponent(
            kc_id=obj["kc_id"], name=obj["name"],
            description=obj.get("description", ""),
            origin=KCOrigin(obj.get("origin", "human")),
        )
        for obj in data
    )
    if not components:
        return []
    origins = {c.origin for c in components}
    kind = KCSetKind.GENERATED if origins == {KCOrigin.GENERATED} else KCSetKind.HUMAN
    return [KCSet(set_id=path.stem, kind=kind, components=components)]


def _read_qmatrix(path: Path) -> QMatrix:
    entries: dict[str, set[str]] = defaultdict(set)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["problem_id", "kc_id"]:
            raise ValidationError(
                f"{path.name}: expected header ['problem_id', 'kc_id'], got {reader.fieldnames}"
            )
        for row in reader:
            entries[row["problem_id"]].add(row["kc_id"])
    return QMatrix(entries={p: frozenset(kcs) for p, kcs in entries.items()})


def _read_code_kc_map(path: Path) -> CodeKCMap:
    entries: dict[tuple[str, str], set[str]] = defaultdict(set)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["student_id", "problem_id", "kc_id"]:
            raise ValidationError(
                f"{path.name}: expected header ['student_id', 'problem_id', 'kc_id'], "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            entries[(row["student_id"], row["problem_id"])].add(row["kc_id"])
    return CodeKCMap(entries={k: frozenset(v) for k, v in entries.items()})


def load_dataset(root: str | Path) -> DatasetBundle:
    root = Path(root)
    submissions_path = root / "submissions.csv"
    problems_path = root / "problems.csv"
    for required in (submissions_path, problems_path):
        if not required.is_file():
            raise ValidationError(f"missing required file: {required}")

    problems = _read_problems(problems_path)
    submissions = _read_submissions(submissions_path)

    problem_ids = {p.problem_id for p in problems}
    for sub in submissions:
        if sub.problem_id not in problem_ids:
            raise ValidationError(
                f"submission {sub.submission_id!r} references unknown problem "
                f"{sub.problem_id!r}"
            )

    kc_sets: list[KCSet] = []
    kcs_path = root / "kcs.json"
    if kcs_path.is_file():
        kc_sets = _read_kc_sets(kcs_path)

    q_matrices: list[QMatrix] = []
    qmatrix_path = root / "qmatrix.csv"
    if qmatrix_path.is_file():
        qm = _read_qmatrix(qmatrix_path)
        unknown_problems = set(qm.entries) - problem_ids
        if unknown_problems:
            raise ValidationError(
                f"qmatrix.csv references unknown problems: {sorted(unknown_problems)}"
            )
        known_kcs = set().union(*(s.kc_ids() for s in kc_sets)) if kc_sets else set()
        unknown_kcs = qm.all_kc_ids() - known_kcs
        if unknown_kcs:
            raise ValidationError(
                f"qmatrix.csv references KCs not in kcs.json: {sorted(unknown_kcs)}"
            )
        q_matrices = [qm]

    code_kc_map = None
    map_path = root / "code_kc_map.csv"
    if map_path.is_file():
        code_kc_map = _read_code_kc_map(map_path)

    # Mark fully-correct submissions on their problems.
    correct_by_problem: dict[str, list[str]] = defaultdict(list)
    for sub in submissions:
        if sub.score >= 1.0:
            correct_by_problem[sub.problem_id].append(sub.submission_id)
    problems = [
        Problem(p.problem_id, p.statement,
                tuple(sorted(correct_by_problem.get(p.problem_id, ()))))
        for p in problems
    ]

    return DatasetBundle(
        problems=tuple(problems),
        submissions=tuple(submissions),
        kc_sets=tuple(kc_sets),
        q_matrices=tuple(q_matrices),
        code_kc_map=code_kc_map,
    )


def save_dataset(bundle: DatasetBundle, root: str | Path) -> None:
    """Write a bundle back out in the canonical layout (code stored inline)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    with (root / "problems.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem_id", "statement"])
        for p in sorted(bundle.problems, key=lambda p: p.problem_id):
            writer.writerow([p.problem_id, p.statement])

    with (root / "submissions.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUBMISSION_COLUMNS)
        ordered = sorted(
            bundle.submissions,
            key=lambda s: (s.student_id, s.problem_id, s.attempt_index),
        )
        for s in ordered:
            writer.writerow([
                s.submission_id, s.student_id, s.problem_id, s.attempt_index,
                s.timestamp.isoformat(), s.score, s.code, "",
            ])

    if bundle.kc_sets:
        kcs = [
            {"kc_id": c.kc_id, "name": c.name, "description": c.description,
             "origin": c.origin.value}
            for kc_set in bundle.kc_sets
            for c in kc_set.components
        ]
        (root / "kcs.json").write_text(json.dumps(kcs, indent=2), encoding="utf-8")

    if bundle.q_matrices:
        with (root / "qmatrix.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["problem_id", "kc_id"])
            for problem_id, kcs in sorted(bundle.q_matrices[0].entries.items()):
                for kc_id in sorted(kcs):
                    writer.writerow([problem_id, kc_id])

    if bundle.code_kc_map is not None:
        with (root / "code_kc_map.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["student_id", "problem_id", "kc_id"])
            for (student_id, problem_id), kcs in sorted(bundle.code_kc_map.entries.items()):
                for kc_id in sorted(kcs):
                    writer.writerow([student_id, problem_id, kc_id])


def validate_dataset(bundle: DatasetBundle) -> ValidationReport:
    """Summarize a bundle and flag sparse KCs; never mutates the bundle."""
    usage: Counter[str] = Counter()
    if bundle.q_matrices:
        for kcs in bundle.q_matrices[0].entries.values():
            usage.update(kcs)
    for kc_set in bundle.kc_sets:
        for c in kc_set.components:
            usage.setdefault(c.kc_id, 0)

    warnings = [
        f"KC {kc_id!r} is exercised by only {count} problem(s); "
        f"fewer than {SPARSE_KC_THRESHOLD} makes its learning curve unreliable"
        for kc_id, count in sorted(usage.items())
        if count < SPARSE_KC_THRESHOLD
    ] if usage else []

    return ValidationReport(
        student_count=len({s.student_id for s in bundle.submissions}),
        problem_count=len(bundle.problems),
        submission_count=len(bundle.submissions),
        kc_usage=dict(usage),
        warnings=warnings,
    )
