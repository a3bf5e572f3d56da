"""Synthetic student population with a latent mastery model.

Each student carries a per-KC mastery threshold; a KC is applied correctly
once the student's prior opportunity count on it reaches that threshold.
Problem-level score is 1.0 iff every KC of the problem is mastered. This
gives KC-level labels that follow the power law of practice while
problem-level propagation muddles them, mirroring the ordering the method
comparison is expected to show.

Also builds the mock-gateway fixture that answers labeling prompts with the
oracle's judgments, so the full LLM path can run offline.
"""

from __future__ import annotations

import csv
import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

from kclab.gateway import cache_key
from kclab.labeling import build_label_prompt
from kclab.types import KnowledgeComponent, Problem, Submission

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def make_world(n_students=40, n_problems=12, n_kcs=6, kcs_per_problem=2,
               max_threshold=4, seed=7):
    """Problems, per-problem KC sets, and per-student mastery thresholds."""
    rng = random.Random(seed)
    kc_ids = [f"kc{i}" for i in range(n_kcs)]
    problems = []
    problem_kcs = {}
    for j in range(n_problems):
        pid = f"p{j:02d}"
        problems.append(Problem(problem_id=pid, statement=f"Problem number {j}."))
        problem_kcs[pid] = sorted(rng.sample(kc_ids, kcs_per_problem))
    thresholds = {
        f"s{i:03d}": {kc: rng.randint(1, max_threshold) for kc in kc_ids}
        for i in range(n_students)
    }
    return problems, problem_kcs, thresholds, kc_ids


def simulate(problems, problem_kcs, thresholds, seed=11):
    """One first attempt per (student, problem), in a random per-student order.

    Returns (submissions, kc_truth) where kc_truth maps
    (student, problem, kc) -> bool correctness under the mastery oracle.
    """
    rng = random.Random(seed)
    submissions = []
    kc_truth = {}
    for student, kc_thresholds in thresholds.items():
        order = [p.problem_id for p in problems]
        rng.shuffle(order)
        exposures = {kc: 0 for kc in kc_thresholds}
        for minute, pid in enumerate(order):
            kcs = problem_kcs[pid]
            correct_flags = {}
            for kc in kcs:
                correct_flags[kc] = exposures[kc] >= kc_thresholds[kc]
            for kc in kcs:
                exposures[kc] += 1
            all_correct = all(correct_flags.values())
            submissions.append(Submission(
                submission_id=f"{student}-{pid}",
                student_id=student,
                problem_id=pid,
                attempt_index=1,
                timestamp=T0 + timedelta(minutes=minute),
                score=1.0 if all_correct else 0.0,
                code=f"// {student} solving {pid}\nreturn {minute};",
            ))
            for kc, flag in correct_flags.items():
                kc_truth[(student, pid, kc)] = flag
    return submissions, kc_truth


def write_dataset(root: Path, problems, problem_kcs, submissions, kc_ids):
    root.mkdir(parents=True, exist_ok=True)
    with (root / "problems.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem_id", "statement"])
        for p in problems:
            w.writerow([p.problem_id, p.statement])
    with (root / "submissions.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["submission_id", "student_id", "problem_id", "attempt",
                    "timestamp", "score", "code", "code_path"])
        for s in submissions:
            w.writerow([s.submission_id, s.student_id, s.problem_id,
                        s.attempt_index, s.timestamp.isoformat(), s.score,
                        s.code, ""])
    kcs = [{"kc_id": k, "name": k, "description": f"Skill {k}", "origin": "human"}
           for k in kc_ids]
    (root / "kcs.json").write_text(json.dumps(kcs, indent=2))
    with (root / "qmatrix.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem_id", "kc_id"])
        for pid, kcs_ in sorted(problem_kcs.items()):
            for kc in kcs_:
                w.writerow([pid, kc])


def oracle_response(kcs, judgments) -> str:
    """CoT-shaped response text encoding the oracle's per-KC judgments."""
    rows = [
        {"kc_id": kc.kc_id, "used": True, "correct": bool(judgments[kc.kc_id]),
         "reasoning": "mastery oracle"}
        for kc in kcs
    ]
    return (
        "Checking each knowledge component against the code.\n"
        "```json\n" + json.dumps(rows) + "\n```"
    )


def build_mock_fixture(problems, problem_kcs, submissions, kc_truth,
                       kc_components: dict[str, KnowledgeComponent],
                       fewshots, mode: str, model: str) -> dict[str, str]:
    """digest -> response map answering every labeling prompt from the oracle."""
    problems_by_id = {p.problem_id: p for p in problems}
    fixture = {}
    for sub in submissions:
        if sub.attempt_index != 1:
            continue
        kcs = [kc_components[k] for k in problem_kcs[sub.problem_id]]
        request = build_label_prompt(
            problems_by_id[sub.problem_id], sub.code, kcs, fewshots, mode, model)
        judgments = {
            kc.kc_id: kc_truth[(sub.student_id, sub.problem_id, kc.kc_id)]
            for kc in kcs
        }
        fixture[cache_key(request)] = oracle_response(kcs, judgments)
    return fixture
