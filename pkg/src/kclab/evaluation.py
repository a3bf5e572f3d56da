"""Inter-annotator agreement and method-comparison reporting."""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path

from .types import KCLabel, KCSet, Problem


@dataclass(frozen=True)
class AgreementReport:
    n: int
    observed_agreement: float
    expected_agreement: float
    kappa: float
    confusion: tuple[tuple[int, int], tuple[int, int]]  # [a][b] over (true, false)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "observed_agreement": self.observed_agreement,
            "expected_agreement": self.expected_agreement,
            "kappa": self.kappa,
            "confusion": [list(row) for row in self.confusion],
        }


def cohens_kappa(a: list[bool], b: list[bool]) -> AgreementReport:
    """Chance-corrected agreement between two aligned binary raters.

    When both raters are constant and identical the classical formula is
    0/0; that degenerate case is defined as kappa = 1.
    """
    if len(a) != len(b):
        raise ValueError(f"rater lists differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("cannot compute agreement on empty input")

    tt = sum(1 for x, y in zip(a, b) if x and y)
    tf = sum(1 for x, y in zip(a, b) if x and not y)
    ft = sum(1 for x, y in zip(a, b) if not x and y)
    ff = sum(1 for x, y in zip(a, b) if not x and not y)
    n = len(a)

    p_o = (tt + ff) / n
    p_a_true = (tt + tf) / n
    p_b_true = (tt + ft) / n
    p_e = p_a_true * p_b_true + (1 - p_a_true) * (1 - p_b_true)

    if p_e == 1.0:
        if p_o == 1.0:
            kappa = 1.0
        else:
            raise ValueError("both raters constant but in disagreement; kappa undefined")
    else:
        kappa = (p_o - p_e) / (1 - p_e)

    return AgreementReport(
        n=n, observed_agreement=p_o, expected_agreement=p_e,
        kappa=kappa, confusion=((tt, tf), (ft, ff)),
    )


def sample_for_human_eval(
    labels: list[KCLabel],
    problems: dict[str, Problem],
    kc_set: KCSet,
    n: int,
    seed: int,
    codes: dict[tuple[str, str], str],
) -> list[dict]:
    """Seeded sample of n submissions as blank annotation worksheet rows.

    LLM judgments are withheld: annotators see statement, code and the KC
    list, with empty judgment cells. One row per (submission, KC).
    """
    groups = sorted({(l.student_id, l.problem_id) for l in labels})
    if n > len(groups):
        raise ValueError(f"requested {n} submissions but only {len(groups)} labeled")
    rng = random.Random(seed)
    chosen = rng.sample(groups, n)

    kcs_by_group: dict[tuple[str, str], list[str]] = {}
    for label in labels:
        kcs_by_group.setdefault((label.student_id, label.problem_id), []).append(label.kc_id)

    rows = []
    for student_id, problem_id in chosen:
        for kc_id in sorted(set(kcs_by_group[(student_id, problem_id)])):
            rows.append({
                "student_id": student_id,
                "problem_id": problem_id,
                "kc_id": kc_id,
                "statement": problems[problem_id].statement,
                "code": codes[(student_id, problem_id)],
                "kc_name": kc_set.get(kc_id).name,
                "judgment": "",
            })
    return rows


WORKSHEET_COLUMNS = ["student_id", "problem_id", "kc_id", "statement", "code",
                     "kc_name", "judgment"]


def write_worksheet(rows: list[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=WORKSHEET_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def read_annotations(path: str | Path) -> dict[tuple[str, str, str], bool]:
    """Human-filled worksheet back in: (student, problem, kc) -> judged correct."""
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            raw = row["judgment"].strip().lower()
            if raw not in ("true", "false", "1", "0", "correct", "incorrect"):
                raise ValueError(
                    f"unrecognized judgment {row['judgment']!r} for "
                    f"({row['student_id']}, {row['problem_id']}, {row['kc_id']})"
                )
            out[(row["student_id"], row["problem_id"], row["kc_id"])] = raw in (
                "true", "1", "correct")
    return out


def compare_methods(
    fits_by_method: dict[str, list[dict]],
    evals_by_method: dict[str, dict],
) -> list[dict]:
    """Mean RMSE / mean r2 / AUC rows, one per method, for the summary table.

    ``fits_by_method`` holds parsed fits.csv rows; ``evals_by_method`` the
    afm_eval.json payloads.
    """
    if len(fits_by_method) < 2:
        raise ValueError("method comparison needs at least two methods")
    rows = []
    for method in sorted(fits_by_method):
        fits = fits_by_method[method]
        rmse = sum(float(f["rmse"]) for f in fits) / len(fits)
        r2 = sum(float(f["r2"]) for f in fits) / len(fits)
        auc_value = evals_by_method.get(method, {}).get("auc")
        rows.append({
            "method": method,
            "mean_rmse": round(rmse, 6),
            "mean_r2": round(r2, 6),
            "auc": round(auc_value, 6) if auc_value is not None else None,
        })
    return rows


def comparison_markdown(rows: list[dict]) -> str:
    lines = [
        "| Method | Mean RMSE | Mean r2 | AFM AUC |",
        "|---|---|---|---|",
    ]
    for row in rows:
        auc_cell = "" if row["auc"] is None else f"{row['auc']:.3f}"
        lines.append(
            f"| {row['method']} | {row['mean_rmse']:.3f} | "
            f"{row['mean_r2']:.3f} | {auc_cell} |"
        )
    return "\n".join(lines) + "\n"
