import random

import pytest

from kclab.evaluation import (
    cohens_kappa,
    compare_methods,
    comparison_markdown,
    read_annotations,
    sample_for_human_eval,
    write_worksheet,
)
from kclab.types import (
    KCLabel,
    KCSet,
    KCSetKind,
    KnowledgeComponent,
    LabelMethod,
    Problem,
)


class TestCohensKappa:
    def test_identical_lists(self):
        report = cohens_kappa([True, False, True], [True, False, True])
        assert report.kappa == 1.0

    def test_hand_computed_half(self):
        report = cohens_kappa([True, True, False, False], [True, False, False, False])
        assert report.observed_agreement == pytest.approx(0.75)
        assert report.expected_agreement == pytest.approx(0.5)
        assert report.kappa == pytest.approx(0.5)

    def test_hand_computed_minus_one(self):
        report = cohens_kappa([True, False, True, False], [False, True, False, True])
        assert report.observed_agreement == 0.0
        assert report.expected_agreement == pytest.approx(0.5)
        assert report.kappa == pytest.approx(-1.0)

    def test_confusion_sums_to_n(self):
        a = [True, True, False, False, True]
        b = [True, False, False, True, True]
        report = cohens_kappa(a, b)
        assert sum(sum(row) for row in report.confusion) == report.n == 5

    def test_constant_identical_raters(self):
        assert cohens_kappa([True] * 4, [True] * 4).kappa == 1.0

    def test_constant_disagreeing_raters(self):
        # p_e is 0 here, not 1, so the classical formula applies and gives 0.
        assert cohens_kappa([True] * 4, [False] * 4).kappa == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cohens_kappa([True], [True, False])

    def test_empty(self):
        with pytest.raises(ValueError):
            cohens_kappa([], [])

    def test_symmetry_random_pairs(self):
        rng = random.Random(23)
        for _ in range(100):
            size = rng.randint(2, 30)
            a = [rng.random() < 0.5 for _ in range(size)]
            b = [rng.random() < 0.5 for _ in range(size)]
            try:
                forward = cohens_kappa(a, b).kappa
            except ValueError:
                continue
            assert forward == pytest.approx(cohens_kappa(b, a).kappa, abs=1e-12)

    def test_invariant_under_joint_negation(self):
        rng = random.Random(29)
        a = [rng.random() < 0.5 for _ in range(40)]
        b = [rng.random() < 0.5 for _ in range(40)]
        assert cohens_kappa(a, b).kappa == pytest.approx(
            cohens_kappa([not x for x in a], [not x for x in b]).kappa, abs=1e-12)


def build_labels(n_groups=10):
    labels = []
    for i in range(n_groups):
        for kc in ("A", "B"):
            labels.append(KCLabel(
                student_id=f"s{i}", problem_id="p1", kc_id=kc,
                used=True, correct=i % 2 == 0, method=LabelMethod.LLM_COT,
                rationale="because"))
    return labels


KC_SET = KCSet(set_id="h", kind=KCSetKind.HUMAN, components=(
    KnowledgeComponent(kc_id="A", name="Arrays"),
    KnowledgeComponent(kc_id="B", name="Branches"),
))
PROBLEMS = {"p1": Problem(problem_id="p1", statement="Do a thing.")}
CODES = {(f"s{i}", "p1"): f"code {i}" for i in range(10)}


class TestSampling:
    def test_sample_size_and_blank_judgments(self):
        rows = sample_for_human_eval(build_labels(), PROBLEMS, KC_SET, 4, 0, CODES)
        assert len({(r["student_id"], r["problem_id"]) for r in rows}) == 4
        assert all(r["judgment"] == "" for r in rows)
        assert all("correct" not in r or r["judgment"] == "" for r in rows)

    def test_seeded_determinism(self):
        a = sample_for_human_eval(build_labels(), PROBLEMS, KC_SET, 5, 42, CODES)
        b = sample_for_human_eval(build_labels(), PROBLEMS, KC_SET, 5, 42, CODES)
        assert a == b

    def test_population_boundary(self):
        rows = sample_for_human_eval(build_labels(), PROBLEMS, KC_SET, 10, 0, CODES)
        assert len({(r["student_id"], r["problem_id"]) for r in rows}) == 10

    def test_too_large_rejected(self):
        with pytest.raises(ValueError):
            sample_for_human_eval(build_labels(), PROBLEMS, KC_SET, 11, 0, CODES)

    def test_no_duplicates(self):
        rows = sample_for_human_eval(build_labels(), PROBLEMS, KC_SET, 10, 7, CODES)
        keys = [(r["student_id"], r["problem_id"], r["kc_id"]) for r in rows]
        assert len(keys) == len(set(keys))

    def test_worksheet_roundtrip(self, tmp_path):
        rows = sample_for_human_eval(build_labels(), PROBLEMS, KC_SET, 3, 0, CODES)
        for row in rows:
            row["judgment"] = "true"
        path = tmp_path / "worksheet.csv"
        write_worksheet(rows, path)
        annotations = read_annotations(path)
        assert len(annotations) == len(rows)
        assert all(v is True for v in annotations.values())


class TestCompareMethods:
    FITS = {
        "baseline_human": [
            {"kc_id": "A", "rmse": "0.10", "r2": "0.20"},
            {"kc_id": "B", "rmse": "0.12", "r2": "0.30"},
        ],
        "llm_cot_human": [
            {"kc_id": "A", "rmse": "0.07", "r2": "0.40"},
            {"kc_id": "B", "rmse": "0.07", "r2": "0.36"},
        ],
    }
    EVALS = {"baseline_human": {"auc": 0.53}, "llm_cot_human": {"auc": 0.63}}

    def test_table_shape(self):
        rows = compare_methods(self.FITS, self.EVALS)
        assert len(rows) == 2
        by_method = {r["method"]: r for r in rows}
        assert by_method["baseline_human"]["mean_rmse"] == pytest.approx(0.11)
        assert by_method["llm_cot_human"]["mean_r2"] == pytest.approx(0.38)
        assert by_method["llm_cot_human"]["auc"] == pytest.approx(0.63)

    def test_single_method_rejected(self):
        with pytest.raises(ValueError):
            compare_methods({"baseline_human": self.FITS["baseline_human"]}, {})

    def test_markdown_rendering(self):
        text = comparison_markdown(compare_methods(self.FITS, self.EVALS))
        assert "| baseline_human |" in text
        assert text.count("\n") == 4
