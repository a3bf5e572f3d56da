import csv
import json

import pytest

from kclab.ingestion import load_dataset, save_dataset, validate_dataset
from kclab.types import ValidationError


def write_dataset(root, submissions_rows, problems_rows=None, kcs=None, qmatrix=None):
    problems_rows = problems_rows or [["p1", "Do the thing."]]
    with (root / "problems.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem_id", "statement"])
        w.writerows(problems_rows)
    with (root / "submissions.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["submission_id", "student_id", "problem_id", "attempt",
                    "timestamp", "score", "code", "code_path"])
        w.writerows(submissions_rows)
    if kcs is not None:
        (root / "kcs.json").write_text(json.dumps(kcs))
    if qmatrix is not None:
        with (root / "qmatrix.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["problem_id", "kc_id"])
            w.writerows(qmatrix)


BASIC_ROWS = [
    ["a1", "s1", "p1", "1", "2024-01-01T10:00:00Z", "0.5", "x = 1", ""],
    ["a2", "s1", "p1", "2", "2024-01-01T10:05:00Z", "1.0", "x = 2", ""],
    ["b1", "s2", "p1", "1", "2024-01-01T11:00:00Z", "1.0", "x = 3", ""],
]


class TestLoadDataset:
    def test_well_formed(self, tmp_path):
        write_dataset(tmp_path, BASIC_ROWS)
        bundle = load_dataset(tmp_path)
        assert len(bundle.submissions) == 3
        indices = {(s.student_id, s.attempt_index) for s in bundle.submissions}
        assert indices == {("s1", 1), ("s1", 2), ("s2", 1)}

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="submissions.csv"):
            load_dataset(tmp_path)

    def test_unknown_problem(self, tmp_path):
        rows = [["a1", "s1", "p9", "1", "2024-01-01T10:00:00Z", "1.0", "x", ""]]
        write_dataset(tmp_path, rows)
        with pytest.raises(ValidationError, match="p9"):
            load_dataset(tmp_path)

    def test_duplicate_key(self, tmp_path):
        rows = [
            ["a1", "s1", "p1", "1", "2024-01-01T10:00:00Z", "1.0", "x", ""],
            ["a2", "s1", "p1", "1", "2024-01-01T10:05:00Z", "1.0", "y", ""],
        ]
        write_dataset(tmp_path, rows)
        with pytest.raises(ValidationError, match="line 3"):
            load_dataset(tmp_path)

    def test_code_and_code_path_mutually_exclusive(self, tmp_path):
        rows = [["a1", "s1", "p1", "1", "2024-01-01T10:00:00Z", "1.0", "x", "f.java"]]
        write_dataset(tmp_path, rows)
        with pytest.raises(ValidationError, match="exactly one"):
            load_dataset(tmp_path)

    def test_code_path_resolved(self, tmp_path):
        (tmp_path / "code").mkdir()
        (tmp_path / "code" / "a1.java").write_text("return 42;")
        rows = [["a1", "s1", "p1", "1", "2024-01-01T10:00:00Z", "1.0", "", "code/a1.java"]]
        write_dataset(tmp_path, rows)
        bundle = load_dataset(tmp_path)
        assert bundle.submissions[0].code == "return 42;"

    def test_missing_timestamps_get_monotone_clock(self, tmp_path):
        rows = [
            ["a1", "s1", "p1", "1", "", "0.0", "x", ""],
            ["a2", "s1", "p1", "2", "", "1.0", "y", ""],
        ]
        write_dataset(tmp_path, rows)
        bundle = load_dataset(tmp_path)
        first, second = sorted(bundle.submissions, key=lambda s: s.attempt_index)
        assert first.timestamp < second.timestamp

    def test_attempts_renumbered_contiguously(self, tmp_path):
        rows = [
            ["a1", "s1", "p1", "2", "2024-01-01T10:00:00Z", "0.0", "x", ""],
            ["a2", "s1", "p1", "5", "2024-01-01T10:05:00Z", "1.0", "y", ""],
        ]
        write_dataset(tmp_path, rows)
        bundle = load_dataset(tmp_path)
        assert sorted(s.attempt_index for s in bundle.submissions) == [1, 2]

    def test_qmatrix_integrity(self, tmp_path):
        kcs = [{"kc_id": "A", "name": "A", "description": "", "origin": "human"}]
        write_dataset(tmp_path, BASIC_ROWS, kcs=kcs, qmatrix=[["p1", "Unknown"]])
        with pytest.raises(ValidationError, match="Unknown"):
            load_dataset(tmp_path)

    def test_correct_solution_ids_collected(self, tmp_path):
        write_dataset(tmp_path, BASIC_ROWS)
        bundle = load_dataset(tmp_path)
        assert bundle.problems[0].correct_solution_ids == ("a2", "b1")


class TestRoundTrip:
    def test_load_save_load_identical(self, tmp_path):
        kcs = [{"kc_id": "A", "name": "Loops", "description": "d", "origin": "human"}]
        write_dataset(tmp_path, BASIC_ROWS, kcs=kcs, qmatrix=[["p1", "A"]])
        bundle = load_dataset(tmp_path)
        out = tmp_path / "copy"
        save_dataset(bundle, out)
        again = load_dataset(out)
        assert again.submissions == bundle.submissions
        assert again.problems == bundle.problems
        assert again.q_matrices == bundle.q_matrices
        assert again.kc_sets == bundle.kc_sets


class TestValidateDataset:
    def test_counts(self, tmp_path):
        write_dataset(tmp_path, BASIC_ROWS)
        report = validate_dataset(load_dataset(tmp_path))
        assert report.student_count == 2
        assert report.problem_count == 1
        assert report.submission_count == 3

    def test_sparse_kc_warning(self, tmp_path):
        kcs = [{"kc_id": "NestedLoops", "name": "n", "description": "", "origin": "human"},
               {"kc_id": "Common", "name": "c", "description": "", "origin": "human"}]
        problems = [[f"p{i}", "stmt"] for i in range(1, 5)]
        rows = [[f"a{i}", "s1", f"p{i}", "1", "", "1.0", "x", ""] for i in range(1, 5)]
        qmatrix = [["p1", "NestedLoops"], ["p2", "NestedLoops"]] + \
                  [[f"p{i}", "Common"] for i in range(1, 5)]
        write_dataset(tmp_path, rows, problems_rows=problems, kcs=kcs, qmatrix=qmatrix)
        report = validate_dataset(load_dataset(tmp_path))
        assert any("NestedLoops" in w for w in report.warnings)
        assert not any("Common" in w for w in report.warnings)

    def test_no_kcs_empty_section(self, tmp_path):
        write_dataset(tmp_path, BASIC_ROWS)
        report = validate_dataset(load_dataset(tmp_path))
        assert report.kc_usage == {}
        assert report.warnings == []
