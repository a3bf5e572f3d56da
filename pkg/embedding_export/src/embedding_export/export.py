"""Batch transformer embeddings for code submissions.

Reads a submissions CSV, runs every unique submission through a local
transformer in inference mode, and writes one JSONL line per submission:

    {"id": "<submission_id>", "vector": [f64, ...]}

A manifest describing the export is written next to the output file as
``<out>.manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch
from transformers import AutoModel, AutoTokenizer

POOLINGS = ("mean", "cls")


@dataclass(frozen=True)
class ExportManifest:
    model_name: str
    dimension: int
    pooling: str
    count: int
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.count < 0:
            raise ValueError("count must be non-negative")

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "dimension": self.dimension,
            "pooling": self.pooling,
            "count": self.count,
            "warnings": list(self.warnings),
        }


def read_submissions(path: Path) -> list[tuple[str, str]]:
    """(submission_id, code) pairs, first occurrence wins per id."""
    seen: dict[str, str] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"submission_id", "code"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            sid = row["submission_id"]
            code = row["code"]
            if not code and row.get("code_path"):
                code = (path.parent / row["code_path"]).read_text()
            if sid not in seen:
                seen[sid] = code
    if not seen:
        raise ValueError(f"{path}: no submissions")
    return list(seen.items())


def _pool(hidden: torch.Tensor, mask: torch.Tensor, pooling: str) -> torch.Tensor:
    if pooling == "cls":
        return hidden[:, 0, :]
    expanded = mask.unsqueeze(-1).to(hidden.dtype)
    summed = (hidden * expanded).sum(dim=1)
    return summed / expanded.sum(dim=1).clamp(min=1.0)


def export_embeddings(
    submissions_csv: str | Path,
    out_jsonl: str | Path,
    model_name: str,
    pooling: str = "mean",
    batch_size: int = 8,
) -> ExportManifest:
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}")
    submissions = read_submissions(Path(submissions_csv))

    tokenizer = AutoTokenizer.from_pretrained(model_name)
    model = AutoModel.from_pretrained(model_name)
    model.eval()
    max_length = min(tokenizer.model_max_length, 512)

    warnings: list[str] = []
    out_path = Path(out_jsonl)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
    dimension = 0
    with tmp_path.open("w") as out, torch.inference_mode():
        for start in range(0, len(submissions), batch_size):
            batch = submissions[start:start + batch_size]
            codes = [code for _, code in batch]
            untruncated = tokenizer(codes)["input_ids"]
            encoded = tokenizer(
                codes, padding=True, truncation=True, max_length=max_length,
                return_tensors="pt")
            for (sid, _), ids in zip(batch, untruncated):
                if len(ids) > max_length:
                    warnings.append(
                        f"{sid}: code truncated to {max_length} tokens")
            hidden = model(**encoded).last_hidden_state
            vectors = _pool(hidden, encoded["attention_mask"], pooling)
            dimension = vectors.shape[1]
            for (sid, _), vec in zip(batch, vectors):
                out.write(json.dumps(
                    {"id": sid, "vector": [float(x) for x in vec]}) + "\n")
    tmp_path.replace(out_path)

    manifest = ExportManifest(
        model_name=model_name, dimension=int(dimension), pooling=pooling,
        count=len(submissions), warnings=tuple(warnings))
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-embeddings",
        description="Export transformer embeddings for code submissions as JSONL.")
    parser.add_argument("--in", dest="submissions", required=True,
                        help="submissions CSV (submission_id, code columns)")
    parser.add_argument("--out", dest="out", required=True,
                        help="output embeddings JSONL path")
    parser.add_argument("--model", required=True,
                        help="model name or local checkpoint directory")
    parser.add_argument("--pooling", choices=POOLINGS, default="mean")
    parser.add_argument("--batch-size", type=int, default=8)
    args = parser.parse_args(argv)
    try:
        manifest = export_embeddings(args.submissions, args.out, args.model,
                                     args.pooling, args.batch_size)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest.count} vectors of dimension {manifest.dimension} "
          f"to {args.out}")
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
