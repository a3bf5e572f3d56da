import csv

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizer

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "int", "return", "for", "if", "while", "n", "i", "sum", "count",
    "(", ")", "{", "}", ";", "=", "+", "<", "0", "1", "##n", "##i",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small randomly-initialized BERT checkpoint saved locally.

    Avoids any network dependency; determinism of the export only needs a
    fixed checkpoint, not a meaningful one.
    """
    path = tmp_path_factory.mktemp("tiny-bert")
    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=16, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32,
        max_position_embeddings=40)
    BertModel(config).save_pretrained(path)
    (path / "vocab.txt").write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizer(str(path / "vocab.txt"), model_max_length=20)
    tokenizer.save_pretrained(path)
    return str(path)


@pytest.fixture
def submissions_csv(tmp_path):
    path = tmp_path / "submissions.csv"
    rows = [
        ("sub-1", "int sum = 0 ; for ( i = 0 ; i < n ; i = i + 1 )"),
        ("sub-2", "if ( n < 1 ) return 0 ;"),
        ("sub-3", "while ( count < n ) { count = count + 1 ; }"),
    ]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["submission_id", "student_id", "problem_id", "attempt",
                         "timestamp", "score", "code", "code_path"])
        for sid, code in rows:
            writer.writerow([sid, "s1", "p1", 1,
                             "2024-01-01T00:00:00+00:00", 1.0, code, ""])
    return path
