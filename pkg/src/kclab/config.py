"""Run configuration (TOML) and config-hash-stamped artifact files.

Every artifact carries the hash of the configuration that produced it:
CSV files as a leading ``# config_hash=<hex>`` comment line, JSON files as
a ``config_hash`` key. A stage refuses to consume artifacts stamped with a
different hash, so outputs of unrelated runs cannot be mixed. Method and
KC-set choice are excluded from the hash: they are encoded in the artifact
directory name and the comparison report reads across them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


class ArtifactError(RuntimeError):
    """Missing, malformed, or foreign-config artifact."""


@dataclass
class RunConfig:
    dataset_root: Path
    output_dir: Path
    cache_dir: Path
    # gateway
    endpoint: str = ""
    model: str = "mock"
    mock_fixture: Path | None = None
    retries: int = 2
    concurrency: int = 4
    # embeddings
    embedding_mode: str = "file"  # file | remote
    embedding_path: Path | None = None
    embedding_url: str = ""
    # run
    method: str = "baseline"  # baseline | llm-cot | llm-direct
    kc_set: str = "human"  # human | generated | selected
    seed: int = 0
    fewshots_path: Path | None = None
    prompts_dir: Path | None = None
    # analytics
    lambda_: float = 0.1
    min_support: int = 5
    split_fraction: float = 0.2
    threshold: float = 1.0
    # kc generation
    exemplars_k: int = 5
    target_n: int = 20
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.method not in ("baseline", "llm-cot", "llm-direct"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.kc_set not in ("human", "generated", "selected"):
            raise ConfigError(f"unknown kc_set {self.kc_set!r}")
        if self.embedding_mode not in ("file", "remote"):
            raise ConfigError(f"unknown embedding mode {self.embedding_mode!r}")
        if not self.dataset_root.is_dir():
            raise ConfigError(f"dataset root {self.dataset_root} does not exist")

    def config_hash(self) -> str:
        payload = {
            "dataset_root": str(self.dataset_root),
            "endpoint": self.endpoint,
            "model": self.model,
            "mock_fixture": str(self.mock_fixture) if self.mock_fixture else "",
            "retries": self.retries,
            "embedding_mode": self.embedding_mode,
            "embedding_path": str(self.embedding_path) if self.embedding_path else "",
            "embedding_url": self.embedding_url,
            "seed": self.seed,
            "fewshots_path": str(self.fewshots_path) if self.fewshots_path else "",
            "lambda": self.lambda_,
            "min_support": self.min_support,
            "split_fraction": self.split_fraction,
            "threshold": self.threshold,
            "exemplars_k": self.exemplars_k,
            "target_n": self.target_n,
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def run_dir(self) -> Path:
        """Artifact directory for the current (method, kc_set) combination."""
        return self.output_dir / f"{self.method}_{self.kc_set}"


def load_config(path: str | Path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    with path.open("rb") as fh:
        data = tomllib.load(fh)

    base = path.parent

    def resolve(raw: str | None) -> Path | None:
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else base / p

    dataset = data.get("dataset", {})
    output = data.get("output", {})
    gateway = data.get("gateway", {})
    embeddings = data.get("embeddings", {})
    run = data.get("run", {})
    analytics = data.get("analytics", {})
    kcgen = data.get("kcgen", {})

    config = RunConfig(
        dataset_root=resolve(dataset.get("root")) or base,
        output_dir=resolve(output.get("dir", "out")),
        cache_dir=resolve(gateway.get("cache_dir", "cache")),
        endpoint=gateway.get("endpoint", ""),
        model=gateway.get("model", "mock"),
        mock_fixture=resolve(gateway.get("mock_fixture")),
        retries=int(gateway.get("retries", 2)),
        concurrency=int(gateway.get("concurrency", 4)),
        embedding_mode=embeddings.get("mode", "file"),
        embedding_path=resolve(embeddings.get("path")),
        embedding_url=embeddings.get("url", ""),
        method=run.get("method", "baseline"),
        kc_set=run.get("kc_set", "human"),
        seed=int(run.get("seed", 0)),
        fewshots_path=resolve(run.get("fewshots")),
        prompts_dir=resolve(run.get("prompts_dir")),
        lambda_=float(analytics.get("lambda", 0.1)),
        min_support=int(analytics.get("min_support", 5)),
        split_fraction=float(analytics.get("split_fraction", 0.2)),
        threshold=float(analytics.get("threshold", 1.0)),
        exemplars_k=int(kcgen.get("exemplars_k", 5)),
        target_n=int(kcgen.get("target_n", 20)),
        base_dir=base,
    )
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    config.__post_init__()
    return config


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_artifact(path: Path, columns: list[str], rows: list[dict],
                       config_hash: str) -> None:
    import io

    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    _atomic_write_text(path, buf.getvalue())


def read_csv_artifact(path: Path, config_hash: str | None = None) -> list[dict]:
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}; run its producing stage first")
    with path.open(newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("# config_hash="):
            raise ArtifactError(f"{path} lacks a config_hash header line")
        found = first.split("=", 1)[1]
        if config_hash is not None and found != config_hash:
            raise ArtifactError(
                f"{path} was produced by config {found}, current config is "
                f"{config_hash}; refusing to mix artifacts"
            )
        return list(csv.DictReader(fh))


def write_json_artifact(path: Path, payload: dict, config_hash: str) -> None:
    body = {"config_hash": config_hash, **payload}
    _atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")


def read_json_artifact(path: Path, config_hash: str | None = None) -> dict:
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}; run its producing stage first")
    payload = json.loads(path.read_text(encoding="utf-8"))
    found = payload.get("config_hash")
    if found is None:
        raise ArtifactError(f"{path} lacks a config_hash field")
    if config_hash is not None and found != config_hash:
        raise ArtifactError(
            f"{path} was produced by config {found}, current config is "
            f"{config_hash}; refusing to mix artifacts"
        )
    return payload
