"""Automated KC generation and temporal context-aware code-KC mapping.

Pipeline per problem: pick diverse correct exemplars by clustering their
embeddings, generate candidate KCs from each exemplar, consolidate the pool
to a target-size KC set, profile each exemplar with the KC subset it uses,
then map each student to the profile nearest (cosine) their LAST attempt.
The resulting KC subset is what the labeling stage judges on the FIRST
attempt.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import is_problem_correct
from .embeddings import Embedding, EmbeddingStore, cosine_distance, kmeans
from .gateway import ChatRequest, LLMGateway
from .prompting import (
    ResponseParseError,
    extract_json_block,
    format_kc_list,
    load_template,
    render,
)
from .types import (
    AttemptPair,
    KCOrigin,
    KCSet,
    KCSetKind,
    KnowledgeComponent,
    Problem,
    Submission,
)

DEFAULT_EXEMPLARS_PER_PROBLEM = 5
HASH_EMBED_DIM = 64


@dataclass(frozen=True)
class ExemplarSet:
    problem_id: str
    exemplars: tuple[tuple[str, Embedding], ...]  # (submission_id, embedding)
    k: int


@dataclass(frozen=True)
class ExemplarKCProfile:
    problem_id: str
    submission_id: str
    kc_subset: frozenset[str]
    embedding: Embedding


def select_exemplars(
    problem: Problem,
    correct_solutions: list[Submission],
    k: int,
    seed: int,
    store: EmbeddingStore,
    threshold: float = 1.0,
) -> ExemplarSet:
    """One representative correct solution per embedding cluster.

    With k or fewer solutions every one of them is an exemplar; otherwise the
    solution nearest (Euclidean) each k-means centroid represents its cluster.
    """
    solutions = [s for s in correct_solutions if is_problem_correct(s, threshold)]
    if not solutions:
        raise ValueError(f"problem {problem.problem_id!r} has no correct solutions")
    solutions = sorted(solutions, key=lambda s: s.submission_id)
    embeddings = [store.get_embedding(s.submission_id, s.code) for s in solutions]

    if len(solutions) <= k:
        chosen = list(zip((s.submission_id for s in solutions), embeddings))
        return ExemplarSet(problem.problem_id, tuple(chosen), k)

    result = kmeans(embeddings, k, seed)
    by_id = {e.id: e for e in embeddings}
    chosen = []
    for cluster in range(k):
        members = sorted(i for i, a in result.assignments.items() if a == cluster)
        centroid = result.centroids[cluster]
        best = min(
            members,
            key=lambda i: (float(np.sum((by_id[i].vector - centroid) ** 2)), i),
        )
        chosen.append((best, by_id[best]))
    chosen.sort(key=lambda item: item[0])
    return ExemplarSet(problem.problem_id, tuple(chosen), k)


def _complete_with_retry(gateway: LLMGateway, request: ChatRequest, parse):
    """One call plus one reprompt-with-format-reminder on parse failure."""
    response = gateway.complete(request)
    try:
        return parse(response.content)
    except ResponseParseError:
        reminder = load_template("format_reminder")
        retry = ChatRequest(
            model=request.model,
            messages=request.messages
            + (("assistant", response.content), ("user", reminder)),
            temperature=request.temperature,
            top_p=request.top_p,
            max_tokens=request.max_tokens,
        )
        return parse(gateway.complete(retry).content)


def generate_candidate_kcs(
    problem: Problem,
    exemplar_code: str,
    gateway: LLMGateway,
    model: str,
    prompts_dir=None,
) -> list[tuple[str, str]]:
    """Candidate (name, description) pairs for one correct exemplar."""
    prompt = render(
        load_template("kc_generation", prompts_dir),
        problem_statement=problem.statement,
        code=exemplar_code,
    )
    request = ChatRequest(model=model, messages=(("user", prompt),))

    def parse(content: str) -> list[tuple[str, str]]:
        data = extract_json_block(content)
        if not isinstance(data, list):
            raise ResponseParseError("expected a JSON array of candidates")
        out = []
        for item in data:
            if not isinstance(item, dict) or "name" not in item or "description" not in item:
                raise ResponseParseError(f"bad candidate entry: {item!r}")
            out.append((str(item["name"]), str(item["description"])))
        return out

    return _complete_with_retry(gateway, request, parse)


def hash_text_embedding(text: str, dim: int = HASH_EMBED_DIM) -> np.ndarray:
    """Deterministic character-trigram feature-hashing embedding.

    Offline stand-in for a text-embedding service when clustering KC
    descriptions; only relative distances matter there.
    """
    vec = np.zeros(dim)
    padded = f"  {text.lower()}  "
    for i in range(len(padded) - 2):
        gram = padded[i:i + 3]
        digest = hashlib.sha256(gram.encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "big") % dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        vec[index] += sign
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else np.eye(dim)[0]


def consolidate_kcs(
    candidates: list[tuple[str, str]],
    target_n: int,
    seed: int,
    gateway: LLMGateway,
    model: str,
    embed_text=hash_text_embedding,
    prompts_dir=None,
) -> KCSet:
    """Cluster candidate descriptions into target_n groups, summarize each.

    Clustering embeds the "name: description" concatenation; each cluster is
    collapsed to one KC by a summarization LLM call.
    """
    if len(candidates) < target_n:
        raise ValueError(
            f"need at least {target_n} candidates to consolidate, got {len(candidates)}"
        )
    points = [
        Embedding(id=f"cand-{i:04d}", vector=embed_text(f"{name}: {desc}"))
        for i, (name, desc) in enumerate(candidates)
    ]
    result = kmeans(points, target_n, seed)

    template = load_template("kc_summarization", prompts_dir)
    components = []
    for cluster in range(target_n):
        member_ids = sorted(i for i, a in result.assignments.items() if a == cluster)
        members = [candidates[int(mid.split("-")[1])] for mid in member_ids]
        listing = "\n".join(f"- {name}: {desc}" for name, desc in members)
        request = ChatRequest(
            model=model, messages=(("user", render(template, kc_list=listing)),)
        )

        def parse(content: str) -> tuple[str, str]:
            data = extract_json_block(content)
            if not isinstance(data, dict) or "name" not in data or "description" not in data:
                raise ResponseParseError(f"bad summary: {data!r}")
            return str(data["name"]), str(data["description"])

        name, description = _complete_with_retry(gateway, request, parse)
        components.append(
            KnowledgeComponent(
                kc_id=f"gen-{cluster:02d}", name=name,
                description=description, origin=KCOrigin.GENERATED,
            )
        )
    return KCSet(set_id="generated", kind=KCSetKind.GENERATED, components=tuple(components))


def profile_exemplar(
    exemplar: Submission,
    problem: Problem,
    kc_set: KCSet,
    gateway: LLMGateway,
    model: str,
    store: EmbeddingStore,
    prompts_dir=None,
) -> ExemplarKCProfile:
    """LLM-selected KC subset this exemplar exercises, plus its embedding."""
    prompt = render(
        load_template("kc_selection", prompts_dir),
        problem_statement=problem.statement,
        code=exemplar.code,
        kc_list=format_kc_list(kc_set.components),
    )
    request = ChatRequest(model=model, messages=(("user", prompt),))
    valid_ids = kc_set.kc_ids()

    def parse(content: str) -> frozenset[str]:
        data = extract_json_block(content)
        if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
            raise ResponseParseError("expected a JSON array of kc_id strings")
        unknown = set(data) - valid_ids
        if unknown:
            raise ResponseParseError(f"selected kc_ids not in the set: {sorted(unknown)}")
        if not data:
            raise ResponseParseError("exemplar must exercise at least one KC")
        return frozenset(data)

    subset = _complete_with_retry(gateway, request, parse)
    return ExemplarKCProfile(
        problem_id=exemplar.problem_id,
        submission_id=exemplar.submission_id,
        kc_subset=subset,
        embedding=store.get_embedding(exemplar.submission_id, exemplar.code),
    )


def map_student_to_kcs(
    pair: AttemptPair,
    profiles: list[ExemplarKCProfile],
    store: EmbeddingStore,
) -> tuple[tuple[str, str], frozenset[str]]:
    """Code-KC map entry from the profile nearest the student's last attempt."""
    if not profiles:
        raise ValueError(f"no exemplar profiles for problem {pair.problem_id!r}")
    query = store.get_embedding(pair.last.submission_id, pair.last.code)
    best = min(
        sorted(profiles, key=lambda p: p.submission_id),
        key=lambda p: cosine_distance(query.vector, p.embedding.vector),
    )
    return (pair.student_id, pair.problem_id), best.kc_subset
