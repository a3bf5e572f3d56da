"""KC-level correctness labeling and learning-curve analytics toolkit."""

from .afm import AdditiveFactorsModel, AFMParams, afm_predict, fit_afm
from .analytics import (
    CurvePoint,
    LearningCurve,
    PowerLawFit,
    aggregate_curves,
    auc,
    empirical_curve,
    fit_power_law,
)
from .core import build_attempt_pairs, is_problem_correct, opportunity_counts
from .embeddings import Embedding, EmbeddingStore, cosine_distance, kmeans, nearest
from .evaluation import cohens_kappa
from .gateway import ChatRequest, ChatResponse, LLMGateway, MockProvider, cache_key
from .ingestion import DatasetBundle, load_dataset, save_dataset, validate_dataset
from .types import (
    AttemptPair,
    CodeKCMap,
    KCLabel,
    KCSet,
    KnowledgeComponent,
    Problem,
    QMatrix,
    Submission,
)

__version__ = "0.1.0"
