"""Additive Factors Model over per-KC Bernoulli observations.

Each KC label is one observation with logit theta_i + beta_k + gamma_k * T,
where T is the student's prior opportunity count on that KC. Training
maximizes the L2-penalized log-likelihood by full-batch projected gradient
ascent (gamma clamped at 0) with backtracking line search.

The estimator follows the scikit-learn fit/predict surface so it composes
with that ecosystem's tooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import KCLabel, OpportunityTable

GRAD_TOL = 1e-5
DEFAULT_MAX_ITER = 500
DEFAULT_LAMBDA = 0.1


@dataclass(frozen=True)
class AFMParams:
    theta: dict[str, float]
    beta: dict[str, float]
    gamma: dict[str, float]
    lambda_: float

    def __post_init__(self):
        for name, params in (("theta", self.theta), ("beta", self.beta),
                             ("gamma", self.gamma)):
            for key, value in params.items():
                if not np.isfinite(value):
                    raise ValueError(f"{name}[{key!r}] is not finite")
        for key, value in self.gamma.items():
            if value < 0:
                raise ValueError(f"gamma[{key!r}] must be non-negative")

    def to_dict(self) -> dict:
        return {
            "theta": dict(sorted(self.theta.items())),
            "beta": dict(sorted(self.beta.items())),
            "gamma": dict(sorted(self.gamma.items())),
            "lambda": self.lambda_,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AFMParams":
        return cls(theta=dict(data["theta"]), beta=dict(data["beta"]),
                   gamma=dict(data["gamma"]), lambda_=float(data["lambda"]))


@dataclass(frozen=True)
class Observation:
    student_id: str
    kc_id: str
    opportunity_count: int  # T, prior exposures
    correct: bool


def observations_from_labels(
    labels: list[KCLabel], opportunities: OpportunityTable
) -> list[Observation]:
    return [
        Observation(
            student_id=label.student_id,
            kc_id=label.kc_id,
            opportunity_count=opportunities.get(
                label.student_id, label.problem_id, label.kc_id
            ),
            correct=label.correct,
        )
        for label in labels
    ]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class AdditiveFactorsModel:
    """Penalized-likelihood AFM with a fit/predict_proba estimator surface."""

    def __init__(self, lambda_: float = DEFAULT_LAMBDA,
                 max_iter: int = DEFAULT_MAX_ITER, grad_tol: float = GRAD_TOL):
        self.lambda_ = lambda_
        self.max_iter = max_iter
        self.grad_tol = grad_tol
        self.params_: AFMParams | None = None
        self.n_iter_: int = 0
        self.loglik_path_: list[float] = []

    def get_params(self, deep: bool = True) -> dict:
        return {"lambda_": self.lambda_, "max_iter": self.max_iter,
                "grad_tol": self.grad_tol}

    def set_params(self, **params) -> "AdditiveFactorsModel":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def _design(self, observations: list[Observation]):
        students = sorted({o.student_id for o in observations})
        kcs = sorted({o.kc_id for o in observations})
        s_index = {s: i for i, s in enumerate(students)}
        k_index = {k: i for i, k in enumerate(kcs)}
        si = np.array([s_index[o.student_id] for o in observations])
        ki = np.array([k_index[o.kc_id] for o in observations])
        t = np.array([o.opportunity_count for o in observations], dtype=float)
        y = np.array([o.correct for o in observations], dtype=float)
        return students, kcs, si, ki, t, y

    @staticmethod
    def _logits(theta, beta, gamma, si, ki, t):
        return theta[si] + beta[ki] + gamma[ki] * t

    def penalized_loglik(self, theta, beta, gamma, si, ki, t, y) -> float:
        z = self._logits(theta, beta, gamma, si, ki, t)
        # log sigma(z) if y=1 else log(1 - sigma(z)), numerically stable
        ll = float(np.sum(np.where(y == 1, -np.logaddexp(0, -z), -np.logaddexp(0, z))))
        penalty = self.lambda_ * (
            float(theta @ theta) + float(beta @ beta) + float(gamma @ gamma)
        )
        return ll - penalty

    def gradients(self, theta, beta, gamma, si, ki, t, y):
        z = self._logits(theta, beta, gamma, si, ki, t)
        resid = y - _sigmoid(z)
        g_theta = np.bincount(si, weights=resid, minlength=len(theta))
        g_beta = np.bincount(ki, weights=resid, minlength=len(beta))
        g_gamma = np.bincount(ki, weights=resid * t, minlength=len(gamma))
        g_theta -= 2 * self.lambda_ * theta
        g_beta -= 2 * self.lambda_ * beta
        g_gamma -= 2 * self.lambda_ * gamma
        return g_theta, g_beta, g_gamma

    def fit(self, observations: list[Observation]) -> "AdditiveFactorsModel":
        if not observations:
            raise ValueError("empty training set")
        students, kcs, si, ki, t, y = self._design(observations)
        theta = np.zeros(len(students))
        beta = np.zeros(len(kcs))
        gamma = np.zeros(len(kcs))

        ll = self.penalized_loglik(theta, beta, gamma, si, ki, t, y)
        if not np.isfinite(ll):
            raise ValueError("non-finite likelihood at initialization")
        self.loglik_path_ = [ll]

        step = 1.0
        for iteration in range(self.max_iter):
            g_theta, g_beta, g_gamma = self.gradients(theta, beta, gamma, si, ki, t, y)
            # Clamped-at-zero gamma coordinates pushed further negative do not
            # count against convergence.
            g_gamma_eff = np.where((gamma == 0) & (g_gamma < 0), 0.0, g_gamma)
            grad_norm = max(
                np.abs(g_theta).max(initial=0.0),
                np.abs(g_beta).max(initial=0.0),
                np.abs(g_gamma_eff).max(initial=0.0),
            )
            if grad_norm < self.grad_tol:
                break

            # Backtracking line search on the projected step.
            accepted = False
            trial = step
            for _ in range(50):
                new_theta = theta + trial * g_theta
                new_beta = beta + trial * g_beta
                new_gamma = np.maximum(0.0, gamma + trial * g_gamma)
                new_ll = self.penalized_loglik(new_theta, new_beta, new_gamma,
                                               si, ki, t, y)
                if np.isfinite(new_ll) and new_ll > ll:
                    accepted = True
                    break
                trial *= 0.5
            if not accepted:
                break
            theta, beta, gamma, ll = new_theta, new_beta, new_gamma, new_ll
            self.loglik_path_.append(ll)
            step = min(trial * 2.0, 1e3)
            self.n_iter_ = iteration + 1

        self.params_ = AFMParams(
            theta={s: float(v) for s, v in zip(students, theta)},
            beta={k: float(v) for k, v in zip(kcs, beta)},
            gamma={k: float(v) for k, v in zip(kcs, gamma)},
            lambda_=self.lambda_,
        )
        return self

    def predict_proba(self, student_id: str, kc_ids: list[str],
                      t_values: list[int]) -> float:
        if self.params_ is None:
            raise RuntimeError("model is not fitted")
        return afm_predict(self.params_, student_id, kc_ids, t_values)


def afm_predict(params: AFMParams, student_id: str, kc_ids: list[str],
                t_values: list[float]) -> float:
    """P(correct) for one observation; unseen students get theta = 0."""
    if not kc_ids:
        raise ValueError("kc_ids must be non-empty")
    if len(kc_ids) != len(t_values):
        raise ValueError("kc_ids and t_values must align")
    z = params.theta.get(student_id, 0.0)
    for kc_id, t in zip(kc_ids, t_values):
        if kc_id not in params.beta:
            raise KeyError(f"unknown kc_id {kc_id!r}")
        z += params.beta[kc_id] + params.gamma[kc_id] * t
    return float(_sigmoid(np.array([z]))[0])


def fit_afm(
    labels: list[KCLabel],
    opportunities: OpportunityTable,
    lambda_: float = DEFAULT_LAMBDA,
    max_iter: int = DEFAULT_MAX_ITER,
) -> AFMParams:
    model = AdditiveFactorsModel(lambda_=lambda_, max_iter=max_iter)
    model.fit(observations_from_labels(labels, opportunities))
    return model.params_


def split_by_student(
    labels: list[KCLabel], test_fraction: float, seed: int
) -> tuple[list[KCLabel], list[KCLabel]]:
    """Seeded train/test split on whole students (the unseen-student setup)."""
    import random

    students = sorted({label.student_id for label in labels})
    rng = random.Random(seed)
    rng.shuffle(students)
    n_test = max(1, int(round(len(students) * test_fraction)))
    test_students = set(students[:n_test])
    train = [l for l in labels if l.student_id not in test_students]
    test = [l for l in labels if l.student_id in test_students]
    return train, test


def evaluate_afm(
    params: AFMParams,
    test_labels: list[KCLabel],
    opportunities: OpportunityTable,
) -> tuple[float, int]:
    """Held-out AUC over per-KC observations; returns (auc, n_observations)."""
    from .analytics import auc as _auc

    scores, truth = [], []
    for label in test_labels:
        if label.kc_id not in params.beta:
            continue
        t = opportunities.get(label.student_id, label.problem_id, label.kc_id)
        scores.append(afm_predict(params, label.student_id, [label.kc_id], [t]))
        truth.append(label.correct)
    return _auc(scores, truth), len(scores)
