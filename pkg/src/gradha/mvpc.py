"""Multivariate pattern classification: one-vs-rest linear SVM trained by
primal subgradient descent, and the leave-one-subject-out evaluation loop.

Folds are independent given their derived seeds and could run in
parallel; report assembly is a deterministic ordered reduction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .baselines import fit_gpa, pca_reduce, procrustes_to_template
from .core import Dataset, center_and_scale, mean_pairwise_isc
from .errors import LabelError, ShapeError, SpecError
from .optimizer import HyperParams, align_new_subject, fit

ALIGNMENT_METHODS = ("none", "gradha", "gpa", "pca")


@dataclass(frozen=True)
class SvmParams:
    """Regularization strength and epoch count for the hinge-loss trainer."""

    lambda_: float = 1e-3
    epochs: int = 50

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise SpecError(f"lambda must be > 0, got {self.lambda_}")
        if self.epochs < 1:
            raise SpecError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class LinearModel:
    """One-vs-rest linear classifier: one weight row and bias per class.

    objective_history holds the epoch-end primal objective (mean hinge
    plus L2 penalty, summed over the K binary problems).
    """

    weights: np.ndarray
    biases: np.ndarray
    classes: list[str]
    train_params: dict
    objective_history: list[float]


@dataclass(frozen=True)
class FoldResult:
    held_out_subject_id: str
    accuracy: float
    align_seconds: float
    train_seconds: float
    test_seconds: float


@dataclass(frozen=True)
class CvReport:
    """Per-fold and aggregate accuracy for one leave-one-subject-out run."""

    per_fold: list[FoldResult]
    mean_accuracy: float
    std_accuracy: float
    mean_isc_aligned: float
    chance: float
    params: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "chance": self.chance,
            "mean_isc_aligned": self.mean_isc_aligned,
            "seed": self.seed,
            "params": self.params,
            "per_fold": [
                {
                    "held_out_subject_id": fr.held_out_subject_id,
                    "accuracy": fr.accuracy,
                    "align_seconds": fr.align_seconds,
                    "train_seconds": fr.train_seconds,
                    "test_seconds": fr.test_seconds,
                }
                for fr in self.per_fold
            ],
        }


def train_svm(
    features: np.ndarray,
    labels,
    lambda_: float = 1e-3,
    epochs: int = 50,
    seed: int = 0,
) -> LinearModel:
    """Train K one-vs-rest linear SVMs by stochastic subgradient descent.

    Uses the 1/(lambda * t) step schedule on the L2-regularized hinge
    loss, with the bias handled as an augmented constant feature. All K
    binary problems share the same seeded sample order, so the result is
    bit-identical for identical inputs and seed.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"features must be a nonempty N x f matrix, got {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise ShapeError(f"{y.shape[0]} labels for {X.shape[0]} samples")
    classes = sorted(set(y.tolist()))
    K = len(classes)
    if K < 2:
        raise LabelError(f"need at least two classes, got {classes!r}")
    if X.shape[0] < K:
        raise ShapeError(f"{X.shape[0]} samples for {K} classes")
    n, f = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    # K x n sign matrix: +1 for the class's own samples, -1 otherwise
    Y = np.where(y[None, :] == np.asarray(classes, dtype=y.dtype)[:, None], 1.0, -1.0)
    W = np.zeros((K, f + 1))
    rng = np.random.default_rng(seed)
    history = []
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lambda_ * t)
            margins = Y[:, i] * (W @ Xa[i])
            W *= 1.0 - eta * lambda_
            violated = margins < 1.0
            if violated.any():
                W[violated] += (eta * Y[violated, i])[:, None] * Xa[i]
        hinge = np.maximum(0.0, 1.0 - Y.T * (Xa @ W.T)).mean(axis=0).sum()
        history.append(float(hinge + 0.5 * lambda_ * np.sum(W * W)))
    return LinearModel(
        weights=W[:, :f].copy(),
        biases=W[:, f].copy(),
        classes=classes,
        train_params={"lambda": lambda_, "epochs": epochs, "seed": seed},
        objective_history=history,
    )


def predict(model: LinearModel, features: np.ndarray) -> np.ndarray:
    """Argmax of per-class scores w_k . x + b_k; ties go to the lowest
    class index in model.classes."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.weights.shape[1]:
        raise ShapeError(
            f"features are {X.shape[1] if X.ndim == 2 else '?'}-wide but the "
            f"model expects {model.weights.shape[1]}"
        )
    scores = X @ model.weights.T + model.biases
    return np.asarray(model.classes)[np.argmax(scores, axis=1)]


def _fit_fold_alignment(method, train, held_out, align_params, fold_seed):
    """Returns (train_feature_list, test_features, isc_matrices)."""
    params = align_params.replace(seed=fold_seed)
    pre_train = [center_and_scale(s.matrix) for s in train.subjects]
    pre_test = center_and_scale(held_out.matrix)
    if method == "none":
        return pre_train, pre_test, pre_train
    if method == "pca":
        f = params.resolve_features(train.n_timepoints, train.n_voxels)
        train_scores = [pca_reduce(x, f)[1] for x in pre_train]
        test_scores = pca_reduce(pre_test, f)[1]
        return train_scores, test_scores, train_scores
    if method == "gradha":
        model = fit(train, params, record_objective=False)
        mapped = [x @ m.matrix for x, m in zip(pre_train, model.mappings)]
        R_test = align_new_subject(held_out, model.template, params)
        return mapped, pre_test @ R_test.matrix, mapped
    if method == "gpa":
        model = fit_gpa(
            train,
            params.resolve_features(train.n_timepoints, train.n_voxels),
            max_iters=params.max_iters,
        )
        mapped = [x @ m.matrix for x, m in zip(pre_train, model.mappings)]
        R_test = procrustes_to_template(pre_test, model.template)
        return mapped, pre_test @ R_test.matrix, mapped
    raise SpecError(
        f"unknown alignment method {method!r}; expected one of {ALIGNMENT_METHODS}"
    )


def _run_fold(data, fold_idx, method, align_params, svm_params, seed):
    """One held-out fold. Returns (FoldResult, fold_isc, artifacts); the
    artifacts expose training-side state so isolation can be verified."""
    fold_seed = seed + fold_idx
    held_out = data.subjects[fold_idx]
    train = Dataset([s for i, s in enumerate(data.subjects) if i != fold_idx])

    t0 = time.perf_counter()
    train_feats, test_feats, isc_mats = _fit_fold_alignment(
        method, train, held_out, align_params, fold_seed
    )
    align_seconds = time.perf_counter() - t0

    stacked = np.vstack(train_feats)
    stacked_labels = np.concatenate([np.asarray(s.labels) for s in train.subjects])
    t0 = time.perf_counter()
    model = train_svm(
        stacked,
        stacked_labels,
        lambda_=svm_params.lambda_,
        epochs=svm_params.epochs,
        seed=fold_seed,
    )
    train_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    predicted = predict(model, test_feats)
    accuracy = float(np.mean(predicted == np.asarray(held_out.labels)))
    test_seconds = time.perf_counter() - t0

    fold_isc = (
        mean_pairwise_isc(isc_mats) if len(isc_mats) >= 2 else float("nan")
    )
    result = FoldResult(
        held_out_subject_id=held_out.subject_id,
        accuracy=accuracy,
        align_seconds=align_seconds,
        train_seconds=train_seconds,
        test_seconds=test_seconds,
    )
    artifacts = {
        "train_features": train_feats,
        "svm_weights": model.weights,
        "svm_biases": model.biases,
    }
    return result, fold_isc, artifacts


def loso_cv(
    data: Dataset,
    method: str,
    align_params: HyperParams | None = None,
    svm_params: SvmParams | None = None,
    seed: int = 0,
) -> CvReport:
    """Leave-one-subject-out evaluation of an alignment method.

    Every subject is held out once: the alignment is fitted on the other
    S-1 subjects only, the held-out subject is mapped through the
    method's transfer path (frozen-template alignment for gradha, one
    Procrustes solve for gpa, its own projection for pca, identity for
    none), and a linear SVM trained on the stacked aligned training rows
    is scored on the aligned held-out rows. Fold k uses seed + k for both
    the alignment and the classifier.
    """
    if method not in ALIGNMENT_METHODS:
        raise SpecError(
            f"unknown alignment method {method!r}; expected one of {ALIGNMENT_METHODS}"
        )
    if data.n_subjects < 2:
        raise ShapeError("leave-one-subject-out needs at least two subjects")
    align_params = align_params if align_params is not None else HyperParams()
    svm_params = svm_params if svm_params is not None else SvmParams()

    folds = []
    fold_iscs = []
    for k in range(data.n_subjects):
        try:
            result, fold_isc, _ = _run_fold(
                data, k, method, align_params, svm_params, seed
            )
        except Exception as exc:
            raise type(exc)(
                f"fold {k} (held-out {data.subjects[k].subject_id!r}): {exc}"
            ) from exc
        folds.append(result)
        fold_iscs.append(fold_isc)

    accs = np.array([fr.accuracy for fr in folds])
    classes = sorted(set(np.concatenate([np.asarray(s.labels) for s in data.subjects]).tolist()))
    finite_iscs = [v for v in fold_iscs if np.isfinite(v)]
    return CvReport(
        per_fold=folds,
        mean_accuracy=float(accs.mean()),
        std_accuracy=float(accs.std()),
        mean_isc_aligned=float(np.mean(finite_iscs)) if finite_iscs else float("nan"),
        chance=1.0 / len(classes),
        params={
            "method": method,
            "align": {
                "f": align_params.f,
                "tau": align_params.tau,
                "max_iters": align_params.max_iters,
                "mu": align_params.mu,
                "batch_fraction": align_params.batch_fraction,
            },
            "svm": {"lambda": svm_params.lambda_, "epochs": svm_params.epochs},
        },
        seed=seed,
    )
