"""Data model, column-wise preprocessing, and the inter-subject correlation metric.

All matrices are row-major float64 ndarrays with rows = time points and
columns = voxels/features. Everything here is a pure function over
immutable inputs and is safe to call from any number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArityError, InvalidDataError, ShapeError

#: Columns whose centered l2 norm falls below this are treated as dead
#: voxels and mapped to all-zero columns instead of raising.
DEGENERATE_NORM = 1e-12

#: Orthonormality tolerance enforced on Mapping construction.
ORTHONORMAL_TOL = 1e-8


def _as_matrix(x) -> np.ndarray:
    """Accept raw arrays, Mapping, or Template wherever a matrix is expected."""
    if isinstance(x, (Mapping, Template)):
        return x.matrix
    return np.asarray(x, dtype=np.float64)


def _require_finite(X: np.ndarray, what: str = "matrix") -> None:
    if not np.all(np.isfinite(X)):
        raise InvalidDataError(f"{what} contains NaN or Inf entries")


@dataclass(frozen=True)
class SubjectData:
    """One subject's T x V response matrix plus per-time-point class labels."""

    matrix: np.ndarray
    labels: list[str]
    subject_id: str

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
            raise ShapeError(
                f"subject {self.subject_id!r}: matrix must be 2-D with T >= 1 "
                f"and V >= 1, got shape {M.shape}"
            )
        _require_finite(M, f"subject {self.subject_id!r} matrix")
        if len(self.labels) != M.shape[0]:
            raise ShapeError(
                f"subject {self.subject_id!r}: {len(self.labels)} labels for "
                f"{M.shape[0]} time points"
            )
        object.__setattr__(self, "matrix", M)

    @property
    def n_timepoints(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of subjects sharing T and V (time-synchronized stimuli)."""

    subjects: list[SubjectData]

    def __post_init__(self):
        if len(self.subjects) < 1:
            raise ArityError("dataset needs at least one subject")
        T, V = self.subjects[0].matrix.shape
        for s in self.subjects:
            if s.matrix.shape != (T, V):
                raise ShapeError(
                    f"subject {s.subject_id!r} has shape {s.matrix.shape}, "
                    f"expected {(T, V)} shared by the dataset"
                )

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_timepoints(self) -> int:
        return self.subjects[0].matrix.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.subjects[0].matrix.shape[1]

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]


@dataclass(frozen=True)
class Mapping:
    """A V x f matrix with orthonormal columns mapping voxel space to feature space."""

    matrix: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.matrix, dtype=np.float64)
        if R.ndim != 2 or not (1 <= R.shape[1] <= R.shape[0]):
            raise ShapeError(
                f"mapping must be V x f with 1 <= f <= V, got shape {R.shape}"
            )
        _require_finite(R, "mapping")
        gram_err = np.abs(R.T @ R - np.eye(R.shape[1])).max()
        if gram_err > ORTHONORMAL_TOL:
            raise InvalidDataError(
                f"mapping columns are not orthonormal: max|R^T R - I| = {gram_err:.3e}"
            )
        object.__setattr__(self, "matrix", R)

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class Template:
    """The shared-space reference signal: across-subject mean of mapped responses."""

    matrix: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.matrix, dtype=np.float64)
        if G.ndim != 2:
            raise ShapeError(f"template must be 2-D, got shape {G.shape}")
        _require_finite(G, "template")
        object.__setattr__(self, "matrix", G)


def center_columns(X: np.ndarray) -> np.ndarray:
    """Subtract each column's mean so every column has mean exactly zero."""
    X = np.asarray(X, dtype=np.float64)
    _require_finite(X)
    return X - X.mean(axis=0)


def standardize_columns(X: np.ndarray) -> np.ndarray:
    """Center each column and rescale it to unit l2 norm.

    Columns that are constant (centered norm below DEGENERATE_NORM) come
    out all-zero rather than raising, so masked data with dead voxels
    flows through. With unit-norm columns the isc of two standardized
    matrices lies in [-1, +1].
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ShapeError(f"standardize_columns needs T >= 2 rows, got {X.shape[0]}")
    C = center_columns(X)
    norms = np.linalg.norm(C, axis=0)
    dead = norms < DEGENERATE_NORM
    safe = np.where(dead, 1.0, norms)
    out = C / safe
    out[:, dead] = 0.0
    return out


def center_and_scale(X: np.ndarray) -> np.ndarray:
    """Alignment-stage preprocessing: center columns, then divide by one
    global scalar (the standard deviation over all centered entries).

    Unlike per-column rescaling this preserves the relative geometry of
    the voxels exactly, so structure planted through an orthogonal mixing
    stays recoverable by an orthonormal mapping; the global scalar makes
    gradient magnitudes independent of the input's units.
    """
    C = center_columns(X)
    s = C.std()
    if s < DEGENERATE_NORM:
        return C
    return C / s


def isc(X: np.ndarray, Y: np.ndarray) -> float:
    """Inter-subject correlation: (1/V) * trace(X^T Y) for same-shape matrices."""
    X = _as_matrix(X)
    Y = _as_matrix(Y)
    if X.shape != Y.shape:
        raise ShapeError(f"isc operands must share a shape, got {X.shape} vs {Y.shape}")
    # trace(X^T Y) without forming the V x V product
    return float(np.sum(X * Y) / X.shape[1])


def mean_pairwise_isc(matrices) -> float:
    """Mean isc over all unordered pairs, after standardizing each matrix.

    The standardization makes the value a correlation-like score in
    [-1, +1]; identical nondegenerate matrices score exactly 1.
    """
    mats = [standardize_columns(_as_matrix(m)) for m in matrices]
    if len(mats) < 2:
        raise ArityError("mean_pairwise_isc needs at least two matrices")
    shape = mats[0].shape
    for m in mats:
        if m.shape != shape:
            raise ShapeError("mean_pairwise_isc matrices must share a shape")
    vals = [isc(mats[i], mats[j])
            for i in range(len(mats)) for j in range(i + 1, len(mats))]
    return float(np.mean(vals))


def ha_identity_gap(data: Dataset, mappings) -> float:
    """|LHS - RHS| for the sum-of-pairs / template identity.

    LHS = sum_{i<j} ||X_i R_i - X_j R_j||_F^2 and
    RHS = S * sum_i ||X_i R_i - G||_F^2 with G the across-subject mean of
    the mapped matrices. The two are algebraically equal, so the gap is
    floating-point noise: <= 1e-9 * max(1, LHS) for all valid inputs.
    """
    if data.n_subjects < 2:
        raise ArityError("identity gap needs at least two subjects")
    if len(mappings) != data.n_subjects:
        raise ShapeError(
            f"{len(mappings)} mappings for {data.n_subjects} subjects"
        )
    mapped = [s.matrix @ _as_matrix(R) for s, R in zip(data.subjects, mappings)]
    S = len(mapped)
    lhs = 0.0
    for i in range(S):
        for j in range(i + 1, S):
            lhs += float(np.sum((mapped[i] - mapped[j]) ** 2))
    G = sum(mapped) / S
    rhs = S * sum(float(np.sum((m - G) ** 2)) for m in mapped)
    return abs(lhs - rhs)
