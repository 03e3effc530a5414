"""Classical comparators: Procrustes/GPA alignment and per-subject PCA.

Pure functions throughout; the per-subject Procrustes solves inside one
GPA iteration are independent and the template reduction uses a fixed
summation order.
"""

from __future__ import annotations

import numpy as np

from .core import Dataset, Mapping, Template, _as_matrix, center_and_scale
from .errors import ArityError, DegeneracyError, ShapeError
from .optimizer import RANK_TOL, AlignmentModel, HyperParams


def procrustes_to_template(X, G) -> Mapping:
    """Closed-form orthonormal mapping of X onto template G: U W^T from the
    thin SVD of X^T G.

    This maximizes trace(R^T X^T G), the alignment between X R and G,
    over all orthonormal-column R. A rank-deficient X^T G leaves the
    maximizer non-unique and is rejected.
    """
    X = _as_matrix(X)
    G = _as_matrix(G)
    if X.shape[0] != G.shape[0]:
        raise ShapeError(
            f"X has {X.shape[0]} rows but template has {G.shape[0]}"
        )
    if not (1 <= G.shape[1] <= X.shape[1]):
        raise ShapeError(
            f"template width {G.shape[1]} out of range 1..V = {X.shape[1]}"
        )
    M = X.T @ G
    U, s, Wt = np.linalg.svd(M, full_matrices=False)
    if s[-1] <= RANK_TOL:
        raise DegeneracyError(
            f"X^T G is rank-deficient (smallest singular value {s[-1]:.3e}); "
            "the optimal mapping is not unique"
        )
    return Mapping(U @ Wt)


def _gpa_objective(Xp, mapped, G, sq_norms) -> float:
    # sum_i ||X_i - G R_i^T||^2 expanded with R_i^T R_i = I; the cross
    # term reuses the already-mapped matrices, so recording is free.
    S = len(Xp)
    cross = sum(float(np.sum(m * G)) for m in mapped)
    return sum(sq_norms) - 2.0 * cross + S * float(np.sum(G * G))


def gpa_iterations(data: Dataset, f: int, max_iters: int):
    """Yield (iteration, mappings, template, objective) for each accepted
    GPA iteration. Driven by fit_gpa; exposed for iteration-level checks."""
    if data.n_subjects < 2:
        raise ArityError(
            f"alignment needs at least two subjects, got {data.n_subjects}"
        )
    T, V = data.n_timepoints, data.n_voxels
    if not (1 <= f <= min(T, V)):
        raise ShapeError(f"f = {f} out of range 1..min(T={T}, V={V})")
    Xp = [center_and_scale(s.matrix) for s in data.subjects]
    # start from the first subject's leading f-dimensional projection
    U, s, Wt = np.linalg.svd(Xp[0], full_matrices=False)
    G = Xp[0] @ Wt[:f].T
    sq_norms = [float(np.sum(x * x)) for x in Xp]
    for it in range(max_iters):
        Rs = [procrustes_to_template(x, G) for x in Xp]
        mapped = [x @ R.matrix for x, R in zip(Xp, Rs)]
        G = sum(mapped) / len(mapped)
        yield it + 1, Rs, G, _gpa_objective(Xp, mapped, G, sq_norms)


def fit_gpa(
    data: Dataset, f: int, max_iters: int = 50, tol: float = 1e-9
) -> AlignmentModel:
    """Alternating Procrustes/template minimization.

    Each iteration solves the per-subject Procrustes problem against the
    current template, then recomputes the template as the mapped mean.
    The recorded objective is the reconstruction error
    sum_i ||X_i - G R_i^T||_F^2, which both substeps minimize exactly, so
    the trace is monotone non-increasing. Iteration stops when the
    decrease falls below tol; an iterate that fails to improve is
    discarded, so the returned model is the best one seen.
    """
    best = None
    trace: list[float] = []
    converged = False
    iterations = 0
    for it, Rs, G, obj in gpa_iterations(data, f, max_iters):
        if trace and trace[-1] - obj < tol:
            converged = True
            break
        trace.append(obj)
        best = (Rs, G)
        iterations = it
    if best is None:
        raise ArityError("fit_gpa needs max_iters >= 1")
    Rs, G = best
    params = HyperParams(f=f, tau=tol, max_iters=max_iters, seed=0)
    return AlignmentModel(
        mappings=Rs,
        template=Template(G),
        params=params,
        iterations_run=iterations,
        converged=converged,
        objective_trace=trace,
        subject_ids=data.subject_ids,
    )


def pca_reduce(X, f: int) -> tuple[Mapping, np.ndarray]:
    """Top-f principal directions of a centered matrix and its scores.

    Returns (projection, scores) with projection the top-f right singular
    vectors (orthonormal columns, sign-fixed so each column's
    largest-magnitude entry is positive) and scores = X @ projection.
    """
    X = _as_matrix(X)
    if X.ndim != 2 or not (1 <= f <= min(X.shape)):
        raise ShapeError(
            f"f = {f} out of range 1..min{X.shape} for PCA"
        )
    U, s, Wt = np.linalg.svd(X, full_matrices=False)
    P = Wt[:f].T
    signs = np.sign(P[np.argmax(np.abs(P), axis=0), np.arange(f)])
    signs[signs == 0] = 1.0
    P = P * signs
    return Mapping(P), X @ P
