"""Stochastic gradient ascent alignment on the Stiefel manifold.

The optimizer maximizes the summed logcosh of the shared template by
mini-batch gradient steps R <- R + (mu/b) * X_b^T tanh(G_b), followed by
symmetric re-orthogonalization of every mapping. Batches are drawn over
time points and shared across subjects, so the template rows always
aggregate the same stimuli.

fit is a single-writer loop; a finished AlignmentModel is immutable and
safe to share across threads, and align_new_subject calls for different
subjects are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Dataset,
    Mapping,
    SubjectData,
    Template,
    _as_matrix,
    center_and_scale,
)
from .errors import (
    ArityError,
    DegeneracyError,
    DivergenceError,
    InvalidDataError,
    ShapeError,
    SpecError,
)

#: E[logcosh(nu)] for standard-normal nu, pinned by Gauss quadrature of
#: logcosh against the normal density (see tests for the oracle).
GAUSSIAN_LOGCOSH_MEAN = 0.3745672074914373

#: Smallest singular value accepted by reorthogonalize.
RANK_TOL = 1e-10


def logcosh(x: np.ndarray) -> np.ndarray:
    """Overflow-safe log(cosh(x)): |x| + log1p(exp(-2|x|)) - log 2."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


@dataclass(frozen=True)
class HyperParams:
    """Every tunable of the stochastic alignment loop.

    f of None defers the feature count to min(T, V) of the fitted data.
    batch_fraction gives b = ceil(batch_fraction * T) time points per step.
    """

    f: int | None = None
    tau: float = 1e-5
    max_iters: int = 500
    mu: float = 0.05
    batch_fraction: float = 0.1
    seed: int = 0
    nonlinearity: str = "logcosh"

    def __post_init__(self):
        if self.f is not None and self.f < 1:
            raise SpecError(f"f must be >= 1, got {self.f}")
        if self.tau < 0:
            raise SpecError(f"tau must be >= 0, got {self.tau}")
        if self.max_iters < 0:
            raise SpecError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.mu > 0:
            raise SpecError(f"mu must be > 0, got {self.mu}")
        if not (0.0 < self.batch_fraction <= 1.0):
            raise SpecError(
                f"batch_fraction must lie in (0, 1], got {self.batch_fraction}"
            )
        if self.seed < 0:
            raise SpecError(f"seed must be a non-negative integer, got {self.seed}")
        if self.nonlinearity != "logcosh":
            raise SpecError(
                f"only the logcosh/tanh pair is supported, got {self.nonlinearity!r}"
            )

    def resolve_features(self, T: int, V: int) -> int:
        f = self.f if self.f is not None else min(T, V)
        if not (1 <= f <= min(T, V)):
            raise ShapeError(
                f"f = {f} out of range 1..min(T={T}, V={V})"
            )
        return f

    def batch_size(self, T: int) -> int:
        # tiny epsilon guards against fp round-up (0.1 * 200 -> 20.0000...04)
        return max(1, math.ceil(self.batch_fraction * T - 1e-9))

    def replace(self, **kwargs) -> "HyperParams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class AlignmentModel:
    """Fitted per-subject mappings plus the full-length shared template.

    objective_trace holds the full-data objective per iteration (entry 0 is
    the value at initialization); it is empty when a fit was run with
    objective recording disabled.
    """

    mappings: list[Mapping]
    template: Template
    params: HyperParams
    iterations_run: int
    converged: bool
    objective_trace: list[float]
    subject_ids: list[str]


def init_mappings(V: int, f: int, S: int, seed: int) -> list[Mapping]:
    """Draw S random orthonormal V x f mappings, one per subject.

    Subject i fills its matrix with standard normals from the stream
    seeded seed + i, then re-orthogonalizes; the result is deterministic
    for a given seed.
    """
    if not (1 <= f <= V):
        raise ShapeError(f"f = {f} out of range 1..V = {V}")
    if S < 1:
        raise ArityError(f"need at least one mapping, got S = {S}")
    out = []
    for i in range(S):
        rng = np.random.default_rng(seed + i)
        out.append(reorthogonalize(rng.standard_normal((V, f))))
    return out


def compute_template(batch_rows) -> Template:
    """Entrywise mean of the per-subject mapped batches (all b x f)."""
    mats = [_as_matrix(m) for m in batch_rows]
    if not mats:
        raise ArityError("compute_template needs at least one matrix")
    shape = mats[0].shape
    for m in mats:
        if m.shape != shape:
            raise ShapeError(
                f"template inputs must share a shape, got {m.shape} vs {shape}"
            )
    return Template(sum(mats) / len(mats))


def logcosh_objective(data, mappings) -> float:
    """Sum of logcosh over the entries of G = mean_i(X_i R_i).

    Pure algebra over whatever matrices are passed: no preprocessing is
    applied, and raw (even non-orthonormal) arrays are accepted for the
    mappings. Always >= 0 since logcosh(0) = 0 is the minimum.
    """
    if isinstance(data, Dataset):
        mats = [s.matrix for s in data.subjects]
    else:
        mats = [_as_matrix(x) for x in data]
    maps = [_as_matrix(R) for R in mappings]
    if len(mats) != len(maps) or not mats:
        raise ShapeError(f"{len(mats)} matrices vs {len(maps)} mappings")
    shape = (mats[0].shape[0], maps[0].shape[1])
    for x, R in zip(mats, maps):
        if x.shape[1] != R.shape[0] or (x.shape[0], R.shape[1]) != shape:
            raise ShapeError(
                f"inconsistent shapes: matrix {x.shape} with mapping {R.shape}"
            )
    G = sum(x @ R for x, R in zip(mats, maps)) / len(mats)
    return float(np.sum(logcosh(G)))


def gradient_step(X_batch, R, G_batch, mu: float, b: int) -> np.ndarray:
    """One ascent step: R + (mu/b) * X_batch^T tanh(G_batch), entrywise tanh.

    Returns a raw V x f matrix; the orthonormality constraint is restored
    separately by reorthogonalize. The 1/b factor makes the step the
    batch-mean gradient, so one mu serves every batch size.
    """
    X = _as_matrix(X_batch)
    Rm = _as_matrix(R)
    G = _as_matrix(G_batch)
    if b < 1:
        raise ShapeError(f"batch size must be >= 1, got {b}")
    if X.shape[0] != b or G.shape[0] != b:
        raise ShapeError(
            f"batch rows mismatch: X {X.shape}, G {G.shape}, b = {b}"
        )
    if X.shape[1] != Rm.shape[0] or G.shape[1] != Rm.shape[1]:
        raise ShapeError(
            f"inconsistent shapes: X {X.shape}, R {Rm.shape}, G {G.shape}"
        )
    return Rm + (mu / b) * (X.T @ np.tanh(G))


def _gram_inverse_sqrt(gram: np.ndarray) -> tuple[np.ndarray, float, float]:
    """(gram^(-1/2), lam_min, lam_max) via eigendecomposition of the f x f Gram."""
    lam, W = np.linalg.eigh(gram)
    lam_min, lam_max = float(lam[0]), float(lam[-1])
    if lam_max <= 0 or not np.isfinite(lam_max):
        return None, lam_min, lam_max
    M = (W * (1.0 / np.sqrt(np.maximum(lam, np.finfo(float).tiny)))) @ W.T
    return M, lam_min, lam_max


def reorthogonalize(R: np.ndarray, subject_id: str | None = None) -> Mapping:
    """Project R to the nearest orthonormal-column matrix, R (R^T R)^(-1/2).

    Computed through the eigendecomposition of the f x f Gram matrix,
    which matches the thin-SVD polar factor U W^T to floating-point
    accuracy at a fraction of the cost; ill-conditioned inputs fall back
    to the SVD. Inputs with smallest singular value <= 1e-10 are rejected.
    """
    R = _as_matrix(R)
    who = f" for subject {subject_id!r}" if subject_id is not None else ""
    if R.ndim != 2 or R.shape[0] < R.shape[1] or R.shape[1] < 1:
        raise ShapeError(f"cannot orthonormalize shape {R.shape}{who}")
    if not np.all(np.isfinite(R)):
        raise InvalidDataError(f"non-finite matrix{who}")
    M, lam_min, lam_max = _gram_inverse_sqrt(R.T @ R)
    if M is None or lam_min <= lam_max * 1e-12:
        # Gram eigenvalues cannot resolve sigma_min this small; let the SVD decide.
        U, s, Wt = np.linalg.svd(R, full_matrices=False)
        if s[-1] <= RANK_TOL:
            raise DegeneracyError(
                f"rank-deficient matrix{who}: smallest singular value "
                f"{s[-1]:.3e} <= {RANK_TOL:g}"
            )
        return Mapping(U @ Wt)
    if math.sqrt(max(lam_min, 0.0)) <= RANK_TOL:
        raise DegeneracyError(
            f"rank-deficient matrix{who}: smallest singular value "
            f"{math.sqrt(max(lam_min, 0.0)):.3e} <= {RANK_TOL:g}"
        )
    O = R @ M
    if lam_min < lam_max * 1e-4:
        # one polishing pass keeps |O^T O - I| at machine precision
        M2, _, _ = _gram_inverse_sqrt(O.T @ O)
        O = O @ M2
    return Mapping(O)


def fit(
    data: Dataset,
    params: HyperParams,
    record_objective: bool = True,
    inspect=None,
) -> AlignmentModel:
    """Run the full stochastic alignment loop on a dataset.

    Each subject is centered and globally scaled, mappings start from
    seeded random orthonormal matrices, and every iteration (a) draws one
    batch of time points shared across subjects, (b) recomputes the batch
    template, (c) takes a gradient step and re-orthogonalizes each
    mapping, and (d) declares convergence when the largest per-subject
    mapping change, ||dR||_F / sqrt(V f), drops below tau.

    record_objective=False skips the per-iteration full-data objective
    (used when timing the optimizer itself). inspect, if given, is called
    as inspect(iteration, list_of_mapping_arrays) after every iteration.

    Within one iteration the per-subject updates are independent and
    could run concurrently; the template reduction uses a fixed
    summation order so results stay bit-reproducible.
    """
    if data.n_subjects < 2:
        raise ArityError(
            f"alignment needs at least two subjects, got {data.n_subjects}"
        )
    S = data.n_subjects
    T, V = data.n_timepoints, data.n_voxels
    f = params.resolve_features(T, V)
    Xp = [np.ascontiguousarray(center_and_scale(s.matrix)) for s in data.subjects]
    Rs = [m.matrix for m in init_mappings(V, f, S, params.seed)]
    rng = np.random.default_rng(params.seed)
    b = params.batch_size(T)
    c = params.mu / b
    eye = np.eye(f)
    scale = math.sqrt(V * f)

    def full_objective(iteration: int) -> float:
        G = sum(x @ R for x, R in zip(Xp, Rs)) / S
        val = float(np.sum(logcosh(G)))
        if not math.isfinite(val):
            raise DivergenceError(
                f"non-finite objective at iteration {iteration}"
            )
        return val

    trace = []
    if record_objective:
        trace.append(full_objective(0))
    converged = False
    iterations = 0
    for it in range(params.max_iters):
        idx = np.sort(rng.choice(T, size=b, replace=False))
        Xb = [np.ascontiguousarray(x[idx]) for x in Xp]
        Pb = [xb @ R for xb, R in zip(Xb, Rs)]
        Gb = sum(Pb) / S
        if not np.all(np.isfinite(Gb)):
            raise DivergenceError(f"non-finite template at iteration {it + 1}")
        tG = np.tanh(Gb)
        max_delta = 0.0
        new_Rs = []
        for i, (xb, pb, R) in enumerate(zip(Xb, Pb, Rs)):
            grad = xb.T @ tG
            # Gram of R + c*grad assembled from batch-sized products:
            # R^T R = I, R^T grad = Pb^T tanh, grad^T grad via the b x b
            # batch Gram, so the only V-sized work left is the final product.
            A = c * (pb.T @ tG)
            core = (c * c) * (tG.T @ ((xb @ xb.T) @ tG))
            gram = eye + A + A.T + core
            try:
                M, lam_min, lam_max = _gram_inverse_sqrt(gram)
            except np.linalg.LinAlgError:
                raise DivergenceError(
                    f"non-finite update for subject "
                    f"{data.subjects[i].subject_id!r} at iteration {it + 1}"
                ) from None
            if M is None or lam_min <= lam_max * 1e-12:
                # near-degenerate step: decide with the full-accuracy path
                Rn = reorthogonalize(
                    R + c * grad, data.subjects[i].subject_id
                ).matrix
            else:
                Rn = (R + c * grad) @ M
            max_delta = max(
                max_delta, float(np.linalg.norm(Rn - R)) / scale
            )
            new_Rs.append(Rn)
        Rs = new_Rs
        iterations = it + 1
        if record_objective:
            trace.append(full_objective(iterations))
        if inspect is not None:
            inspect(iterations, Rs)
        if max_delta < params.tau:
            converged = True
            break

    template = compute_template([x @ R for x, R in zip(Xp, Rs)])
    return AlignmentModel(
        mappings=[Mapping(R) for R in Rs],
        template=template,
        params=params.replace(f=f),
        iterations_run=iterations,
        converged=converged,
        objective_trace=trace,
        subject_ids=data.subject_ids,
    )


def align_new_subject(
    X_new: SubjectData, template: Template, params: HyperParams
) -> Mapping:
    """Align a held-out subject against a frozen training template.

    Runs the same batched gradient/re-orthogonalization loop as fit, but
    the template is never modified: each step reads the template rows of
    the current batch. The training data is not needed.
    """
    G = template.matrix
    T, V = X_new.matrix.shape
    if G.shape[0] != T:
        raise ShapeError(
            f"template has {G.shape[0]} rows but subject "
            f"{X_new.subject_id!r} has {T} time points"
        )
    f = G.shape[1]
    if params.f is not None and params.f != f:
        raise ShapeError(
            f"params.f = {params.f} conflicts with template width {f}"
        )
    if not (1 <= f <= min(T, V)):
        raise ShapeError(f"template width {f} out of range 1..min(T={T}, V={V})")
    Xp = center_and_scale(X_new.matrix)
    R = init_mappings(V, f, 1, params.seed)[0].matrix
    rng = np.random.default_rng(params.seed)
    b = params.batch_size(T)
    scale = math.sqrt(V * f)
    for it in range(params.max_iters):
        idx = np.sort(rng.choice(T, size=b, replace=False))
        stepped = gradient_step(Xp[idx], R, G[idx], params.mu, b)
        if not np.all(np.isfinite(stepped)):
            raise DivergenceError(f"non-finite update at iteration {it + 1}")
        Rn = reorthogonalize(stepped, X_new.subject_id).matrix
        delta = float(np.linalg.norm(Rn - R)) / scale
        R = Rn
        if delta < params.tau:
            break
    return Mapping(R)


def negentropy_estimate(G) -> float:
    """Diagnostic non-gaussianity proxy: (mean(logcosh(G)) - C)^2 with C
    the gaussian logcosh mean. Near zero for gaussian-looking entries;
    not used inside fit."""
    G = _as_matrix(G)
    if G.size == 0:
        raise ShapeError("negentropy_estimate needs a nonempty matrix")
    return float((np.mean(logcosh(G)) - GAUSSIAN_LOGCOSH_MEAN) ** 2)
