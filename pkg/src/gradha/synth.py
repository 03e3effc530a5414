"""Synthetic ground-truth generator: a shared latent signal with block
class structure, mixed into each subject's voxel space by a random
orthonormal matrix plus optional i.i.d. noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, SubjectData
from .errors import SpecError

#: Scale of the class-specific latent mean patterns.
CLASS_SCALE = 1.0
#: Standard deviation of the within-class latent perturbations.
LATENT_JITTER = 0.5


@dataclass(frozen=True)
class SynthSpec:
    """Shape, class structure, noise level, and seed of a generated dataset."""

    subjects: int
    timepoints: int
    voxels: int
    latent_dim: int
    num_classes: int
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if self.subjects < 1:
            raise SpecError(f"subjects must be >= 1, got {self.subjects}")
        if self.timepoints < 1 or self.voxels < 1:
            raise SpecError(
                f"timepoints and voxels must be >= 1, got "
                f"{self.timepoints} x {self.voxels}"
            )
        if not (1 <= self.latent_dim <= min(self.timepoints, self.voxels)):
            raise SpecError(
                f"latent_dim = {self.latent_dim} out of range "
                f"1..min(T={self.timepoints}, V={self.voxels})"
            )
        if self.num_classes < 2:
            raise SpecError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.timepoints < self.num_classes:
            raise SpecError(
                f"T = {self.timepoints} cannot cover {self.num_classes} classes"
            )
        if self.noise_sigma < 0:
            raise SpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.seed < 0:
            raise SpecError(f"seed must be non-negative, got {self.seed}")


def block_labels(timepoints: int, num_classes: int) -> list[str]:
    """K contiguous label blocks over time; the remainder of T/K is spread
    round-robin over the first blocks."""
    base, rem = divmod(timepoints, num_classes)
    out = []
    for c in range(num_classes):
        out.extend([f"class_{c}"] * (base + (1 if c < rem else 0)))
    return out


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Draw a dataset from the latent mixing model.

    A shared T x k latent matrix carries one mean pattern per class plus
    gaussian jitter; subject i observes X_i = L W_i^T + noise_sigma * E_i
    with W_i a random V x k orthonormal mixing. Labels are block classes,
    identical across subjects. Bit-deterministic for a given spec.
    """
    rng = np.random.default_rng(spec.seed)
    S, T, V = spec.subjects, spec.timepoints, spec.voxels
    k, K = spec.latent_dim, spec.num_classes

    class_means = CLASS_SCALE * rng.standard_normal((K, k))
    labels = block_labels(T, K)
    label_idx = np.array([int(name.split("_")[1]) for name in labels])
    latent = class_means[label_idx] + LATENT_JITTER * rng.standard_normal((T, k))

    subjects = []
    for i in range(S):
        W, _ = np.linalg.qr(rng.standard_normal((V, k)))
        X = latent @ W.T
        if spec.noise_sigma > 0:
            X = X + spec.noise_sigma * rng.standard_normal((T, V))
        subjects.append(
            SubjectData(matrix=X, labels=list(labels), subject_id=f"{i:02d}")
        )
    return Dataset(subjects)
