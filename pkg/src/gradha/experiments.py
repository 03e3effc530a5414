"""Parameter sweeps and runtime benchmarks over the evaluation pipeline.

A sweep re-runs the leave-one-subject-out evaluation with one parameter
varied across a grid, keeping the derived per-fold seeds identical so
only the swept parameter changes. The benchmark times alignment fits
alone (no classification) and reports medians over repeats, with a
warm-up run excluded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .baselines import fit_gpa, pca_reduce
from .core import Dataset, center_and_scale
from .dataio import dataset_fingerprint
from .errors import SpecError
from .mvpc import CvReport, SvmParams, loso_cv
from .optimizer import HyperParams, fit
from .synth import SynthSpec, generate_synthetic

SWEEP_AXES = ("features", "batch", "iters")

#: Benchmark fit configurations: the stochastic method runs 100 batched
#: iterations at one-tenth batches; the alternating baseline runs its 50
#: iterations to the end (tol 0 never stops it early).
BENCH_GRADHA_ITERS = 100
BENCH_GRADHA_BATCH = 0.1
BENCH_GPA_ITERS = 50
BENCH_NOISE = 0.1
BENCH_CLASSES = 2


@dataclass(frozen=True)
class SweepPoint:
    value: float
    mean_accuracy: float
    std_accuracy: float
    mean_isc_aligned: float
    seconds: float


@dataclass(frozen=True)
class SweepResult:
    """One accuracy curve: the swept axis, its grid, and per-point summaries."""

    axis: str
    grid: list[float]
    points: list[SweepPoint]
    dataset_fingerprint: str
    params: dict

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "grid": self.grid,
            "dataset_fingerprint": self.dataset_fingerprint,
            "params": self.params,
            "points": [
                {
                    "value": p.value,
                    "mean_accuracy": p.mean_accuracy,
                    "std_accuracy": p.std_accuracy,
                    "mean_isc_aligned": p.mean_isc_aligned,
                    "seconds": p.seconds,
                }
                for p in self.points
            ],
        }


def _validate_grid(axis: str, grid) -> list:
    if axis not in SWEEP_AXES:
        raise SpecError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    values = list(grid)
    if not values:
        raise SpecError("sweep grid must be nonempty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise SpecError(f"sweep grid must be strictly increasing, got {values}")
    if axis in ("features", "batch"):
        if any(not (0.0 < v <= 1.0) for v in values):
            raise SpecError(f"{axis} grid values must lie in (0, 1], got {values}")
        return [float(v) for v in values]
    if any(v != int(v) or v < 0 for v in values):
        raise SpecError(f"iters grid values must be integers >= 0, got {values}")
    return [int(v) for v in values]


def feature_count(fraction: float, T: int, V: int) -> int:
    """Features as a fraction of the time points, clamped to 1..min(T, V)."""
    return max(1, min(min(T, V), round(fraction * T)))


def _point_params(axis: str, value, base: HyperParams, data: Dataset) -> HyperParams:
    if axis == "features":
        return base.replace(
            f=feature_count(value, data.n_timepoints, data.n_voxels)
        )
    if axis == "batch":
        return base.replace(batch_fraction=float(value))
    return base.replace(max_iters=int(value))


def run_sweep(
    data: Dataset,
    axis: str,
    grid,
    method: str = "gradha",
    base_params: HyperParams | None = None,
    svm_params: SvmParams | None = None,
    seed: int = 0,
) -> SweepResult:
    """Evaluate loso_cv across a grid of one parameter.

    axis "features" and "batch" take fractions in (0, 1] (features are
    resolved as a fraction of T); axis "iters" takes iteration counts.
    Every grid point uses the same base seed, so per-fold seeds match
    across points and only the swept parameter differs.
    """
    values = _validate_grid(axis, grid)
    fingerprint = dataset_fingerprint(data)
    base = base_params if base_params is not None else HyperParams()
    points = []
    for value in values:
        params = _point_params(axis, value, base, data)
        t0 = time.perf_counter()
        report = loso_cv(data, method, params, svm_params, seed=seed)
        seconds = time.perf_counter() - t0
        points.append(
            SweepPoint(
                value=value,
                mean_accuracy=report.mean_accuracy,
                std_accuracy=report.std_accuracy,
                mean_isc_aligned=report.mean_isc_aligned,
                seconds=seconds,
            )
        )
    return SweepResult(
        axis=axis,
        grid=values,
        points=points,
        dataset_fingerprint=fingerprint,
        params={
            "method": method,
            "seed": seed,
            "align": {
                "f": base.f,
                "tau": base.tau,
                "max_iters": base.max_iters,
                "mu": base.mu,
                "batch_fraction": base.batch_fraction,
            },
            "svm": {
                "lambda": (svm_params or SvmParams()).lambda_,
                "epochs": (svm_params or SvmParams()).epochs,
            },
        },
    )


def _bench_fit(method: str, data: Dataset, f: int, seed: int):
    if method == "gradha":
        params = HyperParams(
            f=f,
            tau=0.0,
            max_iters=BENCH_GRADHA_ITERS,
            batch_fraction=BENCH_GRADHA_BATCH,
            seed=seed,
        )
        # diagnostics off: timing the optimizer, not the trace bookkeeping
        return lambda: fit(data, params, record_objective=False)
    if method == "gpa":
        return lambda: fit_gpa(data, f, max_iters=BENCH_GPA_ITERS, tol=0.0)
    if method == "pca":
        pre = [center_and_scale(s.matrix) for s in data.subjects]
        return lambda: [pca_reduce(x, f) for x in pre]
    if method == "none":
        return lambda: [center_and_scale(s.matrix) for s in data.subjects]
    raise SpecError(f"unknown bench method {method!r}")


def run_bench(sizes, methods, repeats: int = 5, seed: int = 0) -> list[dict]:
    """Wall-clock medians for alignment fits at the given problem sizes.

    sizes is a list of (S, T, V, f) tuples; each gets one synthetic
    dataset (latent dimension f, two classes, mild noise). Per method the
    fit runs once as a discarded warm-up, then `repeats` timed runs; the
    report row carries the absolute median and the ratio to the
    stochastic method's median at the same size (1.0 by definition when
    present).
    """
    if repeats < 3:
        raise SpecError(f"repeats must be >= 3, got {repeats}")
    methods = list(methods)
    for m in methods:
        if m not in ("gradha", "gpa", "pca", "none"):
            raise SpecError(f"unknown bench method {m!r}")
    rows = []
    for S, T, V, f in sizes:
        spec = SynthSpec(
            subjects=S,
            timepoints=T,
            voxels=V,
            latent_dim=min(f, min(T, V)),
            num_classes=BENCH_CLASSES,
            noise_sigma=BENCH_NOISE,
            seed=seed,
        )
        data = generate_synthetic(spec)
        size_rows = []
        for method in methods:
            run = _bench_fit(method, data, min(f, min(T, V)), seed)
            run()  # warm-up, excluded
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                run()
                times.append(time.perf_counter() - t0)
            times.sort()
            median = times[len(times) // 2] if repeats % 2 else 0.5 * (
                times[repeats // 2 - 1] + times[repeats // 2]
            )
            size_rows.append(
                {
                    "method": method,
                    "subjects": S,
                    "timepoints": T,
                    "voxels": V,
                    "features": f,
                    "median_seconds": median,
                    "run_seconds": times,
                }
            )
        gradha_median = next(
            (r["median_seconds"] for r in size_rows if r["method"] == "gradha"),
            None,
        )
        for r in size_rows:
            r["ratio_to_gradha"] = (
                r["median_seconds"] / gradha_median if gradha_median else None
            )
        rows.extend(size_rows)
    return rows
