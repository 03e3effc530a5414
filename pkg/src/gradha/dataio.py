"""Dataset and model persistence.

Matrix files use the GHA1 format: the magic bytes "GHA1", row and column
counts as unsigned 64-bit little-endian integers, then the row-major
float64 little-endian payload. A dataset directory holds manifest.json,
one subj_<id>.gha per subject, and labels.txt (one class name per line,
shared across subjects). All writes are whole-file atomic
(write-temp-then-rename).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import struct
import tempfile
from pathlib import Path

import numpy as np

from .core import Dataset, Mapping, SubjectData, Template
from .errors import DataFormatError
from .optimizer import AlignmentModel, HyperParams

MAGIC = b"GHA1"
_HEADER = struct.Struct("<4sQQ")

DATASET_FORMAT = "gha-dataset-v1"

_SAFE_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


def _check_id(sid: str, where: str) -> str:
    if not _SAFE_ID.match(sid):
        raise DataFormatError(
            f"{where}: subject id {sid!r} is not a safe file-name component"
        )
    return sid


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _json_default(obj):
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _sanitize(obj):
    """Replace non-finite floats with None so reports stay valid JSON."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> None:
    _atomic_write_text(
        Path(path),
        json.dumps(_sanitize(obj), indent=2, default=_json_default) + "\n",
    )


def save_matrix(path, matrix: np.ndarray) -> None:
    """Write one matrix in GHA1 binary format."""
    M = np.ascontiguousarray(np.asarray(matrix, dtype=np.float64))
    if M.ndim != 2:
        raise DataFormatError(f"only 2-D matrices can be saved, got shape {M.shape}")
    header = _HEADER.pack(MAGIC, M.shape[0], M.shape[1])
    _atomic_write_bytes(Path(path), header + M.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    """Read one GHA1 matrix, validating magic, size, and finiteness."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc})") from exc
    if len(blob) < _HEADER.size:
        raise DataFormatError(
            f"{path}: truncated header (expected {_HEADER.size} bytes, "
            f"got {len(blob)})"
        )
    magic, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + rows * cols * 8
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}"
        )
    M = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    bad = np.argwhere(~np.isfinite(M))
    if bad.size:
        r, c = bad[0]
        raise DataFormatError(f"{path}: non-finite value at row {r}, column {c}")
    return M.copy()


def save_matrix_csv(path, matrix: np.ndarray) -> None:
    """Plain-text interchange: one row per line, full float64 precision."""
    M = np.asarray(matrix, dtype=np.float64)
    lines = [",".join(repr(v) for v in row) for row in M]
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"{path}: cannot parse CSV matrix ({exc})") from exc
    return M


def dataset_fingerprint(data: Dataset) -> str:
    """Stable sha256 over shapes, ids, labels, and matrix bytes."""
    h = hashlib.sha256()
    for s in data.subjects:
        h.update(s.subject_id.encode())
        h.update(struct.pack("<QQ", *s.matrix.shape))
        h.update("\x00".join(s.labels).encode())
        h.update(np.ascontiguousarray(s.matrix).tobytes(order="C"))
    return h.hexdigest()


def save_dataset(data: Dataset, path) -> None:
    """Write a dataset directory: manifest.json, labels.txt, subj_<id>.gha."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    labels = data.subjects[0].labels
    for s in data.subjects:
        if s.labels != labels:
            raise DataFormatError(
                f"subject {s.subject_id!r} has labels differing from the "
                "first subject; the directory format stores one shared "
                "labels.txt (time-synchronized stimuli)"
            )
    manifest = {
        "format": DATASET_FORMAT,
        "subjects": data.n_subjects,
        "timepoints": data.n_timepoints,
        "voxels": data.n_voxels,
        "subject_ids": data.subject_ids,
        "class_names": sorted(set(labels)),
    }
    write_json(root / "manifest.json", manifest)
    _atomic_write_text(root / "labels.txt", "\n".join(labels) + "\n")
    for s in data.subjects:
        _check_id(s.subject_id, str(root))
        save_matrix(root / f"subj_{s.subject_id}.gha", s.matrix)


def load_dataset(path) -> Dataset:
    """Read a dataset directory back, validating it against its manifest."""
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataFormatError(f"{mpath}: missing manifest")
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{mpath}: unreadable manifest ({exc})") from exc
    if manifest.get("format") != DATASET_FORMAT:
        raise DataFormatError(
            f"{mpath}: format {manifest.get('format')!r}, expected "
            f"{DATASET_FORMAT!r}"
        )
    for key in ("subjects", "timepoints", "voxels", "subject_ids", "class_names"):
        if key not in manifest:
            raise DataFormatError(f"{mpath}: missing key {key!r}")
    lpath = root / "labels.txt"
    if not lpath.is_file():
        raise DataFormatError(f"{lpath}: missing labels file")
    labels = lpath.read_text().splitlines()
    T, V = manifest["timepoints"], manifest["voxels"]
    if len(labels) != T:
        raise DataFormatError(
            f"{lpath}: {len(labels)} labels but manifest declares T = {T}"
        )
    unknown = sorted(set(labels) - set(manifest["class_names"]))
    if unknown:
        raise DataFormatError(f"{lpath}: labels {unknown} not in manifest class_names")
    ids = manifest["subject_ids"]
    if len(ids) != manifest["subjects"]:
        raise DataFormatError(
            f"{mpath}: {len(ids)} subject_ids but subjects = {manifest['subjects']}"
        )
    subjects = []
    for sid in ids:
        _check_id(sid, str(mpath))
        spath = root / f"subj_{sid}.gha"
        if not spath.is_file():
            raise DataFormatError(f"{spath}: missing subject matrix")
        M = load_matrix(spath)
        if M.shape != (T, V):
            raise DataFormatError(
                f"{spath}: matrix is {M.shape[0]}x{M.shape[1]} but manifest "
                f"declares {T}x{V}"
            )
        subjects.append(SubjectData(matrix=M, labels=list(labels), subject_id=sid))
    return Dataset(subjects)


def save_alignment(model: AlignmentModel, path, method: str) -> None:
    """Write a fitted model directory: params.json, mapping_<id>.gha, template.gha."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    params = {
        "method": method,
        "f": model.params.f,
        "tau": model.params.tau,
        "max_iters": model.params.max_iters,
        "mu": model.params.mu,
        "batch_fraction": model.params.batch_fraction,
        "seed": model.params.seed,
        "iterations_run": model.iterations_run,
        "converged": model.converged,
        "objective_trace": model.objective_trace,
        "subject_ids": model.subject_ids,
    }
    write_json(root / "params.json", params)
    for sid, mapping in zip(model.subject_ids, model.mappings):
        save_matrix(root / f"mapping_{sid}.gha", mapping.matrix)
    save_matrix(root / "template.gha", model.template.matrix)


def load_alignment(path) -> tuple[AlignmentModel, str]:
    """Read back a model directory; returns (model, method)."""
    root = Path(path)
    ppath = root / "params.json"
    try:
        params = json.loads(ppath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{ppath}: unreadable params ({exc})") from exc
    try:
        ids = [_check_id(sid, str(ppath)) for sid in params["subject_ids"]]
        mappings = [Mapping(load_matrix(root / f"mapping_{sid}.gha")) for sid in ids]
        template = Template(load_matrix(root / "template.gha"))
        hp = HyperParams(
            f=params["f"],
            tau=params["tau"],
            max_iters=params["max_iters"],
            mu=params["mu"],
            batch_fraction=params["batch_fraction"],
            seed=params["seed"],
        )
        model = AlignmentModel(
            mappings=mappings,
            template=template,
            params=hp,
            iterations_run=params["iterations_run"],
            converged=params["converged"],
            objective_trace=list(params["objective_trace"]),
            subject_ids=list(ids),
        )
        return model, params["method"]
    except KeyError as exc:
        raise DataFormatError(f"{ppath}: missing key {exc}") from exc
