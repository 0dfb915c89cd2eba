"""Dataset loading, scaling, batching, and augmentation.

Loaders parse CSV tables and IDX image/label pairs into float64 arrays
without silently repairing anything: NaN and Inf survive parsing so the
pre-training checks can see them.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DataFormatError,
    InsufficientClassRowsError,
    InvalidParameterError,
    ShapeMismatchError,
)
from .tensor import RngStream, Tensor, as_tensor

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass
class Dataset:
    """Feature matrix plus aligned targets.

    Classification targets are one-hot rows; regression targets are real
    columns.  ``class_counts`` caches the per-class row counts for
    classification data.
    """

    X: Tensor
    Y: Tensor
    problem: str

    def __post_init__(self):
        self.X = as_tensor(self.X)
        self.Y = as_tensor(self.Y)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise ShapeMismatchError(
                f"dataset needs 2-d X and Y, got {self.X.shape} and {self.Y.shape}"
            )
        if self.X.shape[0] != self.Y.shape[0]:
            raise ShapeMismatchError(
                f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}"
            )
        if self.problem not in (CLASSIFICATION, REGRESSION):
            raise InvalidParameterError(f"unknown problem kind {self.problem!r}")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.Y.shape[1]

    def labels(self) -> np.ndarray:
        if self.problem != CLASSIFICATION:
            raise InvalidParameterError("labels are only defined for classification data")
        return self.Y.argmax(axis=1)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels(), minlength=self.n_outputs)


def one_hot(labels, n_classes: int) -> Tensor:
    lab = np.asarray(labels, dtype=np.int64)
    if lab.min() < 0 or lab.max() >= n_classes:
        raise InvalidParameterError(
            f"labels must lie in [0, {n_classes}), got range [{lab.min()}, {lab.max()}]"
        )
    out = np.zeros((lab.size, n_classes), dtype=np.float64)
    out[np.arange(lab.size), lab] = 1.0
    return out


# ---------------------------------------------------------------------------
# loaders


def _parse_csv(path: Path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataFormatError(f"{path}: empty file")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataFormatError(
                        f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
                    )
                rows.append(row)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return header, rows


def _parse_float(text: str, path, lineno: int, col: str) -> float:
    text = text.strip()
    lowered = text.lower()
    if lowered in ("nan", "inf", "+inf", "-inf", "infinity", "-infinity"):
        return float(lowered)
    try:
        return float(text)
    except ValueError as exc:
        raise DataFormatError(
            f"{path}: line {lineno}, column {col!r}: cannot parse {text!r} as a number"
        ) from exc


def load_csv_dataset(path, *, label_column: str | None = None,
                     target_columns: list[str] | None = None) -> Dataset:
    """Load a comma-separated, headed, UTF-8 table.

    Exactly one of ``label_column`` (classification; distinct values become
    one-hot classes in sorted order) or ``target_columns`` (regression)
    must be given.  All remaining columns are features.  NaN and Inf are
    preserved as parsed.
    """
    if (label_column is None) == (target_columns is None):
        raise InvalidParameterError("give exactly one of label_column or target_columns")
    path = Path(path)
    header, rows = _parse_csv(path)
    index = {name: i for i, name in enumerate(header)}
    if label_column is not None:
        if label_column not in index:
            raise DataFormatError(f"{path}: no column named {label_column!r}")
        target_idx = [index[label_column]]
    else:
        missing = [c for c in target_columns if c not in index]
        if missing:
            raise DataFormatError(f"{path}: missing target columns {missing}")
        target_idx = [index[c] for c in target_columns]
    feature_idx = [i for i in range(len(header)) if i not in target_idx]
    if not feature_idx:
        raise DataFormatError(f"{path}: no feature columns left")
    X = np.empty((len(rows), len(feature_idx)), dtype=np.float64)
    for r, row in enumerate(rows):
        for c, i in enumerate(feature_idx):
            X[r, c] = _parse_float(row[i], path, r + 2, header[i])
    if label_column is not None:
        raw = [row[target_idx[0]].strip() for row in rows]
        classes = sorted(set(raw))
        mapping = {v: k for k, v in enumerate(classes)}
        Y = one_hot([mapping[v] for v in raw], len(classes))
        return Dataset(X=X, Y=Y, problem=CLASSIFICATION)
    Y = np.empty((len(rows), len(target_idx)), dtype=np.float64)
    for r, row in enumerate(rows):
        for c, i in enumerate(target_idx):
            Y[r, c] = _parse_float(row[i], path, r + 2, header[i])
    return Dataset(X=X, Y=Y, problem=REGRESSION)


_IDX_IMAGES_MAGIC = 2051
_IDX_LABELS_MAGIC = 2049


def _read_idx(path: Path, expected_magic: int):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 8:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">i", blob[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad IDX magic {magic}, expected {expected_magic}"
        )
    ndim = 1 if expected_magic == _IDX_LABELS_MAGIC else 3
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise DataFormatError(f"{path}: truncated IDX dimensions")
    dims = struct.unpack(f">{ndim}i", blob[4:header_len])
    count = int(np.prod(dims))
    body = blob[header_len:]
    if len(body) != count:
        raise DataFormatError(
            f"{path}: expected {count} bytes of data, found {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx_dataset(images_path, labels_path, *, n_classes: int | None = None) -> Dataset:
    """Load a big-endian IDX image/label file pair as flattened rows.

    Pixel bytes are kept raw (0..255 as float64); scaling is the
    pipeline's job, not the loader's.
    """
    images = _read_idx(Path(images_path), _IDX_IMAGES_MAGIC)
    labels = _read_idx(Path(labels_path), _IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64)
    k = int(n_classes) if n_classes is not None else int(labels.max()) + 1
    Y = one_hot(labels.astype(np.int64), k)
    return Dataset(X=X, Y=Y, problem=CLASSIFICATION)


def load_dataset(fmt: str, **kw) -> Dataset:
    """Dispatch to the CSV or IDX-pair loader."""
    if fmt == "csv":
        return load_csv_dataset(kw.pop("path"), **kw)
    if fmt == "idx":
        return load_idx_dataset(kw.pop("images_path"), kw.pop("labels_path"), **kw)
    raise InvalidParameterError(f"unknown dataset format {fmt!r}, expected csv or idx")


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalerSpec:
    """Fitted feature scaler.

    ``kind`` is ``standardize`` (zero mean, unit variance) or ``minmax``
    (onto [0, 1]).  Columns with zero variance (or zero range) are left
    untouched and surfaced in ``skipped_columns`` so the scaling pre-check
    can report them.
    """

    kind: str
    center: Tensor
    scale: Tensor
    skipped_columns: list[int] = field(default_factory=list)

    def apply(self, X) -> Tensor:
        x = as_tensor(X)
        if x.ndim != 2 or x.shape[1] != self.center.size:
            raise ShapeMismatchError(
                f"scaler fitted for {self.center.size} columns, got {x.shape}"
            )
        return (x - self.center) / self.scale


def fit_scaler(X, kind: str) -> ScalerSpec:
    if kind not in ("standardize", "minmax"):
        raise InvalidParameterError(f"unknown scaler kind {kind!r}")
    x = as_tensor(X)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatchError(f"scaler needs a non-empty 2-d matrix, got {x.shape}")
    if kind == "standardize":
        center = x.mean(axis=0)
        spread = x.std(axis=0)
    else:
        center = x.min(axis=0)
        spread = x.max(axis=0) - x.min(axis=0)
    skipped = [int(i) for i in np.flatnonzero(spread == 0.0)]
    scale = np.where(spread == 0.0, 1.0, spread)
    center = np.where(spread == 0.0, 0.0, center)
    return ScalerSpec(kind=kind, center=center, scale=scale, skipped_columns=skipped)


def scale_features(X, kind: str):
    """Fit and apply a scaler; returns (scaled X, ScalerSpec)."""
    spec = fit_scaler(X, kind)
    return spec.apply(X), spec


# ---------------------------------------------------------------------------
# batching


@dataclass
class BatchStream:
    """Seeded epoch shuffler yielding fixed-size batches.

    ``mode='correct'`` shuffles rows keeping features and targets aligned.
    ``mode='features_only'`` reshuffles the feature rows independently of
    the targets every epoch, severing the feature-label pairing while the
    marginals stay intact.
    """

    dataset: Dataset
    batch_size: int
    stream: RngStream
    mode: str = "correct"
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.batch_size > self.dataset.n_rows:
            raise InvalidParameterError(
                f"batch size must lie in [1, {self.dataset.n_rows}], got {self.batch_size}"
            )
        if self.mode not in ("correct", "features_only"):
            raise InvalidParameterError(f"unknown stream mode {self.mode!r}")

    def epoch(self):
        """Yield (X, Y) batches covering one pass over the data."""
        n = self.dataset.n_rows
        order = self.stream.permutation(n)
        X = self.dataset.X[order]
        Y = self.dataset.Y[order]
        if self.mode == "features_only":
            X = X[self.stream.permutation(n)]
        stop = n - (n % self.batch_size) if self.drop_last else n
        for start in range(0, stop, self.batch_size):
            end = min(start + self.batch_size, n)
            if end - start < 1:
                break
            yield X[start:end], Y[start:end]


def next_batch(stream_iter):
    """Pull one batch from an epoch iterator."""
    return next(stream_iter)


def stratified_single_batch(ds: Dataset, per_class: int, rng: RngStream):
    """A small balanced batch for single-batch fitting.

    Classification draws ``per_class`` rows from every class (raises when a
    class is too small); regression has no classes to balance, so it takes a
    uniform sample sized for a comparable batch (``8 * per_class`` rows).
    """
    if per_class < 1:
        raise InvalidParameterError(f"per_class must be >= 1, got {per_class}")
    if ds.problem == REGRESSION:
        take = min(per_class * 8, ds.n_rows)
        idx = rng.choice(ds.n_rows, size=take, replace=False)
        return ds.X[idx], ds.Y[idx]
    labels = ds.labels()
    chosen = []
    for k in range(ds.n_outputs):
        rows = np.flatnonzero(labels == k)
        if rows.size == 0:
            continue
        if rows.size < per_class:
            raise InsufficientClassRowsError(
                f"class {k} has {rows.size} rows, needs {per_class}"
            )
        pick = rng.choice(rows.size, size=per_class, replace=False)
        chosen.append(rows[pick])
    idx = np.concatenate(chosen)
    return ds.X[idx], ds.Y[idx]


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmenterSpec:
    """Stochastic feature transform applied on top of clean batches.

    Kinds: ``gaussian_noise`` adds N(0, std) to a ``ratio`` fraction of
    entries; ``horizontal_flip`` mirrors each row seen as a (h, w) grid;
    ``random_erase`` zeroes one (eh, ew) patch per row.
    """

    kind: str
    std: float = 0.1
    ratio: float = 1.0
    grid: tuple[int, int] | None = None
    patch: tuple[int, int] = (3, 3)

    def __post_init__(self):
        if self.kind not in ("gaussian_noise", "horizontal_flip", "random_erase"):
            raise InvalidParameterError(f"unknown augmenter kind {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise InvalidParameterError(f"ratio must lie in [0, 1], got {self.ratio}")
        if self.std < 0:
            raise InvalidParameterError(f"std must be >= 0, got {self.std}")


def augment(X, spec: AugmenterSpec, rng: RngStream) -> Tensor:
    """Apply the augmenter to a batch copy; the input is left untouched."""
    x = as_tensor(X).copy()
    if spec.kind == "gaussian_noise":
        if spec.ratio >= 1.0:
            return x + rng.normal(0.0, spec.std, x.shape)
        mask = rng.bernoulli(spec.ratio, x.shape)
        return x + mask * rng.normal(0.0, spec.std, x.shape)
    if spec.grid is None:
        raise InvalidParameterError(f"{spec.kind} needs a (h, w) grid")
    h, w = spec.grid
    if h * w != x.shape[1]:
        raise ShapeMismatchError(
            f"grid {spec.grid} does not tile {x.shape[1]} features"
        )
    imgs = x.reshape(x.shape[0], h, w)
    if spec.kind == "horizontal_flip":
        return imgs[:, :, ::-1].reshape(x.shape[0], -1).copy()
    eh, ew = spec.patch
    if eh > h or ew > w:
        raise InvalidParameterError(f"patch {spec.patch} exceeds grid {spec.grid}")
    for i in range(imgs.shape[0]):
        r = int(rng.integers(0, h - eh + 1))
        c = int(rng.integers(0, w - ew + 1))
        imgs[i, r:r + eh, c:c + ew] = 0.0
    return imgs.reshape(x.shape[0], -1)
