"""Core time-series containers, z-normalization, and UCR-format file ingestion.

A time series is represented as a read-only 1-D float64 numpy array. Labeled
collections are small frozen dataclasses so they can be shared freely across
threads once constructed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DataValidationError",
    "UcrParseError",
    "LabeledSeries",
    "Dataset",
    "as_series",
    "z_normalize",
    "group_by_class",
    "load_ucr_dataset",
    "save_ucr_dataset",
    "find_ucr_pair",
]

# Population standard deviation below this is treated as a constant series.
ZERO_STD_THRESHOLD = 1e-8

UCR_EXTENSIONS = ("", ".tsv", ".csv", ".txt")


class DataValidationError(ValueError):
    """Input data violates a series or dataset invariant."""


class UcrParseError(ValueError):
    """A UCR-format record file is malformed."""


def as_series(values) -> np.ndarray:
    """Validate a univariate time series and return it as a frozen float64 array.

    Raises DataValidationError if the input is not 1-D, is empty, or contains
    non-finite samples.
    """
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DataValidationError(f"time series must be 1-D, got shape {arr.shape}")
    if arr.size < 1:
        raise DataValidationError("time series must contain at least one sample")
    if not np.isfinite(arr).all():
        raise DataValidationError("time series contains non-finite samples")
    arr.flags.writeable = False
    return arr


def z_normalize(series) -> np.ndarray:
    """Shift and scale a series to mean 0 and population standard deviation 1.

    A (near-)constant series maps to all zeros instead of dividing by a tiny
    standard deviation. Idempotent within floating-point round-off.
    """
    s = as_series(series)
    std = float(s.std())
    if std < ZERO_STD_THRESHOLD:
        out = np.zeros_like(s)
    else:
        out = (s - s.mean()) / std
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LabeledSeries:
    """One time series together with its canonical class label (0..C-1)."""

    series: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "series", as_series(self.series))
        object.__setattr__(self, "label", int(self.label))
        if self.label < 0:
            raise DataValidationError(f"label must be non-negative, got {self.label}")


@dataclass(frozen=True)
class Dataset:
    """A named train/test collection of labeled series.

    Invariants enforced at construction: the train split is non-empty, every
    class in 0..class_count-1 occurs in it, and all series across both splits
    share one length. The test split may be empty.
    """

    name: str
    train: tuple[LabeledSeries, ...]
    test: tuple[LabeledSeries, ...]
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        if not self.name:
            raise DataValidationError("dataset name must be non-empty")
        if not self.train:
            raise DataValidationError(f"dataset {self.name!r}: train split is empty")
        if self.class_count < 1:
            raise DataValidationError(
                f"dataset {self.name!r}: class_count must be >= 1"
            )
        for item in self.train + self.test:
            if not 0 <= item.label < self.class_count:
                raise DataValidationError(
                    f"dataset {self.name!r}: label {item.label} outside "
                    f"0..{self.class_count - 1}"
                )
        train_labels = {item.label for item in self.train}
        missing = set(range(self.class_count)) - train_labels
        if missing:
            raise DataValidationError(
                f"dataset {self.name!r}: classes {sorted(missing)} missing from train"
            )
        lengths = {len(item.series) for item in self.train + self.test}
        if len(lengths) != 1:
            raise DataValidationError(
                f"dataset {self.name!r}: mixed series lengths {sorted(lengths)}"
            )

    @property
    def series_length(self) -> int:
        return len(self.train[0].series)


def group_by_class(split) -> dict[int, list[np.ndarray]]:
    """Group the series of a split by class label, preserving input order."""
    groups: dict[int, list[np.ndarray]] = {}
    for item in split:
        groups.setdefault(item.label, []).append(item.series)
    return groups


def _detect_delimiter(first_line: str) -> str:
    return "\t" if "\t" in first_line else ","


def _parse_ucr_file(path) -> tuple[list[float], list[np.ndarray]]:
    """Parse one UCR record file into raw labels and series.

    Each non-blank line is `label<delim>v1<delim>...<delim>vT`; the delimiter
    (tab or comma) is detected from the first non-blank line and all records
    must share one length.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    labels: list[float] = []
    series: list[np.ndarray] = []
    delim = None
    expected_len = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if delim is None:
            delim = _detect_delimiter(line)
        tokens = line.split(delim)
        if len(tokens) < 2 or any(t == "" for t in tokens):
            raise UcrParseError(
                f"{path}:{lineno}: expected 'label{delim!r}v1...', got {raw!r}"
            )
        try:
            label = float(tokens[0])
            values = [float(t) for t in tokens[1:]]
        except ValueError as exc:
            raise UcrParseError(f"{path}:{lineno}: {exc}") from None
        if expected_len is None:
            expected_len = len(values)
        elif len(values) != expected_len:
            raise UcrParseError(
                f"{path}:{lineno}: record has {len(values)} values, "
                f"expected {expected_len}"
            )
        if not np.isfinite(label):
            raise DataValidationError(f"{path}:{lineno}: non-finite label")
        arr = np.array(values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise DataValidationError(f"{path}:{lineno}: non-finite sample")
        labels.append(label)
        series.append(arr)
    return labels, series


def load_ucr_dataset(train_path, test_path, name: str) -> Dataset:
    """Load a UCR-format train/test file pair into a Dataset.

    Raw labels are canonicalized to 0..C-1 by sorting the distinct train
    labels ascending. Series are stored exactly as read; no re-normalization
    is applied (archive files are expected to be pre-normalized).
    """
    train_labels, train_series = _parse_ucr_file(train_path)
    if not train_series:
        raise DataValidationError(f"{train_path}: train file contains no records")
    test_labels, test_series = _parse_ucr_file(test_path)

    distinct = sorted(set(train_labels))
    mapping = {raw: idx for idx, raw in enumerate(distinct)}
    unknown = sorted(set(test_labels) - set(distinct))
    if unknown:
        raise DataValidationError(
            f"{test_path}: labels {unknown} appear in test but not in train"
        )

    train = tuple(
        LabeledSeries(s, mapping[lab]) for s, lab in zip(train_series, train_labels)
    )
    test = tuple(
        LabeledSeries(s, mapping[lab]) for s, lab in zip(test_series, test_labels)
    )
    return Dataset(name=name, train=train, test=test, class_count=len(distinct))


def save_ucr_dataset(dataset: Dataset, train_path, test_path, delimiter: str = ",") -> None:
    """Write a Dataset back to UCR record files.

    Values are printed with 17 significant digits so a reload reproduces the
    samples bit-for-bit. Labels are written in canonical form.
    """
    if delimiter not in (",", "\t"):
        raise ValueError(f"unsupported delimiter {delimiter!r}")

    def write_split(split, path):
        with open(path, "w", encoding="utf-8") as fh:
            for item in split:
                cells = [str(item.label)] + [format(v, ".17g") for v in item.series]
                fh.write(delimiter.join(cells) + "\n")

    write_split(dataset.train, train_path)
    write_split(dataset.test, test_path)


def find_ucr_pair(data_dir, name: str) -> tuple[str, str]:
    """Locate `<name>_TRAIN` / `<name>_TEST` files under a directory.

    Tries no extension, then .tsv, .csv, and .txt. Also checks a `<name>/`
    subdirectory, the layout the archive ships with.
    """
    roots = [data_dir, os.path.join(data_dir, name)]
    tried = []
    for root in roots:
        for ext in UCR_EXTENSIONS:
            train = os.path.join(root, f"{name}_TRAIN{ext}")
            test = os.path.join(root, f"{name}_TEST{ext}")
            if os.path.isfile(train) and os.path.isfile(test):
                return train, test
            tried.append(train)
    raise FileNotFoundError(
        f"no UCR file pair for dataset {name!r} under {data_dir!r} "
        f"(tried {len(tried)} candidates like {tried[0]!r})"
    )
