"""Labeled classification datasets: synthetic blobs, CSV I/O and label-noise injection."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError

LABEL_COLUMNS = ("given_label", "label")
CLEAN_COLUMN = "clean_label"
CORRUPTED_COLUMN = "corrupted"


@dataclass
class LabeledDataset:
    """A classification dataset with optional ground-truth corruption bookkeeping.

    ``given_labels`` are the (possibly corrupted) training labels.  When the
    clean labels are known, ``corruption_mask[i]`` is True exactly where the
    given label differs from the clean one; the mask is evaluation-only.
    """

    features: np.ndarray            # (M, d) float
    given_labels: np.ndarray        # (M,) int in [0, C)
    num_classes: int
    clean_labels: np.ndarray | None = None
    corruption_mask: np.ndarray | None = None
    label_names: list[str] | None = None   # dense-index -> original name

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.given_labels = np.asarray(self.given_labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.features.shape[0] != self.given_labels.shape[0]:
            raise ValueError("features row count must equal label count")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.given_labels.size and (
            self.given_labels.min() < 0 or self.given_labels.max() >= self.num_classes
        ):
            raise ValueError("labels must lie in [0, num_classes)")
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
            if self.clean_labels.shape != self.given_labels.shape:
                raise ValueError("clean_labels must match given_labels in length")
            mask = self.given_labels != self.clean_labels
            if self.corruption_mask is None:
                self.corruption_mask = mask
            else:
                self.corruption_mask = np.asarray(self.corruption_mask, dtype=bool)
                if not np.array_equal(self.corruption_mask, mask):
                    raise ValueError("corruption_mask inconsistent with labels")

    @property
    def num_examples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.num_examples)


@dataclass
class NoiseSpec:
    """How to corrupt labels: symmetric resampling or a fixed class permutation."""

    kind: str                       # "symmetric" | "asymmetric"
    rate: float
    seed: int
    permutation: np.ndarray | None = None   # required meaning for "asymmetric"

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("noise rate must lie in [0, 1]")
        if self.permutation is not None:
            self.permutation = np.asarray(self.permutation, dtype=np.int64)


def cyclic_permutation(num_classes: int) -> np.ndarray:
    """The default asymmetric mapping l -> (l + 1) mod C (fixed-point free)."""
    return (np.arange(num_classes) + 1) % num_classes


def make_blobs(num_classes: int, per_class: int, dim: int, separation: float,
               seed: int) -> LabeledDataset:
    """Isotropic unit-variance Gaussian clusters with pairwise mean distance >= separation.

    Class means sit on a circle in the first two coordinates (evenly spaced on
    a line when dim == 1); remaining coordinates of the means are zero.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if per_class < 1 or dim < 1:
        raise ValueError("per_class and dim must be >= 1")
    if separation <= 0:
        raise ValueError("separation must be positive")

    means = np.zeros((num_classes, dim))
    if dim == 1:
        means[:, 0] = separation * np.arange(num_classes)
    else:
        radius = separation / (2.0 * math.sin(math.pi / num_classes))
        angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + rng.standard_normal((labels.size, dim))
    return LabeledDataset(
        features=features,
        given_labels=labels,
        num_classes=num_classes,
        clean_labels=labels.copy(),
    )


def inject_noise(ds: LabeledDataset, spec: NoiseSpec) -> LabeledDataset:
    """Corrupt exactly round(rate * M) labels, chosen uniformly without replacement.

    Symmetric noise replaces a corrupted label uniformly over the other C-1
    classes; asymmetric noise applies a fixed-point-free class permutation.
    Deterministic given (ds, spec).
    """
    if ds.num_classes < 2:
        raise ValueError("need at least two classes to inject noise")
    if ds.clean_labels is not None and not np.array_equal(ds.clean_labels, ds.given_labels):
        raise ValueError("dataset already carries corrupted labels")

    clean = ds.given_labels.copy()
    corrupted = clean.copy()
    n_corrupt = int(math.floor(spec.rate * ds.num_examples + 0.5))
    rng = np.random.default_rng(spec.seed)
    idx = np.sort(rng.choice(ds.num_examples, size=n_corrupt, replace=False))

    if spec.kind == "symmetric":
        # uniform over [0, C-1) then shifted past the clean label
        draw = rng.integers(0, ds.num_classes - 1, size=n_corrupt)
        corrupted[idx] = draw + (draw >= clean[idx])
    else:
        perm = spec.permutation
        if perm is None:
            perm = cyclic_permutation(ds.num_classes)
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != (ds.num_classes,) or not np.array_equal(
            np.sort(perm), np.arange(ds.num_classes)
        ):
            raise ValueError("permutation must be a bijection on [0, C)")
        if np.any(perm == np.arange(ds.num_classes)):
            raise ValueError("permutation must have no fixed points")
        corrupted[idx] = perm[clean[idx]]

    return LabeledDataset(
        features=ds.features.copy(),
        given_labels=corrupted,
        num_classes=ds.num_classes,
        clean_labels=clean,
        label_names=list(ds.label_names) if ds.label_names else None,
    )


def _parse_label(token: str, line_no: int) -> str:
    token = token.strip()
    if not token:
        raise ParseError(f"line {line_no}: empty label")
    try:
        value = float(token)
    except ValueError:
        return token            # symbolic label, mapped later
    if not value.is_integer():
        raise ParseError(f"line {line_no}: non-integer label {token!r}")
    return token


def load_csv(path) -> LabeledDataset:
    """Load a dataset from CSV.

    The header must name one label column ('label' or 'given_label'); an
    optional 'clean_label' column supplies ground truth, and a 'corrupted'
    column (written by save_csv) is ignored on load.  All other columns are
    features.  Labels are remapped to a dense [0, C) index by sorted name;
    the mapping is kept on the dataset.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("no examples") from None
        header = [h.strip() for h in header]

        label_col = None
        for name in LABEL_COLUMNS:
            if name in header:
                label_col = header.index(name)
                break
        if label_col is None:
            raise ParseError("header must declare a 'label' or 'given_label' column")
        clean_col = header.index(CLEAN_COLUMN) if CLEAN_COLUMN in header else None
        skip = {label_col}
        if clean_col is not None:
            skip.add(clean_col)
        if CORRUPTED_COLUMN in header:
            skip.add(header.index(CORRUPTED_COLUMN))
        feat_cols = [i for i in range(len(header)) if i not in skip]

        rows, given_raw, clean_raw = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(row[i]) for i in feat_cols])
            except ValueError as exc:
                raise ParseError(f"line {line_no}: bad feature value ({exc})") from None
            given_raw.append(_parse_label(row[label_col], line_no))
            if clean_col is not None:
                clean_raw.append(_parse_label(row[clean_col], line_no))

    if not rows:
        raise ParseError("no examples")

    names = sorted(set(given_raw) | set(clean_raw))
    index = {name: i for i, name in enumerate(names)}
    given = np.array([index[v] for v in given_raw], dtype=np.int64)
    clean = (
        np.array([index[v] for v in clean_raw], dtype=np.int64) if clean_raw else None
    )
    return LabeledDataset(
        features=np.array(rows, dtype=np.float64),
        given_labels=given,
        num_classes=len(names),
        clean_labels=clean,
        label_names=names,
    )


def save_csv(ds: LabeledDataset, path) -> None:
    """Write a dataset as CSV: features..., given_label, clean_label, corrupted."""
    names = ds.label_names or [str(c) for c in range(ds.num_classes)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = [f"f{j}" for j in range(ds.num_features)] + [LABEL_COLUMNS[0]]
        has_clean = ds.clean_labels is not None
        if has_clean:
            head += [CLEAN_COLUMN, CORRUPTED_COLUMN]
        writer.writerow(head)
        for i in range(ds.num_examples):
            row = [repr(float(v)) for v in ds.features[i]] + [names[ds.given_labels[i]]]
            if has_clean:
                row += [names[ds.clean_labels[i]], int(ds.corruption_mask[i])]
            writer.writerow(row)
