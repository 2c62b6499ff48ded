"""Dataset ingestion, featurization, synthetic generation, and perturbations.

File formats
------------
jsonl: one object per line with either "features": [floats] or
  "text": str, plus "label" and an optional "split" (train|val|test,
  default train). csv: a header row with feature columns f0..f{D-1} (or a
  single "text" column), a "label" column, and an optional "split" column.

Labels are remapped to dense indices 0..C-1 by sorting the distinct label
strings; the mapping is persisted on the dataset (`label_names`) and in
saved files the original names are written back.

Randomized operations (generation, noise injection, subsampling) are pure
functions of their inputs and an explicit seed; they return new datasets
and never touch the val/test splits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
from dataclasses import dataclass, field, replace

import numpy as np

SPLITS = ("train", "val", "test")

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class DataError(ValueError):
    """Malformed dataset files or invalid perturbation requests."""


@dataclass
class PerturbationSpec:
    """Label-noise ratio and/or training-subset ratio, with their seed."""

    noise_ratio: float = 0.0
    train_ratio: float = 1.0
    seed: int = 0
    exclude_self: bool = True  # a "flipped" label never keeps its old value

    def __post_init__(self):
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise DataError(f"noise_ratio must be in [0, 1], got {self.noise_ratio}")
        if not 0.0 < self.train_ratio <= 1.0:
            raise DataError(f"train_ratio must be in (0, 1], got {self.train_ratio}")


@dataclass
class Dataset:
    """Feature matrix + targets + aligned split tags. Treat as immutable."""

    features: np.ndarray            # (N, D) float64
    targets: np.ndarray             # (N,) int64 class indices or float64 scores
    split: np.ndarray               # (N,) strings from SPLITS
    task: str                       # "classification" | "regression"
    num_classes: int = 0
    label_names: list[str] = field(default_factory=list)  # index -> original label
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.targets.shape != (n,) or self.split.shape != (n,):
            raise DataError("features, targets and split must have matching length")
        if not np.all(np.isfinite(self.features)):
            raise DataError("feature rows must be finite")
        if self.task == "classification":
            if self.num_classes < 2:
                raise DataError("classification dataset needs num_classes >= 2")
            if np.any((self.targets < 0) | (self.targets >= self.num_classes)):
                raise DataError("class index out of range")
        unknown = set(self.split.tolist()) - set(SPLITS)
        if unknown:
            raise DataError(f"unknown split tags: {sorted(unknown)}")

    @property
    def num_rows(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        return np.flatnonzero(self.split == split)

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.features[idx], self.targets[idx]

    def split_fingerprint(self, split: str) -> str:
        """Content hash of one split; used to prove perturbations left it alone."""
        idx = self.indices(split)
        h = hashlib.sha256()
        h.update(self.features[idx].tobytes())
        h.update(np.ascontiguousarray(self.targets[idx]).tobytes())
        return h.hexdigest()


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs; everything else is a separator."""
    return _TOKEN_RE.findall(text.lower())


def _hash_bucket(ngram: str, dim: int, seed: int) -> tuple[int, float]:
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8,
                             key=int(seed).to_bytes(8, "little")).digest()
    h = int.from_bytes(digest, "little")
    sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
    return h % dim, sign


def hash_featurize(texts, dim: int, seed: int = 0) -> np.ndarray:
    """Signed hashing of unigram+bigram counts into `dim` buckets, L2-normalized.

    Exact recipe (stable across runs and platforms): tokens are lowercased
    alphanumeric runs; n-grams are each token plus each adjacent pair joined
    by a single space; each n-gram is hashed with blake2b (digest_size=8,
    key=seed as 8 little-endian bytes); the digest read as a little-endian
    unsigned integer h gives bucket h % dim and sign +1 if bit 63 of h is 0
    else -1; signed counts are accumulated and each row is L2-normalized
    (all-zero rows stay zero).
    """
    if dim < 2:
        raise DataError("hash_featurize: dim must be >= 2")
    out = np.zeros((len(texts), dim))
    for i, text in enumerate(texts):
        tokens = tokenize(text)
        ngrams = list(tokens)
        ngrams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
        for ngram in ngrams:
            bucket, sign = _hash_bucket(ngram, dim, seed)
            out[i, bucket] += sign
        norm = np.linalg.norm(out[i])
        if norm > 0:
            out[i] /= norm
    return out


def gen_mixture(num_classes: int, dim: int, per_class: int, separation: float,
                seed: int) -> Dataset:
    """Gaussian blobs: class c has unit covariance around separation * e_c.

    All class means are mutually separation*sqrt(2) apart (requires
    dim >= num_classes). Rows are split 60/20/20 per class, so each split
    is exactly class-balanced up to rounding.
    """
    if num_classes < 2:
        raise DataError("gen_mixture: need at least 2 classes")
    if dim < num_classes:
        raise DataError(f"gen_mixture: dim must be >= num_classes ({num_classes})")
    if separation < 0:
        raise DataError("gen_mixture: separation must be non-negative")
    rng = np.random.default_rng(seed)
    features, targets, split = [], [], []
    n_train = int(round(0.6 * per_class))
    n_val = int(round(0.2 * per_class))
    n_test = per_class - n_train - n_val
    for c in range(num_classes):
        mean = np.zeros(dim)
        mean[c] = separation
        features.append(rng.standard_normal((per_class, dim)) + mean)
        targets.append(np.full(per_class, c, dtype=np.int64))
        split.extend(["train"] * n_train + ["val"] * n_val + ["test"] * n_test)
    return Dataset(
        features=np.concatenate(features),
        targets=np.concatenate(targets),
        split=np.array(split),
        task="classification",
        num_classes=num_classes,
        label_names=[str(c) for c in range(num_classes)],
        provenance={"generator": "gen_mixture", "num_classes": num_classes,
                    "dim": dim, "per_class": per_class,
                    "separation": separation, "seed": seed},
    )


def _finish_load(rows: list[dict], task: str, path: str, hash_dim: int,
                 hash_seed: int) -> Dataset:
    if not rows:
        raise DataError(f"{path}: empty dataset")
    has_text = "text" in rows[0]
    for i, row in enumerate(rows):
        if ("text" in row) != has_text:
            raise DataError(f"{path}: row {i} mixes text and feature schemas")
        if "label" not in row:
            raise DataError(f"{path}: row {i} is missing 'label'")
    if has_text:
        features = hash_featurize([r["text"] for r in rows], hash_dim, hash_seed)
    else:
        dim = len(rows[0]["features"])
        features = np.zeros((len(rows), dim))
        for i, row in enumerate(rows):
            vec = row["features"]
            if len(vec) != dim:
                raise DataError(f"{path}: row {i} has {len(vec)} features, expected {dim}")
            try:
                features[i] = [float(v) for v in vec]
            except (TypeError, ValueError) as err:
                raise DataError(f"{path}: row {i} has a non-numeric feature") from err
    split = np.array([row.get("split") or "train" for row in rows])
    bad = set(split.tolist()) - set(SPLITS)
    if bad:
        raise DataError(f"{path}: unknown split tags {sorted(bad)}")

    provenance: dict = {"source": path}
    if has_text:
        provenance["hash_dim"] = hash_dim
        provenance["hash_seed"] = hash_seed
    raw_labels = [str(row["label"]) for row in rows]
    if task == "regression":
        try:
            targets = np.array([float(v) for v in raw_labels])
        except ValueError as err:
            raise DataError(f"{path}: regression labels must be numeric") from err
        return Dataset(features=features, targets=targets, split=split,
                       task="regression", provenance=provenance)

    label_names = sorted(set(raw_labels))
    index = {name: i for i, name in enumerate(label_names)}
    targets = np.array([index[v] for v in raw_labels], dtype=np.int64)
    train_labels = {raw_labels[i] for i in np.flatnonzero(split == "train")}
    missing = sorted(set(raw_labels) - train_labels)
    if missing:
        # tolerated: the out-of-domain protocol evaluates against a mapping
        provenance["labels_not_in_train"] = missing
    return Dataset(features=features, targets=targets, split=split,
                   task="classification", num_classes=len(label_names),
                   label_names=label_names, provenance=provenance)


def load(path: str, fmt: str | None = None, task: str = "classification",
         hash_dim: int = 256, hash_seed: int = 0) -> Dataset:
    """Read a jsonl or csv dataset file (format inferred from the suffix)."""
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    if fmt is None:
        fmt = "csv" if path.endswith(".csv") else "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise DataError(f"unknown format {fmt!r}")
    if task not in ("classification", "regression"):
        raise DataError(f"unknown task {task!r}")

    rows: list[dict] = []
    if fmt == "jsonl":
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as err:
                    raise DataError(f"{path}:{lineno}: invalid json") from err
                if "features" not in obj and "text" not in obj:
                    raise DataError(f"{path}:{lineno}: need 'features' or 'text'")
                rows.append(obj)
    else:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError(f"{path}: empty dataset")
            feature_cols = sorted(
                (c for c in reader.fieldnames if re.fullmatch(r"f\d+", c)),
                key=lambda c: int(c[1:]))
            has_text = "text" in reader.fieldnames
            if not feature_cols and not has_text:
                raise DataError(f"{path}: need f0..fK feature columns or a 'text' column")
            if "label" not in reader.fieldnames:
                raise DataError(f"{path}: missing 'label' column")
            for record in reader:
                row: dict = {"label": record["label"]}
                if has_text:
                    row["text"] = record["text"]
                else:
                    row["features"] = [record[c] for c in feature_cols]
                if record.get("split"):
                    row["split"] = record["split"]
                rows.append(row)
    return _finish_load(rows, task, path, hash_dim, hash_seed)


def save(ds: Dataset, path: str) -> None:
    """Write jsonl that `load` reads back to identical values."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(ds.num_rows):
            if ds.task == "classification":
                label = ds.label_names[int(ds.targets[i])]
            else:
                label = float(ds.targets[i])
            fh.write(json.dumps({
                "features": ds.features[i].tolist(),
                "label": label,
                "split": str(ds.split[i]),
            }) + "\n")


def inject_label_noise(ds: Dataset, spec: PerturbationSpec) -> Dataset:
    """Flip an exact fraction of train labels, uniformly at random.

    Picks round(noise_ratio * n_train) train rows without replacement; each
    picked label is redrawn uniformly over the other C-1 classes (or over
    all C classes when spec.exclude_self is False). Val/test rows are
    untouched and the flipped row indices are recorded in provenance.
    """
    if ds.task != "classification":
        raise DataError("label noise is only defined for classification datasets")
    train_idx = ds.indices("train")
    n_flip = int(round(spec.noise_ratio * train_idx.size))
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(train_idx, size=n_flip, replace=False) if n_flip else np.array([], dtype=np.int64)
    targets = ds.targets.copy()
    for i in chosen:
        if spec.exclude_self:
            draw = int(rng.integers(0, ds.num_classes - 1))
            if draw >= targets[i]:
                draw += 1
        else:
            draw = int(rng.integers(0, ds.num_classes))
        targets[i] = draw
    provenance = dict(ds.provenance)
    provenance["label_noise"] = {
        "ratio": spec.noise_ratio,
        "seed": spec.seed,
        "exclude_self": spec.exclude_self,
        "flipped_rows": sorted(int(i) for i in chosen),
    }
    return replace(ds, targets=targets, provenance=provenance)


def subsample_train(ds: Dataset, train_ratio: float, seed: int) -> Dataset:
    """Keep a class-stratified fraction of the train split; val/test untouched.

    Per class, round(ratio * n_c) rows are kept (error if that rounds to
    zero for any class). Unselected train rows are dropped from the dataset.
    """
    if not 0.0 < train_ratio <= 1.0:
        raise DataError(f"train_ratio must be in (0, 1], got {train_ratio}")
    if train_ratio == 1.0:
        return ds
    rng = np.random.default_rng(seed)
    train_idx = ds.indices("train")
    if ds.task == "classification":
        strata = [train_idx[ds.targets[train_idx] == c] for c in range(ds.num_classes)]
    else:
        strata = [train_idx]
    keep: list[np.ndarray] = []
    for rows in strata:
        n_keep = int(round(train_ratio * rows.size))
        if n_keep < 1:
            raise DataError(
                f"train_ratio {train_ratio} leaves no samples for a class with {rows.size} rows")
        keep.append(rng.choice(rows, size=n_keep, replace=False))
    keep_set = np.concatenate(keep)
    mask = np.ones(ds.num_rows, dtype=bool)
    mask[train_idx] = False
    mask[keep_set] = True
    provenance = dict(ds.provenance)
    provenance["subsample"] = {"train_ratio": train_ratio, "seed": seed,
                               "kept_train_rows": int(keep_set.size)}
    return replace(ds, features=ds.features[mask], targets=ds.targets[mask],
                   split=ds.split[mask], provenance=provenance)
