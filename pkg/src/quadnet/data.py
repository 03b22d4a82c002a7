"""Datasets: CSV/binary I/O, seeded splitting, and the synthetic cluster generator."""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, GenerationError, ParseError, SplitError

BINARY_MAGIC = b"QND1"
BINARY_VERSION = 1


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...]
    num_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be N x D, got shape {feats.shape}")
        if not (len(labels) == len(feats) == len(self.ids)):
            raise ValueError("features, labels and ids must have equal length")
        if len(labels) and (labels.min() < -1 or labels.max() >= max(self.num_classes, 0)):
            raise ValueError(f"labels must lie in -1..{self.num_classes - 1}")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @classmethod
    def from_arrays(cls, features, labels, ids=None, num_classes: int | None = None) -> "Dataset":
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = infer_num_classes(labels)
        if ids is None:
            ids = [str(i) for i in range(len(labels))]
        return cls(np.asarray(features, dtype=np.float64), labels, tuple(ids), num_classes)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], tuple(self.ids[i] for i in rows), self.num_classes)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        h.update("\n".join(self.ids).encode("utf-8"))
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and self.ids == other.ids
            and np.array_equal(self.labels, other.labels)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )


def infer_num_classes(labels) -> int:
    labels = np.asarray(labels)
    known = labels[labels >= 0]
    return int(known.max()) + 1 if known.size else 0


# ---------------------------------------------------------------- CSV


def save_csv(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", *[f"f{j}" for j in range(ds.input_dim)]])
        for i in range(ds.n):
            # repr keeps the shortest string that round-trips exactly
            w.writerow([ds.ids[i], int(ds.labels[i]), *[repr(float(v)) for v in ds.features[i]]])


def load_csv(path) -> Dataset:
    ids, labels, rows = [], [], []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", 1)
        dim = len(header) - 2
        expected = ["id", "label", *[f"f{j}" for j in range(dim)]]
        if dim < 1 or [h.strip() for h in header] != expected:
            raise ParseError("header must be id,label,f0,...,f{D-1}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise ParseError(f"expected {dim + 2} fields, found {len(row)}", lineno)
            try:
                label = int(row[1])
            except ValueError:
                raise ParseError(f"label {row[1]!r} is not an integer", lineno) from None
            if label < -1:
                raise ParseError(f"label {label} is below -1", lineno)
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise ParseError("feature is not a decimal number", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite feature value", lineno)
            ids.append(row[0])
            labels.append(label)
            rows.append(values)
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return Dataset.from_arrays(feats, labels, ids)


# ---------------------------------------------------------------- binary
#
# "QND1" | version u32 | N u64 | D u64 | C i64 | labels i64[N] | features f64[N*D]
# all little-endian; ids are implicit (row numbers)


def save_binary(ds: Dataset, path) -> None:
    with Path(path).open("wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<IQQq", BINARY_VERSION, ds.n, ds.input_dim, ds.num_classes))
        fh.write(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())


def load_binary(path) -> Dataset:
    raw = Path(path).read_bytes()
    head = 4 + struct.calcsize("<IQQq")
    if raw[:4] != BINARY_MAGIC or len(raw) < head:
        raise ParseError(f"{path}: not a QND1 dataset")
    version, n, d, c = struct.unpack_from("<IQQq", raw, 4)
    if version != BINARY_VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    if len(raw) != head + 8 * n + 8 * n * d:
        raise ParseError(f"{path}: size does not match header (N={n}, D={d})")
    labels = np.frombuffer(raw, dtype="<i8", count=n, offset=head).astype(np.int64)
    feats = np.frombuffer(raw, dtype="<f8", count=n * d, offset=head + 8 * n).astype(np.float64).reshape(n, d)
    return Dataset(feats, labels, tuple(str(i) for i in range(n)), int(c))


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
    return load_binary(path) if magic == BINARY_MAGIC else load_csv(path)


def save_dataset(ds: Dataset, path) -> None:
    if Path(path).suffix in (".bin", ".qnd"):
        save_binary(ds, path)
    else:
        save_csv(ds, path)


# ---------------------------------------------------------------- splitting


def _piece_sizes(n: int, ratios) -> tuple[int, int, int]:
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split(ds: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0, stratified: bool = True):
    """Disjoint (train, val, test) pieces covering ``ds``."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three positive numbers summing to 1, got {ratios}", "split.ratios")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[], [], []]
    if stratified:
        for label in np.unique(ds.labels):
            members = np.flatnonzero(ds.labels == label)
            if len(members) < 3:
                raise SplitError(f"label {label} has {len(members)} samples; stratified splitting needs 3")
            members = rng.permutation(members)
            sizes = _piece_sizes(len(members), ratios)
            cut = np.cumsum(sizes)[:-1]
            for part, chunk in zip(parts, np.split(members, cut)):
                part.extend(chunk.tolist())
    else:
        order = rng.permutation(ds.n)
        cut = np.cumsum(_piece_sizes(ds.n, ratios))[:-1]
        for part, chunk in zip(parts, np.split(order, cut)):
            part.extend(chunk.tolist())
    return tuple(ds.subset(sorted(p)) for p in parts)


# ---------------------------------------------------------------- synthetic data


@dataclass
class SynthConfig:
    num_classes: int = 6
    input_dim: int = 32
    samples_per_class: int = 300
    outlier_count: int = 600
    cluster_sigma: float = 1.0
    min_center_separation: float = 10.0
    outlier_law: str = "uniform_box"
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError("must be >= 1", "synth.num_classes")
        if self.input_dim < 1:
            raise ConfigError("must be >= 1", "synth.input_dim")
        if self.samples_per_class < 1:
            raise ConfigError("must be >= 1", "synth.samples_per_class")
        if self.outlier_count < 0:
            raise ConfigError("must be >= 0", "synth.outlier_count")
        if not self.cluster_sigma > 0:
            raise ConfigError("must be > 0", "synth.cluster_sigma")
        if not self.min_center_separation > 0:
            raise ConfigError("must be > 0", "synth.min_center_separation")
        if self.outlier_law not in ("uniform_box", "shifted_gaussians"):
            raise ConfigError("must be uniform_box or shifted_gaussians", "synth.outlier_law")


def _pairwise_min(points: np.ndarray) -> float:
    if len(points) < 2:
        return math.inf
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    return float(dist[np.triu_indices(len(points), 1)].min())


def _draw_centers(cfg: SynthConfig, rng: np.random.Generator, retries: int = 20) -> np.ndarray:
    need = cfg.min_center_separation * cfg.cluster_sigma
    for _ in range(retries):
        centers = rng.normal(size=(cfg.num_classes, cfg.input_dim)) * need
        gap = _pairwise_min(centers)
        if gap == math.inf:
            return centers
        if gap <= 0:
            continue
        if gap < need:
            centers *= need / gap
        if _pairwise_min(centers) >= need * (1 - 1e-12):
            return centers
    raise GenerationError(f"could not place {cfg.num_classes} centres {need:g} apart in {cfg.input_dim} dimensions")


def _nearest_center_distance(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.sqrt((diff**2).sum(-1)).min(axis=1)


def _draw_outliers(cfg: SynthConfig, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    radius = 3.0 * cfg.cluster_sigma
    spread = cfg.min_center_separation * cfg.cluster_sigma
    lo = centers.min(axis=0) - spread
    hi = centers.max(axis=0) + spread
    if cfg.outlier_law == "shifted_gaussians":
        n_blobs = max(1, cfg.num_classes)
        blob_centers = rng.uniform(lo, hi, size=(n_blobs, cfg.input_dim))
    kept: list[np.ndarray] = []
    total = 0
    for _ in range(1000):
        if total >= cfg.outlier_count:
            break
        m = 2 * (cfg.outlier_count - total)
        if cfg.outlier_law == "uniform_box":
            cand = rng.uniform(lo, hi, size=(m, cfg.input_dim))
        else:
            which = rng.integers(len(blob_centers), size=m)
            cand = blob_centers[which] + rng.normal(scale=cfg.cluster_sigma, size=(m, cfg.input_dim))
        cand = cand[_nearest_center_distance(cand, centers) > radius]
        kept.append(cand)
        total += len(cand)
    if total < cfg.outlier_count:
        raise GenerationError("could not draw enough outliers outside the 3-sigma balls")
    return np.concatenate(kept)[: cfg.outlier_count]


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Isotropic Gaussian clusters plus outliers kept outside every 3-sigma ball."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    centers = _draw_centers(cfg, rng)
    feats = [c + rng.normal(scale=cfg.cluster_sigma, size=(cfg.samples_per_class, cfg.input_dim)) for c in centers]
    labels = [np.full(cfg.samples_per_class, c, dtype=np.int64) for c in range(cfg.num_classes)]
    if cfg.outlier_count:
        feats.append(_draw_outliers(cfg, centers, rng))
        labels.append(np.full(cfg.outlier_count, -1, dtype=np.int64))
    x = np.concatenate(feats)
    y = np.concatenate(labels)
    ids = [f"s{i:06d}" for i in range(len(y))]
    return Dataset(x, y, tuple(ids), cfg.num_classes)
