"""Weighted batch sampling, quadruplet generation, and the mining schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchCompositionError, ConfigError, DomainError

OUTLIER = -1
MAX_ENUMERATION = 64


@dataclass
class SamplerConfig:
    outlier_share: float = 1.0 / 3.0
    batch_size: int = 64
    quads_per_batch: int = 256
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.outlier_share < 1:
            raise ConfigError("must lie in (0, 1)", "sampler.outlier_share")
        if self.batch_size < 4:
            raise ConfigError("a quadruplet needs at least 4 samples", "sampler.batch_size")
        if self.quads_per_batch < 1:
            raise ConfigError("must be positive", "sampler.quads_per_batch")


class ClassIndex:
    """Sample indices grouped by label, for every label in -1..C-1."""

    def __init__(self, labels, num_classes: int):
        labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = num_classes
        self.members: dict[int, np.ndarray] = {
            c: np.flatnonzero(labels == c) for c in range(-1, num_classes)
        }
        covered = sum(len(v) for v in self.members.values())
        if covered != len(labels):
            raise DomainError(f"labels outside -1..{num_classes - 1}")

    def __getitem__(self, label: int) -> np.ndarray:
        return self.members[label]

    def counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in self.members.items()}


def class_sampling_weights(num_classes: int, outlier_share: float = 1.0 / 3.0) -> dict[int, float]:
    """P(-1) = outlier_share; the rest is split evenly over labels 0..C-1."""
    if num_classes < 1:
        raise DomainError(f"need at least one class, got {num_classes}")
    if not 0 <= outlier_share < 1:
        raise DomainError(f"outlier share must lie in [0, 1), got {outlier_share}")
    rest = (1.0 - outlier_share) / num_classes
    weights = {OUTLIER: outlier_share}
    weights.update({c: rest for c in range(num_classes)})
    return weights


def sample_batch(index: ClassIndex, weights: dict[int, float], batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw labels i.i.d. by weight, then a uniform member of each drawn label."""
    labels = sorted(weights)
    probs = np.array([weights[c] for c in labels], dtype=np.float64)
    for c, w in zip(labels, probs):
        if w > 0 and len(index[c]) == 0:
            raise ConfigError(f"label {c} has sampling weight {w:g} but no samples", "sampler")
    probs = probs / probs.sum()
    picks = rng.choice(len(labels), size=batch_size, p=probs)
    out = np.empty(batch_size, dtype=np.int64)
    for i, j in enumerate(picks):
        members = index[labels[j]]
        out[i] = members[rng.integers(len(members))]
    return out


def is_valid_quadruplet(labels, quad) -> bool:
    a, p, n1, n2 = (int(i) for i in quad)
    if len({a, p, n1, n2}) != 4:
        return False
    ya, yp, y1, y2 = (int(labels[i]) for i in (a, p, n1, n2))
    return ya == yp and ya != OUTLIER and y1 != ya and y2 != ya and y2 != y1


def enumerate_valid_quadruplets(labels) -> np.ndarray:
    """All valid ordered tuples, lexicographic in (a, p, n1, n2)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n > MAX_ENUMERATION:
        raise DomainError(f"enumeration is limited to {MAX_ENUMERATION} samples, got {n}; use sample_quadruplets")
    out = []
    idx = np.arange(n)
    for a in range(n):
        ya = labels[a]
        if ya == OUTLIER:
            continue
        for p in idx[(labels == ya) & (idx != a)]:
            for n1 in idx[labels != ya]:
                y1 = labels[n1]
                for n2 in idx[(labels != ya) & (labels != y1)]:
                    out.append((a, p, n1, n2))
    return np.array(out, dtype=np.int64).reshape(-1, 4)


def has_valid_quadruplet(labels) -> bool:
    labels = np.asarray(labels, dtype=np.int64)
    values, counts = np.unique(labels, return_counts=True)
    anchors = values[(values != OUTLIER) & (counts >= 2)]
    # an anchor label with a pair, plus two further distinct labels
    return len(anchors) > 0 and len(values) >= 3


def sample_quadruplets(labels, m: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``m`` valid tuples, drawing each role from its admissible pool.

    Raises BatchCompositionError when the batch admits no valid tuple; the
    caller should draw a new batch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not has_valid_quadruplet(labels):
        raise BatchCompositionError("batch admits no valid quadruplet")
    idx = np.arange(len(labels))
    anchors = idx[labels != OUTLIER]
    out = []
    attempts = 0
    while len(out) < m and attempts < 100 * m:
        attempts += 1
        a = anchors[rng.integers(len(anchors))]
        ya = labels[a]
        pos = idx[(labels == ya) & (idx != a)]
        if len(pos) == 0:
            continue
        p = pos[rng.integers(len(pos))]
        neg1 = idx[labels != ya]
        n1 = neg1[rng.integers(len(neg1))]
        neg2 = idx[(labels != ya) & (labels != labels[n1])]
        if len(neg2) == 0:
            continue
        n2 = neg2[rng.integers(len(neg2))]
        out.append((a, p, n1, n2))
    return np.array(out, dtype=np.int64).reshape(-1, 4)


def mining_fraction(epoch: int) -> float:
    """Share of hardest quadruplets kept: 1.0 up to epoch 2, linear to 0.1 at epoch 7."""
    if epoch < 1:
        raise DomainError(f"epochs are 1-based, got {epoch}")
    if epoch <= 2:
        return 1.0
    if epoch >= 7:
        return 0.1
    return 1.0 - 0.9 * (epoch - 2) / 5
