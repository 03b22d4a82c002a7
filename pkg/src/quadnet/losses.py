"""Quadruplet loss with hard-example mining, focal loss, and their weighted sum."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, DomainError
from .numerics import Tensor

PROB_FLOOR = 1e-12
# distances between embeddings are plain (not squared) Euclidean
DISTANCE = "euclidean"


@dataclass
class LossConfig:
    m1: float = 1.0
    m2: float = 0.5
    gamma: float = 2.0
    hard_fraction_override: float | None = None

    def validate(self) -> None:
        if self.m1 < 0:
            raise ConfigError("margin must be non-negative", "loss.m1")
        if self.m2 < 0:
            raise ConfigError("margin must be non-negative", "loss.m2")
        if self.gamma < 0:
            raise ConfigError("focal exponent must be non-negative", "loss.gamma")
        f = self.hard_fraction_override
        if f is not None and not 0 < f <= 1:
            raise ConfigError("must lie in (0, 1]", "loss.hard_fraction_override")
        if self.m1 < self.m2:
            warnings.warn(f"margin m1={self.m1} is below m2={self.m2}; m1 >= m2 is the usual choice", stacklevel=2)


def check_quadruplets(labels, quads: np.ndarray) -> None:
    """Raise ContractError naming the first rule a tuple breaks."""
    labels = np.asarray(labels)
    n = len(labels)
    for row in np.asarray(quads, dtype=np.int64).reshape(-1, 4):
        a, p, n1, n2 = (int(i) for i in row)
        if min(row) < 0 or max(row) >= n:
            raise ContractError(f"quadruplet {tuple(row)} indexes outside a batch of {n}")
        ya, yp, y1, y2 = labels[[a, p, n1, n2]]
        if len({a, p, n1, n2}) != 4:
            raise ContractError(f"quadruplet {tuple(row)}: indices must be distinct")
        if ya == -1:
            raise ContractError(f"quadruplet {tuple(row)}: anchor may not be an outlier")
        if ya != yp:
            raise ContractError(f"quadruplet {tuple(row)}: anchor and positive labels differ")
        if y1 == ya:
            raise ContractError(f"quadruplet {tuple(row)}: first negative shares the anchor label")
        if y2 == ya or y2 == y1:
            raise ContractError(f"quadruplet {tuple(row)}: second negative repeats the anchor or first-negative label")


def hard_count(n_terms: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise DomainError(f"hard fraction must lie in (0, 1], got {fraction}")
    # the small slack keeps float products such as 0.1 * 30 from rounding up
    return max(1, min(n_terms, math.ceil(fraction * n_terms - 1e-9)))


def quadruplet_distances(embeddings: Tensor, quads) -> tuple[Tensor, Tensor, Tensor]:
    """Distances d(a,p), d(a,n1), d(n1,n2) for each tuple."""
    q = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    a, p, n1, n2 = (nx.take(embeddings, q[:, j]) for j in range(4))
    return nx.row_norm(nx.sub(a, p)), nx.row_norm(nx.sub(a, n1)), nx.row_norm(nx.sub(n1, n2))


def quadruplet_loss(
    embeddings: Tensor,
    quads,
    m1: float,
    m2: float,
    hard_fraction: float = 1.0,
    labels=None,
) -> Tensor:
    """Mean of the hardest ``ceil(hard_fraction * |quads|)`` quadruplet terms.

    Pass ``labels`` to validate every tuple against the class rules first.
    """
    q = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    if len(q) == 0:
        raise DomainError("quadruplet set is empty")
    if labels is not None:
        check_quadruplets(labels, q)
    elif q.min() < 0 or q.max() >= embeddings.shape[0]:
        raise ContractError(f"quadruplet indices outside a batch of {embeddings.shape[0]}")
    d_ap, d_an1, d_n1n2 = quadruplet_distances(embeddings, q)
    first = nx.hinge(nx.shift(nx.sub(d_ap, d_an1), m1))
    second = nx.hinge(nx.shift(nx.sub(d_ap, d_n1n2), m2))
    terms = nx.add(first, second)
    k = hard_count(len(q), hard_fraction)
    if k < len(q):
        # stable sort on negated values: hardest first, earlier tuple wins ties
        order = np.argsort(-terms.data, kind="stable")[:k]
        terms = nx.take(terms, np.sort(order))
    return nx.reduce_mean(terms)


def focal_loss(probs: Tensor, targets, gamma: float = 2.0) -> Tensor:
    """Mean of ``(1 - p_t)**gamma * -log(p_t)``; targets are softmax indices."""
    t = np.asarray(targets, dtype=np.int64)
    if probs.data.ndim != 2:
        raise ContractError(f"focal loss expects a B x K probability matrix, got {list(probs.shape)}")
    if t.size and (t.min() < 0 or t.max() >= probs.shape[1]):
        raise IndexError(f"target index outside [0, {probs.shape[1] - 1}]")
    pt = nx.clamp_min(nx.pick(probs, t), PROB_FLOOR)
    nll = nx.scale(nx.log(pt), -1.0)
    if gamma == 0:
        return nx.reduce_mean(nll)
    modulator = nx.power(nx.clamp_min(nx.shift(nx.scale(pt, -1.0), 1.0), 0.0), gamma)
    return nx.reduce_mean(nx.mul(modulator, nll))


def class_weight(num_classes: int) -> float:
    if num_classes < 2:
        raise DomainError(f"class weight needs at least 2 classes, got {num_classes}")
    return 1.0 / math.log(num_classes)


def combined_loss(
    embeddings: Tensor,
    quads,
    probs: Tensor,
    targets,
    config: LossConfig,
    hard_fraction: float,
    num_classes: int,
) -> Tensor:
    if config.hard_fraction_override is not None:
        hard_fraction = config.hard_fraction_override
    quad = quadruplet_loss(embeddings, quads, config.m1, config.m2, hard_fraction)
    focal = focal_loss(probs, targets, config.gamma)
    return nx.add(quad, nx.scale(focal, class_weight(num_classes)))
