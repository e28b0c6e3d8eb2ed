"""Monte-Carlo-dropout ensembles and the total/aleatoric/epistemic split.

Total uncertainty is the entropy of the ensemble-averaged prediction,
aleatoric the average of member entropies, and epistemic their difference
(the disagreement term used for active learning). All entropies are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import CategoricalDistribution, RngStream

__all__ = [
    "CategoricalDistribution",
    "UncertaintyDecomposition",
    "EnsembleConfig",
    "entropy",
    "entropy_of_probs",
    "mc_ensemble",
    "decompose",
    "decompose_probs",
    "pearson",
    "spearman",
]

MEMBER_COUNTER_STRIDE = 1 << 20


@dataclass(frozen=True)
class UncertaintyDecomposition:
    """Per-site uncertainty triple in nats; total == aleatoric + epistemic."""

    total: float
    aleatoric: float
    epistemic: float


@dataclass(frozen=True)
class EnsembleConfig:
    """Stochastic-forward ensemble settings (defaults: 100 samples, rate 0.1)."""

    n_samples: int = 100
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def entropy_of_probs(probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """-sum p log p along `axis`, with 0 log 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=axis)


def entropy(dist: CategoricalDistribution) -> float:
    """Shannon entropy of one distribution, in nats (in [0, log V])."""
    if not isinstance(dist, CategoricalDistribution):
        dist = CategoricalDistribution(np.asarray(dist, dtype=np.float64))
    return float(entropy_of_probs(dist.probs))


def decompose_probs(member_probs: np.ndarray) -> UncertaintyDecomposition:
    """Decompose an ensemble given as an [n_members, V] probability array.

    Identical members short-circuit to epistemic == 0.0 exactly; otherwise the
    float mean of near-identical rows could leave a stray ulp of disagreement.
    """
    p = np.asarray(member_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError("need an [n_members, V] array with n_members >= 1")
    if np.all(p == p[0]):
        h = float(entropy_of_probs(p[0]))
        return UncertaintyDecomposition(total=h, aleatoric=h, epistemic=0.0)
    total = float(entropy_of_probs(p.mean(axis=0)))
    aleatoric = float(entropy_of_probs(p, axis=-1).mean())
    return UncertaintyDecomposition(total=total, aleatoric=aleatoric, epistemic=total - aleatoric)


def decompose(ensemble) -> UncertaintyDecomposition:
    """Decompose a list of CategoricalDistribution ensemble members."""
    members = list(ensemble)
    if not members:
        raise ValueError("ensemble must have at least one member")
    sizes = {m.probs.size if isinstance(m, CategoricalDistribution) else np.asarray(m).size for m in members}
    if len(sizes) != 1:
        raise ValueError("mixed vocabulary sizes in ensemble")
    rows = np.stack([m.probs if isinstance(m, CategoricalDistribution) else np.asarray(m, dtype=np.float64) for m in members])
    return decompose_probs(rows)


def mc_ensemble(model, inputs, config: EnsembleConfig, rng: RngStream):
    """Monte-Carlo-dropout ensemble: n_samples stochastic forwards per site.

    `model` must expose `predict_probs(inputs, rng=..., dropout_rate=...)`
    returning an [n_sites, V] array, plus `n_dropout_sites`. Member k draws
    its masks from counter base k * MEMBER_COUNTER_STRIDE, so any subset of
    members is reproducible independently of evaluation order. Returns a list
    over prediction sites, each a list of n_samples CategoricalDistribution.
    """
    if config.dropout_rate > 0.0 and getattr(model, "n_dropout_sites", 0) == 0:
        raise ValueError("no stochastic sites")
    base = rng.counter
    member_rows = []
    for k in range(config.n_samples):
        member_rng = rng.at(base + k * MEMBER_COUNTER_STRIDE)
        probs = model.predict_probs(inputs, rng=member_rng, dropout_rate=config.dropout_rate)
        consumed = member_rng.counter - (base + k * MEMBER_COUNTER_STRIDE)
        if consumed > MEMBER_COUNTER_STRIDE:
            raise RuntimeError("model consumed more RNG than the member stride")
        member_rows.append(np.atleast_2d(np.asarray(probs, dtype=np.float64)))
    rng.counter = base + config.n_samples * MEMBER_COUNTER_STRIDE
    n_sites = member_rows[0].shape[0]
    return [
        [CategoricalDistribution(member_rows[k][s]) for k in range(config.n_samples)]
        for s in range(n_sites)
    ]


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient, in [-1, 1]."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length vectors with >= 2 entries")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        raise ValueError("degenerate sample")
    return float(np.clip((xc * yc).sum() / denom, -1.0, 1.0))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; ties receive the average of their rank span."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Spearman rank correlation: Pearson on average-ranked values."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length vectors with >= 2 entries")
    return pearson(_average_ranks(x), _average_ranks(y))
