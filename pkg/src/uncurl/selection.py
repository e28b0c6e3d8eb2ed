"""Data-subset selection for linear-system training.

Each step picks k of N data rows to include in the gradient. The lookahead
objective scores a candidate subset by the training loss it would leave
after one masked step; Top-K-by-residual is the cheap heuristic that is
provably optimal when the row covariance ZZ^T is the identity, and the
exhaustive oracle enumerates every k-subset to find the true minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .numerics import RngStream

__all__ = [
    "SubsetMask",
    "POLICY_KINDS",
    "EXHAUSTIVE_CAP_DEFAULT",
    "lookahead_objective",
    "topk_residual_mask",
    "exhaustive_optimal_mask",
    "random_mask",
    "full_mask",
    "policy_mask",
]

EXHAUSTIVE_CAP_DEFAULT = 10**6

POLICY_KINDS = ("full", "topk_residual", "exhaustive_oracle", "random")


@dataclass(frozen=True)
class SubsetMask:
    """Boolean row indicator over the N data entries."""

    indicator: np.ndarray

    def __post_init__(self):
        ind = np.asarray(self.indicator, dtype=bool)
        if ind.ndim != 1:
            raise ValueError("indicator must be a boolean vector")
        object.__setattr__(self, "indicator", ind)

    @property
    def n(self) -> int:
        return self.indicator.size

    @property
    def k(self) -> int:
        return int(self.indicator.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.indicator)


def _mask_from_indices(n: int, idx) -> SubsetMask:
    ind = np.zeros(n, dtype=bool)
    ind[list(idx)] = True
    return SubsetMask(ind)


def lookahead_objective(mask, Z, epsilon, lam: float) -> float:
    """Training loss after one masked step: 0.5 * ||(I - lam Z Z^T Diag(m)) eps||^2.

    Computed as 0.5 * ||eps - lam * Z (Z^T (m * eps))||^2, so no N x N matrix
    is formed. Equals the loss reached by linear_gd_step with the same mask.
    """
    Z = np.asarray(Z, dtype=np.float64)
    eps = np.asarray(epsilon, dtype=np.float64)
    m = np.asarray(getattr(mask, "indicator", mask), dtype=np.float64)
    if m.shape != eps.shape or eps.shape != (Z.shape[0],):
        raise ValueError("mask, epsilon, and Z rows must align")
    post = eps - lam * (Z @ (Z.T @ (m * eps)))
    return 0.5 * float(post @ post)


def topk_residual_mask(epsilon, k: int) -> SubsetMask:
    """Select the k rows with largest |epsilon|; ties go to the lower index."""
    eps = np.asarray(epsilon, dtype=np.float64)
    n = eps.size
    if not 1 <= k <= n:
        raise ValueError("k out of range")
    order = np.argsort(-np.abs(eps), kind="stable")
    return _mask_from_indices(n, order[:k])


def exhaustive_optimal_mask(Z, epsilon, lam: float, k: int, cap: int = EXHAUSTIVE_CAP_DEFAULT) -> SubsetMask:
    """The k-subset minimizing the lookahead objective, by full enumeration.

    Combinations are visited in lexicographic order and ties keep the first
    minimizer, so equal-valued optima resolve to the smallest index set.
    """
    Z = np.asarray(Z, dtype=np.float64)
    eps = np.asarray(epsilon, dtype=np.float64)
    n = eps.size
    if not 1 <= k <= n:
        raise ValueError("k out of range")
    n_subsets = comb(n, k)
    if n_subsets > cap:
        raise ValueError(f"C({n},{k}) = {n_subsets} exceeds the exhaustive-search cap of {cap}")
    best_idx = None
    best_val = np.inf
    for idx in combinations(range(n), k):
        val = lookahead_objective(_mask_from_indices(n, idx), Z, eps, lam)
        if val < best_val:
            best_val = val
            best_idx = idx
    return _mask_from_indices(n, best_idx)


def random_mask(n: int, k: int, rng: RngStream) -> SubsetMask:
    """A uniformly random k-subset of range(n)."""
    if not 1 <= k <= n:
        raise ValueError("k out of range")
    return _mask_from_indices(n, rng.permutation(n)[:k])


def full_mask(n: int) -> SubsetMask:
    return SubsetMask(np.ones(n, dtype=bool))


def policy_mask(
    kind: str,
    Z,
    epsilon,
    lam: float,
    k: int,
    rng: RngStream | None = None,
    cap: int = EXHAUSTIVE_CAP_DEFAULT,
) -> SubsetMask:
    """Dispatch one selection policy to its mask."""
    n = np.asarray(epsilon).size
    if kind == "full":
        return full_mask(n)
    if kind == "topk_residual":
        return topk_residual_mask(epsilon, k)
    if kind == "exhaustive_oracle":
        return exhaustive_optimal_mask(Z, epsilon, lam, k, cap=cap)
    if kind == "random":
        if rng is None:
            raise ValueError("random policy needs an RngStream")
        return random_mask(n, k, rng)
    raise ValueError(f"unknown policy kind: {kind!r} (expected one of {POLICY_KINDS})")
