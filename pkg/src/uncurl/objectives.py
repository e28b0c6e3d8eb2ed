"""Uncertainty-aware training objectives.

One weighted-classification family covers them all: a loss is
-sum_t sum_x w_t(x) * log p(x | context_t) divided by the number of
contributing tokens. The weight variants are a closed enumeration (one-hot
labels, masked labels, teacher distributions, truncated teacher, advantage),
and the masked/distilled combination selects its token mask from the current
per-token NLL each step, detached from gradient flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import CategoricalDistribution, Tensor, take_per_row
from .uncertainty import UncertaintyDecomposition, entropy_of_probs

__all__ = [
    "MleDelta",
    "MaskedMleDelta",
    "Teacher",
    "TruncatedTeacher",
    "Advantage",
    "TokenMask",
    "TokenLossRecord",
    "weighted_loss",
    "select_mask_by_quantile",
    "masked_mle_loss",
    "combined_masked_mle_distill_loss",
    "truncated_kl_weights",
]

MASK_SCOPES = ("per_batch", "per_sequence", "global")


def _as_labels(labels, length=None) -> np.ndarray:
    ids = np.asarray(labels)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("labels must be integer token ids")
    if ids.ndim != 1 or (length is not None and ids.size != length):
        raise ValueError("labels must be a vector aligned with the positions")
    return ids


def _dist_rows(dists, n_positions: int) -> np.ndarray:
    """Stack per-position distributions into a [T, V] row-stochastic array."""
    if isinstance(dists, np.ndarray) and dists.ndim == 2:
        rows = np.asarray(dists, dtype=np.float64)
    else:
        items = list(dists)
        rows = np.stack(
            [d.probs if isinstance(d, CategoricalDistribution) else np.asarray(d, dtype=np.float64) for d in items]
        ) if items else np.zeros((0, 0))
    if rows.shape[0] != n_positions:
        raise ValueError("misaligned reference distributions")
    if rows.size and np.max(np.abs(rows.sum(axis=-1) - 1.0)) > 1e-6:
        raise ValueError("reference rows must be distributions")
    return rows


# ---- weight variants -------------------------------------------------------


@dataclass(frozen=True)
class MleDelta:
    """w_t(x) = 1 at the realized label, 0 elsewhere."""

    labels: np.ndarray


@dataclass(frozen=True)
class MaskedMleDelta:
    """Label delta gated by a 0/1 token mask; unmasked tokens contribute nothing."""

    labels: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class Teacher:
    """w_t(x) = p_teacher(x | context_t): forward distillation."""

    dists: np.ndarray


@dataclass(frozen=True)
class TruncatedTeacher:
    """Teacher weights restricted to an admissible set, not renormalized."""

    dists: np.ndarray
    admissible: np.ndarray


@dataclass(frozen=True)
class Advantage:
    """Externally supplied per-(position, class) advantage weights."""

    values: np.ndarray


WeightFunction = MleDelta | MaskedMleDelta | Teacher | TruncatedTeacher | Advantage


def _weight_matrix(weights: WeightFunction, T: int, V: int) -> tuple[np.ndarray, int]:
    """Resolve a weight variant to a dense [T, V] array and its normalizer."""
    if isinstance(weights, MleDelta):
        ids = _as_labels(weights.labels, T)
        if ids.size and (ids.min() < 0 or ids.max() >= V):
            raise ValueError("label id out of range")
        w = np.zeros((T, V))
        w[np.arange(T), ids] = 1.0
        return w, T
    if isinstance(weights, MaskedMleDelta):
        ids = _as_labels(weights.labels, T)
        m = np.asarray(weights.mask).astype(np.float64)
        if m.shape != (T,) or not np.all(np.isin(m, (0.0, 1.0))):
            raise ValueError("mask must be a 0/1 vector aligned with labels")
        selected = int(m.sum())
        if selected == 0:
            raise ValueError("empty selection")
        w = np.zeros((T, V))
        w[np.arange(T), ids] = m
        return w, selected
    if isinstance(weights, Teacher):
        return _dist_rows(weights.dists, T), T
    if isinstance(weights, TruncatedTeacher):
        rows = _dist_rows(weights.dists, T)
        adm = np.asarray(weights.admissible, dtype=bool)
        if adm.shape != rows.shape:
            raise ValueError("admissible sets misaligned with teacher rows")
        return rows * adm, T
    if isinstance(weights, Advantage):
        vals = np.asarray(weights.values, dtype=np.float64)
        if vals.shape != (T, V):
            raise ValueError("advantage values must be [T, V]")
        return vals, T
    raise TypeError(f"unknown weight function: {type(weights).__name__}")


def weighted_loss(log_probs: Tensor, weights: WeightFunction) -> Tensor:
    """Negated weighted log-likelihood, averaged over contributing tokens."""
    if log_probs.ndim != 2:
        raise ValueError("log_probs must be [T, V]")
    T, V = log_probs.shape
    w, norm = _weight_matrix(weights, T, V)
    return -(log_probs * Tensor(w)).sum() / norm


# ---- quantile token masks ---------------------------------------------------


@dataclass(frozen=True)
class TokenMask:
    """Which tokens a quantile rule selected, plus the metric it ranked."""

    flags: np.ndarray
    selection_metric: np.ndarray
    quantile: float
    scope: str
    eligible: np.ndarray

    @property
    def n_selected(self) -> int:
        return int(self.flags.sum())

    @property
    def n_eligible(self) -> int:
        return int(self.eligible.sum())


def _select_count(q: float, n: int) -> int:
    # ceil(q*n) with a nudge so float noise in q*n cannot bump the count up
    return min(n, max(0, math.ceil(q * n - 1e-12)))


def _top_flags(metric: np.ndarray, eligible: np.ndarray, q: float) -> np.ndarray:
    flags = np.zeros(metric.shape, dtype=bool)
    idx = np.flatnonzero(eligible.reshape(-1))
    count = _select_count(q, idx.size)
    if count:
        vals = metric.reshape(-1)[idx]
        order = np.argsort(-vals, kind="stable")  # ties keep the lower flat index
        flags.reshape(-1)[idx[order[:count]]] = True
    return flags


def select_mask_by_quantile(metric, q: float, scope: str = "per_batch", eligible=None) -> TokenMask:
    """Mark the top ceil(q * n_eligible) tokens by metric value.

    `metric` is [T] for one token stream or [S, T] for a batch of sequences;
    `eligible` (same shape) excludes prompt/pad positions. per_batch and
    global pool every eligible token; per_sequence ranks within each row.
    Ties break toward the lower (sequence, position) index.
    """
    m = np.asarray(metric, dtype=np.float64)
    if m.ndim not in (1, 2):
        raise ValueError("metric must be 1-D or 2-D")
    if not 0.0 <= q <= 1.0:
        raise ValueError("quantile must be in [0, 1]")
    if scope not in MASK_SCOPES:
        raise ValueError(f"scope must be one of {MASK_SCOPES}")
    elig = np.ones(m.shape, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
    if elig.shape != m.shape:
        raise ValueError("eligibility flags misaligned with metric")
    if not elig.any():
        raise ValueError("no eligible tokens")
    if scope == "per_sequence" and m.ndim == 2:
        flags = np.zeros(m.shape, dtype=bool)
        for s in range(m.shape[0]):
            if elig[s].any():
                flags[s] = _top_flags(m[s], elig[s], q)
    else:
        flags = _top_flags(m, elig, q)
    return TokenMask(flags=flags, selection_metric=m, quantile=float(q), scope=scope, eligible=elig)


# ---- token-level losses ------------------------------------------------------


@dataclass
class TokenLossRecord:
    """Per-token diagnostics logged by the curriculum experiments."""

    token_id: int
    position: int
    nll: float
    entropy: float
    masked: bool
    decomposition: UncertaintyDecomposition | None = field(default=None)


def masked_mle_loss(student_log_probs: Tensor, labels, mask: TokenMask) -> Tensor:
    """Mean NLL over the mask-selected tokens only."""
    T = student_log_probs.shape[0]
    flags = mask.flags if isinstance(mask, TokenMask) else np.asarray(mask, dtype=bool)
    if flags.shape != (T,):
        raise ValueError("mask misaligned with positions")
    return weighted_loss(
        student_log_probs,
        MaskedMleDelta(labels=_as_labels(labels, T), mask=flags.astype(np.float64)),
    )


def combined_masked_mle_distill_loss(
    student_log_probs: Tensor,
    labels,
    ref_dists,
    q: float,
    eligible=None,
    scope: str = "per_batch",
) -> tuple[Tensor, TokenMask, list[TokenLossRecord]]:
    """Masked MLE on the top-q highest-NLL tokens, distillation on the rest.

    Selected tokens contribute -log p(label); the remaining eligible tokens
    contribute the full teacher cross-entropy against `ref_dists`. The total
    is the mean over all eligible tokens, and the selection metric is the
    current per-token NLL taken from detached data.
    """
    if student_log_probs.ndim != 2:
        raise ValueError("student_log_probs must be [T, V]")
    T, V = student_log_probs.shape
    ids = _as_labels(labels, T)
    ref = _dist_rows(ref_dists, T)
    if ref.shape[1] != V:
        raise ValueError("misaligned reference distributions")
    elig = np.ones(T, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)

    nll = -student_log_probs.data[np.arange(T), ids]
    mask = select_mask_by_quantile(nll, q, scope=scope, eligible=elig)

    w = np.where(mask.flags[:, None], 0.0, ref)
    w[np.arange(T)[mask.flags], ids[mask.flags]] = 1.0
    w[~elig, :] = 0.0
    loss = -(student_log_probs * Tensor(w)).sum() / int(elig.sum())

    ent = entropy_of_probs(np.exp(student_log_probs.data), axis=-1)
    records = [
        TokenLossRecord(
            token_id=int(ids[t]),
            position=t,
            nll=float(nll[t]),
            entropy=float(ent[t]),
            masked=bool(mask.flags[t]),
        )
        for t in range(T)
        if elig[t]
    ]
    return loss, mask, records


def truncated_kl_weights(teacher_dists, top_k: int) -> TruncatedTeacher:
    """Teacher weights restricted to each site's top_k classes (ties: lower id)."""
    items = teacher_dists if isinstance(teacher_dists, np.ndarray) else list(teacher_dists)
    if isinstance(items, np.ndarray) and items.ndim != 2:
        raise ValueError("teacher_dists must form a [T, V] batch")
    rows = _dist_rows(items, len(items))
    V = rows.shape[1]
    if not 1 <= top_k <= V:
        raise ValueError("top_k out of range")
    order = np.argsort(-rows, axis=-1, kind="stable")
    admissible = np.zeros(rows.shape, dtype=bool)
    np.put_along_axis(admissible, order[:, :top_k], True, axis=-1)
    return TruncatedTeacher(dists=rows, admissible=admissible)
