"""Bag-level regularization for two-model uplift learners.

A mini-batch is packed into equal-sized bags, normally by sorting rows
on their current uplift predictions and taking adjacent runs, so each
bag holds instances with similar predicted effects. Per bag, the
observed responses give a bag-wise ATE label

    y_bag = sum_{i in T} y_i / u_t - sum_{j in C} y_j / (1 - u_t)

and the model's factual-arm probabilities give the matching prediction

    h_bag = sum_{i in T} p_t_i / u_t - sum_{j in C} p_c_j / (1 - u_t)

with u_t the treated fraction of the whole mini-batch. The squared
residuals, summed over bags holding both arms, form a regularizer that
is added to the base loss with weight alpha. The bag assignment is
discrete and carries no gradient; bags are re-formed from fresh
predictions every step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import models, nncore
from .errors import ConfigError
from .models import ModelOutputs, UpliftModel


class BagMode(str, Enum):
    CLUSTERED = "clustered"
    RANDOM = "random"


@dataclass
class BagPartition:
    """Disjoint equal-sized bags of batch positions; the remainder rows
    (batch size mod bag size) belong to no bag."""

    bags: list[np.ndarray]
    bag_size: int
    mode: BagMode


@dataclass
class BagStats:
    """Label, prediction and arm counts for one bag. A bag is usable for
    the regularizer only when it holds both arms."""

    y_bag: float
    h_bag: float
    n_treated: int
    n_control: int
    usable: bool


@dataclass
class LossBreakdown:
    """One training step's loss terms: loss = base_weight * l_base +
    alpha * l_mil. base_weight is 1 except in the no-base-loss ablation."""

    l_base: float
    l_mil: float
    alpha: float
    loss: float
    usable_bags: int
    base_weight: float = 1.0


def cluster_bags(
    uplift_predictions: np.ndarray,
    bag_size: int,
    mode: BagMode = BagMode.CLUSTERED,
    rng: np.random.Generator | None = None,
) -> BagPartition:
    """Pack a batch into equal-sized bags of adjacent uplift predictions.

    CLUSTERED sorts batch positions by predicted uplift ascending (ties
    keep original order) and partitions consecutive runs without
    overlaps. RANDOM shuffles instead of sorting, the no-clustering
    ablation; it needs `rng` for a reproducible shuffle. Trailing rows
    that do not fill a bag are dropped.
    """
    preds = np.asarray(uplift_predictions, dtype=np.float64)
    mode = BagMode(mode)
    if bag_size < 2:
        raise ConfigError(f"bag_size must be at least 2, got {bag_size}")
    if not np.all(np.isfinite(preds)):
        raise ConfigError("uplift predictions contain non-finite values")
    n = len(preds)
    if bag_size > n:
        warnings.warn(
            f"bag_size {bag_size} exceeds batch size {n}; no bags formed",
            stacklevel=2,
        )
        return BagPartition(bags=[], bag_size=bag_size, mode=mode)
    if mode is BagMode.CLUSTERED:
        order = np.argsort(preds, kind="stable")
    else:
        if rng is None:
            rng = np.random.default_rng()
        order = rng.permutation(n)
    n_bags = n // bag_size
    bags = [order[k * bag_size : (k + 1) * bag_size] for k in range(n_bags)]
    return BagPartition(bags=bags, bag_size=bag_size, mode=mode)


def bag_label(
    outcome: np.ndarray, treatment: np.ndarray, bag: np.ndarray, u_t: float
) -> tuple[float, bool]:
    """Bag-wise ATE label: treated responses weighted by 1/u_t minus
    control responses weighted by 1/(1-u_t).

    Returns (y_bag, usable). A single-arm bag is unusable and its label
    is NaN; it takes no part in the regularizer.
    """
    t = np.asarray(treatment)[bag]
    y = np.asarray(outcome, dtype=np.float64)[bag]
    n_t = int(t.sum())
    n_c = len(bag) - n_t
    if n_t == 0 or n_c == 0:
        return math.nan, False
    if not 0.0 < u_t < 1.0:
        raise ConfigError(f"u_t must lie in (0, 1) for a two-arm bag, got {u_t}")
    label = float(y[t == 1].sum() / u_t - y[t == 0].sum() / (1.0 - u_t))
    return label, True


def bag_prediction(
    p_t: np.ndarray,
    p_c: np.ndarray,
    treatment: np.ndarray,
    bag: np.ndarray,
    u_t: float,
) -> tuple[float, bool]:
    """Bag-wise ATE prediction by the same weighted summation as the
    label: each instance contributes only its factual arm's predicted
    probability."""
    t = np.asarray(treatment)[bag]
    n_t = int(t.sum())
    n_c = len(bag) - n_t
    if n_t == 0 or n_c == 0:
        return math.nan, False
    if not 0.0 < u_t < 1.0:
        raise ConfigError(f"u_t must lie in (0, 1) for a two-arm bag, got {u_t}")
    pt = np.asarray(p_t, dtype=np.float64)[bag]
    pc = np.asarray(p_c, dtype=np.float64)[bag]
    pred = float(pt[t == 1].sum() / u_t - pc[t == 0].sum() / (1.0 - u_t))
    return pred, True


def batch_bag_stats(
    outcome, treatment, p_t, p_c, partition: BagPartition, u_t: float
) -> list[BagStats]:
    """Label and prediction for every bag of a partition."""
    t = np.asarray(treatment)
    stats = []
    for bag in partition.bags:
        n_t = int(t[bag].sum())
        n_c = len(bag) - n_t
        y_bag, usable = bag_label(outcome, treatment, bag, u_t)
        h_bag, _ = bag_prediction(p_t, p_c, treatment, bag, u_t)
        stats.append(BagStats(y_bag, h_bag, n_t, n_c, usable))
    return stats


def mil_loss(stats: list[BagStats]) -> tuple[float, np.ndarray]:
    """Sum of squared (label - prediction) residuals over usable bags.

    Returns (l_mil, residuals); residuals are aligned with `stats` and
    zero for unusable bags so gradient routing can index them directly.
    """
    residuals = np.zeros(len(stats))
    for k, s in enumerate(stats):
        if s.usable:
            residuals[k] = s.y_bag - s.h_bag
    return float(np.sum(residuals**2)), residuals


def combined_loss_and_grads(
    model: UpliftModel,
    x,
    treatment,
    outcome,
    u_t: float,
    alpha: float,
    bag_size: int,
    mode: BagMode = BagMode.CLUSTERED,
    rng: np.random.Generator | None = None,
    base_weight: float = 1.0,
    partition: BagPartition | None = None,
) -> tuple[LossBreakdown, list[np.ndarray], ModelOutputs]:
    """Base loss plus the bag-level regularizer, with gradients.

    Bags are formed from the batch's current uplift predictions unless a
    pre-built `partition` is supplied (used by tests that need the
    assignment frozen). The assignment is fixed during the gradient; MIL
    gradient reaches each row only through its factual arm's probability.
    With alpha = 0 the bag machinery is skipped entirely and the
    gradients are bit-for-bit those of the base loss.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be nonnegative, got {alpha}")
    out = models.forward_full(model, x)
    t = np.asarray(treatment, dtype=np.float64)
    y = np.asarray(outcome, dtype=np.float64)
    loss_t, gz_t = nncore.bce_loss(out.p_t, y, t)
    loss_c, gz_c = nncore.bce_loss(out.p_c, y, 1.0 - t)
    l_base = loss_t + loss_c
    if base_weight != 1.0:
        gz_t = base_weight * gz_t
        gz_c = base_weight * gz_c

    if alpha == 0.0:
        grads = models.backprop_factual(model, out, gz_t, gz_c)
        breakdown = LossBreakdown(
            l_base=l_base,
            l_mil=0.0,
            alpha=alpha,
            loss=base_weight * l_base,
            usable_bags=0,
            base_weight=base_weight,
        )
        return breakdown, grads, out

    if partition is None:
        partition = cluster_bags(out.uplift, bag_size, mode, rng)
    stats = batch_bag_stats(y, t, out.p_t, out.p_c, partition, u_t)
    l_mil, residuals = mil_loss(stats)
    usable = sum(1 for s in stats if s.usable)

    # d l_mil / d p: -2 r / u_t on treated members, +2 r / (1 - u_t) on
    # control members of usable bags; then through the logistic.
    dp_t = np.zeros_like(out.p_t)
    dp_c = np.zeros_like(out.p_c)
    treated = t == 1.0
    for bag, r in zip(partition.bags, residuals):
        if r == 0.0:
            continue
        bt = bag[treated[bag]]
        bc = bag[~treated[bag]]
        dp_t[bt] += -2.0 * r / u_t
        dp_c[bc] += 2.0 * r / (1.0 - u_t)
    gz_t = gz_t + alpha * dp_t * out.p_t * (1.0 - out.p_t)
    gz_c = gz_c + alpha * dp_c * out.p_c * (1.0 - out.p_c)

    grads = models.backprop_factual(model, out, gz_t, gz_c)
    breakdown = LossBreakdown(
        l_base=l_base,
        l_mil=l_mil,
        alpha=alpha,
        loss=base_weight * l_base + alpha * l_mil,
        usable_bags=usable,
        base_weight=base_weight,
    )
    return breakdown, grads, out


def variance_identity_check(
    labels: np.ndarray, noise: np.ndarray, partition: BagPartition
) -> tuple[float, float]:
    """Algebraic core of the variance-reduction argument, as a test
    oracle: with unweighted per-bag sums, the squared gap between noisy
    and clean bag sums equals the squared bag sum of the noise alone.

    Computes lhs = sum_bags (sum(y + eps) - sum(y))^2 and
    rhs = sum_bags (sum eps)^2 with exact accumulation and raises if they
    differ beyond 1e-12 relative to max(1, |lhs|, |rhs|).
    """
    y = np.asarray(labels, dtype=np.float64)
    e = np.asarray(noise, dtype=np.float64)
    if y.shape != e.shape:
        raise ConfigError(f"length mismatch: {y.shape} labels, {e.shape} noise")
    lhs_terms, rhs_terms = [], []
    for bag in partition.bags:
        noisy = math.fsum((y[i] + e[i]) for i in bag)
        clean = math.fsum(y[i] for i in bag)
        lhs_terms.append((noisy - clean) ** 2)
        rhs_terms.append(math.fsum(e[i] for i in bag) ** 2)
    lhs = math.fsum(lhs_terms)
    rhs = math.fsum(rhs_terms)
    if abs(lhs - rhs) > 1e-12 * max(1.0, abs(lhs), abs(rhs)):
        raise AssertionError(
            f"bag-noise identity violated: lhs={lhs!r} rhs={rhs!r}"
        )
    return lhs, rhs
