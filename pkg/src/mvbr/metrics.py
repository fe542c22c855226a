"""Multilabel ranking metrics: per-class average precision and their mean.

AP here is the classic ranking form: sort by score descending (ties broken
by ascending original index, so results are identical across runs), then
average the precision values observed at each positive item's rank. A class
with no positive targets has undefined AP (``None``) and is excluded from
the mean rather than scored zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

__all__ = [
    "APResult",
    "average_precision",
    "mean_average_precision",
    "classwise_table",
    "write_classwise_csv",
    "expected_random_ap",
]


@dataclass
class APResult:
    """Per-class APs (``None`` where undefined), their mean, and positive counts."""

    per_class: list
    mean_ap: float
    n_positive: list


def average_precision(scores, targets):
    """AP of one class; ``None`` when there are no positive targets."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 1:
        raise ShapeError(
            f"average_precision expects matching vectors, got {scores.shape} "
            f"and {targets.shape}"
        )
    positives = int(np.count_nonzero(targets))
    if positives == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = (targets[order] != 0).astype(np.float64)
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1, dtype=np.float64)
    return float((cum_hits[hits == 1.0] / ranks[hits == 1.0]).sum() / positives)


def mean_average_precision(scores, targets):
    """Classwise AP over (n_samples, n_classes) arrays; mean skips undefined classes."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.ndim != 2 or scores.shape != targets.shape:
        raise ShapeError(
            f"mean_average_precision expects matching (n, c) matrices, got "
            f"{scores.shape} and {targets.shape}"
        )
    if scores.shape[0] < 1:
        raise ValidationError("mean_average_precision requires at least one sample")
    per_class = []
    n_positive = []
    for c in range(scores.shape[1]):
        per_class.append(average_precision(scores[:, c], targets[:, c]))
        n_positive.append(int(np.count_nonzero(targets[:, c])))
    defined = [ap for ap in per_class if ap is not None]
    skipped = [c for c, ap in enumerate(per_class) if ap is None]
    if skipped:
        warnings.warn(
            f"classes without positive samples excluded from the mean: {skipped}",
            stacklevel=2,
        )
    if not defined:
        raise ValidationError("no class has a positive sample; mean AP is undefined")
    return APResult(per_class, float(np.mean(defined)), n_positive)


def classwise_table(result, class_names):
    """Fixed-width text table of per-class APs; deterministic formatting."""
    if len(class_names) != len(result.per_class):
        raise ValidationError(
            f"{len(class_names)} class names for {len(result.per_class)} classes"
        )
    name_w = max(len("class"), *(len(n) for n in class_names))
    lines = [f"{'class':<{name_w}}  {'ap':>6}  {'n_positive':>10}"]
    for name, ap, pos in zip(class_names, result.per_class, result.n_positive):
        ap_text = "n/a" if ap is None else f"{ap:.3f}"
        lines.append(f"{name:<{name_w}}  {ap_text:>6}  {pos:>10}")
    defined = sum(1 for ap in result.per_class if ap is not None)
    lines.append(
        f"{'mean ap':<{name_w}}  {result.mean_ap:>6.3f}  "
        f"({defined} of {len(result.per_class)} classes)"
    )
    return "\n".join(lines)


def write_classwise_csv(path, result, class_names):
    """CSV rows ``class,ap,n_positive`` with LF endings; undefined AP -> n/a."""
    if len(class_names) != len(result.per_class):
        raise ValidationError(
            f"{len(class_names)} class names for {len(result.per_class)} classes"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("class,ap,n_positive\n")
        for name, ap, pos in zip(class_names, result.per_class, result.n_positive):
            ap_text = "n/a" if ap is None else f"{ap:.6f}"
            fh.write(f"{name},{ap_text},{pos}\n")


def expected_random_ap(n_items, n_positive):
    """Exact expected AP of a uniformly random ranking.

    With P positives among N items, conditioning on a positive at rank k the
    remaining positives are hypergeometric over the other slots, which gives

        E[AP] = q + (1 - q) * H_N / N,   q = (P - 1) / (N - 1),

    with H_N the N-th harmonic number. Verified against Monte Carlo in tests.
    """
    n, p = int(n_items), int(n_positive)
    if not (1 <= p <= n):
        raise ValidationError("expected_random_ap requires 1 <= n_positive <= n_items")
    if n == 1:
        return 1.0
    harmonic = float(np.sum(1.0 / np.arange(1, n + 1)))
    q = (p - 1) / (n - 1)
    return q + (1.0 - q) * harmonic / n
