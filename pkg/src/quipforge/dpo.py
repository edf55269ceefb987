"""Preference-optimization diagnostics over supplied log-probabilities.

Pure scalar math, no model in sight: callers supply per-response summed
log-probabilities under the policy and the frozen reference, and these
functions compute the implicit reward margin, the pairwise logistic
loss -log(sigmoid(margin)), its analytic gradients, and reward accuracy
(fraction of pairs where the policy already prefers the chosen side).

The loss is evaluated in softplus form, log(1 + e^(-margin)), which is
exact at margin 0 (ln 2) and overflow-free for |margin| up to 1e6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class DpoExample:
    """Log-probabilities for one (chosen, rejected) response pair.

    Any finite reals are accepted; proper distributions give values <= 0
    but partially-summed or length-normalized inputs may not.
    """

    logp_theta_w: float
    logp_ref_w: float
    logp_theta_l: float
    logp_ref_l: float
    beta: float

    def __post_init__(self) -> None:
        for name in ("logp_theta_w", "logp_ref_w", "logp_theta_l", "logp_ref_l", "beta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


@dataclass(frozen=True)
class DpoGradient:
    """Partial derivatives of the loss w.r.t. all four log-prob inputs."""

    d_logp_theta_w: float
    d_logp_ref_w: float
    d_logp_theta_l: float
    d_logp_ref_l: float


def margin(ex: DpoExample) -> float:
    """Implicit reward margin beta * [(ltw - lrw) - (ltl - lrl)].

    Positive when the policy, relative to the reference, prefers the
    chosen response over the rejected one.
    """
    return ex.beta * (
        (ex.logp_theta_w - ex.logp_ref_w) - (ex.logp_theta_l - ex.logp_ref_l)
    )


def _softplus(x: float) -> float:
    # log(1 + e^x) without overflow on either tail
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dpo_loss(ex: DpoExample) -> float:
    """-log(sigmoid(margin)) in stable softplus form; always > 0 and
    strictly decreasing in the margin."""
    return _softplus(-margin(ex))


def dpo_loss_grad(ex: DpoExample) -> DpoGradient:
    """Analytic gradient of :func:`dpo_loss`.

    With s = sigmoid(-margin): d/d(logp_theta_w) = -beta*s,
    d/d(logp_theta_l) = +beta*s, and the reference-side partials mirror
    with opposite signs (reported for completeness; reference log-probs
    are constants during training).
    """
    s = _sigmoid(-margin(ex))
    bs = ex.beta * s
    return DpoGradient(
        d_logp_theta_w=-bs,
        d_logp_ref_w=bs,
        d_logp_theta_l=bs,
        d_logp_ref_l=-bs,
    )


def reward_accuracy(batch: Sequence[DpoExample]) -> float:
    """Fraction of examples with strictly positive margin.

    A margin of exactly zero counts as incorrect: a policy indifferent
    between chosen and rejected has not learned the preference.
    """
    if not batch:
        raise ValueError("cannot compute reward accuracy over an empty batch")
    return sum(1 for ex in batch if margin(ex) > 0.0) / len(batch)


def mean_loss(batch: Sequence[DpoExample]) -> float:
    """Arithmetic mean of per-example losses."""
    if not batch:
        raise ValueError("cannot compute mean loss over an empty batch")
    return sum(dpo_loss(ex) for ex in batch) / len(batch)


def margin_histogram(batch: Sequence[DpoExample], bins: int = 20) -> dict:
    """Equal-width histogram of margins as {bin_edges, counts}.

    Degenerate batches (all margins equal) get a single unit-width bin
    centered on the common value.
    """
    if not batch:
        raise ValueError("cannot histogram an empty batch")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    margins = [margin(ex) for ex in batch]
    lo, hi = min(margins), max(margins)
    if lo == hi:
        return {"bin_edges": [lo - 0.5, hi + 0.5], "counts": [len(margins)]}
    width = (hi - lo) / bins
    counts = [0] * bins
    for m in margins:
        idx = min(int((m - lo) / width), bins - 1)
        counts[idx] += 1
    edges = [lo + i * width for i in range(bins)] + [hi]
    return {"bin_edges": edges, "counts": counts}


def summarize_batch(batch: Sequence[DpoExample], bins: int = 20) -> dict:
    """The reporting bundle: mean loss, reward accuracy, margin histogram."""
    return {
        "mean_loss": mean_loss(batch),
        "reward_accuracy": reward_accuracy(batch),
        "margin_histogram": margin_histogram(batch, bins=bins),
    }
