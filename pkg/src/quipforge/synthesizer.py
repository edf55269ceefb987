"""Preference-pair synthesis from quoting scores, plus best-of-N reranking.

Given several sampled responses per prompt, each already scored, the
synthesizer orders them from most- to least-quoting and scans candidate
(preferred, dispreferred) pairs in lexicographic order, emitting the
first pair whose quoting gap exceeds ``delta_quip`` and (unless the
length constraint is relaxed) whose tokenized lengths differ by less
than ``delta_length`` relative to the shorter one. At most one pair is
emitted per prompt, so the output's prompt mix matches the input's;
prompts with no qualifying pair are dropped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import InputError


def default_length(text: str) -> int:
    """Whitespace-token count, clamped to >= 1 so length ratios stay finite."""
    return max(1, len(text.split()))


@dataclass
class SampledResponse:
    """One sampled model response with its quoting score.

    ``length`` is the tokenized length used by the length constraint;
    callers may supply a model-tokenizer count or fall back to
    :func:`default_length`. ``quip`` is filled by scoring before any
    pair selection happens.
    """

    response_id: str
    text: str
    length: int
    quip: Optional[float] = None

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError(f"length must be a positive integer, got {self.length}")
        if self.quip is not None and not 0.0 <= self.quip <= 1.0:
            raise ValueError(f"quip must be in [0, 1], got {self.quip}")


@dataclass(frozen=True)
class SynthConfig:
    delta_quip: float = 0.1
    delta_length: float = 0.1
    enforce_length: bool = True
    num_samples_expected: Optional[int] = None

    def __post_init__(self) -> None:
        if self.delta_quip <= 0:
            raise ValueError(f"delta_quip must be > 0, got {self.delta_quip}")
        if not 0.0 < self.delta_length < 1.0:
            raise ValueError(f"delta_length must be in (0, 1), got {self.delta_length}")


@dataclass
class PreferencePair:
    prompt_id: str
    preferred: SampledResponse
    dispreferred: SampledResponse
    quip_gap: float
    length_ratio: float


@dataclass
class SynthStats:
    prompts_in: int = 0
    pairs_out: int = 0
    discarded_no_pair: int = 0
    discarded_too_few_responses: int = 0
    unexpected_sample_counts: int = 0
    expected_samples: Optional[int] = None

    def to_dict(self) -> dict:
        out = {
            "prompts_in": self.prompts_in,
            "pairs_out": self.pairs_out,
            "discards": {
                "no_pair": self.discarded_no_pair,
                "too_few_responses": self.discarded_too_few_responses,
            },
        }
        if self.expected_samples is not None:
            out["expected_samples"] = self.expected_samples
            out["unexpected_sample_counts"] = self.unexpected_sample_counts
        return out


def sort_by_quip(responses: Sequence[SampledResponse]) -> list[SampledResponse]:
    """Non-increasing QUIP order; ties keep original input order (stable)."""
    for r in responses:
        if r.quip is None:
            raise ValueError(f"response {r.response_id!r} has not been scored")
    return sorted(responses, key=lambda r: r.quip, reverse=True)


def length_ratio(a: SampledResponse, b: SampledResponse) -> float:
    """Relative length difference |len_a - len_b| / min(len_a, len_b)."""
    return abs(a.length - b.length) / min(a.length, b.length)


def select_pair(
    sorted_responses: Sequence[SampledResponse],
    config: SynthConfig,
    prompt_id: str = "",
) -> Optional[PreferencePair]:
    """First qualifying (preferred, dispreferred) pair, or None.

    Scans w = 0..T-2, l = w+1..T-1 over responses already sorted by
    non-increasing quip and returns the first pair with quip gap >
    ``delta_quip`` that also passes the length constraint when enforced.
    The scan order is the contract: it favors pairs near the top of the
    ranking, keeping even the rejected side relatively well-quoted.
    """
    t = len(sorted_responses)
    if t < 2:
        return None
    quips = []
    for r in sorted_responses:
        if r.quip is None:
            raise ValueError(f"response {r.response_id!r} has not been scored")
        quips.append(r.quip)
    if any(quips[i] < quips[i + 1] for i in range(t - 1)):
        raise ValueError("responses must be sorted by non-increasing quip")

    for w in range(t - 1):
        for l in range(w + 1, t):
            gap = quips[w] - quips[l]
            if gap <= config.delta_quip:
                continue
            ratio = length_ratio(sorted_responses[w], sorted_responses[l])
            if config.enforce_length and ratio >= config.delta_length:
                continue
            return PreferencePair(
                prompt_id=prompt_id,
                preferred=sorted_responses[w],
                dispreferred=sorted_responses[l],
                quip_gap=gap,
                length_ratio=ratio,
            )
    return None


def synthesize_dataset(
    prompts: Iterable[tuple[str, Sequence[SampledResponse]]],
    config: SynthConfig,
) -> tuple[list[PreferencePair], SynthStats]:
    """Run pair selection over every prompt, at most one pair per prompt.

    ``prompts`` yields (prompt_id, scored responses). Output pairs follow
    input prompt order. Duplicate prompt ids are rejected; prompts with
    fewer than two responses or no qualifying pair are counted in the
    stats by discard reason.
    """
    stats = SynthStats(expected_samples=config.num_samples_expected)
    pairs: list[PreferencePair] = []
    seen: set[str] = set()
    for prompt_id, responses in prompts:
        if prompt_id in seen:
            raise InputError(f"duplicate prompt_id {prompt_id!r}", field="prompt_id")
        seen.add(prompt_id)
        stats.prompts_in += 1
        if (
            config.num_samples_expected is not None
            and len(responses) != config.num_samples_expected
        ):
            stats.unexpected_sample_counts += 1
        if len(responses) < 2:
            stats.discarded_too_few_responses += 1
            continue
        pair = select_pair(sort_by_quip(responses), config, prompt_id=prompt_id)
        if pair is None:
            stats.discarded_no_pair += 1
        else:
            pairs.append(pair)
            stats.pairs_out += 1
    return pairs, stats


def rerank_best_of_n(responses: Sequence[SampledResponse]) -> SampledResponse:
    """The highest-QUIP response; ties resolve to the lowest input index."""
    if not responses:
        raise ValueError("cannot rerank an empty response list")
    for r in responses:
        if r.quip is None:
            raise ValueError(f"response {r.response_id!r} has not been scored")
    return max(responses, key=lambda r: r.quip)
