"""In-process bindings for training pipelines that consume quipforge data.

A thin veneer over the core toolkit: no scoring, selection, or loss
logic lives here, so value-for-value parity with the CLI is guaranteed
by construction and verified by the golden-fixture suite. All payloads
are plain dicts and lists shaped exactly like the CLI's JSONL rows.

Handles are immutable once opened and safe to share across host
threads. The core is pure Python, so scoring does not release the
interpreter lock the way a native extension would; concurrent calls are
nevertheless safe, and ``score_batch`` can spread work over an internal
thread pool while preserving input order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, Union

from quipforge import __version__ as _core_version
from quipforge import dpo as _dpo
from quipforge import pipeline as _pipeline
from quipforge import scorer as _scorer
from quipforge.errors import (
    ConfigMismatchError,
    InputError,
    QuipforgeError,
    SketchFormatError,
)
from quipforge.sketch import NgramSketch, load as _load
from quipforge.synthesizer import SynthConfig

__version__ = _core_version

__all__ = [
    "__version__",
    "BatchItemError",
    "BoundSketchHandle",
    "ConfigMismatchError",
    "InputError",
    "QuipforgeError",
    "ScoreTriple",
    "SketchFormatError",
    "annotate",
    "dpo_loss",
    "make_pairs",
    "open_sketch",
    "reward_accuracy",
    "score_batch",
]


@dataclass(frozen=True)
class BoundSketchHandle:
    """Opaque handle to a loaded, immutable membership sketch.

    ``n`` and ``normalization_flags`` echo the sketch header so callers
    can sanity-check what they opened. Two handles over the same file
    answer every query identically.
    """

    n: int
    normalization_flags: int
    _sketch: NgramSketch

    @property
    def inserted_count(self) -> int:
        return self._sketch.inserted_count


class ScoreTriple(NamedTuple):
    score: float
    matched: int
    total: int


@dataclass(frozen=True)
class BatchItemError:
    """Per-element failure marker; batches never fail wholesale."""

    index: int
    message: str


def open_sketch(path) -> BoundSketchHandle:
    """Load a sketch file into a queryable handle.

    Format problems raise SketchFormatError exactly as the core loader
    classifies them; missing files raise FileNotFoundError.
    """
    sketch = _load(path)
    return BoundSketchHandle(
        n=sketch.config.n,
        normalization_flags=sketch.config.normalization.to_flags(),
        _sketch=sketch,
    )


def _score_one(handle: BoundSketchHandle, text: Union[str, bytes]) -> ScoreTriple:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    elif not isinstance(text, str):
        raise TypeError(f"text must be str or bytes, got {type(text).__name__}")
    result = _scorer.quip(handle._sketch, text)
    return ScoreTriple(score=result.score, matched=result.matched_grams, total=result.total_grams)


def score_batch(
    handle: BoundSketchHandle,
    texts: Sequence[Union[str, bytes]],
    threads: int = 1,
) -> list[Union[ScoreTriple, BatchItemError]]:
    """Score many texts; element i of the result corresponds to texts[i].

    Undecodable or mistyped elements yield a BatchItemError in their
    slot instead of aborting the batch.
    """

    def worker(item):
        index, text = item
        try:
            return _score_one(handle, text)
        except (UnicodeDecodeError, TypeError) as exc:
            return BatchItemError(index=index, message=str(exc))

    items = list(enumerate(texts))
    if threads <= 1:
        return [worker(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, items))


def annotate(handle: BoundSketchHandle, text: str) -> dict:
    """Quoted-span payload: {"depths": [...], "spans": [[start, end, max_depth], ...]}."""
    annotation = _scorer.annotate(handle._sketch, text)
    return {
        "depths": list(annotation.depths),
        "spans": [[s, e, d] for s, e, d in annotation.spans],
    }


def _as_config(config: Union[SynthConfig, dict, None]) -> SynthConfig:
    if config is None:
        return SynthConfig()
    if isinstance(config, SynthConfig):
        return config
    known = {"delta_quip", "delta_length", "enforce_length", "num_samples_expected"}
    unknown = set(config) - known
    if unknown:
        raise InputError(
            f"unknown config field {sorted(unknown)[0]!r}", field=sorted(unknown)[0]
        )
    return SynthConfig(**config)


def make_pairs(
    handle: BoundSketchHandle,
    prompts_payload: Iterable[dict],
    config: Union[SynthConfig, dict, None] = None,
) -> dict:
    """Preference-pair synthesis over a prompts payload.

    Rows mirror the pairs JSONL schema; the return value bundles them
    with the synthesis stats: {"pairs": [...], "stats": {...}}. Schema
    violations raise InputError naming the offending field.
    """
    rows, stats = _pipeline.build_pairs(handle._sketch, prompts_payload, _as_config(config))
    return {"pairs": rows, "stats": stats}


def dpo_loss(
    logp_theta_w: float,
    logp_ref_w: float,
    logp_theta_l: float,
    logp_ref_l: float,
    beta: float,
) -> float:
    """Pairwise preference loss for one example; see the core dpo module."""
    example = _dpo.DpoExample(
        logp_theta_w=logp_theta_w,
        logp_ref_w=logp_ref_w,
        logp_theta_l=logp_theta_l,
        logp_ref_l=logp_ref_l,
        beta=beta,
    )
    return _dpo.dpo_loss(example)


def reward_accuracy(records: Iterable[dict], beta: float) -> float:
    """Fraction of payload rows with positive implicit reward margin.

    Rows carry the four log-probability fields of the dpo-metrics JSONL
    schema; zero margins count as incorrect.
    """
    batch = [
        _pipeline.parse_dpo_example(record, beta, where=f"record {i}")
        for i, record in enumerate(records, start=1)
    ]
    if not batch:
        raise InputError("records must be non-empty")
    return _dpo.reward_accuracy(batch)
