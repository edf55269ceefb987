"""QUIP scoring and quoted-span annotation against a membership sketch.

The QUIP score of a text is the fraction of its character n-grams found
in the grounding corpus: matched grams / total grams, with duplicates
counted at multiplicity. Annotation turns the per-gram match mask into
per-character overlap depths (how many matched windows cover each
character) and merged quoted spans suitable for highlighting.

Scoring accepts any index object exposing ``config`` (with ``n`` and
``normalization``) and ``contains(gram)``; indexes may additionally
provide ``window_mask(normalized_text)`` as a bulk fast path, which
``NgramSketch`` does.
"""

from __future__ import annotations

import html as _html
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence


@dataclass
class QuipResult:
    """Score plus the evidence it was computed from.

    ``matched_mask[i]`` tells whether the n-gram starting at character
    ``i`` of the normalized text was found in the corpus. Texts shorter
    than ``n`` have no grams; they score 0.0 with ``degenerate`` set so
    aggregation can exclude them knowingly.
    """

    score: float
    total_grams: int
    matched_grams: int
    matched_mask: list[bool] = field(default_factory=list)
    degenerate: bool = False


@dataclass
class QuipAnnotation:
    """Per-character overlap depths and merged quoted spans.

    ``depths[c]`` counts the matched n-gram windows covering character
    ``c`` of the normalized text. ``spans`` lists maximal runs of depth
    >= 1 as (start, end_exclusive, max_depth), sorted and disjoint with
    at least one depth-0 character between consecutive spans.
    """

    depths: list[int]
    spans: list[tuple[int, int, int]]


def _window_mask(index, normalized_text: str) -> list[bool]:
    bulk = getattr(index, "window_mask", None)
    if bulk is not None:
        return bulk(normalized_text)
    n = index.config.n
    return [
        index.contains(normalized_text[i : i + n])
        for i in range(len(normalized_text) - n + 1)
    ]


def quip(index, text: str) -> QuipResult:
    """Score ``text`` against ``index``.

    The text is normalized with the index's recorded policy, sliced into
    stride-1 character n-grams, and each gram is membership-tested.
    Deterministic for a fixed index.
    """
    norm = index.config.normalization.apply(text)
    mask = _window_mask(index, norm)
    total = len(mask)
    if total == 0:
        return QuipResult(score=0.0, total_grams=0, matched_grams=0, degenerate=True)
    matched = sum(mask)
    return QuipResult(
        score=matched / total,
        total_grams=total,
        matched_grams=matched,
        matched_mask=mask,
    )


def annotate(index, text: str) -> QuipAnnotation:
    """Per-character quote evidence for ``text``.

    Depth of character ``c`` = number of matched windows i with
    i <= c < i+n. Spans are the maximal depth>=1 runs with their peak
    depth, in normalized-text coordinates.
    """
    norm = index.config.normalization.apply(text)
    n = index.config.n
    mask = _window_mask(index, norm)
    length = len(norm)
    if not mask:
        return QuipAnnotation(depths=[0] * length, spans=[])

    # Difference array: each matched window adds +1 over [i, i+n).
    diff = [0] * (length + 1)
    for i, hit in enumerate(mask):
        if hit:
            diff[i] += 1
            diff[i + n] -= 1
    depths = []
    running = 0
    for c in range(length):
        running += diff[c]
        depths.append(running)

    spans: list[tuple[int, int, int]] = []
    start = None
    peak = 0
    for c, d in enumerate(depths):
        if d > 0:
            if start is None:
                start = c
                peak = d
            elif d > peak:
                peak = d
        elif start is not None:
            spans.append((start, c, peak))
            start = None
    if start is not None:
        spans.append((start, length, peak))
    return QuipAnnotation(depths=depths, spans=spans)


# Background shades for tty rendering, darkest (depth 1) to lightest
# (depth >= 3), mirroring the convention that deeper overlap means more
# independent corroborating windows.
_TTY_BG = {1: "\x1b[48;5;28m", 2: "\x1b[48;5;77m", 3: "\x1b[48;5;157m"}
_TTY_RESET = "\x1b[0m"

_DISPLAY_DEPTH_CAP = 3


def render_annotation(annotation: QuipAnnotation, text: str, format: str = "tty") -> str:
    """Render quoted-span highlights over the normalized ``text``.

    ``tty`` uses three background intensities for depths 1 / 2 / >=3;
    ``html`` emits nested <mark> elements with depth classes; ``json``
    emits the spans verbatim (round-trippable). The text must be the
    same normalized string the annotation was computed from.
    """
    if len(annotation.depths) != len(text):
        raise ValueError(
            f"annotation length {len(annotation.depths)} does not match "
            f"text length {len(text)}"
        )
    if format == "json":
        return json.dumps(
            {"spans": [[s, e, d] for s, e, d in annotation.spans]},
            ensure_ascii=False,
        )
    if format == "tty":
        out = []
        for run_start, run_end, depth in _constant_runs(annotation.depths):
            seg = text[run_start:run_end]
            if depth == 0:
                out.append(seg)
            else:
                out.append(_TTY_BG[min(depth, _DISPLAY_DEPTH_CAP)] + seg + _TTY_RESET)
        return "".join(out)
    if format == "html":
        return _render_html(annotation.depths, text)
    raise ValueError(f"unknown render format {format!r}")


def _constant_runs(depths: Sequence[int]) -> Iterable[tuple[int, int, int]]:
    """Yield (start, end, display_depth) runs of constant capped depth."""
    start = 0
    prev = None
    for i, d in enumerate(depths):
        d = min(d, _DISPLAY_DEPTH_CAP)
        if prev is None:
            prev = d
        elif d != prev:
            yield start, i, prev
            start = i
            prev = d
    if prev is not None:
        yield start, len(depths), prev


def _render_html(depths: Sequence[int], text: str) -> str:
    """Nested <mark> rendering: depth d wraps a character in d marks (cap 3)."""
    out = []
    open_depth = 0
    for c, raw in enumerate(depths):
        target = min(raw, _DISPLAY_DEPTH_CAP)
        while open_depth > target:
            out.append("</mark>")
            open_depth -= 1
        while open_depth < target:
            open_depth += 1
            out.append(f'<mark class="depth-{open_depth}">')
        out.append(_html.escape(text[c]))
    while open_depth > 0:
        out.append("</mark>")
        open_depth -= 1
    return "".join(out)


def parse_rendered_spans(rendered_json: str) -> list[tuple[int, int, int]]:
    """Inverse of the json render: recover the exact span triples."""
    payload = json.loads(rendered_json)
    return [(int(s), int(e), int(d)) for s, e, d in payload["spans"]]


def offset_map(raw_text: str, policy) -> list[int]:
    """Map each character of the normalized text back to a raw index.

    Spans and depths are reported in normalized coordinates; UIs that
    highlight the original input can translate through this map. Entry
    ``j`` is the index of the raw character that produced normalized
    character ``j``. The map is monotone non-decreasing and exact
    whenever per-token normalization preserves character counts (all
    ASCII input, for instance); tokens reshaped by composition or case
    expansion map proportionally within the token's raw extent.
    """
    segments: list[tuple[int, str, bool]] = []  # (raw_start, raw_run, is_space)
    i = 0
    while i < len(raw_text):
        is_space = raw_text[i].isspace()
        j = i
        while j < len(raw_text) and raw_text[j].isspace() == is_space:
            j += 1
        segments.append((i, raw_text[i:j], is_space))
        i = j

    char_policy = type(policy)(
        unicode_nfc=policy.unicode_nfc,
        lowercase=policy.lowercase,
        collapse_whitespace=False,
    )
    mapping: list[int] = []
    emitted_token = False
    for start, run, is_space in segments:
        if is_space:
            if policy.collapse_whitespace:
                continue  # handled as the single joiner space below
            norm_run = char_policy.apply(run)
            mapping.extend(_align_segment(start, run, norm_run))
            continue
        if policy.collapse_whitespace and emitted_token:
            # the joiner space stands for the whitespace gap before run
            mapping.append(start - 1)
        norm_run = char_policy.apply(run)
        mapping.extend(_align_segment(start, run, norm_run))
        emitted_token = True
    return mapping


def _align_segment(start: int, raw_run: str, norm_run: str) -> list[int]:
    if len(norm_run) == len(raw_run):
        return [start + k for k in range(len(raw_run))]
    if not raw_run:
        return []
    return [
        start + min(k * len(raw_run) // max(len(norm_run), 1), len(raw_run) - 1)
        for k in range(len(norm_run))
    ]


def aggregate(results: Sequence[QuipResult], mode: str = "macro") -> float:
    """Collapse per-text results into one ratio.

    macro = arithmetic mean of per-text scores (degenerate results are
    excluded); micro = pooled matched grams / total grams. Raises
    ValueError when nothing scoreable remains.
    """
    if not results:
        raise ValueError("cannot aggregate empty results")
    if mode == "macro":
        scores = [r.score for r in results if not r.degenerate]
        if not scores:
            raise ValueError("cannot aggregate: all results are degenerate")
        return sum(scores) / len(scores)
    if mode == "micro":
        total = sum(r.total_grams for r in results)
        if total == 0:
            raise ValueError("cannot aggregate: zero total grams")
        matched = sum(r.matched_grams for r in results)
        return matched / total
    raise ValueError(f"unknown aggregation mode {mode!r}")
