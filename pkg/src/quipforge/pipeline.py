"""Record-level operations behind both the CLI and the bindings package.

Everything here speaks the wire schemas: plain dicts shaped exactly like
the JSONL rows the CLI reads and writes. Keeping the logic at this level
means any front end (CLI subcommand, in-process binding) produces
identical payloads for identical inputs.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Iterator

from . import dpo, metrics, scorer, synthesizer
from .errors import InputError
from .sketch import NgramSketch


def _require(record: dict, field: str, kind, where: str):
    if field not in record:
        raise InputError(f"{where}: missing field {field!r}", field=field)
    value = record[field]
    if not isinstance(value, kind):
        raise InputError(
            f"{where}: field {field!r} must be {kind.__name__}, got {type(value).__name__}",
            field=field,
        )
    return value


def score_record(sketch: NgramSketch, record: dict, with_spans: bool = False) -> dict:
    """{id, text} -> {id, score, total_grams, matched_grams[, spans]}."""
    rid = _require(record, "id", (str, int), "score input")
    text = _require(record, "text", str, f"score input id={rid!r}")
    result = scorer.quip(sketch, text)
    out = {
        "id": rid,
        "score": result.score,
        "total_grams": result.total_grams,
        "matched_grams": result.matched_grams,
    }
    if with_spans:
        annotation = scorer.annotate(sketch, text)
        out["spans"] = [[s, e, d] for s, e, d in annotation.spans]
    return out


def score_records(
    sketch: NgramSketch,
    records: Iterable[dict],
    with_spans: bool = False,
    threads: int = 1,
) -> Iterator[dict]:
    """Score a record stream, preserving input order even when threaded.

    Threaded scoring dispatches bounded chunks so arbitrarily long
    streams never sit in memory all at once.
    """
    if threads <= 1:
        for record in records:
            yield score_record(sketch, record, with_spans)
        return
    chunk_size = max(threads * 64, 256)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        stream = iter(records)
        while True:
            chunk = list(itertools.islice(stream, chunk_size))
            if not chunk:
                return
            yield from pool.map(lambda r: score_record(sketch, r, with_spans), chunk)


def _parse_responses(record: dict, where: str) -> list[synthesizer.SampledResponse]:
    raw = _require(record, "responses", list, where)
    parsed = []
    for i, resp in enumerate(raw):
        if not isinstance(resp, dict):
            raise InputError(f"{where}: responses[{i}] must be an object", field="responses")
        rwhere = f"{where} responses[{i}]"
        rid = _require(resp, "response_id", (str, int), rwhere)
        text = _require(resp, "text", str, rwhere)
        if "len" in resp:
            length = resp["len"]
            if not isinstance(length, int) or length < 1:
                raise InputError(
                    f"{rwhere}: field 'len' must be a positive integer, got {length!r}",
                    field="len",
                )
        else:
            length = synthesizer.default_length(text)
        parsed.append(
            synthesizer.SampledResponse(response_id=str(rid), text=text, length=length)
        )
    return parsed


def _scored_prompt(
    sketch: NgramSketch, record: dict
) -> tuple[str, str, list[synthesizer.SampledResponse]]:
    prompt_id = _require(record, "prompt_id", (str, int), "prompts input")
    where = f"prompt_id={prompt_id!r}"
    prompt = _require(record, "prompt", str, where)
    responses = _parse_responses(record, where)
    for resp in responses:
        resp.quip = scorer.quip(sketch, resp.text).score
    return str(prompt_id), prompt, responses


def build_pairs(
    sketch: NgramSketch,
    prompt_records: Iterable[dict],
    config: synthesizer.SynthConfig,
) -> tuple[list[dict], dict]:
    """Prompts payload -> (pairs payload, stats payload).

    Input rows: {prompt_id, prompt, responses: [{response_id, text, len?}]}.
    Output rows: {prompt_id, prompt, chosen, rejected, chosen_quip,
    rejected_quip, quip_gap, length_ratio}.
    """
    prompts_texts: dict[str, str] = {}

    def scored() -> Iterator[tuple[str, list[synthesizer.SampledResponse]]]:
        for record in prompt_records:
            prompt_id, prompt, responses = _scored_prompt(sketch, record)
            if prompt_id in prompts_texts:
                raise InputError(f"duplicate prompt_id {prompt_id!r}", field="prompt_id")
            prompts_texts[prompt_id] = prompt
            yield prompt_id, responses

    pairs, stats = synthesizer.synthesize_dataset(scored(), config)
    rows = [
        {
            "prompt_id": pair.prompt_id,
            "prompt": prompts_texts[pair.prompt_id],
            "chosen": pair.preferred.text,
            "rejected": pair.dispreferred.text,
            "chosen_quip": pair.preferred.quip,
            "rejected_quip": pair.dispreferred.quip,
            "quip_gap": pair.quip_gap,
            "length_ratio": pair.length_ratio,
        }
        for pair in pairs
    ]
    return rows, stats.to_dict()


def rerank_records(sketch: NgramSketch, prompt_records: Iterable[dict]) -> Iterator[dict]:
    """Best-of-N selection per prompt: the highest-QUIP response wins."""
    for record in prompt_records:
        prompt_id, prompt, responses = _scored_prompt(sketch, record)
        if not responses:
            raise InputError(
                f"prompt_id={prompt_id!r}: responses must be non-empty", field="responses"
            )
        best = synthesizer.rerank_best_of_n(responses)
        yield {
            "prompt_id": prompt_id,
            "prompt": prompt,
            "response_id": best.response_id,
            "text": best.text,
            "quip": best.quip,
        }


def parse_dpo_example(record: dict, beta: float, where: str = "dpo input") -> dpo.DpoExample:
    values = {}
    for field in ("logp_theta_w", "logp_ref_w", "logp_theta_l", "logp_ref_l"):
        value = _require(record, field, (int, float), where)
        values[field] = float(value)
    try:
        return dpo.DpoExample(beta=beta, **values)
    except ValueError as exc:
        raise InputError(f"{where}: {exc}") from exc


def dpo_summary(records: Iterable[dict], beta: float, bins: int = 20) -> dict:
    """Batch rows -> {mean_loss, reward_accuracy, margin_histogram}."""
    batch = []
    for i, record in enumerate(records, start=1):
        where = f"dpo input record {i}"
        if "id" in record:
            where = f"dpo input id={record['id']!r}"
        batch.append(parse_dpo_example(record, beta, where))
    if not batch:
        raise InputError("dpo input contains no records")
    return dpo.summarize_batch(batch, bins=bins)


def rouge_records(records: Iterable[dict], beta: float = 1.0) -> tuple[list[dict], dict]:
    """Per-row Rouge-L scores plus corpus means."""
    rows = []
    for i, record in enumerate(records, start=1):
        where = f"rouge input record {i}"
        rid = _require(record, "id", (str, int), where)
        hyp = _require(record, "hypothesis", str, where)
        ref = _require(record, "reference", str, where)
        score = metrics.rouge_l(hyp, ref, beta=beta)
        rows.append(
            {
                "id": rid,
                "precision": score.precision,
                "recall": score.recall,
                "f1": score.f1,
                "lcs_length": score.lcs_length,
            }
        )
    if not rows:
        raise InputError("rouge input contains no records")
    means = {
        "precision": sum(r["precision"] for r in rows) / len(rows),
        "recall": sum(r["recall"] for r in rows) / len(rows),
        "f1": sum(r["f1"] for r in rows) / len(rows),
        "tokenization": "lowercase_whitespace",
    }
    return rows, means
