"""Command-line surface for the quoting toolkit.

Subcommands: build | score | highlight | pairs | rerank | dpo-metrics
| rouge. Every run is deterministic given its flags and inputs; each
successful run emits a manifest (a sidecar ``<output>.manifest.json``
when the command writes an output file, otherwise a JSON line on
stderr) whose config snapshot is sufficient for an exact replay.

Exit codes: 0 success, 1 usage error, 2 empty or invalid input,
3 I/O error, 4 sketch format/version error.
"""

from __future__ import annotations

import itertools
import json
import os
import sys
import time
from pathlib import Path

import click

from . import __version__, jsonl, pipeline, sketch as sketch_mod
from .errors import ConfigMismatchError, InputError, SketchFormatError
from .scorer import annotate, render_annotation
from .sketch import (
    DEFAULT_N,
    DEFAULT_TARGET_FPR,
    NgramSketch,
    NormalizationPolicy,
    SketchConfig,
    normalize,
    optimal_num_bits,
    optimal_num_hashes,
)
from .synthesizer import SynthConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BAD_INPUT = 2
EXIT_IO = 3
EXIT_FORMAT = 4

DEFAULT_DPO_BETA = 0.05  # tuned default for the pairwise diagnostics
DEFAULT_BITS_MODE_HASHES = 7


def _threads_option(fn):
    return click.option(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (default: QUIPFORGE_THREADS env var, else 1).",
    )(fn)


def _effective_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("QUIPFORGE_THREADS")
        threads = int(env) if env else 1
    return max(1, threads)


def _emit_manifest(
    subcommand: str,
    config: dict,
    inputs: list[str],
    outputs: list[str],
    started: float,
    sketch: NgramSketch | None = None,
    manifest_path: str | None = None,
) -> None:
    manifest = {
        "kind": "run_manifest",
        "subcommand": subcommand,
        "tool_version": __version__,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": round(time.monotonic() - started, 6),
    }
    if sketch is not None:
        manifest["sketch"] = {
            "n": sketch.config.n,
            "num_bits": sketch.config.num_bits,
            "num_hashes": sketch.config.num_hashes,
            "hash_scheme_id": sketch.config.hash_scheme_id,
            "normalization_flags": sketch.config.normalization.to_flags(),
            "inserted_count": sketch.inserted_count,
        }
    if manifest_path is None and outputs:
        manifest_path = outputs[0] + ".manifest.json"
    if manifest_path is not None:
        Path(manifest_path).write_text(
            json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    else:
        click.echo(json.dumps(manifest, ensure_ascii=False), err=True)


def _normalization_from_flags(nfc: bool, lowercase: bool, collapse_ws: bool) -> NormalizationPolicy:
    return NormalizationPolicy(
        unicode_nfc=nfc, lowercase=lowercase, collapse_whitespace=collapse_ws
    )


@click.group()
@click.version_option(version=__version__, prog_name="quipforge")
def cli() -> None:
    """Verbatim-quote verification toolkit."""


@cli.command("build")
@click.argument("corpus", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--n", type=int, default=DEFAULT_N, show_default=True, help="Character n-gram width.")
@click.option("--fpr", type=float, default=None, help="Target false-positive rate (sizes the bit array).")
@click.option("--bits", type=int, default=None, help="Explicit bit-array size (mutually exclusive with --fpr).")
@click.option("--hashes", type=int, default=None, help="Probe count (defaults from --fpr, or 7 with --bits).")
@click.option("--expected-grams", type=int, default=None, help="Skip the counting pre-pass in --fpr mode.")
@click.option("--stride", type=int, default=1, show_default=True, help="Index every stride-th gram.")
@click.option("--shards", type=int, default=1, show_default=True, help="Build per-shard sketches and merge.")
@click.option("--input-format", type=click.Choice(["auto", "text", "jsonl"]), default="auto", show_default=True)
@click.option("--nfc/--no-nfc", default=True, show_default=True)
@click.option("--lowercase/--no-lowercase", default=True, show_default=True)
@click.option("--collapse-ws/--no-collapse-ws", default=True, show_default=True)
def cmd_build(
    corpus, out_path, n, fpr, bits, hashes, expected_grams, stride, shards,
    input_format, nfc, lowercase, collapse_ws,
) -> None:
    """Build a membership sketch from corpus files (text or JSONL)."""
    started = time.monotonic()
    if fpr is not None and bits is not None:
        raise click.UsageError("--fpr and --bits are mutually exclusive")
    if shards < 1:
        raise click.UsageError("--shards must be >= 1")

    normalization = _normalization_from_flags(nfc, lowercase, collapse_ws)

    def documents():
        for path in corpus:
            yield from jsonl.iter_corpus_documents(path, input_format)

    if bits is not None:
        num_bits = bits
        num_hashes = hashes if hashes is not None else DEFAULT_BITS_MODE_HASHES
    else:
        target = fpr if fpr is not None else DEFAULT_TARGET_FPR
        if expected_grams is None:
            # counting pre-pass: no hashing, just window arithmetic
            expected_grams = 0
            for doc in documents():
                norm = normalization.apply(doc)
                window_count = len(norm) - n + 1
                if window_count > 0:
                    expected_grams += (window_count + stride - 1) // stride
            expected_grams = max(1, expected_grams)
        num_bits = optimal_num_bits(expected_grams, target)
        num_hashes = hashes if hashes is not None else optimal_num_hashes(target)

    config = SketchConfig(
        n=n, num_bits=num_bits, num_hashes=num_hashes, normalization=normalization
    )
    shard_sketches = [NgramSketch(config) for _ in range(shards)]
    docs_ingested = 0
    for i, doc in enumerate(documents()):
        shard_sketches[i % shards].insert_document(doc, stride=stride)
        docs_ingested += 1
    built = shard_sketches[0]
    for other in shard_sketches[1:]:
        built = sketch_mod.merge(built, other)

    sketch_mod.save(built, out_path)
    stats = built.stats(documents_ingested=docs_ingested)
    click.echo(json.dumps(stats.to_dict(), ensure_ascii=False))
    _emit_manifest(
        "build",
        {
            "n": n, "fpr": fpr, "bits": bits, "hashes": num_hashes,
            "expected_grams": expected_grams, "stride": stride, "shards": shards,
            "input_format": input_format,
            "normalization_flags": normalization.to_flags(),
        },
        list(corpus),
        [out_path],
        started,
        sketch=built,
    )


def _load_sketch(path: str) -> NgramSketch:
    return sketch_mod.load(path)


def _nonempty_records(path: str):
    """Stream records, failing fast (before any output exists) when empty."""
    stream = jsonl.iter_records(path)
    try:
        first = next(stream)
    except StopIteration:
        raise InputError(f"{path}: input file contains no records") from None
    return itertools.chain([first], stream)


@cli.command("score")
@click.argument("sketch_path", type=click.Path(dir_okay=False))
@click.argument("in_jsonl", type=click.Path(dir_okay=False))
@click.argument("out_jsonl", type=click.Path(dir_okay=False))
@click.option("--spans", is_flag=True, help="Include quoted-span triples per record.")
@click.option("--aggregate", "do_aggregate", is_flag=True, help="Print macro/micro summary to stdout.")
@_threads_option
def cmd_score(sketch_path, in_jsonl, out_jsonl, spans, do_aggregate, threads) -> None:
    """Score records of {id, text} against a sketch."""
    started = time.monotonic()
    loaded = _load_sketch(sketch_path)
    records = _nonempty_records(in_jsonl)
    rows = pipeline.score_records(
        loaded, records, with_spans=spans, threads=_effective_threads(threads)
    )
    sums = {"score": 0.0, "scoreable": 0, "matched": 0, "total": 0}
    if do_aggregate:
        # running sums so aggregation never buffers the record stream
        def observe(row_stream):
            for row in row_stream:
                if row["total_grams"] > 0:
                    sums["score"] += row["score"]
                    sums["scoreable"] += 1
                    sums["matched"] += row["matched_grams"]
                    sums["total"] += row["total_grams"]
                yield row

        rows = observe(rows)
    jsonl.write_records(out_jsonl, rows)
    if do_aggregate:
        if sums["scoreable"] == 0:
            raise ValueError("cannot aggregate: all results are degenerate")
        click.echo(
            json.dumps(
                {
                    "macro": sums["score"] / sums["scoreable"],
                    "micro": sums["matched"] / sums["total"],
                },
                ensure_ascii=False,
            )
        )
    _emit_manifest(
        "score",
        {"spans": spans, "aggregate": do_aggregate},
        [sketch_path, in_jsonl],
        [out_jsonl],
        started,
        sketch=loaded,
    )


@cli.command("highlight")
@click.argument("sketch_path", type=click.Path(dir_okay=False))
@click.argument("in_jsonl", required=False, type=click.Path(dir_okay=False))
@click.option("--text", "single_text", default=None, help="Highlight one string instead of a file.")
@click.option("--format", "render_format", type=click.Choice(["tty", "html", "json"]), default="tty", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write renderings here instead of stdout.")
def cmd_highlight(sketch_path, in_jsonl, single_text, render_format, out_path) -> None:
    """Render quoted-span highlights for texts."""
    started = time.monotonic()
    if (in_jsonl is None) == (single_text is None):
        raise click.UsageError("provide exactly one of IN_JSONL or --text")
    loaded = _load_sketch(sketch_path)
    policy = loaded.config.normalization

    if single_text is not None:
        texts = [single_text]
    else:
        texts = [
            pipeline._require(r, "text", str, "highlight input")
            for r in _nonempty_records(in_jsonl)
        ]
    lines = []
    for text in texts:
        norm = normalize(text, policy)
        lines.append(render_annotation(annotate(loaded, text), norm, render_format))
    rendered = "\n".join(lines) + "\n"
    if out_path is not None:
        Path(out_path).write_text(rendered, encoding="utf-8")
    else:
        click.echo(rendered, nl=False)
    _emit_manifest(
        "highlight",
        {"format": render_format, "text_mode": single_text is not None},
        [sketch_path] + ([in_jsonl] if in_jsonl else []),
        [out_path] if out_path else [],
        started,
        sketch=loaded,
    )


@cli.command("pairs")
@click.argument("sketch_path", type=click.Path(dir_okay=False))
@click.argument("in_jsonl", type=click.Path(dir_okay=False))
@click.argument("out_jsonl", type=click.Path(dir_okay=False))
@click.option("--delta-quip", type=float, default=0.1, show_default=True, help="Minimum quoting gap (preferred minus dispreferred).")
@click.option("--delta-length", type=float, default=0.1, show_default=True, help="Maximum relative length difference.")
@click.option("--no-length-constraint", is_flag=True, help="Relax the length constraint (ablation mode).")
@click.option("--expected-samples", type=int, default=None, help="Expected responses per prompt; deviations are counted in stats.")
@click.option("--stats-out", type=click.Path(dir_okay=False), default=None, help="Write synthesis stats here instead of stderr.")
def cmd_pairs(
    sketch_path, in_jsonl, out_jsonl, delta_quip, delta_length,
    no_length_constraint, expected_samples, stats_out,
) -> None:
    """Synthesize ranked preference pairs from sampled responses."""
    started = time.monotonic()
    loaded = _load_sketch(sketch_path)
    records = _nonempty_records(in_jsonl)
    config = SynthConfig(
        delta_quip=delta_quip,
        delta_length=delta_length,
        enforce_length=not no_length_constraint,
        num_samples_expected=expected_samples,
    )
    rows, stats = pipeline.build_pairs(loaded, records, config)
    jsonl.write_records(out_jsonl, rows)
    stats_doc = {"kind": "synth_stats", **stats}
    if stats_out is not None:
        Path(stats_out).write_text(
            json.dumps(stats_doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    else:
        click.echo(json.dumps(stats_doc, ensure_ascii=False), err=True)
    _emit_manifest(
        "pairs",
        {
            "delta_quip": delta_quip,
            "delta_length": delta_length,
            "enforce_length": not no_length_constraint,
            "expected_samples": expected_samples,
        },
        [sketch_path, in_jsonl],
        [out_jsonl],
        started,
        sketch=loaded,
    )


@cli.command("rerank")
@click.argument("sketch_path", type=click.Path(dir_okay=False))
@click.argument("in_jsonl", type=click.Path(dir_okay=False))
@click.argument("out_jsonl", type=click.Path(dir_okay=False))
def cmd_rerank(sketch_path, in_jsonl, out_jsonl) -> None:
    """Pick the highest-quoting response per prompt (best-of-N)."""
    started = time.monotonic()
    loaded = _load_sketch(sketch_path)
    records = _nonempty_records(in_jsonl)
    jsonl.write_records(out_jsonl, pipeline.rerank_records(loaded, records))
    _emit_manifest("rerank", {}, [sketch_path, in_jsonl], [out_jsonl], started, sketch=loaded)


@cli.command("dpo-metrics")
@click.argument("in_jsonl", type=click.Path(dir_okay=False))
@click.option("--beta", type=float, default=DEFAULT_DPO_BETA, show_default=True, help="Reward-scale hyperparameter.")
@click.option("--bins", type=int, default=20, show_default=True, help="Margin histogram bins.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write the summary here instead of stdout.")
def cmd_dpo_metrics(in_jsonl, beta, bins, out_path) -> None:
    """Summarize DPO loss, reward accuracy, and margins for a batch."""
    started = time.monotonic()
    records = _nonempty_records(in_jsonl)
    summary = pipeline.dpo_summary(records, beta=beta, bins=bins)
    rendered = json.dumps(summary, ensure_ascii=False)
    if out_path is not None:
        Path(out_path).write_text(rendered + "\n", encoding="utf-8")
    else:
        click.echo(rendered)
    _emit_manifest(
        "dpo-metrics",
        {"beta": beta, "bins": bins},
        [in_jsonl],
        [out_path] if out_path else [],
        started,
    )


@cli.command("rouge")
@click.argument("in_jsonl", type=click.Path(dir_okay=False))
@click.argument("out_jsonl", type=click.Path(dir_okay=False))
@click.option("--weighted-beta", type=float, default=1.0, show_default=True, help="Recall weight; 1.0 = plain F1.")
def cmd_rouge(in_jsonl, out_jsonl, weighted_beta) -> None:
    """Rouge-L per record plus corpus means."""
    started = time.monotonic()
    records = _nonempty_records(in_jsonl)
    rows, means = pipeline.rouge_records(records, beta=weighted_beta)
    jsonl.write_records(out_jsonl, rows)
    click.echo(json.dumps(means, ensure_ascii=False))
    _emit_manifest("rouge", {"weighted_beta": weighted_beta}, [in_jsonl], [out_jsonl], started)


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code taxonomy."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as exc:  # --help / --version
        return exc.exit_code
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.exceptions.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_BAD_INPUT
    except (SketchFormatError, ConfigMismatchError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_FORMAT
    except (UnicodeDecodeError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_BAD_INPUT
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
