"""quipforge: verify and encourage verbatim quoting from trusted corpora.

Core pieces: an n-gram membership sketch over a corpus (build, query,
merge, serialize), QUIP scoring and quoted-span annotation against it,
preference-pair synthesis for quote-alignment training, DPO loss and
reward diagnostics, and Rouge-L / length reporting.
"""

__version__ = "0.1.0"

from .dpo import DpoExample, DpoGradient, dpo_loss, dpo_loss_grad, margin, reward_accuracy
from .errors import ConfigMismatchError, InputError, QuipforgeError, SketchFormatError
from .metrics import RougeLScore, length_stats, rouge_l
from .scorer import QuipAnnotation, QuipResult, aggregate, annotate, quip, render_annotation
from .sketch import (
    CorpusStats,
    NgramSketch,
    NormalizationPolicy,
    SketchConfig,
    extract_ngrams,
    load,
    merge,
    normalize,
    save,
)
from .synthesizer import (
    PreferencePair,
    SampledResponse,
    SynthConfig,
    SynthStats,
    rerank_best_of_n,
    select_pair,
    sort_by_quip,
    synthesize_dataset,
)

__all__ = [
    "__version__",
    "CorpusStats",
    "ConfigMismatchError",
    "DpoExample",
    "DpoGradient",
    "InputError",
    "NgramSketch",
    "NormalizationPolicy",
    "PreferencePair",
    "QuipAnnotation",
    "QuipResult",
    "QuipforgeError",
    "RougeLScore",
    "SampledResponse",
    "SketchConfig",
    "SketchFormatError",
    "SynthConfig",
    "SynthStats",
    "aggregate",
    "annotate",
    "dpo_loss",
    "dpo_loss_grad",
    "extract_ngrams",
    "length_stats",
    "load",
    "margin",
    "merge",
    "normalize",
    "quip",
    "render_annotation",
    "rerank_best_of_n",
    "reward_accuracy",
    "rouge_l",
    "save",
    "select_pair",
    "sort_by_quip",
    "synthesize_dataset",
]
