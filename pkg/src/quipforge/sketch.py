"""Character n-gram membership sketch over a trusted corpus.

The sketch is a Bloom filter specialized for verbatim-quote detection:
documents are normalized, sliced into overlapping character n-grams
(default width 25), and each gram sets ``num_hashes`` positions in a bit
array. Queries may return false positives at a tunable rate but never
false negatives, so "this text appears in the corpus" answers are safe
to trust in the negative direction and cheap to verify in the positive.

Bit probes are derived by double hashing from a single 128-bit digest
(hash scheme 1, the only one currently defined):

    d  = xxh3_128(utf8(gram), seed=0)
    h1 = d >> 64
    h2 = (d & 0xFFFFFFFFFFFFFFFF) | 1      # forced odd so probes spread
    index_i = (h1 + i * h2) mod num_bits    # i = 0 .. num_hashes-1

Serialized form (little-endian):

    magic "NGSK" | format_version u32 | n u32 | num_hashes u32
    | hash_scheme_id u32 | normalization_flags u32
    | num_bits u64 | inserted_count u64 | 16 reserved zero bytes
    | ceil(num_bits/8) bit-array bytes (bit j lives at byte j>>3,
      position j&7, LSB-first)
    | crc32 u32 over all preceding bytes
"""

from __future__ import annotations

import math
import struct
import unicodedata
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable

import xxhash

from .errors import ConfigMismatchError, SketchFormatError

MAGIC = b"NGSK"
FORMAT_VERSION = 1
HASH_SCHEME_XXH3_128_DOUBLE = 1
_KNOWN_HASH_SCHEMES = frozenset({HASH_SCHEME_XXH3_128_DOUBLE})

DEFAULT_N = 25
DEFAULT_TARGET_FPR = 1e-3

_HEADER = struct.Struct("<4sIIIIIQQ16s")

_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class NormalizationPolicy:
    """Text canonicalization applied before indexing and scoring.

    The same policy must be used on both sides of a membership query, so
    the flags are recorded in the sketch header. Applying the policy twice
    yields the same output as applying it once.
    """

    unicode_nfc: bool = True
    lowercase: bool = True
    collapse_whitespace: bool = True

    def apply(self, text: str) -> str:
        if self.unicode_nfc:
            text = unicodedata.normalize("NFC", text)
        if self.lowercase:
            text = text.lower()
            if self.unicode_nfc:
                # lowercasing can denormalize (e.g. U+0130 -> "i" + combining
                # dot); renormalize so the output is NFC-stable
                text = unicodedata.normalize("NFC", text)
        if self.collapse_whitespace:
            text = " ".join(text.split())
        return text

    def to_flags(self) -> int:
        return (
            (1 if self.unicode_nfc else 0)
            | (2 if self.lowercase else 0)
            | (4 if self.collapse_whitespace else 0)
        )

    @classmethod
    def from_flags(cls, flags: int) -> "NormalizationPolicy":
        return cls(
            unicode_nfc=bool(flags & 1),
            lowercase=bool(flags & 2),
            collapse_whitespace=bool(flags & 4),
        )


def normalize(text: str, policy: NormalizationPolicy) -> str:
    """Apply ``policy`` to ``text``. Idempotent."""
    return policy.apply(text)


def extract_ngrams(text: str, n: int) -> list[str]:
    """Every contiguous window of ``n`` characters at stride 1, in order.

    Characters are Unicode scalar values, not bytes. Texts shorter than
    ``n`` yield an empty list; duplicate windows are preserved.
    """
    if n < 1:
        raise ValueError(f"n-gram width must be >= 1, got {n}")
    return [text[i : i + n] for i in range(len(text) - n + 1)]


def optimal_num_bits(expected_grams: int, target_fpr: float) -> int:
    """Bit-array size for ``expected_grams`` insertions at ``target_fpr``."""
    if expected_grams < 1:
        raise ValueError("expected_grams must be >= 1")
    if not 0.0 < target_fpr < 1.0:
        raise ValueError("target_fpr must be in (0, 1)")
    return max(8, math.ceil(expected_grams * math.log(1.0 / target_fpr) / (math.log(2.0) ** 2)))


def optimal_num_hashes(target_fpr: float) -> int:
    """Probe count paired with :func:`optimal_num_bits`."""
    if not 0.0 < target_fpr < 1.0:
        raise ValueError("target_fpr must be in (0, 1)")
    return min(64, max(1, math.ceil(math.log(1.0 / target_fpr) / math.log(2.0))))


@dataclass(frozen=True)
class SketchConfig:
    """Immutable sketch parameters; equality gates merge compatibility."""

    n: int = DEFAULT_N
    num_bits: int = 1 << 20
    num_hashes: int = 10
    hash_scheme_id: int = HASH_SCHEME_XXH3_128_DOUBLE
    normalization: NormalizationPolicy = NormalizationPolicy()

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.num_bits < 8:
            raise ValueError(f"num_bits must be >= 8, got {self.num_bits}")
        if not 1 <= self.num_hashes <= 64:
            raise ValueError(f"num_hashes must be in [1, 64], got {self.num_hashes}")
        if self.hash_scheme_id not in _KNOWN_HASH_SCHEMES:
            raise ValueError(f"unknown hash_scheme_id {self.hash_scheme_id}")

    @classmethod
    def sized_for(
        cls,
        expected_grams: int,
        target_fpr: float = DEFAULT_TARGET_FPR,
        *,
        n: int = DEFAULT_N,
        normalization: NormalizationPolicy | None = None,
    ) -> "SketchConfig":
        """Config with optimal sizing for an expected insertion count."""
        return cls(
            n=n,
            num_bits=optimal_num_bits(expected_grams, target_fpr),
            num_hashes=optimal_num_hashes(target_fpr),
            normalization=normalization if normalization is not None else NormalizationPolicy(),
        )


@dataclass
class CorpusStats:
    documents_ingested: int = 0
    ngrams_inserted: int = 0
    set_bit_fraction: float = 0.0
    estimated_fpr: float = 0.0

    def to_dict(self) -> dict:
        return {
            "documents_ingested": self.documents_ingested,
            "ngrams_inserted": self.ngrams_inserted,
            "set_bit_fraction": self.set_bit_fraction,
            "estimated_fpr": self.estimated_fpr,
        }


class NgramSketch:
    """Bit-array membership sketch over normalized character n-grams.

    Build once (single writer), then query from any number of threads:
    a populated sketch is treated as immutable by all query paths.
    """

    def __init__(self, config: SketchConfig):
        self.config = config
        self.bits = bytearray((config.num_bits + 7) // 8)
        self.inserted_count = 0

    # -- construction ----------------------------------------------------

    def insert_gram(self, gram: str) -> None:
        """Insert one already-normalized gram of exactly ``n`` characters."""
        if len(gram) != self.config.n:
            raise ValueError(
                f"gram must be exactly {self.config.n} characters, got {len(gram)}"
            )
        digest = xxhash.xxh3_128_intdigest(gram.encode("utf-8"))
        h1 = digest >> 64
        h2 = (digest & _MASK64) | 1
        bits = self.bits
        m = self.config.num_bits
        for i in range(self.config.num_hashes):
            idx = (h1 + i * h2) % m
            bits[idx >> 3] |= 1 << (idx & 7)
        self.inserted_count += 1

    def insert_document(self, text: str, stride: int = 1) -> int:
        """Normalize ``text`` and insert every ``stride``-th n-gram.

        Returns the number of grams inserted. Stride 1 (the default) gives
        exact substring semantics; larger strides trade recall for memory.
        """
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        norm = self.config.normalization.apply(text)
        n = self.config.n
        count = len(norm) - n + 1
        if count <= 0:
            return 0

        bits = self.bits
        m = self.config.num_bits
        k = self.config.num_hashes
        intdigest = xxhash.xxh3_128_intdigest
        inserted = 0
        if norm.isascii():
            data = norm.encode("ascii")
            for start in range(0, count, stride):
                digest = intdigest(data[start : start + n])
                h1 = digest >> 64
                h2 = (digest & _MASK64) | 1
                for i in range(k):
                    idx = (h1 + i * h2) % m
                    bits[idx >> 3] |= 1 << (idx & 7)
                inserted += 1
        else:
            for start in range(0, count, stride):
                digest = intdigest(norm[start : start + n].encode("utf-8"))
                h1 = digest >> 64
                h2 = (digest & _MASK64) | 1
                for i in range(k):
                    idx = (h1 + i * h2) % m
                    bits[idx >> 3] |= 1 << (idx & 7)
                inserted += 1
        self.inserted_count += inserted
        return inserted

    def ingest(self, documents: Iterable[str], stride: int = 1) -> CorpusStats:
        """Insert a stream of documents and report corpus statistics."""
        docs = 0
        grams = 0
        for doc in documents:
            grams += self.insert_document(doc, stride=stride)
            docs += 1
        return CorpusStats(
            documents_ingested=docs,
            ngrams_inserted=grams,
            set_bit_fraction=self.set_bit_fraction,
            estimated_fpr=self.estimated_fpr,
        )

    # -- queries ---------------------------------------------------------

    def contains(self, gram: str) -> bool:
        """Membership test for one already-normalized gram.

        The gram is taken verbatim (no normalization) and must be exactly
        ``n`` characters long. True for every inserted gram; false for
        others except with probability ~``estimated_fpr``.
        """
        if len(gram) != self.config.n:
            raise ValueError(
                f"gram must be exactly {self.config.n} characters, got {len(gram)}"
            )
        digest = xxhash.xxh3_128_intdigest(gram.encode("utf-8"))
        h1 = digest >> 64
        h2 = (digest & _MASK64) | 1
        bits = self.bits
        m = self.config.num_bits
        for i in range(self.config.num_hashes):
            idx = (h1 + i * h2) % m
            if not bits[idx >> 3] & (1 << (idx & 7)):
                return False
        return True

    def window_mask(self, normalized_text: str) -> list[bool]:
        """Membership of every stride-1 n-gram window of ``normalized_text``.

        Entry ``i`` corresponds to the window starting at character ``i``.
        The text must already be normalized with this sketch's policy.
        """
        n = self.config.n
        count = len(normalized_text) - n + 1
        if count <= 0:
            return []
        bits = self.bits
        m = self.config.num_bits
        k = self.config.num_hashes
        intdigest = xxhash.xxh3_128_intdigest
        mask = []
        append = mask.append
        if normalized_text.isascii():
            data = normalized_text.encode("ascii")
            for start in range(count):
                digest = intdigest(data[start : start + n])
                h1 = digest >> 64
                h2 = (digest & _MASK64) | 1
                hit = True
                for i in range(k):
                    idx = (h1 + i * h2) % m
                    if not bits[idx >> 3] & (1 << (idx & 7)):
                        hit = False
                        break
                append(hit)
        else:
            for start in range(count):
                digest = intdigest(normalized_text[start : start + n].encode("utf-8"))
                h1 = digest >> 64
                h2 = (digest & _MASK64) | 1
                hit = True
                for i in range(k):
                    idx = (h1 + i * h2) % m
                    if not bits[idx >> 3] & (1 << (idx & 7)):
                        hit = False
                        break
                append(hit)
        return mask

    # -- derived stats ---------------------------------------------------

    @property
    def set_bit_count(self) -> int:
        return int.from_bytes(self.bits, "little").bit_count()

    @property
    def set_bit_fraction(self) -> float:
        return self.set_bit_count / self.config.num_bits

    @property
    def estimated_fpr(self) -> float:
        """Analytic false-positive estimate from the observed fill.

        Uses the distinct-insertion approximation u = set_bits / k, giving
        (1 - e^(-k*u/m))^k = (1 - e^(-set_bits/m))^k. Monotone in the
        set-bit count.
        """
        s = self.set_bit_count
        if s == 0:
            return 0.0
        m = self.config.num_bits
        k = self.config.num_hashes
        return (1.0 - math.exp(-s / m)) ** k

    def stats(self, documents_ingested: int = 0) -> CorpusStats:
        return CorpusStats(
            documents_ingested=documents_ingested,
            ngrams_inserted=self.inserted_count,
            set_bit_fraction=self.set_bit_fraction,
            estimated_fpr=self.estimated_fpr,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NgramSketch):
            return NotImplemented
        return (
            self.config == other.config
            and self.bits == other.bits
            and self.inserted_count == other.inserted_count
        )


def analytic_fpr(num_insertions: int, num_bits: int, num_hashes: int) -> float:
    """Textbook Bloom estimate (1 - e^(-k*n/m))^k for n insertions."""
    return (1.0 - math.exp(-num_hashes * num_insertions / num_bits)) ** num_hashes


def merge(a: NgramSketch, b: NgramSketch) -> NgramSketch:
    """Union of two sketches built with identical configs.

    The merged sketch answers ``contains(g)`` as the OR of the inputs;
    insertion counts add. Enables sharded corpus builds.
    """
    if a.config != b.config:
        raise ConfigMismatchError(
            f"cannot merge sketches with different configs: {a.config} != {b.config}"
        )
    merged = NgramSketch(a.config)
    combined = int.from_bytes(a.bits, "little") | int.from_bytes(b.bits, "little")
    merged.bits = bytearray(combined.to_bytes(len(a.bits), "little"))
    merged.inserted_count = a.inserted_count + b.inserted_count
    return merged


def save(sketch: NgramSketch, sink: str | Path | BinaryIO) -> None:
    """Write the bit-exact serialized form; see module docstring for layout."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as fh:
            save(sketch, fh)
        return
    cfg = sketch.config
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        cfg.n,
        cfg.num_hashes,
        cfg.hash_scheme_id,
        cfg.normalization.to_flags(),
        cfg.num_bits,
        sketch.inserted_count,
        b"\x00" * 16,
    )
    crc = zlib.crc32(header)
    crc = zlib.crc32(sketch.bits, crc)
    sink.write(header)
    sink.write(sketch.bits)
    sink.write(struct.pack("<I", crc))


def load(source: str | Path | BinaryIO) -> NgramSketch:
    """Read a serialized sketch, validating header, scheme, and checksum."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return load(fh)
    header = source.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise SketchFormatError("truncated sketch file: incomplete header")
    (
        magic,
        version,
        n,
        num_hashes,
        hash_scheme_id,
        norm_flags,
        num_bits,
        inserted_count,
        _reserved,
    ) = _HEADER.unpack(header)
    if magic != MAGIC:
        raise SketchFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise SketchFormatError(f"unsupported format version {version}")
    if hash_scheme_id not in _KNOWN_HASH_SCHEMES:
        raise SketchFormatError(f"unknown hash_scheme_id {hash_scheme_id}")

    num_bytes = (num_bits + 7) // 8
    bits = source.read(num_bytes)
    if len(bits) < num_bytes:
        raise SketchFormatError("truncated sketch file: incomplete bit array")
    trailer = source.read(4)
    if len(trailer) < 4:
        raise SketchFormatError("truncated sketch file: missing checksum")
    (stored_crc,) = struct.unpack("<I", trailer)
    crc = zlib.crc32(header)
    crc = zlib.crc32(bits, crc)
    if crc != stored_crc:
        raise SketchFormatError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {crc:#010x}"
        )

    try:
        config = SketchConfig(
            n=n,
            num_bits=num_bits,
            num_hashes=num_hashes,
            hash_scheme_id=hash_scheme_id,
            normalization=NormalizationPolicy.from_flags(norm_flags),
        )
    except ValueError as exc:
        raise SketchFormatError(f"invalid header fields: {exc}") from exc
    sketch = NgramSketch(config)
    sketch.bits = bytearray(bits)
    sketch.inserted_count = inserted_count
    return sketch
