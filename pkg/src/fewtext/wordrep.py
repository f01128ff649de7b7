"""Word-level representations backed by file-based embedding tables.

Maps raw text and class label names to sequences of token vectors. All
tables and sequences are immutable after construction, so they can be
shared freely across episode workers.
"""

from __future__ import annotations

import json
import unicodedata
import zlib
from dataclasses import dataclass, field

import numpy as np

OOV_POLICIES = ("skip", "zero", "hash-bucket")

_HASH_BUCKETS = 1024
_HASH_SEED = 0x5EED


class LoadError(ValueError):
    """Raised when an embedding or precomputed file cannot be parsed."""


class EmptySequenceError(ValueError):
    """Raised when tokenization or OOV handling leaves no tokens."""


class LabelEmbeddingError(ValueError):
    """Raised when a label name has no representable token."""


def _hash_bucket_vectors(dim: int) -> np.ndarray:
    """1024 seeded random unit vectors used for the hash-bucket OOV policy."""
    rng = np.random.default_rng(_HASH_SEED)
    vecs = rng.standard_normal((_HASH_BUCKETS, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs


@dataclass(frozen=True)
class WordVectorTable:
    dim: int
    entries: dict = field(repr=False)
    oov_policy: str = "skip"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"embedding dim must be >= 1, got {self.dim}")
        if self.oov_policy not in OOV_POLICIES:
            raise ValueError(f"unknown oov policy {self.oov_policy!r}")

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def lookup(self, word: str):
        """Vector for a word, or None if OOV (resolution left to the caller)."""
        return self.entries.get(word)

    def oov_vector(self, word: str):
        """Vector substituted for an out-of-vocabulary word, or None to drop it."""
        if self.oov_policy == "skip":
            return None
        if self.oov_policy == "zero":
            return np.zeros(self.dim)
        bucket = zlib.crc32(word.encode("utf-8")) % _HASH_BUCKETS
        return _hash_bucket_vectors(self.dim)[bucket].copy()


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple
    vectors: np.ndarray  # (n, dim)
    label: str
    source_id: str

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise ValueError("vectors must be (len(tokens), dim)")
        if len(self.tokens) < 1:
            raise EmptySequenceError("token sequence must be non-empty")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class LabelNameVectors:
    names: tuple
    vectors: np.ndarray  # (N, dim)

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.names):
            raise ValueError("one vector per label name required")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def load_word_vectors(path, oov_policy: str = "skip") -> WordVectorTable:
    """Load a word2vec-style text file: header "<count> <dim>", then one
    "<word> <dim floats>" line per entry. Duplicate words: last one wins."""
    entries: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise LoadError(f"malformed header at line 1: {header.strip()!r}")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise LoadError(f"malformed header at line 1: {header.strip()!r}") from None
        if dim < 1 or count < 0:
            raise LoadError(f"malformed header at line 1: {header.strip()!r}")
        n_rows = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            n_rows += 1
            items = line.rstrip("\n").split(" ")
            word = items[0]
            raw = [x for x in items[1:] if x]
            if len(raw) != dim:
                raise LoadError(f"inconsistent vector width at line {lineno}")
            try:
                vec = np.array([float(x) for x in raw])
            except ValueError:
                raise LoadError(f"unreadable float at line {lineno}") from None
            entries[word] = vec
    if n_rows != count:
        raise LoadError(f"header declares {count} entries but file contains {n_rows}")
    return WordVectorTable(dim=dim, entries=entries, oov_policy=oov_policy)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace, strip surrounding punctuation per token."""
    if not text.strip():
        raise EmptySequenceError("text is empty after trimming")
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    if not tokens:
        raise EmptySequenceError(f"no tokens left after processing {text!r}")
    return tokens


def embed_sequence(
    table: WordVectorTable, tokens, label: str, source_id: str = ""
) -> TokenSequence:
    """Look tokens up in the table, resolving OOV words per the table policy."""
    if not tokens:
        raise EmptySequenceError("token list is empty")
    kept, vecs = [], []
    for tok in tokens:
        vec = table.lookup(tok)
        if vec is None:
            vec = table.oov_vector(tok)
            if vec is None:  # skip policy
                continue
        kept.append(tok)
        vecs.append(vec)
    if not vecs:
        raise EmptySequenceError(f"all tokens OOV under skip policy: {tokens}")
    return TokenSequence(
        tokens=tuple(kept),
        vectors=np.array(vecs, dtype=float),
        label=label,
        source_id=source_id,
    )


def embed_label_names(table: WordVectorTable, names) -> LabelNameVectors:
    """Embed each label name as the mean of its token vectors.

    Unknown name tokens fall back to the zero policy so a partially known
    name still embeds; a fully unknown name is an error.
    """
    vectors = []
    for name in names:
        toks = tokenize(name)
        vecs = [table.lookup(t) for t in toks]
        vecs = [v for v in vecs if v is not None]
        if not vecs:
            raise LabelEmbeddingError(f"label {name!r} has no representable token")
        vectors.append(np.mean(vecs, axis=0))
    return LabelNameVectors(names=tuple(names), vectors=np.array(vectors, dtype=float))


def load_precomputed(path) -> list:
    """Load precomputed token sequences from JSONL.

    Each line: {"id": str, "label": str, "tokens": [...], "vectors": [[...], ...]}.
    The vector width of the first line is enforced for all lines.
    """
    sequences = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"invalid JSON at line {lineno}: {exc}") from None
            try:
                vectors = np.array(obj["vectors"], dtype=float)
                tokens = tuple(obj["tokens"])
                label = obj["label"]
                source_id = obj["id"]
            except (KeyError, ValueError) as exc:
                raise LoadError(f"bad record at line {lineno}: {exc}") from None
            if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
                raise LoadError(f"vectors/tokens shape mismatch at line {lineno}")
            if dim is None:
                dim = vectors.shape[1]
            elif vectors.shape[1] != dim:
                raise LoadError(
                    f"inconsistent vector width at line {lineno}: "
                    f"expected {dim}, got {vectors.shape[1]}"
                )
            sequences.append(
                TokenSequence(
                    tokens=tokens, vectors=vectors, label=label, source_id=source_id
                )
            )
    return sequences
