"""Dataset ingestion, class splits, and N-way K-shot episode sampling.

Also provides a synthetic Gaussian episode generator with known class
centers, used as an oracle harness for prototype-quality tests.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .wordrep import LabelNameVectors, TokenSequence, embed_sequence, tokenize

log = logging.getLogger(__name__)


class SplitError(ValueError):
    """Raised when split label lists overlap or are otherwise invalid."""


class SamplingError(ValueError):
    """Raised when a corpus cannot supply the requested episode."""


@dataclass(frozen=True)
class LabeledCorpus:
    samples: tuple  # of TokenSequence
    classes: dict  # label -> tuple of sample indices
    split: str  # "train" | "valid" | "test"

    def __post_init__(self):
        seen = set()
        for label, idxs in self.classes.items():
            for i in idxs:
                if i in seen:
                    raise ValueError("class index lists must be disjoint")
                seen.add(i)
                if self.samples[i].label != label:
                    raise ValueError(f"sample {i} labeled {self.samples[i].label!r}, "
                                     f"listed under {label!r}")
        if len(seen) != len(self.samples):
            raise ValueError("class index lists must cover all samples")

    @property
    def dim(self) -> int:
        return self.samples[0].dim

    def n_classes(self) -> int:
        return len(self.classes)

    def fingerprint(self) -> str:
        """Stable content hash over (source_id, label) pairs."""
        import hashlib

        h = hashlib.sha256()
        for s in self.samples:
            h.update(s.source_id.encode("utf-8"))
            h.update(b"\x00")
            h.update(s.label.encode("utf-8"))
            h.update(b"\x01")
        return h.hexdigest()


@dataclass(frozen=True)
class Episode:
    n_way: int
    k_shot: int
    m_query: int
    support: tuple  # N groups, each a tuple of K TokenSequence
    query: tuple  # N*M TokenSequence, class-major sampling order
    label_names: LabelNameVectors
    episode_seed: int = 0

    def __post_init__(self):
        if len(self.support) != self.n_way:
            raise ValueError("support must hold one group per class")
        if any(len(g) != self.k_shot for g in self.support):
            raise ValueError("each class must contribute exactly K support items")
        if len(self.query) != self.n_way * self.m_query:
            raise ValueError("query must hold exactly N*M items")
        sup_ids = {s.source_id for g in self.support for s in g}
        if any(q.source_id in sup_ids for q in self.query):
            raise ValueError("support and query must be sample-disjoint")

    def query_targets(self) -> np.ndarray:
        """Class index (position in label_names.names) of each query sample."""
        index = {name: i for i, name in enumerate(self.label_names.names)}
        return np.array([index[q.label] for q in self.query])


@dataclass(frozen=True)
class SyntheticSpec:
    n_way: int = 5
    k_shot: int = 1
    m_query: int = 25
    dim: int = 16
    class_center_scale: float = 1.0
    intra_class_stddev: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_way, self.k_shot, self.m_query, self.dim) < 1:
            raise ValueError("all counts must be >= 1")
        if self.intra_class_stddev <= 0:
            raise ValueError("stddev must be > 0")


def _read_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, json.loads(line)


def load_dataset(data_path, split_path, table=None):
    """Load a dataset and partition it into train/valid/test corpora.

    ``data_path`` is either raw JSONL {"text","label"} (requires ``table``
    to embed) or the precomputed JSONL format of :mod:`fewtext.wordrep`.
    ``split_path`` holds {"train": [...], "valid": [...], "test": [...]}
    with pairwise-disjoint label lists. Samples whose label is in no list
    are dropped with a warning.
    """
    with open(split_path, "r", encoding="utf-8") as fh:
        split_spec = json.load(fh)
    lists = {name: list(split_spec[name]) for name in ("train", "valid", "test")}
    for a in ("train", "valid", "test"):
        for b in ("train", "valid", "test"):
            if a < b and set(lists[a]) & set(lists[b]):
                raise SplitError(
                    f"split lists {a!r} and {b!r} overlap: "
                    f"{sorted(set(lists[a]) & set(lists[b]))}"
                )

    # Sniff format from the first record.
    first = next(iter(_read_jsonl(data_path)), None)
    if first is None:
        raise SplitError(f"dataset {data_path} is empty")
    if "vectors" in first[1]:
        from .wordrep import load_precomputed

        samples = load_precomputed(data_path)
    else:
        if table is None:
            raise ValueError("raw-text datasets require a word-vector table")
        samples = []
        for lineno, obj in _read_jsonl(data_path):
            try:
                toks = tokenize(obj["text"])
                samples.append(
                    embed_sequence(table, toks, obj["label"], source_id=f"line{lineno}")
                )
            except ValueError as exc:
                log.warning("skipping line %d: %s", lineno, exc)

    label_to_split = {}
    for name, labels in lists.items():
        for lab in labels:
            label_to_split[lab] = name

    buckets = {name: [] for name in lists}
    dropped = set()
    for s in samples:
        where = label_to_split.get(s.label)
        if where is None:
            dropped.add(s.label)
            continue
        buckets[where].append(s)
    if dropped:
        log.warning("dropped samples with labels outside all splits: %s",
                    sorted(dropped))

    corpora = []
    for name in ("train", "valid", "test"):
        kept = buckets[name]
        classes: dict = {}
        for i, s in enumerate(kept):
            classes.setdefault(s.label, []).append(i)
        corpora.append(
            LabeledCorpus(
                samples=tuple(kept),
                classes={k: tuple(v) for k, v in classes.items()},
                split=name,
            )
        )
    return tuple(corpora)


def report_small_classes(corpus: LabeledCorpus, min_samples: int) -> list:
    """Labels with fewer than ``min_samples`` samples (too small for K+M)."""
    return sorted(
        lab for lab, idxs in corpus.classes.items() if len(idxs) < min_samples
    )


def sample_episode(
    corpus: LabeledCorpus,
    n: int,
    k: int,
    m: int,
    rng: np.random.Generator,
    label_embedder=None,
    episode_seed: int = 0,
) -> Episode:
    """Draw one N-way K-shot episode from a corpus.

    ``label_embedder`` maps an ordered list of label names to a
    :class:`LabelNameVectors`; when omitted, zero vectors are used (the
    adapter-bypass configurations never read them).
    """
    labels = sorted(corpus.classes)
    eligible = [lab for lab in labels if len(corpus.classes[lab]) >= k + m]
    if len(eligible) < n:
        short = [lab for lab in labels if len(corpus.classes[lab]) < k + m]
        raise SamplingError(
            f"need {n} classes with >= {k + m} samples, have {len(eligible)}"
            + (f"; deficient classes: {short}" if short else "")
        )
    chosen = list(rng.choice(len(eligible), size=n, replace=False))
    names = [eligible[i] for i in chosen]

    support, query = [], []
    for name in names:
        idxs = corpus.classes[name]
        picked = rng.choice(len(idxs), size=k + m, replace=False)
        samples = [corpus.samples[idxs[j]] for j in picked]
        support.append(tuple(samples[:k]))
        query.extend(samples[k:])

    if label_embedder is not None:
        label_names = label_embedder(names)
    else:
        label_names = LabelNameVectors(
            names=tuple(names), vectors=np.zeros((n, corpus.dim))
        )
    return Episode(
        n_way=n,
        k_shot=k,
        m_query=m,
        support=tuple(support),
        query=tuple(query),
        label_names=label_names,
        episode_seed=episode_seed,
    )


def gen_synthetic_episode(spec: SyntheticSpec, rng: np.random.Generator):
    """Generate one Gaussian episode with known class centers.

    Class centers are uniform in [-scale, scale]^dim; every sample is a
    single-token sequence whose vector is its center plus isotropic
    Gaussian noise. Label names embed to the true centers. Returns
    (episode, centers) so tests can check prototype-to-center distances.
    """
    n, k, m, d = spec.n_way, spec.k_shot, spec.m_query, spec.dim
    centers = rng.uniform(-spec.class_center_scale, spec.class_center_scale, (n, d))
    names = tuple(f"class_{i}" for i in range(n))

    counter = 0

    def draw(center, label):
        nonlocal counter
        vec = center + rng.normal(0.0, spec.intra_class_stddev, d)
        counter += 1
        return TokenSequence(
            tokens=("x",),
            vectors=vec[None, :],
            label=label,
            source_id=f"syn{counter}",
        )

    support = tuple(
        tuple(draw(centers[c], names[c]) for _ in range(k)) for c in range(n)
    )
    query = tuple(draw(centers[c], names[c]) for c in range(n) for _ in range(m))
    episode = Episode(
        n_way=n,
        k_shot=k,
        m_query=m,
        support=support,
        query=query,
        label_names=LabelNameVectors(names=names, vectors=centers.copy()),
        episode_seed=spec.seed,
    )
    return episode, centers


def gen_synthetic_corpus(n_classes: int, samples_per_class: int, dim: int,
                         class_center_scale: float, intra_class_stddev: float,
                         rng: np.random.Generator, split: str = "train",
                         label_prefix: str = "class"):
    """Gaussian corpus with known centers, for end-to-end synthetic runs.

    Returns (LabeledCorpus, {label: center}) so label names can be embedded
    to the true centers.
    """
    samples = []
    classes = {}
    centers = {}
    for c in range(n_classes):
        label = f"{label_prefix}_{c}"
        center = rng.uniform(-class_center_scale, class_center_scale, dim)
        centers[label] = center
        idxs = []
        for s in range(samples_per_class):
            vec = center + rng.normal(0.0, intra_class_stddev, dim)
            idxs.append(len(samples))
            samples.append(TokenSequence(
                tokens=("x",), vectors=vec[None, :], label=label,
                source_id=f"{split}:{label}:{s}"))
        classes[label] = tuple(idxs)
    corpus = LabeledCorpus(samples=tuple(samples), classes=classes, split=split)
    return corpus, centers


def center_label_embedder(centers: dict):
    """Label embedder mapping synthetic label names to their true centers."""

    def embed(names):
        return LabelNameVectors(
            names=tuple(names),
            vectors=np.array([centers[n] for n in names], dtype=float))

    return embed


def make_split(labels, counts, rng: np.random.Generator) -> dict:
    """Randomly assign labels to disjoint train/valid/test lists of given sizes."""
    n_train, n_valid, n_test = counts
    labels = sorted(labels)
    if n_train + n_valid + n_test > len(labels):
        raise SplitError(
            f"requested {n_train}+{n_valid}+{n_test} classes, only {len(labels)} exist"
        )
    order = list(rng.permutation(len(labels)))
    picked = [labels[i] for i in order]
    return {
        "train": sorted(picked[:n_train]),
        "valid": sorted(picked[n_train : n_train + n_valid]),
        "test": sorted(picked[n_train + n_valid : n_train + n_valid + n_test]),
    }
