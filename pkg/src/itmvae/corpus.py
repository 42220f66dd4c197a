"""Bag-of-words corpus loading, validation, and deterministic splits.

File formats:
  vocabulary   one token per line, UTF-8
  corpus       one document per line: optional `label<TAB>` prefix, then
               space-separated `id:count` pairs with zero-based word ids
  manifest     JSON {"seed": int, "train": [...], "valid": [...], "test": [...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CorpusError", "Vocabulary", "BowDocument", "Corpus",
    "load_vocabulary", "load_bow", "save_bow", "count_vector", "count_matrix",
    "split_corpus", "save_manifest", "load_manifest", "apply_manifest",
    "subset_by_labels",
]


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple

    @property
    def size(self):
        return len(self.tokens)

    def index(self, token):
        # built lazily would be nicer for huge vocabularies; fine at this scale
        return self.tokens.index(token)

    def __len__(self):
        return len(self.tokens)


class BowDocument:
    """Sparse counts for one document: sorted unique ids, positive counts."""

    __slots__ = ("ids", "counts", "label")

    def __init__(self, ids, counts, label=None):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.label = label

    @property
    def entries(self):
        return list(zip(self.ids.tolist(), self.counts.tolist()))

    @property
    def num_words(self):
        return int(self.counts.sum())

    def __eq__(self, other):
        return (isinstance(other, BowDocument)
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.counts, other.counts)
                and self.label == other.label)

    def __repr__(self):
        return f"BowDocument(n_unique={len(self.ids)}, N={self.num_words}, label={self.label!r})"


@dataclass
class Corpus:
    documents: list
    vocab_size: int
    split: str = None
    metadata: dict = field(default_factory=dict)

    @property
    def num_docs(self):
        return len(self.documents)

    @property
    def labels(self):
        return [d.label for d in self.documents]

    def __len__(self):
        return len(self.documents)

    def __eq__(self, other):
        return (isinstance(other, Corpus)
                and self.vocab_size == other.vocab_size
                and self.documents == other.documents)


def load_vocabulary(path):
    tokens, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.rstrip("\n")
            if not token.strip():
                raise CorpusError(f"empty token at line {lineno}")
            if token in seen:
                raise CorpusError(f"duplicate token '{token}' at line {lineno}")
            seen[token] = lineno
            tokens.append(token)
    if not tokens:
        raise CorpusError("empty vocabulary")
    return Vocabulary(tuple(tokens))


def _vocab_size(vocab):
    return vocab.size if isinstance(vocab, Vocabulary) else int(vocab)


def _parse_line(line, lineno, vsize):
    label = None
    body = line
    if "\t" in line:
        label, body = line.split("\t", 1)
    pairs = body.split()
    counts = {}
    for pair in pairs:
        head, sep, tail = pair.partition(":")
        if not sep:
            raise CorpusError(f"malformed pair '{pair}' at line {lineno}")
        try:
            wid, cnt = int(head), int(tail)
        except ValueError:
            raise CorpusError(f"malformed pair '{pair}' at line {lineno}") from None
        if wid < 0 or wid >= vsize:
            raise CorpusError(f"word id {wid} out of range (V={vsize}) at line {lineno}")
        if cnt <= 0:
            raise CorpusError(f"count {cnt} must be positive at line {lineno}")
        counts[wid] = counts.get(wid, 0) + cnt
    ids = sorted(counts)
    return BowDocument(ids, [counts[i] for i in ids], label=label)


def load_bow(path, vocab, split=None):
    """Parse a sparse corpus file against a Vocabulary (or plain size).

    Blank lines are skipped and tallied in Corpus.metadata["blank_lines"].
    Duplicate ids within a line are merged by summing; ids come out sorted.
    A line holding only a label yields an empty document (evaluation-side
    concern; training rejects those).
    """
    vsize = _vocab_size(vocab)
    docs, blanks = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                blanks += 1
                continue
            docs.append(_parse_line(line, lineno, vsize))
    if not docs:
        raise CorpusError(f"no documents in {path}")
    return Corpus(docs, vsize, split=split, metadata={"blank_lines": blanks})


def save_bow(corpus, path):
    """Inverse of load_bow, line per document."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            body = " ".join(f"{i}:{c}" for i, c in zip(doc.ids, doc.counts))
            if doc.label is not None:
                fh.write(f"{doc.label}\t{body}\n")
            else:
                fh.write(body + "\n")


def count_vector(doc, vsize):
    vec = np.zeros(vsize, dtype=np.float64)
    vec[doc.ids] = doc.counts
    return vec


def count_matrix(corpus, indices=None):
    """Dense [B, V] count matrix for the given document indices (all docs
    when indices is None)."""
    docs = corpus.documents if indices is None else [corpus.documents[i] for i in indices]
    mat = np.zeros((len(docs), corpus.vocab_size), dtype=np.float64)
    for row, doc in enumerate(docs):
        mat[row, doc.ids] = doc.counts
    return mat


def split_corpus(corpus, fractions, seed):
    """Shuffle-split into train/valid/test with a seeded permutation.

    fractions = (train, valid) as fractions of D; the remainder is test.
    Returns (train, valid, test, manifest). The same seed and fractions
    always yield the same index sets.
    """
    f_train, f_valid = fractions
    if f_train <= 0 or f_valid < 0 or f_train + f_valid > 1.0 + 1e-9:
        raise CorpusError(f"bad split fractions {fractions}")
    d = corpus.num_docs
    perm = np.random.default_rng(seed).permutation(d)
    n_train = int(f_train * d)
    n_valid = int(f_valid * d)
    manifest = {
        "seed": int(seed),
        "train": sorted(int(i) for i in perm[:n_train]),
        "valid": sorted(int(i) for i in perm[n_train:n_train + n_valid]),
        "test": sorted(int(i) for i in perm[n_train + n_valid:]),
    }
    return (*apply_manifest(corpus, manifest), manifest)


def apply_manifest(corpus, manifest):
    parts = []
    for tag in ("train", "valid", "test"):
        docs = [corpus.documents[i] for i in manifest[tag]]
        parts.append(Corpus(docs, corpus.vocab_size, split=tag))
    return tuple(parts)


def save_manifest(manifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
        fh.write("\n")


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("seed", "train", "valid", "test"):
        if key not in manifest:
            raise CorpusError(f"split manifest missing key '{key}'")
    return manifest


def subset_by_labels(corpus, labels):
    """Documents whose label is in `labels`, preserving order."""
    wanted = set(labels)
    missing = wanted - set(corpus.labels)
    if missing:
        raise CorpusError(f"labels not present in corpus: {sorted(missing)}")
    docs = [d for d in corpus.documents if d.label in wanted]
    return Corpus(docs, corpus.vocab_size, split=corpus.split,
                  metadata={"labels": sorted(wanted)})
