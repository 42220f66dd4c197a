"""Synthetic corpora drawn from the stick-breaking generative story.

Used by the recovery tests: sample ground-truth topics with block structure
(each topic owns a slice of the vocabulary), draw per-document weights by
stick-breaking, then multinomial word counts from the mixed distribution.
"""

from __future__ import annotations

import numpy as np

from .corpus import BowDocument, Corpus, Vocabulary

__all__ = [
    "make_vocabulary", "make_topics", "sample_corpus", "generator_perplexity",
    "counts_to_corpus",
]


def make_vocabulary(vocab_size):
    return Vocabulary(tuple(f"w{i}" for i in range(vocab_size)))


def make_topics(rng, n_topics, vocab_size, inside_mass=0.85):
    """Ground-truth topics [n_topics, V] with most mass on disjoint blocks,
    so top-word lists are distinctive but every word keeps support."""
    block = vocab_size // n_topics
    topics = np.zeros((n_topics, vocab_size))
    for k in range(n_topics):
        lo = k * block
        hi = (k + 1) * block if k < n_topics - 1 else vocab_size
        inside = rng.dirichlet(2.0 * np.ones(hi - lo))
        outside = rng.dirichlet(2.0 * np.ones(vocab_size - (hi - lo)))
        topics[k, lo:hi] = inside_mass * inside
        topics[k, :lo] = (1.0 - inside_mass) * outside[:lo]
        topics[k, hi:] = (1.0 - inside_mass) * outside[lo:]
    return topics


def _gem_weights(rng, n_topics, alpha, size):
    """Stick-breaking weights truncated at n_topics: nu ~ Beta(1, alpha)."""
    nu = rng.beta(1.0, alpha, size=(size, n_topics - 1))
    cp = np.cumprod(1.0 - nu, axis=1)
    head = nu * np.concatenate([np.ones((size, 1)), cp[:, :-1]], axis=1)
    return np.concatenate([head, cp[:, -1:]], axis=1)


def sample_corpus(rng, topics, n_docs, alpha=1.0, mean_length=60, labels=None):
    """Returns (Corpus, pis) with pis the true per-document topic weights."""
    n_topics, vocab_size = topics.shape
    pis = _gem_weights(rng, n_topics, alpha, n_docs)
    lengths = rng.poisson(mean_length, size=n_docs) + 5
    docs = []
    for j in range(n_docs):
        theta = pis[j] @ topics
        counts = rng.multinomial(lengths[j], theta)
        ids = np.nonzero(counts)[0]
        label = labels[j] if labels is not None else None
        docs.append(BowDocument(ids, counts[ids], label=label))
    return Corpus(docs, vocab_size, split="train"), pis


def counts_to_corpus(counts, labels=None, split=None):
    """Dense [D, V] count matrix -> Corpus."""
    counts = np.asarray(counts)
    docs = []
    for j in range(counts.shape[0]):
        ids = np.nonzero(counts[j])[0]
        label = labels[j] if labels is not None else None
        docs.append(BowDocument(ids, counts[j, ids], label=label))
    return Corpus(docs, counts.shape[1], split=split)


def generator_perplexity(corpus, pis, topics):
    """Perplexity of the generating model scoring its own draws with the
    true per-document mixture: exp(-(1/D) sum_j (1/N_j) log p(x_j | pi_j))."""
    per_word = []
    for j, doc in enumerate(corpus.documents):
        if doc.num_words == 0:
            continue
        theta = pis[j] @ topics
        ll = float(np.sum(doc.counts * np.log(theta[doc.ids])))
        per_word.append(ll / doc.num_words)
    return float(np.exp(-np.mean(per_word)))
