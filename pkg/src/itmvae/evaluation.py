"""Model quality metrics: ELBO perplexity, NPMI coherence, effective topics,
coverage and sparsity curves, top-word extraction, report assembly.

Posterior topic weights for the summaries use the analytic Kumaraswamy
mean pushed through stick-breaking, so summaries are deterministic;
perplexity uses sampled single-draw bounds (pass an rng for control).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import stochastic as st
from .corpus import count_matrix
from .engine import softmax
from .models import elbo_hier, elbo_hp, elbo_itmvae

__all__ = [
    "EvaluationError", "PosteriorSummary", "CoherenceResult", "EffectiveTopics",
    "perplexity", "npmi_coherence", "effective_topics", "coverage_curve",
    "sparsity_curve", "topics_to_coverage", "top_words", "posterior_summary",
    "report", "save_report", "save_curve_csv",
]

_BATCH = 256


class EvaluationError(ValueError):
    pass


def _per_doc_elbo(model, counts, rng):
    cfg = model.config
    b = counts.shape[0]
    noise = rng.uniform(size=(b, cfg.K - 1))
    if cfg.variant == "hp":
        elbo = elbo_hp(model, counts, noise, dataset_size=None)
    elif cfg.variant == "hier":
        gum = st.gumbel_from_uniform(rng.uniform(size=(b, cfg.K, cfg.T)))
        elbo, _ = elbo_hier(model, counts, noise, gum, cfg.temp_final)
    else:
        elbo = elbo_itmvae(model, counts, noise)
    return elbo.data


def perplexity(model, corpus, samples=1, rng=None):
    """exp(-(1/D) sum_j (1/N_j) ELBO_j), ELBO averaged over `samples`
    noise draws. Empty documents are skipped (they have no words to
    normalize by); a corpus of only empty documents is an error.
    """
    if samples < 1:
        raise EvaluationError(f"samples must be >= 1, got {samples}")
    if rng is None:
        rng = np.random.default_rng(0)
    live = [i for i, doc in enumerate(corpus.documents) if doc.num_words > 0]
    if not live:
        raise EvaluationError("perplexity undefined: all documents are empty")
    lengths = np.array([corpus.documents[i].num_words for i in live], dtype=np.float64)
    acc = np.zeros(len(live))
    was_training = model.training
    model.training = False
    try:
        for _ in range(samples):
            for start in range(0, len(live), _BATCH):
                chunk = live[start:start + _BATCH]
                counts = count_matrix(corpus, chunk)
                acc[start:start + len(chunk)] += _per_doc_elbo(model, counts, rng)
    finally:
        model.training = was_training
    per_word = acc / samples / lengths
    # A very loose bound (e.g. an untrained model) can overflow exp; inf is
    # the honest value there, so only the warning is suppressed.
    with np.errstate(over="ignore"):
        return float(np.exp(-np.mean(per_word)))


@dataclass
class CoherenceResult:
    per_topic: list
    mean: float
    skipped_pairs: int


def npmi_coherence(top_lists, ref, n):
    """Normalized PMI over all word pairs in each topic's first n words,
    with document-level co-occurrence on `ref` and add-eps smoothing.
    Words absent from ref are skipped and tallied in skipped_pairs. A pair
    present in every document carries no information and scores 0.
    """
    if n < 2:
        raise EvaluationError(f"need n >= 2 words per topic, got {n}")
    eps = 1e-12
    d = ref.num_docs
    words = sorted({w for lst in top_lists for w in lst[:n]})
    col = {w: i for i, w in enumerate(words)}
    presence = np.zeros((d, len(words)), dtype=bool)
    for j, doc in enumerate(ref.documents):
        for w in doc.ids:
            i = col.get(int(w))
            if i is not None:
                presence[j, i] = True
    df = presence.sum(axis=0).astype(np.float64)
    joint = (presence.T.astype(np.float64) @ presence.astype(np.float64))

    per_topic, skipped = [], 0
    for lst in top_lists:
        scores = []
        top = lst[:n]
        for i in range(len(top)):
            for j in range(i + 1, len(top)):
                wi, wj = col[top[i]], col[top[j]]
                if df[wi] == 0 or df[wj] == 0:
                    skipped += 1
                    continue
                p_i, p_j = df[wi] / d, df[wj] / d
                p_ij = joint[wi, wj] / d + eps
                denom = -np.log(p_ij)
                if denom <= 0.0:
                    scores.append(0.0)
                    continue
                scores.append(float(np.clip(np.log(p_ij / (p_i * p_j)) / denom, -1.0, 1.0)))
        per_topic.append(float(np.mean(scores)) if scores else 0.0)
    return CoherenceResult(per_topic, float(np.mean(per_topic)), skipped)


@dataclass
class PosteriorSummary:
    weights: np.ndarray    # [D, n_topics], rows on the simplex
    argmax: np.ndarray     # [D]


def posterior_summary(model, corpus):
    """Per-document posterior topic weights from the analytic Kumaraswamy
    means; for hier, document stick weights are projected onto the corpus
    atoms through the indicator posteriors."""
    rows = []
    was_training = model.training
    model.training = False
    try:
        for start in range(0, corpus.num_docs, _BATCH):
            idx = list(range(start, min(start + _BATCH, corpus.num_docs)))
            vo = model.encode(count_matrix(corpus, idx))
            nu = st.kumaraswamy_mean(vo.a.data, vo.b.data)
            pi = st.stick_break(np.clip(nu, st.EPS, 1.0 - st.EPS))
            if model.config.variant == "hier":
                phi = softmax(vo.indicator_logits.data, axis=-1)
                pi = np.einsum("bk,bkt->bt", pi, phi)
            rows.append(pi)
    finally:
        model.training = was_training
    weights = np.concatenate(rows, axis=0)
    return PosteriorSummary(weights=weights, argmax=np.argmax(weights, axis=1))


@dataclass
class EffectiveTopics:
    count: int
    ids: list
    argmax_counts: np.ndarray


def effective_topics(summary, tau=0.005):
    """Topics that are the argmax of strictly more than tau*D documents."""
    if not 0.0 < tau < 1.0:
        raise EvaluationError(f"tau must be in (0,1), got {tau}")
    d, n_topics = summary.weights.shape
    counts = np.bincount(summary.argmax, minlength=n_topics)
    ids = np.nonzero(counts > tau * d)[0]
    return EffectiveTopics(int(len(ids)), ids.tolist(), counts)


def coverage_curve(summary):
    """Cumulative sum of corpus-average topic weights, sorted descending."""
    avg = summary.weights.mean(axis=0)
    return np.cumsum(np.sort(avg)[::-1])


def topics_to_coverage(curve, level=0.9):
    """Smallest rank whose cumulative coverage reaches `level` (1-based)."""
    hits = np.nonzero(np.asarray(curve) >= level)[0]
    if hits.size == 0:
        return len(curve)
    return int(hits[0]) + 1


def sparsity_curve(summary):
    """log of the rank-wise average of per-document sorted weights."""
    sorted_rows = np.sort(summary.weights, axis=1)[:, ::-1]
    return np.log(np.maximum(sorted_rows.mean(axis=0), 1e-12))


def top_words(bank, n):
    """Per-topic word ids of the n largest softmax(phi_k) entries; ties go
    to the lower word id (stable sort on the negated probabilities)."""
    probs = bank.topic_distributions()
    if n > probs.shape[1]:
        raise EvaluationError(f"n={n} exceeds vocabulary size {probs.shape[1]}")
    order = np.argsort(-probs, axis=1, kind="stable")
    return [row[:n].tolist() for row in order]


def report(model, score_corpus, summary_corpus, vocab, rng=None, samples=1, tau=0.005):
    """Assemble the full metrics report.

    perplexity is scored on score_corpus (typically the test split);
    coherence, effective topics, and both curves come from summary_corpus
    (typically the training split, which is also the NPMI reference).
    coherence_mean averages effective topics only; the all-topics mean is
    reported alongside.
    """
    ppl = perplexity(model, score_corpus, samples=samples, rng=rng)
    summary = posterior_summary(model, summary_corpus)
    eff = effective_topics(summary, tau=tau)
    n_topics = summary.weights.shape[1]
    lists10 = top_words(model.bank, min(10, summary_corpus.vocab_size))[:n_topics]
    coh5 = npmi_coherence(lists10, summary_corpus, min(5, summary_corpus.vocab_size))
    coh10 = npmi_coherence(lists10, summary_corpus, min(10, summary_corpus.vocab_size))
    per_topic = []
    for k, lst in enumerate(lists10):
        per_topic.append({
            "id": k,
            "top5": [vocab.tokens[i] for i in lst[:5]],
            "top10": [vocab.tokens[i] for i in lst],
            "npmi5": coh5.per_topic[k],
            "npmi10": coh10.per_topic[k],
            "argmax_count": int(eff.argmax_counts[k]),
        })
    topic_scores = np.array([(coh5.per_topic[k] + coh10.per_topic[k]) / 2.0
                             for k in range(n_topics)])
    if eff.ids:
        coherence_mean = float(np.mean(topic_scores[eff.ids]))
    else:
        coherence_mean = float(np.mean(topic_scores))
    empty_docs = sum(1 for doc in score_corpus.documents if doc.num_words == 0)
    return {
        "perplexity": ppl,
        "coherence_mean": coherence_mean,
        "coherence_mean_all_topics": float(np.mean(topic_scores)),
        "per_topic": per_topic,
        "effective_topics": eff.count,
        "effective_topic_ids": eff.ids,
        "coverage": coverage_curve(summary).tolist(),
        "sparsity_log": sparsity_curve(summary).tolist(),
        "skipped_empty_docs": empty_docs,
        "skipped_npmi_pairs": coh5.skipped_pairs + coh10.skipped_pairs,
    }


def save_report(rep, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rep, fh, indent=2)
        fh.write("\n")


def save_curve_csv(values, path):
    """Write a curve as `index,value` rows, 1-based rank index."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "value"])
        for i, v in enumerate(values, start=1):
            writer.writerow([i, f"{float(v):.10g}"])
