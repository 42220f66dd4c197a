"""Evaluation metrics: perplexity on degenerate predictors, NPMI coherence on
hand-built co-occurrence tables, topic-usage summaries, curve constructions,
and the report assembly."""

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from itmvae.corpus import Vocabulary
from itmvae.evaluation import (
    EvaluationError,
    PosteriorSummary,
    coverage_curve,
    effective_topics,
    npmi_coherence,
    perplexity,
    posterior_summary,
    report,
    save_curve_csv,
    save_report,
    sparsity_curve,
    top_words,
    topics_to_coverage,
)
from itmvae.models import ModelConfig, TopicModel
from conftest import make_corpus


def uniform_model(v, variant="itmvae"):
    """K=1 model with a flat topic: predicts 1/V for every word, zero KL."""
    cfg = ModelConfig(variant=variant, vocab_size=v, K=1, hidden_sizes=(4,))
    model = TopicModel(cfg, np.random.default_rng(0))
    model.bank.phi.data[...] = 0.0
    return model


# ---------------------------------------------------------------------
# perplexity
# ---------------------------------------------------------------------


def test_uniform_predictor_perplexity_equals_vocab_size():
    v = 7
    corpus = make_corpus([([0, 3], [2, 1], None), ([5], [4], None)], v)
    np.testing.assert_allclose(perplexity(uniform_model(v), corpus), v, rtol=1e-12)


def test_single_word_probability_half_gives_two():
    corpus = make_corpus([([0], [1], None)], 2)
    np.testing.assert_allclose(perplexity(uniform_model(2), corpus), 2.0,
                               rtol=1e-12)


def test_perplexity_skips_empty_documents():
    v = 4
    with_empty = make_corpus([([1], [2], None), ([], [], None)], v)
    without = make_corpus([([1], [2], None)], v)
    model = uniform_model(v)
    np.testing.assert_allclose(perplexity(model, with_empty),
                               perplexity(model, without), rtol=1e-12)


def test_perplexity_all_empty_corpus_is_an_error():
    corpus = make_corpus([([], [], None), ([], [], None)], 4)
    with pytest.raises(EvaluationError, match="empty"):
        perplexity(uniform_model(4), corpus)


def test_perplexity_rejects_bad_sample_count():
    corpus = make_corpus([([0], [1], None)], 4)
    with pytest.raises(EvaluationError, match="samples"):
        perplexity(uniform_model(4), corpus, samples=0)


def test_perplexity_is_deterministic_given_rng(trained_prod):
    model, _, corpus = trained_prod
    p1 = perplexity(model, corpus, samples=3, rng=np.random.default_rng(9))
    p2 = perplexity(model, corpus, samples=3, rng=np.random.default_rng(9))
    assert p1 == p2 and np.isfinite(p1) and p1 > 1.0


def test_perplexity_preserves_training_flag(trained_prod):
    model, _, corpus = trained_prod
    model.training = True
    perplexity(model, corpus)
    assert model.training is True
    model.training = False


# ---------------------------------------------------------------------
# NPMI coherence
# ---------------------------------------------------------------------


def docs_corpus(id_sets, v=8):
    return make_corpus([(sorted(s), [1] * len(s), None) for s in id_sets], v)


def test_npmi_independent_words_score_zero():
    # P(0)=P(1)=1/2, P(0,1)=1/4: pointwise mutual information is zero
    ref = docs_corpus([{0, 1}, {0}, {1}, set()])
    res = npmi_coherence([[0, 1]], ref, n=2)
    np.testing.assert_allclose(res.per_topic, [0.0], atol=1e-9)


def test_npmi_perfect_association_scores_one():
    ref = docs_corpus([{0, 1}, {0, 1}, set(), set()])
    res = npmi_coherence([[0, 1]], ref, n=2)
    np.testing.assert_allclose(res.per_topic, [1.0], atol=1e-9)
    np.testing.assert_allclose(res.mean, 1.0, atol=1e-9)


def test_npmi_pair_present_everywhere_scores_zero():
    ref = docs_corpus([{0, 1}] * 4)
    res = npmi_coherence([[0, 1]], ref, n=2)
    assert res.per_topic == [0.0]


def test_npmi_disjoint_words_are_negative_with_floor():
    ref = docs_corpus([{0}, {0}, {1}, {1}])
    res = npmi_coherence([[0, 1]], ref, n=2)
    assert -1.0 <= res.per_topic[0] < 0.0


def test_npmi_absent_words_are_skipped_and_counted():
    ref = docs_corpus([{0, 1}, {0}])
    res = npmi_coherence([[0, 7], [0, 1]], ref, n=2)
    assert res.skipped_pairs == 1
    assert res.per_topic[0] == 0.0   # no scoreable pairs left


def test_npmi_is_symmetric_in_word_order():
    ref = docs_corpus([{0, 1, 2}, {0, 1}, {2}, {1}, {0, 2}])
    fwd = npmi_coherence([[0, 1, 2]], ref, n=3)
    rev = npmi_coherence([[2, 1, 0]], ref, n=3)
    np.testing.assert_allclose(fwd.per_topic, rev.per_topic, rtol=1e-12)


def test_npmi_rejects_degenerate_n():
    ref = docs_corpus([{0}])
    with pytest.raises(EvaluationError, match="n >= 2"):
        npmi_coherence([[0, 1]], ref, n=1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_npmi_values_always_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    v = 6
    sets = [set(rng.choice(v, size=rng.integers(1, v), replace=False).tolist())
            for _ in range(8)]
    ref = docs_corpus(sets, v)
    lists = [rng.permutation(v)[:4].tolist() for _ in range(3)]
    res = npmi_coherence(lists, ref, n=4)
    assert all(-1.0 <= s <= 1.0 for s in res.per_topic)


# ---------------------------------------------------------------------
# posterior summaries and topic-usage metrics
# ---------------------------------------------------------------------


def summary_from(weights):
    weights = np.asarray(weights, dtype=np.float64)
    return PosteriorSummary(weights=weights, argmax=np.argmax(weights, axis=1))


def weights_with_argmax_counts(d, k, counts):
    """Rows argmax topic t for exactly counts[t] documents."""
    w = np.full((d, k), 0.1 / (k - 1))
    row = 0
    for topic, c in enumerate(counts):
        for _ in range(c):
            w[row] = (1 - 0.9) / (k - 1)
            w[row, topic] = 0.9
            row += 1
    w[row:, 0] = 0.9
    w[row:] /= w[row:].sum(axis=1, keepdims=True)
    w[:row] /= w[:row].sum(axis=1, keepdims=True) if row else 1
    return w


def test_effective_topics_strict_threshold():
    d, k = 1000, 4
    # topic 1 argmax in 6 docs clears tau*D=5; topic 2 with 5 does not
    w = weights_with_argmax_counts(d, k, [0, 6, 5, 0])
    eff = effective_topics(summary_from(w), tau=0.005)
    assert 1 in eff.ids
    assert 2 not in eff.ids
    assert eff.argmax_counts[1] == 6 and eff.argmax_counts[2] == 5


def test_effective_topics_degenerate_single_topic():
    w = np.zeros((50, 5))
    w[:, 3] = 1.0
    eff = effective_topics(summary_from(w), tau=0.005)
    assert eff.count == 1 and eff.ids == [3]


def test_effective_topics_bounds():
    rng = np.random.default_rng(1)
    w = rng.dirichlet(np.ones(6), size=40)
    eff = effective_topics(summary_from(w), tau=0.01)
    distinct = len(set(np.argmax(w, axis=1).tolist()))
    assert eff.count <= 6
    assert eff.count <= distinct


def test_effective_topics_rejects_bad_tau():
    with pytest.raises(EvaluationError, match="tau"):
        effective_topics(summary_from(np.ones((2, 2)) / 2), tau=0.0)


def test_coverage_curve_hand_value():
    curve = coverage_curve(summary_from([[0.5, 0.3, 0.2]]))
    np.testing.assert_allclose(curve, [0.5, 0.8, 1.0], rtol=1e-12)


def test_coverage_curve_single_topic():
    np.testing.assert_allclose(coverage_curve(summary_from([[1.0]])), [1.0])


def test_coverage_curve_sorts_before_accumulating():
    curve = coverage_curve(summary_from([[0.2, 0.5, 0.3]]))
    np.testing.assert_allclose(curve, [0.5, 0.8, 1.0], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 10), st.integers(1, 30))
def test_coverage_curve_properties(seed, k, d):
    rng = np.random.default_rng(seed)
    curve = coverage_curve(summary_from(rng.dirichlet(np.ones(k), size=d)))
    assert np.all(np.diff(curve) >= -1e-12)          # nondecreasing
    assert np.all(np.diff(np.diff(curve)) <= 1e-12)  # nonincreasing increments
    np.testing.assert_allclose(curve[-1], 1.0, atol=1e-6)


def test_topics_to_coverage_rank():
    curve = [0.5, 0.8, 0.95, 1.0]
    assert topics_to_coverage(curve, level=0.9) == 3
    assert topics_to_coverage(curve, level=0.5) == 1
    assert topics_to_coverage([0.3, 0.5], level=0.9) == 2  # never reached


def test_sparsity_curve_hand_value():
    curve = sparsity_curve(summary_from([[0.8, 0.2], [0.6, 0.4]]))
    np.testing.assert_allclose(curve, [np.log(0.7), np.log(0.3)], rtol=1e-12)


def test_sparsity_curve_uniform_documents():
    k = 5
    curve = sparsity_curve(summary_from(np.full((10, k), 1.0 / k)))
    np.testing.assert_allclose(curve, np.log(1.0 / k), rtol=1e-12)


def test_sparsity_curve_one_hot_documents_hit_floor():
    w = np.zeros((4, 3))
    w[:, 0] = 1.0
    curve = sparsity_curve(summary_from(w))
    np.testing.assert_allclose(curve[0], 0.0, atol=1e-12)
    np.testing.assert_allclose(curve[1:], np.log(1e-12))


def test_sparsity_curve_is_nonincreasing(trained_prod):
    model, _, corpus = trained_prod
    curve = sparsity_curve(posterior_summary(model, corpus))
    assert np.all(np.diff(curve) <= 1e-12)


def test_posterior_summary_rows_are_simplex(trained_prod):
    model, _, corpus = trained_prod
    summary = posterior_summary(model, corpus)
    assert summary.weights.shape == (corpus.num_docs, model.config.K)
    np.testing.assert_allclose(summary.weights.sum(axis=1),
                               np.ones(corpus.num_docs), atol=1e-9)
    assert np.all(summary.weights >= 0)


def test_posterior_summary_hier_projects_onto_atoms():
    cfg = ModelConfig(variant="hier", vocab_size=10, K=3, T=6, gamma=2.0,
                      hidden_sizes=(8,))
    model = TopicModel(cfg, np.random.default_rng(2))
    corpus = make_corpus([([0, 4], [1, 2], None), ([7], [3], None)], 10)
    summary = posterior_summary(model, corpus)
    assert summary.weights.shape == (2, 6)
    np.testing.assert_allclose(summary.weights.sum(axis=1), [1.0, 1.0], atol=1e-9)


# ---------------------------------------------------------------------
# top words
# ---------------------------------------------------------------------


def bank_with(phi_rows, v):
    cfg = ModelConfig(variant="itmvae", vocab_size=v, K=len(phi_rows))
    model = TopicModel(cfg, np.random.default_rng(0))
    model.bank.phi.data[: len(phi_rows)] = phi_rows
    return model.bank


def test_top_words_orders_by_probability():
    bank = bank_with(np.array([[1.0, 3.0, 2.0]]), 3)
    assert top_words(bank, 2)[0] == [1, 2]


def test_top_words_single_spike_first():
    bank = bank_with(np.array([[0.0, 0.0, 9.0, 0.0]]), 4)
    assert top_words(bank, 1)[0] == [2]


def test_top_words_ties_break_to_lower_id():
    bank = bank_with(np.zeros((2, 5)), 5)
    assert top_words(bank, 3) == [[0, 1, 2], [0, 1, 2]]


def test_top_words_rejects_n_beyond_vocabulary():
    bank = bank_with(np.zeros((1, 3)), 3)
    with pytest.raises(EvaluationError, match="vocabulary"):
        top_words(bank, 4)


# ---------------------------------------------------------------------
# report assembly and serialization
# ---------------------------------------------------------------------


def test_report_has_contracted_fields(trained_prod, tmp_path):
    model, _, corpus = trained_prod
    vocab = Vocabulary(tokens=tuple(f"w{i}" for i in range(corpus.vocab_size)))
    rep = report(model, corpus, corpus, vocab, rng=np.random.default_rng(0))
    assert set(rep) >= {"perplexity", "coherence_mean", "per_topic",
                        "effective_topics", "coverage", "sparsity_log"}
    assert len(rep["coverage"]) == model.config.K
    assert len(rep["sparsity_log"]) == model.config.K
    entry = rep["per_topic"][0]
    assert set(entry) == {"id", "top5", "top10", "npmi5", "npmi10",
                          "argmax_count"}
    assert len(entry["top5"]) == 5 and len(entry["top10"]) == 10
    assert all(isinstance(w, str) for w in entry["top10"])
    assert rep["effective_topics"] <= model.config.K

    path = tmp_path / "report.json"
    save_report(rep, path)
    assert json.loads(path.read_text()) == rep


def test_save_curve_csv_format(tmp_path):
    path = tmp_path / "curve.csv"
    save_curve_csv([0.5, 0.8, 1.0], path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["index", "value"]
    assert rows[1] == ["1", "0.5"]
    assert rows[3] == ["3", "1"]
    assert len(rows) == 4
