"""Shared fixtures: tiny corpora and a small trained model reused across tests."""

import numpy as np
import pytest

from itmvae.corpus import BowDocument, Corpus
from itmvae.models import ModelConfig
from itmvae.training import TrainSchedule, fit
from itmvae import synthetic as syn


def make_corpus(docs, vocab_size, split=None):
    """Corpus from [(ids, counts, label), ...] tuples."""
    built = [BowDocument(ids, counts, label) for ids, counts, label in docs]
    return Corpus(documents=built, vocab_size=vocab_size, split=split)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def recovery_data():
    """Synthetic 3-topic corpus with the generating mixtures kept around."""
    rng = np.random.default_rng(42)
    topics = syn.make_topics(rng, 3, 50, inside_mass=0.85)
    corpus, pis = syn.sample_corpus(rng, topics, 160, alpha=1.0, mean_length=60)
    return topics, corpus, pis


@pytest.fixture(scope="session")
def trained_prod(recovery_data):
    """A quick iTM-VAE-Prod fit shared by evaluation tests (seconds, not minutes)."""
    _, corpus, _ = recovery_data
    cfg = ModelConfig(variant="prod", vocab_size=50, K=8, alpha=2.0,
                      hidden_sizes=(32, 32))
    sched = TrainSchedule(epochs=40, batch_size=32, seed=5, patience=40)
    model, log = fit(corpus, None, cfg, sched)
    return model, log, corpus
