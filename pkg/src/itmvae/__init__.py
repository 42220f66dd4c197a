"""Nonparametric neural topic models with stick-breaking priors.

Four model variants over bag-of-words corpora, trained by stochastic
gradient variational inference on a small numpy autodiff engine:

- ``itmvae``        mixture decoder, Kumaraswamy stick-breaking posterior
- ``prod``          product-of-experts decoder, same posterior
- ``hp``            product-of-experts decoder plus a Gamma hyper prior
                    on the stick-breaking concentration
- ``hier``          hierarchical variant sharing a corpus-level pool of
                    topics across documents
"""

__version__ = "0.1.0"

MODEL_KINDS = ("itmvae", "prod", "hp", "hier")
