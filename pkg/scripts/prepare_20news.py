#!/usr/bin/env python3
"""Build the 20 Newsgroups bag-of-words files consumed by the dataset-gated
tests and the CLI examples.

Downloads the raw posts through scikit-learn (network access required),
strips headers/footers/quotes, fits a vocabulary of the most frequent
non-stopword alphabetic tokens on the training split, and writes under
--out (default data/20news/):

    vocab.txt    one token per line; ids are 0-based line numbers
    train.bow    one document per line: "<newsgroup>\\tid:count id:count ..."
    test.bow     same format, test split
    labels.txt   the twenty newsgroup names, one per line

Documents left empty by the vocabulary filter are dropped and tallied in
the summary printed at the end.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import fetch_20newsgroups
from sklearn.feature_extraction.text import CountVectorizer

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from itmvae.corpus import BowDocument, Corpus, save_bow  # noqa: E402


def rows_to_corpus(matrix, raw, split):
    docs, dropped = [], 0
    names = raw.target_names
    for row, target in zip(matrix, raw.target):
        coo = row.tocoo()
        if coo.nnz == 0:
            dropped += 1
            continue
        order = np.argsort(coo.col)
        docs.append(BowDocument(coo.col[order], coo.data[order],
                                label=names[target]))
    return Corpus(docs, matrix.shape[1], split=split), dropped


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/20news", help="output directory")
    ap.add_argument("--vocab-size", type=int, default=2000,
                    help="number of most frequent tokens to keep")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    remove = ("headers", "footers", "quotes")
    train_raw = fetch_20newsgroups(subset="train", remove=remove)
    test_raw = fetch_20newsgroups(subset="test", remove=remove)

    vectorizer = CountVectorizer(stop_words="english",
                                 max_features=args.vocab_size,
                                 token_pattern=r"(?u)\b[a-zA-Z][a-zA-Z]+\b")
    x_train = vectorizer.fit_transform(train_raw.data)
    x_test = vectorizer.transform(test_raw.data)
    tokens = vectorizer.get_feature_names_out()

    (out / "vocab.txt").write_text("\n".join(tokens) + "\n", encoding="utf-8")
    (out / "labels.txt").write_text("\n".join(train_raw.target_names) + "\n",
                                    encoding="utf-8")
    for matrix, raw, split in ((x_train, train_raw, "train"),
                               (x_test, test_raw, "test")):
        corpus, dropped = rows_to_corpus(matrix, raw, split)
        save_bow(corpus, out / f"{split}.bow")
        words = sum(d.num_words for d in corpus.documents)
        print(f"{split}: {corpus.num_docs} documents "
              f"({dropped} dropped empty), {words} tokens")
    print(f"vocabulary: {len(tokens)} tokens -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
