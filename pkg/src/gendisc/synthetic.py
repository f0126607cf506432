"""Built-in corpora: the tiny separable fixture and a topic-news analog.

The topic corpus mimics the AG News layout (four named classes, title and body
columns, 1-based labels in CSV) and ships with a word-vector file in the usual
``token v1 ... vD`` text format, so every CLI path can run without external
downloads.
"""

import csv

import numpy as np

from .text import RawExample, WordVectors, build_vocab, encode_examples, tokenize

F1_TRAIN = [
    (0, "a b"), (0, "b a"), (0, "a a b b"), (0, "b b a a"),
    (0, "a b a b"), (0, "b a b a"), (0, "a"), (0, "b"),
    (1, "c d"), (1, "d c"), (1, "c c d d"), (1, "d d c c"),
    (1, "c d c d"), (1, "d c d c"), (1, "c"), (1, "d"),
]
F1_DEV = [(0, "a b a"), (0, "b b"), (1, "c d c"), (1, "d d")]
F1_TEST = [(0, "a a a b"), (0, "b a"), (0, "a b b"), (1, "d c c"), (1, "c d"), (1, "d d c")]


def fixture_f1():
    """(train, dev, test, vocab) for the two-class separable toy corpus."""
    train_ex = [RawExample(y, t) for y, t in F1_TRAIN]
    vocab = build_vocab([tokenize(ex.text) for ex in train_ex], max_size=10, min_count=1)
    names = ["ab", "cd"]

    def enc(rows, name):
        return encode_examples([RawExample(y, t) for y, t in rows], vocab, 2, name, names)

    return enc(F1_TRAIN, "f1"), enc(F1_DEV, "f1-dev"), enc(F1_TEST, "f1-test"), vocab


TOPIC_CLASSES = ["World", "Sports", "Business", "Sci/Tech"]
TOPIC_LABEL_WORDS = ["world", "sports", "business", "science"]


class TopicCorpus:
    """Generator for a four-topic news-like corpus with matching word vectors.

    Each class owns a set of topic words; documents mix own-topic words,
    topic words that two classes share, a few off-topic words and a Zipfian
    background of common words. A fraction of documents is drawn from another
    class's distribution while keeping its label, so accuracy saturates below
    100%.
    """

    def __init__(self, seed=0, n_topic=40, n_shared=12, n_common=150, vector_dim=16,
                 topic_rate=0.3, shared_rate=0.1, off_topic_rate=0.05, label_noise=0.05,
                 mean_length=14):
        self.seed = seed
        self.n_classes = len(TOPIC_CLASSES)
        self.class_names = list(TOPIC_CLASSES)
        self.label_words = list(TOPIC_LABEL_WORDS)
        self.topic_rate = topic_rate
        self.shared_rate = shared_rate
        self.off_topic_rate = off_topic_rate
        self.label_noise = label_noise
        self.mean_length = mean_length
        self.topic_words = [[f"{lw[:3]}{j:02d}" for j in range(n_topic)] for lw in self.label_words]
        self.shared_words = {}
        for y in range(self.n_classes):
            z = (y + 1) % self.n_classes
            self.shared_words[y] = [f"mix{y}{z}x{j:02d}" for j in range(n_shared)]
        self.common_words = [f"com{j:03d}" for j in range(n_common)]
        self.topic_p = self._zipf(n_topic)
        self.common_p = self._zipf(n_common)
        self.vector_dim = vector_dim
        self.vectors = self._make_vectors(vector_dim)

    @staticmethod
    def _zipf(n, s=1.0):
        w = 1.0 / np.arange(1, n + 1) ** s
        return w / w.sum()

    def _make_vectors(self, dim):
        rng = np.random.default_rng([self.seed, 1])
        basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        dirs = basis[:, :self.n_classes].T
        vecs = {}
        for y, lw in enumerate(self.label_words):
            vecs[lw] = dirs[y] + 0.05 * rng.standard_normal(dim)
            for w in self.topic_words[y]:
                vecs[w] = 0.8 * dirs[y] + 0.35 * rng.standard_normal(dim) / np.sqrt(dim)
        for y, words in self.shared_words.items():
            z = (y + 1) % self.n_classes
            for w in words:
                vecs[w] = 0.5 * (dirs[y] + dirs[z]) + 0.35 * rng.standard_normal(dim) / np.sqrt(dim)
        for w in self.common_words:
            vecs[w] = 0.6 * rng.standard_normal(dim) / np.sqrt(dim)
        return WordVectors(dim, vecs)

    def _shared_pool(self, y):
        words = list(self.shared_words[y])
        words += self.shared_words[(y - 1) % self.n_classes]
        return words

    def _tokens(self, source, rng):
        n = 4 + rng.poisson(self.mean_length - 4)
        toks = []
        shared = self._shared_pool(source)
        for _ in range(n):
            r = rng.uniform()
            if r < self.topic_rate:
                toks.append(self.topic_words[source][rng.choice(len(self.topic_p), p=self.topic_p)])
            elif r < self.topic_rate + self.shared_rate:
                toks.append(shared[rng.integers(len(shared))])
            elif r < self.topic_rate + self.shared_rate + self.off_topic_rate:
                other = (source + 1 + rng.integers(self.n_classes - 1)) % self.n_classes
                toks.append(self.topic_words[other][rng.choice(len(self.topic_p), p=self.topic_p)])
            else:
                toks.append(self.common_words[rng.choice(len(self.common_p), p=self.common_p)])
        return toks

    def rows(self, n_per_class, seed):
        """(label, title, body) triples, ``n_per_class`` per class, interleaved."""
        rng = np.random.default_rng([self.seed, seed, 2])
        out = []
        for _ in range(n_per_class):
            for y in range(self.n_classes):
                source = y
                if rng.uniform() < self.label_noise:
                    source = (y + 1 + rng.integers(self.n_classes - 1)) % self.n_classes
                toks = self._tokens(source, rng)
                cut = min(len(toks) - 1, 3 + rng.integers(3))
                title = " ".join(toks[:cut]).capitalize()
                body = " ".join(toks[cut:]) + "."
                out.append((y, title, body))
        return out

    def examples(self, n_per_class, seed):
        return [RawExample(y, f"{title} {body}") for y, title, body in self.rows(n_per_class, seed)]

    def write_csv(self, path, n_per_class, seed):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, quoting=csv.QUOTE_ALL)
            for y, title, body in self.rows(n_per_class, seed):
                w.writerow([y + 1, title, body])

    def datasets(self, n_train_per_class, n_dev_per_class, n_test_per_class, max_vocab=50000,
                 min_count=2):
        """Encoded (train, dev, test, vocab) drawn from disjoint generator streams."""
        train_ex = self.examples(n_train_per_class, 0)
        dev_ex = self.examples(n_dev_per_class, 1)
        test_ex = self.examples(n_test_per_class, 2)
        vocab = build_vocab([tokenize(ex.text) for ex in train_ex], max_vocab, min_count)

        def enc(ex, name):
            return encode_examples(ex, vocab, self.n_classes, name, self.class_names)

        return enc(train_ex, "topics"), enc(dev_ex, "topics-dev"), enc(test_ex, "topics-test"), vocab


def vectors_for(vocab, wv):
    """Restrict ``wv`` to tokens of ``vocab``."""
    return WordVectors(wv.dim, {t: wv.vectors[t] for t in vocab.tokens if t in wv.vectors})

