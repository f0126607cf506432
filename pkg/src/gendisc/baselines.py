"""Count-based and feed-forward generative baselines.

All three plug into :func:`gendisc.models.gen_predict` through
``class_logliks(doc)`` and ``log_prior``.
"""

from collections import Counter, defaultdict

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .lstm import INIT_SCALE, uniform_init
from .models import class_prior, gen_predict
from .text import BOS


class NaiveBayesModel:
    """Class-conditional unigram counts with additive smoothing."""

    kind = "nb"

    def __init__(self, counts, alpha=1.0):
        self.counts = np.asarray(counts, dtype=np.float64)
        self.alpha = float(alpha)
        self.n_classes, self.vocab_size = self.counts.shape
        self.log_prior = np.full(self.n_classes, -np.log(self.n_classes))
        self._refresh()

    def _refresh(self):
        self.totals = self.counts.sum(axis=1)
        denom = self.totals + self.alpha * self.vocab_size
        with np.errstate(divide="ignore", invalid="ignore"):
            self.log_probs = np.log((self.counts + self.alpha) / denom[:, None])

    def config(self):
        return {"vocab_size": self.vocab_size, "n_classes": self.n_classes, "alpha": self.alpha}

    def set_prior(self, labels, missing="error"):
        self.log_prior = class_prior(labels, self.n_classes, missing)

    def distribution(self, y):
        return np.exp(self.log_probs[y])

    def class_logliks(self, doc):
        return self.log_probs[:, np.asarray(doc, dtype=np.int64)].sum(axis=1)

    def predict(self, doc):
        return gen_predict(self, doc)[0]

    def to_text(self, vocab=None):
        """Sorted ``class<TAB>token<TAB>count`` lines for nonzero counts."""
        lines = []
        for y, w in zip(*np.nonzero(self.counts)):
            tok = vocab.tokens[w] if vocab is not None else str(w)
            lines.append(f"{y}\t{tok}\t{int(self.counts[y, w])}")
        return "\n".join(sorted(lines)) + "\n"


def nb_fit(ds, alpha=1.0, vocab_size=None):
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    V = vocab_size if vocab_size is not None else 1 + max(int(np.max(d)) for d in ds.docs)
    counts = np.zeros((ds.n_classes, V))
    for doc, y in zip(ds.docs, ds.labels):
        np.add.at(counts[y], np.asarray(doc, dtype=np.int64), 1.0)
    model = NaiveBayesModel(counts, alpha)
    model.set_prior(ds.labels)
    return model


def nb_loglik(model, doc, y):
    return float(model.log_probs[y, np.asarray(doc, dtype=np.int64)].sum())


class _KnTables:
    """Interpolated Kneser-Ney trigram tables for one class."""

    def __init__(self, trigrams, vocab_size, d):
        self.trigrams = trigrams
        self.d = d
        self.V = vocab_size
        self.ctx_total = Counter()
        self.ctx_types = Counter()
        for (u, v, w), c in trigrams.items():
            self.ctx_total[(u, v)] += c
            self.ctx_types[(u, v)] += 1
        left = defaultdict(set)
        for (u, v, w) in trigrams:
            left[(v, w)].add(u)
        self.cont2 = {vw: len(us) for vw, us in left.items()}
        self.cont2_total = Counter()
        self.cont2_types = Counter()
        uni_left = defaultdict(set)
        for (v, w), n in self.cont2.items():
            self.cont2_total[v] += n
            self.cont2_types[v] += 1
            uni_left[w].add(v)
        cont1 = np.zeros(vocab_size)
        for w, vs in uni_left.items():
            cont1[w] = len(vs)
        total = cont1.sum()
        if total > 0:
            types = np.count_nonzero(cont1)
            self.p1 = (np.maximum(cont1 - d, 0.0) + d * types / vocab_size) / total
        else:
            self.p1 = np.full(vocab_size, 1.0 / vocab_size)
        self._p2_rows = {}
        self._succ2 = defaultdict(list)
        for (v, w), n in self.cont2.items():
            self._succ2[v].append((w, n))
        self._succ3 = defaultdict(list)
        for (u, v, w), c in trigrams.items():
            self._succ3[(u, v)].append((w, c))

    def bigram_row(self, v):
        row = self._p2_rows.get(v)
        if row is not None:
            return row
        total = self.cont2_total.get(v, 0)
        if total == 0:
            row = self.p1
        else:
            row = self.d * self.cont2_types[v] / total * self.p1
            for w, n in self._succ2[v]:
                row[w] += max(n - self.d, 0.0) / total
        self._p2_rows[v] = row
        return row

    def trigram_row(self, u, v):
        p2 = self.bigram_row(v)
        total = self.ctx_total.get((u, v), 0)
        if total == 0:
            return p2
        row = self.d * self.ctx_types[(u, v)] / total * p2
        for w, c in self._succ3[(u, v)]:
            row[w] += max(c - self.d, 0.0) / total
        return row

    def prob(self, w, u, v):
        p2 = self.bigram_row(v)[w]
        total = self.ctx_total.get((u, v), 0)
        if total == 0:
            return float(p2)
        c = self.trigrams.get((u, v, w), 0)
        return max(c - self.d, 0.0) / total + self.d * self.ctx_types[(u, v)] / total * p2


def padded_trigrams(doc):
    """(x_{t-2}, x_{t-1}, x_t) for every position, with two BOS symbols of left padding."""
    seq = [BOS, BOS] + [int(x) for x in doc]
    return [(seq[t - 2], seq[t - 1], seq[t]) for t in range(2, len(seq))]


class KneserNeyModel:
    """Per-class interpolated Kneser-Ney trigram LMs with a single discount."""

    kind = "kn"

    def __init__(self, trigram_counts, vocab_size, d=0.75):
        if not 0.0 < d < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        self.d = float(d)
        self.vocab_size = vocab_size
        self.n_classes = len(trigram_counts)
        self.trigram_counts = trigram_counts
        self.tables = [_KnTables(tc, vocab_size, self.d) for tc in trigram_counts]
        self.log_prior = np.full(self.n_classes, -np.log(self.n_classes))

    def config(self):
        return {"vocab_size": self.vocab_size, "n_classes": self.n_classes, "d": self.d}

    def set_prior(self, labels, missing="error"):
        self.log_prior = class_prior(labels, self.n_classes, missing)

    def prob(self, w, context2, y):
        u, v = context2
        return self.tables[y].prob(int(w), int(u), int(v))

    def distribution(self, context2, y):
        u, v = context2
        return self.tables[y].trigram_row(int(u), int(v)).copy()

    def class_logliks(self, doc):
        grams = padded_trigrams(doc)
        out = np.empty(self.n_classes)
        for y, tab in enumerate(self.tables):
            out[y] = sum(np.log(tab.prob(w, u, v)) for u, v, w in grams)
        return out

    def predict(self, doc):
        return gen_predict(self, doc)[0]

    def trigram_array(self):
        """(n, 5) int array of class, u, v, w, count rows in sorted order."""
        rows = [(y, u, v, w, c) for y, tc in enumerate(self.trigram_counts)
                for (u, v, w), c in tc.items()]
        return np.array(sorted(rows), dtype=np.int64).reshape(-1, 5)

    @classmethod
    def from_trigram_array(cls, arr, n_classes, vocab_size, d):
        counts = [Counter() for _ in range(n_classes)]
        for y, u, v, w, c in np.asarray(arr, dtype=np.int64):
            counts[y][(int(u), int(v), int(w))] = int(c)
        return cls(counts, vocab_size, d)

    def to_text(self, vocab=None):
        def name(i):
            return vocab.tokens[i] if vocab is not None else str(i)

        lines = [f"{y}\t{name(u)} {name(v)}\t{name(w)}\t{c}"
                 for y, u, v, w, c in self.trigram_array()]
        return "\n".join(sorted(lines)) + "\n"


def kn_fit(ds, d=0.75, vocab_size=None):
    V = vocab_size if vocab_size is not None else 1 + max(int(np.max(x)) for x in ds.docs)
    counts = [Counter() for _ in range(ds.n_classes)]
    for doc, y in zip(ds.docs, ds.labels):
        counts[y].update(padded_trigrams(doc))
    model = KneserNeyModel(counts, V, d)
    model.set_prior(ds.labels)
    return model


def kn_prob(model, w, context2, y):
    return model.prob(w, context2, y)


class MlpNaiveBayesModel:
    """Unigram p(w|y) from a two-layer network over a learned class vector."""

    kind = "mlp-nb"

    def __init__(self, vocab_size, n_classes, hidden=100, seed=0, init_scale=INIT_SCALE):
        rng = np.random.default_rng(seed)
        self.n_classes = n_classes
        self.vocab_size = vocab_size
        self.class_emb = Parameter("mlp.class_emb", uniform_init(rng, (n_classes, hidden), init_scale))
        self.W1 = Parameter("mlp.W1", uniform_init(rng, (hidden, hidden), init_scale))
        self.b1 = Parameter("mlp.b1", np.zeros(hidden))
        self.W2 = Parameter("mlp.W2", uniform_init(rng, (vocab_size, hidden), init_scale))
        self.b2 = Parameter("mlp.b2", np.zeros(vocab_size))
        self.log_prior = np.full(n_classes, -np.log(n_classes))
        self._log_probs = None

    def config(self):
        return {"vocab_size": self.vocab_size, "n_classes": self.n_classes,
                "hidden": self.b1.shape[0]}

    def parameters(self):
        return [self.class_emb, self.W1, self.b1, self.W2, self.b2]

    def invalidate(self):
        self._log_probs = None

    def set_prior(self, labels, missing="error"):
        self.log_prior = class_prior(labels, self.n_classes, missing)

    def log_probs_node(self, tape, y):
        e = ad.take_row(tape.param(self.class_emb), y)
        h = ad.tanh(ad.affine(e, tape.param(self.W1), tape.param(self.b1)))
        return ad.log_softmax(ad.affine(h, tape.param(self.W2), tape.param(self.b2)))

    def loss(self, tape, doc, y):
        counts = np.bincount(np.asarray(doc, dtype=np.int64), minlength=self.vocab_size)
        return ad.neg(ad.dot(self.log_probs_node(tape, y), tape.constant(counts.astype(float))))

    def log_probs(self):
        """(|Y|, |V|) table of log p(w|y)."""
        if self._log_probs is None:
            Hd = np.tanh(self.class_emb.value @ self.W1.value.T + self.b1.value)
            z = Hd @ self.W2.value.T + self.b2.value
            self._log_probs = z - ad.logsumexp_array(z, axis=1)[:, None]
        return self._log_probs

    def distribution(self, y):
        return np.exp(self.log_probs()[y])

    def class_logliks(self, doc):
        return self.log_probs()[:, np.asarray(doc, dtype=np.int64)].sum(axis=1)

    def predict(self, doc):
        return gen_predict(self, doc)[0]


def mlpnb_fit(ds, hidden=100, epochs=10, cfg=None, vocab_size=None, seed=0):
    """Fit by maximizing sum_t log p(x_t|y) with AdaGrad for a fixed number of epochs."""
    from .training import OptimizerConfig, fit_epochs

    if hidden < 1:
        raise ValueError("hidden must be >= 1")
    V = vocab_size if vocab_size is not None else 1 + max(int(np.max(d)) for d in ds.docs)
    model = MlpNaiveBayesModel(V, ds.n_classes, hidden, seed=seed)
    model.set_prior(ds.labels)
    cfg = cfg if cfg is not None else OptimizerConfig(seed=seed)
    fit_epochs(model, ds, cfg, epochs)
    return model


def mlpnb_loglik(model, doc, y):
    return float(model.class_logliks(doc)[y])
