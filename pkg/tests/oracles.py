"""Independent reference implementations used as test oracles.

These are deliberately written in plain Python loops over the raw definitions,
sharing no code with the package beyond the reserved token ids.
"""

import math
from collections import defaultdict

BOS = 1


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def _row_dot(W, row, vec):
    return sum(W[row][j] * vec[j] for j in range(len(vec)))


def scalar_lstm_step(x, h, c, Wi, Wf, Wc, Wo, bi, bf, bc, bo):
    """Straight-line peephole LSTM step on Python lists."""
    E = len(h)
    xhc = list(x) + list(h) + list(c)
    xh = list(x) + list(h)
    i = [_sig(_row_dot(Wi, k, xhc) + bi[k]) for k in range(E)]
    f = [_sig(_row_dot(Wf, k, xhc) + bf[k]) for k in range(E)]
    g = [math.tanh(_row_dot(Wc, k, xh) + bc[k]) for k in range(E)]
    c_new = [f[k] * c[k] + i[k] * g[k] for k in range(E)]
    xhc_new = list(x) + list(h) + c_new
    o = [_sig(_row_dot(Wo, k, xhc_new) + bo[k]) for k in range(E)]
    h_new = [o[k] * math.tanh(c_new[k]) for k in range(E)]
    return h_new, c_new


def scalar_lstm_run(ids, emb, W, b):
    """All hidden states of a sequence, from a zero state."""
    E = len(b[0])
    h, c = [0.0] * E, [0.0] * E
    out = []
    for t in ids:
        h, c = scalar_lstm_step(list(emb[t]), h, c, *W, *b)
        out.append(h)
    return out


def log_softmax_list(z):
    m = max(z)
    s = sum(math.exp(v - m) for v in z)
    return [v - m - math.log(s) for v in z]


def nb_reference(docs, labels, n_classes, vocab_size, alpha):
    """Per-class log p(w|y) tables and log prior, from dictionary counts."""
    counts = [defaultdict(int) for _ in range(n_classes)]
    totals = [0] * n_classes
    n_docs = [0] * n_classes
    for doc, y in zip(docs, labels):
        n_docs[y] += 1
        for w in doc:
            counts[y][int(w)] += 1
            totals[y] += 1
    table = []
    for y in range(n_classes):
        denom = totals[y] + alpha * vocab_size
        table.append([math.log((counts[y][w] + alpha) / denom) for w in range(vocab_size)])
    prior = [math.log(n / len(labels)) for n in n_docs]
    return table, prior


def nb_reference_scores(table, prior, doc):
    return [prior[y] + sum(table[y][int(w)] for w in doc) for y in range(len(prior))]


class KnReference:
    """Interpolated Kneser-Ney trigram model written from set-based definitions."""

    def __init__(self, docs, vocab_size, d):
        self.V = vocab_size
        self.d = d
        self.c3 = defaultdict(int)
        for doc in docs:
            seq = [BOS, BOS] + [int(w) for w in doc]
            for t in range(2, len(seq)):
                self.c3[(seq[t - 2], seq[t - 1], seq[t])] += 1
        self.trigram_types = set(self.c3)
        # N1+(. v w): distinct left words of each observed (v, w)
        self.left_of = defaultdict(set)
        for (u, v, w) in self.trigram_types:
            self.left_of[(v, w)].add(u)
        self.bigram_types = set(self.left_of)
        # N1+(. w) over bigram types
        self.left_of_word = defaultdict(set)
        for (v, w) in self.bigram_types:
            self.left_of_word[w].add(v)

    def p_uni(self, w):
        total = sum(len(s) for s in self.left_of_word.values())
        if total == 0:
            return 1.0 / self.V
        types = len(self.left_of_word)
        n = len(self.left_of_word.get(w, ()))
        return max(n - self.d, 0.0) / total + self.d * types / total / self.V

    def p_bi(self, w, v):
        row = [(vw, len(us)) for vw, us in self.left_of.items() if vw[0] == v]
        total = sum(n for _, n in row)
        if total == 0:
            return self.p_uni(w)
        n_vw = len(self.left_of.get((v, w), ()))
        return max(n_vw - self.d, 0.0) / total + self.d * len(row) / total * self.p_uni(w)

    def p_tri(self, w, u, v):
        row = [(k, c) for k, c in self.c3.items() if k[0] == u and k[1] == v]
        total = sum(c for _, c in row)
        if total == 0:
            return self.p_bi(w, v)
        c = self.c3.get((u, v, w), 0)
        return max(c - self.d, 0.0) / total + self.d * len(row) / total * self.p_bi(w, v)

    def doc_loglik(self, doc):
        seq = [BOS, BOS] + [int(w) for w in doc]
        return sum(math.log(self.p_tri(seq[t], seq[t - 2], seq[t - 1])) for t in range(2, len(seq)))
