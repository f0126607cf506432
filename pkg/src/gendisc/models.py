"""Discriminative and generative LSTM text classifiers.

Every generative model (LSTM-based here, count-based in :mod:`baselines`)
exposes ``class_logliks(doc)`` and ``log_prior``; prediction goes through
:func:`gen_predict` and the document marginal through :func:`marginal_loglik`.

Generative scoring reads BOS x_1 ... x_{T-1} and predicts x_1 ... x_T, where
x_T is EOS.
"""

import hashlib

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Parameter, ShapeError
from .lstm import INIT_SCALE, LstmParams, input_ids, mean_pool, run_sequence, uniform_init


class PriorError(ValueError):
    pass


def class_prior(labels, n_classes, missing="error"):
    """Log relative class frequencies.

    ``missing`` decides what happens to a class without examples: ``"error"``
    raises, ``"laplace"`` adds one to every count, ``"exclude"`` gives it
    log-prior -inf so it can never be predicted.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise PriorError("no labels to estimate a prior from")
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        if missing == "laplace":
            counts += 1.0
        elif missing == "exclude":
            pass
        else:
            raise PriorError(f"classes without examples: {absent.tolist()}")
    with np.errstate(divide="ignore"):
        return np.log(counts / counts.sum())


def gen_predict(model, doc):
    """(argmax_y log p(x|y) + log p(y), joint scores); ties go to the lowest index."""
    joint = model.class_logliks(doc) + model.log_prior
    return int(np.argmax(joint)), joint


def marginal_loglik(model, doc):
    """log p(x) = logsumexp_y [log p(x|y) + log p(y)]."""
    joint = model.class_logliks(doc) + model.log_prior
    return float(ad.logsumexp_array(joint))


def posterior(model, doc):
    """p(y|x) for a generative model via Bayes' rule."""
    joint = model.class_logliks(doc) + model.log_prior
    return np.exp(joint - ad.logsumexp_array(joint))


def _lstm_states(doc, emb, lstm, prepend_bos):
    """Hidden states without a tape."""
    ids = input_ids(doc, prepend_bos)
    X = np.ascontiguousarray(emb.value[ids])
    ws = [np.ascontiguousarray(p.value) for p in (lstm.Wi, lstm.Wf, lstm.Wc, lstm.Wo)]
    bs = [p.value for p in (lstm.bi, lstm.bf, lstm.bc, lstm.bo)]
    return kernels.lstm_forward(X, *ws, *bs)[0]


def _row_logliks(logits, targets):
    """Sum over rows of log_softmax(logits)[t, targets[t]]."""
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return float(logits[np.arange(len(targets)), targets].sum() - lse.sum())


def params_digest(params):
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(p.value.tobytes())
    return h.hexdigest()


class DiscriminativeModel:
    """Mean-pooled peephole LSTM followed by a softmax over classes."""

    kind = "disc"

    def __init__(self, vocab_size, n_classes, dim=100, hidden=100, seed=0, init_scale=INIT_SCALE):
        rng = np.random.default_rng(seed)
        self.n_classes = n_classes
        self.emb = Parameter("emb", uniform_init(rng, (vocab_size, dim), init_scale))
        self.lstm = LstmParams.init(dim, hidden, rng, scale=init_scale)
        self.V = Parameter("V", uniform_init(rng, (hidden, n_classes), init_scale))
        self.b = Parameter("b", np.zeros(n_classes))

    def config(self):
        return {"vocab_size": self.emb.shape[0], "n_classes": self.n_classes,
                "dim": self.emb.shape[1], "hidden": self.lstm.hidden_dim}

    def parameters(self):
        return [self.emb, *self.lstm.parameters(), self.V, self.b]

    def log_posterior_node(self, tape, doc):
        H = run_sequence(doc, self.emb, self.lstm, tape=tape)
        hbar = mean_pool(H)
        logits = ad.add(ad.matmul(hbar, tape.param(self.V)), tape.param(self.b))
        return ad.log_softmax(logits)

    def log_posterior(self, doc):
        H = _lstm_states(doc, self.emb, self.lstm, prepend_bos=False)
        z = H.mean(axis=0) @ self.V.value + self.b.value
        return z - ad.logsumexp_array(z)

    def loss(self, tape, doc, label):
        return ad.neg(ad.pick(self.log_posterior_node(tape, doc), label))

    def predict(self, doc):
        return int(np.argmax(self.log_posterior(doc)))


def disc_log_posterior(model, doc):
    return model.log_posterior(doc)


def disc_nll(model, batch, tape=None):
    """Mean negative log posterior of the gold labels, as a tape node."""
    tape = tape if tape is not None else ad.Tape()
    terms = [model.loss(tape, doc, y) for doc, y in batch]
    if not terms:
        raise ValueError("empty batch")
    acc = terms[0]
    for term in terms[1:]:
        acc = ad.add(acc, term)
    return ad.scale(acc, 1.0 / len(terms))


def _lm_nll(tape, doc, emb, lstm, U, cond=None, bias=None):
    """-log p(doc) for an LSTM LM whose softmax reads [h_t; cond]."""
    targets = np.asarray(doc, dtype=np.int64)
    H = run_sequence(targets, emb, lstm, prepend_bos=True, tape=tape)
    Z = H if cond is None else ad.concat_to_rows(H, cond)
    if bias is None:
        bias = tape.constant(np.zeros(U.shape[0]))
    logp = ad.log_softmax(ad.affine(Z, tape.param(U), bias))
    return ad.neg(ad.total(ad.pick(logp, targets)))


def sample_unit_ball(rng, dim):
    """Uniform draw from the closed unit ball in ``dim`` dimensions."""
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return direction * rng.uniform() ** (1.0 / dim)


class SharedGenerativeModel:
    """One class-conditional LSTM LM; classes enter through v_y and b_y.

    ``U`` has shape (|V|, E + K) and acts on [h_t; v_y]; ``class_emb`` is
    (|Y|, K); ``class_bias`` is (|Y|, |V|).
    """

    kind = "gen-shared"

    def __init__(self, vocab_size, n_classes, dim=100, hidden=100, class_dim=None, seed=0,
                 init_scale=INIT_SCALE):
        rng = np.random.default_rng(seed)
        class_dim = hidden if not class_dim else class_dim
        self.n_classes = n_classes
        self.emb = Parameter("emb", uniform_init(rng, (vocab_size, dim), init_scale))
        self.lstm = LstmParams.init(dim, hidden, rng, scale=init_scale)
        self.U = Parameter("U", uniform_init(rng, (vocab_size, hidden + class_dim), init_scale))
        self.class_emb = Parameter("class_emb", uniform_init(rng, (n_classes, class_dim), init_scale))
        self.class_bias = Parameter("class_bias", np.zeros((n_classes, vocab_size)))
        self.log_prior = np.full(n_classes, -np.log(n_classes))
        self.pretrain_vector = None

    @property
    def hidden_dim(self):
        return self.lstm.hidden_dim

    @property
    def class_dim(self):
        return self.class_emb.shape[1]

    def config(self):
        return {"vocab_size": self.emb.shape[0], "n_classes": self.n_classes,
                "dim": self.emb.shape[1], "hidden": self.hidden_dim, "class_dim": self.class_dim}

    def parameters(self):
        return [self.emb, *self.lstm.parameters(), self.U, self.class_emb, self.class_bias]

    def shared_parameters(self):
        return [self.emb, *self.lstm.parameters(), self.U]

    def set_prior(self, labels, missing="error"):
        self.log_prior = class_prior(labels, self.n_classes, missing)

    def nll(self, tape, doc, y):
        if not 0 <= y < self.n_classes:
            raise ShapeError(f"class {y} outside [0, {self.n_classes})")
        v = ad.take_row(tape.param(self.class_emb), y)
        b = ad.take_row(tape.param(self.class_bias), y)
        return _lm_nll(tape, doc, self.emb, self.lstm, self.U, v, b)

    def pretrain_nll(self, tape, doc):
        """Word NLL with the class slot held at the fixed random vector and no class bias."""
        if self.pretrain_vector is None:
            raise ValueError("no pretraining vector set")
        return _lm_nll(tape, doc, self.emb, self.lstm, self.U, tape.constant(self.pretrain_vector))

    loss = nll

    def hidden_states(self, doc):
        return _lstm_states(doc, self.emb, self.lstm, prepend_bos=True)

    def class_logliks(self, doc, hidden=None):
        """log p(x|y) for every class, sharing one LSTM pass across classes."""
        targets = np.asarray(doc, dtype=np.int64)
        H = self.hidden_states(targets) if hidden is None else hidden
        E = self.hidden_dim
        U = self.U.value
        A = H @ U[:, :E].T
        cls = self.class_emb.value @ U[:, E:].T + self.class_bias.value
        return np.array([_row_logliks(A + cls[y], targets) for y in range(self.n_classes)])

    def predict(self, doc):
        return gen_predict(self, doc)[0]


def gen_doc_loglik(model, doc, y):
    """log p(x|y) through the tape (the differentiable route)."""
    return -float(model.nll(ad.Tape(), doc, y).value)


class WordLM:
    """A complete single-class LSTM language model."""

    def __init__(self, vocab_size, dim=100, hidden=100, seed=0, init_scale=INIT_SCALE, prefix="lm"):
        rng = np.random.default_rng(seed)
        self.prefix = prefix
        self.emb = Parameter(f"{prefix}.emb", uniform_init(rng, (vocab_size, dim), init_scale))
        self.lstm = LstmParams.init(dim, hidden, rng, prefix=f"{prefix}.lstm", scale=init_scale)
        self.U = Parameter(f"{prefix}.U", uniform_init(rng, (vocab_size, hidden), init_scale))
        self.bias = Parameter(f"{prefix}.bias", np.zeros(vocab_size))

    def parameters(self):
        return [self.emb, *self.lstm.parameters(), self.U, self.bias]

    def nll(self, tape, doc):
        return _lm_nll(tape, doc, self.emb, self.lstm, self.U, None, tape.param(self.bias))

    def loglik(self, doc):
        targets = np.asarray(doc, dtype=np.int64)
        H = _lstm_states(targets, self.emb, self.lstm, prepend_bos=True)
        return _row_logliks(H @ self.U.value.T + self.bias.value, targets)


class IndependentGenerativeModel:
    """One independent :class:`WordLM` per class."""

    kind = "gen-indep"

    def __init__(self, vocab_size, n_classes, dim=100, hidden=100, seed=0, init_scale=INIT_SCALE):
        self.n_classes = n_classes
        self.lms = [WordLM(vocab_size, dim, hidden, seed=[seed, y], init_scale=init_scale,
                           prefix=f"class{y}") for y in range(n_classes)]
        self.log_prior = np.full(n_classes, -np.log(n_classes))

    def config(self):
        lm = self.lms[0]
        return {"vocab_size": lm.emb.shape[0], "n_classes": self.n_classes,
                "dim": lm.emb.shape[1], "hidden": lm.lstm.hidden_dim}

    def parameters(self):
        return [p for lm in self.lms for p in lm.parameters()]

    def set_prior(self, labels, missing="error"):
        self.log_prior = class_prior(labels, self.n_classes, missing)

    def loss(self, tape, doc, y):
        return self.lms[y].nll(tape, doc)

    def class_logliks(self, doc):
        return np.array([lm.loglik(doc) for lm in self.lms])

    def predict(self, doc):
        return gen_predict(self, doc)[0]


def indep_loglik(model, doc, y):
    if not 0 <= y < model.n_classes:
        raise ShapeError(f"class {y} outside [0, {model.n_classes})")
    return model.lms[y].loglik(doc)
