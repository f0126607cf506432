"""The peephole LSTM cell and the sequence utilities shared by every model.

Peepholes are full matrices: the input and forget gates read [x; h_prev; c_prev]
and the output gate reads [x; h_prev; c_new]. Initial state is all zeros.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError

INIT_SCALE = 0.08


def uniform_init(rng, shape, scale=INIT_SCALE):
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class LstmParams:
    Wi: Parameter
    Wf: Parameter
    Wc: Parameter
    Wo: Parameter
    bi: Parameter
    bf: Parameter
    bc: Parameter
    bo: Parameter

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, prefix="lstm", scale=INIT_SCALE):
        D, E = input_dim, hidden_dim

        def mat(name, cols):
            return Parameter(f"{prefix}.{name}", uniform_init(rng, (E, cols), scale))

        def vec(name):
            return Parameter(f"{prefix}.{name}", np.zeros(E))

        return cls(mat("Wi", D + 2 * E), mat("Wf", D + 2 * E), mat("Wc", D + E),
                   mat("Wo", D + 2 * E), vec("bi"), vec("bf"), vec("bc"), vec("bo"))

    @property
    def input_dim(self):
        return self.Wc.shape[1] - self.hidden_dim

    @property
    def hidden_dim(self):
        return self.bi.shape[0]

    def parameters(self):
        return [self.Wi, self.Wf, self.Wc, self.Wo, self.bi, self.bf, self.bc, self.bo]

    def nodes(self, tape):
        return [tape.param(p) for p in self.parameters()]


@dataclass
class LstmState:
    h: object
    c: object


def zero_state(tape, hidden_dim):
    z = np.zeros(hidden_dim)
    return LstmState(tape.constant(z), tape.constant(z))


def lstm_step(x, state, p):
    """One step built from primitive tape operations.

    ``x`` is a vector node; ``state`` holds vector nodes. This is the readable
    reference route; :func:`run_sequence` uses the fused kernel instead.
    """
    t = x.tape
    if x.value.shape != (p.input_dim,):
        raise ShapeError(f"lstm_step input: expected ({p.input_dim},), got {x.value.shape}")
    Wi, Wf, Wc, Wo, bi, bf, bc, bo = p.nodes(t)
    xhc = ad.concat(x, state.h, state.c)
    i = ad.sigmoid(ad.affine(xhc, Wi, bi))
    f = ad.sigmoid(ad.affine(xhc, Wf, bf))
    g = ad.tanh(ad.affine(ad.concat(x, state.h), Wc, bc))
    c = ad.add(ad.elemwise_mul(f, state.c), ad.elemwise_mul(i, g))
    o = ad.sigmoid(ad.affine(ad.concat(x, state.h, c), Wo, bo))
    h = ad.elemwise_mul(o, ad.tanh(c))
    return LstmState(h, c)


def input_ids(doc_ids, prepend_bos, bos_id=1):
    """Token ids fed to the LSTM.

    With ``prepend_bos`` the stream is BOS x_1 ... x_{T-1}, so the state at
    position t summarises x_{<t} and can be used to predict x_t.
    """
    ids = np.asarray(doc_ids, dtype=np.int64)
    if ids.size == 0:
        raise ShapeError("empty document")
    if prepend_bos:
        return np.concatenate([[bos_id], ids[:-1]])
    return ids


def run_sequence(doc_ids, emb, p, prepend_bos=False, tape=None):
    """Hidden states for every position as a (T, E) node (fused kernel)."""
    tape = tape if tape is not None else ad.Tape()
    ids = input_ids(doc_ids, prepend_bos)
    X = ad.take_rows(tape.param(emb), ids)
    return ad.lstm_sequence(X, *p.nodes(tape))


def run_sequence_stepwise(doc_ids, emb, p, prepend_bos=False, tape=None):
    """Same as :func:`run_sequence` but unrolled through :func:`lstm_step`; returns a list of h nodes."""
    tape = tape if tape is not None else ad.Tape()
    ids = input_ids(doc_ids, prepend_bos)
    E = tape.param(emb)
    state = zero_state(tape, p.hidden_dim)
    hs = []
    for tok in ids:
        state = lstm_step(ad.take_row(E, tok), state, p)
        hs.append(state.h)
    return hs


def mean_pool(hs):
    """Average of hidden states: a list of vector nodes or a (T, E) node."""
    if isinstance(hs, list):
        return ad.mean(hs)
    return ad.mean_rows(hs)
