"""Fused peephole-LSTM sequence kernels (forward and backward).

One document at a time. Every kernel exists in two forms built from the same
source: a plain numpy function and its numba-compiled twin (see ``_jit``).
``lstm_forward`` / ``lstm_backward`` point at whichever one is active.

Gate layout per step, with z = [x; h_prev; c_prev] and zo = [x; h_prev; c_new]::

    i = sigmoid(Wi z + bi)        f = sigmoid(Wf z + bf)
    g = tanh(Wc z[:D+E] + bc)     c_new = f * c_prev + i * g
    o = sigmoid(Wo zo + bo)       h = o * tanh(c_new)
"""

import numpy as np

from ._jit import jit_pair, select


def _lstm_forward(X, Wi, Wf, Wc, Wo, bi, bf, bc, bo):
    T, D = X.shape
    E = bi.shape[0]
    H = np.zeros((T, E))
    C = np.zeros((T, E))
    Z = np.zeros((T, D + 2 * E))
    Zo = np.zeros((T, D + 2 * E))
    I = np.zeros((T, E))
    F = np.zeros((T, E))
    G = np.zeros((T, E))
    O = np.zeros((T, E))
    h = np.zeros(E)
    c = np.zeros(E)
    for t in range(T):
        z = Z[t]
        z[:D] = X[t]
        z[D:D + E] = h
        z[D + E:] = c
        i = 1.0 / (1.0 + np.exp(-(np.dot(Wi, z) + bi)))
        f = 1.0 / (1.0 + np.exp(-(np.dot(Wf, z) + bf)))
        g = np.tanh(np.dot(Wc, z[:D + E]) + bc)
        c = f * c + i * g
        zo = Zo[t]
        zo[:D + E] = z[:D + E]
        zo[D + E:] = c
        o = 1.0 / (1.0 + np.exp(-(np.dot(Wo, zo) + bo)))
        h = o * np.tanh(c)
        H[t] = h
        C[t] = c
        I[t] = i
        F[t] = f
        G[t] = g
        O[t] = o
    return H, C, Z, Zo, I, F, G, O


def _lstm_backward(dH, C, Z, Zo, I, F, G, O, Wi, Wf, Wc, Wo):
    T, E = dH.shape
    D = Z.shape[1] - 2 * E
    dX = np.zeros((T, D))
    dAI = np.zeros((T, E))
    dAF = np.zeros((T, E))
    dAG = np.zeros((T, E))
    dAO = np.zeros((T, E))
    dh_next = np.zeros(E)
    dc_next = np.zeros(E)
    for t in range(T - 1, -1, -1):
        i = I[t]
        f = F[t]
        g = G[t]
        o = O[t]
        c = C[t]
        c_prev = Z[t, D + E:]
        dh = dH[t] + dh_next
        tc = np.tanh(c)
        dao = dh * tc * o * (1.0 - o)
        dzo = np.dot(dao, Wo)
        dc = dc_next + dh * o * (1.0 - tc * tc) + dzo[D + E:]
        dai = dc * g * i * (1.0 - i)
        daf = dc * c_prev * f * (1.0 - f)
        dag = dc * i * (1.0 - g * g)
        dz = np.dot(dai, Wi) + np.dot(daf, Wf)
        dzc = np.dot(dag, Wc)
        dX[t] = dzo[:D] + dz[:D] + dzc[:D]
        dh_next = dzo[D:D + E] + dz[D:D + E] + dzc[D:D + E]
        dc_next = dc * f + dz[D + E:]
        dAI[t] = dai
        dAF[t] = daf
        dAG[t] = dag
        dAO[t] = dao
    dWi = np.dot(dAI.T, Z)
    dWf = np.dot(dAF.T, Z)
    dWc = np.dot(dAG.T, np.ascontiguousarray(Z[:, :D + E]))
    dWo = np.dot(dAO.T, Zo)
    return (dX, dWi, dWf, dWc, dWo,
            dAI.sum(axis=0), dAF.sum(axis=0), dAG.sum(axis=0), dAO.sum(axis=0))


FORWARD_PAIR = jit_pair(_lstm_forward)
BACKWARD_PAIR = jit_pair(_lstm_backward)

lstm_forward = select(FORWARD_PAIR)
lstm_backward = select(BACKWARD_PAIR)
