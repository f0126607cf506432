"""AdaGrad, dev-based early stopping, and the continual-learning procedures."""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError, Parameter
from .lstm import INIT_SCALE, uniform_init
from .models import SharedGenerativeModel, sample_unit_ball

log = logging.getLogger(__name__)

LR_GRID = (0.5, 0.1, 0.05, 0.01)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.1
    eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


class TrainingDiverged(NumericalError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_accuracy: float = None
    best_dev_nll: float = None
    lr: float = None
    wall_clock: float = field(default=0.0, compare=False)

    def to_ndjson(self):
        import json

        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.epochs)

    def summary(self):
        out = asdict(self)
        out.pop("epochs")
        return out


def adagrad_update(p, lr, eps=1e-8):
    """accum += g^2; value -= lr * g / (sqrt(accum) + eps); grad is zeroed."""
    g = p.grad
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient in {p.name}")
    p.accum += g * g
    p.value -= lr * g / (np.sqrt(p.accum) + eps)
    g.fill(0.0)


def clip_gradients(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``; returns the norm."""
    norm = float(np.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params)))
    if not np.isfinite(norm):
        raise NumericalError("non-finite gradient norm")
    if np.isfinite(max_norm) and norm > max_norm:
        s = max_norm / norm
        for p in params:
            p.grad *= s
    return norm


def accuracy(model, ds):
    if len(ds) == 0:
        return float("nan")
    preds = np.array([model.predict(d) for d in ds.docs])
    return float(100.0 * np.mean(preds == ds.labels))


def trainable(params):
    return [p for p in params if not p.frozen]


def _snapshot(params):
    return [(p.value.copy(), p.accum.copy()) for p in params]


def _restore(params, snap):
    for p, (v, a) in zip(params, snap):
        p.value[...] = v
        p.accum[...] = a


def _run_epoch(params, n, loss_at, cfg, rng, on_update=None):
    """One shuffled pass of minibatch AdaGrad; returns the mean per-example loss."""
    order = rng.permutation(n)
    total = 0.0
    for p in params:
        p.zero_grad()
    for start in range(0, n, cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        for i in batch:
            tape = ad.Tape()
            loss = loss_at(tape, int(i))
            total += float(loss.value)
            tape.backward(loss, seed=1.0 / len(batch))
        clip_gradients(params, cfg.clip_norm)
        for p in params:
            adagrad_update(p, cfg.lr, cfg.eps)
        if on_update is not None:
            on_update()
    return total / max(n, 1)


def _optimize(params, n, loss_at, cfg, evaluate, metric, higher_is_better, snap_params,
              on_update=None, max_epochs=None):
    """Epoch loop with best-checkpoint restore and patience-based stopping."""
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport(lr=cfg.lr)
    t0 = time.perf_counter()
    best = None
    best_snap = _snapshot(snap_params)
    max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
    for epoch in range(1, max_epochs + 1):
        try:
            train_loss = _run_epoch(params, n, loss_at, cfg, rng, on_update)
        except NumericalError as exc:
            _restore(snap_params, best_snap)
            if on_update is not None:
                on_update()
            report.wall_clock = time.perf_counter() - t0
            raise TrainingDiverged(f"diverged in epoch {epoch}: {exc}", report) from exc
        value = evaluate() if evaluate is not None else None
        report.epochs.append({"epoch": epoch, "train_loss": train_loss, metric: value})
        log.debug("epoch %d loss %.4f %s %s", epoch, train_loss, metric, value)
        if value is None:
            best_snap = _snapshot(snap_params)
            report.best_epoch = epoch
            continue
        improved = best is None or (value > best if higher_is_better else value < best)
        if improved:
            best = value
            report.best_epoch = epoch
            best_snap = _snapshot(snap_params)
        elif epoch - report.best_epoch >= cfg.patience:
            break
    _restore(snap_params, best_snap)
    if on_update is not None:
        on_update()
    if metric == "dev_accuracy":
        report.best_dev_accuracy = best
    elif metric == "dev_nll_per_token":
        report.best_dev_nll = best
    report.wall_clock = time.perf_counter() - t0
    return report


def train(model, train_ds, dev_ds, cfg, prior="error", max_epochs=None):
    """Minibatch AdaGrad on ``model.loss`` with dev-accuracy early stopping.

    The best-epoch parameters are restored before returning. Generative models
    get their class prior from ``train_ds`` labels (``prior=None`` keeps the
    current one).
    """
    if len(dev_ds) == 0:
        raise ValueError("dev set is empty")
    if prior is not None and hasattr(model, "set_prior"):
        model.set_prior(train_ds.labels, missing=prior)
    params = trainable(model.parameters())
    docs, labels = train_ds.docs, train_ds.labels

    def loss_at(tape, i):
        return model.loss(tape, docs[i], int(labels[i]))

    return _optimize(params, len(docs), loss_at, cfg, lambda: accuracy(model, dev_ds),
                     "dev_accuracy", True, model.parameters(),
                     getattr(model, "invalidate", None), max_epochs)


def fit_epochs(model, train_ds, cfg, epochs):
    """Train for exactly ``epochs`` epochs with no dev set (no early stopping)."""
    params = trainable(model.parameters())
    docs, labels = train_ds.docs, train_ds.labels

    def loss_at(tape, i):
        return model.loss(tape, docs[i], int(labels[i]))

    return _optimize(params, len(docs), loss_at, cfg, None, "dev_accuracy", True,
                     model.parameters(), getattr(model, "invalidate", None), epochs)


def select_learning_rate(fit, grid=LR_GRID):
    """Call ``fit(lr) -> (model, report)`` for every rate; keep the best dev accuracy.

    Ties go to the earlier grid entry.
    """
    best = None
    for lr in grid:
        model, report = fit(lr)
        score = report.best_dev_accuracy
        if best is None or score > best[1].best_dev_accuracy:
            best = (model, report)
    return best


def nll_per_token(nll_fn, docs):
    tokens = sum(len(d) for d in docs)
    return sum(float(nll_fn(ad.Tape(), d).value) for d in docs) / tokens


def split_heldout(n, seed, fraction=0.1, min_size=10):
    """Indices (fit, heldout); no held-out part below ``min_size`` examples."""
    idx = np.arange(n)
    if n < min_size:
        return idx, idx[:0]
    perm = np.random.default_rng(seed).permutation(n)
    k = max(1, int(round(n * fraction)))
    return np.sort(perm[k:]), np.sort(perm[:k])


def train_lm(nll_fn, params, docs, dev_docs, cfg, snap_params=None):
    """Minimize document NLL with early stopping on dev NLL per token.

    Without dev documents the loop runs ``cfg.max_epochs`` epochs.
    """
    if not docs:
        raise ValueError("no training documents")

    def loss_at(tape, i):
        return nll_fn(tape, docs[i])

    evaluate = (lambda: nll_per_token(nll_fn, dev_docs)) if dev_docs else None
    return _optimize(trainable(params), len(docs), loss_at, cfg, evaluate,
                     "dev_nll_per_token", False, snap_params or params)


def pretrain_shared_lm(docs, vocab_size, n_classes, cfg, dim=100, hidden=100, class_dim=None,
                       dev_docs=None, init_scale=INIT_SCALE):
    """Train emb, LSTM and U as a plain LM on unlabeled documents.

    The class slot of the softmax input holds one fixed random vector drawn
    uniformly from the unit ball; there is no class bias. Returns the model
    (class vectors untouched) and the report.
    """
    if not docs:
        raise ValueError("no unlabeled documents")
    model = SharedGenerativeModel(vocab_size, n_classes, dim, hidden, class_dim,
                                  seed=cfg.seed, init_scale=init_scale)
    model.pretrain_vector = sample_unit_ball(np.random.default_rng([cfg.seed, 7919]),
                                             model.class_dim)
    if dev_docs is None:
        fit_idx, held_idx = split_heldout(len(docs), cfg.seed)
        dev_docs = [docs[i] for i in held_idx]
        docs = [docs[i] for i in fit_idx]
    model.class_counts = np.zeros(n_classes)
    model.log_prior = np.full(n_classes, -np.inf)
    report = train_lm(model.pretrain_nll, model.shared_parameters(), docs, dev_docs, cfg)
    return model, report


def fit_new_class(model, docs, y, cfg, dev_docs=None, init=None):
    """Learn only v_y and b_y for class ``y`` on top of frozen shared parameters.

    The LSTM states of every document are computed once since nothing that
    feeds them changes. The prior is re-estimated over all classes fitted so
    far (unfitted classes get log-prior -inf).
    """
    if not docs:
        raise ValueError(f"no examples for class {y}")
    rng = np.random.default_rng([cfg.seed, y])
    K = model.class_dim
    E = model.hidden_dim
    V = model.U.shape[0]
    v0 = uniform_init(rng, K, INIT_SCALE) if init is None else np.array(init, dtype=float)
    v = Parameter(f"class_emb[{y}]", v0)
    b = Parameter(f"class_bias[{y}]", np.zeros(V))
    U = model.U.value
    Uh_T = np.ascontiguousarray(U[:, :E].T)
    Uv_T = np.ascontiguousarray(U[:, E:].T)

    n_examples = len(docs)
    if dev_docs is None:
        fit_idx, held_idx = split_heldout(len(docs), [cfg.seed, y])
        dev_docs = [docs[i] for i in held_idx]
        docs = [docs[i] for i in fit_idx]
    all_docs = list(docs) + list(dev_docs)
    states = {id(d): model.hidden_states(d) for d in all_docs}

    def nll(tape, doc):
        targets = np.asarray(doc, dtype=np.int64)
        A = tape.constant(states[id(doc)] @ Uh_T)
        shift = ad.add(ad.matmul(tape.param(v), tape.constant(Uv_T)), tape.param(b))
        logp = ad.log_softmax(ad.add_row(A, shift))
        return ad.neg(ad.total(ad.pick(logp, targets)))

    report = train_lm(nll, [v, b], list(docs), list(dev_docs), cfg)
    model.class_emb.value[y] = v.value
    model.class_bias.value[y] = b.value
    counts = getattr(model, "class_counts", None)
    if counts is None:
        counts = np.zeros(model.n_classes)
    counts[y] = n_examples
    model.class_counts = counts
    with np.errstate(divide="ignore"):
        model.log_prior = np.log(counts / counts.sum())
    return v.value.copy(), b.value.copy(), report


def _fit_class_lm(args):
    lm, docs, dev_docs, cfg = args
    report = train_lm(lm.nll, lm.parameters(), docs, dev_docs, cfg)
    return lm, report


def fit_independent(model, train_ds, dev_ds, cfg, workers=1, classes=None):
    """Train each class LM on its own documents; classes are independent jobs.

    Each class uses seed ``(cfg.seed, y)`` so the result does not depend on
    ``workers`` or on the order classes are visited.
    """
    classes = list(range(model.n_classes)) if classes is None else list(classes)
    jobs = []
    for y in classes:
        docs = [d for d, lab in zip(train_ds.docs, train_ds.labels) if lab == y]
        dev_docs = [d for d, lab in zip(dev_ds.docs, dev_ds.labels) if lab == y] if dev_ds else []
        if not docs:
            raise ValueError(f"no training documents for class {y}")
        jobs.append((model.lms[y], docs, dev_docs, replace(cfg, seed=_class_seed(cfg.seed, y))))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_class_lm, jobs))
    else:
        results = [_fit_class_lm(job) for job in jobs]
    reports = {}
    for y, (lm, report) in zip(classes, results):
        model.lms[y] = lm
        reports[y] = report
    return reports


def _class_seed(seed, y):
    return int(np.random.SeedSequence([seed, y]).generate_state(1)[0])
