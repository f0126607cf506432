"""Evaluation metrics and the four experiment protocols.

* learning curves over per-class training sizes
* continual learning with classes introduced one at a time
* zero-shot learning with fixed label embeddings and self-training
* distribution-shift scoring with the marginal likelihood p(x)
"""

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .models import DiscriminativeModel, SharedGenerativeModel, marginal_loglik
from .registry import build_model, fit_model, limit_dev
from .text import DataError, Dataset, label_word, subsample_per_class
from .training import (accuracy, fit_epochs, fit_independent, fit_new_class, pretrain_shared_lm,
                       split_heldout, train)

log = logging.getLogger(__name__)


@dataclass
class Metrics:
    accuracy: float
    per_class: list
    confusion: np.ndarray

    def to_dict(self):
        return {"accuracy": self.accuracy,
                "precision": [p for p, _ in self.per_class],
                "recall": [r for _, r in self.per_class],
                "confusion": self.confusion.tolist()}


def evaluate(preds, golds, n_classes=None):
    """Accuracy and per-class precision/recall in percent.

    A class that is never predicted has precision 0; a class with no gold
    examples has recall 0.
    """
    preds = np.asarray(preds, dtype=np.int64)
    golds = np.asarray(golds, dtype=np.int64)
    if preds.shape != golds.shape:
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold labels")
    if preds.size == 0:
        raise ValueError("nothing to evaluate")
    k = n_classes if n_classes is not None else int(max(preds.max(), golds.max())) + 1
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (golds, preds), 1)
    tp = np.diag(confusion).astype(float)
    predicted = confusion.sum(axis=0)
    gold = confusion.sum(axis=1)
    per_class = []
    for y in range(k):
        p = float(100.0 * tp[y] / predicted[y]) if predicted[y] else 0.0
        r = float(100.0 * tp[y] / gold[y]) if gold[y] else 0.0
        per_class.append((p, r))
    return Metrics(float(100.0 * tp.sum() / preds.size), per_class, confusion)


def predict_all(model, docs, allowed=None):
    """Predictions, optionally restricted to the ``allowed`` classes."""
    if allowed is None:
        return np.array([model.predict(d) for d in docs], dtype=np.int64)
    allowed = np.asarray(sorted(allowed))
    out = []
    for d in docs:
        if isinstance(model, DiscriminativeModel):
            scores = model.log_posterior(d)
        else:
            scores = model.class_logliks(d) + model.log_prior
        out.append(int(allowed[np.argmax(scores[allowed])]))
    return np.array(out, dtype=np.int64)


# -------------------------------------------------------------- learning curve


@dataclass
class CurvePoint:
    n_per_class: int
    model: str
    accuracy: float
    seed: int
    error: str = None


def _curve_cell(args):
    kind, n, seed, train_ds, dev_ds, test_ds, settings, vocab_size = args
    try:
        sub = subsample_per_class(train_ds, n, seed)
        model, _, _ = fit_model(kind, sub, dev_ds, replace(settings, seed=seed), vocab_size)
        return CurvePoint(n, kind, accuracy(model, test_ds), seed)
    except Exception as exc:  # one failing cell must not stop the grid
        log.warning("curve cell %s n=%d seed=%d failed: %s", kind, n, seed, exc)
        return CurvePoint(n, kind, float("nan"), seed, f"{type(exc).__name__}: {exc}")


def learning_curve(train_ds, dev_ds, test_ds, kinds, sizes, seeds, settings, vocab_size, workers=1):
    """Test accuracy for every (size, model, seed) cell."""
    dev_ds = limit_dev(dev_ds, settings)
    jobs = [(kind, n, seed, train_ds, dev_ds, test_ds, settings, vocab_size)
            for n in sizes for kind in kinds for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_curve_cell, jobs))
    return [_curve_cell(job) for job in jobs]


def curve_means(points):
    """{(model, n): mean accuracy over seeds}."""
    acc = {}
    for p in points:
        acc.setdefault((p.model, p.n_per_class), []).append(p.accuracy)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def write_curve_csv(points, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_per_class", "model", "seed", "accuracy", "error"])
        for p in points:
            w.writerow([p.n_per_class, p.model, p.seed, p.accuracy, p.error or ""])


# ---------------------------------------------------------- continual learning

CONTINUAL_KINDS = ("disc", "disc-frozen-emb", "disc-softmax-only", "gen-indep", "gen-shared")


def run_continual(train_ds, dev_ds, test_ds, kind, class_order, settings, vocab_size):
    """Introduce classes one at a time; evaluate on seen-class test docs after each phase.

    Discriminative variants update on the new class only for
    ``settings.continual_epochs`` epochs. ``gen-indep`` fits a fresh LM per
    class; ``gen-shared`` pretrains once on all training documents without
    labels and then fits only v_y and b_y per class. Returns (model, phases).
    """
    n = train_ds.n_classes
    order = [int(c) for c in class_order]
    if sorted(order) != list(range(n)):
        raise ValueError(f"class order {order} is not a permutation of {n} classes")
    if kind not in CONTINUAL_KINDS:
        raise ValueError(f"unknown continual model {kind!r}")
    cfg = settings.optimizer()
    model = None
    if kind.startswith("disc"):
        model = build_model("disc", vocab_size, n, settings)
    elif kind == "gen-indep":
        model = build_model("gen-indep", vocab_size, n, settings)
        model.log_prior = np.full(n, -np.inf)
    else:
        model, _ = pretrain_shared_lm(list(train_ds.docs), vocab_size, n, cfg, settings.dim,
                                      settings.hidden, settings.class_dim or None,
                                      init_scale=settings.init_scale)
    counts = np.zeros(n)
    phases = []
    t0 = time.perf_counter()
    for k, y in enumerate(order, start=1):
        new = train_ds.of_classes([y])
        new_dev = dev_ds.of_classes([y]) if dev_ds is not None else None
        if kind.startswith("disc"):
            if k == 2 and kind == "disc-frozen-emb":
                model.emb.frozen = True
            if k == 2 and kind == "disc-softmax-only":
                for p in [model.emb, *model.lstm.parameters()]:
                    p.frozen = True
            report = fit_epochs(model, new, replace(cfg, seed=cfg.seed + k - 1),
                                settings.continual_epochs)
        elif kind == "gen-indep":
            report = fit_independent(model, new, new_dev, cfg, classes=[y])[y]
            counts[y] = len(new)
            with np.errstate(divide="ignore"):
                model.log_prior = np.log(counts / counts.sum())
        else:
            dev_docs = list(new_dev.docs) if new_dev is not None and len(new_dev) else None
            _, _, report = fit_new_class(model, list(new.docs), y, cfg, dev_docs=dev_docs)
        seen = order[:k]
        test_seen = test_ds.of_classes(seen)
        preds = predict_all(model, test_seen.docs, allowed=seen)
        metrics = evaluate(preds, test_seen.labels, n)
        phases.append({"phase": k, "new_class": y, "seen": list(seen),
                       "metrics": metrics.to_dict(), "accuracy": metrics.accuracy,
                       "predicts_new_class": float(100.0 * np.mean(preds == y)),
                       "report": report.summary(), "elapsed": time.perf_counter() - t0})
    return model, phases


# ----------------------------------------------------------------- zero-shot


def label_vectors(class_names, wv, table=None):
    """Unit-norm label vectors, one per class, from each class's label word."""
    rows = []
    missing = []
    for name in class_names:
        word = label_word(name, table)
        if word not in wv:
            missing.append(f"{name} -> {word}")
            continue
        v = np.asarray(wv[word], dtype=np.float64)
        rows.append(v / np.linalg.norm(v))
    if missing:
        raise DataError(f"no label vector for: {', '.join(missing)}")
    return np.stack(rows)


def self_train_round(model, pool_docs, hidden, ratio=2.0, already=()):
    """Pool documents to add as pseudo-labeled hidden-class examples.

    A document qualifies when its argmax class is hidden and the posterior
    ratio between the top two classes is at least ``ratio``. Indices in
    ``already`` are skipped. Returns a list of (pool index, predicted class).
    """
    hidden = set(int(h) for h in hidden)
    already = set(already)
    if not np.isfinite(ratio):
        return []
    threshold = np.log(ratio)
    picks = []
    for i, doc in enumerate(pool_docs):
        if i in already:
            continue
        joint = model.class_logliks(doc) + model.log_prior
        top = np.argsort(-joint, kind="stable")
        best = int(top[0])
        if best not in hidden:
            continue
        margin = joint[top[0]] - joint[top[1]] if len(top) > 1 else np.inf
        if margin >= threshold:
            picks.append((i, best))
    return picks


def _hidden_report(metrics, hidden):
    return {"accuracy": metrics.accuracy,
            "hidden": {int(h): {"precision": metrics.per_class[h][0],
                                "recall": metrics.per_class[h][1]} for h in hidden}}


def init_output_from_vectors(model, vocab, wv, scale=1.0):
    """Set the class block of U to unit-norm word vectors for every covered token."""
    E = model.hidden_dim
    for i, tok in enumerate(vocab.tokens):
        if tok in wv:
            v = np.asarray(wv[tok], dtype=np.float64)
            model.U.value[i, E:] = scale * v / np.linalg.norm(v)


def run_zero_shot(train_ds, dev_ds, test_ds, hidden, wv, settings, vocab, mode="gen", table=None):
    """Train with fixed label embeddings while withholding ``hidden`` classes.

    Dev documents serve only as an unlabeled self-training pool; early stopping
    uses a held-out slice of the seen-class training data. Returns a result
    dict with test metrics, hidden-class precision/recall and a per-round trace.
    """
    hidden = sorted(int(h) for h in hidden)
    if len(hidden) > 2 or any(not 0 <= h < train_ds.n_classes for h in hidden):
        raise ValueError(f"hidden classes must be at most two valid class ids, got {hidden}")
    n = train_ds.n_classes
    LV = label_vectors(train_ds.class_names, wv, table)
    seen = [y for y in range(n) if y not in hidden]
    seen_train = train_ds.of_classes(seen)
    fit_idx, held_idx = split_heldout(len(seen_train), [settings.seed, 31])
    fit_part = seen_train.subset(fit_idx)
    held = seen_train.subset(held_idx)
    cfg = settings.optimizer()
    vocab_size = len(vocab)
    if mode == "disc":
        model = DiscriminativeModel(vocab_size, n, settings.dim, wv.dim, settings.seed,
                                    settings.init_scale)
        model.V.value[...] = LV.T
        model.V.frozen = True
        model.b.frozen = True
        report = train(model, fit_part, held, cfg)
        metrics = evaluate(predict_all(model, test_ds.docs), test_ds.labels, n)
        return {"mode": mode, "hidden_classes": hidden, "model": model,
                "report": report.summary(), "metrics": metrics, **_hidden_report(metrics, hidden),
                "trace": [dict(round=0, added=0, **_hidden_report(metrics, hidden))]}

    model = SharedGenerativeModel(vocab_size, n, settings.dim, settings.hidden, wv.dim,
                                  settings.seed, settings.init_scale)
    model.class_emb.value[...] = LV
    model.class_emb.frozen = True
    if settings.vector_init_scale:
        init_output_from_vectors(model, vocab, wv, settings.vector_init_scale)
    report = train(model, fit_part, held, cfg, prior="laplace")
    metrics = evaluate(predict_all(model, test_ds.docs), test_ds.labels, n)
    trace = [dict(round=0, added=0, **_hidden_report(metrics, hidden))]
    added = {}
    retrain_cfg = settings.optimizer(max_epochs=settings.retrain_epochs)
    for rnd in range(1, settings.self_train_rounds + 1):
        picks = self_train_round(model, dev_ds.docs, hidden, settings.self_train_ratio, added)
        if not picks:
            break
        added.update(picks)
        idx = sorted(added)
        augmented = Dataset(list(fit_part.docs) + [dev_ds.docs[i] for i in idx],
                            np.concatenate([fit_part.labels, [added[i] for i in idx]]),
                            n, fit_part.name, list(train_ds.class_names))
        train(model, augmented, held, replace(retrain_cfg, seed=cfg.seed + rnd), prior="laplace")
        metrics = evaluate(predict_all(model, test_ds.docs), test_ds.labels, n)
        pseudo_right = sum(int(dev_ds.labels[i] == lab) for i, lab in added.items())
        trace.append(dict(round=rnd, added=len(picks), pool_used=len(added),
                          pseudo_label_precision=100.0 * pseudo_right / len(added),
                          **_hidden_report(metrics, hidden)))
    return {"mode": mode, "hidden_classes": hidden, "model": model, "report": report.summary(),
            "metrics": metrics, **_hidden_report(metrics, hidden), "trace": trace}


# ------------------------------------------------------------ shift detection


@dataclass
class ShiftScore:
    doc_id: int
    gold: int
    log_px: float
    n_tokens: int

    @property
    def per_token(self):
        return self.log_px / self.n_tokens


def score_shift(model, docs, golds):
    return [ShiftScore(i, int(g), marginal_loglik(model, d), len(d))
            for i, (d, g) in enumerate(zip(docs, golds))]


def shift_histogram(scores, bins=30, per_token=True):
    """Rows (gold class, bin low, bin high, count) over a shared bin grid."""
    vals = np.array([s.per_token if per_token else s.log_px for s in scores])
    edges = np.histogram_bin_edges(vals, bins=bins)
    rows = []
    for g in sorted({s.gold for s in scores}):
        sel = vals[[s.gold == g for s in scores]]
        counts, _ = np.histogram(sel, bins=edges)
        rows.extend((g, float(edges[j]), float(edges[j + 1]), int(c)) for j, c in enumerate(counts))
    return rows


def write_shift_csv(scores, path, bins=30):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["normalization", "gold_class", "bin_low", "bin_high", "count"])
        for norm, per_token in (("per_token", True), ("total", False)):
            for row in shift_histogram(scores, bins, per_token):
                w.writerow([norm, *row])


def shift_summary(scores, held_out):
    """Medians, means and a one-sided rank-sum test (held-out lower) of per-token log p(x)."""
    held_out = set(held_out)
    unseen = np.array([s.per_token for s in scores if s.gold in held_out])
    seen = np.array([s.per_token for s in scores if s.gold not in held_out])
    test = stats.mannwhitneyu(unseen, seen, alternative="less")
    return {"unseen_mean": float(unseen.mean()), "seen_mean": float(seen.mean()),
            "unseen_median": float(np.median(unseen)), "seen_median": float(np.median(seen)),
            "median_gap": float(np.median(seen) - np.median(unseen)),
            "ranksum_p": float(test.pvalue), "n_unseen": int(unseen.size), "n_seen": int(seen.size)}


def run_shift(train_ds, dev_ds, test_ds, held_out, settings, vocab_size):
    """Train the shared generative model without ``held_out`` classes and score all test docs."""
    held_out = sorted(int(h) for h in held_out)
    seen = [y for y in range(train_ds.n_classes) if y not in held_out]
    model = build_model("gen-shared", vocab_size, train_ds.n_classes, settings)
    dev_seen = limit_dev(dev_ds.of_classes(seen), settings)
    report = train(model, train_ds.of_classes(seen), dev_seen, settings.optimizer(), prior="exclude")
    scores = score_shift(model, test_ds.docs, test_ds.labels)
    return model, scores, shift_summary(scores, held_out), report


def metrics_record(experiment, params, metrics, settings, wall_clock, **extra):
    rec = {"experiment": experiment, "params": params, "seed": settings.seed,
           "config_hash": settings.digest(), "wall_clock": wall_clock}
    rec["metrics"] = metrics.to_dict() if isinstance(metrics, Metrics) else metrics
    rec.update(extra)
    return rec


def fixture_gradient_check(dim=8, init_scale=0.5, seed=0, eps=1e-4, n_coords=40):
    """Max relative gradient error of disc_nll and the generative document NLL on fixture F1."""
    from . import autodiff as ad
    from .models import disc_nll
    from .synthetic import fixture_f1

    train_ds, _, _, vocab = fixture_f1()
    batch = list(zip(train_ds.docs, (int(y) for y in train_ds.labels)))
    disc = DiscriminativeModel(len(vocab), 2, dim, dim, seed, init_scale)
    gen = SharedGenerativeModel(len(vocab), 2, dim, dim, None, seed, init_scale)

    def gen_loss(tape):
        acc = gen.nll(tape, *batch[0])
        for doc, y in batch[1:]:
            acc = ad.add(acc, gen.nll(tape, doc, y))
        return ad.scale(acc, 1.0 / len(batch))

    return {"disc_nll": ad.grad_check(lambda tape: disc_nll(disc, batch, tape), disc.parameters(),
                                      eps, n_coords, seed),
            "gen_doc_nll": ad.grad_check(gen_loss, gen.parameters(), eps, n_coords, seed)}
