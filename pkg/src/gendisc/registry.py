"""Build, fit, save and load any of the six model kinds by name."""

import json
from dataclasses import replace

import numpy as np

from .baselines import KneserNeyModel, MlpNaiveBayesModel, NaiveBayesModel, kn_fit, nb_fit
from .models import DiscriminativeModel, IndependentGenerativeModel, SharedGenerativeModel
from .training import accuracy, fit_independent, select_learning_rate, train

MODEL_KINDS = ("disc", "gen-shared", "gen-indep", "nb", "kn", "mlp-nb")
NEURAL = {"disc": DiscriminativeModel, "gen-shared": SharedGenerativeModel,
          "gen-indep": IndependentGenerativeModel, "mlp-nb": MlpNaiveBayesModel}


class UnknownModel(ValueError):
    pass


class VocabularyMismatch(ValueError):
    pass


def build_model(kind, vocab_size, n_classes, settings, seed=None):
    seed = settings.seed if seed is None else seed
    if kind == "disc":
        return DiscriminativeModel(vocab_size, n_classes, settings.dim, settings.hidden, seed,
                                   settings.init_scale)
    if kind == "gen-shared":
        return SharedGenerativeModel(vocab_size, n_classes, settings.dim, settings.hidden,
                                     settings.class_dim or None, seed, settings.init_scale)
    if kind == "gen-indep":
        return IndependentGenerativeModel(vocab_size, n_classes, settings.dim, settings.hidden,
                                          seed, settings.init_scale)
    if kind == "mlp-nb":
        return MlpNaiveBayesModel(vocab_size, n_classes, settings.mlp_hidden, seed,
                                  settings.init_scale)
    raise UnknownModel(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")


def limit_dev(dev, settings):
    """Deterministic random subset of the dev set when ``dev_size`` is set."""
    if not settings.dev_size or settings.dev_size >= len(dev):
        return dev
    idx = np.sort(np.random.default_rng([settings.seed, 17]).permutation(len(dev))[:settings.dev_size])
    return dev.subset(idx, dev.name)


def fit_model(kind, train_ds, dev_ds, settings, vocab_size):
    """Fit one model; returns (model, summary dict, list of per-epoch records)."""
    if kind not in MODEL_KINDS:
        raise UnknownModel(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")
    dev_ds = limit_dev(dev_ds, settings)
    if kind == "nb":
        model = nb_fit(train_ds, settings.nb_alpha, vocab_size)
        return model, {"dev_accuracy": accuracy(model, dev_ds) if len(dev_ds) else None}, []
    if kind == "kn":
        model = kn_fit(train_ds, settings.kn_discount, vocab_size)
        return model, {"dev_accuracy": accuracy(model, dev_ds) if len(dev_ds) else None}, []

    def fit_at(lr):
        cfg = settings.optimizer(lr=lr)
        model = build_model(kind, vocab_size, train_ds.n_classes, settings)
        if kind == "gen-indep":
            reports = fit_independent(model, train_ds, dev_ds, cfg, workers=settings.workers)
            model.set_prior(train_ds.labels)
            report = reports[min(reports)]
            report = replace(report, best_dev_accuracy=accuracy(model, dev_ds),
                             epochs=[dict(r, **{"class": y}) for y, rep in sorted(reports.items())
                                     for r in rep.epochs])
            return model, report
        return model, train(model, train_ds, dev_ds, cfg)

    model, report = select_learning_rate(fit_at, settings.grid())
    summary = {"dev_accuracy": report.best_dev_accuracy, "best_epoch": report.best_epoch,
               "lr": report.lr, "wall_clock": report.wall_clock}
    return model, summary, report.epochs


# ----------------------------------------------------------------- checkpoints


def save_model(path, model, vocab_digest, class_names, extra=None):
    """One ``.npz`` with arrays, AdaGrad history and a JSON header."""
    arrays = {}
    if getattr(model, "log_prior", None) is not None:
        arrays["log_prior"] = np.asarray(model.log_prior, dtype=np.float64)
    meta = {"kind": model.kind, "config": model.config(), "vocab_hash": vocab_digest,
            "class_names": list(class_names), "extra": extra or {}}
    if model.kind == "nb":
        arrays["counts"] = model.counts
    elif model.kind == "kn":
        arrays["trigrams"] = model.trigram_array()
    else:
        for p in model.parameters():
            arrays[f"value/{p.name}"] = p.value
            arrays[f"accum/{p.name}"] = p.accum
        meta["frozen"] = [p.name for p in model.parameters() if p.frozen]
        for attr in ("pretrain_vector", "class_counts"):
            val = getattr(model, attr, None)
            if val is not None:
                arrays[attr] = np.asarray(val, dtype=np.float64)
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path, vocab=None):
    """Inverse of :func:`save_model`; refuses a checkpoint built on another vocabulary."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if vocab is not None and meta["vocab_hash"] != vocab.digest():
            raise VocabularyMismatch("checkpoint vocabulary hash does not match the supplied vocabulary")
        kind, conf = meta["kind"], meta["config"]
        if kind == "nb":
            model = NaiveBayesModel(data["counts"], conf["alpha"])
        elif kind == "kn":
            model = KneserNeyModel.from_trigram_array(data["trigrams"], conf["n_classes"],
                                                      conf["vocab_size"], conf["d"])
        else:
            cls = NEURAL[kind]
            if kind == "gen-shared":
                model = cls(conf["vocab_size"], conf["n_classes"], conf["dim"], conf["hidden"],
                            conf["class_dim"])
            elif kind == "mlp-nb":
                model = cls(conf["vocab_size"], conf["n_classes"], conf["hidden"])
            else:
                model = cls(conf["vocab_size"], conf["n_classes"], conf["dim"], conf["hidden"])
            frozen = set(meta.get("frozen", []))
            for p in model.parameters():
                p.value[...] = data[f"value/{p.name}"]
                p.accum[...] = data[f"accum/{p.name}"]
                p.frozen = p.name in frozen
            for attr in ("pretrain_vector", "class_counts"):
                if attr in data.files:
                    setattr(model, attr, np.array(data[attr]))
            if hasattr(model, "invalidate"):
                model.invalidate()
        if "log_prior" in data.files:
            model.log_prior = np.array(data["log_prior"])
    return model, meta
