"""Command-line entry point: ``gendisc <command> ...``.

Every command that produces results writes into a fresh run directory named
``<timestamp>-<hash>`` holding ``manifest.json`` plus its outputs. A run can be
repeated from its manifest with ``gendisc replay``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NumericalError
from .config import PRESETS, ints, load_settings, names
from .experiments import (CONTINUAL_KINDS, curve_means, evaluate, fixture_gradient_check,
                          learning_curve, metrics_record, predict_all, run_continual, run_shift,
                          run_zero_shot, write_curve_csv, write_shift_csv)
from .models import PriorError
from .registry import MODEL_KINDS, UnknownModel, VocabularyMismatch, fit_model, load_model, save_model
from .synthetic import TopicCorpus, fixture_f1
from .text import (DataError, Vocabulary, build_vocab, encode_examples, hold_out_dev, load_csv,
                   label_word, load_encoded, load_word_vectors, save_encoded, save_word_vectors,
                   subsample_per_class, tokenize)

log = logging.getLogger("gendisc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------- prepared data


class Prepared:
    """A prepared data directory: vocab.txt, meta.json and encoded splits."""

    def __init__(self, path):
        self.path = Path(path)
        meta_path = self.path / "meta.json"
        if not meta_path.is_file():
            raise DataError(f"{self.path}: not a prepared data directory (no meta.json)")
        self.meta = json.loads(meta_path.read_text())
        self.vocab = Vocabulary.load(self.path / "vocab.txt")
        if self.vocab.digest() != self.meta["vocab_hash"]:
            raise DataError(f"{self.path}: vocab.txt does not match meta.json")
        self.class_names = self.meta["class_names"]
        self.n_classes = len(self.class_names)
        self._splits = {}

    def split(self, name):
        if name not in self._splits:
            f = self.path / f"{name}.txt"
            if not f.is_file():
                raise DataError(f"{self.path}: no {name} split")
            self._splits[name] = load_encoded(f, self.n_classes, name, self.class_names)
        return self._splits[name]

    def vectors_path(self):
        f = self.path / "vectors.txt"
        return f if f.is_file() else None

    def hashes(self):
        return {"vocab": self.meta["vocab_hash"], **self.meta["split_hashes"]}


def _class_names(arg, train_csv, n_classes):
    if arg:
        p = Path(arg)
        lines = p.read_text().splitlines() if p.is_file() else arg.split(",")
        out = [x.strip() for x in lines if x.strip()]
    else:
        default = Path(train_csv).with_name("classes.txt")
        out = [x.strip() for x in default.read_text().splitlines() if x.strip()] \
            if default.is_file() else [str(k + 1) for k in range(n_classes)]
    if len(out) != n_classes:
        raise DataError(f"{len(out)} class names for {n_classes} classes")
    return out


def write_prepared(out, vocab, splits, class_names, source, settings, vectors=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    for name, ds in splits.items():
        save_encoded(out / f"{name}.txt", ds)
    if vectors is not None:
        save_word_vectors(out / "vectors.txt", vectors)
    meta = {"source": source, "class_names": list(class_names), "vocab_hash": vocab.digest(),
            "vocab_size": len(vocab), "sizes": {k: len(v) for k, v in splits.items()},
            "split_hashes": {k: v.digest() for k, v in splits.items()},
            "max_vocab": settings.max_vocab, "min_count": settings.min_count,
            "n_dev": settings.n_dev, "seed": settings.seed}
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return meta


def cmd_prepare(args, settings):
    vectors = None
    if args.source == "f1":
        train, dev, test, vocab = fixture_f1()
        class_names = train.class_names
    elif args.source == "topics":
        corpus = TopicCorpus(seed=settings.seed)
        n = args.per_class or 1000
        train, dev, test, vocab = corpus.datasets(n, max(n // 4, 10), max(n // 2, 10),
                                                  settings.max_vocab, settings.min_count)
        class_names = corpus.class_names
        vectors = corpus.vectors
    else:
        if not args.train or not args.test:
            raise UsageError("prepare: --train and --test are required for --source csv")
        train_ex, test_ex = load_csv(args.train), load_csv(args.test)
        n_classes = max(ex.label for ex in train_ex + test_ex) + 1
        class_names = _class_names(args.classes, args.train, n_classes)
        vocab = build_vocab([tokenize(ex.text) for ex in train_ex], settings.max_vocab,
                            settings.min_count)
        full = encode_examples(train_ex, vocab, n_classes, "train", class_names)
        test = encode_examples(test_ex, vocab, n_classes, "test", class_names)
        train, dev = hold_out_dev(full, settings.n_dev, settings.seed) if settings.n_dev \
            else (full, full.subset([], "dev"))
        if args.vectors:
            vectors = load_word_vectors(args.vectors, vocab, _label_words(class_names))
    splits = {"train": train, "dev": dev, "test": test}
    meta = write_prepared(args.out, vocab, splits, class_names, args.source, settings, vectors)
    sizes = meta["sizes"]
    print(f"train={sizes['train']} dev={sizes['dev']} test={sizes['test']} "
          f"vocab={meta['vocab_size']} classes={len(class_names)}")
    return EXIT_OK


def _label_words(class_names):
    return [label_word(c) for c in class_names]


def cmd_synth(args, settings):
    corpus = TopicCorpus(seed=settings.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.write_csv(out / "train.csv", args.per_class, 0)
    corpus.write_csv(out / "test.csv", max(args.per_class // 4, 1), 2)
    (out / "classes.txt").write_text("\n".join(corpus.class_names) + "\n")
    save_word_vectors(out / "vectors.txt", corpus.vectors)
    print(f"wrote {out}/train.csv, test.csv, classes.txt, vectors.txt")
    return EXIT_OK


# ------------------------------------------------------------------ run dirs


class Run:
    """Run directory with a manifest written at start and completed at the end."""

    def __init__(self, root, argv, settings, data):
        self.started = time.time()
        self.manifest = {
            "command": list(argv), "config": asdict(settings), "config_hash": settings.digest(),
            "seeds": ints(settings.seeds) if settings.seeds else [settings.seed],
            "seed": settings.seed, "data": str(data.path) if data else None,
            "dataset_hashes": data.hashes() if data else {},
            "vocab_hash": data.meta["vocab_hash"] if data else None,
            "version": __version__, "started": _stamp(self.started),
        }
        key = json.dumps({k: self.manifest[k] for k in ("command", "config", "dataset_hashes")},
                         sort_keys=True)
        digest = hashlib.sha256(key.encode()).hexdigest()[:10]
        base = Path(root) / f"{time.strftime('%Y%m%d-%H%M%S', time.localtime(self.started))}-{digest}"
        path, k = base, 1
        while path.exists():
            path = base.with_name(f"{base.name}.{k}")
            k += 1
        path.mkdir(parents=True)
        self.path = path
        self._write()

    def _write(self):
        (self.path / "manifest.json").write_text(json.dumps(self.manifest, indent=1, sort_keys=True) + "\n")

    def append(self, name, record):
        with open(self.path / name, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, default=_jsonable) + "\n")

    def finish(self, outputs):
        self.manifest["finished"] = _stamp(time.time())
        self.manifest["outputs"] = sorted(outputs)
        self._write()
        print(f"run directory: {self.path}")


def _stamp(t):
    return time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t))


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


# ------------------------------------------------------------------ commands


def _train_split(data, settings):
    train = data.split("train")
    if settings.n_per_class:
        train = subsample_per_class(train, settings.n_per_class, settings.seed)
    return train


def cmd_train(args, settings):
    if args.model not in MODEL_KINDS:
        raise UsageError(f"train: unknown model {args.model!r}; choose from {', '.join(MODEL_KINDS)}")
    data = Prepared(args.data)
    run = Run(args.runs, args.argv, settings, data)
    train, dev = _train_split(data, settings), data.split("dev")
    t0 = time.perf_counter()
    model, summary, epochs = fit_model(args.model, train, dev, settings, len(data.vocab))
    for rec in epochs:
        run.append("epochs.ndjson", rec)
    save_model(run.path / "model.npz", model, data.vocab.digest(), data.class_names,
               {"settings": asdict(settings)})
    test = data.split("test")
    metrics = evaluate(predict_all(model, test.docs), test.labels, data.n_classes)
    rec = metrics_record("train", {"model": args.model, "n_train": len(train)}, metrics, settings,
                         time.perf_counter() - t0, train=summary)
    run.append("results.ndjson", rec)
    run.finish(["model.npz", "results.ndjson"] + (["epochs.ndjson"] if epochs else []))
    print(f"{args.model}: test accuracy {metrics.accuracy:.2f}")
    return EXIT_OK


def cmd_eval(args, settings):
    data = Prepared(args.data)
    model, meta = load_model(args.checkpoint, data.vocab)
    ds = data.split(args.split)
    metrics = evaluate(predict_all(model, ds.docs), ds.labels, data.n_classes)
    out = {"checkpoint": str(args.checkpoint), "split": args.split, "model": meta["kind"],
           **metrics.to_dict()}
    print(json.dumps(out, sort_keys=True, default=_jsonable))
    return EXIT_OK


def cmd_experiment(args, settings):
    data = Prepared(args.data)
    run = Run(args.runs, args.argv, settings, data)
    train, dev, test = _train_split(data, settings), data.split("dev"), data.split("test")
    vocab_size = len(data.vocab)
    outputs = ["results.ndjson"]
    t0 = time.perf_counter()
    if args.kind == "curve":
        kinds = names(settings.models)
        bad = [k for k in kinds if k not in MODEL_KINDS]
        if bad:
            raise UsageError(f"unknown model(s) {bad}")
        points = learning_curve(train, dev, test, kinds, ints(settings.sizes), ints(settings.seeds),
                                settings, vocab_size, settings.workers)
        for p in points:
            run.append("results.ndjson", metrics_record(
                "curve", {"model": p.model, "n_per_class": p.n_per_class}, {"accuracy": p.accuracy},
                replace(settings, seed=p.seed), time.perf_counter() - t0, error=p.error))
        write_curve_csv(points, run.path / "curve.csv")
        outputs.append("curve.csv")
        for (kind, n), acc in sorted(curve_means(points).items()):
            print(f"{kind:>10} n={n:<5d} mean accuracy {acc:.2f}")
    elif args.kind == "continual":
        order = ints(settings.class_order) if settings.class_order else list(range(data.n_classes))
        kinds = names(settings.continual_kinds)
        bad = [k for k in kinds if k not in CONTINUAL_KINDS]
        if bad:
            raise UsageError(f"unknown continual model(s) {bad}")
        for kind in kinds:
            _, phases = run_continual(train, dev, test, kind, order, settings, vocab_size)
            for ph in phases:
                run.append("results.ndjson", metrics_record(
                    "continual", {"model": kind, "phase": ph["phase"], "new_class": ph["new_class"]},
                    ph["metrics"], settings, ph["elapsed"],
                    predicts_new_class=ph["predicts_new_class"]))
            print(f"{kind:>18} final accuracy {phases[-1]['accuracy']:.2f} "
                  f"(predicts last class {phases[-1]['predicts_new_class']:.1f}%)")
    elif args.kind == "zeroshot":
        vec_path = args.vectors or data.vectors_path()
        if vec_path is None:
            raise DataError("zeroshot needs word vectors: pass --vectors or prepare with vectors")
        wv = load_word_vectors(vec_path, data.vocab, _label_words(data.class_names))
        hidden = ints(settings.hidden_classes)
        modes = ["disc", "gen"] if settings.zero_shot_mode == "both" else [settings.zero_shot_mode]
        for mode in modes:
            res = run_zero_shot(train, dev, test, hidden, wv, settings, data.vocab, mode)
            run.append("results.ndjson", metrics_record(
                "zeroshot", {"mode": mode, "hidden_classes": hidden}, res["metrics"], settings,
                time.perf_counter() - t0, hidden=res["hidden"], trace=res["trace"]))
            for h, pr in res["hidden"].items():
                print(f"{mode:>5} hidden {data.class_names[h]}: precision {pr['precision']:.1f} "
                      f"recall {pr['recall']:.1f} accuracy {res['accuracy']:.2f}")
    else:
        held = ints(settings.hidden_classes)
        model, scores, summary, report = run_shift(train, dev, test, held, settings, vocab_size)
        for s in scores:
            run.append("scores.ndjson", {"doc": s.doc_id, "gold": s.gold, "log_px": s.log_px,
                                         "n_tokens": s.n_tokens})
        write_shift_csv(scores, run.path / "shift_hist.csv", settings.hist_bins)
        run.append("results.ndjson", metrics_record("shift", {"held_out": held}, summary, settings,
                                                    time.perf_counter() - t0, train=report.summary()))
        outputs += ["scores.ndjson", "shift_hist.csv"]
        print(f"per-token log p(x): unseen median {summary['unseen_median']:.3f}, "
              f"seen median {summary['seen_median']:.3f}, rank-sum p={summary['ranksum_p']:.2e}")
    run.finish(outputs)
    return EXIT_OK


def cmd_gradcheck(args, settings):
    errs = fixture_gradient_check(dim=args.dim, init_scale=args.init_scale, seed=settings.seed,
                                  eps=args.eps)
    worst = max(errs.values())
    for name, err in errs.items():
        print(f"{name}: max relative error {err:.3e}")
    if worst >= args.tolerance:
        print(f"gradient check failed: {worst:.3e} >= {args.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_replay(args, settings):
    manifest = json.loads(Path(args.manifest).read_text())
    argv = manifest["command"]
    if argv and argv[0] == "replay":
        raise UsageError("replay: a manifest cannot point at another replay")
    return main(argv)


# -------------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--preset", choices=sorted(PRESETS), help="named settings bundle")
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one setting (repeatable)")
    p.add_argument("--workers", type=int, help="parallel experiment cells / class LMs")
    p.add_argument("--runs", default="runs", help="root directory for run directories")


def build_parser():
    parser = _Parser(prog="gendisc", description="Generative and discriminative text classifiers.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="build vocabulary and encoded splits")
    _common(p)
    p.add_argument("--source", choices=["csv", "f1", "topics"], default="csv")
    p.add_argument("--train", help="training CSV (class,title,body)")
    p.add_argument("--test", help="test CSV")
    p.add_argument("--classes", help="class names file or comma list (default: classes.txt)")
    p.add_argument("--vectors", help="word-vector text file to keep alongside the data")
    p.add_argument("--per-class", type=int, default=0, help="topics source: training docs per class")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="write the synthetic topic corpus as CSV plus vectors")
    _common(p)
    p.add_argument("--per-class", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit one model and write a checkpoint")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help=f"one of {', '.join(MODEL_KINDS)}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run an experiment protocol")
    _common(p)
    p.add_argument("kind", choices=["curve", "continual", "zeroshot", "shift"])
    p.add_argument("--data", required=True)
    p.add_argument("--vectors", help="word vectors for zeroshot (default: data dir vectors.txt)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on the fixture")
    _common(p)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--init-scale", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("replay", help="repeat the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.argv = argv
        if args.command == "replay":
            settings = None
        else:
            overrides = list(args.overrides)
            if args.workers is not None:
                overrides.append(f"workers={args.workers}")
            try:
                settings = load_settings(args.preset, args.config, overrides)
            except (KeyError, ValueError, TypeError) as exc:
                raise UsageError(f"settings: {exc}") from None
        return args.func(args, settings)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except UnknownModel as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, VocabularyMismatch, PriorError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
