"""Dataset ingestion: CSV loading, tokenization, vocabularies, splits, word vectors."""

import csv
import hashlib
import string
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

UNK, BOS, EOS = 0, 1, 2
RESERVED = ("<unk>", "<s>", "</s>")

_EDGE_PUNCT = string.punctuation


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass(frozen=True)
class RawExample:
    label: int
    text: str


def load_csv(path):
    """Read ``"class","title","body"`` rows; labels become 0-based.

    Title and any further columns are joined with single spaces.
    """
    examples = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rowno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{path}: row {rowno}: expected at least 2 columns, got {len(row)}")
            try:
                cls = int(row[0].strip())
            except ValueError:
                raise DataError(f"{path}: row {rowno}: non-numeric class {row[0]!r}") from None
            if cls < 1:
                raise DataError(f"{path}: row {rowno}: class index must be >= 1, got {cls}")
            text = " ".join(part.strip() for part in row[1:])
            if not text.strip():
                raise DataError(f"{path}: row {rowno}: empty text")
            examples.append(RawExample(cls - 1, text))
    if not examples:
        raise DataError(f"{path}: no rows")
    return examples


def tokenize(text):
    out = []
    for tok in text.lower().split():
        tok = tok.strip(_EDGE_PUNCT)
        if tok:
            out.append(tok)
    return out


class Vocabulary:
    """Token/id map. Ids 0, 1, 2 are always UNK, BOS and EOS."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise ValueError(f"vocabulary must start with {RESERVED}")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token):
        return self.index.get(token, UNK)

    def encode(self, text):
        """Token ids of ``text`` followed by EOS (``[EOS]`` for empty text)."""
        ids = [self.index.get(tok, UNK) for tok in tokenize(text)]
        ids.append(EOS)
        return np.array(ids, dtype=np.int64)

    def decode(self, ids):
        return [self.tokens[i] for i in ids if i != EOS]

    def digest(self):
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


def build_vocab(corpus, max_size=50000, min_count=2):
    """Reserved tokens first, then by descending frequency, ties lexicographic."""
    if max_size < 3:
        raise ValueError("max_size must be >= 3")
    counts = Counter()
    for toks in corpus:
        counts.update(toks)
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted((tok for tok, c in counts.items() if c >= min_count),
                    key=lambda tok: (-counts[tok], tok))
    return Vocabulary(list(RESERVED) + ranked[:max_size - 3])


@dataclass
class Dataset:
    docs: list
    labels: np.ndarray
    n_classes: int
    name: str = ""
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.docs) != len(self.labels):
            raise ValueError("docs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")
        if not self.class_names:
            self.class_names = [str(k) for k in range(self.n_classes)]

    def __len__(self):
        return len(self.docs)

    def subset(self, indices, name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset([self.docs[i] for i in indices], self.labels[indices], self.n_classes,
                       name if name is not None else self.name, list(self.class_names))

    def of_classes(self, classes, name=None):
        keep = np.flatnonzero(np.isin(self.labels, list(classes)))
        return self.subset(keep, name)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def digest(self):
        h = hashlib.sha256()
        h.update(self.labels.tobytes())
        for d in self.docs:
            h.update(np.asarray(d, dtype=np.int64).tobytes())
            h.update(b"|")
        return h.hexdigest()


def encode_examples(examples, vocab, n_classes=None, name="", class_names=None):
    docs = [vocab.encode(ex.text) for ex in examples]
    labels = [ex.label for ex in examples]
    k = n_classes if n_classes is not None else max(labels) + 1
    return Dataset(docs, labels, k, name, list(class_names or []))


def hold_out_dev(ds, n_dev, seed):
    """Split off ``n_dev`` random examples; both parts keep their original order."""
    if n_dev >= len(ds):
        raise DataError(f"cannot hold out {n_dev} of {len(ds)} examples")
    perm = np.random.default_rng(seed).permutation(len(ds))
    dev_idx = np.sort(perm[:n_dev])
    train_idx = np.sort(perm[n_dev:])
    return ds.subset(train_idx, ds.name), ds.subset(dev_idx, f"{ds.name}-dev")


def subsample_per_class(ds, n, seed):
    """Exactly ``n`` examples of every class, drawn without replacement."""
    rng = np.random.default_rng(seed)
    chosen = []
    for k in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == k)
        if len(members) < n:
            raise DataError(f"class {k} ({ds.class_names[k]}) has {len(members)} examples, need {n}")
        chosen.append(rng.choice(members, size=n, replace=False))
    idx = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
    return ds.subset(idx, f"{ds.name}-n{n}")


def save_encoded(path, ds):
    """One line per document: label, a tab, then space-separated token ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for label, doc in zip(ds.labels, ds.docs):
            fh.write(f"{int(label)}\t{' '.join(str(int(i)) for i in doc)}\n")


def load_encoded(path, n_classes, name="", class_names=None):
    docs, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            label, _, ids = line.partition("\t")
            try:
                labels.append(int(label))
                docs.append(np.array([int(i) for i in ids.split()], dtype=np.int64))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: not an encoded document") from None
            if len(docs[-1]) == 0:
                raise DataError(f"{path}: line {lineno}: empty document")
    try:
        return Dataset(docs, labels, n_classes, name, list(class_names or []))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


@dataclass
class WordVectors:
    dim: int
    vectors: dict

    def __getitem__(self, token):
        return self.vectors[token]

    def __contains__(self, token):
        return token in self.vectors

    def matrix(self, tokens):
        return np.stack([self.vectors[t] for t in tokens])


def load_word_vectors(path, vocab=None, required=()):
    """Read ``token v1 ... vD`` lines, keeping vocabulary tokens and ``required`` words."""
    required = list(required)
    wanted = None
    if vocab is not None:
        wanted = set(vocab.tokens) | set(required)
    dim = None
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                if not line.strip():
                    continue
                raise DataError(f"{path}: line {lineno}: no vector values")
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise DataError(f"{path}: line {lineno}: expected {dim} values, got {len(parts) - 1}")
            tok = parts[0]
            if wanted is not None and tok not in wanted:
                continue
            try:
                vectors[tok] = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric value") from None
    if dim is None:
        raise DataError(f"{path}: no vectors")
    missing = [w for w in required if w not in vectors]
    if missing:
        raise DataError(f"{path}: missing label words: {', '.join(missing)}")
    return WordVectors(dim, vectors)


def save_word_vectors(path, wv, tokens=None):
    tokens = sorted(wv.vectors) if tokens is None else tokens
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(tok + " " + " ".join(repr(float(x)) for x in wv.vectors[tok]) + "\n")


def label_word_table():
    """Class-name -> single label word mapping shipped with the package."""
    table = {}
    text = resources.files("gendisc").joinpath("label_words.tsv").read_text(encoding="utf-8")
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, word = line.split("\t")
        table[name.strip().lower()] = word.strip()
    return table


def label_word(class_name, table=None):
    """Single keyword used to look up a label vector for ``class_name``."""
    table = label_word_table() if table is None else table
    key = class_name.strip().lower()
    if key in table:
        return table[key]
    toks = tokenize(class_name)
    if not toks:
        raise DataError(f"class name {class_name!r} has no usable word")
    return toks[0]
