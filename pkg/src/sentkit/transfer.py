"""Classifiers on frozen sentence embeddings, word-level baselines and learning curves.

A model is described by a :class:`TransferModelSpec` string such as
``use_t`` (sentence embedding + DNN), ``use_t+cnn:w2v`` (sentence embedding
concatenated with a CNN over pretrained word vectors), ``cnn:w2v`` (word
transfer only) or ``dnn:lrn`` (no transfer: word embeddings learned on the
task).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .encoders import SENTENCE_SOURCES
from .errors import ConfigError, InputError
from .tensor import Tape, Tensor
from .text import build_vocab, tokenize_words

log = logging.getLogger(__name__)

SENTENCE_CHOICES = ("use_d", "use_t", "none")
WORD_CHOICES = ("w2v", "lrn", "none")
HEAD_CHOICES = ("dnn", "cnn")


@dataclass(frozen=True)
class TransferModelSpec:
    sentence: str = "none"
    word: str = "none"
    head: str = "dnn"

    def __post_init__(self):
        if self.sentence not in SENTENCE_CHOICES:
            raise ConfigError(f"unknown sentence source {self.sentence!r}")
        if self.word not in WORD_CHOICES:
            raise ConfigError(f"unknown word source {self.word!r}")
        if self.head not in HEAD_CHOICES:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.sentence == "none" and self.word == "none":
            raise ConfigError("a transfer model needs a sentence source, a word source or both")
        if self.head == "cnn" and self.word == "none":
            raise ConfigError("a cnn head needs a word source")

    @classmethod
    def parse(cls, text):
        """Parse ``[sentence+]head[:word]`` or a bare sentence source."""
        text = text.strip().lower()
        sentence, word, head = "none", "none", "dnn"
        rest = text
        if "+" in text:
            sentence, rest = text.split("+", 1)
        elif text in SENTENCE_CHOICES:
            return cls(sentence=text)
        head, _, word = rest.partition(":")
        return cls(sentence=sentence, word=word or "none", head=head)

    def __str__(self):
        if self.word == "none" and self.head == "dnn":
            return self.sentence
        core = self.head + (f":{self.word}" if self.word != "none" else "")
        return core if self.sentence == "none" else f"{self.sentence}+{core}"


@dataclass
class HeadConfig:
    hidden: int = 64
    filters: int = 32
    widths: tuple = (2, 3)
    word_dim: int = 50
    lr: float = 3e-3
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 8
    activation: str = "tanh"


@dataclass
class Inputs:
    """Per-example model inputs: sentence vectors and/or word id sequences."""

    sent: np.ndarray = None
    ids: list = None
    labels: np.ndarray = None

    def __len__(self):
        return len(self.labels) if self.labels is not None else (
            len(self.sent) if self.sent is not None else len(self.ids))

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Inputs(None if self.sent is None else self.sent[idx],
                      None if self.ids is None else [self.ids[i] for i in idx],
                      None if self.labels is None else self.labels[idx])


@dataclass
class WordTable:
    """Word embedding table plus the token -> row map; row 0 is the all-zero unknown row."""

    index: dict
    vectors: np.ndarray
    trainable: bool

    @property
    def dim(self):
        return self.vectors.shape[1]

    def ids(self, tokens):
        return np.array([self.index.get(t, 0) for t in tokens], dtype=np.int64)


def pretrained_table(vectors):
    rows = np.zeros((len(vectors) + 1, vectors.dim), dtype=np.float32)
    rows[1:] = vectors.vectors
    return WordTable({t: i + 1 for i, t in enumerate(vectors.tokens)}, rows, trainable=False)


def learned_table(texts, dim, rng):
    vocab = build_vocab(texts, min_count=1)
    tokens = vocab.id_to_token[2:]
    rows = rng.normal(0, 0.1, (len(tokens) + 1, dim)).astype(np.float32)
    rows[0] = 0
    return WordTable({t: i + 1 for i, t in enumerate(tokens)}, rows, trainable=True)


class TransferClassifier:
    """DNN or CNN head over optional sentence vectors and an optional word pathway."""

    def __init__(self, num_classes, sent_dim, table, head, config, rng):
        self.config = config
        self.head = head
        self.table = table
        self.params = {}
        c = config
        if table is not None:
            self.words = Tensor(table.vectors, requires_grad=table.trainable, name="words")
            if table.trainable:
                self.params["words"] = self.words
        word_out = 0
        if table is not None and head == "cnn":
            for w in c.widths:
                self._init(f"conv{w}.w", rng, (w * table.dim, c.filters))
                self._init(f"conv{w}.b", rng, (c.filters,), zero=True)
            word_out = c.filters * len(c.widths)
        elif table is not None:
            word_out = table.dim
        in_dim = sent_dim + word_out
        if in_dim == 0:
            raise ConfigError("classifier has no inputs")
        if head == "dnn":
            self._init("hidden.w", rng, (in_dim, c.hidden))
            self._init("hidden.b", rng, (c.hidden,), zero=True)
            self._init("out.w", rng, (c.hidden, num_classes))
        else:
            self._init("out.w", rng, (in_dim, num_classes))
        self._init("out.b", rng, (num_classes,), zero=True)

    def _init(self, name, rng, shape, zero=False):
        if zero:
            data = np.zeros(shape)
        else:
            bound = 1 / math.sqrt(shape[0])
            data = rng.uniform(-bound, bound, shape)
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def _word_features(self, ids_list):
        if self.head == "dnn":
            offsets = np.cumsum([0] + [len(x) for x in ids_list[:-1]])
            return T.embedding_bag(self.words, np.concatenate(ids_list), offsets, mode="mean")
        widths = self.config.widths
        longest = max(max(len(x) for x in ids_list), max(widths))
        padded = np.zeros((len(ids_list), longest), dtype=np.int64)
        mask = np.zeros((len(ids_list), longest, 1), dtype=np.float32)
        for i, x in enumerate(ids_list):
            padded[i, :len(x)] = x
            mask[i, :len(x)] = 1
        emb = T.mul(T.gather_rows(self.words, padded), Tensor(mask))
        lengths = np.array([max(len(x), max(widths)) for x in ids_list])
        pooled = []
        for w in widths:
            span = longest - w + 1
            window = T.concat([T.slice_axis(emb, 1, j, j + span) for j in range(w)], axis=2)
            conv = T.relu(T.linear(window, self.params[f"conv{w}.w"], self.params[f"conv{w}.b"]))
            pooled.append(T.max_over_time(conv, lengths - w + 1))
        return T.concat(pooled, axis=1) if len(pooled) > 1 else pooled[0]

    def logits(self, inputs):
        parts = []
        if inputs.sent is not None:
            parts.append(Tensor(inputs.sent))
        if self.table is not None:
            parts.append(self._word_features(inputs.ids))
        x = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        if self.head == "dnn":
            act = T.ACTIVATIONS[self.config.activation]
            x = act(T.linear(x, self.params["hidden.w"], self.params["hidden.b"]))
        return T.linear(x, self.params["out.w"], self.params["out.b"])

    def loss(self, inputs):
        return T.cross_entropy(self.logits(inputs), inputs.labels)

    def predict(self, inputs, batch_size=256):
        out = []
        for i in range(0, len(inputs), batch_size):
            out.append(self.logits(inputs.take(range(i, min(i + batch_size, len(inputs))))).data)
        return np.concatenate(out).argmax(axis=1)

    def accuracy(self, inputs):
        return float((self.predict(inputs) == inputs.labels).mean())


def train_classifier(clf, train, dev=None, config=None, rng=None):
    """Adam minibatch training; early stopping on dev loss restores the best weights."""
    config = config or clf.config
    rng = rng or np.random.default_rng(0)
    opt = T.Adam(lr=config.lr)
    best, best_loss, bad_epochs = None, math.inf, 0
    n = len(train)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        for i in range(0, n, config.batch_size):
            batch = train.take(order[i:i + config.batch_size])
            T.zero_grad(clf.params)
            with Tape() as tape:
                loss = clf.loss(batch)
            tape.backward(loss)
            opt.step(clf.params)
        if dev is not None and len(dev):
            dev_loss = float(clf.loss(dev).data)
            if dev_loss < best_loss - 1e-6:
                best_loss, bad_epochs = dev_loss, 0
                best = {k: p.data.copy() for k, p in clf.params.items()}
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break
    if best is not None:
        for k, arr in best.items():
            clf.params[k].data[...] = arr
    return clf


def _check_labels(labels):
    labels = np.asarray(labels, dtype=np.int64)
    if len(set(labels.tolist())) < 2:
        raise InputError("classifier training needs at least 2 classes")
    return labels


def dnn_head_train(features, labels, config=None, dev=None, seed=0):
    """MLP on fixed feature vectors. ``dev`` is an optional (features, labels) pair."""
    config = config or HeadConfig()
    labels = _check_labels(labels)
    features = np.asarray(features, dtype=np.float32)
    rng = np.random.default_rng(seed)
    clf = TransferClassifier(int(labels.max()) + 1, features.shape[1], None, "dnn", config, rng)
    dev_in = None if dev is None else Inputs(np.asarray(dev[0], np.float32), None,
                                             np.asarray(dev[1]))
    return _FeatureModel(train_classifier(clf, Inputs(features, None, labels), dev_in, config, rng))


def cnn_head_train(sequences, labels, config=None, dev=None, seed=0):
    """Kim-style CNN over given (n_i, d_w) embedding sequences."""
    config = config or HeadConfig()
    labels = _check_labels(labels)
    if any(len(s) == 0 for s in sequences):
        raise InputError("cnn_head_train: every sequence must be non-empty")
    rng = np.random.default_rng(seed)
    model = _SequenceModel(sequences, config)
    clf = TransferClassifier(int(labels.max()) + 1, 0, model.table, "cnn", config, rng)
    model.clf = clf
    if dev is None:
        train_in, dev_in = model.inputs(sequences, labels), None
    else:
        both = model.inputs(list(sequences) + list(dev[0]),
                            np.concatenate([labels, np.asarray(dev[1], np.int64)]))
        train_in = both.take(np.arange(len(sequences)))
        dev_in = both.take(np.arange(len(sequences), len(both)))
    train_classifier(clf, train_in, dev_in, config, rng)
    return model


class _FeatureModel:
    def __init__(self, clf):
        self.clf = clf

    def predict(self, features):
        return self.clf.predict(Inputs(np.asarray(features, np.float32)))

    def accuracy(self, features, labels):
        return float((self.predict(features) == np.asarray(labels)).mean())


class _SequenceModel:
    """Wraps raw float sequences as rows of a frozen table so the id-based CNN applies.

    Each call to ``inputs`` replaces the table, so ids from earlier calls go stale.
    """

    def __init__(self, sequences, config):
        dim = np.asarray(sequences[0]).shape[1]
        self.table = WordTable({}, np.zeros((1, dim), np.float32), trainable=False)
        self.clf = None

    def inputs(self, sequences, labels=None):
        rows = [np.zeros((1, self.table.dim), np.float32)]
        ids, start = [], 1
        for s in sequences:
            s = np.asarray(s, np.float32)
            rows.append(s)
            ids.append(np.arange(start, start + len(s)))
            start += len(s)
        self.table.vectors = np.concatenate(rows)
        if self.clf is not None:
            self.clf.words = Tensor(self.table.vectors)
        return Inputs(None, ids, None if labels is None else np.asarray(labels, np.int64))

    def predict(self, sequences):
        return self.clf.predict(self.inputs(sequences))

    def accuracy(self, sequences, labels):
        return float((self.predict(sequences) == np.asarray(labels)).mean())


# ---------------------------------------------------------------- features

@dataclass
class TransferSources:
    """Frozen sentence encoders keyed by ``use_d`` / ``use_t`` and optional word vectors."""

    encoders: dict = field(default_factory=dict)
    vectors: object = None

    def encoder(self, source):
        enc = self.encoders.get(source)
        if enc is None:
            raise ConfigError(f"spec needs sentence source {source!r} but no checkpoint "
                              f"was given for it")
        want = SENTENCE_SOURCES[source]
        if enc.kind != want:
            raise ConfigError(f"sentence source {source!r} needs a {want} checkpoint, "
                              f"got {enc.kind}")
        return enc


def feature_dim(spec, sources, config=None):
    """Width of the vector fed to the classification layers for a dnn head."""
    config = config or HeadConfig()
    dim = 0
    if spec.sentence != "none":
        dim += sources.encoder(spec.sentence).embed_dim
    if spec.word == "w2v":
        if sources.vectors is None:
            raise ConfigError("spec needs pretrained word vectors but none were loaded")
        dim += sources.vectors.dim
    elif spec.word == "lrn":
        dim += config.word_dim
    return dim


def assemble_features(spec, texts, sources, table=None):
    """Inputs for ``texts``: frozen sentence vectors and/or word ids into ``table``."""
    sent = ids = None
    if spec.sentence != "none":
        sent = sources.encoder(spec.sentence).encode_texts(list(texts))
    if spec.word != "none":
        if table is None:
            raise ConfigError("word pathway needs a word table")
        ids = [table.ids(tokenize_words(t)) for t in texts]
    return Inputs(sent, ids)


def dnn_feature_vector(spec, text, sources):
    """Single fixed feature vector of a dnn spec with frozen parts (sentence and/or w2v mean)."""
    if spec.word == "lrn":
        raise ConfigError("learned word embeddings have no fixed feature vector")
    parts = []
    if spec.sentence != "none":
        parts.append(sources.encoder(spec.sentence).encode_texts([text])[0])
    if spec.word == "w2v":
        if sources.vectors is None:
            raise ConfigError("spec needs pretrained word vectors but none were loaded")
        table = pretrained_table(sources.vectors)
        parts.append(table.vectors[table.ids(tokenize_words(text))].mean(axis=0))
    return np.concatenate(parts).astype(np.float32)


# ---------------------------------------------------------------- splits and runs

@dataclass
class Split:
    train: np.ndarray
    dev: np.ndarray
    test: np.ndarray


def deterministic_split(n, seed=0, fractions=(0.8, 0.1, 0.1)):
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_dev = int(round(fractions[1] * n))
    return Split(np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_dev]),
                 np.sort(order[n_train + n_dev:]))


def stratified_order(labels, seed):
    """Ordering of example indices whose every prefix is a stratified subsample.

    Each next example comes from the class furthest below its share, so the
    subsample of size s is the first s entries and curves are nested.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in classes}
    share = {c: len(pools[c]) / len(labels) for c in classes}
    taken = {c: 0 for c in classes}
    order = []
    for t in range(1, len(labels) + 1):
        live = [c for c in classes if taken[c] < len(pools[c])]
        c = max(live, key=lambda k: (share[k] * t - taken[k], -k))
        order.append(pools[c][taken[c]])
        taken[c] += 1
    return np.array(order, dtype=np.int64)


@dataclass
class EvalReport:
    task: str
    spec: str
    size: int
    accuracies: list
    mean: float = 0.0

    def __post_init__(self):
        self.mean = float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def runs(self):
        return len(self.accuracies)


def _run_seed(seed, run):
    return np.random.SeedSequence([seed, run])


def _single_run(spec, inputs, labels, train_idx, dev_idx, test_idx, texts, sources,
                config, seed, run, num_classes):
    rng = np.random.default_rng(_run_seed(seed, run))
    table = None
    if spec.word == "w2v":
        if sources.vectors is None:
            raise ConfigError("spec needs pretrained word vectors but none were loaded")
        table = pretrained_table(sources.vectors)
    elif spec.word == "lrn":
        table = learned_table([texts[i] for i in train_idx], config.word_dim, rng)
    ids = None if table is None else [table.ids(tokenize_words(t)) for t in texts]
    full = Inputs(inputs.sent, ids, labels)
    sent_dim = 0 if inputs.sent is None else inputs.sent.shape[1]
    clf = TransferClassifier(num_classes, sent_dim, table, spec.head, config, rng)
    dev = full.take(dev_idx) if len(dev_idx) else None
    train_classifier(clf, full.take(train_idx), dev, config, rng)
    return clf.accuracy(full.take(test_idx))


def run_learning_curve(dataset, spec, sizes, repeats=10, seed=0, sources=None, config=None,
                       split=None, threads=1):
    """Mean test accuracy of ``repeats`` heads at each training-set size."""
    if isinstance(spec, str):
        spec = TransferModelSpec.parse(spec)
    if dataset.schema != "single":
        raise ConfigError(f"transfer evaluation supports the single schema, got {dataset.schema}")
    sources = sources or TransferSources()
    config = config or HeadConfig()
    labels = np.asarray(dataset.labels, dtype=np.int64)
    split = split or deterministic_split(len(dataset))
    for s in sizes:
        if s > len(split.train) or s < 2:
            raise InputError(f"training size {s} outside [2, {len(split.train)}]")
    texts = list(dataset.texts)
    sent = None
    if spec.sentence != "none":
        sent = sources.encoder(spec.sentence).encode_texts(texts)
    inputs = Inputs(sent)
    num_classes = int(labels.max()) + 1
    order = split.train[stratified_order(labels[split.train], seed)]
    reports = []
    for size in sizes:
        train_idx = np.sort(order[:size])
        if len(set(labels[train_idx].tolist())) < 2:
            raise InputError(f"training subsample of size {size} has a single class")

        def job(run, train_idx=train_idx):
            return _single_run(spec, inputs, labels, train_idx, split.dev, split.test, texts,
                               sources, config, seed, run, num_classes)

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                accs = list(pool.map(job, range(repeats)))
        else:
            accs = [job(r) for r in range(repeats)]
        reports.append(EvalReport(dataset.name, str(spec), size, accs))
    return reports


def run_eval(dataset, spec, repeats=10, seed=0, sources=None, config=None, split=None,
             threads=1):
    """Average test accuracy over ``repeats`` seeded heads on the full training split."""
    split = split or deterministic_split(len(dataset))
    return run_learning_curve(dataset, spec, [len(split.train)], repeats, seed, sources,
                              config, split, threads)[0]


def format_report(reports):
    lines = ["task\tspec\tsize\trun\taccuracy"]
    for r in reports:
        for i, acc in enumerate(r.accuracies):
            lines.append(f"{r.task}\t{r.spec}\t{r.size}\t{i}\t{acc:.6f}")
    lines.append("# summary: task\tspec\tsize\truns\tmean_accuracy")
    for r in reports:
        lines.append(f"# {r.task}\t{r.spec}\t{r.size}\t{r.runs}\t{r.mean:.6f}")
    return "\n".join(lines) + "\n"


def shuffled_labels(dataset, seed=0):
    """Copy of ``dataset`` with labels permuted (no-signal control)."""
    labels = list(np.random.default_rng(seed).permutation(dataset.labels))
    return replace(dataset, labels=[int(x) for x in labels])
