"""Round-robin multi-task training of one shared sentence encoder.

Three heads read the shared encoder:

* ``neighbor``: in-batch ranking of the true next sentence of running text.
* ``response``: in-batch ranking of the reply to a conversational input; the
  reply side passes through an extra projection.
* ``nli``: 3-way classification of (premise, hypothesis) from
  ``[u, v, |u - v|, u * v]`` features.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .encoders import make_encoder
from .errors import ConfigError, InputError, NonFiniteError, TrainingError
from .tensor import Tape, Tensor
from .text import build_vocab, read_corpus, read_pairs, read_task_tsv, tokenize_words

log = logging.getLogger(__name__)

TASKS = ("neighbor", "response", "nli")


# ---------------------------------------------------------------- heads and losses

class ResponseHead:
    def __init__(self, dim, seed=0):
        rng = np.random.default_rng(seed)
        bound = 1 / math.sqrt(dim)
        self.params = {
            "response.w": Tensor(rng.uniform(-bound, bound, (dim, dim)), True, "response.w"),
            "response.b": Tensor(np.zeros(dim), True, "response.b"),
        }

    def __call__(self, v):
        return T.linear(v, self.params["response.w"], self.params["response.b"])


class NliHead:
    def __init__(self, dim, hidden=None, seed=0):
        rng = np.random.default_rng(seed)
        hidden = hidden or dim
        b1, b2 = 1 / math.sqrt(4 * dim), 1 / math.sqrt(hidden)
        self.params = {
            "nli.w1": Tensor(rng.uniform(-b1, b1, (4 * dim, hidden)), True, "nli.w1"),
            "nli.b1": Tensor(np.zeros(hidden), True, "nli.b1"),
            "nli.w2": Tensor(rng.uniform(-b2, b2, (hidden, 3)), True, "nli.w2"),
            "nli.b2": Tensor(np.zeros(3), True, "nli.b2"),
        }

    @staticmethod
    def features(u, v):
        return T.concat([u, v, T.absolute(T.sub(u, v)), T.mul(u, v)], axis=1)

    def __call__(self, u, v):
        h = T.tanh(T.linear(self.features(u, v), self.params["nli.w1"], self.params["nli.b1"]))
        return T.linear(h, self.params["nli.w2"], self.params["nli.b2"])


def in_batch_scores(u, v):
    """(B, B) matrix of dot products between every left and right embedding."""
    return T.matmul(u, T.transpose(v))


def ranking_loss(u, v):
    b = u.shape[0]
    if b < 2:
        raise ConfigError(f"in-batch ranking needs at least 2 pairs, got {b}")
    return T.cross_entropy(in_batch_scores(u, v), np.arange(b))


def neighbor_ranking_loss(encoder, pairs):
    """Loss of picking each sentence's true successor among the batch's successors."""
    if len(pairs) < 2:
        raise ConfigError(f"neighbor ranking needs batch size >= 2, got {len(pairs)}")
    u = encoder.forward([a for a, _ in pairs])
    v = encoder.forward([b for _, b in pairs])
    return ranking_loss(u, v)


def response_ranking_loss(encoder, pairs, head=None):
    """Like :func:`neighbor_ranking_loss`; responses go through ``head`` (None = identity)."""
    if len(pairs) < 2:
        raise ConfigError(f"response ranking needs batch size >= 2, got {len(pairs)}")
    u = encoder.forward([a for a, _ in pairs])
    v = encoder.forward([b for _, b in pairs])
    if head is not None:
        v = head(v)
    return ranking_loss(u, v)


def nli_loss(encoder, head, batch, return_logits=False):
    labels = np.array([y for _, _, y in batch], dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() > 2):
        raise InputError(f"NLI labels must lie in [0, 3), got {sorted(set(labels.tolist()))}")
    u = encoder.forward([p for p, _, _ in batch])
    v = encoder.forward([h for _, h, _ in batch])
    logits = head(u, v)
    loss = T.cross_entropy(logits, labels)
    return (loss, logits) if return_logits else loss


def recall_at_1(encoder, pairs, batch_size, head=None):
    """Fraction of pairs whose partner scores highest within fixed consecutive batches."""
    hits = total = 0
    for i in range(0, len(pairs) - 1, batch_size):
        chunk = pairs[i:i + batch_size]
        if len(chunk) < 2:
            break
        u = encoder.forward([a for a, _ in chunk])
        v = encoder.forward([b for _, b in chunk])
        if head is not None:
            v = head(v)
        s = in_batch_scores(u, v).data
        hits += int((s.argmax(axis=1) == np.arange(len(chunk))).sum())
        total += len(chunk)
    return hits / max(total, 1)


def nli_accuracy(encoder, head, examples):
    _, logits = nli_loss(encoder, head, examples, return_logits=True)
    labels = np.array([y for _, _, y in examples])
    return float((logits.data.argmax(axis=1) == labels).mean())


# ---------------------------------------------------------------- configuration

def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_tuple(v):
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).replace(",", " ").split())


def _parse_tasks(v):
    tasks = tuple(v) if isinstance(v, (list, tuple)) else tuple(
        t.strip() for t in str(v).split(",") if t.strip())
    unknown = set(tasks) - set(TASKS)
    if unknown:
        raise ConfigError(f"unknown tasks {sorted(unknown)}; expected some of {TASKS}")
    return tasks


def _parse_weights(v):
    if isinstance(v, dict):
        return {k: float(x) for k, x in v.items()}
    out = {}
    for item in str(v).split(","):
        if item.strip():
            k, _, x = item.partition("=")
            out[k.strip()] = float(x)
    return out


@dataclass
class TrainConfig:
    encoder: str = "transformer"
    embed_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 0
    hidden_dims: tuple = ()
    activation: str = "tanh"
    layer_norm: bool = True
    min_count: int = 2
    tasks: tuple = TASKS
    weights: dict = field(default_factory=dict)
    batch_size: int = 16
    cycles: int = 200
    lr: float = 1e-3
    seed: int = 0
    response_projection: bool = True
    nli_hidden: int = 0
    head_scale: float = 0.0
    checkpoint_every: int = 0
    out: str = ""
    corpus: str = ""
    conversations: str = ""
    nli: str = ""
    log: str = ""

    _parsers = {"tasks": _parse_tasks, "weights": _parse_weights, "hidden_dims": _parse_tuple,
                "layer_norm": _parse_bool, "response_projection": _parse_bool}

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("at least one task must be enabled")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2, got {self.batch_size}")

    @classmethod
    def from_mapping(cls, values):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown training config key {key!r}")
            parser = cls._parsers.get(key)
            if parser is None:
                default = known[key].default
                parser = type(default) if default is not None else str
            try:
                kwargs[key] = parser(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides=None):
        values = read_flat_config(path)
        values.update(overrides or {})
        cfg = cls.from_mapping(values)
        base = Path(path).parent
        for key in ("corpus", "conversations", "nli"):
            value = getattr(cfg, key)
            if value and not Path(value).is_absolute() and not Path(value).exists():
                setattr(cfg, key, str(base / value))
        return cfg

    def encoder_kwargs(self):
        if self.encoder == "transformer":
            kw = dict(embed_dim=self.embed_dim, num_layers=self.num_layers,
                      num_heads=self.num_heads, layer_norm=self.layer_norm)
            if self.ffn_dim:
                kw["ffn_dim"] = self.ffn_dim
            return kw
        if self.encoder == "dan":
            kw = dict(embed_dim=self.embed_dim, activation=self.activation)
            if self.hidden_dims:
                kw["hidden_dims"] = self.hidden_dims
            return kw
        raise ConfigError(f"unknown encoder {self.encoder!r}")


def read_flat_config(path):
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        values[key.strip()] = value.strip()
    return values


# ---------------------------------------------------------------- data

@dataclass
class TaskData:
    neighbor: list = field(default_factory=list)
    response: list = field(default_factory=list)
    nli: list = field(default_factory=list)

    @classmethod
    def from_documents(cls, docs, response=(), nli=()):
        pairs = [(doc[i], doc[i + 1]) for doc in docs for i in range(len(doc) - 1)]
        return cls(pairs, list(response), list(nli))

    @classmethod
    def from_config(cls, config):
        docs = read_corpus(config.corpus) if "neighbor" in config.tasks else []
        response = read_pairs(config.conversations) if "response" in config.tasks else []
        nli = []
        if "nli" in config.tasks:
            ds = read_task_tsv(config.nli, "pair-class")
            nli = list(zip(ds.texts, ds.texts_b, ds.labels))
        return cls.from_documents(docs, response, nli)

    def texts(self, tasks=TASKS):
        for task in tasks:
            for item in getattr(self, task):
                yield from item[:2]


class _Batches:
    """Endless seeded stream of minibatches, reshuffled every epoch."""

    def __init__(self, items, batch_size, rng):
        self.items = items
        self.batch_size = min(batch_size, len(items))
        self.rng = rng
        self.order = []

    def next(self):
        if len(self.order) < self.batch_size:
            self.order = list(self.rng.permutation(len(self.items)))
        batch, self.order = self.order[:self.batch_size], self.order[self.batch_size:]
        return [self.items[i] for i in batch]


@dataclass
class TrainState:
    step: int = 0
    losses: dict = field(default_factory=dict)
    optimizer: object = None
    seed: int = 0


@dataclass
class TrainResult:
    encoder: object
    heads: dict
    state: TrainState


def _pretokenize(data, vocab):
    cache = {}

    def enc(text):
        seq = cache.get(text)
        if seq is None:
            seq = cache[text] = vocab.encode(tokenize_words(text))
        return seq

    return TaskData([(enc(a), enc(b)) for a, b in data.neighbor],
                    [(enc(a), enc(b)) for a, b in data.response],
                    [(enc(a), enc(b), y) for a, b, y in data.nli])


def build_heads(config, dim):
    heads = {}
    if "response" in config.tasks and config.response_projection:
        heads["response"] = ResponseHead(dim, seed=config.seed + 1)
    if "nli" in config.tasks:
        heads["nli"] = NliHead(dim, config.nli_hidden or None, seed=config.seed + 2)
    return heads


class ScaledEncoder:
    """Wraps an encoder so heads see its outputs multiplied by a constant."""

    def __init__(self, encoder, factor):
        self.encoder = encoder
        self.factor = factor

    def forward(self, seqs):
        out = self.encoder.forward(seqs)
        return out if self.factor == 1.0 else T.scale(out, self.factor)


def head_view(encoder, config):
    factor = config.head_scale or 1 / math.sqrt(encoder.embed_dim)
    return ScaledEncoder(encoder, factor)


def task_loss(task, encoder, heads, batch):
    if task == "neighbor":
        return neighbor_ranking_loss(encoder, batch)
    if task == "response":
        return response_ranking_loss(encoder, batch, heads.get("response"))
    return nli_loss(encoder, heads["nli"], batch)


def train_multitask(config, data, progress=None, encoder=None):
    """Train a shared encoder round-robin over ``config.tasks``.

    Each cycle draws one batch per enabled task and takes one Adam step per
    task on the encoder plus that task's head. ``progress`` (a writable text
    stream) receives one ``cycle<TAB>task<TAB>loss`` line per task step.
    """
    for task in config.tasks:
        if len(getattr(data, task)) < 2:
            raise ConfigError(f"task {task!r} needs at least 2 training examples")
    if encoder is None:
        vocab = build_vocab(list(data.texts(config.tasks)), min_count=config.min_count)
        encoder = make_encoder(config.encoder, vocab, seed=config.seed,
                               **config.encoder_kwargs())
    heads = build_heads(config, encoder.embed_dim)
    view = head_view(encoder, config)
    tok = _pretokenize(data, encoder.vocab)
    streams = {task: _Batches(getattr(tok, task), config.batch_size,
                              np.random.default_rng([config.seed, i]))
               for i, task in enumerate(config.tasks)}
    opt = T.Adam(lr=config.lr)
    state = TrainState(losses={t: [] for t in config.tasks}, optimizer=opt, seed=config.seed)
    for cycle in range(1, config.cycles + 1):
        for task in config.tasks:
            params = dict(encoder.params)
            head = heads.get(task)
            if head is not None:
                params.update(head.params)
            T.zero_grad(params)
            weight = config.weights.get(task, 1.0)
            try:
                with Tape() as tape:
                    loss = task_loss(task, view, heads, streams[task].next())
                    scaled = T.scale(loss, weight) if weight != 1.0 else loss
                tape.backward(scaled)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteError("loss")
                opt.step(params)
            except (NonFiniteError, TrainingError) as exc:
                raise TrainingError(f"training diverged in task {task!r} at cycle {cycle}: "
                                    f"{exc}") from None
            state.losses[task].append(value)
            if progress is not None:
                progress.write(f"{cycle}\t{task}\t{value:.6f}\n")
        state.step = cycle
        if config.checkpoint_every and config.out and cycle % config.checkpoint_every == 0:
            save_checkpoint(encoder, f"{config.out}.cycle{cycle}")
    if config.out:
        save_checkpoint(encoder, config.out)
    return TrainResult(encoder, heads, state)
