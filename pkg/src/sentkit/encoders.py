"""Transformer and deep-averaging sentence encoders.

Both map token sequences to fixed-width vectors and share the
:class:`Encoder` interface. Internally every activation is kept as a
``(batch, length, width)`` array and sentences of equal length are encoded
together, so a batched encoding is bit-identical to encoding each sentence
on its own.
"""

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError
from .tensor import Tensor
from .text import TokenSeq, Vocabulary, tokenize_words


@dataclass
class TransformerConfig:
    embed_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = None
    max_len: int = 512
    layer_norm: bool = True
    position_encoding: bool = True

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.embed_dim
        for key in ("embed_dim", "num_layers", "num_heads", "ffn_dim", "max_len"):
            if getattr(self, key) < 1:
                raise ConfigError(f"transformer {key} must be positive")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by "
                              f"num_heads {self.num_heads}")

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads


@dataclass
class DanConfig:
    embed_dim: int = 128
    hidden_dims: tuple = None
    activation: str = "tanh"
    separate_pool_average: bool = False

    def __post_init__(self):
        if self.hidden_dims is None:
            self.hidden_dims = (self.embed_dim, self.embed_dim)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.embed_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("DAN dimensions must be positive")
        if self.activation not in T.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; "
                              f"expected one of {sorted(T.ACTIVATIONS)}")


def sinusoidal_positions(max_len, d):
    pos = np.arange(max_len)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class Encoder:
    kind = None

    def __init__(self, config, vocab):
        self.config = config
        self.vocab = vocab
        self.params = {}

    @property
    def embed_dim(self):
        return self.config.embed_dim

    def num_param_floats(self):
        return int(np.sum([p.size for p in self.params.values()]))

    def _param(self, name, data):
        self.params[name] = Tensor(data, requires_grad=True, name=name)
        return self.params[name]

    def to_seq(self, item):
        if isinstance(item, TokenSeq) and (item.ids or not item.tokens):
            return item
        tokens = item.tokens if isinstance(item, TokenSeq) else tokenize_words(item)
        return self.vocab.encode(tokens)

    def forward(self, seqs):
        """Differentiable (b, d) embedding tensor for a list of sequences or strings."""
        seqs = [self.to_seq(s) for s in seqs]
        for i, s in enumerate(seqs):
            if len(s.ids) == 0:
                raise InputError(f"sentence {i} is empty")
        return self._forward(seqs)

    def encode_batch(self, seqs):
        """(b, d) numpy array; row i equals ``encode(seqs[i])`` exactly."""
        if len(seqs) == 0:
            return np.zeros((0, self.embed_dim), dtype=T.get_default_dtype())
        return np.array(self.forward(seqs).data)

    def encode(self, seq):
        return self.encode_batch([seq])[0]

    def encode_texts(self, texts, batch_size=256):
        out = [self.encode_batch(texts[i:i + batch_size])
               for i in range(0, len(texts), batch_size)]
        if not out:
            return np.zeros((0, self.embed_dim), dtype=T.get_default_dtype())
        return np.concatenate(out, axis=0)

    def config_dict(self):
        return asdict(self.config)


class DanEncoder(Encoder):
    """Averages unigram and bigram embeddings, then applies a feedforward stack."""

    kind = "dan"

    def __init__(self, config, vocab, seed=0):
        super().__init__(config, vocab)
        rng = np.random.default_rng(seed)
        d = config.embed_dim
        self._param("embed.unigram", rng.normal(0, 0.1, (len(vocab), d)))
        self._param("embed.bigram", rng.normal(0, 0.1, (vocab.num_bigrams, d)))
        dims = (d,) + config.hidden_dims + (d,)
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            bound = 1 / math.sqrt(fan_in)
            self._param(f"ff{i}.w", rng.uniform(-bound, bound, (fan_in, fan_out)))
            self._param(f"ff{i}.b", np.zeros(fan_out))
        self.num_ff = len(dims) - 1

    def pool(self, seqs):
        """(b, 1, d) pooled input vectors before the feedforward stack."""
        uni_ids = np.concatenate([s.ids for s in seqs]).astype(np.int64)
        uni_off = np.cumsum([0] + [len(s.ids) for s in seqs[:-1]])
        bi_lists = [s.bigram_ids for s in seqs]
        bi_ids = np.array([i for b in bi_lists for i in b], dtype=np.int64)
        bi_off = np.cumsum([0] + [len(b) for b in bi_lists[:-1]])
        n = np.array([len(s.ids) for s in seqs], dtype=np.int64)
        nb = np.array([len(b) for b in bi_lists], dtype=np.int64)
        uni = T.embedding_bag(self.params["embed.unigram"], uni_ids, uni_off)
        bi = T.embedding_bag(self.params["embed.bigram"], bi_ids, bi_off)
        if self.config.separate_pool_average:
            w_uni = 1.0 / n
            w_bi = np.where(nb > 0, 1.0 / np.maximum(nb, 1), 0.0)
            both = np.where(nb > 0, 0.5, 1.0)
            pooled = T.add(T.mul(uni, Tensor((w_uni * both)[:, None])),
                           T.mul(bi, Tensor((w_bi * both)[:, None])))
        else:
            pooled = T.mul(T.add(uni, bi), Tensor((1.0 / (n + nb))[:, None]))
        return T.reshape(pooled, (len(seqs), 1, self.embed_dim))

    def _forward(self, seqs):
        act = T.ACTIVATIONS[self.config.activation]
        h = self.pool(seqs)
        for i in range(self.num_ff):
            h = T.linear(h, self.params[f"ff{i}.w"], self.params[f"ff{i}.b"])
            if i < self.num_ff - 1:
                h = act(h)
        return T.reshape(h, (len(seqs), self.embed_dim))


class TransformerEncoder(Encoder):
    """Self-attention encoder pooled by summing context vectors and dividing by sqrt(n)."""

    kind = "transformer"

    def __init__(self, config, vocab, seed=0):
        super().__init__(config, vocab)
        rng = np.random.default_rng(seed)
        d, f = config.embed_dim, config.ffn_dim
        bound = 1 / math.sqrt(d)

        def uniform(shape):
            return rng.uniform(-bound, bound, shape)

        self._param("embed.unigram", rng.normal(0, 0.1, (len(vocab), d)))
        for l in range(config.num_layers):
            for w in ("q", "k", "v", "o"):
                self._param(f"layer{l}.attn.w{w}", uniform((d, d)))
                self._param(f"layer{l}.attn.b{w}", np.zeros(d))
            self._param(f"layer{l}.ln1.gain", np.ones(d))
            self._param(f"layer{l}.ln1.bias", np.zeros(d))
            self._param(f"layer{l}.ffn.w1", uniform((d, f)))
            self._param(f"layer{l}.ffn.b1", np.zeros(f))
            self._param(f"layer{l}.ffn.w2", uniform((f, d)))
            self._param(f"layer{l}.ffn.b2", np.zeros(d))
            self._param(f"layer{l}.ln2.gain", np.ones(d))
            self._param(f"layer{l}.ln2.bias", np.zeros(d))
        self._positions = sinusoidal_positions(config.max_len, d)

    def _check_lengths(self, seqs):
        for i, s in enumerate(seqs):
            if len(s.ids) > self.config.max_len:
                raise InputError(f"sentence {i} has {len(s.ids)} tokens; "
                                 f"max_len is {self.config.max_len}")

    def _forward(self, seqs):
        self._check_lengths(seqs)
        buckets = {}
        for i, s in enumerate(seqs):
            buckets.setdefault(len(s.ids), []).append(i)
        if len(buckets) == 1:
            return self._pooled(np.array([s.ids for s in seqs], dtype=np.int64))
        parts, order = [], []
        for n in sorted(buckets):
            idx = buckets[n]
            parts.append(self._pooled(np.array([seqs[i].ids for i in idx], dtype=np.int64)))
            order.extend(idx)
        stacked = T.concat(parts, axis=0)
        return T.gather_rows(stacked, np.argsort(order))

    def context(self, ids, num_layers=None):
        """Context vectors (b, n, d) for an id matrix of equal-length sentences."""
        cfg = self.config
        b, n = ids.shape
        d, h = cfg.embed_dim, cfg.num_heads
        dk = d // h
        x = T.scale(T.gather_rows(self.params["embed.unigram"], ids), math.sqrt(d))
        if cfg.position_encoding:
            x = T.add(x, Tensor(self._positions[:n]))
        for l in range(cfg.num_layers if num_layers is None else num_layers):
            p = lambda name: self.params[f"layer{l}.{name}"]  # noqa: E731
            q = T.linear(x, p("attn.wq"), p("attn.bq"))
            k = T.linear(x, p("attn.wk"), p("attn.bk"))
            v = T.linear(x, p("attn.wv"), p("attn.bv"))
            q = T.scale(q, 1 / math.sqrt(dk))
            qh = T.transpose(T.reshape(q, (b, n, h, dk)), (0, 2, 1, 3))
            kt = T.transpose(T.reshape(k, (b, n, h, dk)), (0, 2, 3, 1))
            vh = T.transpose(T.reshape(v, (b, n, h, dk)), (0, 2, 1, 3))
            attn = T.softmax(T.matmul(qh, kt), axis=-1)
            ctx = T.matmul(attn, vh)
            ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
            x = T.add(x, T.linear(ctx, p("attn.wo"), p("attn.bo")))
            if cfg.layer_norm:
                x = T.layer_norm(x, p("ln1.gain"), p("ln1.bias"))
            hidden = T.relu(T.linear(x, p("ffn.w1"), p("ffn.b1")))
            x = T.add(x, T.linear(hidden, p("ffn.w2"), p("ffn.b2")))
            if cfg.layer_norm:
                x = T.layer_norm(x, p("ln2.gain"), p("ln2.bias"))
        return x

    def attention_weights(self, ids, layer=0):
        """Attention probabilities (b, h, n, n) of one layer, for inspection."""
        cfg = self.config
        b, n = ids.shape
        h, dk = cfg.num_heads, cfg.head_dim
        x = self.context(ids, num_layers=layer)
        p = lambda name: self.params[f"layer{layer}.{name}"]  # noqa: E731
        q = T.scale(T.linear(x, p("attn.wq"), p("attn.bq")), 1 / math.sqrt(dk))
        k = T.linear(x, p("attn.wk"), p("attn.bk"))
        qh = T.transpose(T.reshape(q, (b, n, h, dk)), (0, 2, 1, 3))
        kt = T.transpose(T.reshape(k, (b, n, h, dk)), (0, 2, 3, 1))
        return T.softmax(T.matmul(qh, kt), axis=-1).data

    def _pooled(self, ids):
        n = ids.shape[1]
        return T.scale(T.sum(self.context(ids), axis=1), 1 / math.sqrt(n))


ENCODERS = {"dan": (DanEncoder, DanConfig), "transformer": (TransformerEncoder, TransformerConfig)}
SENTENCE_SOURCES = {"use_d": "dan", "use_t": "transformer"}


def make_encoder(kind, vocab, seed=0, **config):
    try:
        cls, cfg_cls = ENCODERS[kind]
    except KeyError:
        raise ConfigError(f"unknown encoder {kind!r}; expected one of {sorted(ENCODERS)}") from None
    return cls(cfg_cls(**config), vocab, seed=seed)


def params_digest(encoder):
    """Hex digest over every parameter's name, shape and bytes."""
    h = hashlib.sha256()
    for name in sorted(encoder.params):
        arr = encoder.params[name].data
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()

