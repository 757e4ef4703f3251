"""Tokenization, vocabularies and the file formats the toolkit reads.

Tokenizer rules (frozen; fixtures depend on them):

1. Lowercase the whole string.
2. Empty or whitespace-only input becomes the single token ``<empty>``.
3. Split on whitespace.
4. Each of ``. , ! ? ; : " ( )`` becomes a token of its own.
5. ``n't`` is split from its word: ``don't -> do n't``, ``can't -> ca n't``.
6. Clitics ``'s 're 've 'll 'd 'm`` are split off: ``it's -> it 's``.
7. A token that already is a clitic (``n't``, ``'s`` ...) is left alone.
8. Any other apostrophe stays inside its word.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError

log = logging.getLogger(__name__)

UNK, PAD = 0, 1
UNK_TOKEN, PAD_TOKEN = "<unk>", "<pad>"
EMPTY_TOKEN = "<empty>"
BIGRAM_SEP = "␟"

_PUNCT = re.compile(r'([.,!?;:"()])')
_CLITICS = ("n't", "'s", "'re", "'ve", "'ll", "'d", "'m")


def _split_clitic(word):
    for clitic in _CLITICS:
        if word.endswith(clitic) and len(word) > len(clitic):
            return _split_clitic(word[: -len(clitic)]) + [clitic]
    return [word]


def tokenize_words(raw):
    """Token strings for ``raw`` (see module docstring for the rules)."""
    text = raw.lower()
    if not text.strip():
        return [EMPTY_TOKEN]
    tokens = []
    for chunk in _PUNCT.sub(r" \1 ", text).split():
        tokens.extend(_split_clitic(chunk))
    return tokens


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple
    ids: tuple = ()
    bigram_ids: tuple = ()

    def __len__(self):
        return len(self.tokens)


def tokenize(raw, vocab=None):
    """Tokenize ``raw``; with a vocabulary the unigram and bigram ids are filled in."""
    tokens = tokenize_words(raw)
    if vocab is None:
        return TokenSeq(tuple(tokens))
    return vocab.encode(tokens)


def bigram_key(a, b):
    return a + BIGRAM_SEP + b


class Vocabulary:
    """Unigram and bigram id maps. Both tables reserve UNK=0 and PAD=1."""

    def __init__(self, unigrams, bigrams, min_count=2):
        self.min_count = min_count
        self.unigrams = {UNK_TOKEN: UNK, PAD_TOKEN: PAD}
        for tok in unigrams:
            self.unigrams.setdefault(tok, len(self.unigrams))
        self.bigrams = {UNK_TOKEN: UNK, PAD_TOKEN: PAD}
        for key in bigrams:
            self.bigrams.setdefault(key, len(self.bigrams))
        self.id_to_token = list(self.unigrams)

    def __len__(self):
        return len(self.unigrams)

    @property
    def num_bigrams(self):
        return len(self.bigrams)

    def __contains__(self, token):
        return token in self.unigrams

    def token_id(self, token):
        return self.unigrams.get(token, UNK)

    def encode(self, tokens):
        tokens = tuple(tokens)
        ids = tuple(self.unigrams.get(t, UNK) for t in tokens)
        bigram_ids = tuple(self.bigrams.get(bigram_key(a, b), UNK)
                           for a, b in zip(tokens, tokens[1:]))
        return TokenSeq(tokens, ids, bigram_ids)

    def encode_text(self, raw):
        return self.encode(tokenize_words(raw))

    def to_dict(self):
        return {
            "min_count": self.min_count,
            "unigrams": self.id_to_token[2:],
            "bigrams": list(self.bigrams)[2:],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["unigrams"], d["bigrams"], d.get("min_count", 2))

    def __eq__(self, other):
        return (isinstance(other, Vocabulary) and self.unigrams == other.unigrams
                and self.bigrams == other.bigrams)


def _ranked(counter, min_count):
    kept = [(tok, c) for tok, c in counter.items() if c >= min_count]
    kept.sort(key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in kept]


def build_vocab(corpus, min_count=2):
    """Vocabulary over an iterable of token sequences (or raw strings).

    Ids follow descending frequency with ties broken lexicographically, so the
    result does not depend on the order of the corpus.
    """
    uni, bi = Counter(), Counter()
    n = 0
    for item in corpus:
        tokens = tokenize_words(item) if isinstance(item, str) else list(
            item.tokens if isinstance(item, TokenSeq) else item)
        n += 1
        uni.update(tokens)
        bi.update(bigram_key(a, b) for a, b in zip(tokens, tokens[1:]))
    if n == 0:
        raise InputError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(_ranked(uni, min_count), _ranked(bi, min_count), min_count)


# ---------------------------------------------------------------- word vectors

@dataclass
class WordVecTable:
    tokens: list
    vectors: np.ndarray
    duplicates: int = 0
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __getitem__(self, token):
        return self.vectors[self.index[token]]

    def lookup(self, word):
        """Vector for ``word``, falling back to its lowercase form; None if absent."""
        i = self.index.get(word)
        if i is None:
            i = self.index.get(word.lower())
        return None if i is None else self.vectors[i]


def load_word_vectors(path):
    """Read word2vec text format (optional ``V d`` header, then ``token v1 .. vd``)."""
    tokens, rows = [], []
    index = {}
    header = None
    dim = None
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                header = (int(parts[0]), int(parts[1]))
                dim = header[1]
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise FormatError(f"expected {dim} values for {token!r}, found {len(values)}",
                                  path, lineno)
            try:
                vec = [float(v) for v in values]
            except ValueError:
                raise FormatError(f"unreadable float in vector for {token!r}",
                                  path, lineno) from None
            if token in index:
                duplicates += 1
                rows[index[token]] = vec
            else:
                index[token] = len(tokens)
                tokens.append(token)
                rows.append(vec)
    if header is not None and header[0] != len(tokens) + duplicates:
        raise FormatError(f"header declares {header[0]} vectors, file has "
                          f"{len(tokens) + duplicates}", path)
    if duplicates:
        log.warning("%s: %d duplicate tokens (last occurrence kept)", path, duplicates)
    vectors = np.array(rows, dtype=np.float32).reshape(len(rows), dim or 0)
    return WordVecTable(tokens, vectors, duplicates, index)


# ---------------------------------------------------------------- task files

SCHEMAS = ("single", "pair-class", "pair-score")
NLI_LABELS = {"entailment": 0, "contradiction": 1, "neutral": 2}
SCORE_RANGE = (0.0, 5.0)


@dataclass
class LabeledDataset:
    schema: str
    texts: list
    labels: list
    texts_b: list = None
    name: str = ""

    def __len__(self):
        return len(self.texts)

    @property
    def num_classes(self):
        return 0 if self.schema == "pair-score" else len(set(self.labels))

    def subset(self, indices):
        indices = list(indices)
        return LabeledDataset(
            self.schema,
            [self.texts[i] for i in indices],
            [self.labels[i] for i in indices],
            None if self.texts_b is None else [self.texts_b[i] for i in indices],
            self.name,
        )


def _parse_class(value, path, lineno):
    if value.lower() in NLI_LABELS:
        return NLI_LABELS[value.lower()]
    try:
        label = int(value)
    except ValueError:
        raise FormatError(f"class label {value!r} is not an integer", path, lineno) from None
    if label < 0:
        raise FormatError(f"class label {label} is negative", path, lineno)
    return label


def read_task_tsv(path, schema):
    """Parse a tab-separated task file under one of ``SCHEMAS``."""
    if schema not in SCHEMAS:
        raise InputError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    ncols = 2 if schema == "single" else 3
    texts, texts_b, labels = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != ncols:
                raise FormatError(f"{schema} rows need {ncols} columns, found {len(cols)}",
                                  path, lineno)
            texts.append(cols[0])
            if ncols == 3:
                texts_b.append(cols[1])
            if schema == "pair-score":
                try:
                    score = float(cols[-1])
                except ValueError:
                    raise FormatError(f"score {cols[-1]!r} is not a number",
                                      path, lineno) from None
                if not SCORE_RANGE[0] <= score <= SCORE_RANGE[1]:
                    raise FormatError(f"score {score} outside {SCORE_RANGE}", path, lineno)
                labels.append(score)
            else:
                labels.append(_parse_class(cols[-1], path, lineno))
    if schema != "pair-score" and labels:
        present = set(labels)
        if present != set(range(max(present) + 1)):
            missing = sorted(set(range(max(present) + 1)) - present)
            raise InputError(f"{path}: class labels must be dense from 0; missing {missing}")
    return LabeledDataset(schema, texts, labels, texts_b if ncols == 3 else None,
                          name=str(path))


def read_corpus(path):
    """Running text: one sentence per line, blank lines separate documents."""
    docs, doc = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                doc.append(line)
            elif doc:
                docs.append(doc)
                doc = []
    if doc:
        docs.append(doc)
    return docs


def read_pairs(path):
    """Two-column TSV of (input utterance, response utterance)."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise FormatError(f"pair rows need 2 columns, found {len(cols)}", path, lineno)
            pairs.append((cols[0], cols[1]))
    return pairs
