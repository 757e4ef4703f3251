"""Word Embedding Association Test: effect sizes and one-tailed permutation p-values."""

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FormatError, InputError, SentkitError

log = logging.getLogger(__name__)

SUITE_DIR = Path(__file__).parent / "data" / "weat"


@dataclass
class WeatSpec:
    name: str
    X: list
    Y: list
    A: list
    B: list
    ref: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("X", "Y", "A", "B"):
            if not getattr(self, key):
                raise InputError(f"WEAT spec {self.name!r}: list {key} is empty")
        both = set(self.X) & set(self.Y)
        if both:
            raise InputError(f"WEAT spec {self.name!r}: {sorted(both)} appear in both X and Y")
        if len(self.X) != len(self.Y):
            log.warning("WEAT spec %r: |X|=%d differs from |Y|=%d",
                        self.name, len(self.X), len(self.Y))

    def words(self):
        return list(dict.fromkeys(self.X + self.Y + self.A + self.B))

    def swapped_targets(self):
        return WeatSpec(self.name, self.Y, self.X, self.A, self.B, self.ref, self.meta)

    def swapped_attributes(self):
        return WeatSpec(self.name, self.X, self.Y, self.B, self.A, self.ref, self.meta)


@dataclass
class WeatResult:
    name: str
    d: float
    p: float
    n: int
    exact: bool


_LIST_KEYS = {"x": "X", "y": "Y", "a": "A", "b": "B"}


def parse_weat_spec(text, source="<string>"):
    """Parse the ``key: value`` spec format (see docs/weat_format.md)."""
    fields, meta = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise FormatError("expected 'key: value'", source, lineno)
        key, value = (s.strip() for s in line.split(":", 1))
        k = key.lower()
        if k in _LIST_KEYS:
            words = [w.strip() for w in value.split(",") if w.strip()]
            fields[_LIST_KEYS[k]] = words
        elif k in ("name", "ref"):
            fields[k] = value
        else:
            meta[k] = value
    missing = [k for k in ("name", "X", "Y", "A", "B") if k not in fields]
    if missing:
        raise FormatError(f"missing fields {missing}", source)
    try:
        return WeatSpec(fields["name"], fields["X"], fields["Y"], fields["A"], fields["B"],
                        fields.get("ref", ""), meta)
    except InputError as exc:
        raise FormatError(str(exc), source) from None


def load_weat_spec(path):
    return parse_weat_spec(Path(path).read_text(encoding="utf-8"), str(path))


def load_suite(directory=SUITE_DIR):
    """Specs from every ``*.weat`` file in ``directory``; returns (specs, errors)."""
    specs, errors = [], []
    for path in sorted(Path(directory).glob("*.weat")):
        try:
            specs.append(load_weat_spec(path))
        except SentkitError as exc:
            errors.append((path.name, str(exc)))
    return specs, errors


# ---------------------------------------------------------------- statistics

def _unit(vec, word):
    vec = np.asarray(vec, dtype=np.float64)
    n = np.linalg.norm(vec)
    if n == 0:
        raise InputError(f"word {word!r} has a zero-norm vector")
    return vec / n


def association(w, A, B):
    """Mean cosine of ``w`` with the rows of A minus its mean cosine with B."""
    w = _unit(w, "w")
    a = np.array([_unit(v, f"A[{i}]") for i, v in enumerate(A)])
    b = np.array([_unit(v, f"B[{i}]") for i, v in enumerate(B)])
    return float((a @ w).mean() - (b @ w).mean())


def _resolve(spec, embeddings):
    vecs, missing = {}, []
    for word in spec.words():
        v = embeddings(word)
        if v is None:
            missing.append(word)
        else:
            vecs[word] = _unit(v, word)
    if missing:
        raise InputError(f"WEAT spec {spec.name!r}: no vector for {missing}")
    return vecs


def association_scores(spec, embeddings):
    """s(w, A, B) for every target word, X first then Y."""
    vecs = _resolve(spec, embeddings)
    a = np.array([vecs[w] for w in spec.A])
    b = np.array([vecs[w] for w in spec.B])
    targets = np.array([vecs[w] for w in spec.X + spec.Y])
    return (targets @ a.T).mean(axis=1) - (targets @ b.T).mean(axis=1)


def effect_size(spec, embeddings, population=True):
    """Difference of mean associations of X and Y over the pooled std-dev."""
    s = association_scores(spec, embeddings)
    nx = len(spec.X)
    sd = float(np.std(s, ddof=0 if population else 1))
    if sd == 0:
        raise DegenerateInputError(f"WEAT spec {spec.name!r}: association scores have zero spread")
    return float((s[:nx].mean() - s[nx:].mean()) / sd)


def _statistic_counts(s, nx, max_exact, samples, rng):
    total = s.sum()
    observed = 2 * s[:nx].sum() - total
    # ties in exact arithmetic must not be lost to summation order
    threshold = observed - 1e-12 * max(1.0, abs(observed))
    n = s.size
    n_partitions = math.comb(n, nx)
    if n_partitions <= max_exact:
        hits = 0
        for combo in itertools.combinations(range(n), nx):
            if 2 * s[list(combo)].sum() - total >= threshold:
                hits += 1
        return hits, n_partitions, True
    hits = 0
    done = 0
    chunk = 4096
    while done < samples:
        m = min(chunk, samples - done)
        keys = rng.random((m, n))
        idx = np.argpartition(keys, nx - 1, axis=1)[:, :nx]
        t = 2 * s[idx].sum(axis=1) - total
        hits += int((t >= threshold).sum())
        done += m
    return hits, samples, False


def p_value(spec, embeddings, max_exact=100_000, samples=100_000, seed=0):
    """One-tailed permutation p-value; returns (p, exact, partitions evaluated)."""
    s = association_scores(spec, embeddings)
    if s.size < 2:
        raise InputError("p_value needs at least two target words")
    rng = np.random.default_rng(seed)
    hits, n, exact = _statistic_counts(s, len(spec.X), max_exact, samples, rng)
    return hits / n, exact, n


def run_weat(spec, embeddings, max_exact=100_000, samples=100_000, seed=0, population=True):
    d = effect_size(spec, embeddings, population=population)
    p, exact, n = p_value(spec, embeddings, max_exact, samples, seed)
    return WeatResult(spec.name, d, p, n, exact)


def table_source(table):
    """Embedding lookup backed by a :class:`~sentkit.text.WordVecTable`."""
    return table.lookup


def encoder_source(encoder):
    """Embedding lookup that encodes each word as a one-token sentence."""
    cache = {}

    def lookup(word):
        if word not in cache:
            cache[word] = encoder.encode(encoder.vocab.encode([word.lower()]))
        return cache[word]

    return lookup


def run_weat_suite(specs, embeddings, max_exact=100_000, samples=100_000, seed=0):
    """Evaluate every spec; returns (results, errors) and never aborts on one bad spec."""
    results, errors = [], []
    for spec in specs:
        try:
            results.append(run_weat(spec, embeddings, max_exact, samples, seed))
        except SentkitError as exc:
            errors.append((spec.name, str(exc)))
    return results, errors


def format_results(results):
    lines = ["name\td\tp\texact\tn"]
    for r in results:
        lines.append(f"{r.name}\t{r.d:.6f}\t{r.p:.6g}\t{str(r.exact).lower()}\t{r.n}")
    return "\n".join(lines) + "\n"
