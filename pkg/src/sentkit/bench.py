"""Wall-time and activation-memory scaling of the encoders with sentence length.

Memory is the instrumented count of live intermediate floats (see
``Tape.peak_activation_floats``), not process RSS, so it is exact and
repeatable. The closed forms below are derived in docs/bench_closed_forms.md.
"""

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .encoders import DanEncoder, TransformerEncoder, make_encoder
from .errors import InputError
from .tensor import Tape
from .text import Vocabulary
from .toydata import pseudo_words

CSV_HEADER = ["encoder", "n", "b", "ms_per_sentence", "peak_act_floats", "param_floats"]
DEFAULT_LENGTHS = (16, 32, 64, 128, 256, 512)
DEFAULT_BATCHES = (1, 8, 32)
DEFAULT_TRIALS = 9
MIN_TRIALS = 5


@dataclass
class BenchRecord:
    encoder: str
    n: int
    b: int
    ms_per_sentence: float
    peak_act_floats: int
    param_floats: int
    ms_min: float = float("nan")
    ms_max: float = float("nan")
    trials: int = 0

    def row(self):
        return [self.encoder, self.n, self.b, f"{self.ms_per_sentence:.6g}",
                self.peak_act_floats, self.param_floats]


@dataclass
class ScalingFit:
    encoder: str
    b: int
    alpha: float
    r2: float
    n_min: int
    n_max: int
    points: int
    log_c: float = 0.0

    def comment(self):
        return (f"# fit encoder={self.encoder} b={self.b} alpha={self.alpha:.4f} "
                f"r2={self.r2:.4f} n={self.n_min}-{self.n_max} points={self.points}")


# ---------------------------------------------------------------- inputs

def bench_vocab(size=1000, seed=0):
    return Vocabulary(pseudo_words(size, seed), [], min_count=1)


def default_bench_encoder(kind, embed_dim=32, num_heads=8, vocab_size=1000, seed=0):
    """Small randomly initialised encoder used when no checkpoint is given."""
    vocab = bench_vocab(vocab_size, seed)
    if kind == "transformer":
        return make_encoder(kind, vocab, seed=seed, embed_dim=embed_dim, num_heads=num_heads)
    return make_encoder(kind, vocab, seed=seed, embed_dim=embed_dim)


def synthetic_batch(encoder, n, b, seed=0):
    """``b`` sentences of exactly ``n`` in-vocabulary tokens."""
    vocab = encoder.vocab
    if len(vocab) <= 2:
        raise InputError("encoder vocabulary has no real tokens to sample")
    if isinstance(encoder, TransformerEncoder) and n > encoder.config.max_len:
        raise InputError(f"n={n} exceeds the transformer max_len {encoder.config.max_len}")
    rng = np.random.default_rng([seed, n, b])
    tokens = vocab.id_to_token
    return [vocab.encode([tokens[i] for i in rng.integers(2, len(vocab), n)])
            for _ in range(b)]


# ---------------------------------------------------------------- measurement

def measure_memory(encoder, n, b):
    """(peak activation floats, parameter floats, multiply-adds) of one forward pass."""
    seqs = synthetic_batch(encoder, n, b)
    with Tape(grad=False) as tape:
        encoder.forward(seqs)
    return tape.peak_activation_floats(), encoder.num_param_floats(), tape.macs


def time_encode(encoder, n, b, trials=DEFAULT_TRIALS, clock=time.perf_counter):
    """Median wall time per sentence of ``encode_batch`` on ``b`` sentences of length ``n``."""
    if trials < MIN_TRIALS:
        raise InputError(f"trials must be at least {MIN_TRIALS}, got {trials}")
    seqs = synthetic_batch(encoder, n, b)
    encoder.encode_batch(seqs)
    times = []
    for _ in range(trials):
        start = clock()
        encoder.encode_batch(seqs)
        times.append((clock() - start) * 1000.0 / b)
    peak, params, _ = measure_memory(encoder, n, b)
    times = np.array(times)
    return BenchRecord(encoder.kind, n, b, float(np.median(times)), peak, params,
                       float(times.min()), float(times.max()), trials)


def run_sweep(encoders, lengths=DEFAULT_LENGTHS, batches=DEFAULT_BATCHES,
              trials=DEFAULT_TRIALS, progress=None):
    records = []
    for encoder in encoders:
        for b in batches:
            for n in lengths:
                rec = time_encode(encoder, n, b, trials)
                records.append(rec)
                if progress is not None:
                    progress(rec)
    return records


# ---------------------------------------------------------------- closed forms

def transformer_peak_floats(config, n, b):
    """Peak live floats of one transformer forward pass on ``b`` sentences of length ``n``."""
    d, f, h = config.embed_dim, config.ffn_dim, config.num_heads
    D, F, S = b * n * d, b * n * f, b * h * n * n
    x_in = 2 * D if config.position_encoding else D
    stages = [
        2 * D,                    # gather -> scaled embeddings
        x_in,                     # scaled + positions
        4 * D,                    # x, q, k, v
        5 * D,                    # x, k, v, q, q scaled
        4 * D + S,                # x, k, v, scaled q, scores
        2 * D + 2 * S,            # x, v, scores, softmax
        2 * D + S + D,            # x, v, probs, heads context
    ]
    merge_copies = n > 1 and h > 1
    stages.append(4 * D if merge_copies else 3 * D)   # merge heads
    stages.append(3 * D)          # x, merged, projected
    stages.append(3 * D)          # x, projected, residual sum
    if config.layer_norm:
        stages.append(2 * D)
    stages += [D + F, D + 2 * F, 2 * D + F, 3 * D]
    if config.layer_norm:
        stages.append(2 * D)
    # pooling: context, summed (b, d), scaled (b, d)
    stages += [D + b * d, 2 * b * d]
    return max(stages)


def dan_peak_floats(config, b):
    """Peak live floats of one DAN forward pass; independent of sentence length."""
    d = config.embed_dim
    dims = (d,) + tuple(config.hidden_dims) + (d,)
    stages = [3 * d, 2 * d]
    last = len(dims) - 2
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        stages.append(fan_in + fan_out)
        if i < last:
            stages.append(2 * fan_out)
    return b * max(stages)


def transformer_macs(config, n, b):
    d, f, layers = config.embed_dim, config.ffn_dim, config.num_layers
    return layers * (4 * b * n * d * d + 2 * b * n * n * d + 2 * b * n * d * f)


def dan_macs(config, n, b):
    d = config.embed_dim
    dims = (d,) + tuple(config.hidden_dims) + (d,)
    return b * (2 * n - 1) * d + b * sum(i * o for i, o in zip(dims[:-1], dims[1:]))


def closed_form_peak(encoder, n, b):
    if isinstance(encoder, DanEncoder):
        return dan_peak_floats(encoder.config, b)
    return transformer_peak_floats(encoder.config, n, b)


def closed_form_macs(encoder, n, b):
    if isinstance(encoder, DanEncoder):
        return dan_macs(encoder.config, n, b)
    return transformer_macs(encoder.config, n, b)


# ---------------------------------------------------------------- fits

def fit_power_law(ns, ts):
    """Least-squares slope and R^2 of ln t against ln n; returns (alpha, log_c, r2)."""
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(ts, dtype=np.float64))
    alpha, log_c = np.polyfit(x, y, 1)
    resid = y - (alpha * x + log_c)
    total = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / total if total > 0 else 1.0
    return float(alpha), float(log_c), float(r2)


def fit_scaling(records):
    """Scaling exponent of time per sentence in n for records of one encoder and batch size."""
    records = list(records)
    kinds = {r.encoder for r in records}
    batches = {r.b for r in records}
    if len(kinds) > 1 or len(batches) > 1:
        raise InputError("fit_scaling needs records of a single encoder and batch size")
    ns = [r.n for r in records]
    if len(set(ns)) != len(ns):
        raise InputError("fit_scaling got repeated lengths")
    if len(ns) < 5:
        raise InputError(f"fit_scaling needs at least 5 lengths, got {len(ns)}")
    if max(ns) < 8 * min(ns):
        raise InputError(f"lengths must span at least 8x, got {min(ns)}..{max(ns)}")
    if any(r.ms_per_sentence <= 0 for r in records):
        raise InputError("fit_scaling needs positive times")
    alpha, log_c, r2 = fit_power_law(ns, [r.ms_per_sentence for r in records])
    return ScalingFit(records[0].encoder, records[0].b, alpha, r2, min(ns), max(ns),
                      len(ns), log_c)


def fit_all(records, min_points=5):
    """One fit per (encoder, b) group that has enough lengths."""
    groups = {}
    for r in records:
        groups.setdefault((r.encoder, r.b), []).append(r)
    fits = []
    for key in sorted(groups):
        group = sorted(groups[key], key=lambda r: r.n)
        ns = [r.n for r in group]
        if len(ns) >= min_points and max(ns) >= 8 * min(ns):
            fits.append(fit_scaling(group))
    return fits


# ---------------------------------------------------------------- csv

def format_bench_csv(records, fits=()):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(r.row())
    for fit in fits:
        buf.write(fit.comment() + "\n")
    return buf.getvalue()


def emit_bench_csv(records, fits, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_bench_csv(records, fits))


def parse_bench_csv(text):
    """Inverse of :func:`format_bench_csv`; returns (records, fits)."""
    lines = text.splitlines()
    data = [line for line in lines if line and not line.startswith("#")]
    fits = []
    for line in lines:
        if line.startswith("# fit "):
            kv = dict(item.split("=", 1) for item in line[len("# fit "):].split())
            lo, hi = kv["n"].split("-")
            fits.append(ScalingFit(kv["encoder"], int(kv["b"]), float(kv["alpha"]),
                                   float(kv["r2"]), int(lo), int(hi), int(kv["points"])))
    reader = csv.reader(data)
    header = next(reader, None)
    if header != CSV_HEADER:
        raise InputError(f"unexpected bench CSV header {header}")
    records = [BenchRecord(row[0], int(row[1]), int(row[2]), float(row[3]), int(row[4]),
                           int(row[5])) for row in reader]
    return records, fits


def read_bench_csv(path):
    with open(path, encoding="utf-8") as fh:
        return parse_bench_csv(fh.read())


def median_smooth(values, width=3):
    """Running median (edges use the available window)."""
    values = list(values)
    half = width // 2
    return [float(np.median(values[max(0, i - half):i + half + 1])) for i in range(len(values))]

