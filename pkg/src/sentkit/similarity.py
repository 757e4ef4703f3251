"""Angular similarity between embeddings and STS-style evaluation."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, EvaluationError, InputError

_CLAMP_SLACK = 1e-6


def _norm(v, label):
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise InputError(f"{label} has zero norm")
    return n


def cosine(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    c = float(u @ v) / (_norm(u, "u") * _norm(v, "v"))
    assert abs(c) <= 1 + _CLAMP_SLACK, f"cosine {c} outside [-1, 1]"
    return min(1.0, max(-1.0, c))


def angular_sim(u, v):
    """``1 - arccos(cos(u, v)) / pi``, in [0, 1]."""
    return 1.0 - math.acos(cosine(u, v)) / math.pi


def angular_sim_rows(a, b):
    """Row-wise angular similarity of two (n, d) arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if (na == 0).any() or (nb == 0).any():
        bad = int(np.flatnonzero((na == 0) | (nb == 0))[0])
        raise InputError(f"pair {bad} has a zero-norm embedding")
    c = np.einsum("ij,ij->i", a, b) / (na * nb)
    assert np.all(np.abs(c) <= 1 + _CLAMP_SLACK)
    return 1.0 - np.arccos(np.clip(c, -1.0, 1.0)) / math.pi


def pearson(xs, ys):
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(f"pearson needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise EvaluationError(f"pearson needs at least 2 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        raise DegenerateInputError("pearson undefined: zero variance")
    return max(-1.0, min(1.0, float(xc @ yc) / (sx * sy)))


@dataclass
class StsResult:
    scores: np.ndarray
    r: float
    n: int


def sts_eval(dataset, encoder):
    """Pearson r between angular similarity of encoded pairs and gold scores."""
    if dataset.schema != "pair-score":
        raise InputError(f"sts_eval needs a pair-score dataset, got {dataset.schema}")
    if len(dataset) < 2:
        raise EvaluationError(f"STS evaluation needs at least 2 pairs, got {len(dataset)}")
    a = encoder.encode_texts(dataset.texts)
    b = encoder.encode_texts(dataset.texts_b)
    scores = angular_sim_rows(a, b)
    return StsResult(scores, pearson(scores, dataset.labels), len(dataset))
