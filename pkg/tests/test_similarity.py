import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sentkit.encoders import make_encoder
from sentkit.errors import DegenerateInputError, EvaluationError, InputError
from sentkit.multitask import TaskData, TrainConfig, train_multitask
from sentkit.similarity import angular_sim, angular_sim_rows, cosine, pearson, sts_eval
from sentkit.text import LabeledDataset, read_task_tsv, tokenize_words
from sentkit.toydata import TOY_DIR


def test_angular_sim_reference_values():
    u = np.array([0.3, -1.2, 2.0])
    assert angular_sim(u, u) == pytest.approx(1.0, abs=1e-9)
    assert angular_sim(u, -u) == pytest.approx(0.0, abs=1e-9)
    assert angular_sim([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.5, abs=1e-9)


def test_cosine_reference_values():
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 1], [2, 2]) == pytest.approx(1.0)
    assert cosine([3, 4], [4, 3]) == pytest.approx(0.96, abs=1e-12)


def test_zero_norm_is_an_input_error():
    with pytest.raises(InputError):
        angular_sim([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(InputError):
        cosine([1.0], [0.0])
    with pytest.raises(InputError, match="pair 1"):
        angular_sim_rows([[1.0, 0.0], [1.0, 1.0]], [[1.0, 0.0], [0.0, 0.0]])


def test_random_pairs_are_symmetric_and_scale_invariant():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 12))
        u, v = rng.normal(size=d), rng.normal(size=d)
        a, b = rng.uniform(0.01, 100, size=2)
        s = angular_sim(u, v)
        assert 0.0 <= s <= 1.0
        assert angular_sim(v, u) == s
        assert angular_sim(a * u, b * v) == pytest.approx(s, abs=1e-6)


def test_strictly_decreasing_in_angle():
    angles = np.linspace(0, math.pi, 181)
    sims = [angular_sim([1.0, 0.0], [math.cos(t), math.sin(t)]) for t in angles]
    assert all(x > y for x, y in zip(sims, sims[1:]))
    np.testing.assert_allclose(sims, 1 - angles / math.pi, atol=1e-7)


def test_rows_match_scalar_version():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(20, 5)), rng.normal(size=(20, 5))
    np.testing.assert_allclose(angular_sim_rows(a, b), [angular_sim(x, y) for x, y in zip(a, b)])


def test_pearson_examples():
    xs = np.array([0.1, 0.7, -2.0, 3.5])
    assert pearson(xs, 2 * xs + 1) == pytest.approx(1.0)
    assert pearson(xs, -xs) == pytest.approx(-1.0)
    assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)


def test_pearson_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(EvaluationError):
        pearson([1], [2])
    with pytest.raises(InputError):
        pearson([1, 2], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=20), st.integers(0, 2**31 - 1))
def test_pearson_in_range_and_symmetric(xs, seed):
    ys = np.random.default_rng(seed).normal(size=len(xs))
    if np.ptp(xs) < 1e-6:
        return
    r = pearson(xs, ys)
    assert -1.0 <= r <= 1.0
    assert r == pytest.approx(pearson(ys, xs), abs=1e-12)


class _BagOfWords:
    """Identity encoder over one-hot word indicators."""

    def __init__(self, words):
        self.index = {w: i for i, w in enumerate(sorted(words))}

    def encode_texts(self, texts):
        out = np.zeros((len(texts), len(self.index)), dtype=np.float32)
        for row, text in enumerate(texts):
            for w in tokenize_words(text):
                out[row, self.index[w]] = 1.0
        return out


def test_identity_encoder_fixture_gives_r_one():
    texts_a = ["a b", "a c", "b c d", "d", "a b c d"]
    texts_b = ["a b", "b", "d e", "a", "a e"]
    enc = _BagOfWords("abcde")
    gold = [angular_sim(u, v) for u, v in zip(enc.encode_texts(texts_a), enc.encode_texts(texts_b))]
    ds = LabeledDataset("pair-score", texts_a, gold, texts_b)
    res = sts_eval(ds, enc)
    assert res.r == pytest.approx(1.0, abs=1e-9) and res.n == 5
    np.testing.assert_allclose(res.scores, gold)


def test_single_pair_is_an_evaluation_error():
    ds = LabeledDataset("pair-score", ["a"], [1.0], ["b"])
    with pytest.raises(EvaluationError):
        sts_eval(ds, _BagOfWords("ab"))


def test_wrong_schema_is_an_input_error():
    ds = LabeledDataset("single", ["a", "b"], [0, 1])
    with pytest.raises(InputError):
        sts_eval(ds, _BagOfWords("ab"))


def test_trained_encoder_beats_random_weights():
    sts = read_task_tsv(TOY_DIR / "sts.tsv", "pair-score")
    assert len(sts) == 20
    wins = 0
    for seed in range(10):
        cfg = TrainConfig.from_file(TOY_DIR / "train.cfg",
                                    {"seed": str(seed), "cycles": "100", "embed_dim": "32"})
        res = train_multitask(cfg, TaskData.from_config(cfg))
        rand = make_encoder(cfg.encoder, res.encoder.vocab, seed=seed + 100,
                            **cfg.encoder_kwargs())
        wins += sts_eval(sts, res.encoder).r > sts_eval(sts, rand).r
    assert wins >= 9
