import numpy as np
import pytest

from sentkit.encoders import make_encoder, params_digest
from sentkit.errors import ConfigError, InputError
from sentkit.text import LabeledDataset, WordVecTable, build_vocab, read_task_tsv
from sentkit.toydata import TOY_DIR
from sentkit.transfer import (EvalReport, HeadConfig, TransferModelSpec, TransferSources,
                              cnn_head_train, deterministic_split, dnn_feature_vector,
                              dnn_head_train, feature_dim, format_report, run_eval,
                              run_learning_curve, shuffled_labels, stratified_order)


@pytest.fixture(scope="module")
def topics():
    ds = read_task_tsv(TOY_DIR / "topics500.tsv", "single")
    ds.name = "topics500"
    return ds


@pytest.fixture(scope="module")
def sources(topics):
    vocab = build_vocab(topics.texts, min_count=1)
    return TransferSources({"use_d": make_encoder("dan", vocab, seed=0, embed_dim=128),
                            "use_t": make_encoder("transformer", vocab, seed=0, embed_dim=32,
                                                  num_heads=4)})


FAST = HeadConfig(max_epochs=20, patience=4)


# ---------------------------------------------------------------- spec strings

@pytest.mark.parametrize("text", ["use_t", "use_d", "use_t+cnn:w2v", "use_d+dnn:lrn", "cnn:w2v",
                                  "dnn:lrn", "dnn:w2v"])
def test_spec_string_round_trip(text):
    spec = TransferModelSpec.parse(text)
    assert str(spec) == text and TransferModelSpec.parse(str(spec)) == spec


@pytest.mark.parametrize("text", ["dnn", "none", "cnn", "use_x", "use_t+rnn:w2v", "dnn:glove"])
def test_bad_specs_are_config_errors(text):
    with pytest.raises(ConfigError):
        TransferModelSpec.parse(text)


# ---------------------------------------------------------------- dnn head

def _blobs(rng, n=200):
    labels = rng.integers(0, 2, n)
    x = rng.normal(size=(n, 2)) * 0.3 + np.where(labels[:, None] == 1, 2.0, -2.0)
    return x, labels


def test_dnn_separates_blobs():
    x, y = _blobs(np.random.default_rng(0))
    model = dnn_head_train(x, y)
    assert model.accuracy(x, y) == 1.0


def test_dnn_solves_xor():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(400, 2))
    x = x[np.abs(x).min(axis=1) > 0.1]
    y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(int)
    config = HeadConfig(max_epochs=300, lr=1e-2, patience=300)
    model = dnn_head_train(x, y, config)
    assert model.accuracy(x, y) > 0.95


def test_dnn_shuffled_labels_are_at_chance():
    rng = np.random.default_rng(2)
    x, y = _blobs(rng, 1350)
    y = rng.permutation(y)
    model = dnn_head_train(x[:300], y[:300], dev=(x[300:350], y[300:350]))
    assert abs(model.accuracy(x[350:], y[350:]) - 0.5) <= 0.1


def test_single_class_is_an_input_error():
    with pytest.raises(InputError):
        dnn_head_train(np.ones((4, 2)), [1, 1, 1, 1])
    with pytest.raises(InputError):
        cnn_head_train([np.ones((2, 3))] * 2, [0, 0])


# ---------------------------------------------------------------- cnn head

def _bigram_task(rng, n=300, vocab=10, length=6):
    """Label 1 iff token 0 is immediately followed by token 1 ("good movie")."""
    eye = np.eye(vocab, dtype=np.float32)
    seqs, labels = [], []
    for i in range(n):
        toks = list(rng.integers(2, vocab, size=length))
        if i % 2 == 0:
            pos = int(rng.integers(0, length - 1))
            toks[pos:pos + 2] = [0, 1]
        elif i % 4 == 1:
            toks[int(rng.integers(0, length))] = 0
            toks[int(rng.integers(0, length))] = 1
        has = any(a == 0 and b == 1 for a, b in zip(toks, toks[1:]))
        seqs.append(eye[toks])
        labels.append(int(has))
    return seqs, np.array(labels)


def test_cnn_detects_a_bigram():
    rng = np.random.default_rng(3)
    seqs, y = _bigram_task(rng)
    test_seqs, test_y = _bigram_task(rng, 200)
    model = cnn_head_train(seqs, y, HeadConfig(max_epochs=60, lr=1e-2), seed=0)
    assert model.accuracy(test_seqs, test_y) > 0.95


def test_cnn_single_token_sequences():
    rng = np.random.default_rng(4)
    seqs = [rng.normal(size=(1, 4)) for _ in range(20)]
    y = np.arange(20) % 2
    model = cnn_head_train(seqs, y, HeadConfig(max_epochs=3))
    assert model.predict(seqs).shape == (20,)


def test_cnn_rejects_empty_sequences():
    with pytest.raises(InputError):
        cnn_head_train([np.ones((2, 3)), np.zeros((0, 3))], [0, 1])


def test_cnn_shuffled_labels_are_at_chance():
    rng = np.random.default_rng(5)
    seqs, y = _bigram_task(rng, 1350)
    y = rng.permutation(y)
    model = cnn_head_train(seqs[:300], y[:300], dev=(seqs[300:350], y[300:350]))
    assert abs(model.accuracy(seqs[350:], y[350:]) - 0.5) <= 0.1


# ---------------------------------------------------------------- features

def test_feature_dims(sources):
    vectors = WordVecTable(["a", "b"], np.zeros((2, 50), np.float32))
    src = TransferSources(sources.encoders, vectors)
    assert feature_dim(TransferModelSpec.parse("use_d"), src) == 128
    assert feature_dim(TransferModelSpec.parse("use_d+dnn:w2v"), src) == 178
    assert feature_dim(TransferModelSpec.parse("use_d+dnn:lrn"), src) == 178
    vec = dnn_feature_vector(TransferModelSpec.parse("use_d+dnn:w2v"), "a b", src)
    assert vec.shape == (178,)


def test_missing_sources_are_config_errors(sources):
    with pytest.raises(ConfigError):
        feature_dim(TransferModelSpec.parse("use_t"), TransferSources())
    with pytest.raises(ConfigError):
        feature_dim(TransferModelSpec.parse("cnn:w2v"), sources)
    swapped = TransferSources({"use_t": sources.encoders["use_d"]})
    with pytest.raises(ConfigError, match="transformer"):
        feature_dim(TransferModelSpec.parse("use_t"), swapped)


# ---------------------------------------------------------------- splits

def test_deterministic_split_is_80_10_10():
    s = deterministic_split(500, seed=0)
    assert (len(s.train), len(s.dev), len(s.test)) == (400, 50, 50)
    assert len(set(s.train) | set(s.dev) | set(s.test)) == 500
    again = deterministic_split(500, seed=0)
    assert np.array_equal(s.train, again.train)


def test_stratified_prefixes_are_nested_and_balanced():
    rng = np.random.default_rng(6)
    labels = rng.choice(3, size=200, p=[0.5, 0.3, 0.2])
    order = stratified_order(labels, seed=1)
    assert sorted(order) == list(range(200))
    share = np.bincount(labels) / len(labels)
    for size in range(1, 201):
        counts = np.bincount(labels[order[:size]], minlength=3)
        assert np.all(np.abs(counts - share * size) <= 1)


# ---------------------------------------------------------------- learning curves

def test_size_outside_training_split(topics, sources):
    with pytest.raises(InputError):
        run_learning_curve(topics, "use_d", [401], repeats=1, sources=sources)
    with pytest.raises(InputError):
        run_learning_curve(topics, "use_d", [1], repeats=1, sources=sources)


def test_pair_schema_is_refused(sources):
    ds = LabeledDataset("pair-class", ["a", "b"], [0, 1], ["c", "d"])
    with pytest.raises(ConfigError):
        run_learning_curve(ds, "use_d", [2], sources=sources)


def test_report_bookkeeping_and_determinism(topics, sources):
    a = run_learning_curve(topics, "use_d+dnn:lrn", [20, 40], repeats=3, seed=5,
                           sources=sources, config=FAST)
    b = run_learning_curve(topics, "use_d+dnn:lrn", [20, 40], repeats=3, seed=5,
                           sources=sources, config=FAST, threads=3)
    assert [r.size for r in a] == [20, 40]
    for r in a:
        assert r.runs == 3 and r.mean == float(np.mean(r.accuracies))
    assert format_report(a) == format_report(b)
    text = format_report(a)
    assert text.splitlines()[0] == "task\tspec\tsize\trun\taccuracy"
    assert text.splitlines()[1].startswith("topics500\tuse_d+dnn:lrn\t20\t0\t")


def test_full_size_matches_run_eval(topics, sources):
    curve = run_learning_curve(topics, "cnn:lrn", [400], repeats=1, sources=sources,
                               config=FAST)[0]
    single = run_eval(topics, "cnn:lrn", repeats=1, sources=sources, config=FAST)
    assert isinstance(single, EvalReport)
    assert single.accuracies == curve.accuracies


def test_encoder_stays_frozen(topics, sources):
    before = {k: params_digest(e) for k, e in sources.encoders.items()}
    run_learning_curve(topics, "use_t+cnn:lrn", [30], repeats=2, sources=sources, config=FAST)
    run_learning_curve(topics, "use_d", [30], repeats=2, sources=sources, config=FAST)
    assert before == {k: params_digest(e) for k, e in sources.encoders.items()}


@pytest.mark.parametrize("spec", ["use_d", "dnn:lrn", "cnn:lrn"])
def test_shuffled_labels_control(topics, sources, spec):
    noisy = shuffled_labels(topics, seed=0)
    report = run_eval(noisy, spec, repeats=2, sources=sources, config=FAST)
    chance = 1 / len(set(topics.labels))
    test = deterministic_split(len(topics)).test
    majority = np.bincount(np.asarray(noisy.labels)[test]).max() / len(test)
    assert report.mean <= max(chance, majority) + 0.1
