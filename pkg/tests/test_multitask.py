import io
import math

import numpy as np
import pytest

from sentkit import tensor as T
from sentkit.checkpoint import dumps
from sentkit.errors import ConfigError, InputError, TrainingError
from sentkit.multitask import (NliHead, TaskData, TrainConfig, build_heads, head_view,
                               neighbor_ranking_loss, nli_accuracy, nli_loss, ranking_loss,
                               recall_at_1, response_ranking_loss, train_multitask)
from sentkit.tensor import Tape, Tensor
from sentkit.text import build_vocab, read_corpus, read_pairs, read_task_tsv
from sentkit.encoders import make_encoder
from sentkit.toydata import TOY_DIR


@pytest.fixture(scope="module")
def toy():
    docs = read_corpus(TOY_DIR / "corpus.txt")
    nli = read_task_tsv(TOY_DIR / "nli.tsv", "pair-class")
    return TaskData.from_documents(docs, read_pairs(TOY_DIR / "conversations.tsv"),
                                   list(zip(nli.texts, nli.texts_b, nli.labels)))


def _config(**kw):
    base = dict(embed_dim=32, num_heads=4, min_count=1, batch_size=8, cycles=20, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def _encoder(toy, kind, seed, d=32):
    vocab = build_vocab(list(toy.texts()), min_count=1)
    cfg = _config(encoder=kind, embed_dim=d, seed=seed)
    return make_encoder(kind, vocab, seed=seed, **cfg.encoder_kwargs()), cfg


def _tok(encoder, items):
    return [tuple(encoder.vocab.encode_text(x) if isinstance(x, str) else x for x in item)
            for item in items]


def test_separable_pairs_give_near_zero_loss():
    u = Tensor([[10.0, 0.0], [0.0, 10.0]])
    assert float(ranking_loss(u, u).data) < 1e-4


def test_batch_of_one_is_a_config_error(toy):
    enc, _ = _encoder(toy, "dan", 0)
    pair = _tok(enc, toy.neighbor[:1])
    with pytest.raises(ConfigError):
        neighbor_ranking_loss(enc, pair)
    with pytest.raises(ConfigError):
        response_ranking_loss(enc, pair)


@pytest.mark.parametrize("kind", ["transformer", "dan"])
def test_losses_at_init_are_chance_level(toy, kind):
    rng = np.random.default_rng(0)
    for seed in range(10):
        enc, cfg = _encoder(toy, kind, seed)
        view = head_view(enc, cfg)
        heads = build_heads(cfg, enc.embed_dim)
        pick = rng.choice(len(toy.neighbor), 8, replace=False)
        nb = float(neighbor_ranking_loss(view, _tok(enc, [toy.neighbor[i] for i in pick])).data)
        resp = _tok(enc, toy.response[8 * seed:8 * seed + 8])
        rs = float(response_ranking_loss(view, resp, heads["response"]).data)
        nl = float(nli_loss(view, heads["nli"], _tok(enc, toy.nli[6 * seed:6 * seed + 6])).data)
        assert abs(nb - math.log(8)) < 0.2 * math.log(8)
        assert abs(rs - math.log(8)) < 0.2 * math.log(8)
        assert abs(nl - math.log(3)) < 0.2 * math.log(3)


def test_identity_projection_reduces_to_neighbor_loss(toy):
    enc, _ = _encoder(toy, "transformer", 1)
    batch = _tok(enc, toy.response[:8])
    a = response_ranking_loss(enc, batch, head=None).data
    b = neighbor_ranking_loss(enc, batch).data
    assert a == b


def test_equal_inputs_zero_the_difference_block():
    u = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    feats = NliHead.features(u, u).data
    assert np.all(feats[:, 8:12] == 0)


def test_nli_label_out_of_range(toy):
    enc, cfg = _encoder(toy, "dan", 0)
    heads = build_heads(cfg, enc.embed_dim)
    with pytest.raises(InputError):
        nli_loss(enc, heads["nli"], _tok(enc, [("a b", "c d", 3), ("a", "b", 0)]))


def test_transformer_memorizes_64_sentences(toy):
    sents = [s for doc in read_corpus(TOY_DIR / "corpus.txt") for s in doc][:64]
    pairs = [(sents[i], sents[i + 1]) for i in range(0, 64, 2)]
    cfg = _config(tasks=("neighbor",), cycles=200, lr=1e-3)
    res = train_multitask(cfg, TaskData(pairs))
    view = head_view(res.encoder, cfg)
    assert recall_at_1(view, _tok(res.encoder, pairs), 8) > 0.9


def test_dan_memorizes_64_sentences_with_more_steps(toy):
    sents = [s for doc in read_corpus(TOY_DIR / "corpus.txt") for s in doc][:64]
    pairs = [(sents[i], sents[i + 1]) for i in range(0, 64, 2)]
    cfg = _config(encoder="dan", tasks=("neighbor",), cycles=600, lr=1e-2)
    res = train_multitask(cfg, TaskData(pairs))
    view = head_view(res.encoder, cfg)
    assert recall_at_1(view, _tok(res.encoder, pairs), 8) > 0.9


@pytest.mark.parametrize("kind", ["transformer", "dan"])
def test_nli_overfits_toy_fixture(toy, kind):
    cfg = _config(encoder=kind, tasks=("nli",), cycles=300, lr=1e-3)
    res = train_multitask(cfg, TaskData(nli=toy.nli))
    assert len(toy.nli) == 60
    view = head_view(res.encoder, cfg)
    assert nli_accuracy(view, res.heads["nli"], _tok(res.encoder, toy.nli)) > 0.95


def test_three_task_run_lowers_every_loss_and_is_fair(toy):
    cfg = _config(cycles=200, lr=1e-3)
    log = io.StringIO()
    res = train_multitask(cfg, toy, progress=log)
    for task, losses in res.state.losses.items():
        assert len(losses) == 200
        assert np.mean(losses[-10:]) < losses[0]
    lines = log.getvalue().splitlines()
    assert len(lines) == 600
    assert lines[0].split("\t")[:2] == ["1", "neighbor"]
    assert [ln.split("\t")[1] for ln in lines[:3]] == ["neighbor", "response", "nli"]


def test_same_seed_gives_bit_identical_checkpoints(toy, tmp_path):
    blobs = []
    for _ in range(2):
        res = train_multitask(_config(encoder="dan", cycles=15), toy)
        blobs.append(dumps(res.encoder))
    assert blobs[0] == blobs[1]
    other = train_multitask(_config(encoder="dan", cycles=15, seed=1), toy)
    assert dumps(other.encoder) != blobs[0]


def test_single_task_run(toy):
    res = train_multitask(_config(encoder="dan", tasks=("response",), cycles=5), toy)
    assert list(res.state.losses) == ["response"]
    assert set(res.heads) == {"response"}


def test_gradient_flow_only_reaches_seen_tokens(toy):
    enc, cfg = _encoder(toy, "transformer", 2)
    view = head_view(enc, cfg)
    heads = build_heads(cfg, enc.embed_dim)
    batches = {"neighbor": _tok(enc, toy.neighbor[:4]),
               "response": _tok(enc, toy.response[:4]),
               "nli": _tok(enc, toy.nli[:4])}
    T.zero_grad(enc.params)
    for task, batch in batches.items():
        with Tape() as tape:
            if task == "neighbor":
                loss = neighbor_ranking_loss(view, batch)
            elif task == "response":
                loss = response_ranking_loss(view, batch, heads["response"])
            else:
                loss = nli_loss(view, heads["nli"], batch)
        tape.backward(loss)
    seen = {i for batch in batches.values() for item in batch for seq in item[:2]
            for i in seq.ids}
    grad = enc.params["embed.unigram"].grad
    row_norm = np.abs(grad).sum(axis=1)
    for i in range(len(enc.vocab)):
        if i in seen:
            assert row_norm[i] > 0
        else:
            assert row_norm[i] == 0


def test_checkpoints_every_k_cycles(toy, tmp_path):
    out = tmp_path / "m.ckpt"
    train_multitask(_config(encoder="dan", cycles=6, checkpoint_every=3, out=str(out)), toy)
    assert out.exists()
    assert (tmp_path / "m.ckpt.cycle3").exists() and (tmp_path / "m.ckpt.cycle6").exists()


def test_divergence_names_task_and_cycle(toy):
    enc, cfg = _encoder(toy, "dan", 0)
    enc.params["ff0.w"].data[0, 0] = np.nan
    with pytest.raises(TrainingError, match=r"task 'neighbor' at cycle 1"):
        train_multitask(_config(encoder="dan"), toy, encoder=enc)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(tasks=())
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"no_such_key": "1"})
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"tasks": "neighbor,parsing"})
    p = tmp_path / "c.cfg"
    p.write_text("encoder = dan  # comment\ncycles = 7\nweights = nli=0.5\n")
    cfg = TrainConfig.from_file(p, {"cycles": "9"})
    assert cfg.encoder == "dan" and cfg.cycles == 9 and cfg.weights == {"nli": 0.5}
    p.write_text("just words\n")
    with pytest.raises(ConfigError, match=":1:"):
        TrainConfig.from_file(p)


def test_shipped_train_config_parses():
    cfg = TrainConfig.from_file(TOY_DIR / "train.cfg")
    data = TaskData.from_config(cfg)
    assert len(data.neighbor) > 100 and len(data.response) == 120 and len(data.nli) == 60
