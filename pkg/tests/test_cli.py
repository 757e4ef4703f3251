import subprocess
import sys

import numpy as np
import pytest

from sentkit import __version__
from sentkit.checkpoint import load_checkpoint
from sentkit.cli import main
from sentkit.text import load_word_vectors
from sentkit.toydata import TOY_DIR


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "toy.ckpt"
    code = main(["train", "--config", str(TOY_DIR / "train.cfg"), "--cycles", "5",
                 "--embed-dim", "16", "--out", str(path)])
    assert code == 0
    return path


def test_no_subcommand_is_a_usage_error(capsys):
    code, _, err = run(capsys)
    assert code == 2 and "subcommand" in err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == f"sentkit {__version__} (checkpoint format 1)"


def test_train_flag_overrides_config(ckpt):
    enc = load_checkpoint(ckpt)
    assert enc.embed_dim == 16 and enc.kind == "transformer"


def test_sim_of_identical_sentences(capsys, ckpt):
    code, out, _ = run(capsys, "sim", "--checkpoint", ckpt, "the cat", "the cat")
    assert code == 0 and out == "1.000000\n"


def test_embed_rows_and_round_trip(capsys, ckpt, tmp_path):
    src = tmp_path / "in.txt"
    src.write_text("alpha\nbeta\ngamma\n")
    out = tmp_path / "vecs.txt"
    code, _, _ = run(capsys, "embed", "--checkpoint", ckpt, "--input", src, "--out", out)
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3 and all(len(line.split("\t")) == 17 for line in lines)
    table = load_word_vectors(out)
    enc = load_checkpoint(ckpt)
    np.testing.assert_array_equal(table.vectors, enc.encode_texts(["alpha", "beta", "gamma"]))


def test_embed_empty_input(capsys, ckpt, tmp_path):
    src = tmp_path / "empty.txt"
    src.write_text("")
    code, out, _ = run(capsys, "embed", "--checkpoint", ckpt, "--input", src)
    assert code == 0 and out == ""


def test_missing_checkpoint_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "embed", "--checkpoint", tmp_path / "nope.ckpt")
    assert code == 2 and "nope.ckpt" in err


def test_sts_eval_report(capsys, ckpt):
    code, out, _ = run(capsys, "sts-eval", "--checkpoint", ckpt, "--data", TOY_DIR / "sts.tsv")
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("pearson\t") and lines[1] == "pairs\t20"


def test_weat_malformed_spec_names_the_file(capsys, tmp_path):
    bad = tmp_path / "broken.weat"
    bad.write_text("name: broken\nX: a\n")
    vecs = tmp_path / "v.txt"
    vecs.write_text("a 1 0\nb 0 1\n")
    code, _, err = run(capsys, "weat", "--spec", bad, "--vectors", vecs)
    assert code == 1 and "broken.weat" in err


def test_weat_on_vectors(capsys, tmp_path):
    spec = tmp_path / "t.weat"
    spec.write_text("name: t\nX: x1, x2\nY: y1, y2\nA: a\nB: b\n")
    vecs = tmp_path / "v.txt"
    vecs.write_text("x1 1 0\nx2 2 0\ny1 0 1\ny2 0 3\na 1 0\nb 0 1\n")
    code, out, _ = run(capsys, "weat", "--spec", spec, "--vectors", vecs)
    assert code == 0
    assert out.splitlines()[1] == "t\t2.000000\t0.166667\ttrue\t6"


def test_transfer_eval_report(capsys, tmp_path):
    out = tmp_path / "r.tsv"
    code, _, _ = run(capsys, "transfer-eval", "--task", TOY_DIR / "topics500.tsv", "--spec",
                     "dnn:lrn", "--sizes", "20", "--repeats", "2", "--max-epochs", "5",
                     "--out", out)
    lines = out.read_text().splitlines()
    assert code == 0 and lines[0] == "task\tspec\tsize\trun\taccuracy"
    assert lines[1].startswith("topics500\tdnn:lrn\t20\t0\t")


def test_bench_small_sweep(capsys, tmp_path):
    out = tmp_path / "b.csv"
    code, _, _ = run(capsys, "bench", "--encoder", "dan", "--lengths", "16,32",
                     "--batches", "1", "--trials", "5", "--out", out)
    lines = out.read_text().splitlines()
    assert code == 0 and lines[0] == "encoder,n,b,ms_per_sentence,peak_act_floats,param_floats"
    assert len(lines) == 3


def test_config_file_supplies_defaults_and_flags_win(capsys, tmp_path, ckpt):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text(f"checkpoint = {ckpt}\n")
    code, out, _ = run(capsys, "sim", "--config", cfg, "a b", "a b")
    assert code == 0 and out == "1.000000\n"
    code, _, err = run(capsys, "sim", "--config", cfg, "--checkpoint", tmp_path / "x.ckpt",
                       "a", "b")
    assert code == 2 and "x.ckpt" in err
    cfg.write_text("nonsense_key = 1\n")
    code, _, err = run(capsys, "sim", "--config", cfg, "a", "b")
    assert code == 2 and "nonsense_key" in err


def _cli(*argv):
    return subprocess.run([sys.executable, "-m", "sentkit.cli", *map(str, argv)],
                          capture_output=True, check=True).stdout


def test_repeated_invocations_are_byte_identical(ckpt, tmp_path):
    src = tmp_path / "in.txt"
    src.write_text("one sentence here\nanother one\n")
    for argv in (("embed", "--checkpoint", ckpt, "--input", src),
                 ("sim", "--checkpoint", ckpt, "one", "two"),
                 ("sts-eval", "--checkpoint", ckpt, "--data", TOY_DIR / "sts.tsv")):
        assert _cli(*argv) == _cli(*argv)


def test_repeated_training_writes_identical_checkpoints(tmp_path):
    blobs = []
    for name in ("a.ckpt", "b.ckpt"):
        _cli("train", "--config", TOY_DIR / "train.cfg", "--cycles", "3", "--embed-dim", "16",
             "--out", tmp_path / name)
        blobs.append((tmp_path / name).read_bytes())
    assert blobs[0] == blobs[1]
