"""Command-line entry point: ``sentkit <subcommand> [flags]``.

Results go to stdout (or ``--out``); diagnostics go to stderr. Exit status is
0 on success, 1 on domain errors (divergence, degenerate statistics, a bad
spec inside a WEAT suite) and 2 on usage, config and input errors.
"""

import os

# Timing and reproducibility both assume a single BLAS thread.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from dataclasses import fields  # noqa: E402
from pathlib import Path  # noqa: E402

from . import CHECKPOINT_FORMAT_VERSION, __version__  # noqa: E402
from .errors import ConfigError, InputError, SentkitError  # noqa: E402

log = logging.getLogger("sentkit")

PROG = "sentkit"


def _int_list(text):
    try:
        values = [int(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _existing_file(label):
    def check(path):
        if not Path(path).is_file():
            raise ConfigError(f"{label} not found: {path}")
        return path
    return check


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc.strerror}") from None


def _write(path, text):
    fh = _open_out(path)
    try:
        fh.write(text)
    finally:
        if fh is not sys.stdout:
            fh.close()
        else:
            fh.flush()


def _load_encoder(path):
    from .checkpoint import load_checkpoint
    if not path:
        raise ConfigError("--checkpoint is required")
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------- subcommands

def cmd_train(args):
    from .multitask import TaskData, TrainConfig, train_multitask
    overrides = {}
    names = {f.name for f in fields(TrainConfig)}
    for key, value in vars(args).items():
        if key in names and value is not None:
            overrides[key] = str(value)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.config:
        cfg = TrainConfig.from_file(args.config, overrides)
    else:
        cfg = TrainConfig.from_mapping(overrides)
    if not cfg.out:
        raise ConfigError("train needs an output checkpoint path (--out or 'out' in the config)")
    for key in ("corpus", "conversations", "nli"):
        task = {"corpus": "neighbor", "conversations": "response", "nli": "nli"}[key]
        path = getattr(cfg, key)
        if task in cfg.tasks and not (path and Path(path).is_file()):
            raise ConfigError(f"task {task!r} needs an existing --{key} file, got {path!r}")
    data = TaskData.from_config(cfg)
    progress = None
    if cfg.log:
        progress = _open_out(cfg.log)
    elif args.verbose:
        progress = sys.stderr
    try:
        result = train_multitask(cfg, data, progress=progress)
    finally:
        if progress not in (None, sys.stderr, sys.stdout):
            progress.close()
    losses = result.state.losses
    lines = ["task\tfirst_loss\tlast_loss"]
    for task in cfg.tasks:
        lines.append(f"{task}\t{losses[task][0]:.6f}\t{losses[task][-1]:.6f}")
    print("\n".join(lines))
    log.info("wrote %s", cfg.out)
    return 0


def _read_lines(path):
    if path in (None, "-"):
        text = sys.stdin.read()
    else:
        if not Path(path).is_file():
            raise ConfigError(f"input file not found: {path}")
        text = Path(path).read_text(encoding="utf-8")
    return text.splitlines()


def cmd_embed(args):
    encoder = _load_encoder(args.checkpoint)
    lines = _read_lines(args.input)
    vecs = encoder.encode_texts(lines)
    rows = []
    for text, vec in zip(lines, vecs):
        rows.append(text + "\t" + "\t".join(f"{x:.9g}" for x in vec))
    _write(args.out, "".join(r + "\n" for r in rows))
    return 0


def cmd_sim(args):
    from .similarity import angular_sim
    encoder = _load_encoder(args.checkpoint)
    u, v = encoder.encode_texts([args.a, args.b])
    print(f"{angular_sim(u, v):.6f}")
    return 0


def cmd_sts_eval(args):
    from .similarity import sts_eval
    from .text import read_task_tsv
    encoder = _load_encoder(args.checkpoint)
    data = read_task_tsv(_existing_file("STS data")(args.data), "pair-score")
    result = sts_eval(data, encoder)
    out = [f"pearson\t{result.r:.6f}", f"pairs\t{result.n}"]
    if args.scores:
        _write(args.scores, "".join(f"{s:.6f}\n" for s in result.scores))
    _write(args.out, "\n".join(out) + "\n")
    return 0


def cmd_transfer_eval(args):
    from .text import load_word_vectors, read_task_tsv
    from .transfer import (HeadConfig, TransferModelSpec, TransferSources, deterministic_split,
                           format_report, run_learning_curve)
    from .encoders import params_digest
    data = read_task_tsv(_existing_file("task file")(args.task), args.schema)
    data.name = Path(args.task).stem
    specs = [TransferModelSpec.parse(s) for s in args.spec.split(",")]
    sources = TransferSources()
    for key, path in (("use_d", args.use_d), ("use_t", args.use_t)):
        if path:
            sources.encoders[key] = _load_encoder(path)
    if args.vectors:
        sources.vectors = load_word_vectors(_existing_file("vector file")(args.vectors))
    config = HeadConfig(hidden=args.hidden, lr=args.lr, max_epochs=args.max_epochs,
                        patience=args.patience, word_dim=args.word_dim)
    split = deterministic_split(len(data))
    sizes = args.sizes or [len(split.train)]
    digests = {k: params_digest(e) for k, e in sources.encoders.items()}
    reports = []
    for spec in specs:
        reports += run_learning_curve(data, spec, sizes, args.repeats, args.seed or 0, sources,
                                      config, split, threads=args.threads)
    for k, e in sources.encoders.items():
        if params_digest(e) != digests[k]:
            raise SentkitError(f"encoder {k} changed during transfer evaluation")
    _write(args.out, format_report(reports))
    if args.plot:
        from .plotting import plot_learning_curve
        plot_learning_curve(reports, args.plot)
    return 0


def cmd_weat(args):
    from .text import load_word_vectors
    from .weat import (encoder_source, format_results, load_suite, load_weat_spec,
                       run_weat_suite, table_source)
    specs, errors = [], []
    if args.suite:
        if not Path(args.suite).is_dir():
            raise ConfigError(f"suite directory not found: {args.suite}")
        specs, errors = load_suite(args.suite)
    for path in args.spec or []:
        try:
            specs.append(load_weat_spec(_existing_file("WEAT spec")(path)))
        except InputError as exc:
            errors.append((Path(path).name, str(exc)))
    if not specs and not errors:
        raise ConfigError("weat needs --suite or --spec")
    if bool(args.vectors) == bool(args.checkpoint):
        raise ConfigError("weat needs exactly one of --vectors or --checkpoint")
    if args.vectors:
        source = table_source(load_word_vectors(_existing_file("vector file")(args.vectors)))
    else:
        source = encoder_source(_load_encoder(args.checkpoint))
    results, run_errors = run_weat_suite(specs, source, args.max_exact, args.samples,
                                         args.seed or 0)
    errors += run_errors
    _write(args.out, format_results(results))
    for name, msg in errors:
        text = msg if name in msg else f"{name}: {msg}"
        print(f"{PROG}: error: {text}", file=sys.stderr)
    return 1 if errors else 0


def cmd_bench(args):
    from .bench import (default_bench_encoder, fit_all, format_bench_csv, run_sweep)
    kinds = ["transformer", "dan"] if args.encoder == "both" else [args.encoder]
    if args.checkpoint:
        if args.encoder == "both":
            raise ConfigError("--checkpoint needs --encoder transformer or dan")
        encoders = [_load_encoder(args.checkpoint)]
        if encoders[0].kind != args.encoder:
            raise ConfigError(f"checkpoint holds a {encoders[0].kind} encoder, "
                              f"not {args.encoder}")
    else:
        encoders = [default_bench_encoder(k, embed_dim=args.embed_dim,
                                          num_heads=args.num_heads, seed=args.seed or 0)
                    for k in kinds]

    def progress(rec):
        log.info("%s n=%d b=%d %.4f ms/sentence", rec.encoder, rec.n, rec.b, rec.ms_per_sentence)

    records = run_sweep(encoders, args.lengths, args.batches, args.trials, progress)
    fits = fit_all(records)
    _write(args.out, format_bench_csv(records, fits))
    if args.plot:
        from .plotting import plot_bench
        plot_bench(records, args.plot, fits)
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    def common_flags(suppress):
        def default(value):
            return argparse.SUPPRESS if suppress else value
        flags = argparse.ArgumentParser(add_help=False)
        flags.add_argument("--seed", type=int, default=default(None),
                           help="random seed (default 0)")
        flags.add_argument("--threads", type=int, default=default(1),
                           help="worker threads for independent runs (default 1)")
        flags.add_argument("--config", default=default(None),
                           help="flat 'key = value' file; command-line flags win")
        flags.add_argument("-v", "--verbose", action="store_true", default=default(False),
                           help="progress on stderr")
        return flags

    common = common_flags(suppress=True)
    parser = argparse.ArgumentParser(prog=PROG, description="Sentence embedding toolkit.",
                                     parents=[common_flags(suppress=False)])
    parser.add_argument("--version", action="version",
                        version=f"{PROG} {__version__} (checkpoint format {CHECKPOINT_FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("train", parents=[common], help="multitask encoder training")
    p.add_argument("--encoder", choices=["transformer", "dan"])
    p.add_argument("--corpus", help="documents, one sentence per line, blank line between docs")
    p.add_argument("--conversations", help="TSV of prompt<TAB>response")
    p.add_argument("--nli", help="TSV of premise<TAB>hypothesis<TAB>label")
    p.add_argument("--tasks", help="comma list of neighbor,response,nli")
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--num-layers", dest="num_layers", type=int)
    p.add_argument("--num-heads", dest="num_heads", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--cycles", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--log", help="write per-step 'cycle task loss' lines here")
    p.add_argument("--out", help="output checkpoint path")
    p.set_defaults(func=cmd_train, config_style="train")

    p = sub.add_parser("embed", parents=[common], help="encode sentences, one per line")
    p.add_argument("--checkpoint")
    p.add_argument("--input", default="-", help="input lines (default stdin)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("sim", parents=[common], help="angular similarity of two sentences")
    p.add_argument("--checkpoint")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("sts-eval", parents=[common], help="Pearson r on a scored pair file")
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True, help="TSV of sentence1<TAB>sentence2<TAB>score")
    p.add_argument("--scores", help="also write per-pair similarities here")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sts_eval)

    p = sub.add_parser("transfer-eval", parents=[common], help="classifiers on frozen features")
    p.add_argument("--task", required=True)
    p.add_argument("--schema", default="single", choices=["single"])
    p.add_argument("--spec", required=True, help="comma list, e.g. use_t,use_t+cnn:w2v,dnn:lrn")
    p.add_argument("--sizes", type=_int_list, help="training sizes (default: full split)")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--use-d", dest="use_d", help="DAN checkpoint for use_d")
    p.add_argument("--use-t", dest="use_t", help="transformer checkpoint for use_t")
    p.add_argument("--vectors", help="word vectors for w2v")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=60)
    p.add_argument("--patience", type=int, default=8)
    p.add_argument("--word-dim", dest="word_dim", type=int, default=50)
    p.add_argument("--out", default="-")
    p.add_argument("--plot", help="learning-curve figure (png/pdf/svg)")
    p.set_defaults(func=cmd_transfer_eval)

    p = sub.add_parser("weat", parents=[common], help="word embedding association tests")
    p.add_argument("--suite", help="directory of .weat files")
    p.add_argument("--spec", action="append", help="single .weat file (repeatable)")
    p.add_argument("--vectors", help="word vectors in word2vec text format")
    p.add_argument("--checkpoint", help="encode each word as a one-token sentence")
    p.add_argument("--max-exact", dest="max_exact", type=int, default=100_000)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_weat)

    p = sub.add_parser("bench", parents=[common], help="time and memory scaling sweep")
    p.add_argument("--encoder", choices=["transformer", "dan", "both"], default="both")
    p.add_argument("--checkpoint")
    p.add_argument("--lengths", type=_int_list, default=[16, 32, 64, 128, 256, 512])
    p.add_argument("--batches", type=_int_list, default=[1, 8, 32])
    p.add_argument("--trials", type=int, default=9)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=32,
                   help="width of the default model when no checkpoint is given")
    p.add_argument("--num-heads", dest="num_heads", type=int, default=8)
    p.add_argument("--out", default="-")
    p.add_argument("--plot", help="figure path (png/pdf/svg)")
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_config(parser, argv):
    """Re-parse with values from --config used as defaults, so explicit flags win."""
    args = parser.parse_args(argv)
    if not args.config or getattr(args, "config_style", None) == "train" or not args.command:
        return args
    from .multitask import read_flat_config
    values = read_flat_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise ConfigError(f"{args.config}: unknown key {key!r} for {args.command}")
        action = known[dest]
        if action.type is not None:
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"{args.config}: bad value for {key}: {exc}") from None
        elif isinstance(action, argparse._StoreTrueAction):
            value = value.lower() in ("1", "true", "yes", "on")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if not args.command:
            parser.print_usage(sys.stderr)
            print(f"{PROG}: error: a subcommand is required", file=sys.stderr)
            return 2
        return args.func(args)
    except SentkitError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
