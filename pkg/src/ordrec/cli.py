"""``ordrec`` command line: one subcommand per pipeline stage, file handoffs
between them.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
divergence. Errors go to stderr prefixed with ``code=N``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from ordrec import __version__
from ordrec import artifact as store
from ordrec import corpus, embedding, evaluator, lstm, predictor, synthgen, trainer
from ordrec.errors import DataError, DivergenceError, OrdrecError

log = logging.getLogger("ordrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().strip()}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="YAML/JSON mapping of flag defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ordrec", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"ordrec {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic catalog and histories")
    p.add_argument("--teams", type=int, default=20)
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--items-per-cell", type=int, default=10)
    p.add_argument("--users", type=int, default=5000)
    p.add_argument("--min-orders", type=int, default=2)
    p.add_argument("--max-orders", type=int, default=20)
    p.add_argument("--p-adv", type=float, default=0.3)
    p.add_argument("--p-switch", type=float, default=0.05)
    p.add_argument("--views-per-order", type=int, default=3)
    p.add_argument("--out", metavar="DIR")

    p = sub.add_parser("prepare", parents=[common], help="order histories -> vocab and training windows")
    p.add_argument("--orders", metavar="PATH")
    p.add_argument("--views", metavar="PATH")
    p.add_argument("--seq-len", type=int, default=12)
    p.add_argument("--tie-seed", type=int)
    p.add_argument("--cutoff", type=int, metavar="MS")
    p.add_argument("--out", metavar="DIR")

    p = sub.add_parser("train-embeddings", parents=[common], help="skip-gram embeddings from view sequences")
    p.add_argument("--views", metavar="PATH", help="raw view events or a prepared view_sequences file")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--tie-seed", type=int, default=0)
    p.add_argument("--out", metavar="FILE")

    p = sub.add_parser("train", parents=[common], help="train the sequence model")
    p.add_argument("--windows", metavar="DIR")
    p.add_argument("--embeddings", metavar="FILE")
    p.add_argument("--hidden1", type=int, default=600)
    p.add_argument("--hidden2", type=int, default=600)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--report", metavar="FILE", help="default: OUT.report.tsv")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", metavar="FILE")

    p = sub.add_parser("evaluate", parents=[common], help="offline rank evaluation")
    p.add_argument("--model", metavar="FILE")
    p.add_argument("--windows", metavar="DIR")
    p.add_argument("--k", type=_int_list, default=[1, 10, 100])
    p.add_argument("--exact-wilcoxon-max-n", type=int, default=evaluator.EXACT_MAX_N)
    p.add_argument("--split", choices=["validation", "all"], default="validation",
                   help="validation: users held out by the model's training split")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", metavar="FILE")

    p = sub.add_parser("predict", parents=[common], help="recommend the next order")
    p.add_argument("--model", metavar="FILE")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--seed-item", type=int)
    group.add_argument("--history", type=_int_list)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--horizon", type=int, default=1, help="orders ahead (rollout)")

    p = sub.add_parser("score-batch", parents=[common], help="score a request file with worker processes")
    p.add_argument("--model", metavar="FILE")
    p.add_argument("--requests", metavar="PATH")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("inspect-model", parents=[common], help="print manifest and tensor norms")
    p.add_argument("--model", metavar="FILE")
    return parser


REQUIRED = {
    "gen-data": ["out"],
    "prepare": ["orders", "out"],
    "train-embeddings": ["views", "out"],
    "train": ["windows", "embeddings", "out"],
    "evaluate": ["model", "windows", "out"],
    "predict": ["model"],
    "score-batch": ["model", "requests", "out"],
    "inspect-model": ["model"],
}


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config(sub: argparse.ArgumentParser, path: str) -> None:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a mapping of flag names to values")
    dests = {a.dest for a in sub._actions if a.dest not in ("help", "config")}
    values = {}
    for key, value in raw.items():
        dest = str(key).lstrip("-").replace("-", "_")
        if dest not in dests:
            raise UsageError(f"unknown config key {key!r} for this command")
        if dest in ("k", "history") and isinstance(value, str):
            value = _int_list(value)
        values[dest] = value
    sub.set_defaults(**values)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip() + "\nno command given; see ordrec --help")
    if args.config:
        sub = _subparser(parser, args.command)
        _apply_config(sub, args.config)
        args = parser.parse_args(argv)
    missing = [f"--{d.replace('_', '-')}" for d in REQUIRED[args.command] if getattr(args, d, None) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s) {', '.join(missing)}")
    return args


# --- commands --------------------------------------------------------------

def cmd_gen_data(args) -> None:
    cat = synthgen.gen_catalog(args.teams, args.stages, args.items_per_cell, args.seed)
    params = synthgen.GenParams(args.users, args.min_orders, args.max_orders, args.p_adv, args.p_switch,
                                args.views_per_order, args.seed)
    orders, views = synthgen.gen_histories(cat, params)
    paths = synthgen.write_dataset(args.out, cat, orders, views)
    print(f"wrote {len(orders)} orders, {len(views)} views, {cat.n_items} items to {Path(args.out)}")
    log.info("files: %s", {k: str(v) for k, v in paths.items()})


def cmd_prepare(args) -> None:
    tie_seed = args.seed if args.tie_seed is None else args.tie_seed
    cfg = corpus.CorpusConfig(args.seq_len, args.cutoff, tie_seed)
    events = corpus.parse_orders(args.orders, args.cutoff)
    if not events:
        raise DataError(f"{args.orders}: no order events")
    grouped = corpus.group_ordered(events, cfg)
    seqs = corpus.filter_min_length(grouped)
    vocab = corpus.build_vocab(seqs)
    windows, dropped = corpus.windowize_all(seqs, cfg, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store.write_vocab(out / "vocab", vocab)
    store.write_windows(out / "windows", windows, cfg.seq_len)
    stats = corpus.length_stats(seqs)
    print(f"events={len(events)} users={len(grouped)} kept_users={len(seqs)} items={vocab.n_items} "
          f"outputs={vocab.n_outputs} windows={len(windows)} dropped={dropped} "
          f"mean_len={stats['mean']:.2f} median_len={stats['median']:.1f}")
    if args.views:
        vseqs = corpus.filter_min_length(corpus.group_ordered(corpus.parse_orders(args.views, args.cutoff), cfg))
        store.write_sequences(out / "view_sequences", vseqs)
        print(f"view_sequences={len(vseqs)}")


def cmd_train_embeddings(args) -> None:
    if store.is_sequences_file(args.views):
        vseqs = store.read_sequences(args.views)
    else:
        events = corpus.parse_orders(args.views)
        if not events:
            raise DataError(f"{args.views}: no view events")
        vseqs = corpus.filter_min_length(corpus.group_ordered(events, corpus.CorpusConfig(tie_break_seed=args.tie_seed)))
    cfg = embedding.Word2VecConfig(window=args.window, dim=args.dim, negatives=args.negatives, epochs=args.epochs,
                                   initial_lr=args.lr, min_count=args.min_count, seed=args.seed)
    model = embedding.train_word2vec(vseqs, cfg)
    checksum = store.save_word2vec(model, args.out)
    print(f"embedded {len(model)} items (dim {cfg.dim}) from {len(vseqs)} sequences; sha256={checksum}")


def _load_windows(dir_path):
    d = Path(dir_path)
    if not (d / "windows").exists() or not (d / "vocab").exists():
        raise DataError(f"{d}: expected 'windows' and 'vocab' files (run prepare)")
    windows, seq_len = store.read_windows(d / "windows")
    return windows, seq_len, store.read_vocab(d / "vocab")


def cmd_train(args) -> None:
    windows, seq_len, vocab = _load_windows(args.windows)
    w2v = store.load_word2vec(args.embeddings)
    model_cfg = lstm.ModelConfig(seq_len - 1, embedding.feature_dim(w2v.dim), args.hidden1, args.hidden2,
                                 vocab.n_outputs, args.seed)
    train_cfg = trainer.TrainConfig(batch_size=args.batch, epochs=args.epochs, shuffle_seed=args.seed,
                                    validation_fraction=args.val_frac, checkpoint_every=args.checkpoint_every,
                                    lr=args.lr)
    art, report = trainer.train(windows, vocab, w2v, model_cfg, train_cfg, checkpoint_path=args.out)
    checksum = store.save(art, args.out)
    print("epoch\ttrain_loss\tval_loss\tseconds")
    for e, tl, vl, s in report.rows():
        print(f"{e}\t{tl:.6f}\t{vl:.6f}\t{s:.3f}")
    report_path = Path(args.report or f"{args.out}.report.tsv")
    report_path.write_text(report.to_tsv(), encoding="utf-8")
    if not args.no_figures and report.train_loss:
        from ordrec.plotting import save_training_curves
        save_training_curves(report, report_path.with_suffix(".png"))
    log.info("model sha256=%s", checksum)


def cmd_evaluate(args) -> None:
    art = store.load(args.model)
    windows, _, _ = _load_windows(args.windows)
    if args.split == "validation":
        tc = art.metadata.get("train_config", {})
        frac = tc.get("validation_fraction", 0.0)
        if not frac:
            raise DataError("model was trained without a validation split; use --split all")
        _, windows = trainer.split(windows, frac, tc["shuffle_seed"])
    kept = [w for w in windows if art.vocab.is_output(w.label) and all(i == 0 or i in art.vocab for i in w.inputs)]
    if len(kept) < len(windows):
        log.warning("skipped %d windows with items unknown to the model", len(windows) - len(kept))
    report = evaluator.evaluate(art, kept, args.k, seed=args.seed, exact_max_n=args.exact_wilcoxon_max_n)
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for key, value in report.to_dict().items():
        print(f"{key}\t{value}")
    if not args.no_figures:
        from ordrec.plotting import save_rank_figure
        save_rank_figure(report.ranks, report.n_outputs, out.with_suffix(".png"))


def cmd_predict(args) -> None:
    art = store.load(args.model)
    if args.seed_item is None and not args.history:
        raise UsageError("predict: give --seed-item N or --history a,b,c")
    history = [args.seed_item] if args.seed_item is not None else args.history
    if args.seed_item is not None and args.seed_item == 0:
        raise DataError("seed item 0 is the reserved padding id")
    steps = predictor.rollout(art, history, args.horizon, args.k)
    print("step\trank\titem_id\tprobability")
    for s, res in enumerate(steps, start=1):
        for r, (item, p) in enumerate(res.top_k, start=1):
            print(f"{s}\t{r}\t{item}\t{p:.6f}")


def cmd_score_batch(args) -> None:
    requests = predictor.parse_requests(args.requests)
    results, stats = predictor.score_batch_with_stats(args.model, requests, args.workers, args.k)
    text = "".join(predictor.format_result(r) + "\n" for r in results)
    Path(args.out).write_text(text, encoding="utf-8")
    print(f"scored {len(results)} requests with {len(stats.loads_per_worker)} workers; "
          f"model loads per worker {stats.loads_per_worker}")


def cmd_inspect_model(args) -> None:
    manifest, _ = store.read_manifest(args.model)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    print("tensor\tl2_norm")
    for name, norm in store.tensor_norms(args.model).items():
        print(f"{name}\t{norm:.6g}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "prepare": cmd_prepare,
    "train-embeddings": cmd_train_embeddings,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "score-batch": cmd_score_batch,
    "inspect-model": cmd_inspect_model,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"code={EXIT_USAGE} usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    effective = {k: v for k, v in sorted(vars(args).items())}
    print(f"ordrec {args.command} config: {json.dumps(effective, sort_keys=True, default=str)}", file=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"code={EXIT_USAGE} usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"code={EXIT_DIVERGED} diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OrdrecError, OSError) as exc:
        print(f"code={EXIT_DATA} data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
