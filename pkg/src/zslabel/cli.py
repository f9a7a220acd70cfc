"""Command-line pipeline: synth, train, score, eval, heatmap, sweep.

Every command is deterministic given its config and seed. Exit codes:
0 success, 2 configuration errors, 3 data errors, 4 numeric errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import heatmap as heatmap_mod
from .config import ExperimentConfig, load_config, synth_config_from_file
from .data import (
    SynthConfig,
    build_vocab,
    dataset_stats,
    generate_synthetic,
    load_tsv,
    split_dev,
    tokenize_dataset,
    write_tsv,
)
from .errors import ConfigError, ContractError, DataError, NumericError
from .evaluate import (
    MetricsReport,
    aggregate_seeds,
    compute_report,
    paired_t_test,
    render_table,
    token_map,
)
from .lime import LimeConfig
from .model import (
    SentenceModel,
    score_random,
    score_with_gates,
    score_with_head,
    score_with_lime,
)
from .scores import read_scores, write_scores
from .train import train_model

log = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

METHODS = ("soft", "weighted-soft", "head", "lime", "random")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("ZSLABEL_OUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for key in ("seed", "beta", "gamma", "method", "epochs", "model_kind",
                "split_mode", "learning_rate"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    return load_config(args.config, overrides)


def cmd_synth(args) -> int:
    config = synth_config_from_file(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        config.seed = args.seed
        config.validate()
    synth = generate_synthetic(config)
    out = _out_dir(args)
    write_tsv(out / "train.tsv", synth.train)
    write_tsv(out / "dev.tsv", synth.dev)
    write_tsv(out / "test.tsv", synth.test)
    (out / "cue_words.txt").write_text("\n".join(synth.cue_words) + "\n", encoding="utf-8")
    stats = {
        split: dataset_stats(sentences)
        for split, sentences in (("train", synth.train), ("dev", synth.dev),
                                 ("test", synth.test))
    }
    (out / "stats.json").write_text(
        json.dumps(stats, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(synth.train)}/{len(synth.dev)}/{len(synth.test)} sentences to {out}")
    return 0


def _load_train_dev(config: ExperimentConfig, args):
    train_path = args.train or config.train_path
    if train_path is None:
        raise ConfigError("no training dataset: pass --train or set train_path")
    train_raw = load_tsv(train_path)
    dev_path = args.dev if getattr(args, "dev", None) else config.dev_path
    if dev_path:
        dev_raw = load_tsv(dev_path)
    else:
        train_raw, dev_raw = split_dev(train_raw, config.dev_fraction, config.seed)
    return train_raw, dev_raw


def _train_once(config: ExperimentConfig, train_raw, dev_raw):
    vocab = build_vocab(train_raw, config.split_mode, config.subword_piece_len)
    train = tokenize_dataset(train_raw, vocab, config.split_mode,
                             config.subword_piece_len, config.max_seq_length)
    dev = tokenize_dataset(dev_raw, vocab, config.split_mode,
                           config.subword_piece_len, config.max_seq_length)
    result = train_model(
        train, dev, config.encoder_config(len(vocab)), config.train_config(),
        kind=config.model_kind,
    )
    model = SentenceModel.from_train_result(
        result, vocab, config.split_mode, config.subword_piece_len
    )
    return model, result, dev


def cmd_train(args) -> int:
    config = _config_from_args(args)
    train_raw, dev_raw = _load_train_dev(config, args)
    model, result, _ = _train_once(config, train_raw, dev_raw)
    out = _out_dir(args)
    model.save(out / "checkpoint.npz")
    (out / "config.yaml").write_text(config.to_yaml(), encoding="utf-8")
    with open(out / "train_log.ndjson", "w", encoding="utf-8") as f:
        for entry in result.history:
            f.write(json.dumps(asdict(entry), sort_keys=True) + "\n")
    print(f"best epoch {result.best_epoch} (dev sentence F1 {result.best_dev_f1:.4f})")
    print(f"checkpoint written to {out / 'checkpoint.npz'}")
    return 0


def cmd_score(args) -> int:
    config = _config_from_args(args)
    if args.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {args.method!r}")
    dataset_raw = load_tsv(args.dataset)

    if args.method == "random":
        scored = score_random(dataset_raw, config.seed)
    else:
        if not args.checkpoint:
            raise ConfigError(f"method {args.method} needs --checkpoint")
        model = SentenceModel.load(args.checkpoint)
        dataset = model.tokenize(dataset_raw)
        if args.method in ("soft", "weighted-soft"):
            if model.kind != "softattn":
                raise ConfigError(f"{args.method} scoring needs a softattn checkpoint")
            scored = score_with_gates(
                model, dataset, method=args.method,
                beta=args.beta, aggregation=config.aggregation,
            )
        else:
            if not args.dev:
                raise ConfigError(f"method {args.method} needs --dev for tuning")
            dev = model.tokenize(load_tsv(args.dev))
            if args.method == "head":
                scored, head, tuned = score_with_head(
                    model, dataset, dev, aggregation=config.aggregation
                )
                print(f"selected head layer={head.layer} head={head.head} "
                      f"threshold={tuned.threshold:.6g} (dev F1 {tuned.best_f1:.4f})")
            else:
                lime_config = LimeConfig(
                    n_samples=config.lime_samples,
                    kernel_width=config.lime_kernel_width,
                    ridge=config.lime_ridge,
                    seed=config.seed,
                )
                scored, tuned = score_with_lime(model, dataset, dev, lime_config)
                print(f"tuned threshold {tuned.threshold:.6g} (dev F1 {tuned.best_f1:.4f})")

    if args.threshold is not None:
        scored.threshold = args.threshold
        for s in scored.sentences:
            s.threshold = args.threshold

    out_path = Path(args.out) if args.out else _out_dir(args) / f"scores_{args.method}.txt"
    write_scores(out_path, scored)
    print(f"scores written to {out_path}")
    return 0


def _report_for_file(path, gold) -> MetricsReport:
    score_file = read_scores(path)
    seed = score_file.flags.get("seed")
    return compute_report(
        score_file.sentences, gold,
        seed=int(seed) if seed is not None and seed.isdigit() else None,
    )


def cmd_eval(args) -> int:
    gold = load_tsv(args.gold)
    by_method: dict[str, list[MetricsReport]] = {}
    for path in args.scores:
        report = _report_for_file(path, gold)
        by_method.setdefault(report.method, []).append(report)
    aggregated = {m: aggregate_seeds(reports) for m, reports in by_method.items()}

    payload = {
        "per_file": {m: [json.loads(r.to_json()) for r in rs] for m, rs in by_method.items()},
        "aggregate": {m: json.loads(r.to_json()) for m, r in aggregated.items()},
    }
    if args.compare:
        first, _, second = args.compare.partition(",")
        for name in (first, second):
            if name not in by_method:
                raise ConfigError(f"--compare method {name!r} has no score files")
        pairs = {}
        for metric in ("token_f1", "token_map"):
            pick = (lambda r: r.token.f1) if metric == "token_f1" else (lambda r: r.token_map)
            res = paired_t_test(
                [pick(r) for r in by_method[first]], [pick(r) for r in by_method[second]]
            )
            pairs[metric] = {"t": res.statistic, "p": res.pvalue, "dof": res.dof}
        payload["paired_t_test"] = {"methods": [first, second], "metrics": pairs}

    text = (
        json.dumps(payload, sort_keys=True, indent=2)
        if args.format == "json"
        else render_table(list(aggregated.values()))
    )
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"report written to {args.out}")
    else:
        print(text)
    return 0


def cmd_heatmap(args) -> int:
    files = [read_scores(p) for p in args.scores]
    text = heatmap_mod.render_html(files) if args.format == "html" else heatmap_mod.render_ansi(files)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"heatmap written to {args.out}")
    else:
        print(text)
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    grid = [float(b) for b in args.beta_grid.split(",") if b]
    if not grid:
        raise ConfigError("empty beta grid")
    train_raw, dev_raw = _load_train_dev(config, args)
    rows = []
    for beta in grid:
        cfg = load_config(args.config, {"beta": beta, "seed": config.seed,
                                        "method": config.method})
        model, result, dev = _train_once(cfg, train_raw, dev_raw)
        scored = score_with_gates(model, dev, method="weighted-soft")
        dev_map = token_map(
            [s.scores for s in scored.sentences], [s.token_labels for s in dev]
        )
        rows.append({
            "beta": beta,
            "dev_token_map": dev_map,
            "dev_sentence_f1": result.best_dev_f1,
            "best_epoch": result.best_epoch,
        })
    header = f"{'beta':>6} {'dev MAP':>10} {'dev Sent F1':>12} {'best epoch':>11}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['beta']:>6.2f} {row['dev_token_map']:>10.4f} "
            f"{row['dev_sentence_f1']:>12.4f} {row['best_epoch']:>11d}"
        )
    table = "\n".join(lines)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(
            json.dumps(rows, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        (out / "sweep.txt").write_text(table + "\n", encoding="utf-8")
        print(f"sweep written to {out}")
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zslabel",
        description="Train sentence classifiers and extract zero-shot token labels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output file or directory")

    p = sub.add_parser("synth", help="generate a synthetic cue-detection corpus")
    common(p)

    p = sub.add_parser("train", help="train a sentence classifier")
    common(p)
    p.add_argument("--train", help="training TSV (overrides config train_path)")
    p.add_argument("--dev", help="development TSV; default holds out a train fraction")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--model-kind", dest="model_kind", choices=("softattn", "cls"), default=None)

    p = sub.add_parser("score", help="produce token importance scores")
    common(p)
    p.add_argument("--checkpoint", help="trained checkpoint (.npz)")
    p.add_argument("--dataset", required=True, help="TSV file to score")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--dev", help="dev TSV for head selection / threshold tuning")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)

    p = sub.add_parser("eval", help="score files against a gold dataset")
    p.add_argument("scores", nargs="+", help="score files (same method = seeds)")
    p.add_argument("--gold", required=True, help="gold TSV with token labels")
    p.add_argument("--compare", help="two methods for a paired t-test: a,b")
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.add_argument("--out", default=None)

    p = sub.add_parser("heatmap", help="render word scores as a heatmap")
    p.add_argument("scores", nargs="+", help="score files, stacked in order")
    p.add_argument("--format", choices=("ansi", "html"), default="ansi")
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="train across a beta grid, report dev metrics")
    common(p)
    p.add_argument("--train", help="training TSV")
    p.add_argument("--dev", help="development TSV")
    p.add_argument("--beta-grid", dest="beta_grid", default="1,2,3,4")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ZSLABEL_LOG", "WARNING"))
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
