"""Command-line surface: preprocess, train, translate, evaluate, sweep, stats.

Configuration precedence is flag > config file > built-in default. The
config file is JSON keyed by flag names; --config selects it, falling back
to the GLOSS2TEXT_CONFIG environment variable. All paths are resolved
relative to --workdir. Built-in defaults follow the PHOENIX gloss-to-text
recipe (2 layers, d_model 512, 8 heads, ffn 2048, dropout 0.1, label
smoothing 0.1, lr 0.5, warmup 3000, beam 4, patience 5).

Exit codes: 0 success, 1 usage/configuration, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import corpus as cp
from . import decoding, metrics, training
from .checkpoint import load_checkpoint
from .errors import ConfigError, ContractError, DataError, Gloss2TextError, NumericError, ShapeError
from .model import ModelConfig, TransformerModel

CONFIG_ENV_VAR = "GLOSS2TEXT_CONFIG"

DEFAULTS = {
    # model
    "layers": 2,
    "d_model": 512,
    "heads": 8,
    "ffn_dim": 2048,
    "dropout": 0.1,
    "tie_embeddings": False,
    "max_positions": 512,
    # optimization
    "lr": 0.5,
    "warmup": 3000,
    "batch_tokens": 2048,
    "batch_sentences": None,
    "label_smoothing": 0.1,
    "beta1": 0.9,
    "beta2": 0.998,
    "adam_eps": 1e-8,
    "patience": 5,
    "max_epochs": 100,
    "seeds": "1",
    # decoding
    "beam": 4,
    "alpha": 1.0,
    "max_length": None,
    "replace_unk": True,
    # preprocessing
    "min_freq": 1,
    "min_freq_side": "source",
    "strip_prefixes": "",
}

_CONFIG_KEYS = set(DEFAULTS)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _opt(parser, *names, key=None, **kwargs):
    """Add an option whose default comes from the config file / DEFAULTS."""
    key = key or names[-1].lstrip("-").replace("-", "_")
    help_text = kwargs.pop("help", "")
    default = DEFAULTS.get(key)
    kwargs.setdefault("dest", key)
    parser.add_argument(*names, default=None, help=f"{help_text} (default: {default})", **kwargs)


def build_parser() -> _Parser:
    parser = _Parser(prog="gloss2text",
                     description="Gloss-to-text translation toolkit")
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    parser.add_argument("--config", default=None,
                        help=f"JSON config file (env {CONFIG_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="strip prefixes, apply frequency threshold, "
                                          "write vocabularies and corpus statistics")
    p.add_argument("--data", required=True, help="directory with {split}.gloss/{split}.txt")
    p.add_argument("--out", required=True, help="output directory")
    _opt(p, "--strip-prefixes", help="comma-separated gloss prefixes to strip; empty disables")
    _opt(p, "--min-freq", type=int, help="replace tokens under this train frequency with unk")
    _opt(p, "--min-freq-side", choices=["source", "target", "both"],
         help="side the frequency threshold applies to")
    p.add_argument("--asl-mode", action="store_true",
                   help="shortcut for --strip-prefixes X-,DESC- --min-freq 5 "
                        "--min-freq-side source")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stats", help="print corpus statistics in the standard table layout")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train models, one run directory per seed")
    p.add_argument("--data", required=True, help="preprocessed corpus directory")
    p.add_argument("--out", required=True, help="run output directory")
    _opt(p, "--layers", type=int, help="encoder/decoder layers")
    _opt(p, "--d-model", type=int, help="model width")
    _opt(p, "--heads", type=int, help="attention heads")
    _opt(p, "--ffn-dim", type=int, help="feed-forward hidden units")
    _opt(p, "--dropout", type=float, help="dropout rate")
    _opt(p, "--tie-embeddings", action=argparse.BooleanOptionalAction,
         help="share decoder input embedding and output projection")
    _opt(p, "--max-positions", type=int, help="maximum sequence length")
    _opt(p, "--lr", type=float, help="initial learning rate")
    _opt(p, "--warmup", type=int, help="warmup steps of the Noam schedule")
    _opt(p, "--batch-tokens", type=int, help="padded target tokens per batch")
    _opt(p, "--batch-sentences", type=int, help="batch by sentence count instead of tokens")
    _opt(p, "--label-smoothing", type=float, help="label smoothing epsilon")
    _opt(p, "--beta1", type=float, help="Adam beta1")
    _opt(p, "--beta2", type=float, help="Adam beta2")
    _opt(p, "--adam-eps", type=float, help="Adam epsilon")
    _opt(p, "--patience", type=int, help="early-stopping patience in dev evaluations")
    _opt(p, "--max-epochs", type=int, help="epoch cap")
    _opt(p, "--seeds", help="comma-separated seed list")
    p.add_argument("--pretrained-vectors", default=None,
                   help="word2vec text file loaded into the decoder embedding")
    p.add_argument("--pretrained-side", default="decoder", choices=["encoder", "decoder"])
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode a gloss file with one checkpoint "
                                         "(beam) or several (ensemble)")
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--source", required=True, help="gloss file, one sentence per line")
    p.add_argument("--out", required=True, help="hypothesis file to write")
    _opt(p, "--beam", type=int, help="beam width")
    _opt(p, "--alpha", type=float, help="length normalization exponent")
    _opt(p, "--max-length", type=int, help="decoding length cap")
    _opt(p, "--replace-unk", action=argparse.BooleanOptionalAction,
         help="replace generated unk by the highest-attention source token")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="score a hypothesis file against a reference file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--json-out", default=None, help="also write the report as JSON")
    p.add_argument("--lowercase", action="store_true", help="lowercase both sides before scoring")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid over beam width, warmup steps, or learning rate")
    p.add_argument("--axis", required=True, choices=["beam", "warmup", "lr"])
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--data", required=True, help="preprocessed corpus directory")
    p.add_argument("--checkpoint", default=None, help="checkpoint (beam axis)")
    p.add_argument("--out", default=None, help="directory for the sweep table")
    _opt(p, "--beam", type=int, help="beam width for decoding in training sweeps")
    _opt(p, "--alpha", type=float, help="length normalization exponent")
    _opt(p, "--layers", type=int, help="encoder/decoder layers")
    _opt(p, "--d-model", type=int, help="model width")
    _opt(p, "--heads", type=int, help="attention heads")
    _opt(p, "--ffn-dim", type=int, help="feed-forward hidden units")
    _opt(p, "--dropout", type=float, help="dropout rate")
    _opt(p, "--lr", type=float, help="initial learning rate")
    _opt(p, "--warmup", type=int, help="warmup steps")
    _opt(p, "--batch-tokens", type=int, help="padded target tokens per batch")
    _opt(p, "--label-smoothing", type=float, help="label smoothing epsilon")
    _opt(p, "--patience", type=int, help="early-stopping patience")
    _opt(p, "--max-epochs", type=int, help="epoch cap")
    _opt(p, "--seeds", help="seed for sweep training runs")
    p.set_defaults(func=cmd_sweep)
    return parser


def _apply_config(args) -> None:
    """Fill unset options from the config file, then from DEFAULTS."""
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    file_values = {}
    if path:
        path = Path(args.workdir) / path
        try:
            file_values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {path} is not valid JSON: {exc}")
        unknown = set(file_values) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in _CONFIG_KEYS:
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, DEFAULTS[key]))


def _resolve(args, *names):
    base = Path(args.workdir)
    for name in names:
        value = getattr(args, name, None)
        if value is None:
            continue
        if isinstance(value, list):
            setattr(args, name, [base / v for v in value])
        else:
            setattr(args, name, base / value)


def _parse_seeds(raw) -> list[int]:
    if isinstance(raw, int):
        return [raw]
    try:
        return [int(v) for v in str(raw).split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"bad seed list: {raw!r}")


def _model_config(args, src_vocab, tgt_vocab) -> ModelConfig:
    return ModelConfig(
        src_vocab_size=len(src_vocab),
        tgt_vocab_size=len(tgt_vocab),
        num_layers=args.layers,
        d_model=args.d_model,
        num_heads=args.heads,
        ffn_dim=args.ffn_dim,
        dropout=args.dropout,
        tie_decoder_embeddings=bool(args.tie_embeddings),
        max_positions=args.max_positions,
    )


def _train_config(args, seed: int) -> training.TrainConfig:
    return training.TrainConfig(
        initial_lr=args.lr,
        warmup_steps=args.warmup,
        batch_tokens=args.batch_tokens,
        batch_sentences=args.batch_sentences,
        label_smoothing=args.label_smoothing,
        adam_beta1=args.beta1,
        adam_beta2=args.beta2,
        adam_eps=args.adam_eps,
        patience=args.patience,
        max_epochs=args.max_epochs,
        seed=seed,
    )


def _decode_config(args) -> decoding.DecodeConfig:
    return decoding.DecodeConfig(
        beam_width=args.beam,
        max_length=args.max_length,
        length_norm_alpha=args.alpha,
        replace_unk=bool(args.replace_unk),
    )


def _load_vocabs(data_dir: Path, corpus):
    """Vocabulary files when present, else deterministic rebuild from train."""
    src_path = data_dir / "vocab.src.tsv"
    tgt_path = data_dir / "vocab.tgt.tsv"
    if src_path.exists() and tgt_path.exists():
        return cp.Vocabulary.load(src_path), cp.Vocabulary.load(tgt_path)
    return cp.build_vocab(corpus, "source"), cp.build_vocab(corpus, "target")


# -- commands ----------------------------------------------------------------


def cmd_preprocess(args) -> int:
    if args.asl_mode:
        args.strip_prefixes = args.strip_prefixes or "X-,DESC-"
        args.min_freq = 5 if args.min_freq in (None, 1) else args.min_freq
        args.min_freq_side = "source"
    corpus = cp.load_corpus_dir(args.data)
    if args.strip_prefixes:
        prefixes = tuple(p for p in args.strip_prefixes.split(",") if p)
        corpus = cp.strip_corpus_prefixes(corpus, prefixes)
    if args.min_freq > 1:
        sides = ["source", "target"] if args.min_freq_side == "both" else [args.min_freq_side]
        for side in sides:
            corpus = cp.apply_min_freq_threshold(corpus, side, args.min_freq)
    out = Path(args.out)
    cp.write_corpus_dir(corpus, out)
    src_vocab = cp.build_vocab(corpus, "source")
    tgt_vocab = cp.build_vocab(corpus, "target")
    src_vocab.save(out / "vocab.src.tsv")
    tgt_vocab.save(out / "vocab.tgt.tsv")
    table = cp.render_stats_table(
        cp.corpus_statistics(corpus, "source"), cp.corpus_statistics(corpus, "target")
    )
    (out / "stats.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"source vocab {len(src_vocab) - 4} entries + specials, "
          f"target vocab {len(tgt_vocab) - 4} entries + specials")
    return 0


def cmd_stats(args) -> int:
    corpus = cp.load_corpus_dir(args.data)
    print(cp.render_stats_table(
        cp.corpus_statistics(corpus, "source"), cp.corpus_statistics(corpus, "target")
    ), end="")
    return 0


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    corpus = cp.load_corpus_dir(data_dir, required=("train", "dev"))
    src_vocab, tgt_vocab = _load_vocabs(data_dir, corpus)
    train_ex = training.encode_examples(corpus.splits["train"], src_vocab, tgt_vocab)
    dev_ex = training.encode_examples(corpus.splits["dev"], src_vocab, tgt_vocab)
    seeds = _parse_seeds(args.seeds)
    out_root = Path(args.out)

    def run_one(seed: int) -> dict[str, float]:
        run_dir = out_root / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(
            json.dumps({k: _jsonable(getattr(args, k)) for k in sorted(_CONFIG_KEYS)},
                       sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        model = TransformerModel(_model_config(args, src_vocab, tgt_vocab), seed=seed)
        if args.pretrained_vectors:
            from .model import load_pretrained_embeddings

            vocab = src_vocab if args.pretrained_side == "encoder" else tgt_vocab
            report = load_pretrained_embeddings(
                model, Path(args.workdir) / args.pretrained_vectors, args.pretrained_side, vocab
            )
            print(f"seed {seed}: pretrained match {report.percent:.2f}% "
                  f"({report.matched}/{report.total})")
        result = training.train(
            model, train_ex, dev_ex, src_vocab, tgt_vocab, _train_config(args, seed),
            out_dir=run_dir, quiet=args.quiet,
        )
        result.log.write(run_dir / "log.jsonl")
        final = result.log.records[result.log.best_index] if result.log.records else None
        print(f"seed {seed}: best dev BLEU-4 {result.best_dev_bleu4:.2f} "
              f"({result.log.stop_reason})")
        return {
            "dev_bleu4": result.best_dev_bleu4,
            "dev_loss": final.dev_loss if final else float("nan"),
        }

    report = training.multi_seed_run(seeds, run_one)
    (out_root / "summary.json").write_text(report.to_json(), encoding="utf-8")
    if len(seeds) > 1:
        print(f"mean dev BLEU-4 over {len(seeds)} seeds: "
              f"{report.mean['dev_bleu4']:.2f} ± {report.std['dev_bleu4']:.2f}")
    return 0


def _jsonable(v):
    return str(v) if isinstance(v, Path) else v


def _load_members(paths):
    members = []
    vocabs = None
    for path in paths:
        model, src_vocab, tgt_vocab, _ = load_checkpoint(path)
        if vocabs is not None:
            if tgt_vocab != vocabs[1] or src_vocab != vocabs[0]:
                raise ConfigError(f"checkpoint {path} uses a different vocabulary")
        else:
            vocabs = (src_vocab, tgt_vocab)
        members.append(model)
    return members, vocabs[0], vocabs[1]


def cmd_translate(args) -> int:
    members, src_vocab, tgt_vocab = _load_members(args.checkpoint)
    model = members[0] if len(members) == 1 else decoding.Ensemble(members)
    lines = Path(args.source).read_text(encoding="utf-8").splitlines()
    pairs = [
        cp.SentencePair(tuple(line.split()) or ("",), ("",), i)
        for i, line in enumerate(lines)
    ]
    hyps = decoding.translate_corpus(model, pairs, src_vocab, tgt_vocab, _decode_config(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(hyps) + ("\n" if hyps else ""), encoding="utf-8")
    print(f"wrote {len(hyps)} hypotheses to {out}")
    return 0


def cmd_evaluate(args) -> int:
    report = metrics.evaluate_files(args.hyp, args.ref, lowercase=args.lowercase)
    print(report.render(), end="")
    if args.json_out:
        Path(args.json_out).write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    values = [v for v in str(args.values).split(",") if v]
    if not values:
        raise ConfigError("sweep needs a non-empty value list")
    data_dir = Path(args.data)
    corpus = cp.load_corpus_dir(data_dir, required=("train", "dev") if args.axis != "beam"
                                else ("dev",))
    rows = []
    if args.axis == "beam":
        if not args.checkpoint:
            raise ConfigError("beam sweep needs --checkpoint")
        model, src_vocab, tgt_vocab, _ = load_checkpoint(args.checkpoint)
        widths = [int(v) for v in values]
        for width in widths:
            row = {"value": width}
            for split in ("dev", "test"):
                if split not in corpus.splits:
                    continue
                config = decoding.DecodeConfig(beam_width=width,
                                               length_norm_alpha=args.alpha)
                hyps = decoding.translate_corpus(model, corpus.splits[split],
                                                 src_vocab, tgt_vocab, config)
                refs = [list(p.target) for p in corpus.splits[split]]
                score, _ = metrics.bleu([h.split() for h in hyps], refs, max_n=4)
                row[f"{split}_bleu4"] = score
            rows.append(row)
    else:
        src_vocab, tgt_vocab = _load_vocabs(data_dir, corpus)
        train_ex = training.encode_examples(corpus.splits["train"], src_vocab, tgt_vocab)
        dev_ex = training.encode_examples(corpus.splits["dev"], src_vocab, tgt_vocab)
        test_ex = (training.encode_examples(corpus.splits["test"], src_vocab, tgt_vocab)
                   if "test" in corpus.splits else None)
        seed = _parse_seeds(args.seeds)[0]
        for raw in values:
            if args.axis == "warmup":
                args.warmup = int(raw)
            else:
                args.lr = float(raw)
            model = TransformerModel(_model_config(args, src_vocab, tgt_vocab), seed=seed)
            result = training.train(model, train_ex, dev_ex, src_vocab, tgt_vocab,
                                    _train_config(args, seed))
            model.load_state_arrays(result.best_state)
            row = {"value": raw, "dev_bleu4": result.best_dev_bleu4}
            if test_ex:
                config = decoding.DecodeConfig(beam_width=args.beam,
                                               length_norm_alpha=args.alpha)
                hyps = decoding.translate_examples(model, test_ex, src_vocab, tgt_vocab, config)
                refs = [list(ex.tgt_tokens) for ex in test_ex]
                score, _ = metrics.bleu([h.split() for h in hyps], refs, max_n=4)
                row["test_bleu4"] = score
            rows.append(row)

    columns = ["value"] + [c for c in ("dev_bleu4", "test_bleu4") if c in rows[0]]
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(
            f"{row[c]:.2f}" if isinstance(row[c], float) else str(row[c]) for c in columns
        ))
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"sweep_{args.axis}.tsv").write_text(table, encoding="utf-8")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse help (0) or usage error (1)
        return int(exc.code or 0)
    try:
        _apply_config(args)
        _resolve(args, "data", "out", "source", "hyp", "ref", "json_out", "checkpoint")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ContractError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Gloss2TextError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
