"""Command-line entry point: ``protovad {synth,train,eval,score,dump-features}``.

Exit codes: 0 ok, 1 I/O or file-format failure, 2 configuration or shape
error, 3 AUC undefined, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .checkpoint import load_checkpoint
from .data import SynthConfig, generate_synthetic, load_corpus, manifest_path, read_bag, write_corpus
from .errors import ConfigError, FormatError, NonFiniteError, ShapeMismatchError, UndefinedAUCError
from .evalkit import dump_features, evaluate, score_bags, write_score_csv
from .trainer import ABLATIONS, CONFIG_NAME, TrainConfig, train

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_UNDEFINED, EXIT_NUMERIC = 0, 1, 2, 3, 4
RHO_MAX = 0.5


def _synth(args) -> int:
    cfg = cfgmod.load(SynthConfig, args.config) if args.config else SynthConfig()
    cfg = cfgmod.replace(cfg, seed=args.seed, rho=args.rho, delta=args.delta)
    cfg.validate()
    if not 0 < cfg.rho <= RHO_MAX:
        raise ConfigError(f"rho={cfg.rho} outside the sanity bound (0, {RHO_MAX}]")
    corpus = generate_synthetic(cfg)
    manifest = write_corpus(corpus, args.out)
    counts = {split: len(bags) for split, bags in corpus.items()}
    print(f"wrote {sum(counts.values())} bags ({', '.join(f'{k}={v}' for k, v in counts.items())}) "
          f"and {manifest}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    return cfg.replace(corpus_dir=args.corpus, out_dir=args.out, ablation=args.ablation,
                       seed=args.seed, epochs=args.epochs)


def _train(args) -> int:
    cfg = _train_config(args)
    if not cfg.corpus_dir:
        raise ConfigError("no corpus given (--corpus or corpus_dir in the config)")
    if not manifest_path(cfg.corpus_dir).is_file():
        raise FileNotFoundError(f"corpus manifest not found: {manifest_path(cfg.corpus_dir)}")
    result = train(cfg)
    fmt = lambda x: "n/a" if x is None else f"{x:.4f}"
    print(f"epochs={result.epoch} train_auc={fmt(result.train_auc)} test_auc={fmt(result.test_auc)}")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def _model_config(args) -> TrainConfig:
    """Config for inference: explicit --config, else the one saved beside the checkpoint."""
    path = args.config
    if path is None:
        sibling = Path(args.checkpoint).parent / CONFIG_NAME
        path = sibling if sibling.is_file() else None
    cfg = TrainConfig.from_file(path) if path else TrainConfig()
    return cfg.replace(ablation=args.ablation)


def _load_model(args):
    cfg = _model_config(args)
    ckpt = load_checkpoint(args.checkpoint, cfg.tau_p)
    p = ckpt.params
    if (cfg.d and cfg.d != p.D) or (cfg.k, cfg.h) != (p.K, p.H):
        raise ShapeMismatchError(f"checkpoint (D, K, H) = {(p.D, p.K, p.H)} does not match "
                                 f"config (d={cfg.d}, k={cfg.k}, h={cfg.h})")
    return cfg, p


def _bags(args):
    splits = load_corpus(args.corpus)
    if args.split == "all":
        return [b for bags in splits.values() for b in bags]
    if args.split not in splits:
        raise ConfigError(f"corpus has no split {args.split!r} (found {sorted(splits)})")
    return splits[args.split]


def _eval(args) -> int:
    cfg, params = _load_model(args)
    bags = _bags(args)
    report = evaluate(params, bags, cfg.use_pil, out_dir=args.out, checkpoint=args.checkpoint,
                      corpus=str(manifest_path(args.corpus)), smooth=args.smooth)
    print(f"auc={report.auc:.6f} n_pos={report.n_pos} n_neg={report.n_neg}")
    return EXIT_OK


def _score(args) -> int:
    cfg, params = _load_model(args)
    bag = read_bag(args.bag)
    if bag.D != params.D:
        raise ShapeMismatchError(f"bag has D={bag.D}, checkpoint expects D={params.D}")
    (scores,) = score_bags(params, [bag], cfg.use_pil)
    if args.out:
        write_score_csv(args.out, scores, bag.frame_labels)
    else:
        sys.stdout.write("".join(f"{i},{float(s):.9g}\n" for i, s in enumerate(scores)))
    return EXIT_OK


def _dump(args) -> int:
    cfg, params = _load_model(args)
    n = dump_features(params, _bags(args), args.out, cfg.use_pil)
    print(f"wrote {n} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protovad", description="Prototype-based weakly supervised anomaly scoring for feature bags.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature-bag corpus")
    p.add_argument("--config", help="key = value file with SynthConfig fields")
    p.add_argument("--out", required=True, help="corpus directory to create")
    p.add_argument("--seed", type=int)
    p.add_argument("--rho", type=float, help="anomalous fraction of each abnormal bag")
    p.add_argument("--delta", type=float, help="anomaly offset magnitude")
    p.set_defaults(func=_synth)

    p = sub.add_parser("train", help="train the detection head")
    p.add_argument("--config", help="key = value training config")
    p.add_argument("--corpus", help="corpus directory or manifest (overrides corpus_dir)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_train)

    def model_args(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--config", help="training config (default: config.txt next to the checkpoint)")
        p.add_argument("--ablation", choices=ABLATIONS, help="override the config's ablation mode")

    p = sub.add_parser("eval", help="frame-level AUC report plus per-bag score CSVs")
    model_args(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", help="corpus split to evaluate, or 'all' (default: test)")
    p.add_argument("--out", required=True, help="directory for report.json and scores/")
    p.add_argument("--smooth", type=int, default=0, help="moving-average window over scores (off)")
    p.set_defaults(func=_eval)

    p = sub.add_parser("score", help="per-instance scores for one bag file")
    model_args(p)
    p.add_argument("--bag", required=True)
    p.add_argument("--out", help="CSV path (default: 'index,score' lines on stdout)")
    p.set_defaults(func=_score)

    p = sub.add_parser("dump-features", help="export PIL-enhanced features as CSV")
    model_args(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UndefinedAUCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except NonFiniteError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ShapeMismatchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
