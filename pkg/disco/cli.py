"""
cli.py
======
Command-line entry point: ``python -m disco <command> [flags]``.

Commands: gen-data, train, distill, translate, evaluate, bench, grad-check,
leak-check. Every command reads ``--config`` plus ``--set`` overrides and
writes under a run directory. Failures print one line,
``error: <kind>: <message>``, and exit with 2 (usage or config) or 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from .config import config_digest, load_config, save_config
from .data import describe_corpus, generate_corpus, load_corpus, measure_target_entropy, save_corpus
from .diagnostics import leakage_check, model_grad_check, one_shot_equivalence
from .distillation import distill_corpus, tune_length_penalty
from .errors import ConfigError, DiscoError, FormatError, UsageError
from .evaluation import evaluate, latency_benchmark
from .inference import ALGORITHMS, decode_corpus, fit_decode_config, recount_steps, write_traces
from .model import Model, ModelConfig, load_checkpoint
from .numerics import RngStream
from .trainer import train, write_manifest

logger = logging.getLogger("disco")

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
GRAD_TOLERANCE = 1e-4
LEAK_TOLERANCE = 1e-9
TINY_MODEL = dict(num_layers_enc=1, num_layers_dec=1, model_dim=4, hidden_dim=8, num_heads=1,
                  vocab_size_src=8, vocab_size_tgt=8, max_positions=6, max_length_bins=6,
                  dropout=0.0, label_smoothing=0.1)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# =============================================================================
# HELPERS
# =============================================================================

def _corpus(args, cfg):
    if args.data:
        return load_corpus(args.data, cfg.model.max_positions)
    if cfg.data.corpus_dir:
        return load_corpus(cfg.data.corpus_dir, cfg.model.max_positions)
    return generate_corpus(cfg.data.task_spec(), cfg.data.sizes(), cfg.model.max_positions)


def _out_dir(args, cfg):
    path = Path(args.out or cfg.run_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _decode_config(args, cfg, model=None):
    """Config decode section plus command-line flags. Without ``--alg`` a
    configured algorithm the model cannot run falls back to its default."""
    changes = {}
    if getattr(args, "alg", None):
        changes["algorithm"] = args.alg
    if getattr(args, "beam", None) is not None:
        changes["length_beam"] = changes["beam"] = args.beam
    if getattr(args, "max_iter", None) is not None:
        changes["max_iter"] = args.max_iter
    if getattr(args, "alpha", None) is not None:
        changes["length_penalty"] = args.alpha
    config = dataclasses.replace(cfg.decode, **changes)
    if model is not None and "algorithm" not in changes:
        config = fit_decode_config(model, config)
    return config


def _decode_manifest(out, args, cfg, config, sentences):
    write_manifest(out / "manifest.jsonl", {
        "event": "decode", "command": args.command, "checkpoint": str(args.model),
        "data": str(args.data), "split": None if getattr(args, "input", None) else args.split,
        "input": getattr(args, "input", None), "sentences": sentences, "seed": cfg.seed,
        "config_digest": config_digest(cfg), "decode_digest": config.digest(),
        "decode": dataclasses.asdict(config),
    })


def _load_model(path):
    model, _ = load_checkpoint(path)
    return model.eval()


def _print_table(frame):
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_gen_data(args, cfg):
    spec = cfg.data.task_spec()
    corpus = generate_corpus(spec, cfg.data.sizes(), cfg.model.max_positions)
    out = Path(args.out or Path(cfg.run_dir) / "data")
    save_corpus(corpus, out)
    summary = describe_corpus(corpus)
    summary["target_entropy_nats"] = measure_target_entropy(spec, seed=cfg.data.seed)
    summary.to_csv(out / "corpus_summary.csv", index=False)
    _print_table(summary)
    print(f"✓ corpus written to {out}")


def cmd_train(args, cfg):
    out = _out_dir(args, cfg)
    corpus = _corpus(args, cfg)
    model_cfg = cfg.model_for(len(corpus.src_vocab), len(corpus.tgt_vocab))
    model = Model(model_cfg, seed=cfg.seed)
    digest = config_digest(cfg)
    save_config(cfg, out / "config.yaml")
    corpus.src_vocab.save(out / "vocab.src")
    corpus.tgt_vocab.save(out / "vocab.tgt")
    logger.info("training %s model with %d parameters", model_cfg.decoder, model.num_parameters())
    result = train(model, corpus, cfg.train, out, digest=digest)
    print(f"✓ model written to {out / 'model.npz'} (dev exact match {result.final_dev_metric:.4f})")


def cmd_distill(args, cfg):
    if not args.teacher:
        raise UsageError("distill needs --teacher")
    teacher = _load_model(args.teacher)
    corpus = _corpus(args, cfg)
    out = _out_dir(args, cfg)
    beam = args.beam if args.beam is not None else cfg.decode.beam
    alpha = args.alpha
    if alpha is None:
        alpha, table = tune_length_penalty(teacher, corpus.pairs("dev"), beam=beam)
        table.to_csv(out / "length_penalty.csv", index=False)
    distilled = distill_corpus(teacher, corpus, beam, alpha)
    save_corpus(distilled, out / "data")
    (out / "distill.json").write_text(json.dumps({"beam": beam, "length_penalty": alpha}), encoding="utf-8")
    print(f"✓ distilled corpus written to {out / 'data'} (alpha={alpha:.1f})")


def cmd_translate(args, cfg):
    if not args.model or not args.data:
        raise UsageError("translate needs --model and --data (for the vocabularies)")
    model = _load_model(args.model)
    corpus = load_corpus(args.data, model.config.max_positions)
    if args.input:
        sources = []
        for lineno, line in enumerate(Path(args.input).read_text(encoding="utf-8").splitlines(), 1):
            if not line.split():
                raise FormatError("empty sentence", args.input, lineno)
            sources.append(corpus.src_vocab.encode(line.split()))
    else:
        sources = [src for src, _ in corpus.pairs(args.split)]
    config = _decode_config(args, cfg, model)
    hypotheses, traces = decode_corpus(model, sources, config, with_traces=True)
    out = _out_dir(args, cfg)
    hyp_path = out / "hypotheses.txt"
    hyp_path.write_text("".join(" ".join(corpus.tgt_vocab.decode(h.tokens)) + "\n" for h in hypotheses),
                        encoding="utf-8")
    trace_path = write_traces(traces, args.trace or out / "trace.jsonl")
    _decode_manifest(out, args, cfg, config, len(hypotheses))
    print(f"✓ {len(hypotheses)} hypotheses written to {hyp_path}; trace in {trace_path}")


def cmd_evaluate(args, cfg):
    if not args.model or not args.data:
        raise UsageError("evaluate needs --model and --data")
    model = _load_model(args.model)
    corpus = load_corpus(args.data, model.config.max_positions)
    pairs = corpus.pairs(args.split)[:args.limit] if args.limit else corpus.pairs(args.split)
    config = _decode_config(args, cfg, model)
    report, hypotheses, traces = evaluate(model, pairs, config, corpus.tgt_vocab, config_digest(cfg))
    out = _out_dir(args, cfg)
    pd.DataFrame([report.to_row()]).to_csv(out / "report.csv", index=False)
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
    write_traces(traces, out / "trace.jsonl")
    _decode_manifest(out, args, cfg, config, len(pairs))
    _print_table(pd.DataFrame([report.to_row()]))


def cmd_bench(args, cfg):
    if not args.system or not args.data:
        raise UsageError("bench needs --data and at least one --system name=checkpoint:algorithm")
    systems = {}
    for spec in args.system:
        try:
            name, rest = spec.split("=", 1)
            path, algorithm = rest.rsplit(":", 1)
        except ValueError:
            raise UsageError(f"--system '{spec}' is not of the form name=checkpoint:algorithm") from None
        if algorithm not in ALGORITHMS:
            raise UsageError(f"--system '{spec}': unknown algorithm '{algorithm}'")
        systems[name] = (_load_model(path), dataclasses.replace(_decode_config(args, cfg), algorithm=algorithm))
    first = next(iter(systems.values()))[0]
    corpus = load_corpus(args.data, first.config.max_positions)
    pairs = corpus.pairs(args.split)[:args.limit] if args.limit else corpus.pairs(args.split)
    table, traces = latency_benchmark(systems, pairs, baseline=args.baseline, digest=config_digest(cfg))
    out = _out_dir(args, cfg)
    recounts = []
    for name, system_traces in traces.items():
        recounts.append(recount_steps(write_traces(system_traces, out / f"trace_{name}.jsonl")))
    table["recounted_steps"] = recounts
    table.to_csv(out / "bench.csv", index=False)
    _print_table(table[[c for c in ("system", "algorithm", "avg_steps", "recounted_steps",
                                     "seconds_per_sentence", "speedup") if c in table.columns]])


def cmd_grad_check(args, cfg):
    if args.model:
        model = _load_model(args.model)
    else:
        model = Model(ModelConfig(**TINY_MODEL, decoder=args.decoder), seed=cfg.seed).eval()
    error = model_grad_check(model, args.coords, RngStream(args.seed))
    ok = error <= GRAD_TOLERANCE
    print(f"{'✓' if ok else '✗'} max relative error {error:.3e} over {args.coords} coordinates "
          f"({model.num_parameters()} parameters)")
    return 0 if ok else 1


def cmd_leak_check(args, cfg):
    if args.model:
        model = _load_model(args.model)
    else:
        model = Model(dataclasses.replace(cfg.model, precision=64), seed=cfg.seed).eval()
    report = leakage_check(model, args.trials, RngStream(args.seed))
    gap = one_shot_equivalence(model, max(1, args.trials // 10), RngStream(args.seed))
    ok = report.passed(LEAK_TOLERANCE) and gap <= 1e-6
    print(f"{'✓' if ok else '✗'} no-leakage: max deviation {report.max_deviation:.3e} over {report.trials} trials; "
          f"one-shot vs per-row gap {gap:.3e}")
    return 0 if ok else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "distill": cmd_distill,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "grad-check": cmd_grad_check,
    "leak-check": cmd_leak_check,
}


# =============================================================================
# PARSER
# =============================================================================

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--out", help="output directory (default: run_dir from the config)")

    decoding = _Parser(add_help=False)
    decoding.add_argument("--alg", choices=ALGORITHMS)
    decoding.add_argument("--beam", type=int, help="length beam K (non-autoregressive) or beam width b (ar-beam)")
    decoding.add_argument("--max-iter", type=int, help="maximum refinement iterations T")
    decoding.add_argument("--alpha", type=float, help="AR length penalty")

    corpus = _Parser(add_help=False)
    corpus.add_argument("--data", help="corpus directory ({split}.src/.tgt, vocab.src/.tgt)")
    corpus.add_argument("--split", default="test", choices=["train", "dev", "test"])
    corpus.add_argument("--limit", type=int, help="use only the first N sentences")

    parser = _Parser(prog="disco", description="Disentangled-context transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    sub.add_parser("train", parents=[common, corpus], help="train a model")
    p = sub.add_parser("distill", parents=[common, corpus, decoding], help="distill a corpus with an AR teacher")
    p.add_argument("--teacher", help="AR teacher checkpoint")
    p = sub.add_parser("translate", parents=[common, corpus, decoding], help="decode sources")
    p.add_argument("--model")
    p.add_argument("--input", help="source text file (default: the --split sources)")
    p.add_argument("--trace", help="trace output path")
    p = sub.add_parser("evaluate", parents=[common, corpus, decoding], help="score a model on a split")
    p.add_argument("--model")
    p = sub.add_parser("bench", parents=[common, corpus, decoding], help="single-thread latency benchmark")
    p.add_argument("--system", action="append", default=[], help="name=checkpoint:algorithm (repeatable)")
    p.add_argument("--baseline", help="system name used as speedup reference")
    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of the training loss")
    p.add_argument("--model")
    p.add_argument("--decoder", default="disco", choices=["disco", "cmlm", "ar"])
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("leak-check", parents=[common], help="randomized no-leakage trials")
    p.add_argument("--model")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level, format=LOG_FORMAT, stream=sys.stderr)
        cfg = load_config(args.config, args.set)
        status = COMMANDS[args.command](args, cfg)
        return 0 if status is None else status
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2
    except DiscoError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
