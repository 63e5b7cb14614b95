"""Command line entry point: lda-fit, train, infer, eval, scm-gen, identify.

Every subcommand takes ``--config FILE`` (flat ``key = value``), any number
of ``--set key=value`` overrides and ``--out DIR``; the resolved
configuration is written to ``DIR/config.resolved``. Usage errors exit with
status 2 and runtime failures with status 1. ``CAUSAL_SEQ2SEQ_THREADS`` caps the
number of torch threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .corpus import Vocabulary, encode_document, load_corpus, load_documents, tokenize, write_jsonl
from .estimator import prepare_corpus, summarize_documents, train_from_config
from .evaluation import attention_topk, export_latents, mean_rouge, run_identifiability_experiment, strip_special
from .scm_synth import BLOCKS, check_variety, generate_scm_dataset, sample_scm
from .topics import LDATopicModel
from .training import Checkpoint

logger = logging.getLogger("causal_seq2seq")


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> dict:
    try:
        return config_mod.resolve(args.config, args.set or ())
    except config_mod.ConfigError as exc:
        raise UsageError(str(exc)) from None


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_lda_fit(args, cfg):
    out = _out_dir(args)
    vocab, pairs, lda = prepare_corpus(load_corpus(args.input), cfg)
    vocab.save(out / "vocab.txt")
    lda.save(out / "topics", vocab_hash=vocab.digest())
    top = np.argsort(-lda.topic_word_, axis=1, kind="stable")[:, :10]
    _write_json(out / "topic_words.json", {str(k): [vocab.itos[int(w)] for w in row] for k, row in enumerate(top)})
    logger.info("fitted %d topics on %d documents", lda.n_topics, len(pairs))


def cmd_train(args, cfg):
    out = _out_dir(args)
    vocab = topic_model = None
    if args.topics:
        vocab = Vocabulary.load(Path(args.topics) / "vocab.txt")
        topic_model = LDATopicModel.load(Path(args.topics) / "topics")
        if topic_model.n_topics != cfg["k_u"]:
            raise UsageError(f"topic model has {topic_model.n_topics} topics but k_u = {cfg['k_u']}")
    ckpt, log = train_from_config(load_corpus(args.input), cfg, log_path=out / "train_log.csv",
                                  checkpoint_dir=out / "checkpoint", vocab=vocab, topic_model=topic_model)
    logger.info("trained %d steps; final total loss %.4f", ckpt.step, log[-1]["total"] if log else float("nan"))


def _load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not (path / "manifest.json").exists() and (path / "final" / "manifest.json").exists():
        path = path / "final"
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint found at {path}")
    return Checkpoint.load(path)


def cmd_infer(args, cfg):
    out = _out_dir(args)
    ckpt = _load_checkpoint(args.checkpoint)
    docs = load_documents(args.input)
    cr = cfg["cr"] if args.cr is None else config_mod._cr(args.cr)
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    results = summarize_documents(ckpt, docs, cfg, cr=cr, return_latents=True)
    records = []
    for i, (text, (tokens, latents)) in enumerate(zip(docs, results)):
        trace_path = traces / f"doc_{i:05d}.csv"
        with trace_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("step", "objective"))
            w.writerows((s, repr(v)) for s, v in enumerate(latents.trace))
        records.append({"document": text, "cr": cr if isinstance(cr, str) else float(cr),
                        "summary": " ".join(ckpt.vocab.decode(strip_special(tokens))),
                        "objective_trace_file": str(trace_path.relative_to(out))})
    write_jsonl(out / "summaries.jsonl", records)


def cmd_eval(args, cfg):
    out = _out_dir(args)
    ckpt = _load_checkpoint(args.checkpoint)
    raw = load_corpus(args.input)
    docs = [d for d, _ in raw]
    preds = [strip_special(t) for t in summarize_documents(ckpt, docs, cfg)]
    cand = [ckpt.vocab.decode(t) for t in preds]
    metrics = mean_rouge(cand, [tokenize(s) for _, s in raw])
    metrics["n"] = len(raw)
    _write_json(out / "metrics.json", metrics)
    write_jsonl(out / "predictions.jsonl", [{"document": d, "reference": s, "summary": " ".join(c)}
                                            for (d, s), c in zip(raw, cand)])
    encoded = [encode_document(d, ckpt.vocab, ckpt.model_config.max_doc_len) for d in docs]
    if args.export_latents:
        export_latents(ckpt, encoded, out / "latents.csv")
    if args.attention_k:
        rows = []
        for i, (doc, toks) in enumerate(zip(encoded, preds)):
            top = attention_topk(ckpt, doc, toks, args.attention_k)
            rows.append({"doc_id": i, "tokens": ckpt.vocab.decode(toks, skip_special=False),
                         "attended": [[[w, p] for w, p in row] for row in top]})
        write_jsonl(out / "attention.jsonl", rows)


def _scm_kwargs(cfg):
    return {"dims": {b: cfg["scm_dim"] for b in BLOCKS}, "noise": cfg["scm_noise"]}


def cmd_scm_gen(args, cfg):
    out = _out_dir(args)
    seed = cfg["seed"] if args.seed is None else args.seed
    params = sample_scm(k_u=args.k_u, seed=seed, **_scm_kwargs(cfg))
    data = generate_scm_dataset(params, cfg["n_per_u"], seed)
    data.save(out)
    v = check_variety(params)
    logger.info("wrote %d samples; variety %s (rank %d of %d)", len(data), "holds" if v.passed else "fails",
                v.rank, v.n_columns)


def cmd_identify(args, cfg):
    out = _out_dir(args)
    seeds = list(range(cfg["seed"], cfg["seed"] + args.seeds))
    exp = run_identifiability_experiment(_scm_kwargs(cfg), config_mod.cvae_params(cfg), seeds, tuple(args.k_u),
                                         cfg["n_per_u"])
    _write_json(out / "identify_report.json", exp.to_dict())


COMMANDS = {
    "lda-fit": cmd_lda_fit, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
    "scm-gen": cmd_scm_gen, "identify": cmd_identify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causal-seq2seq", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lda-fit", parents=[common], help="build the vocabulary and fit the topic model")
    p.add_argument("--input", required=True, help="JSONL with document and summary keys")

    p = sub.add_parser("train", parents=[common], help="train a checkpoint")
    p.add_argument("--input", required=True, help="JSONL with document and summary keys")
    p.add_argument("--topics", help="lda-fit output directory to reuse")

    p = sub.add_parser("infer", parents=[common], help="summarize documents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="JSONL with a document key")
    p.add_argument("--cr", help="compression rate or 'auto' (overrides the config)")

    p = sub.add_parser("eval", parents=[common], help="ROUGE and interpretability dumps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="JSONL with document and summary keys")
    p.add_argument("--export-latents", action="store_true", help="write latents.csv")
    p.add_argument("--attention-k", type=int, default=0, help="write top-k cross-attention per token")

    p = sub.add_parser("scm-gen", parents=[common], help="write a synthetic SCM dataset")
    p.add_argument("--k-u", type=int, default=5)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("identify", parents=[common], help="run the identifiability experiment")
    p.add_argument("--k-u", type=int, nargs="+", default=[5, 1])
    p.add_argument("--seeds", type=int, default=5)
    return parser


def _set_threads():
    raw = os.environ.get("CAUSAL_SEQ2SEQ_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CAUSAL_SEQ2SEQ_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"CAUSAL_SEQ2SEQ_THREADS must be a positive integer, got {raw!r}")
    torch.set_num_threads(n)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads()
        cfg = _resolve(args)
        if getattr(args, "k_u", None) is not None and args.command in ("scm-gen", "identify"):
            for k in np.atleast_1d(args.k_u):
                if k < 1:
                    raise UsageError("--k-u values must be >= 1")
        if args.command == "identify" and args.seeds < 1:
            raise UsageError("--seeds must be >= 1")
        config_mod.write_snapshot(cfg, _out_dir(args))
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"causal-seq2seq: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        print(f"causal-seq2seq {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
