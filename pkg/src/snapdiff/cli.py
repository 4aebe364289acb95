"""Command-line front end.

Every subcommand reads an optional ``--config`` run file and lets flags
override individual keys; the merged config is validated before anything
runs.  Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager

import numpy as np

from .bench import BenchConfig, run_bench, write_csv, write_svg
from .config import ConfigError, Corpus, RunConfig, build_kernel, load_corpus
from .denoiser import TabularDenoiser, load_checkpoint, save_checkpoint, train
from .embeddings import cluster_embeddings, grid_embeddings, save_embeddings
from .metrics import distinct_n, nll_bound_snapshot, unigram_entropy, EvalReport
from .oracle import oracle_check
from .samplers import DecodingGrid, ExactPosteriorModel, generate
from .uniformize import noise_batch, resolve_workers

__all__ = ["dispatch", "main", "build_parser"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _common(p, data=True):
    p.add_argument("--config", help="JSON run config; flags override its keys")
    p.add_argument("--kernel", choices=["uniform", "absorb", "sik_knn", "sik_dense"])
    p.add_argument("--m", type=int, help="kernel vocabulary size (absorbing mask is the last id)")
    p.add_argument("--metric", choices=["gauss", "cosine"])
    p.add_argument("--k", type=int, help="neighbours per token for sik_knn")
    p.add_argument("--embeddings", help="EMB1 or CSV embedding table")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    if data:
        p.add_argument("--text", help="text corpus file")
        p.add_argument("--tokens", help="TOK1 token-id corpus file")
        p.add_argument("--alphabet", help="file whose contents list the alphabet in id order")
        p.add_argument("--length", type=int, help="chunk length for corpus sequences")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="snapdiff", description="Discrete diffusion from snapshots")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("noise", help="noise a corpus to time t")
    _common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", help="JSON-lines output (default stdout)")
    p.add_argument("--paths", help="also write per-position jump logs here")

    p = sub.add_parser("train", help="train a tabular denoiser")
    _common(p)
    p.add_argument("--objective", choices=["snapshot", "campbell"])
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--checkpoint", required=True, help="TDN1 output path")
    p.add_argument("--log", help="JSON-lines training log (default stdout)")

    p = sub.add_parser("sample", help="ancestral generation")
    _common(p)
    p.add_argument("--steps", type=int, help="decoding steps K")
    p.add_argument("--len", type=int, dest="seq_len", help="tokens per sample")
    p.add_argument("--num", type=int, help="number of samples")
    p.add_argument("--checkpoint", help="TDN1 mean model; omit to use the exact posterior")
    p.add_argument("--plugin", choices=["mixture", "bridge"])
    p.add_argument("--out", help="JSON-lines output (default stdout)")

    p = sub.add_parser("eval", help="snapshot NLL bound and diversity metrics")
    _common(p)
    p.add_argument("--checkpoint", help="TDN1 mean model; omit to use the exact posterior")
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--samples", help="JSON-lines samples scored for diversity instead of the corpus")
    p.add_argument("--csv", help="append one CSV row here")

    p = sub.add_parser("bench", help="noising latency benchmark")
    p.add_argument("--config", help="JSON benchmark config")
    p.add_argument("--out", help="CSV output")
    p.add_argument("--svg", help="SVG chart output")

    p = sub.add_parser("oracle-check", help="dense invariant battery")
    _common(p, data=False)
    p.add_argument("--out", help="JSON report path (default stdout)")

    p = sub.add_parser("make-embeddings", help="synthetic embedding table")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--kind", choices=["clusters", "grid"], default="clusters")
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="EMB1 path")
    return ap


def _read_alphabet(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return text[:-1] if text.endswith("\n") else text


def _run_config(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    kern = base["kernel"]
    for key in ("m", "metric", "k", "embeddings"):
        if getattr(args, key, None) is not None:
            kern[key] = getattr(args, key)
    if getattr(args, "kernel", None):
        kern["kind"] = args.kernel
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        base["workers"] = args.workers
    text, tokens = getattr(args, "text", None), getattr(args, "tokens", None)
    if text and tokens:
        raise ConfigError("give at most one of --text and --tokens")
    if text:
        base["data"] = {"kind": "text", "path": text}
        if args.alphabet:
            base["data"]["alphabet"] = _read_alphabet(args.alphabet)
    elif tokens:
        base["data"] = {"kind": "tokens", "path": tokens}
    if getattr(args, "length", None) is not None:
        base["data"]["length"] = args.length
    for key in ("objective",):
        if getattr(args, key, None) is not None:
            base[key] = getattr(args, key)
    for key in ("steps", "lr", "bins"):
        if args.command == "train" and getattr(args, key, None) is not None:
            base["train"][key] = getattr(args, key)
    if args.command == "sample":
        for key, flag in (("steps", "steps"), ("length", "seq_len"), ("num", "num"), ("plugin", "plugin")):
            if getattr(args, flag, None) is not None:
                base["sampler"][key] = getattr(args, flag)
    return RunConfig.from_dict(base)


def _corpus(cfg: RunConfig) -> Corpus:
    """Load the data and size the kernel vocabulary to fit it."""
    absorb = cfg.kernel.kind == "absorb"
    data = dict(cfg.data)
    try:
        if data.get("kind") == "synthetic":
            corpus = load_corpus(data, None if data.get("probs") else cfg.kernel.m - absorb)
        else:
            corpus = load_corpus(data)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg.kernel.m = max(cfg.kernel.m, corpus.m + absorb)
    if absorb and cfg.kernel.mask_id is not None and cfg.kernel.mask_id < corpus.m:
        raise ConfigError("mask id collides with a data token")
    return corpus


def _qdata(corpus: Corpus, m: int) -> np.ndarray:
    probs = corpus.probs
    if probs is None:
        probs = np.bincount(corpus.sequences.reshape(-1), minlength=corpus.m) / corpus.sequences.size
    out = np.zeros(m)
    out[: len(probs)] = probs
    return out


@contextmanager
def _sink(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def _schedule(cfg):
    return cfg.build_schedule()


def _cmd_noise(args):
    if not 0.0 <= args.t <= 1.0:
        raise ConfigError("--t must lie in [0, 1]")
    cfg = _run_config(args)
    corpus = _corpus(cfg)
    kern, sched = build_kernel(cfg.kernel), _schedule(cfg)
    xt, paths = noise_batch(kern, sched, corpus.sequences, args.t, cfg.seed,
                            record=args.paths is not None, workers=cfg.workers)
    with _sink(args.out) as fh:
        for i, (a, b) in enumerate(zip(corpus.sequences, xt)):
            rec = {"seq": i, "t": args.t, "x0": a.tolist(), "xt": b.tolist()}
            if corpus.alphabet is not None:
                rec["text"] = corpus.decode(b)
            fh.write(json.dumps(rec) + "\n")
    if args.paths:
        with open(args.paths, "w") as fh:
            paths.to_jsonl(fh)
    return 0


def _cmd_train(args):
    cfg = _run_config(args)
    corpus = _corpus(cfg)
    kern, sched = build_kernel(cfg.kernel), _schedule(cfg)
    model = TabularDenoiser(kern.m, cfg.train.bins, "mean")
    with _sink(args.log) as fh:
        def log(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
        train(model, cfg.objective, kern, sched, corpus.sequences.reshape(-1), cfg.train, log=log,
              workers=cfg.workers)
    save_checkpoint(args.checkpoint, model)
    return 0


def _model(args, cfg, kern, sched, corpus):
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        if model.m != kern.m:
            raise ConfigError(f"checkpoint vocabulary {model.m} does not match kernel vocabulary {kern.m}")
        return model
    return ExactPosteriorModel(kern, sched, _qdata(corpus, kern.m))


def _cmd_sample(args):
    cfg = _run_config(args)
    corpus = _corpus(cfg)
    kern, sched = build_kernel(cfg.kernel), _schedule(cfg)
    model = _model(args, cfg, kern, sched, corpus)
    sp = cfg.sampler
    out = generate(model, kern, sched, DecodingGrid(sp.steps), sp.length, sp.num, seed=cfg.seed,
                   plugin=sp.plugin, workers=cfg.workers)
    with _sink(args.out) as fh:
        for row in out:
            rec = {"tokens": row.tolist()}
            if corpus.alphabet is not None:
                rec["text"] = corpus.decode(row)
            fh.write(json.dumps(rec) + "\n")
    return 0


def _read_samples(path):
    with open(path) as fh:
        return [np.asarray(json.loads(line)["tokens"]) for line in fh if line.strip()]


def _cmd_eval(args):
    cfg = _run_config(args)
    corpus = _corpus(cfg)
    kern, sched = build_kernel(cfg.kernel), _schedule(cfg)
    model = _model(args, cfg, kern, sched, corpus)
    rep = nll_bound_snapshot(model, kern, sched, corpus.sequences, args.mc_samples, cfg.seed,
                             cfg.workers)
    if args.samples:
        samples = _read_samples(args.samples)
        rep.entropy_mean = unigram_entropy(samples)
        rep.distinct = {n: distinct_n(samples, n) for n in (1, 2, 3)}
    print(json.dumps(rep.to_dict()))
    if args.csv:
        new = not os.path.exists(args.csv) or os.path.getsize(args.csv) == 0
        with open(args.csv, "a") as fh:
            if new:
                fh.write(EvalReport.CSV_HEADER + "\n")
            fh.write(rep.csv_row() + "\n")
    return 0


def _cmd_bench(args):
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(str(exc)) from None
    try:
        cfg = BenchConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bench: {exc}") from None
    cfg.workers = resolve_workers(cfg.workers)

    def log(row):
        print(json.dumps(row), file=sys.stderr)

    result = run_bench(cfg, log)
    if not result:
        print("bench: nothing was timed", file=sys.stderr)
        return 2
    if args.out:
        write_csv(args.out, result)
    if args.svg:
        write_svg(args.svg, result)
    summary = {k: {"mean_ms": v[0], "std_ms": v[1], "tokens_per_sec": v[2]}
               for k, v in result.summary().items()}
    print(json.dumps(summary))
    return 0


def _cmd_oracle(args):
    cfg = _run_config(args)
    if cfg.kernel.m > 512:
        raise ConfigError("oracle checks need a small vocabulary (m <= 512)")
    kern, sched = build_kernel(cfg.kernel), _schedule(cfg)
    report = oracle_check(kern, sched, seed=cfg.seed)
    with _sink(args.out) as fh:
        fh.write(json.dumps(report, indent=2) + "\n")
    return 0 if all(v["pass"] for v in report.values()) else 1


def _cmd_embeddings(args):
    if args.m < 2 or args.d < 1:
        raise ConfigError("need m >= 2 and d >= 1")
    if args.kind == "grid":
        emb = grid_embeddings(args.m)
    else:
        emb = cluster_embeddings(args.m, args.d, n_clusters=args.clusters, seed=args.seed)
    save_embeddings(args.out, emb)
    return 0


_COMMANDS = {"noise": _cmd_noise, "train": _cmd_train, "sample": _cmd_sample, "eval": _cmd_eval,
             "bench": _cmd_bench, "oracle-check": _cmd_oracle, "make-embeddings": _cmd_embeddings}


def dispatch(argv) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    argv = list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
