"""Batch CLI: one binary, one subcommand per pipeline stage.

Every run writes its artifact(s) plus a ``<artifact>.manifest.json`` holding
the subcommand, arguments, config hash, seeds, and package version, so any
artifact directory documents how to re-run the command.  Offline
subcommands are byte-deterministic for identical config and seeds; network
subcommands (judge, generate) accept ``--mock FILE`` to replay scripted
replies with no endpoint.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config error.
Failures emit a machine-readable JSON record on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__ as _version
from . import analysis, datagen, judge, ngrams, readability, treestats
from .wordlists import load_word_list

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3

_CONFIG_KEYS = {
    "judge_endpoint": str,
    "judge_model": str,
    "generator_endpoint": str,
    "generator_model": str,
    "api_key_env": str,
    "dale_chall": str,
    "spache": str,
    "vocab": str,
    "features": str,
    "memory_budget": int,
    "seed": int,
    "max_in_flight": int,
    "max_retries": int,
    "timeout": float,
    "workers": int,
}
_CONFIG_PATH_KEYS = ("dale_chall", "spache", "vocab", "features")


class ConfigError(Exception):
    pass


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    config = {}
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            config[key] = _CONFIG_KEYS[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    for key in _CONFIG_PATH_KEYS:
        if key in config and not Path(config[key]).exists():
            raise ConfigError(f"config key {key!r}: path does not exist: {config[key]}")
    return config


def _effective(args, config: dict, key: str, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(canonical).hexdigest()


def write_manifest(out_path: Path, subcommand: str, args_record: dict, config: dict) -> None:
    manifest = {
        "tool": "corpusmetrics",
        "version": _version,
        "subcommand": subcommand,
        "args": args_record,
        "config": config,
        "config_hash": _config_hash(config),
    }
    path = Path(str(out_path) + ".manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_corpus_texts(path: str) -> dict[str, str]:
    """JSONL corpus -> {doc_id: text}; accepts 'id' or 'doc_id' fields."""
    texts: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            doc_id = str(obj.get("id", obj.get("doc_id", f"doc{i}")))
            texts[doc_id] = obj["text"]
    if not texts:
        raise ValueError(f"{path}: no documents")
    return texts


def _parse_n_values(spec: str) -> list[int]:
    """'1-8' or '1,2,3' or a single integer."""
    if "-" in spec:
        lo, hi = spec.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(p) for p in spec.split(",") if p]


def _load_stream(path: str, fmt: str):
    if fmt == "ids":
        return ngrams.load_id_stream(path)
    return ngrams.load_jsonl_stream(path)


# ---------------------------------------------------------------------------
# subcommand handlers

def _cmd_readability(args, config):
    if args.dale_chall or "dale_chall" in config:
        dc = load_word_list(_effective(args, config, "dale_chall", None), "dale_chall")
    else:
        dc = readability.load_default_word_lists()[0]
    if args.spache or "spache" in config:
        sp = load_word_list(_effective(args, config, "spache", None), "spache")
    else:
        sp = readability.load_default_word_lists()[1]
    texts = _read_corpus_texts(args.input)
    reports, means = readability.corpus_report(texts, dc, sp)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("doc_id," + ",".join(readability.FORMULA_NAMES) + "\n")
        for doc_id, report in reports.items():
            row = ",".join(repr(report.scores[n]) for n in readability.FORMULA_NAMES)
            fh.write(f"{doc_id},{row}\n")
        fh.write("MEAN," + ",".join(repr(means[n]) for n in readability.FORMULA_NAMES) + "\n")
    return [out]


def _cmd_treestats(args, config):
    stats = treestats.corpus_tree_stats(args.input)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("line_no,depth,width,nodes\n")
        for lineno, m in stats.per_line:
            fh.write(f"{lineno},{m.depth},{m.width},{m.nodes}\n")
        fh.write(f"MEAN,{stats.mean_depth!r},{stats.mean_width!r},{stats.mean_nodes!r}\n")
    if stats.failures:
        print(f"treestats: {stats.failures} unparseable lines skipped", file=sys.stderr)
    return [out]


def _cmd_ngrams(args, config):
    stream = _load_stream(args.input, args.format)
    seed = _effective(args, config, "seed", 0)
    if args.sample_budget:
        stream = ngrams.sample_tokens(stream, args.sample_budget, seed)
    profile = ngrams.count_unique_ngrams(
        stream,
        n_max=args.n,
        mode=args.mode,
        memory_budget=_effective(args, config, "memory_budget", ngrams.DEFAULT_MEMORY_BUDGET),
        workers=_effective(args, config, "workers", 1),
    )
    out = Path(args.out)
    ngrams.write_profile_csv(profile, out)
    return [out]


def _cmd_novelty(args, config):
    n_values = _parse_n_values(args.n_values)
    train = _load_stream(args.train, args.format)
    generated = _load_stream(args.generated, args.format)
    index = ngrams.build_index(
        train,
        n_values,
        backend=args.backend,
        bloom_fpr=args.fpr,
        memory_budget=_effective(args, config, "memory_budget", ngrams.DEFAULT_MEMORY_BUDGET),
    )
    outs = []
    if args.save_index:
        ngrams.save_index(index, args.save_index)
        outs.append(Path(args.save_index))
    novelty = ngrams.novelty_profile(generated, index, n_values)
    out = Path(args.out)
    ngrams.write_novelty_csv(novelty, out)
    outs.append(out)
    return outs


def _judge_config(args, config, endpoint_key: str, model_key: str) -> judge.JudgeConfig:
    return judge.JudgeConfig(
        endpoint_url=_effective(args, config, endpoint_key, judge.JudgeConfig.endpoint_url),
        model_name=_effective(args, config, model_key, judge.JudgeConfig.model_name),
        max_retries=_effective(args, config, "max_retries", 3),
        timeout=_effective(args, config, "timeout", 60.0),
        max_in_flight=_effective(args, config, "max_in_flight", 4),
        api_key_env=_effective(args, config, "api_key_env", judge.JudgeConfig.api_key_env),
    )


def _cmd_judge(args, config):
    texts = _read_corpus_texts(args.input)
    jc = _judge_config(args, config, "judge_endpoint", "judge_model")
    transport = judge.ScriptedTransport.from_file(args.mock) if args.mock else None
    result = judge.judge_corpus(
        texts,
        args.dimension,
        args.variant,
        jc,
        sample_size=args.sample_size,
        seed=_effective(args, config, "seed", 0),
        transport=transport,
    )
    out = Path(args.out)
    judge.write_scores_csv(result, out)
    if result.failures:
        print(f"judge: {len(result.failures)} documents failed", file=sys.stderr)
    return [out]


def _cmd_generate(args, config):
    jc = _judge_config(args, config, "generator_endpoint", "generator_model")
    transport = judge.ScriptedTransport.from_file(args.mock) if args.mock else None
    vocab = None
    vocab_path = _effective(args, config, "vocab", None)
    if vocab_path:
        vocab = datagen.load_vocab_bank(vocab_path, args.domain)
    feats = None
    features_path = _effective(args, config, "features", None)
    if features_path:
        feats = datagen.load_feature_bank(features_path)
    records = datagen.generate_dataset(
        args.domain,
        args.count,
        jc,
        seed=_effective(args, config, "seed", 0),
        token_budget=args.token_budget,
        k_features=args.k_features,
        vocab=vocab,
        feats=feats,
        transport=transport,
    )
    out = Path(args.out)
    datagen.write_corpus_jsonl(records, out)
    return [out]


def _cmd_split(args, config):
    records = datagen.read_corpus_jsonl(args.input)
    labeled = datagen.split_corpus(
        records, args.test_fraction, _effective(args, config, "seed", 0)
    )
    out = Path(args.out)
    datagen.write_corpus_jsonl(labeled, out)
    return [out]


def _cmd_prompts(args, config):
    records = datagen.read_corpus_jsonl(args.input)
    if args.split:
        records = [r for r in records if r.split == args.split]
    prompts = datagen.extract_prompts(
        records, args.prefix_tokens, _effective(args, config, "seed", 0), args.count
    )
    out = Path(args.out)
    datagen.write_prompts_jsonl(prompts, out)
    return [out]


def _read_scores_mean(path: str) -> float:
    import csv as _csv
    import math as _math

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty scores file")
    return _math.fsum(float(r["score"]) for r in rows) / len(rows)


def _cmd_analyze(args, config):
    out = Path(args.out)
    if args.task == "correlate":
        table = analysis.parse_report(args.table)
        names, matrix = analysis.correlation_matrix(table, args.method)
        result = analysis.MetricTable(
            row_ids=names,
            columns={name: [matrix[i][j] for i in range(len(names))] for j, name in enumerate(names)},
        )
        analysis.emit_report(result, out, "csv")
    elif args.task == "perplexity":
        grouped = analysis.read_logprobs_jsonl(args.logprobs)
        per_model = {m: analysis.corpus_perplexity(docs) for m, docs in grouped.items()}
        aggregate = analysis.cross_model_perplexity(per_model)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("model_id,corpus_ppl\n")
            for model in sorted(per_model):
                fh.write(f"{model},{per_model[model]!r}\n")
            fh.write(f"MEAN,{aggregate!r}\n")
    elif args.task == "learnability":
        if args.output_mean is not None and args.train_mean is not None:
            out_mean, train_mean = args.output_mean, args.train_mean
        elif args.output_scores and args.train_scores:
            out_mean = _read_scores_mean(args.output_scores)
            train_mean = _read_scores_mean(args.train_scores)
        else:
            raise ValueError(
                "learnability needs --output-scores/--train-scores or --output-mean/--train-mean"
            )
        ratio = analysis.learnability_ratio(out_mean, train_mean)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("output_mean,train_mean,ratio\n")
            fh.write(f"{out_mean!r},{train_mean!r},{ratio!r}\n")
    return [out]


def _cmd_report(args, config):
    table = analysis.parse_report(args.table)
    out = Path(args.out)
    if args.plot_data:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("series,x,y\n")
            for series, x, y in analysis.to_long_rows(table):
                fh.write(f"{series},{x},{y!r}\n")
    else:
        analysis.emit_report(table, out, args.format)
    return [out]


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corpusmetrics",
        description="Corpus complexity and learnability measurement toolkit.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("readability", help="eight classic formulas over a JSONL corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--dale-chall", dest="dale_chall")
    p.add_argument("--spache")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_readability)

    p = sub.add_parser("treestats", help="depth/width/nodes over bracketed trees")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_treestats)

    p = sub.add_parser("ngrams", help="unique n-gram profile of a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "ids"], default="jsonl")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--mode", choices=["exact", "approximate"], default="exact")
    p.add_argument("--sample-budget", type=int, help="sample this many tokens first")
    p.add_argument("--seed", type=int)
    p.add_argument("--memory-budget", dest="memory_budget", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_ngrams)

    p = sub.add_parser("novelty", help="n-gram novelty of generated text vs training text")
    p.add_argument("--train", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--format", choices=["jsonl", "ids"], default="jsonl")
    p.add_argument("--n-values", dest="n_values", default="1-8")
    p.add_argument("--backend", choices=["exact", "bloom"], default="exact")
    p.add_argument("--fpr", type=float)
    p.add_argument("--save-index", dest="save_index")
    p.add_argument("--memory-budget", dest="memory_budget", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_novelty)

    p = sub.add_parser("judge", help="LLM-as-a-judge scores over a JSONL corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--dimension", required=True, choices=judge.DIMENSIONS)
    p.add_argument("--variant", default="plain", choices=judge.VARIANTS)
    p.add_argument("--mock", help="file of scripted replies; no network")
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_judge)

    p = sub.add_parser("generate", help="generate a synthetic story corpus")
    p.add_argument("--domain", required=True, choices=datagen.DOMAINS)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--token-budget", dest="token_budget", type=int)
    p.add_argument("--k-features", dest="k_features", type=int, default=2)
    p.add_argument("--mock", help="file of scripted replies; no network")
    p.add_argument("--seed", type=int)
    p.add_argument("--vocab")
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("split", help="label a corpus with train/test splits")
    p.add_argument("--input", required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.01)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_split)

    p = sub.add_parser("prompts", help="extract fixed-length prompts from a split")
    p.add_argument("--input", required=True)
    p.add_argument("--split", default="test", choices=["train", "test", ""])
    p.add_argument("--prefix-tokens", dest="prefix_tokens", type=int, default=50)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_prompts)

    p = sub.add_parser("analyze", help="correlations, perplexity, learnability")
    p.add_argument("--task", required=True, choices=["correlate", "perplexity", "learnability"])
    p.add_argument("--table", help="metric table (correlate)")
    p.add_argument("--method", choices=["pearson", "spearman"], default="pearson")
    p.add_argument("--logprobs", help="JSONL logprob file (perplexity)")
    p.add_argument("--output-scores", dest="output_scores")
    p.add_argument("--train-scores", dest="train_scores")
    p.add_argument("--output-mean", dest="output_mean", type=float)
    p.add_argument("--train-mean", dest="train_mean", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("report", help="re-emit or reshape a metric table")
    p.add_argument("--table", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--plot-data", dest="plot_data", action="store_true",
                   help="emit tidy long-format CSV (series, x, y)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        json.dump({"error": str(exc), "kind": "config"}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_CONFIG
    try:
        artifacts = args.handler(args, config)
        args_record = {
            k: v for k, v in sorted(vars(args).items())
            if k not in ("handler", "config") and v is not None
        }
        for artifact in artifacts:
            write_manifest(artifact, args.subcommand, args_record, config)
    except Exception as exc:  # noqa: BLE001 - boundary: report and set exit code
        json.dump(
            {"error": str(exc), "kind": type(exc).__name__, "subcommand": args.subcommand},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
