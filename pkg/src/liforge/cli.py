"""Single `liforge` executable exposing the pipeline as subcommands.

Configuration comes from a YAML file; `LIFORGE_<SECTION>_<KEY>` environment
variables override file values, and command-line flags override both.
Exit codes: 0 success, 2 missing input, 3 validation failure, 4 internal
invariant breach.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import yaml

from .core import (
    DataError,
    TripletDoc,
    TripletRecord,
    Vocab,
    load_checkpoint,
    make_rng,
    read_corpus,
    read_qrels,
    read_queries,
    read_run,
    read_triplets,
    save_checkpoint,
    tokenize,
    write_corpus,
    write_qrels,
    write_queries,
    write_run,
    write_triplets,
)
from .encoder import EncoderConfig, EncoderParams, init_params
from .evalkit import Bm25Index, build_bm25_index, evaluate_run, mine_small_devset
from .harness import SynthSpec, generate, run_ablation
from .losses import LossConfig
from .optim import LinearDecay, OptimConfig, ScheduleFree
from .scoring import DynamicLength, FixedMaxLength, FixedTokens, NoAugmentation
from .training import (
    InjectSpec,
    MixSource,
    MixSpec,
    TrainConfig,
    average_checkpoints,
    build_posttrain_mix,
    ensemble_teacher_scores,
    train,
)

ENV_PREFIX = "LIFORGE_"

EXIT_MISSING_INPUT = 2
EXIT_VALIDATION = 3
EXIT_INTERNAL = 4

# Defaults mirror the full-scale training recipe; desk-scale runs
# override via file/flags.
DEFAULT_CONFIG = {
    "train": {
        "total_steps": 1000,
        "n_way": 32,
        "batch_size": 16,
        "checkpoint_every": 2000,
        "seed": 0,
        "max_doc_len": 300,
        "aug_mode": "dynamic",
    },
    "loss": {
        "kind": "kl",
        "mmse_weight": 0.0,
        "normalize_teacher": True,
        "normalize_student": True,
        "ibneg_enabled": False,
        "temperature": 1.0,
    },
    "optim": {
        "lr": 3e-5,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "weight_decay": 0.0,
        "scheduler": "schedule_free",
        "warmup_frac": 0.05,
        "clip_max_norm": None,
    },
    "encoder": {
        "hidden": 32,
        "out_dim": 16,
        "mixer": True,
    },
    "synth": {
        "seed": 0,
        "vocab_size": 200,
        "n_docs": 2000,
        "n_queries": 600,
        "topic_dim": 8,
        "doc_len": [15, 30],
        "query_len": [3, 8],
        "teacher_noise_sigma": 0.05,
        "n_way": 4,
        "cos_threshold": 0.9,
    },
    "ablate": {
        "heldout_frac": 0.2,
        "metrics": ["ndcg@10"],
        "grid": [],
    },
}


def load_config(path: str | None) -> dict:
    """Defaults <- file <- environment, rejecting unknown keys."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file {path} not found")
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        for section, values in loaded.items():
            if section not in config:
                raise ValueError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ValueError(f"config section {section!r} must be a mapping")
            for key, value in values.items():
                if key not in config[section]:
                    raise ValueError(f"unknown config key {section}.{key}")
                config[section][key] = value
    for env_key, raw in sorted(os.environ.items()):
        if not env_key.startswith(ENV_PREFIX):
            continue
        rest = env_key[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        while section not in config and "_" in key:
            head, _, key = key.partition("_")
            section = f"{section}_{head}"
        if section not in config or key not in config[section]:
            raise ValueError(f"environment override {env_key} matches no config key")
        config[section][key] = yaml.safe_load(raw)
    return config


def dump_config(config: dict) -> str:
    return yaml.safe_dump(config, sort_keys=True)


def _parse_aug_mode(spec) -> object:
    if isinstance(spec, str):
        if spec == "none":
            return NoAugmentation()
        if spec == "dynamic":
            return DynamicLength()
        if spec.startswith("fixed_max:"):
            return FixedMaxLength(max_len=int(spec.split(":", 1)[1]))
        if spec.startswith("fixed:"):
            return FixedTokens(k=int(spec.split(":", 1)[1]))
    raise ValueError(f"unknown aug_mode {spec!r}")


def build_train_config(config: dict) -> TrainConfig:
    t, l, o = config["train"], config["loss"], config["optim"]
    if o["scheduler"] == "schedule_free":
        scheduler = ScheduleFree(warmup_frac=o["warmup_frac"])
        clip = o["clip_max_norm"]  # disabled by default under schedule-free
    elif o["scheduler"] == "linear_decay":
        scheduler = LinearDecay(total_steps=t["total_steps"], warmup_frac=o["warmup_frac"])
        clip = o["clip_max_norm"] if o["clip_max_norm"] is not None else 2.0
    else:
        raise ValueError(f"unknown scheduler {o['scheduler']!r}")
    return TrainConfig(
        total_steps=t["total_steps"],
        n_way=t["n_way"],
        batch_size=t["batch_size"],
        checkpoint_every=t["checkpoint_every"],
        seed=t["seed"],
        max_doc_len=t["max_doc_len"],
        aug_mode=_parse_aug_mode(t["aug_mode"]),
        loss=LossConfig(
            kind=l["kind"],
            mmse_weight=l["mmse_weight"],
            normalize_teacher=l["normalize_teacher"],
            normalize_student=l["normalize_student"],
            ibneg_enabled=l["ibneg_enabled"],
            temperature=l["temperature"],
        ),
        optim=OptimConfig(
            lr=o["lr"],
            beta1=o["beta1"],
            beta2=o["beta2"],
            eps=o["eps"],
            weight_decay=o["weight_decay"],
            scheduler=scheduler,
            clip_max_norm=clip,
        ),
    )


def build_synth_spec(config: dict) -> SynthSpec:
    s = config["synth"]
    return SynthSpec(
        seed=s["seed"],
        vocab_size=s["vocab_size"],
        n_docs=s["n_docs"],
        n_queries=s["n_queries"],
        topic_dim=s["topic_dim"],
        doc_len=tuple(s["doc_len"]),
        query_len=tuple(s["query_len"]),
        teacher_noise_sigma=s["teacher_noise_sigma"],
        n_way=s["n_way"],
        cos_threshold=s["cos_threshold"],
    )


def _encoder_config(config: dict, vocab_size: int, aug_mode, max_doc_len: int) -> EncoderConfig:
    e = config["encoder"]
    return EncoderConfig(
        vocab_size=vocab_size,
        hidden=e["hidden"],
        out_dim=e["out_dim"],
        mixer=e["mixer"],
        aug_mode=aug_mode,
        max_doc_len=max_doc_len,
    )


def _params_from_checkpoint_file(path: str) -> tuple[EncoderParams, EncoderConfig]:
    ckpt = load_checkpoint(path)
    params = EncoderParams.from_checkpoint(ckpt)
    config = EncoderConfig(
        vocab_size=params.emb.shape[0],
        hidden=params.emb.shape[1],
        out_dim=params.proj.shape[1],
        mixer=params.att_q is not None,
    )
    return params, config


def _require(path: str, kind: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{kind} {path} not found")
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["synth"]["seed"] = args.seed
    data = generate(build_synth_spec(config))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(data.corpus, out / "corpus.jsonl")
    write_queries(data.queries, out / "queries.tsv")
    write_qrels(data.qrels, out / "qrels.txt")
    write_triplets(data.triplets, out / "triplets.jsonl")
    print(f"wrote {len(data.corpus)} docs, {len(data.queries)} queries to {out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.total_steps is not None:
        config["train"]["total_steps"] = args.total_steps
    if args.seed is not None:
        config["train"]["seed"] = args.seed
    train_config = build_train_config(config)
    corpus = read_corpus(_require(args.corpus, "corpus"))
    triplets = list(read_triplets(_require(args.triplets, "triplets file")))
    vocab = Vocab.build(text for _, text in corpus)
    enc_config = _encoder_config(config, len(vocab), train_config.aug_mode,
                                 train_config.max_doc_len)
    params = init_params(enc_config, seed=train_config.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(train_config, triplets, params, enc_config, vocab,
                   trace_path=out / "trace.tsv")
    for ckpt in result.checkpoints:
        save_checkpoint(ckpt, out / f"step{ckpt.meta['step']:08d}.ckpt")
    save_checkpoint(result.checkpoints[-1], out / "final.ckpt")
    print(f"wrote {len(result.checkpoints)} checkpoints to {out} "
          f"(skipped {result.skipped_batches} degenerate batches)")
    return 0


def cmd_posttrain_mix(args) -> int:
    sources = []
    for entry in args.source:
        path, _, weight = entry.rpartition(":")
        sources.append(MixSource(path=_require(path, "dataset"), weight=float(weight)))
    inject = None
    if args.inject is not None:
        path, _, fraction = args.inject.rpartition(":")
        inject = InjectSpec(path=_require(path, "dataset"), fraction=float(fraction))
    spec = MixSpec(sources=tuple(sources), inject_pretrain=inject)
    mixed = build_posttrain_mix(spec, make_rng(args.seed), n_records=args.n_records)
    write_triplets(mixed, args.out)
    print(f"wrote {len(mixed)} mixed triplets to {args.out}")
    return 0


def cmd_score(args) -> int:
    records = list(read_triplets(_require(args.triplets, "triplets file")))
    out_records = []
    for record in records:
        teachers = args.teachers.split(",") if args.teachers else record.teachers
        ensembled = ensemble_teacher_scores(record, teachers)
        docs = tuple(
            TripletDoc(doc_id=d.doc_id, text=d.text, teacher_scores={"ensemble": s})
            for d, s in zip(record.docs, ensembled)
        )
        out_records.append(TripletRecord(query_id=record.query_id,
                                         query_text=record.query_text, docs=docs))
    write_triplets(out_records, args.out)
    print(f"wrote {len(out_records)} ensembled triplets to {args.out}")
    return 0


def cmd_merge(args) -> int:
    ckpts = [load_checkpoint(_require(p, "checkpoint")) for p in args.checkpoints]
    save_checkpoint(average_checkpoints(ckpts), args.out)
    print(f"merged {len(ckpts)} checkpoints into {args.out}")
    return 0


def cmd_index_bm25(args) -> int:
    corpus = read_corpus(_require(args.corpus, "corpus"))
    index = build_bm25_index(corpus, k1=args.k1, b=args.b)
    payload = {
        "postings": {t: [[d, tf] for d, tf in p] for t, p in sorted(index.postings.items())},
        "doc_len": index.doc_len,
        "avgdl": index.avgdl,
        "n_docs": index.n_docs,
        "k1": index.k1,
        "b": index.b,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
    print(f"indexed {index.n_docs} docs into {args.out}")
    return 0


def _load_index(path: str) -> Bm25Index:
    with open(_require(path, "index"), encoding="utf-8") as fh:
        payload = json.load(fh)
    return Bm25Index(
        postings={t: tuple((d, tf) for d, tf in p) for t, p in payload["postings"].items()},
        doc_len=payload["doc_len"],
        avgdl=payload["avgdl"],
        n_docs=payload["n_docs"],
        k1=payload["k1"],
        b=payload["b"],
    )


def cmd_mine_devset(args) -> int:
    queries = read_queries(_require(args.queries, "queries"))
    qrels = read_qrels(_require(args.qrels, "qrels"))
    corpus = read_corpus(_require(args.corpus, "corpus"))
    index = _load_index(args.index)
    sub_corpus, sub_qrels = mine_small_devset(queries, qrels, corpus, index, depth=args.depth)
    write_corpus(sub_corpus, args.out_corpus)
    write_qrels(sub_qrels, args.out_qrels)
    print(f"mined {len(sub_corpus)} docs into {args.out_corpus}")
    return 0


def cmd_search(args) -> int:
    config = load_config(args.config)
    params, enc_config = _params_from_checkpoint_file(_require(args.checkpoint, "checkpoint"))
    corpus = read_corpus(_require(args.corpus, "corpus"))
    queries = read_queries(_require(args.queries, "queries"))
    vocab = Vocab.build(text for _, text in corpus)
    if len(vocab) != enc_config.vocab_size:
        raise ValueError(
            f"corpus vocab size {len(vocab)} != checkpoint vocab size {enc_config.vocab_size}"
        )
    aug_mode = _parse_aug_mode(config["train"]["aug_mode"])
    from dataclasses import replace
    from .core import DMARK_ID
    from .encoder import encode
    from .evalkit import exact_search
    from .core import RunList
    from .scoring import augment_query

    enc_config = replace(enc_config, aug_mode=aug_mode,
                         max_doc_len=config["train"]["max_doc_len"])
    corpus_embs = []
    for doc_id, text in corpus:
        tokens = ([DMARK_ID] + tokenize(text, vocab))[: enc_config.max_doc_len]
        corpus_embs.append((doc_id, encode(tokens, params, enc_config, is_query=False)))
    scored = {}
    for qid, text in queries:
        tokens = augment_query(tokenize(text, vocab), aug_mode, vocab)
        q_emb = encode(tokens, params, enc_config, is_query=True)
        scored[qid] = exact_search(q_emb, corpus_embs, args.k)
    write_run(RunList.from_scores(scored), args.out)
    print(f"wrote run for {len(queries)} queries to {args.out}")
    return 0


def cmd_eval(args) -> int:
    run = read_run(_require(args.run, "run file"))
    qrels = read_qrels(_require(args.qrels, "qrels"))
    metrics = args.metrics.split(",")
    report = evaluate_run(run, qrels, metrics)
    sys.stdout.write(report.to_text())
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_jsonl())
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config)
    grid_specs = config["ablate"]["grid"] or [{}]
    configs, labels = [], []
    for i, cell in enumerate(grid_specs):
        merged = copy.deepcopy(config)
        for section in ("train", "loss", "optim"):
            for key, value in cell.get(section, {}).items():
                if key not in merged[section]:
                    raise ValueError(f"unknown grid key {section}.{key}")
                merged[section][key] = value
        configs.append(build_train_config(merged))
        labels.append(cell.get("label", f"config{i}"))
    table = run_ablation(
        configs,
        build_synth_spec(config),
        config["ablate"]["metrics"],
        heldout_frac=config["ablate"]["heldout_frac"],
        labels=labels,
        threads=args.threads,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(table.to_tsv())
    sys.stdout.write(table.to_tsv())
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liforge",
                                     description="late-interaction retrieval toolkit")
    parser.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                        default=True, help="deterministic execution (default on)")
    parser.add_argument("--threads", type=int, default=1,
                        help="max worker parallelism; results are thread-count invariant")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="run distillation training")
    p.add_argument("--config", default=None)
    p.add_argument("--triplets", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("posttrain-mix", help="build a weighted post-training mix")
    p.add_argument("--source", action="append", required=True, metavar="PATH:WEIGHT")
    p.add_argument("--inject", default=None, metavar="PATH:FRACTION")
    p.add_argument("--n-records", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_posttrain_mix)

    p = sub.add_parser("score", help="ensemble teacher scores")
    p.add_argument("--triplets", required=True)
    p.add_argument("--teachers", default=None, help="comma-separated teacher names")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("merge", help="average checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("index-bm25", help="build a BM25 inverted index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k1", type=float, default=0.9)
    p.add_argument("--b", type=float, default=0.4)
    p.set_defaults(fn=cmd_index_bm25)

    p = sub.add_parser("mine-devset", help="mine a compact BM25 dev set")
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--depth", type=int, default=250)
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--out-qrels", required=True)
    p.set_defaults(fn=cmd_mine_devset)

    p = sub.add_parser("search", help="exact MaxSim search over a corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("eval", help="score a run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", default="ndcg@10")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run a config grid on synthetic data")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: missing-input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ValueError, DataError, KeyError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (AssertionError, RuntimeError) as exc:
        print(f"error: internal: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
