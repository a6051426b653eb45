"""Command-line entry points.

Subcommands cover the full pipeline: ``pretrain-lm`` warms up the shared
embeddings, ``train`` runs joint training, ``transfer`` rewrites a file
into a target style, ``retrieve`` inspects the retrieval index,
``evaluate`` scores a checkpoint, and ``sweep-k`` repeats train+evaluate
over several retrieval depths.

Every run records a manifest (config snapshot, seed, package version,
dataset hashes) next to its outputs, and refuses to overwrite a
non-empty output location unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .corpus import (
    Vocabulary,
    compute_style_stats,
    load_corpus,
    load_style_file,
    reference_file,
    style_file,
    tokenize,
)
from .evaluation import evaluate, train_style_classifier, train_style_lms
from .model import (
    build_discriminator,
    build_model,
    init_from_lm,
    load_checkpoint,
    retrieve_for_batch,
    transfer_sentences,
)
from .retriever import Retriever
from .trainer import (
    Trainer,
    latest_checkpoint,
    load_lm,
    pretrain_lm,
    save_lm,
    seed_everything,
)


def _split_paths(config: RunConfig, split: str) -> list[Path]:
    if not config.data:
        raise ValueError("no data prefix configured (set data=<prefix>)")
    return [style_file(config.data, split, j) for j in range(config.styles)]


def load_split(config: RunConfig, split: str):
    paths = _split_paths(config, split)
    return load_corpus(paths, split, expected_styles=config.styles), paths


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: Path, command: str, config: RunConfig, datasets: list[Path]
) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "datasets": {str(p): sha256_file(p) for p in datasets if p.is_file()},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def prepare_out_dir(raw: str | None, force: bool) -> Path:
    if not raw:
        raise ValueError("this command needs --out")
    out = Path(raw)
    if out.exists() and not out.is_dir():
        raise ValueError(f"--out exists and is not a directory: {out}")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise ValueError(f"output directory not empty (use --force): {out}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def prepare_out_file(raw: str | None, force: bool) -> Path:
    if not raw:
        raise ValueError("this command needs --out")
    out = Path(raw)
    if out.exists() and not force:
        raise ValueError(f"output file exists (use --force): {out}")
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def resolve_checkpoint(raw: str) -> Path:
    """Accept a checkpoint file, a run directory, or its checkpoints/ dir."""
    path = Path(raw)
    if path.is_dir():
        if (path / "checkpoints" / "latest").is_file():
            return latest_checkpoint(path)
        pointer = path / "latest"
        if pointer.is_file():
            return path / pointer.read_text(encoding="utf-8").strip()
        raise FileNotFoundError(f"no checkpoint pointer under {path}")
    return path


def build_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, str] = {}
    for pair in args.set or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def build_pool_retriever(config: RunConfig, corpus, model, vocab) -> Retriever:
    """Retrieval indices over the training pool, dense ones freshly built."""
    retriever = Retriever(
        kind=config.retriever,
        corpus_sentences=[
            [s[: config.max_len] for s in corpus.sentences(j)]
            for j in range(corpus.num_styles)
        ],
        k=config.k,
        k1=config.bm25_k1,
        b=config.bm25_b,
    )
    if config.retriever == "dense":
        retriever.refresh(model.embed_fn(vocab))
    return retriever


# ----- subcommands ------------------------------------------------------------


def cmd_pretrain_lm(args: argparse.Namespace) -> int:
    config = build_config(args)
    out = prepare_out_dir(args.out, args.force)
    corpus, paths = load_split(config, "train")
    vocab = Vocabulary.from_corpus(corpus, min_freq=config.min_freq)
    vocab.save(out / "vocab.txt")
    lm, history = pretrain_lm(corpus, vocab, config)
    save_lm(out / "lm.pt", lm, vocab, config)
    (out / "pretrain_log.json").write_text(json.dumps(history, indent=2))
    write_manifest(out, "pretrain-lm", config, paths)
    print(f"wrote {out / 'lm.pt'}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = build_config(args)
    out = prepare_out_dir(args.out, args.force)
    corpus, paths = load_split(config, "train")
    seed_everything(config.seed)
    vocab = Vocabulary.from_corpus(corpus, min_freq=config.min_freq)
    vocab.save(out / "vocab.txt")
    stats = compute_style_stats(corpus, vocab)
    model = build_model(config, vocab, neutrality_init=stats.neutrality)
    if config.lm_checkpoint:
        lm = load_lm(config.lm_checkpoint)
        copied = init_from_lm(model, lm)
        print(f"initialized from language model: {', '.join(copied) or 'nothing'}")
    discriminator = build_discriminator(config, len(vocab))
    trainer = Trainer(config, corpus, vocab, model, discriminator)
    write_manifest(out, "train", config, paths)
    trainer.run(out_dir=out)
    print(f"trained {config.steps} steps; checkpoints under {out / 'checkpoints'}")
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(resolve_checkpoint(args.checkpoint))
    config = checkpoint.config
    if args.data:
        config = config.replace(data=args.data)
    if not 0 <= args.target_style < config.styles:
        raise ValueError(
            f"target style {args.target_style} outside 0..{config.styles - 1}"
        )
    out = prepare_out_file(args.out, args.force)
    input_path = Path(args.input)
    if not input_path.is_file():
        raise FileNotFoundError(f"input file not found: {input_path}")
    sentences = [
        tokenize(line)
        for line in input_path.read_text(encoding="utf-8").splitlines()
        if tokenize(line)
    ]
    if not sentences:
        out.write_text("", encoding="utf-8")
        print(f"wrote 0 sentences to {out}")
        return 0
    seed_everything(config.seed)
    pool, _ = load_split(config, "train")
    model, vocab = checkpoint.model, checkpoint.vocab
    retriever = build_pool_retriever(config, pool, model, vocab)
    provenance = None
    if args.provenance:
        provenance = prepare_out_file(args.provenance, args.force)
        rows = []
        results = retrieve_for_batch(
            model, retriever, vocab,
            [s[: config.max_len] for s in sentences],
            [args.target_style] * len(sentences),
        )
        for idx, result in enumerate(results):
            for rank, (score, sent) in enumerate(zip(result.scores, result.sentences), 1):
                rows.append(f"{idx}\t{rank}\t{score:.6f}\t{' '.join(sent)}")
        provenance.write_text("\n".join(rows) + "\n", encoding="utf-8")
    outputs = transfer_sentences(
        model, retriever, vocab,
        [s[: config.max_len] for s in sentences],
        args.target_style, config.max_len,
    )
    out.write_text(
        "".join(" ".join(tokens) + "\n" for tokens in outputs), encoding="utf-8"
    )
    print(f"wrote {len(outputs)} sentences to {out}")
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    if args.checkpoint:
        checkpoint = load_checkpoint(resolve_checkpoint(args.checkpoint))
        config, model, vocab = checkpoint.config, checkpoint.model, checkpoint.vocab
    else:
        config = build_config(args)
        model = vocab = None
    if args.data:
        config = config.replace(data=args.data)
    overrides = {}
    if args.kind:
        overrides["retriever"] = args.kind
    if args.k:
        overrides["k"] = args.k
    if overrides:
        config = config.replace(**overrides)
    if config.retriever == "dense" and model is None:
        raise ValueError("dense retrieval needs --checkpoint for the encoder")
    if not 0 <= args.style < config.styles:
        raise ValueError(f"style {args.style} outside 0..{config.styles - 1}")
    pool, _ = load_split(config, args.split)
    retriever = build_pool_retriever(config, pool, model, vocab)
    query = tokenize(args.query)
    if not query:
        raise ValueError("empty query")
    embedding = None
    if config.retriever == "dense":
        embedding = model.query_embeddings(vocab, [query[: config.max_len]])[0]
    result = retriever.retrieve(
        args.style, query_tokens=query, query_embedding=embedding, seed=config.seed
    )
    print("rank\tscore\tsentence")
    for rank, (score, sent) in enumerate(zip(result.scores, result.sentences), 1):
        print(f"{rank}\t{score:.6f}\t{' '.join(sent)}")
    if result.short:
        print(f"note: only {len(result)} of {config.k} candidates", file=sys.stderr)
    return 0


def _evaluate_checkpoint(config: RunConfig, model, vocab, out: Path | None):
    train_pool, train_paths = load_split(config, "train")
    test_corpus, test_paths = load_split(config, "test")
    references = None
    ref_paths = [reference_file(config.data, j) for j in range(config.styles)]
    if all(p.is_file() for p in ref_paths):
        references = [load_style_file(p) for p in ref_paths]
    classifier = train_style_classifier(
        train_pool,
        vocab,
        emb_size=config.emb_size,
        num_filters=config.disc_filters,
        widths=config.disc_widths,
        epochs=config.eval_classifier_epochs,
        batch_size=config.batch_size,
        seed=config.seed,
        max_len=config.max_len,
    )
    lms = train_style_lms(train_pool, order=config.ngram_order, discount=config.kn_discount)
    retriever = build_pool_retriever(config, train_pool, model, vocab)

    def generate(sentences, source_style, target_style):
        del source_style  # style enters only through the retrieved set
        return transfer_sentences(
            model, retriever, vocab,
            [s[: config.max_len] for s in sentences],
            target_style, config.max_len,
        )

    report = evaluate(
        generate, test_corpus, classifier, vocab, lms,
        references=references, out_dir=out,
    )
    return report, train_paths + test_paths + [p for p in ref_paths if p.is_file()]


def _print_report(report) -> None:
    def fmt(v):
        return "NA" if v is None else f"{v:.2f}"

    print(
        f"accuracy={report.accuracy:.2f} self_bleu={report.self_bleu:.2f} "
        f"ref_bleu={fmt(report.ref_bleu)} perplexity={report.perplexity:.2f} "
        f"aggregate={fmt(report.aggregate)}"
    )


def cmd_evaluate(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(resolve_checkpoint(args.checkpoint))
    config = checkpoint.config
    if args.data:
        config = config.replace(data=args.data)
    out = prepare_out_dir(args.out, args.force)
    seed_everything(config.seed)
    report, datasets = _evaluate_checkpoint(config, checkpoint.model, checkpoint.vocab, out)
    write_manifest(out, "evaluate", config, datasets)
    _print_report(report)
    return 0


def cmd_sweep_k(args: argparse.Namespace) -> int:
    config = build_config(args)
    out = prepare_out_dir(args.out, args.force)
    k_values = [int(part) for part in args.k_values.split(",") if part.strip()]
    if not k_values:
        raise ValueError("no k values given")
    corpus, paths = load_split(config, "train")
    rows = []
    for k in k_values:
        sub_config = config.replace(k=k)
        sub_out = out / f"k{k}"
        sub_out.mkdir(parents=True, exist_ok=True)
        seed_everything(sub_config.seed)
        vocab = Vocabulary.from_corpus(corpus, min_freq=sub_config.min_freq)
        stats = compute_style_stats(corpus, vocab)
        model = build_model(sub_config, vocab, neutrality_init=stats.neutrality)
        if sub_config.lm_checkpoint:
            init_from_lm(model, load_lm(sub_config.lm_checkpoint))
        discriminator = build_discriminator(sub_config, len(vocab))
        trainer = Trainer(sub_config, corpus, vocab, model, discriminator)
        trainer.run(out_dir=sub_out)
        seed_everything(sub_config.seed)
        report, _ = _evaluate_checkpoint(sub_config, model, vocab, sub_out / "eval")
        print(f"k={k}: ", end="")
        _print_report(report)
        rows.append((k, report))
    with (out / "sweep.tsv").open("w", encoding="utf-8") as fh:
        fh.write("k\taccuracy\tself_bleu\tref_bleu\tperplexity\taggregate\n")

        def fmt(v):
            return "NA" if v is None else f"{v:.4f}"

        for k, report in rows:
            fh.write(
                f"{k}\t{report.accuracy:.4f}\t{report.self_bleu:.4f}\t"
                f"{fmt(report.ref_bleu)}\t{report.perplexity:.4f}\t"
                f"{fmt(report.aggregate)}\n"
            )
    write_manifest(out, "sweep-k", config, paths)
    return 0


# ----- the parser -------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="restyle",
        description="Retrieval-augmented unsupervised text style transfer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_help: str) -> None:
        p.add_argument("--config", help="key=value config file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=out_help)
        p.add_argument(
            "--force", action="store_true", help="overwrite existing outputs"
        )

    p = sub.add_parser("pretrain-lm", help="train the warm-start language model")
    common(p, "output directory for lm.pt")
    p.set_defaults(func=cmd_pretrain_lm)

    p = sub.add_parser("train", help="joint generator/discriminator training")
    common(p, "output directory for checkpoints and logs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="rewrite a file into a target style")
    common(p, "output text file")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint (.pt)")
    p.add_argument("--input", required=True, help="input text file, one sentence per line")
    p.add_argument("--target-style", type=int, required=True)
    p.add_argument("--data", help="override the retrieval data prefix")
    p.add_argument("--provenance", help="also write the retrieved sentences (TSV)")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("retrieve", help="query a retrieval index directly")
    common(p, "(unused)")
    p.add_argument("--checkpoint", help="checkpoint for dense retrieval")
    p.add_argument("--data", help="override the data prefix")
    p.add_argument("--style", type=int, required=True, help="style subset to search")
    p.add_argument("--query", required=True, help="query sentence")
    p.add_argument("--split", default="train")
    p.add_argument("--kind", choices=["sparse", "dense", "random"])
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    common(p, "output directory for the report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="override the data prefix")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-k", help="train and evaluate over several k values")
    common(p, "output directory for the sweep")
    p.add_argument("--k-values", required=True, help="comma-separated retrieval depths")
    p.set_defaults(func=cmd_sweep_k)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
