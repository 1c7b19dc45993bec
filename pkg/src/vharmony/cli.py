"""Command-line entry point: ingest, synth, train, analyze, report, run."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import lexicon, plm, report, surprisal
from .errors import HarmonyError, StageError
from .lexicon import SyntheticSpec
from .plm import TrainingConfig


def _add_training_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    d = TrainingConfig()
    g.add_argument("--embedding-size", type=int, default=d.embedding_size)
    g.add_argument("--hidden-size", type=int, default=d.hidden_size)
    g.add_argument("--layers", type=int, default=d.n_layers)
    g.add_argument("--dropout", type=float, default=d.dropout)
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--mask-prob", type=float, default=d.mask_prob)
    g.add_argument("--max-epochs", type=int, default=d.max_epochs)
    g.add_argument("--patience", type=int, default=d.patience)
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--no-eos-in-loss", action="store_true", help="train without end-of-word targets")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ratios", type=float, nargs=3, default=(0.6, 0.1, 0.3), metavar=("TRAIN", "VALID", "TEST"))


def _training_config(args) -> TrainingConfig:
    return TrainingConfig(
        embedding_size=args.embedding_size, hidden_size=args.hidden_size, n_layers=args.layers,
        dropout=args.dropout, batch_size=args.batch_size, mask_prob=args.mask_prob,
        max_epochs=args.max_epochs, patience=args.patience, lr=args.lr,
        eos_in_loss=not args.no_eos_in_loss, seed=args.seed,
    )


def _add_test_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schemes", help="harmony scheme JSON (default: bundled groups)")
    p.add_argument("--features", nargs="+", help="only analyse these features")
    p.add_argument("--exact-max-n", type=int, default=surprisal.stats.WILCOXON_EXACT_MAX_N)
    p.add_argument("--exact-max-product", type=int, default=surprisal.stats.MANN_WHITNEY_EXACT_MAX_PRODUCT)


def _add_synth_args(p: argparse.ArgumentParser) -> None:
    d = SyntheticSpec()
    p.add_argument("--words", type=int, default=d.n_words)
    p.add_argument("--strength", type=float, default=d.strength)
    p.add_argument("--min-vowels", type=int, default=d.min_vowels)
    p.add_argument("--max-vowels", type=int, default=d.max_vowels)


def _synth_spec(args) -> SyntheticSpec:
    return SyntheticSpec(
        n_words=args.words, strength=args.strength, min_vowels=args.min_vowels, max_vowels=args.max_vowels
    )


def _inputs(args) -> list[str]:
    if args.input:
        return list(args.input)
    found = report.default_wordlist(args.data_dir)
    if found is None:
        raise SystemExit(f"no input given; pass --input or set ${report.DATA_DIR_ENV}")
    return [str(found)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vharmony", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and preprocess a word list into a lexicon snapshot")
    p.add_argument("--input", nargs="+", help="FormTable path(s)")
    p.add_argument("--data-dir", help=f"directory holding forms.csv (default ${report.DATA_DIR_ENV})")
    p.add_argument("--language", required=True)
    p.add_argument("--overrides", help="segment<TAB>vowel|consonant file")
    p.add_argument("--out", required=True, help="lexicon JSON")

    p = sub.add_parser("synth", help="generate a synthetic harmony lexicon")
    _add_synth_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="lexicon JSON")
    p.add_argument("--tsv", help="also write a FormTable")

    p = sub.add_parser("train", help="split a lexicon and train a model")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True, help="model file")
    _add_training_args(p)

    p = sub.add_parser("analyze", help="evaluate a model on its test split and run the contrasts")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    _add_test_args(p)

    p = sub.add_parser("report", help="draw figures and print the table of an analysed run")
    p.add_argument("--run-dir", required=True)
    _add_test_args(p)

    p = sub.add_parser("run", help="end-to-end run for one language or a batch file")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", nargs="+", help="FormTable path(s)")
    src.add_argument("--synthetic", action="store_true", help="use a generated corpus")
    src.add_argument("--batch", help="JSON batch file listing runs")
    p.add_argument("--data-dir", help=f"directory holding forms.csv (default ${report.DATA_DIR_ENV})")
    p.add_argument("--language")
    p.add_argument("--overrides")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    _add_test_args(p)
    _add_training_args(p)
    _add_synth_args(p)
    return parser


def _lexicon_and_split(lexicon_path, model: plm.TrainedModel):
    lex = lexicon.load_lexicon(lexicon_path)
    meta = model.metadata
    split = lexicon.split_dataset(lex, meta.get("split_seed", model.seed), tuple(meta.get("ratios", (0.6, 0.1, 0.3))))
    return lex, split


def _schemes(args, lex) -> list:
    if lex.metadata.get("synthetic") and args.schemes is None:
        spec = SyntheticSpec(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in lex.metadata.get("spec", {}).items()})
        schemes = [report.synthetic_scheme(spec)]
    else:
        table = surprisal.load_schemes(args.schemes)
        schemes = surprisal.schemes_for(lex.language, sorted(lex.inventory.vowels), table)
    if args.features:
        schemes = [s for s in schemes if s.feature in args.features]
    return schemes


def cmd_ingest(args) -> None:
    cfg = report.RunConfig(args.language, ".", tuple(_inputs(args)), overrides=args.overrides)
    cfg.validate()
    lex = report.ingest(cfg)
    lexicon.save_lexicon(lex, args.out)
    print(f"{lex.language}: {len(lex)} forms, {len(lex.inventory.vowels)} vowels -> {args.out}")


def cmd_synth(args) -> None:
    spec = _synth_spec(args)
    lex = lexicon.generate_synthetic_lexicon(spec, args.seed)
    lex.metadata["spec"] = {f.name: getattr(spec, f.name) for f in fields(spec)}
    lexicon.save_lexicon(lex, args.out)
    if args.tsv:
        lexicon.write_wordlist(lex, args.tsv)
    print(f"{len(lex)} synthetic forms (strength {spec.strength}) -> {args.out}")


def cmd_train(args) -> None:
    lex = lexicon.load_lexicon(args.lexicon)
    split = lexicon.split_dataset(lex, args.seed, tuple(args.ratios))
    model = plm.train(split, lex.inventory, _training_config(args))
    model.metadata.update({
        "language": lex.language, "split_seed": args.seed, "ratios": list(args.ratios),
        "lexicon_sha256": report.sha256_file(args.lexicon),
    })
    plm.save_model(model, args.out)
    best = model.history[model.best_epoch - 1]["valid_loss"]
    print(f"trained {len(model.history)} epochs, best epoch {model.best_epoch} (valid {best:.4f} nats) -> {args.out}")


def cmd_analyze(args) -> None:
    model = plm.load_model(args.model)
    lex, split = _lexicon_and_split(args.lexicon, model)
    schemes = _schemes(args, lex)
    evaluations, rows = report.analyze(model, split.test, schemes, args.exact_max_n, args.exact_max_product)
    table = report.ResultTable(rows, lex.language, model.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.emit_table(table, out / "results.csv")
    report.emit_table(table, out / "results.json", "json")
    (out / "samples.csv").write_text(report.samples_to_csv(evaluations), encoding="utf-8")
    (out / "schemes.json").write_text(json.dumps([s.to_dict() for s in schemes], ensure_ascii=False), encoding="utf-8")
    sys.stdout.write(report.table_to_csv(table))


def cmd_report(args) -> None:
    run = Path(args.run_dir)
    by_feature = report.read_samples(run / "samples.csv")
    scheme_path = run / "schemes.json"
    if scheme_path.exists():
        raw = json.loads(scheme_path.read_text(encoding="utf-8"))
    else:  # written by `run`
        raw = json.loads((run / "manifest.json").read_text(encoding="utf-8"))["schemes"]
    schemes = [surprisal.HarmonyScheme.from_dict(d) for d in raw]
    rows = surprisal.compute_contrasts(
        [(s, by_feature.get(s.feature, [])) for s in schemes], args.exact_max_n, args.exact_max_product
    )
    for s in schemes:
        paired = [r for r in rows if r.feature == s.feature and r.kind == "paired"]
        if paired:
            path = report.contrast_figure(paired, s.feature, run / f"figure_{s.feature}.svg")
            print(f"wrote {path}")
    sys.stdout.write(report.table_to_csv(report.ResultTable(rows)))


def cmd_run(args) -> None:
    if args.batch:
        summary = report.run_batch(args.batch, args.out_dir)
        for lang, info in summary["runs"].items():
            print(f"{lang}: {info['status']}")
        return
    synthetic = _synth_spec(args) if args.synthetic else None
    language = args.language or ("synthetic" if synthetic else None)
    if language is None:
        raise SystemExit("--language is required unless --synthetic is given")
    cfg = report.RunConfig(
        language=language,
        output_dir=args.out_dir,
        inputs=() if synthetic else tuple(_inputs(args)),
        synthetic=synthetic,
        scheme_file=args.schemes,
        features=args.features,
        overrides=args.overrides,
        training=_training_config(args),
        seed=args.seed,
        ratios=tuple(args.ratios),
        exact_max_n=args.exact_max_n,
        exact_max_product=args.exact_max_product,
        figures=not args.no_figures,
    )
    result = report.run_pipeline(cfg)
    sys.stdout.write(report.table_to_csv(result.table))


COMMANDS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "train": cmd_train,
    "analyze": cmd_analyze, "report": cmd_report, "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HarmonyError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
