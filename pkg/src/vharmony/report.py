"""Pipeline orchestration, result tables, figures and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__, lexicon, plm, surprisal, svg
from .errors import EmptySamples, EmptyTable, HarmonyError, IoFailure, StageError
from .lexicon import DatasetSplit, Lexicon, SyntheticSpec
from .plm import TrainedModel, TrainingConfig
from .surprisal import ContrastResult, Evaluation, HarmonyScheme

log = logging.getLogger(__name__)

DATA_DIR_ENV = "VH_DATA_DIR"
TABLE_COLUMNS = ("condition", "delta_eta", "statistic", "p_value", "effect_size", "test")
SAMPLE_COLUMNS = ("feature", "form_index", "word", "position", "context", "eta_minus", "eta_plus", "eta_neutral")


def default_wordlist(data_dir: str | os.PathLike | None = None) -> Path | None:
    """Locate a FormTable under ``data_dir`` or the ``VH_DATA_DIR`` directory."""
    root = data_dir or os.environ.get(DATA_DIR_ENV)
    if not root:
        return None
    for rel in ("forms.csv", "cldf/forms.csv", "forms.tsv", "cldf/forms.tsv"):
        p = Path(root) / rel
        if p.is_file():
            return p
    return None


@dataclass
class RunConfig:
    """Everything needed to reproduce one language run."""

    language: str
    output_dir: str
    inputs: tuple[str, ...] = ()
    synthetic: SyntheticSpec | None = None
    scheme_file: str | None = None
    features: tuple[str, ...] | None = None
    overrides: str | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0
    ratios: tuple[float, float, float] = (0.6, 0.1, 0.3)
    exact_max_n: int = surprisal.stats.WILCOXON_EXACT_MAX_N
    exact_max_product: int = surprisal.stats.MANN_WHITNEY_EXACT_MAX_PRODUCT
    figures: bool = True

    def __post_init__(self):
        self.inputs = tuple(str(p) for p in self.inputs)
        self.ratios = tuple(self.ratios)
        if self.features is not None:
            self.features = tuple(self.features)
        # one seed drives the split and the model
        if self.training.seed != self.seed:
            self.training = replace(self.training, seed=self.seed)

    def validate(self) -> None:
        if not self.inputs and self.synthetic is None:
            raise FileNotFoundError(
                f"no input word list given and none found via ${DATA_DIR_ENV}"
            )
        for p in (*self.inputs, self.scheme_file, self.overrides):
            if p is not None and not os.path.isfile(p):
                raise FileNotFoundError(p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_dir"] = None  # location does not change results
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        if d.get("synthetic") is not None:
            syn = dict(d["synthetic"])
            for k in ("minus_vowels", "plus_vowels", "consonants"):
                if k in syn:
                    syn[k] = tuple(syn[k])
            d["synthetic"] = SyntheticSpec(**syn)
        if isinstance(d.get("training"), dict):
            d["training"] = TrainingConfig(**d["training"])
        return cls(**d)


@dataclass
class ResultTable:
    rows: list[ContrastResult]
    language: str = ""
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.rows)


def synthetic_scheme(spec: SyntheticSpec) -> HarmonyScheme:
    return HarmonyScheme("back", frozenset(spec.minus_vowels), frozenset(spec.plus_vowels))


# ---------------------------------------------------------------------------
# tables


def _row_cells(row: ContrastResult) -> list[str]:
    return [
        row.condition,
        f"{row.delta_eta:.4f}",
        f"{row.statistic:.4f}",
        f"{row.p_value:.4e}",
        f"{row.effect_size:.4f}",
        row.test,
    ]


def table_to_csv(table: ResultTable) -> str:
    if not table.rows:
        raise EmptyTable("refusing to write an empty result table")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for row in table.rows:
        w.writerow(_row_cells(row))
    return buf.getvalue()


def table_to_dict(table: ResultTable) -> dict:
    if not table.rows:
        raise EmptyTable("refusing to write an empty result table")
    rows = []
    for row in table.rows:
        cells = _row_cells(row)
        rows.append({
            "condition": row.condition,
            "delta_eta": float(cells[1]),
            "statistic": float(cells[2]),
            "p_value": float(cells[3]),
            "effect_size": float(cells[4]),
            "test": row.test,
            "kind": row.kind,
            "feature": row.feature,
            "n1": row.n1,
            "n2": row.n2,
            "statistic_kind": row.statistic_kind,
            "method": row.method,
            "rank_biserial": None if row.rank_biserial is None else round(row.rank_biserial, 4),
            "normality_p": [None if p is None else float(f"{p:.4e}") for p in row.normality_p],
        })
    return {"language": table.language, "seed": table.seed, "columns": list(TABLE_COLUMNS), "rows": rows}


def table_from_dict(d: dict) -> ResultTable:
    rows = []
    for r in d["rows"]:
        kind = r.get("kind") or ("paired" if r["test"] == "Wilcoxon" else "unpaired")
        rows.append(ContrastResult(
            r["condition"], r["delta_eta"], r["statistic"], r["p_value"], r["effect_size"], kind,
            r.get("n1", 0), r.get("n2", 0), r.get("feature", ""), r.get("statistic_kind", ""),
            r.get("method", ""), r.get("rank_biserial"), tuple(r.get("normality_p", (None, None))),
        ))
    return ResultTable(rows, d.get("language", ""), d.get("seed"))


def _write_text(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit_table(table: ResultTable, path: str | os.PathLike, format: str = "csv") -> Path:
    """Write the table as CSV (fixed header, 4-decimal floats) or JSON."""
    path = Path(path)
    if format == "csv":
        text = table_to_csv(table)
    elif format == "json":
        text = json.dumps(table_to_dict(table), ensure_ascii=False, indent=1) + "\n"
    else:
        raise ValueError(f"unknown table format {format!r}")
    _write_text(path, text)
    return path


def read_table(path: str | os.PathLike) -> ResultTable:
    with open(path, encoding="utf-8") as fh:
        return table_from_dict(json.load(fh))


def samples_to_csv(evaluations: Sequence[Evaluation]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_COLUMNS)
    for ev in evaluations:
        for s in ev.samples:
            w.writerow([
                ev.feature, s.form_index, s.word, s.position, "_".join(s.context),
                repr(s.eta_minus), repr(s.eta_plus), "" if s.eta_neutral is None else repr(s.eta_neutral),
            ])
    return buf.getvalue()


def read_samples(path: str | os.PathLike) -> dict[str, list[surprisal.SurprisalSample]]:
    out: dict[str, list[surprisal.SurprisalSample]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(r["feature"], []).append(surprisal.SurprisalSample(
                int(r["form_index"]), r["word"], int(r["position"]), tuple(r["context"].split("_")),
                float(r["eta_minus"]), float(r["eta_plus"]),
                float(r["eta_neutral"]) if r["eta_neutral"] else None,
            ))
    return out


# ---------------------------------------------------------------------------
# figures


def emit_boxplot(
    samples: Sequence[tuple[str, Sequence[float]]],
    title: str,
    path: str | os.PathLike,
    comparisons: Sequence[tuple[int, int, float]] | None = None,
    ylabel: str = "bits",
) -> Path:
    """Write an SVG box plot.

    Without explicit ``comparisons`` consecutive boxes are paired up
    (0 with 1, 2 with 3, ...) and compared with a Mann-Whitney test.
    """
    if not samples or any(len(v) == 0 for _, v in samples):
        raise EmptySamples("every box needs at least one value")
    if comparisons is None:
        comparisons = [
            (i, i + 1, surprisal.stats.mann_whitney_u(samples[i][1], samples[i + 1][1]).p_value)
            for i in range(0, len(samples) - 1, 2)
        ]
    path = Path(path)
    _write_text(path, svg.boxplot_svg(samples, title, comparisons, ylabel))
    return path


def contrast_figure(rows: Sequence[ContrastResult], title: str, path: str | os.PathLike) -> Path:
    """Two boxes per contrast (its two conditions) joined by a significance bracket."""
    boxes, comps = [], []
    for row in rows:
        a, b = row.samples
        if not a or not b:
            continue
        left, right = row.condition.split("/")
        comps.append((len(boxes), len(boxes) + 1, row.p_value))
        boxes += [(left, a), (right, b)]
    return emit_boxplot(boxes, title, path, comps, ylabel="feature surprisal (bits)")


def reduction_samples(row: ContrastResult) -> list[float]:
    """Per-position surprisal reduction (disharmonic minus harmonic) of a paired row."""
    a, b = row.samples
    return [y - x for x, y in zip(a, b)]


# ---------------------------------------------------------------------------
# pipeline


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (HarmonyError, OSError, ValueError, KeyError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    return {
        "vharmony": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def ingest(config: RunConfig) -> Lexicon:
    """Parse or generate the lexicon and apply preprocessing."""
    if config.synthetic is not None:
        lex = lexicon.generate_synthetic_lexicon(config.synthetic, config.seed)
        return lexicon.preprocess(lex)
    overrides = lexicon.load_overrides(config.overrides) if config.overrides else None
    parts = [lexicon.parse_wordlist(p, config.language, overrides) for p in config.inputs]
    if len(parts) == 1:
        lex = parts[0]
    else:
        forms = tuple(f for p in parts for f in p.forms)
        lex = Lexicon(forms, lexicon.build_inventory(forms, overrides), config.language, {"sources": list(config.inputs)})
    return lexicon.preprocess(lex)


def select_schemes(config: RunConfig, lex: Lexicon) -> list[HarmonyScheme]:
    if config.synthetic is not None and config.scheme_file is None:
        schemes = [synthetic_scheme(config.synthetic)]
    else:
        table = surprisal.load_schemes(config.scheme_file)
        schemes = surprisal.schemes_for(lex.language, sorted(lex.inventory.vowels), table)
    if config.features is not None:
        schemes = [s for s in schemes if s.feature in config.features]
        if not schemes:
            raise ValueError(f"no scheme for features {config.features} in {lex.language}")
    return schemes


def analyze(
    model: TrainedModel,
    test_forms: Sequence,
    schemes: Sequence[HarmonyScheme],
    exact_max_n: int = surprisal.stats.WILCOXON_EXACT_MAX_N,
    exact_max_product: int = surprisal.stats.MANN_WHITNEY_EXACT_MAX_PRODUCT,
) -> tuple[list[Evaluation], list[ContrastResult]]:
    evaluations = [surprisal.evaluate_testset(model, test_forms, s) for s in schemes]
    rows = surprisal.compute_contrasts(
        [(s, ev.samples) for s, ev in zip(schemes, evaluations)], exact_max_n, exact_max_product
    )
    return evaluations, rows


@dataclass
class RunResult:
    table: ResultTable
    model: TrainedModel
    split: DatasetSplit
    evaluations: list[Evaluation]
    schemes: list[HarmonyScheme]
    output_dir: Path
    files: dict[str, str]


def run_pipeline(config: RunConfig) -> RunResult:
    """Ingest, train, evaluate and test one language; write every artifact.

    Any failure is re-raised as StageError carrying the stage name.
    """
    with stage("config"):
        config.validate()
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
    with stage("ingest"):
        lex = ingest(config)
    with stage("split"):
        split = lexicon.split_dataset(lex, config.seed, config.ratios)
    with stage("schemes"):
        schemes = select_schemes(config, lex)
    with stage("train"):
        model = plm.train(split, lex.inventory, config.training)
        model.metadata.update({
            "language": lex.language,
            "split_seed": config.seed,
            "ratios": list(config.ratios),
            "n_forms": len(lex),
        })
    with stage("evaluate"):
        evaluations, rows = analyze(model, split.test, schemes, config.exact_max_n, config.exact_max_product)
    table = ResultTable(rows, lex.language, config.seed)

    files: dict[str, Path] = {}
    with stage("write"):
        files["results.csv"] = emit_table(table, out / "results.csv", "csv")
        files["results.json"] = emit_table(table, out / "results.json", "json")
        files["samples.csv"] = out / "samples.csv"
        _write_text(files["samples.csv"], samples_to_csv(evaluations))
        files["model.bin"] = out / "model.bin"
        plm.save_model(model, files["model.bin"])
    if config.figures:
        with stage("figures"):
            for scheme in schemes:
                paired = [r for r in rows if r.feature == scheme.feature and r.kind == "paired"]
                if paired:
                    name = f"figure_{scheme.feature}.svg"
                    files[name] = contrast_figure(paired, f"{lex.language} {scheme.feature}", out / name)
    with stage("manifest"):
        manifest = {
            "language": lex.language,
            "seed": config.seed,
            "config": config.to_dict(),
            "versions": versions(),
            "inputs": {p: sha256_file(p) for p in config.inputs},
            "schemes": [s.to_dict() for s in schemes],
            "counts": {
                "forms_raw": lex.metadata.get("n_raw", len(lex)),
                "forms": len(lex),
                "train": len(split.train),
                "valid": len(split.valid),
                "test": len(split.test),
                "test_skipped": {ev.feature: len(ev.skipped) for ev in evaluations},
                "samples": {ev.feature: len(ev.samples) for ev in evaluations},
            },
            "training": {"best_epoch": model.best_epoch, "epochs_run": len(model.history)},
            "outputs": {name: sha256_file(p) for name, p in sorted(files.items())},
        }
        _write_text(out / "manifest.json", json.dumps(manifest, ensure_ascii=False, indent=1, sort_keys=True) + "\n")
    return RunResult(table, model, split, evaluations, schemes, out, {k: str(v) for k, v in files.items()})


def run_batch(manifest_path: str | os.PathLike, output_dir: str | os.PathLike) -> dict:
    """Run every language listed in a batch file, each in its own directory.

    The batch file is JSON: ``{"defaults": {...}, "runs": [{"language": ...}, ...]}``
    where entries hold RunConfig fields.  A failing run is recorded and the
    rest continue.
    """
    with open(manifest_path, encoding="utf-8") as fh:
        spec = json.load(fh)
    defaults = spec.get("defaults", {})
    out = Path(output_dir)
    summary: dict = {"runs": {}}
    reductions = []
    for entry in spec["runs"]:
        merged = {**defaults, **entry}
        if "training" in defaults and "training" in entry:
            merged["training"] = {**defaults["training"], **entry["training"]}
        merged["output_dir"] = str(out / merged["language"])
        if not merged.get("inputs") and merged.get("synthetic") is None:
            found = default_wordlist()
            merged["inputs"] = [str(found)] if found else []
        try:
            result = run_pipeline(RunConfig.from_dict(merged))
        except StageError as exc:
            log.error("%s: %s", merged["language"], exc)
            summary["runs"][merged["language"]] = {"status": "failed", "stage": exc.stage, "error": str(exc)}
            continue
        summary["runs"][merged["language"]] = {"status": "ok", "rows": len(result.table)}
        combined = [r for r in result.table.rows if r.condition.endswith("_h/dish")]
        if combined:
            reductions.append((result.table.language, reduction_samples(combined[0])))
    out.mkdir(parents=True, exist_ok=True)
    if reductions:
        emit_boxplot(reductions, "surprisal reduction", out / "figure_reduction.svg", comparisons=[])
    _write_text(out / "batch.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary
