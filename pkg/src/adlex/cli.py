"""Command-line entry point: ``adlex <subcommand> ...``.

Exit codes: 0 success, 1 usage or validation error, 2 runtime error.
Outputs are written to a temporary file and renamed into place, so a failed
run never leaves a partial artifact behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

from . import chat, corpus, divergence, lime, markers, textstats, trainer
from .errors import AdlexError, ConfigError, NoArtifacts, UsageError
from .model import ModelConfig, load_model, save_model
from .tensor import make_rng

log = logging.getLogger("adlex")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


# --------------------------------------------------------------------------- run configuration

# key -> (type, default); schedule keys default to None meaning "per-model protocol default"
CONFIG_KEYS: dict[str, tuple[type, Any]] = {
    "alpha": (float, 0.1),            # weight of the severity loss in the joint objective
    "alpha_d": (float, 0.2),          # Jelinek-Mercer mixing weight
    "alpha_level": (float, 0.05),     # significance level after BH adjustment
    "t_test": (str, "student"),
    "min_doc_freq": (int, 5),
    "d": (int, 16),                   # embedding width
    "k": (int, 0),                    # co-attention hidden size; 0 -> d // 2
    "context": (str, "mean"),
    "hidden": (int, 128),
    "dropout": (float, 0.4),
    "max_len": (int, 256),
    "cv_folds": (int, 10),
    "cv_repeats": (int, 3),
    "val_frac": (float, 0.2),
    "phase1_lr": (float, None),
    "phase2_lr": (float, None),
    "es_patience_phase1": (int, None),
    "es_patience_phase2": (int, None),
    "rlrop_factor": (float, None),
    "rlrop_patience": (int, None),
    "max_epochs": (int, None),
    "batch_size": (int, None),
    "lime_samples": (int, lime.DEFAULT_SAMPLES),
    "lime_features": (int, lime.DEFAULT_KEEP),
    "kernel_width": (float, lime.DEFAULT_WIDTH),
    "ridge": (float, lime.DEFAULT_RIDGE),
}
SCHEDULE_KEYS = ("phase1_lr", "phase2_lr", "es_patience_phase1", "es_patience_phase2", "rlrop_factor",
                 "rlrop_patience", "max_epochs", "batch_size")


@dataclasses.dataclass
class RunConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: d for k, (_, d) in CONFIG_KEYS.items()})

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        """``key = value`` lines; ``#`` starts a comment; unknown keys and bad values are rejected."""
        cfg = cls.defaults()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{source}:{n}: unknown key {key!r}")
            typ = CONFIG_KEYS[key][0]
            try:
                cfg.values[key] = typ(value)
            except ValueError:
                raise ConfigError(f"{source}:{n}: {key} expects {typ.__name__}, got {value!r}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls.defaults()
        return cls.parse(Path(path).read_text(encoding="utf-8"), str(path))

    def validate(self) -> None:
        v = self.values
        checks = [
            (0.0 <= v["alpha"] <= 1.0, "alpha must lie in [0, 1]"),
            (0.0 <= v["alpha_d"] <= 1.0, "alpha_d must lie in [0, 1]"),
            (0.0 < v["alpha_level"] < 1.0, "alpha_level must lie in (0, 1)"),
            (v["t_test"] in ("student", "welch"), "t_test must be student or welch"),
            (v["min_doc_freq"] >= 1, "min_doc_freq must be at least 1"),
            (v["k"] >= 0, "k must be non-negative"),
            (v["cv_folds"] >= 2 and v["cv_repeats"] >= 1, "need cv_folds >= 2 and cv_repeats >= 1"),
            (0.0 < v["val_frac"] < 1.0, "val_frac must lie in (0, 1)"),
            (v["lime_samples"] >= 2 and v["lime_features"] >= 1, "lime_samples >= 2 and lime_features >= 1"),
            (v["kernel_width"] > 0 and v["ridge"] >= 0, "kernel_width > 0 and ridge >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.model_config("stl")
            self.schedule("stl")
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def model_config(self, kind: str) -> ModelConfig:
        v = self.values
        return ModelConfig(kind=kind, embed_dim=v["d"], attn_hidden=v["k"] or None, context=v["context"],
                           max_len=v["max_len"], dropout=v["dropout"], hidden=v["hidden"])

    def schedule(self, kind: str) -> trainer.TrainSchedule:
        overrides = {k: self.values[k] for k in SCHEDULE_KEYS if self.values[k] is not None}
        return trainer.TrainSchedule.for_kind(kind, **overrides)


# --------------------------------------------------------------------------- io helpers

def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, dump_json(obj))


def read_dataset(path) -> corpus.Dataset:
    return corpus.Dataset.read(path)


# --------------------------------------------------------------------------- subcommands

def cmd_parse(args) -> None:
    doc = chat.parse_chat(Path(args.file).read_text(encoding="utf-8"))
    utts = chat.participant_utterances(doc, args.speaker)
    out = {"artifact": "parse", "file": Path(args.file).name, "speaker": args.speaker,
           "utterances": [{"raw": u, "tokens": chat.clean_utterance(u)} for u in utts]}
    out["tokens"] = [t for u in out["utterances"] for t in u["tokens"]]
    _emit(args.out, dump_json(out))


def cmd_load(args) -> None:
    ds = corpus.load_corpus(args.root, args.labels, args.speaker)
    atomic_write(args.out, ds.to_jsonl())
    log.info("loaded %d transcripts", len(ds))


def cmd_synth(args) -> None:
    ds = corpus.generate_synthetic(args.seed, args.n, args.profile)
    if args.cha_dir:
        corpus.write_chat_tree(ds, args.cha_dir, args.seed)
    atomic_write(args.out, ds.to_jsonl())


def cmd_stats(args) -> None:
    cfg = RunConfig.load(args.config)
    ds = read_dataset(args.data)
    variant = args.variant or cfg["t_test"]
    rows = textstats.compare_groups(ds, textstats.load_easy_words(args.easy_words), variant, cfg["alpha_level"])
    write_json(args.out, {"artifact": "stats", "variant": variant, "n_control": len(ds.by_label(corpus.CONTROL)),
                          "n_dementia": len(ds.by_label(corpus.DEMENTIA)), "rows": [r.to_json() for r in rows]})


def cmd_divergence(args) -> None:
    cfg = RunConfig.load(args.config)
    alpha_d = cfg["alpha_d"] if args.alpha is None else args.alpha
    if not 0.0 <= alpha_d <= 1.0:
        raise UsageError("--alpha must lie in [0, 1]")
    res = divergence.group_divergence(read_dataset(args.data), alpha_d)
    write_json(args.out, {"artifact": "divergence", "log_base": "e", **res})


def cmd_markers(args) -> None:
    cfg = RunConfig.load(args.config)
    ds = read_dataset(args.data)
    tags = markers.load_tag_sidecar(args.tags) if args.tags else None
    min_df = cfg["min_doc_freq"] if args.min_doc_freq is None else args.min_doc_freq
    kinds = ("unigram", "pos") if args.kind == "both" else (args.kind,)
    out: dict[str, Any] = {"artifact": "markers", "alpha_level": cfg["alpha_level"], "min_doc_freq": min_df}
    for kind in kinds:
        fm = markers.feature_matrix(ds, kind, min_df, tags)
        results = markers.correlate_columns(fm, kind)
        out[kind] = {"excluded": list(fm.excluded), "n_features": len(fm.features),
                     "significant": [m.to_json() for m in results if m.p_adjusted < cfg["alpha_level"]]}
    write_json(args.out, out)


def _final_split(ds: corpus.Dataset, val_frac: float, seed: int):
    rng = make_rng(seed, "final-split")
    return corpus._stratified_val([(t.id, t.label) for t in ds], val_frac, rng)


def cmd_train(args) -> None:
    cfg = RunConfig.load(args.config)
    ds = read_dataset(args.data)
    mcfg = cfg.model_config(args.model)
    schedule = cfg.schedule(args.model)
    k = args.folds or cfg["cv_folds"]
    repeats = args.repeats or cfg["cv_repeats"]
    plan = corpus.stratified_cv(ds, k, repeats, cfg["val_frac"], args.seed)
    report = trainer.cross_validate(ds, mcfg, schedule, plan, args.seed, cfg["alpha"], args.jobs)
    out = {"artifact": "train", **report.to_json()}
    if args.save_model:
        train_ids, val_ids = _final_split(ds, cfg["val_frac"], args.seed)
        model, result = trainer.train_model(ds, train_ids, val_ids, mcfg, schedule, args.seed, cfg["alpha"])
        save_model(args.save_model, model, {"seed": args.seed, "epochs": result.epochs})
    write_json(args.out, out)


def cmd_explain(args) -> None:
    cfg = RunConfig.load(args.config)
    ds = read_dataset(args.data)
    matches = [t for t in ds if t.id == args.id]
    if not matches:
        raise UsageError(f"no transcript with id {args.id!r} in {args.data}")
    model = load_model(args.model)
    samples = args.samples or cfg["lime_samples"]
    expl = lime.explain(model, matches[0].tokens, args.seed, samples, args.id, cfg["kernel_width"],
                        cfg["lime_features"], cfg["ridge"])
    obj = {"artifact": "explain", **expl.to_json()}
    if args.html:
        atomic_write(args.html, expl.to_html())
    write_json(args.out, obj)


# --------------------------------------------------------------------------- report

def _fmt(x: float, digits: int = 3) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return f"{x:.{digits}f}"


def _fmt_p(p: float) -> str:
    return f"{p:.2e}" if p < 1e-3 else f"{p:.4f}"


def collect_artifacts(directory) -> dict[str, list[tuple[str, dict]]]:
    found: dict[str, list[tuple[str, dict]]] = {}
    for path in sorted(Path(directory).glob("*.json")):
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            log.warning("skipping unreadable %s", path.name)
            continue
        if isinstance(obj, dict) and obj.get("artifact") in ("stats", "divergence", "markers", "train"):
            found.setdefault(obj["artifact"], []).append((path.name, obj))
    return found


def build_report(found: dict[str, list[tuple[str, dict]]]) -> tuple[str, dict]:
    lines = ["# adlex report", ""]
    summary: dict[str, Any] = {}
    for name, obj in found.get("stats", []):
        lines += [f"## Lexical statistics ({name})", "",
                  f"Control n = {obj['n_control']}, dementia n = {obj['n_dementia']}, {obj['variant']} t-test, "
                  "p adjusted with Benjamini-Hochberg.", "",
                  "| Metric | Control mean (SD) | Dementia mean (SD) | t | p | p adj. |",
                  "|---|---|---|---|---|---|"]
        for r in obj["rows"]:
            star = "*" if r["significant"] else ""
            lines.append(f"| {r['metric_name']} | {_fmt(r['control_mean'], 2)} ({_fmt(r['control_std'], 2)}) "
                         f"| {_fmt(r['dementia_mean'], 2)} ({_fmt(r['dementia_std'], 2)}) | {_fmt(r['t'])} "
                         f"| {_fmt_p(r['p'])} | {_fmt_p(r['p_adjusted'])}{star} |")
        lines.append("")
        summary.setdefault("stats", {})[name] = obj["rows"]
    for name, obj in found.get("divergence", []):
        lines += [f"## Vocabulary overlap ({name})", "", "| Groups | Jaccard index |", "|---|---|",
                  f"| control vs dementia | {_fmt(obj['jaccard'], 4)} |", ""]
        lines += [f"## KL divergence ({name})", "", f"Jelinek-Mercer smoothing, alpha_D = {obj['alpha_d']}, natural log.",
                  "", "| Direction | KL |", "|---|---|",
                  f"| control -> dementia | {_fmt(obj['kl_cd'], 4)} |",
                  f"| dementia -> control | {_fmt(obj['kl_dc'], 4)} |", ""]
        summary.setdefault("divergence", {})[name] = {k: obj[k] for k in ("jaccard", "kl_cd", "kl_dc", "alpha_d")}
    for name, obj in found.get("markers", []):
        lines += [f"## Linguistic markers ({name})", "",
                  f"Point-biserial r against the dementia label, BH-adjusted p < {obj['alpha_level']}.", ""]
        for kind in ("unigram", "pos"):
            if kind not in obj:
                continue
            sig = obj[kind]["significant"]
            lines += [f"### {kind}", ""]
            for side in ("control", "dementia"):
                rows = [m for m in sig if m["direction"] == side]
                lines += [f"{side}-side:", "", "| Feature | r | p adj. |", "|---|---|---|"]
                lines += [f"| {m['feature']} | {_fmt(m['r'])} | {_fmt_p(m['p_adjusted'])} |" for m in rows]
                lines.append("")
        summary.setdefault("markers", {})[name] = {k: obj[k]["significant"] for k in ("unigram", "pos") if k in obj}
    if found.get("train"):
        lines += ["## Classification", "", "Mean (SD) over cross-validation folds; dementia is the positive class.", "",
                  "| Run | Model | Folds | " + " | ".join(n.capitalize() for n in trainer.METRIC_NAMES) + " |",
                  "|---|---|---|" + "---|" * len(trainer.METRIC_NAMES)]
        for name, obj in found["train"]:
            agg = obj["aggregate"]
            cells = [f"{100 * agg[m]['mean']:.2f} ({100 * agg[m]['std']:.2f})" for m in trainer.METRIC_NAMES]
            lines.append(f"| {name} | {obj['config']['model']['kind']} | {len(obj['folds'])} | " + " | ".join(cells) + " |")
            summary.setdefault("train", {})[name] = {"model": obj["config"]["model"]["kind"], "aggregate": agg}
        lines.append("")
    return "\n".join(lines).rstrip() + "\n", summary


def cmd_report(args) -> None:
    found = collect_artifacts(args.dir)
    if not found:
        raise NoArtifacts(f"no stats, divergence, markers or train artifacts in {args.dir}")
    md, summary = build_report(found)
    out = Path(args.out)
    atomic_write(out, md)
    write_json(out.with_suffix(".json"), {"artifact": "report", "sections": sorted(summary), **summary})


def _emit(out, text: str) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------- argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adlex", description="Lexical and neural analysis of dementia picture-description transcripts.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("parse", help="clean one CHAT file and print its participant tokens")
    s.add_argument("file")
    s.add_argument("--speaker", default="PAR")
    s.add_argument("--out")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("load", help="load a directory of CHAT files into a JSONL corpus")
    s.add_argument("--root", required=True)
    s.add_argument("--labels", required=True, help="CSV with id,label,mmse columns")
    s.add_argument("--speaker", default="PAR")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_load)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n", type=int, required=True, help="transcripts per class")
    s.add_argument("--profile", default="default", choices=sorted(corpus.PROFILES))
    s.add_argument("--cha-dir", help="also write CHAT files and meta.csv here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("stats", help="per-group lexical statistics and t-tests")
    s.add_argument("--data", required=True)
    s.add_argument("--variant", choices=("student", "welch"))
    s.add_argument("--easy-words")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("divergence", help="Jaccard overlap and smoothed KL divergence between groups")
    s.add_argument("--data", required=True)
    s.add_argument("--alpha", type=float, help="Jelinek-Mercer mixing weight")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_divergence)

    s = sub.add_parser("markers", help="unigram and POS correlations with the dementia label")
    s.add_argument("--data", required=True)
    s.add_argument("--kind", choices=("unigram", "pos", "both"), default="both")
    s.add_argument("--min-doc-freq", type=int)
    s.add_argument("--tags", help="JSONL sidecar of externally produced POS tags")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_markers)

    s = sub.add_parser("train", help="cross-validate a classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True, choices=("stl", "siamese", "mtl", "mtl-de"))
    s.add_argument("--config")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--folds", type=int, help="override cv_folds")
    s.add_argument("--repeats", type=int, help="override cv_repeats")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--save-model", help="also fit one model on the whole corpus and checkpoint it here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("explain", help="LIME explanation of one transcript")
    s.add_argument("--model", required=True, help="checkpoint written by train --save-model")
    s.add_argument("--data", required=True)
    s.add_argument("--id", required=True)
    s.add_argument("--samples", type=int)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--config")
    s.add_argument("--html")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("report", help="render a Markdown and JSON summary of the artifacts in a directory")
    s.add_argument("--dir", required=True)
    s.add_argument("--out", required=True, help="Markdown path; the JSON summary goes next to it")
    s.set_defaults(func=cmd_report)
    return p


def configure_logging() -> None:
    level_name = os.environ.get("ADLEX_LOG", "warn").lower()
    if level_name not in LOG_LEVELS:
        raise UsageError(f"ADLEX_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    logging.basicConfig(level=LOG_LEVELS[level_name], format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        configure_logging()
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        args.func(args)
    except (AdlexError, ValueError, FileNotFoundError) as e:
        print(f"adlex: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"adlex: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
