"""Command-line entry point.

One subcommand per workflow.  Every option can also be preset in a
line-oriented ``key = value`` config file passed with ``--config``;
explicit flags win over the file, the file wins over defaults, and
unknown keys in the file are rejected.  All randomness flows from
``--seed``.  Exit codes: 0 success, 1 validation problem (bad usage,
bad inputs, bad files), 2 runtime failure.
"""

from __future__ import annotations

import os

# tiny per-step matrices: BLAS thread handoff costs more than it saves
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from typing import Callable, Optional

from . import baselines, corpus, metrics
from .corpus import FEMALE, MALE, NameRecord
from .lexicon import (SyllableLexicon, bundled_lexicon, canonical_segment,
                      load_lexicon_file, segment_all)
from .neural import backend
from .neural.checkpoint import (CheckpointBundle, CheckpointError,
                                load_checkpoint, save_checkpoint)
from .neural.model import ABLATION_VARIANTS
from .neural.training import (Predictor, TeacherPredictor, TrainConfig,
                              gradient_check, train, write_trace)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _label_name(gender: int) -> str:
    return "female" if gender == FEMALE else "male"


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class Option:
    key: str
    converter: Callable
    default: object
    help: str
    flag: Optional[str] = None       # e.g. "--no-pre" for store_false style
    store: Optional[object] = None   # value stored when the bare flag appears


_COMMON = [
    Option("seed", int, 0, "seed for every random choice"),
    Option("config", str, None, "key = value config file; flags override it"),
    Option("quiet", _parse_bool, False, "suppress the config banner and progress",
           flag="--quiet", store=True),
]

_TRAIN_OPTIONS = [
    Option("lexicon", str, None, "syllable inventory file (default: bundled)"),
    Option("d", int, 64, "encoder width"),
    Option("l_max", int, 3, "maximum syllable positions"),
    Option("batch_size", int, 128, "records per update"),
    Option("learning_rate", float, 1e-3, "adaptive-moment step size"),
    Option("epochs", int, 20, "training epochs"),
    Option("min_count", int, 1, "vocabulary frequency cutoff"),
    Option("tokenizer_mode", str, "syllable", "syllable or letter"),
    Option("use_pre", _parse_bool, True, "character prediction loss",
           flag="--no-pre", store=False),
    Option("use_name", _parse_bool, True, "teacher gender loss",
           flag="--no-name", store=False),
    Option("use_feature", _parse_bool, True, "feature distillation loss",
           flag="--no-feature", store=False),
    Option("use_response", _parse_bool, True, "response distillation loss",
           flag="--no-response", store=False),
    Option("distill_into_teacher", _parse_bool, False,
           "let distillation losses also push the teacher",
           flag="--distill-into-teacher", store=True),
]


def _train_config(ns: dict) -> TrainConfig:
    return TrainConfig(
        d=ns["d"], l_max=ns["l_max"], batch_size=ns["batch_size"],
        learning_rate=ns["learning_rate"], epochs=ns["epochs"],
        seed=ns["seed"], min_count=ns["min_count"],
        tokenizer_mode=ns["tokenizer_mode"],
        use_pre=ns["use_pre"], use_name=ns["use_name"],
        use_feature=ns["use_feature"], use_response=ns["use_response"],
        distill_into_teacher=ns["distill_into_teacher"],
    )


def _load_lexicon(ns: dict) -> SyllableLexicon:
    if ns.get("lexicon"):
        return load_lexicon_file(ns["lexicon"])
    return bundled_lexicon()


def _read_records(path, announce) -> list[NameRecord]:
    result = corpus.read_records(path)
    if result.rejects:
        announce(f"{path}: {len(result.rejects)} rejected rows "
                 f"(first: row {result.rejects[0].row}, {result.rejects[0].reason})")
    announce(f"{path}: {len(result.records)} records")
    return result.records


def _spec_from_json(path) -> corpus.SyntheticSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    chars = [corpus.SyntheticChar(c["char"], c["syllable"], float(c["female_prob"]))
             for c in raw["chars"]]
    length_dist = {int(k): float(v) for k, v in raw["length_dist"].items()}
    return corpus.SyntheticSpec(chars=chars, length_dist=length_dist,
                                count=int(raw.get("count", 0)))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_segment(ns: dict, announce) -> int:
    lex = _load_lexicon(ns)
    name = ns["name"].strip().lower()
    expected = ns["count"]
    canonical = canonical_segment(name, lex, expected_count=expected)
    if canonical is None:
        announce(f"{name!r}: no segmentation")
        return 0
    print(" ".join(canonical.parts))
    alternatives = segment_all(name, lex)
    if expected is not None:
        alternatives = [s for s in alternatives if len(s) == expected]
    for seg in sorted(alternatives, key=lambda s: s.parts):
        if seg != canonical:
            print(" ".join(seg.parts))
    return 0


def _cmd_ingest(ns: dict, announce) -> int:
    lex = _load_lexicon(ns)
    result = corpus.read_records(ns["data"])
    trainable = sum(
        1 for r in result.records
        if r.hanzi_given is not None
        and corpus.segment_record(r, lex) is not None
    )
    print(f"accepted {len(result.records)}")
    print(f"rejected {len(result.rejects)}")
    print(f"hanzi-aligned {trainable}")
    if ns["rejects"]:
        corpus.write_rejects(ns["rejects"], result.rejects)
        announce(f"rejects written to {ns['rejects']}")
    return 0


def _cmd_stats(ns: dict, announce) -> int:
    lex = _load_lexicon(ns)
    stats = corpus.build_statistics(corpus.stream_records(ns["data"]), lex)
    payload = {
        "rows_counted": stats.rows_counted,
        "rows_skipped": stats.rows_skipped,
        "pinyin_name_gender_counts": {
            " ".join(k): v for k, v in sorted(stats.pinyin_name_gender_counts.items())
        },
        "pinyin_to_hanzi_counts": {
            " ".join(k): dict(sorted(v.items()))
            for k, v in sorted(stats.pinyin_to_hanzi_counts.items())
        },
        "syllable_to_char_counts": {
            k: dict(sorted(v.items()))
            for k, v in sorted(stats.syllable_to_char_counts.items())
        },
    }
    with open(ns["out"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=1)
    print(f"rows {stats.rows_counted} skipped {stats.rows_skipped} "
          f"distinct-names {len(stats.pinyin_name_gender_counts)}")
    return 0


def _cmd_synth(ns: dict, announce) -> int:
    if ns["gen_config"]:
        spec = _spec_from_json(ns["gen_config"])
        if ns["count"] is not None:
            spec.count = ns["count"]
    else:
        count = ns["count"] if ns["count"] is not None else 5000
        if ns["kind"] == "overfit":
            spec = corpus.overfit_synthetic_spec(count)
        else:
            spec = corpus.default_synthetic_spec(count)
    corpus.write_records(ns["out"], corpus.iter_synthetic(spec, seed=ns["seed"]))
    announce(f"{spec.count} records written to {ns['out']}")
    return 0


def _cmd_train(ns: dict, announce) -> int:
    lex = _load_lexicon(ns)
    config = _train_config(ns)
    config.validate()
    records = _read_records(ns["data"], announce)
    val_records = _read_records(ns["val"], announce) if ns["val"] else None
    result = train(records, config, lex, val_records=val_records)
    if result.skipped_records:
        announce(f"skipped {result.skipped_records} untrainable records")
    bundle = CheckpointBundle(
        student=result.student, teacher=result.teacher,
        pinyin_vocab=result.pinyin_vocab, hanzi_vocab=result.hanzi_vocab,
        d=config.d, l_max=config.l_max, tokenizer_mode=config.tokenizer_mode,
    )
    save_checkpoint(ns["out"], bundle)
    if ns["trace"]:
        write_trace(ns["trace"], result.trace)
    last = result.trace[-1] if result.trace else None
    if last is not None:
        print(f"epochs {last.epoch} total {last.total:.4f} "
              f"best-epoch {result.best_epoch} "
              f"best-val-acc {result.best_val_accuracy:.4f}")
    announce(f"checkpoint written to {ns['out']}")
    return 0


def _predictions_for(records, predictor) -> list[metrics.PredictionRecord]:
    preds = []
    for record in records:
        label, _ = predictor.predict(record.pinyin_given)
        preds.append(metrics.PredictionRecord(record.pinyin_given, _label_name(label)))
    return preds


def _score_and_print(records, preds, out_path=None) -> None:
    truth = [(r.pinyin_given, r.gender) for r in records]
    cm = metrics.tally_confusion(truth, preds)
    report = metrics.compute_report(cm)
    print(metrics.format_report(report))
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerows(metrics.report_rows(report))


def _cmd_eval(ns: dict, announce) -> int:
    lex = _load_lexicon(ns)
    bundle = load_checkpoint(ns["checkpoint"])
    records = _read_records(ns["test"], announce)
    predictor = Predictor(bundle.student, bundle.pinyin_vocab, lex,
                          bundle.tokenizer_mode)
    preds = _predictions_for(records, predictor)
    if ns["preds_out"]:
        metrics.write_predictions(ns["preds_out"], preds)
    _score_and_print(records, preds, ns["out"])
    return 0


def _cmd_predict(ns: dict, announce) -> int:
    lex = _load_lexicon(ns)
    bundle = load_checkpoint(ns["checkpoint"])
    predictor = Predictor(bundle.student, bundle.pinyin_vocab, lex,
                          bundle.tokenizer_mode)
    if ns["name"]:
        label, p_female = predictor.predict(ns["name"])
        print(f"{ns['name'].strip().lower()},{_label_name(label)},{p_female:.6f}")
        return 0
    if not ns["data"]:
        raise UsageError("predict needs --name or --data")
    with open(ns["data"], "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "pinyin" not in reader.fieldnames:
            raise ValueError(f"{ns['data']}: expected a CSV with a pinyin column")
        names = [(row.get("pinyin") or "").strip().lower() for row in reader]
    preds = []
    for name in names:
        if not name:
            continue
        label, _ = predictor.predict(name)
        preds.append(metrics.PredictionRecord(name, _label_name(label)))
    if ns["out"]:
        metrics.write_predictions(ns["out"], preds)
        announce(f"{len(preds)} predictions written to {ns['out']}")
    else:
        print("pinyin,predicted")
        for pred in preds:
            print(f"{pred.name},{pred.predicted}")
    return 0


def _cmd_baseline(ns: dict, announce) -> int:
    lex = _load_lexicon(ns)
    method = ns["method"]
    test_records = _read_records(ns["test"], announce)
    preds: list[metrics.PredictionRecord] = []

    def emit(name: str, label_text: str) -> None:
        preds.append(metrics.PredictionRecord(name, label_text))

    if method == "freq":
        table = baselines.frequency_fit(_read_records(ns["train"], announce))
        for record in test_records:
            label_text, _ = baselines.frequency_predict(table, record.pinyin_given)
            emit(record.pinyin_given, label_text)
    elif method == "nb":
        model = baselines.nb_fit(_read_records(ns["train"], announce), lex,
                                 alpha=ns["alpha"])
        for record in test_records:
            seg = canonical_segment(record.pinyin_given, lex)
            syllables = list(seg.parts) if seg else list(record.pinyin_given)
            label, _ = baselines.nb_predict(model, syllables)
            emit(record.pinyin_given, _label_name(label))
    elif method == "cct":
        if ns["reports"]:
            reports = []
            with open(ns["reports"], "r", encoding="utf-8", newline="") as fh:
                reader = csv.DictReader(fh)
                needed = {"source", "pinyin", "gender"}
                if reader.fieldnames is None or not needed <= set(reader.fieldnames):
                    raise ValueError(f"{ns['reports']}: expected header source,pinyin,gender")
                for row in reader:
                    reports.append((int(row["source"]), row["pinyin"].strip().lower(),
                                    int(row["gender"])))
        else:
            train_records = _read_records(ns["train"], announce)
            reports = [(r.source_id if r.source_id is not None else 0,
                        r.pinyin_given, r.gender) for r in train_records]
        na_policy = FEMALE if ns["na_policy"] == "female" else MALE
        model = baselines.cct_fit(reports, na_policy=na_policy)
        announce(f"consensus over {len(model.consensus)} names, "
                 f"{len(model.competences)} sources, {model.iterations} iterations")
        for record in test_records:
            emit(record.pinyin_given, _label_name(baselines.cct_predict(model, record.pinyin_given)))
    elif method == "conversion":
        if not ns["checkpoint"]:
            raise UsageError("baseline conversion needs --checkpoint for the teacher")
        bundle = load_checkpoint(ns["checkpoint"])
        teacher = TeacherPredictor(bundle.teacher, bundle.hanzi_vocab)
        stats = corpus.build_statistics(
            iter(_read_records(ns["train"], announce)), lex)
        for record in test_records:
            seg = canonical_segment(record.pinyin_given, lex)
            if seg is None:
                emit(record.pinyin_given, "unknown")
                continue
            try:
                label = baselines.conversion_predict(stats, teacher, seg.parts)
            except baselines.UnknownSyllableError:
                emit(record.pinyin_given, "unknown")
                continue
            emit(record.pinyin_given, _label_name(label))
    else:
        raise UsageError(f"unknown baseline {method!r}")

    if ns["out"]:
        metrics.write_predictions(ns["out"], preds)
        announce(f"{len(preds)} predictions written to {ns['out']}")
    _score_and_print(test_records, preds, ns.get("report"))
    return 0


def _cmd_cv(ns: dict, announce) -> int:
    lex = _load_lexicon(ns)
    config = _train_config(ns)
    config.validate()
    records = _read_records(ns["data"], announce)
    folds = corpus.kfold_split(records, k=ns["k"], seed=ns["seed"])
    rows = []
    for i, held_out in enumerate(folds):
        train_part = [r for j, fold in enumerate(folds) if j != i for r in fold]
        result = train(train_part, config, lex)
        predictor = Predictor(result.student, result.pinyin_vocab, lex,
                              config.tokenizer_mode)
        preds = _predictions_for(held_out, predictor)
        cm = metrics.tally_confusion([(r.pinyin_given, r.gender) for r in held_out], preds)
        report = metrics.compute_prf(cm)
        rows.append((report.accuracy, report.precision, report.recall, report.f1))
        print(f"fold {i + 1}: acc {report.accuracy:.4f} P {report.precision:.4f} "
              f"R {report.recall:.4f} F1 {report.f1:.4f}")
    means = [sum(col) / len(rows) for col in zip(*rows)]
    print(f"mean: acc {means[0]:.4f} P {means[1]:.4f} R {means[2]:.4f} F1 {means[3]:.4f}")
    return 0


def _cmd_gradcheck(ns: dict, announce) -> int:
    from .neural.training import gradcheck_probe

    lex = _load_lexicon(ns)
    student, teacher, batch = gradcheck_probe(
        lex, seed=ns["seed"], d=ns["d"], batch_records=ns["batch_size"])
    if ns["variant"] != "all" and ns["variant"] not in ABLATION_VARIANTS:
        raise UsageError(
            f"variant must be all or one of {sorted(ABLATION_VARIANTS)}")
    variants = (ABLATION_VARIANTS if ns["variant"] == "all"
                else {ns["variant"]: ABLATION_VARIANTS[ns["variant"]]})
    announce(f"backend {backend.BACKEND}, batch {batch.size}, d {ns['d']}")
    failed = False
    for name, switches in variants.items():
        err = gradient_check(student, teacher, batch, switches,
                             eps=ns["eps"], max_coords=ns["coords"],
                             seed=ns["seed"])
        ok = err < 1e-3
        failed |= not ok
        print(f"{name}: max relative error {err:.3e} "
              f"[{'PASS' if ok else 'FAIL'}]")
    return 2 if failed else 0


def _cmd_import_preds(ns: dict, announce) -> int:
    result = metrics.import_predictions(ns["preds"])
    print(f"accepted {len(result.predictions)}")
    print(f"rejected {len(result.rejects)}")
    for reject in result.rejects[:10]:
        announce(f"row {reject.row}: {reject.reason}")
    if ns["truth"]:
        records = _read_records(ns["truth"], announce)
        _score_and_print(records, result.predictions, ns.get("report"))
    return 0


# ---------------------------------------------------------------------------
# Wiring
# ---------------------------------------------------------------------------

@dataclass
class Command:
    name: str
    func: Callable
    options: list[Option]
    positionals: list[tuple[str, dict]]
    help: str


_COMMANDS = [
    Command("segment", _cmd_segment,
            _COMMON + [
                Option("lexicon", str, None, "syllable inventory file"),
                Option("count", int, None, "require exactly this many syllables"),
            ],
            [("name", {"help": "romanized name to split"})],
            "split a pinyin name into syllables"),
    Command("ingest", _cmd_ingest,
            _COMMON + [
                Option("lexicon", str, None, "syllable inventory file"),
                Option("data", str, None, "records CSV to validate"),
                Option("rejects", str, None, "write rejected rows here"),
            ], [], "validate a records CSV"),
    Command("stats", _cmd_stats,
            _COMMON + [
                Option("lexicon", str, None, "syllable inventory file"),
                Option("data", str, None, "records CSV to stream"),
                Option("out", str, "stats.json", "statistics JSON output"),
            ], [], "stream co-occurrence statistics from a records CSV"),
    Command("synth", _cmd_synth,
            _COMMON + [
                Option("count", int, None, "records to generate"),
                Option("kind", str, "default", "default or overfit universe"),
                Option("gen_config", str, None, "generator spec JSON"),
                Option("out", str, "synthetic.csv", "records CSV output"),
            ], [], "generate a synthetic labeled corpus"),
    Command("train", _cmd_train,
            _COMMON + _TRAIN_OPTIONS + [
                Option("data", str, None, "training records CSV"),
                Option("val", str, None, "validation records CSV"),
                Option("out", str, "model.ckpt", "checkpoint output"),
                Option("trace", str, None, "per-epoch loss trace CSV"),
            ], [], "train the student and teacher jointly"),
    Command("eval", _cmd_eval,
            _COMMON + [
                Option("lexicon", str, None, "syllable inventory file"),
                Option("checkpoint", str, None, "trained checkpoint"),
                Option("test", str, None, "labeled records CSV"),
                Option("out", str, None, "metric,value CSV output"),
                Option("preds_out", str, None, "write predictions CSV here"),
            ], [], "score a checkpoint on labeled records"),
    Command("predict", _cmd_predict,
            _COMMON + [
                Option("lexicon", str, None, "syllable inventory file"),
                Option("checkpoint", str, None, "trained checkpoint"),
                Option("name", str, None, "one romanized name"),
                Option("data", str, None, "CSV with a pinyin column"),
                Option("out", str, None, "predictions CSV output"),
            ], [], "predict gender for names"),
    Command("baseline", _cmd_baseline,
            _COMMON + [
                Option("lexicon", str, None, "syllable inventory file"),
                Option("train", str, None, "training records CSV"),
                Option("test", str, None, "labeled records CSV"),
                Option("alpha", float, 1.0, "Laplace constant (nb)"),
                Option("na_policy", str, "male", "label for unseen names (cct)"),
                Option("reports", str, None, "source,pinyin,gender CSV (cct)"),
                Option("checkpoint", str, None, "teacher checkpoint (conversion)"),
                Option("out", str, None, "predictions CSV output"),
                Option("report", str, None, "metric,value CSV output"),
            ],
            [("method", {"choices": ["freq", "nb", "cct", "conversion"],
                         "help": "baseline to run"})],
            "fit and score a non-neural baseline"),
    Command("cv", _cmd_cv,
            _COMMON + _TRAIN_OPTIONS + [
                Option("data", str, None, "labeled records CSV"),
                Option("k", int, 5, "number of folds"),
            ], [], "k-fold cross validation of the neural model"),
    Command("gradcheck", _cmd_gradcheck,
            _COMMON + [
                Option("lexicon", str, None, "syllable inventory file"),
                Option("d", int, 32, "encoder width for the probe models"),
                Option("batch_size", int, 4, "records in the probe batch"),
                Option("eps", float, 1e-4, "finite difference step"),
                Option("coords", int, 1000, "coordinates sampled per variant"),
                Option("variant", str, "all", "all or one objective variant"),
            ], [], "verify gradients against central finite differences"),
    Command("import-preds", _cmd_import_preds,
            _COMMON + [
                Option("preds", str, None, "pinyin,predicted CSV"),
                Option("truth", str, None, "labeled records CSV to score against"),
                Option("report", str, None, "metric,value CSV output"),
            ], [], "import third-party predictions and optionally score them"),
]

_REQUIRED = {
    "ingest": ["data"],
    "stats": ["data"],
    "train": ["data"],
    "eval": ["checkpoint", "test"],
    "predict": ["checkpoint"],
    "baseline": ["train", "test"],
    "cv": ["data"],
    "import-preds": ["preds"],
}


def _build_parser() -> tuple[_Parser, dict[str, Command]]:
    parser = _Parser(prog="pinyingender",
                     description="gender inference for romanized Chinese given names")
    subparsers = parser.add_subparsers(dest="command", metavar="subcommand")
    by_name = {}
    for command in _COMMANDS:
        sub = subparsers.add_parser(command.name, help=command.help,
                                    description=command.help)
        for name, kwargs in command.positionals:
            sub.add_argument(name, **kwargs)
        for option in command.options:
            flag = option.flag or "--" + option.key.replace("_", "-")
            if option.store is not None:
                sub.add_argument(flag, dest=option.key, action="store_const",
                                 const=option.store, default=argparse.SUPPRESS,
                                 help=option.help)
            else:
                sub.add_argument(flag, dest=option.key, type=option.converter,
                                 default=argparse.SUPPRESS, help=option.help)
        by_name[command.name] = command
    return parser, by_name


def _read_config_file(path, command: Command) -> dict:
    allowed = {option.key: option for option in command.options}
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{number}: expected key = value")
            key, _, text = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in allowed:
                raise ValueError(f"{path}:{number}: unknown key {key!r}")
            values[key] = allowed[key].converter(text.strip())
    return values


def _merge(command: Command, parsed: dict) -> dict:
    merged = {option.key: option.default for option in command.options}
    config_path = parsed.get("config", merged.get("config"))
    if config_path:
        merged.update(_read_config_file(config_path, command))
    merged.update(parsed)
    return merged


def main(argv=None) -> int:
    parser, by_name = _build_parser()
    try:
        namespace = parser.parse_args(argv)
        if namespace.command is None:
            parser.print_usage(sys.stderr)
            return 1
        command = by_name[namespace.command]
        parsed = {k: v for k, v in vars(namespace).items() if k != "command"}
        ns = _merge(command, parsed)
        for key in _REQUIRED.get(command.name, []):
            if ns.get(key) is None:
                raise UsageError(f"{command.name} requires --{key.replace('_', '-')}")

        def announce(message: str) -> None:
            if not ns["quiet"]:
                print(message, file=sys.stderr)

        if not ns["quiet"]:
            print("# effective config", file=sys.stderr)
            for key in sorted(ns):
                print(f"# {key} = {ns[key]}", file=sys.stderr)
        return command.func(ns, announce)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, IsADirectoryError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
