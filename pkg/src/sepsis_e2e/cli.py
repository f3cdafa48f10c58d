"""Command-line front end tying ingestion, preprocessing, training,
prediction, streaming, evaluation, and the statistics report together.

Configuration is a plain-text file of "key = value" lines with dotted
section prefixes (pipeline.completeness_threshold = 0.8). Every key has a
command-line override flag of the same name, plus --seed as a shorthand
that pins both the split seed and the training seed. All outputs are
deterministic given identical inputs, config, and seeds: no timestamps are
written anywhere.

Exit codes: 0 success, 1 usage or bad configuration, 2 data or file
errors, 3 numeric failure (non-finite loss or inputs).
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import evalstats, ingest, model, pipeline
from .errors import (
    BadDomainError,
    EmptyInputError,
    MalformedRowError,
    NonFiniteInputError,
    NonFiniteLossError,
    SepsisError,
)
from .rng import derive_seed, make_rng

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULTS = {
    "data_dir": "data",
    "schema_path": "",
    "output_dir": "out",
    "pipeline.completeness_threshold": 0.8,
    "pipeline.carry_fill_across_windows": True,
    "pipeline.append_mask_channels": False,
    "train.learning_rate": 7e-4,
    "train.epochs": 550,
    "train.batch_size": 32,
    "train.dropout_p": 0.5,
    "train.seed": 0,
    "train.threshold": 0.5,
    "train.pretrain": False,
    "train.pretrain_epochs": 50,
    "grid.learning_rates": "7e-4",
    "grid.epoch_counts": "550",
    "grid.selection": "sensitivity_plus_ppv",
    "grid.val_fraction": 0.25,
    "split.test_fraction": 0.2,
    "split.seed": 0,
    "stats.target_model": "End-to-End",
    "stats.tie_as_win": True,
}


class _UsageError(Exception):
    pass


def _coerce(key, raw):
    """Interpret an override string with the type of the key's default."""
    default = DEFAULTS[key]
    text = str(raw).strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise BadDomainError("%s expects a boolean, got %r" % (key, raw))
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise BadDomainError("%s expects a number, got %r" % (key, raw)) from None
    return text


def parse_config_text(text, source="<config>"):
    """Parse "key = value" lines; # comments and blank lines are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadDomainError("%s line %d: expected key = value" % (source, lineno))
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise BadDomainError("%s line %d: unknown key %r" % (source, lineno, key))
        out[key] = _coerce(key, value)
    return out


class RunConfig:
    """Resolved configuration: defaults, then config file, then flags."""

    def __init__(self, values):
        self.values = dict(DEFAULTS)
        self.values.update(values)

    def __getitem__(self, key):
        return self.values[key]

    def schema(self):
        if self["schema_path"]:
            return ingest.load_schema(self["schema_path"])
        return ingest.default_schema()

    def pipeline_config(self, schema):
        return pipeline.PipelineConfig(
            schema=schema,
            completeness_threshold=self["pipeline.completeness_threshold"],
            carry_fill_across_windows=self["pipeline.carry_fill_across_windows"],
            append_mask_channels=self["pipeline.append_mask_channels"],
        )

    def train_config(self):
        return model.TrainConfig(
            learning_rate=self["train.learning_rate"],
            epochs=self["train.epochs"],
            batch_size=self["train.batch_size"],
            dropout_p=self["train.dropout_p"],
            seed=self["train.seed"],
            threshold=self["train.threshold"],
        )

    def grid_spec(self):
        try:
            rates = [float(v) for v in str(self["grid.learning_rates"]).split(",") if v.strip()]
            epoch_counts = [int(v) for v in str(self["grid.epoch_counts"]).split(",") if v.strip()]
        except ValueError:
            raise BadDomainError("grid lists must be comma-separated numbers") from None
        return model.GridSpec(
            learning_rates=rates,
            epoch_counts=epoch_counts,
            selection=self["grid.selection"],
        )


def _float_text(value):
    """Full-precision decimal text for file output."""
    return repr(float(value))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(prog="sepsis-e2e", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p):
        p.add_argument("--config", required=True, help="path to key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override train.seed and split.seed")
        p.add_argument("--quiet", action="store_true", help="suppress informational output")
        for key in DEFAULTS:
            p.add_argument("--" + key, dest="set_" + key.replace(".", "__"),
                           default=argparse.SUPPRESS, metavar="VALUE",
                           help=argparse.SUPPRESS)

    p = sub.add_parser("preprocess", help="PSV directory to sample CSVs, stats, manifest")
    common(p)

    p = sub.add_parser("train", help="train a classifier from a sample CSV")
    common(p)
    p.add_argument("--samples", default=None, help="sample CSV (default OUTPUT_DIR/train.csv)")
    p.add_argument("--model-out", default=None, help="model file (default OUTPUT_DIR/model.bin)")

    p = sub.add_parser("grid-search", help="train each (lr, epochs) cell and report the best")
    common(p)
    p.add_argument("--samples", default=None, help="sample CSV (default OUTPUT_DIR/train.csv)")
    p.add_argument("--out", default=None, help="score table CSV (default OUTPUT_DIR/grid.csv)")

    p = sub.add_parser("predict", help="per-sample probabilities from a saved model")
    common(p)
    p.add_argument("--model", default=None, help="model file (default OUTPUT_DIR/model.bin)")
    p.add_argument("--samples", default=None, help="sample CSV (default OUTPUT_DIR/test.csv)")
    p.add_argument("--out", default=None, help="prediction CSV (default OUTPUT_DIR/predictions.csv)")

    p = sub.add_parser("stream", help="read PSV rows on stdin, print a line per emission")
    common(p)
    p.add_argument("--model", default=None, help="model file (default OUTPUT_DIR/model.bin)")
    p.add_argument("--norm-stats", default=None,
                   help="stats file (default OUTPUT_DIR/norm_stats.txt)")

    p = sub.add_parser("evaluate", help="confusion matrix and rates on a labeled sample CSV")
    common(p)
    p.add_argument("--model", default=None, help="model file (default OUTPUT_DIR/model.bin)")
    p.add_argument("--samples", default=None, help="sample CSV (default OUTPUT_DIR/test.csv)")
    p.add_argument("--out", default=None, help="report file (default OUTPUT_DIR/metrics.txt)")

    p = sub.add_parser("stats", help="win/loss, Friedman, and Wilcoxon report from a metric CSV")
    common(p)
    p.add_argument("--table", required=True, help="metric CSV: dataset,model,ppv,npv,accuracy,sensitivity,specificity")
    p.add_argument("--out", default=None, help="also write the report to this file")

    return parser


def _resolve_config(args):
    text = Path(args.config).read_text(encoding="utf-8")
    values = parse_config_text(text, source=args.config)
    for key in DEFAULTS:
        attr = "set_" + key.replace(".", "__")
        if hasattr(args, attr):
            values[key] = _coerce(key, getattr(args, attr))
    if args.seed is not None:
        values["train.seed"] = int(args.seed)
        values["split.seed"] = int(args.seed)
    return RunConfig(values)


def _say(args, message):
    if not args.quiet:
        print(message)


def _out_dir(cfg):
    path = Path(cfg["output_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _class_counts(samples):
    pos = sum(1 for s in samples if s.label == 1)
    return len(samples), pos, len(samples) - pos


def cmd_preprocess(args, cfg):
    schema = cfg.schema()
    pcfg = cfg.pipeline_config(schema)
    records = ingest.load_dataset(cfg["data_dir"], schema)
    if not records:
        raise EmptyInputError("no .psv files under %s" % cfg["data_dir"])
    train_recs, test_recs = ingest.split_patients(
        records, cfg["split.test_fraction"], cfg["split.seed"]
    )

    train_samples = [s for rec in train_recs for s in pipeline.downsample_training(rec, pcfg)]
    test_samples = []
    for rec in test_recs:
        state = pipeline.new_state(rec.patient_id, schema.d)
        for row in rec.rows:
            out = pipeline.stream_window_step(state, row, pcfg)
            if out is not None:
                test_samples.append(out)
    if not train_samples:
        raise EmptyInputError("no training samples reached the completeness threshold")

    stats = pipeline.fit_norm_stats(train_samples)
    train_norm = [pipeline.normalize(s, stats) for s in train_samples]
    test_norm = [pipeline.normalize(s, stats) for s in test_samples]

    out = _out_dir(cfg)
    pipeline.save_norm_stats(stats, schema, cfg["pipeline.completeness_threshold"],
                             out / "norm_stats.txt")
    pipeline.save_samples(train_norm, schema, out / "train.csv")
    pipeline.save_samples(test_norm, schema, out / "test.csv")

    tr = _class_counts(train_norm)
    te = _class_counts(test_norm)
    manifest = [
        "preprocessing manifest",
        "schema_hash %s  features %d" % (ingest.schema_hash(schema), schema.d),
        "patients total %d  train %d  test %d" % (len(records), len(train_recs), len(test_recs)),
        "",
        "%-8s %14s %16s %16s" % ("split", "total_samples", "sepsis_positive", "sepsis_negative"),
        "%-8s %14d %16d %16d" % ("train", tr[0], tr[1], tr[2]),
        "%-8s %14d %16d %16d" % ("test", te[0], te[1], te[2]),
        "",
        "completeness_threshold %s" % _float_text(cfg["pipeline.completeness_threshold"]),
        "carry_fill_across_windows %s" % cfg["pipeline.carry_fill_across_windows"],
        "append_mask_channels %s" % cfg["pipeline.append_mask_channels"],
        "split.test_fraction %s  split.seed %d" % (
            _float_text(cfg["split.test_fraction"]), cfg["split.seed"]),
    ]
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    _say(args, "\n".join(manifest))
    _say(args, "wrote %s, %s, %s, %s" % (out / "train.csv", out / "test.csv",
                                         out / "norm_stats.txt", out / "manifest.txt"))
    return EXIT_OK


def _load_samples_arg(args, cfg, schema, default_name):
    path = args.samples if args.samples else Path(cfg["output_dir"]) / default_name
    return pipeline.load_samples(path, schema), Path(path)


def cmd_train(args, cfg):
    schema = cfg.schema()
    samples, src = _load_samples_arg(args, cfg, schema, "train.csv")
    tcfg = cfg.train_config()
    append = cfg["pipeline.append_mask_channels"]
    encoder = None
    if cfg["train.pretrain"]:
        pre_cfg = replace(tcfg, epochs=cfg["train.pretrain_epochs"])
        encoder, pre_hist = model.pretrain_reconstruction(samples, pre_cfg,
                                                          append_mask_channels=append)
        _say(args, "pretrain: %d epochs, reconstruction loss %s -> %s" % (
            len(pre_hist.losses), _float_text(pre_hist.losses[0]), _float_text(pre_hist.losses[-1])))
    net, hist = model.train(samples, tcfg, append_mask_channels=append, encoder_init=encoder)

    out = _out_dir(cfg)
    model_path = Path(args.model_out) if args.model_out else out / "model.bin"
    model.save_model(net, model_path, schema_hash=ingest.schema_hash(schema),
                     norm_ref="norm_stats.txt")
    history_lines = ["epoch mean_loss"]
    history_lines += ["%d %s" % (i + 1, _float_text(v)) for i, v in enumerate(hist.losses)]
    (out / "train_history.txt").write_text("\n".join(history_lines) + "\n", encoding="utf-8")
    _say(args, "trained on %d samples from %s" % (len(samples), src))
    _say(args, "epoch 1 mean loss %s, epoch %d mean loss %s" % (
        _float_text(hist.losses[0]), len(hist.losses), _float_text(hist.losses[-1])))
    _say(args, "wrote %s and %s" % (model_path, out / "train_history.txt"))
    return EXIT_OK


def cmd_grid_search(args, cfg):
    schema = cfg.schema()
    samples, src = _load_samples_arg(args, cfg, schema, "train.csv")
    ids = sorted({s.patient_id for s in samples})
    if len(ids) < 2:
        raise BadDomainError("grid search needs at least 2 patients for a validation split")
    n_val = max(1, int(round(cfg["grid.val_fraction"] * len(ids))))
    if n_val >= len(ids):
        n_val = len(ids) - 1
    perm = make_rng(derive_seed(cfg["split.seed"], "grid-val")).permutation(len(ids))
    val_ids = {ids[i] for i in perm[:n_val]}
    train_part = [s for s in samples if s.patient_id not in val_ids]
    val_part = [s for s in samples if s.patient_id in val_ids]

    best_cfg, cells = model.grid_search(train_part, val_part, cfg.grid_spec(),
                                        cfg.train_config(),
                                        append_mask_channels=cfg["pipeline.append_mask_channels"])
    out = _out_dir(cfg)
    table_path = Path(args.out) if args.out else out / "grid.csv"
    lines = ["learning_rate,epochs,seed,sensitivity,ppv,score"]
    for c in cells:
        lines.append("%s,%d,%d,%s,%s,%s" % (
            _float_text(c.learning_rate), c.epochs, c.seed,
            _float_text(c.sensitivity), _float_text(c.ppv), _float_text(c.score)))
    table_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _say(args, "grid over %d cells (val: %d patients, %d samples)" % (
        len(cells), len(val_ids), len(val_part)))
    _say(args, "best: learning_rate %s epochs %d" % (
        _float_text(best_cfg.learning_rate), best_cfg.epochs))
    _say(args, "wrote %s" % table_path)
    return EXIT_OK


def _load_model_arg(args, cfg, schema):
    path = args.model if args.model else Path(cfg["output_dir"]) / "model.bin"
    return model.load_model(path, expected_schema_hash=ingest.schema_hash(schema))


def cmd_predict(args, cfg):
    schema = cfg.schema()
    samples, _ = _load_samples_arg(args, cfg, schema, "test.csv")
    net, _ = _load_model_arg(args, cfg, schema)
    threshold = cfg["train.threshold"]
    out = _out_dir(cfg)
    out_path = Path(args.out) if args.out else out / "predictions.csv"
    lines = ["patient_id,hour,probability,label"]
    for s in samples:
        prob, label = model.predict(net, s, threshold)
        lines.append("%s,%d,%s,%d" % (s.patient_id, s.hour, _float_text(prob), label))
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _say(args, "wrote %d predictions to %s" % (len(samples), out_path))
    return EXIT_OK


def cmd_stream(args, cfg):
    schema = cfg.schema()
    net, _ = _load_model_arg(args, cfg, schema)
    stats_path = Path(args.norm_stats) if args.norm_stats \
        else Path(cfg["output_dir"]) / "norm_stats.txt"
    stats, threshold = pipeline.load_norm_stats(stats_path, schema)
    pcfg = replace(cfg.pipeline_config(schema), completeness_threshold=threshold)
    predict_threshold = cfg["train.threshold"]

    state = pipeline.new_state("stdin", schema.d)
    row_number = 0
    for raw in sys.stdin:
        line = raw.strip()
        if not line:
            continue
        row_number += 1
        fields = line.split("|")
        if len(fields) == schema.d + 1:
            fields = fields[:-1]
        if len(fields) != schema.d:
            raise MalformedRowError(
                "stdin row %d: expected %d or %d fields, got %d"
                % (row_number, schema.d, schema.d + 1, len(fields))
            )
        values = []
        for name, cell in zip(schema.names, fields):
            cell = cell.strip()
            if cell == "" or cell == ingest.MISSING_TOKEN:
                values.append(None)
            else:
                try:
                    values.append(float(cell))
                except ValueError:
                    raise MalformedRowError(
                        "stdin row %d: bad value %r for %s" % (row_number, cell, name)
                    ) from None
        row = ingest.HourlyRow(hour=row_number, values=values, label=0)
        out = pipeline.stream_window_step(state, row, pcfg)
        if out is not None:
            norm = pipeline.normalize(out, stats)
            prob, label = model.predict(net, norm, predict_threshold)
            print("%d %.6f %d" % (out.hour, prob, label))
            sys.stdout.flush()
    return EXIT_OK


def _metrics_report(cm, rates):
    lines = [
        "samples %d" % cm.total,
        "tp %d  fp %d  fn %d  tn %d" % (cm.tp, cm.fp, cm.fn, cm.tn),
    ]
    for metric in evalstats.METRIC_NAMES:
        lines.append("%-12s %.4f" % (evalstats.METRIC_LABELS[metric], rates[metric]))
    return "\n".join(lines) + "\n"


def cmd_evaluate(args, cfg):
    schema = cfg.schema()
    samples, _ = _load_samples_arg(args, cfg, schema, "test.csv")
    net, _ = _load_model_arg(args, cfg, schema)
    threshold = cfg["train.threshold"]
    preds = [model.predict(net, s, threshold)[1] for s in samples]
    labels = [s.label for s in samples]
    cm = evalstats.confusion(preds, labels)
    report = _metrics_report(cm, evalstats.metrics(cm))
    out = _out_dir(cfg)
    out_path = Path(args.out) if args.out else out / "metrics.txt"
    out_path.write_text(report, encoding="utf-8")
    _say(args, report.rstrip("\n"))
    _say(args, "wrote %s" % out_path)
    return EXIT_OK


def cmd_stats(args, cfg):
    table = evalstats.load_metric_table(args.table)
    report = evalstats.stats_report(table, cfg["stats.target_model"],
                                    tie_as_win=cfg["stats.tie_as_win"])
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    if not args.quiet:
        print(report, end="")
    elif not args.out:
        print(report, end="")
    return EXIT_OK


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "grid-search": cmd_grid_search,
    "predict": cmd_predict,
    "stream": cmd_stream,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](args, cfg)
    except _UsageError as exc:
        print("sepsis-e2e: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except BadDomainError as exc:
        print("sepsis-e2e: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, NonFiniteInputError) as exc:
        print("sepsis-e2e: numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (SepsisError, OSError) as exc:
        print("sepsis-e2e: %s" % exc, file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
