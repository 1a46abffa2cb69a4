"""Command line entry point.

    nndiag diagnose --model model.json --data data.json [--out report.json]
    nndiag corpus [--corpus manifest.json]

``diagnose`` exits 0 for a correct model, 2 when a symptom was found and 1
on usage or engine errors. ``corpus`` exits 0 iff every case passes.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from nndiag.corpus import ManifestError, format_results, run_corpus
from nndiag.datasets import DatasetError, load_or_generate_dataset
from nndiag.detectors import MonitorConfig
from nndiag.engine import SpecError
from nndiag.monitor import run_diagnosis
from nndiag.specio import dataset_spec_for, load_config, load_model_spec
from nndiag.tensor import ShapeError

log = logging.getLogger("nndiag")

EXIT_CM, EXIT_ERROR, EXIT_SYMPTOM = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("thresholds", "override single MonitorConfig values")
    for f in dataclasses.fields(MonitorConfig):
        kind = int if f.name in ("history_window", "max_param_layers") else float
        group.add_argument(_flag(f.name), dest=f"cfg_{f.name}", type=kind, metavar="X",
                           help=f"default {f.default}")
    p.add_argument("--config", help="JSON file with MonitorConfig values")


def _config(args) -> MonitorConfig:
    values = load_config(args.config).to_dict() if args.config else {}
    for f in dataclasses.fields(MonitorConfig):
        v = getattr(args, f"cfg_{f.name}")
        if v is not None:
            values[f.name] = v
    return MonitorConfig.from_dict(values)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nndiag", description="Diagnose training failures of small feed-forward networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    d = sub.add_parser("diagnose", help="train a model under the monitor and report the first symptom")
    d.add_argument("--model", required=True, help="model spec (JSON)")
    d.add_argument("--data", required=True, help="dataset spec (JSON) or CSV file")
    d.add_argument("--out", help="write the report here instead of stdout")
    d.add_argument("--seed", type=int, help="override the model seed")
    d.add_argument("--epochs", type=int, help="override the number of epochs")
    d.add_argument("--header", action="store_true", help="CSV input has a header row")
    d.add_argument("--label-cols", type=int, default=1, help="trailing CSV columns holding labels")
    d.add_argument("--explain", action="store_true", help="include the checker trace in the report")
    _add_threshold_flags(d)

    c = sub.add_parser("corpus", help="run every case of a corpus manifest")
    c.add_argument("--corpus", help="manifest JSON (default: the built-in corpus)")
    c.add_argument("--jobs", type=int, default=1, help="worker threads")
    _add_threshold_flags(c)
    return parser


def cmd_diagnose(args) -> int:
    spec = load_model_spec(args.model)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    if args.epochs is not None:
        if args.epochs < 1:
            raise SpecError("epochs", "epochs must be >= 1")
        spec = dataclasses.replace(spec, epochs=args.epochs)
    ds = dataset_spec_for(args.data)
    if ds.source is not None:
        ds = dataclasses.replace(ds, header=args.header, label_cols=args.label_cols)
    data = load_or_generate_dataset(ds)
    report = run_diagnosis(spec, data, _config(args), explain=args.explain)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    v = report.verdict
    log.info("%s", v.describe())
    if report.message is not None:
        log.info("%s", report.message.text)
    return EXIT_CM if report.is_correct else EXIT_SYMPTOM


def cmd_corpus(args) -> int:
    results = run_corpus(args.corpus, _config(args), jobs=max(1, args.jobs))
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    try:
        if args.command == "diagnose":
            return cmd_diagnose(args)
        return cmd_corpus(args)
    except (SpecError, DatasetError, ShapeError, ManifestError, ValueError, OSError) as exc:
        print(f"nndiag: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
