"""Command line entry point: ``generate``, ``run`` and ``report``."""
import argparse
import csv
import json
import logging
import math
import os
import sys

from . import harness
from .errors import DPStreamError
from .streams import PRESETS, generate_hyperplane_stream, preset, write_stream_csv

LOG_ENV = "DPSTREAM_LOG_LEVEL"


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="dpstream", description="Private temporal ensembles on drifting streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic hyperplane stream as CSV")
    gen.add_argument("--preset", choices=sorted(PRESETS), required=True)
    gen.add_argument("--chunks", type=_positive_int, required=True)
    gen.add_argument("--chunk-size", type=_positive_int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    run = sub.add_parser("run", help="run an experiment from a key = value config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--jobs", type=_positive_int, default=1, help="worker processes for repeated runs")

    rep = sub.add_parser("report", help="summarise one or more result directories")
    rep.add_argument("--in", dest="inputs", action="append", required=True)
    rep.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _generate(args):
    chunks = generate_hyperplane_stream(preset(args.preset), args.chunks, args.chunk_size, args.seed)
    write_stream_csv(chunks, args.out)
    logging.getLogger(__name__).info("wrote %d chunks to %s", len(chunks), args.out)


def _run(args):
    configs = harness.load_config(args.config)
    harness.run_experiment(configs, out_dir=args.out, n_jobs=args.jobs)


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def _report(args):
    table = harness.report(args.inputs)
    columns = ["epsilon", "k", "method", "time", "metric", "mean", "stderr", "n_missing"]
    if args.format == "json":
        json.dump([{c: _jsonable(row[c]) for c in columns} for row in table], sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(columns)
        for row in table:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in columns)])


def main(argv=None):
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {"generate": _generate, "run": _run, "report": _report}
    try:
        handlers[args.command](args)
    except (DPStreamError, ValueError, OSError) as exc:
        print(f"dpstream {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
