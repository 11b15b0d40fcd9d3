"""``heraldsim simulate|correlate|postselect|fit|report``

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 analysis error (fit divergence, undefined metric).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfg
from .analysis import fit_peak, postselect
from .errors import ConfigError, HeraldSimError, InvalidChannel, InvalidParam
from .report import Outputs, build_report, fit_dict, write_report
from .sequence import CycleRecords, run_experiment
from .timetag import PMT_CHANNELS, Channel, Histogram, cross_correlate, load_tags, save_tags

log = logging.getLogger("heraldsim")

TAGS_NAME = "tags.htag"
RECORDS_NAME = "records.csv"
CONFIG_ECHO = "config.resolved.toml"


def resolve_config(args) -> cfg.RunConfig:
    conf = cfg.load(args.config) if args.config else cfg.RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    return conf.replace(**overrides) if overrides else conf


def _channels(text: str) -> tuple[Channel, ...]:
    try:
        return tuple(Channel[c.strip()] for c in text.split(",") if c.strip())
    except KeyError as exc:
        raise InvalidChannel(f"unknown channel {exc.args[0]!r}") from None


def simulate(conf: cfg.RunConfig, out_dir=None, tags_name: str = TAGS_NAME, workers: int = 1) -> list[Path]:
    tags, records = run_experiment(
        conf.sequence, conf.source, conf.detector, conf.ion, conf.seed, workers=workers
    )
    log.info("simulated %d cycles, %d tags", len(records), len(tags))
    prov = conf.provenance()
    with Outputs(out_dir or conf.output_dir) as out:
        save_tags(tags, out.path(tags_name), prov)
        records.to_csv(out.path(RECORDS_NAME), prov)
        out.path(CONFIG_ECHO).write_text(f"# {prov}\n" + conf.dumps())
    return [Path(out.out_dir) / n for n in out.names]


def cmd_simulate(args) -> int:
    conf = resolve_config(args)
    name = TAGS_NAME if args.format == "htag" else "tags.csv"
    for p in simulate(conf, tags_name=name, workers=args.workers):
        print(p)
    return 0


def cmd_correlate(args) -> int:
    conf = resolve_config(args)
    c = conf.correlation
    bw = args.bin_width_ps if args.bin_width_ps is not None else c.bin_width_ps
    lo = args.t_min_ps if args.t_min_ps is not None else c.t_min_ps
    hi = args.t_max_ps if args.t_max_ps is not None else c.t_max_ps
    tags = load_tags(args.tags)
    hist = cross_correlate(tags, _channels(args.ch_a), _channels(args.ch_b), bw, lo, hi)
    with Outputs(conf.output_dir) as out:
        hist.to_csv(out.path(args.name), conf.provenance())
    print(Path(conf.output_dir) / args.name)
    return 0


def cmd_postselect(args) -> int:
    conf = resolve_config(args)
    tags = load_tags(args.tags)
    records = CycleRecords.from_csv(args.records)
    kept = postselect(tags, records)
    name = "tags_postselected" + (".csv" if str(args.tags).endswith(".csv") else ".htag")
    with Outputs(conf.output_dir) as out:
        save_tags(kept, out.path(name), conf.provenance())
    print(Path(conf.output_dir) / name)
    return 0


def cmd_fit(args) -> int:
    conf = resolve_config(args)
    hist = Histogram.from_csv(args.histogram)
    fit = fit_peak(hist)
    values = fit_dict(fit)
    text = "".join(f"{k} = {v:.6g}\n" for k, v in values.items())
    with Outputs(conf.output_dir) as out:
        out.path("fit.txt").write_text(f"# {conf.provenance()}\n" + text)
        out.path("fit.json").write_text(json.dumps(values, indent=2) + "\n")
    sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    conf = resolve_config(args)
    tags = load_tags(args.tags)
    records = CycleRecords.from_csv(args.records)
    report = build_report(tags, records, conf)
    with Outputs(conf.output_dir) as out:
        write_report(report, out, conf, figures=not args.no_figures)
    sys.stdout.write(report.comparison_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat dotted-key config file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="heraldsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a run")
    s.add_argument("--format", choices=("htag", "csv"), default="htag")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("correlate", parents=[common], help="cross-correlation histogram")
    s.add_argument("tags", type=Path)
    s.add_argument("--bin-width-ps", type=int)
    s.add_argument("--t-min-ps", type=int)
    s.add_argument("--t-max-ps", type=int)
    s.add_argument("--ch-a", default=Channel.APD854.name)
    s.add_argument("--ch-b", default=",".join(c.name for c in PMT_CHANNELS))
    s.add_argument("--name", default="histogram.csv")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("postselect", parents=[common], help="keep PMT tags of dark cycles")
    s.add_argument("tags", type=Path)
    s.add_argument("records", type=Path)
    s.set_defaults(func=cmd_postselect)

    s = sub.add_parser("fit", parents=[common], help="fit the coincidence peak")
    s.add_argument("histogram", type=Path)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("report", parents=[common], help="full analysis with figures")
    s.add_argument("tags", type=Path)
    s.add_argument("records", type=Path)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, InvalidParam, InvalidChannel) as exc:
        print(f"heraldsim: configuration error: {exc}", file=sys.stderr)
        return 2
    except HeraldSimError as exc:
        print(f"heraldsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
