"""Command line entry point: ``streamadapt {synth,pretrain,run,sweep,report}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import harness
from .engine import EPISMART, STRATEGIES, canonical_strategy
from .errors import InvalidConfigError, StreamAdaptError
from .signal import StreamSpec, synthesize, write_annotations, write_stream

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _load_spec(args) -> harness.ExperimentSpec:
    if args.config:
        try:
            spec = harness.ExperimentSpec.load(args.config)
        except (OSError, json.JSONDecodeError, TypeError, KeyError) as exc:
            raise InvalidConfigError(f"cannot read config {args.config}: {exc}") from exc
    else:
        strategies = args.strategy or [EPISMART]
        spec = harness.desk_benchmark([canonical_strategy(s) for s in strategies],
                                      hours=args.hours)
    if args.config and args.strategy:
        if len(args.strategy) != 1:
            raise InvalidConfigError("--strategy given with a config applies one strategy")
        s = canonical_strategy(args.strategy[0])
        spec.cells = [replace(c, cell_id=s if len(spec.cells) == 1 else f"{c.cell_id}_{s}",
                              engine=replace(c.engine, strategy=s)) for c in spec.cells]
    overrides = {}
    if args.tau_e is not None:
        overrides["tau_E"] = args.tau_e
    if args.tau_u is not None:
        overrides["tau_U"] = args.tau_u
    if overrides:
        spec.cells = [replace(c, engine=replace(c.engine, **overrides)) for c in spec.cells]
    if args.seed is not None:
        spec.seed_base = args.seed
    if args.repeats is not None:
        spec.repeats = args.repeats
    if args.out is not None:
        spec.out_dir = str(args.out)
    if args.checkpoint is not None:
        spec.checkpoint = str(args.checkpoint)
    spec.validate()
    return spec


def cmd_synth(args):
    spec = StreamSpec.from_dict(json.loads(Path(args.config).read_text())) if args.config \
        else harness.desk_subject_spec(args.hours, full_scale=args.full_scale)
    syn = synthesize(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stream(out / f"stream.{args.format}", syn.block)
    write_annotations(out / "annotations.tsv", syn.reference_events)
    write_annotations(out / "artifacts.tsv", syn.artifacts)
    print(f"wrote {out}/stream.{args.format}: {syn.block.n_samples} samples x "
          f"{syn.block.channels} channels, {len(syn.reference_events)} events")
    return EXIT_OK


def cmd_pretrain(args):
    out = Path(args.out) if args.out else harness.default_out_root() / "pretrained.ckpt"
    res = harness.pretrain_pool(args.subjects, seed=args.seed, out=out)
    print(f"wrote {out}: held-out window F1 {res.heldout_f1:.3f}, "
          f"{res.report.epochs_run} epochs")
    return EXIT_OK


def _print_report(out):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = harness.report(out)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    text = rep.format()
    if text:
        print(text)


def cmd_run(args):
    spec = _load_spec(args)
    outcomes = harness.run_experiment(spec)
    _print_report(spec.out_path)
    return EXIT_RUNTIME if any(o.error for o in outcomes) else EXIT_OK


def cmd_sweep(args):
    spec = _load_spec(args)
    outcomes = harness.sweep(spec.cells[0], _floats(args.tau_e_grid), _ints(args.tau_u_grid), spec)
    print(f"{len(outcomes)} runs; table in {spec.out_path / 'sweep.csv'}")
    return EXIT_RUNTIME if any(o.error for o in outcomes) else EXIT_OK


def cmd_report(args):
    _print_report(Path(args.dir) if args.dir else harness.default_out_root())
    return EXIT_OK


def _add_run_flags(p):
    p.add_argument("config", nargs="?", help="experiment JSON (default: desk benchmark)")
    p.add_argument("--strategy", action="append", help=f"one of {', '.join(STRATEGIES)}")
    p.add_argument("--tau-e", type=float)
    p.add_argument("--tau-u", type=int)
    p.add_argument("--seed", type=int, help="seed base; repeat k uses seed + k")
    p.add_argument("--repeats", type=int)
    p.add_argument("--hours", type=float, default=48.0)
    p.add_argument("--checkpoint")
    p.add_argument("--out")


def build_parser():
    ap = argparse.ArgumentParser(prog="streamadapt")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="write a synthetic stream and its annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="StreamSpec JSON")
    p.add_argument("--hours", type=float, default=48.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "bin"), default="bin")
    p.add_argument("--full-scale", action="store_true", help="18 channels at 256 Hz")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="train the starting model on a synthetic pool")
    p.add_argument("--subjects", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="run strategy cells")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over tau_E x tau_U")
    _add_run_flags(p)
    p.add_argument("--tau-e-grid", required=True)
    p.add_argument("--tau-u-grid", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate results in a directory")
    p.add_argument("dir", nargs="?")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StreamAdaptError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
