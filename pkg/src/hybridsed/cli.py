"""Command line entry point: ``hybrid-sed train|detect|label|evaluate|synth``."""

from __future__ import annotations

import argparse
import logging
import sys

from hybridsed.config import PipelineConfig, parse_value
from hybridsed.errors import DataError, NumericalError
from hybridsed.evaluation import MODES
from hybridsed.manifest import Manifest, parse_manifest
from hybridsed.synth import SynthSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("hybridsed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, out_required=True):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--jobs", type=int, help="worker threads; 0 means one per CPU")
    p.add_argument("--out", required=out_required, help="output path")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybrid-sed", description="Sound event detection with a hybrid "
                     "RBM/cRBM boundary detector and frame-classifier labeling.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a model bundle")
    p.add_argument("--weak", help="weak label TSV (filename<TAB>labels)")
    p.add_argument("--strong", help="strong label TSV (filename, onset, offset, label)")
    p.add_argument("--audio-dir", help="directory holding the clips")
    _common(p)

    p = sub.add_parser("detect", help="write event boundaries for a set of clips")
    p.add_argument("--bundle", required=True, help="model bundle directory")
    p.add_argument("--weak", help="weak label TSV listing the clips")
    p.add_argument("--strong", help="strong label TSV listing the clips")
    p.add_argument("--audio-dir", help="directory holding the clips")
    _common(p)

    p = sub.add_parser("label", help="attach class labels to detected boundaries")
    p.add_argument("--boundaries", required=True, help="boundary TSV from 'detect'")
    p.add_argument("--posteriors", action="append", default=[], metavar="DIR",
                   help="directory of <clip stem>.csv posterior files (repeat to vote)")
    p.add_argument("--bundle", help="bundle whose classifier provides posteriors")
    p.add_argument("--audio-dir", help="audio directory for classifier labeling")
    _common(p)

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--ref", required=True, help="reference TSV")
    p.add_argument("--pred", required=True, help="prediction TSV")
    p.add_argument("--mode", action="append", choices=list(MODES) + ["all"],
                   help="scoring mode (repeatable; default full)")
    _common(p, out_required=False)

    p = sub.add_parser("synth", help="generate a synthetic scene set")
    p.add_argument("--clips", type=int, default=20)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--events-per-clip", type=int, default=3)
    p.add_argument("--duration", type=float, default=10.0, help="clip length in seconds")
    p.add_argument("--snr", default="20", help="event-to-background SNR in dB, or 'inf'")
    _common(p)
    return parser


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = parse_value(value.strip())
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    return cfg.with_overrides(overrides) if overrides else cfg


def _manifest(args) -> Manifest:
    if not args.weak and not args.strong:
        raise UsageError("give --weak and/or --strong to list the clips")
    return parse_manifest(args.weak, args.strong, args.audio_dir)


def run(args) -> int:
    from hybridsed import pipeline

    cfg = _config(args)
    if args.command == "train":
        pipeline.cmd_train(_manifest(args), cfg, args.out)
    elif args.command == "detect":
        bundle = pipeline.load_bundle(args.bundle)
        pipeline.cmd_detect(_manifest(args), bundle, args.out, jobs=cfg.workers())
    elif args.command == "label":
        bundle = pipeline.load_bundle(args.bundle) if args.bundle else None
        pipeline.cmd_label(args.boundaries, args.out, args.posteriors, bundle, args.audio_dir,
                           jobs=cfg.workers())
    elif args.command == "evaluate":
        modes = args.mode or ["full"]
        if "all" in modes:
            modes = list(MODES)
        text = pipeline.cmd_evaluate(args.ref, args.pred, modes, cfg, args.out)
        sys.stdout.write(text)
    elif args.command == "synth":
        snr = parse_value(args.snr)
        if not isinstance(snr, (int, float)) or isinstance(snr, bool):
            raise UsageError(f"--snr expects a number or 'inf', got {args.snr!r}")
        extra = {} if args.seed is None else {"seed": args.seed}
        spec = SynthSpec(n_clips=args.clips, n_classes=args.classes,
                         events_per_clip=args.events_per_clip, duration_s=args.duration,
                         snr_db=float(snr), **extra)
        pipeline.cmd_synth(spec, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
