"""Command-line entry point: preprocess, run, evaluate, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gcode
from .metrics import (
    compare_detections,
    detections_from_log,
    merge,
    parameter_trajectory,
    plot_series,
    read_annotations,
    read_log,
    write_series_csv,
)
from .session import ConfigError, Session, SessionConfig, SessionError, load_config, render_markdown, report_from_dir

log = logging.getLogger("printloop")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _policy(args) -> gcode.CheckpointPolicy:
    if args.segments:
        granularity, segments, every = "per-segment", args.segments, 1
    elif args.every:
        granularity, segments, every = "every-n-layers", 1, args.every
    else:
        granularity, segments, every = "per-layer", 1, 1
    tower = None
    if args.purge_diameter:
        tower = gcode.PurgeTower(center=tuple(args.purge_center) if args.purge_center else None,
                                 diameter=args.purge_diameter, layer_height=args.purge_layer_height)
    return gcode.CheckpointPolicy(granularity, segments, every, tuple(args.park), args.capture_marker,
                                  purge_tower=tower)


def cmd_preprocess(args) -> int:
    src = Path(args.input)
    try:
        text = src.read_bytes().decode("utf-8")
        doc = gcode.parse(text)
        out_doc = gcode.inject_checkpoints(gcode.segment_layers(doc, _policy(args).k), _policy(args))
    except (OSError, UnicodeDecodeError, gcode.GcodeError, ValueError) as exc:
        print(f"preprocess: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.output) if args.output else src.with_name(src.stem + ".checkpointed.gcode")
    out.write_bytes(out_doc.serialize().encode("utf-8"))
    n = len(gcode.find_checkpoints(out_doc, args.capture_marker))
    print(f"{out}: {len(out_doc.layers)} layers, {n} checkpoints")
    return EXIT_OK


def _config(args) -> SessionConfig:
    target = None
    if args.sim:
        target = f"sim:{args.sim}"
    elif args.printer:
        target = args.printer
    overrides = dict(printer=target, backend=args.backend, out_dir=args.out, seed=args.seed,
                     max_checkpoints=args.max_checkpoints, part_description=args.part, material=args.material,
                     base_url=args.base_url, model=args.model, fixtures=args.fixtures, record=args.record)
    if args.config:
        return load_config(args.config, **overrides)
    if target is None:
        raise ConfigError("give --sim, --printer or --config")
    return SessionConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_run(args) -> int:
    try:
        config = _config(args)
        session = Session(config)
        result = session.run(resume=args.resume)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"run: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SessionError as exc:
        print(f"run: session aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    rep = result.report
    print(f"session {rep['session']}: {len(rep['checkpoints'])} checkpoints, {rep['commands_issued']} commands, "
          f"report in {result.out_dir / 'report.md'}")
    return result.exit_code


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    try:
        sets = read_annotations(args.annotations)
        experts = [s for s in sets.values() if s.role == "expert"]
        if args.annotator:
            experts = [s for s in experts if s.annotator == args.annotator]
        if not experts:
            raise ValueError("no expert annotations found")
        truth = experts[0] if len(experts) == 1 else merge(experts)
        records = read_log(args.log) if args.log else []
        if args.detections:
            det_sets = read_annotations(args.detections)
            if len(det_sets) != 1:
                raise ValueError("detections file must hold exactly one annotator")
            detected = next(iter(det_sets.values()))
        else:
            detected = detections_from_log(records)
        cm = compare_detections(detected, truth)
    except (OSError, ValueError) as exc:
        print(f"evaluate: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out.mkdir(parents=True, exist_ok=True)
    cm.write_tsv(out / "confusion.tsv")
    series = parameter_trajectory(records)
    write_series_csv(out / "trajectories.csv", series)
    if args.plots and series:
        plot_series(series, out / "plots")
    for r in cm.rows():
        if r["tp"] or r["fp"] or r["fn"]:
            p = "-" if r["precision"] is None else f"{r['precision']:.2f}"
            rc = "-" if r["recall"] is None else f"{r['recall']:.2f}"
            print(f"{r['mode']:24s} tp={r['tp']} fp={r['fp']} fn={r['fn']} tn={r['tn']} precision={p} recall={rc}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = report_from_dir(args.out)
    except (OSError, ValueError, KeyError) as exc:
        print(f"report: {exc}", file=sys.stderr)
        return EXIT_FAIL
    md = render_markdown(report)
    if args.json:
        print(json.dumps(report, indent=1, sort_keys=True, default=str))
    else:
        print(md)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="printloop", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("preprocess", help="inject pause/park/capture checkpoints into G-code")
    pp.add_argument("input")
    pp.add_argument("-o", "--output")
    g = pp.add_mutually_exclusive_group()
    g.add_argument("--per-layer", action="store_true", help="one checkpoint per layer (default)")
    g.add_argument("--segments", type=int, metavar="K", help="K checkpoints per layer")
    g.add_argument("--every", type=int, metavar="N", help="one checkpoint every N layers")
    pp.add_argument("--park", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"))
    pp.add_argument("--capture-marker", default="CAPTURE_CHECKPOINT")
    pp.add_argument("--purge-diameter", type=float, help="add a purge cylinder of this diameter (mm)")
    pp.add_argument("--purge-center", type=float, nargs=2, metavar=("X", "Y"))
    pp.add_argument("--purge-layer-height", type=float, default=0.35)
    pp.set_defaults(func=cmd_preprocess)

    pr = sub.add_parser("run", help="run a closed-loop session")
    tgt = pr.add_mutually_exclusive_group()
    tgt.add_argument("--sim", metavar="SCENARIO", help="bundled scenario name or scenario file")
    tgt.add_argument("--printer", metavar="URL", help="Moonraker-compatible base URL")
    pr.add_argument("--config", help="TOML session config")
    pr.add_argument("--backend", choices=("oracle", "remote", "fixtures"))
    pr.add_argument("--base-url", help="remote backend base URL")
    pr.add_argument("--model", help="remote backend model name")
    pr.add_argument("--fixtures", help="directory of recorded responses (fixtures backend)")
    pr.add_argument("--record", help="record remote responses into this directory")
    pr.add_argument("--part", help="part description given to the detector")
    pr.add_argument("--material")
    pr.add_argument("--out", help="output directory")
    pr.add_argument("--seed", type=int)
    pr.add_argument("--max-checkpoints", type=int)
    pr.add_argument("--resume", action="store_true", help="continue from the saved state in --out")
    pr.set_defaults(func=cmd_run)

    pe = sub.add_parser("evaluate", help="confusion matrices and parameter series")
    src = pe.add_mutually_exclusive_group(required=True)
    src.add_argument("--log", help="session log (JSON Lines)")
    src.add_argument("--detections", help="detections table (same format as annotations)")
    pe.add_argument("--annotations", required=True)
    pe.add_argument("--annotator", help="use only this expert")
    pe.add_argument("--out", default="eval")
    pe.add_argument("--plots", action="store_true", help="one chart per parameter series")
    pe.set_defaults(func=cmd_evaluate)

    pt = sub.add_parser("report", help="print the traceability report of a session directory")
    pt.add_argument("--out", required=True)
    pt.add_argument("--json", action="store_true")
    pt.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
