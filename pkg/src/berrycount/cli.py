"""Command line entry point: ``berrycount <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error.
Failures print ``berrycount: error[<stage>]: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics
from .filters import FilterConfig, format_stage_report, run_pipeline
from .instancer import connected_components, format_components, parse_components
from .labelgen import extract_dots, synthesize_labels
from .pipeline import StageError, _stage, evaluate_mask, parse_config, parse_dims, run
from .raster import (decode_pgm, encode_pgm, read_dots, read_instance_map, read_semantic_mask,
                     write_dots, write_gray_image, write_instance_map, write_semantic_mask)
from .synth import PRESETS, format_scene_spec, generate_scene, parse_scene_spec, preset
from .tiler import extract, format_grid, parse_grid, plan_grid, stitch

EXIT_USAGE = 2
EXIT_DATA = 3


def _dims(v: str) -> tuple[int, int]:
    try:
        w, h = parse_dims(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {v!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"dimensions must be positive, got {v!r}")
    return w, h


def patch_name(i: int) -> str:
    return f"patch_{i:05d}.pgm"


def cmd_synth(args) -> None:
    with _stage("synth"):
        if args.spec:
            spec = parse_scene_spec(Path(args.spec).read_text())
        else:
            spec = preset(args.preset, seed=args.seed)
        scene = generate_scene(spec)
        mask = synthesize_labels(scene.instances, args.edge_width)
    with _stage("write"):
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_instance_map(out / "instances.pgm", scene.instances)
        write_semantic_mask(out / "mask.pgm", mask)
        write_dots(out / "dots.csv", scene.dots)
        write_gray_image(out / "image.pgm", scene.image)
        (out / "spec.txt").write_text(format_scene_spec(spec), newline="\n")
    print(f"{len(scene.dots)} berries -> {out}")


def cmd_labelgen(args) -> None:
    with _stage("labelgen"):
        inst = read_instance_map(args.instances)
        mask = synthesize_labels(inst, args.edge_width)
        write_semantic_mask(args.out, mask)
        if args.dots:
            write_dots(args.dots, extract_dots(inst))


def cmd_tile(args) -> None:
    with _stage("tile"):
        a, maxval = decode_pgm(Path(args.image).read_bytes())
        h, w = a.shape
        grid = plan_grid(w, h, args.patch[0], args.patch[1], args.overlap)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(extract(a, grid)):
            (out / patch_name(i)).write_bytes(encode_pgm(p, maxval))
        (out / "grid.txt").write_text(format_grid(grid), newline="\n")
    print(f"{len(grid)} patches -> {out}")


def cmd_stitch(args) -> None:
    with _stage("stitch"):
        grid = parse_grid(Path(args.grid).read_text())
        d = Path(args.patches)
        patches = [read_semantic_mask(d / patch_name(i)) for i in range(len(grid))]
        write_semantic_mask(args.out, stitch(patches, grid))


def cmd_components(args) -> None:
    with _stage("components"):
        comps = connected_components(read_semantic_mask(args.mask), threads=args.threads)
        Path(args.out).write_text(format_components(comps), newline="\n")
    print(f"{len(comps)} components")


def _filter_config(args) -> FilterConfig:
    try:
        return FilterConfig(args.axis, args.area, args.enclosure,
                            use_axis=not args.no_axis, use_area=not args.no_area, use_edge=not args.no_edge)
    except ValueError as e:
        raise StageError("filter", str(e), config_error=True) from None


def cmd_filter(args) -> None:
    cfg = _filter_config(args)
    with _stage("filter"):
        comps = parse_components(Path(args.components).read_text())
        result = run_pipeline(comps, cfg)
        if args.report:
            Path(args.report).write_text(format_stage_report(result), newline="\n")
        if args.out:
            Path(args.out).write_text(format_components(result.kept), newline="\n")
    print(f"kept {len(result.kept)} of {len(comps)}")


def cmd_evaluate(args) -> None:
    cfg = _filter_config(args)
    with _stage("input"):
        pred = read_semantic_mask(args.pred)
        ref = read_semantic_mask(args.ref) if args.ref else None
        dots = read_dots(args.dots)
    with _stage("evaluate"):
        if ref is not None and ref.shape != pred.shape:
            raise ValueError(f"reference mask {ref.width}x{ref.height} does not match prediction "
                             f"{pred.width}x{pred.height}")
    comps, filtered, report = evaluate_mask(pred, dots, ref, cfg, args.patch, args.r2_mode, args.threads)
    with _stage("write"):
        Path(args.out).write_text(metrics.format_report(report), newline="\n")
        if args.plot and report.fit is not None:
            svg, csv_text = metrics.emit_correlation_plot(report.records, report.fit)
            Path(args.plot).write_text(svg, encoding="utf-8", newline="\n")
        if args.counts:
            Path(args.counts).write_text(metrics.format_count_records(report.records), newline="\n")
    _summary(report)


def _summary(report) -> None:
    d = report.detection
    line = (f"P {metrics.percent(d.precision)} %  R {metrics.percent(d.recall)} %  "
            f"F1 {metrics.percent(d.f1)} %  ({d.tally.tp} of {d.tally.n_dots} dots, "
            f"{d.tally.n_components} components)")
    if report.fit is not None:
        line += f"  R2 {metrics.percent(report.fit.r_squared)} %"
    print(line)


def cmd_pipeline(args) -> None:
    with _stage("config"):
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text)
        if args.out_dir:
            cfg = replace(cfg, out_dir=args.out_dir)
    result = run(cfg, threads=args.threads)
    _summary(result.report)


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--axis", type=float, default=0.3, help="minimum a_min/a_maj (strict)")
    p.add_argument("--area", type=float, default=0.3, help="minimum area / circle area")
    p.add_argument("--enclosure", type=float, default=0.4, help="minimum edge enclosure")
    p.add_argument("--no-axis", action="store_true")
    p.add_argument("--no-area", action="store_true")
    p.add_argument("--no-edge", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="berrycount", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--preset", choices=sorted(PRESETS), default="vsp")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--spec", help="scene spec file (key=value), overrides --preset/--seed")
    p.add_argument("--edge-width", type=int, default=2)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("labelgen", help="instance map -> berry/edge/background mask")
    p.add_argument("--instances", required=True)
    p.add_argument("--edge-width", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--dots")
    p.set_defaults(func=cmd_labelgen)

    p = sub.add_parser("tile", help="cut a PGM into overlapping patches")
    p.add_argument("--image", required=True)
    p.add_argument("--patch", type=_dims, default=(432, 256))
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("stitch", help="majority-vote patch masks back into one mask")
    p.add_argument("--grid", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("components", help="berry components and descriptors")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_components)

    p = sub.add_parser("filter", help="Axis -> Area -> Edge post-processing")
    p.add_argument("--components", required=True)
    _add_filter_flags(p)
    p.add_argument("--report")
    p.add_argument("--out", help="kept components CSV")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("evaluate", help="IoU, P/R/F1 and per-patch R^2")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref")
    p.add_argument("--dots", required=True)
    p.add_argument("--patch", type=_dims, default=(432, 256))
    _add_filter_flags(p)
    p.add_argument("--r2-mode", choices=("ols", "identity"), default="ols")
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.add_argument("--counts")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage from one key=value config")
    p.add_argument("--config")
    p.add_argument("--out-dir", help="overrides out_dir from the config")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as e:
        print(f"berrycount: error[{e.stage}]: {e}", file=sys.stderr)
        return EXIT_USAGE if e.config_error else EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
