"""Per-patch manual versus predicted counts, with the least-squares R^2.

Runs the tiled pipeline (labels -> overlapping patches -> stitch -> components
-> filters) on preset scenes and pools the non-overlapping patch counts.
Optional corruption shows how R^2 degrades. Writes an SVG scatter and CSV.

    python3 scripts/count_correlation.py --out /tmp/corr --merge 0.1
"""
import argparse
import os

from berrycount.filters import run_pipeline
from berrycount.instancer import connected_components
from berrycount.labelgen import synthesize_labels
from berrycount.metrics import emit_correlation_plot, per_patch_counts, r_squared
from berrycount.synth import CorruptionSpec, corrupt, generate_scene, preset
from berrycount.tiler import extract, plan_grid, stitch


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", nargs="+", default=["vsp", "smph"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--width", type=int, default=2)
    ap.add_argument("--patch", type=int, nargs=2, default=[432, 256], metavar=("W", "H"))
    ap.add_argument("--overlap", type=float, default=0.5)
    ap.add_argument("--merge", type=float, default=0.0)
    ap.add_argument("--crescents", type=int, default=0)
    ap.add_argument("--out", help="directory for correlation.svg / counts.csv")
    args = ap.parse_args(argv)
    pw, ph = args.patch

    records = []
    for name in args.presets:
        for seed in args.seeds:
            scene = generate_scene(preset(name, seed=seed), render=False)
            mask = synthesize_labels(scene.instances, args.width)
            if args.merge or args.crescents:
                spec = CorruptionSpec(merge_rate=args.merge, crescent_noise=args.crescents, seed=seed)
                mask = corrupt(mask, scene.instances, spec)
            grid = plan_grid(mask.width, mask.height, pw, ph, args.overlap)
            mask = stitch(extract(mask, grid), grid, mask.width, mask.height)
            kept = run_pipeline(connected_components(mask)).kept
            recs = per_patch_counts(kept, scene.dots, pw, ph, mask.width, mask.height)
            fit = r_squared(recs)
            print(f"{name}-{seed}: {len(scene.dots)} dots, {len(kept)} kept, R^2 {fit.r_squared:.4f}")
            records += recs

    fit = r_squared(records)
    print(f"pooled over {len(records)} patches: y = {fit.slope:.4f} x + {fit.intercept:.4f}, "
          f"R^2 {fit.r_squared:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        svg, csv = emit_correlation_plot(records, fit)
        with open(os.path.join(args.out, "correlation.svg"), "w") as f:
            f.write(svg)
        with open(os.path.join(args.out, "counts.csv"), "w") as f:
            f.write(csv)


if __name__ == "__main__":
    main()
