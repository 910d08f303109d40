"""Cumulative effect of the Axis, Area and Edge filters on corrupted label masks.

Ideal w=2 masks are degraded with merges, dropped small berries, crescent
noise and Edge dilation, then filtered stage by stage. Prints pooled and
per-scene precision/recall after each stage.

    python3 scripts/filter_stages.py            # the benchmark scenes
    python3 scripts/filter_stages.py --merge 0.3 --crescents 40
"""
import argparse

import numpy as np

from berrycount.filters import STAGES, FilterConfig, run_pipeline
from berrycount.instancer import connected_components
from berrycount.labelgen import synthesize_labels
from berrycount.metrics import detection_metrics
from berrycount.synth import (BENCHMARK_CORRUPTION, BENCHMARK_SCENES, BENCHMARK_SEED_OFFSET, CorruptionSpec,
                              corrupt, generate_scene, preset)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--merge", type=float, default=BENCHMARK_CORRUPTION["merge_rate"])
    ap.add_argument("--drop", type=float, default=BENCHMARK_CORRUPTION["drop_below"])
    ap.add_argument("--crescents", type=int, default=BENCHMARK_CORRUPTION["crescent_noise"])
    ap.add_argument("--dilate", type=int, default=BENCHMARK_CORRUPTION["dilate_edge"])
    ap.add_argument("--width", type=int, default=2, help="Edge band width of the labels")
    ap.add_argument("--per-scene", action="store_true")
    args = ap.parse_args(argv)

    names = ["none", *STAGES]
    totals = np.zeros((len(names), 3), dtype=np.int64)
    for name, seed in BENCHMARK_SCENES:
        scene = generate_scene(preset(name, seed=seed), render=False)
        spec = CorruptionSpec(merge_rate=args.merge, drop_below=args.drop, crescent_noise=args.crescents,
                              dilate_edge=args.dilate, seed=BENCHMARK_SEED_OFFSET + seed)
        comps = connected_components(corrupt(synthesize_labels(scene.instances, args.width), scene.instances, spec))
        res = run_pipeline(comps, FilterConfig())
        for i, kept in enumerate([comps] + [s.kept for s in res.stages]):
            t = detection_metrics(kept, scene.dots).tally
            totals[i] += (t.n_components, t.tp, t.n_dots)
            if args.per_scene:
                print(f"{name}-{seed} {names[i]:>5}: {t.n_components:5d} comps, P {t.tp / max(t.n_components, 1):.4f}, "
                      f"R {t.tp / t.n_dots:.4f}")

    print("stage,components,precision,recall")
    for name, (n, tp, nd) in zip(names, totals):
        print(f"{name},{n},{tp / n:.4f},{tp / nd:.4f}")


if __name__ == "__main__":
    main()
