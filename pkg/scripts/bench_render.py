"""Latency audit for the single-pass relighting render.

Times the five-output render (four shading components plus baked
visibility) across Gaussian counts and image sizes, splitting out
projection cost since interactive use amortizes it per camera pose.

    python scripts/bench_render.py
    python scripts/bench_render.py --sizes 128,256,512 --densities 20,80
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sunsplat import raster, shading, synth


def time_best(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return 1000.0 * best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="128,256", help="comma-separated image sides")
    ap.add_argument("--densities", default="20,79", help="comma-separated surfel densities")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=10)
    args = ap.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]
    densities = [float(d) for d in args.densities.split(",")]

    sun = synth.sun_direction(40.0, 50.0)
    print(f"{'gaussians':>10} {'size':>6} {'project':>9} {'relight':>9} {'total':>9}")
    for density in densities:
        for size in sizes:
            sb = synth.generate(
                synth.SynthSpec(density=density, image_size=size, n_cameras=1, seed=args.seed)
            )
            scene = sb.scene
            # the bench measures decode and splat cost, not training;
            # stamp the stages so the baked-visibility path is exercised
            scene.stages = ["ambient", "decompose", "bake"]
            camera = sb.cameras[0]
            emb = scene.embeddings.image(0)
            splats = raster.project(scene.gaussians, camera)
            ms_project = time_best(lambda: raster.project(scene.gaussians, camera), args.repeats)
            ms_relight = time_best(
                lambda: shading.relight(scene, camera, emb, sun, splats=splats), args.repeats
            )
            print(
                f"{len(scene.gaussians):>10} {size:>6} {ms_project:>8.1f}m {ms_relight:>8.1f}m "
                f"{ms_project + ms_relight:>8.1f}m"
            )


if __name__ == "__main__":
    main()
