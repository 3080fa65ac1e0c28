"""End-to-end experiment on a synthetic scene with known truth.

Generates a box-over-plane bundle, trains all three stages, and scores
the result against the analytic maps: shadow IoU after extraction,
recomposition PSNR after the decomposition, and cache-vs-trace MSE on
held-out sun directions after the bake. The CLI drives the same stages
on captured bundles; this script exists for the closed loop where every
intermediate has a reference.

    python scripts/run_pipeline.py --out /tmp/pipeline --seed 11
    python scripts/run_pipeline.py --quick        # minute-scale smoke
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import sunsplat.autodiff as ad
from sunsplat import extract, losses, raster, shading, shadow, synth, train
from sunsplat.bundle import load_bundle, save_bundle


def shadow_iou(pred_lit, true_lit, nonsky):
    pred = (pred_lit < 0.5) & nonsky
    true = (true_lit < 0.5) & nonsky
    union = np.count_nonzero(pred | true)
    return 1.0 if union == 0 else np.count_nonzero(pred & true) / union


def psnr(a, b):
    mse = float(np.mean((a - b) ** 2))
    return np.inf if mse == 0 else -10.0 * np.log10(mse)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/pipeline"))
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--size", type=int, default=128, help="image side in pixels")
    ap.add_argument("--density", type=float, default=25.0, help="surfels per unit area")
    ap.add_argument("--cameras", type=int, default=3)
    ap.add_argument("--stage1-iters", type=int, default=2000)
    ap.add_argument("--stage2-iters", type=int, default=10000)
    ap.add_argument("--stage3-iters", type=int, default=4000)
    ap.add_argument("--directions", type=int, default=256, help="bake direction count")
    ap.add_argument("--held-out", type=int, default=32, help="evaluation direction count")
    ap.add_argument("--quick", action="store_true", help="tiny geometry and iteration counts")
    args = ap.parse_args(argv)
    if args.quick:
        args.size, args.density, args.cameras = 48, 8.0, 2
        args.stage1_iters, args.stage2_iters, args.stage3_iters = 200, 400, 200
        args.directions = 32

    spec = synth.SynthSpec(
        density=args.density, image_size=args.size, n_cameras=args.cameras, seed=args.seed
    )
    print(f"generating {spec.kind} scene (seed {args.seed}) ...")
    sb = synth.generate(spec)
    save_bundle(args.out, sb)
    bundle = load_bundle(args.out)
    print(f"  {len(sb.scene.gaussians)} Gaussians, {len(bundle)} images -> {args.out}")

    sched = train.StageSchedule(
        stage1_iters=args.stage1_iters,
        stage2_iters=args.stage2_iters,
        stage3_iters=args.stage3_iters,
        bake_directions=args.directions,
    )
    views = bundle.views()
    logs = args.out / "logs"

    t0 = time.perf_counter()
    train.run_stage1(bundle.scene, views, sched, seed=0, log_path=logs / "stage1.csv")
    print(f"stage 1 (ambient, {sched.stage1_iters} iters): {time.perf_counter() - t0:.1f} s")

    ious = []
    for i, view in enumerate(views):
        mask, result = extract.extract_visibility(
            bundle.scene, view.splats, view.image, view.sky_mask, i
        )
        bundle.save_vis_mask(i, mask)
        if result is not None:
            nonsky = sb.truth[i]["sky"] < 0.5
            ious.append(shadow_iou(mask, sb.truth[i]["v"], nonsky))
    print(f"extraction: shadow IoU min {min(ious):.4f} mean {np.mean(ious):.4f} over {len(ious)} sunny images")

    views = bundle.views(with_vhat=True)
    t0 = time.perf_counter()
    train.run_stage2(bundle.scene, views, sched, seed=0, log_path=logs / "stage2.csv")
    print(f"stage 2 (decomposition, {sched.stage2_iters} iters): {time.perf_counter() - t0:.1f} s")

    scene = bundle.scene
    psnrs, scls = [], {"sun": 0.0, "sky": 0.0, "ind": 0.0}
    for i, view in enumerate(views):
        comps = shading.render_components(scene, view.camera, scene.embeddings.image(i))
        img = shading.compose(
            view.v_hat, comps["sun"], comps["sky"], comps["ind"], comps["reflectance"]
        )
        psnrs.append(psnr(img, sb.truth[i]["image"]))
        for name in scls:
            s = losses.scl(ad.Tensor(comps[name]), comps["reflectance"], 1.0 - view.sky_mask)
            scls[name] += float(s.data) / len(views)
    print(f"recomposition PSNR mean {np.mean(psnrs):.2f} dB (min {min(psnrs):.2f})")
    print("shading consistency " + " ".join(f"{k}={v:.4f}" for k, v in scls.items()))

    t0 = time.perf_counter()
    train.run_stage3(scene, views, sched, seed=0, log_path=logs / "stage3.csv")
    print(f"stage 3 (bake, {sched.stage3_iters} iters, {args.directions} directions): "
          f"{time.perf_counter() - t0:.1f} s")

    held = shadow.fibonacci_directions(args.held_out)
    errs = []
    for cam in bundle.cameras:
        splats = raster.project(scene.gaussians, cam)
        ctx = shadow.prepare_trace(scene.gaussians, shadow.occluder_mask(scene.gaussians, cam, splats=splats))
        for d in held:
            v_rt = shadow.render_traced_visibility(scene.gaussians, cam, d, ctx=ctx, splats=splats)
            v_hat = shadow.render_visibility(scene, cam, d, splats=splats)
            errs.append(float(np.mean((v_rt - v_hat) ** 2)))
    print(f"cache vs trace on {args.held_out} held-out directions: "
          f"MSE mean {np.mean(errs):.4f} max {np.max(errs):.4f}")

    bundle.save_scene()
    print(f"trained scene saved to {args.out / 'scene.gare'}")


if __name__ == "__main__":
    main()
