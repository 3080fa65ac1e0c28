"""Command-line pipeline driver.

Exit codes: 0 success, 2 for validation problems (bad arguments,
malformed or missing files, out-of-range ids, stage-order misuse),
1 for genuine runtime failures.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import shading, synth
from .bundle import Bundle, load_bundle, save_bundle
from .extract import extract_visibility
from .imgio import write_pfm, write_png
from .raster import project
from .scene import SceneFormatError
from .train import StageSchedule, run_stage1, run_stage2, run_stage3


class CliError(ValueError):
    """User-facing validation problem (exit 2)."""


def _schedule(args) -> StageSchedule:
    sched = StageSchedule.paper_scale() if getattr(args, "paper_iters", False) else StageSchedule()
    overrides = {}
    if getattr(args, "iters", None) is not None:
        overrides = {
            "extract": {"stage1_iters": args.iters},
            "decompose": {"stage2_iters": args.iters},
            "bake": {"stage3_iters": args.iters},
        }[args.cmd]
    if getattr(args, "directions", None) is not None:
        overrides["bake_directions"] = args.directions
    if overrides:
        from dataclasses import replace

        sched = replace(sched, **overrides)
    return sched


def _load(args) -> Bundle:
    return load_bundle(args.bundle)


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        kind=args.kind,
        density=args.density,
        image_size=args.image_size,
        n_cameras=args.cameras,
        seed=args.seed,
        noise=args.noise,
        n_sky_floaters=args.floaters,
        n_front_transients=args.transients,
    )
    bundle = synth.generate(spec)
    save_bundle(args.out, bundle)
    print(
        f"wrote {args.out}: {len(bundle.scene.gaussians)} gaussians, "
        f"{len(bundle.images)} images at {spec.image_size}px"
    )
    return 0


def cmd_extract(args) -> int:
    bundle = _load(args)
    sched = _schedule(args)
    views = bundle.views()
    run_stage1(bundle.scene, views, sched, seed=args.seed, log_path=bundle.root / "logs" / "stage1.csv")
    n_sunny = 0
    for i, view in enumerate(views):
        mask, result = extract_visibility(
            bundle.scene, view.splats, view.image, view.sky_mask, i
        )
        bundle.save_vis_mask(i, mask)
        if result is not None and not result.degenerate:
            n_sunny += 1
            print(
                f"image {i}: sunlit fraction {mask.mean():.3f}, "
                f"centroids {result.mu_shadow:.4f}/{result.mu_sunlit:.4f} in {result.iterations} iters"
            )
        else:
            print(f"image {i}: no sunlit cluster (cloudy or degenerate)")
    bundle.save_scene()
    print(f"extracted visibility for {n_sunny} sunny images")
    return 0


def cmd_decompose(args) -> int:
    bundle = _load(args)
    if "ambient" not in bundle.scene.stages:
        raise CliError("bundle has no ambient fit; run `sunsplat extract` first")
    sched = _schedule(args)
    views = bundle.views(with_vhat=True)
    history = run_stage2(
        bundle.scene, views, sched, seed=args.seed, log_path=bundle.root / "logs" / "stage2.csv"
    )
    bundle.save_scene()
    print(f"decomposition done; final total loss {history['total'][-1]:.5f}")
    return 0


def cmd_bake(args) -> int:
    bundle = _load(args)
    if "decompose" not in bundle.scene.stages:
        raise CliError("bundle has no decomposition; run `sunsplat decompose` first")
    sched = _schedule(args)
    views = bundle.views()
    cache, history = run_stage3(
        bundle.scene, views, sched, seed=args.seed, log_path=bundle.root / "logs" / "stage3.csv"
    )
    bundle.save_scene()
    print(f"baked {len(cache.directions)} directions; final loss {history[-1]:.5f}")
    return 0


def _parse_sun(args):
    """(sun_direction | None for cloudy) from --sun/--cloudy flags."""
    if args.cloudy and args.sun:
        raise CliError("--sun and --cloudy are mutually exclusive")
    if args.cloudy:
        return None
    if not args.sun:
        raise CliError("pick a lighting mode: --sun x,y,z or --cloudy")
    try:
        d = np.array([float(p) for p in args.sun.split(",")])
    except ValueError as e:
        raise CliError(f"--sun expects three comma-separated floats: {e}") from None
    if d.shape != (3,):
        raise CliError("--sun expects three comma-separated floats")
    norm = np.linalg.norm(d)
    if norm == 0:
        raise CliError("--sun direction must be nonzero")
    d = d / norm
    if d[2] <= 0:
        raise CliError("--sun direction must point above the horizon (z > 0)")
    return d


def _check_ids(bundle: Bundle, camera: int, *image_ids) -> None:
    if not 0 <= camera < len(bundle.cameras):
        raise CliError(f"camera {camera} out of range (bundle has {len(bundle.cameras)})")
    for i in image_ids:
        if i is not None and not 0 <= i < len(bundle.images):
            raise CliError(f"image {i} out of range (bundle has {len(bundle.images)})")


def _components(args):
    comps = tuple(args.components.split(",")) if args.components else shading.COMPONENT_ROLES
    for c in comps:
        if c not in shading.COMPONENT_ROLES:
            raise CliError(f"unknown component {c!r}; valid: {','.join(shading.COMPONENT_ROLES)}")
    return comps


def _embeddings_for(bundle: Bundle, image_a: int, image_b, t: float, comps):
    emb = bundle.scene.embeddings.image(image_a)
    if image_b is not None:
        emb = shading.interpolate_embeddings(
            emb, bundle.scene.embeddings.image(image_b), t, comps
        )
    return emb


def _write_output(path: Path, image: np.ndarray) -> None:
    if path.suffix == ".pfm":
        write_pfm(path, image)
    else:
        write_png(path, image)


def cmd_render(args) -> int:
    bundle = _load(args)
    _check_ids(bundle, args.camera, args.image, args.image_b)
    sun = _parse_sun(args)
    if sun is not None and not bundle.scene.baked:
        raise CliError("scene has no baked visibility cache; run `sunsplat bake` first")
    if not 0.0 <= args.t <= 1.0:
        raise CliError(f"--t must lie in [0, 1], got {args.t}")
    outputs = tuple(args.outputs.split(",")) if args.outputs else ("composite",)
    for name in outputs:
        if name not in shading.OUTPUT_NAMES:
            raise CliError(f"unknown output {name!r}; valid: {','.join(shading.OUTPUT_NAMES)}")
    emb = _embeddings_for(bundle, args.image, args.image_b, args.t, _components(args))
    camera = bundle.cameras[args.camera]
    t0 = time.perf_counter()
    maps = shading.relight(bundle.scene, camera, emb, sun)
    ms = 1000.0 * (time.perf_counter() - t0)
    out = Path(args.out)
    if len(outputs) == 1:
        _write_output(out, maps[outputs[0]])
        print(f"wrote {out} ({ms:.1f} ms)")
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        stem, suffix = out, ".png"
        if out.suffix in (".png", ".pfm"):
            stem, suffix = out.with_suffix(""), out.suffix
        for name in outputs:
            path = Path(f"{stem}_{name}{suffix}")
            _write_output(path, maps[name])
        print(f"wrote {len(outputs)} maps to {stem}_*{suffix} ({ms:.1f} ms)")
    return 0


def cmd_relight(args) -> int:
    bundle = _load(args)
    _check_ids(bundle, args.camera, args.image_a, args.image_b)
    sun = _parse_sun(args)
    if sun is not None and not bundle.scene.baked:
        raise CliError("scene has no baked visibility cache; run `sunsplat bake` first")
    if args.steps < 2:
        raise CliError("--steps must be at least 2")
    comps = _components(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    camera = bundle.cameras[args.camera]
    splats = project(bundle.scene.gaussians, camera)
    for j, t in enumerate(np.linspace(0.0, 1.0, args.steps)):
        emb = _embeddings_for(bundle, args.image_a, args.image_b, float(t), comps)
        maps = shading.relight(bundle.scene, camera, emb, sun, splats=splats)
        write_png(out_dir / f"frame_{j:03d}.png", maps["composite"])
    print(f"wrote {args.steps} frames to {out_dir}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    bundle = _load(args)
    serve(bundle, port=args.port, ui_dir=args.ui)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sunsplat", description="Gaussian-splat sun/sky relighting pipeline")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", help="generate a synthetic bundle with analytic truth")
    s.add_argument("--out", required=True)
    s.add_argument("--kind", default="box-over-plane", choices=["plane", "box-over-plane", "colonnade"])
    s.add_argument("--density", type=float, default=25.0)
    s.add_argument("--image-size", type=int, default=128)
    s.add_argument("--cameras", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--floaters", type=int, default=0)
    s.add_argument("--transients", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    for name, fn, helptext in (
        ("extract", cmd_extract, "fit the ambient model and extract sun-visibility masks"),
        ("decompose", cmd_decompose, "fit the sun/sky/indirect/reflectance decomposition"),
        ("bake", cmd_bake, "trace and distill the visibility cache"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--bundle", required=True)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--iters", type=int, default=None, help="override the stage budget")
        s.add_argument("--paper-iters", action="store_true", help="full-scale budgets (5x desk)")
        if name == "bake":
            s.add_argument("--directions", type=int, default=None)
        s.set_defaults(func=fn)

    s = sub.add_parser("render", help="render one relit view")
    s.add_argument("--bundle", required=True)
    s.add_argument("--camera", type=int, default=0)
    s.add_argument("--image", type=int, required=True, help="embedding source image id")
    s.add_argument("--image-b", type=int, default=None, help="second image for interpolation")
    s.add_argument("--t", type=float, default=0.0, help="interpolation weight toward image-b")
    s.add_argument("--components", default=None, help="comma list of components to interpolate")
    s.add_argument("--sun", default=None, help="sun direction x,y,z")
    s.add_argument("--cloudy", action="store_true")
    s.add_argument("--outputs", default=None, help=f"comma list from {','.join(shading.OUTPUT_NAMES)}")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("relight", help="render an interpolation sweep between two images")
    s.add_argument("--bundle", required=True)
    s.add_argument("--camera", type=int, default=0)
    s.add_argument("--image-a", type=int, required=True)
    s.add_argument("--image-b", type=int, required=True)
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--components", default=None)
    s.add_argument("--sun", default=None)
    s.add_argument("--cloudy", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_relight)

    s = sub.add_parser("serve", help="run the HTTP render service")
    s.add_argument("--bundle", required=True)
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--ui", default=None, help="directory of static UI files served under /ui")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except (CliError, SceneFormatError, FileNotFoundError, NotADirectoryError, ValueError, KeyError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as e:  # genuine runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
