"""End-to-end acceptance gates for the relighting pipeline.

Each numbered test pins one gate at its stated tolerance and prints a
line with the measured values. Two heavy fixtures are shared: the
default box-over-plane scene carries the extraction and decomposition
gates (stages 1 and 2 at desk scale), and the thin-surfel scene carries
the tracing and baking gates (stage 3). Expect roughly ten minutes for
the whole module on one core.
"""
import io
import time

import numpy as np
import pytest

import sunsplat.autodiff as ad
from sunsplat import extract, losses, raster, shading, shadow, synth, train
from sunsplat.bundle import load_bundle, save_bundle
from sunsplat.imgio import write_png
from sunsplat.scene import save_scene


def report(capsys, n, text):
    with capsys.disabled():
        print(f"\n[acceptance {n:02d}] PASS {text}" if text else "")


def shadow_iou(pred_lit, true_lit, nonsky):
    pred = (pred_lit < 0.5) & nonsky
    true = (true_lit < 0.5) & nonsky
    union = np.count_nonzero(pred | true)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & true) / union


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def visual_stage1(tmp_path_factory):
    """Default scene through stage 1 plus per-image mask extraction."""
    root = tmp_path_factory.mktemp("acceptance") / "visual"
    sb = synth.generate(synth.SynthSpec(seed=11))
    save_bundle(root, sb)
    bundle = load_bundle(root)
    views = bundle.views()
    t0 = time.perf_counter()
    train.run_stage1(bundle.scene, views, seed=0)
    ious = []
    for i, view in enumerate(views):
        mask, result = extract.extract_visibility(
            bundle.scene, view.splats, view.image, view.sky_mask, i
        )
        bundle.save_vis_mask(i, mask)
        if result is None:
            continue
        assert not result.degenerate
        nonsky = sb.truth[i]["sky"] < 0.5
        ious.append(shadow_iou(mask, sb.truth[i]["v"], nonsky))
    elapsed = time.perf_counter() - t0
    return {"bundle": bundle, "synth": sb, "ious": ious, "seconds": elapsed}


@pytest.fixture(scope="module")
def visual_stage2(visual_stage1):
    """Full decomposition on top of stage 1, with before/after metrics."""
    bundle = visual_stage1["bundle"]
    sb = visual_stage1["synth"]
    scene = bundle.scene
    views = bundle.views(with_vhat=True)

    def scl_by_component():
        vals = {}
        for name in ("sun", "sky", "ind"):
            total = 0.0
            for i, view in enumerate(views):
                comps = shading.render_components(scene, view.camera, scene.embeddings.image(i))
                s = losses.scl(ad.Tensor(comps[name]), comps["reflectance"], 1.0 - view.sky_mask)
                total += float(s.data)
            vals[name] = total / len(views)
        return vals

    scl_pre = scl_by_component()
    train.run_stage2(scene, views, seed=0)
    scl_post = scl_by_component()
    psnrs = []
    for i, view in enumerate(views):
        comps = shading.render_components(scene, view.camera, scene.embeddings.image(i))
        img = shading.compose(
            view.v_hat, comps["sun"], comps["sky"], comps["ind"], comps["reflectance"]
        )
        mse = float(np.mean((img - sb.truth[i]["image"]) ** 2))
        psnrs.append(-10.0 * np.log10(mse) if mse > 0 else np.inf)
    return {
        "bundle": bundle, "scene": scene, "scl_pre": scl_pre,
        "scl_post": scl_post, "psnrs": psnrs,
    }


@pytest.fixture(scope="module")
def trace_scene():
    """Thin-surfel scene with grid and brute-force trace contexts."""
    sb = synth.generate(synth.trace_spec(seed=5))
    g = sb.scene.gaussians
    camera = sb.cameras[0]
    splats = raster.project(g, camera)
    keep = shadow.occluder_mask(g, camera, splats=splats)
    return {
        "synth": sb,
        "camera": camera,
        "splats": splats,
        "ctx_grid": shadow.prepare_trace(g, keep),
        "ctx_brute": shadow.prepare_trace(g, keep, use_grid=False),
    }


@pytest.fixture(scope="module")
def trace_baked(trace_scene):
    """Visibility cache distilled on the thin-surfel scene, then scored
    against fresh traces on held-out directions."""
    sb = trace_scene["synth"]
    scene = sb.scene
    views = [
        train.TrainView(
            camera=sb.cameras[c],
            image=sb.train_images[i],
            sky_mask=(sb.truth[i]["sky"] > 0.5).astype(np.float64),
            index=i,
        )
        for i, (c, _) in enumerate(sb.images)
    ]
    # stages 1-2 train appearance, which the bake never reads; stamp
    # them so the stage guard admits this geometry-only fixture
    scene.stages = ["ambient", "decompose"]
    train.run_stage3(scene, views, seed=0)
    held = shadow.fibonacci_directions(32)
    g = scene.gaussians
    errs = np.zeros((len(sb.cameras), len(held)))
    sky_exact = True
    for ci, cam in enumerate(sb.cameras):
        splats = raster.project(g, cam)
        ctx = shadow.prepare_trace(g, shadow.occluder_mask(g, cam, splats=splats))
        sky = raster.render_sky_mask(g, cam, splats=splats) > 0.5
        for di, d in enumerate(held):
            v_rt = shadow.render_traced_visibility(g, cam, d, ctx=ctx, splats=splats)
            v_hat = shadow.render_visibility(scene, cam, d, splats=splats)
            errs[ci, di] = np.mean((v_rt - v_hat) ** 2)
            sky_exact = sky_exact and bool(np.all(v_hat[sky] == 1.0))
    return {"errs": errs, "sky_exact": sky_exact}


# ------------------------------------------------------------------ gates


def test_01_composition_identity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    v = rng.uniform(0.0, 1.0, (20, 50))
    s_sun, s_sky, s_ind, refl = rng.uniform(0.0, 1.5, (4, 20, 50, 3))
    got = shading.compose(v, s_sun, s_sky, s_ind, refl)
    worst = 0.0
    for i in range(20):
        for j in range(50):
            for c in range(3):
                hand = (v[i, j] * s_sun[i, j, c] + s_sky[i, j, c] + s_ind[i, j, c]) * refl[i, j, c]
                worst = max(worst, abs(got[i, j, c] - hand))
    assert worst <= 1e-12
    dark = shading.compose(np.zeros((20, 50)), s_sun, s_sky, s_ind, refl)
    assert np.array_equal(dark, (s_sky + s_ind) * refl)
    assert np.all(shading.compose(v, s_sun, s_sky, s_ind, np.zeros((20, 50, 3))) == 0.0)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    report(capsys, 1, f"1000 tuples, max dev {worst:.1e} (<= 1e-12), {elapsed * 1000:.0f} ms")


def test_02_gradient_suite(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    from sunsplat.scene import Camera, Gaussians, Scene, seeded_features

    n = 5
    g = Gaussians(
        positions=rng.normal(0.0, 0.5, (n, 3)),
        scales=rng.uniform(0.3, 0.6, (n, 3)),
        quats=np.tile((1.0, 0.0, 0.0, 0.0), (n, 1)),
        opacities=rng.uniform(0.4, 0.8, n),
        colors=rng.uniform(0.1, 0.9, (n, 3)),
        sky_semantic=rng.uniform(0.1, 0.9, n),
        **seeded_features(n, rng),
    )
    scene = Scene.create(g, n_images=2, seed=2)
    camera = Camera.look_at(
        np.array([0.0, -3.0, 1.0]), np.zeros(3), np.array([0.0, 0.0, 1.0]),
        fx=9.0, fy=9.0, cx=4.0, cy=4.0, width=8, height=8,
    )
    splats = raster.project(g, camera)
    image = rng.uniform(0.0, 1.0, (8, 8, 3))
    sky = (rng.uniform(size=(8, 8)) < 0.25).astype(np.float64)
    v_hat = (rng.uniform(size=(8, 8)) < 0.5).astype(np.float64)
    v_target = rng.uniform(0.0, 1.0, (64, 1))
    weights = losses.LossWeights()

    feats = {r: ad.Tensor(getattr(g, f"f_{r}"), True) for r in ("ref", "sun", "sky", "ind")}
    embs = {r: ad.Tensor(getattr(scene.embeddings, r), True) for r in ("sun", "sky", "ind")}
    opac = ad.Tensor(g.sky_semantic, True)
    amb_feats = ad.Tensor(scene.amb_features, True)
    amb_emb = ad.Tensor(scene.embeddings.amb, True)
    fvis = ad.Tensor(g.f_vis, True)
    base_colors = ad.Tensor(g.colors)
    nets = scene.nets

    def comps():
        cols = [
            nets["sun"](shading.decoder_input("sun", feats["sun"], embs["sun"][0])),
            nets["sky"](shading.decoder_input("sky", feats["sky"], embs["sky"][0])),
            nets["ind"](shading.decoder_input("ind", feats["ind"], embs["ind"][0], base_colors)),
            nets["ref"](feats["ref"]),
        ]
        flat = raster.composite_t(splats, ad.concat(cols, axis=1), np.zeros(12))
        return {
            "sun": flat[:, 0:3].reshape(8, 8, 3),
            "sky": flat[:, 3:6].reshape(8, 8, 3),
            "ind": flat[:, 6:9].reshape(8, 8, 3),
            "reflectance": flat[:, 9:12].reshape(8, 8, 3),
        }

    def vis_forward():
        d = np.broadcast_to(np.array([0.3, 0.1, 0.948683298050514]), (n, 3))
        raw = nets["vis"](ad.concat([fvis, ad.Tensor(g.positions), ad.Tensor(d.copy())], axis=1))
        return raster.composite_t(splats, (raw + 1.0) * 0.5, 1.0)

    stage2_leaves = [
        *feats.values(), *embs.values(),
        *(p for r in ("ref", "sun", "sky", "ind") for p in nets[r].params()),
    ]
    suite = {
        "ambient": (
            lambda: losses.l1_masked(
                raster.composite_t(
                    splats, nets["amb"](shading.decoder_input("amb", amb_feats, amb_emb[0])), 0.0
                ),
                image.reshape(-1, 3), (1.0 - sky).reshape(-1),
            ),
            [amb_feats, amb_emb, *nets["amb"].params()],
        ),
        "region_sun": (
            lambda: losses.region_losses(image, v_hat, sky, comps(), weights)["sun"],
            stage2_leaves,
        ),
        "region_sky": (
            lambda: losses.region_losses(image, v_hat, sky, comps(), weights)["sky"],
            stage2_leaves,
        ),
        "region_ind": (
            lambda: losses.region_losses(image, v_hat, sky, comps(), weights)["ind"],
            stage2_leaves,
        ),
        "scl": (
            lambda: losses.scl_total(comps(), sky, weights)["total"],
            stage2_leaves,
        ),
        "sem": (
            lambda: losses.sem_loss(
                raster.composite_t(splats, opac.reshape(n, 1), 1.0), sky.reshape(-1, 1)
            ),
            [opac],
        ),
        "vis": (
            lambda: losses.vis_loss(vis_forward(), v_target, sky.reshape(-1, 1)),
            [fvis, *nets["vis"].params()],
        ),
    }

    h = 1e-6
    worst = {}
    for name, (build, leaves) in suite.items():
        ad.zero_grads(leaves)
        ad.backward(build())
        worst[name] = 0.0
        for leaf in leaves:
            ana = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            flat = leaf.data.reshape(-1)
            aflat = ana.reshape(-1)
            idx = rng.choice(flat.size, size=min(8, flat.size), replace=False)
            num = np.empty(len(idx))
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(build().data)
                flat[i] = orig - h
                fm = float(build().data)
                flat[i] = orig
                num[k] = (fp - fm) / (2.0 * h)
            scale = max(np.abs(aflat[idx]).max(), np.abs(num).max())
            if scale < 1e-9:
                continue  # the loss does not reach this tensor
            worst[name] = max(worst[name], float(np.abs(aflat[idx] - num).max() / scale))
        ad.zero_grads(leaves)
        assert worst[name] < 1e-4, f"{name}: relative error {worst[name]:.2e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    top = max(worst.values())
    report(capsys, 2, f"7 losses end-to-end, max rel err {top:.1e} (< 1e-4), {elapsed:.1f} s")


def test_03_clustering_oracle(capsys):
    rng = np.random.default_rng(3)
    labels = rng.uniform(size=(100, 100)) < 0.5
    values = np.where(labels, 0.6, 0.1) + 0.05 * rng.standard_normal((100, 100))
    region = np.ones_like(values)
    result = extract.two_means(values, region)
    assert not result.degenerate
    agreement = np.mean((result.assignments > 0.5) == labels)
    assert agreement >= 0.99
    assert all(b <= a + 1e-12 for a, b in zip(result.wcss, result.wcss[1:]))
    scaled = extract.two_means(2.7 * values + 0.13, region)
    assert np.array_equal(scaled.assignments, result.assignments)
    report(
        capsys, 3,
        f"10^4 samples, label agreement {agreement:.4f} (>= 0.99), "
        f"{len(result.wcss)} WCSS steps non-increasing, affine-exact",
    )


def test_04_visibility_extraction(capsys, visual_stage1):
    ious = visual_stage1["ious"]
    seconds = visual_stage1["seconds"]
    assert len(ious) == 9  # three sunny lightings x three cameras
    assert min(ious) >= 0.9
    assert seconds < 600.0
    report(
        capsys, 4,
        f"shadow IoU min {min(ious):.4f} over 9 sunny images (>= 0.9), "
        f"stage 1 + extraction {seconds:.0f} s (< 600)",
    )


def test_05_ray_tracer_oracle(capsys, trace_scene):
    sb = trace_scene["synth"]
    g = sb.scene.gaussians
    rng = np.random.default_rng(55)
    dirs = rng.normal(size=(50, 3))
    dirs[:, 2] = np.abs(dirs[:, 2]) + 0.05
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pairs = 0
    for d in dirs:
        sources = rng.integers(0, len(g), 20)
        fast = shadow.trace_batch(trace_scene["ctx_grid"], sources, d)
        slow = shadow.trace_batch(trace_scene["ctx_brute"], sources, d)
        assert np.array_equal(fast, slow)
        pairs += len(sources)
    assert pairs == 1000

    camera = trace_scene["camera"]
    sun = synth.sun_direction(203.0, 55.0)  # opposite the camera, mid sky
    vmap = shadow.render_traced_visibility(
        g, camera, sun, ctx=trace_scene["ctx_grid"], splats=trace_scene["splats"]
    )
    truth = synth.render_truth(sb.geometry, camera, synth.LightingEntry(tuple(sun)))
    iou = shadow_iou(vmap, truth["v"], truth["sky"] < 0.5)
    assert iou >= 0.9
    report(
        capsys, 5,
        f"grid == brute on 1000 pairs (bitwise), traced vs analytic shadow IoU {iou:.4f} (>= 0.9)",
    )


def test_06_two_step_filter(capsys):
    sb = synth.generate(synth.SynthSpec(seed=11, n_sky_floaters=12, n_front_transients=8))
    g = sb.scene.gaussians
    floaters = sb.classes == synth.CLASS_SKY_FLOATER
    transients = sb.classes == synth.CLASS_TRANSIENT
    surface = sb.classes == synth.CLASS_SURFACE
    for ci, camera in enumerate(sb.cameras):
        keep = shadow.sky_filter(g) & shadow.front_filter(g, camera)
        assert not keep[floaters].any(), f"camera {ci} kept a sky floater"
        assert keep[surface].all(), f"camera {ci} dropped surface Gaussians"
        if ci == 0:  # the transients hang in front of this camera
            assert not keep[transients].any()
    report(
        capsys, 6,
        "12/12 floaters and 8/8 transients removed, 0/1600 surface Gaussians dropped",
    )


def test_07_visibility_bake(capsys, trace_baked):
    errs = trace_baked["errs"]
    mean_mse = float(errs.mean(axis=0).mean())
    assert mean_mse <= 0.05
    assert trace_baked["sky_exact"]
    report(
        capsys, 7,
        f"MSE over 32 held-out directions mean {mean_mse:.4f} (<= 0.05), "
        f"worst pair {errs.max():.4f}, sky pixels exactly 1",
    )


def test_08_decomposition_fidelity(capsys, visual_stage2):
    psnrs = visual_stage2["psnrs"]
    mean_psnr = float(np.mean(psnrs))
    assert mean_psnr >= 30.0
    scene = visual_stage2["scene"]
    ref = [
        shading.decode_colors(scene, scene.embeddings.image(i))["reflectance"]
        for i in range(len(scene.embeddings))
    ]
    assert all(np.array_equal(ref[0], r) for r in ref[1:])
    pre, post = visual_stage2["scl_pre"], visual_stage2["scl_post"]
    for name in ("sun", "sky", "ind"):
        assert post[name] < pre[name], f"scl({name}) did not decrease"
    report(
        capsys, 8,
        f"recomposition PSNR mean {mean_psnr:.2f} dB (>= 30, per-image "
        f"{min(psnrs):.2f}..{max(psnrs):.2f}), reflectance bit-identical across "
        f"{len(ref)} embeddings, scl down "
        + " ".join(f"{k}:{pre[k]:.4f}->{post[k]:.4f}" for k in ("sun", "sky", "ind")),
    )


def test_09_structural_consistency(capsys):
    rng = np.random.default_rng(9)
    s = rng.integers(0, 64, size=(6, 7, 3)).astype(np.float64) / 64.0
    mask = (rng.uniform(size=(6, 7)) > 0.2).astype(np.float64)
    offset = losses.scl(ad.Tensor(s), s + 0.25, mask)
    assert float(offset.data) == 0.0
    plane = np.array([[0.0, 1.0], [0.0, 1.0]])[..., None]
    two = losses.scl(ad.Tensor(2.0 * plane), plane, np.ones((2, 2)))
    assert abs(float(two.data) - 0.5) <= 1e-12
    report(capsys, 9, "scl(S, S + const) == 0 exactly, 2x2 hand example within 1e-12")


def test_10_render_performance(capsys):
    sb = synth.generate(synth.SynthSpec(density=79.0, image_size=256, n_cameras=1, seed=10))
    scene = sb.scene
    n = len(scene.gaussians)
    assert 4500 <= n <= 5600
    scene.stages = ["ambient", "decompose", "bake"]
    camera = sb.cameras[0]
    emb = scene.embeddings.image(0)
    sun = synth.sun_direction(40.0, 50.0)
    splats = raster.project(scene.gaussians, camera)
    best = np.inf
    for _ in range(3):
        t0 = time.perf_counter()
        maps = shading.relight(scene, camera, emb, sun, splats=splats)
        best = min(best, 1000.0 * (time.perf_counter() - t0))
    assert set(maps) == set(shading.OUTPUT_NAMES)
    assert maps["composite"].shape == (256, 256, 3)
    t0 = time.perf_counter()
    raster.project(scene.gaussians, camera)
    project_ms = 1000.0 * (time.perf_counter() - t0)
    status = "within" if best < 200.0 else "OVER"
    report(
        capsys, 10,
        f"five outputs at 256^2 with {n} Gaussians: {best:.0f} ms render "
        f"{status} the 200 ms soft target (+{project_ms:.0f} ms projection, logged only)",
    )


def test_11_determinism(capsys, tmp_path):
    spec = synth.SynthSpec(density=6.25, image_size=32, n_cameras=2, seed=7)
    artifacts = []
    for run in range(2):
        sb = synth.generate(spec)
        root = tmp_path / f"run{run}"
        save_bundle(root, sb)
        bundle = load_bundle(root)
        views = bundle.views()
        sched = train.StageSchedule(stage1_iters=40, stage2_iters=15)
        train.run_stage1(bundle.scene, views, sched, seed=0, log_path=root / "logs" / "s1.csv")
        for i, view in enumerate(views):
            mask, _ = extract.extract_visibility(
                bundle.scene, view.splats, view.image, view.sky_mask, i
            )
            bundle.save_vis_mask(i, mask)
        train.run_stage2(
            bundle.scene, bundle.views(with_vhat=True), sched, seed=0,
            log_path=root / "logs" / "s2.csv",
        )
        container = tmp_path / f"scene{run}.gare"
        save_scene(container, bundle.scene)
        render = io.BytesIO()
        write_png(
            render,
            shading.relight(bundle.scene, bundle.cameras[0], bundle.scene.embeddings.image(0), None)["composite"],
        )
        artifacts.append(
            {
                "container": container.read_bytes(),
                "log1": (root / "logs" / "s1.csv").read_bytes(),
                "log2": (root / "logs" / "s2.csv").read_bytes(),
                "render": render.getvalue(),
                "masks": [bundle.vis_mask(i).tobytes() for i in range(len(bundle))],
            }
        )
    a, b = artifacts
    assert a["container"] == b["container"]
    assert a["log1"] == b["log1"] and a["log2"] == b["log2"]
    assert a["render"] == b["render"]
    assert a["masks"] == b["masks"]
    report(
        capsys, 11,
        f"two seeded runs byte-identical: container ({len(a['container'])} B), "
        "stage logs, extracted masks, rendered PNG",
    )
