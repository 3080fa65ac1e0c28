"""Three-stage fitting: ambient model, full decomposition, visibility
bake. Geometry stays frozen throughout; the optimizer touches decoder
weights, per-Gaussian features, per-image embeddings, and the sky
semantic. Feature and embedding tensors wrap the scene's own arrays
(no copies), so the scene is always in sync with training and can be
saved at any point.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import raster, shadow
from .extract import coarse_visibility
from .scene import Camera, Scene
from .shading import decoder_input

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageSchedule:
    """Iteration budgets and learning rates. Defaults are the desk
    scale (a fifth of the full-scale budgets, which paper_scale
    restores)."""

    stage1_iters: int = 2_000
    stage2_iters: int = 10_000
    stage3_iters: int = 4_000
    bake_directions: int = 256
    lr_features: float = 2.5e-3
    lr_vis_features: float = 1.0e-3
    lr_mlp: tuple = (8.0e-4, 5.0e-6)
    lr_embed: tuple = (5.0e-3, 5.0e-5)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def paper_scale() -> "StageSchedule":
        return StageSchedule(stage1_iters=10_000, stage2_iters=100_000, stage3_iters=20_000)


@dataclass(frozen=True)
class ExpDecay:
    """Exponential schedule; the final iteration lands on end exactly
    (per-step factor (end/start)^(1/steps))."""

    start: float
    end: float
    steps: int

    def __call__(self, t: int) -> float:
        # t is the 1-indexed iteration
        return self.start * (self.end / self.start) ** (t / self.steps)


class Adam:
    """Adam with bias correction; eps sits outside the square root. A
    non-finite gradient anywhere skips the whole step with a warning
    instead of poisoning the moments."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        # groups: [(params, lr)] with lr a float or a callable of the step
        self.groups = [(list(params), lr) for params, lr in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {}
        self._v = {}
        for params, _ in self.groups:
            for p in params:
                self._m[id(p)] = np.zeros_like(p.data)
                self._v[id(p)] = np.zeros_like(p.data)

    def step(self) -> bool:
        for params, _ in self.groups:
            for p in params:
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    log.warning("non-finite gradient at step %d; skipping update", self.t + 1)
                    return False
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for params, lr in self.groups:
            rate = lr(self.t) if callable(lr) else lr
            for p in params:
                g = p.grad
                if g is None:
                    continue
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p.data -= rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


class CsvLog:
    """Tiny deterministic CSV logger (shortest-repr floats)."""

    def __init__(self, path, fields):
        self.fields = list(fields)
        self._fh = open(path, "w", newline="") if path else None
        self._writer = csv.writer(self._fh) if self._fh else None
        if self._writer:
            self._writer.writerow(self.fields)

    def row(self, values) -> None:
        if self._writer:
            self._writer.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in values])

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


@dataclass
class TrainView:
    """One training image with its camera, labels, and embedding row."""

    camera: Camera
    image: np.ndarray  # (H, W, 3)
    sky_mask: np.ndarray  # (H, W) {0,1}
    index: int  # row in the embedding table
    v_hat: np.ndarray | None = None  # (H, W) extracted sun visibility
    splats: raster.SplatList = field(default=None, repr=False)


def _splat_cache(scene: Scene, views) -> None:
    """Share one SplatList per distinct camera across views."""
    by_key = {}
    for view in views:
        key = view.camera.key()
        if key not in by_key:
            by_key[key] = raster.project(scene.gaussians, view.camera)
        view.splats = by_key[key]


def _epoch_order(rng: np.random.Generator, n: int, t: int, state: dict) -> int:
    """One item per step; a fresh seeded permutation per epoch."""
    if (t - 1) % n == 0:
        state["perm"] = rng.permutation(n)
    return int(state["perm"][(t - 1) % n])


def run_stage1(scene, views, schedule: StageSchedule | None = None, seed: int = 0, log_path=None):
    """Fit the ambient model: embedding-conditioned colors supervised
    outside the coarse sunlit mask. Returns the per-iteration loss."""
    schedule = schedule or StageSchedule()
    rng = np.random.default_rng(seed)
    _splat_cache(scene, views)
    masks = [
        (1.0 - coarse_visibility(v.image, bool(scene.embeddings.sunny[v.index]))).reshape(-1)
        for v in views
    ]
    targets = [v.image.reshape(-1, 3) for v in views]
    feats = ad.Tensor(scene.amb_features, True)
    emb = ad.Tensor(scene.embeddings.amb, True)
    net = scene.nets["amb"]
    params = [feats, emb, *net.params()]
    iters = schedule.stage1_iters
    lr_mlp = ExpDecay(*schedule.lr_mlp, iters)
    lr_emb = ExpDecay(*schedule.lr_embed, iters)
    opt = Adam(
        [
            ([feats], schedule.lr_features),
            (net.params(), lr_mlp),
            ([emb], lr_emb),
        ],
        schedule.beta1, schedule.beta2, schedule.eps,
    )
    logger = CsvLog(log_path, ["iter", "loss", "lr_mlp", "lr_embed"])
    history = []
    state = {}
    for t in range(1, iters + 1):
        i = _epoch_order(rng, len(views), t, state)
        x = decoder_input("amb", feats, emb[views[i].index])
        img = raster.composite_t(views[i].splats, net(x), 0.0)
        loss = L.l1_masked(img, targets[i], masks[i])
        ad.backward(loss)
        opt.step()
        ad.zero_grads(params)
        history.append(float(loss.data))
        logger.row([t, loss.data, lr_mlp(t), lr_emb(t)])
    logger.close()
    if "ambient" not in scene.stages:
        scene.stages.append("ambient")
    return history


def run_stage2(scene, views, schedule: StageSchedule | None = None, seed: int = 0, log_path=None):
    """Fit the full decomposition against extracted visibility masks.
    Returns per-term loss histories."""
    schedule = schedule or StageSchedule()
    if "ambient" not in scene.stages:
        raise RuntimeError("decomposition needs the ambient stage first")
    for view in views:
        if view.v_hat is None:
            raise ValueError(f"view {view.index} is missing its extracted visibility mask")
    rng = np.random.default_rng(seed)
    _splat_cache(scene, views)
    g = scene.gaussians
    n = len(g)
    feats = {role: ad.Tensor(getattr(g, f"f_{role}"), True) for role in ("ref", "sun", "sky", "ind")}
    opac = ad.Tensor(g.sky_semantic, True)
    embs = {role: ad.Tensor(getattr(scene.embeddings, role), True) for role in ("sun", "sky", "ind")}
    base_colors = ad.Tensor(g.colors)
    nets = {role: scene.nets[role] for role in ("ref", "sun", "sky", "ind")}
    net_params = [p for net in nets.values() for p in net.params()]
    params = [*feats.values(), opac, *embs.values(), *net_params]
    iters = schedule.stage2_iters
    lr_mlp = ExpDecay(*schedule.lr_mlp, iters)
    lr_emb = ExpDecay(*schedule.lr_embed, iters)
    opt = Adam(
        [
            ([*feats.values(), opac], schedule.lr_features),
            (net_params, lr_mlp),
            (list(embs.values()), lr_emb),
        ],
        schedule.beta1, schedule.beta2, schedule.eps,
    )
    weights = L.LossWeights()
    fields = ["iter", "l1_sun", "l1_sky", "l1_ind", "scl", "sem", "total", "lr_mlp", "lr_embed"]
    logger = CsvLog(log_path, fields)
    history = {k: [] for k in fields[1:-2]}
    state = {}
    for t in range(1, iters + 1):
        i = _epoch_order(rng, len(views), t, state)
        view = views[i]
        h, w = view.camera.height, view.camera.width
        idx = view.index
        cols = [
            nets["sun"](decoder_input("sun", feats["sun"], embs["sun"][idx])),
            nets["sky"](decoder_input("sky", feats["sky"], embs["sky"][idx])),
            nets["ind"](decoder_input("ind", feats["ind"], embs["ind"][idx], base_colors)),
            nets["ref"](feats["ref"]),
        ]
        flat = raster.composite_t(view.splats, ad.concat(cols, axis=1), np.zeros(12))
        comps = {
            "sun": flat[:, 0:3].reshape(h, w, 3),
            "sky": flat[:, 3:6].reshape(h, w, 3),
            "ind": flat[:, 6:9].reshape(h, w, 3),
            "reflectance": flat[:, 9:12].reshape(h, w, 3),
        }
        region = L.region_losses(view.image, view.v_hat, view.sky_mask, comps, weights)
        sclb = L.scl_total(comps, view.sky_mask, weights)
        m_hat = raster.composite_t(view.splats, opac.reshape(n, 1), 1.0)
        sem = L.sem_loss(m_hat, view.sky_mask.reshape(-1, 1))
        total = region["total"] + sclb["total"] + sem
        ad.backward(total)
        opt.step()
        ad.zero_grads(params)
        np.clip(opac.data, 0.0, 1.0, out=opac.data)
        terms = {
            "l1_sun": float(region["sun"].data), "l1_sky": float(region["sky"].data),
            "l1_ind": float(region["ind"].data), "scl": float(sclb["total"].data),
            "sem": float(sem.data), "total": float(total.data),
        }
        for k, val in terms.items():
            history[k].append(val)
        logger.row([t, *terms.values(), lr_mlp(t), lr_emb(t)])
    logger.close()
    if "decompose" not in scene.stages:
        scene.stages.append("decompose")
    return history


def run_stage3(scene, views, schedule: StageSchedule | None = None, seed: int = 0, log_path=None, directions=None):
    """Distill ray-traced visibility into the neural cache over a
    Fibonacci direction set. Returns the BakeCache."""
    schedule = schedule or StageSchedule()
    if "decompose" not in scene.stages:
        raise RuntimeError("baking needs the decomposition stage first")
    rng = np.random.default_rng(seed)
    _splat_cache(scene, views)
    dirs = shadow.fibonacci_directions(schedule.bake_directions) if directions is None else np.asarray(directions)
    g = scene.gaussians
    n = len(g)
    cams = []
    seen = set()
    for view in views:
        key = view.camera.key()
        if key not in seen:
            seen.add(key)
            cams.append(view)
    # per camera: occluder set, traced targets for every direction
    traced = []  # (D, N) per camera
    sky_flat = []
    for view in cams:
        keep = shadow.occluder_mask(g, view.camera, splats=view.splats)
        ctx = shadow.prepare_trace(g, keep)
        all_idx = np.arange(n, dtype=np.int64)
        traced.append(np.stack([shadow.trace_batch(ctx, all_idx, d) for d in dirs]))
        sky_flat.append((raster.render_sky_mask(g, view.camera, splats=view.splats) > 0.5).astype(np.float64).reshape(-1, 1))
    fvis = ad.Tensor(g.f_vis, True)
    net = scene.nets["vis"]
    pos = ad.Tensor(g.positions)
    params = [fvis, *net.params()]
    iters = schedule.stage3_iters
    lr_mlp = ExpDecay(*schedule.lr_mlp, iters)
    opt = Adam(
        [
            ([fvis], schedule.lr_vis_features),
            (net.params(), lr_mlp),
        ],
        schedule.beta1, schedule.beta2, schedule.eps,
    )
    logger = CsvLog(log_path, ["iter", "loss", "lr_mlp"])
    history = []
    n_pairs = len(cams) * len(dirs)
    state = {}
    for t in range(1, iters + 1):
        pair = _epoch_order(rng, n_pairs, t, state)
        c, di = divmod(pair, len(dirs))
        view = cams[c]
        dir_rows = ad.Tensor(np.ascontiguousarray(np.broadcast_to(dirs[di], (n, 3))))
        raw = net(ad.concat([fvis, pos, dir_rows], axis=1))  # (N, 1) in [-1, 1]
        v01 = (raw + 1.0) * 0.5
        vmap = raster.composite_t(view.splats, v01, 1.0)
        target = raster.composite(view.splats, traced[c][di], 1.0).reshape(-1, 1)
        loss = L.vis_loss(vmap, target, sky_flat[c])
        ad.backward(loss)
        opt.step()
        ad.zero_grads(params)
        history.append(float(loss.data))
        logger.row([t, loss.data, lr_mlp(t)])
    logger.close()
    scene.bake_directions = dirs.copy()
    if "bake" not in scene.stages:
        scene.stages.append("bake")
    return shadow.BakeCache(dirs.copy()), history
