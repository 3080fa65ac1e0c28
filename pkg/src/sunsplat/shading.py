"""Shading decomposition and relighting.

Per-Gaussian shading colors come from four decoders: reflectance from
its feature alone, sun/sky shading from feature plus a per-image
embedding, indirect shading from base color plus feature plus
embedding (concatenation order is part of the contract: base color
first, feature next, embedding last). Component maps are splatted once
and recomposed as

    I = (V * S_sun + S_sky + S_ind) * R

channelwise. Reflectance never sees an embedding, so it is identical
across images by construction.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import raster
from .scene import Camera, ImageEmbeddings, Scene

COMPONENT_ROLES = ("sun", "sky", "ind")
OUTPUT_NAMES = ("composite", "sun", "sky", "ind", "reflectance", "visibility")


def decoder_input(role: str, feats: ad.Tensor, emb: ad.Tensor | None, colors: ad.Tensor | None = None) -> ad.Tensor:
    """Assemble a decoder's input rows; feature first, embedding last."""
    if role == "ref":
        return feats
    n = feats.data.shape[0]
    tiled = ad.tile_rows(emb, n)
    if role == "ind":
        if colors is None:
            raise ValueError("indirect decoder needs the base colors")
        return ad.concat([colors, feats, tiled], axis=1)
    return ad.concat([feats, tiled], axis=1)


def decode_colors(scene: Scene, emb: ImageEmbeddings) -> dict[str, np.ndarray]:
    """Per-Gaussian shading colors for one image's embeddings.
    Returns (N, 3) arrays keyed reflectance/sun/sky/ind."""
    for role in ("ref", "sun", "sky", "ind"):
        if role not in scene.nets:
            raise RuntimeError(f"decoder net.{role} missing; run the decomposition stage")
    g = scene.gaussians
    colors = ad.Tensor(g.colors)
    out = {
        "reflectance": scene.nets["ref"](ad.Tensor(g.f_ref)).data,
        "sun": scene.nets["sun"](decoder_input("sun", ad.Tensor(g.f_sun), ad.Tensor(emb.sun))).data,
        "sky": scene.nets["sky"](decoder_input("sky", ad.Tensor(g.f_sky), ad.Tensor(emb.sky))).data,
        "ind": scene.nets["ind"](
            decoder_input("ind", ad.Tensor(g.f_ind), ad.Tensor(emb.ind), colors)
        ).data,
    }
    return out


def compose(visibility, s_sun, s_sky, s_ind, reflectance) -> np.ndarray:
    """Recompose an image from its lighting components (all arrays
    broadcastable; visibility may omit the channel axis)."""
    v = np.asarray(visibility, dtype=np.float64)
    s_sun = np.asarray(s_sun, dtype=np.float64)
    if v.ndim == s_sun.ndim - 1:
        v = v[..., None]
    if v.size and (v.min() < -1e-9 or v.max() > 1.0 + 1e-9):
        raise ValueError("visibility must lie in [0, 1]")
    return (v * s_sun + np.asarray(s_sky, dtype=np.float64) + np.asarray(s_ind, dtype=np.float64)) * np.asarray(
        reflectance, dtype=np.float64
    )


def compose_t(visibility: np.ndarray, s_sun: ad.Tensor, s_sky: ad.Tensor, s_ind: ad.Tensor, reflectance: ad.Tensor) -> ad.Tensor:
    """Graph version of compose; visibility enters as a constant."""
    v = np.asarray(visibility, dtype=np.float64)
    if v.ndim == s_sun.data.ndim - 1:
        v = v[..., None]
    return (ad.mul(v, s_sun) + s_sky + s_ind) * reflectance


def interpolate_embeddings(a: ImageEmbeddings, b: ImageEmbeddings, t: float, components=COMPONENT_ROLES) -> ImageEmbeddings:
    """Blend two images' appearance codes; only the named components
    move, everything else stays at image a."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    components = tuple(components)
    for c in components:
        if c not in COMPONENT_ROLES:
            raise ValueError(f"unknown component {c!r}; valid: {COMPONENT_ROLES}")
    out = ImageEmbeddings(a.amb.copy(), a.sun.copy(), a.sky.copy(), a.ind.copy(), a.sunny)
    for c in components:
        va, vb = getattr(a, c), getattr(b, c)
        setattr(out, c, (1.0 - t) * va + t * vb)
    return out


def render_components(
    scene: Scene, camera: Camera, emb: ImageEmbeddings, splats: raster.SplatList | None = None
) -> dict[str, np.ndarray]:
    """Splat all four shading components in a single pass (one weight
    matrix, one matmul over the concatenated attributes)."""
    splats = raster.project(scene.gaussians, camera) if splats is None else splats
    colors = decode_colors(scene, emb)
    attrs = np.concatenate(
        [colors["sun"], colors["sky"], colors["ind"], colors["reflectance"]], axis=1
    )  # (N, 12)
    maps = raster.composite(splats, attrs, np.zeros(12))
    return {
        "sun": maps[:, :, 0:3],
        "sky": maps[:, :, 3:6],
        "ind": maps[:, :, 6:9],
        "reflectance": maps[:, :, 9:12],
    }


def relight(
    scene: Scene,
    camera: Camera,
    emb: ImageEmbeddings,
    sun_direction: np.ndarray | None,
    splats: raster.SplatList | None = None,
) -> dict[str, np.ndarray]:
    """Render components, visibility and the recomposed image for one
    camera under the given sun (None means cloudy: V = 0)."""
    from . import shadow  # local import: shadow pulls in the jit kernels

    splats = raster.project(scene.gaussians, camera) if splats is None else splats
    out = render_components(scene, camera, emb, splats)
    if sun_direction is None:
        vis = np.zeros((camera.height, camera.width))
    else:
        vis = shadow.render_visibility(scene, camera, sun_direction, splats=splats)
    out["visibility"] = vis
    out["composite"] = compose(vis, out["sun"], out["sky"], out["ind"], out["reflectance"])
    return out
