"""Sunlight visibility extraction from ambient-fit residuals.

The ambient stage fits each image with a single embedding-conditioned
color per Gaussian, supervised only outside a coarse brightness mask,
so it can explain shadowed and diffuse regions but not direct sun.
Clustering the per-pixel residual with 2-means then splits sunlit from
shadowed pixels; the larger centroid is the sunlit cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import raster
from .scene import Scene
from .shading import decoder_input

COARSE_EPS = 0.1
COARSE_GAMMA = 1.5
COARSE_TAU = 0.3
DISPARITY_TAU = 0.1
CLUSTER_TOL = 1e-6
CLUSTER_MAX_ITERS = 100
DEGENERATE_GAP = 1e-4


def coarse_visibility(image: np.ndarray, sunny: bool = True) -> np.ndarray:
    """Cheap brightness-based sunlit mask: shifted max-channel response
    raised to a contrast power, then thresholded. Cloudy images have no
    sunlit pixels by definition."""
    image = np.asarray(image, dtype=np.float64)
    if not sunny:
        return np.zeros(image.shape[:2])
    peak = image.max(axis=-1)
    response = np.maximum(peak - COARSE_EPS, 0.0) ** COARSE_GAMMA
    return (response > COARSE_TAU).astype(np.float64)


def sky_mask_from_disparity(depth: np.ndarray) -> np.ndarray:
    """Pixels whose inverse rendered depth falls below the disparity
    threshold count as sky (far or uncovered)."""
    depth = np.asarray(depth, dtype=np.float64)
    with np.errstate(divide="ignore"):
        disparity = np.where(depth > 0, 1.0 / depth, np.inf)
    return (disparity < DISPARITY_TAU).astype(np.float64)


def render_ambient(scene: Scene, splats: raster.SplatList, image_index: int) -> np.ndarray:
    """Splat the ambient decoder's colors for one image."""
    if "amb" not in scene.nets:
        raise RuntimeError("ambient net missing; run the ambient stage")
    emb = ad.Tensor(scene.embeddings.amb[image_index])
    x = decoder_input("amb", ad.Tensor(scene.amb_features), emb)
    colors = scene.nets["amb"](x).data
    return raster.composite(splats, colors, np.zeros(3))


def ambient_residual(image: np.ndarray, ambient: np.ndarray) -> np.ndarray:
    """Channel-mean absolute difference between an image and its
    ambient-only render."""
    return np.abs(np.asarray(image, dtype=np.float64) - np.asarray(ambient, dtype=np.float64)).mean(axis=-1)


@dataclass
class ClusterResult:
    assignments: np.ndarray  # (H, W) {0,1}, 1 = sunlit, zero outside region
    mu_sunlit: float
    mu_shadow: float
    iterations: int
    degenerate: bool
    wcss: list = field(default_factory=list)  # within-cluster sum of squares per iteration


def two_means(values: np.ndarray, region: np.ndarray) -> ClusterResult:
    """Lloyd 2-means over the in-region values of a scalar plane.

    Centroids start at the 25th/75th percentiles; iteration stops when
    both centroids move less than the tolerance. Fewer than two
    distinct values, or a final centroid gap below the degeneracy
    threshold, yields an all-zero assignment flagged degenerate.
    """
    values = np.asarray(values, dtype=np.float64)
    region = np.asarray(region, dtype=np.float64)
    inside = region > 0
    vals = values[inside]
    if vals.size == 0 or np.unique(vals).size < 2:
        return ClusterResult(np.zeros_like(values), 0.0, 0.0, 0, True)
    mu = np.array([np.percentile(vals, 25.0), np.percentile(vals, 75.0)])
    wcss: list[float] = []
    iterations = 0
    for iterations in range(1, CLUSTER_MAX_ITERS + 1):
        d_lo = (vals - mu[0]) ** 2
        d_hi = (vals - mu[1]) ** 2
        hi = d_hi < d_lo  # ties stay with the lower centroid
        wcss.append(float(np.where(hi, d_hi, d_lo).sum()))
        new = mu.copy()
        if (~hi).any():
            new[0] = vals[~hi].mean()
        if hi.any():
            new[1] = vals[hi].mean()
        moved = np.max(np.abs(new - mu))
        mu = new
        if moved < CLUSTER_TOL:
            break
    mu_sun = float(mu.max())
    mu_sh = float(mu.min())
    if mu_sun - mu_sh < DEGENERATE_GAP:
        return ClusterResult(np.zeros_like(values), mu_sun, mu_sh, iterations, True, wcss)
    sunlit = inside & ((values - mu_sun) ** 2 < (values - mu_sh) ** 2)
    return ClusterResult(sunlit.astype(np.float64), mu_sun, mu_sh, iterations, False, wcss)


def extract_visibility(
    scene: Scene,
    camera_or_splats,
    image: np.ndarray,
    sky_mask: np.ndarray,
    image_index: int,
) -> tuple[np.ndarray, ClusterResult | None]:
    """Per-pixel sunlit mask for one training image.

    Cloudy images short-circuit to all-shadow. Otherwise the ambient
    render's residual is clustered over non-sky pixels; a degenerate
    clustering (residuals carry no two-mode structure) also yields
    all-shadow so downstream stages never see a fabricated mask.
    """
    image = np.asarray(image, dtype=np.float64)
    if not scene.embeddings.sunny[image_index]:
        return np.zeros(image.shape[:2]), None
    splats = (
        camera_or_splats
        if isinstance(camera_or_splats, raster.SplatList)
        else raster.project(scene.gaussians, camera_or_splats)
    )
    ambient = render_ambient(scene, splats, image_index)
    residual = ambient_residual(image, ambient)
    region = 1.0 - np.asarray(sky_mask, dtype=np.float64)
    result = two_means(residual, region)
    return result.assignments.copy(), result
