"""Software Gaussian rasterizer.

Projection uses the usual local affine approximation: the 2D covariance
is J Sigma_cam J^T plus a 0.3 px^2 diagonal so splats never degenerate
below a pixel. Compositing is front-to-back alpha blending over splats
sorted by center depth (ties broken by source index), which for frozen
geometry is a *linear* map from per-Gaussian attributes to pixels. We
therefore materialize that map once per camera as a sparse matrix plus
a background-transmittance vector and render everything (colors, depth,
visibility, sky semantics) through it; output is independent of any
tiling because there is none.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .scene import Camera, Gaussians

NEAR_PLANE = 0.01
COV_DILATION = 0.3  # px^2 added to the 2D covariance diagonal
ALPHA_CLAMP = 0.99
MIN_ALPHA = 1.0 / 255.0  # contributions below this are dropped
DEPTH_SENTINEL = 1e9
COVERAGE_EPS = 1e-4  # accumulated alpha below this counts as "nothing rendered"


@dataclass
class SplatList:
    """Projected Gaussians for one camera, sorted by (depth, source index)."""

    means: np.ndarray  # (M, 2) pixel coordinates
    inv_covs: np.ndarray  # (M, 3) packed inverse 2D covariance (a, b, c)
    alphas: np.ndarray  # (M,)
    depths: np.ndarray  # (M,) camera-frame z
    radii: np.ndarray  # (M,) 3-sigma footprint radius in px
    source: np.ndarray  # (M,) index into the scene's Gaussians
    n_gaussians: int
    width: int
    height: int
    _weights: tuple | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.means.shape[0]

    def weights(self):
        if self._weights is None:
            self._weights = _splat_weights(self)
        return self._weights


def project(gaussians: Gaussians, camera: Camera) -> SplatList:
    """Perspective-project every Gaussian; cull those behind the near
    plane (depth <= 0.01) and those whose 3-sigma footprint misses the
    viewport entirely."""
    p_cam = gaussians.positions @ camera.rotation.T + camera.translation  # (N, 3)
    z = p_cam[:, 2]
    keep = z > NEAR_PLANE
    idx = np.nonzero(keep)[0]
    p_cam = p_cam[idx]
    z = z[idx]

    u = camera.fx * p_cam[:, 0] / z + camera.cx
    v = camera.fy * p_cam[:, 1] / z + camera.cy

    cov_cam = np.einsum(
        "ij,njk,lk->nil", camera.rotation, gaussians.covariances()[idx], camera.rotation
    )
    # Affine Jacobian of (x, y, z) -> (fx x/z + cx, fy y/z + cy).
    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * p_cam[:, 0] / z**2
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * p_cam[:, 1] / z**2
    cov2 = np.einsum("nij,njk,nlk->nil", J, cov_cam, J)
    a = cov2[:, 0, 0] + COV_DILATION
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + COV_DILATION

    lam_max = 0.5 * (a + c + np.sqrt((a - c) ** 2 + 4 * b**2))
    radii = np.ceil(3.0 * np.sqrt(lam_max))

    vis = (
        (u + radii > 0.0)
        & (u - radii < camera.width)
        & (v + radii > 0.0)
        & (v - radii < camera.height)
    )
    idx, u, v, z, radii = idx[vis], u[vis], v[vis], z[vis], radii[vis]
    a, b, c = a[vis], b[vis], c[vis]

    det = a * c - b * b  # positive: dilation keeps the covariance PD
    inv = np.stack([c / det, -b / det, a / det], axis=1)

    order = np.lexsort((idx, z))
    return SplatList(
        means=np.stack([u, v], axis=1)[order],
        inv_covs=inv[order],
        alphas=gaussians.opacities[idx][order],
        depths=z[order],
        radii=radii[order],
        source=idx[order].astype(np.int64),
        n_gaussians=len(gaussians),
        width=camera.width,
        height=camera.height,
    )


def _splat_weights(splats: SplatList):
    """Walk splats front to back and record per-pixel blending weights
    w = alpha_2d * prod(1 - alpha_2d_closer). Returns the (H*W, N)
    sparse weight matrix and the residual background transmittance."""
    H, W = splats.height, splats.width
    T = np.ones((H, W))
    rows, cols, vals = [], [], []
    pix_index = np.arange(H * W).reshape(H, W)

    for k in range(len(splats)):
        u, v = splats.means[k]
        r = splats.radii[k]
        x0 = max(int(np.floor(u - r)), 0)
        x1 = min(int(np.ceil(u + r)), W - 1)
        y0 = max(int(np.floor(v - r)), 0)
        y1 = min(int(np.ceil(v + r)), H - 1)
        if x0 > x1 or y0 > y1:
            continue
        dx = np.arange(x0, x1 + 1) + 0.5 - u  # pixel centers at (j+0.5, i+0.5)
        dy = np.arange(y0, y1 + 1) + 0.5 - v
        ia, ib, ic = splats.inv_covs[k]
        q = ia * dx[None, :] ** 2 + 2.0 * ib * dy[:, None] * dx[None, :] + ic * dy[:, None] ** 2
        alpha = np.minimum(splats.alphas[k] * np.exp(-0.5 * q), ALPHA_CLAMP)
        live = alpha >= MIN_ALPHA
        if not live.any():
            continue
        patch_T = T[y0:y1 + 1, x0:x1 + 1]
        w = patch_T[live] * alpha[live]
        rows.append(pix_index[y0:y1 + 1, x0:x1 + 1][live])
        cols.append(np.full(w.size, splats.source[k], dtype=np.int64))
        vals.append(w)
        patch_T[live] *= 1.0 - alpha[live]

    if rows:
        mat = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(H * W, splats.n_gaussians),
        )
    else:
        mat = sparse.csr_matrix((H * W, splats.n_gaussians))
    return mat, T.reshape(-1)


def composite(splats: SplatList, attributes: np.ndarray, background) -> np.ndarray:
    """Blend per-Gaussian attributes into an (H, W, C) image; the
    background fills whatever transmittance is left per pixel."""
    attributes = np.asarray(attributes, dtype=np.float64)
    squeeze = attributes.ndim == 1
    if squeeze:
        attributes = attributes[:, None]
    if attributes.shape[0] != splats.n_gaussians:
        raise ValueError(
            f"attribute rows ({attributes.shape[0]}) != Gaussian count ({splats.n_gaussians})"
        )
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (attributes.shape[1],))
    mat, t_bg = splats.weights()
    flat = mat @ attributes + t_bg[:, None] * bg[None, :]
    out = flat.reshape(splats.height, splats.width, attributes.shape[1])
    return out[:, :, 0] if squeeze else out


def composite_t(splats: SplatList, attributes: ad.Tensor, background) -> ad.Tensor:
    """Differentiable composite: gradient flows to the attributes only,
    the blending weights stay frozen with the geometry. Output is flat
    (H*W, C)."""
    if attributes.data.ndim != 2 or attributes.data.shape[0] != splats.n_gaussians:
        raise ValueError("attributes must be (N, C)")
    bg = np.broadcast_to(
        np.asarray(background, dtype=np.float64), (attributes.data.shape[1],)
    )
    mat, t_bg = splats.weights()
    data = mat @ attributes.data + t_bg[:, None] * bg[None, :]
    return ad.Tensor.from_op(data, (attributes,), (lambda g: mat.T @ g,))


def render_depth(gaussians: Gaussians, camera: Camera, splats: SplatList | None = None) -> np.ndarray:
    """Alpha-weighted depth per pixel; pixels with (near) zero coverage
    get the far sentinel 1e9."""
    splats = project(gaussians, camera) if splats is None else splats
    mat, t_bg = splats.weights()
    acc = (mat @ np.ascontiguousarray(_center_depths(gaussians, camera))[:, None])[:, 0]
    covered = (1.0 - t_bg) > COVERAGE_EPS
    out = np.where(covered, acc, DEPTH_SENTINEL)
    return out.reshape(camera.height, camera.width)


def _center_depths(gaussians: Gaussians, camera: Camera) -> np.ndarray:
    return gaussians.positions @ camera.rotation.T[:, 2] + camera.translation[2]


def render_sky_mask(gaussians: Gaussians, camera: Camera, splats: SplatList | None = None) -> np.ndarray:
    """Splat the sky semantics over a background of 1 (empty sky)."""
    splats = project(gaussians, camera) if splats is None else splats
    out = composite(splats, gaussians.sky_semantic, 1.0)
    return np.clip(out, 0.0, 1.0)
