"""Sun-visibility ray tracing through the Gaussian cloud.

A shadow ray starts at a Gaussian center and runs toward the sun. Each
other Gaussian responds at the ray parameter minimizing its Mahalanobis
distance; responses above a floor attenuate transmittance front to
back, additionally scaled by |n . d| so grazing surfels block more than
face-on ones. Candidates come either from every kept Gaussian (brute
force) or from a uniform grid walked with a DDA; both routes share the
same per-candidate arithmetic and the same (t, index) ordering, so
their results agree bitwise. The grid insertion radius is the distance
at which a response can still reach the floor, which makes the grid's
candidate set a superset of the contributing ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import raster
from .scene import Camera, Gaussians, Scene

T_MIN = 1e-3  # ray-parameter floor excluding the source's own neighbourhood
RESPONSE_MIN = 0.01  # contributions below this are dropped
RADIUS_FACTOR = math.sqrt(2.0 * math.log(100.0))  # Mahalanobis reach of RESPONSE_MIN at alpha 1
FRONT_TAU_SCALE = 0.05  # front-filter slack as a fraction of scene extent
SKY_TAU = 0.5


@numba.njit(cache=True)
def _trace_kernel(origins, dirs, sources, centers, inv_covs, normals, alphas,
                  kept, use_grid, gorigin, cell, dims, cell_start, cell_entries, out):
    n_rays = origins.shape[0]
    n_total = centers.shape[0]
    n_kept = kept.shape[0]
    cand = np.empty(n_kept, np.int64)
    tbuf = np.empty(n_kept, np.float64)
    abuf = np.empty(n_kept, np.float64)
    nbuf = np.empty(n_kept, np.float64)
    ibuf = np.empty(n_kept, np.int64)
    stamp = np.full(n_total, -1, np.int64)
    for r in range(n_rays):
        ox = origins[r, 0]
        oy = origins[r, 1]
        oz = origins[r, 2]
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        src = sources[r]
        nc = 0
        if use_grid:
            # clip the ray against the grid box
            tlo = 0.0
            thi = 1e300
            inside = True
            for a in range(3):
                oa = origins[r, a]
                da = dirs[r, a]
                lo = gorigin[a]
                hi = gorigin[a] + dims[a] * cell
                if da == 0.0:
                    if oa < lo or oa > hi:
                        inside = False
                else:
                    t1 = (lo - oa) / da
                    t2 = (hi - oa) / da
                    if t1 > t2:
                        t1, t2 = t2, t1
                    if t1 > tlo:
                        tlo = t1
                    if t2 < thi:
                        thi = t2
            if inside and tlo <= thi:
                cx = int(math.floor((ox + tlo * dx - gorigin[0]) / cell))
                cy = int(math.floor((oy + tlo * dy - gorigin[1]) / cell))
                cz = int(math.floor((oz + tlo * dz - gorigin[2]) / cell))
                if cx < 0:
                    cx = 0
                if cy < 0:
                    cy = 0
                if cz < 0:
                    cz = 0
                if cx >= dims[0]:
                    cx = dims[0] - 1
                if cy >= dims[1]:
                    cy = dims[1] - 1
                if cz >= dims[2]:
                    cz = dims[2] - 1
                sx = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
                sy = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
                sz = 1 if dz > 0.0 else (-1 if dz < 0.0 else 0)
                big = 1e300
                ddx = cell / abs(dx) if dx != 0.0 else big
                ddy = cell / abs(dy) if dy != 0.0 else big
                ddz = cell / abs(dz) if dz != 0.0 else big
                if dx > 0.0:
                    nx = (gorigin[0] + (cx + 1) * cell - ox) / dx
                elif dx < 0.0:
                    nx = (gorigin[0] + cx * cell - ox) / dx
                else:
                    nx = big
                if dy > 0.0:
                    ny = (gorigin[1] + (cy + 1) * cell - oy) / dy
                elif dy < 0.0:
                    ny = (gorigin[1] + cy * cell - oy) / dy
                else:
                    ny = big
                if dz > 0.0:
                    nz = (gorigin[2] + (cz + 1) * cell - oz) / dz
                elif dz < 0.0:
                    nz = (gorigin[2] + cz * cell - oz) / dz
                else:
                    nz = big
                while True:
                    cid = (cx * dims[1] + cy) * dims[2] + cz
                    for e in range(cell_start[cid], cell_start[cid + 1]):
                        gid = cell_entries[e]
                        if stamp[gid] != r:
                            stamp[gid] = r
                            cand[nc] = gid
                            nc += 1
                    if nx <= ny and nx <= nz:
                        if nx > thi:
                            break
                        cx += sx
                        if cx < 0 or cx >= dims[0]:
                            break
                        nx += ddx
                    elif ny <= nz:
                        if ny > thi:
                            break
                        cy += sy
                        if cy < 0 or cy >= dims[1]:
                            break
                        ny += ddy
                    else:
                        if nz > thi:
                            break
                        cz += sz
                        if cz < 0 or cz >= dims[2]:
                            break
                        nz += ddz
        else:
            for i in range(n_kept):
                cand[i] = kept[i]
            nc = n_kept
        # peak response of every candidate along the ray
        m = 0
        for ci in range(nc):
            j = cand[ci]
            if j == src:
                continue
            a00 = inv_covs[j, 0, 0]
            a01 = inv_covs[j, 0, 1]
            a02 = inv_covs[j, 0, 2]
            a11 = inv_covs[j, 1, 1]
            a12 = inv_covs[j, 1, 2]
            a22 = inv_covs[j, 2, 2]
            rx = centers[j, 0] - ox
            ry = centers[j, 1] - oy
            rz = centers[j, 2] - oz
            bx = a00 * dx + a01 * dy + a02 * dz
            by = a01 * dx + a11 * dy + a12 * dz
            bz = a02 * dx + a12 * dy + a22 * dz
            kappa = bx * dx + by * dy + bz * dz
            tstar = (bx * rx + by * ry + bz * rz) / kappa
            if tstar < T_MIN:
                continue
            ex = tstar * dx - rx
            ey = tstar * dy - ry
            ez = tstar * dz - rz
            gx = a00 * ex + a01 * ey + a02 * ez
            gy = a01 * ex + a11 * ey + a12 * ez
            gz = a02 * ex + a12 * ey + a22 * ez
            q = ex * gx + ey * gy + ez * gz
            resp = alphas[j] * math.exp(-0.5 * q)
            if resp < RESPONSE_MIN:
                continue
            nd = abs(normals[j, 0] * dx + normals[j, 1] * dy + normals[j, 2] * dz)
            tbuf[m] = tstar
            abuf[m] = resp
            nbuf[m] = nd
            ibuf[m] = j
            m += 1
        # sort contributions by (t, index) so both routes accumulate identically
        for k in range(1, m):
            tk = tbuf[k]
            ak = abuf[k]
            nk = nbuf[k]
            ik = ibuf[k]
            p = k - 1
            while p >= 0 and (tbuf[p] > tk or (tbuf[p] == tk and ibuf[p] > ik)):
                tbuf[p + 1] = tbuf[p]
                abuf[p + 1] = abuf[p]
                nbuf[p + 1] = nbuf[p]
                ibuf[p + 1] = ibuf[p]
                p -= 1
            tbuf[p + 1] = tk
            abuf[p + 1] = ak
            nbuf[p + 1] = nk
            ibuf[p + 1] = ik
        t_acc = 1.0
        for k in range(m):
            t_acc = ((1.0 - abuf[k]) * t_acc) * nbuf[k]
        out[r] = t_acc


@dataclass
class TraceContext:
    """Packed per-Gaussian trace data plus an optional uniform grid."""

    centers: np.ndarray  # (N, 3)
    inv_covs: np.ndarray  # (N, 3, 3)
    normals: np.ndarray  # (N, 3)
    alphas: np.ndarray  # (N,)
    kept: np.ndarray  # (K,) int64 indices of occluder candidates
    use_grid: bool
    origin: np.ndarray  # (3,)
    cell: float
    dims: np.ndarray  # (3,) int64
    cell_start: np.ndarray  # (C + 1,) int64
    cell_entries: np.ndarray  # (E,) int64


def prepare_trace(gaussians: Gaussians, keep: np.ndarray | None = None, use_grid: bool = True) -> TraceContext:
    """Pack trace arrays and (optionally) build the acceleration grid.

    keep is a boolean occluder mask (sky and transient filters); rays
    may still start from any Gaussian. use_grid False gives the brute
    route that scores every kept candidate per ray.
    """
    n = len(gaussians)
    if keep is None:
        keep = np.ones(n, dtype=bool)
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (n,):
        raise ValueError(f"keep mask has shape {keep.shape}, expected ({n},)")
    kept = np.nonzero(keep)[0].astype(np.int64)
    centers = np.ascontiguousarray(gaussians.positions)
    inv_covs = np.ascontiguousarray(gaussians.inv_covariances())
    normals = np.ascontiguousarray(gaussians.normals())
    alphas = np.ascontiguousarray(gaussians.opacities)
    origin = np.zeros(3)
    cell = 1.0
    dims = np.ones(3, dtype=np.int64)
    cell_start = np.zeros(2, dtype=np.int64)
    entries = np.zeros(0, dtype=np.int64)
    if use_grid and kept.size:
        s_max = gaussians.scales.max(axis=1)
        cell = 2.0 * float(np.median(3.0 * s_max[kept]))
        radii = RADIUS_FACTOR * s_max[kept]  # reach at which a response can still hit the floor
        lo = (centers[kept] - radii[:, None]).min(axis=0)
        hi = (centers[kept] + radii[:, None]).max(axis=0)
        dims = np.maximum(np.ceil((hi - lo) / cell).astype(np.int64), 1)
        origin = lo
        lo_cell = np.clip(np.floor((centers[kept] - radii[:, None] - lo) / cell).astype(np.int64), 0, dims - 1)
        hi_cell = np.clip(np.floor((centers[kept] + radii[:, None] - lo) / cell).astype(np.int64), 0, dims - 1)
        counts = np.prod(hi_cell - lo_cell + 1, axis=1)
        total = int(counts.sum())
        flat_ids = np.empty(total, dtype=np.int64)
        flat_cells = np.empty(total, dtype=np.int64)
        pos = 0
        for row, gid in enumerate(kept):
            x0, y0, z0 = lo_cell[row]
            x1, y1, z1 = hi_cell[row]
            for cx in range(x0, x1 + 1):
                for cy in range(y0, y1 + 1):
                    base = (cx * dims[1] + cy) * dims[2]
                    for cz in range(z0, z1 + 1):
                        flat_ids[pos] = gid
                        flat_cells[pos] = base + cz
                        pos += 1
        order = np.argsort(flat_cells, kind="stable")
        entries = flat_ids[order]
        cells_sorted = flat_cells[order]
        n_cells = int(dims.prod())
        cell_start = np.searchsorted(cells_sorted, np.arange(n_cells + 1)).astype(np.int64)
    return TraceContext(
        centers, inv_covs, normals, alphas, kept, bool(use_grid and kept.size),
        origin, cell, dims, cell_start, entries,
    )


def _check_direction(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(d))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be unit length, |d| = {norm}")
    if d[2] < 0:
        raise ValueError("sun direction must point into the upper hemisphere (z >= 0)")
    return d


def trace_batch(ctx: TraceContext, sources: np.ndarray, d) -> np.ndarray:
    """Transmittance toward d for rays starting at the given Gaussian
    indices (the source never occludes itself)."""
    d = _check_direction(d)
    sources = np.ascontiguousarray(np.asarray(sources, dtype=np.int64).reshape(-1))
    origins = np.ascontiguousarray(ctx.centers[sources])
    dirs = np.ascontiguousarray(np.broadcast_to(d, origins.shape))
    out = np.empty(len(sources))
    _trace_kernel(
        origins, dirs, sources, ctx.centers, ctx.inv_covs, ctx.normals, ctx.alphas,
        ctx.kept, ctx.use_grid, ctx.origin, ctx.cell, ctx.dims, ctx.cell_start,
        ctx.cell_entries, out,
    )
    return out


def trace_visibility(ctx: TraceContext, source: int, d) -> float:
    return float(trace_batch(ctx, np.array([source]), d)[0])


def sky_filter(gaussians: Gaussians, threshold: float = SKY_TAU) -> np.ndarray:
    """Keep mask dropping Gaussians whose sky score exceeds the
    threshold (they model sky texture, not geometry)."""
    return gaussians.sky_semantic <= threshold


def front_filter(
    gaussians: Gaussians,
    camera: Camera,
    depth: np.ndarray | None = None,
    tau: float | None = None,
    splats: raster.SplatList | None = None,
) -> np.ndarray:
    """Keep mask dropping Gaussians floating well in front of the
    surface their pixel sees (transient passers-by). Centers that land
    outside the viewport or behind the near plane are kept; only a
    confident in-front violation discards."""
    if tau is None:
        tau = FRONT_TAU_SCALE * gaussians.extent()
    if depth is None:
        depth = raster.render_depth(gaussians, camera, splats=splats)
    p_cam = gaussians.positions @ camera.rotation.T + camera.translation
    z = p_cam[:, 2]
    keep = np.ones(len(gaussians), dtype=bool)
    valid = z > raster.NEAR_PLANE
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * p_cam[:, 0] / z + camera.cx
        v = camera.fy * p_cam[:, 1] / z + camera.cy
    ix = np.floor(u).astype(np.int64)
    iy = np.floor(v).astype(np.int64)
    in_view = valid & (ix >= 0) & (ix < camera.width) & (iy >= 0) & (iy < camera.height)
    surf = np.full(len(gaussians), np.inf)
    surf[in_view] = depth[iy[in_view], ix[in_view]]
    keep[in_view & (z < surf - tau)] = False
    return keep


def occluder_mask(gaussians: Gaussians, camera: Camera, splats: raster.SplatList | None = None) -> np.ndarray:
    """Combined sky and front filters for one camera."""
    return sky_filter(gaussians) & front_filter(gaussians, camera, splats=splats)


def fibonacci_directions(n: int) -> np.ndarray:
    """n upper-hemisphere directions from the Fibonacci lattice,
    ordered from near-zenith down toward the horizon."""
    if n < 1:
        raise ValueError("need at least one direction")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    phi = 2.0 * math.pi * i * (1.0 - 1.0 / golden)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@dataclass
class BakeCache:
    """Record of the direction set the visibility net was trained on."""

    directions: np.ndarray  # (D, 3)


def render_traced_visibility(
    gaussians: Gaussians,
    camera: Camera,
    d,
    ctx: TraceContext | None = None,
    splats: raster.SplatList | None = None,
) -> np.ndarray:
    """Splat per-Gaussian traced transmittance into an (H, W) map with
    a bright (uncovered = 1) background."""
    if ctx is None:
        ctx = prepare_trace(gaussians, occluder_mask(gaussians, camera, splats=splats))
    v = trace_batch(ctx, np.arange(len(gaussians), dtype=np.int64), d)
    if splats is None:
        splats = raster.project(gaussians, camera)
    return np.clip(raster.composite(splats, v, 1.0), 0.0, 1.0)


def render_visibility(scene: Scene, camera: Camera, d, splats: raster.SplatList | None = None) -> np.ndarray:
    """Baked visibility for one view: decode the cached net at every
    Gaussian for this sun direction, splat, and pin sky pixels to one
    (the sun always reaches the sky)."""
    d = _check_direction(d)
    if "vis" not in scene.nets or not scene.baked:
        raise RuntimeError("no baked visibility cache in this scene; run the bake stage")
    g = scene.gaussians
    n = len(g)
    x = np.concatenate([g.f_vis, g.positions, np.broadcast_to(d, (n, 3))], axis=1)
    raw = scene.nets["vis"].forward_np(x)[:, 0]  # in [-1, 1]
    v = 0.5 * (raw + 1.0)
    if splats is None:
        splats = raster.project(g, camera)
    vmap = np.clip(raster.composite(splats, v, 1.0), 0.0, 1.0)
    sky = raster.render_sky_mask(g, camera, splats=splats) > 0.5
    vmap[sky] = 1.0
    return vmap
