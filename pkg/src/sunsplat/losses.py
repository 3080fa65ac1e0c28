"""Training losses for the decomposition stages.

Every loss is a mean over the pixels (and channels) its mask selects,
so weights stay comparable across image sizes. Masks enter the graph
as constants; gradients flow only through predicted maps. An empty
mask yields an exact zero loss rather than 0/0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .shading import compose_t


@dataclass(frozen=True)
class LossWeights:
    l1_sun: float = 1.0
    l1_sky: float = 10.0
    l1_ind: float = 10.0
    scl_sun: float = 0.1
    scl_sky: float = 5.0
    scl_ind: float = 5.0


def _mask_const(mask, ndim: int) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == ndim - 1:
        m = m[..., None]
    return m


def l1_masked(pred: ad.Tensor, target, mask) -> ad.Tensor:
    """Mean absolute error over masked pixels and channels."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    m = _mask_const(mask, pred.data.ndim)
    count = int(np.count_nonzero(m)) * (pred.data.shape[-1] if m.shape[-1] == 1 else 1)
    if count == 0:
        return ad.Tensor(0.0)
    total = ad.ssum(ad.mul(m, ad.absval(pred - target)))
    return total * (1.0 / count)


def region_losses(image, v_hat, m_sky, comps: dict, weights: LossWeights = LossWeights()) -> dict:
    """Photometric terms tied to the three lighting regions.

    Sunlit pixels supervise the full recomposition, sky pixels the
    sky-only product, and the remaining (shadowed, non-sky) pixels the
    sun-free product. comps holds sun/sky/ind/reflectance map Tensors;
    returns the weighted terms plus their sum and the composite map.
    """
    image = np.asarray(image, dtype=np.float64)
    v = np.asarray(v_hat, dtype=np.float64)
    sky = np.asarray(m_sky, dtype=np.float64)
    composite = compose_t(v, comps["sun"], comps["sky"], comps["ind"], comps["reflectance"])
    sky_only = comps["sky"] * comps["reflectance"]
    sun_free = (comps["sky"] + comps["ind"]) * comps["reflectance"]
    m_ind = (1.0 - v) * (1.0 - sky)
    out = {
        "sun": l1_masked(composite, image, v) * weights.l1_sun,
        "sky": l1_masked(sky_only, image, sky) * weights.l1_sky,
        "ind": l1_masked(sun_free, image, m_ind) * weights.l1_ind,
        "composite": composite,
    }
    out["total"] = out["sun"] + out["sky"] + out["ind"]
    return out


def scl(shading: ad.Tensor, reflectance: ad.Tensor, mask) -> ad.Tensor:
    """Shading consistency: mean |forward-diff(S) - forward-diff(R)|
    pooled over x and y directions. A pixel contributes a direction
    only when its forward neighbour is also inside the mask."""
    s = ad.as_tensor(shading)
    r = ad.as_tensor(reflectance)
    m = np.asarray(mask, dtype=np.float64)
    mx = (m[:, :-1] * m[:, 1:])[..., None]
    my = (m[:-1, :] * m[1:, :])[..., None]
    channels = s.data.shape[-1]
    count = (int(np.count_nonzero(mx)) + int(np.count_nonzero(my))) * channels
    if count == 0:
        return ad.Tensor(0.0)
    dsx = s[:, 1:, :] - s[:, :-1, :]
    drx = r[:, 1:, :] - r[:, :-1, :]
    dsy = s[1:, :, :] - s[:-1, :, :]
    dry = r[1:, :, :] - r[:-1, :, :]
    total = ad.ssum(ad.mul(mx, ad.absval(dsx - drx))) + ad.ssum(ad.mul(my, ad.absval(dsy - dry)))
    return total * (1.0 / count)


def scl_total(comps: dict, m_sky, weights: LossWeights = LossWeights()) -> dict:
    """Weighted shading-consistency terms for the three shading maps
    against reflectance, masked to non-sky pixels."""
    mask = 1.0 - np.asarray(m_sky, dtype=np.float64)
    r = comps["reflectance"]
    out = {
        "sun": scl(comps["sun"], r, mask) * weights.scl_sun,
        "sky": scl(comps["sky"], r, mask) * weights.scl_sky,
        "ind": scl(comps["ind"], r, mask) * weights.scl_ind,
    }
    out["total"] = out["sun"] + out["sky"] + out["ind"]
    return out


def vis_loss(v_pred: ad.Tensor, v_traced, m_sky) -> ad.Tensor:
    """Mean squared error between the cached and ray-traced visibility
    maps over non-sky pixels."""
    v_pred = ad.as_tensor(v_pred)
    target = np.asarray(v_traced, dtype=np.float64)
    m = _mask_const(1.0 - np.asarray(m_sky, dtype=np.float64), v_pred.data.ndim)
    count = int(np.count_nonzero(m))
    if count == 0:
        return ad.Tensor(0.0)
    diff = v_pred - target
    return ad.ssum(ad.mul(m, diff * diff)) * (1.0 / count)


def sem_loss(m_pred: ad.Tensor, m_sky) -> ad.Tensor:
    """Binary cross-entropy between the splatted sky opacity map and
    the sky mask, clamped away from the log singularities."""
    m_pred = ad.as_tensor(m_pred)
    target = _mask_const(m_sky, m_pred.data.ndim)
    p = ad.clip(m_pred, 1e-6, 1.0 - 1e-6)
    bce = ad.mul(-target, ad.log(p)) - ad.mul(1.0 - target, ad.log(1.0 - p))
    return ad.mean(bce)
