"""Outdoor relighting for Gaussian splats: ambient fit, shadow-residual
clustering, sun/sky/indirect decomposition, ray-traced visibility, and
a distilled directional visibility cache."""

__version__ = "0.1.0"

from .scene import Camera, Gaussians, Scene, load_scene, save_scene

__all__ = ["Camera", "Gaussians", "Scene", "load_scene", "save_scene", "__version__"]
