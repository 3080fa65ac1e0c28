"""On-disk bundle layout shared by the CLI and the render service.

A bundle directory holds one scene container plus everything needed to
train and relight it:

    scene.gare            Gaussian cloud + decoders + embeddings
    meta.json             cameras, lighting, image table, generator echo
    classes.npy           per-Gaussian provenance labels (synth only)
    images/clean_%04d.pfm analytic clean image
    images/train_%04d.pfm training image (clean + noise)
    images/train_%04d.png 8-bit preview
    masks/sky_%04d.png    sky mask {0,255}
    masks/shadow_%04d.png truth sun-visibility mask {0,255}
    masks/vis_%04d.png    extracted sun-visibility mask (after extract)
    depth/depth_%04d.pfm  truth depth (1e9 on sky)
    logs/*.csv            per-stage training logs
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imgio import read_pfm, read_png, write_pfm, write_png
from .scene import Camera, Scene, load_scene, save_scene
from .synth import SynthBundle
from .train import TrainView


def _camera_dict(cam: Camera) -> dict:
    return {
        "rotation": cam.rotation.reshape(-1).tolist(),
        "translation": cam.translation.tolist(),
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
    }


def _camera_from_dict(d: dict) -> Camera:
    return Camera(
        np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
        np.asarray(d["translation"], dtype=np.float64),
        float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
        int(d["width"]), int(d["height"]),
    )


def save_bundle(root, synth: SynthBundle) -> None:
    root = Path(root)
    for sub in ("images", "masks", "depth", "logs"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_scene(root / "scene.gare", synth.scene)
    np.save(root / "classes.npy", synth.classes)
    meta = {
        "kind": synth.spec.kind,
        "seed": synth.spec.seed,
        "noise": synth.spec.noise,
        "n_gaussians": len(synth.scene.gaussians),
        "image_size": synth.spec.image_size,
        "cameras": [_camera_dict(c) for c in synth.cameras],
        "lighting": [
            {
                "sun_direction": list(e.sun_direction),
                "sun_color": list(e.sun_color),
                "sky_color": list(e.sky_color),
                "indirect_gain": e.indirect_gain,
                "sunny": e.sunny,
            }
            for e in synth.lighting
        ],
        "images": [list(pair) for pair in synth.images],
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for i, (maps, train_img) in enumerate(zip(synth.truth, synth.train_images)):
        write_pfm(root / "images" / f"clean_{i:04d}.pfm", maps["image"])
        write_pfm(root / "images" / f"train_{i:04d}.pfm", train_img)
        write_png(root / "images" / f"train_{i:04d}.png", train_img)
        write_png(root / "masks" / f"sky_{i:04d}.png", maps["sky"])
        write_png(root / "masks" / f"shadow_{i:04d}.png", maps["v"])
        write_pfm(root / "depth" / f"depth_{i:04d}.pfm", maps["depth"])


@dataclass
class Bundle:
    root: Path
    scene: Scene
    cameras: list
    images: list  # [(camera_idx, lighting_idx)]
    meta: dict

    def __len__(self) -> int:
        return len(self.images)

    def camera_for_image(self, i: int) -> Camera:
        return self.cameras[self.images[i][0]]

    def train_image(self, i: int) -> np.ndarray:
        return read_pfm(self.root / "images" / f"train_{i:04d}.pfm")

    def clean_image(self, i: int) -> np.ndarray:
        return read_pfm(self.root / "images" / f"clean_{i:04d}.pfm")

    def sky_mask(self, i: int) -> np.ndarray:
        return (read_png(self.root / "masks" / f"sky_{i:04d}.png") > 0.5).astype(np.float64)

    def shadow_mask(self, i: int) -> np.ndarray:
        return (read_png(self.root / "masks" / f"shadow_{i:04d}.png") > 0.5).astype(np.float64)

    def vis_mask(self, i: int) -> np.ndarray | None:
        path = self.root / "masks" / f"vis_{i:04d}.png"
        if not path.exists():
            return None
        return (read_png(path) > 0.5).astype(np.float64)

    def save_vis_mask(self, i: int, mask: np.ndarray) -> None:
        write_png(self.root / "masks" / f"vis_{i:04d}.png", mask)

    def save_scene(self) -> None:
        save_scene(self.root / "scene.gare", self.scene)

    def views(self, with_vhat: bool = False) -> list:
        out = []
        for i in range(len(self.images)):
            v_hat = self.vis_mask(i) if with_vhat else None
            if with_vhat and v_hat is None:
                raise ValueError(
                    f"image {i} has no extracted visibility mask; run the extract step first"
                )
            out.append(
                TrainView(
                    camera=self.camera_for_image(i),
                    image=self.train_image(i),
                    sky_mask=self.sky_mask(i),
                    index=i,
                    v_hat=v_hat,
                )
            )
        return out


def load_bundle(root) -> Bundle:
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{root} is not a bundle (missing meta.json)")
    meta = json.loads(meta_path.read_text())
    scene = load_scene(root / "scene.gare")
    cameras = [_camera_from_dict(d) for d in meta["cameras"]]
    images = [tuple(pair) for pair in meta["images"]]
    if len(images) != len(scene.embeddings):
        raise ValueError(
            f"meta lists {len(images)} images but the container has {len(scene.embeddings)} embeddings"
        )
    return Bundle(root, scene, cameras, images, meta)
