"""HTTP render service over a trained bundle.

Endpoints:
  GET  /healthz      liveness probe, plain "ok"
  GET  /scene/meta   JSON description of the bundle
  POST /render       relit maps as multipart/mixed PNG parts
  GET  /ui/...       optional static frontend directory

POST /render takes a JSON body with:
  camera_id    index into the bundle cameras, or instead
  pose         {"rotation": [9 row-major floats], "translation": [3]}
               with intrinsics borrowed from camera 0
  image_id     embedding source image
  image_id_b   optional second image to interpolate toward
  t            interpolation weight in [0, 1], default 0
  components   subset of ["sun", "sky", "ind"] to interpolate, default all
  sun          "cloudy" or {"direction": [x, y, z]} with z > 0
  outputs      subset of ["composite", "sun", "sky", "ind",
               "reflectance", "visibility"], default ["composite"]

The multipart boundary is a fixed string so identical requests produce
byte-identical response bodies; render timing travels in the X-Render-Ms
header, never in the body.
"""
from __future__ import annotations

import io
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import shading
from .bundle import Bundle
from .imgio import write_png
from .raster import project
from .scene import Camera

BOUNDARY = "sunsplat-frame"
_SPLAT_CACHE_CAP = 64
_MIME = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class RequestError(ValueError):
    """Client-side problem, reported as HTTP 400."""


class RelightService:
    """Owns the bundle and serializes renders behind one lock."""

    def __init__(self, bundle: Bundle):
        self.bundle = bundle
        self.lock = threading.Lock()
        self._splats = {}
        self._pinned = {cam.key() for cam in bundle.cameras}

    def _splats_for(self, camera: Camera):
        key = camera.key()
        cached = self._splats.get(key)
        if cached is None:
            cached = project(self.bundle.scene.gaussians, camera)
            while len(self._splats) >= _SPLAT_CACHE_CAP:
                evictable = next(k for k in self._splats if k not in self._pinned)
                del self._splats[evictable]
            self._splats[key] = cached
        return cached

    def meta(self) -> dict:
        bundle = self.bundle
        scene = bundle.scene
        return {
            "gaussians": len(scene.gaussians),
            "stages": list(scene.stages),
            "baked": scene.baked,
            "cameras": [
                {"id": i, "width": cam.width, "height": cam.height}
                for i, cam in enumerate(bundle.cameras)
            ],
            "images": [
                {
                    "id": i,
                    "camera": int(pair[0]),
                    "sunny": bool(scene.embeddings.sunny[i]),
                }
                for i, pair in enumerate(bundle.images)
            ],
        }

    def render(self, request: dict) -> tuple[dict, float]:
        """Validated render; returns (name -> map) and elapsed milliseconds."""
        camera = self._parse_camera(request)
        emb = self._parse_embeddings(request)
        sun = self._parse_sun(request)
        outputs = self._parse_outputs(request)
        if sun is not None and not self.bundle.scene.baked:
            raise RequestError("scene has no baked visibility cache; directional sun needs `sunsplat bake`")
        t0 = time.perf_counter()
        with self.lock:
            splats = self._splats_for(camera)
            maps = shading.relight(self.bundle.scene, camera, emb, sun, splats=splats)
        ms = 1000.0 * (time.perf_counter() - t0)
        return {name: maps[name] for name in outputs}, ms

    def _parse_camera(self, request: dict) -> Camera:
        camera_id = request.get("camera_id")
        pose = request.get("pose")
        if (camera_id is None) == (pose is None):
            raise RequestError("specify exactly one of camera_id or pose")
        if camera_id is not None:
            if not isinstance(camera_id, int) or not 0 <= camera_id < len(self.bundle.cameras):
                raise RequestError(f"camera_id {camera_id!r} out of range")
            return self.bundle.cameras[camera_id]
        if not isinstance(pose, dict):
            raise RequestError("pose must be an object with rotation and translation")
        rotation = np.asarray(pose.get("rotation", ()), dtype=np.float64)
        translation = np.asarray(pose.get("translation", ()), dtype=np.float64)
        if rotation.shape != (9,) or translation.shape != (3,):
            raise RequestError("pose needs rotation[9] (row-major) and translation[3]")
        base = self.bundle.cameras[0]
        try:
            return Camera(
                rotation=rotation.reshape(3, 3),
                translation=translation,
                fx=base.fx, fy=base.fy, cx=base.cx, cy=base.cy,
                width=base.width, height=base.height,
            )
        except ValueError as e:
            raise RequestError(f"bad pose: {e}") from None

    def _parse_embeddings(self, request: dict):
        embeddings = self.bundle.scene.embeddings
        image_id = request.get("image_id")
        if not isinstance(image_id, int) or not 0 <= image_id < len(embeddings):
            raise RequestError(f"image_id {image_id!r} out of range")
        emb = embeddings.image(image_id)
        image_b = request.get("image_id_b")
        if image_b is None:
            return emb
        if not isinstance(image_b, int) or not 0 <= image_b < len(embeddings):
            raise RequestError(f"image_id_b {image_b!r} out of range")
        t = request.get("t", 0.0)
        if not isinstance(t, (int, float)) or not 0.0 <= t <= 1.0:
            raise RequestError(f"t must lie in [0, 1], got {t!r}")
        components = request.get("components", list(shading.COMPONENT_ROLES))
        if not isinstance(components, list) or any(
            c not in shading.COMPONENT_ROLES for c in components
        ):
            raise RequestError(f"components must be a subset of {list(shading.COMPONENT_ROLES)}")
        return shading.interpolate_embeddings(
            emb, embeddings.image(image_b), float(t), tuple(components)
        )

    @staticmethod
    def _parse_sun(request: dict):
        sun = request.get("sun")
        if sun == "cloudy":
            return None
        if not isinstance(sun, dict) or "direction" not in sun:
            raise RequestError('sun must be "cloudy" or {"direction": [x, y, z]}')
        d = np.asarray(sun["direction"], dtype=np.float64)
        if d.shape != (3,):
            raise RequestError("sun.direction must have three components")
        norm = np.linalg.norm(d)
        if norm == 0 or not np.isfinite(norm):
            raise RequestError("sun.direction must be finite and nonzero")
        d = d / norm
        if d[2] <= 0:
            raise RequestError("sun.direction must point above the horizon (z > 0)")
        return d

    @staticmethod
    def _parse_outputs(request: dict) -> list:
        outputs = request.get("outputs", ["composite"])
        if (
            not isinstance(outputs, list)
            or not outputs
            or any(o not in shading.OUTPUT_NAMES for o in outputs)
            or len(set(outputs)) != len(outputs)
        ):
            raise RequestError(f"outputs must be distinct names from {list(shading.OUTPUT_NAMES)}")
        return outputs


def _encode_multipart(maps: dict) -> bytes:
    body = io.BytesIO()
    for name, image in maps.items():
        png = io.BytesIO()
        write_png(png, image)
        payload = png.getvalue()
        body.write(f"--{BOUNDARY}\r\n".encode("ascii"))
        body.write(b"Content-Type: image/png\r\n")
        body.write(
            f'Content-Disposition: inline; name="{name}"; filename="{name}.png"\r\n'.encode("ascii")
        )
        body.write(f"Content-Length: {len(payload)}\r\n\r\n".encode("ascii"))
        body.write(payload)
        body.write(b"\r\n")
    body.write(f"--{BOUNDARY}--\r\n".encode("ascii"))
    return body.getvalue()


def _make_handler(service: RelightService, ui_dir):
    ui_root = Path(ui_dir).resolve() if ui_dir is not None else None

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _send(self, status: int, content_type: str, payload: bytes, extra=()):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(payload)))
            for key, value in extra:
                self.send_header(key, value)
            self.end_headers()
            self.wfile.write(payload)

        def _send_json(self, status: int, obj: dict):
            self._send(status, "application/json", json.dumps(obj).encode("utf-8"))

        def do_GET(self):
            path = self.path.split("?", 1)[0]
            if path == "/healthz":
                self._send(200, "text/plain; charset=utf-8", b"ok")
            elif path == "/scene/meta":
                self._send_json(200, service.meta())
            elif path == "/ui" or path.startswith("/ui/"):
                self._serve_static(path)
            else:
                self._send_json(404, {"error": f"no route {path}"})

        def _serve_static(self, path: str):
            if ui_root is None:
                self._send_json(404, {"error": "no UI directory configured"})
                return
            rel = path[len("/ui"):].lstrip("/") or "index.html"
            target = (ui_root / rel).resolve()
            if ui_root not in target.parents and target != ui_root:
                self._send_json(404, {"error": "not found"})
                return
            if target.is_dir():
                target = target / "index.html"
            if not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            mime = _MIME.get(target.suffix, "application/octet-stream")
            self._send(200, mime, target.read_bytes())

        def do_POST(self):
            if self.path.split("?", 1)[0] != "/render":
                self._send_json(404, {"error": f"no route {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                request = json.loads(raw) if raw else {}
                if not isinstance(request, dict):
                    raise RequestError("request body must be a JSON object")
                maps, ms = service.render(request)
            except (RequestError, json.JSONDecodeError, ValueError) as e:
                self._send_json(400, {"error": str(e)})
                return
            except Exception as e:
                self._send_json(500, {"error": f"{type(e).__name__}: {e}"})
                return
            body = _encode_multipart(maps)
            self._send(
                200,
                f"multipart/mixed; boundary={BOUNDARY}",
                body,
                extra=[("X-Render-Ms", f"{ms:.1f}")],
            )

    return Handler


def create_server(bundle: Bundle, port: int = 0, ui_dir=None) -> ThreadingHTTPServer:
    """Bind a server on 127.0.0.1; port 0 picks an ephemeral port."""
    handler = _make_handler(RelightService(bundle), ui_dir)
    httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
    httpd.daemon_threads = True
    return httpd


def serve(bundle: Bundle, port: int = 8080, ui_dir=None) -> None:
    httpd = create_server(bundle, port=port, ui_dir=ui_dir)
    host, bound = httpd.server_address[:2]
    print(f"serving {bundle.root} on http://{host}:{bound}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
