"""Scene primitives and the on-disk container.

A scene is an ordered collection of anisotropic Gaussians (struct of
arrays), the shading/visibility decoder networks, and a per-image
embedding table. Geometry is fixed input here: positions, scales,
rotations and opacities are never optimized, only appearance state is.

Container layout: an ASCII header (``GARE1`` magic, counts, one
``tensor <name> <dims...>`` line per payload array, ``end``) followed by
the raw little-endian float32 arrays in header order. Round-trips are
bitwise exact for float32 payloads.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

MAGIC = "GARE1"
FEATURE_DIM = 18
VIS_FEATURE_DIM = 6
EMBED_DIM = 32

# Per-Gaussian arrays in their mandatory container order.
CORE_FIELDS = (
    ("positions", 3),
    ("scales", 3),
    ("quats", 4),
    ("opacities", 1),
    ("colors", 3),
    ("f_ref", FEATURE_DIM),
    ("f_sun", FEATURE_DIM),
    ("f_sky", FEATURE_DIM),
    ("f_ind", FEATURE_DIM),
    ("f_vis", VIS_FEATURE_DIM),
    ("sky_semantic", 1),
)

# role -> (input dim, hidden widths, output dim, output activation)
NET_SPECS = {
    "amb": (FEATURE_DIM + EMBED_DIM, (64, 64, 64), 3, "sigmoid"),
    "ref": (FEATURE_DIM, (64, 64, 64), 3, "sigmoid"),
    "sun": (FEATURE_DIM + EMBED_DIM, (64, 64, 64), 3, "sigmoid"),
    "sky": (FEATURE_DIM + EMBED_DIM, (64, 64, 64), 3, "sigmoid"),
    "ind": (3 + FEATURE_DIM + EMBED_DIM, (64, 64, 64), 3, "sigmoid"),
    "vis": (VIS_FEATURE_DIM + 3 + 3, (32, 32, 32), 1, "tanh"),
}


class SceneFormatError(ValueError):
    """Malformed container or inconsistent scene state."""


def quat_to_rotmats(quats: np.ndarray) -> np.ndarray:
    """(N, 4) wxyz quaternions -> (N, 3, 3). Normalizes defensively, so
    q and -q give the same rotation."""
    q = np.asarray(quats, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class Gaussians:
    positions: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3) positive
    quats: np.ndarray  # (N, 4) unit, wxyz
    opacities: np.ndarray  # (N,) in [0, 1]
    colors: np.ndarray  # (N, 3) in [0, 1]; degree-0 base color only
    f_ref: np.ndarray  # (N, 18)
    f_sun: np.ndarray  # (N, 18)
    f_sky: np.ndarray  # (N, 18)
    f_ind: np.ndarray  # (N, 18)
    f_vis: np.ndarray  # (N, 6)
    sky_semantic: np.ndarray  # (N,) >= 0

    def __post_init__(self):
        for name, width in CORE_FIELDS:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            want = (len(self),) if width == 1 else (len(self), width)
            if arr.shape != want:
                raise SceneFormatError(f"{name}: expected shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise SceneFormatError(f"{name}: non-finite values")
            setattr(self, name, arr)
        if np.any(self.scales <= 0):
            raise SceneFormatError("scales: must be positive")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise SceneFormatError("opacities: must lie in [0, 1]")
        if np.any((self.colors < 0) | (self.colors > 1)):
            raise SceneFormatError("colors: must lie in [0, 1]")
        if np.any(self.sky_semantic < 0):
            raise SceneFormatError("sky_semantic: must be >= 0")
        norms = np.linalg.norm(self.quats, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise SceneFormatError("quats: not unit length")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def rotations(self) -> np.ndarray:
        return quat_to_rotmats(self.quats)

    def covariances(self) -> np.ndarray:
        """(N, 3, 3) world-space covariances R diag(s^2) R^T."""
        R = self.rotations()
        return np.einsum("nij,nj,nkj->nik", R, self.scales**2, R)

    def inv_covariances(self) -> np.ndarray:
        R = self.rotations()
        return np.einsum("nij,nj,nkj->nik", R, self.scales**-2.0, R)

    def normals(self) -> np.ndarray:
        """(N, 3) unoriented normals: the rotated axis of minimal scale,
        ties broken toward the lowest axis index."""
        R = self.rotations()
        axis = np.argmin(self.scales, axis=1)
        return R[np.arange(len(self)), :, axis]

    def extent(self) -> float:
        """Diagonal of the bounding box of the centers."""
        if len(self) == 0:
            return 0.0
        span = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(np.linalg.norm(span))


def seeded_features(n: int, rng: np.random.Generator) -> dict:
    """Fresh per-Gaussian decoder features, keyed by Gaussians field name."""
    return {
        "f_ref": rng.normal(0.0, 0.1, (n, FEATURE_DIM)),
        "f_sun": rng.normal(0.0, 0.1, (n, FEATURE_DIM)),
        "f_sky": rng.normal(0.0, 0.1, (n, FEATURE_DIM)),
        "f_ind": rng.normal(0.0, 0.1, (n, FEATURE_DIM)),
        "f_vis": rng.normal(0.0, 0.1, (n, VIS_FEATURE_DIM)),
    }


@dataclass
class Camera:
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64)
        self.translation = np.ascontiguousarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("camera pose: rotation must be (3,3), translation (3,)")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-5:
            raise ValueError("camera rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("camera intrinsics must be positive")

    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def key(self) -> bytes:
        """Stable identity for weight caching."""
        return (
            self.rotation.tobytes()
            + self.translation.tobytes()
            + np.float64([self.fx, self.fy, self.cx, self.cy, self.width, self.height]).tobytes()
        )

    @staticmethod
    def look_at(position, target, up, fx, fy, cx, cy, width, height) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        fwd = target - position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])  # +x right, +y down, +z forward
        return Camera(R, -R @ position, fx, fy, cx, cy, width, height)


@dataclass
class ImageEmbeddings:
    """Per-image appearance codes handed to the decoders."""

    amb: np.ndarray  # (32,)
    sun: np.ndarray
    sky: np.ndarray
    ind: np.ndarray
    sunny: bool


@dataclass
class EmbeddingSet:
    amb: np.ndarray  # (I, 32)
    sun: np.ndarray
    sky: np.ndarray
    ind: np.ndarray
    sunny: np.ndarray  # (I,) bool

    def __post_init__(self):
        n = self.amb.shape[0]
        for name in ("amb", "sun", "sky", "ind"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n, EMBED_DIM):
                raise SceneFormatError(f"embed.{name}: expected ({n}, {EMBED_DIM})")
            setattr(self, name, arr)
        self.sunny = np.asarray(self.sunny, dtype=bool)
        if self.sunny.shape != (n,):
            raise SceneFormatError("embed.sunny: one flag per image required")

    def __len__(self) -> int:
        return self.amb.shape[0]

    def image(self, i: int) -> ImageEmbeddings:
        return ImageEmbeddings(
            self.amb[i].copy(), self.sun[i].copy(), self.sky[i].copy(),
            self.ind[i].copy(), bool(self.sunny[i]),
        )

    @staticmethod
    def create(n_images: int, rng: np.random.Generator, sunny=None) -> "EmbeddingSet":
        if sunny is None:
            sunny = np.ones(n_images, dtype=bool)
        mk = lambda: rng.normal(0.0, 0.1, (n_images, EMBED_DIM))
        return EmbeddingSet(mk(), mk(), mk(), mk(), np.asarray(sunny, dtype=bool))


class Mlp:
    """Fully connected decoder: three ReLU hidden layers plus an output
    layer squashed by sigmoid or tanh. Parameters live in autodiff
    Tensors so training can reuse the same forward."""

    def __init__(self, weights, biases, out_act: str):
        if out_act not in ("sigmoid", "tanh"):
            raise ValueError(f"unknown output activation {out_act!r}")
        if len(weights) != 4 or len(biases) != 4:
            raise SceneFormatError("decoder needs exactly 3 hidden layers + output layer")
        self.weights = [w if isinstance(w, ad.Tensor) else ad.Tensor(w, True) for w in weights]
        self.biases = [b if isinstance(b, ad.Tensor) else ad.Tensor(b, True) for b in biases]
        self.out_act = out_act

    @property
    def in_dim(self) -> int:
        return self.weights[0].data.shape[0]

    @property
    def hidden(self) -> tuple:
        return tuple(w.data.shape[1] for w in self.weights[:-1])

    @property
    def out_dim(self) -> int:
        return self.weights[-1].data.shape[1]

    def params(self) -> list:
        return self.weights + self.biases

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = ad.relu(ad.matmul(h, w) + b)
        z = ad.matmul(h, self.weights[-1]) + self.biases[-1]
        return ad.sigmoid(z) if self.out_act == "sigmoid" else ad.tanh(z)

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        return self(ad.Tensor(x)).data

    @staticmethod
    def create(in_dim: int, hidden, out_dim: int, out_act: str, rng: np.random.Generator) -> "Mlp":
        dims = [in_dim, *hidden, out_dim]
        weights, biases = [], []
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            if i < len(dims) - 2:
                bound = np.sqrt(6.0 / fan_in)  # Kaiming uniform for the ReLU stack
            else:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return Mlp(weights, biases, out_act)

    @staticmethod
    def for_role(role: str, rng: np.random.Generator) -> "Mlp":
        in_dim, hidden, out_dim, act = NET_SPECS[role]
        return Mlp.create(in_dim, hidden, out_dim, act, rng)


def _check_net(role: str, net: Mlp) -> None:
    in_dim, hidden, out_dim, act = NET_SPECS[role]
    got = (net.in_dim, net.hidden, net.out_dim, net.out_act)
    if got != (in_dim, hidden, out_dim, act):
        raise SceneFormatError(f"net.{role}: expected {(in_dim, hidden, out_dim, act)}, got {got}")


@dataclass
class Scene:
    gaussians: Gaussians
    nets: dict = field(default_factory=dict)  # role -> Mlp
    embeddings: EmbeddingSet | None = None
    amb_features: np.ndarray | None = None  # (N, 18) ambient decoder features
    bake_directions: np.ndarray | None = None  # (D, 3) directions the cache was trained on
    stages: list = field(default_factory=list)  # completed: ambient, decompose, bake

    def __post_init__(self):
        for role, net in self.nets.items():
            _check_net(role, net)
        if self.amb_features is not None:
            self.amb_features = np.ascontiguousarray(self.amb_features, dtype=np.float64)
            if self.amb_features.shape != (len(self.gaussians), FEATURE_DIM):
                raise SceneFormatError("feat.amb: wrong shape")

    @property
    def baked(self) -> bool:
        return "bake" in self.stages and "vis" in self.nets

    @staticmethod
    def create(gaussians: Gaussians, n_images: int, seed: int, sunny=None) -> "Scene":
        """Fresh scene with untrained decoders and embeddings."""
        rng = np.random.default_rng(seed)
        nets = {role: Mlp.for_role(role, rng) for role in ("amb", "ref", "sun", "sky", "ind", "vis")}
        emb = EmbeddingSet.create(n_images, rng, sunny)
        amb_features = rng.normal(0.0, 0.1, (len(gaussians), FEATURE_DIM))
        return Scene(gaussians, nets, emb, amb_features)


# -- container I/O ----------------------------------------------------------


def _named_tensors(scene: Scene) -> list[tuple[str, np.ndarray]]:
    g = scene.gaussians
    out = [(name, getattr(g, name)) for name, _ in CORE_FIELDS]
    if scene.amb_features is not None:
        out.append(("feat.amb", scene.amb_features))
    for role in sorted(scene.nets):
        net = scene.nets[role]
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            out.append((f"net.{role}.w{i}", w.data))
            out.append((f"net.{role}.b{i}", b.data))
    if scene.embeddings is not None:
        e = scene.embeddings
        out.extend(
            [("embed.amb", e.amb), ("embed.sun", e.sun), ("embed.sky", e.sky),
             ("embed.ind", e.ind), ("embed.sunny", e.sunny.astype(np.float64))]
        )
    if scene.bake_directions is not None:
        out.append(("bake.directions", scene.bake_directions))
    return out


def save_scene(path, scene: Scene) -> None:
    tensors = _named_tensors(scene)
    head = io.StringIO()
    head.write(f"{MAGIC}\n")
    head.write(f"gaussians {len(scene.gaussians)}\n")
    head.write(f"images {0 if scene.embeddings is None else len(scene.embeddings)}\n")
    if scene.stages:
        head.write("stages " + ",".join(scene.stages) + "\n")
    for name, arr in tensors:
        dims = " ".join(str(d) for d in arr.shape)
        head.write(f"tensor {name} {dims}\n")
    head.write("end\n")
    with open(path, "wb") as fh:
        fh.write(head.getvalue().encode("ascii"))
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_scene(path) -> Scene:
    with open(path, "rb") as fh:
        blob = fh.read()

    # Header is ASCII lines up to "end"; payload follows immediately.
    terminator = b"\nend\n"
    split = blob.find(terminator)
    if not blob.startswith(MAGIC.encode("ascii") + b"\n") or split < 0:
        raise SceneFormatError("not a GARE1 container (bad magic or missing header end)")
    header_lines = blob[:split].decode("ascii").splitlines()[1:]
    payload = blob[split + len(terminator):]

    counts = {}
    stages: list[str] = []
    tensor_decl: list[tuple[str, tuple[int, ...]]] = []
    for line in header_lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "tensor":
            if len(parts) < 2:
                raise SceneFormatError("tensor line without a name")
            try:
                dims = tuple(int(d) for d in parts[2:])
            except ValueError as exc:
                raise SceneFormatError(f"tensor {parts[1]}: bad dims") from exc
            tensor_decl.append((parts[1], dims))
        elif parts[0] == "stages":
            stages = parts[1].split(",") if len(parts) > 1 else []
        elif parts[0] in ("gaussians", "images"):
            try:
                counts[parts[0]] = int(parts[1])
            except (IndexError, ValueError) as exc:
                raise SceneFormatError(f"malformed header line {line!r}") from exc
        else:
            raise SceneFormatError(f"unknown header line {line!r}")
    if "gaussians" not in counts or "images" not in counts:
        raise SceneFormatError("header is missing gaussians/images counts")
    n, n_images = counts["gaussians"], counts["images"]

    core_names = [name for name, _ in CORE_FIELDS]
    if [name for name, _ in tensor_decl[: len(CORE_FIELDS)]] != core_names:
        raise SceneFormatError(f"core arrays must open the payload in order {core_names}")

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, dims in tensor_decl:
        size = int(np.prod(dims)) if dims else 1
        raw = payload[offset * 4:(offset + size) * 4]
        if len(raw) != size * 4:
            raise SceneFormatError(f"{name}: payload truncated")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise SceneFormatError(f"{name}: non-finite values")
        tensors[name] = arr
        offset += size
    if offset * 4 != len(payload):
        raise SceneFormatError("trailing bytes after declared tensors")

    expect_core = {
        name: ((n,) if width == 1 else (n, width)) for name, width in CORE_FIELDS
    }
    for name, want in expect_core.items():
        if tensors[name].shape != want:
            raise SceneFormatError(f"{name}: expected shape {want}, got {tensors[name].shape}")
    gauss = Gaussians(**{name: tensors[name] for name, _ in CORE_FIELDS})

    nets: dict[str, Mlp] = {}
    roles = sorted({k.split(".")[1] for k in tensors if k.startswith("net.")})
    for role in roles:
        try:
            weights = [tensors[f"net.{role}.w{i}"] for i in range(4)]
            biases = [tensors[f"net.{role}.b{i}"] for i in range(4)]
        except KeyError as exc:
            raise SceneFormatError(f"net.{role}: missing layer tensor {exc}") from exc
        nets[role] = Mlp(weights, biases, NET_SPECS[role][3])

    embeddings = None
    if "embed.amb" in tensors:
        for key in ("embed.sun", "embed.sky", "embed.ind", "embed.sunny"):
            if key not in tensors:
                raise SceneFormatError(f"{key}: missing embedding tensor")
        if tensors["embed.amb"].shape[0] != n_images:
            raise SceneFormatError("embed.amb: row count disagrees with images header")
        embeddings = EmbeddingSet(
            tensors["embed.amb"], tensors["embed.sun"], tensors["embed.sky"],
            tensors["embed.ind"], tensors["embed.sunny"] > 0.5,
        )

    return Scene(
        gaussians=gauss,
        nets=nets,
        embeddings=embeddings,
        amb_features=tensors.get("feat.amb"),
        bake_directions=tensors.get("bake.directions"),
        stages=stages,
    )
