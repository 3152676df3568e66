"""Sphere-tracing renderer for SDF fields: grayscale Lambertian views around the y axis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

VIEW_ANGLES = (0, 30, 60, 90, 120, 150, 180, 210, 240)

MAX_STEPS = 128
HIT_EPS = 1e-3
FAR = 6.0
NORMAL_EPS = 1e-3

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Camera:
    eye: tuple = (0.0, 0.0, 2.5)
    fov_deg: float = 45.0
    width: int = 224
    height: int = 224

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if np.linalg.norm(self.eye) <= 1.0:
            raise ValueError("camera eye must lie outside the unit ball")

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions ``(h*w, 3)`` row-major, looking from ``eye`` at the origin, +y up."""
        eye = np.asarray(self.eye, dtype=float)
        forward = -eye / np.linalg.norm(eye)
        right = np.cross(forward, [0.0, 1.0, 0.0])
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("camera looks along the up axis")
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        half = math.tan(math.radians(self.fov_deg) / 2)
        aspect = self.width / self.height
        xs = (2 * (np.arange(self.width) + 0.5) / self.width - 1) * half * aspect
        ys = (1 - 2 * (np.arange(self.height) + 0.5) / self.height) * half
        X, Y = np.meshgrid(xs, ys)
        d = forward + X.reshape(-1, 1) * right + Y.reshape(-1, 1) * up
        return eye, d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass
class ViewImage:
    pixels: np.ndarray  # (h, w) in [0, 1]
    angle: float = 0.0
    shape_id: str = ""


def rotation_y(deg: float) -> np.ndarray:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotate_field(field: Field, deg: float) -> Field:
    """The field turned by ``deg`` degrees about +y."""
    r = rotation_y(deg)
    return lambda p: field(np.asarray(p, dtype=float) @ r)


def _normals(field: Field, p: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Unit gradient by central differences along the columns of ``frame``.

    Differencing along world axes (mapped into object space) keeps shading
    equivariant under object rotation.
    """
    g = np.empty_like(p)
    for axis in range(3):
        off = NORMAL_EPS * frame[:, axis]
        g[:, axis] = np.asarray(field(p + off)) - np.asarray(field(p - off))
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.where(norm > 0, norm, 1.0)


def render_view(field: Field, camera: Camera | None = None, angle_deg: float = 0.0, shape_id: str = "") -> ViewImage:
    """Render ``field`` turned by ``angle_deg`` about +y, seen from the fixed camera."""
    camera = camera or Camera()
    eye, dirs = camera.rays()
    # turning the object by +angle == turning the rays by -angle
    inv = rotation_y(-angle_deg)
    origin = inv @ eye
    world_dirs = dirs
    dirs = dirs @ inv.T

    n = len(dirs)
    t = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for _ in range(MAX_STEPS):
        if active.size == 0:
            break
        d = np.asarray(field(origin + t[active, None] * dirs[active]), dtype=float).reshape(-1)
        done = d < HIT_EPS
        hit[active[done]] = True
        t[active] += np.where(done, 0.0, d)
        active = active[~done & (t[active] < FAR)]

    pixels = np.zeros(n)
    idx = np.flatnonzero(hit)
    if idx.size:
        p = origin + t[idx, None] * dirs[idx]
        normal = _normals(field, p, inv)
        # light at the eye: the light direction is the reversed view ray
        pixels[idx] = np.clip(-(normal * world_dirs[idx]).sum(axis=1), 0.0, 1.0)
    return ViewImage(pixels.reshape(camera.height, camera.width), float(angle_deg), shape_id)


def render_views(field: Field, camera: Camera | None = None, shape_id: str = "") -> list[ViewImage]:
    return [render_view(field, camera, a, shape_id) for a in VIEW_ANGLES]


def augment(
    image: ViewImage,
    seed=0,
    zoom_range: tuple = (0.8, 1.2),
    rotation_range: tuple = (-15.0, 15.0),
    zoom: float | None = None,
    rotation: float | None = None,
) -> ViewImage:
    """Random zoom and in-plane rotation about the image centre, bilinear, zero padded.

    ``zoom``/``rotation`` override the random draw.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(*zoom_range) if zoom is None else zoom
    r = rng.uniform(*rotation_range) if rotation is None else rotation
    src = np.asarray(image.pixels, dtype=float)
    theta = math.radians(r)
    c, s = math.cos(theta), math.sin(theta)
    # output (row, col) -> input coordinate; zoom > 1 magnifies
    m = np.array([[c, -s], [s, c]]) / z
    centre = (np.array(src.shape, dtype=float) - 1) / 2
    offset = centre - m @ centre
    out = ndimage.affine_transform(src, m, offset=offset, order=1, mode="constant", cval=0.0)
    return ViewImage(np.clip(out, 0.0, 1.0), image.angle, image.shape_id)


def write_pgm(image: ViewImage | np.ndarray, path) -> None:
    px = image.pixels if isinstance(image, ViewImage) else np.asarray(image)
    data = np.round(np.clip(px, 0, 1) * 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Pixels in [0, 1] from a binary (P5) PGM with maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: maxval {maxval} unsupported")
    return np.frombuffer(data, np.uint8, w * h, pos).reshape(h, w) / 255.0


def view_filename(shape_id: str, angle: float) -> str:
    return f"{shape_id}_{int(round(angle))}.pgm"
