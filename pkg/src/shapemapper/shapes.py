"""Procedural CSG shapes over analytic SDF primitives, and coordinate samplers.

Shapes are small expression trees.  Every node maps an ``(n, 3)`` array of
points to an ``(n,)`` array of signed distances, negative inside.  Trees
round-trip through a tiny s-expression grammar (see ``data/GRAMMAR.md``)::

    (union (box 0.5 0.1 0.2) (translate 0.2 0.15 0 (sphere 0.1)))
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


class Shape:
    """Base class; subclasses implement :meth:`sdf` on ``(n, 3)`` arrays."""

    def sdf(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, p: np.ndarray) -> np.ndarray:
        return sdf_eval(self, p)

    def to_sexpr(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.to_sexpr()


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Sphere(Shape):
    r: float

    def sdf(self, p):
        return np.linalg.norm(p, axis=-1) - self.r

    def to_sexpr(self):
        return f"(sphere {_fmt(self.r)})"


@dataclass(frozen=True)
class Box(Shape):
    hx: float
    hy: float
    hz: float

    def sdf(self, p):
        q = np.abs(p) - np.array([self.hx, self.hy, self.hz])
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def to_sexpr(self):
        return f"(box {_fmt(self.hx)} {_fmt(self.hy)} {_fmt(self.hz)})"


@dataclass(frozen=True)
class Torus(Shape):
    """Ring in the xz-plane around the y axis."""

    R: float
    r: float

    def sdf(self, p):
        ring = np.hypot(p[..., 0], p[..., 2]) - self.R
        return np.hypot(ring, p[..., 1]) - self.r

    def to_sexpr(self):
        return f"(torus {_fmt(self.R)} {_fmt(self.r)})"


@dataclass(frozen=True)
class Capsule(Shape):
    a: tuple
    b: tuple
    r: float

    def sdf(self, p):
        a = np.asarray(self.a, dtype=float)
        ba = np.asarray(self.b, dtype=float) - a
        pa = p - a
        denom = float(ba @ ba)
        t = np.clip(pa @ ba / denom, 0.0, 1.0) if denom > 0 else np.zeros(p.shape[:-1])
        return np.linalg.norm(pa - t[..., None] * ba, axis=-1) - self.r

    def to_sexpr(self):
        nums = " ".join(_fmt(v) for v in (*self.a, *self.b, self.r))
        return f"(capsule {nums})"


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Union(Shape):
    children: tuple

    def sdf(self, p):
        return np.minimum.reduce([c.sdf(p) for c in self.children])

    def to_sexpr(self):
        return "(union " + " ".join(c.to_sexpr() for c in self.children) + ")"


@dataclass(frozen=True)
class Intersection(Shape):
    children: tuple

    def sdf(self, p):
        return np.maximum.reduce([c.sdf(p) for c in self.children])

    def to_sexpr(self):
        return "(intersect " + " ".join(c.to_sexpr() for c in self.children) + ")"


@dataclass(frozen=True)
class Subtraction(Shape):
    """``base`` minus ``cut``: max(base, -cut)."""

    base: Shape
    cut: Shape

    def sdf(self, p):
        return np.maximum(self.base.sdf(p), -self.cut.sdf(p))

    def to_sexpr(self):
        return f"(subtract {self.base.to_sexpr()} {self.cut.to_sexpr()})"


def _rotation(axis: str, deg: float) -> np.ndarray:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    if axis == "z":
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    raise ValueError(f"rotation axis must be x, y or z, got {axis!r}")


@dataclass(frozen=True)
class Translate(Shape):
    offset: tuple
    child: Shape

    def sdf(self, p):
        return self.child.sdf(p - np.asarray(self.offset, dtype=float))

    def to_sexpr(self):
        x, y, z = (_fmt(v) for v in self.offset)
        return f"(translate {x} {y} {z} {self.child.to_sexpr()})"


@dataclass(frozen=True)
class Rotate(Shape):
    """Rotate ``child`` by ``deg`` degrees (right-handed) about a coordinate axis."""

    axis: str
    deg: float
    child: Shape

    def sdf(self, p):
        # inverse rotation applied to the query: p @ R == R.T @ p per row
        return self.child.sdf(p @ _rotation(self.axis, self.deg))

    def to_sexpr(self):
        return f"(rotate {self.axis} {_fmt(self.deg)} {self.child.to_sexpr()})"


def union(*shapes: Shape) -> Union:
    return Union(tuple(shapes))


def intersect(*shapes: Shape) -> Intersection:
    return Intersection(tuple(shapes))


def sdf_eval(shape: Shape, p) -> np.ndarray | float:
    """Signed distance of ``shape`` at a point ``(3,)`` or points ``(n, 3)``."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1:] != (3,):
        raise ValueError(f"points must have trailing dim 3, got shape {p.shape}")
    if p.ndim == 1:
        return float(shape.sdf(p[None])[0])
    return shape.sdf(p.reshape(-1, 3)).reshape(p.shape[:-1])


# --------------------------------------------------------------------------
# s-expression parsing
# --------------------------------------------------------------------------

def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _read(tokens: list[str], pos: int):
    if pos >= len(tokens):
        raise ValueError("unexpected end of CSG expression")
    tok = tokens[pos]
    if tok == ")":
        raise ValueError("unexpected ')' in CSG expression")
    if tok != "(":
        return tok, pos + 1
    items = []
    pos += 1
    while pos < len(tokens) and tokens[pos] != ")":
        item, pos = _read(tokens, pos)
        items.append(item)
    if pos >= len(tokens):
        raise ValueError("missing ')' in CSG expression")
    return items, pos + 1


def _nums(args, count, head):
    if len(args) != count or any(isinstance(a, list) for a in args):
        raise ValueError(f"({head} ...) takes {count} numbers, got {args!r}")
    return [float(a) for a in args]


def _build(node) -> Shape:
    if not isinstance(node, list) or not node:
        raise ValueError(f"expected a shape expression, got {node!r}")
    head, args = node[0], node[1:]
    if head == "sphere":
        return Sphere(*_nums(args, 1, head))
    if head == "box":
        return Box(*_nums(args, 3, head))
    if head == "torus":
        return Torus(*_nums(args, 2, head))
    if head == "capsule":
        v = _nums(args, 7, head)
        return Capsule(tuple(v[:3]), tuple(v[3:6]), v[6])
    if head in ("union", "intersect"):
        if len(args) < 1:
            raise ValueError(f"({head} ...) needs at least one child")
        children = tuple(_build(a) for a in args)
        return Union(children) if head == "union" else Intersection(children)
    if head == "subtract":
        if len(args) != 2:
            raise ValueError("(subtract base cut) takes two children")
        return Subtraction(_build(args[0]), _build(args[1]))
    if head == "translate":
        if len(args) != 4:
            raise ValueError("(translate x y z child) takes three numbers and a child")
        return Translate(tuple(_nums(args[:3], 3, head)), _build(args[3]))
    if head == "rotate":
        if len(args) != 3 or args[0] not in ("x", "y", "z"):
            raise ValueError("(rotate axis deg child) needs axis in x|y|z")
        return Rotate(args[0], float(args[1]), _build(args[2]))
    raise ValueError(f"unknown CSG node {head!r}")


def parse_csg(text: str) -> Shape:
    tokens = _tokenize(text)
    tree, pos = _read(tokens, 0)
    if pos != len(tokens):
        raise ValueError(f"trailing tokens after CSG expression: {' '.join(tokens[pos:])}")
    return _build(tree)


def parse_manifest(text: str) -> list[tuple[str, Shape]]:
    """Parse ``<shape_id> <csg-expression>`` lines; ``#`` starts a comment."""
    shapes = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected '<shape_id> <csg-expression>'")
        sid, expr = parts
        if sid in seen:
            raise ValueError(f"line {lineno}: duplicate shape id {sid!r}")
        seen.add(sid)
        try:
            shapes.append((sid, parse_csg(expr)))
        except ValueError as exc:
            raise ValueError(f"line {lineno} ({sid}): {exc}") from None
    return shapes


def format_manifest(shapes: Iterable[tuple[str, Shape]]) -> str:
    return "".join(f"{sid} {shape.to_sexpr()}\n" for sid, shape in shapes)


def load_manifest(path) -> list[tuple[str, Shape]]:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read())


def benchmark_manifest_text() -> str:
    return resources.files("shapemapper").joinpath("data/benchmark.shapes").read_text("utf-8")


def benchmark_shapes() -> list[tuple[str, Shape]]:
    """The 16-shape roster shipped with the package."""
    return parse_manifest(benchmark_manifest_text())


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

@dataclass
class SdfSampleSet:
    points: np.ndarray  # (n, 3)
    sdf: np.ndarray  # (n,)
    shape_id: str = ""

    def __post_init__(self):
        if len(self.points) == 0 or self.points.shape != (len(self.sdf), 3):
            raise ValueError(f"bad sample set: points {self.points.shape}, sdf {self.sdf.shape}")
        if not np.all(np.isfinite(self.sdf)):
            raise ValueError(f"non-finite sdf values in sample set {self.shape_id!r}")

    def __len__(self):
        return len(self.sdf)


def shape_stream(seed: int, shape_id: str) -> np.random.SeedSequence:
    """Independent RNG stream per (global seed, shape id)."""
    return np.random.SeedSequence([int(seed), zlib.crc32(shape_id.encode("utf-8"))])


def sample_unit_sphere(n: int, seed=0) -> np.ndarray:
    """``n`` points uniform in the solid unit ball."""
    if n <= 0:
        raise ValueError(f"need n > 0 points, got {n}")
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / 3.0)
    return d * r[:, None]


def _trace(shape: Shape, origins, dirs, max_steps=128, hit_eps=1e-3, far=4.0):
    t = np.zeros(len(origins))
    hit = np.zeros(len(origins), dtype=bool)
    active = np.arange(len(origins))
    for _ in range(max_steps):
        if active.size == 0:
            break
        d = shape.sdf(origins[active] + t[active, None] * dirs[active])
        done = d < hit_eps
        hit[active[done]] = True
        t[active] += np.where(done, 0.0, d)
        active = active[~done & (t[active] < far)]
    return hit, origins + t[:, None] * dirs


def surface_points(shape: Shape, n: int, rng: np.random.Generator, max_rays: int | None = None) -> np.ndarray:
    """Points on the outer surface found by sphere-tracing random rays into the unit ball."""
    max_rays = max_rays or max(64 * n, 4096)
    found: list[np.ndarray] = []
    total = 0
    shot = 0
    while total < n and shot < max_rays:
        batch = min(max(2 * (n - total), 256), max_rays - shot)
        shot += batch
        origins = sample_on_sphere(batch, rng) * 1.8
        targets = sample_unit_sphere(batch, rng)
        dirs = targets - origins
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        hit, pts = _trace(shape, origins, dirs)
        # a genuine surface crossing has the field going negative just past the hit
        probe = pts + 4e-3 * dirs
        ok = hit & (shape.sdf(probe) < 0)
        if ok.any():
            found.append(pts[ok])
            total += int(ok.sum())
    if total < n:
        raise ValueError(f"found only {total} of {n} surface points after {shot} rays; is the shape empty?")
    return np.concatenate(found)[:n]


def sample_on_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sample_near_surface(
    shape: Shape,
    n: int,
    sigmas: Sequence[float] = (0.05, 0.005),
    seed=0,
    shape_id: str = "",
) -> SdfSampleSet:
    """Surface hits jittered by isotropic Gaussian noise, the budget split evenly across ``sigmas``."""
    if n <= 0:
        raise ValueError(f"need n > 0 samples, got {n}")
    rng = np.random.default_rng(seed)
    base = surface_points(shape, n, rng)
    counts = [n // len(sigmas) + (1 if k < n % len(sigmas) else 0) for k in range(len(sigmas))]
    sig = np.repeat(np.asarray(sigmas, dtype=float), counts)
    pts = base + rng.normal(size=(n, 3)) * sig[:, None]
    pts = np.clip(pts, -1.1, 1.1)
    return SdfSampleSet(pts, shape.sdf(pts), shape_id)


def make_dataset(
    shapes: Sequence[tuple[str, Shape]],
    n_uniform: int,
    n_surface: int,
    seed: int = 0,
    sigmas: Sequence[float] = (0.05, 0.005),
) -> list[SdfSampleSet]:
    """Uniform-ball plus near-surface samples per shape, each from its own RNG stream."""
    if not shapes:
        raise ValueError("make_dataset needs at least one shape")
    out = []
    for sid, shape in shapes:
        s_uniform, s_surface = shape_stream(seed, sid).spawn(2)
        parts = []
        if n_uniform > 0:
            pts = sample_unit_sphere(n_uniform, s_uniform)
            parts.append(SdfSampleSet(pts, shape.sdf(pts), sid))
        if n_surface > 0:
            parts.append(sample_near_surface(shape, n_surface, sigmas, s_surface, sid))
        if not parts:
            raise ValueError("n_uniform + n_surface must be positive")
        out.append(
            SdfSampleSet(
                np.concatenate([p.points for p in parts]),
                np.concatenate([p.sdf for p in parts]),
                sid,
            )
        )
    return out
