"""Scalar grids, marching-cubes meshing and area-weighted surface sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels


@dataclass
class ScalarGrid:
    """Field samples on a regular lattice over ``[lo, hi]^3``.

    ``values`` is flat with x varying fastest: index ``i + r*(j + r*k)`` holds
    the sample at lattice point ``(i, j, k)``.
    """

    values: np.ndarray
    resolution: int
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError(f"grid resolution must be >= 2, got {self.resolution}")
        if self.values.shape != (self.resolution**3,):
            raise ValueError(f"expected {self.resolution ** 3} values, got shape {self.values.shape}")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.resolution - 1)

    def as_volume(self) -> np.ndarray:
        """View as a ``(z, y, x)`` array."""
        r = self.resolution
        return self.values.reshape(r, r, r)


def lattice_points(r: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """All ``r^3`` lattice points, x fastest."""
    axis = np.linspace(lo, hi, r)
    z, y, x = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def eval_grid(
    field: Callable[[np.ndarray], np.ndarray],
    r: int = 64,
    lo: float = -1.0,
    hi: float = 1.0,
    chunk: int = 1 << 16,
) -> ScalarGrid:
    if r < 2:
        raise ValueError(f"grid resolution must be >= 2, got {r}")
    pts = lattice_points(r, lo, hi)
    values = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        values[start : start + chunk] = np.asarray(field(pts[start : start + chunk])).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        n = int(bad[0])
        i, j, k = n % r, (n // r) % r, n // (r * r)
        raise ValueError(f"field is not finite at lattice point ({i}, {j}, {k}) = {pts[n].tolist()}")
    return ScalarGrid(values, r, lo, hi)


@dataclass
class Mesh:
    vertices: np.ndarray  # (v, 3)
    triangles: np.ndarray  # (t, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    def __len__(self):
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def edges(self) -> np.ndarray:
        """Undirected edges, one row per triangle side (with repeats)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        n_edges = len(np.unique(self.edges(), axis=0))
        return len(used) - n_edges + len(self.triangles)

    def is_closed(self) -> bool:
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def translated(self, offset) -> "Mesh":
        return Mesh(self.vertices + np.asarray(offset, dtype=float), self.triangles.copy())


def _drop_degenerate(verts: np.ndarray, tris: np.ndarray, min_area: float = 1e-12) -> Mesh:
    mesh = Mesh(verts, tris)
    if mesh.is_empty:
        return mesh
    keep = mesh.triangle_areas() > min_area
    tris = tris[keep]
    used = np.zeros(len(verts), dtype=bool)
    used[tris.ravel()] = True
    remap = np.cumsum(used) - 1
    return Mesh(verts[used], remap[tris])


def marching_cubes(grid: ScalarGrid, iso: float = 0.0, backend: str | None = None) -> Mesh:
    """Extract the ``iso`` level set; vertices are welded along lattice edges."""
    lattice_verts, tris = kernels.get(backend).marching_cubes(grid.as_volume(), float(iso))
    verts = grid.lo + lattice_verts * grid.h
    # table winding faces inward for negative-inside fields
    return _drop_degenerate(verts, tris[:, [0, 2, 1]])


def sample_surface(mesh: Mesh, n: int, seed=0) -> np.ndarray:
    """``n`` points uniform over the mesh area."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    cdf = np.cumsum(areas)
    pick = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    pick = np.minimum(pick, len(areas) - 1)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    tri = mesh.triangles[pick]
    a = mesh.vertices[tri[:, 0]]
    b = mesh.vertices[tri[:, 1]]
    c = mesh.vertices[tri[:, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def write_obj(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.triangles + 1:
            fh.write(f"f {a} {b} {c}\n")


def read_obj(path) -> Mesh:
    verts, tris = [], []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                tris.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return Mesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def write_xyz(points: np.ndarray, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for x, y, z in points:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_xyz(path) -> np.ndarray:
    return np.loadtxt(path, dtype=float, ndmin=2).reshape(-1, 3)
