"""Ray-fan generation and antenna-array geometry.

Launch directions come from a class-I geodesic subdivision of the regular
icosahedron: each face is split into T^2 sub-triangles by T-secting its
edges, and the grid points are projected onto the unit sphere.  Unique
points are constructed exactly once (12 corners, 30 edges, 20 face
interiors) so the count is 10*T^2 + 2 by construction and no tolerance
based welding is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class RayFan:
    """Unit launch directions plus the measured angular granularity."""

    directions: np.ndarray  # (n, 3) unit vectors
    angular_separation_alpha: float  # max nearest-neighbour angle, radians
    tessellation: int


@dataclass(frozen=True)
class ArrayGeometry:
    kind: str  # "ULA" | "UPA" | "explicit"
    element_positions: np.ndarray  # (n, 3) metres
    spacing: float
    orientation: np.ndarray  # (2, 3) local axes

    @property
    def element_count(self) -> int:
        return len(self.element_positions)


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts[0])
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts, faces


def geodesic_directions(tessellation: int) -> RayFan:
    """Launch directions for subdivision frequency T (count = 10*T^2 + 2)."""
    t = int(tessellation)
    if t < 1:
        raise ValueError(f"tessellation must be >= 1, got {tessellation}")
    verts, faces = _icosahedron()

    points = [v for v in verts]
    # One pass per edge (a < b) generates its T-1 interior points once.
    edges = sorted({(min(a, b), max(a, b))
                    for f in faces for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))})
    for a, b in edges:
        for i in range(1, t):
            points.append(((t - i) * verts[a] + i * verts[b]) / t)
    # Face interior points: all three barycentric weights >= 1.
    for f in faces:
        a, b, c = sorted(int(x) for x in f)
        for i in range(1, t):
            for j in range(1, t - i):
                points.append(((t - i - j) * verts[a] + i * verts[b] + j * verts[c]) / t)

    dirs = np.asarray(points, dtype=np.float64)
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    assert len(dirs) == 10 * t * t + 2

    tree = cKDTree(dirs)
    chord, _ = tree.query(dirs, k=2)
    nearest = chord[:, 1]
    alpha = float(2.0 * np.arcsin(np.clip(nearest.max() / 2.0, 0.0, 1.0)))
    return RayFan(directions=dirs, angular_separation_alpha=alpha, tessellation=t)


def make_array(kind: str, counts: tuple[int, int], spacing: float,
               center, orientation=None) -> ArrayGeometry:
    """Uniform linear/planar array centred on ``center``.

    ``counts`` is (n1, n2); ULA requires n2 = 1.  ``orientation`` gives the
    two local axes (second one ignored for ULA); defaults to x and z.
    """
    kind = kind.upper()
    if kind not in ("ULA", "UPA"):
        raise ValueError(f"array kind must be ULA or UPA, got {kind!r}")
    n1, n2 = int(counts[0]), int(counts[1])
    if n1 < 1 or n2 < 1:
        raise ValueError("element counts must be >= 1")
    if kind == "ULA" and n2 != 1:
        raise ValueError("ULA requires counts = (n, 1)")
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")

    if orientation is None:
        orientation = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    axes = np.asarray(orientation, dtype=np.float64).reshape(2, 3)
    for ax in axes:
        if abs(np.linalg.norm(ax) - 1.0) > 1e-9:
            raise ValueError("orientation axes must be unit vectors")
    if kind == "UPA" and abs(np.dot(axes[0], axes[1])) > 1e-9:
        raise ValueError("UPA orientation axes must be orthogonal")

    center = np.asarray(center, dtype=np.float64).reshape(3)
    i = np.arange(n1) - (n1 - 1) / 2.0
    j = np.arange(n2) - (n2 - 1) / 2.0
    offsets = (i[:, None, None] * axes[0] + j[None, :, None] * axes[1]) * spacing
    positions = center + offsets.reshape(-1, 3)
    return ArrayGeometry(kind=kind, element_positions=positions,
                         spacing=float(spacing), orientation=axes)
