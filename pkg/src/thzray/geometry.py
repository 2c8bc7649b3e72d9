"""Scene ingestion and triangle-mesh bookkeeping.

A :class:`Scene` is a welded triangle soup stored in structure-of-arrays
form (vertex table + per-triangle vertex indices) plus a material table.
Scenes are immutable after construction and safe to share across workers.

Supported input formats:

* JSON: schema with top-level keys ``materials`` (array of material
  records) and ``surfaces`` (array of ``{"vertices": [[x,y,z], ...],
  "material": name}``); polygons with more than three vertices are
  fan-triangulated on load.
* STL: binary or ASCII.  STL carries no materials, so a JSON sidecar is
  required: ``{"materials": [...], "map": {"all": name}}`` where map keys
  are either ``"all"`` or inclusive zero-based triangle ranges ``"lo-hi"``.

Complex permittivity convention: ``eps = eps' - j*eps''`` under the
``e^{+j omega t}`` time convention; ``eps'' >= 0`` means absorption.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneFormatError, SceneValidationError

WELD_TOLERANCE = 1e-6  # metres; vertices closer than this are merged
_DEGENERATE_AREA = 1e-14  # m^2; triangles at or below this area are rejected

VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m


@dataclass(frozen=True)
class Material:
    """Electromagnetic surface description.

    ``roughness_sigma`` is the RMS surface-height deviation in metres that
    drives the Rayleigh roughness factor.  ``scattering_coeff`` is the
    diffuse-scattering amplitude fraction S in [0, 1] of the directive
    lobe model and ``scattering_lobe_width`` its integer lobe exponent.
    ``conductivity`` (S/m), if nonzero, adds ``sigma/(omega*eps0)`` to the
    imaginary permittivity at the simulation frequency.
    """

    name: str
    rel_permittivity_real: float
    rel_permittivity_imag: float = 0.0
    roughness_sigma: float = 0.0
    scattering_coeff: float = 0.0
    scattering_lobe_width: int = 4
    conductivity: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise SceneValidationError("material name must be non-empty")
        if self.rel_permittivity_real < 1.0:
            raise SceneValidationError(
                f"material {self.name!r}: rel_permittivity_real must be >= 1 "
                f"for a passive dielectric, got {self.rel_permittivity_real}"
            )
        if self.rel_permittivity_imag < 0.0:
            raise SceneValidationError(
                f"material {self.name!r}: rel_permittivity_imag must be >= 0"
            )
        if self.roughness_sigma < 0.0:
            raise SceneValidationError(
                f"material {self.name!r}: roughness_sigma must be >= 0"
            )
        if not 0.0 <= self.scattering_coeff <= 1.0:
            raise SceneValidationError(
                f"material {self.name!r}: scattering_coeff must be in [0, 1]"
            )
        if int(self.scattering_lobe_width) != self.scattering_lobe_width or self.scattering_lobe_width < 1:
            raise SceneValidationError(
                f"material {self.name!r}: scattering_lobe_width must be a positive integer"
            )
        if self.conductivity < 0.0:
            raise SceneValidationError(
                f"material {self.name!r}: conductivity must be >= 0"
            )

    def complex_permittivity(self, frequency_hz: float) -> complex:
        """Relative permittivity ``eps' - j eps''`` at the given frequency."""
        imag = self.rel_permittivity_imag
        if self.conductivity > 0.0:
            imag = imag + self.conductivity / (2.0 * np.pi * frequency_hz * VACUUM_PERMITTIVITY)
        return complex(self.rel_permittivity_real, -imag)


@dataclass(frozen=True)
class Triangle:
    """Single-triangle view onto a scene (vertices in metres)."""

    vertices: np.ndarray  # (3, 3)
    material_id: int
    outward_normal: np.ndarray  # unit


@dataclass(frozen=True)
class Hit:
    """Nearest ray-triangle intersection."""

    t: float
    point: np.ndarray
    triangle_id: int
    barycentric: tuple[float, float]
    front_facing: bool


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box; ``is_empty`` when it contains nothing."""

    lo: np.ndarray
    hi: np.ndarray

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    @property
    def extent(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(3)
        return self.hi - self.lo

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @staticmethod
    def empty() -> "Aabb":
        return Aabb(np.full(3, np.inf), np.full(3, -np.inf))


class Scene:
    """Immutable welded triangle mesh with a material table."""

    def __init__(self, vertices: np.ndarray, tri_indices: np.ndarray,
                 material_ids: np.ndarray, materials: list[Material]):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.tri_indices = np.ascontiguousarray(tri_indices, dtype=np.int64).reshape(-1, 3)
        self.material_ids = np.ascontiguousarray(material_ids, dtype=np.int64).reshape(-1)
        self.materials = list(materials)
        self._validate()
        self._build_caches()

    def _validate(self):
        n = len(self.tri_indices)
        if len(self.material_ids) != n:
            raise SceneValidationError("material_ids length does not match triangle count")
        if n and (self.tri_indices.min() < 0 or self.tri_indices.max() >= len(self.vertices)):
            raise SceneValidationError("triangle vertex index out of range")
        if n:
            bad = (self.material_ids < 0) | (self.material_ids >= len(self.materials))
            if bad.any():
                raise SceneValidationError(
                    f"unresolved material id on triangles {np.nonzero(bad)[0].tolist()}"
                )

    def _build_caches(self):
        tri = self.vertices[self.tri_indices]  # (n, 3, 3)
        self.v0 = np.ascontiguousarray(tri[:, 0])
        self.e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self.e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
        cross = np.cross(self.e1, self.e2)
        norms = np.linalg.norm(cross, axis=1)
        areas = 0.5 * norms
        degenerate = np.nonzero(areas <= _DEGENERATE_AREA)[0]
        if degenerate.size:
            raise SceneValidationError(
                f"degenerate (zero-area) triangles at indices {degenerate.tolist()}"
            )
        self.areas = areas
        self.normals = cross / norms[:, None]
        self.centroids = tri.mean(axis=1)
        if len(tri):
            self.bounds = Aabb(tri.reshape(-1, 3).min(axis=0), tri.reshape(-1, 3).max(axis=0))
        else:
            self.bounds = Aabb.empty()

    @property
    def n_triangles(self) -> int:
        return len(self.tri_indices)

    def triangle(self, index: int) -> Triangle:
        return Triangle(
            vertices=self.vertices[self.tri_indices[index]].copy(),
            material_id=int(self.material_ids[index]),
            outward_normal=self.normals[index].copy(),
        )

    def material_of(self, triangle_id: int) -> Material:
        return self.materials[int(self.material_ids[triangle_id])]

    def plane_of(self, triangle_id: int) -> tuple[np.ndarray, float]:
        """Unit normal n and offset d with n.x = d on the triangle plane."""
        n = self.normals[triangle_id]
        return n, float(np.dot(n, self.v0[triangle_id]))

    def coplanar_group(self, triangle_id: int) -> list[int]:
        """Triangle ids sharing this triangle's plane via coplanar adjacency.

        Fan-triangulated polygons split one physical facet into several
        triangles; a specular reflection point may land on any of them.
        Groups are connected components of the shared-edge graph restricted
        to parallel-normal pairs, sorted ascending.
        """
        groups = getattr(self, "_coplanar_groups", None)
        if groups is None:
            parent = list(range(self.n_triangles))

            def find(i):
                while parent[i] != i:
                    parent[i] = parent[parent[i]]
                    i = parent[i]
                return i

            for _, _, t1, t2 in self.shared_edges():
                if abs(float(np.dot(self.normals[t1], self.normals[t2]))) > 1.0 - 1e-12:
                    parent[find(t1)] = find(t2)
            members: dict[int, list[int]] = {}
            for i in range(self.n_triangles):
                members.setdefault(find(i), []).append(i)
            groups = {}
            for ids in members.values():
                ids.sort()
                for i in ids:
                    groups[i] = ids
            self._coplanar_groups = groups
        return groups[int(triangle_id)]

    def shared_edges(self) -> list[tuple[int, int, int, int]]:
        """Edges shared by exactly two triangles.

        Returns tuples ``(vertex_a, vertex_b, tri_1, tri_2)`` with
        ``vertex_a < vertex_b`` and ``tri_1 < tri_2``.  Relies on vertex
        welding at load time for adjacency.
        """
        edge_map: dict[tuple[int, int], list[int]] = {}
        for t, (a, b, c) in enumerate(self.tri_indices):
            for u, v in ((a, b), (b, c), (c, a)):
                key = (int(min(u, v)), int(max(u, v)))
                edge_map.setdefault(key, []).append(t)
        out = []
        for (u, v), tris in sorted(edge_map.items()):
            if len(tris) == 2:
                out.append((u, v, min(tris), max(tris)))
        return out


def weld_vertices(points: np.ndarray, tolerance: float = WELD_TOLERANCE):
    """Merge vertices closer than ``tolerance``; returns (table, index map)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points.copy(), np.zeros(0, dtype=np.int64)
    keys = np.round(points / tolerance).astype(np.int64)
    seen: dict[tuple[int, int, int], int] = {}
    index_map = np.empty(len(points), dtype=np.int64)
    table = []
    for i, key in enumerate(map(tuple, keys)):
        j = seen.get(key)
        if j is None:
            j = len(table)
            seen[key] = j
            table.append(points[i])
        index_map[i] = j
    return np.array(table, dtype=np.float64).reshape(-1, 3), index_map


def _fan_triangulate(n_vertices: int):
    return [(0, i, i + 1) for i in range(1, n_vertices - 1)]


def _build_scene(raw_triangles: np.ndarray, material_ids, materials: list[Material]) -> Scene:
    raw_triangles = np.asarray(raw_triangles, dtype=np.float64).reshape(-1, 3, 3)
    table, index_map = weld_vertices(raw_triangles.reshape(-1, 3))
    tri_indices = index_map.reshape(-1, 3)
    return Scene(table, tri_indices, np.asarray(material_ids, dtype=np.int64), materials)


def _parse_material_record(rec: dict, where: str) -> Material:
    if "name" not in rec:
        raise SceneValidationError(f"{where}: material record missing 'name'")
    known = {
        "name", "rel_permittivity_real", "rel_permittivity_imag",
        "roughness_sigma", "scattering_coeff", "scattering_lobe_width",
        "conductivity",
    }
    unknown = set(rec) - known
    if unknown:
        raise SceneValidationError(
            f"{where}: material {rec['name']!r} has unknown fields {sorted(unknown)}"
        )
    if "rel_permittivity_real" not in rec:
        raise SceneValidationError(
            f"{where}: material {rec['name']!r} missing 'rel_permittivity_real'"
        )
    return Material(**rec)


def load_scene_json(path: str) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(
            f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise SceneFormatError(f"{path}: top level must be a JSON object")
    materials = [
        _parse_material_record(rec, path) for rec in doc.get("materials", [])
    ]
    by_name = {m.name: i for i, m in enumerate(materials)}
    if len(by_name) != len(materials):
        raise SceneValidationError(f"{path}: duplicate material names")

    tris = []
    mat_ids = []
    for si, surf in enumerate(doc.get("surfaces", [])):
        verts = np.asarray(surf.get("vertices", []), dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 3 or len(verts) < 3:
            raise SceneValidationError(
                f"{path}: surface {si} needs at least 3 xyz vertices"
            )
        name = surf.get("material")
        if name not in by_name:
            raise SceneValidationError(
                f"{path}: surface {si} references unknown material {name!r}"
            )
        for a, b, c in _fan_triangulate(len(verts)):
            tris.append(verts[[a, b, c]])
            mat_ids.append(by_name[name])
    raw = np.array(tris, dtype=np.float64).reshape(-1, 3, 3)
    return _build_scene(raw, mat_ids, materials)


def save_scene_json(scene: Scene, path: str) -> None:
    """Write a scene back out; vertex coordinates round-trip bit-exactly."""
    doc = {
        "materials": [
            {
                "name": m.name,
                "rel_permittivity_real": m.rel_permittivity_real,
                "rel_permittivity_imag": m.rel_permittivity_imag,
                "roughness_sigma": m.roughness_sigma,
                "scattering_coeff": m.scattering_coeff,
                "scattering_lobe_width": m.scattering_lobe_width,
                "conductivity": m.conductivity,
            }
            for m in scene.materials
        ],
        "surfaces": [
            {
                "vertices": scene.vertices[scene.tri_indices[i]].tolist(),
                "material": scene.materials[scene.material_ids[i]].name,
            }
            for i in range(scene.n_triangles)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _looks_binary_stl(blob: bytes) -> bool:
    if len(blob) < 84:
        return False
    (count,) = struct.unpack_from("<I", blob, 80)
    if len(blob) == 84 + 50 * count:
        return True
    # Some exporters pad; fall back on the ASCII keyword test.
    head = blob[:512].lstrip()
    return not (head.startswith(b"solid") and b"facet" in blob[:4096])


def _parse_stl_binary(blob: bytes, path: str) -> np.ndarray:
    if len(blob) < 84:
        raise SceneFormatError(f"{path}: binary STL truncated (header)")
    (count,) = struct.unpack_from("<I", blob, 80)
    need = 84 + 50 * count
    if len(blob) < need:
        raise SceneFormatError(
            f"{path}: binary STL truncated at byte {len(blob)}, expected {need}"
        )
    rec = np.frombuffer(blob[84:need], dtype=np.uint8).reshape(count, 50)
    floats = rec[:, :48].copy().view("<f4").reshape(count, 4, 3)
    return floats[:, 1:4, :].astype(np.float64)


def _parse_stl_ascii(text: str, path: str) -> np.ndarray:
    verts = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "vertex":
            if len(parts) != 4:
                raise SceneFormatError(
                    f"{path}: line {lineno}: vertex needs 3 coordinates"
                )
            try:
                verts.append([float(p) for p in parts[1:]])
            except ValueError as exc:
                raise SceneFormatError(f"{path}: line {lineno}: {exc}") from exc
    if len(verts) % 3 != 0:
        raise SceneFormatError(
            f"{path}: ASCII STL vertex count {len(verts)} is not a multiple of 3"
        )
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3, 3)


def _load_sidecar(sidecar_path: str, n_triangles: int):
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(
                f"{sidecar_path}: JSON parse error at line {exc.lineno}, "
                f"column {exc.colno}: {exc.msg}"
            ) from exc
    materials = [
        _parse_material_record(rec, sidecar_path) for rec in doc.get("materials", [])
    ]
    by_name = {m.name: i for i, m in enumerate(materials)}
    mapping = doc.get("map", {})
    mat_ids = np.full(n_triangles, -1, dtype=np.int64)
    for key, name in mapping.items():
        if name not in by_name:
            raise SceneValidationError(
                f"{sidecar_path}: map references unknown material {name!r}"
            )
        if key == "all":
            mat_ids[:] = by_name[name]
            continue
        try:
            lo_s, hi_s = key.split("-")
            lo, hi = int(lo_s), int(hi_s)
        except ValueError as exc:
            raise SceneValidationError(
                f"{sidecar_path}: map key {key!r} must be 'all' or 'lo-hi'"
            ) from exc
        if not (0 <= lo <= hi < n_triangles):
            raise SceneValidationError(
                f"{sidecar_path}: range {key!r} outside 0-{n_triangles - 1}"
            )
        mat_ids[lo:hi + 1] = by_name[name]
    if n_triangles and (mat_ids < 0).any():
        missing = np.nonzero(mat_ids < 0)[0]
        raise SceneValidationError(
            f"{sidecar_path}: triangles {missing.tolist()} have no material assignment"
        )
    return mat_ids, materials


def load_scene_stl(path: str, sidecar_path: str | None = None) -> Scene:
    if sidecar_path is None:
        raise SceneValidationError(
            f"{path}: STL input requires a material sidecar (STL carries no materials)"
        )
    with open(path, "rb") as fh:
        blob = fh.read()
    if _looks_binary_stl(blob):
        raw = _parse_stl_binary(blob, path)
    else:
        raw = _parse_stl_ascii(blob.decode("utf-8", errors="replace"), path)
    mat_ids, materials = _load_sidecar(sidecar_path, len(raw))
    return _build_scene(raw, mat_ids, materials)


def load_scene(path: str, format: str | None = None,
               sidecar_path: str | None = None) -> Scene:
    """Load a scene from JSON or STL, sniffing the format from the suffix."""
    if format is None:
        lowered = path.lower()
        if lowered.endswith(".json"):
            format = "json"
        elif lowered.endswith(".stl"):
            format = "stl"
        else:
            raise SceneFormatError(
                f"{path}: cannot infer format from suffix; pass format='json' or 'stl'"
            )
    if format == "json":
        return load_scene_json(path)
    if format == "stl":
        return load_scene_stl(path, sidecar_path)
    raise SceneFormatError(f"unsupported scene format {format!r} (json or stl)")
