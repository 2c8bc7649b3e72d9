"""Shooting-and-bouncing-rays path search.

``trace`` launches the ray fan from every transmit element, bounces the
rays specularly under the configured limits, and tests a reception sphere
around every receive element along every segment (radius
``alpha * L / sqrt(3)`` where L is the unfolded length at the perpendicular
foot, so adjacent ray cones tile without gaps).  Captured specular
candidates are then geometry-corrected: the exact mirror-image reflection
points for the captured triangle sequence are solved, validated for
containment and visibility, and replace the raw capture geometry, making
delay and phase exact.

Line-of-sight, single diffraction (Fermat point on wedge edges) and
single-bounce diffuse scattering (one source point per illuminated
triangle) are enumerated deterministically rather than ray-hit, which is
far more reliable for those mechanisms.

The result is a pure function of the inputs: records are deduplicated by
interaction signature, every record's geometry depends only on that
signature, and the output ordering is canonical, so the degree of
parallelism can never change the answer.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .accel import AccelStructure
from .geometry import Scene
from .launch import RayFan

SQRT3 = math.sqrt(3.0)
_BARY_EPS = 1e-9          # containment slack for corrected reflection points
_SEG_PARAM_EPS = 1e-12    # image-solve crossings must be strictly interior
_COPLANAR_COS = math.cos(math.radians(1.0))  # wedge test: faces within 1 deg are flat


@dataclass(frozen=True)
class TraceLimits:
    max_reflections: int = 3
    max_diffractions: int = 0
    max_scatterings: int = 0
    max_total_interactions: int | None = None

    def __post_init__(self):
        for name in ("max_reflections", "max_diffractions", "max_scatterings"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_total_interactions is not None and self.max_total_interactions < 0:
            raise ValueError("max_total_interactions must be >= 0")

    @property
    def effective_reflections(self) -> int:
        if self.max_total_interactions is None:
            return self.max_reflections
        return min(self.max_reflections, self.max_total_interactions)

    @property
    def diffraction_enabled(self) -> bool:
        return self.max_diffractions >= 1 and (
            self.max_total_interactions is None or self.max_total_interactions >= 1)

    @property
    def scattering_enabled(self) -> bool:
        return self.max_scatterings >= 1 and (
            self.max_total_interactions is None or self.max_total_interactions >= 1)


@dataclass(frozen=True)
class Interaction:
    kind: str  # "reflection" | "diffraction" | "scattering"
    point: tuple[float, float, float]
    surface_normal: tuple[float, float, float]  # oriented against the incoming ray
    material_id: int
    triangle_id: int
    incidence_angle: float  # radians from the normal, [0, pi/2)
    # Scattering-only: source patch area in m^2.
    patch_area: float = 0.0
    # Diffraction-only wedge data (edge-fixed quantities precomputed here).
    edge_id: int = -1
    edge_dir: tuple[float, float, float] | None = None
    wedge_interior_angle: float = 0.0
    wedge_n: float = 0.0       # exterior angle / pi
    phi_incident: float = 0.0  # measured from the o-face, radians
    phi_observed: float = 0.0
    beta0: float = 0.0         # oblique angle between ray and edge

    @property
    def signature(self) -> tuple[str, int]:
        if self.kind == "diffraction":
            return ("D", self.edge_id)
        return ("R" if self.kind == "reflection" else "S", self.triangle_id)


@dataclass(frozen=True)
class PathRecord:
    tx_index: int
    rx_index: int
    interactions: tuple[Interaction, ...]
    segment_lengths: tuple[float, ...]
    unfolded_length: float
    departure_dir: tuple[float, float, float]
    arrival_dir: tuple[float, float, float]
    capture_distance: float = 0.0

    @property
    def signature(self) -> tuple:
        return tuple(i.signature for i in self.interactions)

    @property
    def sort_key(self):
        return (self.tx_index, self.rx_index, self.unfolded_length, self.signature)


@dataclass(frozen=True)
class Capture:
    foot: float      # parameter along the segment of the perpendicular foot
    distance: float  # perpendicular distance from rx to the segment
    radius: float    # reception-sphere radius at the foot


def reception_test(segment_origin, segment_dir, segment_len: float, rx,
                   alpha: float, unfolded_len_at_start: float) -> Capture | None:
    """Test one receive point against one ray segment.

    ``unfolded_len_at_start`` is the unfolded path length accumulated from
    the transmitter up to the segment origin; the sphere radius is
    evaluated at the perpendicular foot.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    w = np.asarray(rx, dtype=np.float64) - np.asarray(segment_origin, dtype=np.float64)
    s = float(np.dot(w, segment_dir))
    if s < 0.0 or s > segment_len:
        return None
    dist = math.sqrt(max(float(np.dot(w, w)) - s * s, 0.0))
    radius = alpha * (unfolded_len_at_start + s) / SQRT3
    if dist > radius:
        return None
    return Capture(foot=s, distance=dist, radius=radius)


def dedupe(records: list[PathRecord]) -> list[PathRecord]:
    """Keep, per (tx, rx, signature), the record with the closest capture."""
    best: dict[tuple, PathRecord] = {}
    for rec in records:
        key = (rec.tx_index, rec.rx_index, rec.signature)
        cur = best.get(key)
        if cur is None or rec.capture_distance < cur.capture_distance:
            best[key] = rec
    return sorted(best.values(), key=lambda r: r.sort_key)


# ---------------------------------------------------------------------------
# deterministic mechanisms


def _vec(a) -> tuple[float, float, float]:
    return (float(a[0]), float(a[1]), float(a[2]))


def _los_record(accel: AccelStructure, tx, rx, tx_index, rx_index,
                guard: float) -> PathRecord | None:
    d = np.asarray(rx, dtype=np.float64) - np.asarray(tx, dtype=np.float64)
    length = float(np.linalg.norm(d))
    if length <= guard:
        return None
    if accel.segment_blocked(tx, rx, guard):
        return None
    u = _vec(d / length)
    return PathRecord(tx_index=tx_index, rx_index=rx_index, interactions=(),
                      segment_lengths=(length,), unfolded_length=length,
                      departure_dir=u, arrival_dir=u)


@dataclass(frozen=True)
class _WedgeEdge:
    edge_id: int
    e0: np.ndarray
    e1: np.ndarray
    tangent: np.ndarray  # unit, e0 -> e1
    length: float
    face_dirs: tuple[np.ndarray, np.ndarray]  # in-face unit vectors away from the edge
    tri_ids: tuple[int, int]
    material_id: int


def find_wedge_edges(scene: Scene) -> list[_WedgeEdge]:
    """Edges shared by two non-coplanar triangles, in deterministic order."""
    out = []
    for va, vb, t1, t2 in scene.shared_edges():
        n1, n2 = scene.normals[t1], scene.normals[t2]
        if abs(float(np.dot(n1, n2))) > _COPLANAR_COS:
            continue
        e0, e1p = scene.vertices[va], scene.vertices[vb]
        tangent = e1p - e0
        length = float(np.linalg.norm(tangent))
        if length <= 0:
            continue
        tangent = tangent / length
        dirs = []
        for t in (t1, t2):
            ids = [int(i) for i in scene.tri_indices[t] if i not in (va, vb)]
            w = scene.vertices[ids[0]] - e0
            w = w - np.dot(w, tangent) * tangent
            dirs.append(w / np.linalg.norm(w))
        out.append(_WedgeEdge(edge_id=len(out), e0=e0, e1=e1p, tangent=tangent,
                              length=length, face_dirs=(dirs[0], dirs[1]),
                              tri_ids=(t1, t2),
                              material_id=int(scene.material_ids[t1])))
    return out


def _diffraction_record(accel: AccelStructure, edge: _WedgeEdge, tx, rx,
                        tx_index, rx_index, guard: float) -> PathRecord | None:
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    e, e0 = edge.tangent, edge.e0
    a = float(np.dot(tx - e0, e))
    b = float(np.dot(rx - e0, e))
    pa = tx - e0 - a * e
    pb = rx - e0 - b * e
    ra = float(np.linalg.norm(pa))
    rb = float(np.linalg.norm(pb))
    if ra <= guard or rb <= guard:
        return None
    # Fermat point: unfold the two half-planes about the edge.
    s = (a * rb + b * ra) / (ra + rb)
    if not (guard < s < edge.length - guard):
        return None
    q = e0 + s * e
    s_in = float(np.linalg.norm(q - tx))
    s_out = float(np.linalg.norm(rx - q))
    if s_in <= guard or s_out <= guard:
        return None

    # Angles in the plane perpendicular to the edge.  The exterior region
    # is the one containing the source; the bounding face on its zero side
    # is the o-face from which both angles are measured.
    t1, t2 = edge.face_dirs
    y = np.cross(e, t1)

    def plane_angle(v):
        ang = math.atan2(float(np.dot(v, y)), float(np.dot(v, t1)))
        return ang + 2 * math.pi if ang < 0 else ang

    a2 = plane_angle(t2)
    at = plane_angle(pa / ra)
    ar = plane_angle(pb / rb)
    margin = 1e-9
    if at <= a2:
        if not (margin < at < a2 - margin and margin < ar < a2 - margin):
            return None
        exterior, phi_inc, phi_obs = a2, at, ar
    else:
        if not (a2 + margin < at < 2 * math.pi - margin
                and a2 + margin < ar < 2 * math.pi - margin):
            return None
        exterior, phi_inc, phi_obs = 2 * math.pi - a2, at - a2, ar - a2
    n_param = exterior / math.pi

    if accel.segment_blocked(tx, q, guard) or accel.segment_blocked(q, rx, guard):
        return None

    incident = (q - tx) / s_in
    beta0 = math.asin(min(1.0, max(ra / s_in, 1e-12)))
    # Report the normal of the face bounding the measured region at zero.
    o_face = t1 if at <= a2 else t2
    normal = np.cross(o_face, e)
    if np.dot(normal, tx - q) < 0:
        normal = -normal
    inter = Interaction(
        kind="diffraction", point=_vec(q), surface_normal=_vec(normal),
        material_id=edge.material_id, triangle_id=edge.tri_ids[0],
        incidence_angle=float(abs(math.pi / 2 - beta0)),
        edge_id=edge.edge_id, edge_dir=_vec(e),
        wedge_interior_angle=float(2 * math.pi - exterior), wedge_n=float(n_param),
        phi_incident=float(phi_inc), phi_observed=float(phi_obs),
        beta0=float(beta0))
    return PathRecord(
        tx_index=tx_index, rx_index=rx_index, interactions=(inter,),
        segment_lengths=(s_in, s_out), unfolded_length=s_in + s_out,
        departure_dir=_vec(incident), arrival_dir=_vec((rx - q) / s_out))


def _scattering_records(scene: Scene, accel: AccelStructure, tx, rx_positions,
                        tx_index, guard: float) -> list[PathRecord]:
    out = []
    tx = np.asarray(tx, dtype=np.float64)
    for tri in range(scene.n_triangles):
        mat = scene.material_of(tri)
        if mat.scattering_coeff <= 0.0:
            continue
        c = scene.centroids[tri]
        to_tx = tx - c
        r_in = float(np.linalg.norm(to_tx))
        if r_in <= guard:
            continue
        side = float(np.dot(scene.normals[tri], to_tx))
        if abs(side) / r_in < 1e-9:
            continue  # grazing illumination
        normal = scene.normals[tri] if side > 0 else -scene.normals[tri]
        if accel.segment_blocked(tx, c, guard):
            continue
        cos_inc = float(np.dot(normal, to_tx / r_in))
        inc_angle = math.acos(min(1.0, max(cos_inc, -1.0)))
        for rx_index, rx in enumerate(rx_positions):
            to_rx = np.asarray(rx, dtype=np.float64) - c
            r_out = float(np.linalg.norm(to_rx))
            if r_out <= guard:
                continue
            if float(np.dot(normal, to_rx)) / r_out < 1e-9:
                continue  # receiver behind or on the surface
            if accel.segment_blocked(c, rx, guard):
                continue
            inter = Interaction(
                kind="scattering", point=_vec(c), surface_normal=_vec(normal),
                material_id=int(scene.material_ids[tri]), triangle_id=tri,
                incidence_angle=inc_angle, patch_area=float(scene.areas[tri]))
            out.append(PathRecord(
                tx_index=tx_index, rx_index=rx_index, interactions=(inter,),
                segment_lengths=(r_in, r_out), unfolded_length=r_in + r_out,
                departure_dir=_vec(-to_tx / r_in), arrival_dir=_vec(to_rx / r_out)))
    return out


# ---------------------------------------------------------------------------
# specular capture and geometry correction


def _triangle_contains(scene: Scene, tri: int, point: np.ndarray) -> bool:
    w = point - scene.v0[tri]
    e1, e2 = scene.e1[tri], scene.e2[tri]
    d11 = float(np.dot(e1, e1))
    d12 = float(np.dot(e1, e2))
    d22 = float(np.dot(e2, e2))
    w1 = float(np.dot(w, e1))
    w2 = float(np.dot(w, e2))
    det = d11 * d22 - d12 * d12
    u = (d22 * w1 - d12 * w2) / det
    v = (d11 * w2 - d12 * w1) / det
    return u >= -_BARY_EPS and v >= -_BARY_EPS and u + v <= 1.0 + _BARY_EPS


def canonical_plane_triangle(scene: Scene, tri: int, point: np.ndarray) -> int | None:
    """Lowest-id triangle of the coplanar group that contains the point.

    A raw capture may name one triangle of a fan-triangulated facet while
    the exact reflection point lies on a coplanar neighbour; the canonical
    id keeps signatures well defined either way.
    """
    group = scene.coplanar_group(tri)
    if len(group) <= 8:
        for candidate in group:
            if _triangle_contains(scene, candidate, point):
                return candidate
        return None
    ids = np.asarray(group)
    e1 = scene.e1[ids]
    e2 = scene.e2[ids]
    w = point[None, :] - scene.v0[ids]
    d11 = np.einsum("ij,ij->i", e1, e1)
    d12 = np.einsum("ij,ij->i", e1, e2)
    d22 = np.einsum("ij,ij->i", e2, e2)
    w1 = np.einsum("ij,ij->i", w, e1)
    w2 = np.einsum("ij,ij->i", w, e2)
    det = d11 * d22 - d12 * d12
    u = (d22 * w1 - d12 * w2) / det
    v = (d11 * w2 - d12 * w1) / det
    inside = (u >= -_BARY_EPS) & (v >= -_BARY_EPS) & (u + v <= 1.0 + _BARY_EPS)
    hits = np.nonzero(inside)[0]
    return int(ids[hits[0]]) if hits.size else None


def solve_specular_path(scene: Scene, accel: AccelStructure, tx, rx,
                        tri_sequence, tx_index: int, rx_index: int,
                        guard: float, capture_distance: float = 0.0
                        ) -> PathRecord | None:
    """Exact mirror-image reflection points for a triangle sequence.

    Returns None when the signature admits no valid specular path (point
    outside its facet, wrong crossing order, or an occluded leg).  The
    returned interactions carry canonical triangle ids (see
    ``canonical_plane_triangle``).
    """
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    k = len(tri_sequence)
    planes = [scene.plane_of(t) for t in tri_sequence]
    images = []
    p = tx
    for n, d in planes:
        p = p - 2.0 * (float(np.dot(n, p)) - d) * n
        images.append(p)

    points: list[np.ndarray] = []
    tri_sequence = list(tri_sequence)
    target = rx
    for idx in range(k - 1, -1, -1):
        n, d = planes[idx]
        img = images[idx]
        denom = float(np.dot(n, target - img))
        if abs(denom) < 1e-300:
            return None
        s = (d - float(np.dot(n, img))) / denom
        if not (_SEG_PARAM_EPS < s < 1.0 - _SEG_PARAM_EPS):
            return None
        point = img + s * (target - img)
        canonical = canonical_plane_triangle(scene, tri_sequence[idx], point)
        if canonical is None:
            return None
        tri_sequence[idx] = canonical
        points.insert(0, point)
        target = point

    chain = [tx, *points, rx]
    lengths = []
    interactions = []
    for i in range(len(chain) - 1):
        seg = chain[i + 1] - chain[i]
        length = float(np.linalg.norm(seg))
        if length <= guard:
            return None
        if accel.segment_blocked(chain[i], chain[i + 1], guard):
            return None
        lengths.append(length)
        if i < k:
            u_in = seg / length
            n, _ = planes[i]
            ndot = float(np.dot(u_in, n))
            normal = -n if ndot > 0 else n
            cos_inc = min(1.0, abs(ndot))
            interactions.append(Interaction(
                kind="reflection", point=_vec(chain[i + 1]),
                surface_normal=_vec(normal),
                material_id=int(scene.material_ids[tri_sequence[i]]),
                triangle_id=int(tri_sequence[i]),
                incidence_angle=math.acos(cos_inc)))

    dep = (chain[1] - chain[0])
    arr = (chain[-1] - chain[-2])
    return PathRecord(
        tx_index=tx_index, rx_index=rx_index, interactions=tuple(interactions),
        segment_lengths=tuple(lengths), unfolded_length=float(sum(lengths)),
        departure_dir=_vec(dep / np.linalg.norm(dep)),
        arrival_dir=_vec(arr / np.linalg.norm(arr)),
        capture_distance=capture_distance)


def _march_chunk(scene: Scene, accel: AccelStructure, tx, dirs, alpha,
                 rx_positions, max_reflections: int, guard: float,
                 cap_length: float) -> dict:
    """Bounce a block of rays; returns {(rx, tri_signature): min distance}."""
    captures: dict[tuple, float] = {}
    m = len(dirs)
    if m == 0 or max_reflections == 0 or scene.n_triangles == 0:
        return captures
    rx = np.asarray(rx_positions, dtype=np.float64).reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(tx, dtype=np.float64), (m, 3)).copy()
    d = np.ascontiguousarray(dirs, dtype=np.float64)
    unfolded = np.zeros(m)
    sig = np.full((m, max_reflections), -1, dtype=np.int64)
    n_ref = np.zeros(m, dtype=np.int64)

    for level in range(max_reflections + 1):
        tri, t, _, _ = accel.nearest_batch(origins, d, guard)
        has_hit = tri >= 0
        seg_len = np.where(has_hit, t, np.inf)
        seg_len = np.minimum(seg_len, cap_length - unfolded)

        if level > 0:
            w = rx[None, :, :] - origins[:, None, :]
            foot = np.einsum("mrj,mj->mr", w, d)
            dist2 = np.einsum("mrj,mrj->mr", w, w) - foot * foot
            radius = alpha * (unfolded[:, None] + foot) / SQRT3
            hit_mask = ((foot >= 0.0) & (foot <= seg_len[:, None])
                        & (dist2 <= radius * radius))
            for i, r in zip(*np.nonzero(hit_mask)):
                key = (int(r), tuple(int(x) for x in sig[i, :n_ref[i]]))
                dist = math.sqrt(max(float(dist2[i, r]), 0.0))
                prev = captures.get(key)
                if prev is None or dist < prev:
                    captures[key] = dist

        if level == max_reflections:
            break
        cont = has_hit & (unfolded + t < cap_length)
        if not cont.any():
            break
        idx = np.nonzero(cont)[0]
        hit_tri = tri[idx]
        hit_pts = origins[idx] + t[idx, None] * d[idx]
        normals = scene.normals[hit_tri]
        d_new = d[idx] - 2.0 * np.einsum("mj,mj->m", d[idx], normals)[:, None] * normals
        sig = sig[idx]
        n_ref = n_ref[idx]
        sig[np.arange(len(idx)), n_ref] = hit_tri
        n_ref = n_ref + 1
        unfolded = unfolded[idx] + t[idx]
        origins = hit_pts
        d = d_new

    return captures


# ---------------------------------------------------------------------------
# orchestration

def _signature_variants(seq: tuple):
    """The captured sequence plus its adjacent-pair swaps.

    Near a two-plane corner the true reflection order can differ from the
    order the capturing ray happened to bounce in; the exact solver
    rejects invalid variants, so trying the swaps only ever adds paths the
    image method would also find.
    """
    yield seq
    for i in range(len(seq) - 1):
        if seq[i] != seq[i + 1]:
            yield seq[:i] + (seq[i + 1], seq[i]) + seq[i + 2:]


_WORKER_STATE: dict = {}


def _run_task(args):
    ti, lo, hi = args
    st = _WORKER_STATE
    scene, accel = st["scene"], st["accel"]
    fan, limits = st["fan"], st["limits"]
    tx_positions, rx_positions = st["tx"], st["rx"]
    guard, cap_length = st["guard"], st["cap"]
    tx = tx_positions[ti]

    captures = _march_chunk(scene, accel, tx, fan.directions[lo:hi],
                            fan.angular_separation_alpha, rx_positions,
                            limits.effective_reflections, guard, cap_length)
    records: list[PathRecord] = []
    for (rx_index, tri_seq), dist in captures.items():
        for candidate in _signature_variants(tri_seq):
            rec = solve_specular_path(scene, accel, tx, rx_positions[rx_index],
                                      candidate, ti, rx_index, guard,
                                      capture_distance=dist)
            if rec is not None:
                records.append(rec)

    if lo == 0:  # deterministic mechanisms ride on the first chunk per tx
        for rx_index, rx in enumerate(rx_positions):
            rec = _los_record(accel, tx, rx, ti, rx_index, guard)
            if rec is not None:
                records.append(rec)
        if limits.diffraction_enabled:
            for edge in st["edges"]:
                for rx_index, rx in enumerate(rx_positions):
                    rec = _diffraction_record(accel, edge, tx, rx, ti, rx_index, guard)
                    if rec is not None:
                        records.append(rec)
        if limits.scattering_enabled:
            records.extend(_scattering_records(scene, accel, tx, rx_positions,
                                               ti, guard))
    return records


def _setup_state(scene, accel, tx_positions, rx_positions, fan, limits,
                 max_path_length):
    tx = np.asarray(tx_positions, dtype=np.float64).reshape(-1, 3)
    rx = np.asarray(rx_positions, dtype=np.float64).reshape(-1, 3)
    if len(tx) == 0 or len(rx) == 0:
        raise ValueError("tx and rx position lists must be non-empty")
    diag = scene.bounds.diagonal if not scene.bounds.is_empty else 0.0
    span = max(float(np.linalg.norm(r - t)) for t in tx for r in rx)
    guard = max(1e-9, 1e-6 * diag) if diag > 0 else 1e-9
    cap = max_path_length if max_path_length else 10.0 * max(diag, span, 1.0)
    edges = find_wedge_edges(scene) if limits.diffraction_enabled else []
    return {
        "scene": scene, "accel": accel, "tx": tx, "rx": rx, "fan": fan,
        "limits": limits, "guard": guard, "cap": cap, "edges": edges,
    }


def _init_worker(state):
    _WORKER_STATE.clear()
    _WORKER_STATE.update(state)


def trace(scene: Scene, accel: AccelStructure, tx_positions, rx_positions,
          fan: RayFan, limits: TraceLimits, *, max_path_length: float | None = None,
          workers: int = 1, chunk_size: int = 8192) -> list[PathRecord]:
    """All propagation paths between every (tx, rx) pair, canonically sorted."""
    state = _setup_state(scene, accel, tx_positions, rx_positions, fan, limits,
                         max_path_length)
    n_dirs = len(fan.directions)
    tasks = [(ti, lo, min(lo + chunk_size, n_dirs))
             for ti in range(len(state["tx"]))
             for lo in range(0, max(n_dirs, 1), chunk_size)]

    if workers == 0:
        workers = os.cpu_count() or 1
    if workers > 1 and len(tasks) > 1 and hasattr(os, "fork"):
        import multiprocessing as mp

        # Warm the intersection kernel in the parent so forked workers
        # inherit the compiled code instead of compiling it N times.
        accel.nearest_batch(state["tx"][:1], np.array([[0.0, 0.0, 1.0]]), 0.0)
        ctx = mp.get_context("fork")
        _init_worker(state)  # fork children inherit the parent state
        with ctx.Pool(processes=workers) as pool:
            chunks = pool.map(_run_task, tasks, chunksize=1)
        records = [rec for chunk in chunks for rec in chunk]
    else:
        _init_worker(state)
        records = [rec for task in tasks for rec in _run_task(task)]
    _WORKER_STATE.clear()
    return dedupe(records)
