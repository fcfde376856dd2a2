"""Boundary meshes, enclosed volumes, and the certificates that need them.

Regions are known only through their oriented boundaries: segment loops in
the plane, triangle meshes in space.  Everything downstream (point-in-region
tests, clipped volumes, the nontriviality bound) works off that boundary
representation alone.

Atoms are manufactured from a mesh by exact quadrature: a segment is cut
into equal pieces sampled at midpoints; a triangle is cut into strips of
equal area between similar copies of itself scaled about a vertex, sampled
at the strip centroids.  Total mass equals total mesh measure exactly.

Monte Carlo volume queries draw from a counter-based generator seeded
explicitly, and the same sample points serve both regions of a comparison,
so results never depend on thread count and differences carry low variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import (DEFAULT_TOLERANCES, Tolerances, ball_volume,
                     isoperimetric_constant)
from .errors import (BallNotInterior, ConfigError, DegenerateSimplex,
                     DeltaTooLarge, OpenMesh, SelfIntersectionSuspected)
from .flow import FlowTrace
from .varifold import DiscreteVarifold, grassmann_from_basis

MC_DEFAULT_SAMPLES = 100_000

# spare ray directions for the parity test, tried in order until none of the
# intersections is borderline
_RAY_DIRECTIONS = np.array([
    [0.0, 0.0, 1.0],
    [0.123456789, 0.987654321, 1.0],
    [-0.7071, 0.3, 1.0],
    [0.25, -0.8, 1.0],
    [-0.33, -0.57, 1.0],
])


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = float(np.dot(p - a, ab)) / denom
    t = min(max(t, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def point_triangle_distance(p, a, b, c) -> float:
    """Distance to a filled triangle; falls back to edges outside it."""
    p, a, b, c = (np.asarray(v, dtype=float) for v in (p, a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    G = np.array([[np.dot(ab, ab), np.dot(ab, ac)],
                  [np.dot(ab, ac), np.dot(ac, ac)]])
    rhs = np.array([np.dot(ap, ab), np.dot(ap, ac)])
    det = np.linalg.det(G)
    if abs(det) > 1e-18:
        u, v = np.linalg.solve(G, rhs)
        if u >= 0.0 and v >= 0.0 and u + v <= 1.0:
            foot = a + u * ab + v * ac
            return float(np.linalg.norm(p - foot))
    return min(point_segment_distance(p, a, b),
               point_segment_distance(p, b, c),
               point_segment_distance(p, a, c))


@dataclass(frozen=True)
class SurfaceMesh:
    """Oriented boundary mesh: segments when n = 2, triangles when n = 3."""

    vertices: np.ndarray   # (M, n)
    simplices: np.ndarray  # (F, n) integer

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        s = np.ascontiguousarray(np.asarray(self.simplices, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise ConfigError("vertices must be (M, 2) or (M, 3)")
        if s.ndim != 2 or s.shape[1] != v.shape[1]:
            raise ConfigError("simplices must have one row per facet, "
                              "width matching the ambient dimension")
        if len(s) and (s.min() < 0 or s.max() >= len(v)):
            raise ConfigError("simplex index out of range")
        v.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "simplices", s)

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    def __len__(self) -> int:
        return self.simplices.shape[0]

    def check_closed(self) -> None:
        """Closed and consistently oriented, or OpenMesh with the defect."""
        if len(self) == 0:
            raise OpenMesh("mesh has no facets")
        if self.n == 2:
            tails = np.bincount(self.simplices[:, 0], minlength=len(self.vertices))
            heads = np.bincount(self.simplices[:, 1], minlength=len(self.vertices))
            used = np.unique(self.simplices)
            if (np.any(tails[used] != 1) or np.any(heads[used] != 1)):
                raise OpenMesh("each vertex must be the tail of exactly one "
                               "segment and the head of exactly one")
        else:
            e = np.vstack([self.simplices[:, [0, 1]], self.simplices[:, [1, 2]],
                           self.simplices[:, [2, 0]]])
            codes = e[:, 0] * len(self.vertices) + e[:, 1]
            if len(np.unique(codes)) != len(codes):
                raise OpenMesh("duplicated directed edge (inconsistent orientation)")
            rev = e[:, 1] * len(self.vertices) + e[:, 0]
            if not np.array_equal(np.sort(codes), np.sort(rev)):
                raise OpenMesh("an edge lacks its oppositely oriented partner")

    def measures(self) -> np.ndarray:
        """Length or area of every facet."""
        V = self.vertices
        S = self.simplices
        if self.n == 2:
            return np.linalg.norm(V[S[:, 1]] - V[S[:, 0]], axis=1)
        cr = np.cross(V[S[:, 1]] - V[S[:, 0]], V[S[:, 2]] - V[S[:, 0]])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def total_measure(self) -> float:
        return float(self.measures().sum())


@dataclass(frozen=True)
class OpenPartition:
    """Finitely many disjoint open regions presented through one boundary mesh."""

    labels: tuple[str, ...]
    boundary: SurfaceMesh
    bounded: tuple[bool, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.bounded):
            raise ConfigError("one bounded flag per region label")
        if not any(not b for b in self.bounded):
            raise ConfigError("at least one region must be unbounded")


def loop_mesh(points) -> SurfaceMesh:
    """Closed polygon through the points in order (n = 2)."""
    pts = np.asarray(points, dtype=float)
    M = len(pts)
    segs = np.stack([np.arange(M), (np.arange(M) + 1) % M], axis=1)
    return SurfaceMesh(pts, segs)


def regular_polygon_mesh(sides: int, radius: float = 1.0,
                         center=(0.0, 0.0)) -> SurfaceMesh:
    th = (np.arange(sides) + 0.5) / sides * 2.0 * math.pi
    pts = np.stack([np.cos(th), np.sin(th)], 1) * radius + np.asarray(center, float)
    return loop_mesh(pts)


def merge_meshes(*meshes: SurfaceMesh) -> SurfaceMesh:
    """Disjoint union (indices offset); orientation of each part preserved."""
    if not meshes:
        raise ConfigError("nothing to merge")
    n = meshes[0].n
    verts, simps, offset = [], [], 0
    for m in meshes:
        if m.n != n:
            raise ConfigError("meshes live in different ambient dimensions")
        verts.append(m.vertices)
        simps.append(m.simplices + offset)
        offset += len(m.vertices)
    return SurfaceMesh(np.vstack(verts), np.vstack(simps))


_ICO_T = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
    [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
    [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
], dtype=float)
_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def icosphere_mesh(level: int = 2, radius: float = 1.0,
                   center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Subdivided icosahedron projected to the sphere, outward oriented."""
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    faces = _ICO_FACES.copy()
    for _ in range(level):
        midpoint = {}
        new_faces = []
        verts_list = list(verts)

        def midof(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts_list[i] + verts_list[j]
                verts_list.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts_list) - 1
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = midof(a, b), midof(b, c), midof(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return SurfaceMesh(verts * radius + np.asarray(center, float), faces)


def mesh_to_varifold(mesh: SurfaceMesh, samples_per_simplex: int = 1,
                     tol: Tolerances = DEFAULT_TOLERANCES) -> DiscreteVarifold:
    """Atoms at facet quadrature points; total mass = total measure exactly."""
    if samples_per_simplex < 1:
        raise ConfigError("need at least one sample per facet")
    meas = mesh.measures()
    if np.any(meas <= tol.degenerate_simplex):
        raise DegenerateSimplex("a facet has vanishing measure")
    V, S = mesh.vertices, mesh.simplices
    s = samples_per_simplex
    if mesh.n == 2:
        A, B = V[S[:, 0]], V[S[:, 1]]
        frac = (np.arange(s) + 0.5) / s
        pos = A[:, None, :] + frac[None, :, None] * (B - A)[:, None, :]
        pos = pos.reshape(-1, 2)
        tang = np.repeat(B - A, s, axis=0)
        masses = np.repeat(meas / s, s)
        d = 1
    else:
        A, B, C = V[S[:, 0]], V[S[:, 1]], V[S[:, 2]]
        Q = 0.5 * (B + C)
        tau = np.sqrt(np.arange(s + 1) / s)
        lam = (2.0 / 3.0) * (tau[1:] ** 3 - tau[:-1] ** 3) / (tau[1:] ** 2 - tau[:-1] ** 2)
        pos = A[:, None, :] + lam[None, :, None] * (Q - A)[:, None, :]
        pos = pos.reshape(-1, 3)
        e1 = np.repeat(B - A, s, axis=0)
        e2 = np.repeat(C - A, s, axis=0)
        tang = np.stack([e1, e2], axis=1)  # (F*s, 2, 3)
        masses = np.repeat(meas / s, s)
        d = 2
    if mesh.n == 2:
        norms2 = np.einsum("ai,ai->a", tang, tang)
        planes = np.einsum("ai,aj->aij", tang, tang) / norms2[:, None, None]
    else:
        gram = np.einsum("aki,ali->akl", tang, tang)     # (F*s, 2, 2)
        sol = np.linalg.solve(gram, tang)                # G^-1 B rows
        planes = np.einsum("aki,akj->aij", tang, sol)
        planes = 0.5 * (planes + np.transpose(planes, (0, 2, 1)))
    return DiscreteVarifold.from_arrays(pos, planes, masses, d=d)


def enclosed_volume(mesh: SurfaceMesh) -> float:
    """Divergence-theorem volume; positive for outward orientation."""
    mesh.check_closed()
    V, S = mesh.vertices, mesh.simplices
    if mesh.n == 2:
        A, B = V[S[:, 0]], V[S[:, 1]]
        return float(0.5 * np.sum(A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0]))
    A, B, C = V[S[:, 0]], V[S[:, 1]], V[S[:, 2]]
    return float(np.sum(np.einsum("ai,ai->a", A, np.cross(B, C))) / 6.0)


def advect_mesh(mesh: SurfaceMesh, f,
                tol: Tolerances = DEFAULT_TOLERANCES) -> SurfaceMesh:
    """Map the vertices, keep connectivity; refuse on vertex collisions."""
    value = f.value if hasattr(f, "value") else f
    new_verts = np.atleast_2d(np.asarray(value(mesh.vertices), dtype=float))
    _check_vertex_collisions(new_verts, tol.vertex_collision)
    return SurfaceMesh(new_verts, mesh.simplices)


def _check_vertex_collisions(verts: np.ndarray, threshold: float,
                             chunk: int = 1024) -> None:
    M = len(verts)
    for lo in range(0, M, chunk):
        block = verts[lo:lo + chunk]
        d2 = np.sum((block[:, None, :] - verts[None, :, :]) ** 2, axis=2)
        rows = np.arange(lo, min(lo + chunk, M))
        d2[rows - lo, rows] = np.inf
        if np.min(d2) < threshold**2:
            raise SelfIntersectionSuspected(
                "two mesh vertices collapsed onto each other")


# ---------------------------------------------------------------------------
# point-in-region


def _contains_2d(mesh: SurfaceMesh, pts: np.ndarray) -> np.ndarray:
    A = mesh.vertices[mesh.simplices[:, 0]]
    B = mesh.vertices[mesh.simplices[:, 1]]
    ay, by = A[:, 1][None, :], B[:, 1][None, :]
    px, py = pts[:, 0][:, None], pts[:, 1][:, None]
    straddle = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (py - ay) / (by - ay)
        xs = A[:, 0][None, :] + t * (B[:, 0] - A[:, 0])[None, :]
    hits = straddle & (px < xs)
    return (hits.sum(axis=1) % 2).astype(bool)


def _ray_hits_3d(A, E1, E2, pts, direction):
    """Parity hits and a borderline flag, Moller-Trumbore style."""
    d = direction / np.linalg.norm(direction)
    pvec = np.cross(d[None, :], E2)             # (F, 3)
    det = np.einsum("fi,fi->f", E1, pvec)       # (F,)
    near_parallel = np.abs(det) < 1e-12
    safe_det = np.where(near_parallel, 1.0, det)
    tvec = pts[:, None, :] - A[None, :, :]       # (P, F, 3)
    u = np.einsum("pfi,fi->pf", tvec, pvec) / safe_det[None, :]
    qvec = np.cross(tvec, E1[None, :, :])
    v = np.einsum("pfi,i->pf", qvec, d) / safe_det[None, :]
    t = np.einsum("pfi,fi->pf", qvec, E2) / safe_det[None, :]
    inside = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
    inside &= ~near_parallel[None, :]
    margin = 1e-9
    border = ((np.abs(u) < margin) | (np.abs(v) < margin)
              | (np.abs(u + v - 1.0) < margin) | (np.abs(t) < margin))
    border &= (u > -margin) & (v > -margin) & (u + v < 1.0 + margin) & (t > -margin)
    border |= near_parallel[None, :]
    suspect = np.any(border, axis=1)
    return (inside.sum(axis=1) % 2).astype(bool), suspect


def _contains_3d(mesh: SurfaceMesh, pts: np.ndarray, chunk: int = 2048) -> np.ndarray:
    V, S = mesh.vertices, mesh.simplices
    A = V[S[:, 0]]
    E1 = V[S[:, 1]] - A
    E2 = V[S[:, 2]] - A
    out = np.zeros(len(pts), dtype=bool)
    for lo in range(0, len(pts), chunk):
        block = pts[lo:lo + chunk]
        pending = np.arange(len(block))
        for direction in _RAY_DIRECTIONS:
            flags, suspect = _ray_hits_3d(A, E1, E2, block[pending], direction)
            sure = ~suspect
            out[lo + pending[sure]] = flags[sure]
            pending = pending[suspect]
            if len(pending) == 0:
                break
        else:
            raise ConfigError("ray parity test stayed borderline for a point; "
                              "geometry is adversarially degenerate")
    return out


def contains(mesh: SurfaceMesh, points) -> np.ndarray:
    """Parity test: True for points enclosed by the mesh."""
    mesh.check_closed()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != mesh.n:
        raise ConfigError("query points have the wrong ambient dimension")
    if mesh.n == 2:
        return _contains_2d(mesh, pts)
    return _contains_3d(mesh, pts)


# ---------------------------------------------------------------------------
# Monte Carlo clipped volumes


def _ball_samples(center, radius, count, n, seed):
    rng = np.random.Generator(np.random.Philox(key=seed))
    z = rng.normal(size=(count, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / n)
    return np.asarray(center, float) + z * r


def volume_change_constant(n: int, radius: float) -> float:
    """omega_n R^n + max{2^n omega_n, 2 n omega_n (R+1)^(n-1)}."""
    wn = ball_volume(n)
    return (wn * radius**n
            + max(2.0**n * wn, 2.0 * n * wn * (radius + 1.0) ** (n - 1)))


@dataclass(frozen=True)
class VolumeChangeReport:
    measured: float
    bound: float
    delta: float
    standard_error: float
    samples: int
    passed: bool


def clipped_volume_change(mesh_before: SurfaceMesh, mesh_after: SurfaceMesh,
                          center, radius: float, delta: float,
                          samples: int = MC_DEFAULT_SAMPLES,
                          seed: int = 0) -> VolumeChangeReport:
    """|vol(B cap after) - vol(B cap before)| against the linear-in-delta bound.

    delta is the recorded step perturbation max{sup|f - id|, sup|Jf - 1|};
    the same sample points probe both regions (paired estimator).
    """
    if delta >= 1.0:
        raise DeltaTooLarge(f"step perturbation {delta} must be below 1")
    if delta < 0.0:
        raise ConfigError("delta must be nonnegative")
    n = mesh_before.n
    pts = _ball_samples(center, radius, samples, n, seed)
    ball_vol = ball_volume(n, radius)
    diff = contains(mesh_after, pts).astype(float) - contains(mesh_before, pts)
    mean = float(np.mean(diff))
    se = float(np.std(diff) / math.sqrt(samples)) * ball_vol
    measured = abs(mean) * ball_vol
    bound = volume_change_constant(n, radius) * delta
    return VolumeChangeReport(measured, bound, delta, se, samples,
                              measured <= bound + 3.0 * se)


def volume_change_series(trace: FlowTrace, center, radius: float,
                         samples: int = MC_DEFAULT_SAMPLES,
                         seed: int = 0) -> list[VolumeChangeReport]:
    """One clipped-volume report per recorded step of a mesh-carrying trace."""
    if trace.mesh_simplices is None:
        raise ConfigError("trace carries no boundary mesh")
    reports = []
    for i in range(len(trace.snapshots) - 1):
        a, b = trace.snapshots[i], trace.snapshots[i + 1]
        if a.step_delta is None:
            raise ConfigError("trace lacks recorded step perturbations")
        before = SurfaceMesh(a.mesh_vertices, trace.mesh_simplices)
        after = SurfaceMesh(b.mesh_vertices, trace.mesh_simplices)
        reports.append(clipped_volume_change(before, after, center, radius,
                                             a.step_delta, samples, seed + i))
    return reports


# ---------------------------------------------------------------------------
# nontriviality


@dataclass(frozen=True)
class NontrivialityReport:
    horizon: float        # R^2 / (8 d)
    mass_floor: float     # isoperimetric floor from the quarter-ball volume
    constant: float       # isoperimetric constant used
    min_mass: float
    passed: bool


def nontriviality_certificate(trace: FlowTrace, center, radius: float,
                              constant: float | None = None
                              ) -> NontrivialityReport:
    """Mass stays above the isoperimetric floor up to the protected horizon.

    A ball interior to a bounded region of the initial partition survives
    (in volume) long enough that the enclosing boundary cannot have lost all
    its measure before R^2/(8 d); the floor is c_n (vol(B(a, R/2)) / 4)^((n-1)/n).
    """
    if trace.mesh_simplices is None:
        raise ConfigError("trace carries no boundary mesh")
    center = np.asarray(center, dtype=float)
    V0 = trace.snapshots[0].varifold
    n, d = V0.n, V0.d
    mesh0 = SurfaceMesh(trace.snapshots[0].mesh_vertices, trace.mesh_simplices)
    if not bool(contains(mesh0, center[None])[0]):
        raise BallNotInterior("ball center lies outside the initial region")
    clearance = min(
        point_segment_distance(center, mesh0.vertices[s[0]], mesh0.vertices[s[1]])
        if n == 2 else
        point_triangle_distance(center, mesh0.vertices[s[0]],
                                mesh0.vertices[s[1]], mesh0.vertices[s[2]])
        for s in mesh0.simplices)
    if clearance < radius:
        raise BallNotInterior(
            f"ball of radius {radius} pokes through the boundary "
            f"(clearance {clearance:.6g})")
    if constant is None:
        constant = isoperimetric_constant(n)
    horizon = radius**2 / (8.0 * d)
    floor = constant * (0.25 * ball_volume(n, radius / 2.0)) ** ((n - 1.0) / n)
    window = [s for s in trace.snapshots if s.time <= horizon + 1e-12]
    if not window:
        raise ConfigError("trace has no snapshots inside the protected window")
    min_mass = min(s.mass for s in window)
    return NontrivialityReport(horizon, floor, constant, min_mass,
                               min_mass >= floor)


# ---------------------------------------------------------------------------
# mesh file formats


def load_mesh_off(path) -> SurfaceMesh:
    lines = [ln.split("#")[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != "OFF":
        raise ConfigError(f"{path}: missing OFF header")
    nv, nf, _ = (int(x) for x in lines[1].split()[:3])
    verts = np.array([[float(x) for x in lines[2 + i].split()[:3]]
                      for i in range(nv)])
    faces = []
    for i in range(nf):
        parts = lines[2 + nv + i].split()
        if int(parts[0]) != 3:
            raise ConfigError(f"{path}: only triangular faces are supported")
        faces.append([int(x) for x in parts[1:4]])
    return SurfaceMesh(verts, np.array(faces, dtype=np.int64))


def load_mesh_obj(path) -> SurfaceMesh:
    verts, faces = [], []
    for ln in Path(path).read_text().splitlines():
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            if len(idx) != 3:
                raise ConfigError(f"{path}: only triangular faces are supported")
            faces.append(idx)
    if not verts or not faces:
        raise ConfigError(f"{path}: no usable vertex/face data")
    return SurfaceMesh(np.array(verts), np.array(faces, dtype=np.int64))


def load_loops_csv(path) -> SurfaceMesh:
    """Planar loops: columns x1, x2 and an optional trailing loop_id."""
    import csv as _csv
    with Path(path).open(newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        has_id = header[-1] == "loop_id"
        want = 3 if has_id else 2
        pts, ids = [], []
        for row in reader:
            if not row:
                continue
            if len(row) != want:
                raise ConfigError(f"{path}: row of width {len(row)}, want {want}")
            pts.append([float(row[0]), float(row[1])])
            ids.append(row[2] if has_id else "0")
    pts = np.array(pts)
    loops = []
    for lid in dict.fromkeys(ids):
        loops.append(loop_mesh(pts[np.array([i == lid for i in ids])]))
    return merge_meshes(*loops)
