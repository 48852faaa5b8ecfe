"""Cell geometry, hole shapes and triangulation.

The physical domain is the rectangle (-1/2, 1/2) x (0, H) perforated by a
vertical column of N = 1/epsilon small holes: hole k is the reference
shape omega scaled by epsilon and shifted to (0, epsilon*H*(k + 1/2)).
The companion unbounded problem lives on the strip R x (0, H) punctured
by the single reference hole, truncated here to (-L, L).

Both meshes are conforming P1 triangulations built the same way: a
graded, smoothed Delaunay core around the hole column glued to exactly
structured tails that reach the lateral walls. The structured tails give
the two properties the solvers rely on:

* the lateral boundary grids of the cell mesh are identical on both
  sides, so quasi-periodic master/slave pairs match exactly;
* extending a strip mesh in L reuses the identical near-field
  triangulation, so truncation studies are not polluted by remeshing.

Strip meshes are additionally built as a half domain mirrored across
xi1 = 0 whenever the hole has that symmetry; the triangulation is then
exactly symmetric and discrete solutions inherit exact parity.

Holes are polygonalized once (default segment count from the reference
perimeter) and the same polygon is used for meshing, for every scaled
instance, and for derived constants such as the hole area, so the
computational geometry is consistent across modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import Delaunay, cKDTree

#: quality gate for every generated mesh, degrees
MIN_ANGLE_DEG = 20.0

#: matched boundary pairs must agree to this absolute tolerance
PAIR_TOL = 1e-12

#: mesh area must match the polygonal domain area this well (relative)
AREA_RTOL = 1e-6

#: grading slope of the element size away from hole boundaries
_GRADE = 0.35

#: cloud points closer than this multiple of the local size are merged
_SEP_FACTOR = 0.58

_SMOOTH_ITERS = 14


class MeshQualityError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# hole shapes


@dataclass(frozen=True)
class HoleShape:
    """Reference perforation shape in strip coordinates xi.

    kind is one of 'disk', 'ellipse', 'polygon'. For disk/ellipse the
    shape is centered at `center` with semi-axes rx, ry (rx == ry for a
    disk). For polygons `vertices` holds a CCW simple polygon and the
    other fields are derived. Use the factory classmethods.
    """

    kind: str
    center: tuple[float, float] = (0.0, 0.0)
    rx: float = 0.0
    ry: float = 0.0
    vertices: Optional[tuple[tuple[float, float], ...]] = None

    @classmethod
    def disk(cls, center, r) -> "HoleShape":
        if r <= 0:
            raise ValueError("disk radius must be positive")
        return cls("disk", (float(center[0]), float(center[1])), float(r), float(r))

    @classmethod
    def ellipse(cls, center, rx, ry) -> "HoleShape":
        if rx <= 0 or ry <= 0:
            raise ValueError("ellipse semi-axes must be positive")
        return cls("ellipse", (float(center[0]), float(center[1])), float(rx), float(ry))

    @classmethod
    def polygon(cls, vertices) -> "HoleShape":
        pts = np.asarray(vertices, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
            raise ValueError("polygon needs at least 3 (x, y) vertices")
        if _shoelace(pts) < 0:
            pts = pts[::-1]
        cx, cy = pts.mean(axis=0)
        return cls("polygon", (float(cx), float(cy)),
                   vertices=tuple((float(x), float(y)) for x, y in pts))

    # -- geometric queries ---------------------------------------------------

    def bbox(self) -> tuple[float, float, float, float]:
        if self.kind == "polygon":
            v = np.asarray(self.vertices)
            return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()
        cx, cy = self.center
        return cx - self.rx, cx + self.rx, cy - self.ry, cy + self.ry

    def max_abs_xi1(self) -> float:
        x0, x1, _, _ = self.bbox()
        return max(abs(x0), abs(x1))

    def perimeter(self) -> float:
        if self.kind == "disk":
            return 2.0 * math.pi * self.rx
        if self.kind == "ellipse":
            a, b = self.rx, self.ry
            # Ramanujan approximation, plenty for choosing segment counts
            h = (a - b) ** 2 / (a + b) ** 2
            return math.pi * (a + b) * (1 + 3 * h / (10 + math.sqrt(4 - 3 * h)))
        v = np.asarray(self.vertices)
        return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())

    def is_mirror_symmetric(self, H: float, tol: float = 1e-12) -> bool:
        """Symmetry under xi2 -> H - xi2 (the horizontal midline)."""
        if self.kind in ("disk", "ellipse"):
            return abs(self.center[1] - H / 2.0) <= tol
        return _point_set_symmetric(np.asarray(self.vertices), axis=1, c=H / 2.0, tol=tol)

    def is_x_symmetric(self, tol: float = 1e-12) -> bool:
        """Symmetry under xi1 -> -xi1 (the vertical hole axis)."""
        if self.kind in ("disk", "ellipse"):
            return abs(self.center[0]) <= tol
        return _point_set_symmetric(np.asarray(self.vertices), axis=0, c=0.0, tol=tol)


def _shoelace(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _point_set_symmetric(pts: np.ndarray, axis: int, c: float, tol: float) -> bool:
    refl = pts.copy()
    refl[:, axis] = 2.0 * c - refl[:, axis]
    tree = cKDTree(pts)
    d, _ = tree.query(refl)
    return bool(np.all(d <= tol))


def default_ring_segments(hole: HoleShape, h: float) -> int:
    """Segment count resolving the reference hole at the target size h.

    At least 16, rounded up to an even count so the ring has exact
    antipodal structure for mirrored constructions.
    """
    n = max(16, int(math.ceil(hole.perimeter() / h)))
    return n + (n % 2)


def polygonalize(hole: HoleShape, n_b: int) -> np.ndarray:
    """CCW boundary polygon with n_b vertices (n_b even for disk/ellipse).

    Disk and ellipse rings start at the lowest point (angle -pi/2) so the
    two vertices on the vertical axis are present and their xi1
    coordinate is snapped to the exact center abscissa; mirrored meshing
    and downstream symmetry checks rely on that.
    """
    if hole.kind in ("disk", "ellipse"):
        if n_b % 2:
            raise ValueError("disk/ellipse rings need an even vertex count")
        i = np.arange(n_b)
        th = -0.5 * math.pi + 2.0 * math.pi * i / n_b
        x = hole.center[0] + hole.rx * np.cos(th)
        y = hole.center[1] + hole.ry * np.sin(th)
        snap = np.abs(x - hole.center[0]) < 1e-14 * max(1.0, hole.rx)
        x[snap] = hole.center[0]
        snap = np.abs(y - hole.center[1]) < 1e-14 * max(1.0, hole.ry)
        y[snap] = hole.center[1]
        return np.column_stack([x, y])
    # polygon: subdivide edges uniformly until the total count reaches n_b
    v = np.asarray(hole.vertices, dtype=float)
    per_edge = max(1, int(math.ceil(n_b / len(v))))
    out = []
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        for t in np.arange(per_edge) / per_edge:
            out.append(a + t * (b - a))
    return np.asarray(out)


def polygon_contains(poly: np.ndarray, pts: np.ndarray, pad: float = 0.0) -> np.ndarray:
    from matplotlib.path import Path

    return Path(poly).contains_points(np.atleast_2d(pts), radius=2.0 * pad)


def polygon_distance(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Unsigned distance from each point to the polygon boundary."""
    pts = np.atleast_2d(pts)
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    denom[denom == 0.0] = 1.0
    # (m, n) broadcast of projections onto every segment
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.linalg.norm(pts[:, None, :] - closest, axis=2)
    return d.min(axis=1)


@dataclass(frozen=True)
class HoleReport:
    ok: bool
    mirror_symmetric: bool
    x_symmetric: bool
    R: float
    messages: tuple[str, ...] = ()


#: safety factor turning the tight half-width max|xi1| into R with margin
_R_MARGIN = 0.05


def validate_hole(hole: HoleShape, H: float) -> HoleReport:
    """Check containment in (-1/2, 1/2) x (0, H) and report symmetries.

    R is the half-width (with a 5% margin) of the smallest vertical slab
    |xi1| < R containing the closed hole; it parametrizes cutoffs and the
    zero-mean window of the strip problem.
    """
    msgs = []
    x0, x1, y0, y1 = hole.bbox()
    ok = True
    if not (-0.5 < x0 and x1 < 0.5):
        ok = False
        msgs.append(f"hole spans [{x0:.4g}, {x1:.4g}] in xi1, must stay inside (-1/2, 1/2)")
    if not (0.0 < y0 and y1 < H):
        ok = False
        msgs.append(f"hole spans [{y0:.4g}, {y1:.4g}] in xi2, must stay inside (0, {H:g})")
    R = (1.0 + _R_MARGIN) * hole.max_abs_xi1()
    if ok and 2.0 * R >= 0.5:
        msgs.append("hole is wide: cutoff transition |xi1| in [R, 2R] leaves little room")
    return HoleReport(
        ok=ok,
        mirror_symmetric=hole.is_mirror_symmetric(H),
        x_symmetric=hole.is_x_symmetric(),
        R=R,
        messages=tuple(msgs),
    )


def canonical_hole(H: float) -> HoleShape:
    """Centered disk with radius min(0.2, 0.25*H).

    The cap keeps the reference radius 0.2 whenever the cell is tall
    enough; shorter cells scale the radius down so the hole keeps a
    clearance of at least one radius to the horizontal walls.
    """
    r = min(0.2, 0.25 * H)
    return HoleShape.disk((0.0, H / 2.0), r)


@dataclass(frozen=True)
class PerforatedCell:
    """Periodicity cell (-1/2, 1/2) x (0, H) with N holes, or none.

    hole is the reference shape in strip coordinates; instance k occupies
    epsilon*hole shifted by (0, epsilon*H*k), so the column has vertical
    period epsilon*H and the first hole is centered at height
    epsilon*H/2 for a midline-centered reference shape.
    """

    H: float
    N: int
    hole: Optional[HoleShape] = None

    def __post_init__(self):
        if self.H <= 0:
            raise ValueError("cell height must be positive")
        if self.N < 1:
            raise ValueError("hole count N must be >= 1")
        if self.hole is not None:
            rep = validate_hole(self.hole, self.H)
            if not rep.ok:
                raise ValueError("; ".join(rep.messages))

    @property
    def epsilon(self) -> float:
        return 1.0 / self.N

    def instance_shift(self, k: int) -> tuple[float, float]:
        return (0.0, self.epsilon * self.H * k)


def canonical_cell(H: float, N: int) -> PerforatedCell:
    return PerforatedCell(H=H, N=N, hole=canonical_hole(H))


# ---------------------------------------------------------------------------
# mesh container


@dataclass
class Mesh:
    """Conforming triangulation with tagged boundary and matched pairs.

    vertices: (n, 2) float array. triangles: (m, 3) int array, CCW.
    edge_tags maps 'left'/'right'/'bottom'/'top'/'hole' to (k, 2) vertex
    index pairs lying on that part of the boundary; edge_owner gives the
    adjacent triangle of each such edge (same keys, same order).
    pairing is a (p, 2) [master, slave] vertex index array matching the
    two periodic sides (left/right for cells, bottom/top for strips), or
    None. h is the target element size the mesh was built for.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edge_tags: dict[str, np.ndarray]
    edge_owner: dict[str, np.ndarray]
    pairing: Optional[np.ndarray]
    h: float

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices
        a, b, c = (p[self.triangles[:, i]] for i in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def min_angle_deg(self) -> float:
        p = self.vertices[self.triangles]  # (m, 3, 2)
        ang = np.empty((len(self.triangles), 3))
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cosang = (u * v).sum(axis=1) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
            )
            ang[:, i] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return float(ang.min())


# ---------------------------------------------------------------------------
# low-level construction helpers


def _graded_line(a: float, b: float, size: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """1D grid on [a, b] with local spacing following size(x).

    Spacing is realized by integrating the density 1/size and splitting
    the total mass into equal chunks; endpoints are exact.
    """
    if b <= a:
        raise ValueError("empty interval")
    probe = np.linspace(a, b, 801)
    dens = 1.0 / np.maximum(size(probe), 1e-12)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(probe))])
    n = max(1, int(math.ceil(cum[-1])))
    targets = np.linspace(0.0, cum[-1], n + 1)
    x = np.interp(targets, cum, probe)
    x[0], x[-1] = a, b
    return x


def _uniform_line(a: float, b: float, h: float) -> np.ndarray:
    n = max(1, int(round((b - a) / h)))
    return np.linspace(a, b, n + 1)


def _hex_cloud(bbox, base_h: float, size: Callable[[np.ndarray], np.ndarray],
               s_min: float) -> np.ndarray:
    """Graded interior point cloud from stacked hexagonal lattices.

    Level l has spacing base_h / 2**l; a lattice point survives if the
    local size field falls in that level's band. The union is cleaned up
    by a separation filter later.
    """
    x0, x1, y0, y1 = bbox
    lmax = max(0, int(math.ceil(math.log2(base_h / max(s_min, 1e-12)))))
    chunks = []
    for l in range(lmax + 1):
        hl = base_h / 2**l
        dy = hl * math.sqrt(3.0) / 2.0
        ys = np.arange(y0 + 0.5 * dy, y1 - 0.25 * dy, dy)
        if len(ys) == 0:
            continue
        for row, y in enumerate(ys):
            off = 0.5 * hl if row % 2 else 0.0
            xs = np.arange(x0 + 0.5 * hl + off, x1 - 0.25 * hl, hl)
            if len(xs) == 0:
                continue
            pts = np.column_stack([xs, np.full_like(xs, y)])
            s = size(pts)
            lev = np.clip(np.ceil(np.log2(base_h / np.maximum(s, 1e-12))), 0, lmax)
            keep = lev.astype(int) == l
            if keep.any():
                chunks.append(pts[keep])
    if not chunks:
        return np.empty((0, 2))
    return np.vstack(chunks)


def _separation_filter(fixed: np.ndarray, cloud: np.ndarray,
                       size: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Drop cloud points too close to fixed points or to earlier cloud points."""
    if len(cloud) == 0:
        return cloud
    allpts = np.vstack([fixed, cloud])
    s = size(allpts)
    rmax = _SEP_FACTOR * s.max()
    tree = cKDTree(allpts)
    pairs = tree.query_pairs(rmax, output_type="ndarray")
    if len(pairs) == 0:
        return cloud
    d = np.linalg.norm(allpts[pairs[:, 0]] - allpts[pairs[:, 1]], axis=1)
    lim = _SEP_FACTOR * np.minimum(s[pairs[:, 0]], s[pairs[:, 1]])
    bad_pairs = pairs[d < lim]
    nfix = len(fixed)
    dead = np.zeros(len(allpts), dtype=bool)
    # deterministic greedy: lower index wins, fixed points never lose
    order = np.lexsort((bad_pairs[:, 1], bad_pairs[:, 0]))
    for i, j in bad_pairs[order]:
        lo, hi = (i, j) if i < j else (j, i)
        if hi < nfix:
            continue
        if not dead[lo]:
            dead[hi] = True
    return cloud[~dead[nfix:]]


def _delaunay_triangles(points: np.ndarray) -> np.ndarray:
    tri = Delaunay(points).simplices.astype(np.int64)
    p = points
    det = ((p[tri[:, 1], 0] - p[tri[:, 0], 0]) * (p[tri[:, 2], 1] - p[tri[:, 0], 1])
           - (p[tri[:, 1], 1] - p[tri[:, 0], 1]) * (p[tri[:, 2], 0] - p[tri[:, 0], 0]))
    flip = det < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    # drop exactly degenerate slivers qhull may emit on collinear boundary runs
    keep = np.abs(det) > 1e-14 * max(1.0, np.abs(det).max())
    return tri[keep]


def _smooth_cloud(fixed: np.ndarray, cloud: np.ndarray,
                  keep_fn: Callable[[np.ndarray], np.ndarray],
                  iters: int = _SMOOTH_ITERS) -> np.ndarray:
    """Laplacian smoothing of the free cloud against fixed boundary points."""
    if len(cloud) == 0:
        return cloud
    nfix = len(fixed)
    pts = np.vstack([fixed, cloud])
    for _ in range(iters):
        tri = _delaunay_triangles(pts)
        e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        acc = np.zeros_like(pts)
        cnt = np.zeros(len(pts))
        np.add.at(acc, e[:, 0], pts[e[:, 1]])
        np.add.at(acc, e[:, 1], pts[e[:, 0]])
        np.add.at(cnt, e[:, 0], 1.0)
        np.add.at(cnt, e[:, 1], 1.0)
        mean = acc / np.maximum(cnt, 1.0)[:, None]
        pts[nfix:] = 0.5 * pts[nfix:] + 0.5 * mean[nfix:]
    out = pts[nfix:]
    return out[keep_fn(out)]


def _tri_min_angles(pts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = pts[tris]
    ang = np.full((len(tris), 3), 180.0)
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        nu = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
        c = (u * v).sum(axis=1) / np.maximum(nu, 1e-300)
        ang[:, i] = np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))
    return ang.min(axis=1)


def _mesh_region(fixed: np.ndarray, cloud: np.ndarray,
                 keep_fn: Callable[[np.ndarray], np.ndarray],
                 prune_fn: Callable[[np.ndarray], np.ndarray]):
    """Smooth, triangulate and repair one unstructured region.

    Repair rounds remove free vertices of substandard triangles (or seed
    centroids when a bad triangle touches only fixed vertices) until the
    min-angle gate holds with a small margin.
    """
    cloud = _smooth_cloud(fixed, cloud, keep_fn)
    nfix = len(fixed)
    for _ in range(8):
        pts = np.vstack([fixed, cloud]) if len(cloud) else fixed
        tris = _delaunay_triangles(pts)
        cent = pts[tris].mean(axis=1)
        tris = tris[~prune_fn(cent)]
        bad = tris[_tri_min_angles(pts, tris) < MIN_ANGLE_DEG + 0.25]
        if len(bad) == 0:
            return pts, tris
        free_bad = np.unique(bad[bad >= nfix]) - nfix
        if len(free_bad):
            cloud = np.delete(cloud, free_bad, axis=0)
        else:
            seeds = pts[bad].mean(axis=1)
            seeds = seeds[keep_fn(seeds)]
            if len(seeds) == 0:
                break
            cloud = np.vstack([cloud, seeds]) if len(cloud) else seeds
        cloud = _smooth_cloud(fixed, cloud, keep_fn, iters=3)
    raise MeshQualityError("triangle quality repair did not converge")


def _boundary_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Edges with exactly one adjacent triangle, with their owner triangle.

    Returned edges are oriented as they appear in the owner (CCW), so the
    domain lies to their left and the outward normal is the right-hand
    one.
    """
    m = len(triangles)
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    owner = np.tile(np.arange(m), 3)
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    single = counts[inv] == 1
    return e[single], owner[single]


def _classify_edges(vertices, edges, owners, xlo, xhi, H):
    tol = 1e-12
    mids = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    tags = {k: [] for k in ("left", "right", "bottom", "top", "hole")}
    own = {k: [] for k in tags}
    for (a, b), o, (mx, my) in zip(edges, owners, mids):
        if abs(mx - xlo) <= tol:
            t = "left"
        elif abs(mx - xhi) <= tol:
            t = "right"
        elif abs(my) <= tol:
            t = "bottom"
        elif abs(my - H) <= tol:
            t = "top"
        else:
            t = "hole"
        tags[t].append((a, b))
        own[t].append(o)
    edge_tags = {k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in tags.items()}
    edge_owner = {k: np.asarray(v, dtype=np.int64) for k, v in own.items()}
    return edge_tags, edge_owner


class _VertexPool:
    """Merge mesh pieces that share exactly equal boundary coordinates."""

    def __init__(self):
        self.coords: list[tuple[float, float]] = []
        self.index: dict[tuple[float, float], int] = {}

    def add(self, pts: np.ndarray) -> np.ndarray:
        out = np.empty(len(pts), dtype=np.int64)
        for i, (x, y) in enumerate(np.asarray(pts, dtype=float)):
            key = (float(x), float(y))
            j = self.index.get(key)
            if j is None:
                j = len(self.coords)
                self.coords.append(key)
                self.index[key] = j
            out[i] = j
        return out

    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


def _structured_block(xgrid: np.ndarray, ygrid: np.ndarray):
    """Quad grid split into triangles with alternating diagonals."""
    nx, ny = len(xgrid) - 1, len(ygrid) - 1
    xs, ys = np.meshgrid(xgrid, ygrid, indexing="ij")
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    idx = np.arange(len(pts)).reshape(nx + 1, ny + 1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = idx[i, j], idx[i + 1, j]
            v01, v11 = idx[i, j + 1], idx[i + 1, j + 1]
            if (i + j) % 2 == 0:
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
            else:
                tris.append((v00, v10, v01))
                tris.append((v10, v11, v01))
    return pts, np.asarray(tris, dtype=np.int64)


def _tail_grid(a: float, b: float, h: float) -> np.ndarray:
    """Steps of exactly h from a, the final cell absorbing the remainder.

    Extending b keeps every earlier grid point identical, which is what
    makes strip meshes nest when L is doubled.
    """
    n = int(math.floor((b - a) / h + 1e-9))
    if a + n * h > b - 0.5 * h:
        n = max(1, n - 1)
    xs = a + h * np.arange(n + 1)
    return np.append(xs, b) if b - xs[-1] > 1e-12 else xs


# ---------------------------------------------------------------------------
# perforated cell mesh


def build_perforated_mesh(cell: PerforatedCell, h: float,
                          n_b: Optional[int] = None) -> Mesh:
    """Triangulate the perforated periodicity cell at target size h.

    The hole column sits in an unstructured graded core slab; the rest of
    the rectangle is a structured grid. Element size shrinks near hole
    boundaries to min(h, epsilon/8) and further if the hole clearances
    require it. Lateral walls carry identical uniform grids and the
    returned pairing matches left vertices to right vertices.
    """
    H = cell.H
    ygrid = _uniform_line(0.0, H, h)

    if cell.hole is None:
        xgrid = _uniform_line(-0.5, 0.5, h)
        pts, tris = _structured_block(xgrid, ygrid)
        return _finalize(pts, tris, -0.5, 0.5, H, h, pair="lr",
                         hole_polys=[], exact_area=1.0 * H)

    eps = cell.epsilon
    hole = cell.hole
    rep = validate_hole(hole, H)
    if n_b is None:
        n_b = default_ring_segments(hole, h)
    ring_ref = polygonalize(hole, n_b)
    ring_area_ref = _shoelace(ring_ref)

    x0, x1, y0, y1 = hole.bbox()
    gap_wall = eps * min(y0, H - y1)
    gap_pair = eps * (H - (y1 - y0)) if cell.N > 1 else math.inf
    ring_spacing = eps * hole.perimeter() / n_b
    s_near = min(h, eps / 8.0, 0.75 * gap_wall, 0.75 * gap_pair, 1.3 * ring_spacing)
    s_near = max(s_near, 0.25 * ring_spacing)

    # core slab wide enough that the size field relaxes back to h inside it
    maxx = eps * hole.max_abs_xi1()
    A = max(2.2 * eps * rep.R, maxx + (h - s_near) / _GRADE + 2.0 * h)
    A = min(A, 0.35)

    rings = [eps * ring_ref + np.array(cell.instance_shift(k)) for k in range(cell.N)]
    period = eps * H

    def hole_distance(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d = np.full(len(pts), np.inf)
        kk = np.clip(np.round(pts[:, 1] / period - 0.5).astype(int), 0, cell.N - 1)
        for dk in (-1, 0, 1):
            k = np.clip(kk + dk, 0, cell.N - 1)
            shifted = pts - np.column_stack([np.zeros(len(pts)), k * period])
            d = np.minimum(d, polygon_distance(eps * ring_ref, shifted))
        return d

    def in_any_hole(pts: np.ndarray, pad: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(pts)
        inside = np.zeros(len(pts), dtype=bool)
        for ring in rings:
            lo = ring.min(axis=0) - pad
            hi = ring.max(axis=0) + pad
            cand = np.all((pts >= lo) & (pts <= hi), axis=1)
            if cand.any():
                inside[cand] |= polygon_contains(ring, pts[cand], pad=pad)
        return inside

    def size(pts: np.ndarray) -> np.ndarray:
        return np.minimum(h, s_near + _GRADE * hole_distance(pts))

    core = _unstructured_core(
        xlo=-A, xhi=A, H=H, h=h, size=size, s_near=s_near,
        rings=rings, in_any_hole=in_any_hole,
        side_grids=(ygrid, ygrid),
        wall_size=lambda xs, y: np.minimum(
            h, s_near + _GRADE * hole_distance(np.column_stack([xs, np.full_like(xs, y)]))),
    )

    pool = _VertexPool()
    core_idx = pool.add(core[0])
    tris = [core_idx[core[1]]]
    for (xa, xb) in ((A, 0.5), (-0.5, -A)):
        xg = _tail_grid(xa, xb, h) if xa == A else (-_tail_grid(-xb, -xa, h))[::-1]
        bp, bt = _structured_block(xg, ygrid)
        bidx = pool.add(bp)
        tris.append(bidx[bt])
    verts = pool.array()
    tris = np.vstack(tris)

    exact_area = 1.0 * H - cell.N * eps**2 * ring_area_ref
    return _finalize(verts, tris, -0.5, 0.5, H, h, pair="lr",
                     hole_polys=rings, exact_area=exact_area,
                     in_any_hole=in_any_hole)


def _unstructured_core(xlo, xhi, H, h, size, s_near, rings, in_any_hole,
                       side_grids, wall_size, shared_walls=False):
    """Graded Delaunay triangulation of the slab [xlo, xhi] x [0, H] minus holes.

    side_grids are the exact vertical grids to use at x = xlo and x = xhi
    (they must match any structured neighbors). shared_walls forces one
    common grid on bottom and top (periodic strips pair those vertices,
    so their abscissae must agree exactly). Returns (points, triangles)
    with local indices.
    """
    if shared_walls:
        bottom = _graded_line(
            xlo, xhi, lambda xs: np.minimum(wall_size(xs, 0.0), wall_size(xs, H)))
        top = bottom
    else:
        bottom = _graded_line(xlo, xhi, lambda xs: wall_size(xs, 0.0))
        top = _graded_line(xlo, xhi, lambda xs: wall_size(xs, H))
    fixed_chunks = [
        np.column_stack([bottom, np.zeros_like(bottom)]),
        np.column_stack([top, np.full_like(top, H)]),
        np.column_stack([np.full(len(side_grids[0]) - 2, xlo), side_grids[0][1:-1]]),
        np.column_stack([np.full(len(side_grids[1]) - 2, xhi), side_grids[1][1:-1]]),
    ]
    fixed_chunks.extend(rings)
    fixed = np.vstack(fixed_chunks)
    # remove exact duplicates (the four corners appear twice)
    _, uniq = np.unique(np.round(fixed / 1e-13).astype(np.int64), axis=0, return_index=True)
    fixed = fixed[np.sort(uniq)]

    cloud = _hex_cloud((xlo, xhi, 0.0, H), h, size, s_near)
    s_cloud = size(cloud)
    # clearance from hole boundaries and outer walls
    dist = np.minimum.reduce([
        polygon_distance(r, cloud) for r in rings
    ]) if rings else np.full(len(cloud), np.inf)
    keep = (~in_any_hole(cloud, pad=0.0)) & (dist > 0.7 * s_cloud)
    keep &= (cloud[:, 0] - xlo > 0.45 * s_cloud) & (xhi - cloud[:, 0] > 0.45 * s_cloud)
    keep &= (cloud[:, 1] > 0.45 * s_cloud) & (H - cloud[:, 1] > 0.45 * s_cloud)
    cloud = cloud[keep]
    cloud = _separation_filter(fixed, cloud, size)

    def keep_fn(pts):
        inside = (pts[:, 0] > xlo) & (pts[:, 0] < xhi) & (pts[:, 1] > 0) & (pts[:, 1] < H)
        return inside & ~in_any_hole(pts, pad=0.0)

    return _mesh_region(fixed, cloud, keep_fn, in_any_hole)


def _finalize(verts, tris, xlo, xhi, H, h, pair, hole_polys, exact_area,
              in_any_hole=None) -> Mesh:
    mesh_area = _areas_total(verts, tris)
    if abs(mesh_area - exact_area) > AREA_RTOL * max(1.0, abs(exact_area)):
        raise MeshQualityError(
            f"mesh area {mesh_area!r} differs from exact {exact_area!r}")
    edges, owners = _boundary_edges(tris)
    edge_tags, edge_owner = _classify_edges(verts, edges, owners, xlo, xhi, H)
    for ring in hole_polys:
        _check_ring_conformity(verts, edge_tags["hole"], ring)

    if pair == "lr":
        masters = np.unique(edge_tags["left"]) if len(edge_tags["left"]) else np.array([], int)
        slaves = np.unique(edge_tags["right"]) if len(edge_tags["right"]) else np.array([], int)
        key = 1
    else:
        masters = np.unique(edge_tags["bottom"])
        slaves = np.unique(edge_tags["top"])
        key = 0
    masters = masters[np.argsort(verts[masters, key], kind="stable")]
    slaves = slaves[np.argsort(verts[slaves, key], kind="stable")]
    if len(masters) != len(slaves):
        raise MeshQualityError("periodic sides carry different vertex counts")
    if np.any(np.abs(verts[masters, key] - verts[slaves, key]) > PAIR_TOL):
        raise MeshQualityError("periodic sides are not matched within tolerance")
    pairing = np.column_stack([masters, slaves])

    mesh = Mesh(vertices=verts, triangles=tris, edge_tags=edge_tags,
                edge_owner=edge_owner, pairing=pairing, h=h)
    mang = mesh.min_angle_deg()
    if mang < MIN_ANGLE_DEG:
        raise MeshQualityError(f"minimum angle {mang:.2f} deg below {MIN_ANGLE_DEG}")
    return mesh


def _areas_total(verts, tris):
    a, b, c = (verts[tris[:, i]] for i in range(3))
    return float((0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                         - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))).sum())


def _check_ring_conformity(verts, hole_edges, ring):
    """Every consecutive ring segment must appear as a boundary edge."""
    if len(hole_edges) == 0:
        raise MeshQualityError("hole ring missing from boundary")
    tree = cKDTree(verts)
    d, idx = tree.query(ring)
    if np.any(d > 1e-12):
        raise MeshQualityError("ring vertices not present in mesh")
    have = {tuple(sorted(e)) for e in hole_edges.tolist()}
    for a, b in zip(idx, np.roll(idx, -1)):
        if tuple(sorted((int(a), int(b)))) not in have:
            raise MeshQualityError("hole ring edge lost during triangulation")


# ---------------------------------------------------------------------------
# strip mesh


def build_strip_mesh(hole: Optional[HoleShape], H: float, h: float,
                     L: Optional[float] = None, n_b: Optional[int] = None) -> Mesh:
    """Triangulate the truncated strip (-L, L) x (0, H) minus the hole.

    Default L = max(6R, 2H). For holes symmetric in xi1 the core is meshed
    on the right half and mirrored, so the triangulation (and therefore
    any discrete solution with odd or even data) is exactly symmetric.
    Bottom and top carry identical grids; pairing matches bottom to top
    for the periodic reduction in xi2.
    """
    if hole is None:
        if L is None:
            L = 2.0 * H
        xgrid = np.concatenate([-_tail_grid(0.0, L, h)[::-1], _tail_grid(0.0, L, h)[1:]])
        pts, tris = _structured_block(xgrid, _uniform_line(0.0, H, h))
        return _finalize(pts, tris, -L, L, H, h, pair="bt",
                         hole_polys=[], exact_area=2.0 * L * H)

    rep = validate_hole(hole, H)
    if not rep.ok:
        raise ValueError("; ".join(rep.messages))
    if L is None:
        L = max(6.0 * rep.R, 2.0 * H)
    if n_b is None:
        n_b = default_ring_segments(hole, h)
    ring = polygonalize(hole, n_b)
    ring_area = _shoelace(ring)
    ring_spacing = hole.perimeter() / n_b

    x0, x1, y0, y1 = hole.bbox()
    gap_wall = min(y0, H - y1)
    s_near = min(h, 0.75 * gap_wall, 1.3 * ring_spacing)
    s_near = max(s_near, 0.25 * ring_spacing)
    maxx = hole.max_abs_xi1()
    A = max(1.3 * rep.R, maxx + (h - s_near) / _GRADE + 2.0 * h, maxx + 0.2 * H)
    if A >= L - 2.0 * h:
        raise ValueError(f"truncation L={L:g} too small for the hole core {A:g}")

    def size(pts: np.ndarray) -> np.ndarray:
        return np.minimum(h, s_near + _GRADE * polygon_distance(ring, np.atleast_2d(pts)))

    def inside(pts: np.ndarray, pad: float = 0.0) -> np.ndarray:
        return polygon_contains(ring, pts, pad=pad)

    ygrid = _uniform_line(0.0, H, h)

    if rep.x_symmetric:
        pts, tris = _half_core_mirrored(ring, H, h, A, size, inside, ygrid)
    else:
        pts, tris = _unstructured_core(
            xlo=-A, xhi=A, H=H, h=h, size=size, s_near=s_near,
            rings=[ring], in_any_hole=inside, side_grids=(ygrid, ygrid),
            wall_size=lambda xs, y: np.minimum(
                h, s_near + _GRADE * polygon_distance(
                    ring, np.column_stack([xs, np.full_like(xs, y)]))),
            shared_walls=True,
        )

    pool = _VertexPool()
    idx = pool.add(pts)
    all_tris = [idx[tris]]
    xg = _tail_grid(A, L, h)
    bp, bt = _structured_block(xg, ygrid)
    bidx = pool.add(bp)
    all_tris.append(bidx[bt])
    bp_l = bp.copy()
    bp_l[:, 0] = -bp_l[:, 0]
    lidx = pool.add(bp_l)
    all_tris.append(lidx[bt][:, [0, 2, 1]])  # mirroring flips orientation
    verts = pool.array()
    tris = np.vstack(all_tris)

    exact_area = 2.0 * L * H - ring_area
    return _finalize(verts, tris, -L, L, H, h, pair="bt",
                     hole_polys=[ring], exact_area=exact_area)


def _half_core_mirrored(ring, H, h, A, size, inside, ygrid):
    """Mesh [0, A] x (0, H) minus the right half hole, then mirror."""
    on_axis = np.abs(ring[:, 0]) == 0.0
    if on_axis.sum() != 2:
        raise MeshQualityError("x-symmetric ring must carry exactly two axis vertices")
    ylo_ax, yhi_ax = np.sort(ring[on_axis, 1])
    right = ring[:, 0] >= 0.0
    # walk the ring CCW starting at the lower axis vertex to collect the right side
    start = int(np.where(on_axis & (ring[:, 1] == ylo_ax))[0][0])
    order = np.roll(np.arange(len(ring)), -start)
    half_ring = []
    for i in order:
        if ring[i, 0] >= 0.0:
            half_ring.append(ring[i])
        if ring[i, 1] == yhi_ax and ring[i, 0] == 0.0:
            break
    half_ring = np.asarray(half_ring)

    def axis_size(ys, x=0.0):
        return np.minimum(size(np.column_stack([np.full_like(ys, x), ys])).ravel(), h)

    seg_lo = _graded_line(0.0, ylo_ax, lambda ys: axis_size(ys))
    seg_hi = _graded_line(yhi_ax, H, lambda ys: axis_size(ys))
    # one shared wall grid: bottom and top vertices pair up periodically
    bottom = _graded_line(0.0, A, lambda xs: np.minimum(
        size(np.column_stack([xs, np.zeros_like(xs)])).ravel(),
        size(np.column_stack([xs, np.full_like(xs, H)])).ravel()))
    top = bottom

    fixed = np.vstack([
        np.column_stack([bottom, np.zeros_like(bottom)]),
        np.column_stack([top, np.full_like(top, H)]),
        np.column_stack([np.zeros(len(seg_lo) - 2), seg_lo[1:-1]]),
        np.column_stack([np.zeros(len(seg_hi) - 2), seg_hi[1:-1]]),
        np.column_stack([np.full(len(ygrid) - 2, A), ygrid[1:-1]]),
        half_ring,
    ])
    _, uniq = np.unique(np.round(fixed / 1e-13).astype(np.int64), axis=0, return_index=True)
    fixed = fixed[np.sort(uniq)]

    cloud = _hex_cloud((0.0, A, 0.0, H), h, size, float(size(fixed).min()))
    s_cloud = size(cloud)
    dist = polygon_distance(ring, cloud)
    keep = (~inside(cloud)) & (dist > 0.7 * s_cloud)
    keep &= (cloud[:, 0] > 0.45 * s_cloud) & (A - cloud[:, 0] > 0.45 * s_cloud)
    keep &= (cloud[:, 1] > 0.45 * s_cloud) & (H - cloud[:, 1] > 0.45 * s_cloud)
    cloud = cloud[keep]
    cloud = _separation_filter(fixed, cloud, size)

    def keep_fn(pts):
        ok = (pts[:, 0] > 0) & (pts[:, 0] < A) & (pts[:, 1] > 0) & (pts[:, 1] < H)
        return ok & ~inside(pts)

    pts, tris = _mesh_region(fixed, cloud, keep_fn, inside)

    # mirror: vertices with x > 0 get a twin at -x, x == 0 vertices are shared
    nold = len(pts)
    mirror_map = np.arange(nold)
    new_pts = []
    for i, (x, y) in enumerate(pts):
        if x > 0.0:
            mirror_map[i] = nold + len(new_pts)
            new_pts.append((-x, y))
    allpts = np.vstack([pts, np.asarray(new_pts)])
    mirrored = mirror_map[tris][:, [0, 2, 1]]
    return allpts, np.vstack([tris, mirrored])


# ---------------------------------------------------------------------------
# text serialization


def write_mesh_text(mesh: Mesh, path) -> None:
    """Plain text dump: VERTICES/TRIANGLES/EDGES/PAIRS sections.

    Floats are written with repr, so a read-back reproduces coordinates
    exactly and rewriting is byte-stable.
    """
    lines = [f"MESH h {float(mesh.h)!r}"]
    lines.append(f"VERTICES {mesh.n_vertices}")
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(f"TRIANGLES {len(mesh.triangles)}")
    for a, b, c in mesh.triangles:
        lines.append(f"{a} {b} {c}")
    n_edges = sum(len(v) for v in mesh.edge_tags.values())
    lines.append(f"EDGES {n_edges}")
    for tag in ("left", "right", "bottom", "top", "hole"):
        for (a, b), o in zip(mesh.edge_tags.get(tag, ()), mesh.edge_owner.get(tag, ())):
            lines.append(f"{tag} {a} {b} {o}")
    npairs = 0 if mesh.pairing is None else len(mesh.pairing)
    lines.append(f"PAIRS {npairs}")
    if mesh.pairing is not None:
        for m, s in mesh.pairing:
            lines.append(f"{m} {s}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_mesh_text(path) -> Mesh:
    with open(path) as f:
        toks = f.read().split("\n")
    pos = 0

    def line():
        nonlocal pos
        while toks[pos] == "":
            pos += 1
        pos += 1
        return toks[pos - 1]

    hdr = line().split()
    assert hdr[0] == "MESH" and hdr[1] == "h"
    h = float(hdr[2])
    n = int(line().split()[1])
    verts = np.array([[float(t) for t in line().split()] for _ in range(n)])
    m = int(line().split()[1])
    tris = np.array([[int(t) for t in line().split()] for _ in range(m)], dtype=np.int64)
    k = int(line().split()[1])
    edge_tags = {t: [] for t in ("left", "right", "bottom", "top", "hole")}
    edge_owner = {t: [] for t in edge_tags}
    for _ in range(k):
        parts = line().split()
        edge_tags[parts[0]].append((int(parts[1]), int(parts[2])))
        edge_owner[parts[0]].append(int(parts[3]))
    edge_tags = {t: np.asarray(v, dtype=np.int64).reshape(-1, 2) for t, v in edge_tags.items()}
    edge_owner = {t: np.asarray(v, dtype=np.int64) for t, v in edge_owner.items()}
    p = int(line().split()[1])
    pairing = None
    if p:
        pairing = np.array([[int(t) for t in line().split()] for _ in range(p)], dtype=np.int64)
    return Mesh(verts, tris, edge_tags, edge_owner, pairing, h)
