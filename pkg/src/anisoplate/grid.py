"""Uniform-grid discretization of divergence-form operators on disks and
rectangles.

Nodes are classified interior (strictly inside), boundary (outside-or-on
nodes 8-adjacent to an interior node, carrying data at their exact
projection onto the curve) or exterior.  The operator L u = -div(A grad u)
is assembled in flux form on the interior nodes with a nine-point stencil
and symmetrized; Dirichlet solves go through conjugate gradients and the
fourth-order solve is two nested second-order solves."""

from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sparse

from .linsolve import solve_spd

_min_resolution = 5
_symmetry_tol = 1e-13

# mask codes
EXTERIOR = 0
BOUNDARY = 1
INTERIOR = 2


@dataclass(frozen=True)
class DomainShape:
    """Disk of given radius or axis-aligned rectangle, centered at the
    origin."""

    kind: str
    params: tuple

    def sdf(self, pts):
        """Signed distance in the loose sense: negative strictly inside,
        zero on the curve, positive outside."""
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        if self.kind == "disk":
            return np.hypot(x, y) - self.params[0]
        w, h = self.params
        return np.maximum(np.abs(x) - 0.5 * w, np.abs(y) - 0.5 * h)

    def project(self, pts):
        """Closest point on the curve, for points outside or on it."""
        pts = np.asarray(pts, dtype=float)
        if self.kind == "disk":
            r = np.hypot(pts[..., 0], pts[..., 1])
            r = np.where(r == 0.0, 1.0, r)
            return pts * (self.params[0] / r)[..., None]
        w, h = self.params
        out = np.empty_like(pts)
        out[..., 0] = np.clip(pts[..., 0], -0.5 * w, 0.5 * w)
        out[..., 1] = np.clip(pts[..., 1], -0.5 * h, 0.5 * h)
        # points on or inside the rectangle: push the closest coordinate
        # out to the nearest edge so the result lies on the curve
        inside = self.sdf(pts) <= 0.0
        if np.any(inside):
            gx = 0.5 * w - np.abs(out[..., 0])
            gy = 0.5 * h - np.abs(out[..., 1])
            push_x = inside & (gx <= gy)
            push_y = inside & ~push_x
            sx = np.where(out[..., 0] >= 0.0, 1.0, -1.0)
            sy = np.where(out[..., 1] >= 0.0, 1.0, -1.0)
            out[..., 0] = np.where(push_x, sx * 0.5 * w, out[..., 0])
            out[..., 1] = np.where(push_y, sy * 0.5 * h, out[..., 1])
        return out

    def bbox_halfwidth(self):
        if self.kind == "disk":
            return float(self.params[0])
        return 0.5 * max(self.params)

    def area(self):
        if self.kind == "disk":
            return math.pi * self.params[0] ** 2
        return self.params[0] * self.params[1]


def disk_shape(radius):
    if radius <= 0.0:
        raise ValueError("disk radius must be positive, got %g" % radius)
    return DomainShape("disk", (float(radius),))


def rect_shape(width, height):
    if width <= 0.0 or height <= 0.0:
        raise ValueError("rectangle sides must be positive, got (%g, %g)" % (width, height))
    return DomainShape("rect", (float(width), float(height)))


def parse_shape(spec):
    """'disk(R)' or 'rect(W,H)'."""
    spec = spec.strip()
    if spec.startswith("disk(") and spec.endswith(")"):
        return disk_shape(float(spec[5:-1]))
    if spec.startswith("rect(") and spec.endswith(")"):
        parts = spec[5:-1].split(",")
        if len(parts) != 2:
            raise ValueError("rect needs two sides, got %r" % spec)
        return rect_shape(float(parts[0]), float(parts[1]))
    raise ValueError("cannot parse domain shape %r" % spec)


@dataclass(frozen=True)
class DiscreteDomain:
    """Square grid over the shape's bounding box, padded by one cell.

    h = bounding-box extent / (resolution - 1), so the padded grid holds
    resolution + 2 nodes per side; an odd resolution puts a node exactly at
    the origin.  interior_map / boundary_map give each node its packed
    ordinal or -1; boundary_proj holds the on-curve projection of each
    boundary node."""

    shape: DomainShape
    resolution: int
    h: float
    xs: np.ndarray
    ys: np.ndarray
    mask: np.ndarray
    interior_ij: np.ndarray
    boundary_ij: np.ndarray
    interior_map: np.ndarray
    boundary_map: np.ndarray
    interior_xy: np.ndarray
    boundary_xy: np.ndarray
    boundary_proj: np.ndarray

    @property
    def n_interior(self):
        return self.interior_ij.shape[0]

    @property
    def n_boundary(self):
        return self.boundary_ij.shape[0]

    @property
    def center_ij(self):
        """Grid index of the node at the origin (resolution is odd)."""
        c = (self.resolution + 1) // 2
        return c, c

    @property
    def X(self):
        """Node x-coordinates on the full grid, ij indexing."""
        return np.meshgrid(self.xs, self.ys, indexing="ij")[0]

    @property
    def Y(self):
        """Node y-coordinates on the full grid, ij indexing."""
        return np.meshgrid(self.xs, self.ys, indexing="ij")[1]

    def interior_area(self):
        """Cell-counting area of the strictly-inside node set."""
        return self.n_interior * self.h ** 2


def build_domain(shape, resolution):
    """Classify the nodes of a (resolution x resolution) grid on the shape's
    bounding box.

    input : DomainShape or spec string, odd resolution >= 5.
    output: DiscreteDomain.
    """
    if isinstance(shape, str):
        shape = parse_shape(shape)
    resolution = int(resolution)
    if resolution < _min_resolution:
        raise ValueError("resolution must be at least %d, got %d" % (_min_resolution, resolution))
    if resolution % 2 == 0:
        raise ValueError("resolution must be odd so a node sits at the center, got %d"
                         % resolution)
    half = shape.bbox_halfwidth()
    h = 2.0 * half / (resolution - 1)
    # bounding box padded by one cell on every side
    xs = np.linspace(-half - h, half + h, resolution + 2)
    ys = np.linspace(-half - h, half + h, resolution + 2)

    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx, gy], axis=-1)
    inside = shape.sdf(pts) < 0.0

    if np.any(inside[0, :]) or np.any(inside[-1, :]) or np.any(inside[:, 0]) or np.any(inside[:, -1]):
        raise ValueError("interior reaches the edge of the grid; bounding box too tight")

    # 8-adjacency dilation of the inside set via shifted copies
    adj = np.zeros_like(inside)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            src = inside[max(0, -di):inside.shape[0] - max(0, di),
                         max(0, -dj):inside.shape[1] - max(0, dj)]
            adj[max(0, di):adj.shape[0] - max(0, -di),
                max(0, dj):adj.shape[1] - max(0, -dj)] |= src

    n_nodes = xs.shape[0]
    mask = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    mask[inside] = INTERIOR
    mask[(~inside) & adj] = BOUNDARY

    interior_ij = np.argwhere(mask == INTERIOR)
    boundary_ij = np.argwhere(mask == BOUNDARY)
    if interior_ij.shape[0] == 0:
        raise ValueError("no interior nodes; resolution too coarse for the shape")

    interior_map = np.full((n_nodes, n_nodes), -1, dtype=np.int64)
    boundary_map = np.full((n_nodes, n_nodes), -1, dtype=np.int64)
    interior_map[interior_ij[:, 0], interior_ij[:, 1]] = np.arange(interior_ij.shape[0])
    boundary_map[boundary_ij[:, 0], boundary_ij[:, 1]] = np.arange(boundary_ij.shape[0])

    interior_xy = np.stack([xs[interior_ij[:, 0]], ys[interior_ij[:, 1]]], axis=-1)
    boundary_xy = np.stack([xs[boundary_ij[:, 0]], ys[boundary_ij[:, 1]]], axis=-1)
    boundary_proj = shape.project(boundary_xy)

    return DiscreteDomain(shape, resolution, h, xs, ys, mask,
                          interior_ij, boundary_ij, interior_map, boundary_map,
                          interior_xy, boundary_xy, boundary_proj)


# ---------------------------------------------------------------------------
# scalar fields on the grid


class ScalarField:
    """Node values on the full grid; exterior entries are kept at zero."""

    def __init__(self, domain, values=None):
        self.domain = domain
        n = domain.xs.shape[0]
        if values is None:
            values = np.zeros((n, n))
        values = np.asarray(values, dtype=float)
        if values.shape != (n, n):
            raise ValueError("values shape %r does not match grid %d" % (values.shape, n))
        self.values = values

    @classmethod
    def from_function(cls, domain, fn):
        """Evaluate fn(x, y) at interior nodes and boundary projections."""
        out = cls(domain)
        ii, jj = domain.interior_ij[:, 0], domain.interior_ij[:, 1]
        out.values[ii, jj] = fn(domain.interior_xy[:, 0], domain.interior_xy[:, 1])
        bi, bj = domain.boundary_ij[:, 0], domain.boundary_ij[:, 1]
        out.values[bi, bj] = fn(domain.boundary_proj[:, 0], domain.boundary_proj[:, 1])
        return out

    def interior(self):
        ij = self.domain.interior_ij
        return self.values[ij[:, 0], ij[:, 1]]

    def boundary(self):
        ij = self.domain.boundary_ij
        return self.values[ij[:, 0], ij[:, 1]]

    def replace_interior(self, vec):
        out = ScalarField(self.domain, self.values.copy())
        ij = self.domain.interior_ij
        out.values[ij[:, 0], ij[:, 1]] = vec
        return out

    def copy(self):
        return ScalarField(self.domain, self.values.copy())

    def csv_rows(self):
        """(x, y, value) rows over non-exterior nodes, row-major in x then y."""
        d = self.domain
        keep = np.argwhere(d.mask != EXTERIOR)
        for i, j in keep:
            yield d.xs[i], d.ys[j], self.values[i, j]

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,y,value\n")
            for x, y, v in self.csv_rows():
                fh.write("%.17g,%.17g,%.17g\n" % (x, y, v))


def central_gradient(domain, values):
    """Central-difference gradient of a full grid array, one-sided at the
    array edge; returns (res, res, 2)."""
    h = domain.h
    g = np.empty(values.shape + (2,))
    g[..., 0] = np.gradient(values, h, axis=0)
    g[..., 1] = np.gradient(values, h, axis=1)
    return g


# ---------------------------------------------------------------------------
# operator assembly


@dataclass(frozen=True)
class SparseOperator:
    """L restricted to interior nodes: apply is M @ u_int + B @ u_bnd."""

    domain: DiscreteDomain
    matrix: sparse.csr_matrix
    coupling: sparse.csr_matrix
    asymmetry_defect: float

    def apply(self, u_interior, u_boundary):
        return self.matrix @ u_interior + self.coupling @ u_boundary

    def apply_field(self, fld):
        """L_h of a ScalarField, as an interior vector."""
        return self.apply(fld.interior(), fld.boundary())

    def solve_dirichlet(self, rhs_interior, boundary_values, tol=1e-10, x0=None):
        """Interior solve of L u = rhs with prescribed boundary values."""
        rhs = np.asarray(rhs_interior, dtype=float) - self.coupling @ np.asarray(
            boundary_values, dtype=float)
        x, rep = solve_spd(self.matrix, rhs, tol=tol, x0=x0)
        if not rep.converged:
            raise RuntimeError("Dirichlet solve stalled: residual %.3e after %d iterations"
                               % (rep.final_residual, rep.iterations))
        return x

    def solve_navier(self, rhs_interior, tol=1e-10):
        """Fourth-order solve L(L u) = rhs with u and L u vanishing on the
        boundary: two nested Dirichlet solves."""
        nb = self.domain.n_boundary
        zero = np.zeros(nb)
        w = self.solve_dirichlet(rhs_interior, zero, tol=tol)
        return self.solve_dirichlet(w, zero, tol=tol), w


# stencil offsets, paired with their coefficient builders
_offsets = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (-1, 1), (1, -1))


def assemble_operator(field, domain):
    """Nine-point flux-form stencil for L u = -div(A grad u).

    Face values of A enter through one-dimensional differences for the
    diagonal entries and four-point transverse averages for the off-diagonal
    entry.  The interior block is symmetrized by averaging with its
    transpose; the pre-averaging defect is recorded and must stay at
    roundoff scale for the built-in coefficient fields.
    """
    d = domain
    h = d.h
    xy = d.interior_xy
    ex = np.array([0.5 * h, 0.0])
    ey = np.array([0.0, 0.5 * h])

    a_e = field.matrix(xy + ex)
    a_w = field.matrix(xy - ex)
    a_n = field.matrix(xy + ey)
    a_s = field.matrix(xy - ey)

    ae, be = a_e[:, 0, 0], a_e[:, 0, 1]
    aw, bw = a_w[:, 0, 0], a_w[:, 0, 1]
    an, bn = a_n[:, 1, 1], a_n[:, 0, 1]
    as_, bs = a_s[:, 1, 1], a_s[:, 0, 1]

    h2 = h * h
    coef = {
        (0, 0): (ae + aw + an + as_) / h2,
        (1, 0): -ae / h2 - (bn - bs) / (4 * h2),
        (-1, 0): -aw / h2 + (bn - bs) / (4 * h2),
        (0, 1): -an / h2 - (be - bw) / (4 * h2),
        (0, -1): -as_ / h2 + (be - bw) / (4 * h2),
        (1, 1): -(be + bn) / (4 * h2),
        (-1, -1): -(bw + bs) / (4 * h2),
        (-1, 1): (bw + bn) / (4 * h2),
        (1, -1): (be + bs) / (4 * h2),
    }

    ii, jj = d.interior_ij[:, 0], d.interior_ij[:, 1]
    rows_m, cols_m, vals_m = [], [], []
    rows_b, cols_b, vals_b = [], [], []
    n_int = d.n_interior
    row_idx = np.arange(n_int)

    for (di, dj) in _offsets:
        ni, nj = ii + di, jj + dj
        im = d.interior_map[ni, nj]
        bm = d.boundary_map[ni, nj]
        into_interior = im >= 0
        into_boundary = (~into_interior) & (bm >= 0)
        orphan = ~(into_interior | into_boundary)
        if np.any(orphan):
            raise RuntimeError("stencil of an interior node reaches an exterior node; "
                               "classification violated 8-adjacency")
        v = coef[(di, dj)]
        rows_m.append(row_idx[into_interior])
        cols_m.append(im[into_interior])
        vals_m.append(v[into_interior])
        rows_b.append(row_idx[into_boundary])
        cols_b.append(bm[into_boundary])
        vals_b.append(v[into_boundary])

    m = sparse.coo_matrix(
        (np.concatenate(vals_m), (np.concatenate(rows_m), np.concatenate(cols_m))),
        shape=(n_int, n_int)).tocsr()
    b = sparse.coo_matrix(
        (np.concatenate(vals_b), (np.concatenate(rows_b), np.concatenate(cols_b))),
        shape=(n_int, d.n_boundary)).tocsr()

    defect_mat = (m - m.T).tocoo()
    defect = float(np.max(np.abs(defect_mat.data))) if defect_mat.nnz else 0.0
    m = ((m + m.T) * 0.5).tocsr()
    if np.any(m.diagonal() <= 0.0):
        raise ValueError("assembled diagonal not positive; coefficient field and grid "
                         "spacing are incompatible")
    return SparseOperator(d, m, b, defect * h2)
