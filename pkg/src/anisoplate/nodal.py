"""Zero-set extraction and first-variation identity checks.

Minimizers of the bending-plus-measure energy cross zero transversally, so
their zero level set is a union of closed curves inside the domain.  This
module extracts those curves by marching squares, counts the components of
the negative region, builds the curve-supported measure that the energy's
stationarity conditions pair test functions against, and evaluates both
variational identities as falsifiable residuals.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import ScalarField

_degenerate_grad = 1e-8
_zero_reltol = 1e-8

# cell edges as pairs of corner slots; corners are numbered
# 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1)
_edges = ((0, 1), (1, 2), (3, 2), (0, 3))
_four_neighbors = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])

# default test banks, sized for the unit-disk scenarios: bump supports sit
# strictly inside the domain.  The scalar bank rides the zero set of the
# dipped state (radius ~0.76) so both sides of the identity carry O(1)
# signal; tail-only overlap would leave quadrature noise in charge.
_el_centers = ((0.76, 0.0, 0.2), (-0.76, 0.0, 0.2), (0.0, 0.76, 0.2),
               (0.0, -0.76, 0.2), (0.537, 0.537, 0.15))
_bank_halfwidth = 0.3
_bank_centers = ((0.5, 0.0), (-0.5, 0.0), (0.0, 0.5), (0.0, -0.5), (0.36, 0.36))
_ring_center = 0.72
_ring_halfwidth = 0.22


@dataclass(frozen=True)
class NodalLoop:
    """One closed polyline of the zero set.

    component: label of the negative region this loop bounds.
    vertices: (m, 2) points; the segment from vertex m-1 back to vertex 0
        closes the loop.
    grad_mag: |grad u| at each vertex, bilinearly sampled.
    """

    component: int
    vertices: np.ndarray
    grad_mag: np.ndarray


@dataclass(frozen=True)
class NodalSet:
    loops: tuple
    length: float
    components_negative: int

    def min_grad(self):
        if not self.loops:
            return float("inf")
        return min(float(lp.grad_mag.min()) for lp in self.loops)

    def iter_segments(self):
        """Yield (p0, p1) over all closed polylines."""
        for lp in self.loops:
            pts = lp.vertices
            for k in range(len(pts)):
                yield pts[k], pts[(k + 1) % len(pts)]


@dataclass(frozen=True)
class MeasureDensity:
    """Curve quadrature of dH1/(2 |grad u|): midpoint rule per segment."""

    vertices: np.ndarray   # (n, 2) segment midpoints
    weights: np.ndarray    # (n,) segment_length / (2 |grad u|)

    def total_mass(self):
        return float(self.weights.sum())


def bilinear_sample(domain, values, pts):
    """Sample a full-grid array at arbitrary points inside the grid box."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    h = domain.h
    fx = (pts[:, 0] - domain.xs[0]) / h
    fy = (pts[:, 1] - domain.ys[0]) / h
    n = values.shape[0]
    i0 = np.clip(np.floor(fx).astype(int), 0, n - 2)
    j0 = np.clip(np.floor(fy).astype(int), 0, n - 2)
    tx = fx - i0
    ty = fy - j0
    v = ((1 - tx) * (1 - ty) * values[i0, j0]
         + tx * (1 - ty) * values[i0 + 1, j0]
         + (1 - tx) * ty * values[i0, j0 + 1]
         + tx * ty * values[i0 + 1, j0 + 1])
    return v


def _grid_gradient(domain, values):
    gx = np.gradient(values, domain.h, axis=0, edge_order=1)
    gy = np.gradient(values, domain.h, axis=1, edge_order=1)
    return gx, gy


def _saddle_pairs(neg00, avg):
    # four crossing edges; pair them so same-sign corners stay connected
    # according to the cell-average sign
    if neg00:
        return ((0, 1), (2, 3)) if avg < 0.0 else ((0, 3), (1, 2))
    return ((0, 3), (1, 2)) if avg < 0.0 else ((0, 1), (2, 3))


def extract_nodal(u_field):
    """Marching-squares zero contour plus negative-component census.

    input : ScalarField, positive on the domain boundary nodes.
    output: NodalSet.  Loops are closed; each carries the label of the
            negative region it bounds.
    raises: ValueError when the zero set reaches the domain boundary (a
            nonpositive boundary node, or a sign change in a rim cell).
    """
    d = u_field.domain
    vals = u_field.values
    mask = d.mask
    neg = (vals < 0.0) & (mask >= 1)
    if np.any(neg & (mask == 1)):
        raise ValueError("field is nonpositive on a domain boundary node")

    labels, n_comp = ndimage.label(neg, structure=_four_neighbors)
    inside = mask >= 1

    # candidate cells: any corner sign differs
    c_neg = neg[:-1, :-1].astype(int) + neg[1:, :-1] + neg[1:, 1:] + neg[:-1, 1:]
    cells = np.argwhere((c_neg > 0) & (c_neg < 4))

    corner_off = ((0, 0), (1, 0), (1, 1), (0, 1))
    vert_pos = []
    vert_of_edge = {}
    segments = []
    seg_label = []

    def edge_vertex(i0, j0, i1, j1):
        key = (i0, j0, i1, j1)
        idx = vert_of_edge.get(key)
        if idx is not None:
            return idx
        a = vals[i0, j0]
        b = vals[i1, j1]
        t = a / (a - b)
        x = d.xs[i0] + t * (d.xs[i1] - d.xs[i0])
        y = d.ys[j0] + t * (d.ys[j1] - d.ys[j0])
        idx = len(vert_pos)
        vert_pos.append((x, y))
        vert_of_edge[key] = idx
        return idx

    for i, j in cells:
        nodes = [(i + di, j + dj) for di, dj in corner_off]
        if not all(inside[p] for p in nodes):
            raise ValueError("zero set crosses a cell on the domain rim")
        flags = [bool(neg[p]) for p in nodes]
        crossing = [k for k, (a, b) in enumerate(_edges)
                    if flags[a] != flags[b]]
        neg_node = nodes[flags.index(True)]
        if len(crossing) == 2:
            pairs = (tuple(crossing),)
        else:
            avg = float(sum(vals[p] for p in nodes)) / 4.0
            pairs = _saddle_pairs(flags[0], avg)
        for ea, eb in pairs:
            va = edge_vertex(*nodes[_edges[ea][0]], *nodes[_edges[ea][1]])
            vb = edge_vertex(*nodes[_edges[eb][0]], *nodes[_edges[eb][1]])
            segments.append((va, vb))
            seg_label.append(int(labels[neg_node]))

    if not segments:
        return NodalSet((), 0.0, int(n_comp))

    # stitch segments into closed loops: every vertex must pair exactly two
    incident = {}
    for s, (va, vb) in enumerate(segments):
        incident.setdefault(va, []).append(s)
        incident.setdefault(vb, []).append(s)
    for v, ss in incident.items():
        if len(ss) != 2:
            raise RuntimeError("zero set is not a closed curve at vertex %d" % v)

    vert_pos = np.asarray(vert_pos)
    gx, gy = _grid_gradient(d, vals)
    used = [False] * len(segments)
    loops = []
    total_len = 0.0
    for s0 in range(len(segments)):
        if used[s0]:
            continue
        chain = [segments[s0][0]]
        cur_v = segments[s0][1]
        cur_s = s0
        used[s0] = True
        while cur_v != chain[0]:
            chain.append(cur_v)
            a, b = incident[cur_v]
            nxt = b if a == cur_s else a
            used[nxt] = True
            va, vb = segments[nxt]
            cur_v = vb if va == cur_v else va
            cur_s = nxt
        pts = vert_pos[chain]
        gm = np.hypot(bilinear_sample(d, gx, pts), bilinear_sample(d, gy, pts))
        loops.append(NodalLoop(seg_label[s0], pts, gm))
        total_len += float(np.linalg.norm(
            pts - np.roll(pts, -1, axis=0), axis=1).sum())

    return NodalSet(tuple(loops), total_len, int(n_comp))


def measure_density(u_field, nodal):
    """Quadrature of the stationarity measure: weight len/(2|grad u|) at
    each segment midpoint."""
    d = u_field.domain
    gx, gy = _grid_gradient(d, u_field.values)
    mids = []
    wts = []
    for p0, p1 in nodal.iter_segments():
        mid = 0.5 * (p0 + p1)
        g = float(np.hypot(bilinear_sample(d, gx, mid)[0],
                           bilinear_sample(d, gy, mid)[0]))
        if g < _degenerate_grad:
            raise RuntimeError("degenerate gradient %g on the zero set" % g)
        mids.append(mid)
        wts.append(float(np.linalg.norm(p1 - p0)) / (2.0 * g))
    if not mids:
        return MeasureDensity(np.zeros((0, 2)), np.zeros(0))
    return MeasureDensity(np.asarray(mids), np.asarray(wts))


# ---------------------------------------------------------------------------
# variational identities


@dataclass(frozen=True)
class ResidualRecord:
    lhs: float
    rhs: float
    rel: float


def _relative(lhs, rhs):
    scale = max(abs(lhs), abs(rhs))
    if scale == 0.0:
        return 0.0
    return abs(lhs - rhs) / scale


def _sample_scalar(domain, fn):
    out = ScalarField(domain)
    out.values = np.asarray(fn(domain.X, domain.Y), dtype=float)
    return out


def el_residual(op, state, nodal, test_bank):
    """First variation against scalar test functions.

    For each test function f (vanishing on the domain boundary) the inner
    variation of the energy gives

        2 sum (L_h u)(L_h f) h^2  =  - sum_segments f * len / |grad u|

    with the right side read off the zero-set quadrature.  Returns one
    ResidualRecord per test function.
    """
    d = op.domain
    ij = d.interior_ij
    v = state.v.values[ij[:, 0], ij[:, 1]]
    dens = measure_density(state.u, nodal)
    out = []
    for fn in test_bank:
        f_field = _sample_scalar(d, fn)
        lf = op.apply_field(f_field)
        lhs = 2.0 * d.h ** 2 * float(v @ lf)
        if len(dens.weights):
            f_mid = np.asarray(fn(dens.vertices[:, 0], dens.vertices[:, 1]),
                               dtype=float)
            rhs = -2.0 * float(f_mid @ dens.weights)
        else:
            rhs = 0.0
        out.append(ResidualRecord(lhs, rhs, _relative(lhs, rhs)))
    return out


def domain_variation_residual(state, nodal, psi_bank):
    """Outer variation against vector fields with interior support.

    Sliding the domain by psi trades the measure of the positive region
    against transport across the zero set:

        - sum_{u>0} div_h(psi) w_node  =  2 sum (psi . grad u) * weight

    Returns one ResidualRecord per field.
    """
    from .minimizer import _measure_weights

    d = state.u.domain
    u = state.u.values
    wi, wb = _measure_weights(d)
    w_grid = np.zeros_like(u)
    ij = d.interior_ij
    bj = d.boundary_ij
    w_grid[ij[:, 0], ij[:, 1]] = wi
    w_grid[bj[:, 0], bj[:, 1]] = wb
    pos = (u > 0.0) & (d.mask >= 1)

    gx, gy = _grid_gradient(d, u)
    dens = measure_density(state.u, nodal)
    out = []
    for psi in psi_bank:
        px, py = psi(d.X, d.Y)
        div = (np.gradient(np.asarray(px, dtype=float), d.h, axis=0, edge_order=1)
               + np.gradient(np.asarray(py, dtype=float), d.h, axis=1, edge_order=1))
        lhs = -float((div * w_grid)[pos].sum())
        if len(dens.weights):
            mx, my = dens.vertices[:, 0], dens.vertices[:, 1]
            pxm, pym = psi(mx, my)
            dot = (np.asarray(pxm, dtype=float) * bilinear_sample(d, gx, dens.vertices)
                   + np.asarray(pym, dtype=float) * bilinear_sample(d, gy, dens.vertices))
            rhs = 2.0 * float(dot @ dens.weights)
        else:
            rhs = 0.0
        out.append(ResidualRecord(lhs, rhs, _relative(lhs, rhs)))
    return out


# ---------------------------------------------------------------------------
# mollification


def mollify_measure(domain, density, n):
    """Spread the curve measure onto the grid with a compact bump of
    radius 1/n; the result integrates (by h^2 node sums) to the measure's
    total mass within quadrature error.
    """
    if n <= 0:
        raise ValueError("bandwidth index must be positive")
    rad = 1.0 / float(n)
    if rad < 2.0 * domain.h:
        raise ValueError("bandwidth %g below grid resolution 2h = %g"
                         % (rad, 2.0 * domain.h))
    out = ScalarField(domain)
    g = out.values
    h = domain.h
    norm = 4.0 * n * n / np.pi
    span = int(np.ceil(rad / h)) + 1
    nx = len(domain.xs)
    for (vx, vy), w in zip(density.vertices, density.weights):
        ic = int(round((vx - domain.xs[0]) / h))
        jc = int(round((vy - domain.ys[0]) / h))
        i0, i1 = max(0, ic - span), min(nx, ic + span + 1)
        j0, j1 = max(0, jc - span), min(nx, jc + span + 1)
        dx = domain.xs[i0:i1, None] - vx
        dy = domain.ys[None, j0:j1] - vy
        s2 = (dx * dx + dy * dy) * (n * n)
        bump = np.where(s2 < 1.0, (1.0 - s2) ** 3, 0.0)
        g[i0:i1, j0:j1] += w * norm * bump
    return out


# ---------------------------------------------------------------------------
# test-function banks and output


def bump_profile(t):
    """C2 compact profile (1 - t^2)^3 on |t| < 1."""
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) < 1.0, (1.0 - t * t) ** 3, 0.0)


def bump_profile_deriv(t):
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) < 1.0, -6.0 * t * (1.0 - t * t) ** 2, 0.0)


def tensor_bump(cx, cy, halfwidth=_bank_halfwidth):
    def fn(x, y):
        return bump_profile((x - cx) / halfwidth) * \
            bump_profile((y - cy) / halfwidth)
    return fn


def el_test_bank():
    """Five tensor bumps straddling the zero set of the disk scenarios."""
    return tuple(tensor_bump(cx, cy, w) for cx, cy, w in _el_centers)


def variation_test_bank():
    """Five interior vector fields: a radial ring push plus directional
    bumps."""
    ring = _radial_ring(_ring_center, _ring_halfwidth)
    b0 = tensor_bump(*_bank_centers[0])
    b2 = tensor_bump(*_bank_centers[2])
    b4 = tensor_bump(*_bank_centers[4])
    narrow = _radial_ring(0.76, 0.15)

    return (
        ring,
        lambda x, y: (b0(x, y), np.zeros_like(np.asarray(x, dtype=float))),
        lambda x, y: (np.zeros_like(np.asarray(x, dtype=float)), b2(x, y)),
        lambda x, y: (b4(x, y), b4(x, y)),
        narrow,
    )


def _radial_ring(center, halfwidth):
    def psi(x, y):
        r = np.hypot(x, y)
        eta = bump_profile((r - center) / halfwidth)
        return eta * np.asarray(x, dtype=float), eta * np.asarray(y, dtype=float)
    return psi


def write_nodal_csv(nodal, path):
    """Dump loops as rows component,vertex_index,x,y,grad_mag."""
    with open(path, "w") as f:
        f.write("component,vertex_index,x,y,grad_mag\n")
        for lp in nodal.loops:
            for k, ((x, y), g) in enumerate(zip(lp.vertices, lp.grad_mag)):
                f.write("%d,%d,%.17g,%.17g,%.17g\n" % (lp.component, k, x, y, g))
