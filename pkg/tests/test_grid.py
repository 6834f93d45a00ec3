"""Grid classification and operator assembly against hand-computable
oracles."""

import math

import numpy as np
import pytest

from anisoplate.anisotropy import diag_field, identity_field, poly_field, rot_field
from anisoplate.grid import (
    BOUNDARY,
    EXTERIOR,
    INTERIOR,
    ScalarField,
    assemble_operator,
    build_domain,
    central_gradient,
    disk_shape,
    parse_shape,
    rect_shape,
)


# ---------------------------------------------------------------------------
# domains


def test_disk_resolution_to_spacing():
    d = build_domain(disk_shape(1.0), 129)
    assert d.h == pytest.approx(1.0 / 64.0, abs=1e-15)
    d2 = build_domain(disk_shape(1.0), 257)
    assert d2.h == pytest.approx(1.0 / 128.0, abs=1e-15)


def test_rect_counts_exact():
    d = build_domain(rect_shape(1.0, 1.0), 33)
    assert d.h == pytest.approx(1.0 / 32.0, abs=1e-15)
    assert d.n_interior == 31 * 31
    assert d.n_boundary == 4 * 32  # full ring including corners


def test_disk_interior_area_close():
    d = build_domain(disk_shape(1.0), 129)
    assert abs(d.interior_area() - math.pi) / math.pi < 0.02
    d2 = build_domain(disk_shape(1.0), 257)
    assert abs(d2.interior_area() - math.pi) < abs(d.interior_area() - math.pi)


def test_grid_padded_one_cell():
    d = build_domain(disk_shape(1.0), 33)
    assert d.xs.shape == (35,)
    assert d.xs[0] == pytest.approx(-1.0 - d.h, abs=1e-15)
    assert d.xs[-1] == pytest.approx(1.0 + d.h, abs=1e-15)
    c = d.center_ij
    assert d.xs[c[0]] == pytest.approx(0.0, abs=1e-15)


def test_mask_codes_partition():
    d = build_domain(disk_shape(1.0), 33)
    n_codes = (d.mask == EXTERIOR).sum() + (d.mask == BOUNDARY).sum() + (d.mask == INTERIOR).sum()
    assert n_codes == 35 * 35
    # interior is strictly inside
    ij = d.interior_ij
    r = np.hypot(d.xs[ij[:, 0]], d.ys[ij[:, 1]])
    assert np.all(r < 1.0)
    # every boundary node has an interior 8-neighbor and is not inside
    for i, j in d.boundary_ij:
        assert math.hypot(d.xs[i], d.ys[j]) >= 1.0 - 1e-14
        block = d.mask[max(0, i - 1):i + 2, max(0, j - 1):j + 2]
        assert np.any(block == INTERIOR)


def test_boundary_projection_lands_on_curve():
    d = build_domain(disk_shape(1.0), 65)
    r = np.hypot(d.boundary_proj[:, 0], d.boundary_proj[:, 1])
    assert np.allclose(r, 1.0, atol=1e-14)
    dr = build_domain(rect_shape(2.0, 1.0), 65)
    sd = dr.shape.sdf(dr.boundary_proj)
    assert np.allclose(sd, 0.0, atol=1e-14)


def test_domain_input_validation():
    with pytest.raises(ValueError):
        build_domain(disk_shape(1.0), 4)
    with pytest.raises(ValueError):
        build_domain(disk_shape(1.0), 32)  # even
    with pytest.raises(ValueError):
        disk_shape(-1.0)
    with pytest.raises(ValueError):
        rect_shape(1.0, 0.0)
    with pytest.raises(ValueError):
        parse_shape("blob(1)")
    assert parse_shape("disk(1)").kind == "disk"
    assert parse_shape("rect(2, 1)").params == (2.0, 1.0)


def test_scalar_field_boundary_uses_projection():
    d = build_domain(disk_shape(1.0), 33)
    f = ScalarField.from_function(d, lambda x, y: x**2 + y**2)
    assert np.allclose(f.boundary(), 1.0, atol=1e-14)   # on the circle
    node_r2 = d.boundary_xy[:, 0] ** 2 + d.boundary_xy[:, 1] ** 2
    assert np.max(node_r2) > 1.0 + 1e-6                 # nodes themselves are off it


def test_scalar_field_csv_roundtrip(tmp_path):
    d = build_domain(rect_shape(1.0, 1.0), 9)
    f = ScalarField.from_function(d, lambda x, y: x + 2 * y)
    p = tmp_path / "field.csv"
    f.write_csv(p)
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "x,y,value"
    assert len(lines) - 1 == int((d.mask != EXTERIOR).sum())
    arr = np.loadtxt(p, delimiter=",", skiprows=1)
    assert np.allclose(arr[:, 2], arr[:, 0] + 2 * arr[:, 1], atol=1e-14)


def test_central_gradient_exact_for_linear():
    d = build_domain(rect_shape(1.0, 1.0), 17)
    vals = 3.0 * d.xs[:, None] - 2.0 * d.ys[None, :]
    g = central_gradient(d, vals)
    assert np.allclose(g[..., 0], 3.0, atol=1e-12)
    assert np.allclose(g[..., 1], -2.0, atol=1e-12)


# ---------------------------------------------------------------------------
# operator


def test_row_sums_vanish():
    d = build_domain(disk_shape(1.0), 65)
    op = assemble_operator(poly_field(0.5), d)
    ones_i = np.ones(d.n_interior)
    ones_b = np.ones(d.n_boundary)
    assert np.max(np.abs(op.apply(ones_i, ones_b))) < 1e-9


def test_symmetry_after_assembly():
    d = build_domain(disk_shape(1.0), 65)
    for f in (identity_field(), poly_field(0.5), rot_field(0.6, 2, 1)):
        op = assemble_operator(f, d)
        defect = op.matrix - op.matrix.T
        assert abs(defect).max() == 0.0
        assert op.asymmetry_defect <= 1e-13


def test_bilinear_oracle_constant_shear():
    # u = x*y and constant A: L u = -2*a12, and the stencil reproduces it
    # exactly on a grid whose boundary nodes sit on the curve
    d = build_domain(rect_shape(1.0, 1.0), 33)
    f = rot_field(0.6, 2.0, 1.0)
    a12 = f.matrix([0.0, 0.0])[0, 1]
    assert abs(a12) > 0.1
    u = ScalarField.from_function(d, lambda x, y: x * y)
    lu = assemble_operator(f, d).apply_field(u)
    assert np.allclose(lu, -2.0 * a12, atol=1e-8)


def test_quadratic_oracle_diagonal():
    d = build_domain(rect_shape(1.0, 1.0), 33)
    f = diag_field(2.0, 1.0)
    u = ScalarField.from_function(d, lambda x, y: x**2 + 3.0 * y**2)
    lu = assemble_operator(f, d).apply_field(u)
    assert np.allclose(lu, -10.0, atol=1e-8)


def test_variable_coefficient_second_order_consistency():
    # L u = -(a11 u_xx + da11/dx u_x + u_yy) for the polynomial diagonal
    # field; truncation error must shrink like h^2
    f = poly_field(0.5)

    def exact_lu(x, y):
        a11 = 1.0 + 0.5 * x**2
        ux = math.pi * np.cos(math.pi * x) * np.cos(math.pi * y)
        uxx = -math.pi**2 * np.sin(math.pi * x) * np.cos(math.pi * y)
        uyy = -math.pi**2 * np.sin(math.pi * x) * np.cos(math.pi * y)
        return -(a11 * uxx + 1.0 * x * ux + uyy)

    errs = []
    for res in (33, 65):
        d = build_domain(rect_shape(1.0, 1.0), res)
        u = ScalarField.from_function(d, lambda x, y: np.sin(math.pi * x) * np.cos(math.pi * y))
        lu = assemble_operator(f, d).apply_field(u)
        want = exact_lu(d.interior_xy[:, 0], d.interior_xy[:, 1])
        errs.append(np.max(np.abs(lu - want)))
    assert errs[1] < errs[0] / 3.0


def test_discrete_eigenfunction_ratio():
    # cos(pi x) cos(pi y) is an exact discrete eigenfunction of the
    # five-point stencil on the aligned unit square
    d = build_domain(rect_shape(1.0, 1.0), 33)
    u = ScalarField.from_function(d, lambda x, y: np.cos(math.pi * x) * np.cos(math.pi * y))
    lu = assemble_operator(identity_field(), d).apply_field(u)
    ratio = lu / u.interior()
    lam_h = 4.0 * (1.0 - math.cos(math.pi * d.h)) / d.h**2
    assert np.allclose(ratio, lam_h, rtol=1e-10)
    assert lam_h == pytest.approx(2.0 * math.pi**2, rel=5e-3)


def test_maximum_principle():
    d = build_domain(disk_shape(1.0), 65)
    op = assemble_operator(poly_field(0.5), d)
    g = np.sin(3.0 * np.arctan2(d.boundary_proj[:, 1], d.boundary_proj[:, 0]))
    u = op.solve_dirichlet(np.zeros(d.n_interior), g)
    assert u.max() <= g.max() + 1e-9
    assert u.min() >= g.min() - 1e-9


def test_dirichlet_reproduces_smooth_solution():
    # manufactured solution evaluated at the boundary nodes themselves, so
    # only the O(h^2) stencil truncation is visible
    f = diag_field(2.0, 1.0)
    errs = []
    for res in (33, 65):
        d = build_domain(rect_shape(1.0, 1.0), res)
        exact = ScalarField.from_function(d, lambda x, y: np.cos(math.pi * x) * np.cos(math.pi * y))
        rhs = (2.0 + 1.0) * math.pi**2 * exact.interior()
        op = assemble_operator(f, d)
        u = op.solve_dirichlet(rhs, exact.boundary(), tol=1e-12)
        errs.append(np.max(np.abs(u - exact.interior())))
    assert errs[1] < errs[0] / 3.0
    assert errs[1] < 5e-3


def test_navier_biharmonic_disk_profile():
    # L(L u) = 1 with both traces zero on the unit disk: the radial solution
    # is r^4/64 - r^2/16 + 3/64, value 3/64 at the center
    d = build_domain(disk_shape(1.0), 129)
    op = assemble_operator(identity_field(), d)
    u, w = op.solve_navier(np.ones(d.n_interior), tol=1e-11)
    ci, cj = d.center_ij
    center = d.interior_map[ci, cj]
    assert center >= 0
    assert u[center] == pytest.approx(3.0 / 64.0, rel=0.03)
    # the intermediate field is -Delta u = (1 - r^2)/4 at the center
    assert w[center] == pytest.approx(0.25, rel=0.03)


def test_navier_zero_rhs_gives_zero():
    d = build_domain(disk_shape(1.0), 33)
    op = assemble_operator(identity_field(), d)
    u, w = op.solve_navier(np.zeros(d.n_interior))
    assert np.max(np.abs(u)) == 0.0 and np.max(np.abs(w)) == 0.0


def test_nested_solve_operator_symmetric_by_probing():
    # probe the composed fourth-order solve on a small disk grid: the map
    # rhs -> u must be symmetric since both factors are the same SPD inverse
    d = build_domain(disk_shape(1.0), 17)
    op = assemble_operator(identity_field(), d)
    n = d.n_interior
    cols = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols[:, j], _ = op.solve_navier(e, tol=1e-13)
    defect = np.max(np.abs(cols - cols.T)) / np.max(np.abs(cols))
    assert defect <= 1e-10


def test_nonnegative_rhs_maximum_principle():
    d = build_domain(disk_shape(1.0), 49)
    op = assemble_operator(identity_field(), d)
    rng = np.random.default_rng(12)
    f = rng.uniform(0.0, 1.0, d.n_interior)
    u = op.solve_dirichlet(f, np.zeros(d.n_boundary))
    assert u.min() >= -1e-12


def test_consistency_ratio_three_fields():
    # interior cosine mode; residual against the analytic image shrinks at
    # second order (ratio in [3.4, 4.6]) for three coefficient fields
    cases = []

    def make_exact(f):
        def exact_lu(x, y):
            a = f.matrix(np.stack([x, y], axis=-1))
            a11, a22 = a[..., 0, 0], a[..., 1, 1]
            da11 = f.gradient(np.stack([x, y], axis=-1))[..., 0, 0, 0]
            c = np.cos(math.pi * x) * np.cos(math.pi * y)
            sx = np.sin(math.pi * x) * np.cos(math.pi * y)
            return (a11 + a22) * math.pi**2 * c + da11 * math.pi * sx
        return exact_lu

    for f in (identity_field(), diag_field(2, 1), poly_field(0.5)):
        errs = []
        for res in (33, 65):
            d = build_domain(rect_shape(1.0, 1.0), res)
            u = ScalarField.from_function(
                d, lambda x, y: np.cos(math.pi * x) * np.cos(math.pi * y))
            lu = assemble_operator(f, d).apply_field(u)
            want = make_exact(f)(d.interior_xy[:, 0], d.interior_xy[:, 1])
            errs.append(np.max(np.abs(lu - want)))
        cases.append(errs[0] / errs[1])
    assert all(3.4 <= ratio <= 4.6 for ratio in cases)


def test_incompatible_coefficients_rejected():
    from anisoplate.anisotropy import user_field

    def bad_eval(x):
        out = np.zeros(np.asarray(x).shape[:-1] + (2, 2))
        out[..., 0, 0] = -1.0
        out[..., 1, 1] = 1.0
        return out

    f = user_field("broken", bad_eval, lam=1.0, lam_upper=1.0)
    d = build_domain(rect_shape(1.0, 1.0), 17)
    with pytest.raises(ValueError):
        assemble_operator(f, d)


def test_stencil_is_nine_point():
    d = build_domain(disk_shape(1.0), 33)
    op = assemble_operator(rot_field(0.3, 2, 1), d)
    per_row = np.diff(op.matrix.indptr)
    assert per_row.max() <= 9
