import numpy as np
import pytest

from modpgd.geometry import (LSHAPE_PARAM_ORDER, GeometryParametrization,
                             Placement, ReferencePatch, bspline_basis,
                             build_lshape_skeleton, open_knot_vector, place,
                             quarter_bend_geometry, tapered_channel_geometry,
                             unit_square_patch)
from modpgd.mesh import UnitSquareMesh
from modpgd.validation import DegenerateGeometryError, RangeError


def deboor_basis(knots, degree, i, u):
    """Textbook Cox-de Boor recursion for a single basis function (oracle)."""
    if degree == 0:
        if knots[i] <= u < knots[i + 1]:
            return 1.0
        # closed right end
        if u == knots[-1] and knots[i] < knots[i + 1] <= u:
            return 1.0
        return 0.0
    out = 0.0
    if knots[i + degree] > knots[i]:
        out += (u - knots[i]) / (knots[i + degree] - knots[i]) * \
            deboor_basis(knots, degree - 1, i, u)
    if knots[i + degree + 1] > knots[i + 1]:
        out += (knots[i + degree + 1] - u) / (knots[i + degree + 1] - knots[i + 1]) * \
            deboor_basis(knots, degree - 1, i + 1, u)
    return out


def test_bspline_basis_matches_de_boor():
    rng = np.random.default_rng(4)
    for degree, n_ctrl in ((1, 2), (2, 3), (2, 5), (3, 6)):
        knots = open_knot_vector(degree, n_ctrl)
        u = rng.uniform(0, 1, 15)
        B, _ = bspline_basis(knots, degree, u)
        for k, uk in enumerate(u):
            expect = [deboor_basis(knots, degree, i, uk) for i in range(n_ctrl)]
            np.testing.assert_allclose(B[k], expect, atol=1e-13)
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-13)


def test_identity_patch_map_and_jacobian():
    geo = GeometryParametrization(
        unit_square_patch(),
        np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float), {}, {})
    xi = np.array([[0.0, 0.0], [0.3, 0.7], [1.0, 1.0]])
    np.testing.assert_allclose(geo.map({}, xi), xi, atol=1e-14)
    J, det = geo.jacobian({}, xi)
    np.testing.assert_allclose(J, np.broadcast_to(np.eye(2), (3, 2, 2)), atol=1e-14)
    np.testing.assert_allclose(det, 1.0, atol=1e-14)


def test_uniform_scaling_patch_det():
    L = 2.5
    geo = GeometryParametrization(
        unit_square_patch(),
        L * np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float), {}, {})
    _, det = geo.jacobian({}, np.array([[0.25, 0.8]]))
    assert det[0] == pytest.approx(L ** 2, rel=1e-13)


def quarter_annulus_points(r_in, width, xi):
    """Rational quadratic arc oracle, evaluated control point by control point."""
    knots = [0, 0, 0, 1, 1, 1]
    wts = [1.0, np.sqrt(2) / 2, 1.0]
    pts = []
    for x1, x2 in np.atleast_2d(xi):
        rho_ctrl = r_in + width * np.array([0.0, 0.5, 1.0])
        # degree-2 B-spline along radius through (rho_0, mid, rho_2) is linear
        num = np.zeros(2)
        den = 0.0
        for j, pat in enumerate([np.array([1.0, 0.0]), np.array([1.0, 1.0]),
                                 np.array([0.0, 1.0])]):
            bj = deboor_basis(knots, 2, j, x2)
            for i in range(3):
                bi = deboor_basis(knots, 2, i, x1)
                num += wts[j] * bi * bj * rho_ctrl[i] * pat
                den += wts[j] * bi * bj
        pts.append(num / den)
    return np.array(pts)


def test_quarter_bend_matches_rational_oracle():
    geo = quarter_bend_geometry()
    p = {"bend_radius": 1.0, "width": 1.0}
    assert np.allclose(geo.map(p, [[0.0, 0.0]]), [[1.0, 0.0]], atol=1e-13)
    rng = np.random.default_rng(8)
    xi = rng.uniform(0, 1, (12, 2))
    np.testing.assert_allclose(geo.map(p, xi),
                               quarter_annulus_points(1.0, 1.0, xi), atol=1e-12)
    # inner edge lies on the radius-1 arc
    edge = np.column_stack([np.zeros(9), np.linspace(0, 1, 9)])
    radii = np.linalg.norm(geo.map(p, edge), axis=1)
    np.testing.assert_allclose(radii, 1.0, atol=1e-12)
    # outer edge on the radius-2 arc
    edge[:, 0] = 1.0
    np.testing.assert_allclose(np.linalg.norm(geo.map(p, edge), axis=1), 2.0,
                               atol=1e-12)


@pytest.mark.parametrize("geo,p", [
    (quarter_bend_geometry(), {"bend_radius": 1.3, "width": 2.1}),
    (tapered_channel_geometry(), {"width_in": 1.2, "width_out": 2.8, "length": 1.7}),
])
def test_jacobian_matches_finite_differences(geo, p):
    rng = np.random.default_rng(15)
    xi = rng.uniform(0.05, 0.95, (10, 2))
    J, det = geo.jacobian(p, xi)
    h = 1e-6
    for k in range(2):
        dxi = np.zeros(2)
        dxi[k] = h
        fd = (geo.map(p, xi + dxi) - geo.map(p, xi - dxi)) / (2 * h)
        np.testing.assert_allclose(J[:, :, k], fd, rtol=1e-6, atol=1e-9)
    assert np.all(det > 0)


def test_map_rejects_out_of_square_and_range():
    geo = tapered_channel_geometry()
    p = {"width_in": 2.0, "width_out": 2.0, "length": 2.0}
    with pytest.raises(RangeError):
        geo.map(p, [[1.2, 0.5]])
    with pytest.raises(RangeError, match="length"):
        geo.map({**p, "length": 5.0}, [[0.5, 0.5]])


def test_degenerate_control_net_rejected_at_construction():
    # collapse the north edge onto the south edge -> det J <= 0 somewhere
    with pytest.raises(DegenerateGeometryError):
        GeometryParametrization(
            unit_square_patch(),
            np.array([[0, 0], [1, 0], [0.0, 0.0], [1.0, -0.1]]), {}, {})


def test_placement_identity_and_rotation():
    assert np.allclose(place(np.array([0.4, -0.2]), Placement()), [0.4, -0.2])
    rot = Placement(theta=np.pi / 2)
    np.testing.assert_allclose(place(np.array([1.0, 0.0]), rot), [0.0, 1.0],
                               atol=1e-15)


def test_placement_preserves_distances():
    rng = np.random.default_rng(23)
    pl = Placement(theta=rng.uniform(0, 2 * np.pi),
                   translation=tuple(rng.uniform(-5, 5, 2)),
                   reflect=True)
    a = rng.uniform(-3, 3, (100, 2))
    b = rng.uniform(-3, 3, (100, 2))
    d0 = np.linalg.norm(a - b, axis=1)
    d1 = np.linalg.norm(pl.place(a) - pl.place(b), axis=1)
    np.testing.assert_allclose(d1, d0, rtol=1e-12)
    assert abs(abs(np.linalg.det(pl.matrix())) - 1.0) < 1e-14


def test_lshape_symmetric_configuration():
    modules, interfaces = build_lshape_skeleton([2.0] * 6)
    assert len(modules) == 3 and len(interfaces) == 2
    for itf in interfaces:
        length = np.linalg.norm(itf.endpoints[1] - itf.endpoints[0])
        assert length == pytest.approx(2.0, rel=1e-13)
    # both legs instantiate the same reference with identical local parameters
    legs = [m for m in modules if m.reference == "channel"]
    assert legs[0].geo_values == legs[1].geo_values


def test_lshape_module_and_interface_count_any_p():
    rng = np.random.default_rng(31)
    for _ in range(5):
        p = rng.uniform(1, 3, 6)
        modules, interfaces = build_lshape_skeleton(p)
        assert len(modules) == 3
        assert len(interfaces) == 2


def test_lshape_trace_meshes_conform():
    p = np.array([1.8, 2.4, 1.2, 1.5, 2.9, 1.1])  # channel_width = p[3] = 1.5
    modules, interfaces = build_lshape_skeleton(p)
    mods = {m.name: m for m in modules}
    mesh = UnitSquareMesh(9)
    for itf in interfaces:
        sides = []
        for name, edge in zip(itf.modules, itf.edges):
            m = mods[name]
            xi = mesh.nodes[mesh.edge_nodes(edge)]
            sides.append(m.placement.place(m.geometry.map(m.geo_values, xi)))
        np.testing.assert_allclose(sides[0], sides[1], atol=1e-12)
        np.testing.assert_allclose(sides[0][0], itf.endpoints[0], atol=1e-12)
        np.testing.assert_allclose(sides[0][-1], itf.endpoints[1], atol=1e-12)


def test_lshape_constraint_violation_rejected():
    p = [2.0] * 6
    good = [
        {"width_in": 2.0, "width_out": 2.0, "length": 2.0},
        {"bend_radius": 2.0, "width": 2.0},
        {"width_in": 2.0, "width_out": 2.0, "length": 2.0},
    ]
    build_lshape_skeleton(p, per_module=good)
    bad = [dict(good[0]), dict(good[1]), dict(good[2])]
    bad[1]["width"] = 2.5
    with pytest.raises(ValueError, match="constraint"):
        build_lshape_skeleton(p, per_module=bad)


def test_lshape_rejects_out_of_range():
    with pytest.raises(RangeError):
        build_lshape_skeleton([2, 2, 0.5, 2, 2, 2])


def test_det_positive_on_11_point_parameter_grid():
    # acceptance-style sweep at unit-test scale: 11 samples per parameter, all
    # Gauss points of a coarse mesh
    mesh = UnitSquareMesh(5)
    for geo in (tapered_channel_geometry(), quarter_bend_geometry()):
        grids = [np.linspace(lo, hi, 11) for lo, hi in
                 (geo.ranges[k] for k in geo.labels)]
        qp = mesh.quadrature(order=3).points
        for combo in np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, len(grids))[::7]:
            _, det = geo.jacobian(dict(zip(geo.labels, combo)), qp)
            assert np.all(det > 0)
