import numpy as np
import pytest
import scipy.sparse as sp

from modpgd.geometry import (GeometryParametrization, quarter_bend_geometry,
                             tapered_channel_geometry, unit_square_patch)
from modpgd.interface import InterfaceBasis
from modpgd.kernels import (ParamAxis, assemble_diffusion,
                            assemble_neumann_load, assemble_plate,
                            cp_compress_coefficients, cp_reconstruct,
                            make_axis, rhs_at, _geo_samples_diffusion)
from modpgd.mesh import UnitSquareMesh
from modpgd import oracle


def identity_geometry():
    return GeometryParametrization(
        unit_square_patch(),
        np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float), {}, {})


def scaling_square_geometry(rng=(1.0, 3.0)):
    patch = unit_square_patch()
    coeffs = {"side": np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)}
    return GeometryParametrization(patch, np.zeros((4, 2)), coeffs,
                                   {"side": rng})


def laplacian_5point_oracle(mesh):
    """Bilinear-quad Laplacian on the unit square, assembled from the
    textbook per-element matrix (independent of the kernel code path)."""
    k_ref = np.array([[4, -1, -2, -1],
                      [-1, 4, -1, -2],
                      [-2, -1, 4, -1],
                      [-1, -2, -1, 4]], dtype=float) / 6.0
    n = mesh.n_nodes
    K = sp.lil_matrix((n, n))
    for quad in mesh.quads:
        for a in range(4):
            for b in range(4):
                K[quad[a], quad[b]] += k_ref[a, b]
    return K.tocsr()


def test_identity_geometry_gives_laplacian_single_term():
    mesh = UnitSquareMesh(6)
    axes = (make_axis("q1", -1, 1, 5), make_axis("q2", 0, 2, 4))
    op = assemble_diffusion(mesh, identity_geometry(), axes)
    assert len(op.terms) == 1
    for a in axes:
        np.testing.assert_allclose(op.terms[0].coeffs[a.label], 1.0, atol=1e-12)
    K = op.matrix_at({"q1": 0.0, "q2": 1.0})
    K_ref = laplacian_5point_oracle(mesh)
    assert abs(K - K_ref).max() < 1e-12


def test_scaled_square_matches_direct_assembly():
    mesh = UnitSquareMesh(7)
    geo = scaling_square_geometry()
    axes = (make_axis("side", 1, 3, 11),)
    op = assemble_diffusion(mesh, geo, axes, tol=1e-10)
    K_sep = op.matrix_at({"side": 2.0})
    K_dir = oracle.diffusion_matrix(mesh, geo, {"side": 2.0})
    diff = np.linalg.norm((K_sep - K_dir).toarray()) / \
        np.linalg.norm(K_dir.toarray())
    assert diff < 1e-8


def test_diffusion_symmetric_pd_and_zero_row_sums():
    mesh = UnitSquareMesh(6)
    geo = tapered_channel_geometry()
    axes = tuple(make_axis(k, 1, 3, 7) for k in ("width_in", "width_out",
                                                 "length"))
    op = assemble_diffusion(mesh, geo, axes, tol=1e-6)
    vals = {"width_in": 1.4, "width_out": 2.6, "length": 2.2}
    K = op.matrix_at(vals)
    Kd = K.toarray()
    assert np.max(np.abs(Kd - Kd.T)) < 1e-12
    # pure-Neumann row sums vanish before BC elimination
    assert np.max(np.abs(Kd.sum(axis=1))) < 1e-10
    free = np.setdiff1d(np.arange(mesh.n_nodes), op.dirichlet_dofs)
    eigs = np.linalg.eigvalsh(Kd[np.ix_(free, free)])
    assert eigs.min() > 0


def test_diffusion_curved_module_vs_oracle():
    mesh = UnitSquareMesh(6)
    geo = quarter_bend_geometry()
    axes = (make_axis("bend_radius", 1, 3, 9), make_axis("width", 1, 3, 9))
    op = assemble_diffusion(mesh, geo, axes, quad_order=3, tol=1e-8)
    for p in ({"bend_radius": 1.0, "width": 1.0},
              {"bend_radius": 2.5, "width": 1.75}):
        K_sep = op.matrix_at(p).toarray()
        K_dir = oracle.diffusion_matrix(mesh, geo, p, quad_order=3).toarray()
        assert np.linalg.norm(K_sep - K_dir) / np.linalg.norm(K_dir) < 1e-6


def test_cp_compress_constant_and_separable():
    rng = np.random.default_rng(2)
    const = np.full((10, 5, 4), 3.7)
    factors, info = cp_compress_coefficients(const, 1e-12)
    assert info["rank"] == 1 and info["converged"]
    f = np.abs(rng.standard_normal(12)) + 0.5
    g = np.abs(rng.standard_normal(6)) + 0.5
    h = np.abs(rng.standard_normal(7)) + 0.5
    T = np.einsum("i,j,k->ijk", f, g, h)
    factors, info = cp_compress_coefficients(T, 1e-12 * T.max())
    assert info["rank"] == 1
    assert np.max(np.abs(cp_reconstruct(factors) - T)) <= 1e-12 * T.max()


def test_cp_compress_metric_tensors_to_tolerance():
    mesh = UnitSquareMesh(5)
    bend_axes = [make_axis("bend_radius", 1, 3, 7), make_axis("width", 1, 3, 7)]
    samples = _geo_samples_diffusion(mesh, quarter_bend_geometry(), bend_axes,
                                     1.0, 3)
    tol = 1e-6 * np.max(np.abs(samples))
    factors, info = cp_compress_coefficients(samples, tol)
    assert info["converged"]
    assert np.max(np.abs(cp_reconstruct(factors) - samples)) <= tol

    chan_axes = [make_axis(k, 1, 3, 7) for k in ("width_in", "width_out",
                                                 "length")]
    samples = _geo_samples_diffusion(mesh, tapered_channel_geometry(),
                                     chan_axes, 1.0, 2)
    tol = 1e-6 * np.max(np.abs(samples))
    factors, info = cp_compress_coefficients(samples, tol)
    assert info["converged"]
    assert np.max(np.abs(cp_reconstruct(factors) - samples)) <= tol


def test_cp_compress_warns_when_tol_unreachable():
    rng = np.random.default_rng(0)
    T = rng.standard_normal((30, 11, 11))
    with pytest.warns(RuntimeWarning, match="unreachable"):
        _, info = cp_compress_coefficients(T, 1e-14, max_rank=3)
    assert not info["converged"]


def test_neumann_load_constant_basis_unit_edge():
    mesh = UnitSquareMesh(5)
    geo = identity_geometry()
    basis = InterfaceBasis(3)
    axes = tuple(make_axis(f"c{j}", -10, 10, 5) for j in (1, 2, 3))
    terms = assemble_neumann_load(mesh, geo, "south", basis,
                                  ("c1", "c2", "c3"), axes)
    load = rhs_at(terms, axes, {"c1": 1.0, "c2": 0.0, "c3": 0.0}, mesh.n_nodes)
    # FE edge integral of a unit flux: h/2 at corners, h inside
    expect = np.zeros(mesh.n_nodes)
    nodes = mesh.edge_nodes("south")
    expect[nodes] = mesh.h
    expect[nodes[0]] = expect[nodes[-1]] = mesh.h / 2
    np.testing.assert_allclose(load, expect, atol=1e-13)
    assert load.sum() == pytest.approx(1.0, rel=1e-12)


def test_neumann_load_zero_coefficients_and_linearity():
    mesh = UnitSquareMesh(6)
    geo = tapered_channel_geometry()
    basis = InterfaceBasis(3)
    labels = ("c1", "c2", "c3")
    axes = tuple([make_axis(k, 1, 3, 5) for k in ("width_in", "width_out",
                                                  "length")]
                 + [make_axis(lab, -100, 100, 5) for lab in labels])
    terms = assemble_neumann_load(mesh, geo, "south", basis, labels, axes)
    fixed = {"width_in": 1.5, "width_out": 2.0, "length": 2.5}
    z = rhs_at(terms, axes, {**fixed, "c1": 0.0, "c2": 0.0, "c3": 0.0},
               mesh.n_nodes)
    np.testing.assert_allclose(z, 0.0, atol=1e-12)
    rng = np.random.default_rng(3)
    a, b = rng.uniform(-50, 50, (2, 3))
    la = rhs_at(terms, axes, {**fixed, **dict(zip(labels, a))}, mesh.n_nodes)
    lb = rhs_at(terms, axes, {**fixed, **dict(zip(labels, b))}, mesh.n_nodes)
    lab_sum = rhs_at(terms, axes, {**fixed, **dict(zip(labels, a + b))},
                     mesh.n_nodes)
    np.testing.assert_allclose(la + lb, lab_sum, rtol=1e-12, atol=1e-14)


def test_neumann_total_inflow_matches_1d_quadrature():
    mesh = UnitSquareMesh(9)
    geo = tapered_channel_geometry()
    basis = InterfaceBasis(3)
    labels = ("c1", "c2", "c3")
    axes = tuple([make_axis(k, 1, 3, 5) for k in ("width_in", "width_out",
                                                  "length")]
                 + [make_axis(lab, -100, 100, 5) for lab in labels])
    terms = assemble_neumann_load(mesh, geo, "south", basis, labels, axes)
    fixed = {"width_in": 2.3, "width_out": 1.1, "length": 1.9}
    load = rhs_at(terms, axes, {**fixed, "c1": 100.0, "c2": 0.0, "c3": 0.0},
                  mesh.n_nodes)
    # total inflow: int_edge psi_1 * 100 ds over the physical south edge,
    # whose length is width_in
    assert load.sum() == pytest.approx(100.0 * fixed["width_in"], abs=1e-10)


def make_plate_axes(n=7):
    return (make_axis("span", 0.1, 0.3, n), make_axis("height", 0.1, 0.3, n),
            make_axis("thickness", 1e-3, 1e-2, n, weight_exponent=6.0),
            make_axis("youngs", 1e11, 3e11, n), make_axis("poisson", 0.2, 0.4, n))


def test_plate_operator_matches_direct_fsdt():
    mesh = UnitSquareMesh(5)
    axes = make_plate_axes()
    op = assemble_plate(mesh, axes)
    rng = np.random.default_rng(5)
    for _ in range(5):
        # power-law and rational coefficients are sampled nodally, so the
        # oracle equivalence is exact at parameter-grid nodes (Young's
        # modulus enters linearly and may sit anywhere)
        vals = {"span": rng.choice(axes[0].grid),
                "height": rng.choice(axes[1].grid),
                "thickness": rng.choice(axes[2].grid),
                "youngs": rng.uniform(1e11, 3e11),
                "poisson": rng.choice(axes[4].grid)}
        K_sep = op.matrix_at(vals).toarray()
        K_dir = oracle.plate_matrix(mesh, vals["span"], vals["height"],
                                    vals["thickness"], vals["youngs"],
                                    vals["poisson"]).toarray()
        assert np.linalg.norm(K_sep - K_dir) / np.linalg.norm(K_dir) < 1e-8


def test_plate_doubling_youngs_doubles_matrix():
    mesh = UnitSquareMesh(4)
    axes = make_plate_axes()
    op = assemble_plate(mesh, axes)
    base = {"span": 0.2, "height": 0.25, "thickness": 5.5e-3,
            "youngs": 1e11, "poisson": 0.3}
    K1 = op.matrix_at(base)
    K2 = op.matrix_at({**base, "youngs": 2e11})
    assert abs(K2 - 2 * K1).max() < 1e-8 * abs(K1).max()


def test_plate_symmetric_load_symmetric_deflection():
    # symmetric plate clamped south, equal loads on west and east edges:
    # the deflection must be symmetric about the vertical midline
    mesh = UnitSquareMesh(9)
    span, height, h, E, nu = 0.2, 0.2, 5e-3, 2e11, 0.3
    K = oracle.plate_matrix(mesh, span, height, h, E, nu)
    basis = InterfaceBasis(3)
    geo = GeometryParametrization(
        unit_square_patch(),
        np.array([[0, 0], [span, 0], [0, height], [span, height]]), {}, {})
    load = (oracle.flux_load(mesh, geo, {}, "west", basis, [1e4, 0, 0], 0, 3)
            + oracle.flux_load(mesh, geo, {}, "east", basis, [1e4, 0, 0], 0, 3))
    clamped = np.concatenate([mesh.edge_nodes("south") * 3 + c
                              for c in range(3)])
    u = oracle.solve_dirichlet(K, load, clamped)
    w = u[0::3].reshape(mesh.n, mesh.n)
    np.testing.assert_allclose(w, w[:, ::-1], atol=1e-8 * np.abs(w).max())


def test_plate_invalid_axes_rejected():
    mesh = UnitSquareMesh(4)
    with pytest.raises(ValueError, match="span"):
        assemble_plate(mesh, (make_axis("height", 0.1, 0.3, 5),))
