import numpy as np
import pytest

from modpgd import oracle
from modpgd.interface import InterfaceBasis
from modpgd.kernels import (OperatorTerm, RhsTerm, SeparatedOperator,
                            assemble_diffusion, assemble_neumann_load,
                            make_axis, rhs_at)
from modpgd.mesh import UnitSquareMesh
from modpgd.pgd import PgdSettings, particularize_all, solve
from modpgd.problem import assemble_reference, lshape_problem
from modpgd.validation import WellPosednessError


def identity_heat_operator(mesh, axes, dirichlet_edges=("west",)):
    from modpgd.geometry import GeometryParametrization, unit_square_patch
    geo = GeometryParametrization(
        unit_square_patch(),
        np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float), {}, {})
    return geo, assemble_diffusion(mesh, geo, axes,
                                   dirichlet_edges=dirichlet_edges)


def test_zero_rhs_gives_rank_zero():
    mesh = UnitSquareMesh(5)
    axes = (make_axis("k", 1, 3, 5),)
    _, op = identity_heat_operator(mesh, axes)
    tf = solve(op, [], PgdSettings(max_rank=10))
    assert tf.rank == 0
    assert tf.converged
    assert particularize_all(tf.solution, {"k": 2.0}).max() == 0.0


def test_no_dirichlet_raises_wellposedness():
    mesh = UnitSquareMesh(5)
    axes = (make_axis("k", 1, 3, 5),)
    _, op = identity_heat_operator(mesh, axes, dirichlet_edges=())
    with pytest.raises(WellPosednessError):
        solve(op, [], PgdSettings(max_rank=5))


def test_conductivity_scaling_problem():
    # operator k * K0 with k in [1, 3] treated as a coordinate; the solution
    # must scale like u(., k) = u(., 1) / k.  The test values sit on grid
    # nodes so the piecewise-linear parametric interpolation is exact and the
    # comparison isolates the solver itself.
    mesh = UnitSquareMesh(9)
    k_axis = make_axis("k", 1, 3, 9)
    geo, base = identity_heat_operator(mesh, (k_axis,))
    term = base.terms[0]
    op = SeparatedOperator((k_axis,), [OperatorTerm(term.matrix,
                                                    {"k": k_axis.grid.copy()})],
                           base.dirichlet_dofs, 0.0)
    basis = InterfaceBasis(3)
    load_vec = oracle.flux_load(mesh, geo, {}, "south", basis, [5.0, 1.0, 0.0])
    rhs = [RhsTerm(load_vec, {"k": np.ones(k_axis.size)})]
    tf = solve(op, rhs, PgdSettings(max_rank=20, stop_ratio=1e-8))
    assert tf.converged
    K0 = term.matrix
    u1 = oracle.solve_dirichlet(K0, load_vec, op.dirichlet_dofs)
    for k in (1.0, 1.5, 2.0, 2.5, 3.0):
        u_pgd = particularize_all(tf.solution, {"k": k})
        err = np.linalg.norm(u_pgd - u1 / k) / np.linalg.norm(u1 / k)
        assert err <= 1e-4


def small_lshape(mesh_nodes=9, grid_points=9, max_rank=45):
    return lshape_problem(mesh_nodes=mesh_nodes, grid_points=grid_points,
                          pgd=PgdSettings(max_rank=max_rank, polish_sweeps=12),
                          operator_tol=1e-5)


def test_channel_module_fidelity_vs_direct():
    problem = small_lshape()
    mesh = UnitSquareMesh(problem.mesh_nodes)
    ref = problem.references["channel"]
    op, rhs = assemble_reference(ref, mesh, problem.basis, problem.operator_tol)
    tf = solve(op, rhs, problem.pgd)
    rng = np.random.default_rng(20)
    geo_labels = set(ref.geometry.coeffs)
    errs = []
    for _ in range(6):
        # geometry values on grid nodes: at unit-test scale the grids are
        # coarse and off-node parametric interpolation error would dominate
        values = {}
        for a in ref.axes:
            x = rng.uniform(a.grid[0], a.grid[-1])
            values[a.label] = float(a.grid[np.argmin(np.abs(a.grid - x))]) \
                if a.label in geo_labels else x
        u_pgd = particularize_all(tf.solution, values)
        K = oracle.diffusion_matrix(mesh, ref.geometry, values,
                                    quad_order=ref.quad_order)
        load = np.zeros(mesh.n_nodes)
        for edge, cond in ref.edges.items():
            if cond.kind == "flux":
                coeffs = [values[lab] for lab in cond.labels]
                load += oracle.flux_load(mesh, ref.geometry, values, edge,
                                         problem.basis, coeffs)
        u_dir = oracle.solve_dirichlet(K, load, op.dirichlet_dofs)
        errs.append(np.linalg.norm(u_pgd - u_dir) / np.linalg.norm(u_dir))
    assert max(errs) <= 0.02


def test_corner_module_sweeps_and_energy_monotone():
    problem = small_lshape()
    mesh = UnitSquareMesh(problem.mesh_nodes)
    ref = problem.references["bend"]
    op, rhs = assemble_reference(ref, mesh, problem.basis, problem.operator_tol)
    tf = solve(op, rhs, problem.pgd)
    # regression bound from bring-up: the typical fixed point settles well
    # within 25 sweeps (late low-magnitude terms may run to the 50 cap)
    assert np.median(tf.sweep_history) <= 25
    e = np.array(tf.energy_history)
    slack = 1e-9 * max(abs(e[-1]), 1.0)
    assert np.all(np.diff(e) <= slack)


def test_superposition_identity_in_flux_coefficients():
    problem = small_lshape()
    mesh = UnitSquareMesh(problem.mesh_nodes)
    ref = problem.references["channel"]
    op, rhs = assemble_reference(ref, mesh, problem.basis, problem.operator_tol)
    tf = solve(op, rhs, problem.pgd)
    rng = np.random.default_rng(77)
    coeff_labels = [lab for e in ("south", "north")
                    for lab in ref.edges[e].labels]
    geo = {a.label: rng.uniform(a.grid[0], a.grid[-1])
           for a in ref.axes if a.label not in coeff_labels}
    for _ in range(5):
        a = rng.uniform(-50, 50, 6)
        b = rng.uniform(-50, 50, 6)
        def at(c):
            vals = dict(geo)
            vals.update(dict(zip(coeff_labels, c)))
            return particularize_all(tf.solution, vals)
        defect = at(a + b) - at(a) - at(b) + at(np.zeros(6))
        norm = np.linalg.norm(at(a + b))
        # 4 evaluation points, each within the accepted PGD fidelity level
        assert np.linalg.norm(defect) <= 4 * 0.02 * max(norm, 1.0)


def test_dirichlet_offset_constant_lift():
    # nonzero fixed wall temperature: solve with zero loads must return the
    # wall value everywhere
    problem = lshape_problem(mesh_nodes=7, grid_points=5,
                             pgd=PgdSettings(max_rank=10),
                             dirichlet_value=25.0, operator_tol=1e-5)
    mesh = UnitSquareMesh(problem.mesh_nodes)
    ref = problem.references["channel"]
    op, rhs = assemble_reference(ref, mesh, problem.basis, problem.operator_tol)
    assert op.dirichlet_value == 25.0
