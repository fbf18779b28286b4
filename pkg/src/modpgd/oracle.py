"""Direct FEM solvers at fixed parameters: per-patch and monolithic.

This is the ground-truth path for every comparison with the separated
surrogates.  It shares the element type and quadrature rules with the
kernels (so discrepancies isolate model-reduction error) but assembles the
discrete systems directly from the integrand at the given parameter point:
no coefficient separation, no CP compression, no PGD.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .interface import edge_load_vectors
from .kernels import SHEAR_CORRECTION, _scatter
from .problem import edge_coefficient_values
from .validation import WellPosednessError


def diffusion_matrix(mesh, geometry, p_geo, conductivity=1.0, quad_order=2):
    """Directly assembled conduction stiffness on the mapped patch."""
    quad = mesh.quadrature(quad_order)
    J, det = geometry.jacobian(p_geo, quad.points)
    Jinv = np.linalg.inv(J)
    C = conductivity * np.einsum("qik,qjk,q->qij", Jinv, Jinv, det)
    E, Q = mesh.n_elements, quad.n_gauss
    C = C.reshape(E, Q, 2, 2)
    elem = np.einsum("q,eqij,qai,qbj->eab", quad.weights, C, quad.grad, quad.grad)
    return _scatter(mesh, elem)


def edge_metric(mesh, geometry, p_geo, edge):
    """Physical stretch |dx/ds| at the edge quadrature points."""
    eq = mesh.edge_quadrature(edge)
    J, _ = geometry.jacobian(p_geo, eq.points)
    return np.linalg.norm(J[:, :, eq.axis], axis=1)


def flux_load(mesh, geometry, p_geo, edge, basis, coefficients, component=0,
              n_components=1):
    """Direct load vector for a profile sum_j c_j psi_j imposed on one edge."""
    m = edge_metric(mesh, geometry, p_geo, edge)
    vecs = edge_load_vectors(basis, mesh, edge, m, component, n_components)
    return np.asarray(coefficients, dtype=float) @ vecs


def plate_matrix(mesh, span, height, thickness, youngs, poisson,
                 quad_order=2, shear_quad_order=1):
    """Directly assembled FSDT plate stiffness on a span x height rectangle.

    Independent B-matrix formulation in physical coordinates; same selective
    reduced integration as the separated kernel (full rule on bending,
    reduced on shear, correction factor 5/6).
    """
    Db = youngs * thickness ** 3 / 12.0 / (1 - poisson ** 2) * np.array(
        [[1.0, poisson, 0.0], [poisson, 1.0, 0.0],
         [0.0, 0.0, (1 - poisson) / 2.0]])
    Ds = SHEAR_CORRECTION * youngs * thickness / (2 * (1 + poisson)) * np.eye(2)

    def element_matrix(quad, D, strain):
        elem = np.zeros((12, 12))
        for q in range(quad.n_gauss):
            dNx = quad.grad[q, :, 0] / span
            dNy = quad.grad[q, :, 1] / height
            N = quad.shape[q]
            B = strain(N, dNx, dNy)
            elem += quad.weights[q] * span * height * (B.T @ D @ B)
        return elem

    def bending(N, dNx, dNy):
        B = np.zeros((3, 12))
        B[0, 2::3] = dNx            # kappa_xx = d theta_y / dx
        B[1, 1::3] = -dNy           # kappa_yy = -d theta_x / dy
        B[2, 2::3] = dNy            # kappa_xy = d theta_y/dy - d theta_x/dx
        B[2, 1::3] = -dNx
        return B

    def shear(N, dNx, dNy):
        B = np.zeros((2, 12))
        B[0, 0::3] = dNx            # gamma_xz = dw/dx + theta_y
        B[0, 2::3] = N
        B[1, 0::3] = dNy            # gamma_yz = dw/dy - theta_x
        B[1, 1::3] = -N
        return B

    elem = element_matrix(mesh.quadrature(quad_order), Db, bending)
    elem = elem + element_matrix(mesh.quadrature(shear_quad_order), Ds, shear)
    mats = np.broadcast_to(elem, (mesh.n_elements, 12, 12))
    return _scatter(mesh, np.ascontiguousarray(mats), n_components=3)


def solve_dirichlet(K, rhs, dirichlet_dofs, value=0.0):
    """Sparse symmetric solve with fixed-value DOFs eliminated."""
    n = K.shape[0]
    dirichlet_dofs = np.unique(np.asarray(dirichlet_dofs, dtype=int))
    if dirichlet_dofs.size == 0:
        raise WellPosednessError("no Dirichlet data; the system is singular")
    free = np.setdiff1d(np.arange(n), dirichlet_dofs)
    u = np.full(n, 0.0)
    u[dirichlet_dofs] = value
    rhs_free = rhs[free] - K[free][:, dirichlet_dofs] @ u[dirichlet_dofs]
    u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs_free)
    return u


def compare(field_a, field_b, mask=None):
    """{relative L2, max abs} difference between two nodal fields."""
    a = np.asarray(field_a, dtype=float).ravel()
    b = np.asarray(field_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"field shapes differ: {a.shape} vs {b.shape}")
    if mask is not None:
        a, b = a[mask], b[mask]
    diff = a - b
    denom = np.linalg.norm(b)
    rel = np.linalg.norm(diff) / denom if denom > 0 else np.linalg.norm(diff)
    return {"relative_l2": float(rel), "max_abs": float(np.max(np.abs(diff)))
            if diff.size else 0.0}


# ---------------------------------------------------------------------------
# Problem-level solvers (operate on problem.Problem structures)
# ---------------------------------------------------------------------------

@dataclass
class MonolithicProblem:
    """Glued global mesh over all placed modules at fixed parameters.

    Interface nodes are shared (one DOF per physical node); module meshes
    conform by construction, so gluing is exact coordinate matching.
    """

    problem: object
    params: dict
    node_maps: list      # per module: local node id -> global node id
    coords: np.ndarray   # (n_global_nodes, 2) physical coordinates
    n_components: int

    @property
    def n_nodes(self):
        return self.coords.shape[0]


def _module_coords(problem, module, params, mesh):
    geo = problem.references[module.reference].geometry
    geo_values = module.geometry_values(params)
    placement = module.placement.resolve(params)
    return placement.place(geo.map(geo_values, mesh.nodes))


def build_monolithic(problem, params, mesh):
    """Merge all module meshes into one global node numbering."""
    n_comp = problem.n_components
    key_of = {}
    coords = []
    node_maps = []
    for module in problem.modules:
        xy = _module_coords(problem, module, params, mesh)
        local_map = np.empty(mesh.n_nodes, dtype=int)
        for i, pt in enumerate(xy):
            key = (round(float(pt[0]), 9), round(float(pt[1]), 9))
            if key not in key_of:
                key_of[key] = len(coords)
                coords.append(pt)
            local_map[i] = key_of[key]
        node_maps.append(local_map)
    return MonolithicProblem(problem, params, node_maps,
                             np.asarray(coords), n_comp)


def solve_monolithic(problem, params, mesh):
    """Direct sparse solve of the glued full problem at fixed parameters.

    Returns (mono, u) with u the flat global DOF vector (component-major per
    node, matching the module DOF layout).
    """
    mono = build_monolithic(problem, params, mesh)
    nc = mono.n_components
    n = mono.n_nodes * nc
    K = sp.csr_matrix((n, n))
    rhs = np.zeros(n)
    dirichlet = []
    dir_value = 0.0
    for module, node_map in zip(problem.modules, mono.node_maps):
        ref = problem.references[module.reference]
        geo_values = module.geometry_values(params)
        if ref.physics == "heat":
            Km = diffusion_matrix(mesh, ref.geometry, geo_values,
                                  ref.conductivity, ref.quad_order)
        else:
            Km = plate_matrix(mesh,
                              module.axis_value(ref.material["span"], params),
                              module.axis_value(ref.material["height"], params),
                              module.axis_value(ref.material["thickness"], params),
                              module.axis_value(ref.material["youngs"], params),
                              module.axis_value(ref.material["poisson"], params),
                              ref.quad_order, ref.shear_quad_order)
        dof_map = (np.repeat(node_map * nc, nc)
                   + np.tile(np.arange(nc), node_map.size))
        Km = Km.tocoo()
        K = K + sp.coo_matrix((Km.data, (dof_map[Km.row], dof_map[Km.col])),
                              shape=(n, n)).tocsr()
        for edge, cond in ref.edges.items():
            if cond.kind == "dirichlet":
                nodes = node_map[mesh.edge_nodes(edge)]
                for c in cond.components:
                    dirichlet.append(nodes * nc + c)
                dir_value = cond.value
            elif cond.kind == "flux":
                coeffs = edge_coefficient_values(problem, module, edge, params)
                if coeffs is None:
                    continue  # interface edge: internal, no imposed data
                load = flux_load(mesh, ref.geometry, geo_values, edge,
                                 problem.basis, coeffs, cond.component, nc)
                np.add.at(rhs, dof_map, load)
    if not dirichlet:
        raise WellPosednessError("monolithic problem has no Dirichlet data")
    dirichlet = np.unique(np.concatenate(dirichlet))
    u = solve_dirichlet(K, rhs, dirichlet, dir_value)
    return mono, u


def solve_patch(problem, module_name, params, interface_coeffs, mesh):
    """Direct solve of one module with explicit interface coefficients.

    interface_coeffs: {interface name: R-vector} in the global interface
    orientation; the module's own binding signs are applied internally.
    Returns the flat local DOF vector.
    """
    module = problem.module(module_name)
    ref = problem.references[module.reference]
    geo_values = module.geometry_values(params)
    nc = problem.n_components
    if ref.physics == "heat":
        K = diffusion_matrix(mesh, ref.geometry, geo_values, ref.conductivity,
                             ref.quad_order)
    else:
        K = plate_matrix(mesh,
                         module.axis_value(ref.material["span"], params),
                         module.axis_value(ref.material["height"], params),
                         module.axis_value(ref.material["thickness"], params),
                         module.axis_value(ref.material["youngs"], params),
                         module.axis_value(ref.material["poisson"], params),
                         ref.quad_order, ref.shear_quad_order)
    rhs = np.zeros(K.shape[0])
    dirichlet = []
    dir_value = 0.0
    for edge, cond in ref.edges.items():
        if cond.kind == "dirichlet":
            nodes = mesh.edge_nodes(edge)
            for c in cond.components:
                dirichlet.append(nodes * nc + c)
            dir_value = cond.value
        elif cond.kind == "flux":
            coeffs = edge_coefficient_values(problem, module, edge, params,
                                             interface_coeffs)
            rhs += flux_load(mesh, ref.geometry, geo_values, edge,
                             problem.basis, coeffs, cond.component, nc)
    return solve_dirichlet(K, rhs, np.concatenate(dirichlet), dir_value)
