"""Reduced interface models: coefficient bases on interface edges, trace
extraction from particularized fields, jump norms and weak flux recovery.

Interface boundary data is represented by R coefficients on a fixed function
basis over the normalized edge coordinate; the default family is the shifted
Legendre triple {1, 2s-1, 6s^2-6s+1}, which keeps the interface mass matrix
well conditioned.  Traces are ordered by a global per-interface orientation
fixed in the catalog, so the two sides of a conforming interface align
index by index.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import eval_sh_legendre


@dataclass(frozen=True)
class InterfaceBasis:
    """R polynomial profiles on the normalized edge coordinate s in [0, 1]."""

    count: int = 3
    kind: str = "legendre"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one basis function")
        if self.kind != "legendre":
            raise ValueError(f"unknown interface basis kind {self.kind!r}")

    def evaluate(self, s):
        """Basis values at edge coordinates s; shape (len(s), count)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return np.column_stack([eval_sh_legendre(j, s) for j in range(self.count)])

    def profile(self, coefficients, s):
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.size != self.count:
            raise ValueError(f"expected {self.count} coefficients, got {coefficients.size}")
        return self.evaluate(s) @ coefficients

    def gram_condition(self, s):
        """Condition number of the basis Gram matrix on a trace grid."""
        V = self.evaluate(s)
        return float(np.linalg.cond(V.T @ V))


@dataclass(frozen=True)
class InterfaceCoefficients:
    """Reduced boundary data on one interface (flux/force profile weights)."""

    interface: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite coefficients on {self.interface!r}")
        object.__setattr__(self, "values", v)


def trace(values, mesh, edge, n_components=1):
    """Nodal values of a (fully particularized) field along one edge.

    values is the flat DOF vector (component-major per node for multi-field
    problems); the result is ordered by the global interface orientation,
    which coincides with ascending edge coordinate for every built-in
    problem.  For multi-component fields the per-component traces are stacked
    (component-major), matching what `jump` expects.
    """
    values = np.asarray(values, dtype=float).ravel()
    nodes = mesh.edge_nodes(edge)
    if n_components == 1:
        return values[nodes]
    return np.concatenate([values[nodes * n_components + c]
                           for c in range(n_components)])


def jump(trace_l, trace_m):
    """Euclidean norm of the trace difference across an interface."""
    a = np.asarray(trace_l, dtype=float).ravel()
    b = np.asarray(trace_m, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"trace lengths differ: {a.size} vs {b.size}")
    return float(np.linalg.norm(a - b))


def edge_mass_matrix(basis, mesh, edge, metric):
    """Interface mass matrix M_jk = int psi_j psi_k m(s) ds on the edge.

    metric is the physical edge stretch |dx/ds| sampled at the edge
    quadrature points (constant arrays are broadcast).
    """
    eq = mesh.edge_quadrature(edge)
    psi = basis.evaluate(eq.s)
    m = np.broadcast_to(np.asarray(metric, dtype=float), eq.s.shape)
    w = np.tile(eq.weights, eq.segments.shape[0])
    return (psi * (w * m)[:, None]).T @ psi


def edge_load_vectors(basis, mesh, edge, metric, component=0, n_components=1):
    """FE load vectors b_j[i] = int psi_j N_i m ds, one per basis function.

    Returns shape (count, n_dofs); rows are the discrete representations of
    the basis profiles used both for Neumann loads and for flux recovery.
    """
    eq = mesh.edge_quadrature(edge)
    psi = basis.evaluate(eq.s)                      # (S*G, R)
    m = np.broadcast_to(np.asarray(metric, dtype=float), eq.s.shape)
    G = eq.weights.size
    S = eq.segments.shape[0]
    out = np.zeros((basis.count, mesh.n_nodes * n_components))
    contrib = (psi * m[:, None]).reshape(S, G, basis.count)
    vals = np.einsum("g,ga,sgj->sja", eq.weights, eq.shape, contrib)
    for a in range(2):
        dofs = eq.segments[:, a] * n_components + component
        for j in range(basis.count):
            np.add.at(out[j], dofs, vals[:, j, a])
    return out


def fe_edge_mass(mesh, edge, metric):
    """Tridiagonal FE mass matrix int N_i N_j m ds on one edge."""
    eq = mesh.edge_quadrature(edge)
    S = eq.segments.shape[0]
    G = eq.weights.size
    m = np.broadcast_to(np.asarray(metric, dtype=float), eq.s.shape)
    vals = np.einsum("g,ga,gb,sg->sab", eq.weights, eq.shape, eq.shape,
                     m.reshape(S, G))
    n = S + 1
    M = np.zeros((n, n))
    for seg in range(S):
        M[seg:seg + 2, seg:seg + 2] += vals[seg]
    return M


def extract_flux(field_values, operator_matrix, internal_load, mesh, edge,
                 basis, metric, component=0, n_components=1,
                 constrained_dofs=None):
    """Weak (residual-consistent) boundary flux coefficients on one edge.

    The discrete residual r = K u - f_internal (f_internal excludes any
    Neumann data imposed on the target edge itself) is the weak form of the
    outward normal flux through the edge.  A consistent nodal flux density is
    recovered by solving the FE edge mass system, then projected onto the
    interface basis through M c = g with g_j the boundary integral of the
    density against psi_j.  Edge nodes listed in constrained_dofs (Dirichlet
    corners) carry wall reactions in their residual, so their density value
    is replaced by quadratic extrapolation from the free edge nodes.
    Linear in the field.
    """
    u = np.asarray(field_values, dtype=float).ravel()
    r = operator_matrix @ u
    if internal_load is not None:
        r = r - np.asarray(internal_load, dtype=float).ravel()
    nodes = mesh.edge_nodes(edge)
    dofs = nodes * n_components + component
    s_nodes = mesh.nodes[nodes][:, mesh.edge_quadrature(edge).axis]

    M_fe = fe_edge_mass(mesh, edge, metric)
    n = nodes.size
    if constrained_dofs is not None and len(constrained_dofs):
        tainted = np.isin(dofs, np.asarray(constrained_dofs, dtype=int))
    else:
        tainted = np.zeros(n, dtype=bool)
    free = ~tainted
    if free.sum() < max(basis.count, 3):
        raise ValueError("too few unconstrained nodes on the edge for flux "
                         "recovery")
    # expansion matrix: density at tainted nodes extrapolated (quadratic)
    # from the three nearest free nodes
    E = np.zeros((n, int(free.sum())))
    free_idx = np.flatnonzero(free)
    E[free_idx, np.arange(free_idx.size)] = 1.0
    for i in np.flatnonzero(tainted):
        near = free_idx[np.argsort(np.abs(s_nodes[free_idx] - s_nodes[i]))[:3]]
        V = np.vander(s_nodes[near], 3)
        coef = np.linalg.solve(V, np.eye(3))
        E[i, np.searchsorted(free_idx, near)] = \
            np.vander([s_nodes[i]], 3)[0] @ coef
    A = M_fe @ E
    q_free, *_ = np.linalg.lstsq(A[free_idx], r[dofs][free_idx], rcond=None)
    q_nodal = E @ q_free

    eq = mesh.edge_quadrature(edge)
    m = np.broadcast_to(np.asarray(metric, dtype=float), eq.s.shape)
    psi = basis.evaluate(eq.s)
    S, G = eq.segments.shape[0], eq.weights.size
    seg_vals = q_nodal[np.arange(S)[:, None] + np.array([0, 1])]  # (S, 2)
    dens = np.einsum("ga,sa->sg", eq.shape, seg_vals)
    g = np.einsum("sg,sgj->j", dens * m.reshape(S, G) * eq.weights[None, :],
                  psi.reshape(S, G, basis.count))
    M = edge_mass_matrix(basis, mesh, edge, metric)
    return np.linalg.solve(M, g)
