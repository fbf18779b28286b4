r"""Parameter-separated weak-form operators and loads on the reference patch.

Two physics kernels are provided:

* 2D steady heat conduction: int grad(u) . K_geo grad(v) dxi with
  K_geo = k J^-1 J^-T det J pulled back from the parametric geometry; the
  dependence on geometric parameters is non-affine, so the sampled
  coefficient tensor is compressed into CP (separated) form first.
* first-order shear-deformation plate bending on rectangles (kinematics
  w, theta_x, theta_y): the metric dependence on the rectangle dimensions is
  a product of powers, so every stiffness contribution is exactly rank-one;
  shear terms use selective reduced integration against locking.

Boundary flux / transverse force loads are expanded on an interface basis,
and each profile coefficient becomes a dedicated parametric axis whose
factor is the identity ramp over its grid — loads are exactly linear in
every coefficient.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .interface import InterfaceBasis, edge_load_vectors
from .separated import interp_weights
from .validation import check_grid

SHEAR_CORRECTION = 5.0 / 6.0


# ---------------------------------------------------------------------------
# Parametric axes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamAxis:
    """One parametric coordinate: sample grid plus integration weights."""

    label: str
    grid: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        grid = check_grid(self.grid, self.label)
        w = self.weights
        if w is None:
            w = trapezoid_weights(grid)
        w = np.asarray(w, dtype=float)
        if w.shape != grid.shape or np.any(w <= 0):
            raise ValueError(f"axis {self.label!r}: bad weight vector")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", w / w.sum())

    @property
    def size(self):
        return self.grid.size


def trapezoid_weights(grid):
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def make_axis(label, lo, hi, n, weight_exponent=0.0, spacing="uniform"):
    """Sample axis on [lo, hi].

    spacing "log" places the nodes geometrically, which equalizes the
    relative piecewise-linear interpolation error for power-law parameter
    dependences (geometric lengths, thickness); it needs lo > 0.
    weight_exponent rescales the measure by (g / g_max)^e, used to equalize
    relative accuracy when the solution amplitude varies strongly along the
    axis (e.g. plate thickness).
    """
    if spacing == "log":
        if lo <= 0:
            raise ValueError("log spacing needs a positive axis")
        grid = np.geomspace(lo, hi, n)
    elif spacing == "uniform":
        grid = np.linspace(lo, hi, n)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    w = trapezoid_weights(grid)
    if weight_exponent:
        if lo <= 0:
            raise ValueError("weight_exponent needs a positive axis")
        w = w * (grid / grid[-1]) ** weight_exponent
    return ParamAxis(label, grid, w)


# ---------------------------------------------------------------------------
# Separated operator containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorTerm:
    matrix: sp.csr_matrix
    coeffs: dict  # axis label -> (n_grid,) coefficient vector


@dataclass(frozen=True)
class RhsTerm:
    vector: np.ndarray
    coeffs: dict


@dataclass
class PlateKinematics:
    """Mid-plane plate unknowns per node: deflection and the two rotations."""

    components: tuple = ("w", "theta_x", "theta_y")

    @property
    def n_components(self):
        return len(self.components)

    def n_dofs(self, n_nodes):
        return self.n_components * n_nodes


@dataclass
class SeparatedOperator:
    """Sum of (sparse spatial matrix) x (one coefficient vector per axis)."""

    axes: tuple
    terms: list
    dirichlet_dofs: np.ndarray
    dirichlet_value: float = 0.0
    n_components: int = 1

    def __post_init__(self):
        dims = {t.matrix.shape for t in self.terms}
        if len(dims) > 1:
            raise ValueError(f"spatial matrices disagree in shape: {dims}")
        labels = [a.label for a in self.axes]
        for t in self.terms:
            if sorted(t.coeffs) != sorted(labels):
                raise ValueError("every term needs exactly one coefficient vector "
                                 f"per axis; got {sorted(t.coeffs)} vs {sorted(labels)}")
            for a in self.axes:
                if np.asarray(t.coeffs[a.label]).shape != a.grid.shape:
                    raise ValueError(f"coefficient length mismatch on axis {a.label!r}")
        self.dirichlet_dofs = np.unique(np.asarray(self.dirichlet_dofs, dtype=int))

    @property
    def n_dofs(self):
        return self.terms[0].matrix.shape[0]

    def axis(self, label):
        for a in self.axes:
            if a.label == label:
                return a
        raise KeyError(label)

    def matrix_at(self, values):
        """Particularize the operator at one parameter point (all axes bound)."""
        out = None
        for t in self.terms:
            c = 1.0
            for a in self.axes:
                i, w = interp_weights(a.grid, values[a.label], a.label)
                vec = t.coeffs[a.label]
                c *= (1 - w) * vec[i] + w * vec[i + 1]
            out = c * t.matrix if out is None else out + c * t.matrix
        return out.tocsr()


def rhs_at(rhs_terms, axes, values, n_dofs):
    """Particularize separated RHS terms at one parameter point."""
    out = np.zeros(n_dofs)
    for t in rhs_terms:
        c = 1.0
        for a in axes:
            i, w = interp_weights(a.grid, values[a.label], a.label)
            vec = t.coeffs[a.label]
            c *= (1 - w) * vec[i] + w * vec[i + 1]
        out += c * t.vector
    return out


# ---------------------------------------------------------------------------
# CP compression of sampled coefficient tensors
# ---------------------------------------------------------------------------

def _contract_except(T, vectors, skip):
    res = T
    for ax in range(T.ndim - 1, -1, -1):
        if ax == skip:
            continue
        res = np.tensordot(res, vectors[ax], axes=([ax], [0]))
    return res


def _khatri_rao(factors, skip):
    kr = None
    for ax, V in enumerate(factors):
        if ax == skip:
            continue
        if kr is None:
            kr = V.T.copy()
        else:
            kr = (kr[:, None, :] * V.T[None, :, :]).reshape(-1, V.shape[0])
    return kr


def _cp_als(T, tol, max_rank, max_sweeps=40, refine_sweeps=2,
            error_hook=None):
    """Greedy CP with joint ALS refinement after every new term.

    error_hook(factors) may override the stopping error (used by the
    two-stage scheme to measure the error on the full tensor rather than on
    the reduced core).  Returns (factors, max_error, converged).
    """
    nd = T.ndim
    res = T.copy()
    factors = [np.zeros((0, n)) for n in T.shape]

    def rank_one(resid):
        vecs = [np.ones(n) for n in resid.shape]
        vecs[0] = _contract_except(resid, vecs, 0)
        prev = np.inf
        for _ in range(max_sweeps):
            for ax in range(nd):
                denom = 1.0
                for g in range(nd):
                    if g != ax:
                        denom *= vecs[g] @ vecs[g]
                if denom == 0.0:
                    return None
                vecs[ax] = _contract_except(resid, vecs, ax) / denom
                if ax != 0:
                    nrm = np.linalg.norm(vecs[ax])
                    if nrm == 0.0:
                        return None
                    vecs[0] = vecs[0] * nrm
                    vecs[ax] = vecs[ax] / nrm
            mag = np.linalg.norm(vecs[0])
            if abs(mag - prev) <= 1e-13 * max(mag, 1.0):
                break
            prev = mag
        return vecs

    def refine(factors):
        R = factors[0].shape[0]
        if R < 2:
            return factors
        for _ in range(refine_sweeps):
            for ax in range(nd):
                gram = np.ones((R, R))
                for g in range(nd):
                    if g != ax:
                        gram *= factors[g] @ factors[g].T
                kr = _khatri_rao(factors, ax)
                unfold = np.moveaxis(T, ax, 0).reshape(T.shape[ax], -1)
                rhs = unfold @ kr
                reg = 1e-13 * np.trace(gram) / R
                factors[ax] = np.linalg.solve(gram + reg * np.eye(R), rhs.T)
        return factors

    err = float(np.max(np.abs(res))) if error_hook is None else \
        error_hook(factors)
    converged = err <= tol
    while not converged and factors[0].shape[0] < max_rank:
        vecs = rank_one(res)
        if vecs is None:
            break
        factors = [np.vstack([F, v[None, :]]) for F, v in zip(factors, vecs)]
        factors = refine(factors)
        res = T - cp_reconstruct(factors)
        err = float(np.max(np.abs(res)))
        if error_hook is not None:
            err = error_hook(factors)
        converged = err <= tol
    return factors, err, converged


def cp_compress_coefficients(samples, tol, max_rank=120, max_sweeps=40):
    """Separate a sampled coefficient tensor into CP form.

    samples has shape (M, n_1, ..., n_G): one leading axis for the spatial
    samples (quadrature points, possibly stacked per tensor component) and
    one trailing axis per geometric parameter grid.  Returns
    (factors, info): factors[0] is (R, M), factors[g] is (R, n_g); info
    reports the achieved max-norm error and rank.  tol is absolute in max
    norm.  When tol is unreachable within max_rank a warning is emitted and
    the best achieved decomposition is returned.

    For large spatial axes the parameter-side Gram spectrum is used to split
    off an exact low-rank space/parameter separation first; the CP-ALS then
    runs on the small core tensor while the stopping error is still measured
    on the full input.
    """
    T = np.asarray(samples, dtype=float)
    scale = float(np.max(np.abs(T))) if T.size else 0.0
    if scale == 0.0 or scale <= tol:
        factors = [np.zeros((0, n)) for n in T.shape]
        return factors, {"rank": 0, "max_error": scale, "converged": True}
    param_shape = T.shape[1:]
    P = int(np.prod(param_shape)) if param_shape else 1
    M = T.shape[0]

    if param_shape and P <= 6000 and M > 4 * P:
        # two-stage: exact SVD split between space and parameters (via the
        # small parameter-side Gram), then CP-ALS on the sigma-weighted core
        T0 = T.reshape(M, P)
        lam, Z = np.linalg.eigh(T0.T @ T0)
        lam, Z = lam[::-1], Z[:, ::-1]
        sig = np.sqrt(np.maximum(lam, 0.0))
        tail = np.sqrt(np.maximum(np.cumsum(lam[::-1])[::-1], 0.0))
        r = int(np.searchsorted(-tail, -0.05 * tol)) + 1
        r = max(min(r, P, M), 1)
        Z, sig = Z[:, :r], np.maximum(sig[:r], 1e-300)
        U = (T0 @ Z) / sig                            # (M, r), orthonormal-ish
        core = (sig[:, None] * Z.T).reshape((r,) + param_shape)

        def full_error(core_factors):
            if core_factors[0].shape[0] == 0:
                return scale
            spatial = U @ core_factors[0].T           # (M, R)
            kr = _khatri_rao(core_factors, 0)         # (P, R)
            return float(np.max(np.abs(T0 - spatial @ kr.T)))

        core_factors, err, converged = _cp_als(core, tol, max_rank, max_sweeps,
                                               error_hook=full_error)
        factors = [(U @ core_factors[0].T).T] + core_factors[1:]
    else:
        factors, err, converged = _cp_als(T, tol, max_rank, max_sweeps)

    if not converged:
        warnings.warn(
            f"cp_compress_coefficients: tol {tol:.2e} unreachable within rank "
            f"{max_rank}; best achieved {err:.2e}", RuntimeWarning)
    return factors, {"rank": factors[0].shape[0], "max_error": err,
                     "converged": converged}


def cp_reconstruct(factors):
    out = None
    for r in range(factors[0].shape[0]):
        term = factors[0][r]
        for F in factors[1:]:
            term = np.multiply.outer(term, F[r])
        out = term if out is None else out + term
    if out is None:
        out = np.zeros([F.shape[1] for F in factors])
    return out


# ---------------------------------------------------------------------------
# Assembly helpers
# ---------------------------------------------------------------------------

def _element_dofs(mesh, n_components=1):
    if n_components == 1:
        return mesh.quads
    reps = np.repeat(mesh.quads * n_components, n_components, axis=1)
    return reps + np.tile(np.arange(n_components), 4)


def _scatter(mesh, elem_mats, n_components=1):
    dofs = _element_dofs(mesh, n_components)
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    n = mesh.n_nodes * n_components
    mat = sp.coo_matrix((elem_mats.ravel(), (rows, cols)), shape=(n, n))
    return mat.tocsr()


def _edge_dirichlet_dofs(mesh, edges, components, n_components=1):
    dofs = []
    for e in edges:
        nodes = mesh.edge_nodes(e)
        for c in components:
            dofs.append(nodes * n_components + c)
    return np.unique(np.concatenate(dofs)) if dofs else np.array([], dtype=int)


def _geo_samples_diffusion(mesh, geometry, geo_axes, conductivity, quad_order):
    """Sample k J^-1 J^-T det J at all Gauss points over the parameter grids.

    Returns (3 * n_qp, n_1, ..., n_G): components stacked (c11, c22, c12).
    """
    quad = mesh.quadrature(quad_order)
    grids = [a.grid for a in geo_axes]
    combos = (np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, len(grids))
              if grids else np.zeros((1, 0)))
    nq = quad.points.shape[0]
    out = np.empty((3 * nq, combos.shape[0]))
    for c, row in enumerate(combos):
        p = {a.label: v for a, v in zip(geo_axes, row)}
        J, det = geometry.jacobian(p, quad.points)
        # adj(J) adj(J)^T / det, symmetric 2x2
        a, b = J[:, 0, 0], J[:, 0, 1]
        cc, d = J[:, 1, 0], J[:, 1, 1]
        c11 = (d * d + b * b) / det
        c22 = (cc * cc + a * a) / det
        c12 = -(d * cc + b * a) / det
        out[:, c] = conductivity * np.concatenate([c11, c22, c12])
    shape = [3 * nq] + [g.size for g in grids]
    return out.reshape(shape)


def assemble_diffusion(mesh, geometry, axes, conductivity=1.0,
                       dirichlet_edges=("west",), dirichlet_value=0.0,
                       quad_order=2, tol=1e-6, max_cp_rank=120):
    """Separated stiffness operator for steady conduction on one module.

    axes lists every parametric axis of the module (geometric axes are
    matched to the geometry parametrization by label; the remaining axes get
    all-ones coefficient vectors).  The pulled-back conductivity tensor is
    sampled on the full geometric grid and CP-compressed to max-norm
    tolerance tol relative to its largest sample.
    """
    axes = tuple(axes)
    geo_axes = [a for a in axes if a.label in geometry.coeffs]
    if sorted(a.label for a in geo_axes) != sorted(geometry.coeffs):
        missing = set(geometry.coeffs) - {a.label for a in axes}
        raise ValueError(f"missing axes for geometric parameters: {sorted(missing)}")
    quad = mesh.quadrature(quad_order)
    samples = _geo_samples_diffusion(mesh, geometry, geo_axes, conductivity,
                                     quad_order)
    abs_tol = tol * np.max(np.abs(samples))
    factors, info = cp_compress_coefficients(samples, abs_tol,
                                             max_rank=max_cp_rank)

    nq = quad.points.shape[0]
    Q = quad.n_gauss
    E = mesh.n_elements
    g1 = quad.grad[:, :, 0]
    g2 = quad.grad[:, :, 1]
    G11 = np.einsum("qa,qb->qab", g1, g1)
    G22 = np.einsum("qa,qb->qab", g2, g2)
    G12 = np.einsum("qa,qb->qab", g1, g2) + np.einsum("qa,qb->qab", g2, g1)

    terms = []
    ones = {a.label: np.ones(a.size) for a in axes}
    for r in range(info["rank"]):
        w = factors[0][r]
        c11 = (w[:nq] * np.tile(quad.weights, E)).reshape(E, Q)
        c22 = (w[nq:2 * nq] * np.tile(quad.weights, E)).reshape(E, Q)
        c12 = (w[2 * nq:] * np.tile(quad.weights, E)).reshape(E, Q)
        elem = (np.einsum("eq,qab->eab", c11, G11)
                + np.einsum("eq,qab->eab", c22, G22)
                + np.einsum("eq,qab->eab", c12, G12))
        coeffs = dict(ones)
        for g, a in enumerate(geo_axes):
            coeffs[a.label] = factors[1 + g][r].copy()
        terms.append(OperatorTerm(_scatter(mesh, elem), coeffs))

    dir_dofs = _edge_dirichlet_dofs(mesh, dirichlet_edges, (0,))
    return SeparatedOperator(axes, terms, dir_dofs, dirichlet_value)


def assemble_neumann_load(mesh, geometry, edge, basis, coeff_labels, axes,
                          component=0, n_components=1, tol=1e-10,
                          max_cp_rank=12):
    """Separated RHS terms for a parametric flux/force profile on one edge.

    One group of terms per profile coefficient: the coefficient's own axis
    carries the identity ramp (exact linearity), geometric axes carry the CP
    factors of the physical edge metric, and every other axis is all-ones.
    """
    axes = tuple(axes)
    if isinstance(basis, int):
        basis = InterfaceBasis(basis)
    if len(coeff_labels) != basis.count:
        raise ValueError("one coefficient label per basis function required")
    geo_axes = [a for a in axes if a.label in geometry.coeffs]
    eq = mesh.edge_quadrature(edge)
    grids = [a.grid for a in geo_axes]
    combos = (np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, len(grids))
              if grids else np.zeros((1, 0)))
    metric = np.empty((eq.s.size, combos.shape[0]))
    for c, row in enumerate(combos):
        p = {a.label: v for a, v in zip(geo_axes, row)}
        J, _ = geometry.jacobian(p, eq.points)
        metric[:, c] = np.linalg.norm(J[:, :, eq.axis], axis=1)
    samples = metric.reshape([eq.s.size] + [g.size for g in grids])
    abs_tol = tol * np.max(np.abs(samples))
    factors, info = cp_compress_coefficients(samples, abs_tol,
                                             max_rank=max_cp_rank)

    ones = {a.label: np.ones(a.size) for a in axes}
    label_to_axis = {a.label: a for a in axes}
    terms = []
    for j, lab in enumerate(coeff_labels):
        if lab not in label_to_axis:
            raise ValueError(f"coefficient label {lab!r} has no axis")
        for r in range(info["rank"]):
            vecs = edge_load_vectors(basis, mesh, edge, factors[0][r],
                                     component, n_components)
            coeffs = dict(ones)
            coeffs[lab] = label_to_axis[lab].grid.copy()
            for g, a in enumerate(geo_axes):
                coeffs[a.label] = factors[1 + g][r].copy()
            terms.append(RhsTerm(vecs[j], coeffs))
    return terms


# ---------------------------------------------------------------------------
# Plate kernel (first-order shear deformation, rectangles)
# ---------------------------------------------------------------------------

# strain pieces: (strain index, component, deriv axis or None, sign, a_pow, b_pow)
_BENDING_PIECES = (
    (0, 2, 0, +1.0, -1, 0),   # d theta_y / dx
    (1, 1, 1, -1.0, 0, -1),   # -d theta_x / dy
    (2, 2, 1, +1.0, 0, -1),   # d theta_y / dy
    (2, 1, 0, -1.0, -1, 0),   # -d theta_x / dx
)
_SHEAR_PIECES = (
    (0, 0, 0, +1.0, -1, 0),   # dw/dx
    (0, 2, None, +1.0, 0, 0),  # + theta_y
    (1, 0, 1, +1.0, 0, -1),   # dw/dy
    (1, 1, None, -1.0, 0, 0),  # - theta_x
)
# bending constitutive couplings: (strain_i, strain_j, nu-profile index, scale)
_BENDING_COUPLING = (
    (0, 0, 0, 1.0), (1, 1, 0, 1.0),
    (0, 1, 1, 1.0), (1, 0, 1, 1.0),
    (2, 2, 2, 1.0),
)

_NU_PROFILES = (
    lambda nu: 1.0 / (1.0 - nu ** 2),
    lambda nu: nu / (1.0 - nu ** 2),
    lambda nu: 1.0 / (2.0 * (1.0 + nu)),
)


def _plate_pair_matrix(mesh, order, pairs):
    """Assemble sum of scale * int phi_(ca,da) phi_(cb,db) dxi, 3 dofs/node."""
    quad = mesh.quadrature(order)
    elem = np.zeros((12, 12))
    for ca, da, cb, db, scale in pairs:
        fa = quad.shape if da is None else quad.grad[:, :, da]
        fb = quad.shape if db is None else quad.grad[:, :, db]
        block = np.einsum("q,qa,qb->ab", quad.weights, fa, fb)
        rows = np.arange(4) * 3 + ca
        cols = np.arange(4) * 3 + cb
        elem[np.ix_(rows, cols)] += scale * block
    mats = np.broadcast_to(elem, (mesh.n_elements, 12, 12))
    return _scatter(mesh, np.ascontiguousarray(mats), n_components=3)


def assemble_plate(mesh, axes, span_label="span", height_label="height",
                   thickness_label="thickness", youngs_label="youngs",
                   poisson_label="poisson", clamped_edges=("south",),
                   quad_order=2, shear_quad_order=1):
    """Separated FSDT plate operator on an axis-aligned rectangle.

    The rectangle spans [0, span] x [0, height]; every metric coefficient is
    an exact product of powers of the two dimensions, so no CP compression is
    needed.  The rational Poisson-ratio profiles are sampled nodally on the
    nu grid.  Shear terms use reduced integration (shear_quad_order) with
    shear correction 5/6; clamped edges constrain all three components.
    """
    axes = tuple(axes)
    lab = {a.label: a for a in axes}
    for key in (span_label, height_label, thickness_label, youngs_label,
                poisson_label):
        if key not in lab:
            raise ValueError(f"plate kernel needs an axis labelled {key!r}")

    groups = {}

    def add(kind, f_idx, pa, pb, pair, scale):
        groups.setdefault((kind, f_idx, pa, pb), []).append(pair + (scale,))

    for (si, sj, f_idx, cscale) in _BENDING_COUPLING:
        for (ri, ca, da, sa, pa_a, pb_a) in _BENDING_PIECES:
            if ri != si:
                continue
            for (rj, cb, db, sb, pa_b, pb_b) in _BENDING_PIECES:
                if rj != sj:
                    continue
                add("bending", f_idx, pa_a + pa_b + 1, pb_a + pb_b + 1,
                    (ca, da, cb, db), cscale * sa * sb)
    for (ri, ca, da, sa, pa_a, pb_a) in _SHEAR_PIECES:
        for (rj, cb, db, sb, pa_b, pb_b) in _SHEAR_PIECES:
            if ri != rj:
                continue
            add("shear", 2, pa_a + pa_b + 1, pb_a + pb_b + 1,
                (ca, da, cb, db), sa * sb)

    A = lab[span_label]
    B = lab[height_label]
    h = lab[thickness_label]
    Emod = lab[youngs_label]
    nu = lab[poisson_label]
    ones = {a.label: np.ones(a.size) for a in axes}

    terms = []
    for (kind, f_idx, pa, pb), pairs in sorted(groups.items()):
        order = quad_order if kind == "bending" else shear_quad_order
        mat = _plate_pair_matrix(mesh, order, pairs)
        coeffs = dict(ones)
        coeffs[span_label] = A.grid ** pa
        coeffs[height_label] = B.grid ** pb
        coeffs[youngs_label] = Emod.grid.copy()
        coeffs[poisson_label] = _NU_PROFILES[f_idx](nu.grid)
        if kind == "bending":
            coeffs[thickness_label] = h.grid ** 3 / 12.0
        else:
            coeffs[thickness_label] = SHEAR_CORRECTION * h.grid
        terms.append(OperatorTerm(mat, coeffs))

    dir_dofs = _edge_dirichlet_dofs(mesh, clamped_edges, (0, 1, 2), 3)
    return SeparatedOperator(axes, terms, dir_dofs, 0.0, n_components=3)
