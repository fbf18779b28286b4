r"""Online stage: equilibrate the interfaces and stitch the global field.

Given a catalog of pre-solved module transfer functions, the skeleton
kinematics (the concatenated interface coefficient vectors) is found by a
Newton iteration and the per-module fields are particularized, placed and
averaged on shared interfaces.

Two residual modes are provided:

* "jump" (primary): the gradient of 1/2 sum_s ||trace jump on s||^2 with
  respect to the interface coefficients, driven to zero by Gauss-Newton.
  This is what both worked examples minimize.
* "flux": per-interface sums of weakly extracted boundary flux coefficients.
  With Neumann-parametrized interfaces the two sides carry the shared
  coefficients with opposite signs, so this residual is near zero by
  construction (up to extraction consistency); it is kept as the
  methodological counterpart of the force-balance formulation and for the
  block-sparsity rule its Jacobian obeys.

An offline regression of the equilibrium kinematics over the global
parameters (the "vademecum") provides warm starts or instant approximate
kinematics.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.stats.qmc as qmc

from . import oracle
from .interface import extract_flux, jump, trace
from .regression import SeparatedPolyRegressor
from .separated import interp_weights
from .validation import RangeError, UnconvergedError


@dataclass
class SkeletonKinematics:
    """Concatenated interface coefficients Lambda = (alpha_1, ..., alpha_S)."""

    slots: list               # [(interface name, R), ...] in catalog order
    values: np.ndarray = None

    def __post_init__(self):
        total = sum(r for _, r in self.slots)
        if self.values is None:
            self.values = np.zeros(total)
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != total:
            raise ValueError(f"expected {total} coefficients, got "
                             f"{self.values.size}")

    @property
    def size(self):
        return self.values.size

    def offsets(self):
        out = {}
        k = 0
        for name, r in self.slots:
            out[name] = (k, k + r)
            k += r
        return out

    def as_dict(self):
        off = self.offsets()
        return {name: self.values[a:b] for name, (a, b) in off.items()}

    def replaced(self, values):
        return SkeletonKinematics(self.slots, np.asarray(values, dtype=float))


@dataclass
class EquilibriumReport:
    kinematics: SkeletonKinematics
    converged: bool
    iterations: int
    residual_norms: list
    jumps: dict               # interface name -> final trace jump (Euclidean)
    mode: str
    wall_time: float
    message: str = ""


# ---------------------------------------------------------------------------
# Catalog-side evaluation helpers
# ---------------------------------------------------------------------------

class BoundModule:
    """One placed module with its parameter-bound axes particularized.

    Holds the reduced field over the interface-coefficient axes only, the
    derivative machinery for those axes, and trace/extraction helpers.
    """

    def __init__(self, catalog, module, params):
        self.catalog = catalog
        self.module = module
        problem = catalog.problem
        self.ref = problem.references[module.reference]
        self.n_components = problem.n_components
        tf = catalog.transfer[module.reference]
        self.dirichlet_value = tf.dirichlet_value

        field_labels = set(tf.solution.mode_labels[1:])
        bind_values = {}
        self.iface_axes = []       # (label, interface, index, sign)
        for lab, b in module.bindings.items():
            if lab not in field_labels:
                continue
            if b.kind == "param":
                bind_values[lab] = params[b.param]
            else:
                self.iface_axes.append((lab, b.interface, b.index, b.sign))
        self.field = tf.solution.particularize(bind_values)
        self.params = params

    def _alpha_values(self, lam_dict):
        return {lab: sign * lam_dict[iface][idx]
                for lab, iface, idx, sign in self.iface_axes}

    def nodal_values(self, lam_dict):
        """Flat DOF vector at the given interface coefficients."""
        vals = self._alpha_values(lam_dict)
        bound = self.field.particularize(vals)
        out = bound.spatial.values.sum(axis=0) if bound.rank else \
            np.zeros(self.field.spatial.size)
        if self.dirichlet_value:
            out = out + self.dirichlet_value
        return out

    def nodal_derivatives(self, lam_dict):
        """d(nodal values)/d(Lambda entry) for every entry this module sees.

        Returns {(interface, index): vector}; derivatives go through the
        piecewise-linear parametric factors analytically and include the
        binding sign.
        """
        vals = self._alpha_values(lam_dict)
        out = {}
        spatial = self.field.spatial.values
        if self.field.rank == 0:
            return {(iface, idx): np.zeros(self.field.spatial.size)
                    for _, iface, idx, _ in self.iface_axes}
        factors = []
        slopes = []
        for m in self.field.parametric:
            i, w = interp_weights(m.grid, vals[m.label], m.label)
            factors.append((1 - w) * m.values[:, i] + w * m.values[:, i + 1])
            slopes.append((m.values[:, i + 1] - m.values[:, i])
                          / (m.grid[i + 1] - m.grid[i]))
        factors = np.array(factors) if factors else np.zeros((0, self.field.rank))
        for k, (lab, iface, idx, sign) in enumerate(self.iface_axes):
            pos = [m.label for m in self.field.parametric].index(lab)
            coef = slopes[pos].copy()
            for j in range(factors.shape[0]):
                if j != pos:
                    coef = coef * factors[j]
            out[(iface, idx)] = sign * (coef @ spatial)
        return out

    def geometry_values(self):
        return self.module.geometry_values(self.params)

    def trace_on(self, edge, values):
        return trace(values, self.catalog.mesh, edge, self.n_components)

    def stiffness(self):
        mesh = self.catalog.mesh
        if self.ref.physics == "heat":
            return oracle.diffusion_matrix(mesh, self.ref.geometry,
                                           self.geometry_values(),
                                           self.ref.conductivity,
                                           self.ref.quad_order)
        mat = self.ref.material
        return oracle.plate_matrix(
            mesh,
            self.module.axis_value(mat["span"], self.params),
            self.module.axis_value(mat["height"], self.params),
            self.module.axis_value(mat["thickness"], self.params),
            self.module.axis_value(mat["youngs"], self.params),
            self.module.axis_value(mat["poisson"], self.params),
            self.ref.quad_order, self.ref.shear_quad_order)

    def dirichlet_dofs(self):
        mesh = self.catalog.mesh
        dofs = []
        for edge, cond in self.ref.edges.items():
            if cond.kind == "dirichlet":
                nodes = mesh.edge_nodes(edge)
                for c in cond.components:
                    dofs.append(nodes * self.n_components + c)
        return np.unique(np.concatenate(dofs)) if dofs else np.array([], int)

    def internal_load(self, skip_edge):
        """Direct load vector from every param-bound flux edge except one."""
        from .problem import edge_coefficient_values
        mesh = self.catalog.mesh
        out = np.zeros(self.field.spatial.size)
        for edge, cond in self.ref.edges.items():
            if cond.kind != "flux" or edge == skip_edge:
                continue
            coeffs = edge_coefficient_values(self.catalog.problem, self.module,
                                             edge, self.params)
            if coeffs is None:
                continue
            out += oracle.flux_load(mesh, self.ref.geometry,
                                    self.geometry_values(), edge,
                                    self.catalog.problem.basis, coeffs,
                                    cond.component, self.n_components)
        return out


def _check_lambda_ranges(catalog, lam):
    for itf in catalog.problem.interfaces:
        lo, hi = catalog.interface_coefficient_range(itf.name)
        for v in lam.as_dict()[itf.name]:
            if not (lo <= v <= hi):
                raise RangeError(f"alpha[{itf.name}]", float(v), lo, hi)


def bind_modules(catalog, params):
    params = catalog.problem.check_params(params)
    return {m.name: BoundModule(catalog, m, params)
            for m in catalog.problem.modules}, params


# ---------------------------------------------------------------------------
# Residuals and Jacobians
# ---------------------------------------------------------------------------

def _interface_tables(catalog, bound, lam):
    """Per interface: trace jump vector and its dense Lambda-derivative."""
    lam_dict = lam.as_dict()
    offsets = lam.offsets()
    tables = {}
    for itf in catalog.problem.interfaces:
        sides = []
        for name, edge in zip(itf.modules, itf.edges):
            bm = bound[name]
            u = bm.nodal_values(lam_dict)
            tr = bm.trace_on(edge, u)
            dtr = np.zeros((tr.size, lam.size))
            for (iface, idx), du in bm.nodal_derivatives(lam_dict).items():
                col = offsets[iface][0] + idx
                dtr[:, col] += bm.trace_on(edge, du)
            sides.append((tr, dtr))
        d = sides[0][0] - sides[1][0]
        T = sides[0][1] - sides[1][1]
        tables[itf.name] = (d, T)
    return tables


def residual(catalog, params, lam, mode="jump", bound=None):
    """Stacked equilibrium residual (R_1, ..., R_S).

    jump mode: gradient of 1/2 sum ||jump_s||^2 with respect to Lambda,
    reshaped into per-interface blocks.  flux mode: per-interface sums of the
    extracted weak flux coefficients of both adjacent modules (in the global
    interface orientation).
    """
    if bound is None:
        bound, params = bind_modules(catalog, params)
    _check_lambda_ranges(catalog, lam)
    if mode == "jump":
        tables = _interface_tables(catalog, bound, lam)
        g = np.zeros(lam.size)
        for d, T in tables.values():
            g += T.T @ d
        return g
    if mode == "flux":
        lam_dict = lam.as_dict()
        out = []
        for itf in catalog.problem.interfaces:
            total = np.zeros(catalog.problem.basis.count)
            for name, edge in zip(itf.modules, itf.edges):
                total += _module_flux(catalog, bound[name], edge, lam_dict)
            out.append(total)
        return np.concatenate(out)
    raise ValueError(f"unknown residual mode {mode!r}")


def _module_flux(catalog, bm, edge, lam_dict, values=None):
    mesh = catalog.mesh
    u = bm.nodal_values(lam_dict) if values is None else values
    K = bm.stiffness()
    metric = oracle.edge_metric(mesh, bm.ref.geometry, bm.geometry_values(),
                                edge)
    cond = bm.ref.edges[edge]
    return extract_flux(u, K, bm.internal_load(edge), mesh, edge,
                        catalog.problem.basis, metric, cond.component,
                        bm.n_components, constrained_dofs=bm.dirichlet_dofs())


def jacobian_blocks(catalog, params, lam, mode="flux", fd=False, bound=None):
    """Interface-coupling Jacobian blocks {M_ij}.

    flux mode: M_ij = sum over modules touching interface i (and j) of
    dF_i^p/dalpha_j; blocks vanish exactly when no module touches both
    interfaces.  jump mode: the Gauss-Newton blocks T^T T of the jump cost.
    fd=True uses central finite differences (h = 1e-3 x coefficient range)
    instead of the analytic parametric-factor derivatives.
    """
    if bound is None:
        bound, params = bind_modules(catalog, params)
    slots = [(itf.name, catalog.problem.basis.count)
             for itf in catalog.problem.interfaces]
    lam = SkeletonKinematics(slots, lam.values if
                             isinstance(lam, SkeletonKinematics) else lam)
    offsets = lam.offsets()
    n = lam.size
    if fd:
        M = np.zeros((n, n))
        for col in range(n):
            lo, hi = catalog.interface_coefficient_range(
                _slot_of(offsets, col))
            h = 1e-3 * (hi - lo)
            vp, vm = lam.values.copy(), lam.values.copy()
            vp[col] += h
            vm[col] -= h
            rp = residual(catalog, params, lam.replaced(vp), mode, bound)
            rm = residual(catalog, params, lam.replaced(vm), mode, bound)
            M[:, col] = (rp - rm) / (2 * h)
        return M

    if mode == "jump":
        tables = _interface_tables(catalog, bound, lam)
        M = np.zeros((n, n))
        for d, T in tables.values():
            M += T.T @ T
        return M
    if mode == "flux":
        lam_dict = lam.as_dict()
        M = np.zeros((n, n))
        for itf in catalog.problem.interfaces:
            ra, rb = offsets[itf.name]
            for name, edge in zip(itf.modules, itf.edges):
                bm = bound[name]
                for (iface, idx), du in bm.nodal_derivatives(lam_dict).items():
                    col = offsets[iface][0] + idx
                    M[ra:rb, col] += _module_flux(catalog, bm, edge, lam_dict,
                                                  values=du)
        return M
    raise ValueError(f"unknown jacobian mode {mode!r}")


def _slot_of(offsets, col):
    for name, (a, b) in offsets.items():
        if a <= col < b:
            return name
    raise IndexError(col)


# ---------------------------------------------------------------------------
# Newton iteration
# ---------------------------------------------------------------------------

def newton_solve(catalog, params, lam0=None, tol=None, max_iter=30,
                 mode="jump", regularization=1e-8, cond_limit=1e12):
    """Find the skeleton kinematics equilibrating all interfaces.

    Iterates Lambda <- Lambda + dLambda from the assembled linear system,
    with Tikhonov regularization when the reduced system is near singular,
    range clamping, and step halving whenever a step fails to decrease the
    residual norm.  Default tolerance: 1e-8 x the residual norm at Lambda0
    (with an absolute floor).  Returns an EquilibriumReport; a hit iteration
    cap flags the report unconverged instead of raising.
    """
    t0 = time.perf_counter()
    bound, params = bind_modules(catalog, params)
    slots = [(itf.name, catalog.problem.basis.count)
             for itf in catalog.problem.interfaces]
    lam = SkeletonKinematics(slots) if lam0 is None else \
        SkeletonKinematics(slots, np.asarray(lam0, dtype=float))

    if lam.size == 0:
        report = EquilibriumReport(lam, True, 0, [0.0], {}, mode,
                                   time.perf_counter() - t0)
        return report

    res = residual(catalog, params, lam, mode, bound)
    norms = [float(np.linalg.norm(res))]
    if tol is None:
        tol = 1e-8 * norms[0] + 1e-14
    converged = norms[0] <= tol
    iterations = 0
    message = ""
    while not converged and iterations < max_iter:
        M = jacobian_blocks(catalog, params, lam, mode, bound=bound)
        scale = np.trace(M) / max(lam.size, 1)
        if not np.isfinite(np.linalg.cond(M)) or np.linalg.cond(M) > cond_limit:
            M = M + regularization * abs(scale) * np.eye(lam.size)
        step = np.linalg.solve(M, -res)
        # clamp to the training ranges with step halving
        accepted = False
        for _ in range(12):
            candidate = lam.values + step
            candidate = _clamp(catalog, slots, candidate)
            new_lam = lam.replaced(candidate)
            new_res = residual(catalog, params, new_lam, mode, bound)
            if np.linalg.norm(new_res) < norms[-1]:
                accepted = True
                break
            step = 0.5 * step
        iterations += 1
        if not accepted:
            message = "step halving failed to reduce the residual"
            break
        lam = new_lam
        res = new_res
        norms.append(float(np.linalg.norm(res)))
        converged = norms[-1] <= tol

    jumps = interface_jumps(catalog, params, lam, bound)
    report = EquilibriumReport(lam, bool(converged), iterations, norms, jumps,
                               mode, time.perf_counter() - t0, message)
    return report


def _clamp(catalog, slots, values):
    out = values.copy()
    k = 0
    for name, r in slots:
        lo, hi = catalog.interface_coefficient_range(name)
        out[k:k + r] = np.clip(out[k:k + r], lo, hi)
        k += r
    return out


def interface_jumps(catalog, params, lam, bound=None):
    """Euclidean trace jump per interface at the given kinematics."""
    if bound is None:
        bound, params = bind_modules(catalog, params)
    lam_dict = lam.as_dict()
    out = {}
    for itf in catalog.problem.interfaces:
        traces = []
        for name, edge in zip(itf.modules, itf.edges):
            bm = bound[name]
            traces.append(bm.trace_on(edge, bm.nodal_values(lam_dict)))
        out[itf.name] = jump(traces[0], traces[1])
    return out


# ---------------------------------------------------------------------------
# Global field assembly
# ---------------------------------------------------------------------------

@dataclass
class GlobalField:
    """Per-module nodal fields mapped into physical space."""

    modules: dict             # name -> {"coords": (N,2), "values": (N*nc,)}
    n_components: int
    kinematics: SkeletonKinematics = None

    def stacked_values(self):
        return np.concatenate([m["values"] for m in self.modules.values()])


def assemble_global(catalog, params, lam, bound=None):
    """Particularize, place and stitch every module at the given kinematics.

    Shared-interface node values are averaged across the two sides (the
    residual jump is symmetric, so neither side is preferred).
    """
    if bound is None:
        bound, params = bind_modules(catalog, params)
    mesh = catalog.mesh
    lam_dict = lam.as_dict()
    nc = catalog.problem.n_components
    out = {}
    for m in catalog.problem.modules:
        bm = bound[m.name]
        values = bm.nodal_values(lam_dict)
        placement = m.placement.resolve(params)
        coords = placement.place(
            bm.ref.geometry.map(bm.geometry_values(), mesh.nodes))
        out[m.name] = {"coords": coords, "values": values}
    for itf in catalog.problem.interfaces:
        (na, ea), (nb, eb) = zip(itf.modules, itf.edges)
        nodes_a = mesh.edge_nodes(ea)
        nodes_b = mesh.edge_nodes(eb)
        for c in range(nc):
            da = nodes_a * nc + c
            db = nodes_b * nc + c
            avg = 0.5 * (out[na]["values"][da] + out[nb]["values"][db])
            out[na]["values"][da] = avg
            out[nb]["values"][db] = avg
    return GlobalField(out, nc, lam)


# ---------------------------------------------------------------------------
# Vademecum: offline regression of Lambda over the global parameters
# ---------------------------------------------------------------------------

@dataclass
class Vademecum:
    parameter_names: list
    regressor: SeparatedPolyRegressor
    holdout_rms: float
    n_samples: int
    seed: int

    def evaluate(self, catalog, params):
        x = np.array([params[k] for k in self.parameter_names])
        slots = [(itf.name, catalog.problem.basis.count)
                 for itf in catalog.problem.interfaces]
        values = self.regressor.predict(x)
        return SkeletonKinematics(slots, _clamp(catalog, slots, values))

    def to_dict(self):
        return {"parameter_names": list(self.parameter_names),
                "regressor": self.regressor.to_dict(),
                "holdout_rms": self.holdout_rms,
                "n_samples": self.n_samples, "seed": self.seed}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["parameter_names"],
                   SeparatedPolyRegressor.from_dict(doc["regressor"]),
                   doc["holdout_rms"], doc["n_samples"], doc["seed"])


def vademecum_build(catalog, n_samples=500, seed=0, holdout_fraction=0.1,
                    rank=8, degree=2, rms_warn=None, mode="jump"):
    """Sample the parameter box (Latin hypercube), equilibrate each sample,
    and fit the separated polynomial regression Lambda(p).

    Reports the held-out RMS error; if rms_warn is given and exceeded a
    warning is attached (the regression is still returned).
    """
    if n_samples < 10:
        raise ValueError("need at least 10 samples")
    names = list(catalog.problem.parameters)
    lo = np.array([catalog.problem.parameters[k][0] for k in names])
    hi = np.array([catalog.problem.parameters[k][1] for k in names])
    X = qmc.LatinHypercube(d=len(names), seed=seed).random(n_samples)
    X = lo + X * (hi - lo)
    Y = []
    kept = []
    for row in X:
        params = dict(zip(names, row))
        report = newton_solve(catalog, params, mode=mode)
        if report.converged:
            kept.append(row)
            Y.append(report.kinematics.values.copy())
    X = np.array(kept)
    Y = np.array(Y)
    n_hold = max(1, int(holdout_fraction * X.shape[0]))
    reg = SeparatedPolyRegressor(rank=rank, degree=degree)
    reg.fit(X[:-n_hold], Y[:-n_hold])
    pred = reg.predict(X[-n_hold:])
    rms = float(np.sqrt(np.mean((pred - Y[-n_hold:]) ** 2)))
    if rms_warn is not None and rms > rms_warn:
        import warnings
        warnings.warn(f"vademecum holdout RMS {rms:.3e} above {rms_warn:.3e}",
                      RuntimeWarning)
    return Vademecum(names, reg, rms, int(X.shape[0]), seed)


def vademecum_eval(vademecum, catalog, params):
    return vademecum.evaluate(catalog, params)
