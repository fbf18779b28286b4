r"""Greedy rank-one enrichment solver for separated parametric problems.

Solves A(q) u(q) = f(q) with A and f given in separated form over parametric
axes q = (q_1, ..., q_D), producing the module's parametric transfer
function: a SeparatedField over (space, q_1, ..., q_D).

Each enrichment computes one new rank-one term s(x) * v_1(q_1) * ... by an
alternating-direction fixed point: the spatial factor solves a sparse
symmetric system with all parametric factors frozen, and each parametric
factor update is a diagonal (entrywise) Galerkin solve under the axis
quadrature weights.  Every substep minimizes the global energy functional
over one factor, so the energy history is non-increasing by construction,
which is the convergence indicator recorded per rank.
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .separated import Mode, SeparatedField, spatial_mode
from .validation import WellPosednessError


@dataclass(frozen=True)
class PgdSettings:
    """Enrichment / fixed-point controls.

    stop_ratio: enrichment stops once new-term norm / solution norm falls
    below this; fp_tol bounds the relative change of a rank-one term between
    alternating sweeps.  update_sweeps > 0 re-solves all parametric factors
    (axis by axis, one small Galerkin system per grid node) after each
    enrichment; plain progressive enrichment stalls on modules with many
    independent load coordinates, and this update restores convergence while
    leaving the spatial factors untouched.
    """

    max_rank: int = 60
    fp_tol: float = 1e-6
    max_sweeps: int = 50
    stop_ratio: float = 1e-4
    compress_tol: float = 1e-10
    compress_every: int = 10
    update_sweeps: int = 3
    polish_sweeps: int = 20
    warm_init: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")
        for name in ("fp_tol", "stop_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TransferFunction:
    """Parametric solution of one module plus its enrichment history."""

    solution: SeparatedField
    energy_history: list
    ratio_history: list
    sweep_history: list
    converged: bool
    settings: PgdSettings
    wall_time: float = 0.0
    dirichlet_value: float = 0.0

    @property
    def rank(self):
        return self.solution.rank

    @property
    def parameter_count(self):
        return len(self.solution.modes) - 1

    def nominal_dof_count(self, nodes_per_direction):
        """Nominal tensor-grid DOF count at a given per-direction resolution
        (two spatial directions plus one per parametric axis)."""
        return int(nodes_per_direction) ** (2 + self.parameter_count)


class _Workspace:
    """Stacked coefficient arrays for one (operator, rhs) pair."""

    def __init__(self, operator, rhs_terms):
        self.axes = operator.axes
        self.labels = [a.label for a in self.axes]
        self.K = [t.matrix for t in operator.terms]
        self.nK = len(self.K)
        self.nL = len(rhs_terms)
        self.b = np.array([t.vector for t in rhs_terms]) if rhs_terms else \
            np.zeros((0, operator.n_dofs))
        self.A = [np.array([t.coeffs[a.label] for t in operator.terms])
                  for a in self.axes]
        self.C = [np.array([t.coeffs[a.label] for t in rhs_terms])
                  if rhs_terms else np.zeros((0, a.size)) for a in self.axes]
        self.w = [a.weights for a in self.axes]
        self.free = np.setdiff1d(np.arange(operator.n_dofs),
                                 operator.dirichlet_dofs)
        self.n_dofs = operator.n_dofs
        self.Kred = [K.tocsr()[self.free][:, self.free].tocsc() for K in self.K]


def _prods_excluding(parts):
    """parts: list over axes of equally-shaped arrays; returns for each axis
    the elementwise product of all the others (prefix/suffix products)."""
    D = len(parts)
    if D == 0:
        return []
    one = np.ones_like(parts[0])
    pre = [one]
    for m in range(1, D):
        pre.append(pre[-1] * parts[m - 1])
    suf = [one] * D
    for m in range(D - 2, -1, -1):
        suf[m] = suf[m + 1] * parts[m + 1]
    return [pre[m] * suf[m] for m in range(D)]


def _term_norm(s, vs, weights):
    out = np.linalg.norm(s)
    for v, w in zip(vs, weights):
        out *= np.sqrt(max(float(v @ (w * v)), 0.0))
    return out


def _field_norm(ws, S, V):
    if S.shape[0] == 0:
        return 0.0
    G = S @ S.T
    for m in range(len(ws.axes)):
        G = G * ((V[m] * ws.w[m]) @ V[m].T)
    return float(np.sqrt(max(G.sum(), 0.0)))


def enrich(workspace, S, V, settings, rng=None):
    """One greedy rank-one term for the current solution (S, V).

    S: (R, N) spatial factors; V: list over axes of (R, n_m) parametric
    factors.  The fixed point starts from seeded random parametric factors
    (an all-ones start sits exactly on a symmetry saddle for the
    sign-symmetric load-coefficient axes).  Returns (s, [v_m], sweeps,
    delta) with the magnitude carried on the spatial factor and every
    parametric factor normalized to unit max.
    """
    ws = workspace
    D = len(ws.axes)
    R = S.shape[0]
    KS = [np.asarray((K @ S.T).T) if R else np.zeros((0, ws.n_dofs))
          for K in ws.K]

    rng = rng or np.random.default_rng(0)
    if R and settings.warm_init:
        # the previous term's factors are a good deterministic start; random
        # perturbation keeps the sign-symmetric load axes off their saddle
        v = [Vm[-1] + 0.1 * rng.standard_normal(Vm.shape[1]) for Vm in V]
    else:
        v = [np.ones(a.size) + 0.3 * rng.standard_normal(a.size)
             for a in ws.axes]
    s = np.zeros(ws.n_dofs)
    sweeps = 0
    delta = np.inf
    delta_best = np.inf
    best_sweep = 0
    for sweeps in range(1, settings.max_sweeps + 1):
        s_old, v_old = s, [x.copy() for x in v]

        # spatial solve with parametric factors frozen
        alpha = [ws.A[m] @ (ws.w[m] * v[m] ** 2) for m in range(D)]
        gamma = [ws.C[m] @ (ws.w[m] * v[m]) for m in range(D)]
        beta = [np.einsum("kn,rn,n->kr", ws.A[m], V[m], ws.w[m] * v[m])
                if R else np.zeros((ws.nK, 0)) for m in range(D)]
        a_full = np.prod(alpha, axis=0) if D else np.ones(ws.nK)
        g_full = np.prod(gamma, axis=0) if D else np.ones(ws.nL)
        b_full = np.prod(beta, axis=0) if D else np.ones((ws.nK, R))
        lhs = None
        for k in range(ws.nK):
            lhs = a_full[k] * ws.Kred[k] if lhs is None else lhs + a_full[k] * ws.Kred[k]
        rhs = g_full @ ws.b if ws.nL else np.zeros(ws.n_dofs)
        for k in range(ws.nK):
            if R:
                rhs -= b_full[k] @ KS[k]
        s = np.zeros(ws.n_dofs)
        s[ws.free] = spla.spsolve(lhs.tocsc(), rhs[ws.free])

        # parametric updates, one diagonal Galerkin solve per axis
        sK = np.array([s @ (K @ s) for K in ws.K])
        sb = ws.b @ s if ws.nL else np.zeros(0)
        sKS = np.array([KS[k] @ s for k in range(ws.nK)]) if R else \
            np.zeros((ws.nK, 0))
        for m in range(D):
            alpha = [ws.A[g] @ (ws.w[g] * v[g] ** 2) for g in range(D)]
            gamma = [ws.C[g] @ (ws.w[g] * v[g]) for g in range(D)]
            beta = [np.einsum("kn,rn,n->kr", ws.A[g], V[g], ws.w[g] * v[g])
                    if R else np.zeros((ws.nK, 0)) for g in range(D)]
            a_ex = _prods_excluding(alpha)[m]
            g_ex = _prods_excluding(gamma)[m]
            b_ex = _prods_excluding(beta)[m]
            den = (sK * a_ex) @ ws.A[m]
            num = (sb * g_ex) @ ws.C[m] if ws.nL else np.zeros(ws.axes[m].size)
            if R:
                num = num - np.einsum("kr,kn,rn->n", sKS * b_ex, ws.A[m], V[m])
            if np.any(den <= 0):
                # operator positivity guarantees den > 0 at admissible points;
                # bail out to a zero factor if the term has degenerated
                if not np.any(num):
                    return np.zeros(ws.n_dofs), [np.ones(a.size) for a in ws.axes], sweeps, 0.0
                den = np.where(den <= 0, np.max(np.abs(den)) + 1e-300, den)
            v[m] = num / den
            peak = np.max(np.abs(v[m]))
            if peak == 0.0:
                return np.zeros(ws.n_dofs), [np.ones(a.size) for a in ws.axes], sweeps, 0.0
            s = s * peak
            v[m] = v[m] / peak

        norm_new = _term_norm(s, v, ws.w)
        if norm_new == 0.0:
            return s, v, sweeps, 0.0
        # relative change of the rank-one term between sweeps (two-term Gram)
        dot = float(s @ s_old)
        n_old = _term_norm(s_old, v_old, ws.w)
        for m in range(D):
            dot *= float(v[m] @ (ws.w[m] * v_old[m]))
        delta = np.sqrt(max(norm_new ** 2 + n_old ** 2 - 2 * dot, 0.0))
        delta /= norm_new
        if delta < settings.fp_tol:
            break
        if delta < 0.7 * delta_best:
            delta_best, best_sweep = delta, sweeps
        elif sweeps - best_sweep >= 8:
            break  # stalled: the term only rotates; update sweeps take over
    return s, v, sweeps, delta


def _update_parametric(ws, S, V, sweeps=1):
    """Galerkin re-solve of every parametric factor with S frozen.

    The operator couples parameter-grid nodes of one axis only through the
    other factors, so each grid node yields an independent R x R system.
    Each node solve is an exact coordinate minimization of the energy, so
    this step never increases the energy.
    """
    R = S.shape[0]
    D = len(ws.axes)
    if R == 0 or D == 0:
        return V
    GK = np.array([S @ (K @ S.T) for K in ws.K])          # (nK, R, R)
    Bd = ws.b @ S.T if ws.nL else np.zeros((0, R))        # (nL, R)
    for _ in range(sweeps):
        for m in range(D):
            P = GK.copy()
            Q = Bd.copy()
            for g in range(D):
                if g == m:
                    continue
                P *= np.einsum("kn,rn,sn->krs", ws.A[g], V[g] * ws.w[g], V[g])
                if ws.nL:
                    Q *= (ws.C[g] * ws.w[g]) @ V[g].T
            # per-node systems: A_i = sum_k a_k(i) P_k, b_i = sum_l c_l(i) Q_l
            A_nodes = np.einsum("kn,krs->nrs", ws.A[m], P)
            b_nodes = ws.C[m].T @ Q if ws.nL else np.zeros((ws.axes[m].size, R))
            ridge = 1e-13 * np.trace(A_nodes, axis1=1, axis2=2) / R
            A_nodes = A_nodes + ridge[:, None, None] * np.eye(R)
            V[m] = np.linalg.solve(A_nodes, b_nodes[:, :, None])[:, :, 0].T
    # rebalance: parametric factors to unit peak, magnitude on the spatial one
    for m in range(D):
        peaks = np.max(np.abs(V[m]), axis=1)
        ok = peaks > 0
        S[ok] *= peaks[ok, None]
        V[m][ok] /= peaks[ok, None]
        S[~ok] = 0.0
    return V


def _update_spatial(ws, S, V):
    """Cyclic Galerkin re-solve of each spatial factor with V frozen.

    One sparse symmetric solve per rank-one term; every solve is an exact
    coordinate minimization, so the energy cannot increase.
    """
    R = S.shape[0]
    D = len(ws.axes)
    if R == 0:
        return S
    W = np.ones((ws.nK, R, R))
    for g in range(D):
        W *= np.einsum("kn,rn,sn->krs", ws.A[g], V[g] * ws.w[g], V[g])
    Cw = np.ones((ws.nL, R))
    for g in range(D):
        Cw *= (ws.C[g] * ws.w[g]) @ V[g].T
    KS = [np.asarray((K @ S.T).T) for K in ws.K]
    diag_scale = np.abs(W[:, np.arange(R), np.arange(R)]).max(axis=0)
    for r in range(R):
        if diag_scale[r] <= 1e-300:
            S[r] = 0.0
            continue
        lhs = None
        for k in range(ws.nK):
            lhs = W[k, r, r] * ws.Kred[k] if lhs is None \
                else lhs + W[k, r, r] * ws.Kred[k]
        rhs = (Cw[:, r] @ ws.b) if ws.nL else np.zeros(ws.n_dofs)
        for k in range(ws.nK):
            rhs -= W[k, r] @ KS[k] - W[k, r, r] * KS[k][r]
        s_new = np.zeros(ws.n_dofs)
        s_new[ws.free] = spla.spsolve(lhs.tocsc(), rhs[ws.free])
        S[r] = s_new
        for k in range(ws.nK):
            KS[k][r] = ws.K[k] @ s_new
    return S


def _energy(workspace, S, V):
    """E(u) = 1/2 a(u, u) - f(u) in the weighted separated inner product."""
    ws = workspace
    R = S.shape[0]
    if R == 0:
        return 0.0
    quad = 0.0
    for k, K in enumerate(ws.K):
        G = S @ (K @ S.T)
        for m in range(len(ws.axes)):
            G = G * ((V[m] * (ws.w[m] * ws.A[m][k])) @ V[m].T)
        quad += G.sum()
    lin = 0.0
    if ws.nL:
        G = ws.b @ S.T
        for m in range(len(ws.axes)):
            G = G * ((ws.C[m] * ws.w[m]) @ V[m].T)
        lin = G.sum()
    return 0.5 * quad - lin


def solve(operator, rhs_terms, settings=None, space_label="space",
          dirichlet_value=0.0):
    """Greedy separated solve; returns a TransferFunction.

    Enriches rank by rank until the new-term/solution norm ratio drops below
    settings.stop_ratio or max_rank is hit (then the result is flagged
    unconverged).  A compression sweep runs every compress_every ranks.  Well
    posedness (a nonempty Dirichlet set) is checked up front.
    """
    settings = settings or PgdSettings()
    ws = _Workspace(operator, rhs_terms)
    if ws.free.size == operator.n_dofs:
        raise WellPosednessError(
            "operator has no Dirichlet DOFs; the spatial problem is singular")
    t0 = time.perf_counter()

    S = np.zeros((0, ws.n_dofs))
    V = [np.zeros((0, a.size)) for a in ws.axes]
    energies, ratios, sweep_log = [], [], []
    converged = False
    rng = np.random.default_rng(settings.seed)
    for rank in range(1, settings.max_rank + 1):
        s, v, sweeps, _ = enrich(ws, S, V, settings, rng)
        term_norm = _term_norm(s, v, ws.w)
        if term_norm == 0.0:
            converged = True
            sweep_log.append(sweeps)
            energies.append(_energy(ws, S, V))
            ratios.append(0.0)
            break
        S = np.vstack([S, s[None, :]])
        V = [np.vstack([Vm, vm[None, :]]) for Vm, vm in zip(V, v)]
        for _ in range(settings.update_sweeps):
            V = _update_parametric(ws, S, V, 1)
            S = _update_spatial(ws, S, V)
        if settings.update_sweeps:
            V = _update_parametric(ws, S, V, 1)
        total_norm = _field_norm(ws, S, V)
        ratio = term_norm / max(total_norm, 1e-300)
        energies.append(_energy(ws, S, V))
        ratios.append(ratio)
        sweep_log.append(sweeps)
        if settings.compress_every and rank % settings.compress_every == 0:
            S, V = _compress_factors(ws, S, V, settings.compress_tol)
        if ratio < settings.stop_ratio:
            converged = True
            break

    for _ in range(settings.polish_sweeps if S.shape[0] else 0):
        V = _update_parametric(ws, S, V, 1)
        S = _update_spatial(ws, S, V)
    if S.shape[0] and settings.polish_sweeps:
        energies.append(_energy(ws, S, V))
        ratios.append(ratios[-1] if ratios else 0.0)
        sweep_log.append(0)

    field = _to_field(ws, S, V, space_label)
    field = field.compress(settings.compress_tol)
    tf = TransferFunction(field, energies, ratios, sweep_log, converged,
                          settings, time.perf_counter() - t0, dirichlet_value)
    return tf


def _to_field(ws, S, V, space_label):
    modes = [spatial_mode(S if S.size else np.zeros((0, ws.n_dofs)), space_label)]
    for a, Vm in zip(ws.axes, V):
        modes.append(Mode("parametric1D", a.label, a.grid, Vm))
    return SeparatedField(tuple(modes))


def _compress_factors(ws, S, V, tol):
    field = _to_field(ws, S, V, "space")
    field = field.compress(tol)
    S = np.array(field.spatial.values, copy=True)
    V = [np.array(m.values, copy=True) for m in field.parametric]
    return S, V


def affinity_check(tf, operator, rhs_terms, coeff_labels, fixed_values,
                   direct_solver, n_points=5, seed=0, coeff_ranges=None):
    """Deviation of a transfer function from exact affine dependence on the
    given boundary coefficients at fixed remaining parameters.

    direct_solver(values) must return the direct FE solution vector at a
    fully bound parameter point; the exact affine reference is built from
    len(coeff_labels) + 1 direct solves (superposition), then compared with
    the particularized transfer function at n_points random coefficient
    combinations.  Returns a dict with the max relative deviation.
    """
    rng = np.random.default_rng(seed)
    ranges = coeff_ranges or {}
    base = dict(fixed_values)
    for lab in coeff_labels:
        base[lab] = 0.0
    u0 = direct_solver(base)
    columns = []
    for lab in coeff_labels:
        values = dict(base)
        values[lab] = 1.0
        columns.append(direct_solver(values) - u0)
    deviations = []
    for _ in range(n_points):
        alpha = []
        for lab in coeff_labels:
            lo, hi = ranges.get(lab, (-1.0, 1.0))
            alpha.append(rng.uniform(lo, hi))
        exact = u0 + sum(a * c for a, c in zip(alpha, columns))
        values = dict(fixed_values)
        values.update(dict(zip(coeff_labels, alpha)))
        approx = particularize_all(tf.solution, values)
        scale = max(np.linalg.norm(exact), 1e-300)
        deviations.append(np.linalg.norm(approx - exact) / scale)
    return {"max_deviation": float(np.max(deviations)),
            "deviations": deviations}


def particularize_all(field, values):
    """Bind every parametric mode of a field; returns the nodal vector."""
    bound = field.particularize({m.label: values[m.label]
                                 for m in field.parametric})
    return bound.spatial.values.sum(axis=0) if bound.rank else \
        np.zeros(field.spatial.size)
