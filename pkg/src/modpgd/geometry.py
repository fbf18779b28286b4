r"""NURBS geometry maps from the reference square to physical patch domains.

Each module owns a single 2D tensor-product patch whose control points are
affine functions of the module's geometric parameters, plus a rigid placement
(rotation / translation / reflection) used when the same pre-solved reference
patch is replicated at several positions in the assembled structure.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import (DegenerateGeometryError, RangeError, check_grid,
                         check_in_range)

EDGES = ("south", "east", "north", "west")


# ---------------------------------------------------------------------------
# B-spline basis
# ---------------------------------------------------------------------------

def bspline_basis(knots, degree, u):
    """All B-spline basis functions and first derivatives at points u.

    Plain Cox-de Boor recursion over the full basis; fine for the low degrees
    and small control nets used here.  Returns (B, dB) with shape
    (len(u), n_basis) where n_basis = len(knots) - degree - 1.
    """
    knots = np.asarray(knots, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n = knots.size - degree - 1
    # clamp evaluation to the closed parametric interval
    u = np.clip(u, knots[degree], knots[n])
    B = np.zeros((u.size, knots.size - 1))
    # degree 0
    for i in range(knots.size - 1):
        if knots[i + 1] > knots[i]:
            B[:, i] = np.where((u >= knots[i]) & (u < knots[i + 1]), 1.0, 0.0)
    # make the basis right-continuous at the last knot
    last = np.isclose(u, knots[n])
    if last.any():
        B[last, :] = 0.0
        B[last, n - 1] = 1.0
    prev = B
    for d in range(1, degree + 1):
        cur = np.zeros((u.size, knots.size - 1 - d))
        for i in range(knots.size - 1 - d):
            den1 = knots[i + d] - knots[i]
            den2 = knots[i + d + 1] - knots[i + 1]
            if den1 > 0:
                cur[:, i] += (u - knots[i]) / den1 * prev[:, i]
            if den2 > 0:
                cur[:, i] += (knots[i + d + 1] - u) / den2 * prev[:, i + 1]
        if d == degree:
            dB = np.zeros((u.size, n))
            for i in range(n):
                den1 = knots[i + degree] - knots[i]
                den2 = knots[i + degree + 1] - knots[i + 1]
                if den1 > 0:
                    dB[:, i] += degree / den1 * prev[:, i]
                if den2 > 0:
                    dB[:, i] -= degree / den2 * prev[:, i + 1]
        prev = cur
    if degree == 0:
        dB = np.zeros((u.size, n))
    return prev[:, :n], dB


def open_knot_vector(degree, n_ctrl):
    """Uniform open knot vector for n_ctrl control points of given degree."""
    n_inner = n_ctrl - degree - 1
    inner = np.linspace(0.0, 1.0, n_inner + 2)[1:-1]
    return np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferencePatch:
    """Tensor-product NURBS patch structure (degrees, knots, weights).

    Control-point coordinates are supplied separately because they depend on
    geometric parameters.  Control index (i1, i2) is flattened as
    i1 + i2 * n1, matching the mesh node ordering.
    """

    degrees: tuple
    knots1: np.ndarray
    knots2: np.ndarray
    weights: np.ndarray  # flattened (n1 * n2,)

    def __post_init__(self):
        d1, d2 = self.degrees
        if d1 < 1 or d2 < 1:
            raise ValueError("degrees must be >= 1")
        k1 = np.asarray(self.knots1, dtype=float)
        k2 = np.asarray(self.knots2, dtype=float)
        for d, k in ((d1, k1), (d2, k2)):
            if not (np.all(k[:d + 1] == k[0]) and np.all(k[-d - 1:] == k[-1])):
                raise ValueError("knot vectors must be open")
        w = np.asarray(self.weights, dtype=float).ravel()
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        n1 = k1.size - d1 - 1
        n2 = k2.size - d2 - 1
        if w.size != n1 * n2:
            raise ValueError(f"expected {n1 * n2} weights, got {w.size}")
        object.__setattr__(self, "knots1", k1)
        object.__setattr__(self, "knots2", k2)
        object.__setattr__(self, "weights", w)

    @property
    def shape(self):
        return (self.knots1.size - self.degrees[0] - 1,
                self.knots2.size - self.degrees[1] - 1)

    def basis_at(self, xi):
        """Tensorized basis products and parametric derivatives at points xi.

        xi: (P, 2) in [0,1]^2.  Returns (B, D1, D2), each (P, n1*n2).
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        b1, db1 = bspline_basis(self.knots1, self.degrees[0], xi[:, 0])
        b2, db2 = bspline_basis(self.knots2, self.degrees[1], xi[:, 1])
        n = b1.shape[1] * b2.shape[1]
        npts = xi.shape[0]
        # flatten (i1, i2) -> i1 + i2 * n1
        B = np.einsum("pi,pj->pji", b1, b2).reshape(npts, n)
        D1 = np.einsum("pi,pj->pji", db1, b2).reshape(npts, n)
        D2 = np.einsum("pi,pj->pji", b1, db2).reshape(npts, n)
        return B, D1, D2

    def map_points(self, control_points, xi):
        """Rational map and Jacobians at points xi for a given control net.

        Returns (x, J, detJ): x (P, 2), J (P, 2, 2) with J[:, :, k] the
        derivative along xi_k, detJ (P,).
        """
        ctrl = np.asarray(control_points, dtype=float).reshape(-1, 2)
        B, D1, D2 = self.basis_at(xi)
        w = self.weights
        W = B @ w
        W1 = D1 @ w
        W2 = D2 @ w
        Pw = ctrl * w[:, None]
        A = B @ Pw
        A1 = D1 @ Pw
        A2 = D2 @ Pw
        x = A / W[:, None]
        J = np.empty((x.shape[0], 2, 2))
        J[:, :, 0] = (A1 - x * W1[:, None]) / W[:, None]
        J[:, :, 1] = (A2 - x * W2[:, None]) / W[:, None]
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        return x, J, det


def unit_square_patch():
    """Degree-1 patch whose map is the identity on [0,1]^2."""
    return ReferencePatch((1, 1), [0, 0, 1, 1], [0, 0, 1, 1], np.ones(4))


@dataclass(frozen=True)
class GeometryParametrization:
    """Affine dependence of a patch control net on geometric parameters.

    control_points(p) = base + sum_label p[label] * coeffs[label].
    Positivity of det J over the admissible parameter box is checked at
    construction on a coarse sample grid.
    """

    patch: ReferencePatch
    base: np.ndarray
    coeffs: dict
    ranges: dict
    _checked: bool = field(default=False, compare=False)

    def __post_init__(self):
        n_ctrl = self.patch.weights.size
        base = np.asarray(self.base, dtype=float).reshape(n_ctrl, 2)
        coeffs = {k: np.asarray(v, dtype=float).reshape(n_ctrl, 2)
                  for k, v in self.coeffs.items()}
        if set(coeffs) - set(self.ranges):
            raise ValueError("every control-point coefficient needs a parameter range")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "coeffs", coeffs)
        if not self._checked:
            self._check_regularity()
            object.__setattr__(self, "_checked", True)

    @property
    def labels(self):
        return sorted(self.ranges)

    def control_points(self, p_geo):
        for lab in self.coeffs:
            if lab not in p_geo:
                raise KeyError(f"missing geometric parameter {lab!r}")
        ctrl = self.base.copy()
        for lab, coef in self.coeffs.items():
            lo, hi = self.ranges[lab]
            val = check_in_range(float(p_geo[lab]), lo, hi, lab)
            ctrl = ctrl + val * coef
        return ctrl

    def map(self, p_geo, xi):
        """Physical image of reference points xi at parameters p_geo."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        bad = np.any((xi < -1e-12) | (xi > 1 + 1e-12), axis=1)
        if bad.any():
            raise RangeError("xi", tuple(xi[int(np.argmax(bad))]), 0.0, 1.0)
        x, _, _ = self.patch.map_points(self.control_points(p_geo), xi)
        return x

    def jacobian(self, p_geo, xi):
        """Jacobians and determinants at xi; raises on det <= 0."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        _, J, det = self.patch.map_points(self.control_points(p_geo), xi)
        bad = det <= 0
        if bad.any():
            i = int(np.argmax(bad))
            raise DegenerateGeometryError(xi[i], [p_geo[k] for k in self.labels],
                                          float(det[i]))
        return J, det

    def _check_regularity(self, n_param=3, n_xi=5):
        axes = [np.linspace(lo, hi, n_param) for lo, hi in
                (self.ranges[k] for k in self.labels)]
        s = np.linspace(0.0, 1.0, n_xi)
        xi = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)
        if axes:
            mesh = np.meshgrid(*axes, indexing="ij")
            samples = np.stack([m.ravel() for m in mesh], axis=-1)
        else:
            samples = np.zeros((1, 0))
        for row in samples:
            p = dict(zip(self.labels, row))
            self.jacobian(p, xi)


# ---------------------------------------------------------------------------
# Rigid placements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    """Rigid transform used to replicate a reference module in the assembly."""

    theta: float = 0.0
    translation: tuple = (0.0, 0.0)
    reflect: bool = False

    def matrix(self):
        c, s = np.cos(self.theta), np.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        if self.reflect:
            rot = rot @ np.diag([1.0, -1.0])
        return rot

    def place(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.matrix().T + np.asarray(self.translation)


def place(points, placement):
    return placement.place(points)


# ---------------------------------------------------------------------------
# Built-in parametric geometries
# ---------------------------------------------------------------------------

def tapered_channel_geometry(ranges=None):
    """Straight-walled channel on [0,1]^2 in its local frame.

    Inlet edge (south) from (0,0) to (width_in, 0), outlet edge (north) from
    (0, length) to (width_out, length); the west wall is the straight side
    x = 0, the east wall tapers linearly between the two end widths.
    """
    ranges = dict(ranges or {"width_in": (1.0, 3.0), "width_out": (1.0, 3.0),
                             "length": (1.0, 3.0)})
    patch = unit_square_patch()
    base = np.zeros((4, 2))
    coeffs = {
        # flattened (i1 + 2 * i2): 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1)
        "width_in": np.array([[0, 0], [1, 0], [0, 0], [0, 0]], dtype=float),
        "width_out": np.array([[0, 0], [0, 0], [0, 0], [1, 0]], dtype=float),
        "length": np.array([[0, 0], [0, 0], [0, 1], [0, 1]], dtype=float),
    }
    return GeometryParametrization(patch, base, coeffs, ranges)


def quarter_bend_geometry(ranges=None):
    """Quarter-annulus pipe bend: inner radius + channel width parameters.

    xi_1 runs radially (inner wall at xi_1 = 0), xi_2 runs with the angle from
    the south end (on the positive x-axis) to the west... the y-axis end.
    The circular arcs are exact (degree 2, middle weight sqrt(2)/2), and both
    straight ends are linearly parametrized, so end traces conform with the
    channels they attach to.
    """
    ranges = dict(ranges or {"bend_radius": (1.0, 3.0), "width": (1.0, 3.0)})
    patch = ReferencePatch(
        (2, 2), [0, 0, 0, 1, 1, 1], [0, 0, 0, 1, 1, 1],
        np.repeat([1.0, np.sqrt(2) / 2, 1.0], 3))  # weight by angular index i2
    # radius factors per radial index: rho_i = bend_radius + f_i * width
    radial = np.array([0.0, 0.5, 1.0])
    base = np.zeros((9, 2))
    cr = np.zeros((9, 2))
    cw = np.zeros((9, 2))
    # angular index j: 0 -> (rho, 0), 1 -> (rho, rho), 2 -> (0, rho)
    patterns = [np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.array([0.0, 1.0])]
    for j, pat in enumerate(patterns):
        for i, f in enumerate(radial):
            k = i + 3 * j
            cr[k] = pat
            cw[k] = f * pat
    return GeometryParametrization(patch, base, {"bend_radius": cr, "width": cw},
                                   ranges)


# ---------------------------------------------------------------------------
# L-shaped skeleton
# ---------------------------------------------------------------------------

LSHAPE_PARAM_ORDER = ("inlet_width", "inlet_length", "bend_radius",
                      "channel_width", "outlet_length", "outlet_width")


@dataclass(frozen=True)
class PlacedModule:
    name: str
    reference: str           # name of the shared reference problem
    geometry: GeometryParametrization
    geo_values: dict         # local geometric parameter label -> value
    placement: Placement


@dataclass(frozen=True)
class InterfaceSegment:
    name: str
    modules: tuple           # (name_a, name_b)
    edges: tuple             # edge of each module, aligned orientation
    endpoints: np.ndarray    # (2, 2) physical endpoints, orientation inner->outer


def build_lshape_skeleton(p, per_module=None):
    """Instantiate the three-module curved-corner L geometry for parameters p.

    p is the 6-vector (inlet_width, inlet_length, bend_radius, channel_width,
    outlet_length, outlet_width), all in [1, 3].  The two legs share a single
    reference problem; the shared-edge constraint ties the interface-side
    width of all three modules to channel_width.  Optional per_module
    overrides (three dicts of local geometry values) are validated against
    that constraint.
    """
    p = np.asarray(p, dtype=float).ravel()
    if p.size != len(LSHAPE_PARAM_ORDER):
        raise ValueError(f"expected {len(LSHAPE_PARAM_ORDER)} parameters, got {p.size}")
    named = dict(zip(LSHAPE_PARAM_ORDER, p))
    for lab, val in named.items():
        check_in_range(val, 1.0, 3.0, lab)

    leg = tapered_channel_geometry()
    bend = quarter_bend_geometry()

    geo_values = {
        "inlet_leg": {"width_in": named["inlet_width"],
                      "width_out": named["channel_width"],
                      "length": named["inlet_length"]},
        "corner": {"bend_radius": named["bend_radius"],
                   "width": named["channel_width"]},
        "outlet_leg": {"width_in": named["channel_width"],
                       "width_out": named["outlet_width"],
                       "length": named["outlet_length"]},
    }
    if per_module is not None:
        override = dict(zip(geo_values, per_module))
        shared = (override["inlet_leg"]["width_out"],
                  override["corner"]["width"],
                  override["outlet_leg"]["width_in"])
        if not np.allclose(shared, shared[0], rtol=0, atol=1e-12):
            raise ValueError(
                f"shared-edge constraint violated: interface-side widths {shared} differ")
        geo_values = override

    r = named["bend_radius"]
    modules = (
        PlacedModule("inlet_leg", "channel", leg, geo_values["inlet_leg"],
                     Placement(0.0, (r, -named["inlet_length"]))),
        PlacedModule("corner", "bend", bend, geo_values["corner"], Placement()),
        PlacedModule("outlet_leg", "channel", leg, geo_values["outlet_leg"],
                     Placement(np.pi / 2, (0.0, r))),
    )
    w = named["channel_width"]
    interfaces = (
        InterfaceSegment("g1", ("inlet_leg", "corner"), ("north", "south"),
                         np.array([[r, 0.0], [r + w, 0.0]])),
        InterfaceSegment("g2", ("corner", "outlet_leg"), ("north", "south"),
                         np.array([[0.0, r], [0.0, r + w]])),
    )
    return modules, interfaces
