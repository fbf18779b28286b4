r"""Separated (CP-format) fields: sums of rank-one terms over one 2D spatial
axis and any number of 1D parametric axes.

A field with rank R over modes (space, q_1, ..., q_D) represents

    u(x, q_1, ..., q_D) = sum_r  s_r(x) * v_r^1(q_1) * ... * v_r^D(q_D),

where the spatial factors s_r are nodal vectors on a fixed mesh and each
parametric factor v_r^m lives on a 1D sample grid and is interpolated
piecewise-linearly in between.  All high-dimensional objects in the package
(patch transfer functions, separated operators) are built on this format.

Fields are immutable: every operation returns a new instance and the
underlying arrays are marked read-only, so instances can be shared freely
across threads.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .validation import RangeError, check_grid, check_unique

SPATIAL = "spatial2D"
PARAMETRIC = "parametric1D"


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def interp_weights(grid, x, label="coordinate"):
    """Piecewise-linear interpolation stencil for scalar x on a 1D grid.

    Returns (i, w) such that f(x) ~= (1 - w) * f[i] + w * f[i + 1].
    Raises RangeError when x lies outside the grid (tiny round-off slack).
    """
    x = float(x)
    lo, hi = grid[0], grid[-1]
    slack = 1e-12 * max(abs(lo), abs(hi), 1.0)
    if x < lo - slack or x > hi + slack:
        raise RangeError(label, x, lo, hi)
    x = min(max(x, lo), hi)
    i = int(np.searchsorted(grid, x, side="right") - 1)
    i = min(max(i, 0), len(grid) - 2)
    w = (x - grid[i]) / (grid[i + 1] - grid[i])
    return i, w


@dataclass(frozen=True)
class Mode:
    """One axis of a separated field.

    kind    'spatial2D' (nodal vectors on a mesh) or 'parametric1D'
    label   unique name binding the axis to a parameter / coefficient symbol
    grid    strictly increasing sample coordinates; for the spatial axis the
            node index range (0..n_dof-1)
    values  (rank, len(grid)) matrix, one coefficient row per rank-one term
    """

    kind: str
    label: str
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in (SPATIAL, PARAMETRIC):
            raise ValueError(f"unknown mode kind {self.kind!r}")
        grid = check_grid(self.grid, f"mode {self.label!r}")
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[1] != grid.size:
            raise ValueError(
                f"mode {self.label!r}: coefficient vectors have length "
                f"{values.shape[1]}, grid has {grid.size} points"
            )
        object.__setattr__(self, "grid", _readonly(grid))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def rank(self):
        return self.values.shape[0]

    @property
    def size(self):
        return self.grid.size

    def interpolate(self, x):
        """Interpolate every term's factor at x (parametric modes only)."""
        i, w = interp_weights(self.grid, x, self.label)
        return (1.0 - w) * self.values[:, i] + w * self.values[:, i + 1]

    def with_values(self, values):
        return Mode(self.kind, self.label, self.grid, values)


def spatial_mode(values, label="space"):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return Mode(SPATIAL, label, np.arange(values.shape[1], dtype=float), values)


@dataclass(frozen=True)
class SeparatedField:
    """CP-format sum of rank-one terms; first mode spatial, rest parametric."""

    modes: tuple

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ValueError("a separated field needs at least the spatial mode")
        if modes[0].kind != SPATIAL:
            raise ValueError("first mode must be spatial2D")
        if any(m.kind != PARAMETRIC for m in modes[1:]):
            raise ValueError("all modes after the first must be parametric1D")
        check_unique([m.label for m in modes])
        ranks = {m.rank for m in modes}
        if len(ranks) != 1:
            raise ValueError(f"inconsistent ranks across modes: {sorted(ranks)}")
        object.__setattr__(self, "modes", modes)

    # -- basic introspection -------------------------------------------------

    @property
    def rank(self):
        return self.modes[0].rank

    @property
    def mode_labels(self):
        return [m.label for m in self.modes]

    @property
    def spatial(self):
        return self.modes[0]

    @property
    def parametric(self):
        return self.modes[1:]

    def mode(self, label):
        for m in self.modes:
            if m.label == label:
                return m
        raise KeyError(f"no mode labelled {label!r}")

    @classmethod
    def zero(cls, n_space, parametric_axes, space_label="space"):
        """Rank-0 field over the given axes; parametric_axes = [(label, grid), ...]."""
        modes = [Mode(SPATIAL, space_label, np.arange(n_space, dtype=float),
                      np.zeros((0, n_space)))]
        for label, grid in parametric_axes:
            grid = np.asarray(grid, dtype=float)
            modes.append(Mode(PARAMETRIC, label, grid, np.zeros((0, grid.size))))
        return cls(tuple(modes))

    # -- algebra -------------------------------------------------------------

    def add_term(self, spatial_values, parametric_values):
        """Return a new field with one extra rank-one term appended.

        parametric_values maps mode label -> factor vector; every parametric
        mode must be supplied.  Raises on any dimension mismatch.
        """
        spatial_values = np.asarray(spatial_values, dtype=float).ravel()
        if spatial_values.size != self.spatial.size:
            raise ValueError(
                f"spatial factor has length {spatial_values.size}, "
                f"expected {self.spatial.size}"
            )
        missing = {m.label for m in self.parametric} - set(parametric_values)
        extra = set(parametric_values) - {m.label for m in self.parametric}
        if missing or extra:
            raise ValueError(f"parametric factors mismatch: missing {sorted(missing)}, "
                             f"unknown {sorted(extra)}")
        new_modes = [self.spatial.with_values(
            np.vstack([self.spatial.values, spatial_values[None, :]]))]
        for m in self.parametric:
            v = np.asarray(parametric_values[m.label], dtype=float).ravel()
            if v.size != m.size:
                raise ValueError(
                    f"factor for mode {m.label!r} has length {v.size}, "
                    f"expected {m.size}")
            new_modes.append(m.with_values(np.vstack([m.values, v[None, :]])))
        return SeparatedField(tuple(new_modes))

    def scaled(self, c):
        modes = [self.spatial.with_values(c * self.spatial.values)]
        modes.extend(self.parametric)
        return SeparatedField(tuple(modes))

    def evaluate(self, point, mesh=None):
        """Evaluate the separated sum at one point, one entry per mode.

        The spatial entry is either an integer node/DOF index or, when a mesh
        is supplied, a reference coordinate pair evaluated through the FE
        basis.  Parametric entries are coordinates inside the mode's grid
        range (piecewise-linear interpolation); outside values raise
        RangeError naming the mode label.
        """
        if len(point) != len(self.modes):
            raise ValueError(f"point has {len(point)} entries, field has "
                             f"{len(self.modes)} modes")
        if self.rank == 0:
            return 0.0
        sp = point[0]
        if np.ndim(sp) == 0:
            factors = self.spatial.values[:, int(sp)]
        else:
            if mesh is None:
                raise ValueError("a mesh is required to evaluate at a reference coordinate")
            nodes, shp = mesh.shape_values(np.asarray(sp, dtype=float))
            factors = self.spatial.values[:, nodes] @ shp
        for m, x in zip(self.parametric, point[1:]):
            factors = factors * m.interpolate(x)
        return float(factors.sum())

    def particularize(self, bindings):
        """Bind a subset of parametric modes at fixed values.

        Returns a field with the bound modes removed and each term's spatial
        factor scaled by the interpolated bound values, so that evaluating
        the result equals evaluating the original with the same bindings.
        """
        unknown = set(bindings) - set(self.mode_labels[1:])
        if unknown:
            raise KeyError(f"unknown mode labels: {sorted(unknown)}")
        if not bindings:
            return self
        scale = np.ones(self.rank)
        kept = [None]
        for m in self.parametric:
            if m.label in bindings:
                scale = scale * m.interpolate(bindings[m.label])
            else:
                kept.append(m)
        kept[0] = self.spatial.with_values(self.spatial.values * scale[:, None])
        return SeparatedField(tuple(kept))

    def norm2(self):
        """L2 norm of the represented tensor on its sample grid (Gram-based)."""
        if self.rank == 0:
            return 0.0
        gram = np.ones((self.rank, self.rank))
        for m in self.modes:
            gram *= m.values @ m.values.T
        return float(np.sqrt(max(gram.sum(), 0.0)))

    def term_magnitudes(self):
        mags = np.ones(self.rank)
        for m in self.modes:
            mags *= np.linalg.norm(m.values, axis=1)
        return mags

    def compress(self, tol):
        """Drop negligible terms and merge terms with parallel parametric parts.

        Terms whose parametric factor tuples are exactly parallel are summed
        into a single spatial factor (this cancels duplicated/negated terms
        exactly).  Terms contributing less than tol * field norm are dropped.
        Norm is preserved within tol; compress(f, 0) only removes exact zeros.
        """
        if self.rank == 0:
            return self
        # normalize: fold parametric magnitudes and signs into the spatial factor
        spat = self.spatial.values.copy()
        pvals = []
        for m in self.parametric:
            vm = m.values.copy()
            nrm = np.linalg.norm(vm, axis=1)
            sgn = np.ones(self.rank)
            for r in range(self.rank):
                if nrm[r] == 0.0:
                    spat[r] = 0.0
                    vm[r] = 0.0
                    continue
                nz = np.nonzero(vm[r])[0][0]
                sgn[r] = np.sign(vm[r, nz])
                vm[r] /= sgn[r] * nrm[r]
            spat *= (sgn * np.where(nrm == 0.0, 1.0, nrm))[:, None]
            pvals.append(vm)

        groups = {}
        for r in range(self.rank):
            key = tuple(v[r].tobytes() for v in pvals)
            if key in groups:
                spat[groups[key]] += spat[r]
                spat[r] = 0.0
            else:
                groups[key] = r

        keep = sorted(groups.values())
        mags = np.linalg.norm(spat[keep], axis=1)
        total = self.norm2()
        cut = tol * total
        keep = [r for r, mag in zip(keep, mags) if mag > cut and mag > 0.0]
        if not keep:
            return SeparatedField.zero(
                self.spatial.size,
                [(m.label, m.grid) for m in self.parametric],
                self.spatial.label)
        modes = [self.spatial.with_values(spat[keep])]
        for m, vm in zip(self.parametric, pvals):
            modes.append(m.with_values(vm[keep]))
        return SeparatedField(tuple(modes))
