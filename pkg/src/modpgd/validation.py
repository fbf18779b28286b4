"""Input validation helpers and the package's error hierarchy.

Exit-code mapping used by the CLI: SchemaError -> 2, UnconvergedError -> 3,
RangeError -> 4.
"""

import numpy as np


class ModpgdError(Exception):
    """Base class for all package errors."""


class SchemaError(ModpgdError):
    """Problem file or catalog does not match the expected schema/version."""


class RangeError(ModpgdError, ValueError):
    """A coordinate or parameter value lies outside its admissible range."""

    def __init__(self, label, value, lo=None, hi=None):
        self.label = label
        self.value = value
        self.lo, self.hi = lo, hi
        bounds = f" (range [{lo}, {hi}])" if lo is not None else ""
        super().__init__(f"value {value!r} out of range for {label!r}{bounds}")


class DegenerateGeometryError(ModpgdError):
    """Geometry map has a non-positive Jacobian determinant."""

    def __init__(self, xi, p_geo, det):
        self.xi, self.p_geo, self.det = xi, p_geo, det
        super().__init__(
            f"degenerate geometry: det J = {det:.3e} at xi={tuple(np.round(xi, 6))}, "
            f"p_geo={tuple(np.round(np.atleast_1d(p_geo), 6))}"
        )


class UnconvergedError(ModpgdError):
    """A solver hit its iteration cap with the residual above tolerance."""


class WellPosednessError(ModpgdError):
    """The discrete problem is singular as posed (e.g. no Dirichlet data)."""


def as_array(x, name, shape=None, dtype=float):
    a = np.asarray(x, dtype=dtype)
    if shape is not None and a.shape != tuple(shape):
        raise ValueError(f"{name}: expected shape {tuple(shape)}, got {a.shape}")
    return a


def check_grid(grid, label="grid"):
    """Validate a 1D sample grid: at least two points, strictly increasing."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError(f"{label}: need a 1D grid with >= 2 points, got shape {grid.shape}")
    if not np.all(np.diff(grid) > 0):
        raise ValueError(f"{label}: grid must be strictly increasing")
    return grid

def check_in_range(value, lo, hi, label, rtol=1e-12):
    """Check lo <= value <= hi with a tiny relative slack for round-off."""
    slack = rtol * max(abs(lo), abs(hi), 1.0)
    if not (lo - slack <= value <= hi + slack):
        raise RangeError(label, value, lo, hi)
    return float(min(max(value, lo), hi))


def check_unique(labels, what="mode labels"):
    seen = set()
    for lab in labels:
        if lab in seen:
            raise ValueError(f"duplicate {what}: {lab!r}")
        seen.add(lab)
    return list(labels)
