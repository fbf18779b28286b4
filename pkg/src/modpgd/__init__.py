"""modpgd: modular offline/online surrogates for parametric PDEs.

Parametric patch problems (geometry, material and boundary-condition
parameters, plus reduced interface conditions treated as extra coordinates)
are pre-solved offline into separated-format transfer functions; full-system
solutions are then assembled online by equilibrating the interfaces with a
Newton iteration on the reduced interface coefficients.
"""

from .separated import Mode, SeparatedField
from .validation import (DegenerateGeometryError, ModpgdError, RangeError,
                         SchemaError, UnconvergedError)

__version__ = "0.1.0"

__all__ = [
    "Mode",
    "SeparatedField",
    "ModpgdError",
    "SchemaError",
    "RangeError",
    "DegenerateGeometryError",
    "UnconvergedError",
    "__version__",
]
