"""Problem definitions: parametric modules, skeleton topology and bindings.

A problem couples a set of reference parametric sub-problems (each solved
once offline) with placed module instances whose parametric axes are bound
either to global parameters or to interface coefficient slots, plus the
interface list itself.  Problems are defined programmatically by the
builders below or loaded from a schema-validated JSON document.
"""

import json
from dataclasses import dataclass, field

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from .geometry import (GeometryParametrization, Placement, ReferencePatch,
                       quarter_bend_geometry, tapered_channel_geometry,
                       unit_square_patch)
from .interface import InterfaceBasis
from .kernels import ParamAxis, make_axis
from .pgd import PgdSettings
from .validation import RangeError, SchemaError, check_in_range

HEAT_EDGE_ORDER = ("south", "east", "north", "west")


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeCondition:
    kind: str                   # "flux" | "dirichlet" | "free"
    labels: tuple = ()          # coefficient axis labels (flux edges)
    value: float = 0.0          # imposed value (dirichlet edges)
    components: tuple = (0,)    # constrained components (dirichlet edges)
    component: int = 0          # loaded component (flux edges)


@dataclass(frozen=True)
class ReferenceProblem:
    """One pre-solvable parametric sub-problem on the reference square."""

    name: str
    physics: str                      # "heat" | "plate"
    geometry: GeometryParametrization
    axes: tuple                       # ParamAxis, canonical order
    edges: dict
    conductivity: float = 1.0
    material: dict = None             # plate: role -> axis label
    quad_order: int = 2
    shear_quad_order: int = 1

    def __post_init__(self):
        labels = [a.label for a in self.axes]
        if len(set(labels)) != len(labels):
            raise SchemaError(f"{self.name}: duplicate axis labels")
        for lab in self.geometry.coeffs:
            if lab not in labels:
                raise SchemaError(f"{self.name}: geometric parameter {lab!r} "
                                  "has no axis")
        for edge, cond in self.edges.items():
            if cond.kind == "flux":
                for lab in cond.labels:
                    if lab not in labels:
                        raise SchemaError(f"{self.name}: flux label {lab!r} on "
                                          f"edge {edge!r} has no axis")

    @property
    def n_components(self):
        return 3 if self.physics == "plate" else 1

    def axis(self, label):
        for a in self.axes:
            if a.label == label:
                return a
        raise KeyError(label)

    @property
    def parameter_count(self):
        return len(self.axes)


@dataclass(frozen=True)
class AffineScalar:
    """const + sum coeff_i * params[name_i]; used for placement data."""

    const: float = 0.0
    terms: tuple = ()   # ((param_name, coeff), ...)

    def __call__(self, params):
        out = self.const
        for name, coef in self.terms:
            out += coef * params[name]
        return out


@dataclass(frozen=True)
class PlacementSpec:
    theta: float = 0.0
    reflect: bool = False
    translation: tuple = (AffineScalar(), AffineScalar())

    def resolve(self, params):
        return Placement(self.theta,
                         (self.translation[0](params),
                          self.translation[1](params)),
                         self.reflect)


@dataclass(frozen=True)
class Binding:
    """Source of one parametric axis value of a module instance."""

    kind: str            # "param" | "interface"
    param: str = None
    interface: str = None
    index: int = 0
    sign: float = 1.0


@dataclass(frozen=True)
class ModuleInstance:
    name: str
    reference: str
    bindings: dict       # axis label -> Binding
    placement: PlacementSpec = PlacementSpec()

    def geometry_labels(self, ref):
        return [lab for lab in ref.geometry.coeffs]

    def axis_value(self, label, params):
        b = self.bindings[label]
        if b.kind != "param":
            raise KeyError(f"axis {label!r} is interface-bound")
        return params[b.param]

    def geometry_values(self, params):
        """Values of every param-bound axis (superset of the geometric ones;
        the geometry map reads only the labels it declares)."""
        out = {}
        for lab, b in self.bindings.items():
            if b.kind == "param":
                out[lab] = params[b.param]
        return out


@dataclass
class Problem:
    """Full problem document: modules linked by interfaces."""

    name: str
    physics: str
    parameters: dict                 # global name -> (lo, hi)
    references: dict                 # name -> ReferenceProblem
    modules: list                    # ModuleInstance
    interfaces: list                 # InterfaceSpec
    basis: InterfaceBasis
    mesh_nodes: int = 21
    pgd: PgdSettings = field(default_factory=PgdSettings)
    operator_tol: float = 1e-6
    dirichlet_value: float = 0.0

    def __post_init__(self):
        names = [m.name for m in self.modules]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate module names")
        for itf in self.interfaces:
            if len(itf.modules) != 2:
                raise SchemaError(f"interface {itf.name!r} must name exactly "
                                  "two modules")
            for mn in itf.modules:
                if mn not in names:
                    raise SchemaError(f"interface {itf.name!r} references "
                                      f"unknown module {mn!r}")
        for m in self.modules:
            if m.reference not in self.references:
                raise SchemaError(f"module {m.name!r} references unknown "
                                  f"problem {m.reference!r}")
            ref = self.references[m.reference]
            for a in ref.axes:
                if a.label not in m.bindings:
                    raise SchemaError(f"module {m.name!r}: axis {a.label!r} "
                                      "is unbound")
            for lab, b in m.bindings.items():
                if b.kind == "param" and b.param not in self.parameters:
                    raise SchemaError(f"module {m.name!r}: unknown parameter "
                                      f"{b.param!r}")
                if b.kind == "interface" and b.interface not in \
                        {i.name for i in self.interfaces}:
                    raise SchemaError(f"module {m.name!r}: unknown interface "
                                      f"{b.interface!r}")
        for itf in self.interfaces:
            for side, (mn, edge) in enumerate(zip(itf.modules, itf.edges)):
                m = self.module(mn)
                cond = self.references[m.reference].edges[edge]
                if cond.kind != "flux":
                    raise SchemaError(f"interface {itf.name!r}: edge {edge!r} "
                                      f"of {mn!r} is not a flux edge")
                want = 1.0 if side == 0 else -1.0
                for j, lab in enumerate(cond.labels):
                    b = m.bindings[lab]
                    if (b.kind != "interface" or b.interface != itf.name
                            or b.index != j or b.sign != want):
                        raise SchemaError(
                            f"interface {itf.name!r}: module {mn!r} edge "
                            f"{edge!r} must bind slot {j} with sign {want:+g}")

    @property
    def n_components(self):
        return 3 if self.physics == "plate" else 1

    def module(self, name):
        for m in self.modules:
            if m.name == name:
                return m
        raise KeyError(name)

    def interface(self, name):
        for itf in self.interfaces:
            if itf.name == name:
                return itf
        raise KeyError(name)

    def check_params(self, params):
        """Validate a full global parameter dict against declared ranges."""
        out = {}
        for name, (lo, hi) in self.parameters.items():
            if name not in params:
                raise RangeError(name, None, lo, hi)
            out[name] = check_in_range(float(params[name]), lo, hi, name)
        return out

    def interface_slots(self):
        """Ordered (interface name, R) pairs defining the Lambda layout."""
        return [(itf.name, self.basis.count) for itf in self.interfaces]

    def midpoint_params(self):
        return {k: 0.5 * (lo + hi) for k, (lo, hi) in self.parameters.items()}

    def sample_params(self, rng_or_seed):
        rng = np.random.default_rng(rng_or_seed) \
            if not isinstance(rng_or_seed, np.random.Generator) else rng_or_seed
        return {k: rng.uniform(lo, hi) for k, (lo, hi) in self.parameters.items()}


@dataclass(frozen=True)
class InterfaceSpec:
    name: str
    modules: tuple       # (first, second); first carries +alpha, second -alpha
    edges: tuple         # edge of each module, aligned global orientation


def edge_coefficient_values(problem, module, edge, params,
                            interface_coeffs=None):
    """Resolve the coefficient vector imposed on one flux edge of a module.

    Load edges read global parameters; interface edges read the given
    interface coefficient vectors with the module's binding sign, or return
    None when interface values are not supplied.
    """
    ref = problem.references[module.reference]
    cond = ref.edges[edge]
    if cond.kind != "flux":
        raise ValueError(f"edge {edge!r} of {module.name!r} carries no profile")
    out = np.zeros(len(cond.labels))
    for j, lab in enumerate(cond.labels):
        b = module.bindings[lab]
        if b.kind == "param":
            out[j] = params[b.param]
        else:
            if interface_coeffs is None:
                return None
            out[j] = b.sign * np.asarray(interface_coeffs[b.interface])[b.index]
    return out


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

_SCHEMA = {
    "type": "object",
    "required": ["name", "physics", "parameters", "references", "modules",
                 "interfaces"],
    "properties": {
        "name": {"type": "string"},
        "physics": {"enum": ["heat", "plate"]},
        "mesh_nodes": {"type": "integer", "minimum": 2},
        "operator_tol": {"type": "number", "exclusiveMinimum": 0},
        "dirichlet_value": {"type": "number"},
        "parameters": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "array", "items": {"type": "number"},
                "minItems": 2, "maxItems": 2},
        },
        "basis": {
            "type": "object",
            "properties": {"count": {"type": "integer", "minimum": 1},
                           "kind": {"type": "string"}},
        },
        "pgd": {"type": "object"},
        "references": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "required": ["physics", "geometry", "axes", "edges"],
                "properties": {
                    "physics": {"enum": ["heat", "plate"]},
                    "axes": {"type": "array", "minItems": 1},
                    "edges": {"type": "object"},
                },
            },
        },
        "modules": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "reference", "bindings"],
            },
        },
        "interfaces": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "modules", "edges"],
                "properties": {
                    "modules": {"type": "array", "minItems": 2, "maxItems": 2},
                    "edges": {"type": "array", "minItems": 2, "maxItems": 2},
                },
            },
        },
    },
}


def _axis_to_dict(a):
    return {"label": a.label, "grid": a.grid.tolist(),
            "weights": a.weights.tolist()}


def _geometry_to_dict(g):
    return {
        "degrees": list(g.patch.degrees),
        "knots1": g.patch.knots1.tolist(),
        "knots2": g.patch.knots2.tolist(),
        "weights": g.patch.weights.tolist(),
        "base": g.base.tolist(),
        "coeffs": {k: v.tolist() for k, v in g.coeffs.items()},
        "ranges": {k: list(v) for k, v in g.ranges.items()},
    }


def _geometry_from_dict(d):
    patch = ReferencePatch(tuple(d["degrees"]), np.array(d["knots1"]),
                           np.array(d["knots2"]), np.array(d["weights"]))
    return GeometryParametrization(
        patch, np.array(d["base"]),
        {k: np.array(v) for k, v in d["coeffs"].items()},
        {k: tuple(v) for k, v in d["ranges"].items()})


def problem_to_dict(problem):
    """Plain-JSON representation of a problem (the problem-file format)."""
    from dataclasses import asdict
    doc = {
        "name": problem.name,
        "physics": problem.physics,
        "mesh_nodes": problem.mesh_nodes,
        "operator_tol": problem.operator_tol,
        "dirichlet_value": problem.dirichlet_value,
        "parameters": {k: list(v) for k, v in problem.parameters.items()},
        "basis": {"count": problem.basis.count, "kind": problem.basis.kind},
        "pgd": asdict(problem.pgd),
        "references": {},
        "modules": [],
        "interfaces": [{"name": i.name, "modules": list(i.modules),
                        "edges": list(i.edges)} for i in problem.interfaces],
    }
    for name, ref in problem.references.items():
        doc["references"][name] = {
            "physics": ref.physics,
            "conductivity": ref.conductivity,
            "material": ref.material,
            "quad_order": ref.quad_order,
            "shear_quad_order": ref.shear_quad_order,
            "geometry": _geometry_to_dict(ref.geometry),
            "axes": [_axis_to_dict(a) for a in ref.axes],
            "edges": {e: {"kind": c.kind, "labels": list(c.labels),
                          "value": c.value, "components": list(c.components),
                          "component": c.component}
                      for e, c in ref.edges.items()},
        }
    for m in problem.modules:
        bindings = {}
        for lab, b in m.bindings.items():
            if b.kind == "param":
                bindings[lab] = {"kind": "param", "param": b.param}
            else:
                bindings[lab] = {"kind": "interface", "interface": b.interface,
                                 "index": b.index, "sign": b.sign}
        doc["modules"].append({
            "name": m.name,
            "reference": m.reference,
            "bindings": bindings,
            "placement": {
                "theta": m.placement.theta,
                "reflect": m.placement.reflect,
                "translation": [{"const": t.const,
                                 "terms": {k: c for k, c in t.terms}}
                                for t in m.placement.translation],
            },
        })
    return doc


def problem_from_dict(doc):
    """Validate and reconstruct a Problem from its JSON representation."""
    if jsonschema is not None:
        try:
            jsonschema.validate(doc, _SCHEMA)
        except jsonschema.ValidationError as exc:
            raise SchemaError(f"problem file invalid: {exc.message}") from exc
    try:
        references = {}
        for name, rd in doc["references"].items():
            axes = tuple(ParamAxis(a["label"], np.array(a["grid"]),
                                   np.array(a["weights"]))
                         for a in rd["axes"])
            edges = {}
            for e, cd in rd["edges"].items():
                edges[e] = EdgeCondition(cd["kind"], tuple(cd.get("labels", ())),
                                         cd.get("value", 0.0),
                                         tuple(cd.get("components", (0,))),
                                         cd.get("component", 0))
            references[name] = ReferenceProblem(
                name, rd["physics"], _geometry_from_dict(rd["geometry"]),
                axes, edges, rd.get("conductivity", 1.0), rd.get("material"),
                rd.get("quad_order", 2), rd.get("shear_quad_order", 1))
        modules = []
        for md in doc["modules"]:
            bindings = {}
            for lab, bd in md["bindings"].items():
                if bd["kind"] == "param":
                    bindings[lab] = Binding("param", param=bd["param"])
                else:
                    bindings[lab] = Binding("interface",
                                            interface=bd["interface"],
                                            index=int(bd["index"]),
                                            sign=float(bd["sign"]))
            pd = md.get("placement", {})
            translation = tuple(
                AffineScalar(t.get("const", 0.0),
                             tuple(sorted(t.get("terms", {}).items())))
                for t in pd.get("translation",
                                [{"const": 0.0}, {"const": 0.0}]))
            modules.append(ModuleInstance(
                md["name"], md["reference"], bindings,
                PlacementSpec(pd.get("theta", 0.0), pd.get("reflect", False),
                              translation)))
        interfaces = [InterfaceSpec(i["name"], tuple(i["modules"]),
                                    tuple(i["edges"]))
                      for i in doc["interfaces"]]
        basis_doc = doc.get("basis", {})
        pgd_doc = dict(doc.get("pgd", {}))
        return Problem(
            doc["name"], doc["physics"],
            {k: tuple(v) for k, v in doc["parameters"].items()},
            references, modules, interfaces,
            InterfaceBasis(basis_doc.get("count", 3),
                           basis_doc.get("kind", "legendre")),
            doc.get("mesh_nodes", 21),
            PgdSettings(**pgd_doc),
            doc.get("operator_tol", 1e-6),
            doc.get("dirichlet_value", 0.0))
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"problem file invalid: {exc}") from exc


def load_problem(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"problem file is not valid JSON: {exc}") from exc
    return problem_from_dict(doc)


def save_problem(problem, path):
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh, indent=1, sort_keys=True)
        fh.write("\n")


def nominal_dof_counts(problem, nodes_per_direction=None):
    """Nominal tensor-grid DOF count per reference problem: n^(2 + N_modes)
    (two spatial directions plus one per parametric axis)."""
    out = {}
    for name, ref in problem.references.items():
        n = nodes_per_direction or ref.axes[0].size
        out[name] = int(n) ** (2 + ref.parameter_count)
    return out


def assemble_reference(ref, mesh, basis, operator_tol=1e-6):
    """Separated operator and RHS terms for one reference sub-problem."""
    from .kernels import (assemble_diffusion, assemble_neumann_load,
                          assemble_plate)
    dirichlet_edges = [e for e, c in ref.edges.items() if c.kind == "dirichlet"]
    dirichlet_value = next((c.value for c in ref.edges.values()
                            if c.kind == "dirichlet"), 0.0)
    if ref.physics == "heat":
        op = assemble_diffusion(mesh, ref.geometry, ref.axes, ref.conductivity,
                                dirichlet_edges, dirichlet_value,
                                ref.quad_order, operator_tol)
    else:
        op = assemble_plate(mesh, ref.axes,
                            span_label=ref.material["span"],
                            height_label=ref.material["height"],
                            thickness_label=ref.material["thickness"],
                            youngs_label=ref.material["youngs"],
                            poisson_label=ref.material["poisson"],
                            clamped_edges=dirichlet_edges,
                            quad_order=ref.quad_order,
                            shear_quad_order=ref.shear_quad_order)
    rhs = []
    for edge, cond in ref.edges.items():
        if cond.kind == "flux":
            rhs.extend(assemble_neumann_load(
                mesh, ref.geometry, edge, basis, cond.labels, ref.axes,
                cond.component, ref.n_components))
    return op, rhs


# ---------------------------------------------------------------------------
# Built-in problems
# ---------------------------------------------------------------------------

def _flux_labels(prefix):
    return tuple(f"{prefix}_{j}" for j in (1, 2, 3))


def lshape_problem(mesh_nodes=21, grid_points=11, pgd=None, basis_count=3,
                   flux_range=(-100.0, 100.0), dirichlet_value=0.0,
                   operator_tol=1e-6):
    """Curved-corner L-shaped conduction problem (three modules, two
    interfaces, two reference sub-problems).

    Global parameters: six shape parameters in [1, 3] (the fourth,
    channel_width, is the shared interface width) and six flux-profile
    coefficients.
    """
    geo_range = (1.0, 3.0)
    leg_geo = tapered_channel_geometry({k: geo_range for k in
                                        ("width_in", "width_out", "length")})
    bend_geo = quarter_bend_geometry({k: geo_range for k in
                                      ("bend_radius", "width")})
    n = grid_points
    flux_in = _flux_labels("flux_in")
    flux_out = _flux_labels("flux_out")

    def flux_axes():
        return [make_axis(lab, *flux_range, n) for lab in flux_in + flux_out]

    channel = ReferenceProblem(
        "channel", "heat", leg_geo,
        tuple([make_axis("width_in", *geo_range, n, spacing="log"),
               make_axis("width_out", *geo_range, n, spacing="log"),
               make_axis("length", *geo_range, n, spacing="log")] + flux_axes()),
        {"south": EdgeCondition("flux", flux_in),
         "north": EdgeCondition("flux", flux_out),
         "west": EdgeCondition("dirichlet", value=dirichlet_value),
         "east": EdgeCondition("free")},
        quad_order=2)
    bend = ReferenceProblem(
        "bend", "heat", bend_geo,
        tuple([make_axis("bend_radius", *geo_range, n, spacing="log"),
               make_axis("width", *geo_range, n, spacing="log")] + flux_axes()),
        {"south": EdgeCondition("flux", flux_in),
         "north": EdgeCondition("flux", flux_out),
         "west": EdgeCondition("dirichlet", value=dirichlet_value),
         "east": EdgeCondition("free")},
        quad_order=3)

    params = {k: geo_range for k in ("inlet_width", "inlet_length",
                                     "bend_radius", "channel_width",
                                     "outlet_length", "outlet_width")}
    params.update({lab: flux_range for lab in flux_in + flux_out})

    def pb(name):
        return Binding("param", param=name)

    def ib(iface, j, sign):
        return Binding("interface", interface=iface, index=j, sign=sign)

    modules = [
        ModuleInstance(
            "inlet_leg", "channel",
            {"width_in": pb("inlet_width"), "width_out": pb("channel_width"),
             "length": pb("inlet_length"),
             **{lab: pb(lab) for lab in flux_in},
             **{lab: ib("g1", j, +1.0) for j, lab in enumerate(flux_out)}},
            PlacementSpec(0.0, False,
                          (AffineScalar(0.0, (("bend_radius", 1.0),)),
                           AffineScalar(0.0, (("inlet_length", -1.0),))))),
        ModuleInstance(
            "corner", "bend",
            {"bend_radius": pb("bend_radius"), "width": pb("channel_width"),
             **{lab: ib("g1", j, -1.0) for j, lab in enumerate(flux_in)},
             **{lab: ib("g2", j, +1.0) for j, lab in enumerate(flux_out)}},
            PlacementSpec()),
        ModuleInstance(
            "outlet_leg", "channel",
            {"width_in": pb("channel_width"), "width_out": pb("outlet_width"),
             "length": pb("outlet_length"),
             **{lab: ib("g2", j, -1.0) for j, lab in enumerate(flux_in)},
             **{lab: pb(lab) for lab in flux_out}},
            PlacementSpec(np.pi / 2, False,
                          (AffineScalar(), AffineScalar(0.0, (("bend_radius", 1.0),))))),
    ]
    interfaces = [
        InterfaceSpec("g1", ("inlet_leg", "corner"), ("north", "south")),
        InterfaceSpec("g2", ("corner", "outlet_leg"), ("north", "south")),
    ]
    problem = Problem("lshape", "heat", params,
                      {"channel": channel, "bend": bend}, modules, interfaces,
                      InterfaceBasis(basis_count), mesh_nodes,
                      pgd or PgdSettings(), operator_tol, dirichlet_value)
    return problem


def rectangle_geometry(span_label="span", height_label="height",
                       ranges=None):
    ranges = dict(ranges or {span_label: (0.1, 0.3), height_label: (0.1, 0.3)})
    patch = unit_square_patch()
    coeffs = {
        span_label: np.array([[0, 0], [1, 0], [0, 0], [1, 0]], dtype=float),
        height_label: np.array([[0, 0], [0, 0], [0, 1], [0, 1]], dtype=float),
    }
    return GeometryParametrization(patch, np.zeros((4, 2)), coeffs, ranges)


def plate_problem(mesh_nodes=15, grid_points=11, pgd=None, basis_count=3,
                  force_range=(-1e4, 1e4), operator_tol=1e-6,
                  thickness_weight_exponent=6.0):
    """Two-module clamped plate under edge loads (one reference sub-problem).

    Both modules are axis-aligned rectangles sharing their full vertical
    interface edge; the shared height is the global parameter c1 (the
    published constraint ties it to the second module).  Parameters b1 and c2
    are accepted and range-checked but have no geometric realization on
    rectangles.
    """
    length_range = (0.1, 0.3)
    h_range = (1e-3, 1e-2)
    e_range = (1e11, 3e11)
    nu_range = (0.2, 0.4)
    n = grid_points
    west = _flux_labels("load_west")
    east = _flux_labels("load_east")
    geometry = rectangle_geometry(ranges={"span": length_range,
                                          "height": length_range})
    axes = tuple(
        [make_axis("span", *length_range, n, spacing="log"),
         make_axis("height", *length_range, n, spacing="log"),
         make_axis("thickness", *h_range, n, spacing="log",
                   weight_exponent=thickness_weight_exponent),
         make_axis("youngs", *e_range, n),
         make_axis("poisson", *nu_range, n)]
        + [make_axis(lab, *force_range, n) for lab in west + east])
    plate = ReferenceProblem(
        "plate", "plate", geometry, axes,
        {"west": EdgeCondition("flux", west, component=0),
         "east": EdgeCondition("flux", east, component=0),
         "south": EdgeCondition("dirichlet", components=(0, 1, 2)),
         "north": EdgeCondition("free")},
        material={"span": "span", "height": "height", "thickness": "thickness",
                  "youngs": "youngs", "poisson": "poisson"},
        quad_order=2, shear_quad_order=1)

    params = {"a1": length_range, "b1": length_range, "c1": length_range,
              "a2": length_range, "c2": length_range,
              "h1": h_range, "h2": h_range, "E1": e_range, "E2": e_range,
              "nu1": nu_range, "nu2": nu_range}
    params.update({f"beta{j}": force_range for j in range(1, 7)})

    def pb(name):
        return Binding("param", param=name)

    def ib(j, sign):
        return Binding("interface", interface="g1", index=j, sign=sign)

    modules = [
        ModuleInstance(
            "left", "plate",
            {"span": pb("a1"), "height": pb("c1"), "thickness": pb("h1"),
             "youngs": pb("E1"), "poisson": pb("nu1"),
             **{lab: pb(f"beta{j + 1}") for j, lab in enumerate(west)},
             **{lab: ib(j, +1.0) for j, lab in enumerate(east)}},
            PlacementSpec()),
        ModuleInstance(
            "right", "plate",
            {"span": pb("a2"), "height": pb("c1"), "thickness": pb("h2"),
             "youngs": pb("E2"), "poisson": pb("nu2"),
             **{lab: ib(j, -1.0) for j, lab in enumerate(west)},
             **{lab: pb(f"beta{j + 4}") for j, lab in enumerate(east)}},
            PlacementSpec(0.0, False,
                          (AffineScalar(0.0, (("a1", 1.0),)), AffineScalar()))),
    ]
    interfaces = [InterfaceSpec("g1", ("left", "right"), ("east", "west"))]
    problem = Problem("plate", "plate", params, {"plate": plate}, modules,
                      interfaces, InterfaceBasis(basis_count), mesh_nodes,
                      pgd or PgdSettings(max_rank=80), operator_tol, 0.0)
    return problem


def channel_chain_problem(n_modules=3, mesh_nodes=9, grid_points=7, pgd=None,
                          basis_count=3, geo_range=(1.0, 3.0),
                          flux_range=(-100.0, 100.0)):
    """Straight chain of tapered-channel modules, used for synthetic topology
    tests (interface Jacobian sparsity) and the two-module rod benchmark."""
    n = grid_points
    flux_in = _flux_labels("flux_in")
    flux_out = _flux_labels("flux_out")
    leg_geo = tapered_channel_geometry({k: geo_range for k in
                                        ("width_in", "width_out", "length")})
    channel = ReferenceProblem(
        "channel", "heat", leg_geo,
        tuple([make_axis("width_in", *geo_range, n),
               make_axis("width_out", *geo_range, n),
               make_axis("length", *geo_range, n)]
              + [make_axis(lab, *flux_range, n) for lab in flux_in + flux_out]),
        {"south": EdgeCondition("flux", flux_in),
         "north": EdgeCondition("flux", flux_out),
         "west": EdgeCondition("dirichlet", value=0.0),
         "east": EdgeCondition("free")},
        quad_order=2)

    params = {"width": geo_range, "length": geo_range}
    params.update({lab: flux_range for lab in ("q_in_1", "q_in_2", "q_in_3",
                                               "q_out_1", "q_out_2", "q_out_3")})

    def pb(name):
        return Binding("param", param=name)

    modules = []
    interfaces = []
    for k in range(n_modules):
        bindings = {"width_in": pb("width"), "width_out": pb("width"),
                    "length": pb("length")}
        if k == 0:
            bindings.update({lab: pb(f"q_in_{j + 1}")
                             for j, lab in enumerate(flux_in)})
        else:
            bindings.update({lab: Binding("interface", interface=f"s{k}",
                                          index=j, sign=-1.0)
                             for j, lab in enumerate(flux_in)})
        if k == n_modules - 1:
            bindings.update({lab: pb(f"q_out_{j + 1}")
                             for j, lab in enumerate(flux_out)})
        else:
            bindings.update({lab: Binding("interface", interface=f"s{k + 1}",
                                          index=j, sign=+1.0)
                             for j, lab in enumerate(flux_out)})
        modules.append(ModuleInstance(
            f"seg{k + 1}", "channel", bindings,
            PlacementSpec(0.0, False,
                          (AffineScalar(),
                           AffineScalar(0.0, (("length", float(k)),))))))
        if k:
            interfaces.append(InterfaceSpec(f"s{k}", (f"seg{k}", f"seg{k + 1}"),
                                            ("north", "south")))
    problem = Problem("chain", "heat", params, {"channel": channel}, modules,
                      interfaces, InterfaceBasis(basis_count), mesh_nodes,
                      pgd or PgdSettings(max_rank=30), 1e-8, 0.0)
    return problem
