"""Problem configuration: ingestion, validation and assembly of the
pipeline objects.

A problem is one JSON file.  Coordinates are named; every matrix entry is
expression text compiled by the expression language.  Structure constants
are sparse [c, a, b, value] records by coordinate name; the antisymmetric
counterpart of each entry is filled in automatically and conflicting
duplicates are rejected.  The multiplication map names its second
argument's coordinates with the suffix "_b".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, KsymError
from .exprlang import parse
from .geometry import LieAlgebraData
from .lagrangian import ExpressionLagrangian, MetricLagrangian
from .solver import GridSpec
from .symmetry import PrincipalBundleData, build_invariant_frame

__all__ = ["ProblemConfig", "load_config", "parse_config"]


@dataclass
class ProblemConfig:
    k: int
    base_names: list
    fiber_names: list
    data: PrincipalBundleData
    lagrangian: object
    grid: list  # list of GridSpec
    init_base: np.ndarray
    init_fiber: np.ndarray
    init_v: np.ndarray
    init_w: np.ndarray
    pass_tol: float = 1e-8
    fail_tol: float = 1e-3
    samples: int = 100
    raw: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.base_names) + len(self.fiber_names)

    def invariant_frame(self):
        return build_invariant_frame(self.data)


def _expr(text, path):
    try:
        return parse(str(text))
    except KsymError as err:
        raise ConfigError(f"bad expression {text!r}: {err}", path) from None


def _expr_matrix(rows, path, shape):
    if len(rows) != shape[0] or any(len(r) != shape[1] for r in rows):
        raise ConfigError(f"expected a {shape[0]}x{shape[1]} matrix", path)
    return [[_expr(e, f"{path}[{i}][{j}]") for j, e in enumerate(row)]
            for i, row in enumerate(rows)]


def _structure_constants(entries, fiber_names, path):
    nf = len(fiber_names)
    idx = {name: i for i, name in enumerate(fiber_names)}
    C = np.zeros((nf, nf, nf))
    explicit = {}
    for m, rec in enumerate(entries):
        p = f"{path}[{m}]"
        try:
            c, a, b = idx[rec["c"]], idx[rec["a"]], idx[rec["b"]]
            val = float(rec["value"])
        except (KeyError, TypeError) as err:
            raise ConfigError(f"bad structure-constant record: {err}", p) \
                from None
        if (c, a, b) in explicit and explicit[(c, a, b)] != val:
            raise ConfigError("duplicate entry with conflicting value", p)
        explicit[(c, a, b)] = val
    for (c, a, b), val in explicit.items():
        mirror = explicit.get((c, b, a))
        if mirror is not None and mirror != -val:
            raise ConfigError(
                f"structure constants not antisymmetric at c={c} a={a} b={b}",
                path)
        C[c][a][b] = val
        C[c][b][a] = -val
    try:
        return LieAlgebraData(dim=nf, C=C)
    except ValueError as err:
        raise ConfigError(str(err), path) from None


def parse_config(doc):
    """Validate a JSON-compatible dict and assemble the problem objects."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object", "")
    try:
        k = int(doc["k"])
        base_names = list(doc.get("base_coords", []))
        fiber_names = list(doc.get("fiber_coords", []))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"missing or bad field: {err}", "") from None
    if k < 1:
        raise ConfigError("k must be >= 1", "k")
    nb, nf = len(base_names), len(fiber_names)
    if nb + nf < 1:
        raise ConfigError("need at least one coordinate", "base_coords")

    algebra = _structure_constants(doc.get("structure_constants", []),
                                   fiber_names, "structure_constants")
    gamma = _expr_matrix(doc.get("gamma", [["0"] * nf] * nb), "gamma",
                         (nb, nf)) if nf else [[] for _ in range(nb)]
    eye = [["1" if i == j else "0" for j in range(nf)] for i in range(nf)]
    Kmat = _expr_matrix(doc.get("K", eye), "K", (nf, nf)) if nf else []
    Amat = _expr_matrix(doc.get("A", eye), "A", (nf, nf)) if nf else []
    mult = None
    if "mult" in doc:
        if len(doc["mult"]) != nf:
            raise ConfigError("mult needs one expression per fiber "
                              "coordinate", "mult")
        mult = [_expr(e, f"mult[{i}]") for i, e in enumerate(doc["mult"])]
    identity = doc.get("identity")
    data = PrincipalBundleData(
        base_names=base_names, fiber_names=fiber_names, algebra=algebra,
        gamma=gamma, Kmat=Kmat, Amat=Amat, mult=mult,
        identity=None if identity is None else np.asarray(identity, float))
    try:
        data.validate()
    except ValueError as err:
        raise ConfigError(str(err), "bundle data") from None

    var_names = base_names + fiber_names
    lag = doc.get("lagrangian")
    if not isinstance(lag, dict) or not ({"metric", "expression"} & set(lag)):
        raise ConfigError("lagrangian needs a 'metric' matrix or an "
                          "'expression'", "lagrangian")
    try:
        if "metric" in lag:
            entries = _expr_matrix(lag["metric"], "lagrangian.metric",
                                   (nb + nf, nb + nf))
            L = MetricLagrangian(entries, var_names, k)
        else:
            L = ExpressionLagrangian(_expr(lag["expression"],
                                           "lagrangian.expression"),
                                     var_names, k)
    except ValueError as err:
        raise ConfigError(str(err), "lagrangian") from None

    grid_doc = doc.get("grid")
    if not grid_doc or len(grid_doc) != k:
        raise ConfigError(f"grid needs {k} axis specs", "grid")
    grid = []
    for i, ax in enumerate(grid_doc):
        try:
            spec = GridSpec(float(ax["min"]), float(ax["max"]),
                            int(ax["count"]))
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"bad axis spec: {err}", f"grid[{i}]") \
                from None
        if spec.count < 2 or not spec.hi > spec.lo:
            raise ConfigError("need count >= 2 and max > min", f"grid[{i}]")
        grid.append(spec)

    init = doc.get("initial", {})
    try:
        init_base = np.asarray(init.get("base", [0.0] * nb), dtype=float)
        init_fiber = np.asarray(init.get("fiber", list(data.identity)),
                                dtype=float)
        init_v = np.asarray(init.get("v", [[0.0] * nb] * k), dtype=float)
        init_w = np.asarray(init.get("w", [[0.0] * nf] * k), dtype=float)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad initial data: {err}", "initial") from None
    init_v = init_v.reshape(k, nb) if init_v.size else np.zeros((k, nb))
    init_w = init_w.reshape(k, nf) if init_w.size else np.zeros((k, nf))
    if init_base.shape != (nb,) or init_fiber.shape != (nf,):
        raise ConfigError("initial point has wrong dimensions", "initial")

    tols = doc.get("tolerances", {})
    return ProblemConfig(
        k=k, base_names=base_names, fiber_names=fiber_names, data=data,
        lagrangian=L, grid=grid, init_base=init_base, init_fiber=init_fiber,
        init_v=init_v, init_w=init_w,
        pass_tol=float(tols.get("pass", 1e-8)),
        fail_tol=float(tols.get("fail", 1e-3)),
        samples=int(tols.get("samples", 100)),
        raw=doc)


def load_config(path):
    """Read and validate a problem file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}", str(path)) from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"not valid JSON: {err}", str(path)) from None
    return parse_config(doc)
