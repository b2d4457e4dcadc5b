"""Core bundle data types on Q and its bundle of k-velocities.

States are pairs (q, u): base coordinates q of length n and a k x n array u
whose row alpha holds the alpha-th velocity vector.  Vector fields on the
velocity bundle are kept split into a base part (n components) and a fiber
part (k x n components) because every construction here addresses the two
parts separately.

All derivative work goes through hyper-dual evaluation of the coefficient
expressions, never finite differences, so bracket-based residuals come out
at AD accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import GridTooSmall, SingularFrame
from .exprlang import (
    Expr,
    HyperDual,
    Num,
    Var,
    eval_expr,
    expr_add,
    expr_mul,
    expr_neg,
    expr_num,
    real_part,
    seed,
)
from .solver import FieldGrid, grid_derivative, lu_solve

__all__ = [
    "KTangentPoint",
    "VectorField",
    "Frame",
    "LieAlgebraData",
    "TangentLift",
    "coordinate_field",
    "complete_lift",
    "vertical_lift",
    "lie_bracket",
    "lie_bracket_flat",
    "apply_lift",
    "quasi_from_natural",
    "natural_from_quasi",
    "frame_forces_from_natural",
    "prolong_discrete",
    "flatten_state",
    "split_state",
]


@dataclass(frozen=True)
class KTangentPoint:
    """A base point plus k velocity vectors."""

    q: np.ndarray
    u: np.ndarray  # shape (k, n)

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        if self.u.ndim != 2 or self.u.shape[1] != self.q.shape[0]:
            raise ValueError("u must have shape (k, n)")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.u))):
            raise ValueError("non-finite entries")

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def k(self):
        return self.u.shape[0]


def flatten_state(q, u):
    """Flat layout [q, u_1, ..., u_k] used by the integrators."""
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    return np.concatenate([q, u.reshape(-1)])


def split_state(state, n, k):
    state = np.asarray(state)
    return state[:n], state[n:].reshape(k, n)


class VectorField:
    """Vector field on Q given by n coefficient expressions Z^B(q)."""

    def __init__(self, coeffs, var_names):
        self.coeffs = list(coeffs)
        self.var_names = list(var_names)
        if len(self.coeffs) != len(self.var_names):
            raise ValueError("need one coefficient per coordinate")
        self._compiled = None

    @property
    def n(self):
        return len(self.coeffs)

    def components(self, q):
        """Coefficient values at q; q may hold floats or HyperDuals."""
        if self._compiled is None:
            from .exprlang import compile_expr

            self._compiled = [compile_expr(c) for c in self.coeffs]
        bind = dict(zip(self.var_names, q))
        return [f(bind) for f in self._compiled]

    def components_f(self, q):
        return np.array([real_part(v) for v in self.components(q)])

    def jacobian(self, q):
        """d Z^B / d q^A as an (n, n) array, row A = derivative direction."""
        n = self.n
        out = [[None] * n for _ in range(n)]
        for a0 in range(0, n, 2):
            a1 = a0 + 1 if a0 + 1 < n else None
            d1 = [0.0] * n
            d1[a0] = 1.0
            d2 = [0.0] * n
            if a1 is not None:
                d2[a1] = 1.0
            qs = seed(list(q), d1, d2)
            vals = self.components(qs)
            for b in range(n):
                v = vals[b]
                out[a0][b] = v.d1 if isinstance(v, HyperDual) else 0.0
                if a1 is not None:
                    out[a1][b] = v.d2 if isinstance(v, HyperDual) else 0.0
        if any(isinstance(x, HyperDual) for row in out for x in row):
            return out
        return np.array(out, dtype=float)


def coordinate_field(index, var_names):
    """The coordinate vector field along the index-th coordinate."""
    coeffs = [expr_num(1.0 if b == index else 0.0)
              for b in range(len(var_names))]
    return VectorField(coeffs, var_names)


def combine_fields(coeff_exprs, fields, var_names):
    """Linear combination sum_a c^a(q) F_a with expression coefficients."""
    n = len(var_names)
    out = [Num(0.0)] * n
    for c, f in zip(coeff_exprs, fields):
        for b in range(n):
            out[b] = expr_add(out[b], expr_mul(c, f.coeffs[b]))
    return VectorField(out, var_names)


class Frame:
    """A local frame: n vector fields forming a basis at every queried point."""

    def __init__(self, fields):
        self.fields = list(fields)
        n = self.fields[0].n
        if any(f.n != n for f in self.fields) or len(self.fields) != n:
            raise ValueError("frame needs n fields with n components each")

    @property
    def n(self):
        return len(self.fields)

    def matrix(self, q):
        """Z_A^B(q); row A is the A-th frame field's coefficients."""
        return [f.components(q) for f in self.fields]

    def matrix_f(self, q):
        M = np.array([[real_part(v) for v in row] for row in self.matrix(q)])
        scale = max(1.0, float(np.max(np.abs(M))))
        if abs(np.linalg.det(M)) < 1e-12 * scale ** self.n:
            raise SingularFrame("frame matrix is singular at the queried point")
        return M

    def jacobians(self, q):
        """dZ_A^B/dq^C stacked as [A][C][B]."""
        return [f.jacobian(q) for f in self.fields]


def quasi_from_natural(frame, point):
    """Quasi-velocities v with u_alpha^B = v_alpha^A Z_A^B(q)."""
    Z = frame.matrix_f(point.q)
    return np.array([np.asarray(lu_solve(Z.T, u_row), dtype=float)
                     for u_row in point.u])


def natural_from_quasi(frame, q, v):
    """Inverse of quasi_from_natural."""
    Z = frame.matrix_f(q)
    v = np.asarray(v, dtype=float)
    return KTangentPoint(q, v @ Z)


def quasi_from_natural_generic(frame, q, u_rows):
    """Generic-scalar version: rows of quasi-velocities as lists."""
    Z = frame.matrix(q)
    n = len(Z)
    ZT = [[Z[a][b] for a in range(n)] for b in range(n)]
    return [lu_solve(ZT, list(u_row)) for u_row in u_rows]


@dataclass(frozen=True)
class LieAlgebraData:
    """Structure constants C^c_{ab} with [E_a, E_b] = C^c_{ab} E_c."""

    dim: int
    C: np.ndarray  # indexed [c][a][b]

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        object.__setattr__(self, "C", C)
        if C.shape != (self.dim,) * 3:
            raise ValueError("structure constants must be dim^3")
        F = [[[Fraction(C[c][a][b]) for b in range(self.dim)]
              for a in range(self.dim)] for c in range(self.dim)]
        for c in range(self.dim):
            for a in range(self.dim):
                for b in range(self.dim):
                    if F[c][a][b] != -F[c][b][a]:
                        raise ValueError(
                            f"structure constants not antisymmetric at "
                            f"C^{c}_{{{a}{b}}}")
        for a in range(self.dim):
            for b in range(self.dim):
                for c in range(self.dim):
                    for e in range(self.dim):
                        s = Fraction(0)
                        for d in range(self.dim):
                            s += (F[d][a][b] * F[e][d][c]
                                  + F[d][b][c] * F[e][d][a]
                                  + F[d][c][a] * F[e][d][b])
                        if s != 0:
                            raise ValueError(
                                f"Jacobi identity fails at (a,b,c,e)="
                                f"({a},{b},{c},{e})")

    def bracket(self, xi, eta):
        """[xi, eta]^c = C^c_{ab} xi^a eta^b."""
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        return np.einsum("cab,a,b->c", self.C, xi, eta)


# ---------------------------------------------------------------------------
# Lifts to the bundle of k-velocities
# ---------------------------------------------------------------------------


class TangentLift:
    """Vector field on the k-velocity bundle, split into base/fiber parts.

    base(q, u) returns n components along d/dq; fiber(q, u) returns k rows of
    n components along d/du_alpha.  Either part may be identically zero.
    """

    def __init__(self, n, k, base=None, fiber=None):
        self.n = n
        self.k = k
        self._base = base
        self._fiber = fiber

    def base(self, q, u):
        if self._base is None:
            return [0.0] * self.n
        return self._base(q, u)

    def fiber(self, q, u):
        if self._fiber is None:
            return [[0.0] * self.n for _ in range(self.k)]
        return self._fiber(q, u)

    def flat(self, q, u):
        out = list(self.base(q, u))
        for row in self.fiber(q, u):
            out.extend(row)
        return out


def complete_lift(Z, k):
    """Z^C = Z^A d/dq^A + u_alpha^A (dZ^B/dq^A) d/du_alpha^B."""

    def fiber(q, u):
        J = Z.jacobian(q)  # [A][B]
        n = Z.n
        return [[_dot(u[alpha], [J[a][b] for a in range(n)])
                 for b in range(n)] for alpha in range(k)]

    return TangentLift(Z.n, k, base=lambda q, u: Z.components(q), fiber=fiber)


def vertical_lift(Z, alpha, k):
    """Z^{V alpha} = Z^A d/du_alpha^A."""

    def fiber(q, u):
        rows = [[0.0] * Z.n for _ in range(k)]
        rows[alpha] = list(Z.components(q))
        return rows

    return TangentLift(Z.n, k, base=None, fiber=fiber)


def _dot(xs, ys):
    acc = 0.0
    for x, y in zip(xs, ys):
        acc = acc + x * y
    return acc


def apply_lift(W, fn, q, u):
    """Directional derivative of fn(q, u) along the lifted field W."""
    n, k = W.n, W.k
    qf = [real_part(x) for x in q]
    uf = [[real_part(x) for x in row] for row in u]
    dq = W.base(qf, uf)
    du = W.fiber(qf, uf)
    flat = list(qf) + [x for row in uf for x in row]
    dirs = list(dq) + [x for row in du for x in row]
    s = seed(flat, [real_part(d) for d in dirs])
    out = fn(s[:n], [s[n + a * n:n + (a + 1) * n] for a in range(k)])
    return out.d1 if isinstance(out, HyperDual) else 0.0


def lie_bracket_flat(f1, f2, state):
    """[W1, W2] for fields given as flat callables state -> components.

    Generic over the scalar type: at a hyper-dual state the returned
    components carry the seeded derivatives (the seeding here stacks one
    more dual level on top).
    """
    m = len(state)
    v1 = list(f1(state))
    v2 = list(f2(state))
    s1 = seed(list(state), v1)
    s2 = seed(list(state), v2)
    d21 = f2(s1)  # derivative of W2 along W1
    d12 = f1(s2)
    out = []
    for j in range(m):
        a = d21[j].d1 if isinstance(d21[j], HyperDual) else 0.0
        b = d12[j].d1 if isinstance(d12[j], HyperDual) else 0.0
        out.append(a - b)
    if any(isinstance(x, HyperDual) for x in out):
        return out
    return np.array([real_part(x) for x in out], dtype=float)


def lie_bracket(X, Y, q):
    """[X, Y] at q for expression-backed fields on Q."""
    return lie_bracket_flat(lambda s: X.components(s),
                            lambda s: Y.components(s), list(q))


def lift_flat_fn(W):
    """Adapter: TangentLift as a flat-callable on [q, u_1, ..., u_k]."""

    def fn(state):
        n, k = W.n, W.k
        q = state[:n]
        u = [state[n + a * n:n + (a + 1) * n] for a in range(k)]
        out = list(W.base(q, u))
        for row in W.fiber(q, u):
            out.extend(row)
        return out

    return fn


def lie_bracket_lifted(W1, W2, q, u):
    """[W1, W2] on the k-velocity bundle; returns (base, fiber) parts."""
    state = list(q) + [x for row in u for x in row]
    flat = lie_bracket_flat(lift_flat_fn(W1), lift_flat_fn(W2), state)
    n, k = W1.n, W1.k
    return flat[:n], flat[n:].reshape(k, n)


def frame_forces_from_natural(frame, q, u, natural_forces):
    """Force coefficients along the frame's vertical lifts, from the natural
    fiber coefficients of a second-order field.

    Inverts the expansion Gamma_a = v_a^A Z_A^C + d_ab^A Z_A^{Vb}: the
    Z_A^C terms contribute v_a^A u_b^E dZ_A^B/dq^E to the natural fiber
    part, the rest is d Z.
    """
    n = frame.n
    k = len(u)
    Z = frame.matrix(q)
    J = frame.jacobians(q)  # [A][C][B]
    v = quasi_from_natural_generic(frame, q, u)
    ZT = [[Z[a][b] for a in range(n)] for b in range(n)]
    out = []
    for a in range(k):
        row = []
        for b in range(k):
            target = []
            for B in range(n):
                acc = natural_forces[a][b][B]
                for A in range(n):
                    for E in range(n):
                        jv = J[A][E][B]
                        if isinstance(jv, float) and jv == 0.0:
                            continue
                        acc = acc - v[a][A] * u[b][E] * jv
                target.append(acc)
            row.append(lu_solve(ZT, target))
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# Discrete prolongation
# ---------------------------------------------------------------------------


def prolong_discrete(grid):
    """First prolongation of a gridded map into Q, by 2nd-order differencing.

    Output layout: the n base components followed by k rows of n derivative
    components.  Used for residual checking only, never for solving.
    """
    if any(len(ax) < 3 for ax in grid.axes):
        raise GridTooSmall("prolongation needs >= 3 nodes per axis")
    k = grid.k
    n = grid.state_dim
    derivs = [grid_derivative(grid.values, axis, grid.spacing(axis))
              for axis in range(k)]
    values = np.concatenate([grid.values] + derivs, axis=-1)
    layout = list(grid.layout)
    for alpha in range(k):
        layout.extend(f"d{name}_dt{alpha + 1}" for name in grid.layout)
    return FieldGrid(grid.axes, values, layout)
