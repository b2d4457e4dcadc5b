"""Principal-bundle data on Q -> Q/G and the invariant frame machinery.

Coordinates on Q are split into base coordinates x^i and fiber (group)
coordinates x^a.  The bundle data holds the connection coefficients
gamma_i^a(x), the fundamental-field matrix K_a^b (right-invariant frame),
the adjoint matrix A_a^b (relating the invariant vertical frame to the
fundamental one) and the group multiplication chart map.

Brackets here are always computed by AD from the coefficient expressions;
the curvature of the principal connection is read off from the bracket
[X_i, X_j] rather than from any closed formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonVerticalBracket, NotInvariant
from .exprlang import (
    HyperDual,
    Num,
    eval_expr,
    expr_add,
    expr_neg,
    expr_num,
    real_part,
    seed,
)
from .geometry import (
    Frame,
    LieAlgebraData,
    VectorField,
    combine_fields,
    complete_lift,
    coordinate_field,
    lie_bracket,
    lu_solve,
)

__all__ = [
    "PrincipalBundleData",
    "InvariantFrame",
    "build_invariant_frame",
    "upsilon",
    "curvature_K",
    "verify_bracket_table",
    "invariance_check",
    "reduce_kvector",
    "lagrangian_as_state_function",
]


@dataclass
class PrincipalBundleData:
    """Chart data of a principal bundle Q -> Q/G with a principal connection."""

    base_names: list
    fiber_names: list
    algebra: LieAlgebraData
    gamma: list  # (n_base, n_fiber) expressions over base coordinates
    Kmat: list  # (n_fiber, n_fiber) expressions, row a: E~_a = K_a^b d/dx^b
    Amat: list  # (n_fiber, n_fiber) expressions, E^_a = A_a^b E~_b
    mult: list | None = None  # group chart multiplication, length n_fiber
    identity: np.ndarray | None = None
    mult_arg_suffix: str = "_b"

    def __post_init__(self):
        if self.identity is None:
            self.identity = np.zeros(len(self.fiber_names))
        self.identity = np.asarray(self.identity, dtype=float)
        if self.algebra.dim != len(self.fiber_names):
            raise ValueError("algebra dimension must match fiber dimension")
        self._compiled = {}

    def _fn(self, key, exprs):
        """Compile-and-cache a family of expressions."""
        from .exprlang import compile_expr

        if key not in self._compiled:
            if exprs and isinstance(exprs[0], (list, tuple)):
                self._compiled[key] = [[compile_expr(e) for e in row]
                                       for row in exprs]
            else:
                self._compiled[key] = [compile_expr(e) for e in exprs]
        return self._compiled[key]

    @property
    def n_base(self):
        return len(self.base_names)

    @property
    def n_fiber(self):
        return len(self.fiber_names)

    @property
    def n(self):
        return self.n_base + self.n_fiber

    @property
    def var_names(self):
        return list(self.base_names) + list(self.fiber_names)

    def identity_point(self, qbase):
        return np.concatenate([np.asarray(qbase, dtype=float), self.identity])

    def gamma_at(self, q):
        bind = dict(zip(self.var_names, q))
        return [[f(bind) for f in row]
                for row in self._fn("gamma", self.gamma)]

    def A_at(self, q):
        bind = dict(zip(self.var_names, q))
        return [[f(bind) for f in row] for row in self._fn("A", self.Amat)]

    def K_at(self, q):
        bind = dict(zip(self.var_names, q))
        return [[f(bind) for f in row] for row in self._fn("K", self.Kmat)]

    def mult_at(self, g, h):
        """Chart coordinates of the product g.h."""
        if self.mult is None:
            raise ValueError("no multiplication map configured")
        bind = dict(zip(self.fiber_names, g))
        bind.update({name + self.mult_arg_suffix: val
                     for name, val in zip(self.fiber_names, h)})
        return [f(bind) for f in self._fn("mult", self.mult)]

    def validate(self, rng=None, samples=10, tol=1e-9):
        """Eager data checks: gamma base-only, A(e) = I, K invertible,
        multiplication axioms at sampled points."""
        rng = rng or np.random.default_rng(0)
        nb, nf = self.n_base, self.n_fiber
        if nf:
            for _ in range(samples):
                q = rng.uniform(-1.0, 1.0, self.n)
                for a in range(nf):
                    d1 = [0.0] * self.n
                    d1[nb + a] = 1.0
                    qs = seed(list(q), d1)
                    for i in range(nb):
                        for b in range(nf):
                            v = eval_expr(self.gamma[i][b],
                                          dict(zip(self.var_names, qs)))
                            dv = v.d1 if isinstance(v, HyperDual) else 0.0
                            if abs(real_part(dv)) > tol:
                                raise ValueError(
                                    "gamma depends on fiber coordinates")
                K = np.array([[real_part(v) for v in row]
                              for row in self.K_at(list(q))])
                if abs(np.linalg.det(K)) < 1e-12:
                    raise ValueError("K matrix singular at a sampled point")
            e_pt = self.identity_point(np.zeros(nb))
            A_e = np.array([[real_part(v) for v in row]
                            for row in self.A_at(list(e_pt))])
            if np.max(np.abs(A_e - np.eye(nf))) > tol:
                raise ValueError("A at the identity is not the unit matrix")
        if self.mult is not None:
            e = list(self.identity)
            for _ in range(samples):
                g = list(rng.uniform(-1.0, 1.0, nf))
                h = list(rng.uniform(-1.0, 1.0, nf))
                w = list(rng.uniform(-1.0, 1.0, nf))
                ge = self.mult_at(g, e)
                eg = self.mult_at(e, g)
                if (max(abs(a - b) for a, b in zip(ge, g)) > tol
                        or max(abs(a - b) for a, b in zip(eg, g)) > tol):
                    raise ValueError("multiplication identity axiom fails")
                lhs = self.mult_at(self.mult_at(g, h), w)
                rhs = self.mult_at(g, self.mult_at(h, w))
                if max(abs(a - b) for a, b in zip(lhs, rhs)) > tol:
                    raise ValueError("multiplication is not associative")
        return True


@dataclass
class InvariantFrame:
    """The frames {X_i, E^_a} (invariant) and {X_i, E~_a} on Q."""

    data: PrincipalBundleData
    X: list = field(default_factory=list)
    Ehat: list = field(default_factory=list)
    Etilde: list = field(default_factory=list)

    def frame_hat(self):
        return Frame(list(self.X) + list(self.Ehat))

    def frame_tilde(self):
        return Frame(list(self.X) + list(self.Etilde))


def build_invariant_frame(data):
    """Assemble E~_a = K_a^b d/dx^b, E^_a = A_a^b E~_b and
    X_i = d/dx^i - gamma_i^b E^_b as expression-backed fields on Q."""
    names = data.var_names
    nb, nf = data.n_base, data.n_fiber
    Etilde = []
    for a in range(nf):
        coeffs = [Num(0.0)] * nb + list(data.Kmat[a])
        Etilde.append(VectorField(coeffs, names))
    Ehat = [combine_fields(data.Amat[a], Etilde, names) for a in range(nf)]
    X = []
    for i in range(nb):
        neg = [expr_neg(data.gamma[i][b]) for b in range(nf)]
        vert = combine_fields(neg, Ehat, names)
        coeffs = [expr_add(expr_num(1.0) if b == i else expr_num(0.0),
                           vert.coeffs[b]) for b in range(len(names))]
        X.append(VectorField(coeffs, names))
    return InvariantFrame(data=data, X=X, Ehat=Ehat, Etilde=Etilde)


def upsilon(data):
    """Evaluator of Upsilon_{ia}^b = -gamma_i^c C^b_{ca} at a point of Q.

    The contraction is folded into expressions once; connection data with
    constant entries then evaluates without any tree walking.
    """
    from .exprlang import compile_expr, expr_add, expr_mul

    C = data.algebra.C
    nb, nf = data.n_base, data.n_fiber
    exprs = [[[Num(0.0)] * nf for _ in range(nf)] for _ in range(nb)]
    for i in range(nb):
        for a in range(nf):
            for b in range(nf):
                acc = Num(0.0)
                for c in range(nf):
                    if C[b][c][a] != 0.0:
                        acc = expr_add(acc, expr_mul(
                            expr_num(-C[b][c][a]), data.gamma[i][c]))
                exprs[i][a][b] = acc
    const = [[[e.value if isinstance(e, Num) else None for e in row]
              for row in blk] for blk in exprs]
    fns = [[[None if isinstance(e, Num) else compile_expr(e) for e in row]
            for row in blk] for blk in exprs]
    all_const = all(c is not None for blk in const for row in blk
                    for c in row)
    const_arr = np.array([[[c if c is not None else 0.0 for c in row]
                           for row in blk] for blk in const]) \
        if nb else np.zeros((0, nf, nf))

    def ev(q):
        if all_const:
            return const_arr
        bind = dict(zip(data.var_names, q))
        out = ([[[0.0] * nf for _ in range(nf)] for _ in range(nb)]
               if _any_hd(q) else np.zeros((nb, nf, nf)))
        for i in range(nb):
            for a in range(nf):
                for b in range(nf):
                    c = const[i][a][b]
                    out[i][a][b] = c if c is not None else fns[i][a][b](bind)
        return out

    return ev


def _any_hd(xs):
    return any(isinstance(x, HyperDual) for x in xs)


def curvature_K(data, frame, tol=1e-10):
    """Evaluator of the connection curvature K_{ij}^a from [X_i, X_j].

    The bracket is expanded in the frame {X_i, E^_a}; a base-direction
    component above tolerance signals inconsistent bundle data.
    """
    nb, nf = data.n_base, data.n_fiber
    full = frame.frame_hat()

    def ev(q):
        numeric = not _any_hd(q)
        n = nb + nf
        K = (np.zeros((nb, nb, nf)) if numeric
             else [[[0.0] * nf for _ in range(nb)] for _ in range(nb)])
        for i in range(nb):
            for j in range(i + 1, nb):
                br = lie_bracket(frame.X[i], frame.X[j], q)
                Z = full.matrix(q)
                Zt = [[Z[a][b] for a in range(n)] for b in range(n)]
                comps = lu_solve(Zt, list(br))
                base_part = max(
                    (abs(real_part(comps[m])) for m in range(nb)),
                    default=0.0)
                scale = max(1.0, max(abs(real_part(x)) for x in br))
                if base_part > tol * scale:
                    raise NonVerticalBracket(
                        f"[X_{i}, X_{j}] has base component {base_part:.2e}")
                for a in range(nf):
                    K[i][j][a] = -comps[nb + a]
                    K[j][i][a] = comps[nb + a]
        return K

    return ev


def verify_bracket_table(frame, data, points):
    """Max residuals of the six bracket identities of the invariant frame."""
    C = data.algebra.C
    nb, nf = data.n_base, data.n_fiber
    ups = upsilon(data)
    curv = curvature_K(data, frame)
    res = {key: 0.0 for key in
           ("tilde_tilde", "hat_hat", "X_tilde", "X_hat", "X_X", "tilde_hat")}
    for q in points:
        q = list(np.asarray(q, dtype=float))
        Etilde_v = [f.components_f(q) for f in frame.Etilde]
        Ehat_v = [f.components_f(q) for f in frame.Ehat]
        U = ups(q)
        for a in range(nf):
            for b in range(nf):
                br = lie_bracket(frame.Etilde[a], frame.Etilde[b], q)
                expect = -sum(C[c][a][b] * Etilde_v[c] for c in range(nf))
                res["tilde_tilde"] = max(res["tilde_tilde"],
                                         float(np.max(np.abs(br - expect))))
                br = lie_bracket(frame.Ehat[a], frame.Ehat[b], q)
                expect = sum(C[c][a][b] * Ehat_v[c] for c in range(nf))
                res["hat_hat"] = max(res["hat_hat"],
                                     float(np.max(np.abs(br - expect))))
                br = lie_bracket(frame.Etilde[a], frame.Ehat[b], q)
                res["tilde_hat"] = max(res["tilde_hat"],
                                       float(np.max(np.abs(br))))
        for i in range(nb):
            for a in range(nf):
                br = lie_bracket(frame.X[i], frame.Etilde[a], q)
                res["X_tilde"] = max(res["X_tilde"], float(np.max(np.abs(br))))
                br = lie_bracket(frame.X[i], frame.Ehat[a], q)
                expect = sum(U[i][a][b] * Ehat_v[b] for b in range(nf))
                res["X_hat"] = max(res["X_hat"],
                                   float(np.max(np.abs(br - expect))))
        if nb > 1:
            Kq = curv(q)
            for i in range(nb):
                for j in range(nb):
                    br = lie_bracket(frame.X[i], frame.X[j], q)
                    expect = -sum(Kq[i][j][a] * Ehat_v[a] for a in range(nf))
                    res["X_X"] = max(res["X_X"],
                                     float(np.max(np.abs(br - expect))))
    return res


def lagrangian_as_state_function(L):
    """L as a generic (q, u) -> scalar callable."""

    def fn(q, u):
        return L.value(list(q), [list(r) for r in u])

    return fn


def invariance_check(L, generators, states):
    """Max of |Z^C(L)| over the generator fields and sampled states."""
    from .geometry import apply_lift

    fn = lagrangian_as_state_function(L)
    worst = 0.0
    for point in states:
        q = list(point.q)
        u = [list(r) for r in point.u]
        for Z in generators:
            lift = complete_lift(Z, point.k)
            worst = max(worst, abs(apply_lift(lift, fn, q, u)))
    return worst


def reduce_kvector(components_fn, data, k, samples=None, tol=1e-8):
    """Reduce an invariant k-vector field on Q given in frame components.

    components_fn(q) must return a (k, n) array of coefficients with respect
    to the invariant frame {X_i, E^_a}.  The coefficients are checked to be
    fiber-independent at sample points; the returned callables evaluate the
    horizontal components X_alpha^i and vertical coefficients X_alpha^a on
    base points (through the identity-fiber representative).
    """
    nb, nf, n = data.n_base, data.n_fiber, data.n
    if samples is None:
        rng = np.random.default_rng(7)
        samples = [rng.uniform(-1.0, 1.0, n) for _ in range(10)]
    for q in samples:
        for a in range(nf):
            d1 = [0.0] * n
            d1[nb + a] = 1.0
            comps = components_fn(seed(list(q), d1))
            for row in comps:
                for x in row:
                    d = x.d1 if isinstance(x, HyperDual) else 0.0
                    if abs(real_part(d)) > tol:
                        raise NotInvariant(
                            "component has fiber-coordinate dependence")

    def horizontal(qbase):
        comps = components_fn(list(data.identity_point(qbase)))
        return np.array([[real_part(comps[al][i]) for i in range(nb)]
                         for al in range(k)])

    def vertical(qbase):
        comps = components_fn(list(data.identity_point(qbase)))
        return np.array([[real_part(comps[al][nb + a]) for a in range(nf)]
                         for al in range(k)])

    return horizontal, vertical
