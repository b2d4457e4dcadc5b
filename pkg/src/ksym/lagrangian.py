"""Lagrangian evaluators with exact derivatives, regularity tests, energy
and momentum-form coefficients, and construction of Lagrangian SOPDE force
fields.

Two kinds of Lagrangian are supported.  A *metric* Lagrangian is the kinetic
energy (1/2) delta^{ab} h_AB(q) u_a^A u_b^B of a symmetric expression-valued
matrix h; its derivatives have closed forms in h and dh.  An *expression*
Lagrangian is a single parsed expression in the coordinates and the velocity
variables u1_<name>, u2_<name>, ...; its derivatives are assembled by
hyper-dual seed pairs.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import RankDeficient, SingularMetric
from .exprlang import HyperDual, eval_expr, real_part, seed
from .geometry import Frame, coordinate_field, quasi_from_natural_generic
from .solver import Singular, lu_solve, pinv_solve

__all__ = [
    "MetricEvaluator",
    "MetricLagrangian",
    "ExpressionLagrangian",
    "SOPDEField",
    "identity_frame",
    "regularity_check",
    "RegularityVerdict",
    "energy_and_theta",
    "metric_sopde",
    "general_sopde",
    "el_residual",
    "u_var_name",
]


def u_var_name(alpha, coord):
    """Velocity variable name for direction alpha (0-based) and coordinate."""
    return f"u{alpha + 1}_{coord}"


def identity_frame(var_names):
    return Frame([coordinate_field(i, var_names)
                  for i in range(len(var_names))])


class MetricEvaluator:
    """Symmetric matrix of expressions h_AB(q) with cached constant entries."""

    def __init__(self, entries, var_names):
        from .exprlang import compile_expr

        self.entries = [list(row) for row in entries]
        self.var_names = list(var_names)
        self.n = len(self.entries)
        self._free = [[sorted(e.free_vars()) for e in row]
                      for row in self.entries]
        self._const = [
            [eval_expr(e, {}) if not fv else None
             for e, fv in zip(row, frow)]
            for row, frow in zip(self.entries, self._free)
        ]
        self._compiled = [[compile_expr(e) for e in row]
                          for row in self.entries]

    def h(self, q):
        bind = dict(zip(self.var_names, q))
        n = self.n
        out = [[None] * n for _ in range(n)]
        for a in range(n):
            for b in range(n):
                c = self._const[a][b]
                out[a][b] = c if c is not None else \
                    self._compiled[a][b](bind)
        if not any(isinstance(x, HyperDual) for x in q):
            return np.array([[real_part(v) for v in row] for row in out])
        return out

    def dh(self, q):
        """Partial derivatives indexed [C][A][B] = d h_AB / d q^C."""
        n = self.n
        idx = {name: i for i, name in enumerate(self.var_names)}
        numeric = not any(isinstance(x, HyperDual) for x in q)
        out = ([[[0.0] * n for _ in range(n)] for _ in range(n)]
               if not numeric else np.zeros((n, n, n)))
        for a in range(n):
            for b in range(a, n):
                fv = self._free[a][b]
                if not fv:
                    continue
                # seed two free directions per evaluation
                for j0 in range(0, len(fv), 2):
                    names = fv[j0:j0 + 2]
                    d1 = [0.0] * n
                    d1[idx[names[0]]] = 1.0
                    d2 = [0.0] * n
                    if len(names) > 1:
                        d2[idx[names[1]]] = 1.0
                    qs = seed(list(q), d1, d2)
                    v = self._compiled[a][b](dict(zip(self.var_names, qs)))
                    dv1 = v.d1 if isinstance(v, HyperDual) else 0.0
                    out[idx[names[0]]][a][b] = dv1
                    out[idx[names[0]]][b][a] = dv1
                    if len(names) > 1:
                        dv2 = v.d2 if isinstance(v, HyperDual) else 0.0
                        out[idx[names[1]]][a][b] = dv2
                        out[idx[names[1]]][b][a] = dv2
        return out


class _LagrangianBase:
    kind = ""

    def value(self, q, u):
        raise NotImplementedError

    def du(self, q, u):
        raise NotImplementedError

    def dq(self, q, u):
        raise NotImplementedError

    def d2_uu(self, q, u):
        raise NotImplementedError

    def d2_qu(self, q, u):
        raise NotImplementedError

    def hessian_matrix(self, q, u):
        """(nk)x(nk) velocity Hessian, composite index alpha-major."""
        H = self.d2_uu(q, u)
        n, k = self.n, self.k
        M = np.zeros((n * k, n * k))
        for a in range(k):
            for A in range(n):
                for b in range(k):
                    for B in range(n):
                        M[a * n + A, b * n + B] = real_part(H[a][A][b][B])
        return M


class MetricLagrangian(_LagrangianBase):
    """L = (1/2) delta^{ab} h_AB(q) u_a^A u_b^B."""

    kind = "metric"

    def __init__(self, entries, var_names, k):
        self.metric = MetricEvaluator(entries, var_names)
        self.var_names = list(var_names)
        self.n = len(var_names)
        self.k = k
        self._check_symmetry()

    def _check_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            q = rng.uniform(-1.0, 1.0, self.n)
            h = self.metric.h(list(q))
            if np.max(np.abs(h - h.T)) > 1e-12 * max(1.0, np.max(np.abs(h))):
                raise ValueError("metric entries are not symmetric")

    def value(self, q, u):
        h = self.metric.h(q)
        acc = 0.0
        for ua in u:
            for A in range(self.n):
                for B in range(self.n):
                    hab = h[A][B]
                    if isinstance(hab, float) and hab == 0.0:
                        continue
                    acc = acc + hab * ua[A] * ua[B]
        return 0.5 * acc

    def du(self, q, u):
        h = self.metric.h(q)
        return [[_dot_row(h[A] if isinstance(h, list) else list(h[A]), ua)
                 for A in range(self.n)] for ua in u]

    def dq(self, q, u):
        dh = self.metric.dh(q)
        out = []
        for C in range(self.n):
            acc = 0.0
            for ua in u:
                for A in range(self.n):
                    for B in range(self.n):
                        g = dh[C][A][B]
                        if isinstance(g, float) and g == 0.0:
                            continue
                        acc = acc + g * ua[A] * ua[B]
            out.append(0.5 * acc)
        return out

    def d2_uu(self, q, u):
        h = self.metric.h(q)
        k, n = self.k, self.n
        return [[[[h[A][B] if a == b else 0.0 for B in range(n)]
                  for b in range(k)] for A in range(n)] for a in range(k)]

    def d2_qu(self, q, u):
        dh = self.metric.dh(q)
        n = self.n
        return [[[ _dot_row(dh[C][A], ua) for A in range(n)] for ua in u]
                for C in range(n)]


def _dot_row(row, vec):
    acc = 0.0
    for r, v in zip(row, vec):
        if isinstance(r, float) and r == 0.0:
            continue
        acc = acc + r * v
    return acc


class ExpressionLagrangian(_LagrangianBase):
    """L given by one expression over q names and u{alpha}_{name} velocities."""

    kind = "expression"

    def __init__(self, expr, var_names, k):
        self.expr = expr
        self.var_names = list(var_names)
        self.n = len(var_names)
        self.k = k
        self._all_vars = list(var_names) + [
            u_var_name(a, c) for a in range(k) for c in var_names
        ]
        unknown = expr.free_vars() - set(self._all_vars)
        if unknown:
            raise ValueError(f"unknown variables in Lagrangian: {unknown}")

    def _bind(self, q, u):
        vals = list(q) + [u[a][A] for a in range(self.k)
                          for A in range(self.n)]
        return vals

    def _eval(self, vals):
        return eval_expr(self.expr, dict(zip(self._all_vars, vals)))

    def value(self, q, u):
        return self._eval(self._bind(q, u))

    def _gradient(self, vals, index_range):
        m = len(vals)
        out = [0.0] * len(index_range)
        for j0 in range(0, len(index_range), 2):
            pair = index_range[j0:j0 + 2]
            d1 = [0.0] * m
            d1[pair[0]] = 1.0
            d2 = [0.0] * m
            if len(pair) > 1:
                d2[pair[1]] = 1.0
            v = self._eval(seed(vals, d1, d2))
            out[j0] = v.d1 if isinstance(v, HyperDual) else 0.0
            if len(pair) > 1:
                out[j0 + 1] = v.d2 if isinstance(v, HyperDual) else 0.0
        return out

    def du(self, q, u):
        vals = self._bind(q, u)
        n, k = self.n, self.k
        g = self._gradient(vals, list(range(n, n + n * k)))
        return [[g[a * n + A] for A in range(n)] for a in range(k)]

    def dq(self, q, u):
        vals = self._bind(q, u)
        return self._gradient(vals, list(range(self.n)))

    def _mixed(self, vals, i, j):
        m = len(vals)
        d1 = [0.0] * m
        d1[i] = 1.0
        d2 = [0.0] * m
        d2[j] = 1.0
        v = self._eval(seed(vals, d1, d2))
        return v.d12 if isinstance(v, HyperDual) else 0.0

    def d2_uu(self, q, u):
        vals = self._bind(q, u)
        n, k = self.n, self.k
        out = [[[[0.0] * n for _ in range(k)] for _ in range(n)]
               for _ in range(k)]
        for i in range(n * k):
            for j in range(i, n * k):
                v = self._mixed(vals, n + i, n + j)
                a, A = divmod(i, n)
                b, B = divmod(j, n)
                out[a][A][b][B] = v
                out[b][B][a][A] = v
        return out

    def d2_qu(self, q, u):
        vals = self._bind(q, u)
        n, k = self.n, self.k
        out = [[[0.0] * n for _ in range(k)] for _ in range(n)]
        for C in range(n):
            for i in range(n * k):
                a, A = divmod(i, n)
                out[C][a][A] = self._mixed(vals, C, n + i)
        return out


# ---------------------------------------------------------------------------
# Verdicts and canonical quantities
# ---------------------------------------------------------------------------


class RegularityVerdict:
    def __init__(self, regular, det, min_abs_eigenvalue):
        self.regular = regular
        self.det = det
        self.min_abs_eigenvalue = min_abs_eigenvalue

    def __bool__(self):
        return self.regular

    def __repr__(self):
        tag = "regular" if self.regular else "singular"
        return f"<{tag} det={self.det:.3e} min|eig|={self.min_abs_eigenvalue:.3e}>"


def regularity_check(L, point):
    """Non-singularity of the velocity Hessian at the given state."""
    M = L.hessian_matrix(list(point.q), [list(r) for r in point.u])
    det = float(np.linalg.det(M))
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    scale = max(1.0, float(np.max(np.abs(M)))) ** M.shape[0]
    return RegularityVerdict(abs(det) > 1e-10 * scale, det,
                             float(np.min(np.abs(eigs))))


def energy_and_theta(L, point):
    """Energy u.dL/du - L and the k x n array of momentum coefficients."""
    q = list(point.q)
    u = [list(r) for r in point.u]
    theta = L.du(q, u)
    val = L.value(q, u)
    E = -val
    for a in range(L.k):
        for A in range(L.n):
            E = E + u[a][A] * theta[a][A]
    return float(real_part(E)), np.array(
        [[real_part(x) for x in row] for row in theta])


# ---------------------------------------------------------------------------
# SOPDE fields
# ---------------------------------------------------------------------------


class SOPDEField:
    """A second-order field: frame plus force coefficients along the frame's
    vertical lifts.  The base component is fixed by the second-order
    condition (quasi-velocities along the frame), so only forces are stored.
    """

    def __init__(self, frame, forces_fn, n, k, natural=None):
        self.frame = frame
        self._forces = forces_fn
        self.n = n
        self.k = k
        # natural=True marks the coordinate frame, where frame forces and
        # natural fiber coefficients coincide
        if natural is None:
            natural = all(
                f.coeffs[b] == coordinate_field(i, f.var_names).coeffs[b]
                for i, f in enumerate(frame.fields) for b in range(n)
            )
        self.natural = natural

    def frame_forces(self, q, u):
        """(Gamma_alpha)_beta^A along Z_A^{V beta}, shape (k, k, n)."""
        return self._forces(q, u)

    def natural_forces(self, q, u):
        """Fiber coefficients of the field in natural coordinates."""
        d = self.frame_forces(q, u)
        if self.natural:
            return d
        Z = self.frame.matrix(q)
        J = self.frame.jacobians(q)
        v = quasi_from_natural_generic(self.frame, q, u)
        k, n = self.k, self.n
        out = [[[0.0] * n for _ in range(k)] for _ in range(k)]
        for a in range(k):
            for b in range(k):
                for B in range(n):
                    acc = 0.0
                    for A in range(n):
                        acc = acc + d[a][b][A] * Z[A][B]
                        for E in range(n):
                            acc = acc + v[a][A] * u[b][E] * J[A][E][B]
                    out[a][b][B] = acc
        return out

    def flat_component(self, alpha):
        """Flat-state callable for integration and brackets."""
        n, k = self.n, self.k

        def fn(state):
            q = list(state[:n])
            u = [list(state[n + a * n:n + (a + 1) * n]) for a in range(k)]
            F = self.natural_forces(q, u)
            out = list(u[alpha])
            for b in range(k):
                out.extend(F[alpha][b])
            return out

        return fn

    def rhs_list(self):
        comps = [self.flat_component(a) for a in range(self.k)]
        return [
            (lambda fn: lambda s: np.array(
                [real_part(x) for x in fn(list(s))]))(fn)
            for fn in comps
        ]


def christoffels_at(me, q):
    """Christoffel symbols of a MetricEvaluator at q, indexed [A][B][C].

    Numeric states return an ndarray; hyper-dual states nested lists.
    """
    n = me.n
    numeric = not any(isinstance(x, HyperDual) for x in q)
    h = me.h(q)
    dh = me.dh(q)
    if numeric:
        h = np.asarray(h, dtype=float)
        dh = np.asarray(dh, dtype=float)
        # T[D,B,C] = 1/2 (d_B h_DC + d_C h_DB - d_D h_BC); dh is [C][A][B]
        T = 0.5 * (np.einsum("bdc->dbc", dh) + np.einsum("cdb->dbc", dh)
                   - dh)
        try:
            return np.linalg.solve(h, T.reshape(n, n * n)).reshape(n, n, n)
        except np.linalg.LinAlgError:
            raise SingularMetric("metric is singular at the queried point")
    T = [[[0.5 * (dh[B][D][C] + dh[C][D][B] - dh[D][B][C])
           for C in range(n)] for B in range(n)] for D in range(n)]
    G = [[[None] * n for _ in range(n)] for _ in range(n)]
    for B in range(n):
        for C in range(n):
            col = [T[D][B][C] for D in range(n)]
            try:
                sol = lu_solve(h, col)
            except Singular:
                raise SingularMetric(
                    "metric is singular at the queried point")
            for A in range(n):
                G[A][B][C] = sol[A]
    return G


def metric_sopde(L):
    """Geodesic-type SOPDE of a metric Lagrangian, in natural coordinates.

    Forces are -Gamma^A_{BC} u_alpha^B u_beta^C with the Christoffel symbols
    of h; the Euler-Lagrange residual of the result vanishes identically.
    """
    if L.kind != "metric":
        raise ValueError("metric_sopde needs a metric Lagrangian")
    me = L.metric
    n, k = L.n, L.k

    def forces(q, u):
        numeric = not any(
            isinstance(x, HyperDual)
            for x in list(q) + [y for row in u for y in row])
        G = christoffels_at(me, q)
        if numeric and isinstance(G, np.ndarray):
            un = np.asarray(u, dtype=float)
            F = -np.einsum("abc,ib,jc->ija", G, un, un)
            # exact force symmetry in the direction pair (commutative adds)
            return 0.5 * (F + F.transpose(1, 0, 2))
        out = [[[0.0] * n for _ in range(k)] for _ in range(k)]
        for a in range(k):
            for b in range(k):
                for A in range(n):
                    acc = 0.0
                    for B in range(n):
                        for C in range(n):
                            g = G[A][B][C]
                            if isinstance(g, float) and g == 0.0:
                                continue
                            acc = acc + g * 0.5 \
                                * (u[a][B] * u[b][C] + u[b][B] * u[a][C])
                    out[a][b][A] = -acc
        return out

    return SOPDEField(identity_frame(L.var_names), forces, n, k, natural=True)


def natural_el_residual(L, q, u, natural_forces):
    """Euler-Lagrange residual in natural coordinates at one state."""
    n, k = L.n, L.k
    Lq = L.dq(q, u)
    Luu = L.d2_uu(q, u)
    Lqu = L.d2_qu(q, u)
    res = []
    for B in range(n):
        acc = -Lq[B]
        for a in range(k):
            for C in range(n):
                acc = acc + u[a][C] * Lqu[C][a][B]
                for b in range(k):
                    acc = acc + natural_forces[a][b][C] * Luu[b][C][a][B]
        res.append(real_part(acc))
    return np.array(res)


def el_residual(sopde, L, point):
    """Residual of the Euler-Lagrange condition in the sopde's frame.

    Zero (to tolerance) exactly when the field is Lagrangian for L at the
    point; the frame residual is the frame matrix applied to the natural one.
    """
    q = list(point.q)
    u = [list(r) for r in point.u]
    F = sopde.natural_forces(q, u)
    nat = natural_el_residual(L, q, u, F)
    Z = sopde.frame.matrix_f(point.q)
    return Z @ nat


def general_sopde(L, frame):
    """Lagrangian SOPDE for L in the given frame.

    The defining condition leaves the forces underdetermined for k > 1; the
    returned field carries the minimum-Frobenius-norm solution within the
    symmetric ansatz (Gamma_alpha)_beta = (Gamma_beta)_alpha.
    """
    n, k = L.n, L.k
    pairs = [(a, b) for a in range(k) for b in range(a, k)]
    ncols = len(pairs) * n

    def forces(q, u):
        qf = [real_part(x) for x in q]
        uf = np.array([[real_part(x) for x in row] for row in u])
        Z = np.array([[real_part(v) for v in row]
                      for row in frame.matrix(qf)])
        J = np.array([[[real_part(x) for x in row] for row in jac]
                      for jac in frame.jacobians(qf)])  # [A][C][B]
        v = np.array([[real_part(x) for x in row]
                      for row in quasi_from_natural_generic(frame, qf, uf)])
        Luu = np.array([[[[real_part(x) for x in r2] for r2 in r1]
                         for r1 in r0] for r0 in L.d2_uu(qf, uf)])
        Lqu = np.array([[[real_part(x) for x in r1] for r1 in r0]
                        for r0 in L.d2_qu(qf, uf)])

        # known natural fiber part: the frame-lift term v_a^D u_b^E dZ_D^B/dq^E
        lift = np.einsum("aD,bE,DEB->abB", v, uf, J)
        # residual = known + sum_{a,b,D} d_ab^D Z_D^C Luu[b][C][a][B]
        forces0 = natural_el_residual(L, qf, uf, lift)
        M_nat = np.einsum("DC,bCaB->BabD", Z, Luu)  # rows B, cols (a,b,D)

        M = np.zeros((n, ncols))
        for col, ((a, b), D) in enumerate(
                (p, D) for p in pairs for D in range(n)):
            coeff = M_nat[:, a, b, D].copy()
            if a != b:
                coeff = (coeff + M_nat[:, b, a, D]) / math.sqrt(2.0)
            M[:, col] = coeff
        if np.linalg.matrix_rank(
                M, tol=1e-10 * max(1.0, float(np.max(np.abs(M))))) < n:
            raise RankDeficient(
                "force system lost rank; Lagrangian not regular here")
        y = pinv_solve(M, -forces0)
        d = np.zeros((k, k, n))
        for col, ((a, b), D) in enumerate(
                (p, D) for p in pairs for D in range(n)):
            x = y[col] / (math.sqrt(2.0) if a != b else 1.0)
            d[a][b][D] = x
            d[b][a][D] = x
        return d

    return SOPDEField(frame, forces, n, k)
