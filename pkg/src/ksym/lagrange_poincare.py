"""Reduced Lagrangian, reduced second-order fields, Lagrange-Poincaré
residuals and the Euler-Poincaré special case.

Reduced states live on the quotient of the velocity bundle: base coordinates
q^i, base quasi-velocities v_alpha^i and vertical quasi-velocities
w_alpha^a (with respect to the invariant frame).  Reduced evaluators work by
lifting a reduced state to the representative full state whose fiber
coordinates sit at the group identity; invariance of the ingredients makes
the result representative-independent, and that independence is verified at
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotInvariant, SingularHessian
from .exprlang import HyperDual, real_part, seed
from .geometry import frame_forces_from_natural
from .solver import FieldGrid, grid_derivative, pinv_solve
from .symmetry import curvature_K, upsilon

__all__ = [
    "LPState",
    "ReducedLagrangian",
    "ReducedField",
    "reduced_lagrangian",
    "reduced_sopde",
    "harmonic_reduced_field",
    "lp_residual",
    "LPResidual",
    "euler_poincare_rhs",
    "lp_layout",
]


@dataclass(frozen=True)
class LPState:
    """Reduced state: base point, base and vertical quasi-velocities."""

    qbase: np.ndarray
    v: np.ndarray  # (k, n_base)
    w: np.ndarray  # (k, n_fiber)

    def __post_init__(self):
        object.__setattr__(self, "qbase", np.atleast_1d(
            np.asarray(self.qbase, dtype=float)))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        if not all(np.all(np.isfinite(x)) for x in
                   (self.qbase, self.v, self.w)):
            raise ValueError("non-finite entries")

    @property
    def k(self):
        return self.w.shape[0] if self.w.size else self.v.shape[0]

    def flat(self):
        return np.concatenate(
            [self.qbase, self.v.reshape(-1), self.w.reshape(-1)])


def lp_split(flat, nb, nf, k):
    flat = list(flat)
    qb = flat[:nb]
    v = [flat[nb + a * nb: nb + (a + 1) * nb] for a in range(k)]
    off = nb + k * nb
    w = [flat[off + a * nf: off + (a + 1) * nf] for a in range(k)]
    return qb, v, w


def lp_layout(base_names, fiber_names, k):
    names = list(base_names)
    for a in range(k):
        names.extend(f"v{a + 1}_{c}" for c in base_names)
    for a in range(k):
        names.extend(f"w{a + 1}_{c}" for c in fiber_names)
    return names


def _rep_state(data, frame_hat, qb, v, w):
    """Representative full state with fiber coordinates at the identity."""
    nb, nf = data.n_base, data.n_fiber
    n = nb + nf
    q = list(qb) + [float(x) for x in data.identity]
    M = frame_hat.matrix(q)  # rows: X_i then Ehat_a
    k = len(v) if nb else len(w)
    u = []
    for a in range(k):
        coeff = list(v[a]) + list(w[a])
        u.append([_dot(coeff, [M[A][B] for A in range(n)]) for B in range(n)])
    return q, u


def _dot(xs, col):
    acc = 0.0
    for x, c in zip(xs, col):
        if isinstance(c, float) and c == 0.0:
            continue
        acc = acc + x * c
    return acc


class ReducedLagrangian:
    """Evaluator of the reduced Lagrangian on LP states, with derivatives."""

    def __init__(self, L, frame, data, check=True, tol=1e-9):
        self.L = L
        self.frame = frame
        self.frame_hat = frame.frame_hat()
        self.data = data
        self.k = L.k
        self.nb = data.n_base
        self.nf = data.n_fiber
        if check:
            self._check_representative_independence(tol)

    def _check_representative_independence(self, tol):
        rng = np.random.default_rng(11)
        nb, nf, k = self.nb, self.nf, self.k
        for _ in range(3):
            qb = rng.uniform(-1.0, 1.0, nb)
            v = rng.uniform(-1.0, 1.0, (k, nb))
            w = rng.uniform(-1.0, 1.0, (k, nf))
            ref = self.value(list(qb), v.tolist(), w.tolist())
            fib = rng.uniform(-0.8, 0.8, nf)
            q = list(qb) + list(fib)
            M = self.frame_hat.matrix(q)
            n = nb + nf
            u = [[_dot(list(v[a]) + list(w[a]),
                       [M[A][B] for A in range(n)]) for B in range(n)]
                 for a in range(k)]
            other = self.L.value(q, u)
            if abs(real_part(other) - real_part(ref)) > tol * max(
                    1.0, abs(real_part(ref))):
                raise NotInvariant(
                    "reduced Lagrangian depends on the fiber representative")

    def value(self, qb, v, w):
        q, u = _rep_state(self.data, self.frame_hat, qb, v, w)
        return self.L.value(q, u)

    def __call__(self, state):
        return float(real_part(self.value(
            list(state.qbase), state.v.tolist(), state.w.tolist())))

    def _flat_value(self, flat):
        qb, v, w = lp_split(flat, self.nb, self.nf, self.k)
        return self.value(qb, v, w)

    def gradients(self, qb, v, w):
        """(dl/dq, dl/dv, dl/dw) at a reduced state, by seed pairs."""
        flat = list(qb) + [x for row in v for x in row] \
            + [x for row in w for x in row]
        m = len(flat)
        g = [0.0] * m
        for j0 in range(0, m, 2):
            d1 = [0.0] * m
            d1[j0] = 1.0
            d2 = [0.0] * m
            if j0 + 1 < m:
                d2[j0 + 1] = 1.0
            val = self._flat_value(seed(flat, d1, d2))
            g[j0] = val.d1 if isinstance(val, HyperDual) else 0.0
            if j0 + 1 < m:
                g[j0 + 1] = val.d2 if isinstance(val, HyperDual) else 0.0
        nb, nf, k = self.nb, self.nf, self.k
        dq = g[:nb]
        dv = [g[nb + a * nb: nb + (a + 1) * nb] for a in range(k)]
        off = nb + k * nb
        dw = [g[off + a * nf: off + (a + 1) * nf] for a in range(k)]
        return dq, dv, dw


def reduced_lagrangian(L, frame, data):
    """Reduced Lagrangian evaluator; raises NotInvariant when evaluation
    depends on the chosen fiber representative."""
    return ReducedLagrangian(L, frame, data)


class ReducedField:
    """Right-hand sides of a reduced second-order field on the quotient.

    rhs(qb, v, w) returns (dq, dv, dw) with dq[a][i] = v_a^i (second-order
    shape), dv[a][b][j] and dw[a][b][c] the forces of the a-th component
    field along d/dv_b^j and d/dw_b^c.
    """

    def __init__(self, data, k, rhs, layout=None, frame=None):
        self.data = data
        self.k = k
        self.nb = data.n_base
        self.nf = data.n_fiber
        self._rhs = rhs
        self.frame = frame
        self.layout = layout or lp_layout(data.base_names, data.fiber_names, k)

    def rhs(self, qb, v, w):
        return self._rhs(qb, v, w)

    def flat_component(self, alpha):
        nb, nf, k = self.nb, self.nf, self.k

        def fn(state):
            qb, v, w = lp_split(state, nb, nf, k)
            dq, dv, dw = self._rhs(qb, v, w)
            out = list(dq[alpha])
            for b in range(k):
                out.extend(dv[alpha][b])
            for b in range(k):
                out.extend(dw[alpha][b])
            return out

        return fn

    def rhs_list(self):
        comps = [self.flat_component(a) for a in range(self.k)]
        return [
            (lambda fn: lambda s: np.array(
                [real_part(x) for x in fn(list(s))]))(fn)
            for fn in comps
        ]


def reduced_sopde(sopde, data, frame, check_invariance=True, tol=1e-8):
    """Reduced field of an invariant Lagrangian second-order field.

    The full-field forces are re-read as functions of the reduced state
    through the identity representative; the vertical block picks up the
    curvature/structure-constant corrections of the quotient frame.
    """
    frame_hat = frame.frame_hat()
    nb, nf, k = data.n_base, data.n_fiber, sopde.k
    ups = upsilon(data)
    curv = curvature_K(data, frame) if nb > 1 else None
    C = data.algebra.C

    if check_invariance:
        _check_force_invariance(sopde, data, frame_hat, tol)

    def rhs(qb, v, w):
        q, u = _rep_state(data, frame_hat, qb, v, w)
        Fnat = sopde.natural_forces(q, u)
        d = frame_forces_from_natural(frame_hat, q, u, Fnat)
        U = ups(q)
        Kq = curv(q) if curv is not None else None
        dq = [list(v[a]) for a in range(k)]
        dv = [[list(d[a][b][:nb]) for b in range(k)] for a in range(k)]
        dw = []
        for a in range(k):
            row = []
            for b in range(k):
                comps = []
                for c in range(nf):
                    acc = d[a][b][nb + c]
                    for i in range(nb):
                        for e in range(nf):
                            uv = U[i][e][c]
                            if isinstance(uv, float) and uv == 0.0:
                                continue
                            acc = acc + uv * (v[b][i] * w[a][e]
                                              - v[a][i] * w[b][e])
                    for e in range(nf):
                        for f in range(nf):
                            cc = C[c][e][f]
                            if cc != 0.0:
                                acc = acc - cc * w[a][e] * w[b][f]
                    if Kq is not None:
                        for i in range(nb):
                            for j in range(nb):
                                kv = Kq[i][j][c]
                                if isinstance(kv, float) and kv == 0.0:
                                    continue
                                acc = acc + kv * v[a][i] * v[b][j]
                    comps.append(acc)
                row.append(comps)
            dw.append(row)
        return dq, dv, dw

    return ReducedField(data, k, rhs, frame=frame)


def _check_force_invariance(sopde, data, frame_hat, tol):
    """Frame forces, read in bundle-adapted reduced coordinates, must not
    depend on the fiber coordinates."""
    rng = np.random.default_rng(23)
    nb, nf, k = data.n_base, data.n_fiber, sopde.k
    n = nb + nf
    for _ in range(5):
        qb = rng.uniform(-1.0, 1.0, nb)
        fib = rng.uniform(-0.8, 0.8, nf)
        v = rng.uniform(-1.0, 1.0, (k, nb))
        w = rng.uniform(-1.0, 1.0, (k, nf))
        for a_dir in range(nf):
            d1 = [0.0] * n
            d1[nb + a_dir] = 1.0
            q = seed(list(qb) + list(fib), d1)
            M = frame_hat.matrix(q)
            u = [[_dot(list(v[al]) + list(w[al]),
                       [M[A][B] for A in range(n)]) for B in range(n)]
                 for al in range(k)]
            Fnat = sopde.natural_forces(q, u)
            d = frame_forces_from_natural(frame_hat, q, u, Fnat)
            for al in range(k):
                for be in range(k):
                    for A in range(n):
                        x = d[al][be][A]
                        dv = x.d1 if isinstance(x, HyperDual) else 0.0
                        if abs(real_part(dv)) > tol:
                            raise NotInvariant(
                                "SOPDE forces depend on fiber coordinates")


def harmonic_reduced_field(L, data, frame, tol=1e-9):
    """Reduced field of an invariant kinetic-energy Lagrangian in the form
    with purely geometric forces: base forces from the quotient metric's
    Christoffel symbols plus a curvature coupling, vertical forces from the
    connection coefficients only.

    Requires the principal connection to be the metric-orthogonal one
    (h(X_i, E^_a) = 0) and the vertical metric block to be constant and
    bi-invariant; both are validated.  On integrable states this field's
    flows coincide with those of the reduction of the geodesic-type field;
    off them it is the member of the reduced family whose vertical forces
    vanish with the connection, which makes the integrability obstruction
    directly readable from the structure-constant contraction.
    """
    if L.kind != "metric":
        raise ValueError("harmonic_reduced_field needs a metric Lagrangian")
    nb, nf, k = data.n_base, data.n_fiber, L.k
    n = nb + nf
    frame_hat = frame.frame_hat()
    C = data.algebra.C
    ups = upsilon(data)
    curv = curvature_K(data, frame) if nb > 1 else None

    def h_blocks(q):
        M = frame_hat.matrix(q)
        hq = L.metric.h(q)
        hij = [[_quad(hq, M[i], M[j], n) for j in range(nb)]
               for i in range(nb)]
        hia = [[_quad(hq, M[i], M[nb + a], n) for a in range(nf)]
               for i in range(nb)]
        hab = [[_quad(hq, M[nb + a], M[nb + b], n) for b in range(nf)]
               for a in range(nf)]
        return hij, hia, hab

    rng = np.random.default_rng(31)
    hab_const = None
    for _ in range(5):
        q = list(rng.uniform(-1.0, 1.0, n))
        hij, hia, hab = h_blocks(q)
        if max((abs(real_part(x)) for row in hia for x in row), default=0.0) \
                > tol:
            raise NotInvariant(
                "connection is not metric-orthogonal (h(X_i, E^_a) != 0)")
        hab_f = np.array([[real_part(x) for x in row] for row in hab])
        if hab_const is None:
            hab_const = hab_f
        elif np.max(np.abs(hab_f - hab_const)) > tol:
            raise NotInvariant("vertical metric block is not constant")
    biinv = np.einsum("ab,bcd->acd", hab_const, C) \
        + np.einsum("cb,bad->acd", hab_const, C)
    if np.max(np.abs(biinv)) > tol:
        raise NotInvariant("vertical metric block is not bi-invariant")

    # quotient-metric entries as folded expressions over the base chart
    from .exprlang import Num, expr_add, expr_mul, expr_subst
    from .lagrangian import MetricEvaluator, christoffels_at

    fiber_assign = dict(zip(data.fiber_names,
                            (float(x) for x in data.identity)))
    hij_exprs = [[Num(0.0)] * nb for _ in range(nb)]
    for i in range(nb):
        for j in range(nb):
            acc = Num(0.0)
            for Aa in range(n):
                for Bb in range(n):
                    term = expr_mul(expr_mul(frame.X[i].coeffs[Aa],
                                             L.metric.entries[Aa][Bb]),
                                    frame.X[j].coeffs[Bb])
                    acc = expr_add(acc, term)
            hij_exprs[i][j] = expr_subst(acc, fiber_assign)
    base_metric = MetricEvaluator(hij_exprs, data.base_names) if nb else None

    def rhs(qb, v, w):
        G = christoffels_at(base_metric, list(qb)) if nb else []
        U = ups(list(qb) + [float(x) for x in data.identity])
        Kq = (curv(list(qb) + [float(x) for x in data.identity])
              if curv is not None else None)
        hinv = _inv_small(base_metric.h(list(qb)), nb) \
            if Kq is not None else None
        dq = [list(v[a]) for a in range(k)]
        dv = []
        dw = []
        for a in range(k):
            rv = []
            rw = []
            for b in range(k):
                comps = []
                for j in range(nb):
                    acc = 0.0
                    for kk in range(nb):
                        for ll in range(nb):
                            g = G[j][kk][ll]
                            if isinstance(g, float) and g == 0.0:
                                continue
                            acc = acc - g * v[a][kk] * v[b][ll]
                    if Kq is not None:
                        for i in range(nb):
                            for kk in range(nb):
                                for aa in range(nf):
                                    for bb in range(nf):
                                        kv = Kq[i][kk][bb]
                                        if isinstance(kv, float) and kv == 0.0:
                                            continue
                                        acc = acc + hinv[j][i] \
                                            * hab_const[aa][bb] * kv \
                                            * v[b][kk] * w[a][aa]
                    comps.append(acc)
                rv.append(comps)
                comps = []
                for c in range(nf):
                    acc = 0.0
                    for kk in range(nb):
                        for d in range(nf):
                            uv = U[kk][d][c]
                            if isinstance(uv, float) and uv == 0.0:
                                continue
                            acc = acc - uv * v[b][kk] * w[a][d]
                    comps.append(acc)
                rw.append(comps)
            dv.append(rv)
            dw.append(rw)
        return dq, dv, dw

    return ReducedField(data, k, rhs, frame=frame)


def _quad(h, x, y, n):
    acc = 0.0
    for A in range(n):
        for B in range(n):
            hv = h[A][B]
            if isinstance(hv, float) and hv == 0.0:
                continue
            acc = acc + hv * x[A] * y[B]
    return acc


def _inv_small(hij, nb):
    from .solver import lu_solve

    cols = []
    for j in range(nb):
        e = [1.0 if i == j else 0.0 for i in range(nb)]
        cols.append(lu_solve(hij, e))
    return [[cols[j][i] for j in range(nb)] for i in range(nb)]


@dataclass
class LPResidual:
    """Per-node residual blocks of the reduced field equations."""

    section: np.ndarray  # grid shape + (k, n_base)
    base: np.ndarray  # grid shape + (n_base,)
    fiber: np.ndarray  # grid shape + (n_fiber,)

    @property
    def max_abs(self):
        parts = [np.max(np.abs(x)) if x.size else 0.0
                 for x in (self.section, self.base, self.fiber)]
        return float(max(parts))


def lp_residual(l, grid, data):
    """Residuals of the reduced field equations on a gridded solution.

    Derivatives of the reduced Lagrangian are exact (AD); the parameter
    derivatives are 2nd-order finite differences of the gridded momenta.
    """
    nb, nf = data.n_base, data.n_fiber
    k = grid.k
    shape = grid.values.shape[:-1]
    nodes = grid.values.reshape(-1, grid.state_dim)
    ups = upsilon(data)
    curv_ev = curvature_K(data, l.frame) if nb > 1 else None

    Pv = np.zeros((len(nodes), k, nb))
    Pw = np.zeros((len(nodes), k, nf))
    dlq = np.zeros((len(nodes), nb))
    for m, flat in enumerate(nodes):
        qb, v, w = lp_split(list(flat), nb, nf, k)
        dq, dv, dw = l.gradients(qb, v, w)
        dlq[m] = dq
        Pv[m] = dv
        Pw[m] = dw

    Pv_g = Pv.reshape(shape + (k, nb))
    Pw_g = Pw.reshape(shape + (k, nf))
    dlq_g = dlq.reshape(shape + (nb,))
    qb_g = grid.values[..., :nb]
    v_g = grid.values[..., nb:nb + k * nb].reshape(shape + (k, nb))
    w_g = grid.values[..., nb + k * nb:].reshape(shape + (k, nf))

    # d/dt^a of momenta, 2nd order; plus the section-condition block
    section = np.zeros(shape + (k, nb))
    dPv = np.zeros(shape + (nb,))
    dPw = np.zeros(shape + (nf,))
    for a in range(k):
        h = grid.spacing(a)
        section[..., a, :] = grid_derivative(qb_g, a, h) - v_g[..., a, :]
        dPv += grid_derivative(Pv_g[..., a, :], a, h)
        dPw += grid_derivative(Pw_g[..., a, :], a, h)

    base = dPv - dlq_g
    fiber = dPw.copy()
    for idx in np.ndindex(shape):
        q = list(data.identity_point(list(qb_g[idx])))
        U = ups(q)
        Kq = curv_ev(q) if curv_ev is not None else None
        v = v_g[idx]
        w = w_g[idx]
        pw = Pw_g[idx]
        for i in range(nb):
            acc = 0.0
            for b in range(k):
                for bb in range(nf):
                    term = 0.0
                    if Kq is not None:
                        for kk in range(nb):
                            term += Kq[i][kk][bb] * v[b][kk]
                    for cc in range(nf):
                        term -= U[i][cc][bb] * w[b][cc]
                    acc += term * pw[b][bb]
            base[idx][i] -= acc
        for a_ in range(nf):
            acc = 0.0
            for b in range(k):
                for bb in range(nf):
                    term = 0.0
                    for kk in range(nb):
                        term += U[kk][a_][bb] * v[b][kk]
                    for cc in range(nf):
                        term -= data.algebra.C[bb][a_][cc] * w[b][cc]
                    acc += term * pw[b][bb]
            fiber[idx][a_] -= acc
    return LPResidual(section=section, base=base, fiber=fiber)


def euler_poincare_rhs(l_fn, algebra, k, data=None):
    """Reduced field on the pure-group quotient (no base block).

    l_fn(w) is the reduced Lagrangian on k copies of the algebra.  The
    velocity Hessian of l_fn must be invertible (the quotient-regularity
    condition); for k > 1 the evolution system is underdetermined and the
    minimum-norm symmetric force member is returned, matching the choice
    made for full second-order fields.
    """
    nf = algebra.dim
    C = algebra.C

    def dl(w):
        flat = [x for row in w for x in row]
        m = len(flat)
        g = [0.0] * m
        for j0 in range(0, m, 2):
            d1 = [0.0] * m
            d1[j0] = 1.0
            d2 = [0.0] * m
            if j0 + 1 < m:
                d2[j0 + 1] = 1.0
            val = l_fn([seed(flat, d1, d2)[a * nf:(a + 1) * nf]
                        for a in range(k)])
            g[j0] = val.d1 if isinstance(val, HyperDual) else 0.0
            if j0 + 1 < m:
                g[j0 + 1] = val.d2 if isinstance(val, HyperDual) else 0.0
        return [g[a * nf:(a + 1) * nf] for a in range(k)]

    def hessian(w):
        flat = [real_part(x) for row in w for x in row]
        m = len(flat)
        H = np.zeros((m, m))
        for i in range(m):
            for j in range(i, m):
                d1 = [0.0] * m
                d1[i] = 1.0
                d2 = [0.0] * m
                d2[j] = 1.0
                s = seed(flat, d1, d2)
                val = l_fn([s[a * nf:(a + 1) * nf] for a in range(k)])
                H[i, j] = H[j, i] = (val.d12
                                     if isinstance(val, HyperDual) else 0.0)
        return H

    pairs = [(a, b) for a in range(k) for b in range(a, k)]

    def rhs(qb, v, w):
        P = dl(w)
        r = np.zeros(nf)
        for a_ in range(nf):
            for b in range(k):
                for bb in range(nf):
                    for cc in range(nf):
                        r[a_] -= C[bb][a_][cc] * real_part(w[b][cc]) \
                            * real_part(P[b][bb])
        H = hessian(w)
        scale = max(1.0, float(np.max(np.abs(H)))) ** H.shape[0]
        if abs(np.linalg.det(H)) < 1e-10 * scale:
            raise SingularHessian("reduced velocity Hessian is singular")
        # equation a_: sum_{al,be,b_} H[(al,a_),(be,b_)] F[al][be][b_] = r[a_]
        M = np.zeros((nf, len(pairs) * nf))
        for col, ((a, b), c) in enumerate(
                (p, c) for p in pairs for c in range(nf)):
            vec = H[a * nf:(a + 1) * nf, b * nf + c].copy()
            if a != b:
                vec = (vec + H[b * nf:(b + 1) * nf, a * nf + c]) \
                    / math.sqrt(2)
            M[:, col] = vec
        if np.linalg.matrix_rank(
                M, tol=1e-10 * max(1.0, float(np.max(np.abs(M))))) < nf:
            raise SingularHessian("force system lost rank")
        y = pinv_solve(M, r)
        F = np.zeros((k, k, nf))
        for col, ((a, b), c) in enumerate(
                (p, c) for p in pairs for c in range(nf)):
            x = y[col] / (math.sqrt(2) if a != b else 1.0)
            F[a][b][c] = x
            F[b][a][c] = x
        dq = [[] for _ in range(k)]
        dv = [[[] for _ in range(k)] for _ in range(k)]
        dw = [[list(F[a][b]) for b in range(k)] for a in range(k)]
        return dq, dv, dw

    if data is None:
        from .exprlang import expr_num
        from .symmetry import PrincipalBundleData

        eye = [[expr_num(1.0 if a == b else 0.0) for b in range(nf)]
               for a in range(nf)]
        data = PrincipalBundleData(
            base_names=[], fiber_names=[f"g{a}" for a in range(nf)],
            algebra=algebra, gamma=[], Kmat=eye, Amat=eye)
    return ReducedField(data, k, rhs)
