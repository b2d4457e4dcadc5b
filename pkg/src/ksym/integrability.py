"""Integrability obstructions: pairwise bracket residuals, force symmetry,
the reduced algebraic obstruction, and a flow-commutation diagnostic.

All verdicts are sampled, not proven: they hold at the tested states only.
The default pass band is 1e-8 and the definite-fail band 1e-3; anything in
between is reported as inconclusive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StepRejected
from .exprlang import real_part
from .geometry import lie_bracket_flat
from .solver import integrate_line
from .symmetry import curvature_K, upsilon

__all__ = [
    "IntegrabilityReport",
    "bracket_residual",
    "sopde_force_symmetry",
    "reduced_obstruction",
    "flow_commutation_defect",
    "PASS_TOL",
    "FAIL_TOL",
]

PASS_TOL = 1e-8
FAIL_TOL = 1e-3


@dataclass
class IntegrabilityReport:
    pair_bracket_norms: dict = field(default_factory=dict)
    reduced_residual: np.ndarray | None = None
    flow_defect: float | None = None
    pass_tol: float = PASS_TOL
    fail_tol: float = FAIL_TOL

    @property
    def max_bracket(self):
        return max(self.pair_bracket_norms.values(), default=0.0)

    def verdict(self):
        worst = self.max_bracket
        if self.reduced_residual is not None and self.reduced_residual.size:
            worst = max(worst, float(np.max(np.abs(self.reduced_residual))))
        if self.flow_defect is not None:
            worst = max(worst, self.flow_defect)
        if worst < self.pass_tol:
            return "integrable"
        if worst > self.fail_tol:
            return "not integrable"
        return "inconclusive"


def bracket_residual(component_fns, points, scale=1.0):
    """Max over pairs and sample points of ||[X_a, X_b]||.

    component_fns: one flat-state callable per parameter direction.
    Returns (max_norm, per-pair dict).
    """
    k = len(component_fns)
    per_pair = {}
    for a in range(k):
        for b in range(a + 1, k):
            worst = 0.0
            for p in points:
                br = lie_bracket_flat(component_fns[a], component_fns[b],
                                      list(p))
                worst = max(worst, float(np.max(np.abs(br))))
            per_pair[(a, b)] = worst
    return max(per_pair.values(), default=0.0), per_pair


def sopde_force_symmetry(sopde, points):
    """Max |(Gamma_a)_b^A - (Gamma_b)_a^A| over the sampled states.

    Force symmetry is necessary for an integrable second-order field.
    """
    worst = 0.0
    for point in points:
        q = list(point.q)
        u = [list(r) for r in point.u]
        F = sopde.frame_forces(q, u)
        F = np.array([[[real_part(x) for x in row] for row in blk]
                      for blk in F])
        worst = max(worst, float(np.max(np.abs(F - F.transpose(1, 0, 2)))))
    return worst


def reduced_obstruction(reduced, data, states):
    """Algebraic integrability residual of a reduced field at given states.

    For each state and pair (a, b) the residual combines the antisymmetric
    part of the vertical forces with the connection and structure-constant
    contractions; together with the reduced field's own bracket residual it
    certifies (at the sampled states) that the invariant field upstairs is
    integrable.  Returns an array of shape (len(states), k, k, n_fiber).
    """
    nb, nf, k = data.n_base, data.n_fiber, reduced.k
    ups = upsilon(data)
    out = np.zeros((len(states), k, k, nf))
    for m, st in enumerate(states):
        qb = list(np.atleast_1d(st.qbase))
        v = st.v.tolist()
        w = st.w.tolist()
        _, _, dw = reduced.rhs(qb, v, w)
        dw = np.array([[[real_part(x) for x in row] for row in blk]
                       for blk in dw])
        q = list(data.identity_point(qb))
        U = ups(q)
        Kq = _curvature_at(reduced, data, q) if nb > 1 else None
        C = data.algebra.C
        for a in range(k):
            for b in range(k):
                for c in range(nf):
                    acc = dw[a][b][c] - dw[b][a][c]
                    for i in range(nb):
                        for e in range(nf):
                            acc += (v[a][i] * w[b][e] - v[b][i] * w[a][e]) \
                                * U[i][e][c]
                    for e in range(nf):
                        for f in range(nf):
                            acc += C[c][e][f] * w[a][e] * w[b][f]
                    if Kq is not None:
                        for i in range(nb):
                            for j in range(nb):
                                acc -= Kq[i][j][c] * v[a][i] * v[b][j]
                    out[m, a, b, c] = acc
    return out


def _curvature_at(reduced, data, q):
    frame = getattr(reduced, "frame", None)
    if frame is None:
        raise ValueError(
            "curvature needed for a multi-dimensional base; attach the "
            "invariant frame to the reduced field")
    return curvature_K(data, frame)(q)


def flow_commutation_defect(rhs_list, start, target, steps=64):
    """State difference after integrating to `target` in both axis orders.

    Applies pairwise for more than two directions; the returned value is the
    worst pair.  A vanishing defect is an a-posteriori sign that the field's
    flows commute along the sampled path.
    """
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    k = len(rhs_list)
    worst = 0.0
    for a in range(k):
        for b in range(a + 1, k):
            s1 = start.copy()
            if target[a] != 0.0:
                s1 = integrate_line(rhs_list[a], s1, target[a], steps)
            if target[b] != 0.0:
                s1 = integrate_line(rhs_list[b], s1, target[b], steps)
            s2 = start.copy()
            if target[b] != 0.0:
                s2 = integrate_line(rhs_list[b], s2, target[b], steps)
            if target[a] != 0.0:
                s2 = integrate_line(rhs_list[a], s2, target[a], steps)
            worst = max(worst, float(np.max(np.abs(s1 - s2))))
    return worst
