"""Numerical kernels: RK4 stepping, commuting-flow grid marching, small
dense linear algebra, and finite-difference stencils.

A k-vector field is represented for integration purposes by a list of k
right-hand-side callables, one per parameter direction; each maps a flat
state vector to its derivative along that direction.  Grids are rectangular
with uniform spacing per axis, marched axis by axis: first along t^1, then
each further axis is swept from every already-computed hyperplane.  For an
integrable field the result is independent of the sweep order; the optional
cross-check quantifies the defect when it is not.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CrossOrderDefectWarning,
    GridTooSmall,
    NonFiniteState,
    Singular,
    StepRejected,
)

__all__ = [
    "FieldGrid",
    "GridSpec",
    "rk4_step",
    "integrate_line",
    "grid_march",
    "lu_solve",
    "pinv_solve",
    "grid_derivative",
    "MarchDiagnostics",
]


@dataclass(frozen=True)
class GridSpec:
    """Per-axis extent: uniform samples from lo to hi inclusive."""

    lo: float
    hi: float
    count: int

    def axis(self):
        if self.count < 2:
            raise GridTooSmall(f"axis needs >= 2 nodes, got {self.count}")
        return np.linspace(self.lo, self.hi, self.count)


class FieldGrid:
    """Sampled states over a rectangular grid in R^k.

    values has shape (n_1, ..., n_k, state_dim); layout names the state
    components in storage order.
    """

    def __init__(self, axes, values, layout):
        axes = [np.asarray(ax, dtype=float) for ax in axes]
        values = np.asarray(values, dtype=float)
        if values.shape[:-1] != tuple(len(ax) for ax in axes):
            raise ValueError("grid shape does not match axes")
        for ax in axes:
            if len(ax) >= 2:
                steps = np.diff(ax)
                if np.any(steps <= 0):
                    raise ValueError("axes must be strictly increasing")
                if np.max(steps) - np.min(steps) > 1e-12 * max(1.0, abs(ax[-1])):
                    raise ValueError("axes must be uniformly spaced")
        self.axes = axes
        self.values = values
        self.layout = tuple(layout)

    @property
    def k(self):
        return len(self.axes)

    @property
    def state_dim(self):
        return self.values.shape[-1]

    def spacing(self, axis):
        return float(self.axes[axis][1] - self.axes[axis][0])

    def nodes(self):
        """Iterate (t, state) pairs in axis-major order (t^1 fastest)."""
        counts = [len(ax) for ax in self.axes]
        for idx_rev in itertools.product(*(range(c) for c in reversed(counts))):
            idx = tuple(reversed(idx_rev))
            t = np.array([self.axes[a][idx[a]] for a in range(self.k)])
            yield idx, t, self.values[idx]

    def map_values(self, fn, layout=None):
        """New grid with fn applied to every node state."""
        flat = self.values.reshape(-1, self.state_dim)
        out = np.array([fn(s) for s in flat])
        shape = self.values.shape[:-1] + (out.shape[-1],)
        return FieldGrid(self.axes, out.reshape(shape),
                         layout if layout is not None else self.layout)


@dataclass
class MarchDiagnostics:
    cross_order_defect: float | None = None
    notes: list = field(default_factory=list)


def _check_finite(state):
    if not np.all(np.isfinite(state)):
        raise NonFiniteState("integration produced a non-finite state")


def rk4_step(rhs, state, h):
    """One classical Runge-Kutta step of size h along a single field."""
    if not h > 0.0:
        raise StepRejected(f"step size {h!r} is not positive")
    state = np.asarray(state, dtype=float)
    k1 = np.asarray(rhs(state))
    k2 = np.asarray(rhs(state + 0.5 * h * k1))
    k3 = np.asarray(rhs(state + 0.5 * h * k2))
    k4 = np.asarray(rhs(state + h * k3))
    out = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(out)
    return out


def integrate_line(rhs, state, length, substeps):
    """Advance `length` along one component field with fixed RK4 substeps.

    Negative lengths integrate the reversed field forward, which produces
    the identical stage arithmetic.
    """
    if length < 0.0:
        fwd = rhs
        rhs = lambda s: -np.asarray(fwd(s))  # noqa: E731
        length = -length
    h = length / substeps
    if h != 0.0 and abs(h) < 1e-300:
        raise StepRejected("step size underflow")
    for _ in range(substeps):
        state = rk4_step(rhs, state, h)
    return state


def grid_march(rhs_list, init_state, grid_specs, layout, substeps=4,
               sweep_order=None, cross_check=False, defect_tol=1e-6,
               diagnostics=None):
    """March an assumed-integrable k-vector field over a rectangular grid.

    The initial state sits at the grid origin node.  Marching goes along the
    first axis of sweep_order, then sweeps each further axis from every
    already-computed hyperplane.  With cross_check=True the reversed sweep
    order is also computed and the maximum state difference recorded; a
    warning is issued above defect_tol.
    """
    k = len(rhs_list)
    if len(grid_specs) != k:
        raise ValueError("need one grid spec per parameter direction")
    axes = [gs.axis() for gs in grid_specs]
    order = list(sweep_order) if sweep_order is not None else list(range(k))

    values = _march(rhs_list, init_state, axes, order, substeps)

    if cross_check and k > 1:
        alt = _march(rhs_list, init_state, axes, list(reversed(order)), substeps)
        defect = float(np.max(np.abs(values - alt)))
        if diagnostics is not None:
            diagnostics.cross_order_defect = defect
        if defect > defect_tol:
            warnings.warn(
                f"cross-order sweep defect {defect:.3e} exceeds {defect_tol:.1e}",
                CrossOrderDefectWarning,
            )
    return FieldGrid(axes, values, layout)


def _march(rhs_list, init_state, axes, order, substeps):
    init_state = np.asarray(init_state, dtype=float)
    counts = [len(ax) for ax in axes]
    values = np.zeros(tuple(counts) + (len(init_state),))
    values[(0,) * len(axes)] = init_state

    done_axes = []
    for axis in order:
        h = float(axes[axis][1] - axes[axis][0]) if counts[axis] > 1 else 0.0
        # every node already computed spawns a line along `axis`
        base_ranges = [
            range(counts[a]) if a in done_axes else range(1)
            for a in range(len(axes))
        ]
        for base in itertools.product(*base_ranges):
            state = values[base]
            idx = list(base)
            for i in range(1, counts[axis]):
                state = integrate_line(rhs_list[axis], state, h, substeps)
                idx[axis] = i
                values[tuple(idx)] = state
        done_axes.append(axis)
    return values


# ---------------------------------------------------------------------------
# Dense linear algebra.  The elimination code is generic over the scalar
# type so the same routine solves float and hyper-dual systems.
# ---------------------------------------------------------------------------


def _abs_value(x):
    from .exprlang import real_part

    return abs(real_part(x))


def lu_solve(A, b):
    """Solve a square system by Gaussian elimination with partial pivoting.

    Accepts nested lists of floats or HyperDuals; returns a list (or a numpy
    array when the input was purely numeric).
    """
    n = len(A)
    M = [list(row) for row in A]
    x = list(b)
    numeric = not any(hasattr(v, "d12")
                      for v in itertools.chain(x, *M))
    scale = max((_abs_value(v) for row in M for v in row), default=0.0)
    if scale == 0.0:
        raise Singular("zero matrix")
    for col in range(n):
        piv = max(range(col, n), key=lambda r: _abs_value(M[r][col]))
        if _abs_value(M[piv][col]) < 1e-14 * scale:
            raise Singular(f"pivot {col} below threshold")
        if piv != col:
            M[col], M[piv] = M[piv], M[col]
            x[col], x[piv] = x[piv], x[col]
        for r in range(col + 1, n):
            f = M[r][col] / M[col][col]
            for c in range(col + 1, n):
                M[r][c] = M[r][c] - f * M[col][c]
            x[r] = x[r] - f * x[col]
    for col in range(n - 1, -1, -1):
        acc = x[col]
        for c in range(col + 1, n):
            acc = acc - M[col][c] * x[c]
        x[col] = acc / M[col][col]
    return np.array(x, dtype=float) if numeric else x


def pinv_solve(A, b):
    """Minimum-norm least-squares solution of a rectangular system.

    Normal equations (of the second kind when underdetermined), with a
    Tikhonov fallback of 1e-12 if the reduced system is singular.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if m >= n:
        G = A.T @ A
        rhs = A.T @ b
        try:
            return np.asarray(lu_solve(G, rhs), dtype=float)
        except Singular:
            G = G + 1e-12 * np.eye(n)
            return np.asarray(lu_solve(G, rhs), dtype=float)
    G = A @ A.T
    try:
        y = np.asarray(lu_solve(G, b), dtype=float)
    except Singular:
        y = np.asarray(lu_solve(G + 1e-12 * np.eye(m), b), dtype=float)
    return A.T @ y


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def grid_derivative(values, axis, h):
    """Second-order derivative of gridded data along one axis.

    Central differences in the interior, one-sided 3-point stencils at the
    boundaries.  Needs at least 3 nodes along the axis.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    if n < 3:
        raise GridTooSmall("need >= 3 nodes per axis for differencing")
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)
