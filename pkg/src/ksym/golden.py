"""The built-in worked example: harmonic maps from the Euclidean plane into
R x G for a 4-dimensional matrix group, with an invariant metric.

Everything the pipeline needs is in GOLDEN_CONFIG (the same data ships as
configs/harmonic4d.json).  The closed-form solution family is implemented
independently of the pipeline for comparison; its constants follow from the
integrable family (the only body-velocity rows compatible with commuting
flows have vanishing x/y entries beyond the first direction) and the group
factor starting at the identity.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0.5
# body-velocity constants per direction, order (x, y, z, theta)
W1 = (0.3, -0.4, 0.2, 1.0)
W2 = (0.0, 0.0, 0.6, 0.0)
CQ = (1.0, 0.0)

GOLDEN_CONFIG = {
    "k": 2,
    "base_coords": ["q"],
    "fiber_coords": ["x", "y", "z", "theta"],
    "structure_constants": [
        {"c": "z", "a": "x", "b": "y", "value": -2},
        {"c": "y", "a": "x", "b": "theta", "value": 1},
        {"c": "x", "a": "y", "b": "theta", "value": -1},
    ],
    "gamma": [["0", "0", "0.5", "0"]],
    "K": [
        ["1", "0", "-y", "0"],
        ["0", "1", "x", "0"],
        ["0", "0", "1", "0"],
        ["y", "-x", "0", "1"],
    ],
    "A": [
        ["cos(theta)", "-sin(theta)", "2*(y*cos(theta) + x*sin(theta))", "0"],
        ["sin(theta)", "cos(theta)", "2*(y*sin(theta) - x*cos(theta))", "0"],
        ["0", "0", "1", "0"],
        ["-y", "x", "-(x^2 + y^2)", "1"],
    ],
    "mult": [
        "x + x_b*cos(theta) + y_b*sin(theta)",
        "y - x_b*sin(theta) + y_b*cos(theta)",
        "z + z_b + (x*x_b + y*y_b)*sin(theta) + (y*x_b - x*y_b)*cos(theta)",
        "theta + theta_b",
    ],
    "lagrangian": {
        "metric": [
            ["1", "0", "0", "0", "0.25"],
            ["0", "1", "0", "0", "-y/2"],
            ["0", "0", "1", "0", "x/2"],
            ["0", "0", "0", "0", "0.5"],
            ["0.25", "-y/2", "x/2", "0.5", "0"],
        ]
    },
    "grid": [
        {"min": 0.0, "max": 1.0, "count": 21},
        {"min": 0.0, "max": 1.0, "count": 21},
    ],
    "initial": {
        "base": [0.0],
        "fiber": [0.0, 0.0, 0.0, 0.0],
        "v": [[1.0], [0.0]],
        "w": [list(W1), list(W2)],
    },
    "tolerances": {"pass": 1e-8, "fail": 1e-3, "samples": 100},
}


def closed_form(t1, t2, gamma=GAMMA, w1=W1, w2=W2, cq=CQ):
    """Exact solution (q, x, y, z, theta) of the field equations for the
    built-in constants, group factor starting at the identity."""
    c1x, c1y, c1z, c1t = w1
    c2x, c2y, c2z, c2t = w2
    if c2x != 0.0 or c2y != 0.0 or (c1t, c2t) != (1.0, 0.0):
        raise ValueError("closed form derived for the integrable family "
                         "with theta velocity (1, 0)")
    s, c = np.sin(t1), np.cos(t1)
    q = cq[0] * t1 + cq[1] * t2
    x = c1x * s + c1y * (1.0 - c)
    y = c1y * s - c1x * (1.0 - c)
    p2 = c1x * c1x + c1y * c1y
    z = p2 * (t1 - s) + c1z * t1 + c2z * t2 - gamma * (cq[0] * t1
                                                       + cq[1] * t2)
    theta = t1
    return np.array([q, x, y, z, theta])


def closed_form_grid(axes):
    """closed_form evaluated on a rectangular grid, node layout matching
    the pipeline's reconstruction output."""
    t1, t2 = axes
    out = np.zeros((len(t1), len(t2), 5))
    for i, a in enumerate(t1):
        for j, b in enumerate(t2):
            out[i, j] = closed_form(a, b)
    return out
