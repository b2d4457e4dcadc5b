import numpy as np
import pytest

from ksym.config import parse_config
from ksym.golden import GOLDEN_CONFIG


@pytest.fixture(scope="session")
def golden_cfg():
    return parse_config(GOLDEN_CONFIG)


@pytest.fixture(scope="session")
def golden_frame(golden_cfg):
    return golden_cfg.invariant_frame()


@pytest.fixture(scope="session")
def golden_L(golden_cfg):
    return golden_cfg.lagrangian


@pytest.fixture(scope="session")
def golden_sopde(golden_L):
    from ksym.lagrangian import metric_sopde

    return metric_sopde(golden_L)


@pytest.fixture(scope="session")
def golden_reduced(golden_L, golden_cfg, golden_frame):
    from ksym.lagrange_poincare import harmonic_reduced_field

    return harmonic_reduced_field(golden_L, golden_cfg.data, golden_frame)


def random_states(n, k, count, seed=0, lo=-1.0, hi=1.0):
    from ksym.geometry import KTangentPoint

    rng = np.random.default_rng(seed)
    return [KTangentPoint(rng.uniform(lo, hi, n), rng.uniform(lo, hi, (k, n)))
            for _ in range(count)]


@pytest.fixture(scope="session")
def twisted_bundle():
    """Same 4D group, but the connection points along a direction with
    nonvanishing brackets, so Upsilon is base-dependent and nonzero."""
    doc = dict(GOLDEN_CONFIG)
    doc = {**doc, "gamma": [["q", "0", "0", "0"]]}
    cfg = parse_config(doc)
    return cfg


@pytest.fixture(scope="session")
def curved_abelian_bundle():
    """Two base coordinates, one abelian fiber, curved connection."""
    doc = {
        "k": 2,
        "base_coords": ["x1", "x2"],
        "fiber_coords": ["g"],
        "structure_constants": [],
        "gamma": [["x2"], ["0"]],
        "K": [["1"]],
        "A": [["1"]],
        "mult": ["g + g_b"],
        "lagrangian": {"metric": [["1", "0", "0"], ["0", "1", "0"],
                                  ["0", "0", "1"]]},
        "grid": [{"min": 0, "max": 1, "count": 5},
                 {"min": 0, "max": 1, "count": 5}],
        "initial": {"base": [0, 0], "fiber": [0],
                    "v": [[1, 0], [0, 1]], "w": [[0], [0]]},
    }
    return parse_config(doc)
