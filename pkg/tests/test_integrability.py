import numpy as np
import pytest

from ksym.geometry import KTangentPoint, flatten_state, lie_bracket_flat
from ksym.integrability import (
    IntegrabilityReport,
    bracket_residual,
    flow_commutation_defect,
    reduced_obstruction,
    sopde_force_symmetry,
)
from ksym.lagrange_poincare import LPState, reduced_sopde
from ksym.lagrangian import SOPDEField, general_sopde, identity_frame


def _full_state_from_reduced(golden_frame, qfib, lp):
    fh = golden_frame.frame_hat()
    q = np.concatenate
    qfull = np.concatenate([lp.qbase, qfib])
    M = np.array([[float(x) for x in row] for row in fh.matrix(list(qfull))])
    u = np.concatenate([lp.v, lp.w], axis=1) @ M
    return flatten_state(qfull, u)


GOLDEN_LP = LPState(qbase=[0.2], v=[[1.0], [0.0]],
                    w=[[0.3, -0.4, 0.2, 1.0], [0, 0, 0.6, 0]])
PROBE_LP = LPState(qbase=[0.2], v=[[1.0], [0.0]],
                   w=[[0, 0, 0, 1.0], [1.0, 0, 0, 0]])


def test_bracket_residual_k1_vacuous():
    worst, pairs = bracket_residual(
        [lambda s: [1.0, 0.0]], [[0.0, 0.0]])
    assert worst == 0.0 and pairs == {}


def test_bracket_residual_hand_pair():
    fns = [lambda s: [1.0, 0.0], lambda s: [0.0, s[0]]]
    worst, pairs = bracket_residual(fns, [[0.3, 0.8], [-2.0, 5.0]])
    assert worst == pytest.approx(1.0, abs=1e-12)
    assert pairs[(0, 1)] == pytest.approx(1.0, abs=1e-12)


def test_full_sopde_bracket_on_golden_family(golden_sopde, golden_frame):
    rng = np.random.default_rng(0)
    comps = [golden_sopde.flat_component(a) for a in range(2)]
    states = []
    for _ in range(5):
        lp = LPState(qbase=rng.uniform(-1, 1, 1),
                     v=rng.uniform(-1, 1, (2, 1)),
                     w=[[rng.uniform(-1, 1), rng.uniform(-1, 1),
                         rng.uniform(-1, 1), 1.0],
                        [0.0, 0.0, rng.uniform(-1, 1), 0.0]])
        states.append(_full_state_from_reduced(
            golden_frame, rng.uniform(-1, 1, 4), lp))
    worst, _ = bracket_residual(comps, states)
    assert worst < 1e-8


def test_full_sopde_bracket_off_family(golden_sopde, golden_frame):
    st = _full_state_from_reduced(golden_frame, np.zeros(4), PROBE_LP)
    worst, _ = bracket_residual(
        [golden_sopde.flat_component(a) for a in range(2)], [st])
    assert worst > 1e-3


def test_force_symmetry_metric_exact(golden_sopde):
    rng = np.random.default_rng(1)
    pts = [KTangentPoint(rng.uniform(-1, 1, 5), rng.uniform(-1, 1, (2, 5)))
           for _ in range(5)]
    assert sopde_force_symmetry(golden_sopde, pts) == 0.0


def test_force_symmetry_detects_defect():
    def forces(q, u):
        F = np.zeros((2, 2, 1))
        F[0][1][0] = 1.0
        return F

    sop = SOPDEField(identity_frame(["a"]), forces, 1, 2, natural=True)
    pts = [KTangentPoint([0.0], [[0.0], [0.0]])]
    assert sopde_force_symmetry(sop, pts) == pytest.approx(1.0)


def test_force_symmetry_general_sopde(golden_L, golden_frame):
    gen = general_sopde(golden_L, golden_frame.frame_hat())
    rng = np.random.default_rng(2)
    pts = [KTangentPoint(rng.uniform(-0.5, 0.5, 5),
                         rng.uniform(-1, 1, (2, 5))) for _ in range(3)]
    assert sopde_force_symmetry(gen, pts) < 1e-12


def test_reduced_obstruction_golden_and_probe(golden_reduced, golden_cfg):
    res = reduced_obstruction(golden_reduced, golden_cfg.data, [GOLDEN_LP])
    assert np.max(np.abs(res)) < 1e-10
    res = reduced_obstruction(golden_reduced, golden_cfg.data, [PROBE_LP])
    # y component of the (1,2) pair is the structure-constant contraction
    assert res[0, 0, 1, 1] == pytest.approx(-1.0, abs=1e-12)
    assert res[0, 1, 0, 1] == pytest.approx(1.0, abs=1e-12)


def test_reduced_obstruction_faithful_member_vanishes(
        golden_sopde, golden_cfg, golden_frame):
    # the faithful reduction absorbs the defect into its own bracket: its
    # algebraic obstruction is identically zero while the bracket is not
    red = reduced_sopde(golden_sopde, golden_cfg.data, golden_frame)
    res = reduced_obstruction(red, golden_cfg.data, [PROBE_LP, GOLDEN_LP])
    assert np.max(np.abs(res)) < 1e-10
    worst, _ = bracket_residual(
        [red.flat_component(a) for a in range(2)], [PROBE_LP.flat()])
    assert worst > 1e-3


def test_reduced_obstruction_abelian_pure_group():
    from ksym.config import parse_config

    doc = {
        "k": 2,
        "base_coords": [],
        "fiber_coords": ["g1", "g2"],
        "structure_constants": [],
        "K": [["1", "0"], ["0", "1"]],
        "A": [["1", "0"], ["0", "1"]],
        "lagrangian": {"metric": [["1", "0"], ["0", "1"]]},
        "grid": [{"min": 0, "max": 1, "count": 3},
                 {"min": 0, "max": 1, "count": 3}],
    }
    cfg = parse_config(doc)
    from ksym.lagrange_poincare import ReducedField

    def rhs(qb, v, w):
        # a deliberately asymmetric force family
        dw = [[[0.0, 0.0] for _ in range(2)] for _ in range(2)]
        dw[0][1][0] = w[0][0]
        return [[], []], [[[], []], [[], []]], dw

    red = ReducedField(cfg.data, 2, rhs)
    st = LPState(qbase=np.zeros(0), v=np.zeros((2, 0)),
                 w=[[0.5, 0.1], [0.2, 0.3]])
    res = reduced_obstruction(red, cfg.data, [st])
    # residual reduces to the antisymmetrized force alone
    assert res[0, 0, 1, 0] == pytest.approx(0.5)
    assert res[0, 1, 0, 0] == pytest.approx(-0.5)


def test_flow_commutation_linear_commuting():
    A1 = np.array([[0.0, 1.0], [0.0, 0.0]])
    rhs = [lambda s: A1 @ s, lambda s: 2.0 * (A1 @ s)]
    defect = flow_commutation_defect(rhs, np.array([1.0, 2.0]),
                                     [1.0, 1.0], steps=32)
    assert defect < 1e-10


def test_flow_commutation_area_law():
    rhs = [lambda s: np.array([1.0, 0.0]), lambda s: np.array([0.0, s[0]])]
    d_unit = flow_commutation_defect(rhs, np.zeros(2), [1.0, 1.0], steps=16)
    assert d_unit == pytest.approx(1.0, abs=1e-10)
    for scale in [0.5, 0.25]:
        d = flow_commutation_defect(rhs, np.zeros(2), [scale, scale],
                                    steps=16)
        assert d == pytest.approx(scale * scale, abs=1e-10)


def test_flow_commutation_golden(golden_reduced):
    defect = flow_commutation_defect(golden_reduced.rhs_list(),
                                     GOLDEN_LP.flat(), [1.0, 1.0], steps=16)
    assert defect < 1e-8


def test_equivalence_of_obstruction_bookkeeping(
        golden_sopde, golden_reduced, golden_cfg, golden_frame):
    # the invariant field is integrable at a state iff the reduced field's
    # bracket and the algebraic obstruction both vanish at the projection;
    # check both members tell the same story at pass/fail bands
    data = golden_cfg.data
    faithful = reduced_sopde(golden_sopde, data, golden_frame)
    comps_full = [golden_sopde.flat_component(a) for a in range(2)]
    for lp, integrable in [(GOLDEN_LP, True), (PROBE_LP, False)]:
        full_state = _full_state_from_reduced(golden_frame,
                                              np.array([0.1, -0.2, 0.3,
                                                        0.4]), lp)
        full_br, _ = bracket_residual(comps_full, [full_state])
        for red in (golden_reduced, faithful):
            red_br, _ = bracket_residual(
                [red.flat_component(a) for a in range(2)], [lp.flat()])
            obs = float(np.max(np.abs(
                reduced_obstruction(red, data, [lp]))))
            combined = max(red_br, obs)
            if integrable:
                assert full_br < 1e-8 and combined < 1e-8
            else:
                assert full_br > 1e-3 and combined > 1e-3


def test_report_verdicts():
    rep = IntegrabilityReport(pair_bracket_norms={(0, 1): 1e-12})
    assert rep.verdict() == "integrable"
    rep = IntegrabilityReport(pair_bracket_norms={(0, 1): 0.5})
    assert rep.verdict() == "not integrable"
    rep = IntegrabilityReport(pair_bracket_norms={(0, 1): 1e-5})
    assert rep.verdict() == "inconclusive"
