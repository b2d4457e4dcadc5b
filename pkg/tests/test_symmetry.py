import numpy as np
import pytest

from ksym.errors import NotInvariant
from ksym.exprlang import HyperDual, parse, seed
from ksym.geometry import (
    KTangentPoint,
    complete_lift,
    quasi_from_natural_generic,
    vertical_lift,
)
from ksym.lagrangian import ExpressionLagrangian
from ksym.symmetry import (
    build_invariant_frame,
    curvature_K,
    invariance_check,
    reduce_kvector,
    upsilon,
    verify_bracket_table,
)


def test_golden_frame_vertical_fields(golden_frame):
    # the constructed invariant vertical fields for z and theta are the
    # bare coordinate directions, at every point
    rng = np.random.default_rng(0)
    for _ in range(10):
        q = rng.uniform(-2, 2, 5)
        assert np.allclose(golden_frame.Ehat[2].components_f(q),
                           [0, 0, 0, 1, 0], atol=1e-14)
        assert np.allclose(golden_frame.Ehat[3].components_f(q),
                           [0, 0, 0, 0, 1], atol=1e-14)


def test_golden_horizontal_field(golden_frame):
    rng = np.random.default_rng(1)
    for _ in range(5):
        q = rng.uniform(-2, 2, 5)
        assert np.allclose(golden_frame.X[0].components_f(q),
                           [1, 0, 0, -0.5, 0], atol=1e-14)


def test_trivial_group_frame_is_coordinate_frame(curved_abelian_bundle):
    # with no group directions the invariant frame degenerates
    from ksym.config import parse_config

    doc = {
        "k": 1,
        "base_coords": ["a", "b"],
        "fiber_coords": [],
        "lagrangian": {"metric": [["1", "0"], ["0", "1"]]},
        "grid": [{"min": 0, "max": 1, "count": 3}],
    }
    cfg = parse_config(doc)
    frame = cfg.invariant_frame()
    assert len(frame.Ehat) == 0
    assert np.allclose(frame.X[0].components_f([0.1, 0.2]), [1, 0])
    assert np.allclose(frame.X[1].components_f([0.1, 0.2]), [0, 1])


def test_upsilon_zero_for_golden(golden_cfg):
    ups = upsilon(golden_cfg.data)
    rng = np.random.default_rng(2)
    for _ in range(5):
        assert np.max(np.abs(ups(list(rng.uniform(-1, 1, 5))))) == 0.0


def test_upsilon_direct_contraction(twisted_bundle):
    # gamma_q^x = q: Upsilon_{qa}^b = -q C^b_{xa}
    data = twisted_bundle.data
    ups = upsilon(data)
    C = data.algebra.C
    for qv in [0.3, -1.2]:
        U = np.asarray(ups([qv, 0.1, 0.2, 0.3, 0.4]))
        expect = np.zeros((1, 4, 4))
        for a in range(4):
            for b in range(4):
                expect[0][a][b] = -qv * C[b][0][a]
        assert np.max(np.abs(U - expect)) < 1e-14
    assert np.max(np.abs(np.asarray(ups([1.0, 0, 0, 0, 0])))) > 0.5


def test_bracket_table_golden(golden_frame, golden_cfg):
    rng = np.random.default_rng(3)
    pts = [rng.uniform(-1, 1, 5) for _ in range(30)]
    res = verify_bracket_table(golden_frame, golden_cfg.data, pts)
    assert max(res.values()) < 1e-8


def test_bracket_table_twisted(twisted_bundle):
    frame = build_invariant_frame(twisted_bundle.data)
    rng = np.random.default_rng(4)
    pts = [rng.uniform(-1, 1, 5) for _ in range(20)]
    res = verify_bracket_table(frame, twisted_bundle.data, pts)
    assert max(res.values()) < 1e-8


def test_curvature_golden_single_base_vanishes(golden_frame, golden_cfg):
    curv = curvature_K(golden_cfg.data, golden_frame)
    K = np.asarray(curv([0.2, 0.1, -0.3, 0.4, 0.5]))
    assert K.shape == (1, 1, 4)
    assert np.max(np.abs(K)) == 0.0


def test_curvature_curved_abelian(curved_abelian_bundle):
    # gamma_1 = x2, gamma_2 = 0 on an abelian fiber: the bracket oracle
    # fixes K_12 = -1
    data = curved_abelian_bundle.data
    frame = build_invariant_frame(data)
    curv = curvature_K(data, frame)
    K = np.asarray(curv([0.5, -0.7, 0.3]))
    assert K[0][1][0] == pytest.approx(-1.0, abs=1e-12)
    assert K[1][0][0] == pytest.approx(1.0, abs=1e-12)


def test_curvature_flat_abelian():
    from ksym.config import parse_config

    doc = {
        "k": 2,
        "base_coords": ["x1", "x2"],
        "fiber_coords": ["g"],
        "structure_constants": [],
        "gamma": [["0"], ["0"]],
        "K": [["1"]],
        "A": [["1"]],
        "lagrangian": {"metric": [["1", "0", "0"], ["0", "1", "0"],
                                  ["0", "0", "1"]]},
        "grid": [{"min": 0, "max": 1, "count": 3},
                 {"min": 0, "max": 1, "count": 3}],
    }
    cfg = parse_config(doc)
    curv = curvature_K(cfg.data, cfg.invariant_frame())
    assert np.max(np.abs(np.asarray(curv([0.1, 0.2, 0.3])))) == 0.0


def test_invariance_golden_metric(golden_L, golden_frame):
    states = [KTangentPoint(np.random.default_rng(s).uniform(-1, 1, 5),
                            np.random.default_rng(s + 1).uniform(
                                -1, 1, (2, 5)))
              for s in range(20)]
    worst = invariance_check(golden_L, golden_frame.Etilde, states)
    assert worst < 1e-9


def test_invariance_rejects_fiber_coordinate(golden_frame):
    # L = x is not invariant under the group translations
    L = ExpressionLagrangian(parse("x"), ["q", "x", "y", "z", "theta"], 2)
    states = [KTangentPoint(np.zeros(5), np.zeros((2, 5)))]
    assert invariance_check(L, golden_frame.Etilde, states) > 0.5


def test_invariance_trivial_group_vacuous():
    L = ExpressionLagrangian(parse("a^2"), ["a"], 1)
    assert invariance_check(L, [], [KTangentPoint([0.3], [[1.0]])]) == 0.0


# ---------------------------------------------------------------------------
# Lifted-action identities
# ---------------------------------------------------------------------------


def _quasi_fn(frame_hat, nb, nf, k, kind, beta, comp):
    n = nb + nf

    def fn(q, u):
        rows = quasi_from_natural_generic(frame_hat, q, u)
        if kind == "q":
            return q[comp]
        if kind == "v":
            return rows[beta][comp]
        return rows[beta][nb + comp]

    return fn


def test_invariant_coordinates_under_lifted_action(golden_frame, golden_cfg):
    # applying the generator lifts to q^i and the quasi-velocities gives 0
    from ksym.geometry import apply_lift

    data = golden_cfg.data
    fh = golden_frame.frame_hat()
    rng = np.random.default_rng(5)
    k, nb, nf = 2, 1, 4
    for _ in range(5):
        q = list(rng.uniform(-1, 1, 5))
        u = rng.uniform(-1, 1, (2, 5)).tolist()
        for gen in golden_frame.Etilde:
            lift = complete_lift(gen, k)
            val = apply_lift(lift, _quasi_fn(fh, nb, nf, k, "q", 0, 0), q, u)
            assert abs(val) < 1e-9
            for beta in range(k):
                val = apply_lift(lift, _quasi_fn(fh, nb, nf, k, "v", beta, 0),
                                 q, u)
                assert abs(val) < 1e-9
                for b in range(nf):
                    val = apply_lift(
                        lift, _quasi_fn(fh, nb, nf, k, "w", beta, b), q, u)
                    assert abs(val) < 1e-9


def _lemma_table_expect(kind_field, i_or_a, alpha, data, ups, curv, q, v, w,
                        target, beta, comp):
    nb, nf = data.n_base, data.n_fiber
    U = ups(q)
    Kq = curv(q) if curv is not None else np.zeros((nb, nb, nf))
    if kind_field == "XC":
        if target == "q":
            return 1.0 if comp == i_or_a else 0.0
        if target == "v":
            return 0.0
        acc = 0.0
        for c in range(nf):
            acc -= U[i_or_a][c][comp] * w[beta][c]
        for kk in range(nb):
            acc += Kq[i_or_a][kk][comp] * v[beta][kk]
        return acc
    if kind_field == "XV":
        if target == "v":
            return 1.0 if (comp == i_or_a and beta == alpha) else 0.0
        return 0.0
    if kind_field == "EC":
        if target == "w":
            acc = 0.0
            for kk in range(nb):
                acc += U[kk][i_or_a][comp] * v[beta][kk]
            for c in range(nf):
                acc -= data.algebra.C[comp][i_or_a][c] * w[beta][c]
            return acc
        return 0.0
    # EV
    if target == "w":
        return 1.0 if (comp == i_or_a and beta == alpha) else 0.0
    return 0.0


@pytest.mark.parametrize("bundle", ["golden", "twisted"])
def test_lifted_frame_derivative_table(request, bundle, golden_frame,
                                       golden_cfg, twisted_bundle):
    # the strongest regression test of the module: every entry of the
    # derivative table of the lifted invariant frame acting on the reduced
    # coordinate functions
    from ksym.geometry import apply_lift

    if bundle == "golden":
        cfg, frame = golden_cfg, golden_frame
    else:
        cfg = twisted_bundle
        frame = build_invariant_frame(cfg.data)
    data = cfg.data
    nb, nf, k = data.n_base, data.n_fiber, cfg.k
    fh = frame.frame_hat()
    ups = upsilon(data)
    curv = None  # single base coordinate in both bundles
    rng = np.random.default_rng(6)
    for _ in range(3):
        q = list(rng.uniform(-1, 1, nb + nf))
        u = rng.uniform(-1, 1, (k, nb + nf)).tolist()
        rows = [[float(x) for x in row]
                for row in quasi_from_natural_generic(fh, q, u)]
        v = [r[:nb] for r in rows]
        w = [r[nb:] for r in rows]
        lifts = []
        for i in range(nb):
            lifts.append(("XC", i, None, complete_lift(frame.X[i], k)))
            for al in range(k):
                lifts.append(("XV", i, al, vertical_lift(frame.X[i], al, k)))
        for a in range(nf):
            lifts.append(("EC", a, None, complete_lift(frame.Ehat[a], k)))
            for al in range(k):
                lifts.append(
                    ("EV", a, al, vertical_lift(frame.Ehat[a], al, k)))
        for kind, idx, al, lift in lifts:
            for target, count in [("q", nb), ("v", nb), ("w", nf)]:
                for beta in range(k):
                    for comp in range(count):
                        if target == "q" and beta > 0:
                            continue
                        got = apply_lift(
                            lift, _quasi_fn(fh, nb, nf, k, target, beta,
                                            comp), q, u)
                        want = _lemma_table_expect(
                            kind, idx, al, data, ups, curv, q, v, w,
                            target, beta, comp)
                        assert got == pytest.approx(want, abs=1e-8), (
                            kind, idx, al, target, beta, comp)


def test_sopde_forces_fiber_independent(golden_cfg, golden_frame,
                                        golden_sopde):
    # construction of the reduced field runs the invariance check; also
    # exercise the failure path with a broken field
    from ksym.lagrange_poincare import reduced_sopde
    from ksym.lagrangian import SOPDEField

    reduced_sopde(golden_sopde, golden_cfg.data, golden_frame)

    def bad_forces(q, u):
        F = golden_sopde.frame_forces(q, u)
        F = [[[x for x in row] for row in blk] for blk in F]
        F[0][0][0] = F[0][0][0] + q[1]  # explicit fiber dependence
        return F

    bad = SOPDEField(golden_sopde.frame, bad_forces, 5, 2, natural=True)
    with pytest.raises(NotInvariant):
        reduced_sopde(bad, golden_cfg.data, golden_frame)


def test_reduce_kvector_vertical_and_horizontal(golden_cfg):
    data = golden_cfg.data
    k = 2

    def vertical_field(q):
        # X = Ehat_theta in both directions: frame components (0 | 0,0,0,1)
        return [[0.0, 0.0, 0.0, 0.0, 1.0] for _ in range(k)]

    hor, ver = reduce_kvector(vertical_field, data, k)
    assert np.max(np.abs(hor([0.3]))) == 0.0
    assert np.allclose(ver([0.3]), [[0, 0, 0, 1], [0, 0, 0, 1]])

    def horizontal_field(q):
        return [[1.0, 0.0, 0.0, 0.0, 0.0] for _ in range(k)]

    hor, ver = reduce_kvector(horizontal_field, data, k)
    assert np.allclose(hor([0.3]), [[1.0], [1.0]])
    assert np.max(np.abs(ver([0.3]))) == 0.0


def test_reduce_kvector_rejects_fiber_dependence(golden_cfg):
    def bad(q):
        return [[q[1], 0.0, 0.0, 0.0, 0.0] for _ in range(2)]

    with pytest.raises(NotInvariant):
        reduce_kvector(bad, golden_cfg.data, 2)
