import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critbubble.bubble import eval_multibubble, phi_asymptotic
from critbubble.core import PolygonConfig, make_critical_pair
from critbubble.norms import (KINDS, SamplePlan, constants_stable, domination_constant, envelope_constant,
                              error_norm_check, error_term, make_plan, nonlinearity, nonlinearity_ratio, norm_spec,
                              norm_weight, remainder, weighted_ratio, write_norm_csv)

K_LIST = (8, 16, 32)


@pytest.fixture(scope="module")
def configs(pair6):
    return {k: PolygonConfig(pair6, k, 1.0, 1.0, 1.0) for k in K_LIST}


@pytest.fixture(scope="module")
def plans(configs):
    return {k: make_plan(c) for k, c in configs.items()}


@given(N=st.integers(5, 12), s=st.floats(1e-6, 1.0))
@settings(max_examples=60, deadline=None)
def test_spec_table(N, s):
    lo, hi = 2 / (N - 2), (N + 2) / (N - 2)
    pr = make_critical_pair(N, lo + s * (hi - lo))
    sp = {kd: norm_spec(pr, kd) for kd in KINDS}
    assert sp["*,1"].alpha == pytest.approx(N / (pr.q + 1), rel=1e-12)
    assert sp["*,2"].alpha == pytest.approx(N / (pr.p + 1), rel=1e-12)
    for kd in KINDS:
        assert sp[kd].beta - sp[kd].alpha == pytest.approx(pr.tau, rel=1e-12)
    assert sp["**,1"].alpha == pytest.approx(pr.p * N / (pr.p + 1), rel=1e-12)
    assert sp["**,2"].alpha == pytest.approx(pr.q * N / (pr.q + 1), rel=1e-12)


def test_unknown_kind(pair6):
    with pytest.raises(ValueError):
        norm_spec(pair6, "*,3")


@pytest.mark.parametrize("kind", KINDS)
def test_self_normalized(configs, plans, pair6, kind):
    cfg, plan = configs[8], plans[8]
    spec = norm_spec(pair6, kind)
    assert weighted_ratio(norm_weight(cfg, spec, plan.points), plan, cfg, spec) == pytest.approx(1.0, rel=1e-14)
    assert weighted_ratio(np.zeros(len(plan)), plan, cfg, spec) == 0.0


def test_misaligned_values(configs, plans, pair6):
    with pytest.raises(ValueError):
        weighted_ratio(np.zeros(3), plans[8], configs[8], norm_spec(pair6, "*,1"))


def test_V_sum_bounded(configs, plans, gs6, pair6):
    spec = norm_spec(pair6, "*,2")
    vals = [weighted_ratio(eval_multibubble(configs[k], gs6, plans[k].points).V_sum, plans[k], configs[k], spec)
            for k in K_LIST]
    assert constants_stable(vals, 1.2)
    # the decay of V_j dominates its own weight
    assert pair6.N - 2 >= spec.beta


def test_plan_contents(configs, plans):
    for k in K_LIST:
        cfg, plan = configs[k], plans[k]
        assert np.array_equal(plan.points[:k], cfg.centers)
        ang = np.arctan2(plan.points[:, 1], plan.points[:, 0])
        assert np.any(np.isclose(ang, np.pi / k))
        assert plan.boundary.any() and not plan.boundary[:k + 1].any()


def test_plan_monotone(configs, plans, gs6, w6, pair6):
    cfg, plan = configs[8], plans[8]
    spec = norm_spec(pair6, "**,1")
    sub = SamplePlan(plan.points[::3], plan.boundary[::3])
    l1, _ = error_term(cfg, gs6, w6, plan.points)
    full = weighted_ratio(l1, plan, cfg, spec)
    part = weighted_ratio(l1[::3], sub, cfg, spec)
    more = plan.extend(make_plan(cfg, seed=5))
    l1m, _ = error_term(cfg, gs6, w6, more.points)
    assert part <= full <= weighted_ratio(l1m, more, cfg, spec)


def test_error_term_formula(configs, gs6, w6):
    # p = q = 2: the signed powers are plain products
    cfg = configs[8]
    x1 = cfg.centers[0]
    y = np.array([x1, x1 + [0.01, 0, 0, 0, 0, 0], x1 + [0, 0, 0.05, 0, 0, 0], np.zeros(6)])
    l1, l2 = error_term(cfg, gs6, w6, y)
    mb = eval_multibubble(cfg, gs6, y, keep_each=True)
    phi = phi_asymptotic(cfg, gs6, w6, y)
    Vs = mb.V0 - mb.V_sum
    Us = mb.U0 - mb.U_sum - phi
    np.testing.assert_allclose(l1, -mb.V0**2 + mb.V_sum**2 + np.abs(Vs) * Vs, rtol=1e-9)
    np.testing.assert_allclose(l2, -mb.U0**2 + np.sum(mb.U_each**2, 0) + np.abs(Us) * Us, rtol=1e-9)


def test_error_term_snapshot(configs, gs6, w6):
    cfg = configs[8]
    x1 = cfg.centers[0]
    y = np.array([x1, x1 + [0.01, 0, 0, 0, 0, 0], x1 + [0, 0, 0.05, 0, 0, 0], np.zeros(6)])
    l1, l2 = error_term(cfg, gs6, w6, y)
    np.testing.assert_allclose(l1, [7549.71878, 7286.71868, 3708.47824, 0.223862758], rtol=1e-6)
    np.testing.assert_allclose(l2, [-39218.6886, -37356.0352, -15063.7628, -0.873168483], rtol=1e-6)
    assert np.all(l2 < 0)


def test_error_term_exact_single_bubble(pair6, gs6, w6):
    cfg = PolygonConfig(pair6, 1, 1.0, 1.0, 1.0)
    y = np.random.default_rng(0).normal(size=(200, 6))
    l1, l2 = error_term(cfg, gs6, w6, y, inner=False)
    assert np.all(l1 == 0.0)
    assert np.all(l2 == 0.0)


def test_error_term_far_field(pair6, gs6, w6):
    cfg = PolygonConfig(pair6, 1, 1.0, 1.0, 1.0)
    e = np.eye(6)[2]
    vals = [abs(error_term(cfg, gs6, w6, R * e)[0][()]) for R in (10.0, 100.0, 1000.0)]
    assert vals[0] > vals[1] > vals[2]


def test_remainder_scalar():
    assert remainder(1.0, 0.1, 2.0) == pytest.approx(0.01, abs=1e-15)
    assert remainder(np.array([0.3, 2.0]), 0.0, 2.0).tolist() == [0.0, 0.0]


def test_nonlinearity_zero_omega(configs, plans, gs6, w6):
    zero = lambda y: np.zeros(len(y))
    N1, N2 = nonlinearity(configs[8], gs6, w6, zero, zero, plans[8].points)
    assert np.all(N1 == 0) and np.all(N2 == 0)


def test_nonlinearity_exponent(configs, plans, gs6, w6):
    r = [nonlinearity_ratio(configs[8], gs6, w6, plans[8], eps) for eps in (1e-2, 1e-3)]
    assert max(r) / min(r) < 2.0


def test_error_norm_decay(pair6, gs6, w6, tmp_path):
    table = error_norm_check(pair6, 1.0, 1.0, 1.0, K_LIST, gs=gs6, w=w6)
    assert table.scaled_decreasing
    assert table.slope_ok(pair6)
    path = tmp_path / "n.csv"
    write_norm_csv(table, path)
    assert path.read_text().splitlines()[0] == "k,mu,l_norm,scaled"


def test_error_norm_single_k(pair6, gs6, w6):
    table = error_norm_check(pair6, 1.0, 1.0, 1.0, [8], gs=gs6, w=w6)
    assert len(table.rows) == 1 and table.scaled_decreasing and table.slope_ok(pair6)


def test_domination_and_envelope(configs, plans, gs6, w6):
    dom = [domination_constant(configs[k], plans[k]) for k in K_LIST]
    env = [envelope_constant(configs[k], gs6, w6, plans[k]) for k in K_LIST]
    assert constants_stable(dom) and constants_stable(env)


def test_boundary_warning(configs, plans, pair6):
    cfg, plan = configs[8], plans[8]
    spec = norm_spec(pair6, "*,1")
    f = np.where(plan.boundary, 1e6, 0.0) * norm_weight(cfg, spec, plan.points)
    with pytest.warns(RuntimeWarning, match="boundary"):
        weighted_ratio(f, plan, cfg, spec, warn=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        weighted_ratio(f, plan, cfg, spec, warn=False)
