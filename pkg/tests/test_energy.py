import math

import numpy as np
import pytest
from scipy.integrate import quad

from critbubble.core import PolygonConfig, make_critical_pair
from critbubble.energy import (core_interaction_check, energy_densities, expansion_convergence, ground_energy,
                               interaction_constants, measure_expansion, predicted_terms, scaled_trend_ok,
                               write_expansion_csv)
from critbubble.radial import GridOptions, solve_ground_state, solve_w


def test_ground_energy_closed_form(gs6):
    A = ground_energy(gs6)
    assert A == pytest.approx(76.8 * math.pi**3, rel=5e-3)
    assert A == pytest.approx(76.8 * math.pi**3, rel=1e-8)
    assert A > 0


def test_ground_energy_scale_invariant(gs6):
    def cube(mu0):
        f = lambda t: (mu0**2 * float(gs6.U(np.array([mu0 * t]))[0])) ** 3 * t**5
        return math.pi**3 * quad(f, 0, np.inf, limit=400, epsabs=0, epsrel=1e-11)[0]

    assert cube(2.0) == pytest.approx(cube(1.0), rel=1e-8)


def test_ground_energy_mismatch_detected(gs6):
    with pytest.raises(ValueError):
        ground_energy(gs6, tol=-1.0)


def test_constants_n6(consts6):
    assert consts6.btilde11 == pytest.approx(1 / 720, rel=1e-12)
    assert consts6.B11 == pytest.approx(1.6, rel=1e-9)
    assert consts6.B2 == pytest.approx(4608 * math.pi**3, rel=1e-8)
    # B1 = (1/720/3)(576 * 2304 pi^3 + 2 * 576 * 2304 pi^3) with int U^2 w = int V^2
    assert consts6.B1 == pytest.approx(1843.2 * math.pi**3, rel=1e-8)
    assert consts6.A == pytest.approx(76.8 * math.pi**3, rel=1e-8)
    assert "int_Vp" in consts6.provenance


@pytest.mark.parametrize("N,p", [(6, 1.8), (7, 1.6), (8, 5 / 3)])
def test_constants_positive(N, p):
    pr = make_critical_pair(N, p)
    gs = solve_ground_state(pr)
    c = interaction_constants(gs, solve_w(pr, gs))
    assert c.B1 > 0 and c.B2 > 0 and c.A > 0 and c.B11 > 0
    assert ("int_Vp" in c.provenance) == pr.is_symmetric


def test_constants_grid_independent(pair6, consts6):
    gs = solve_ground_state(pair6, GridOptions(n_nodes=2048, n_uniform=128))
    c = interaction_constants(gs, solve_w(pair6, gs))
    assert c.B1 == pytest.approx(consts6.B1, rel=5e-3)
    assert c.B2 == pytest.approx(consts6.B2, rel=5e-3)


def test_predicted_signs(pair6, gs6, consts6):
    for k in (8, 16, 32):
        poly, inner = predicted_terms(PolygonConfig(pair6, k, 1.0, 1.0, 1.0), gs6, consts6)
        assert poly < 0 < inner


def test_single_far_bubble(pair6, gs6, w6, consts6):
    cfg = PolygonConfig(pair6, 1, 1.0, 10.0, 100.0)
    br = measure_expansion(cfg, gs6, w6, 10**5, 1, consts6)
    ratio = br.measured_total.value / br.predicted
    assert 0.8 <= ratio <= 1.2
    assert abs(br.predicted_terms[0]) < 1e-6 * br.predicted_terms[1]


def test_breakdown_assembly(pair6, gs6, w6, consts6):
    cfg = PolygonConfig(pair6, 8, 1.0, 1.0, 1.0)
    br = measure_expansion(cfg, gs6, w6, 5 * 10**4, 2, consts6)
    assert br.measured_total.value == pytest.approx(br.assembled, rel=1e-10)
    assert br.kA_part == 9 * consts6.A
    assert br.comparable and br.residual == br.measured_total.value - br.predicted
    # the correction is a small fraction of (k+1)A
    assert abs(br.measured_total.value) < 0.05 * br.kA_part


def test_breakdown_refuses_noisy(pair6, gs6, w6, consts6):
    br = measure_expansion(PolygonConfig(pair6, 8, 1.0, 1.0, 1.0), gs6, w6, 8, 0, consts6)
    assert not br.comparable and math.isnan(br.residual)


def test_measured_total_scale_invariant(pair6, gs6, w6, consts6):
    cfg = PolygonConfig(pair6, 8, 1.0, 1.0, 1.0)
    a = measure_expansion(cfg, gs6, w6, 10**5, 3, consts6).measured_total
    b = measure_expansion(cfg.scaled(2.0), gs6, w6, 10**5, 4, consts6).measured_total
    assert abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr)


def test_densities_vanish_without_interaction(pair6, gs6, w6):
    # one bubble, far from the inner one: every piece is tiny next to the bubble scale
    cfg = PolygonConfig(pair6, 1, 1.0, 1e3, 1.0)
    z = cfg.centers[0] + 0.1 * np.eye(6)
    d = energy_densities(cfg, gs6, w6, z)
    assert np.all(d["IUV_minus_kA"] == 0)
    assert np.all(np.abs(d["J1"]) < 1e-8)


def test_core_inner_piece(pair6, gs6):
    est, formula = core_interaction_check(PolygonConfig(pair6, 8, 1.0, 1.0, 1.0), gs6, "inner", 10**5, 3)
    assert abs(est.value - formula) < 3 * est.stderr


def test_core_polygon_piece(pair6, gs6):
    est, formula = core_interaction_check(PolygonConfig(pair6, 16, 1.0, 1.0, 1.0), gs6, "polygon", 10**5, 3)
    assert est.value == pytest.approx(formula, rel=0.1)


def test_single_row_no_trend(pair6, gs6, w6, tmp_path):
    rows = expansion_convergence(pair6, 1.0, 1.0, 1.0, [8], 3 * 10**4, 0, gs=gs6, w=w6)
    assert len(rows) == 1 and scaled_trend_ok(rows)
    path = tmp_path / "e.csv"
    write_expansion_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,mu,measured,stderr,predicted,residual,scaled_residual"
    assert lines[1].startswith("8,64,")
    with pytest.raises(ValueError):
        expansion_convergence(pair6, 1.0, 1.0, 1.0, [16, 8], 100, 0, gs=gs6, w=w6)
