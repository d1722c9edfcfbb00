import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from critbubble.core import make_critical_pair
from critbubble.radial import (GridOptions, ode_residual, radial_moment, read_profile_csv, solve_ground_state,
                               solve_w, sphere_area, tail_constants, write_profile_csv)


def closed_form(N, r):
    return (1 + r**2 / (N * (N - 2))) ** (-(N - 2) / 2)


@pytest.mark.parametrize("fixture,N", [("gs6", 6), ("gs8", 8)])
def test_closed_form_ground_state(request, fixture, N):
    gs = request.getfixturevalue(fixture)
    r = np.linspace(0, 100, 20001)
    ref = closed_form(N, r)
    assert np.max(np.abs(gs.U(r) / ref - 1)) < 1e-6
    assert np.max(np.abs(gs.V(r) / ref - 1)) < 1e-6
    assert gs.beta == pytest.approx(1.0, abs=1e-9)
    assert gs.U(np.array([0.0]))[0] == 1.0


def test_ground_state_invariants(gs6):
    assert np.all(gs6.U.values > 0) and np.all(gs6.V.values > 0)
    assert np.all(gs6.U.deriv <= 0) and np.all(gs6.V.deriv <= 0)
    assert np.all(np.diff(gs6.grid) > 0)
    assert ode_residual(gs6) < 1e-8


def test_profile_interpolation_hits_nodes(gs6):
    g = gs6.grid[::97]
    assert np.array_equal(gs6.U(g), gs6.U.values[::97])


def test_profile_continuous_at_tail_seam(gs6):
    R = gs6.U.r_max
    lo, hi = gs6.U(np.array([R * (1 - 1e-12)]))[0], gs6.U(np.array([R * (1 + 1e-12)]))[0]
    assert hi == pytest.approx(lo, rel=1e-9)


# regression snapshots, validated by ODE residual < 1e-8 and flux identities to 1e-9
SNAPSHOTS = {
    (6, 1.8): (0.9560018357113756, 931.5312267657846, 416.90153574828923, "fast"),
    (7, 1.6): (0.9484518098645902, 14749.019401666186, 4640.441102206364, "fast"),
    (6, 1.5): (0.8666949872898885, 1028.907596975867, 256.8172808829615, "log"),
    (6, 1.2): (0.7355148658745596, 112.48838025775227, 140.56346379631924, "slow"),
}


@pytest.mark.parametrize("key", list(SNAPSHOTS))
def test_non_symmetric_pairs(key):
    beta, a, b, branch = SNAPSHOTS[key]
    pr = make_critical_pair(*key)
    gs = solve_ground_state(pr)
    assert pr.u_branch == branch
    assert gs.beta == pytest.approx(beta, rel=1e-9)
    assert gs.a == pytest.approx(a, rel=1e-7)
    assert gs.b == pytest.approx(b, rel=1e-7)
    assert ode_residual(gs) < 1e-8
    tf = tail_constants(gs)
    assert tf.b_flux == pytest.approx(gs.b, rel=1e-8)
    assert tf.v_exponent == pytest.approx(pr.N - 2, abs=1e-3)
    assert tf.u_exponent == pytest.approx(pr.u_decay, abs=0.01 if branch != "log" else 0.2)
    if branch == "fast":
        assert tf.a_flux == pytest.approx(gs.a, rel=1e-8)
    assert np.all(gs.U.values > 0) and np.all(np.diff(gs.U.values) < 0)


def test_tail_constants_closed_form(gs6, gs8):
    for gs, N in ((gs6, 6), (gs8, 8)):
        ref = float(N * (N - 2)) ** ((N - 2) / 2)
        tf = tail_constants(gs)
        assert tf.a == pytest.approx(ref, rel=1e-3)
        assert tf.b == pytest.approx(ref, rel=1e-3)
        assert tf.u_exponent == pytest.approx(N - 2, abs=0.01)
        assert tf.v_exponent == pytest.approx(N - 2, abs=0.01)


def test_refined_decay_envelope(gs6):
    r = np.geomspace(1e3, 1e4, 50)
    dev = np.abs(r**4 * gs6.V(r) - gs6.b) * r**2
    assert np.max(dev) < 10 * np.min(dev) + 1e-6
    assert np.max(dev) < 1e5


def test_radial_moments(gs6):
    pi3 = math.pi**3
    assert radial_moment([gs6.U], [3], 6) == pytest.approx(230.4 * pi3, rel=1e-8)
    assert radial_moment([gs6.U], [2], 6) == pytest.approx(2304 * pi3, rel=1e-8)
    zero = type(gs6.U)(gs6.grid, 0 * gs6.U.values, 0 * gs6.U.values, 0 * gs6.U.values)
    assert radial_moment([zero], [1], 6) == 0.0
    with pytest.raises(ValueError):
        radial_moment([gs6.U], [1], 6)


def test_ground_state_identities(gs6, gs8):
    for gs in (gs6, gs8):
        pr = gs.pair
        g = radial_moment([gs.U.derivative_profile(), gs.V.derivative_profile()], [1, 1], pr.N)
        v = radial_moment([gs.V], [pr.p + 1], pr.N)
        u = radial_moment([gs.U], [pr.q + 1], pr.N)
        assert g == pytest.approx(v, rel=5e-3) and v == pytest.approx(u, rel=5e-3)
        assert gs.A == pytest.approx(2 / pr.N * u, rel=5e-3)


def test_sphere_area():
    assert sphere_area(6) == pytest.approx(math.pi**3)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_w_closed_form_n6(w6):
    # nested quadrature of s^{1-N} int_0^s t^{N-1} V dt on the closed form gives 3.0000000000000084
    assert w6(np.array([0.0]))[0] == pytest.approx(3.0000000000000084, rel=1e-9)
    assert w6.w.deriv[0] == 0.0
    assert np.all(w6.w.values > 0)
    r = np.geomspace(1e3, 1e4, 20)
    slope = np.polyfit(np.log(r), np.log(w6(r)), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.01)


def test_w_integral_identity(gs6, w6):
    # at the symmetric point int U^2 w = int (-Delta V) w = int V^2
    assert radial_moment([gs6.U, w6.w], [2, 1], 6) == pytest.approx(2304 * math.pi**3, rel=1e-8)


def test_w_rejects_small_p():
    pr = make_critical_pair(6, 1.4)
    gs = solve_ground_state(pr)
    with pytest.raises(ValueError):
        solve_w(pr, gs)


def test_profile_csv_roundtrip(gs6, tmp_path):
    path = tmp_path / "profile.csv"
    write_profile_csv(gs6, path)
    assert path.read_text().splitlines()[0] == "r,U,V,dU,dV"
    data = read_profile_csv(path)
    assert np.array_equal(data["U"], gs6.U.values)
    assert data["U"][0] == 1.0 and data["V"][0] == 1.0


def test_runtime_closed_form():
    t = time.perf_counter()
    solve_ground_state(make_critical_pair(8, 5 / 3))
    assert time.perf_counter() - t < 5.0


def test_deterministic(gs6, pair6):
    again = solve_ground_state(pair6)
    assert np.array_equal(again.U.values, gs6.U.values)
    assert again.beta == gs6.beta


def test_grid_options():
    g = GridOptions().make_grid()
    assert len(g) == 4096 and g[0] == 0 and g[-1] == pytest.approx(1e4)
    with pytest.raises(ValueError):
        GridOptions(r_max=0.5).make_grid()
