import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critbubble.core import (PolygonConfig, apply_symmetry, btilde11_direct, btilde11_limit, make_critical_pair,
                             pairwise_sum, polygon_centers)


def test_pair_symmetric_point_n6():
    pr = make_critical_pair(6, 2)
    assert pr.q == pytest.approx(2.0, abs=1e-12)
    assert pr.tau == pytest.approx(0.5, abs=1e-15)
    assert pr.is_symmetric and pr.in_theorem_range


def test_pair_symmetric_point_n8():
    pr = make_critical_pair(8, 5 / 3)
    assert pr.q == pytest.approx(5 / 3, abs=1e-12)


def test_pair_off_diagonal():
    # 1/(q+1) = 2/3 - 3/8 = 7/24
    pr = make_critical_pair(6, 5 / 3)
    assert pr.q == pytest.approx(17 / 7, abs=1e-12)


@pytest.mark.parametrize("N,p", [(4, 2.0), (6, 0.4), (6, 2.5), (6, 0.5)])
def test_pair_rejects(N, p):
    with pytest.raises(ValueError):
        make_critical_pair(N, p)


@settings(max_examples=200, deadline=None)
@given(N=st.integers(5, 12), s=st.floats(1e-6, 1.0))
def test_hyperbola_identity(N, s):
    lo, hi = 2 / (N - 2), (N + 2) / (N - 2)
    p = lo + s * (hi - lo)
    pr = make_critical_pair(N, p)
    assert abs(1 / (pr.p + 1) + 1 / (pr.q + 1) - (N - 2) / N) < 1e-12
    assert pr.p <= hi + 1e-12 <= pr.q + 2e-12
    assert 0 < pr.tau < 1
    # exponent identities used by the weighted norms
    assert pr.alpha_u + 2 == pytest.approx(pr.p * pr.alpha_v, rel=1e-12)
    assert pr.alpha_v + 2 == pytest.approx(pr.q * pr.alpha_u, rel=1e-12)


def test_centers_square():
    x = polygon_centers(4, 1.0, 6)
    d = np.linalg.norm(x[1:] - x[0], axis=1)
    assert np.allclose(d, [math.sqrt(2), 2, math.sqrt(2)], atol=1e-15)
    assert np.allclose(np.linalg.norm(x, axis=1), 1.0)


def test_centers_antipodal_and_gap():
    x = polygon_centers(2, 3.0, 6)
    assert np.linalg.norm(x[1] - x[0]) == pytest.approx(6.0, abs=1e-14)
    x = polygon_centers(1000, 1.0, 6)
    assert np.linalg.norm(x[1] - x[0]) == pytest.approx(6.2832e-3, rel=1e-4)


def test_pairwise_sum_small():
    assert pairwise_sum(4, 1.0, 4) == pytest.approx(9 / 16, rel=1e-15)
    assert pairwise_sum(2, 1.0, 4) == pytest.approx(1 / 16, rel=1e-15)


def test_pairwise_sum_matches_direct_distances():
    x = polygon_centers(37, 1.3, 6)
    d = np.linalg.norm(x[1:] - x[0], axis=1)
    assert pairwise_sum(37, 1.3, 4) == pytest.approx(math.fsum(d**-4.0), rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(k=st.integers(2, 500), r=st.floats(0.1, 10.0), s=st.floats(1.5, 8.0))
def test_pairwise_sum_homogeneous(k, r, s):
    assert pairwise_sum(k, r, s) == pytest.approx(r**-s * pairwise_sum(k, 1.0, s), rel=1e-13)


def test_btilde11_limit():
    assert btilde11_limit(6) == pytest.approx(1 / 720, rel=1e-14)
    assert btilde11_direct(6, 10**4) == pytest.approx(1 / 720, rel=1e-6)


def test_btilde11_exact_residual():
    # sum_{m<k} csc^4(m pi/k) = (k^2-1)(k^2+11)/45
    for k in (8, 16, 32, 64):
        res = btilde11_direct(6, k) * 720 - 1
        assert res == pytest.approx(10 / k**2 - 11 / k**4, rel=1e-9, abs=1e-14)


def test_btilde11_rate():
    ks = [2**e for e in range(5, 13)]
    res = [btilde11_direct(6, k) / btilde11_limit(6) - 1 for k in ks]
    ratios = [a / b for a, b in zip(res, res[1:])]
    assert all(3.6 <= q <= 4.4 for q in ratios)


def test_pairwise_sum_overflow_guard():
    with pytest.raises(OverflowError):
        pairwise_sum(10**9, 1e-9, 40)


def test_symmetry_examples():
    pr = make_critical_pair(6, 2)
    cfg = PolygonConfig(pr, 4, 1.0, 1.0, 1.0)
    y = np.array([1.0, 2.0, 3.0, 0, 0, 0])
    assert np.array_equal(apply_symmetry(cfg, y, 1), y)
    assert np.allclose(apply_symmetry(cfg, y, 1, 2), [1, -2, 3, 0, 0, 0])
    assert np.allclose(apply_symmetry(cfg, cfg.centers[0], 2), cfg.centers[1], atol=1e-15)
    with pytest.raises(IndexError):
        apply_symmetry(cfg, y, 5)
    with pytest.raises(IndexError):
        apply_symmetry(cfg, y, 1, 1)


@settings(max_examples=100, deadline=None)
@given(k=st.integers(2, 64), j=st.integers(1, 64), h=st.one_of(st.none(), st.integers(2, 6)),
       y=st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_symmetry_preserves_norm(k, j, h, y):
    cfg = PolygonConfig(make_critical_pair(6, 2), k, 1.0, 1.0, 1.0)
    j = (j - 1) % k + 1
    out = apply_symmetry(cfg, np.array(y), j, h)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(y), rel=1e-12, abs=1e-12)


def test_rotations_permute_centers():
    cfg = PolygonConfig(make_critical_pair(6, 2), 7, 1.0, 2.0, 1.0)
    imgs = np.array([apply_symmetry(cfg, cfg.centers[0], j) for j in range(1, 8)])
    assert np.allclose(imgs, cfg.centers, atol=1e-14)


def test_config_mu_and_sector():
    pr = make_critical_pair(6, 2)
    cfg = PolygonConfig(pr, 8, 1.0, 1.0, 1.5)
    assert cfg.mu == 1.5 * 8.0**2
    assert np.all(cfg.sector_index(cfg.centers) == np.arange(8))
    # edge between sectors 0 and 1 goes to the lower index
    a = math.pi / 8
    edge = np.array([[math.cos(a), math.sin(a), 0, 0, 0, 0]])
    assert cfg.sector_index(edge)[0] == 0


def test_config_scaled():
    cfg = PolygonConfig(make_critical_pair(6, 2), 8, 1.0, 1.0, 1.0)
    c2 = cfg.scaled(2.0)
    assert c2.mu == pytest.approx(2 * cfg.mu) and c2.r == 0.5 and c2.mu0 == 2.0
