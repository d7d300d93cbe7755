import itertools

import numpy as np
import pytest

from conftest import H_12, H_X, I_Y1U1, I_Y2U2_GIVEN_U1, SUM_RATE, random_instance, scalar_model, scalar_gains
from gaussceo.berger_tung import (
    CornerSpec,
    UnboundedRateError,
    all_corner_points,
    check_domination_k2,
    corner_point,
    extreme_points_k2,
    mutual_info_group,
    time_share,
)
from gaussceo.model import TestChannelGains
from gaussceo.region import RegionPoint, is_feasible_for_gains
from oracles import gauss_entropy, gaussian_cond_cov, joint_cov_xyu


class TestMutualInfoGroup:
    def test_empty(self, scalar):
        assert mutual_info_group(*scalar, []) == 0.0

    def test_scalar_full(self, scalar):
        assert mutual_info_group(*scalar, [0, 1]) == pytest.approx(SUM_RATE, abs=1e-12)
        assert SUM_RATE == pytest.approx(1.03972, abs=1e-5)

    def test_scalar_single(self, scalar):
        assert mutual_info_group(*scalar, [1]) == pytest.approx(I_Y2U2_GIVEN_U1, abs=1e-12)
        assert I_Y2U2_GIVEN_U1 == pytest.approx(0.49041, abs=1e-5)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_joint_covariance(self, seed):
        # h(U_S | U_{S^c}) - h(U_S | Y_S), the second being the added noise entropy
        rng = np.random.default_rng(seed)
        m, g = random_instance(rng, K=3, n_x=2)
        C = joint_cov_xyu(m.sigma_x, [a.H for a in m.agents], [a.sigma for a in m.agents], g.omegas)
        ns = [a.n for a in m.agents]
        u0 = m.n_x + sum(ns)
        uidx = [list(range(u0 + sum(ns[:k]), u0 + sum(ns[:k + 1]))) for k in range(3)]
        yidx = [[i - sum(ns) for i in u] for u in uidx]
        for S in range(1, 8):
            inside = [k for k in range(3) if S >> k & 1]
            us = sum((uidx[k] for k in inside), [])
            uc = sum((uidx[k] for k in range(3) if k not in inside), [])
            ys = sum((yidx[k] for k in inside), [])
            direct = gauss_entropy(gaussian_cond_cov(C, us, uc)) - gauss_entropy(gaussian_cond_cov(C, us, ys))
            assert mutual_info_group(m, g, S) == pytest.approx(direct, abs=1e-8)


class TestCorners:
    def test_scalar_orders(self, scalar):
        p = corner_point(scalar[0], CornerSpec((0, 1), scalar[1]))
        np.testing.assert_allclose(p.as_tuple(), (0.54931, 0.49041, 1.07236), atol=1e-5)
        np.testing.assert_allclose(p.as_tuple(), (I_Y1U1, I_Y2U2_GIVEN_U1, H_12), atol=1e-12)
        q = corner_point(scalar[0], CornerSpec((1, 0), scalar[1]))
        np.testing.assert_allclose(q.as_tuple(), (0.49041, 0.54931, 1.07236), atol=1e-5)

    def test_zero_gains(self):
        rng = np.random.default_rng(2)
        m, _ = random_instance(rng, K=3)
        for p in all_corner_points(m, TestChannelGains.zeros(m)).values():
            np.testing.assert_allclose(p.as_tuple(), (0, 0, 0, m.prior_entropy()), atol=1e-12)

    def test_bad_permutation(self, scalar):
        with pytest.raises(ValueError, match="permutation"):
            CornerSpec((0, 0), scalar[1])
        with pytest.raises(ValueError):
            corner_point(scalar[0], CornerSpec((0,), scalar[1]))

    def test_boundary_gain_names_agent(self):
        m = scalar_model()
        with pytest.raises(UnboundedRateError, match="agent 2"):
            corner_point(m, CornerSpec((0, 1), scalar_gains(0.5, 1.0)))

    @pytest.mark.parametrize("seed", range(30))
    def test_chain_region_and_sign(self, seed):
        rng = np.random.default_rng(seed)
        m, g = random_instance(rng, K=3)
        total = mutual_info_group(m, g, m.full_mask)
        for perm, p in all_corner_points(m, g).items():
            assert sum(p.rates) == pytest.approx(total, abs=1e-9)
            assert min(p.rates) >= 0
            ok, worst = is_feasible_for_gains(m, g, p)
            assert ok and worst >= -1e-9


class TestExtremePoints:
    def test_zero_gains(self):
        m = scalar_model(2.0, (0.3, 1.2), (0.5, 2.0))
        for p in extreme_points_k2(m, scalar_gains(0, 0)):
            np.testing.assert_allclose(p.as_tuple(), (0, 0, m.prior_entropy()), atol=1e-12)

    def test_scalar_values(self, scalar):
        pts = extreme_points_k2(*scalar)
        assert pts[0].as_tuple() == pytest.approx((0, 0, 2.11209), abs=1e-5)
        corner = corner_point(scalar[0], CornerSpec((0, 1), scalar[1]))
        np.testing.assert_allclose(pts[3].as_tuple(), corner.as_tuple(), atol=1e-12)

    def test_requires_two_agents(self):
        rng = np.random.default_rng(0)
        m, g = random_instance(rng, K=3)
        with pytest.raises(ValueError, match="K = 2"):
            extreme_points_k2(m, g)


class TestDomination:
    def test_scalar_p1_slack(self, scalar):
        rep = check_domination_k2(*scalar)
        assert [e.name for e in rep] == ["P1", "P2", "P3", "P4", "P5"]
        assert rep[0].slacks[-1] == pytest.approx(2.11209 - H_X, abs=1e-5)
        assert rep[0].slacks[-1] == pytest.approx(0.69315, abs=1e-5)

    def test_zero_gains_all_zero(self):
        m = scalar_model()
        for e in check_domination_k2(m, scalar_gains(0, 0)):
            np.testing.assert_allclose(e.slacks, 0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        m, g = random_instance(rng, K=2)
        assert all(e.ok for e in check_domination_k2(m, g))


def test_time_share_stays_in_region(scalar):
    c = all_corner_points(*scalar)
    mid = time_share(list(c.values()), [0.25, 0.75])
    assert is_feasible_for_gains(*scalar, mid)[0]
    assert sum(mid.rates) == pytest.approx(SUM_RATE, abs=1e-12)
    with pytest.raises(ValueError):
        time_share(list(c.values()), [0.5, 0.6])
