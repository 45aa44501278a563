import math

import numpy as np
import pytest

from eflow.power_math import (CapacityNotExceedingFlow, LinkParams,
                              NegativeArgument, NegativePower, ZeroFlow,
                              dh_dp, dh_dt, dp_dsigma, dp_dt, lambert_w0,
                              link_delay, min_power, p_of_lambda)

LP = LinkParams(sigma=0.1, t=0.5)


def fixed_point_w(x, iters=2000):
    """Independent reference for W(x): damped fixed-point w <- x e^{-w}."""
    w = min(x, 1.0)
    for _ in range(iters):
        w = 0.5 * (w + x * math.exp(-w))
    return w


class TestLambertW:
    def test_zero(self):
        assert lambert_w0(0.0) == 0.0

    def test_at_e(self):
        assert lambert_w0(math.e) == pytest.approx(1.0, abs=1e-12)

    def test_at_one_fixed_point(self):
        assert lambert_w0(1.0) == pytest.approx(0.5671432904097838, abs=1e-12)
        assert lambert_w0(1.0) == pytest.approx(fixed_point_w(1.0), abs=1e-11)

    @pytest.mark.parametrize("x", [0.0, 1e-8, 0.1, 1.0, math.e, 10.0, 1e3, 1e6])
    def test_defining_residual(self, x):
        w = lambert_w0(x)
        assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, x)

    def test_array_matches_scalar(self):
        xs = np.array([0.0, 0.3, 1.0, 5.0, 1e4])
        ws = lambert_w0(xs)
        for x, w in zip(xs, ws):
            assert w == pytest.approx(lambert_w0(float(x)), abs=1e-14)
        # long arrays exercise the vectorized branch
        xs = np.linspace(0, 50, 257)
        ws = lambert_w0(xs)
        assert np.all(np.abs(ws * np.exp(ws) - xs) <= 1e-12 * np.maximum(1, xs))

    def test_negative_rejected(self):
        with pytest.raises(NegativeArgument):
            lambert_w0(-0.1)
        with pytest.raises(NegativeArgument):
            lambert_w0(np.linspace(-1, 1, 30))


class TestLinkDelay:
    def test_zero_flow_free(self):
        assert link_delay(0.0, LinkParams(0.1, 0.0)) == 0.0
        assert link_delay(3.0, LinkParams(0.1, 0.0)) == 0.0

    def test_unit_delay_case(self):
        # capacity 1.0 at p = sigma*(e^2 - 1), so delay = 0.5 / (1 - 0.5)
        p = 0.1 * (math.exp(2.0) - 1.0)
        assert link_delay(p, LP) == pytest.approx(1.0, rel=1e-12)

    def test_infinite_at_boundary(self):
        p = min_power(0.1, 0.5)
        assert link_delay(p, LP) == np.inf

    def test_negative_power_rejected(self):
        with pytest.raises(NegativePower):
            link_delay(-1e-9, LP)

    def test_monotone_in_p_and_t(self):
        ps = np.linspace(0.3, 5.0, 40)
        ds = [link_delay(p, LP) for p in ps]
        assert all(a > b for a, b in zip(ds, ds[1:]))
        ts = np.linspace(0.05, 0.9, 30)
        ds = [link_delay(1.0, LinkParams(0.1, t)) for t in ts]
        assert all(a < b for a, b in zip(ds, ds[1:]))

    def test_convex_in_p(self):
        # non-negative second difference on the feasible region
        ps = np.linspace(0.3, 6.0, 200)
        d = np.array([link_delay(p, LP) for p in ps])
        assert np.all(d[:-2] - 2 * d[1:-1] + d[2:] >= -1e-12)


class TestPOfLambda:
    def test_large_lambda_limit(self):
        assert p_of_lambda(1e12, LP) == pytest.approx(min_power(0.1, 0.5),
                                                      rel=1e-5)

    def test_closed_form_at_z_e(self):
        # lambda chosen so z = e, hence W(z) = 1
        lam = 0.5 * math.exp(-1.0) / (2 * 0.1 * math.exp(2.0))
        assert p_of_lambda(lam, LP) == pytest.approx(0.1 * (math.exp(3) - 1),
                                                     rel=1e-12)

    @pytest.mark.parametrize("lam", [0.01, 0.3, 2.0, 50.0])
    def test_round_trip_inverse(self, lam):
        p = p_of_lambda(lam, LP)
        assert -dh_dp(p, LP) == pytest.approx(lam, rel=1e-9)

    def test_strictly_decreasing_in_lambda(self):
        lams = np.logspace(-3, 3, 50)
        ps = [p_of_lambda(l, LP) for l in lams]
        assert all(a > b for a, b in zip(ps, ps[1:]))

    def test_zero_flow_convention(self):
        assert p_of_lambda(1.0, LinkParams(0.1, 0.0)) == 0.0


class TestDerivatives:
    def test_dh_dp_zero_flow(self):
        assert dh_dp(1.0, LinkParams(0.1, 0.0)) == 0.0

    def test_dh_dp_finite_difference(self):
        eps = 1e-5
        fd = (link_delay(1.0 + eps, LP) - link_delay(1.0 - eps, LP)) / (2 * eps)
        assert dh_dp(1.0, LP) == pytest.approx(fd, rel=1e-6)

    def test_dh_dp_errors_below_capacity(self):
        with pytest.raises(CapacityNotExceedingFlow):
            dh_dp(0.01, LinkParams(0.1, 2.0))

    def test_dh_dt_plug_in(self):
        # power chosen so capacity is exactly 1.0
        p = 0.1 * (math.exp(2.0) - 1.0)
        assert dh_dt(p, LP) == pytest.approx(1.0 / 0.25, rel=1e-12)

    def test_dh_dt_finite_difference(self):
        eps = 1e-6
        up = link_delay(1.0, LinkParams(0.1, 0.5 + eps))
        dn = link_delay(1.0, LinkParams(0.1, 0.5 - eps))
        assert dh_dt(1.0, LP) == pytest.approx((up - dn) / (2 * eps), rel=1e-6)

    def test_dh_dt_grows_to_pole(self):
        p = 1.0
        c = 0.5 * math.log1p(p / 0.1)
        ts = np.linspace(0.1, c - 1e-3, 40)
        vals = [dh_dt(p, LinkParams(0.1, t)) for t in ts]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def grid(self):
        return [(s, t, lam)
                for s in np.linspace(0.01, 1.0, 5)
                for t in np.linspace(0.1, 3.0, 5)
                for lam in np.logspace(-2, 1, 4)]

    def test_dp_dsigma_positive_and_matches_fd(self):
        for s, t, lam in self.grid():
            assert dp_dsigma(lam, LinkParams(s, t)) > 0
        lam, s, t = 0.3, 0.1, 0.5
        eps = 1e-6 * s
        fd = (p_of_lambda(lam, LinkParams(s + eps, t))
              - p_of_lambda(lam, LinkParams(s - eps, t))) / (2 * eps)
        assert dp_dsigma(lam, LinkParams(s, t)) == pytest.approx(fd, rel=1e-5)

    def test_dp_dt_positive_and_matches_fd(self):
        for s, t, lam in self.grid():
            assert dp_dt(lam, LinkParams(s, t)) > 0
        lam, s, t = 0.3, 0.1, 0.5
        eps = 1e-6
        fd = (p_of_lambda(lam, LinkParams(s, t + eps))
              - p_of_lambda(lam, LinkParams(s, t - eps))) / (2 * eps)
        assert dp_dt(lam, LinkParams(s, t)) == pytest.approx(fd, rel=1e-5)

    def test_dp_dt_closed_form_at_w1(self):
        lam = 0.5 * math.exp(-1.0) / (2 * 0.1 * math.exp(2.0))  # z = e
        assert dp_dt(lam, LP) == pytest.approx(0.2 * math.exp(3.0), rel=1e-10)

    def test_dp_dsigma_small_t_limit(self):
        # with z held fixed the closed form tends to e^{2W}/(1+W) - 1
        z = 2.0
        w = lambert_w0(z)
        target = math.exp(2 * w) / (1 + w) - 1
        for t in (1e-3, 1e-5, 1e-7):
            sigma = 0.1
            lam = t * math.exp(-2 * t) / (2 * sigma * z * z)
            got = dp_dsigma(lam, LinkParams(sigma, t))
            assert got == pytest.approx(target, rel=50 * t + 1e-9)

    def test_zero_flow_rejected(self):
        with pytest.raises(ZeroFlow):
            dp_dsigma(1.0, LinkParams(0.1, 0.0))
        with pytest.raises(ZeroFlow):
            dp_dt(1.0, LinkParams(0.1, 0.0))
