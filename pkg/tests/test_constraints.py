import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macfx.constraints import (
    Budgets, CostBundle, aggregate_costs, calibrate_budgets, centered_softplus,
    esg_violation, load_budgets, pressure_weights, rollout_cost_stats,
    save_budgets,
)
from macfx.errors import ContractError, StructuralError


def bundle(c, u=(0.0, 0.0, 0.0)):
    return CostBundle(c=np.array(c, dtype=float), u_bar=np.array(u, dtype=float))


class TestCenteredSoftplus:
    @pytest.mark.parametrize("tau", [0.5, 1.0, 10.0, 50.0])
    def test_zero_at_origin(self, tau):
        assert centered_softplus(0.0, tau) == 0.0

    def test_unit_value(self):
        assert centered_softplus(1.0, 1.0) == pytest.approx(
            np.log(1 + np.e) - np.log(2), rel=1e-12)

    def test_negative_clamped(self):
        assert centered_softplus(-5.0, 1.0) == 0.0
        assert centered_softplus(-0.001, 50.0) == 0.0

    def test_linear_asymptote(self):
        assert abs(centered_softplus(50.0, 1.0) - (50.0 - np.log(2))) < 1e-9

    @given(x=st.floats(-10, 10), y=st.floats(-10, 10),
           tau=st.floats(0.1, 100))
    @settings(max_examples=300, deadline=None)
    def test_nonneg_and_monotone(self, x, y, tau):
        lo, hi = sorted([x, y])
        a, b = centered_softplus(lo, tau), centered_softplus(hi, tau)
        assert a >= 0.0
        assert a <= b + 1e-12

    def test_rejects_bad_tau(self):
        with pytest.raises(StructuralError):
            centered_softplus(1.0, 0.0)


class TestAggregateCosts:
    def test_all_zero(self):
        n = 4
        cb = aggregate_costs(np.zeros((n, 3)), np.zeros((n, 3)),
                             np.zeros((n, 3)), np.zeros(n), np.zeros(n))
        np.testing.assert_array_equal(cb.c, np.zeros(3))
        np.testing.assert_array_equal(cb.u_bar, np.zeros(3))

    def test_single_asset_hold_term(self):
        rho_w = np.array([[0.4, 0.4, 0.4]])
        cb = aggregate_costs(np.zeros((1, 3)), rho_w, np.zeros((1, 3)),
                             np.array([0.0]), np.array([0.5]),
                             eta=(1.0, 1.0, 1.0))
        np.testing.assert_allclose(cb.c, [0.2, 0.2, 0.2])

    def test_pure_sell_leaves_only_hold_costs(self):
        rng = np.random.default_rng(0)
        n = 6
        rho_d = rng.random((n, 3))
        rho_w = rng.random((n, 3))
        u = rng.random((n, 3))
        dw = -rng.random(n) * 0.05
        w_next = rng.random(n) * 0.1
        eta = (0.0, 1.0, 1.0)
        cb = aggregate_costs(rho_d, rho_w, u, dw, w_next, eta=eta)
        expected = np.asarray(eta) * (w_next @ rho_w)
        np.testing.assert_allclose(cb.c, expected)

    def test_additive_over_partitions(self):
        rng = np.random.default_rng(1)
        n = 10
        rho_d, rho_w, u = rng.random((3, n, 3))
        dw = rng.normal(0, 0.02, n)
        w_next = rng.random(n) * 0.1
        whole = aggregate_costs(rho_d, rho_w, u, dw, w_next)
        a = aggregate_costs(rho_d[:4], rho_w[:4], u[:4], dw[:4], w_next[:4])
        b = aggregate_costs(rho_d[4:], rho_w[4:], u[4:], dw[4:], w_next[4:])
        np.testing.assert_allclose(whole.c, a.c + b.c, rtol=1e-12)
        np.testing.assert_allclose(whole.u_bar, a.u_bar + b.u_bar, rtol=1e-12)

    def test_negative_weight_rejected(self):
        with pytest.raises(ContractError):
            aggregate_costs(np.zeros((1, 3)), np.zeros((1, 3)),
                            np.zeros((1, 3)), np.zeros(1), np.array([-0.1]))


class TestCalibrateBudgets:
    def test_max_quantile(self):
        costs = [bundle([x, 2 * x, 0.1]) for x in np.linspace(0.01, 1, 60)]
        b = calibrate_budgets(costs, q=(1.0, 1.0, 1.0))
        assert b.b[0] == pytest.approx(1.0)
        assert b.b[1] == pytest.approx(2.0)

    def test_linear_interpolation_convention(self):
        vals = [0.1, 0.2, 0.3, 0.4] * 15
        costs = [bundle([v, v, v]) for v in vals]
        b = calibrate_budgets(costs, q=(0.5, 0.5, 0.5))
        np.testing.assert_allclose(b.b, 0.25)

    def test_constant_costs(self):
        costs = [bundle([0.3, 0.3, 0.3])] * 60
        for q in (0.1, 0.5, 0.9, 1.0):
            np.testing.assert_allclose(calibrate_budgets(costs, (q, q, q)).b, 0.3)

    def test_floor_applied(self):
        costs = [bundle([0.0, 0.0, 0.0])] * 60
        np.testing.assert_allclose(calibrate_budgets(costs).b, 1e-6)

    def test_exceedance_fraction_bound(self):
        rng = np.random.default_rng(5)
        t = 400
        costs = [bundle(rng.random(3)) for _ in range(t)]
        q = 0.9
        b = calibrate_budgets(costs, (q, q, q))
        mat = np.stack([cb.c for cb in costs])
        for k in range(3):
            frac = np.mean(mat[:, k] > b.b[k])
            assert frac <= 1 - q + 1 / t + 1e-12

    def test_short_or_empty_rejected(self):
        with pytest.raises(StructuralError):
            calibrate_budgets([])
        with pytest.raises(StructuralError):
            calibrate_budgets([bundle([1, 1, 1])] * 10)


class TestPressureWeights:
    def budgets(self, b):
        return Budgets(b=np.array(b, dtype=float), q=np.array([0.9] * 3))

    def test_direct_formula(self):
        pw = pressure_weights(np.array([0.5, 0.0, 0.0]), np.zeros(3),
                              self.budgets([1.0, 1.0, 1.0]),
                              beta=(1, 1, 1), lambda_u=1.0, eps_safe=1e-8,
                              lambda_max=100.0)
        assert pw.lam[0] == pytest.approx(2.0)

    def test_boundary_hits_lambda_max_exactly(self):
        pw = pressure_weights(np.array([1.2, 0.0, 0.0]), np.zeros(3),
                              self.budgets([1.0, 1.0, 1.0]),
                              beta=(1, 1, 1), lambda_u=1.0, eps_safe=1e-8,
                              lambda_max=100.0)
        assert pw.lam[0] == 100.0

    def test_uncertainty_amplification(self):
        pw = pressure_weights(np.zeros(3), np.array([1.0, 0.0, 0.0]),
                              self.budgets([1.0, 1.0, 1.0]),
                              beta=(1, 1, 1), lambda_u=1.0, eps_safe=1e-8,
                              lambda_max=100.0)
        assert pw.lam[0] == pytest.approx(2.0)

    @given(slack1=st.floats(0.01, 2), slack2=st.floats(0.01, 2),
           u1=st.floats(0, 1), u2=st.floats(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_slack_and_uncertainty(self, slack1, slack2, u1, u2):
        b = self.budgets([2.0, 2.0, 2.0])
        s_lo, s_hi = sorted([slack1, slack2])
        u_lo, u_hi = sorted([u1, u2])
        lam_tight = pressure_weights(np.array([2.0 - s_lo, 0, 0]),
                                     np.array([u_lo, 0, 0]), b, (1, 1, 1),
                                     1.0, 1e-8, 100.0).lam[0]
        lam_loose = pressure_weights(np.array([2.0 - s_hi, 0, 0]),
                                     np.array([u_lo, 0, 0]), b, (1, 1, 1),
                                     1.0, 1e-8, 100.0).lam[0]
        assert lam_tight >= lam_loose - 1e-12
        lam_unc = pressure_weights(np.array([2.0 - s_lo, 0, 0]),
                                   np.array([u_hi, 0, 0]), b, (1, 1, 1),
                                   1.0, 1e-8, 100.0).lam[0]
        assert lam_unc >= lam_tight - 1e-12
        assert 0.0 <= lam_tight <= 100.0


class TestRolloutStats:
    def test_constant(self):
        c_hat, u_hat = rollout_cost_stats([bundle([0.3, 0.1, 0.0],
                                                  [0.5, 0.5, 0.5])] * 7)
        np.testing.assert_allclose(c_hat, [0.3, 0.1, 0.0])
        np.testing.assert_allclose(u_hat, 0.5)

    def test_mean_and_order_invariance(self):
        seq = [bundle([0.0, 0.0, 0.0]), bundle([0.2, 0.4, 0.6])]
        c_hat, _ = rollout_cost_stats(seq)
        np.testing.assert_allclose(c_hat, [0.1, 0.2, 0.3])
        c_rev, _ = rollout_cost_stats(list(reversed(seq)))
        np.testing.assert_allclose(c_hat, c_rev)

    def test_empty_rejected(self):
        with pytest.raises(StructuralError):
            rollout_cost_stats([])


class TestEsgViolation:
    def budgets(self, b):
        return Budgets(b=np.array(b, dtype=float), q=np.array([0.9] * 3))

    def test_within_budget_below_one(self):
        costs = [bundle([0.05, 0.05, 0.05])] * 5
        assert esg_violation(costs, self.budgets([0.1, 0.1, 0.1])) <= 1.0

    def test_direct_ratio(self):
        costs = [bundle([0.2, 0.0, 0.0])]
        assert esg_violation(costs, self.budgets([0.1, 1.0, 1.0])) == pytest.approx(2.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        costs = [bundle(rng.random(3)) for _ in range(20)]
        b = self.budgets([0.5, 0.7, 0.9])
        v1 = esg_violation(costs, b)
        scaled = [bundle(cb.c * 3.7) for cb in costs]
        b2 = self.budgets(np.array([0.5, 0.7, 0.9]) * 3.7)
        assert esg_violation(scaled, b2) == pytest.approx(v1, rel=1e-12)


class TestBudgetIO:
    def test_round_trip(self, tmp_path):
        b = Budgets(b=np.array([0.1, 0.2, 0.3]), q=np.array([0.9, 0.9, 0.95]),
                    source="warm-run-1")
        path = str(tmp_path / "budgets.json")
        save_budgets(b, path)
        loaded = load_budgets(path)
        np.testing.assert_array_equal(loaded.b, b.b)
        np.testing.assert_array_equal(loaded.q, b.q)
        assert loaded.source == "warm-run-1"
