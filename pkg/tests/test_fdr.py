import numpy as np
import pytest

from hmrf_fdr.emission import MixtureParams, two_sided_p_from_z
from hmrf_fdr.fdr import (
    DecisionConfig,
    Metrics,
    aggregate,
    bh,
    lis_stepup,
    local_fdr,
    metrics,
    plis,
    slis,
)


class TestLisStepup:
    def test_hand_example(self):
        res = lis_stepup([0.02, 0.06, 0.15, 0.4], 0.1)
        assert res.k == 3
        assert res.rejected.tolist() == [True, True, True, False]
        assert res.threshold == 0.15

    def test_all_ones_reject_nothing(self):
        res = lis_stepup(np.ones(10), 0.5)
        assert res.k == 0
        assert not res.rejected.any()
        assert np.isnan(res.threshold)

    def test_single_hypothesis(self):
        res = lis_stepup([0.05], 0.1)
        assert res.k == 1
        assert res.rejected.tolist() == [True]

    def test_running_mean_postcondition(self):
        rng = np.random.default_rng(61)
        for _ in range(200):
            vals = rng.random(rng.integers(1, 60))
            alpha = rng.uniform(0.01, 0.5)
            res = lis_stepup(vals, alpha)
            s = np.sort(vals)
            if res.k > 0:
                assert s[: res.k].mean() <= alpha
            if 0 < res.k < vals.size:
                assert s[: res.k + 1].mean() > alpha

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(63)
        for _ in range(10_000):
            vals = rng.random(12)
            a1, a2 = sorted(rng.uniform(0.01, 0.6, 2))
            r1 = lis_stepup(vals, a1)
            r2 = lis_stepup(vals, a2)
            assert r1.k <= r2.k
            assert not (r1.rejected & ~r2.rejected).any()

    def test_tie_break_is_stable_by_position(self):
        # two equal values at the cut: the earlier index wins when only one fits
        res = lis_stepup([0.0, 0.2, 0.2], 0.13)
        assert res.k == 2
        assert res.rejected.tolist() == [True, True, False]
        # and both go together when the running mean allows it
        res = lis_stepup([0.0, 0.2, 0.2], 0.14)
        assert res.k == 3

    def test_permutation_equivariance_distinct_values(self):
        rng = np.random.default_rng(65)
        vals = rng.permutation(np.linspace(0.01, 0.9, 25))
        res = lis_stepup(vals, 0.2)
        perm = rng.permutation(25)
        res_p = lis_stepup(vals[perm], 0.2)
        np.testing.assert_array_equal(res_p.rejected, res.rejected[perm])

    def test_validation(self):
        with pytest.raises(ValueError, match="alpha"):
            lis_stepup([0.1], 0.0)
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            lis_stepup([1.2], 0.1)


class TestBH:
    def test_hand_example(self):
        res = bh([0.001, 0.02, 0.04, 0.9], 0.1)
        assert res.k == 3
        assert res.rejected.tolist() == [True, True, True, False]

    def test_all_ones(self):
        assert bh(np.ones(8), 0.2).k == 0

    def test_stepup_jump(self):
        # third threshold rescues the second p-value
        res = bh([0.01, 0.06, 0.07, 0.9], 0.1)
        assert res.k == 3

    def test_full_null_fdr_controlled(self):
        rng = np.random.default_rng(67)
        n_rep, n_hyp, alpha = 3000, 50, 0.1
        fdp = np.empty(n_rep)
        for r in range(n_rep):
            res = bh(rng.random(n_hyp), alpha)
            fdp[r] = 1.0 if res.k > 0 else 0.0
        se = fdp.std(ddof=1) / np.sqrt(n_rep)
        assert fdp.mean() <= alpha + 3 * se

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(69)
        for _ in range(10_000):
            p = rng.random(10)
            a1, a2 = sorted(rng.uniform(0.01, 0.6, 2))
            r1, r2 = bh(p, a1), bh(p, a2)
            assert r1.k <= r2.k
            assert not (r1.rejected & ~r2.rejected).any()


class TestGroupProcedures:
    def test_single_group_pooling_noop(self):
        rng = np.random.default_rng(71)
        vals = rng.random(30)
        base = lis_stepup(vals, 0.15)
        for proc in (plis, slis):
            res = proc([vals], 0.15)
            np.testing.assert_array_equal(res.rejected, base.rejected)
            assert res.k == base.k

    def test_disjoint_ranges_exhaust_low_group_first(self):
        low = np.linspace(0.01, 0.05, 10)
        high = np.linspace(0.5, 0.9, 10)
        res = plis([low, high], 0.04)
        rej_low, rej_high = res.by_group()
        # nothing in the high group can be rejected before all of the low group
        if rej_high.any():
            assert rej_low.all()
        assert rej_low.sum() >= rej_high.sum()
        # at a level below the high range the rejections stay in the low group
        assert not rej_high.any()
        assert rej_low.sum() == res.k

    def test_slis_union_and_empty_group(self):
        good = np.array([0.01, 0.02, 0.9])
        hopeless = np.ones(5)
        res = slis([good, hopeless], 0.1)
        rej_a, rej_b = res.by_group()
        assert rej_a.tolist() == [True, True, False]
        assert not rej_b.any()
        assert res.k == 2

    def test_duplicated_groups_pooled_contains_separate(self):
        # on two identical groups the pooled rejections contain the separate
        # ones and add at most one extra (odd pooled prefix)
        rng = np.random.default_rng(73)
        for _ in range(2000)            :
            vals = np.sort(rng.random(8))
            alpha = rng.uniform(0.02, 0.5)
            rs = slis([vals, vals], alpha)
            rp = plis([vals, vals], alpha)
            assert rp.k - rs.k in (0, 1)
            assert not (rs.rejected & ~rp.rejected).any()

    def test_duplicated_groups_equality_instance(self):
        vals = np.array([0.0, 0.2])
        rs = slis([vals, vals], 0.1)
        rp = plis([vals, vals], 0.1)
        np.testing.assert_array_equal(rs.rejected, rp.rejected)

    def test_group_threshold_dominance(self):
        rng = np.random.default_rng(75)
        groups = [rng.random(40), rng.random(25)]
        res = plis(groups, 0.2)
        pooled = np.concatenate(groups)
        if res.k:
            assert (pooled[res.rejected] <= res.threshold).all()
            assert (pooled[~res.rejected] >= res.threshold).all()


class TestLocalFdr:
    MIX = MixtureParams([1.0], [2.5], [1.0])

    def test_all_null_rejects_nothing(self):
        x = np.array([0.3, 2.0, 4.0])
        lfdr, res = local_fdr(x, 1.0, self.MIX, 0.2)
        np.testing.assert_allclose(lfdr, 1.0)
        assert res.k == 0

    def test_no_null_rejects_everything(self):
        x = np.array([0.3, 2.0, 4.0])
        lfdr, res = local_fdr(x, 0.0, self.MIX, 0.05)
        np.testing.assert_allclose(lfdr, 0.0)
        assert res.k == 3

    def test_bayes_formula(self):
        pi0 = 0.7
        x = np.linspace(-2, 5, 9)
        lfdr, _ = local_fdr(x, pi0, self.MIX, 0.1)
        f0 = np.exp(-0.5 * x**2) / np.sqrt(2 * np.pi)
        f1 = np.exp(-0.5 * (x - 2.5) ** 2) / np.sqrt(2 * np.pi)
        expect = pi0 * f0 / (pi0 * f0 + (1 - pi0) * f1)
        np.testing.assert_allclose(lfdr, expect, atol=1e-12)


class TestMetrics:
    def test_one_false_among_four(self):
        rejected = np.array([True, True, True, True, False])
        truth = np.array([1, 1, 1, 0, 0])
        m = metrics(rejected, truth)
        assert m.fdp == 0.25
        assert m.tp == 3

    def test_nothing_rejected(self):
        m = metrics(np.zeros(4, bool), np.array([1, 0, 1, 0]))
        assert m.fdp == 0.0
        assert m.tp == 0
        assert m.fnp == 0.5

    def test_perfect_decision(self):
        truth = np.array([1, 0, 1, 1, 0])
        m = metrics(truth.astype(bool), truth)
        assert m.fdp == 0.0 and m.fnp == 0.0 and m.tp == 3

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            metrics(np.zeros(3, bool), np.zeros(4))

    def test_aggregate_means_and_ses(self):
        ms = [Metrics(0.1, 0.2, 5, 6, 10), Metrics(0.3, 0.4, 7, 8, 10)]
        agg = aggregate(ms)
        assert agg["fdr"][0] == pytest.approx(0.2)
        assert agg["atp"][0] == pytest.approx(6.0)
        assert agg["n_used"] == 2

    def test_decision_config_validation(self):
        DecisionConfig(0.1, "PLIS")
        with pytest.raises(ValueError):
            DecisionConfig(1.5)
        with pytest.raises(ValueError):
            DecisionConfig(0.1, "SPECIAL")
