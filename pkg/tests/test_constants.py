import numpy as np
import pytest

from metalin import (
    ERM,
    MAML,
    BaMAML,
    IMAML,
    TaskDistribution,
    UnsupportedRegimeError,
    asymptotic_constant,
    constant_ordering_check,
    dominating_constant_mc,
    erm_constant_exact,
    make_rng,
    stieltjes,
    stieltjes_derivative,
    weight_scale,
)
from metalin.constants import _ASYMPTOTIC_KINDS


class TestErmConstantExact:
    def test_small_case(self):
        assert erm_constant_exact(2, 4) == pytest.approx(1.75)

    def test_large_n_limit(self):
        assert erm_constant_exact(1, 10**9) == pytest.approx(1.0, abs=1e-8)

    def test_square_case(self):
        n = 7
        assert erm_constant_exact(n, n) == pytest.approx(2.0 + 1.0 / n)


class TestWeightScale:
    def test_formulas(self):
        assert weight_scale(ERM()) == 1.0
        assert weight_scale(MAML(alpha=0.3)) == pytest.approx(0.49)
        assert weight_scale(IMAML(gamma=1.0)) == pytest.approx(0.25)
        assert weight_scale(BaMAML(gamma=1.0), split_ratio=0.5) == pytest.approx(1.0 / 6.0)

    def test_matches_population_weight_at_identity(self):
        for est in (ERM(), MAML(alpha=0.4), IMAML(gamma=0.7), BaMAML(gamma=0.7)):
            w = est.population_weight(np.eye(3), split_ratio=0.4)
            assert w[0, 0] == pytest.approx(weight_scale(est, 0.4), rel=1e-12)
            assert np.abs(w - w[0, 0] * np.eye(3)).max() < 1e-12


class TestDominatingConstantMc:
    def test_erm_matches_exact_formula(self):
        rng = make_rng(0)
        estimate = dominating_constant_mc(ERM(), 2, 4, 0.5, rng, 20000)
        assert abs(estimate.value - 1.75) < 3.0 * estimate.mc_std_error

    def test_maml_zero_step_collapses_to_validation_erm(self):
        rng = make_rng(1)
        d, n, s = 3, 12, 0.5
        n2 = n - round(s * n)
        estimate = dominating_constant_mc(MAML(alpha=0.0), d, n, s, rng, 20000)
        expected = (d + n2 + 1) / n2
        assert abs(estimate.value - expected) < 3.0 * estimate.mc_std_error

    def test_bamaml_small_gamma_at_least_one(self):
        rng = make_rng(2)
        estimate = dominating_constant_mc(BaMAML(gamma=1e-3), 20, 40, 0.5, rng, 10000)
        assert estimate.value >= 1.0 - 3.0 * estimate.mc_std_error

    def test_jensen_lower_bound_across_methods(self):
        rng = make_rng(3)
        cases = [
            (ERM(), 2, 4, 0.5),
            (MAML(alpha=0.2), 4, 8, 0.5),
            (IMAML(gamma=0.5), 4, 8, 0.5),
            (BaMAML(gamma=0.5), 4, 8, 0.5),
        ]
        for est, d, n, s in cases:
            out = dominating_constant_mc(est, d, n, s, rng, 5000)
            assert out.value >= 1.0 - 3.0 * out.mc_std_error

    def test_rejects_anisotropic_regime(self):
        rng = make_rng(4)
        dist = TaskDistribution.general(rng, 2)
        with pytest.raises(UnsupportedRegimeError):
            dominating_constant_mc(ERM(), 2, 4, 0.5, rng, 1000, distribution=dist)

    def test_accepts_linear_centroid_regime(self):
        rng = make_rng(5)
        dist = TaskDistribution.linear_centroid(2)
        out = dominating_constant_mc(ERM(), 2, 4, 0.5, rng, 1000, distribution=dist)
        assert out.n_samples == 1000

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            dominating_constant_mc(ERM(), 2, 4, 0.5, make_rng(6), 50)


class TestStieltjes:
    def test_golden_ratio_point(self):
        assert stieltjes(1.0, 1.0, 1.0) == pytest.approx((np.sqrt(5.0) - 1.0) / 2.0, abs=1e-12)

    def test_large_gamma_limit(self):
        assert abs(stieltjes(1.0, 1e-6, 0.5) - 1.0) < 1e-5

    def test_small_gamma_limit_eta_two(self):
        assert abs(stieltjes(1.0, 1e8, 2.0) - 0.5) < 1e-6

    def test_bounded_by_inverse_omega1(self):
        rng = make_rng(7)
        for _ in range(100):
            w1, w2, eta = rng.uniform(0.1, 5.0, 3)
            value = stieltjes(w1, w2, eta)
            assert 0.0 < value <= 1.0 / w1 + 1e-12

    def test_matches_wishart_trace_mc(self):
        # cross-check against the normalized trace at d = N = 400
        rng = make_rng(8)
        d = 400
        eye = np.eye(d)
        acc = {(1.0, 1.0): [], (1.0, 0.1): [], (2.0, 1.0): []}
        for _ in range(20):
            x = rng.standard_normal((d, d))
            q = x.T @ x / d
            for (w1, w2), values in acc.items():
                values.append(float(np.trace(np.linalg.solve(w1 * eye + w2 * q, eye)) / d))
        for (w1, w2), values in acc.items():
            assert abs(np.mean(values) - stieltjes(w1, w2, 1.0)) < 0.01

    def test_derivative_matches_second_order_trace(self):
        rng = make_rng(9)
        d = 400
        eye = np.eye(d)
        fd = -stieltjes_derivative(1.0, 1.0, 1.0)
        values = []
        for _ in range(20):
            x = rng.standard_normal((d, d))
            inv = np.linalg.solve(eye + x.T @ x / d, eye)
            values.append(float(np.einsum("ij,ji->", inv, inv) / d))
        assert abs(fd - np.mean(values)) < 0.01

    def test_invalid_arguments_rejected(self):
        with pytest.raises(ValueError):
            stieltjes(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            stieltjes(1.0, 1.0, -1.0)


class TestAsymptoticConstant:
    def test_values(self):
        assert asymptotic_constant("erm", 0.5) == 1.5
        assert asymptotic_constant("maml", 0.25) == 1.25
        assert asymptotic_constant("imaml", 0.5) == 1.5
        assert asymptotic_constant("bamaml", 0.5) == 1.0
        assert asymptotic_constant("bamaml", 1.0) == 1.0
        assert asymptotic_constant("bamaml", 2.0) == 2.0  # upper bound above eta = 1

    def test_kinds_complete(self):
        assert set(_ASYMPTOTIC_KINDS) == {"erm", "maml", "imaml", "bamaml"}

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            asymptotic_constant("sgd", 0.5)
        with pytest.raises(ValueError):
            asymptotic_constant("erm", 0.0)


class TestOrderingCheck:
    def test_strict_ordering_at_moderate_size(self):
        report = constant_ordering_check(
            eta=0.5,
            d=20,
            n=40,
            n_samples=3000,
            rng=make_rng(10),
            alpha_grid=(0.02, 0.1),
            gamma_grid=(1e-3, 1.0),
            s_grid=(0.1, 0.5),
        )
        assert report.ordered
        assert report.verdict == "ordered"
        assert report.min_a.value > report.min_b.value
        assert report.asymptotic_a == 1.5
        assert report.asymptotic_b == 1.0
        assert not report.bound_only_b

    def test_thin_aspect_ratio_indistinguishable(self):
        # at eta -> 0 both limits are 1 and the estimates cannot separate
        report = constant_ordering_check(
            eta=2 / 2000,
            d=2,
            n=2000,
            n_samples=300,
            rng=make_rng(11),
            alpha_grid=(0.02,),
            gamma_grid=(1e-3,),
            s_grid=(0.1,),
        )
        assert abs(report.min_a.value - 1.0) < 0.05
        assert abs(report.min_b.value - 1.0) < 0.05
        assert report.verdict == "indistinguishable"

    def test_method_against_itself_not_ordered(self):
        report = constant_ordering_check(
            eta=0.5,
            d=4,
            n=8,
            n_samples=500,
            rng=make_rng(12),
            method_a=MAML,
            method_b=MAML,
            alpha_grid=(0.1,),
            s_grid=(0.5,),
        )
        assert not report.ordered

    def test_eta_mismatch_rejected(self):
        with pytest.raises(ValueError):
            constant_ordering_check(eta=0.5, d=10, n=10, n_samples=500, rng=make_rng(13))
