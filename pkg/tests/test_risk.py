import dataclasses

import numpy as np
import pytest

from metalin import (
    ERM,
    MAML,
    BaMAML,
    IMAML,
    TaskDistribution,
    TaskSpec,
    adapted_test_loss,
    decompose,
    make_rng,
    optimal_theta0,
    population_risk,
    sample_datasets,
    sample_task,
    sample_tasks,
    statistical_error,
)

ALL_METHODS = [ERM(), MAML(alpha=0.3), IMAML(gamma=0.2), BaMAML(gamma=0.2)]


class TestPopulationRisk:
    def test_noise_floor_at_ground_truth(self):
        task = TaskSpec(theta_gt=np.array([1.0, 2.0]), Q=np.eye(2))
        for est in ALL_METHODS:
            assert population_risk(est, task.theta_gt, [task], 0.5) == pytest.approx(1.0)

    def test_erm_two_tasks_scalar(self):
        tasks = [
            TaskSpec(theta_gt=np.array([0.0]), Q=np.eye(1)),
            TaskSpec(theta_gt=np.array([2.0]), Q=np.eye(1)),
        ]
        # mean squared deviation 1 plus noise floor 1
        assert population_risk(ERM(), np.array([1.0]), tasks, 0.5) == pytest.approx(2.0)

    def test_matches_monte_carlo_adapted_loss(self):
        # simulate adapt-then-test directly and compare with the closed form
        rng = make_rng(0)
        dist = TaskDistribution.general(rng, 1)
        pool = sample_tasks(rng, dist, 10000)
        est = MAML(alpha=0.7)
        theta_star = optimal_theta0(est, pool, 0.5)
        closed = population_risk(est, theta_star, pool, 0.5)
        losses = [
            adapted_test_loss(est, theta_star, pool[i], rng, n_adapt=10000, n_test=200)
            for i in range(3000)
        ]
        mc = float(np.mean(losses))
        assert abs(mc - closed) / closed < 0.02


class TestStatisticalError:
    def test_zero_displacement(self):
        task = TaskSpec(theta_gt=np.zeros(2), Q=np.eye(2))
        theta = np.array([0.3, -0.4])
        for est in ALL_METHODS:
            assert statistical_error(est, theta, theta, [task], 0.5) == 0.0

    def test_scalar_quadratic(self):
        tasks = [TaskSpec(theta_gt=np.zeros(1), Q=np.eye(1))]
        err = statistical_error(ERM(), np.array([0.5]), np.array([0.0]), tasks, 0.5)
        assert err == pytest.approx(0.25)

    def test_equals_risk_difference(self):
        # the decomposition identity, checked from the other side
        rng = make_rng(1)
        dist = TaskDistribution.general(rng, 1)
        pool = sample_tasks(rng, dist, 500)
        tasks = sample_tasks(rng, dist, 100)
        datasets = sample_datasets(rng, tasks, 10, 0.5)
        est = MAML(alpha=0.4)
        est.fit(datasets)
        theta_star = optimal_theta0(est, pool, 0.5)
        lhs = statistical_error(est, est.theta0_, theta_star, pool, 0.5)
        rhs = population_risk(est, est.theta0_, pool, 0.5) - population_risk(
            est, theta_star, pool, 0.5
        )
        assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(rhs))


class TestDecompose:
    def test_identity_holds_for_each_method(self):
        rng = make_rng(2)
        dist = TaskDistribution.general(rng, 3)
        pool = sample_tasks(rng, dist, 300)
        tasks = sample_tasks(rng, dist, 10)
        datasets = sample_datasets(rng, tasks, 12, 0.5)
        for est in ALL_METHODS:
            report = decompose(est, datasets, pool, 0.5)
            residual = abs(
                report.total_risk - report.optimal_population_risk - report.statistical_error
            )
            assert residual / report.total_risk < 1e-8
            assert report.optimal_population_risk >= 1.0
            assert report.statistical_error >= 0.0
            assert report.method["method"] == est.method

    def test_noiseless_identical_tasks_give_zero_error(self):
        rng = make_rng(3)
        dist = TaskDistribution.general(rng, 2)
        task = dataclasses.replace(sample_task(rng, dist), noise_sigma=0.0)
        datasets = sample_datasets(rng, [task] * 6, 10, 0.5)
        for est in ALL_METHODS:
            report = decompose(est, datasets, [task], 0.5)
            assert report.statistical_error < 1e-12
            assert report.total_risk == pytest.approx(report.optimal_population_risk)

    def test_erm_large_sample_error_decays(self):
        # median over 20 seeds at T = N = 1000 sits well inside the decay regime
        rng0 = make_rng(4)
        dist = TaskDistribution.general(rng0, 1)
        pool = sample_tasks(rng0, dist, 5000)
        errors = []
        for rep in range(20):
            rng = make_rng(4, rep)
            tasks = sample_tasks(rng, dist, 1000)
            datasets = sample_datasets(rng, tasks, 1000, 0.5)
            report = decompose(ERM(), datasets, pool, 0.5)
            errors.append(report.statistical_error)
        assert np.median(errors) < 1e-2

    def test_split_ratio_defaults_to_datasets(self):
        rng = make_rng(5)
        dist = TaskDistribution.general(rng, 1)
        tasks = sample_tasks(rng, dist, 20)
        datasets = sample_datasets(rng, tasks, 10, 0.3)
        report = decompose(BaMAML(gamma=0.1), datasets, tasks)
        explicit = decompose(BaMAML(gamma=0.1), datasets, tasks, 0.3)
        assert report.total_risk == pytest.approx(explicit.total_risk)


class TestWinProbabilityOrdering:
    def test_bamaml_beats_maml_at_scale(self):
        # one cell of the win-probability comparison, at reduced size
        rng0 = make_rng(6)
        dist = TaskDistribution.general(rng0, 1)
        pool = sample_tasks(rng0, dist, 5000)
        wins = 0
        trials = 30
        for rep in range(trials):
            rng = make_rng(6, rep)
            tasks = sample_tasks(rng, dist, 2000)
            datasets = sample_datasets(rng, tasks, 200, 0.5)
            ba = BaMAML(gamma=0.1).fit(datasets)
            ma = MAML(alpha=0.7).fit(datasets)
            risk_ba = population_risk(ba, ba.theta0_, pool, 0.5)
            risk_ma = population_risk(ma, ma.theta0_, pool, 0.5)
            wins += 1 if risk_ba < risk_ma else 0
        assert wins / trials > 0.5


class TestSmallSampleOrdering:
    def test_maml_error_largest_at_small_n(self):
        # at N = 10, T = 100 the one-step learner carries the largest
        # statistical error; the Bayesian one the smallest of the two
        rng0 = make_rng(13)
        dist = TaskDistribution.general(rng0, 1)
        pool = sample_tasks(rng0, dist, 2000)
        errs = {"maml": [], "bamaml": []}
        for rep in range(20):
            rng = make_rng(13, rep)
            tasks = [pool[i] for i in rng.integers(len(pool), size=100)]
            datasets = sample_datasets(rng, tasks, 10, 0.5)
            for name, est in (("maml", MAML(alpha=0.7)), ("bamaml", BaMAML(gamma=0.1))):
                est.fit(datasets)
                star = optimal_theta0(est, pool, 0.5)
                errs[name].append(statistical_error(est, est.theta0_, star, pool, 0.5))
        assert np.median(errs["maml"]) >= np.median(errs["bamaml"])


class TestAdaptedTestLoss:
    def test_noiseless_ground_truth_is_zero(self):
        rng = make_rng(7)
        task = TaskSpec(theta_gt=np.array([1.0]), Q=np.eye(1), noise_sigma=0.0)
        loss = adapted_test_loss(ERM(), task.theta_gt, task, rng, n_adapt=10, n_test=100)
        assert loss < 1e-24

    def test_noise_floor(self):
        rng = make_rng(8)
        task = TaskSpec(theta_gt=np.array([1.0]), Q=np.eye(1))
        loss = adapted_test_loss(ERM(), task.theta_gt, task, rng, n_adapt=10, n_test=100000)
        assert abs(loss - 1.0) < 0.02

    def test_maml_finite_adaptation_correction(self):
        # at d=1, Q=1 the mean test loss is (1-a)^2 (t0-t)^2 + 1 + a^2/Na
        # plus the adaptation-variance term 2 a^2 (t0-t)^2 / Na; checked by MC
        rng = make_rng(9)
        alpha, n_adapt, trials = 0.5, 10000, 1000
        task = TaskSpec(theta_gt=np.array([2.0]), Q=np.eye(1))
        theta0 = np.array([1.0])
        est = MAML(alpha=alpha)
        losses = np.array(
            [
                adapted_test_loss(est, theta0, task, rng, n_adapt=n_adapt, n_test=500)
                for _ in range(trials)
            ]
        )
        gap = (theta0[0] - task.theta_gt[0]) ** 2
        expected = (1 - alpha) ** 2 * gap + 1.0 + alpha**2 / n_adapt + 2 * alpha**2 * gap / n_adapt
        se = losses.std(ddof=1) / np.sqrt(trials)
        assert abs(losses.mean() - expected) < 3.0 * se

    def test_nll_mode_matches_gaussian_entropy_when_well_specified(self):
        # with a huge support set the predictive collapses to N(x theta_gt, 1)
        rng = make_rng(10)
        task = TaskSpec(theta_gt=np.array([1.0, -1.0]), Q=np.eye(2))
        est = BaMAML(gamma=0.1)
        nll = adapted_test_loss(
            est, task.theta_gt, task, rng, n_adapt=50000, n_test=50000, loss="nll"
        )
        entropy = 0.5 * np.log(2 * np.pi * np.e)
        assert abs(nll - entropy) < 0.02

    def test_nll_requires_bayesian_learner(self):
        rng = make_rng(11)
        task = TaskSpec(theta_gt=np.array([1.0]), Q=np.eye(1))
        with pytest.raises(ValueError):
            adapted_test_loss(ERM(), task.theta_gt, task, rng, 10, 10, loss="nll")

    def test_unknown_loss_rejected(self):
        rng = make_rng(12)
        task = TaskSpec(theta_gt=np.array([1.0]), Q=np.eye(1))
        with pytest.raises(ValueError):
            adapted_test_loss(ERM(), task.theta_gt, task, rng, 10, 10, loss="hinge")
