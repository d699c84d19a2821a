import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from obser.eds import LabeledSet
from obser.estimators import (
    InfiniteDivergenceError,
    check_kl_bound,
    check_occurrence_bound,
    estimate_kl,
    estimate_occurrence,
    estimate_occurrence_direct,
    exact_kl,
    jensen_shannon,
    knn_classifier,
    mean_classifier,
    retrieve_object,
)
from obser.kernel import KernelConfig, ObservationSet
from obser.synthenv import make_scenario, orthogonal_prototypes, sample_vmf

from conftest import point_mass_classes, random_unit_rows, unit


class TestRetrieveObject:
    def test_query_itself_ranked_first(self):
        rng = np.random.default_rng(0)
        vectors = random_unit_rows(rng, 10, 5)
        obs = ObservationSet(vectors)
        ranked = retrieve_object(vectors[3], obs, KernelConfig(0.3), top_k=1)
        assert ranked[0][0] == obs.ids[3]
        assert_allclose(ranked[0][1], 1.0, atol=1e-12)

    @pytest.mark.parametrize("tau", [0.05, 0.2, 1.0, 5.0])
    def test_higher_cosine_wins_at_every_temperature(self, tau):
        q = unit([1.0, 0.0, 0.0])
        near = unit([0.9, math.sqrt(1 - 0.81), 0.0])
        far = unit([0.1, math.sqrt(1 - 0.01), 0.0])
        obs = ObservationSet([far, near], ids=["far", "near"])
        ranked = retrieve_object(q, obs, KernelConfig(tau), top_k=2)
        assert [r[0] for r in ranked] == ["near", "far"]

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(42)
        vectors = random_unit_rows(rng, 50, 6)
        obs = ObservationSet(vectors)
        q = random_unit_rows(rng, 1, 6)[0]
        cfg = KernelConfig(0.25)
        ranked = retrieve_object(q, obs, cfg, top_k=5)
        beliefs = np.exp((vectors @ q - 1.0) / 0.25)
        oracle = sorted(zip(obs.ids, beliefs), key=lambda t: (-t[1], t[0]))[:5]
        assert [r[0] for r in ranked] == [o[0] for o in oracle]

    def test_ranking_invariant_to_temperature(self):
        rng = np.random.default_rng(1)
        obs = ObservationSet(random_unit_rows(rng, 30, 4))
        q = random_unit_rows(rng, 1, 4)[0]
        orders = [
            [r[0] for r in retrieve_object(q, obs, KernelConfig(t), top_k=30)]
            for t in (0.05, 0.5, 5.0)
        ]
        assert orders[0] == orders[1] == orders[2]

    def test_top_k_validation(self):
        obs = ObservationSet([[1, 0]])
        with pytest.raises(ValueError):
            retrieve_object([1, 0], obs, KernelConfig(0.5), top_k=2)


class TestOccurrenceAdaptive:
    def test_env_equal_to_query(self):
        x = unit([1.0, 0.0])
        est = estimate_occurrence([x], ObservationSet([x, x, x]), KernelConfig(0.3))
        assert est.value == 1.0
        assert est.mode == "adaptive"
        assert_allclose(est.tolerance, 0.25)

    def test_antipodal_env(self):
        x = unit([1.0, 0.0])
        est = estimate_occurrence([x], ObservationSet([-x, -x]), KernelConfig(0.05))
        assert est.value == 0.0

    def test_recovers_sampling_fraction(self):
        # mirrors the occurrence-recovery experiment at desk scale
        rng = np.random.default_rng(3)
        protos = orthogonal_prototypes(rng, 16, 10)
        weights = np.array([0.28, 0.18, 0.12, 0.1, 0.08, 0.07, 0.06, 0.05, 0.04, 0.02])
        counts = (weights * 1000).astype(int)
        rows = np.vstack(
            [sample_vmf(rng, protos[c], 100.0, counts[c]) for c in range(10)]
        )
        env = ObservationSet(rows)
        cfg = KernelConfig(0.2)
        for c in range(10):
            queries = sample_vmf(rng, protos[c], 100.0, 5)
            est = estimate_occurrence(queries, env, cfg)
            assert abs(est.value - counts[c] / 1000.0) <= 0.05

    def test_invariant_to_sample_duplication(self):
        rng = np.random.default_rng(4)
        env_rows = random_unit_rows(rng, 40, 6)
        queries = random_unit_rows(rng, 3, 6)
        cfg = KernelConfig(0.3)
        once = estimate_occurrence(queries, ObservationSet(env_rows), cfg)
        thrice = estimate_occurrence(
            queries, ObservationSet(np.tile(env_rows, (3, 1)), ids=range(120)), cfg
        )
        assert_allclose(once.value, thrice.value, atol=1e-12)


class TestOccurrenceDirect:
    def test_env_equal_to_query(self):
        x = unit([0.0, 1.0])
        est = estimate_occurrence_direct([x], ObservationSet([x]), KernelConfig(0.3))
        assert est.value == 1.0
        assert est.tolerance is None and est.mode == "direct"

    def test_two_class_overestimate_at_high_temperature(self):
        x = unit([1.0, 0.0])
        env = ObservationSet([x] * 50 + [-x] * 50, ids=range(100))
        est = estimate_occurrence_direct([x], env, KernelConfig(0.5))
        expected = (1.0 + math.exp(-4.0)) / 2.0
        assert_allclose(est.value, expected, rtol=1e-12)
        assert est.value > 0.5  # leaks cross-class mass

    def test_two_class_sharp_temperature(self):
        x = unit([1.0, 0.0])
        env = ObservationSet([x] * 50 + [-x] * 50, ids=range(100))
        est = estimate_occurrence_direct([x], env, KernelConfig(0.1))
        assert_allclose(est.value, (1.0 + math.exp(-20.0)) / 2.0, rtol=1e-12)


class TestEstimateKL:
    def test_identical_sample_lists_give_exact_zero(self):
        rng = np.random.default_rng(5)
        rows = random_unit_rows(rng, 25, 6)
        est = estimate_kl(rows, rows.copy(), KernelConfig(0.2))
        assert est.value == 0.0
        assert np.all(est.per_sample_log_ratios == 0.0)

    def test_point_mass_scenario_recovers_exact_value(self):
        rng = np.random.default_rng(6)
        protos = orthogonal_prototypes(rng, 16, 10)
        mu_counts = [40] * 5 + [160] * 5
        nu_counts = [160] * 5 + [40] * 5
        mu = np.vstack([np.tile(protos[c], (mu_counts[c], 1)) for c in range(10)])
        nu = np.vstack([np.tile(protos[c], (nu_counts[c], 1)) for c in range(10)])
        est = estimate_kl(mu, nu, KernelConfig(0.1))
        assert abs(est.value - 0.8318) <= 0.05

    def test_oversmoothing_collapses_estimate(self):
        mu, nu, exact = make_scenario("C-Scenario2", dim=16, kappa=200.0, seed=5)
        est = estimate_kl(mu.vectors, nu.vectors, KernelConfig(10.0))
        assert est.value < 0.1

    def test_value_is_mean_of_ratios(self, vmf_fixture):
        data, _ = vmf_fixture
        rng = np.random.default_rng(7)
        other = random_unit_rows(rng, 200, data.dim)
        est = estimate_kl(data.vectors, other, KernelConfig(0.15))
        assert_allclose(est.value, float(np.mean(est.per_sample_log_ratios)), atol=1e-12)
        assert math.isfinite(est.value)
        assert est.n_mu == len(data) and est.n_nu == 200

    def test_monotone_decrease_in_oversmoothing_regime(self):
        mu, nu, _ = make_scenario("C-Scenario2", dim=16, kappa=200.0, seed=9)
        values = [
            estimate_kl(mu.vectors, nu.vectors, KernelConfig(t)).value
            for t in (1.0, 2.0, 5.0, 10.0)
        ]
        assert all(hi > lo for hi, lo in zip(values, values[1:]))

    def test_leave_one_out_variant(self):
        rng = np.random.default_rng(8)
        rows = random_unit_rows(rng, 30, 5)
        loo = estimate_kl(rows, rows.copy(), KernelConfig(0.2), leave_one_out=True)
        assert loo.value < 0.0  # own density shrinks without the self term
        with pytest.raises(ValueError):
            estimate_kl(rows[:1], rows, KernelConfig(0.2), leave_one_out=True)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            estimate_kl(np.empty((0, 3)), random_unit_rows(np.random.default_rng(0), 3, 3), KernelConfig(0.2))


class TestExactKL:
    def test_table_values(self):
        assert_allclose(exact_kl([0.5, 0.5], [0.1, 0.9]), 0.5108, atol=5e-4)
        assert_allclose(exact_kl([0.2, 0.8], [0.8, 0.2]), 0.8318, atol=5e-4)
        mu = [0.4 / 5] * 5 + [0.6 / 5] * 5
        nu = [0.6 / 5] * 5 + [0.4 / 5] * 5
        assert_allclose(exact_kl(mu, nu), 0.0811, atol=5e-4)

    def test_identical_vectors(self):
        assert exact_kl([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_infinite_divergence(self):
        with pytest.raises(InfiniteDivergenceError):
            exact_kl([0.5, 0.5], [1.0, 0.0])

    def test_sum_validation(self):
        with pytest.raises(ValueError, match="sums"):
            exact_kl([0.5, 0.4], [0.5, 0.5])

    @pytest.mark.parametrize("seed", range(20))
    def test_nonnegativity_property(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.dirichlet(np.ones(6))
        b = rng.dirichlet(np.ones(6))
        assert exact_kl(a, b) >= 0.0
        assert exact_kl(a, a) <= 1e-12


class TestKLBoundCheck:
    def test_identical_sets(self):
        x, y = unit([1.0, 0.0]), unit([0.0, 1.0])
        mu = LabeledSet([x, x, y, y], ["a", "a", "b", "b"])
        nu = LabeledSet([x, x, y, y], ["a", "a", "b", "b"])
        check = check_kl_bound(mu, nu, KernelConfig(0.3))
        assert check.estimate == 0.0
        assert_allclose(check.center, 0.0, atol=1e-12)
        assert check.holds

    def test_point_mass_classes_zero_slack(self):
        rng = np.random.default_rng(10)
        protos = orthogonal_prototypes(rng, 4, 3)
        mu = point_mass_classes(protos, [2, 4, 6])
        nu = point_mass_classes(protos, [6, 4, 2])
        check = check_kl_bound(mu, nu, KernelConfig(0.2))
        assert_allclose(check.slack, 0.0, atol=1e-12)
        assert check.holds
        assert abs(check.estimate - check.center) <= check.slack + 1e-6

    def test_seeded_scenario_holds(self):
        mu, nu, _ = make_scenario("C-Scenario2", dim=16, kappa=200.0, seed=21)
        check = check_kl_bound(mu, nu, KernelConfig(0.15))
        assert check.holds

    def test_class_universe_mismatch(self):
        x, y = unit([1.0, 0.0]), unit([0.0, 1.0])
        mu = LabeledSet([x, x], ["a", "a"])
        nu = LabeledSet([y, y], ["b", "b"])
        with pytest.raises(ValueError, match="universe"):
            check_kl_bound(mu, nu, KernelConfig(0.3))


class TestOccurrenceBoundCheck:
    def test_single_class_env(self):
        rng = np.random.default_rng(11)
        rows = sample_vmf(rng, unit([1.0, 0.0, 0.0]), 50.0, 40)
        env = LabeledSet(rows, ["only"] * 40)
        check = check_occurrence_bound("only", env, KernelConfig(0.3))
        assert check.holds
        assert np.all(check.ratios <= 1.0 + 1e-6)
        assert np.all(check.ratios >= check.delta_worst - 1e-6)

    def test_point_mass_ratio_exactly_one(self):
        rng = np.random.default_rng(12)
        protos = orthogonal_prototypes(rng, 4, 4)[:3]  # pairwise cosine 0
        env = point_mass_classes(protos, [4, 4, 4])
        check = check_occurrence_bound("c0", env, KernelConfig(0.2))
        assert_allclose(check.ratios, 1.0, atol=1e-12)
        assert check.holds

    def test_seeded_vmf_holds(self, vmf_fixture):
        data, _ = vmf_fixture
        check = check_occurrence_bound(data.classes[0], data, KernelConfig(0.15))
        assert check.holds

    def test_absent_class(self, vmf_fixture):
        data, _ = vmf_fixture
        with pytest.raises(KeyError):
            check_occurrence_bound("nope", data, KernelConfig(0.15))


class TestJensenShannon:
    def test_identical_sets_near_zero(self):
        rng = np.random.default_rng(13)
        rows = random_unit_rows(rng, 30, 5)
        assert abs(jensen_shannon(rows, rows.copy(), KernelConfig(0.2))) <= 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_exact_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = random_unit_rows(rng, 20, 4)
        b = random_unit_rows(rng, 30, 4)
        cfg = KernelConfig(0.3)
        assert jensen_shannon(a, b, cfg) == jensen_shannon(b, a, cfg)

    def test_disjoint_point_masses(self):
        x = unit([1.0, 0.0])
        a = np.tile(x, (40, 1))
        b = np.tile(-x, (40, 1))
        got = jensen_shannon(a, b, KernelConfig(0.1))
        assert abs(got - math.log(2.0)) <= 0.01


class TestClassifiers:
    def test_mean_classifier_recovers_class_mean(self, small_vmf_fixture):
        data, truth = small_vmf_fixture
        preds = mean_classifier(data, truth.prototypes)
        assert preds == list(data.classes)

    def test_knn_k1_matches_top1_retrieval(self, small_vmf_fixture):
        data, _ = small_vmf_fixture
        cfg = KernelConfig(0.2)
        rng = np.random.default_rng(14)
        queries = random_unit_rows(rng, 5, data.dim)
        preds = knn_classifier(data, queries, 1, cfg)
        obs = data.to_observation_set()
        for q, pred in zip(queries, preds):
            top_id = retrieve_object(q, obs, cfg, top_k=1)[0][0]
            assert pred == data.labels[data.ids.index(top_id)]

    def test_knn_matches_brute_force(self, small_vmf_fixture):
        data, _ = small_vmf_fixture
        cfg = KernelConfig(0.2)
        rng = np.random.default_rng(15)
        queries = random_unit_rows(rng, 8, data.dim)
        preds = knn_classifier(data, queries, 5, cfg)
        for q, pred in zip(queries, preds):
            cos = data.vectors @ q
            order = np.lexsort((np.arange(len(data)), -cos))[:5]
            votes = {}
            for i in order:
                votes[data.labels[i]] = votes.get(data.labels[i], 0) + 1
            best_count = max(votes.values())
            tied = [c for c, v in votes.items() if v == best_count]
            if len(tied) == 1:
                assert pred == tied[0]
            else:
                assert pred in tied

    def test_k_validation(self, small_vmf_fixture):
        data, _ = small_vmf_fixture
        with pytest.raises(ValueError):
            knn_classifier(data, [unit([1.0] + [0.0] * (data.dim - 1))], 0, KernelConfig(0.2))
