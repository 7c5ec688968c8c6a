import numpy as np
import pytest

from ssmrobust.autodiff import Tensor
from ssmrobust.errors import BudgetError, FilterError, PlanError, TaxonomyError
from ssmrobust.faults import (
    REGION_BITS,
    activation_flip_targets,
    apply_plan,
    flip_bit,
    generate_plan,
    inject_activation_faults,
    layerwise_bitflip_eval,
    random_bitflip_eval,
    worstcase_bitflip_search,
    xor_bits_inplace,
)
from ssmrobust.model import GROUPS, group_of_key


def _small_tree(rng):
    return {
        "patch_embed.proj.weight": Tensor(rng.normal(size=(4, 3)).astype(np.float32)),
        "stage0_layers.0.ssm.A_log": Tensor(rng.normal(size=(6,)).astype(np.float32)),
        "classifier_head.weight": Tensor(rng.normal(size=(2, 5)).astype(np.float32)),
    }


def _tree_bits(tree):
    return {k: t.data.copy().view(np.uint32) for k, t in tree.items()}


def _trees_equal(a, b):
    return list(a) == list(b) and all(
        np.array_equal(a[k].data.view(np.uint32), b[k].data.view(np.uint32)) for k in a
    )


class TestFlipBit:
    def test_sign_bit_negates(self):
        assert flip_bit(1.0, 31) == -1.0

    def test_top_exponent_bit_of_one_gives_infinity(self):
        out = flip_bit(1.0, 30)
        assert np.isinf(out) and out > 0
        assert np.array(out, "<f4").view("<u4")[()] == 0x7F800000

    def test_involution_over_random_patterns(self, rng):
        patterns = rng.integers(0, 2**32, size=200, dtype=np.uint64).astype(np.uint32)
        values = patterns.view(np.float32)
        ks = rng.integers(0, 32, size=200)
        for v, k in zip(values, ks):
            twice = flip_bit(flip_bit(v, int(k)), int(k))
            assert np.array(twice, "<f4").view("<u4") == np.array(v, "<f4").view("<u4")

    def test_bit_index_contract(self):
        with pytest.raises(ValueError):
            flip_bit(1.0, 32)
        with pytest.raises(ValueError):
            flip_bit(1.0, -1)


class TestRegions:
    def test_partition(self):
        assert set(REGION_BITS["sign"]) | set(REGION_BITS["exponent"]) | set(
            REGION_BITS["mantissa"]
        ) == set(REGION_BITS["any"])
        assert not set(REGION_BITS["sign"]) & set(REGION_BITS["exponent"])
        assert not set(REGION_BITS["exponent"]) & set(REGION_BITS["mantissa"])

    def test_boundaries(self):
        assert REGION_BITS["sign"] == (31,)
        assert REGION_BITS["exponent"] == tuple(range(23, 31))
        assert REGION_BITS["mantissa"] == tuple(range(0, 23))


class TestGeneratePlan:
    def test_zero_budget_plan_is_identity(self, rng):
        tree = _small_tree(rng)
        plan = generate_plan(tree, 0, "any", seed=1)
        assert plan.budget == 0
        assert _trees_equal(apply_plan(tree, plan), tree)

    def test_budget_exactness_and_distinct(self, rng):
        tree = _small_tree(rng)
        plan = generate_plan(tree, 4, "any", seed=2)
        assert plan.budget == 4
        assert len(set(plan.targets)) == 4

    def test_group_filter(self, rng):
        tree = _small_tree(rng)
        plan = generate_plan(tree, 5, "any", seed=3, key_filter="classifier_head")
        assert all(group_of_key(k) == "classifier_head" for k, _, _ in plan.targets)

    def test_region_containment(self, rng):
        tree = _small_tree(rng)
        for region, bits in REGION_BITS.items():
            plan = generate_plan(tree, 6, region, seed=4)
            assert all(b in bits for _, _, b in plan.targets)

    def test_deterministic(self, rng):
        tree = _small_tree(rng)
        a = generate_plan(tree, 8, "exponent", seed=99)
        b = generate_plan(tree, 8, "exponent", seed=99)
        assert a.targets == b.targets

    def test_filter_with_no_match(self, rng):
        with pytest.raises(FilterError):
            generate_plan(_small_tree(rng), 1, "any", seed=0, key_filter="nonexistent")

    def test_budget_error(self, rng):
        tree = {"classifier_head.weight": Tensor(np.zeros(2, np.float32))}
        with pytest.raises(BudgetError):
            generate_plan(tree, 3, "sign", seed=0)  # only 2 sign bits addressable

    def test_element_index_addresses_existing_element(self, rng):
        tree = _small_tree(rng)
        plan = generate_plan(tree, 10, "any", seed=7)
        for key, elem, _ in plan.targets:
            assert 0 <= elem < tree[key].size


class TestApplyPlan:
    def test_empty_plan_copy_identical(self, rng):
        tree = _small_tree(rng)
        out = apply_plan(tree, generate_plan(tree, 0, "any", seed=0))
        assert _trees_equal(out, tree)
        assert all(out[k] is not tree[k] for k in tree)

    def test_single_sign_flip_negates_one_element(self, rng):
        tree = _small_tree(rng)
        plan = generate_plan(tree, 1, "sign", seed=5)
        key, elem, bit = plan.targets[0]
        assert bit == 31
        out = apply_plan(tree, plan)
        before = tree[key].data.reshape(-1)
        after = out[key].data.reshape(-1)
        assert after[elem] == -before[elem]
        diff_count = sum(
            (out[k].data.view(np.uint32) != tree[k].data.view(np.uint32)).sum()
            for k in tree
        )
        assert diff_count == 1

    def test_double_application_restores(self, rng):
        tree = _small_tree(rng)
        plan = generate_plan(tree, 7, "any", seed=6)
        assert _trees_equal(apply_plan(apply_plan(tree, plan), plan), tree)

    def test_original_untouched(self, rng):
        tree = _small_tree(rng)
        before = _tree_bits(tree)
        apply_plan(tree, generate_plan(tree, 9, "any", seed=8))
        after = _tree_bits(tree)
        assert all(np.array_equal(before[k], after[k]) for k in tree)

    def test_stale_plan_rejected(self, rng):
        tree = _small_tree(rng)
        plan = generate_plan(tree, 2, "any", seed=1)
        broken = {k: v for k, v in tree.items() if k != plan.targets[0][0]}
        with pytest.raises(PlanError):
            apply_plan(broken, plan)


class TestRandomDriver:
    def test_zero_budget_mean_is_baseline(self, mini_run):
        split = mini_run.splits[2]
        baseline, stats = random_bitflip_eval(
            mini_run.model, mini_run.params, split, [0], trials=3, batch_size=32
        )
        assert stats[0].mean == baseline
        assert stats[0].std == 0.0

    def test_single_trial_std_zero(self, mini_run):
        _, stats = random_bitflip_eval(
            mini_run.model, mini_run.params, mini_run.splits[2], [2], trials=1,
            batch_size=32,
        )
        assert stats[0].std == 0.0

    def test_seed_schedule(self, mini_run):
        _, stats = random_bitflip_eval(
            mini_run.model, mini_run.params, mini_run.splits[2], [1, 2], trials=4,
            batch_size=32,
        )
        for s in stats:
            assert [r.seed for r in s.records] == [1235, 1236, 1237, 1238]
            assert [r.plan.seed for r in s.records] == [1235, 1236, 1237, 1238]

    def test_pristine_tree_untouched(self, mini_run):
        before = _tree_bits(mini_run.params)
        random_bitflip_eval(
            mini_run.model, mini_run.params, mini_run.splits[2], [4], trials=2,
            batch_size=32,
        )
        after = _tree_bits(mini_run.params)
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_population_std(self, mini_run):
        _, stats = random_bitflip_eval(
            mini_run.model, mini_run.params, mini_run.splits[2], [4], trials=3,
            batch_size=32,
        )
        s = stats[0]
        assert s.std == pytest.approx(float(np.std(s.accuracies)))


class TestLayerwiseDriver:
    def test_degenerate_group_matches_random_driver_bitwise(self, mini_run):
        split = mini_run.splits[2]
        base_a, random_stats = random_bitflip_eval(
            mini_run.model, mini_run.params, split, [2], trials=3, batch_size=32
        )
        base_b, layer_stats = layerwise_bitflip_eval(
            mini_run.model, mini_run.params, split, [2], trials=3, groups=[""],
            batch_size=32,
        )
        assert base_a == base_b
        assert random_stats[0].accuracies == layer_stats[0].accuracies
        assert [r.plan.targets for r in random_stats[0].records] == [
            r.plan.targets for r in layer_stats[0].records
        ]

    def test_cell_count(self, mini_run):
        _, stats = layerwise_bitflip_eval(
            mini_run.model, mini_run.params, mini_run.splits[2], [1, 2], trials=2,
            groups=("patch_embed", "classifier_head", "ssm_related"), batch_size=32,
        )
        assert len(stats) == 2 * 3

    def test_plans_stay_inside_group(self, mini_run):
        _, stats = layerwise_bitflip_eval(
            mini_run.model, mini_run.params, mini_run.splits[2], [4], trials=2,
            groups=GROUPS, batch_size=32,
        )
        for s in stats:
            for rec in s.records:
                assert all(group_of_key(k) == s.group for k, _, _ in rec.plan.targets)

    def test_patch_embed_at_least_as_damaging_as_head(self, toy_run):
        # median over 5 repetitions with distinct seed bases
        split = toy_run.splits[2]
        medians = {}
        for group in ("patch_embed", "classifier_head"):
            mus = []
            for rep in range(5):
                _, stats = layerwise_bitflip_eval(
                    toy_run.model, toy_run.params, split, [8], trials=5,
                    groups=[group], seed_base=1234 + 10_000 * rep, batch_size=100,
                )
                mus.append(stats[0].mean)
            medians[group] = float(np.median(mus))
        assert medians["patch_embed"] <= medians["classifier_head"]


class TestWorstCaseDriver:
    def test_single_iteration_seed(self, mini_run):
        _, results = worstcase_bitflip_search(
            mini_run.model, mini_run.params, mini_run.splits[2], [1], "any",
            iterations=1, fast_batches=1, batch_size=16,
        )
        assert results[0].seed == 9001

    def test_candidate_seed_schedule(self, mini_run):
        _, results = worstcase_bitflip_search(
            mini_run.model, mini_run.params, mini_run.splits[2], [1], "any",
            iterations=6, fast_batches=1, batch_size=16,
        )
        assert [s for s, _ in results[0].candidates] == list(range(9001, 9007))

    def test_full_batches_makes_fast_equal_full(self, mini_run):
        split = mini_run.splits[2]
        n_batches = (len(split.labels) + 15) // 16
        _, results = worstcase_bitflip_search(
            mini_run.model, mini_run.params, split, [2], "any",
            iterations=4, fast_batches=n_batches, batch_size=16,
        )
        assert results[0].fast_accuracy == results[0].full_accuracy

    def test_fast_batches_bounds(self, mini_run):
        with pytest.raises(ValueError):
            worstcase_bitflip_search(
                mini_run.model, mini_run.params, mini_run.splits[2], [1], "any",
                iterations=1, fast_batches=99, batch_size=16,
            )

    def test_search_result_dominates_random_trials(self, toy_run):
        # at the same budget and region, the found worst case is no better
        # than mean + std of random trials (checked with >= 100 iterations)
        split = toy_run.splits[2]
        _, random_stats = random_bitflip_eval(
            toy_run.model, toy_run.params, split, [1], trials=5,
            region="exponent", batch_size=100,
        )
        _, results = worstcase_bitflip_search(
            toy_run.model, toy_run.params, split, [1], "exponent",
            iterations=100, fast_batches=1, batch_size=100,
        )
        bound = random_stats[0].mean + random_stats[0].std
        assert results[0].full_accuracy <= bound

    def test_tie_breaks_to_earliest_seed(self, mini_run):
        # mantissa flips at budget 1 rarely change accuracy: expect many ties
        _, results = worstcase_bitflip_search(
            mini_run.model, mini_run.params, mini_run.splits[2], [1], "mantissa",
            iterations=5, fast_batches=1, batch_size=16,
        )
        best = min(a for _, a in results[0].candidates)
        first_best = next(s for s, a in results[0].candidates if a == best)
        assert results[0].seed == first_best


class TestActivationFaults:
    def test_zero_budget_identity(self, mini_run):
        split = mini_run.splits[2]
        x = Tensor(split.images.data[:4])
        clean = mini_run.model.forward(mini_run.params, x).data
        faulted = inject_activation_faults(
            mini_run.model, mini_run.params, x, "stage1", 0, "any", seed=3
        ).data
        assert np.array_equal(clean.view(np.uint32), faulted.view(np.uint32))

    def test_double_flip_restores_clean_logits(self, mini_run):
        split = mini_run.splits[2]
        x = Tensor(split.images.data[:4])
        clean = mini_run.model.forward(mini_run.params, x).data

        targets = {}

        def tap(arr):
            if "t" not in targets:
                targets["t"] = activation_flip_targets(arr.shape, 3, "any", seed=5)
            xor_bits_inplace(arr, targets["t"])
            xor_bits_inplace(arr, targets["t"])
            return arr

        out = mini_run.model.forward(
            mini_run.params, x, activation_taps={"stage0": tap}
        ).data
        assert np.array_equal(clean.view(np.uint32), out.view(np.uint32))

    def test_unknown_group(self, mini_run):
        x = Tensor(mini_run.splits[2].images.data[:1])
        with pytest.raises(TaxonomyError):
            inject_activation_faults(
                mini_run.model, mini_run.params, x, "decoder", 1, "any", seed=0
            )

    def test_deterministic(self, mini_run):
        x = Tensor(mini_run.splits[2].images.data[:2])
        a = inject_activation_faults(
            mini_run.model, mini_run.params, x, "stage2", 4, "any", seed=11
        ).data
        b = inject_activation_faults(
            mini_run.model, mini_run.params, x, "stage2", 4, "any", seed=11
        ).data
        assert np.array_equal(a.view(np.uint32), b.view(np.uint32))

    def test_sign_flip_on_classifier_input_closed_form(self, mini_run):
        model, params = mini_run.model, mini_run.params
        x = Tensor(mini_run.splits[2].images.data[:1])
        captured = {}

        def capture(arr):
            captured["pool"] = arr.copy()
            return arr

        clean = model.forward(params, x, activation_taps={"pool": capture}).data

        feature = 2

        def sign_flip(arr):
            flat = arr.reshape(-1).view(np.uint32)
            flat[feature] ^= np.uint32(1) << np.uint32(31)
            return arr

        faulted = model.forward(params, x, activation_taps={"pool": sign_flip}).data
        a = float(captured["pool"].reshape(-1)[feature])
        w = params["classifier_head.weight"].data[:, feature].astype(np.float64)
        expected_delta = np.abs(2.0 * w * abs(a))
        observed_delta = np.abs(faulted.astype(np.float64) - clean.astype(np.float64))[0]
        np.testing.assert_allclose(observed_delta, expected_delta, rtol=1e-4, atol=1e-6)
