import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grover_partition import instances as inst_mod
from grover_partition.instances import (CapabilityError, EnsembleSpec, ProblemInstance, RealInstance,
                                        ckk_exists, count_solutions, gen_instance, gen_real_instance,
                                        generate_ensemble, imbalance_values)

from conftest import brute_force_imbalances

weights_strategy = st.lists(st.integers(1, 64), min_size=1, max_size=10)


def test_single_weight_never_balances():
    inst = gen_instance(1, 4, 123)
    assert len(inst.raw_weights) == 1
    assert count_solutions(inst).num_solutions == 0


def test_generation_is_deterministic():
    a = gen_instance(3, 8, 42)
    b = gen_instance(3, 8, 42)
    assert a.raw_weights == b.raw_weights


@pytest.mark.parametrize("n,k", [(0, 4), (3, 0), (-1, 2)])
def test_invalid_parameters(n, k):
    with pytest.raises(ValueError):
        gen_instance(n, k, 0)


def test_weights_stay_in_range():
    for seed in range(200):
        inst = gen_instance(6, 3, seed)
        assert all(1 <= a <= 8 for a in inst.raw_weights)
    with pytest.raises(ValueError):
        ProblemInstance(2, 3, (0, 5))
    with pytest.raises(ValueError):
        ProblemInstance(2, 3, (9, 5))


def test_solution_fraction_matches_enumeration():
    # ensemble generator vs a plain enumeration over the same instances
    spec = EnsembleSpec(8, 8, 5000, 11, "none")
    ens = generate_ensemble(spec)
    solvable = np.array([rep.num_solutions > 0 for rep in ens.reports])
    reference = np.array([(brute_force_imbalances(i.raw_weights) == 0).any() for i in ens.instances[:500]])
    assert np.array_equal(solvable[:500], reference)
    p_ref = reference.mean()
    se = np.sqrt(p_ref * (1 - p_ref) / 500)
    assert abs(solvable.mean() - p_ref) < 3 * max(se, 1e-3)


def test_equal_pair_has_two_solutions():
    for c in (1, 5, 16):
        rep = count_solutions(ProblemInstance(2, 5, (c, c)))
        assert rep.num_solutions == 2
        assert sorted(rep.solutions.tolist()) == [1, 2]


def test_four_equal_weights():
    assert count_solutions(ProblemInstance(4, 3, (5, 5, 5, 5))).num_solutions == 6


def test_counts_match_bitmask_oracle():
    for seed in range(100):
        inst = gen_instance(12, 12, 1000 + seed)
        ref = brute_force_imbalances(inst.raw_weights)
        rep = count_solutions(inst)
        assert rep.num_solutions == int(np.sum(ref == 0))
        assert rep.min_abs_imbalance == int(np.abs(ref).min())


def test_enumeration_cap():
    inst = ProblemInstance(21, 4, tuple([1] * 21))
    with pytest.raises(CapabilityError, match="ckk_exists"):
        count_solutions(inst)
    assert ckk_exists(inst) == (False, 1)


def test_ckk_examples():
    assert ckk_exists(ProblemInstance(2, 3, (5, 5))) == (True, 0)
    assert ckk_exists(ProblemInstance(3, 3, (8, 1, 1))) == (False, 6)


def test_ckk_agrees_with_counting():
    rng = np.random.default_rng(5)
    for i in range(1000):
        n = int(rng.integers(2, 15))
        k = int(rng.integers(1, 12))
        inst = gen_instance(n, k, i)
        exists, residue = ckk_exists(inst)
        rep = count_solutions(inst)
        assert exists == (rep.num_solutions > 0)
        assert residue == rep.min_abs_imbalance


def test_real_instances():
    a = gen_real_instance(2, 9)
    assert a.weights == gen_real_instance(2, 9).weights
    assert all(0 < w <= 1 for w in a.weights)
    for seed in range(50):
        rep = count_solutions(gen_real_instance(7, seed))
        assert rep.min_abs_imbalance > 0
        assert len(rep.argmin_set) % 2 == 0


def test_real_argmin_matches_enumeration():
    inst = gen_real_instance(10, 7)
    ref = np.empty(1 << 10)
    for x in range(1 << 10):
        ref[x] = sum(-w if (x >> i) & 1 else w for i, w in enumerate(inst.weights))
    rep = count_solutions(inst)
    expected = np.flatnonzero(np.abs(ref) == np.abs(ref).min())
    assert rep.argmin_set.tolist() == expected.tolist()


@given(weights_strategy)
@settings(max_examples=80, deadline=None)
def test_complement_symmetry_and_parity(weights):
    values = imbalance_values(weights)
    n = len(weights)
    complement = (1 << n) - 1
    idx = np.arange(1 << n)
    assert np.array_equal(values, -values[complement ^ idx])
    n_sol = int(np.sum(values == 0))
    assert n_sol % 2 == 0
    if sum(weights) % 2:
        assert n_sol == 0
    sols = set(np.flatnonzero(values == 0).tolist())
    assert {complement ^ x for x in sols} == sols
    assert np.array_equal(values, brute_force_imbalances(weights))


@given(weights_strategy)
@settings(max_examples=80, deadline=None)
def test_ckk_existence_property(weights):
    k = max(1, max(weights).bit_length())
    inst = ProblemInstance(len(weights), k, tuple(weights))
    exists, residue = ckk_exists(inst)
    rep = count_solutions(inst)
    assert exists == (rep.num_solutions > 0)
    assert residue == rep.min_abs_imbalance
    if rep.num_solutions:
        assert rep.min_abs_imbalance == 0


def test_seed_independent_of_order():
    ens = generate_ensemble(EnsembleSpec(6, 6, 20, 3, "none"))
    for i, inst in zip(ens.indices, ens.instances):
        again = gen_instance(6, 6, inst_mod.instance_seed(3, i, 6, 6))
        assert again.raw_weights == inst.raw_weights


def test_postselection_soundness():
    ens = generate_ensemble(EnsembleSpec(8, 8, 30, 4, "has_solution"))
    assert ens.complete
    assert all(rep.num_solutions > 0 for rep in ens.reports)
    ens2 = generate_ensemble(EnsembleSpec(8, 6, 10, 4, "count=2"))
    assert all(rep.num_solutions == 2 for rep in ens2.reports)


def test_postselection_budget_flags_incomplete():
    ens = generate_ensemble(EnsembleSpec(1, 4, 3, 0, "has_solution"))
    assert not ens.complete
    assert ens.attempts == 300
    with pytest.raises(ValueError):
        EnsembleSpec(4, 4, 0, 0)
    with pytest.raises(ValueError):
        EnsembleSpec(4, 4, 1, 0, "bogus")


def test_odd_totals_have_no_solutions():
    # unconditional version is criterion 7 in the acceptance suite
    counts, even = [], []
    for i in range(500):
        inst = gen_instance(10, 7, inst_mod.instance_seed(21, i, 10, 7))
        counts.append(count_solutions(inst, keep_lists=False).num_solutions)
        even.append(inst.total % 2 == 0)
    counts, even = np.array(counts), np.array(even)
    assert np.all(counts[~even] == 0)


def test_jsonl_round_trip(tmp_path):
    items = [gen_instance(5, 7, s) for s in range(3)] + [gen_real_instance(4, 1)]
    path = tmp_path / "i.jsonl"
    path.write_text(inst_mod.dumps_jsonl(items))
    back = inst_mod.read_jsonl(path)
    assert back == items
    assert isinstance(back[-1], RealInstance)


def test_padding_keeps_solutions():
    inst = gen_instance(6, 5, 8)
    padded = inst.padded(8)
    assert count_solutions(padded).num_solutions == count_solutions(inst).num_solutions
    with pytest.raises(ValueError):
        inst.padded(3)


def test_all_subsets_small():
    # explicit subset-sum check of the sign convention
    w = (3, 1, 2)
    values = imbalance_values(w)
    for x, bits in enumerate(itertools.product((0, 1), repeat=3)):
        signs = [1 - 2 * b for b in reversed(bits)]  # bit i of x is spin i
        assert values[x] == sum(a * si for a, si in zip(w, signs))
