import json

import numpy as np
import pytest

from smbandit import AlgoConfig, run
from smbandit.environment import (OUTSIDE, Environment, generate_instance, instance_from_dict,
                                  instance_to_dict, load_instance, oracle_matching,
                                  sample_choice, save_instance, uniform_policy_regret)
from smbandit.mnl import Instance, Matching, total_revenue

from conftest import mnl_revenue, recursive_best


def closed_form_instance():
    # utilities are zero because every feature is orthogonal to theta
    return Instance(X=np.array([[0.0, 0.0], [1.0, 1.0]]), theta=np.array([[1.0, 0.0]]),
                    rewards=np.array([[0.9], [0.1]]), L=1, seed=0)


def test_generator_norms_shapes_determinism():
    inst = generate_instance(3, 2, 5, 2, seed=11)
    assert inst.X.shape == (5, 3) and inst.rewards.shape == (3, 2) and inst.theta.shape == (2, 5)
    assert np.allclose(np.linalg.norm(inst.X, axis=0), 1, atol=1e-12)
    assert np.allclose(np.linalg.norm(inst.theta, axis=1), 1, atol=1e-12)
    assert np.all((inst.rewards >= 0) & (inst.rewards <= 1))
    again = generate_instance(3, 2, 5, 2, seed=11)
    assert inst.X.tobytes() == again.X.tobytes() and inst.rewards.tobytes() == again.rewards.tobytes()
    assert not np.array_equal(inst.X, generate_instance(3, 2, 5, 2, seed=12).X)


def test_sample_choice_empty_and_deterministic():
    rng = np.random.default_rng(0)
    assert all(sample_choice((), np.zeros(3), rng) == OUTSIDE for _ in range(100))
    a = [sample_choice((0, 2), np.array([0.3, 0.0, -0.4]), np.random.default_rng(5)) for _ in range(3)]
    assert len(set(a)) == 1


def test_sample_choice_frequencies():
    rng = np.random.default_rng(2024)
    n = 100_000
    draws = np.array([sample_choice((0, 1), np.zeros(2), rng) for _ in range(n)])
    sigma = np.sqrt((1 / 3) * (2 / 3) / n)
    for o in (0, 1, OUTSIDE):
        assert abs(np.mean(draws == o) - 1 / 3) < 3 * sigma


def test_step_feedback():
    inst = generate_instance(4, 3, 3, 2, seed=1)
    env = Environment(inst, 0)
    fb = env.step(Matching(((), (), ())))
    assert fb.outcomes == (OUTSIDE,) * 3 and fb.indicators == ({}, {}, {})
    m = Matching(((0, 1), (2,), (3,)))
    for _ in range(200):
        fb = env.step(m)
        for k, (o, ind) in enumerate(zip(fb.outcomes, fb.indicators)):
            assert set(ind) == set(m.sets[k])
            assert sum(ind.values()) == (o != OUTSIDE)
            if o != OUTSIDE:
                assert o in m.sets[k] and ind[o] == 1
    with pytest.raises(ValueError):
        env.step(Matching(((0,),)))


def test_single_arm_step_matches_sample_choice():
    inst = generate_instance(3, 1, 2, 2, seed=4)
    env = Environment(inst, 9)
    ref = Environment(inst, 9).rngs[0]
    util = inst.utilities()[:, 0]
    for _ in range(50):
        assert env.step(Matching(((0, 2),))).outcomes[0] == sample_choice((0, 2), util, ref)


def test_oracle_closed_form():
    sol = oracle_matching(closed_form_instance())
    assert sol.matching.sets == ((0,),) and np.isclose(sol.value, 0.45)
    one = Instance(X=np.array([[1.0]]), theta=np.array([[0.2]]), rewards=np.array([[0.5]]), L=1)
    assert oracle_matching(one).matching.sets == ((0,),)


@pytest.mark.parametrize("seed", range(5))
def test_oracle_matches_recursive(seed):
    inst = generate_instance(4, 2, 3, 2, seed)
    util = inst.utilities()
    enc, best = recursive_best(lambda S, k: mnl_revenue(S, util[:, k], inst.rewards[:, k]), 4, 2, 2)
    sol = oracle_matching(inst)
    assert abs(sol.value - best) < 1e-12 and sol.matching.sets == enc


def test_oracle_dominance_over_random_matchings():
    inst = generate_instance(5, 3, 4, 2, seed=8)
    opt = oracle_matching(inst).value
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        assign = rng.integers(0, 4, size=5)
        sets = [tuple(n for n in range(5) if assign[n] == k + 1)[:2] for k in range(3)]
        assert total_revenue(Matching(tuple(sets)), inst) <= opt + 1e-12


def test_oracle_size_cap():
    inst = generate_instance(17, 3, 2, 1, seed=0)
    with pytest.raises(ValueError, match="too large"):
        oracle_matching(inst)


def test_regret_identity():
    inst = generate_instance(3, 2, 4, 2, seed=3)
    env = Environment(inst, 0)
    tr = run(env, AlgoConfig("bsmb", T=400, M=2, C1=5e-5, C3_warm=1e-6))
    offered = sum(total_revenue(tr.matching(t), inst) for t in range(400))
    assert abs(tr.regret.sum() - (400 * env.oracle.value - offered)) < 1e-8


def test_uniform_policy_regret_closed_form():
    # feasible matchings: {}, {0}, {1} with values 0, 0.45, 0.05
    assert np.isclose(uniform_policy_regret(closed_form_instance(), 10), 10 * (0.45 - 0.5 / 3))


def test_json_round_trip(tmp_path):
    inst = generate_instance(3, 2, 5, 2, seed=6)
    doc = instance_to_dict(inst)
    assert doc["r"] == 3 and doc["d"] == 5
    json.dumps(doc)
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    back = load_instance(path)
    assert np.array_equal(back.X, inst.X) and np.array_equal(back.theta, inst.theta)
    assert np.array_equal(back.rewards, inst.rewards) and back.L == inst.L and back.seed == 6
    with pytest.raises(ValueError):
        instance_from_dict({k: v for k, v in doc.items() if k != "X"})
    with pytest.raises(ValueError):
        instance_from_dict({**doc, "N": 9})
