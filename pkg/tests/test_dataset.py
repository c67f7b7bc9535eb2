import numpy as np
import pytest

from offline_dispatch import env
from offline_dispatch.dataset import (
    EpisodeRecord,
    make_expert_dataset,
    make_noisy_dataset,
    materialize,
    normalize_rewards,
    read_dataset,
    sample_batch,
    write_dataset,
)
from offline_dispatch.errors import DataError
from offline_dispatch.exact import Schedule, solve_exact
from offline_dispatch.instances import Instance, generate_instance
from offline_dispatch.rng import SplitMix64


@pytest.fixture(scope="module")
def expert_records():
    insts = [generate_instance(4, 4, 100 + s) for s in range(6)]
    return make_expert_dataset([(i, solve_exact(i)) for i in insts])


def test_expert_dataset_shape(expert_records):
    assert len(expert_records) == 6
    for rec in expert_records:
        assert len(rec.actions) == 16
        assert not rec.noisy
        assert rec.expert_makespan > 0


def test_expert_single_op():
    inst = Instance(1, 1, ((0,),), ((7,),))
    records = make_expert_dataset([(inst, solve_exact(inst))])
    assert records[0].actions == (0,)
    assert records[0].expert_makespan == 7


def test_expert_return_telescopes(expert_records):
    for rec in expert_records:
        state, rewards = env.replay(rec.instance, rec.actions)
        lb0 = env.reset(rec.instance).max_clb()
        assert sum(rewards) == lb0 - rec.expert_makespan


def test_expert_rejects_invalid_schedule():
    inst = Instance(2, 1, ((0,), (0,)), ((3,), (5,)))
    bad = Schedule(start=((0,), (1,)), makespan=6)
    with pytest.raises(DataError):
        make_expert_dataset([(inst, bad)])


def test_noisy_p_zero_is_identity(expert_records):
    noisy = make_noisy_dataset(expert_records, p_noisy=0.0, epsilon=0.5, rng_seed=1)
    assert noisy == expert_records


def test_noisy_count_roughly_binomial(expert_records):
    big = expert_records * 20  # 120 episodes
    noisy = make_noisy_dataset(big, p_noisy=0.5, epsilon=0.1, rng_seed=0)
    count = sum(r.noisy for r in noisy)
    assert 35 <= count <= 85  # ~Binomial(120, .5), generous band


def test_noisy_always_legal_even_fully_random(expert_records):
    noisy = make_noisy_dataset(expert_records, p_noisy=1.0, epsilon=1.0, rng_seed=3)
    for rec in noisy:
        assert rec.noisy
        state, _ = env.replay(rec.instance, rec.actions)  # raises if illegal
        assert state.terminal


def test_noisy_preserves_expert_makespan(expert_records):
    noisy = make_noisy_dataset(expert_records, p_noisy=1.0, epsilon=0.3, rng_seed=7)
    for noisy_rec, expert_rec in zip(noisy, expert_records):
        assert noisy_rec.expert_makespan == expert_rec.expert_makespan


def test_noisy_epsilon_zero_keeps_expert_order(expert_records):
    noisy = make_noisy_dataset(expert_records, p_noisy=1.0, epsilon=0.0, rng_seed=9)
    for noisy_rec, expert_rec in zip(noisy, expert_records):
        assert noisy_rec.actions == expert_rec.actions
        assert noisy_rec.noisy


def test_noisy_deterministic(expert_records):
    a = make_noisy_dataset(expert_records, 0.5, 0.2, rng_seed=11)
    b = make_noisy_dataset(expert_records, 0.5, 0.2, rng_seed=11)
    assert a == b


def test_invalid_probabilities(expert_records):
    with pytest.raises(DataError):
        make_noisy_dataset(expert_records, -0.1, 0.5, 0)
    with pytest.raises(DataError):
        make_noisy_dataset(expert_records, 0.5, 1.5, 0)


def test_normalize_rewards_values():
    inst = Instance(2, 1, ((0,), (0,)), ((3,), (5,)))
    rec = EpisodeRecord(inst, (0, 1), False, expert_makespan=8)
    [normed] = normalize_rewards([rec])
    assert normed.norm_rewards == (0.0, -3 / 8)


def test_normalized_return_equals_gap_identity(expert_records):
    for rec in normalize_rewards(expert_records):
        lb0 = env.reset(rec.instance).max_clb()
        expected = (lb0 - rec.expert_makespan) / rec.expert_makespan
        assert sum(rec.norm_rewards) == pytest.approx(expected)


def test_scale_free_normalization():
    # multiplying processing times by k leaves normalized rewards unchanged
    inst = generate_instance(3, 3, 77)
    sched = solve_exact(inst)
    [rec] = make_expert_dataset([(inst, sched)])
    [rec_n] = normalize_rewards([rec])

    scaled_inst = inst.scaled(5)
    scaled_sched = solve_exact(scaled_inst)
    assert scaled_sched.makespan == 5 * sched.makespan
    [rec5] = normalize_rewards(
        make_expert_dataset([(scaled_inst, scaled_sched)])
    )
    # same dispatch order: the optimal schedule scales with the instance
    assert np.allclose(rec5.norm_rewards, rec_n.norm_rewards)


def test_materialize_counts(expert_records):
    transitions = materialize(expert_records, "normalized")
    assert len(transitions) == 6 * 16
    terminals = [t for t in transitions if t.terminal]
    assert len(terminals) == 6
    for t in transitions:
        assert t.obs.mask[t.action]


def test_materialize_raw_reward_example():
    inst = Instance(2, 1, ((0,), (0,)), ((3,), (5,)))
    rec = EpisodeRecord(inst, (0, 1), False, expert_makespan=8)
    raw = materialize([rec], "raw")
    assert [t.reward for t in raw] == [0.0, -3.0]
    scaled = materialize([rec], "scaled", scale=0.01)
    assert [t.reward for t in scaled] == [0.0, -0.03]
    normed = materialize([rec], "normalized")
    assert [t.reward for t in normed] == [0.0, -3 / 8]


def test_materialize_unknown_mode(expert_records):
    with pytest.raises(DataError):
        materialize(expert_records, "squashed")


def test_sample_batch_sizes(expert_records):
    transitions = materialize(expert_records, "normalized")
    batch = sample_batch(transitions, 64, SplitMix64(0))
    assert len(batch) == 64
    single = sample_batch(transitions[:1], 1, SplitMix64(0))
    assert single == [transitions[0]]


def test_sample_batch_deterministic(expert_records):
    transitions = materialize(expert_records, "normalized")
    a = sample_batch(transitions, 16, SplitMix64(5))
    b = sample_batch(transitions, 16, SplitMix64(5))
    assert [id(t) for t in a] == [id(t) for t in b]


def test_sample_batch_empty_errors():
    with pytest.raises(DataError):
        sample_batch([], 4, SplitMix64(0))


def test_dataset_file_roundtrip(expert_records):
    noisy = make_noisy_dataset(expert_records, 0.5, 0.1, rng_seed=0)
    text = write_dataset(noisy, 0.5, 0.1, 0)
    records, manifest = read_dataset(text)
    assert records == [r for r in noisy]
    assert manifest["p_noisy"] == "0.5"
    # bit-exact round trip
    again = write_dataset(
        records,
        float(manifest["p_noisy"]),
        float(manifest["epsilon"]),
        int(manifest["noise_seed"]),
    )
    assert again == text


def test_dataset_rejects_corrupt_actions(expert_records):
    text = write_dataset(expert_records[:1])
    broken = text.replace("actions ", "actions 0 0 0 0 ")
    with pytest.raises(Exception):
        read_dataset(broken)
