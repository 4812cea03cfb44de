import math

import numpy as np
import pytest

from guidedrts import agent, gridrts, guidance, numcore as nc, ppo
from guidedrts.gridrts import TaskId
from guidedrts.guidance import GuidanceSchedule, PloConfig


def small_policy_set(keys, seed=0, num_envs=2, dtype=np.float64):
    return guidance.make_policy_set(keys, seed=seed, num_envs=num_envs, dtype=dtype)


def small_rollout(pset, task=TaskId.LEARN_TO_ATTACK, steps=8, num_envs=2, seed=0,
                  sched=None, t0=0):
    envs = guidance.VecEnvRunner(task, base_seed=seed, num_envs=num_envs, max_ticks=400)
    rng = np.random.default_rng(seed)
    return guidance.collect_rollout(envs, pset, sched, t0, rng, steps=steps)


# ----- schedule ---------------------------------------------------------------


def test_epsilon_schedule_paper_values():
    sched = GuidanceSchedule(shift=800_000, adaptation=1_000_000, eps_end=0.0)
    assert guidance.epsilon_schedule(0, sched) == 0.95
    assert guidance.epsilon_schedule(1_800_000, sched) == 0.0
    assert guidance.epsilon_schedule(1_300_000, sched) == pytest.approx(0.475)
    mixed = GuidanceSchedule(shift=2_000_000, adaptation=2_000_000, eps_end=0.5)
    assert guidance.epsilon_schedule(4_000_000, mixed) == 0.5
    assert guidance.epsilon_schedule(10_000_000, mixed) == 0.5


def test_epsilon_schedule_shape():
    sched = GuidanceSchedule(shift=1000, adaptation=2000, eps_end=0.1)
    assert guidance.epsilon_schedule(999, sched) == 0.95
    assert guidance.epsilon_schedule(3000, sched) == pytest.approx(0.1)
    # affine on the adaptation interval
    ts = np.linspace(1000, 3000, 201)
    vals = np.array([guidance.epsilon_schedule(int(t), sched) for t in ts])
    slopes = np.diff(vals) / np.diff(ts)
    np.testing.assert_allclose(slopes, slopes[0], atol=1e-12)
    # monotone non-increasing overall
    all_ts = range(0, 4000, 7)
    seq = [guidance.epsilon_schedule(t, sched) for t in all_ts]
    assert all(a >= b for a, b in zip(seq, seq[1:]))


def test_epsilon_schedule_zero_adaptation():
    sched = GuidanceSchedule(shift=100, adaptation=0, eps_end=0.2)
    assert guidance.epsilon_schedule(99, sched) == 0.95
    assert guidance.epsilon_schedule(100, sched) == 0.2


# ----- behavior selection -------------------------------------------------------


def test_select_behavior_extremes():
    pset = small_policy_set(["sparse", "shaped"])
    rng = np.random.default_rng(0)
    always_main = GuidanceSchedule(shift=0, adaptation=0, eps_start=0.0, eps_end=0.0)
    always_aux = GuidanceSchedule(shift=10, adaptation=0, eps_start=1.0, eps_end=1.0)
    assert all(guidance.select_behavior(5, rng, pset, always_main) == 0 for _ in range(100))
    assert all(guidance.select_behavior(5, rng, pset, always_aux) == 1 for _ in range(100))


def test_select_behavior_single_policy_always_main():
    pset = small_policy_set(["shaped"])
    rng = np.random.default_rng(1)
    sched = GuidanceSchedule(shift=10, adaptation=0, eps_start=1.0, eps_end=1.0)
    assert all(guidance.select_behavior(0, rng, pset, sched) == 0 for _ in range(10))


def test_select_behavior_half_and_half():
    pset = small_policy_set(["sparse", "shaped"])
    rng = np.random.default_rng(2)
    sched = GuidanceSchedule(shift=0, adaptation=0, eps_start=0.5, eps_end=0.5)
    n = 10_000
    mains = sum(guidance.select_behavior(0, rng, pset, sched) == 0 for _ in range(n))
    sigma = math.sqrt(0.25 / n)
    assert abs(mains / n - 0.5) < 3 * sigma


# ----- rollout collection ----------------------------------------------------------


def test_collect_rollout_batch_dimensions():
    pset = guidance.make_policy_set(["sparse", "shaped"], seed=0, num_envs=8)
    envs = guidance.VecEnvRunner(TaskId.LEARN_TO_ATTACK, base_seed=3, num_envs=8)
    sched = GuidanceSchedule(shift=10**6, adaptation=10**6)
    batch = guidance.collect_rollout(envs, pset, sched, 0, np.random.default_rng(4), steps=128)
    assert batch.dones.shape == (128, 8)  # 1024 transitions
    assert batch.obs.shape == (128, 8, 10, 10, 27)
    assert batch.actions.shape == (128, 8, 8)
    assert set(batch.rewards) == {"sparse", "shaped"}
    assert batch.rewards["sparse"].shape == (128, 8)
    # during the shift period nearly all behavior comes from the auxiliary
    assert (batch.behavior_ids == 1).mean() > 0.9


def test_collect_rollout_eps_zero_records_main_only():
    pset = small_policy_set(["sparse", "shaped"])
    sched = GuidanceSchedule(shift=0, adaptation=0, eps_start=0.0, eps_end=0.0)
    batch = small_rollout(pset, sched=sched)
    assert (batch.behavior_ids == 0).all()


def test_collect_rollout_logps_match_recorded_actions():
    pset = small_policy_set(["sparse", "shaped"], dtype=np.float64)
    sched = GuidanceSchedule(shift=100, adaptation=100, eps_end=0.5)
    batch = small_rollout(pset, sched=sched, steps=6, num_envs=2)
    t_len, n = batch.dones.shape
    for s in range(t_len):
        for i in range(n):
            pol = pset.handles[batch.behavior_ids[s, i]].policy
            with nc.no_grad():
                logits, _ = pol.forward(batch.obs[s, i : i + 1])
            dist = agent.masked_distribution(logits, batch.masks[s, i : i + 1],
                                             slices=pol.slices)
            lp = agent.logprob_of(dist, batch.actions[s, i : i + 1])
            np.testing.assert_allclose(lp.data[0], batch.behavior_logps[s, i], atol=1e-9)


def test_vec_env_runner_serialization_round_trip():
    envs = guidance.VecEnvRunner(TaskId.DEFEAT_RANDOM_ENEMY, base_seed=5, num_envs=3,
                                 max_ticks=300)
    rng = np.random.default_rng(6)
    for _ in range(4):
        acts = np.stack([_sample_masked(envs.masks[i], rng) for i in range(3)])
        envs.step(acts)
    snap = envs.state_dict()
    twin = guidance.VecEnvRunner(TaskId.DEFEAT_RANDOM_ENEMY, base_seed=5, num_envs=3,
                                 max_ticks=300)
    twin.load_state_dict(snap)
    acts = np.stack([_sample_masked(envs.masks[i], np.random.default_rng(7)) for i in range(3)])
    r1 = envs.step(acts.copy())
    r2 = twin.step(acts.copy())
    np.testing.assert_array_equal(r1[0], r2[0])
    np.testing.assert_array_equal(envs.raw_obs, twin.raw_obs)


def _sample_masked(mask, rng):
    comps = gridrts.split_mask(mask, 10, 10)
    return np.array([rng.choice(np.nonzero(c)[0]) for c in comps], dtype=np.int64)


# ----- PLO ---------------------------------------------------------------------------


def _fake_batch(sparse, shaped):
    sparse = np.asarray(sparse, dtype=np.float64)
    shaped = np.asarray(shaped, dtype=np.float64)
    return guidance.RolloutBatch(
        obs=np.zeros((sparse.shape[0], sparse.shape[1], 10, 10, 27), dtype=np.float32),
        masks=np.ones((sparse.shape[0], sparse.shape[1], 229), dtype=bool),
        actions=np.zeros((sparse.shape[0], sparse.shape[1], 8), dtype=np.int64),
        behavior_ids=np.zeros(sparse.shape, dtype=np.int64),
        behavior_logps=np.zeros(sparse.shape),
        rewards={"sparse": sparse, "shaped": shaped},
        dones=np.zeros(sparse.shape, dtype=bool),
        next_obs=np.zeros((sparse.shape[1], 10, 10, 27), dtype=np.float32),
        episode_stats=[], t0=0, epsilon=0.0,
    )


def test_plo_gate_rules():
    pset = small_policy_set(["sparse", "shaped"])
    main = pset.main
    on = PloConfig(enabled=True)
    assert not guidance.plo_gate(_fake_batch([[0, 0], [0, 0]], [[1, 0], [0, 0]]), main, on)
    assert guidance.plo_gate(_fake_batch([[0, 1], [0, 0]], [[0, 0], [0, 0]]), main, on)
    # nonzero counts as signal, even when negative
    assert guidance.plo_gate(_fake_batch([[-1, 0], [0, 0]], [[0, 0], [0, 0]]), main, on)
    off = PloConfig(enabled=False)
    assert guidance.plo_gate(_fake_batch([[0, 0], [0, 0]], [[0, 0], [0, 0]]), main, off)
    strict = PloConfig(enabled=True, positive_only=True)
    assert not guidance.plo_gate(_fake_batch([[-1, 0], [0, 0]], [[0, 0], [0, 0]]), main, strict)


def test_plo_skip_leaves_policy_bit_identical():
    pset = small_policy_set(["sparse", "shaped"], seed=3)
    batch = small_rollout(pset, steps=6, num_envs=2,
                          sched=GuidanceSchedule(shift=100, adaptation=0))
    batch.rewards["sparse"][:] = 0.0  # force a PLO skip for the main policy
    before = {k: v.data.copy() for k, v in pset.main.policy.params.items()}
    stats = guidance.update_policies(pset, batch, ppo.LossConfig(), PloConfig(enabled=True),
                                     ppo.GaeConfig(), np.random.default_rng(0), lr=2.5e-4)
    assert stats["main"]["plo_skipped"]
    for k, v in pset.main.policy.params.items():
        assert v.data.tobytes() == before[k].tobytes()
    assert not stats["aux1"]["plo_skipped"]  # shaped stream has distance signal


def test_update_changes_both_policies_when_both_streams_have_signal():
    pset = small_policy_set(["sparse", "shaped"], seed=4)
    batch = small_rollout(pset, steps=6, num_envs=2,
                          sched=GuidanceSchedule(shift=100, adaptation=0))
    rng = np.random.default_rng(8)
    batch.rewards["sparse"] = rng.standard_normal(batch.rewards["sparse"].shape)
    batch.rewards["shaped"] = rng.standard_normal(batch.rewards["shaped"].shape)
    before = [{k: v.data.copy() for k, v in h.policy.params.items()} for h in pset.handles]
    guidance.update_policies(pset, batch, ppo.LossConfig(), PloConfig(), ppo.GaeConfig(),
                             np.random.default_rng(1), lr=2.5e-4)
    for h, prev in zip(pset.handles, before):
        changed = any(not np.array_equal(v.data, prev[k]) for k, v in h.policy.params.items())
        assert changed, f"{h.name} did not move"


def test_reward_isolation_of_main_policy():
    # perturbing the shaped stream must not change the main policy's update
    results = []
    for perturb in (False, True):
        pset = small_policy_set(["sparse", "shaped"], seed=5)
        batch = small_rollout(pset, steps=6, num_envs=2,
                              sched=GuidanceSchedule(shift=100, adaptation=0), seed=9)
        batch.rewards["sparse"][3, 1] = 1.0  # some sparse signal
        if perturb:
            batch.rewards["shaped"] = batch.rewards["shaped"] + 123.0
        guidance.update_policies(pset, batch, ppo.LossConfig(), PloConfig(), ppo.GaeConfig(),
                                 np.random.default_rng(2), lr=2.5e-4)
        results.append({k: v.data.copy() for k, v in pset.main.policy.params.items()})
    for k in results[0]:
        assert results[0][k].tobytes() == results[1][k].tobytes()


def test_first_epoch_ratio_is_one_for_own_transitions():
    pset = small_policy_set(["sparse", "shaped"], seed=6, dtype=np.float64)
    sched = GuidanceSchedule(shift=100, adaptation=100, eps_end=0.5)
    batch = small_rollout(pset, steps=6, num_envs=2, sched=sched, seed=10)
    t_len, n = batch.dones.shape
    flat_obs = batch.obs.reshape((t_len * n,) + batch.obs.shape[2:])
    flat_masks = batch.masks.reshape(t_len * n, -1)
    flat_actions = batch.actions.reshape(t_len * n, 8)
    flat_logps = batch.behavior_logps.reshape(t_len * n)
    flat_ids = batch.behavior_ids.reshape(t_len * n)
    for pid, handle in enumerate(pset.handles):
        rows = np.nonzero(flat_ids == pid)[0]
        if rows.size == 0:
            continue
        with nc.no_grad():
            logits, _ = handle.policy.forward(flat_obs[rows])
        dist = agent.masked_distribution(logits, flat_masks[rows], slices=handle.policy.slices)
        lp = agent.logprob_of(dist, flat_actions[rows])
        ratios = np.exp(lp.data - flat_logps[rows])
        np.testing.assert_allclose(ratios, 1.0, rtol=0, atol=1e-12)
