import itertools
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magrpo_lab.core import ContractError, History, ResponseAction
from magrpo_lab.envs import MATRIX_TASK, TABLE3, MatrixGameEnv, make_coop_env
from magrpo_lab.magrpo import (
    GroupRollout,
    MemberTurn,
    TrainConfig,
    accumulate_objective_gradient,
    branch_partition,
    collect_group_rollouts,
    compute_advantages,
    compute_returns,
    greedy_joint_action,
    member_streams,
    named_stream,
    shared_prefix_partition,
    train,
    train_independent,
    whole_group_partition,
)
from magrpo_lab.policy import PolicyParams, action_distribution, log_prob_gradient


def uniform_policies(env):
    return [PolicyParams.uniform(i, env.catalog(i)) for i in range(env.n_agents)]


def rollout(env, seed=0, G=8, task=None, policies=None, episode=0):
    task = task or getattr(env, "dataset", (MATRIX_TASK,))[0]
    policies = policies or uniform_policies(env)
    streams = member_streams(seed, "rollout", episode, G, env.horizon * env.n_agents)
    return collect_group_rollouts([env] * G, policies, task, streams)


def fingerprint(r: GroupRollout):
    return [[(tuple(h.key for h in m.histories), tuple(a.catalog_index for a in m.joint), m.reward,
              tuple(o.tokens for o in m.observations)) for m in member] for member in r.members]


# --- configuration -----------------------------------------------------------

def test_config_validation():
    with pytest.raises(ContractError, match="group_size"):
        TrainConfig(group_size=1)
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ContractError):
        TrainConfig(branch_mode="tree")
    with pytest.raises(ContractError):
        TrainConfig(episodes=-1)


# --- rollouts ----------------------------------------------------------------

def test_matrix_rollout_values():
    r = rollout(MatrixGameEnv(), G=4)
    assert r.rewards().shape == (4, 1)
    assert set(r.rewards().ravel()) <= {0.0, 7.0, 10.0}


def test_coop_rollout_has_h_turns():
    r = rollout(make_coop_env(horizon=2), G=8)
    assert all(len(member) == 2 for member in r.members)
    first = {tuple(h.key for h in member[0].histories) for member in r.members}
    assert len(first) == 1  # shared task and turn-0 observations


def test_rollout_histories_grow_by_append():
    r = rollout(make_coop_env(horizon=3), G=3)
    for member in r.members:
        for t, m in enumerate(member):
            for i, h in enumerate(m.histories):
                assert h.turn == t and h.awaiting_action
                if t:
                    prev = member[t - 1]
                    assert h == prev.histories[i].append(prev.joint[i], prev.observations[i])


def test_same_seed_same_rollout():
    env = make_coop_env(horizon=2, feedback="guided")
    assert fingerprint(rollout(env, seed=5)) == fingerprint(rollout(env, seed=5))
    assert fingerprint(rollout(env, seed=5)) != fingerprint(rollout(env, seed=6))


def test_member_stream_independent_of_group_size():
    small = member_streams(3, "rollout", 2, 4, 6)
    big = member_streams(3, "rollout", 2, 9, 6)
    for a, b in zip(small, big):
        assert [a.random() for _ in range(6)] == [b.random() for _ in range(6)]


def test_named_streams_differ_by_name_and_index():
    draws = {(name, idx): named_stream(0, name, idx).random()
             for name in ("task", "rollout") for idx in range(3)}
    assert len(set(draws.values())) == len(draws)


def test_threaded_rollout_matches_serial():
    env = make_coop_env(horizon=2)
    policies = uniform_policies(env)
    task = env.dataset[3]
    make = lambda: member_streams(1, "rollout", 0, 16, 4)
    serial = collect_group_rollouts([env] * 16, policies, task, make())
    with ThreadPoolExecutor(4) as ex:
        threaded = collect_group_rollouts([env] * 16, policies, task, make(), executor=ex)
    assert fingerprint(serial) == fingerprint(threaded)


def test_sequential_mode_main_sees_aux():
    env = make_coop_env(horizon=1, sequential_mode=True)
    r = rollout(env, G=4)
    for member in r.members:
        m = member[0]
        assert m.histories[1].last_observation.tokens[-2:] == ("PEER", m.joint[0].rendered)
        assert "PEER" not in m.histories[0].last_observation.tokens


# --- returns -----------------------------------------------------------------

def test_returns_examples():
    assert np.array_equal(compute_returns(np.array([[10.0], [7.0], [7.0], [0.0]]))[:, 0],
                          [10, 7, 7, 0])
    assert np.array_equal(compute_returns(np.array([[1.0, 2.0]])), [[3.0, 2.0]])
    assert not compute_returns(np.zeros((3, 4))).any()


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_return_recursion(G, H, seed):
    # dyadic rewards keep every partial sum exact
    r = np.random.default_rng(seed).integers(-64, 64, (G, H)) / 8.0
    R = compute_returns(r)
    nxt = np.concatenate([R[:, 1:], np.zeros((G, 1))], axis=1)
    assert np.array_equal(R - nxt, r)


# --- advantages --------------------------------------------------------------

def test_advantage_examples():
    A = compute_advantages(np.array([[10.0], [7.0], [7.0], [0.0]]), whole_group_partition(4, 1))
    assert np.array_equal(A[:, 0], [4, 1, 1, -6])
    A = compute_advantages(np.full((3, 1), 5.0), whole_group_partition(3, 1))
    assert not A.any()
    part = [[[0, 1, 2]], [[0], [1], [2]]]
    A = compute_advantages(np.array([[3.0, 1.0], [2.0, 2.0], [9.0, 5.0]]), part)
    assert not A[:, 1].any()


def test_partition_must_cover():
    with pytest.raises(ContractError):
        compute_advantages(np.zeros((3, 1)), [[[0, 1]]])
    with pytest.raises(ContractError):
        compute_advantages(np.zeros((3, 1)), [[[0, 1], [1, 2]]])


@st.composite
def partitions(draw, G, H):
    out = []
    for _ in range(H):
        labels = draw(st.lists(st.integers(0, 3), min_size=G, max_size=G))
        groups = {}
        for g, lab in enumerate(labels):
            groups.setdefault(lab, []).append(g)
        out.append(list(groups.values()))
    return out


@given(st.data(), st.integers(2, 12), st.integers(1, 4))
def test_branch_advantages_sum_to_zero(data, G, H):
    R = np.array(data.draw(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=H, max_size=H),
                                    min_size=G, max_size=G)))
    part = data.draw(partitions(G, H))
    A = compute_advantages(R, part)
    for t in range(H):
        for branch in part[t]:
            assert abs(A[branch, t].sum()) <= 1e-9


@given(st.integers(2, 16), st.integers(0, 2**31), st.integers(-1000, 1000))
def test_shift_invariance_exact_rewards(G, seed, c):
    r = np.random.default_rng(seed).integers(-40, 40, (G, 1)) / 4.0
    part = whole_group_partition(G, 1)
    base = compute_advantages(compute_returns(r), part)
    shifted = compute_advantages(compute_returns(r + c / 8.0), part)
    assert np.array_equal(base, shifted)


def test_shift_invariance_in_rollout():
    env = MatrixGameEnv()
    shifted = MatrixGameEnv(np.asarray(TABLE3) + 3.0)
    a, b = rollout(env, G=32), rollout(shifted, G=32)
    assert np.array_equal(a.rewards() + 3.0, b.rewards())
    part = whole_group_partition(32, 1)
    assert np.array_equal(compute_advantages(compute_returns(a), part),
                          compute_advantages(compute_returns(b), part))


def test_shared_prefix_partition_structure():
    r = rollout(make_coop_env(horizon=3, feedback="guided"), G=24)
    part = shared_prefix_partition(r)
    assert part[0] == [list(range(24))]
    for t in range(1, 3):
        for branch in part[t]:
            keys = {tuple(h.key for h in r.members[g][t].histories) for g in branch}
            assert len(keys) == 1
        # branches refine the previous turn's branches
        for branch in part[t]:
            assert any(set(branch) <= set(b) for b in part[t - 1])
    assert branch_partition(r, "whole_group") == whole_group_partition(24, 3)


# --- gradients ---------------------------------------------------------------

def _handmade_rollout(env, joints, rewards):
    state_obs = env.reset(MATRIX_TASK)[1]
    hists = tuple(History.start(o) for o in state_obs)
    members = []
    for joint, rew in zip(joints, rewards):
        acts = tuple(ResponseAction(k, env.catalog(i)[k]) for i, k in enumerate(joint))
        members.append((MemberTurn(hists, acts, rew, ()),))
    return GroupRollout(MATRIX_TASK, tuple(members), (0, 0))


def test_two_member_gradient():
    env = MatrixGameEnv()
    pols = uniform_policies(env)
    r = _handmade_rollout(env, [(0, 0), (1, 0)], [10.0, 7.0])
    grads = accumulate_objective_gradient(r, np.array([[1.0], [-1.0]]), pols)
    key0 = r.members[0][0].histories[0].key
    want = 0.5 * (log_prob_gradient(pols[0], key0, 0)[key0]
                  - log_prob_gradient(pols[0], key0, 1)[key0])
    assert np.allclose(grads[0][key0], want, atol=1e-15)
    key1 = r.members[0][0].histories[1].key
    assert np.allclose(grads[1][key1], 0.0)  # both members took the same action


def test_zero_advantage_zero_gradient():
    env = make_coop_env(horizon=2)
    r = rollout(env, G=6)
    grads = accumulate_objective_gradient(r, np.zeros((6, 2)), uniform_policies(env))
    assert all(not np.any(g) for grad in grads for g in grad.values())


def test_gradient_rejects_stale_snapshot():
    env = MatrixGameEnv()
    pols = uniform_policies(env)
    r = rollout(env, G=4, policies=pols)
    stale = [PolicyParams(p.agent, p.catalog, {}, p.version + 1) for p in pols]
    with pytest.raises(ContractError, match="version"):
        accumulate_objective_gradient(r, np.zeros((4, 1)), stale)
    with pytest.raises(ContractError):
        accumulate_objective_gradient(r, np.zeros((4, 2)), pols)


def exact_expected_gradient(env, policies, G):
    """E over a G-member group of the whole-group estimator, by enumeration.

    With independent members, E[(R_g - mean R) grad log pi(a_g)] equals
    (1 - 1/G) E[R grad log pi(a)], because cross terms have zero mean.
    """
    key = [History.start(o).key for o in env.reset(MATRIX_TASK)[1]]
    probs = [action_distribution(p, k) for p, k in zip(policies, key)]
    out = [np.zeros(2), np.zeros(2)]
    for a0, a1 in itertools.product(range(2), repeat=2):
        w = probs[0][a0] * probs[1][a1] * env.joint_utility[a0][a1]
        out[0] += w * log_prob_gradient(policies[0], key[0], a0)[key[0]]
        out[1] += w * log_prob_gradient(policies[1], key[1], a1)[key[1]]
    return [(1 - 1 / G) * g for g in out], key


@pytest.mark.parametrize("logits", [None, (0.7, -0.4)])
def test_monte_carlo_gradient_matches_enumeration(logits):
    env = MatrixGameEnv()
    G = 10_000
    pols = uniform_policies(env)
    if logits is not None:
        k = History.start(env.reset()[1][0]).key
        pols[0] = PolicyParams(0, pols[0].catalog, {k: np.array(logits)})
    r = rollout(env, seed=11, G=G, policies=pols)
    A = compute_advantages(compute_returns(r), whole_group_partition(G, 1))
    grads = accumulate_objective_gradient(r, A, pols)
    exact, keys = exact_expected_gradient(env, pols, G)
    for i in range(2):
        p = action_distribution(pols[i], keys[i])
        terms = np.array([A[g, 0] * (np.eye(2)[r.members[g][0].joint[i].catalog_index] - p)
                          for g in range(G)])
        se = terms.std(axis=0, ddof=1) / np.sqrt(G)
        assert np.all(np.abs(grads[i][keys[i]] - exact[i]) <= 3 * se), (i, grads[i], exact[i], se)


# --- training loop -----------------------------------------------------------

def test_zero_reward_keeps_uniform():
    env = MatrixGameEnv(np.zeros((2, 2)))
    res = train(TrainConfig(8, 0.5, 20), lambda: env, (MATRIX_TASK,))
    for p in res.policies:
        for row in p.logits.values():
            assert not row.any()


def test_metrics_records():
    env = make_coop_env(horizon=2)
    seen = []
    res = train(TrainConfig(4, 1.0, 5), lambda: env, env.dataset, on_episode=seen.append)
    assert [m["episode"] for m in res.metrics] == list(range(5))
    assert seen == res.metrics
    m = res.metrics[0]
    assert len(m["turn_rewards"]) == 2 and len(m["turn_returns"]) == 2
    assert m["total_return_mean"] == pytest.approx(m["turn_returns"][0])
    assert sum(m["ladder"].values()) == pytest.approx(m["total_return_mean"])
    assert "wall_clock" not in m
    timed = train(TrainConfig(4, 1.0, 2), lambda: env, env.dataset, record_time=True)
    assert "wall_clock" in timed.metrics[0]


def test_training_is_deterministic():
    env = make_coop_env(horizon=2, feedback="guided")
    cfg = TrainConfig(8, 2.0, 30, "shared_prefix", seed=4)
    a = train(cfg, lambda: env, env.dataset)
    b = train(cfg, lambda: env, env.dataset)
    assert a.metrics == b.metrics
    for p, q in zip(a.policies, b.policies):
        assert p.logits.keys() == q.logits.keys()
        assert all(np.array_equal(p.logits[k], q.logits[k]) for k in p.logits)


def test_train_errors():
    env = MatrixGameEnv()
    with pytest.raises(ContractError):
        train(TrainConfig(4, 0.1, 1), lambda: env, ())
    with pytest.raises(ContractError):
        train(TrainConfig(4, 0.1, 1, horizon=2), lambda: env, (MATRIX_TASK,))
    coop = make_coop_env()
    with pytest.raises(ContractError, match="decomposition"):
        train_independent(TrainConfig(4, 0.1, 1), lambda: coop, coop.dataset)
    wrong = [PolicyParams.uniform(0, ("x", "y")), PolicyParams.uniform(1, ("A1", "A2"))]
    with pytest.raises(ContractError):
        train(TrainConfig(4, 0.1, 1), lambda: env, (MATRIX_TASK,), wrong)


def test_degenerate_decomposition_equals_magrpo():
    joint_env = MatrixGameEnv()
    shared = MatrixGameEnv(TABLE3, (TABLE3, TABLE3))
    cfg = TrainConfig(16, 0.1, 50, seed=2)
    a = train(cfg, lambda: joint_env, (MATRIX_TASK,))
    b = train_independent(cfg, lambda: shared, (MATRIX_TASK,))
    for p, q in zip(a.policies, b.policies):
        assert all(np.array_equal(p.logits[k], q.logits[k]) for k in p.logits)
    assert [m["total_return_mean"] for m in a.metrics] == [m["total_return_mean"] for m in b.metrics]


def test_posg1_independent_reaches_optimum():
    env = MatrixGameEnv.preset("posg1")
    hits = 0
    for seed in range(5):
        res = train_independent(TrainConfig(32, 0.1, 500, seed=seed), lambda: env, (MATRIX_TASK,))
        hits += greedy_joint_action(env, res.policies, MATRIX_TASK) == (0, 0)
    assert hits >= 3

