import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awet import demos
from awet.demos import (
    AgentBuffer,
    ExpertBuffer,
    Trajectory,
    Transition,
    annotate_mc_returns,
    generate_demos,
    load_demos,
    mc_returns,
    save_demos,
    validate_reward_signs,
)
from awet.envs import make
from awet.errors import (
    EmptyBufferError,
    GenerationFailureError,
    MissingAnnotationError,
    RejectedInputError,
    SignViolationError,
)

from oracles import direct_returns


def test_mc_returns_match_direct_summation():
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = -rng.exponential(size=50)
        assert np.max(np.abs(mc_returns(r, 0.98) - direct_returns(r, 0.98))) <= 1e-12


def test_mc_returns_small_cases():
    assert np.allclose(mc_returns([-1, -1, -1], 0.5), [-1.75, -1.5, -1.0])
    assert list(mc_returns([-2.0, -3.0], 0.0)) == [-2.0, -3.0]
    assert mc_returns([], 0.9).shape == (0,)


@given(st.lists(st.floats(-10, 0), min_size=1, max_size=30), st.floats(0, 0.999))
@settings(max_examples=60, deadline=None)
def test_mc_returns_recursion_property(rewards, gamma):
    q = mc_returns(rewards, gamma)
    assert q[-1] == rewards[-1]
    for t in range(len(rewards) - 1):
        assert q[t] == pytest.approx(rewards[t] + gamma * q[t + 1], abs=1e-12)


def test_generate_demos_are_successful_and_reproducible():
    task = make("reach_point")
    a = generate_demos(task, 5, seed=3)
    b = generate_demos("reach_point", 5, seed=3)
    assert [t.seed for t in a] == [t.seed for t in b]
    assert all(len(t) == task.spec.max_steps for t in a)
    for traj in a:
        state, _ = task.reset(traj.seed)
        assert np.array_equal(traj.transitions[0].s, task.observe(state))
        assert traj.transitions[-1].d and not traj.transitions[0].d


def test_generate_demos_prefix_property():
    # Fewer demos from the same seed are a prefix of more demos.
    small = generate_demos("pusher2", 4, seed=9)
    big = generate_demos("pusher2", 10, seed=9)
    assert [t.seed for t in small] == [t.seed for t in big[:4]]


def test_generation_failure(monkeypatch):
    monkeypatch.setattr(demos, "rollout_expert", lambda task, seed: ([], False))
    with pytest.raises(GenerationFailureError):
        generate_demos("reach_point", 3, seed=0)


def test_annotation_required_for_expert_buffer():
    trajs = generate_demos("reach_point", 2, seed=0)
    with pytest.raises(MissingAnnotationError):
        ExpertBuffer(trajs)
    with pytest.raises(EmptyBufferError):
        ExpertBuffer([])


def test_expert_buffer_is_read_only_and_indexed():
    trajs = annotate_mc_returns(generate_demos("reach_point", 3, seed=0), 0.98)
    buf = ExpertBuffer(trajs)
    assert len(buf) == 150
    assert buf.index == [(0, 50), (50, 100), (100, 150)]
    with pytest.raises(ValueError):
        buf.r[0] = 1.0
    assert np.allclose(buf.q_mc[50:100], mc_returns(trajs[1].rewards, 0.98))
    feats = buf.features()
    assert feats[0].shape == (51, 4)


def test_sign_validation():
    assert validate_reward_signs([-1.0, 0.0, -2.0]).ok
    assert validate_reward_signs([0.0, 0.0]).sign == 0
    assert validate_reward_signs([1.0, 2.0], [0.0]).ok
    rep = validate_reward_signs([-1.0, -2.0], [-1.0, 0.5])
    assert not rep.ok
    assert rep.offenders == [("agent", 1, 0.5)]
    with pytest.raises(SignViolationError):
        rep.raise_if_violated()


def test_normalize_rewards():
    trajs = generate_demos("reach_point", 2, seed=0)
    norm, scale = demos.normalize_rewards(trajs)
    assert scale == pytest.approx(max(np.max(np.abs(t.rewards)) for t in trajs))
    assert max(np.max(np.abs(t.rewards)) for t in norm) == pytest.approx(1.0)


def test_agent_buffer_ring_eviction_and_order():
    buf = AgentBuffer(3, obs_dim=1, act_dim=1)
    for i in range(5):
        buf.add([i], [0.0], -float(i), [i + 1], False)
    assert len(buf) == 3 and buf.n_added == 5
    assert list(buf.contents().r) == [-2.0, -3.0, -4.0]


def test_empty_agent_buffer_sampling_fails():
    buf = AgentBuffer(10, 2, 1)
    with pytest.raises(EmptyBufferError):
        demos.sample_batch(buf, 4, np.random.default_rng(0))


def test_sampling_is_seeded():
    trajs = annotate_mc_returns(generate_demos("reach_point", 2, seed=0), 0.98)
    buf = ExpertBuffer(trajs)
    a = demos.sample_batch(buf, 8, np.random.default_rng(5))
    b = demos.sample_batch(buf, 8, np.random.default_rng(5))
    assert np.array_equal(a.s, b.s) and np.array_equal(a.q_mc, b.q_mc)


def test_dataset_roundtrip_is_exact(tmp_path):
    trajs = annotate_mc_returns(generate_demos("pusher2", 3, seed=1), 0.98)
    path = tmp_path / "demos.txt"
    save_demos(path, trajs, "pusher2", 0.98)
    first = path.read_text().splitlines()[0]
    assert first.startswith("#awet-demos v1 task=pusher2 obs=10 act=2")
    back, header = load_demos(path, make("pusher2"))
    assert header["episodes"] == "3"
    assert ExpertBuffer(back).digest() == ExpertBuffer(trajs).digest()
    assert [t.seed for t in back] == [t.seed for t in trajs]


def test_dataset_unannotated_roundtrip(tmp_path):
    trajs = generate_demos("reach_point", 1, seed=1)
    path = tmp_path / "raw.txt"
    save_demos(path, trajs, "reach_point", None)
    back, _ = load_demos(path)
    assert not back[0].annotated


def test_dataset_dimension_mismatch_rejected(tmp_path):
    trajs = annotate_mc_returns(generate_demos("reach_point", 1, seed=1), 0.98)
    path = tmp_path / "d.txt"
    save_demos(path, trajs, "reach_point", 0.98)
    with pytest.raises(RejectedInputError):
        load_demos(path, make("pusher2"))
    lines = path.read_text().splitlines()
    lines[3] = lines[3] + " 1.0"
    path.write_text("\n".join(lines))
    with pytest.raises(RejectedInputError):
        load_demos(path)


def test_trajectory_observations():
    t = Trajectory([Transition(np.array([0.0]), np.array([1.0]), -1.0, np.array([1.0]), False),
                    Transition(np.array([1.0]), np.array([1.0]), -1.0, np.array([2.0]), True)])
    assert np.array_equal(t.observations(), [[0.0], [1.0], [2.0]])
