import numpy as np
import pytest

import oracles
from awet import trainer as tr
from awet.demos import Batch, ExpertBuffer, annotate_mc_returns, generate_demos
from awet.dtw import TerminationMonitor
from awet.envs import make
from awet.errors import DegenerateAdvantageError, MissingAnnotationError, RejectedInputError
from awet.trainer import AgentNets, AwetConfig, Trainer

from conftest import central_diff, max_rel_err

OBS, ACT = 3, 2
SCALE = np.array([1.0, 2.0])


def make_nets(seed=0, hidden=(6, 5)):
    nets = AgentNets.create(OBS, ACT, SCALE, hidden, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    # Targets differ from the online nets so target terms are exercised.
    for p in (nets.actor_t, nets.critic1_t, nets.critic2_t):
        p.flat[...] += rng.normal(scale=0.1, size=p.flat.shape)
    return nets


def make_batch(seed, n=6, annotated=True):
    rng = np.random.default_rng(seed)
    return Batch(
        s=rng.normal(size=(n, OBS)),
        a=rng.uniform(-1, 1, size=(n, ACT)) * SCALE,
        r=-rng.exponential(size=n),
        s_next=rng.normal(size=(n, OBS)),
        d=(rng.random(n) < 0.3).astype(float),
        q_mc=-rng.exponential(3.0, size=n) if annotated else None,
    )


# -- loss values against straight-line oracles -----------------------------------


def test_offline_critic_loss_value_and_grad():
    nets = make_nets()
    batch = make_batch(1)
    loss, grads = tr.offline_critic_loss(nets.critic_spec, nets.critic1, batch, 1e-2)
    assert abs(loss - oracles.offline_critic(nets.critic1, batch, 1e-2)) <= 1e-10
    num = central_diff(lambda: tr.offline_critic_loss(nets.critic_spec, nets.critic1, batch, 1e-2)[0], nets.critic1.flat)
    assert max_rel_err(grads.flat, num) < 1e-5


def test_offline_critic_needs_annotations():
    nets = make_nets()
    with pytest.raises(MissingAnnotationError):
        tr.offline_critic_loss(nets.critic_spec, nets.critic1, make_batch(1, annotated=False), 0.0)


def test_offline_actor_loss_value_and_grad():
    nets = make_nets()
    batch = make_batch(2)
    loss, grads, terms = tr.offline_actor_loss(nets, batch, 0.3, 1e-2)
    assert abs(loss - oracles.offline_actor(nets, batch, 0.3, 1e-2)) <= 1e-10
    num = central_diff(lambda: tr.offline_actor_loss(nets, batch, 0.3, 1e-2)[0], nets.actor.flat)
    assert max_rel_err(grads.flat, num) < 1e-5
    assert terms["l_bc"] == pytest.approx(oracles.bc(oracles.actor(nets, batch.s), batch.a), abs=1e-12)


def test_td_targets_by_hand():
    nets = make_nets()
    batch = make_batch(3)
    noise = tr.smoothing_noise(np.random.default_rng(0), batch.a.shape, 0.2, 0.5, SCALE)
    y = tr.td_targets(nets, batch, 0.98, noise, -SCALE, SCALE)
    assert np.max(np.abs(y - oracles.td_target(nets, batch, 0.98, noise, -SCALE, SCALE))) <= 1e-10
    # Terminal transitions bootstrap nothing.
    done = batch.d == 1
    assert np.array_equal(y[done], batch.r[done])


def test_smoothing_noise_is_clipped_and_scaled():
    eps = tr.smoothing_noise(np.random.default_rng(0), (5000, 2), 0.2, 0.5, SCALE)
    assert np.all(np.abs(eps) <= 0.5 * SCALE)
    assert np.std(eps[:, 1]) == pytest.approx(2 * np.std(eps[:, 0]), rel=0.1)
    assert not tr.smoothing_noise(np.random.default_rng(0), (3, 2), 0.0, 0.5, SCALE).any()


@pytest.mark.parametrize("use_clip", [True, False])
def test_online_critic_loss_value_and_grad(use_clip):
    nets = make_nets()
    ba, be = make_batch(4), make_batch(5)
    y = ba.r + 0.1  # L_BA below the clip level
    c_clip = 50.0
    args = (nets.critic_spec, nets.critic1, ba, y, be, 0.3, c_clip, use_clip)
    loss, grads, parts = tr.online_critic_loss(*args)
    assert abs(loss - oracles.weighted_critic(nets.critic1, ba, y, be, 0.3, c_clip, use_clip)) <= 1e-10
    assert parts["l_ba"] == pytest.approx(oracles.td_loss(nets.critic1, ba, y), abs=1e-10)
    assert parts["l_be"] == pytest.approx(oracles.mc_loss(nets.critic1, be), abs=1e-10)
    num = central_diff(lambda: tr.online_critic_loss(*args)[0], nets.critic1.flat)
    assert max_rel_err(grads.flat, num) < 1e-5


def test_clipped_agent_term_has_no_gradient():
    nets = make_nets()
    ba, be = make_batch(4), make_batch(5)
    y = ba.r + 40.0  # huge TD error
    loss, grads, parts = tr.online_critic_loss(nets.critic_spec, nets.critic1, ba, y, be, 0.6, 0.5, True)
    assert parts["l_ba"] > 0.5 and parts["l_ba_clipped"] == 0.5
    assert loss == pytest.approx(0.6 * 0.5 + 0.4 * parts["l_be"], abs=1e-12)
    _, mc_only, _ = tr.online_critic_loss(nets.critic_spec, nets.critic1, ba, y, be, 0.0, 0.5, True)
    assert np.allclose(grads.flat, 0.4 * mc_only.flat, atol=1e-14)


def test_online_actor_loss_value_and_grad():
    nets = make_nets()
    ba, be = make_batch(6), make_batch(7)
    loss, grads, terms = tr.online_actor_loss(nets, ba, be, 0.4)
    assert abs(loss - oracles.online_actor(nets, ba, be, 0.4)) <= 1e-10
    num = central_diff(lambda: tr.online_actor_loss(nets, ba, be, 0.4)[0], nets.actor.flat)
    assert max_rel_err(grads.flat, num) < 1e-5


def test_plain_actor_loss_uses_first_critic():
    nets = make_nets()
    ba = make_batch(6)
    loss, _, _ = tr.online_actor_loss(nets, ba, None, 0.4, use_min=False)
    assert loss == pytest.approx(-oracles.mean(oracles.q(nets.critic1, ba.s, oracles.actor(nets, ba.s))), abs=1e-10)


# -- agent advantage -----------------------------------------------------------------


def test_advantage_values():
    assert tr.agent_advantage(2.0, 2.0) == 0.5
    assert tr.agent_advantage(3.0, 1.0) == 0.75
    assert tr.agent_advantage(-1.0, -3.0) == 0.25
    with pytest.raises(DegenerateAdvantageError):
        tr.agent_advantage(1.0, -1.0)


def test_batch_advantage_modes_and_fallbacks():
    qa = (np.array([-1.0, -3.0]), np.array([-2.0, -1.0]))
    qe = (np.array([-1.0, -1.0]), np.array([-0.5, -2.0]))
    a_a, m_a, m_e = tr.batch_advantage(qa, qe)
    assert (m_a, m_e) == (-2.5, -1.5) and a_a == pytest.approx(2.5 / 4.0)
    # argmin: critic means over both batches are -1.5 and -1.375, so critic 1 is used.
    a_a, m_a, m_e = tr.batch_advantage(qa, qe, "argmin")
    assert (m_a, m_e) == (-2.0, -1.0)
    with pytest.warns(RuntimeWarning):
        a_a, _, _ = tr.batch_advantage((np.array([1.0]),) * 2, (np.array([-1.0]),) * 2)
    assert a_a == 0.5
    a_a, _, _ = tr.batch_advantage((np.array([3.0]),) * 2, (np.array([-1.0]),) * 2)
    assert a_a == 1.0


# -- configuration ------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(RejectedInputError):
        AwetConfig(c_l=1.5)
    with pytest.raises(RejectedInputError):
        AwetConfig(base_alg="sac")
    with pytest.raises(RejectedInputError):
        AwetConfig(policy_delay=0)


def test_ddpg_variant_keeps_twin_critics():
    cfg = tr.base_alg_variant(AwetConfig(base_alg="ddpg"))
    assert cfg.sigma_tilde == 0.0 and cfg.policy_delay == 1
    assert tr.base_alg_variant(AwetConfig()) == AwetConfig()


def test_streams_are_distinct_per_cell():
    a = tr.make_streams(0, (1,))
    b = tr.make_streams(0, (2,))
    assert a["sampling"].integers(1 << 30) != b["sampling"].integers(1 << 30)
    assert tr.stream_ids(3, (4,))[0] == "3:4:init"


# -- trainer ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def reach_expert():
    return ExpertBuffer(annotate_mc_returns(generate_demos("reach_point", 6, seed=0), 0.98))


def small_config(**kw):
    base = dict(hidden_sizes=(16, 16), offline_steps=20, online_episodes=3, batch_e=16, batch_a=16)
    base.update(kw)
    return AwetConfig(**base)


def test_run_is_deterministic(reach_expert):
    def run():
        t = Trainer(make("reach_point"), small_config(), reach_expert, seed=5)
        t.run_offline_stage()
        t.run_online_stage()
        return t.nets.actor.flat.copy(), t.agent.digest()

    (a1, d1), (a2, d2) = run(), run()
    assert np.array_equal(a1, a2) and d1 == d2


def test_one_update_per_env_step_and_policy_delay(reach_expert):
    t = Trainer(make("reach_point"), small_config(use_early_termination=False), reach_expert, seed=1)
    t.run_offline_stage()
    logs = t.run_online_stage(3)
    assert [lg.updates for lg in logs] == [50, 50, 50]
    assert t.stats.updates == 150 and t.stats.actor_updates == 75
    assert len(t.agent) == 150 and t.stats.env_steps == 150


def test_gate_called_once_per_episode(reach_expert):
    t = Trainer(make("reach_point"), small_config(), reach_expert, seed=2)
    t.run_offline_stage()
    logs = t.run_online_stage(4)
    assert t.stats.gate_calls == 4
    assert all(lg.gate in ("continue", "terminate_and_discard") for lg in logs)


def test_expert_buffer_required(reach_expert):
    with pytest.raises(MissingAnnotationError):
        Trainer(make("reach_point"), small_config(), None)
    # The from-scratch baseline runs without demos.
    t = Trainer(make("reach_point"), tr.td3_baseline_config(small_config()), None, seed=0)
    t.run_offline_stage()
    t.run_online_stage(2)
    assert t.stats.updates == 100


def test_all_rejected_episodes_train_nothing(reach_expert):
    task = make("reach_point")
    mon = TerminationMonitor(tuple(reach_expert.features()), -1.0, 25)
    t = Trainer(task, small_config(), reach_expert, seed=3, monitor=mon)
    t.run_offline_stage()
    before = t.nets.copy()
    logs = t.run_online_stage(5)
    assert t.stats.updates == 0 and t.stats.discarded == 5 and len(t.agent) == 0
    assert all(lg.steps == 25 for lg in logs)
    assert np.array_equal(before.actor.flat, t.nets.actor.flat)


def test_offline_stage_reduces_bc_error(reach_expert):
    t = Trainer(make("reach_point"), small_config(offline_steps=300, c_l=0.9), reach_expert, seed=0)
    batch = Batch(reach_expert.s, reach_expert.a, reach_expert.r, reach_expert.s_next, reach_expert.d, reach_expert.q_mc)
    before = tr.offline_actor_loss(t.nets, batch, 1.0, 0.0)[0]
    t.run_offline_stage()
    after = tr.offline_actor_loss(t.nets, batch, 1.0, 0.0)[0]
    assert after < 0.8 * before


def test_evaluate_counts_successes_exactly():
    task = make("reach_point")
    nets = AgentNets.create(4, 2, np.ones(2), (8,), np.random.default_rng(0))
    res = tr.evaluate(task, nets, range(7))
    assert res.episodes == 7 and res.success_rate == res.successes / 7


def test_loss_reports_stream(reach_expert):
    reports = []
    t = Trainer(make("reach_point"), small_config(), reach_expert, seed=4, report_sink=reports.append)
    t.run_offline_stage()
    t.run_online_stage(2)
    assert len(reports) == t.stats.updates
    for rep in reports:
        assert len(rep.as_row()) == len(tr.LossReport.FIELDS)
        assert abs(rep.l_ba_clipped[0]) <= t.config.c_clip
        assert 0.0 < rep.a_a < 1.0


def test_nets_copy_is_deep():
    nets = make_nets()
    other = nets.copy()
    other.actor.flat[0] += 1.0
    other.actor_opt.m[0] = 3.0
    assert nets.actor.flat[0] != other.actor.flat[0] and nets.actor_opt.m[0] == 0.0
