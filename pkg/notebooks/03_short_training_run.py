# %% [markdown]
# # A short training run
#
# Offline pre-training on the demos, then a brief online phase. The nets are
# small so this finishes in well under a minute on one core.

# %%
from awet.demos import ExpertBuffer, annotate_mc_returns, generate_demos
from awet.envs import make
from awet.trainer import AwetConfig, Trainer, evaluate

task = make("reach_point")
expert = ExpertBuffer(annotate_mc_returns(generate_demos(task, 50, seed=0), 0.98))
config = AwetConfig(hidden_sizes=(64, 64), c_l=0.9, offline_steps=500, online_episodes=40)
trainer = Trainer(task, config, expert, seed=0)

# %%
eval_seeds = list(range(1000, 1050))
trainer.run_offline_stage()
print("after offline stage:", evaluate(task, trainer.nets, eval_seeds))

# %% [markdown]
# Each online episode is followed by one update per environment step. The
# stats keep the discard count and the mean agent weight used in the critic
# loss.

# %%
logs = trainer.run_online_stage(config.online_episodes)
print(f"{len(logs)} episodes, {trainer.stats.updates} updates, {trainer.stats.discarded} discarded, "
      f"mean agent weight {trainer.stats.a_a_mean:.3f}")
print("after online stage:", evaluate(task, trainer.nets, eval_seeds))

# %% [markdown]
# Forty episodes is too short to judge. Success often dips early in the online
# phase while the critics adjust to on-policy data, so compare longer runs with
# `awet train` before drawing conclusions.
