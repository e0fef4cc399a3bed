# %% [markdown]
# # The DTW early-termination gate
#
# Halfway through an online episode the partial rollout is compared to every
# expert demo with dynamic time warping. If the closest match is still farther
# than the mean pairwise distance among the demos, the episode is stopped and
# its transitions are discarded.

# %%
import numpy as np

from awet.demos import ExpertBuffer, annotate_mc_returns, generate_demos
from awet.dtw import TerminationMonitor, compute_threshold, dtw_distance, gate_rollout
from awet.envs import make

task = make("pusher2")
demos = annotate_mc_returns(generate_demos(task, 10, seed=0), 0.98)
corpus = ExpertBuffer(demos).features()
s_th = compute_threshold(corpus)
print(f"threshold over {len(corpus)} demos: {s_th:.3f}")

# %% [markdown]
# A tiny hand example: aligning [0, 1, 2] with [0, 2] costs 1, since the
# middle point has to pair with one of its neighbours.

# %%
print(dtw_distance(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0])))

# %% [markdown]
# Now gate two partial rollouts: the expert's own first half, and a random
# policy's first half.

# %%
monitor = TerminationMonitor.from_corpus(corpus, task.spec.max_steps)
half = (task.spec.max_steps + 1) // 2
rng = np.random.default_rng(3)
state, obs = task.reset(3)
random_obs = [obs]
for _ in range(half - 1):
    res = task.step(state, rng.uniform(task.spec.action_low, task.spec.action_high))
    state, obs = res.state, res.next_obs
    random_obs.append(obs)

for name, partial in [("expert", demos[0].observations()[:half]), ("random", np.array(random_obs))]:
    decision, dist = gate_rollout(monitor, partial)
    print(f"{name:>6}: min distance {dist:.3f} -> {decision.name}")

# %% [markdown]
# In the default prefix mode the partial rollout is compared to the first half
# of each demo, but the threshold is computed from whole demos. Whole-demo
# distances are much larger, so even a random rollout clears the bar. Comparing
# against whole demos raises the random rollout's distance to just under the
# threshold, so on this seed the gate does not fire in either mode.

# %%
full = TerminationMonitor.from_corpus(corpus, task.spec.max_steps, comparison_mode="full_expert")
for name, partial in [("expert", demos[0].observations()[:half]), ("random", np.array(random_obs))]:
    decision, dist = gate_rollout(full, partial)
    print(f"{name:>6}: min distance {dist:.3f} -> {decision.name}")
