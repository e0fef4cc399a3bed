# %% [markdown]
# # Expert demos and Monte-Carlo returns
#
# The scripted experts roll out each task. Every transition then gets its
# discounted reward-to-go, which is the regression target for the critics
# during the offline stage.

# %%
import numpy as np

from awet.demos import ExpertBuffer, annotate_mc_returns, generate_demos, mc_returns
from awet.envs import make

task = make("reach_point")
demos = annotate_mc_returns(generate_demos(task, 20, seed=0), gamma=0.98)
print(f"{len(demos)} demos, lengths {sorted({len(t) for t in demos})}")

# %% [markdown]
# Rewards are non-positive everywhere, so the returns are too. The return at
# step 0 summarizes how quickly the expert closed the gap.

# %%
first = demos[0]
print("rewards[:5]  ", np.round(first.rewards[:5], 3))
print("returns[:5]  ", np.round(mc_returns(first.rewards, 0.98)[:5], 3))
print("return at t=0 over all demos: mean %.2f, min %.2f"
      % (np.mean([mc_returns(t.rewards, 0.98)[0] for t in demos]),
         np.min([mc_returns(t.rewards, 0.98)[0] for t in demos])))

# %% [markdown]
# The expert buffer flattens the annotated demos into arrays. Sampling draws
# indices from whichever generator you pass in.

# %%
buf = ExpertBuffer(demos)
batch = buf.sample(4, np.random.default_rng(1))
print(len(buf), "transitions; sampled q_mc:", np.round(batch.q_mc, 3))
