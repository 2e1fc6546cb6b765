# %% [markdown]
# From an interaction log to training sequences and evaluation users
#
# The synthetic generator plants one liked cluster per user, so about a quarter
# of all interactions are dislikes.  The same pipeline runs on any
# `user_id, item_id, value, timestamp` file.

# %%
import numpy as np

from pnfrec import data
from pnfrec.synth import THRESHOLD, SynthConfig, expected_negative_share, generate

res = generate(SynthConfig(n_users=400, n_items=120, n_clusters=6, interactions_per_user=25, seed=1))
log = res.log
print(f"{log.num_users} users, {log.num_items} items, {len(log)} interactions")
print(f"disliked share {np.mean(log.values < THRESHOLD):.3f} (generator expects {expected_negative_share(res.config):.3f})")

# %% [markdown]
# 5-core filtering repeats until every user and item has at least five records.

# %%
core = data.kcore_filter(log, 5)
print("after 5-core:", core.num_users, "users,", core.num_items, "items")

# %% [markdown]
# Values at or above the threshold are positive.  Each user gets a positive
# sequence and a negative sequence, both in time order and truncated to the
# most recent `l` items.

# %%
labeled = data.assign_feedback(core, THRESHOLD)
seqs = data.build_sequences(labeled, l=10)
u = 0
flags = "".join("+" if f else "-" for f in seqs.full_positive[u])
print("user 0 history polarity:", flags)
print("positive sequence:", seqs.pos[u])
print("negative sequence:", seqs.neg[u])

# %% [markdown]
# The split puts one global time boundary at the 90th percentile of timestamps.
# Users with activity after it become validation or test users: their first
# post-boundary record is the ground truth and everything before it is input.

# %%
split = data.temporal_split(labeled, 0.9, seed=0)
print("boundary timestamp:", split.boundary_timestamp)
print("training interactions:", len(split.train))
print("validation users:", len(split.val), " test users:", len(split.test))
print("test ground truth negative:", f"{np.mean(~split.test.gt_positive):.1%}")
assert (split.train.log.timestamps < split.boundary_timestamp).all()
