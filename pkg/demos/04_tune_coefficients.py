# %% [markdown]
# Choosing alpha and beta
#
# The tuner first sweeps alpha with beta fixed at 0, keeps the best alpha by
# validation NDCG_p@10, then sweeps beta at that alpha.  Ties go to the smaller
# coefficient.  A coarse grid keeps this demo short; the default grid is 0 to 1
# in steps of 0.05.

# %%
from pnfrec import data
from pnfrec.model import EncoderConfig
from pnfrec.synth import THRESHOLD, SynthConfig, generate
from pnfrec.training import TrainConfig, TuneGrid, tune_incremental

res = generate(SynthConfig(n_users=400, n_items=100, n_clusters=5, interactions_per_user=25, seed=3))
split = data.temporal_split(data.assign_feedback(data.kcore_filter(res.log, 5), THRESHOLD), 0.9, seed=3)
base = TrainConfig(encoder=EncoderConfig(d=32, num_blocks=1, l=20), lr=3e-3, max_epochs=20, patience=4, seed=3)

result = tune_incremental(split, base, TuneGrid((0.0, 0.25, 0.5), (0.0, 0.25)))
print("\n".join(result.table_lines()))
print(f"chosen alpha={result.alpha} beta={result.beta}")
