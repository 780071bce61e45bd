# %% [markdown]
# # Training through noisy labels with a teacher
#
# When a label sits far from the teacher's prediction, the student is
# trained toward the teacher instead.  Otherwise it trains toward the label,
# with an extra penalty whenever it is doing worse than the teacher.
#
# The toy task: smooth 6-to-8 dimensional regression, with 30% of the
# training labels replaced by uniform noise.

# %%
from facecap import ARDConfig, DistillBatch, ard_loss
from facecap.regressor import TrainingSchedule, run_experiment

# %% [markdown]
# One sample per branch first.

# %%
def one(s, t, y, **kw):
    return ard_loss(DistillBatch([[s]], [[t]], [[y]]), ARDConfig(**kw))[0]


print(f"label far from teacher:   {one(0.5, 0.2, 1.0, mu=0.5):.4f}")
print(f"student behind teacher:   {one(0.94, 0.95, 1.0, mu=0.5, v_penalty=2.0):.4f}")
print(f"student ahead of teacher: {one(0.97, 0.95, 1.0, mu=0.5, v_penalty=2.0):.4f}")

# %% [markdown]
# Now the full experiment.  The teacher is fit on clean labels; two
# students share initial weights and batch order, so the loss is the only
# difference between them.

# %%
report = run_experiment(n_samples=2000, p_corrupt=0.3, seed=0,
                        schedule=TrainingSchedule(epochs=40))
print(f"teacher  {report.teacher_mse:.5f}")
print(f"ard      {report.ard_mse:.5f}")
print(f"plain    {report.baseline_mse:.5f}")
print(f"mu {report.mu:.3f}: {report.flagged_outliers} samples flagged, "
      f"{report.flagged_corrupted} of the {report.corrupted} corrupted ones among them")

# %% [markdown]
# Without corruption the two students should land close together.

# %%
clean = run_experiment(n_samples=2000, p_corrupt=0.0, seed=0)
print(f"ard {clean.ard_mse:.5f}  plain {clean.baseline_mse:.5f}")
