# %% [markdown]
# # Blending a face from expression targets
#
# A rig is a neutral mesh plus one target mesh per action unit.  Weights
# for the targets live on a simplex: each is non-negative, and whatever is
# left over from 1 goes to the neutral shape.

# %%
import numpy as np

from facecap import BlendshapeBasis, ExpressionWeights, clamp_project, evaluate

rng = np.random.default_rng(0)
neutral = rng.normal(size=(8, 3))
targets = [neutral + rng.normal(scale=0.2, size=(8, 3)) for _ in range(3)]
basis = BlendshapeBasis.from_meshes([neutral, *targets])
print(basis.n, "targets,", basis.n_vertices, "vertices")

# %% [markdown]
# All-zero weights give back the neutral mesh, and a one-hot vector picks
# out its target exactly.

# %%
print(np.array_equal(evaluate(basis, ExpressionWeights.neutral(3)), neutral))
print(np.array_equal(evaluate(basis, ExpressionWeights([0.0, 1.0, 0.0])), targets[1]))

# %% [markdown]
# Half of target 0 lands halfway between neutral and that target.  The
# neutral weight is derived, never stored.

# %%
w = ExpressionWeights([0.5, 0.0, 0.0])
print("e0 =", w.e0)
print(np.allclose(evaluate(basis, w), 0.5 * neutral + 0.5 * targets[0]))

# %% [markdown]
# A regressor can emit weights outside the simplex.  `clamp_project` zeroes
# the negatives and rescales if the sum is over one.

# %%
raw = np.array([-0.1, 0.8, 0.7])
fixed = clamp_project(raw)
print(fixed, fixed.sum())
