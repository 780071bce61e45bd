# %% [markdown]
# # Smoothing a noisy curve
#
# Two causal smoothers are available.  A scalar Kalman filter tracks the
# signal with a random-walk (or constant-velocity) model.  A Savitzky-Golay
# kernel fits a low-order polynomial to the last `2n + 1` samples and reads
# off the newest point.  The hybrid filter runs the Kalman estimates
# through the polynomial fit.

# %%
import numpy as np

from facecap import HybridConfig, KalmanConfig, SGKernel, filter_series, sg_smooth

# %% [markdown]
# The polynomial fit is exact for polynomials it can represent.  Here is a
# quadratic through a radius-3 window.

# %%
k = SGKernel(radius=3, order=2, mode="endpoint")
t = np.arange(-3, 4)
print(sg_smooth(1 + 2 * t - 0.5 * t**2, k), "vs", 1 + 2 * 3 - 0.5 * 9)
print("center taps x 21:", np.round(SGKernel(3, 2, "center").row * 21, 6))

# %% [markdown]
# Now a noisy bump.  The score is second-difference energy (the quantity
# that shows up as visible jitter), relative to the raw input.

# %%
rng = np.random.default_rng(1)
frames = np.arange(300)
clean = np.exp(-0.5 * ((frames - 150) / 15.0) ** 2)
noisy = clean + rng.normal(scale=0.05, size=frames.size)


def jitter(x):
    return np.sum(np.diff(x, 2) ** 2)


for mode in ("kalman", "sg", "cascade"):
    out = filter_series(noisy, HybridConfig(mode=mode))
    print(f"{mode:8s} jitter ratio {jitter(out) / jitter(noisy):.3f}  "
          f"peak {out.max():.3f} (clean {clean.max():.3f})")

# %% [markdown]
# Measurement noise `r` trades lag for smoothness.  With `r = 0` the filter
# trusts every sample and returns the input untouched.

# %%
exact = filter_series(noisy, HybridConfig(KalmanConfig(r=0.0), mode="kalman"))
print(np.array_equal(exact, noisy))
