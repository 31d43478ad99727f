# %% [markdown]
# # Phase correlation on a textured frame
#
# Shift a frame by a known number of pixels and recover it from the
# normalised cross-power spectrum.

# %%
import numpy as np
from scipy.ndimage import uniform_filter

from phasetrack.registration import correlation_surface, phase_correlate

rng = np.random.default_rng(0)
world = uniform_filter(rng.random((256, 256)), 3)
f = world[64:192, 64:192]

# %% A circular shift is recovered exactly
g = np.roll(f, (7, -12), axis=(0, 1))  # down 7 rows, left 12 columns
d = phase_correlate(f, g)
print("circular shift -> dx", d.dx, "dy", d.dy, f"(score {d.peak_score:.3f})")

# %% Two overlapping crops of the world, with sensor noise
dx, dy = 10, -6
g = world[64 - dy:192 - dy, 64 - dx:192 - dx] + rng.normal(0, 0.02, f.shape)
d = phase_correlate(f + rng.normal(0, 0.02, f.shape), g)
print("crop shift     -> dx", d.dx, "dy", d.dy, f"(score {d.peak_score:.3f})")

# %% The correlation surface is sharp at the displacement and flat elsewhere
surface = correlation_surface(f, g)
print("peak index", tuple(int(i) for i in np.unravel_index(np.argmax(np.abs(surface)), surface.shape)))
print("score of unrelated frames", round(phase_correlate(f, rng.random(f.shape)).peak_score, 4))
