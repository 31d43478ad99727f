# %% [markdown]
# # Evaluation and the t_v sweep
#
# Counts from a results table turn into precision, recall and F1. A sweep
# over t_v shows the trade-off on a synthetic scene.

# %%
from phasetrack.geometry import BBox
from phasetrack.io import parse_grid
from phasetrack.metrics import prf, sweep_tv
from phasetrack.synth import NoiseModel, SynthConfig, constant_pan, corrupt, generate
from phasetrack.tracker import build_tracks

p, r, f1 = prf(94, 28, 24)
print(f"P={p:.2f} R={r:.2f} F1={f1:.2f}")

# %% A slow pan over three objects with missed detections and clutter
noise = NoiseModel(miss_prob=0.4, jitter_sigma=1.0, fp_rate=0.1, fp_lifetime=2)
cfg = SynthConfig(world_size=(256, 256), frame_size=(160, 160), camera_origin=(10, 10),
                  camera_path=constant_pan(40, (2, 1)),
                  objects=[("tire", BBox(x, 110, 16, 16)) for x in (100, 130, 160)], noise=noise)
scene = generate(cfg)
dets = corrupt(scene.gt, noise, seed=1, table=scene.true_table, frame_size=cfg.frame_size)
tracks = build_tracks(dets, scene.true_table)

# %%
for tv, precision, recall in sweep_tv(tracks, scene.gt, scene.true_table, parse_grid("0.1:0.1:0.9")):
    print(f"t_v={tv:.1f}  precision={precision:.2f}  recall={recall:.2f}")
