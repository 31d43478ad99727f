# %% [markdown]
# # Tracking with estimates and detection-ratio voting
#
# A static camera sees one object that the detector misses now and then,
# plus a single-frame false positive. The tracker fills the misses with
# estimates; the vote removes the clutter.

# %%
from phasetrack.geometry import BBox
from phasetrack.registration import DisplacementTable
from phasetrack.tracker import Detection, TrackerParams, build_tracks, filter_tracks

table = DisplacementTable.static(range(12))
hits = [0, 1, 2, 4, 5, 8, 9, 11]
dets = [Detection(f, "tire", BBox(40, 40, 20, 20), 0.9) for f in hits]
dets.append(Detection(3, "tire", BBox(100, 10, 16, 16), 0.4))

# %%
params = TrackerParams(max_gap=3)
tracks = build_tracks(dets, table, params)
for t in tracks:
    pattern = "".join("D" if e.detected else "e" for e in t.elements)
    print(f"track {t.id}: {pattern:<12} l={t.l} m={t.m} v={t.v:.2f}")

# %% Only the object survives the default threshold
kept = filter_tracks(tracks, params.t_v)
print("kept:", [t.id for t in kept])
