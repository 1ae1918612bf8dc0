# %% [markdown]
# # Road layout and simulated detections
#
# A road is a set of one-way lanes, each lined with magnetic sensors at a
# fixed spacing. Every sensor reports a timestamp when a vehicle passes.

# %%
from collections import Counter

from magtrack import LayoutConfig, Scenario, build_layout, preprocess, simulate

layout = build_layout(LayoutConfig(n_lanes=2, lane_length_m=300.0, spacing_m=15.0))
print(layout)
print([n.chainage_m for n in layout.lanes[0].sensors])

# %% [markdown]
# Simulate ten minutes of traffic. Each passage is dropped with probability
# `p_l`, and kept timestamps get 50 ms of Gaussian clock jitter. A few false
# detections are sprinkled in, mostly below the strength threshold.

# %%
sc = Scenario(layout=LayoutConfig(n_lanes=2, lane_length_m=300.0), duration_s=600.0, p_false=0.005, seed=3)
batch, truth = simulate(sc, layout)
print(f"{len(truth.vehicles)} vehicles, {len(batch)} detections, {truth.n_true_detections} true")

# %%
first = min(truth.vehicles.values(), key=lambda v: v.samples[0].t_us)
print(first.vehicle_id, first.vehicle_class)
for s in first.samples[:4]:
    print(f"  {s.sensor_id}  t={s.t_us}  x={s.chainage_m:5.1f} m  v={s.speed_mps:.2f} m/s")

# %% [markdown]
# Preprocessing drops weak reports and bursts from one sensor inside the
# dedup window. True passages are always strong enough to survive.

# %%
clean = preprocess(batch)
kinds = Counter("true" if truth.labels[d.key] else "false" for d in clean)
print(f"kept {len(clean)} of {len(batch)}: {dict(kinds)}")
