# %% [markdown]
# # Motion models
#
# Between sensors a vehicle is modelled with constant velocity (CV) or
# constant acceleration (CA). The arrival time at the next sensor follows
# from the kinematics; the Kalman filter tracks speed from position-only
# measurements.

# %%
from magtrack.motion import (
    A_MAX_DEFAULT,
    MotionModelConfig,
    covariance_trace,
    initial_state,
    kf_predict,
    kf_update,
    predict_arrival_ca,
    predict_arrival_cv,
)

print(predict_arrival_cv(0, 15.0, 15.0))  # one second at 15 m/s
print(predict_arrival_ca(0, 10.0, 2.0, 24.0))  # 24 = 10 t + t^2  ->  t = 2 s

# %% [markdown]
# Feed a vehicle at 20 m/s past sensors 15 m apart. The prior speed is
# 16.7 m/s with a wide variance; a few updates pull it in.

# %%
cfg = MotionModelConfig()
st = initial_state(0, 0.0, cfg)
for k in range(1, 6):
    t = round(k * 0.75e6)
    st = kf_predict(st, t, cfg)
    st = kf_update(st, 15.0 * k, cfg.measurement_variance(st.velocity))
    print(f"sensor {k}: v={st.velocity:6.3f}  var(v)={st.P[1, 1]:.4f}")

# %% [markdown]
# The covariance recursion alone (no data) shows how certain each model can
# get. CV settles lowest; CA with more jerk noise settles higher.

# %%
for name, c in [
    ("CV", MotionModelConfig(kind="CV")),
    ("CA q=(a/2)^2", MotionModelConfig(kind="CA", q_a=(0.5 * A_MAX_DEFAULT) ** 2)),
    ("CA q=a^2", MotionModelConfig(kind="CA", q_a=A_MAX_DEFAULT**2)),
]:
    tr = covariance_trace(c, 60)
    print(f"{name:14s} step1={tr[0]:7.3f} step10={tr[9]:.3f} step60={tr[-1]:.3f}")
