import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_are

from magtrack.motion import (
    A_MAX_DEFAULT,
    KalmanState,
    MotionModelConfig,
    NoArrival,
    NonpositiveSpeed,
    covariance_trace,
    initial_state,
    kf_predict,
    kf_update,
    predict_arrival_ca,
    predict_arrival_cv,
    process_noise,
    transition,
    write_trace_csv,
)


def test_cv_arrival_examples():
    assert predict_arrival_cv(0, 15.0, 15.0) == 1_000_000
    assert predict_arrival_cv(5, 10.0, 0.0) == 5
    with pytest.raises(NonpositiveSpeed):
        predict_arrival_cv(0, 0.0, 15.0)
    with pytest.raises(NonpositiveSpeed):
        predict_arrival_cv(0, -3.0, 15.0)


def test_ca_arrival_examples():
    # s=10, a=2, d=24: 24 = 10 t + t^2 -> t = 2
    assert predict_arrival_ca(0, 10.0, 2.0, 24.0) == 2_000_000
    # s=10, a=-2, d=24: 24 = 10 t - t^2 -> t = 4 (first root)
    assert predict_arrival_ca(0, 10.0, -2.0, 24.0) == 4_000_000
    with pytest.raises(NoArrival):
        predict_arrival_ca(0, 4.0, -2.0, 15.0)  # stops after 4 m
    with pytest.raises(NoArrival):
        predict_arrival_ca(0, 0.0, 0.0, 15.0)
    assert predict_arrival_ca(0, 0.0, 2.0, 1.0) == 1_000_000


def test_ca_reduces_to_cv_near_zero_accel():
    for a in (0.0, 1e-6, -1e-6, 1e-7):
        assert predict_arrival_ca(7, 12.3, a, 15.0) == predict_arrival_cv(7, 12.3, 15.0)


@given(
    t=st.integers(0, 10**15),
    s=st.floats(0.5, 50),
    a=st.floats(-3, 3),
    d1=st.floats(0, 40),
    d2=st.floats(0, 40),
)
@settings(max_examples=300, deadline=None)
def test_arrival_monotone_in_distance(t, s, a, d1, d2):
    lo, hi = sorted((d1, d2))
    assert predict_arrival_cv(t, s, lo) <= predict_arrival_cv(t, s, hi)
    try:
        far = predict_arrival_ca(t, s, a, hi)
    except NoArrival:
        return
    assert predict_arrival_ca(t, s, a, lo) <= far
    assert predict_arrival_ca(t, s, a, lo) >= t


def test_ca_matches_kinematics_oracle():
    rng = np.random.default_rng(3)
    for _ in range(500):
        s = rng.uniform(1, 30)
        a = rng.uniform(-1, 1)
        d = rng.uniform(0, 30)
        if s * s + 2 * a * d <= 0:
            continue
        # textbook root of d = s t + a t^2 / 2
        t = (-s + math.sqrt(s * s + 2 * a * d)) / a if abs(a) > 1e-3 else d / s
        assert abs(predict_arrival_ca(0, s, a, d) - t * 1e6) <= 2


def test_kf_update_hand_example():
    st0 = KalmanState(0, np.array([0.0, 10.0]), np.eye(2))
    out = kf_update(st0, 1.0, 1.0)
    # K = P[:,0] / (P00 + r) = [0.5, 0]
    assert out.position == pytest.approx(0.5)
    assert out.velocity == pytest.approx(10.0)
    np.testing.assert_allclose(out.P, [[0.5, 0.0], [0.0, 1.0]])


def test_kf_predict_dt_zero_and_backwards():
    cfg = MotionModelConfig()
    s = initial_state(10, 0.0, cfg)
    assert kf_predict(s, 10, cfg) is s
    with pytest.raises(ValueError):
        kf_predict(s, 9, cfg)


def test_kf_update_requires_aligned_time():
    s = initial_state(10, 0.0, MotionModelConfig())
    with pytest.raises(ValueError):
        kf_update(s, 1.0, 1.0, at_t_us=11)
    with pytest.raises(ValueError):
        kf_update(s, 1.0, 0.0)


@given(
    kind=st.sampled_from(["CV", "CA"]),
    steps=st.lists(st.tuples(st.integers(1, 3_000_000), st.floats(-50, 50)), min_size=1, max_size=25),
)
@settings(max_examples=100, deadline=None)
def test_covariance_stays_psd(kind, steps):
    cfg = MotionModelConfig(kind=kind)
    s = initial_state(0, 0.0, cfg)
    for dt, z in steps:
        s = kf_predict(s, s.t_us + dt, cfg)
        s = kf_update(s, z, cfg.measurement_variance(abs(s.velocity)))
        np.testing.assert_allclose(s.P, s.P.T, atol=0)
        assert np.linalg.eigvalsh(s.P).min() >= -1e-9 * max(1.0, np.abs(s.P).max())


def test_transition_and_noise_shapes():
    assert transition(2.0, 2).tolist() == [[1.0, 2.0], [0.0, 1.0]]
    assert transition(2.0, 3)[0, 2] == 2.0
    for kind, n in (("CV", 2), ("CA", 3)):
        Q = process_noise(0.5, MotionModelConfig(kind=kind))
        assert Q.shape == (n, n)
        assert np.linalg.eigvalsh(Q).min() >= -1e-15


def _dare_posterior(cfg, r):
    F = transition(cfg.dt_s, cfg.dim)
    Q = process_noise(cfg.dt_s, cfg)
    H = np.zeros((1, cfg.dim))
    H[0, 0] = 1.0
    Pp = solve_discrete_are(F.T, H.T, Q, np.array([[r]]))
    return Pp - Pp @ H.T @ H @ Pp / (Pp[0, 0] + r)


@pytest.mark.parametrize("kind", ["CV", "CA"])
def test_riccati_limit_matches_dare(kind):
    cfg = MotionModelConfig(kind=kind)
    r = cfg.measurement_variance(cfg.v0_mps)
    trace = covariance_trace(cfg, 2000)
    assert trace[-1] == pytest.approx(_dare_posterior(cfg, r)[1, 1], rel=1e-9)


def test_riccati_converges_long_run():
    cfg = MotionModelConfig()
    tr = covariance_trace(cfg, 100_000)
    assert abs(tr[-1] - tr[-2]) < 1e-12
    assert abs(tr[500] - tr[-1]) < 1e-9


def test_riccati_ordering_cv_ca():
    cv = covariance_trace(MotionModelConfig(kind="CV"), 500)[-1]
    ca_half = covariance_trace(MotionModelConfig(kind="CA", q_a=(0.5 * A_MAX_DEFAULT) ** 2), 500)[-1]
    ca_full = covariance_trace(MotionModelConfig(kind="CA", q_a=A_MAX_DEFAULT**2), 500)[-1]
    assert cv < ca_half < ca_full


def test_riccati_bad_steps():
    with pytest.raises(ValueError):
        covariance_trace(MotionModelConfig(), 0)


def test_trace_csv():
    buf = io.StringIO()
    write_trace_csv([1.5, 0.25], buf)
    assert buf.getvalue().splitlines() == ["step,velocity_variance", "1,1.5", "2,0.25"]


def test_config_validation():
    with pytest.raises(ValueError):
        MotionModelConfig(kind="XX")
    with pytest.raises(ValueError):
        MotionModelConfig(dt_s=0)
    with pytest.raises(ValueError):
        MotionModelConfig(q_cv=-1)
    assert MotionModelConfig(sigma_clock_s=0.05).measurement_variance(10.0) == pytest.approx(0.25 + 0.25)
