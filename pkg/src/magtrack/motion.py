"""Constant-velocity / constant-acceleration kinematics and Kalman filtering.

State vectors are ``[position, velocity]`` (CV) or
``[position, velocity, acceleration]`` (CA) in metres / seconds along the
lane. Only position is ever measured.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

A_MAX_DEFAULT = 100 / 3.6 / 10.0  # 0 -> 100 km/h in 10 s


class NonpositiveSpeed(ValueError):
    pass


class NoArrival(ValueError):
    """The vehicle stops before covering the distance."""


@dataclass(frozen=True)
class MotionModelConfig:
    kind: str = "CV"
    dt_s: float = 1.0
    q_cv: float = (0.5 * A_MAX_DEFAULT) ** 2
    q_a: float = (0.5 * A_MAX_DEFAULT) ** 2
    a_max: float = A_MAX_DEFAULT
    r_pos: float = 0.25
    sigma_clock_s: float = 0.05
    # new-track prior
    v0_mps: float = 16.7
    sigma_v0_mps: float = 8.0

    def __post_init__(self):
        if self.kind not in ("CV", "CA"):
            raise ValueError(f"kind must be 'CV' or 'CA', got {self.kind!r}")
        if not self.dt_s > 0:
            raise ValueError("dt_s must be positive")
        if min(self.q_cv, self.q_a, self.r_pos, self.sigma_clock_s) < 0:
            raise ValueError("noise parameters must be nonnegative")
        if not self.a_max > 0:
            raise ValueError("a_max must be positive")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "CV" else 3

    def measurement_variance(self, speed: float) -> float:
        """Position noise: sensor placement plus clock jitter seen at ``speed``."""
        return self.r_pos + (speed * self.sigma_clock_s) ** 2


@dataclass(frozen=True, eq=False)
class KalmanState:
    t_us: int
    x: np.ndarray
    P: np.ndarray

    @property
    def position(self) -> float:
        return float(self.x[0])

    @property
    def velocity(self) -> float:
        return float(self.x[1])

    @property
    def acceleration(self) -> float:
        return float(self.x[2]) if len(self.x) > 2 else 0.0


def initial_state(t_us: int, position: float, config: MotionModelConfig) -> KalmanState:
    """New-track prior centred on a sensor chainage."""
    x = [position, config.v0_mps]
    var = [config.r_pos, config.sigma_v0_mps**2]
    if config.kind == "CA":
        x.append(0.0)
        var.append((config.a_max / 2) ** 2)
    return KalmanState(t_us, np.array(x, dtype=float), np.diag(var))


def predict_arrival_cv(t_k: int, s: float, d: float) -> int:
    if not s > 0:
        raise NonpositiveSpeed(f"speed must be positive, got {s}")
    if d < 0:
        raise ValueError("distance must be nonnegative")
    return t_k + round(1e6 * d / s)


def predict_arrival_ca(t_k: int, s: float, a: float, d: float) -> int:
    if d < 0:
        raise ValueError("distance must be nonnegative")
    if s < 0:
        raise NoArrival("negative speed")
    if abs(a) < 1e-6:
        if s <= 0:
            raise NoArrival("vehicle at rest without acceleration")
        return predict_arrival_cv(t_k, s, d)
    if s <= 0 and a <= 0:
        raise NoArrival("vehicle at rest and not accelerating")
    disc = s * s + 2 * a * d
    if disc <= 0:
        raise NoArrival(f"decelerating vehicle stops before {d} m")
    # (sqrt(disc) - s) / a rewritten as 2d / (sqrt(disc) + s): no cancellation for small a
    travel = 2 * d / (math.sqrt(disc) + s)
    return t_k + round(1e6 * travel)


def transition(dt: float, dim: int) -> np.ndarray:
    if dim == 2:
        return np.array([[1.0, dt], [0.0, 1.0]])
    return np.array([[1.0, dt, dt * dt / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])


def process_noise(dt: float, config: MotionModelConfig) -> np.ndarray:
    """Piecewise-constant white acceleration (CV) or white jerk (CA)."""
    if config.kind == "CV":
        g = np.array([dt * dt / 2, dt])
        return config.q_cv * np.outer(g, g)
    g = np.array([dt**3 / 6, dt * dt / 2, dt])
    return config.q_a * np.outer(g, g)


def _sym(P):
    return (P + P.T) / 2


def kf_predict(state: KalmanState, to_t_us: int, config: MotionModelConfig) -> KalmanState:
    if to_t_us < state.t_us:
        raise ValueError(f"cannot predict backwards ({to_t_us} < {state.t_us})")
    if to_t_us == state.t_us:
        return state
    dt = (to_t_us - state.t_us) / 1e6
    F = transition(dt, len(state.x))
    x = F @ state.x
    P = _sym(F @ state.P @ F.T + process_noise(dt, config))
    return KalmanState(to_t_us, x, P)


def kf_update(state: KalmanState, z_pos: float, r: float, at_t_us: int | None = None) -> KalmanState:
    """Scalar position measurement update (Joseph form)."""
    if not r > 0:
        raise ValueError("measurement variance must be positive")
    if at_t_us is not None and at_t_us != state.t_us:
        raise ValueError("update time must equal state time; predict first")
    P = state.P
    n = len(state.x)
    s = P[0, 0] + r
    K = P[:, 0] / s
    x = state.x + K * (z_pos - state.x[0])
    IKH = np.eye(n)
    IKH[:, 0] -= K
    P = _sym(IKH @ P @ IKH.T + r * np.outer(K, K))
    return KalmanState(state.t_us, x, P)


def covariance_trace(
    config: MotionModelConfig,
    n_steps: int,
    r: float | None = None,
    P0: np.ndarray | None = None,
) -> list[float]:
    """Velocity variance after each predict+update step at fixed ``config.dt_s``.

    This is the data-free Riccati recursion; ``r`` defaults to the measurement
    variance at the prior speed.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if r is None:
        r = config.measurement_variance(config.v0_mps)
    dim = config.dim
    F = transition(config.dt_s, dim)
    Q = process_noise(config.dt_s, config)
    P = initial_state(0, 0.0, config).P if P0 is None else np.asarray(P0, dtype=float)
    out = []
    for _ in range(n_steps):
        P = F @ P @ F.T + Q
        K = P[:, 0] / (P[0, 0] + r)
        IKH = np.eye(dim)
        IKH[:, 0] -= K
        P = _sym(IKH @ P @ IKH.T + r * np.outer(K, K))
        out.append(float(P[1, 1]))
    return out


def write_trace_csv(values, path_or_file) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(["step", "velocity_variance"])
        for k, v in enumerate(values, 1):
            w.writerow([k, repr(v)])
    finally:
        if own:
            fh.close()
