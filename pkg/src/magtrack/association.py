"""Track-to-detection association over the time-space network.

Each sensor is processed in chainage order. Tracks whose head sits on the
upstream neighbour compete for the sensor's detections through a padded
bipartite weight matrix:

* track -> detection: Gaussian likelihood of the arrival-time residual
  (zero when the sensor is not adjacent or the detection is not later),
* track -> its own miss column: ``p_l`` (missed detection),
* new-vehicle row -> detection: ``w_new`` (vehicle first seen here),
* new-vehicle row -> miss column: 1 (neutral padding).

The matching maximises the product of the chosen weights (sum of logs).
"""

from __future__ import annotations

import bisect
import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Detection, DetectionBatch, LayoutError, SensorLayout, downstream_adjacent
from .matching import Assignment, max_weight_matching
from .motion import (
    KalmanState,
    MotionModelConfig,
    NoArrival,
    initial_state,
    kf_predict,
    kf_update,
    predict_arrival_ca,
    predict_arrival_cv,
)


class _Miss:
    def __repr__(self):
        return "MISS"


MISS = _Miss()


@dataclass(frozen=True)
class AssociationConfig:
    p_l: float = 0.05
    sigma_t_s: float = 0.3
    w_min: float = 1e-4
    max_hops: int = 1
    miss_limit: int = 3
    # weight of "first seen at this sensor"; None means p_l
    w_new: float | None = None
    # widen sigma_t by the track's own arrival-time uncertainty, up to this cap
    inflate_sigma: bool = True
    sigma_t_max_s: float = 0.9
    v_floor_mps: float = 0.5

    def __post_init__(self):
        if not 0 < self.p_l < 1:
            raise ValueError("p_l must lie in (0, 1)")
        if not self.sigma_t_s > 0:
            raise ValueError("sigma_t_s must be positive")
        if not 0 <= self.w_min < 1:
            raise ValueError("w_min must lie in [0, 1)")
        if self.max_hops < 1:
            raise ValueError("max_hops must be a positive integer")
        if self.miss_limit < 0:
            raise ValueError("miss_limit must be nonnegative")
        if self.w_new is not None and not 0 < self.w_new <= 1:
            raise ValueError("w_new must lie in (0, 1]")
        if self.sigma_t_max_s < self.sigma_t_s:
            raise ValueError("sigma_t_max_s must be >= sigma_t_s")
        if not self.v_floor_mps > 0:
            raise ValueError("v_floor_mps must be positive")

    @property
    def new_weight(self) -> float:
        return self.p_l if self.w_new is None else self.w_new

    @property
    def max_sigma_s(self) -> float:
        return self.sigma_t_max_s if self.inflate_sigma else self.sigma_t_s

    @property
    def gate_us(self) -> int:
        """Largest arrival-time residual that can still pass the ``w_min`` gate."""
        if self.w_min <= 0:
            return 2**62
        return math.ceil(1e6 * self.max_sigma_s * math.sqrt(2 * math.log(1 / self.w_min)))


@dataclass
class TrackPoint:
    t_us: int
    chainage_m: float
    speed_mps: float
    sensor_id: str | None  # None marks a missed detection

    def to_dict(self) -> dict:
        return {
            "t_us": self.t_us,
            "chainage_m": self.chainage_m,
            "speed_mps": self.speed_mps,
            "sensor_id": self.sensor_id,
        }


@dataclass
class VehicleTrack:
    vehicle_id: str
    lane_id: int
    points: list[TrackPoint] = field(default_factory=list)

    def detections(self) -> list[TrackPoint]:
        return [p for p in self.points if p.sensor_id is not None]


@dataclass
class TrackHead:
    vehicle_id: str
    lane_id: int
    state: KalmanState
    last_sensor: str
    consecutive_misses: int = 0
    track: VehicleTrack | None = None

    def __post_init__(self):
        if self.track is None:
            self.track = VehicleTrack(self.vehicle_id, self.lane_id, [])

    @property
    def head_t_us(self) -> int:
        if self.track and self.track.points:
            return self.track.points[-1].t_us
        return self.state.t_us


@dataclass
class VehicleStore:
    live: dict[str, TrackHead] = field(default_factory=dict)
    completed: list[VehicleTrack] = field(default_factory=list)

    def all_tracks(self) -> list[VehicleTrack]:
        tracks = [h.track for h in self.live.values()] + list(self.completed)
        return sort_tracks(tracks)


def sort_tracks(tracks) -> list[VehicleTrack]:
    return sorted(tracks, key=lambda tr: (tr.lane_id, tr.points[0].t_us if tr.points else 0, tr.vehicle_id))


def f_time_likelihood(t_obs_us: int, t_pred_us: int, sigma_t_s: float) -> float:
    """Peak-normalised Gaussian kernel on the arrival-time residual."""
    if not sigma_t_s > 0:
        raise ValueError("sigma_t_s must be positive")
    z = (t_obs_us - t_pred_us) / 1e6 / sigma_t_s
    return math.exp(-0.5 * z * z)


@dataclass(frozen=True)
class ArrivalPrediction:
    t_us: int
    sigma_s: float


def expected_arrival(
    head: TrackHead,
    chainage_m: float,
    config: AssociationConfig,
    motion: MotionModelConfig,
) -> ArrivalPrediction:
    """Arrival time of a track at ``chainage_m`` and the residual scale to use."""
    st = head.state
    d = max(chainage_m - st.position, 0.0)
    v = st.velocity
    t_pred = None
    if motion.kind == "CA":
        try:
            t_pred = predict_arrival_ca(st.t_us, max(v, 0.0), st.acceleration, d)
        except NoArrival:
            t_pred = None
    if t_pred is None:
        t_pred = predict_arrival_cv(st.t_us, max(v, config.v_floor_mps), d)
    t_pred = max(t_pred, head.head_t_us + 1)
    sigma = config.sigma_t_s
    if config.inflate_sigma:
        ve = max(v, config.v_floor_mps)
        tau = d / ve
        P = st.P
        var_tau = (P[0, 0] + 2 * tau * P[0, 1] + tau * tau * P[1, 1]) / (ve * ve)
        sigma = min(math.sqrt(sigma * sigma + max(float(var_tau), 0.0)), config.sigma_t_max_s)
    return ArrivalPrediction(t_pred, sigma)


def _pair_weight(head, pred: ArrivalPrediction, det: Detection, config) -> float:
    if det.t_us <= head.head_t_us:
        return 0.0
    w = f_time_likelihood(det.t_us, pred.t_us, pred.sigma_s)
    return w if w >= config.w_min else 0.0


def link_weight(
    track,
    cand,
    layout: SensorLayout,
    config: AssociationConfig = AssociationConfig(),
    motion: MotionModelConfig = MotionModelConfig(),
) -> float:
    """Association probability of one edge of the time-space network.

    ``track`` is a TrackHead or MISS, ``cand`` a Detection or MISS.
    """
    if track is MISS and cand is MISS:
        return config.p_l * config.p_l
    if track is MISS:
        return config.p_l
    if cand is MISS:
        return config.p_l
    if cand.sensor_id not in downstream_adjacent(layout, track.last_sensor, config.max_hops):
        return 0.0
    pred = expected_arrival(track, layout.chainage(cand.sensor_id), config, motion)
    return _pair_weight(track, pred, cand, config)


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Square padded association matrix (probabilities; 0 is a barrier).

    Rows: tracks, then one new-vehicle row per detection.
    Columns: detections, then one miss column per track.
    """

    w: np.ndarray
    n_tracks: int
    n_dets: int

    def log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.w)


def build_bipartite(
    tracks,
    dets,
    layout: SensorLayout,
    config: AssociationConfig = AssociationConfig(),
    motion: MotionModelConfig = MotionModelConfig(),
    weights: np.ndarray | None = None,
) -> WeightMatrix:
    """Padded matrix for ``tracks`` versus detections ``dets`` of one sensor.

    ``weights`` may carry precomputed track x detection link weights.
    """
    T, D = len(tracks), len(dets)
    n = T + D
    w = np.zeros((n, n))
    if weights is None:
        weights = np.array(
            [[link_weight(tr, d, layout, config, motion) for d in dets] for tr in tracks]
        ).reshape(T, D)
    w[:T, :D] = weights
    w[np.arange(T), D + np.arange(T)] = config.p_l
    w[T + np.arange(D), np.arange(D)] = config.new_weight
    w[T:, D:] = 1.0
    w[w < config.w_min] = 0.0
    return WeightMatrix(w, T, D)


def decode(W: WeightMatrix, a: Assignment):
    """Split an assignment into (track, det) matches, missed tracks and births."""
    matched, missed, born = [], [], []
    for r, c in a.matches:
        if r < W.n_tracks:
            if c < W.n_dets:
                matched.append((r, c))
            else:
                missed.append(r)
        elif c < W.n_dets:
            born.append(c)
    return matched, missed, born


def _vehicle_id(lane_id: int, sensor_index: int, t_us: int) -> str:
    return f"L{lane_id}-{sensor_index:04d}-{t_us}"


class _DSU:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


class Associator:
    """Stateful per-sensor association (detect and track).

    Detections are added in any grouping; ``advance(horizon)`` resolves every
    association that can no longer be influenced by data later than
    ``horizon``. Groups of mutually linkable tracks and detections at a sensor
    are solved as one matching, and a group is only solved once no future
    detection or track could join it. The outcome is therefore independent of
    how the input was split in time.
    """

    def __init__(
        self,
        layout: SensorLayout,
        config: AssociationConfig = AssociationConfig(),
        motion: MotionModelConfig = MotionModelConfig(),
        store: VehicleStore | None = None,
    ):
        self.layout = layout
        self.config = config
        self.motion = motion
        self.store = store if store is not None else VehicleStore()
        self.pending: dict[str, list[Detection]] = {}
        self.last_step_stats: dict = {}

    def add(self, batch: DetectionBatch) -> None:
        for sid, dets in batch.by_sensor.items():
            if sid not in self.layout:
                raise LayoutError(f"unknown sensor id {sid!r}")
            lst = self.pending.setdefault(sid, [])
            for d in dets:
                bisect.insort(lst, d, key=lambda x: x.t_us)

    def _heads_at(self):
        at: dict[str, list[TrackHead]] = {}
        for h in self.store.live.values():
            at.setdefault(h.last_sensor, []).append(h)
        return at

    def advance(self, horizon_us: int | None = None) -> set[str]:
        """Resolve everything settled at ``horizon_us`` (None: end of data).

        Returns the ids of vehicles that gained points.
        """
        H = math.inf if horizon_us is None else horizon_us
        gate = self.config.gate_us
        touched: set[str] = set()
        heads_at = self._heads_at()
        for lane in self.layout.lanes:
            pend_up = math.inf
            for k, node in enumerate(lane.sensors):
                sid = node.sensor_id
                pool = self.pending.get(sid, [])
                n_avail = bisect.bisect_right(pool, H, key=lambda x: x.t_us) if pool else 0
                dets = pool[:n_avail]
                tracks = heads_at.pop(lane.sensors[k - 1].sensor_id, []) if k else []
                if not dets and not tracks:
                    if pool:
                        pend_up = min(pend_up, pool[0].t_us)
                    pend_up = min(pend_up, H + 1)
                    continue
                preds = [expected_arrival(h, node.chainage_m, self.config, self.motion) for h in tracks]
                order = sorted(range(len(tracks)), key=lambda i: (preds[i].t_us, tracks[i].vehicle_id))
                tracks = [tracks[i] for i in order]
                preds = [preds[i] for i in order]
                T = len(tracks)
                det_t = [d.t_us for d in dets]
                dsu = _DSU(T + len(dets))
                links: dict[tuple[int, int], float] = {}
                for i, (h, p) in enumerate(zip(tracks, preds)):
                    span = math.ceil(1e6 * p.sigma_s * math.sqrt(2 * math.log(1 / self.config.w_min))) if self.config.w_min > 0 else 2**62
                    lo = bisect.bisect_left(det_t, p.t_us - span)
                    hi = bisect.bisect_right(det_t, p.t_us + span)
                    for j in range(lo, hi):
                        w = _pair_weight(h, p, dets[j], self.config)
                        if w > 0:
                            links[(i, j)] = w
                            dsu.union(i, T + j)
                groups: dict[int, list[int]] = {}
                for e in range(T + len(dets)):
                    groups.setdefault(dsu.find(e), []).append(e)
                unsettled_dets: list[int] = []
                bound = min(pend_up, H + 1)
                for members in groups.values():
                    t_idx = [e for e in members if e < T]
                    d_idx = [e - T for e in members if e >= T]
                    settled = all(preds[i].t_us + gate <= H for i in t_idx) and all(
                        det_t[j] <= pend_up for j in d_idx
                    )
                    if not settled:
                        unsettled_dets.extend(d_idx)
                        for i in t_idx:
                            heads_at.setdefault(tracks[i].last_sensor, []).append(tracks[i])
                            bound = min(bound, max(tracks[i].head_t_us + 1, preds[i].t_us - gate))
                        continue
                    self._solve_group(
                        lane.lane_id, k, node, [tracks[i] for i in t_idx], [preds[i] for i in t_idx],
                        [dets[j] for j in d_idx],
                        np.array([[links.get((i, j), 0.0) for j in d_idx] for i in t_idx]).reshape(len(t_idx), len(d_idx)),
                        heads_at, touched,
                    )
                keep = sorted(unsettled_dets)
                self.pending[sid] = [dets[j] for j in keep] + pool[n_avail:]
                if self.pending[sid]:
                    bound = min(bound, self.pending[sid][0].t_us)
                else:
                    del self.pending[sid]
                pend_up = bound
        return touched

    def _solve_group(self, lane_id, k, node, tracks, preds, dets, weights, heads_at, touched):
        sid = node.sensor_id
        W = build_bipartite(tracks, dets, self.layout, self.config, self.motion, weights=weights)
        a = max_weight_matching(W.log())
        matched, missed, born = decode(W, a)
        for r, c in matched:
            h, d = tracks[r], dets[c]
            st = kf_predict(h.state, d.t_us, self.motion)
            r_meas = self.motion.measurement_variance(max(st.velocity, 0.0))
            h.state = kf_update(st, node.chainage_m, r_meas)
            h.consecutive_misses = 0
            h.last_sensor = sid
            self._advance_head(h, TrackPoint(d.t_us, node.chainage_m, max(h.state.velocity, 0.0), sid), heads_at, touched)
        for r in missed:
            h = tracks[r]
            h.state = kf_predict(h.state, preds[r].t_us, self.motion)
            h.consecutive_misses += 1
            h.last_sensor = sid
            self._advance_head(h, TrackPoint(preds[r].t_us, node.chainage_m, max(h.state.velocity, 0.0), None), heads_at, touched)
        for c in born:
            d = dets[c]
            vid = _vehicle_id(lane_id, k, d.t_us)
            if vid in self.store.live:
                raise RuntimeError(f"vehicle id collision {vid}")
            st = initial_state(d.t_us, node.chainage_m, self.motion)
            h = TrackHead(vid, lane_id, st, sid, 0, VehicleTrack(vid, lane_id, []))
            self.store.live[vid] = h
            self._advance_head(h, TrackPoint(d.t_us, node.chainage_m, max(st.velocity, 0.0), sid), heads_at, touched)

    def _advance_head(self, h: TrackHead, point: TrackPoint, heads_at, touched):
        h.track.points.append(point)
        touched.add(h.vehicle_id)
        if self.layout.is_last(h.last_sensor) or h.consecutive_misses > self.config.miss_limit:
            self._complete(h)
        else:
            heads_at.setdefault(h.last_sensor, []).append(h)

    def _complete(self, h: TrackHead):
        pts = h.track.points
        while pts and pts[-1].sensor_id is None:
            pts.pop()
        del self.store.live[h.vehicle_id]
        self.store.completed.append(h.track)


def g_association(
    batch: DetectionBatch,
    layout: SensorLayout,
    config: AssociationConfig = AssociationConfig(),
    tracks=(),
    motion: MotionModelConfig = MotionModelConfig(),
    horizon_us: int | None = None,
):
    """Detect and track vehicles in a preprocessed batch.

    Returns ``(live_heads, completed_tracks)``. With ``horizon_us=None`` the
    batch is treated as the whole record and every track runs to completion.
    """
    store = VehicleStore({h.vehicle_id: h for h in copy.deepcopy(list(tracks))}, [])
    assoc = Associator(layout, config, motion, store)
    assoc.add(batch)
    assoc.advance(horizon_us)
    return list(store.live.values()), sort_tracks(store.completed)
