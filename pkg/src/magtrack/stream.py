"""Online tracking: detection ingestion, timed association and trajectory output."""

from __future__ import annotations

import copy
import json
import logging
import socketserver
import threading
import time
from dataclasses import dataclass, field

from .association import (
    AssociationConfig,
    Associator,
    TrackPoint,
    VehicleStore,
    VehicleTrack,
    sort_tracks,
)
from .domain import (
    Detection,
    DetectionBatch,
    DetectionError,
    FilterConfig,
    SensorLayout,
    parse_detection,
    preprocess,
    read_detections,
)
from .motion import MotionModelConfig

__all__ = [
    "DataStore",
    "IngestResult",
    "ReplayError",
    "StreamConfig",
    "StreamTracker",
    "TrackPoint",
    "TrajectoryUpdate",
    "VehicleStore",
    "VehicleTrack",
    "read_tracks",
    "replay",
    "serve_jsonl",
    "write_tracks",
]

log = logging.getLogger(__name__)


class ReplayError(ValueError):
    def __init__(self, message, lineno=None):
        super().__init__(message)
        self.lineno = lineno


@dataclass(frozen=True)
class StreamConfig:
    window_s: float = 30.0
    late_tolerance_s: float = 5.0

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError("window_s must be positive")
        if self.late_tolerance_s < 0:
            raise ValueError("late_tolerance_s must be nonnegative")


@dataclass(frozen=True)
class IngestResult:
    accepted: bool
    reason: str | None = None  # malformed | duplicate | too_late
    detail: str = ""


class DataStore:
    """Append-only detection log with a processed-up-to high-water mark."""

    def __init__(self):
        self._lock = threading.Lock()
        self._log: list[Detection] = []
        self._keys: set[tuple[str, int]] = set()
        self._cursor = 0
        self.high_water_us: int | None = None

    def __len__(self):
        with self._lock:
            return len(self._log)

    def append(self, det: Detection) -> IngestResult:
        with self._lock:
            if self.high_water_us is not None and det.t_us <= self.high_water_us:
                return IngestResult(False, "too_late", f"t_us {det.t_us} <= high-water {self.high_water_us}")
            if det.key in self._keys:
                return IngestResult(False, "duplicate", f"{det.key}")
            self._keys.add(det.key)
            self._log.append(det)
            return IngestResult(True)

    def take(self, cutoff_us: int) -> list[Detection]:
        """Remove and return unprocessed events with t_us <= cutoff; advance the mark."""
        with self._lock:
            if self.high_water_us is not None and cutoff_us < self.high_water_us:
                cutoff_us = self.high_water_us
            out = [d for d in self._log[self._cursor :] if d.t_us <= cutoff_us]
            rest = [d for d in self._log[self._cursor :] if d.t_us > cutoff_us]
            self._log[self._cursor :] = out + rest
            self._cursor += len(out)
            self.high_water_us = cutoff_us
            return out

    def snapshot(self) -> list[Detection]:
        with self._lock:
            return list(self._log)


@dataclass
class TrajectoryUpdate:
    window_end_us: int
    points: list[dict] = field(default_factory=list)

    def __bool__(self):
        return bool(self.points)

    def to_json(self) -> str:
        return json.dumps({"window_end_us": self.window_end_us, "points": self.points})


def _point_record(tr: VehicleTrack, p: TrackPoint) -> dict:
    return {
        "vehicle_id": tr.vehicle_id,
        "lane_id": tr.lane_id,
        "t_us": p.t_us,
        "chainage_m": p.chainage_m,
        "speed_mps": p.speed_mps,
        "sensor_id": p.sensor_id,
    }


class StreamTracker:
    """Timer-driven online tracker.

    ``ingest`` may be called from many threads; ``on_timer`` bodies never
    overlap; ``snapshot`` returns a consistent copy of all tracks.
    """

    def __init__(
        self,
        layout: SensorLayout,
        association: AssociationConfig = AssociationConfig(),
        motion: MotionModelConfig = MotionModelConfig(),
        filter: FilterConfig = FilterConfig(),
        stream: StreamConfig = StreamConfig(),
    ):
        self.layout = layout
        self.filter = filter
        self.config = stream
        self.data = DataStore()
        self.store = VehicleStore()
        self._assoc = Associator(layout, association, motion, self.store)
        self._timer_lock = threading.Lock()
        self._last_kept: dict[str, int] = {}
        self._emitted: dict[str, int] = {}
        self._n_completed_seen = 0
        self._last_trigger: int | None = None
        self.window_end_us: int | None = None

    def ingest(self, record) -> IngestResult:
        """Accept a Detection, dict, or JSONL line; never raises."""
        try:
            if isinstance(record, Detection):
                det = record
            elif isinstance(record, dict):
                det = Detection.from_dict(record)
            else:
                det = parse_detection(record)
            if det.sensor_id not in self.layout:
                return IngestResult(False, "malformed", f"unknown sensor id {det.sensor_id!r}")
        except DetectionError as exc:
            return IngestResult(False, "malformed", str(exc))
        except Exception as exc:  # ingest is total
            return IngestResult(False, "malformed", f"{type(exc).__name__}: {exc}")
        return self.data.append(det)

    def on_timer(self, now_us: int) -> TrajectoryUpdate:
        with self._timer_lock:
            if self._last_trigger is not None and now_us < self._last_trigger:
                raise ValueError("timer triggers must be monotone")
            self._last_trigger = now_us
            cutoff = now_us - round(self.config.late_tolerance_s * 1e6)
            if self.data.high_water_us is not None:
                cutoff = max(cutoff, self.data.high_water_us)
            return self._run(cutoff, cutoff)

    def flush(self) -> TrajectoryUpdate:
        """Consume everything ingested and run all tracks to completion."""
        with self._timer_lock:
            end = max((d.t_us for d in self.data.snapshot()), default=self.data.high_water_us or 0)
            end = max(end, self.data.high_water_us or end)
            return self._run(end, None)

    def _run(self, cutoff: int, horizon) -> TrajectoryUpdate:
        new = self.data.take(cutoff)
        if new:
            batch = DetectionBatch.from_detections(new)
            self._assoc.add(preprocess(batch, self.filter, self._last_kept))
        touched = self._assoc.advance(horizon)
        self.window_end_us = cutoff
        return self._emit(cutoff, touched)

    def _emit(self, window_end, touched) -> TrajectoryUpdate:
        upd = TrajectoryUpdate(window_end)
        done = self.store.completed[self._n_completed_seen :]
        self._n_completed_seen = len(self.store.completed)
        tracks = [(tr, True) for tr in done]
        tracks += [(self.store.live[v].track, False) for v in sorted(touched) if v in self.store.live]
        for tr, final in sort_tracks_pairs(tracks):
            pts = tr.points
            if not final:
                # trailing misses may still be trimmed
                end = len(pts)
                while end and pts[end - 1].sensor_id is None:
                    end -= 1
            else:
                end = len(pts)
            start = self._emitted.get(tr.vehicle_id, 0)
            for p in pts[start:end]:
                upd.points.append(_point_record(tr, p))
            self._emitted[tr.vehicle_id] = max(start, end)
        return upd

    def snapshot(self) -> list[VehicleTrack]:
        with self._timer_lock:
            return copy.deepcopy(self.store.all_tracks())


def sort_tracks_pairs(pairs):
    return sorted(pairs, key=lambda tp: (tp[0].lane_id, tp[0].points[0].t_us, tp[0].vehicle_id))


def load_events(events_path, layout: SensorLayout) -> list[Detection]:
    try:
        dets = read_detections(events_path)
    except DetectionError as exc:
        raise ReplayError(str(exc), getattr(exc, "lineno", None)) from exc
    # second pass for layout membership so the error can name the line
    with open(events_path, "rb") as fh:
        lineno = 0
        k = 0
        for raw in fh:
            lineno += 1
            if not raw.strip():
                continue
            if dets[k].sensor_id not in layout:
                raise ReplayError(f"{events_path}:{lineno}: unknown sensor id {dets[k].sensor_id!r}", lineno)
            k += 1
    return dets


def replay(
    events_file,
    window_s: float,
    layout: SensorLayout,
    association: AssociationConfig = AssociationConfig(),
    motion: MotionModelConfig = MotionModelConfig(),
    filter: FilterConfig = FilterConfig(),
    late_tolerance_s: float = 5.0,
    on_update=None,
) -> VehicleStore:
    """Drive a StreamTracker from an event file, firing the timer every ``window_s``."""
    dets = load_events(events_file, layout)
    dets.sort(key=lambda d: (d.t_us, d.sensor_id))
    tracker = StreamTracker(layout, association, motion, filter, StreamConfig(window_s, late_tolerance_s))
    window_us = round(window_s * 1e6)
    next_fire = dets[0].t_us + window_us if dets else None
    for d in dets:
        while d.t_us > next_fire:
            upd = tracker.on_timer(next_fire)
            if on_update and upd:
                on_update(upd)
            next_fire += window_us
        res = tracker.ingest(d)
        if not res.accepted and res.reason != "duplicate":
            log.warning("replay rejected %s: %s %s", d.key, res.reason, res.detail)
    upd = tracker.flush()
    if on_update and upd:
        on_update(upd)
    return tracker.store


def write_tracks(tracks, path_or_file) -> None:
    own = not hasattr(path_or_file, "write")
    fh = open(path_or_file, "w", encoding="utf-8") if own else path_or_file
    try:
        for tr in sort_tracks(tracks):
            for p in tr.points:
                fh.write(json.dumps(_point_record(tr, p)) + "\n")
    finally:
        if own:
            fh.close()


def read_tracks(path) -> list[VehicleTrack]:
    tracks: dict[str, VehicleTrack] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                vid = doc["vehicle_id"]
                tr = tracks.setdefault(vid, VehicleTrack(vid, int(doc["lane_id"]), []))
                tr.points.append(
                    TrackPoint(int(doc["t_us"]), float(doc["chainage_m"]), float(doc["speed_mps"]), doc["sensor_id"])
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad track record: {exc}") from exc
    return list(tracks.values())


class _JsonlHandler(socketserver.StreamRequestHandler):
    def handle(self):
        tracker: StreamTracker = self.server.tracker
        for raw in self.rfile:
            if not raw.strip():
                continue
            res = tracker.ingest(raw)
            ack = {"accepted": res.accepted, "reason": res.reason}
            self.wfile.write((json.dumps(ack) + "\n").encode())


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve_jsonl(tracker: StreamTracker, host: str = "127.0.0.1", port: int = 0) -> socketserver.TCPServer:
    """Newline-delimited JSON ingestion over TCP; one ack line per record.

    Call ``serve_forever()`` (typically in a thread) on the returned server.
    """
    srv = _Server((host, port), _JsonlHandler)
    srv.tracker = tracker
    return srv


def run_timer(tracker: StreamTracker, interval_s: float, stop: threading.Event, on_update=None, clock=time.time):
    """Fire ``tracker.on_timer`` every ``interval_s`` of wall-clock time until ``stop`` is set."""
    while not stop.wait(interval_s):
        upd = tracker.on_timer(round(clock() * 1e6))
        if on_update and upd:
            on_update(upd)
