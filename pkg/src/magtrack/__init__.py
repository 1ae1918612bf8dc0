"""Vehicle trajectory reconstruction from roadside magnetic sensor detections."""

from .association import (
    MISS,
    AssociationConfig,
    Associator,
    TrackHead,
    TrackPoint,
    VehicleStore,
    VehicleTrack,
    WeightMatrix,
    build_bipartite,
    f_time_likelihood,
    g_association,
    link_weight,
)
from .domain import (
    Detection,
    DetectionBatch,
    FilterConfig,
    LayoutConfig,
    SensorLayout,
    SensorNode,
    build_layout,
    distance,
    downstream_adjacent,
    preprocess,
)
from .evaluate import AccuracyReport, speed_error, track_accuracy
from .matching import Assignment, max_weight_matching
from .motion import (
    KalmanState,
    MotionModelConfig,
    covariance_trace,
    kf_predict,
    kf_update,
    predict_arrival_ca,
    predict_arrival_cv,
)
from .sim import GroundTruth, Scenario, export, magnetic_signature, simulate
from .stream import StreamConfig, StreamTracker, replay

__version__ = "0.1.0"
