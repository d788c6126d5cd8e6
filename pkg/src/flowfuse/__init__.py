"""flowfuse: event/frame optical-flow fusion at desk scale.

A fast, noisy event-camera flow filter (leaky accumulator + directional
differencing), an accurate polynomial-expansion frame flow, and a
confidence-map fusion of the two, together with a DVS simulator, file
formats, and a benchmark harness.
"""

from .core import (Events, FlowField, GridShape, NoOverlapError, aee,
                   event_percent, flow_distance_map, flow_to_color)
from .farneback import (FarnebackFlowEstimator, FarnebackParams, PolyExpField,
                        displacement_step, farneback_flow, poly_expansion)
from .fusion import (ConfidenceFusion, FusionParams, FusionState,
                     condition_flags, fuse, on_new_frame_inference,
                     update_confidence)
from .harness import (MetricsRow, RunConfig, calibrate_gain,
                      calibrate_thresholds, compute_event_flows,
                      compute_frame_flows, ops_count, rate_sweep,
                      run_pipeline, threshold_sweep, write_metrics_csv)
from .leaky import (ActivationState, LeakyFlowEstimator, LeakyParams,
                    StreamOrderError, accumulate, directional_diff,
                    event_flow, smooth_avg, snapshot)
from .synth import DvsParams, SceneConfig, dvs_simulate, frame_sequence, gt_flow, render

__version__ = "0.1.0"

__all__ = [
    "Events", "FlowField", "GridShape", "NoOverlapError", "aee",
    "event_percent", "flow_distance_map", "flow_to_color",
    "FarnebackFlowEstimator", "FarnebackParams", "PolyExpField",
    "displacement_step", "farneback_flow", "poly_expansion",
    "ConfidenceFusion", "FusionParams", "FusionState", "condition_flags",
    "fuse", "on_new_frame_inference", "update_confidence",
    "MetricsRow", "RunConfig", "calibrate_gain", "calibrate_thresholds",
    "ops_count", "rate_sweep", "run_pipeline", "threshold_sweep",
    "ActivationState", "LeakyFlowEstimator", "LeakyParams",
    "StreamOrderError", "accumulate", "directional_diff", "event_flow",
    "smooth_avg", "snapshot",
    "DvsParams", "SceneConfig", "dvs_simulate", "frame_sequence", "gt_flow",
    "render",
]
