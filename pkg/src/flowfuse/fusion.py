"""Per-pixel confidence accumulation and composition of the two flow pipelines.

Condition 1: the event flow deviates from the latest frame-pipeline flow by
more than thresh_farneback. Condition 2: the event flow is consistent with
the previous event-pipeline flow (distance below thresh_leakycnn). Belief is
the element-wise product of the two flags; it feeds a running belief sum and
a confidence map (sum of running sums). Pixels whose confidence exceeds
thresh_confidence take the event flow; all others take the frame flow. No
blending ever occurs.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .core import FlowField, GridShape, flow_distance_map
from .validation import check_positive


@dataclass
class FusionParams:
    thresh_farneback: float = 2.0
    thresh_leakycnn: float = 4.0
    thresh_confidence: float = 1.0
    rho: float = 0.0              # confidence carry-over across frame inferences
    single_accumulator: bool = False

    def __post_init__(self):
        check_positive(self.thresh_farneback, "thresh_farneback")
        check_positive(self.thresh_leakycnn, "thresh_leakycnn")
        check_positive(self.thresh_confidence, "thresh_confidence")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")


@dataclass
class FusionState:
    shape: GridShape
    of_frame: FlowField = None
    of_event_prev: FlowField = None
    belief_prev: np.ndarray = None
    confidence: np.ndarray = None

    def __post_init__(self):
        if self.of_frame is None:
            self.of_frame = FlowField.invalid(self.shape)
        if self.of_event_prev is None:
            self.of_event_prev = FlowField.invalid(self.shape)
        if self.belief_prev is None:
            self.belief_prev = np.zeros(self.shape.hw)
        if self.confidence is None:
            self.confidence = np.zeros(self.shape.hw)


def condition_flags(of_frame, of_event_t, of_event_prev, params):
    """Evaluate the two fusion conditions as binary maps.

    Both flags are forced to 0 wherever the event flow (or the flow it is
    compared against) is invalid, so missing data never raises belief.
    """
    dist_f, mask_f = flow_distance_map(of_frame, of_event_t)
    dist_e, mask_e = flow_distance_map(of_event_t, of_event_prev)
    err_f = (dist_f > params.thresh_farneback) & mask_f
    err_e = (dist_e < params.thresh_leakycnn) & mask_e
    return err_f, err_e


def update_confidence(state, err_f, err_e, params=None):
    """Accumulate belief from the condition flags (in place).

    Literal recurrence: belief = belief_prev + (err_f * err_e);
    confidence += belief; belief_prev = belief. With
    params.single_accumulator the confidence map accumulates the raw belief
    product directly instead of the running sum.
    """
    b = (err_f & err_e).astype(np.float64)
    single = params is not None and params.single_accumulator
    if single:
        state.confidence += b
        state.belief_prev = b
    else:
        belief = state.belief_prev + b
        state.confidence += belief
        state.belief_prev = belief
    return state


def fuse(state, of_event_t, params):
    """Compose the fused flow field and advance the event-flow history.

    source_mask selects pixels whose confidence strictly exceeds the
    threshold and where the event flow is valid; those take the event flow,
    the rest take the frame flow. Fused validity is the union of the
    contributing validities.
    """
    source_mask = (state.confidence > params.thresh_confidence) & of_event_t.valid
    u = np.where(source_mask, of_event_t.u, state.of_frame.u)
    v = np.where(source_mask, of_event_t.v, state.of_frame.v)
    valid = source_mask | state.of_frame.valid
    fused = FlowField(u, v, valid)
    state.of_event_prev = of_event_t.copy()
    return fused, source_mask


def on_new_frame_inference(state, of_frame_new, params):
    """Install a fresh frame-pipeline flow and decay accumulated confidence."""
    if of_frame_new.u.shape != state.shape.hw:
        raise ValueError("frame flow shape mismatch")
    state.of_frame = of_frame_new.copy()
    state.belief_prev = state.belief_prev * params.rho
    state.confidence = state.confidence * params.rho
    return state


class ConfidenceFusion(BaseEstimator):
    """Stateful estimator running the confidence-map fusion loop.

    observe_frame() installs a new frame-pipeline inference; step() consumes
    one event-pipeline inference and returns (fused_flow, source_mask).
    """

    def __init__(self, thresh_farneback=2.0, thresh_leakycnn=4.0,
                 thresh_confidence=1.0, rho=0.0, single_accumulator=False):
        self.thresh_farneback = thresh_farneback
        self.thresh_leakycnn = thresh_leakycnn
        self.thresh_confidence = thresh_confidence
        self.rho = rho
        self.single_accumulator = single_accumulator

    def _params(self):
        return FusionParams(self.thresh_farneback, self.thresh_leakycnn,
                            self.thresh_confidence, self.rho, self.single_accumulator)

    def fit(self, shape, y=None):
        self._params()
        self.state_ = FusionState(shape)
        return self

    def observe_frame(self, of_frame):
        on_new_frame_inference(self.state_, of_frame, self._params())
        return self

    def step(self, of_event_t):
        params = self._params()
        err_f, err_e = condition_flags(self.state_.of_frame, of_event_t,
                                       self.state_.of_event_prev, params)
        update_confidence(self.state_, err_f, err_e, params)
        return fuse(self.state_, of_event_t, params)
