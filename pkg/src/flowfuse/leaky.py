"""Three-layer leaky event filter: accumulate, directional difference, smooth.

Layer 1 is a per-pixel leaky accumulator with lazy exponential decay
(act * exp(-dt/tau), evaluated only when a pixel is touched or snapshotted).
Layer 2 takes central differences of the decayed activation surface in x and
y; the signed difference encodes local motion direction (activation rises
from older to newer positions of a moving object). Layer 3 averages each
difference map over the active neighborhood to suppress event noise.

Window sums in the smoothing layer pair symmetric offsets before
accumulating, so mirroring the input mirrors the output bit-exactly.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .core import Events, FlowField, GridShape
from .validation import check_odd_window, check_positive


class StreamOrderError(ValueError):
    """An event is older than the state already recorded for its pixel."""


@dataclass
class LeakyParams:
    tau_us: float = 30000.0
    smooth_k: int = 5
    act_threshold: float = 0.1
    gain: float = 25.0

    def __post_init__(self):
        check_positive(self.tau_us, "tau_us")
        check_odd_window(self.smooth_k, "smooth_k")
        check_positive(self.act_threshold, "act_threshold")
        if not np.isfinite(self.gain) or self.gain == 0:
            raise ValueError("gain must be finite and nonzero")


@dataclass
class ActivationState:
    """Per-pixel accumulator value at its last update time."""

    shape: GridShape
    tau_us: float
    act: np.ndarray = None
    last_t: np.ndarray = None

    def __post_init__(self):
        check_positive(self.tau_us, "tau_us")
        if self.act is None:
            self.act = np.zeros(self.shape.hw)
        if self.last_t is None:
            self.last_t = np.zeros(self.shape.hw, dtype=np.int64)

    def copy(self):
        return ActivationState(self.shape, self.tau_us, self.act.copy(), self.last_t.copy())


def accumulate(state, events):
    """Ingest a time-ordered event slice into the accumulator (in place).

    Each event at pixel q, time t applies
    act[q] <- act[q] * exp(-(t - last_t[q]) / tau) + 1; last_t[q] <- t.
    Polarity is ignored. Updates at distinct pixels are independent.
    """
    if len(events) == 0:
        return state
    events.validate()
    t = events.t.astype(np.int64)
    idx = events.y.astype(np.intp) * state.shape.width + events.x.astype(np.intp)

    act = state.act.ravel()
    last_t = state.last_t.ravel()
    stale = t < last_t[idx]
    if stale.any():
        i = int(np.flatnonzero(stale)[0])
        raise StreamOrderError(
            f"event {i} at t={t[i]} precedes pixel state time {last_t[idx[i]]}"
        )

    # Per-pixel newest event time, then sum each event's decayed unit
    # contribution relative to it. Weights are <= 1, so no overflow.
    newest = np.full(act.shape, np.iinfo(np.int64).min, dtype=np.int64)
    np.maximum.at(newest, idx, t)
    w = np.exp(-(newest[idx] - t) / state.tau_us)
    contrib = np.zeros_like(act)
    np.add.at(contrib, idx, w)

    touched = newest > np.iinfo(np.int64).min
    act[touched] = act[touched] * np.exp(-(newest[touched] - last_t[touched]) / state.tau_us) \
        + contrib[touched]
    last_t[touched] = newest[touched]
    return state


def snapshot(state, t_q):
    """Decayed activation surface at query time t_q (does not mutate state)."""
    t_q = int(t_q)
    if state.last_t.max() > t_q:
        raise ValueError(f"snapshot time {t_q} precedes latest update {state.last_t.max()}")
    return state.act * np.exp(-(t_q - state.last_t) / state.tau_us)


def directional_diff(snap):
    """Central differences of the activation surface in x and y.

    Returns (dx, dy); the one-pixel border is left at zero and must be
    treated as invalid by callers.
    """
    dx = np.zeros_like(snap)
    dy = np.zeros_like(snap)
    dx[:, 1:-1] = (snap[:, 2:] - snap[:, :-2]) * 0.5
    dy[1:-1, :] = (snap[2:, :] - snap[:-2, :]) * 0.5
    return dx, dy


def _shift(a, offset, axis):
    out = np.zeros_like(a)
    if offset == 0:
        return a.copy()
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if offset > 0:
        src[axis] = slice(offset, None)
        dst[axis] = slice(None, -offset)
    else:
        src[axis] = slice(None, offset)
        dst[axis] = slice(-offset, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _box_sum(a, k):
    # Symmetric pairwise accumulation keeps mirror images bit-exact.
    r = k // 2
    out = a.astype(np.float64).copy()
    for axis in (1, 0):
        acc = out.copy()
        for j in range(1, r + 1):
            acc += _shift(out, j, axis) + _shift(out, -j, axis)
        out = acc
    return out


def smooth_avg(d, active, k):
    """Mean of d over active pixels in each k x k window, at active pixels.

    Normalizes by the active count in the window (not k^2) so sparse borders
    are not diluted. Inactive pixels stay zero.
    """
    check_odd_window(k, "k")
    active_f = active.astype(np.float64)
    num = _box_sum(d * active_f, k)
    den = _box_sum(active_f, k)
    out = np.zeros_like(num)
    ok = active.astype(bool) & (den > 0)
    out[ok] = num[ok] / den[ok]
    return out


def event_flow(state, events, t1, params, dt_frame_us):
    """Run the full three-layer filter over one event slice.

    Accumulates `events` into `state` (persistent across calls), snapshots at
    t1, thresholds the decayed activation into the active mask, differences,
    smooths, and scales into pixels per frame interval:
    u = gain * dx_smoothed * (dt_frame / tau). Inactive pixels are invalid.
    """
    accumulate(state, events)
    snap = snapshot(state, t1)
    active = snap >= params.act_threshold
    dx, dy = directional_diff(snap)
    dxs = smooth_avg(dx, active, params.smooth_k)
    dys = smooth_avg(dy, active, params.smooth_k)
    scale = params.gain * (dt_frame_us / state.tau_us)
    interior = np.zeros_like(active)
    interior[1:-1, 1:-1] = True
    valid = active & interior
    u = np.where(valid, scale * dxs, 0.0)
    v = np.where(valid, scale * dys, 0.0)
    return FlowField(u, v, valid)


class LeakyFlowEstimator(BaseEstimator):
    """Stateful estimator wrapping the leaky event-flow filter.

    fit() initializes the accumulator for a grid; partial_fit() ingests
    event slices; predict() emits the flow field for the latest state.
    """

    def __init__(self, tau_us=30000.0, smooth_k=5, act_threshold=0.1,
                 gain=25.0, dt_frame_us=100000):
        self.tau_us = tau_us
        self.smooth_k = smooth_k
        self.act_threshold = act_threshold
        self.gain = gain
        self.dt_frame_us = dt_frame_us

    def _params(self):
        return LeakyParams(self.tau_us, self.smooth_k, self.act_threshold, self.gain)

    def fit(self, shape, y=None):
        self._params()  # validate
        self.state_ = ActivationState(shape, self.tau_us)
        return self

    def partial_fit(self, events):
        if not hasattr(self, "state_"):
            self.fit(events.shape)
        accumulate(self.state_, events)
        return self

    def predict(self, t_q):
        """Flow field from the current state evaluated at time t_q (us)."""
        return event_flow(self.state_, Events.empty(self.state_.shape), t_q,
                          self._params(), self.dt_frame_us)

    def process_slice(self, events, t1):
        """Ingest one slice and return its flow in a single call."""
        if not hasattr(self, "state_"):
            self.fit(events.shape)
        return event_flow(self.state_, events, t1, self._params(), self.dt_frame_us)
