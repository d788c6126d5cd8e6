"""Bit-exact readers/writers for event streams, frames, flow fields and images.

Formats:
  * EVT1 binary events: 16-byte header (magic "EVT1", u16 W, u16 H, u64 count)
    followed by packed little-endian 13-byte records (u64 t, u16 x, u16 y, i8 p).
  * CSV events: one "t,x,y,p" line per event, p in {1,-1}.
  * .flo flow fields: Middlebury layout (float magic 202021.25, i32 W, i32 H,
    row-major interleaved float32 u,v); invalid pixels stored as (1e10, 1e10).
  * P5 PGM grayscale frames (maxval 255) plus a "timestamp_us filename" index.
  * P6 PPM for color renders.

Readers never silently repair; malformed input raises FormatError with a
location.
"""

from dataclasses import dataclass
import os
import struct

import numpy as np

from .core import Events, FlowField, GridShape, FLOW_SENTINEL, INVALID_CUTOFF

EVT1_MAGIC = b"EVT1"
FLO_MAGIC = 202021.25

_EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
assert _EVENT_DTYPE.itemsize == 13


class FormatError(ValueError):
    """Malformed file content; message carries the file/record location."""


@dataclass
class FrameSequence:
    """Uniformly spaced grayscale frames with microsecond timestamps."""

    shape: GridShape
    times: np.ndarray        # int64 microseconds, strictly increasing
    frames: list             # (H, W) float64 arrays in [0, 1]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        if len(self.times) != len(self.frames):
            raise ValueError("times and frames length mismatch")
        if len(self.times) >= 2:
            dts = np.diff(self.times)
            if (dts <= 0).any():
                raise ValueError("frame timestamps must be strictly increasing")
            if dts.max() - dts.min() > 1:
                raise ValueError("frame spacing is not uniform within 1 us")

    def __len__(self):
        return len(self.frames)

    @property
    def dt_us(self):
        if len(self.times) < 2:
            raise ValueError("need at least two frames to define a frame interval")
        return int(round(float(np.diff(self.times).mean())))


# ---------------------------------------------------------------------------
# events

def write_events(path, events, fmt="bin"):
    if fmt == "bin":
        _write_events_bin(path, events)
    elif fmt == "csv":
        _write_events_csv(path, events)
    else:
        raise ValueError(f"unknown event format {fmt!r}")


def read_events(path, fmt="bin", shape=None):
    if fmt == "bin":
        return _read_events_bin(path)
    if fmt == "csv":
        if shape is None:
            raise ValueError("csv event streams need an explicit grid shape")
        return _read_events_csv(path, shape)
    raise ValueError(f"unknown event format {fmt!r}")


def _write_events_bin(path, events):
    events.validate()
    header = EVT1_MAGIC + struct.pack("<HHQ", events.shape.width, events.shape.height, len(events))
    rec = np.empty(len(events), dtype=_EVENT_DTYPE)
    rec["t"], rec["x"], rec["y"], rec["p"] = events.t, events.x, events.y, events.p
    with open(path, "wb") as f:
        f.write(header)
        f.write(rec.tobytes())


def _read_events_bin(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != EVT1_MAGIC:
        raise FormatError(f"{path}: bad magic (not an EVT1 file)")
    w, h, count = struct.unpack("<HHQ", data[4:16])
    expected = 16 + 13 * count
    if len(data) != expected:
        raise FormatError(f"{path}: size mismatch (header says {count} events, "
                          f"file has {len(data)} bytes, expected {expected})")
    rec = np.frombuffer(data, dtype=_EVENT_DTYPE, count=count, offset=16)
    events = Events(GridShape(w, h), rec["t"].copy(), rec["x"].copy(),
                    rec["y"].copy(), rec["p"].copy())
    try:
        events.validate()
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    return events


def _write_events_csv(path, events):
    events.validate()
    with open(path, "w") as f:
        for t, x, y, p in zip(events.t, events.x, events.y, events.p):
            f.write(f"{t},{x},{y},{p}\n")


def _read_events_csv(path, shape):
    ts, xs, ys, ps = [], [], [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 't,x,y,p', got {line!r}")
            try:
                t, x, y, p = int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
            if p not in (1, -1):
                raise FormatError(f"{path}:{lineno}: polarity must be 1 or -1, got {p}")
            ts.append(t); xs.append(x); ys.append(y); ps.append(p)
    events = Events(shape, np.array(ts, np.uint64), np.array(xs, np.uint16),
                    np.array(ys, np.uint16), np.array(ps, np.int8))
    try:
        events.validate()
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    return events


# ---------------------------------------------------------------------------
# .flo flow fields

def write_flo(path, flow):
    h, w = flow.u.shape
    u = flow.u.astype(np.float32)
    v = flow.v.astype(np.float32)
    u[~flow.valid] = FLOW_SENTINEL
    v[~flow.valid] = FLOW_SENTINEL
    data = np.empty((h, w, 2), dtype=np.float32)
    data[..., 0], data[..., 1] = u, v
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(data.tobytes())


def read_flo(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    magic, w, h = struct.unpack("<fii", raw[:12])
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: wrong magic {magic}")
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise FormatError(f"{path}: size mismatch ({len(raw)} bytes, expected {expected})")
    data = np.frombuffer(raw, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2)
    u = data[..., 0].astype(np.float64)
    v = data[..., 1].astype(np.float64)
    valid = (np.abs(u) <= INVALID_CUTOFF) & (np.abs(v) <= INVALID_CUTOFF)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    return FlowField(u, v, valid)


# ---------------------------------------------------------------------------
# PGM / PPM images and frame sequences

def write_pgm(path, frame):
    """Write a [0,1] intensity map as binary 8-bit P5."""
    img = np.clip(np.asarray(frame) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        raw = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary P5 PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    if len(raw) - pos != w * h:
        raise FormatError(f"{path}: payload size mismatch")
    img = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return img.astype(np.float64) / 255.0


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())


def read_frames(dirpath, index_file):
    """Load a frame sequence from an index of "timestamp_us filename" lines."""
    times, frames = [], []
    shape = None
    with open(index_file) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{index_file}:{lineno}: expected 'timestamp_us filename'")
            t = int(parts[0])
            if times and t <= times[-1]:
                raise FormatError(f"{index_file}:{lineno}: non-increasing timestamp {t}")
            frame = read_pgm(os.path.join(dirpath, parts[1]))
            if shape is None:
                shape = frame.shape
            elif frame.shape != shape:
                raise FormatError(
                    f"{index_file}:{lineno}: frame {parts[1]} has shape {frame.shape}, "
                    f"expected {shape}"
                )
            times.append(t)
            frames.append(frame)
    if shape is None:
        raise FormatError(f"{index_file}: no frames listed")
    h, w = shape
    return FrameSequence(GridShape(w, h), np.array(times, np.int64), frames)


def write_frames(dirpath, seq, index_name="index.txt"):
    os.makedirs(dirpath, exist_ok=True)
    lines = []
    for i, (t, frame) in enumerate(zip(seq.times, seq.frames)):
        name = f"frame_{i:06d}.pgm"
        write_pgm(os.path.join(dirpath, name), frame)
        lines.append(f"{int(t)} {name}\n")
    index_path = os.path.join(dirpath, index_name)
    with open(index_path, "w") as f:
        f.writelines(lines)
    return index_path
