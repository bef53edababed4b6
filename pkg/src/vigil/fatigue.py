"""Eye/mouth state from 68-point facial landmarks and the sliding-window PERCLOS estimator.

Landmark indices follow the common 68-point annotation, 1-based in the
comments below and 0-based in code.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError, InputOrderError, ParseError

N_POINTS = 68
RIGHT_EYE = slice(36, 42)   # points 37-42
LEFT_EYE = slice(42, 48)    # points 43-48
INNER_MOUTH = slice(60, 68)  # points 61-68
_DEGENERATE = 1e-6


@dataclass
class LandmarkFrame:
    frame_index: int
    timestamp_ms: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_POINTS, 2):
            raise FormatError(f"frame {self.frame_index}: expected {N_POINTS} (x, y) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise FormatError(f"frame {self.frame_index}: non-finite coordinate")
        self.points = pts


@dataclass(frozen=True)
class FatigueConfig:
    ear_closed_threshold: float = 0.21
    mar_open_threshold: float = 0.6
    perclos_threshold_pct: float = 20.0
    window_ms: int = 60_000
    yawn_min_frames: int = 15

    def __post_init__(self):
        if self.ear_closed_threshold <= 0 or self.mar_open_threshold <= 0 or self.perclos_threshold_pct <= 0:
            raise ConfigurationError("fatigue thresholds must be positive")
        if self.window_ms <= 0:
            raise ConfigurationError(f"window_ms must be positive, got {self.window_ms}")
        if self.yawn_min_frames < 1:
            raise ConfigurationError(f"yawn_min_frames must be >= 1, got {self.yawn_min_frames}")


def config_from_text(cfg: dict) -> FatigueConfig:
    known = {"ear_closed_threshold": float, "mar_open_threshold": float, "perclos_threshold_pct": float,
             "window_ms": int, "yawn_min_frames": int}
    unknown = set(cfg) - set(known)
    if unknown:
        raise ConfigurationError(f"fatigue config: unknown key(s) {', '.join(sorted(unknown))}")
    try:
        return FatigueConfig(**{k: known[k](v) for k, v in cfg.items()})
    except ValueError as exc:
        raise ConfigurationError(f"fatigue config: {exc}") from None


# -- geometry ------------------------------------------------------------------------

def _dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def eye_aspect_ratio(frame: LandmarkFrame, eye: str) -> float:
    """``(|p2-p6| + |p3-p5|) / (2 |p1-p4|)`` over the eye's six points; 0 if the eye has no width."""
    if eye not in ("left", "right"):
        raise ConfigurationError(f"eye must be 'left' or 'right', got {eye!r}")
    p = frame.points[LEFT_EYE if eye == "left" else RIGHT_EYE]
    width = _dist(p[0], p[3])
    if width < _DEGENERATE:
        return 0.0
    return (_dist(p[1], p[5]) + _dist(p[2], p[4])) / (2.0 * width)


def mouth_aspect_ratio(frame: LandmarkFrame) -> float:
    """``(|p62-p68| + |p63-p67| + |p64-p66|) / (3 |p61-p65|)`` over the inner lips."""
    p = frame.points[INNER_MOUTH]
    width = _dist(p[0], p[4])
    if width < _DEGENERATE:
        return 0.0
    return (_dist(p[1], p[7]) + _dist(p[2], p[6]) + _dist(p[3], p[5])) / (3.0 * width)


def classify_frame(frame: LandmarkFrame, config: FatigueConfig = FatigueConfig()):
    """``(eye_closed, mouth_open)``. Closed is strictly below the EAR threshold."""
    ear = 0.5 * (eye_aspect_ratio(frame, "left") + eye_aspect_ratio(frame, "right"))
    return ear < config.ear_closed_threshold, mouth_aspect_ratio(frame) > config.mar_open_threshold


# -- PERCLOS -----------------------------------------------------------------------------

def _perclos(closed_ms, total_ms):
    return (100 * closed_ms) / total_ms if total_ms > 0 else 0.0


@dataclass
class FatigueState:
    """Trailing-window bookkeeping for one video stream.

    Each interval between consecutive frames is attributed to the earlier
    frame's eye state. Frames older than ``latest - window_ms`` leave the
    window together with the interval that follows them.
    """

    buffer: deque = field(default_factory=deque)
    closed_ms: int = 0
    total_ms: int = 0
    perclos_pct: float = 0.0
    yawn_event_count: int = 0
    mouth_run: int = 0
    drowsy: bool = False

    def update(self, timestamp_ms, eye_closed, mouth_open, config: FatigueConfig):
        ts = int(timestamp_ms)
        if self.buffer:
            last_ts, last_closed, _ = self.buffer[-1]
            if ts < last_ts:
                raise InputOrderError(f"timestamp {ts} ms precedes previous frame at {last_ts} ms")
            delta = ts - last_ts
            self.total_ms += delta
            if last_closed:
                self.closed_ms += delta
        self.buffer.append((ts, bool(eye_closed), bool(mouth_open)))
        horizon = ts - config.window_ms
        while self.buffer[0][0] < horizon:
            old_ts, old_closed, _ = self.buffer.popleft()
            delta = self.buffer[0][0] - old_ts
            self.total_ms -= delta
            if old_closed:
                self.closed_ms -= delta
        self.perclos_pct = _perclos(self.closed_ms, self.total_ms)
        self.drowsy = (self.perclos_pct >= config.perclos_threshold_pct
                       and 2 * self.total_ms >= config.window_ms)
        if mouth_open:
            self.mouth_run += 1
            if self.mouth_run == config.yawn_min_frames:
                self.yawn_event_count += 1
        else:
            self.mouth_run = 0
        return self


def update_fatigue(state: FatigueState, timestamp_ms, eye_closed, mouth_open,
                   config: FatigueConfig = FatigueConfig()) -> FatigueState:
    return state.update(timestamp_ms, eye_closed, mouth_open, config)


def perclos_oracle(sequence, window_ms):
    """Recompute PERCLOS for every frame from scratch over its trailing window.

    ``sequence`` is an iterable of ``(timestamp_ms, eye_closed)``.
    """
    seq = list(sequence)
    if not seq:
        return []
    ts = np.array([int(t) for t, _ in seq], dtype=np.int64)
    closed = np.array([bool(c) for _, c in seq])
    deltas = np.diff(ts)
    closed_deltas = np.where(closed[:-1], deltas, 0)
    trace = []
    for j in range(len(ts)):
        start = bisect.bisect_left(ts, ts[j] - window_ms, 0, j + 1)
        total = int(ts[j] - ts[start])
        closed_ms = int(closed_deltas[start:j].sum())
        trace.append(_perclos(closed_ms, total))
    return trace


# -- landmark files ------------------------------------------------------------------

def iter_landmarks(lines):
    """Stream :class:`LandmarkFrame` objects from text lines.

    Each frame is a ``frame <index> <timestamp_ms>`` header followed by 68
    ``<x> <y>`` lines; blank lines separate frames.
    """
    current = None
    points: list = []
    last_index = None

    def finish():
        nonlocal last_index
        index, ts = current
        if len(points) != N_POINTS:
            raise FormatError(f"frame {index}: expected {N_POINTS} points, got {len(points)}")
        if last_index is not None and index <= last_index:
            raise InputOrderError(f"frame {index} follows frame {last_index}; indices must increase")
        last_index = index
        return LandmarkFrame(index, ts, np.array(points))

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "frame":
            if current is not None:
                yield finish()
            if len(tokens) != 3:
                raise ParseError(f"expected 'frame <index> <timestamp_ms>', got {line!r}", line=lineno)
            try:
                current = (int(tokens[1]), int(tokens[2]))
            except ValueError:
                raise ParseError(f"non-integer frame header {line!r}", line=lineno) from None
            points = []
            continue
        if current is None:
            raise ParseError("point before any 'frame' header", line=lineno)
        if len(tokens) != 2:
            raise ParseError(f"expected '<x> <y>', got {line!r}", line=lineno)
        try:
            x, y = float(tokens[0]), float(tokens[1])
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {line!r}", line=lineno) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError(f"non-finite coordinate in {line!r}", line=lineno)
        points.append((x, y))
    if current is not None:
        yield finish()


def parse_landmarks(text: str) -> list[LandmarkFrame]:
    return list(iter_landmarks(text.splitlines()))


def format_landmarks(frames) -> str:
    chunks = []
    for f in frames:
        lines = [f"frame {f.frame_index} {f.timestamp_ms}"]
        lines += [f"{x:.4f} {y:.4f}" for x, y in f.points]
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"
