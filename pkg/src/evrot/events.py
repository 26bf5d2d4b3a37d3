"""Event streams: text I/O, fixed-rate segmentation and motion compensation."""

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .geometry import log_map, rotate_batch

DEFAULT_RATE = 1000.0
DEFAULT_EVENTS_PER_FRAME = 1500
DEFAULT_MIN_EVENTS = 50


@dataclass(frozen=True)
class Event:
    t: float
    u: int
    v: int
    p: int


class EventArray:
    """Columnar event storage: ``t`` (s), ``u``/``v`` (px), ``p`` in {-1, +1}.

    ``time_decimals`` records how many decimals timestamps were written with,
    so a parsed file serializes back to identical text.
    """

    __slots__ = ("t", "u", "v", "p", "time_decimals")

    def __init__(self, t, u, v, p, time_decimals=9):
        self.t = np.asarray(t, dtype=np.float64)
        self.u = np.asarray(u, dtype=np.int32)
        self.v = np.asarray(v, dtype=np.int32)
        self.p = np.asarray(p, dtype=np.int8)
        self.time_decimals = int(time_decimals)
        n = len(self.t)
        if not (len(self.u) == len(self.v) == len(self.p) == n):
            raise ValueError("event columns have different lengths")

    @classmethod
    def empty(cls):
        return cls(np.empty(0), np.empty(0), np.empty(0), np.empty(0))

    @classmethod
    def concatenate(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.t for p in parts]),
            np.concatenate([p.u for p in parts]),
            np.concatenate([p.v for p in parts]),
            np.concatenate([p.p for p in parts]),
            parts[0].time_decimals,
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, item):
        if isinstance(item, (int, np.integer)):
            return Event(float(self.t[item]), int(self.u[item]), int(self.v[item]), int(self.p[item]))
        return EventArray(self.t[item], self.u[item], self.v[item], self.p[item], self.time_decimals)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        span = f", t=[{self.t[0]:.6f}, {self.t[-1]:.6f}]" if len(self) else ""
        return f"EventArray(n={len(self)}{span})"

    def equals(self, other):
        return (
            np.array_equal(self.t, other.t) and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v) and np.array_equal(self.p, other.p)
        )


@dataclass(frozen=True)
class FrameConfig:
    f: float = DEFAULT_RATE
    n: int = DEFAULT_EVENTS_PER_FRAME
    min_events: int = DEFAULT_MIN_EVENTS

    def __post_init__(self):
        if not self.f > 0:
            raise ConfigError("f", f"segmentation frequency must be > 0, got {self.f}")
        if not self.min_events >= 1:
            raise ConfigError("min_events", f"must be >= 1, got {self.min_events}")
        if not self.n >= self.min_events:
            raise ConfigError("n", f"must be >= min_events ({self.min_events}), got {self.n}")


@dataclass
class Segment:
    """Events of one ``1/f`` slot; ``events`` is None when the slot was skipped."""

    index: int
    t_start: float
    events: EventArray = None
    count: int = 0

    @property
    def skipped(self):
        return self.events is None


@dataclass
class EventSphericalFrame:
    t0: float
    points: np.ndarray
    t_last: float = None

    def __len__(self):
        return len(self.points)


# --------------------------------------------------------------------------
# Text I/O
# --------------------------------------------------------------------------


def _read_text(source):
    if isinstance(source, os.PathLike):
        return Path(source).read_text()
    if isinstance(source, bytes):
        return source.decode()
    if isinstance(source, str):
        if "\n" not in source and source.strip() and Path(source).is_file():
            return Path(source).read_text()
        return source
    data = source.read()
    return data.decode() if isinstance(data, bytes) else data


def _check_line(lineno, line, width, height):
    parts = line.split()
    if len(parts) != 4:
        raise ParseError(f"expected 't u v p', got {line!r}", lineno)
    try:
        t = float(parts[0])
        u, v, p = (int(s) for s in parts[1:])
    except ValueError:
        raise ParseError(f"non-numeric field in {line!r}", lineno) from None
    if not np.isfinite(t) or t < 0:
        raise ParseError(f"timestamp must be finite and non-negative, got {parts[0]}", lineno)
    if p not in (0, 1):
        raise ParseError(f"polarity must be 0 or 1, got {p}", lineno)
    if width is not None and not (0 <= u < width and 0 <= v < height):
        raise ParseError(f"event (t={parts[0]}, u={u}, v={v}) lies outside the {width}x{height} sensor", lineno)
    return t


def parse_event_stream(source, width=None, height=None):
    """Parse ``t u v p`` lines (polarity 0/1 mapped to -1/+1).

    ``source`` is a path, text, bytes or a readable file object. Bounds are
    checked when ``width``/``height`` are given. Raises :class:`ParseError`
    carrying the 1-based line number of the first offending line.
    """
    text = _read_text(source)
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        return EventArray.empty()
    decimals = _decimals(lines[0].split()[0]) if lines[0].split() else 9
    tokens = text.split()
    arr = None
    if len(tokens) == 4 * len(lines):
        try:
            arr = np.array(tokens, dtype=np.float64).reshape(-1, 4)
        except ValueError:
            arr = None
    if arr is None:
        for lineno, line in enumerate(lines, start=1):
            _check_line(lineno, line, width, height)
        raise ParseError("malformed event stream")  # pragma: no cover
    t, u, v, p = arr.T
    bad = ~np.isfinite(t) | (t < 0) | (u != np.floor(u)) | (v != np.floor(v)) | ((p != 0) & (p != 1))
    if width is not None:
        bad |= (u < 0) | (u >= width) | (v < 0) | (v >= height)
    if bad.any():
        i = int(np.argmax(bad))
        _check_line(i + 1, lines[i], width, height)
        raise ParseError(f"invalid event {lines[i]!r}", i + 1)
    dec = np.flatnonzero(np.diff(t) < 0)
    if len(dec):
        i = int(dec[0]) + 1
        raise ParseError(f"timestamp {lines[i].split()[0]} decreases (previous {lines[i - 1].split()[0]})", i + 1)
    return EventArray(t, u.astype(np.int32), v.astype(np.int32), np.where(p > 0, 1, -1), decimals)


def _decimals(token):
    if "e" in token.lower() or "." not in token:
        return 9
    return len(token.split(".", 1)[1])


def format_events(events):
    d = events.time_decimals
    pol = (events.p > 0).astype(int)
    return "".join(
        f"{t:.{d}f} {u} {v} {p}\n" for t, u, v, p in zip(events.t.tolist(), events.u.tolist(),
                                                      events.v.tolist(), pol.tolist())
    )


def write_events(events, dest):
    """Write ``t u v p`` text to a path or a writable text stream."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as fh:
            _write_chunked(events, fh)
    else:
        _write_chunked(events, dest)


def _write_chunked(events, fh, chunk=200_000):
    for s in range(0, len(events), chunk):
        fh.write(format_events(events[s : s + chunk]))


def iter_event_file(path, width=None, height=None, chunk_lines=500_000):
    """Stream a large event file as ``EventArray`` chunks (line numbers stay global)."""
    last_t = -np.inf
    offset = 0
    with open(path) as fh:
        while True:
            lines = fh.readlines(chunk_lines * 32)
            if not lines:
                break
            try:
                ev = parse_event_stream("".join(lines), width, height)
            except ParseError as exc:
                raise ParseError(str(exc).split(": ", 1)[-1], (exc.lineno or 0) + offset) from None
            if len(ev) and ev.t[0] < last_t:
                raise ParseError(f"timestamp {ev.t[0]!r} decreases", offset + 1)
            if len(ev):
                last_t = ev.t[-1]
            offset += len(lines)
            yield ev


# --------------------------------------------------------------------------
# Segmentation
# --------------------------------------------------------------------------


def iter_segments(chunks, config):
    """Yield :class:`Segment` objects from time-ordered ``EventArray`` chunks.

    Slot ``k`` covers ``[t_first + k/f, t_first + (k+1)/f)`` where
    ``t_first`` is the first event's timestamp. Only the first ``n`` events
    of a slot are kept; slots with fewer than ``min_events`` are skipped.
    """
    f, n = config.f, config.n
    t_first = None
    k = 0
    pending = []
    pending_count = 0
    for chunk in chunks:
        if not len(chunk):
            continue
        if t_first is None:
            t_first = float(chunk.t[0])
        t = chunk.t
        start = 0
        while start < len(t):
            boundary = t_first + (k + 1) / f
            stop = int(np.searchsorted(t, boundary, side="left"))
            if stop > start:
                take = min(stop, start + max(n - pending_count, 0))
                if take > start:
                    pending.append(chunk[start:take])
                pending_count += stop - start
            if stop >= len(t):
                break
            yield _close(k, t_first + k / f, pending, pending_count, config)
            pending, pending_count = [], 0
            k += 1
            start = stop
            if t[start] >= t_first + (k + 1) / f:
                # jump over empty slots
                k_next = int(np.floor((t[start] - t_first) * f))
                while t_first + k_next / f > t[start]:
                    k_next -= 1
                while t_first + (k_next + 1) / f <= t[start]:
                    k_next += 1
                for kk in range(k, k_next):
                    yield Segment(kk, t_first + kk / f)
                k = k_next
    if t_first is not None:
        yield _close(k, t_first + k / f, pending, pending_count, config)


def _close(k, t_start, pending, count, config):
    if count < config.min_events:
        return Segment(k, t_start, None, count)
    return Segment(k, t_start, EventArray.concatenate(pending), count)


def segment_events(events, config):
    """All segments of an in-memory stream (see :func:`iter_segments`)."""
    return list(iter_segments([events], config))


# --------------------------------------------------------------------------
# Motion compensation
# --------------------------------------------------------------------------


def estimate_omega(history):
    """Body angular velocity (rad/s) from the two latest ``(t, R)`` poses.

    ``history`` items are ``(t, R)`` pairs or objects with ``t`` and ``R``.
    Returns zeros with fewer than two poses.
    """
    if len(history) < 2:
        return np.zeros(3)
    (t0, R0), (t1, R1) = (_pose(h) for h in history[-2:])
    if t1 == t0:
        raise ValueError(f"cannot estimate angular velocity from equal timestamps ({t0})")
    return log_map(R0.T @ R1, check=False) / (t1 - t0)


def _pose(item):
    if hasattr(item, "R"):
        return float(item.t), np.asarray(item.R)
    t, R = item
    return float(t), np.asarray(R)


def compensate_frame(events, omega, camera):
    """Project events to the sphere and warp them to the first event's time.

    With ``omega`` the body angular velocity (rad/s), a bearing observed at
    ``t_i`` is expressed in the camera frame at ``t0`` as
    ``exp((t_i - t0) * omega) p_i``.
    """
    if not len(events):
        raise ValueError("cannot build a frame from an empty segment")
    P = camera.bearings(events.u, events.v)
    t0 = float(events.t[0])
    omega = np.asarray(omega, dtype=float)
    if np.any(omega):
        P = rotate_batch((events.t - t0)[:, None] * omega, P)
    else:
        P = P.copy()
    return EventSphericalFrame(t0, P, float(events.t[-1]))


def max_warp_angle(events, omega):
    """Largest rotation (rad) applied to any event by :func:`compensate_frame`."""
    if not len(events):
        return 0.0
    return float(np.max(events.t - events.t[0]) * np.linalg.norm(omega))
