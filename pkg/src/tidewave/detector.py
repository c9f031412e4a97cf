"""Online detection of tide turns and peak flow from a streaming S(b) feed.

S(b) collapses when the water level momentarily stops moving (high or low
water) and peaks near maximum flow, so tide turns are strict window minima of
S and peak flow strict window maxima. The detector keeps a look-back window
of ``look_back`` seconds and defers each candidate until ``look_ahead``
seconds of future samples have arrived, which bounds the decision latency to
exactly ``look_ahead``. Events are never revised or retracted.

Window extrema are tracked with monotone deques, so a stream of N samples
costs O(N) deque operations amortized; ``op_count`` exposes the tally for the
complexity test.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .util import ValidationError, require

KIND_HIGH_LOW = "high_low"
KIND_MAX_FLOW = "max_flow"


@dataclass(frozen=True)
class DetectorConfig:
    look_back: float = 2700.0   # seconds of history per window
    look_ahead: float = 300.0   # seconds of future buffered before deciding
    refractory: float = 300.0   # seconds of candidates skipped after a turn

    def __post_init__(self):
        require(self.look_back > self.look_ahead > 0,
                "need look_back > look_ahead > 0")
        require(self.refractory >= 0, "refractory must be non-negative")


@dataclass(frozen=True)
class DetectionEvent:
    time: float       # candidate timestamp b_k
    kind: str         # KIND_HIGH_LOW or KIND_MAX_FLOW
    value: float      # S at the candidate
    emit_time: float  # b_k + look_ahead, the causal emission instant

    def to_json(self) -> str:
        return json.dumps({"t": self.time, "kind": self.kind,
                           "s_value": self.value, "emitted_at": self.emit_time})

    @classmethod
    def from_json(cls, line: str) -> "DetectionEvent":
        d = json.loads(line)
        return cls(float(d["t"]), str(d["kind"]), float(d["s_value"]),
                   float(d["emitted_at"]))


class TurnDetector:
    """Single-pass turn / peak-flow detector over one S(b) stream.

    Strictly sequential state; run one instance per cell. Samples must arrive
    in strictly increasing time. The first spacing of a segment sets the
    cadence and must not exceed look_ahead / 2; later spacings up to
    look_ahead are tolerated (dropped samples thin the window), and a spacing
    beyond look_ahead clears all state and appends a notice to ``notices``.
    """

    def __init__(self, config: DetectorConfig | None = None):
        self.config = config or DetectorConfig()
        self.notices: list[tuple[float, str]] = []
        self.op_count = 0
        self._reset(None)

    def _reset(self, start_time):
        self._first_time = start_time
        self._last_time = start_time
        self._dt = None
        self._min_deque: deque[tuple[float, float]] = deque()
        self._max_deque: deque[tuple[float, float]] = deque()
        self._pending: deque[tuple[float, float]] = deque()
        self._refractory_until = -np.inf

    def push(self, time: float, s_value: float) -> list[DetectionEvent]:
        """Absorb one sample, return any events whose windows just closed."""
        time = float(time)
        s_value = float(s_value)
        require(np.isfinite(time), "sample time must be finite")
        require(np.isfinite(s_value), "S value must be finite; skip masked samples")
        cfg = self.config
        if self._last_time is not None:
            if time <= self._last_time:
                raise ValidationError(
                    f"non-monotone timestamp {time} after {self._last_time}")
            spacing = time - self._last_time
            if spacing > cfg.look_ahead:
                self.notices.append(
                    (time, f"gap of {spacing:g} s exceeds look_ahead; buffer reset"))
                self._reset(time)
            elif self._dt is None:
                require(spacing <= cfg.look_ahead / 2.0,
                        f"cadence {spacing:g} s exceeds look_ahead/2")
                self._dt = spacing
        if self._first_time is None:
            self._reset(time)

        events = []
        # Candidates whose window closed strictly before this arrival are
        # decided on the pre-arrival buffer; the rest, after absorbing it.
        self._evaluate_pending(time, inclusive=False, out=events)
        self._push_deques(time, s_value)
        self._evaluate_pending(time, inclusive=True, out=events)
        if time - self._first_time >= cfg.look_back:
            self._pending.append((time, s_value))
            self.op_count += 1
        self._last_time = time
        return events

    def _push_deques(self, t, s):
        while self._min_deque and self._min_deque[-1][1] > s:
            self._min_deque.pop()
            self.op_count += 1
        self._min_deque.append((t, s))
        while self._max_deque and self._max_deque[-1][1] < s:
            self._max_deque.pop()
            self.op_count += 1
        self._max_deque.append((t, s))
        self.op_count += 2

    def _evaluate_pending(self, now, inclusive, out):
        cfg = self.config
        while self._pending:
            t_c, s_c = self._pending[0]
            close = t_c + cfg.look_ahead
            if (close < now) if not inclusive else (close <= now):
                self._pending.popleft()
                self.op_count += 1
                if t_c <= self._refractory_until:
                    continue
                event = self._decide(t_c, s_c)
                if event is not None:
                    out.append(event)
                    if event.kind == KIND_HIGH_LOW:
                        self._refractory_until = t_c + cfg.refractory
            else:
                break

    def _decide(self, t_c, s_c):
        start = t_c - self.config.look_back
        for dq in (self._min_deque, self._max_deque):
            while dq and dq[0][0] < start:
                dq.popleft()
                self.op_count += 1
        emit = t_c + self.config.look_ahead
        dq = self._min_deque
        if dq[0][0] == t_c and (len(dq) == 1 or dq[1][1] > s_c):
            return DetectionEvent(t_c, KIND_HIGH_LOW, s_c, emit)
        dq = self._max_deque
        if dq[0][0] == t_c and (len(dq) == 1 or dq[1][1] < s_c):
            return DetectionEvent(t_c, KIND_MAX_FLOW, s_c, emit)
        return None


def detect_offline(feature, config: DetectorConfig | None = None,
                   detector: TurnDetector | None = None) -> list[DetectionEvent]:
    """Run the streaming detector over a stored TideBandFeature.

    Invalid or masked samples are skipped, so a long masked stretch triggers
    the same gap reset a live feed would see. The event list is identical to
    pushing the samples one by one, by construction.
    """
    if detector is None:
        detector = TurnDetector(config)
    require(len(feature) > 0, "empty feature series")
    events: list[DetectionEvent] = []
    for t, s, ok in zip(feature.times, feature.values, feature.valid):
        if not ok or not np.isfinite(s):
            continue
        events.extend(detector.push(float(t), float(s)))
    return events


def write_events(events, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ev in events:
            f.write(ev.to_json() + "\n")


def read_events(path) -> list[DetectionEvent]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(DetectionEvent.from_json(line))
    return out
