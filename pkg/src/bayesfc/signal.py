"""Multichannel recordings: ingestion, referencing, filtering, windowing, synthesis."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .errors import (
    BandOutOfRange,
    CyclicCouplingSpec,
    DuplicateChannelName,
    InvalidRecording,
    MalformedCsv,
    NonFiniteSample,
    SignalTooShort,
    WindowLongerThanSignal,
)

FILTER_ORDER = 4


class CognitiveTask(str, enum.Enum):
    MANIPULATION = "M"
    RETENTION = "R"


@dataclass(frozen=True)
class WmLoad:
    """One of the six working-memory conditions (5M, 6M, 7M, 5R, 6R, 7R)."""

    memory_load: int
    cognitive_task: CognitiveTask

    def __post_init__(self):
        if self.memory_load not in (5, 6, 7):
            raise ValueError(f"memory_load must be 5, 6 or 7, got {self.memory_load}")
        object.__setattr__(self, "cognitive_task", CognitiveTask(self.cognitive_task))

    @property
    def label(self) -> str:
        return f"{self.memory_load}{self.cognitive_task.value}"

    @property
    def index(self) -> int:
        return WM_LOADS.index(self)

    @classmethod
    def from_index(cls, k: int) -> "WmLoad":
        return WM_LOADS[k]

    @classmethod
    def from_label(cls, label: str) -> "WmLoad":
        return cls(int(label[:-1]), CognitiveTask(label[-1].upper()))


WM_LOADS: tuple[WmLoad, ...] = tuple(
    WmLoad(m, t) for t in (CognitiveTask.MANIPULATION, CognitiveTask.RETENTION) for m in (5, 6, 7)
)


@dataclass(frozen=True)
class BandSpec:
    name: str
    low_hz: float
    high_hz: float

    def __post_init__(self):
        if not (0 < self.low_hz < self.high_hz):
            raise BandOutOfRange(f"band {self.name}: need 0 < low < high, got ({self.low_hz}, {self.high_hz})")

    def check(self, fs: float) -> None:
        if self.high_hz >= fs / 2:
            raise BandOutOfRange(
                f"band {self.name} upper edge {self.high_hz} Hz is not below Nyquist ({fs / 2} Hz)"
            )

    @property
    def center_hz(self) -> float:
        return 0.5 * (self.low_hz + self.high_hz)


THETA = BandSpec("theta", 4.0, 8.0)
ALPHA = BandSpec("alpha", 8.0, 13.0)
BETA = BandSpec("beta", 15.0, 20.0)
BANDS = {b.name: b for b in (THETA, ALPHA, BETA)}


def band_preset(name: str, low: float | None = None, high: float | None = None) -> BandSpec:
    key = name.lower()
    if key == "custom":
        if low is None or high is None:
            raise BandOutOfRange("custom band requires both low and high edges")
        return BandSpec("custom", float(low), float(high))
    try:
        return BANDS[key]
    except KeyError:
        raise BandOutOfRange(f"unknown band {name!r}; expected one of {sorted(BANDS)} or custom") from None


@dataclass(frozen=True)
class WindowPlan:
    length_s: float
    stride_s: float

    def __post_init__(self):
        if self.length_s <= 0 or self.stride_s <= 0:
            raise ValueError("window length and stride must be positive")

    def n_samples(self, fs: float) -> int:
        return int(round(self.length_s * fs))


@dataclass(frozen=True, eq=False)
class Recording:
    """Multichannel time series, ``samples`` shaped (n_channels, n_samples)."""

    channel_names: tuple[str, ...]
    sampling_rate_hz: float
    samples: np.ndarray
    trial_label: WmLoad | None = field(default=None)

    def __post_init__(self):
        names = tuple(str(c) for c in self.channel_names)
        object.__setattr__(self, "channel_names", names)
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 2:
            raise InvalidRecording(f"samples must be 2-D, got shape {x.shape}")
        if x.shape[0] < 2 or x.shape[1] < 2:
            raise InvalidRecording(f"need at least 2 channels and 2 samples, got {x.shape}")
        if len(names) != x.shape[0]:
            raise InvalidRecording(f"{len(names)} channel names for {x.shape[0]} channels")
        if len(set(names)) != len(names):
            dupes = sorted({c for c in names if names.count(c) > 1})
            raise DuplicateChannelName(f"duplicate channel names: {dupes}")
        if not self.sampling_rate_hz > 0:
            raise InvalidRecording("sampling rate must be positive")
        if not np.all(np.isfinite(x)):
            raise NonFiniteSample("recording contains NaN or Inf")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz

    def with_samples(self, samples: np.ndarray) -> "Recording":
        return replace(self, samples=samples)

    def to_json(self) -> dict:
        out = {
            "v": 1,
            "channels": list(self.channel_names),
            "fs_hz": float(self.sampling_rate_hz),
            "samples": self.samples.tolist(),
        }
        if self.trial_label is not None:
            out["label"] = self.trial_label.label
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Recording":
        label = obj.get("label")
        return cls(
            tuple(obj["channels"]),
            float(obj["fs_hz"]),
            np.asarray(obj["samples"], dtype=float),
            WmLoad.from_label(label) if label else None,
        )


def load_csv(path: str | Path, sampling_rate_hz: float) -> Recording:
    """Read a header-of-channels / rows-of-samples CSV file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise MalformedCsv(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if len(set(header)) != len(header):
        dupes = sorted({c for c in header if header.count(c) > 1})
        raise DuplicateChannelName(f"{path}: duplicate channel names {dupes}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise MalformedCsv(f"{path}:{lineno}: expected {len(header)} values, got {len(row)}")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise MalformedCsv(f"{path}:{lineno}: non-numeric cell in {row!r}") from None
    x = np.asarray(data, dtype=float).reshape(len(data), len(header))
    if not np.all(np.isfinite(x)):
        raise NonFiniteSample(f"{path}: NaN or Inf sample")
    return Recording(tuple(header), float(sampling_rate_hz), x.T)


def save_csv(r: Recording, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(r.channel_names)
        for row in r.samples.T:
            w.writerow([repr(float(v)) for v in row])


def average_reference(r: Recording) -> Recording:
    x = r.samples
    return r.with_samples(x - x.mean(axis=0, keepdims=True))


def butter_sos(band: BandSpec, fs: float, order: int = FILTER_ORDER) -> np.ndarray:
    band.check(fs)
    return sps.butter(order, [band.low_hz, band.high_hz], btype="bandpass", fs=fs, output="sos")


def zero_phase_gain(band: BandSpec, fs: float, freqs_hz, order: int = FILTER_ORDER) -> np.ndarray:
    """Analytic magnitude response |H(f)|^2 of the forward-backward filter."""
    _, h = sps.sosfreqz(butter_sos(band, fs, order), worN=np.atleast_1d(freqs_hz), fs=fs)
    return np.abs(h) ** 2


def bandpass(r: Recording, band: BandSpec, order: int = FILTER_ORDER) -> Recording:
    """Zero-phase Butterworth band-pass of every channel.

    The band-pass design has ``2 * order`` poles; the signal is padded by odd
    reflection over three times that many samples at each end.
    """
    if r.n_samples < 12 * order:
        raise SignalTooShort(f"bandpass needs at least {12 * order} samples, got {r.n_samples}")
    sos = butter_sos(band, r.sampling_rate_hz, order)
    y = sps.sosfiltfilt(sos, r.samples, axis=-1, padtype="odd", padlen=3 * 2 * order)
    return r.with_samples(y)


def analytic_envelope(x: Sequence[float]) -> np.ndarray:
    """Magnitude of the analytic signal via the frequency-domain Hilbert method."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n < 4:
        raise SignalTooShort(f"envelope needs at least 4 samples, got {n}")
    spec = np.fft.fft(x, axis=-1)
    w = np.zeros(n)
    w[0] = 1.0
    if n % 2 == 0:
        w[n // 2] = 1.0
        w[1 : n // 2] = 2.0
    else:
        w[1 : (n + 1) // 2] = 2.0
    return np.abs(np.fft.ifft(spec * w, axis=-1))


def window_starts(r: Recording, plan: WindowPlan) -> list[int]:
    fs = r.sampling_rate_hz
    length = plan.n_samples(fs)
    if length < 4:
        raise ValueError(f"window of {plan.length_s} s holds fewer than 4 samples at {fs} Hz")
    if length > r.n_samples:
        raise WindowLongerThanSignal(
            f"window of {plan.length_s} s ({length} samples) exceeds the {r.duration_s:.3f} s signal"
        )
    count = int(math.floor((r.duration_s - plan.length_s) / plan.stride_s + 1e-9)) + 1
    starts = [int(round(k * plan.stride_s * fs)) for k in range(count)]
    return [s for s in starts if s + length <= r.n_samples]


def slice_windows(r: Recording, plan: WindowPlan) -> list[Recording]:
    length = plan.n_samples(r.sampling_rate_hz)
    return [r.with_samples(r.samples[:, s : s + length]) for s in window_starts(r, plan)]


def _topological_order(n: int, edges) -> list[int]:
    indeg = [0] * n
    children: list[list[int]] = [[] for _ in range(n)]
    for src, dst, *_ in edges:
        if not (0 <= src < n and 0 <= dst < n) or src == dst:
            raise CyclicCouplingSpec(f"invalid coupling {src}->{dst} for {n} channels")
        children[src].append(dst)
        indeg[dst] += 1
    order = [i for i in range(n) if indeg[i] == 0]
    for u in order:
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                order.append(v)
    if len(order) != n:
        raise CyclicCouplingSpec("coupling edges contain a cycle")
    return order


def synth_coupled(
    n_channels: int,
    duration_s: float,
    fs: float,
    edges: Sequence[tuple[int, int, float, int]],
    noise_sd: float,
    seed: int,
    source_cutoff_hz: float = 30.0,
) -> Recording:
    """Lagged linear coupling of band-limited Gaussian sources.

    Channels without incoming edges are unit-variance Gaussian noise low-passed
    at ``source_cutoff_hz``. A coupled channel is
    ``sum(gain * src[t - lag]) + N(0, noise_sd**2)``.
    """
    edges = [(int(s), int(d), float(g), int(lag)) for s, d, g, lag in edges]
    for s, d, _, lag in edges:
        if lag < 1:
            raise CyclicCouplingSpec(f"edge {s}->{d}: lag must be >= 1 sample")
    order = _topological_order(n_channels, edges)
    n = int(round(duration_s * fs))
    burn = sum(lag for *_, lag in edges) + 1
    total = n + burn
    rng = np.random.default_rng(seed)
    sos = sps.butter(4, min(source_cutoff_hz, 0.45 * fs), btype="lowpass", fs=fs, output="sos")
    incoming: dict[int, list[tuple[int, float, int]]] = {}
    for s, d, g, lag in edges:
        incoming.setdefault(d, []).append((s, g, lag))

    x = np.zeros((n_channels, total))
    # one draw per channel in index order keeps the stream layout independent of the edge set
    white = rng.standard_normal((n_channels, total + 200))
    noise = rng.standard_normal((n_channels, total))
    for c in order:
        if c not in incoming:
            src = sps.sosfilt(sos, white[c])[200:]
            x[c] = src / src.std()
        else:
            acc = np.zeros(total)
            for s, g, lag in incoming[c]:
                acc[lag:] += g * x[s, :-lag]
            x[c] = acc + noise_sd * noise[c]
    names = tuple(f"ch{i}" for i in range(n_channels))
    return Recording(names, float(fs), x[:, burn:])


def synth_quadrature(
    duration_s: float = 10.0,
    fs: float = 500.0,
    freq_hz: float = 10.0,
    noise_sd: float = 0.05,
    seed: int = 0,
    n_channels: int = 4,
) -> Recording:
    """Channels 0 and 1 carry a sinusoid 90 degrees apart; the rest are white noise."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    x = rng.standard_normal((n_channels, n))
    x[0] = np.cos(2 * np.pi * freq_hz * t) + noise_sd * x[0]
    x[1] = np.sin(2 * np.pi * freq_hz * t) + noise_sd * x[1]
    return Recording(tuple(f"ch{i}" for i in range(n_channels)), float(fs), x)
