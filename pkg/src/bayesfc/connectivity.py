"""Weighted connectivity matrices and their sliding-window stacks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRecording
from .signal import BandSpec, WindowPlan, band_preset
from .utils import SCHEMA_VERSION


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    """Symmetric, non-negative, zero-diagonal edge-strength matrix."""

    channel_names: tuple[str, ...]
    weights: np.ndarray
    method: str = "bsl"
    band: str | None = None
    window_index: int | None = None
    score: float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        n = len(self.channel_names)
        if w.shape != (n, n):
            raise InvalidRecording(f"weights shape {w.shape} does not match {n} channels")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidRecording("connectivity weights must be finite and non-negative")
        if not np.array_equal(w, w.T):
            raise InvalidRecording("connectivity weights must be symmetric")
        np.fill_diagonal(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n(self) -> int:
        return len(self.channel_names)

    @classmethod
    def from_upper(cls, channel_names, weights, **meta) -> "ConnectivityMatrix":
        """Build from any square array, symmetrizing from its strict upper triangle."""
        w = np.triu(np.asarray(weights, dtype=float), 1)
        return cls(tuple(channel_names), w + w.T, **meta)

    def edges_above(self, threshold: float) -> list[tuple[int, int, float]]:
        iu, ju = np.triu_indices(self.n, 1)
        vals = self.weights[iu, ju]
        keep = vals > threshold
        return [(int(i), int(j), float(v)) for i, j, v in zip(iu[keep], ju[keep], vals[keep])]

    def to_json(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "channels": list(self.channel_names),
            "weights": self.weights.tolist(),
            "method": self.method,
            "band": self.band,
            "window_index": self.window_index,
            "score": self.score,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConnectivityMatrix":
        return cls(
            tuple(obj["channels"]),
            np.asarray(obj["weights"], dtype=float),
            method=obj.get("method", "bsl"),
            band=obj.get("band"),
            window_index=obj.get("window_index"),
            score=obj.get("score"),
        )


@dataclass(frozen=True, eq=False)
class DynamicConnectivity:
    """Temporal stack of per-window matrices, shape N x N x W."""

    slices: tuple[ConnectivityMatrix, ...]
    window_plan: WindowPlan
    band: BandSpec
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        if self.slices:
            names = self.slices[0].channel_names
            if any(s.channel_names != names for s in self.slices):
                raise InvalidRecording("all slices must share channel names")

    @property
    def tensor(self) -> np.ndarray:
        return np.stack([s.weights for s in self.slices], axis=-1)

    def __len__(self) -> int:
        return len(self.slices)

    def to_json(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "window": {"length_s": self.window_plan.length_s, "stride_s": self.window_plan.stride_s},
            "band": {"name": self.band.name, "low_hz": self.band.low_hz, "high_hz": self.band.high_hz},
            "meta": dict(self.meta),
            "slices": [s.to_json() for s in self.slices],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DynamicConnectivity":
        b = obj["band"]
        band = band_preset(b["name"]) if b["name"] in ("theta", "alpha", "beta") else BandSpec(
            b["name"], b["low_hz"], b["high_hz"]
        )
        return cls(
            tuple(ConnectivityMatrix.from_json(s) for s in obj["slices"]),
            WindowPlan(obj["window"]["length_s"], obj["window"]["stride_s"]),
            band,
            obj.get("meta", {}),
        )


def load_matrices(obj) -> list[ConnectivityMatrix]:
    """Accept a single matrix, a list of matrices, or a dynamic stack."""
    if isinstance(obj, list):
        return [ConnectivityMatrix.from_json(o) for o in obj]
    if "slices" in obj:
        return [ConnectivityMatrix.from_json(o) for o in obj["slices"]]
    return [ConnectivityMatrix.from_json(obj)]
