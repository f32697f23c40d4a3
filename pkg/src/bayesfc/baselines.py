"""Classical connectivity estimators: Pearson, imaginary coherence, envelope correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .connectivity import ConnectivityMatrix
from .errors import ConstantChannel, TooFewSegments
from .signal import BandSpec, Recording, analytic_envelope, bandpass

EDGE_DISCARD = 0.1


@dataclass(frozen=True)
class SpectralConfig:
    """Welch settings; ``segment_samples=None`` means one second, shrunk to fit two segments."""

    segment_samples: int | None = None
    overlap_fraction: float = 0.5
    taper: str = "hann"

    def __post_init__(self):
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1)")
        if self.taper != "hann":
            raise ValueError("only the Hann taper is supported")

    def resolve(self, n_samples: int, fs: float) -> tuple[int, int]:
        seg = self.segment_samples
        if seg is None:
            seg = int(round(fs))
            if _n_segments(n_samples, seg, int(seg * self.overlap_fraction)) < 2:
                seg = n_samples // 2
        if seg < 8 or seg > n_samples:
            raise TooFewSegments(f"segment of {seg} samples does not fit a {n_samples}-sample window")
        noverlap = int(seg * self.overlap_fraction)
        if _n_segments(n_samples, seg, noverlap) < 2:
            raise TooFewSegments(f"{n_samples} samples give fewer than 2 Welch segments of {seg}")
        return seg, noverlap


def _n_segments(n: int, seg: int, noverlap: int) -> int:
    if seg > n:
        return 0
    return 1 + (n - seg) // (seg - noverlap)


def _abs_corr(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=1)
    if np.any(sd == 0):
        raise ConstantChannel(f"constant channel(s) at index {np.flatnonzero(sd == 0).tolist()}")
    c = np.abs(np.corrcoef(x))
    return np.clip(c, 0.0, 1.0)


def pearson_connectivity(window: Recording) -> ConnectivityMatrix:
    return ConnectivityMatrix.from_upper(window.channel_names, _abs_corr(window.samples), method="pearson")


def cross_spectra(window: Recording, cfg: SpectralConfig = SpectralConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Welch cross-spectral matrix, shape (n_channels, n_channels, n_freqs)."""
    x = window.samples
    seg, noverlap = cfg.resolve(window.n_samples, window.sampling_rate_hz)
    f, s = sps.csd(
        x[:, None, :], x[None, :, :], fs=window.sampling_rate_hz, window="hann",
        nperseg=seg, noverlap=noverlap, detrend=False, axis=-1,
    )
    return f, s


def imcoh_connectivity(
    window: Recording, band: BandSpec, cfg: SpectralConfig = SpectralConfig()
) -> ConnectivityMatrix:
    """Mean over in-band Welch bins of |Im coherency|."""
    band.check(window.sampling_rate_hz)
    f, s = cross_spectra(window, cfg)
    in_band = (f >= band.low_hz) & (f <= band.high_hz)
    if not in_band.any():
        in_band = np.abs(f - band.center_hz) == np.abs(f - band.center_hz).min()
    s = s[:, :, in_band]
    auto = np.real(np.einsum("iif->if", s))
    if np.any(auto <= 0):
        raise ConstantChannel("a channel has zero in-band power")
    denom = np.sqrt(auto[:, None, :] * auto[None, :, :])
    w = np.abs(np.imag(s) / denom).mean(axis=-1)
    return ConnectivityMatrix.from_upper(window.channel_names, np.clip(w, 0.0, 1.0), method="imcoh",
                                         band=band.name)


def aec_connectivity(window: Recording, band: BandSpec) -> ConnectivityMatrix:
    """|Pearson| between band-limited amplitude envelopes (no leakage correction)."""
    env = analytic_envelope(bandpass(window, band).samples)
    cut = int(EDGE_DISCARD * window.n_samples)
    env = env[:, cut : window.n_samples - cut]
    return ConnectivityMatrix.from_upper(window.channel_names, _abs_corr(env), method="aec", band=band.name)
