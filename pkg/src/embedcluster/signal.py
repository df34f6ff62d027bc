"""Windowing, power spectra and NeuroSky-style band features for single-channel EEG."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SAMPLE_RATE = 256
WINDOW_LEN = 2048

BAND_NAMES = (
    "delta",
    "theta",
    "low_alpha",
    "high_alpha",
    "low_beta",
    "high_beta",
    "low_gamma",
    "mid_gamma",
)
FEATURE_NAMES = BAND_NAMES + ("attention", "meditation")


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class RawWindow:
    samples: np.ndarray
    label: int | None = None
    sample_rate: int = SAMPLE_RATE
    record_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.shape[0] != WINDOW_LEN:
            raise SignalError(f"raw window must hold {WINDOW_LEN} samples, got shape {samples.shape}")
        bad = np.flatnonzero(~np.isfinite(samples))
        if bad.size:
            raise SignalError(f"non-finite sample at index {bad[0]}")
        if self.sample_rate != SAMPLE_RATE:
            raise SignalError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if self.label not in (None, 0, 1):
            raise SignalError(f"label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class BandDefinition:
    name: str
    lo: float
    hi: float


NEUROSKY_BANDS = (
    BandDefinition("delta", 0.5, 2.75),
    BandDefinition("theta", 3.5, 6.75),
    BandDefinition("low_alpha", 7.5, 9.25),
    BandDefinition("high_alpha", 10.0, 11.75),
    BandDefinition("low_beta", 13.0, 16.75),
    BandDefinition("high_beta", 18.0, 29.75),
    BandDefinition("low_gamma", 31.0, 39.75),
    BandDefinition("mid_gamma", 41.0, 49.75),
)


@dataclass(frozen=True)
class BandVector:
    delta: float
    theta: float
    low_alpha: float
    high_alpha: float
    low_beta: float
    high_beta: float
    low_gamma: float
    mid_gamma: float
    attention: float
    meditation: float

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise SignalError("band vector has non-finite components")
        if np.any(values[:8] < 0):
            raise SignalError("band powers must be non-negative")
        if not (0.0 <= self.attention <= 100.0 and 0.0 <= self.meditation <= 100.0):
            raise SignalError("attention/meditation must lie in [0, 100]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "BandVector":
        values = [float(v) for v in values]
        if len(values) != 10:
            raise SignalError(f"band vector needs 10 values, got {len(values)}")
        return cls(*values)


def validate_bands(bands: Sequence[BandDefinition], sample_rate: int = SAMPLE_RATE) -> None:
    nyquist = sample_rate / 2
    names = [b.name for b in bands]
    if tuple(names) != BAND_NAMES:
        raise SignalError(f"expected bands {BAND_NAMES}, got {tuple(names)}")
    for band in bands:
        if not (0 < band.lo < band.hi <= nyquist):
            raise SignalError(f"band {band.name} [{band.lo}, {band.hi}] outside (0, {nyquist}]")
    for prev, cur in zip(bands, bands[1:]):
        if cur.lo < prev.hi:
            raise SignalError(f"bands {prev.name} and {cur.name} overlap or are unsorted")


def load_band_config(path: str | Path) -> tuple[BandDefinition, ...]:
    """Read band edges from lines of the form ``name = lo,hi``.

    Blank lines and ``#`` comments are ignored. Bands missing from the file keep
    their NeuroSky defaults.
    """
    edges = {b.name: (b.lo, b.hi) for b in NEUROSKY_BANDS}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SignalError(f"{path}:{lineno}: expected 'name = lo,hi'")
        name, value = (s.strip() for s in line.split("=", 1))
        if name not in edges:
            raise SignalError(f"{path}:{lineno}: unknown band {name!r}")
        try:
            lo, hi = (float(v) for v in value.split(","))
        except ValueError:
            raise SignalError(f"{path}:{lineno}: bad edges {value!r}") from None
        edges[name] = (lo, hi)
    bands = tuple(BandDefinition(name, *edges[name]) for name in BAND_NAMES)
    validate_bands(bands)
    return bands


def write_band_config(bands: Iterable[BandDefinition], path: str | Path) -> None:
    lines = [f"{b.name} = {b.lo!r},{b.hi!r}" for b in bands]
    Path(path).write_text("\n".join(lines) + "\n")


def segment_windows(signal: Sequence[float], window_len: int, hop: int) -> list[np.ndarray]:
    if window_len <= 0 or hop <= 0:
        raise SignalError("window_len and hop must be positive")
    x = np.asarray(signal, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise SignalError(f"non-finite sample at index {bad[0]}")
    if x.shape[0] < window_len:
        return []
    count = (x.shape[0] - window_len) // hop + 1
    return [x[i * hop : i * hop + window_len].copy() for i in range(count)]


def _samples(window) -> np.ndarray:
    if isinstance(window, RawWindow):
        return window.samples
    x = np.asarray(window, dtype=np.float64)
    if x.ndim != 1:
        raise SignalError(f"expected a 1-d window, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise SignalError("window contains non-finite samples")
    return x


def power_spectrum(window) -> np.ndarray:
    """One-sided power per frequency bin of the mean-removed window.

    Bin ``k`` sits at ``k * fs / T``. Interior bins are doubled so that the
    spectrum sums to the window's variance (rectangular window, no padding).
    """
    x = _samples(window)
    n = x.shape[0]
    spectrum = np.abs(np.fft.rfft(x - x.mean())) ** 2 / n**2
    if n % 2 == 0:
        spectrum[1:-1] *= 2.0
    else:
        spectrum[1:] *= 2.0
    return spectrum


def bin_frequencies(n_bins: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    n = 2 * (n_bins - 1)
    return np.arange(n_bins) * sample_rate / n


def band_power(
    spectrum: np.ndarray,
    band: BandDefinition,
    sample_rate: int = SAMPLE_RATE,
    include_upper: bool = False,
) -> float:
    spectrum = np.asarray(spectrum, dtype=np.float64)
    nyquist = sample_rate / 2
    if not (0 <= band.lo < band.hi <= nyquist):
        raise SignalError(f"band {band.name} [{band.lo}, {band.hi}] outside [0, {nyquist}]")
    freqs = bin_frequencies(spectrum.shape[0], sample_rate)
    upper = freqs <= band.hi if include_upper else freqs < band.hi
    return float(spectrum[(freqs >= band.lo) & upper].sum())


def proxies(powers: Sequence[float]) -> tuple[float, float]:
    """Attention/meditation scores from beta and alpha dominance over theta+alpha+beta."""
    theta = powers[1]
    alpha = powers[2] + powers[3]
    beta = powers[4] + powers[5]
    total = alpha + beta + theta
    if total <= 0:
        return 50.0, 50.0
    attention = min(max(100.0 * beta / total, 0.0), 100.0)
    meditation = min(max(100.0 * alpha / total, 0.0), 100.0)
    return attention, meditation


def band_feature_vector(window, bands: Sequence[BandDefinition] = NEUROSKY_BANDS) -> BandVector:
    validate_bands(bands)
    spectrum = power_spectrum(window)
    last = len(bands) - 1
    powers = [band_power(spectrum, b, include_upper=(i == last)) for i, b in enumerate(bands)]
    return BandVector(*powers, *proxies(powers))
