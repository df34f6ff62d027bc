"""Synthetic cohorts with known group structure, used as ground truth."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embed import WindowRecord
from .signal import (
    BAND_NAMES,
    NEUROSKY_BANDS,
    SAMPLE_RATE,
    WINDOW_LEN,
    BandDefinition,
    RawWindow,
    band_feature_vector,
)

THETA_DOMINANT = {
    "delta": 3.0, "theta": 12.0, "low_alpha": 3.0, "high_alpha": 2.5,
    "low_beta": 2.0, "high_beta": 1.5, "low_gamma": 1.0, "mid_gamma": 0.8,
}
BETA_DOMINANT = {
    "delta": 3.0, "theta": 2.5, "low_alpha": 3.0, "high_alpha": 2.5,
    "low_beta": 10.0, "high_beta": 8.0, "low_gamma": 1.0, "mid_gamma": 0.8,
}


class SynthError(ValueError):
    pass


@dataclass
class CohortSpec:
    """Two patient groups drawn around their own band-amplitude profiles (µV)."""

    n_patients: tuple[int, int] = (13, 12)
    windows_per_condition: int = 4
    profile_a: dict = field(default_factory=lambda: dict(THETA_DOMINANT))
    profile_b: dict = field(default_factory=lambda: dict(BETA_DOMINANT))
    jitter: float = 0.05
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.n_patients = tuple(int(n) for n in self.n_patients)
        if len(self.n_patients) != 2 or min(self.n_patients) < 1:
            raise SynthError(f"need two positive group sizes, got {self.n_patients}")
        if self.windows_per_condition < 1:
            raise SynthError("windows_per_condition must be positive")
        if self.jitter < 0 or self.noise_sigma < 0:
            raise SynthError("jitter and noise_sigma must be non-negative")
        for profile in (self.profile_a, self.profile_b):
            unknown = set(profile) - set(BAND_NAMES)
            if unknown:
                raise SynthError(f"unknown bands in profile: {sorted(unknown)}")
            if any(v < 0 for v in profile.values()):
                raise SynthError("profile amplitudes must be non-negative")

    @classmethod
    def from_json(cls, path: str | Path) -> "CohortSpec":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SynthError(f"unknown cohort spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_patients"] = list(self.n_patients)
        return d


def band_centers(bands: Sequence[BandDefinition] = NEUROSKY_BANDS) -> dict[str, float]:
    return {b.name: (b.lo + b.hi) / 2 for b in bands}


def synth_raw_window(
    profile: Mapping[str, float],
    seed=0,
    noise_sigma: float = 0.0,
    bands: Sequence[BandDefinition] = NEUROSKY_BANDS,
    label: int | None = None,
    record_id: str = "",
) -> RawWindow:
    """Sum of one random-phase sinusoid per band at its center, plus white noise.

    ``seed`` may be an int or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centers = band_centers(bands)
    t = np.arange(WINDOW_LEN) / SAMPLE_RATE
    x = np.zeros(WINDOW_LEN)
    for name in BAND_NAMES:
        amp = float(profile.get(name, 0.0))
        if amp < 0:
            raise SynthError(f"negative amplitude for {name}")
        phase = rng.uniform(0, 2 * np.pi)
        if amp:
            x += amp * np.sin(2 * np.pi * centers[name] * t + phase)
    if noise_sigma:
        x += rng.normal(0.0, noise_sigma, WINDOW_LEN)
    return RawWindow(x, label=label, record_id=record_id)


def _jittered(profile: Mapping[str, float], jitter: float, rng) -> dict[str, float]:
    return {
        name: max(float(profile.get(name, 0.0)) * (1 + jitter * rng.standard_normal()), 0.0)
        for name in BAND_NAMES
    }


def synth_cohort(spec: CohortSpec, bands: Sequence[BandDefinition] = NEUROSKY_BANDS):
    """Return (window records, labeled raw windows, patient labels).

    Group A patients carry label 1 and group B label 0; raw windows inherit
    their patient's label. Patient ids are assigned to groups in shuffled order.
    """
    rng = np.random.default_rng(spec.seed)
    n_a, n_b = spec.n_patients
    groups = rng.permutation(np.array([1] * n_a + [0] * n_b))
    width = max(3, len(str(n_a + n_b)))
    records: list[WindowRecord] = []
    raw: list[RawWindow] = []
    labels: dict[str, int] = {}
    for i, group in enumerate(groups):
        pid = f"P{i + 1:0{width}d}"
        labels[pid] = int(group)
        base = spec.profile_a if group == 1 else spec.profile_b
        patient_profile = _jittered(base, spec.jitter, rng)
        index = 0
        for condition in ("rest", "active"):
            for _ in range(spec.windows_per_condition):
                profile = _jittered(patient_profile, spec.jitter / 2, rng)
                window = synth_raw_window(
                    profile, rng, spec.noise_sigma, bands, label=int(group), record_id=f"{pid}-{condition}-{index}"
                )
                raw.append(window)
                records.append(WindowRecord(pid, condition, band_feature_vector(window, bands), index))
                index += 1
    return records, raw, labels


def null_spec(spec: CohortSpec) -> CohortSpec:
    """Same cohort layout with both groups drawn from profile A."""
    d = spec.to_dict()
    d["profile_b"] = dict(spec.profile_a)
    return CohortSpec(**d)
