"""Window embeddings (EEGNet and autoencoder paths) and patient aggregation."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import ContextAutoencoder, SeizureModel
from .signal import BandVector

CONDITIONS = ("rest", "active")
SOURCE_DIMS = {"eegnet": 2048, "autoencoder": 32}
# standardized-feature indices per context group; the last group averages the two proxies
CONTEXT_GROUPS = (
    ("delta", (0,), "sum"),
    ("theta", (1,), "sum"),
    ("alpha", (2, 3), "sum"),
    ("beta", (4, 5), "sum"),
    ("gamma", (6, 7), "sum"),
    ("proxy", (8, 9), "mean"),
)


class EmbedError(ValueError):
    pass


@dataclass(frozen=True)
class WindowRecord:
    patient_id: str
    condition: str
    band: BandVector
    window_index: int = 0

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise EmbedError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")


@dataclass
class PatientEmbedding:
    patient_id: str
    source: str
    vector: np.ndarray
    n_windows: int

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.source not in SOURCE_DIMS:
            raise EmbedError(f"unknown embedding source {self.source!r}")
        if self.vector.shape != (SOURCE_DIMS[self.source],):
            raise EmbedError(
                f"{self.source} patient embedding must have {SOURCE_DIMS[self.source]} dims, got {self.vector.shape}"
            )
        if self.n_windows < 1:
            raise EmbedError("n_windows must be at least 1")
        if not np.all(np.isfinite(self.vector)):
            raise EmbedError(f"non-finite embedding for patient {self.patient_id}")


def _band_array(band) -> np.ndarray:
    return band.as_array() if isinstance(band, BandVector) else np.asarray(band, dtype=np.float64)


def eegnet_window_embedding(model: SeizureModel, band) -> np.ndarray:
    if not isinstance(model, SeizureModel):
        raise EmbedError(f"expected an eegnet checkpoint, got {type(model).__name__}")
    _, emb = model(_band_array(band), training=False)
    return emb.data


def eegnet_embeddings(model: SeizureModel, bands: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Batched penultimate features for an (n, 10) array of band vectors."""
    if not isinstance(model, SeizureModel):
        raise EmbedError(f"expected an eegnet checkpoint, got {type(model).__name__}")
    out = [model(bands[i : i + chunk], training=False)[1].data for i in range(0, len(bands), chunk)]
    return np.concatenate(out)


def context_summaries(records: Sequence[WindowRecord], mean, std) -> tuple[np.ndarray, dict[str, bool]]:
    """12 condition summaries for one patient: 6 standardized band groups x (rest, active).

    Returns the vector and a per-condition flag telling whether that condition
    had any windows (missing conditions contribute zeros).
    """
    if not records:
        raise EmbedError("context summaries need at least one window")
    mean, std = np.asarray(mean, dtype=np.float64), np.asarray(std, dtype=np.float64)
    out = []
    present = {}
    for condition in CONDITIONS:
        rows = [(_band_array(r.band) - mean) / std for r in records if r.condition == condition]
        present[condition] = bool(rows)
        if not rows:
            out.extend([0.0] * len(CONTEXT_GROUPS))
            continue
        z = np.stack(rows)
        for _, idx, how in CONTEXT_GROUPS:
            cols = z[:, list(idx)]
            group = cols.sum(axis=1) if how == "sum" else cols.mean(axis=1)
            out.append(float(group.mean()))
    return np.array(out), present


def autoencoder_window_embedding(model: ContextAutoencoder, record: WindowRecord, context) -> np.ndarray:
    """Concatenate the 4-d code of one window with its patient's 12-d context."""
    if not isinstance(model, ContextAutoencoder):
        raise EmbedError(f"expected an autoencoder checkpoint, got {type(model).__name__}")
    context = np.asarray(context, dtype=np.float64)
    if context.shape != (12,):
        raise EmbedError(f"context must have 12 values, got shape {context.shape}")
    code = model.encode(model.standardize(_band_array(record.band))).data
    return np.concatenate([code, context])


def aggregate_patient(embeddings, patient_id: str = "", source: str | None = None) -> PatientEmbedding | np.ndarray:
    """Concatenate elementwise mean and population std over a patient's windows.

    With ``source`` given, returns a validated PatientEmbedding; otherwise the
    raw vector.
    """
    rows = [np.asarray(e, dtype=np.float64) for e in embeddings]
    if not rows:
        raise EmbedError("cannot aggregate zero windows")
    dims = {r.shape for r in rows}
    if len(dims) != 1 or rows[0].ndim != 1:
        raise EmbedError(f"window embeddings have mismatched shapes: {sorted(dims)}")
    stacked = np.stack(rows)
    mean, std = stacked.mean(axis=0), stacked.std(axis=0)
    # columns that never vary get their exact value and zero spread, free of round-off
    constant = np.all(stacked == stacked[0], axis=0)
    mean[constant], std[constant] = stacked[0, constant], 0.0
    vector = np.concatenate([mean, std])
    if source is None:
        return vector
    return PatientEmbedding(patient_id, source, vector, len(rows))


def group_by_patient(records: Sequence[WindowRecord]) -> "OrderedDict[str, list[int]]":
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        groups.setdefault(r.patient_id, []).append(i)
    return OrderedDict(sorted(groups.items()))


def patient_embeddings(model, records: Sequence[WindowRecord]) -> list[PatientEmbedding]:
    """Embed every window with ``model`` and aggregate per patient (sorted by id)."""
    if not records:
        raise EmbedError("no window records to embed")
    groups = group_by_patient(records)
    out = []
    if isinstance(model, SeizureModel):
        bands = np.stack([_band_array(r.band) for r in records])
        window_emb = eegnet_embeddings(model, bands)
        for pid, idx in groups.items():
            out.append(aggregate_patient(window_emb[idx], pid, "eegnet"))
    elif isinstance(model, ContextAutoencoder):
        for pid, idx in groups.items():
            recs = [records[i] for i in idx]
            context, _ = context_summaries(recs, model.mean, model.std)
            embs = [autoencoder_window_embedding(model, r, context) for r in recs]
            out.append(aggregate_patient(embs, pid, "autoencoder"))
    else:
        raise EmbedError(f"unsupported model type {type(model).__name__}")
    return out
