"""Supervised seizure-model training and unsupervised autoencoder training."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .models import ContextAutoencoder, EEGNetShape, Module, SeizureModel
from .signal import NEUROSKY_BANDS, BandDefinition, RawWindow, band_feature_vector

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12


class TrainError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 64
    val_fraction: float = 0.2
    early_stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise TrainError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise TrainError("epochs, batch_size and early_stop_patience must be positive")
        if self.lr <= 0:
            raise TrainError(f"lr must be positive, got {self.lr}")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""
    floored_features: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def standardization_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Per-feature mean and std; variances below 1e-12 are floored and reported."""
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    floored = [int(i) for i in np.flatnonzero(var < VAR_FLOOR)]
    return mean, np.sqrt(np.maximum(var, VAR_FLOOR)), floored


def stratified_split(labels: Sequence[int], val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split indices per class so each class keeps its share in validation."""
    labels = np.asarray(labels)
    train, val = [], []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_val = min(max(int(round(val_fraction * idx.size)), 1), idx.size - 1)
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def class_weights(labels: np.ndarray) -> dict[int, float]:
    """Inverse-frequency weights normalized so a balanced set gets 1.0 per class."""
    n = labels.size
    return {int(c): n / (2.0 * np.sum(labels == c)) for c in (0, 1)}


def _snapshot(model: Module) -> tuple[list[np.ndarray], list[tuple]]:
    params = [p.data.copy() for p in model.params]
    stats = [(bn.running_mean.copy(), bn.running_var.copy()) if bn.running_mean is not None else (None, None)
             for _, bn in model.batchnorms()]
    return params, stats


def _restore(model: Module, snap) -> None:
    params, stats = snap
    for p, saved in zip(model.params, params):
        p.data[...] = saved
    for (_, bn), (mean, var) in zip(model.batchnorms(), stats):
        bn.running_mean = None if mean is None else mean.copy()
        bn.running_var = None if var is None else var.copy()


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _predict(model: SeizureModel, bands: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = [model(bands[i : i + chunk], training=False)[0].data for i in range(0, len(bands), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def train_seizure_model(
    windows: Sequence[RawWindow],
    cfg: TrainConfig = TrainConfig(),
    bands: Sequence[BandDefinition] = NEUROSKY_BANDS,
    hidden: int = 256,
    shape: EEGNetShape = EEGNetShape(),
) -> tuple[SeizureModel, TrainReport]:
    """Train generator + EEGNet jointly on band features of labeled raw windows.

    Uses a stratified validation split, inverse-frequency class weights in
    the BCE, and early stopping that restores the best validation-loss epoch.
    """
    if not windows:
        raise TrainError("empty dataset")
    labels = np.array([w.label for w in windows])
    if any(w.label is None for w in windows):
        raise TrainError("every training window needs a label")
    counts = {c: int(np.sum(labels == c)) for c in (0, 1)}
    if min(counts.values()) < 2:
        raise TrainError(f"need at least 2 windows per class, got {counts}")
    features = np.stack([band_feature_vector(w, bands).as_array() for w in windows])
    return train_seizure_model_on_features(features, labels, cfg, hidden=hidden, shape=shape)


def train_seizure_model_on_features(
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    hidden: int = 256,
    shape: EEGNetShape = EEGNetShape(),
) -> tuple[SeizureModel, TrainReport]:
    labels = np.asarray(labels).astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = stratified_split(labels, cfg.val_fraction, rng)
    mean, std, floored = standardization_stats(features[train_idx])
    model = SeizureModel.create(cfg.seed, hidden=hidden, shape=shape)
    model.mean, model.std = mean, std

    weights = class_weights(labels[train_idx])
    sample_w = np.array([weights[int(y)] for y in labels])
    x_tr, y_tr, w_tr = features[train_idx], labels[train_idx], sample_w[train_idx]
    x_val, y_val, w_val = features[val_idx], labels[val_idx], sample_w[val_idx]

    state = nn.AdamState(lr=cfg.lr)
    report = TrainReport(floored_features=floored)
    params = model.params
    best_loss, best_snap, stale = np.inf, None, 0
    for epoch in range(cfg.epochs):
        total_loss = 0.0
        for batch in _batches(len(train_idx), cfg.batch_size, rng):
            prob, _ = model(x_tr[batch], training=True, rng=rng)
            loss = nn.bce_loss(prob, y_tr[batch], w_tr[batch])
            grads = nn.backward(loss, params)
            nn.adam_step([p.data for p in params], grads, state)
            total_loss += float(loss.data) * batch.size
        report.train_loss.append(total_loss / len(train_idx))

        pred = _predict(model, x_val)
        val_loss = float(nn.bce_loss(pred, y_val, w_val).data)
        report.val_loss.append(val_loss)
        report.val_accuracy.append(float(np.mean((pred >= 0.5) == (y_val == 1))))
        log.info("epoch %d train %.5f val %.5f acc %.3f", epoch, report.train_loss[-1], val_loss, report.val_accuracy[-1])

        if val_loss < best_loss:
            best_loss, best_snap, stale = val_loss, _snapshot(model), 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                report.stop_reason = "early_stop"
                break
    else:
        report.stop_reason = "max_epochs"
    _restore(model, best_snap)
    return model, report


def train_autoencoder(records, cfg: TrainConfig = TrainConfig()) -> tuple[ContextAutoencoder, TrainReport]:
    """Fit the autoencoder on z-scored band vectors of every window (no holdout).

    Early stopping tracks the training loss; the best epoch's parameters are
    restored. ``records`` may be WindowRecords or an (n, 10) array.
    """
    if len(records) == 0:
        raise TrainError("empty dataset")
    if len(records) < cfg.batch_size:
        raise TrainError(f"need at least batch_size={cfg.batch_size} windows, got {len(records)}")
    features = np.asarray(records, dtype=np.float64) if isinstance(records, np.ndarray) else np.stack(
        [r.band.as_array() for r in records]
    )
    mean, std, floored = standardization_stats(features)
    z = (features - mean) / std

    rng = np.random.default_rng(cfg.seed)
    ae = ContextAutoencoder(rng, mean=mean, std=std)
    state = nn.AdamState(lr=cfg.lr)
    report = TrainReport(floored_features=floored)
    params = ae.params
    best_loss, best_snap, stale = np.inf, None, 0
    for epoch in range(cfg.epochs):
        total_loss = 0.0
        for batch in _batches(len(z), cfg.batch_size, rng):
            rec, _ = ae(z[batch])
            loss = nn.mse_loss(rec, z[batch])
            grads = nn.backward(loss, params)
            nn.adam_step([p.data for p in params], grads, state)
            total_loss += float(loss.data) * batch.size
        epoch_loss = total_loss / len(z)
        report.train_loss.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss, best_snap, stale = epoch_loss, _snapshot(ae), 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                report.stop_reason = "early_stop"
                break
    else:
        report.stop_reason = "max_epochs"
    _restore(ae, best_snap)
    return ae, report


def reconstruction_mse(ae: ContextAutoencoder, features: np.ndarray) -> float:
    z = ae.standardize(features)
    rec, _ = ae(z)
    return float(np.mean((rec.data - z) ** 2))
