"""CSV datasets, embeddings, labels and versioned text checkpoints."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embed import CONDITIONS, PatientEmbedding, WindowRecord
from .models import ContextAutoencoder, EEGNet82, EEGNetShape, GeneratorHead, Module, SeizureModel
from .signal import FEATURE_NAMES, WINDOW_LEN, BandVector, RawWindow

WINDOW_COLUMNS = ("patient_id", "condition", "window_index") + FEATURE_NAMES
RAW_COLUMNS = ("record_id", "label") + tuple(f"s{i}" for i in range(WINDOW_LEN))
BAND_COLUMNS = ("record_id", "label") + FEATURE_NAMES
LABEL_COLUMNS = ("patient_id", "label")

CHECKPOINT_FORMAT = "embedcluster-checkpoint"
CHECKPOINT_VERSION = 1
KIND_SEIZURE = "generator+eegnet"
KIND_AUTOENCODER = "autoencoder"


class DataFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def fmt(value: float) -> str:
    """Shortest round-tripping decimal form of a float."""
    return repr(float(value))


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataFormatError(f"row {row}, column {col!r}: not a number: {cell!r}") from None
    if not math.isfinite(value):
        raise DataFormatError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return value


def _parse_int(cell: str, row: int, col: str) -> int:
    try:
        return int(cell)
    except ValueError:
        raise DataFormatError(f"row {row}, column {col!r}: not an integer: {cell!r}") from None


def _check_header(header: Sequence[str] | None, expected: Sequence[str], path) -> None:
    if header is None:
        raise DataFormatError(f"{path}: missing header")
    for i, name in enumerate(expected):
        if i >= len(header):
            raise DataFormatError(f"{path}: missing column {name!r}")
        if header[i] != name:
            raise DataFormatError(f"{path}: expected column {name!r} at position {i}, found {header[i]!r}")
    if len(header) > len(expected):
        raise DataFormatError(f"{path}: unexpected extra column {header[len(expected)]!r}")


def _rows(path, expected: Sequence[str], column_map: Mapping[str, str] | None = None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and column_map:
            header = [column_map.get(h, h) for h in header]
        _check_header(header, expected, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DataFormatError(f"{path}: row {lineno} has {len(row)} cells, expected {len(expected)}")
            yield lineno, row


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_window_csv(path, column_map: Mapping[str, str] | None = None) -> list[WindowRecord]:
    """Read consumer-EEG windows; ``column_map`` renames source columns to ours."""
    records = []
    for lineno, row in _rows(path, WINDOW_COLUMNS, column_map):
        pid, condition = row[0], row[1]
        if not pid:
            raise DataFormatError(f"{path}: row {lineno}: empty patient_id")
        if condition not in CONDITIONS:
            raise DataFormatError(f"{path}: row {lineno}: unknown condition {condition!r}")
        index = _parse_int(row[2], lineno, "window_index")
        values = [_parse_float(c, lineno, name) for c, name in zip(row[3:], FEATURE_NAMES)]
        try:
            band = BandVector(*values)
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {lineno}: {exc}") from None
        records.append(WindowRecord(pid, condition, band, index))
    return records


def write_window_csv(records: Sequence[WindowRecord], path) -> None:
    _write_csv(
        path,
        WINDOW_COLUMNS,
        ([r.patient_id, r.condition, str(r.window_index)] + [fmt(v) for v in r.band.as_array()] for r in records),
    )


def _parse_label(cell: str, lineno: int) -> int:
    if cell not in ("0", "1"):
        raise DataFormatError(f"row {lineno}: label must be 0 or 1, got {cell!r}")
    return int(cell)


def read_raw_windows(path) -> list[RawWindow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(header, RAW_COLUMNS, path)
        windows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RAW_COLUMNS):
                raise DataFormatError(
                    f"{path}: row {lineno} has {len(row) - 2} samples, expected {WINDOW_LEN}"
                )
            label = _parse_label(row[1], lineno)
            samples = np.array([_parse_float(c, lineno, f"s{i}") for i, c in enumerate(row[2:])])
            windows.append(RawWindow(samples, label=label, record_id=row[0]))
    return windows


def write_raw_windows(windows: Sequence[RawWindow], path) -> None:
    def rows():
        for i, w in enumerate(windows):
            if w.label is None:
                raise DataFormatError(f"window {i} has no label")
            yield [w.record_id or str(i), str(w.label)] + [fmt(v) for v in w.samples]

    _write_csv(path, RAW_COLUMNS, rows())


def write_band_csv(record_ids: Sequence[str], labels: Sequence[int | None], bands: Sequence[BandVector], path) -> None:
    _write_csv(
        path,
        BAND_COLUMNS,
        ([rid, "" if lab is None else str(lab)] + [fmt(v) for v in b.as_array()] for rid, lab, b in zip(record_ids, labels, bands)),
    )


def read_labels_csv(path) -> dict[str, int]:
    labels: dict[str, int] = {}
    for lineno, row in _rows(path, LABEL_COLUMNS):
        if row[0] in labels:
            raise DataFormatError(f"{path}: row {lineno}: duplicate patient {row[0]!r}")
        labels[row[0]] = _parse_label(row[1], lineno)
    return labels


def write_labels_csv(labels: Mapping[str, int], path) -> None:
    _write_csv(path, LABEL_COLUMNS, ([pid, str(int(lab))] for pid, lab in sorted(labels.items())))


def read_metadata_csv(path) -> dict[str, dict[str, str]]:
    """Optional per-patient metadata carried through untouched, keyed by patient_id."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or reader.fieldnames[0] != "patient_id":
            raise DataFormatError(f"{path}: first column must be 'patient_id'")
        out = {}
        for lineno, row in enumerate(reader, start=2):
            pid = row.pop("patient_id")
            if pid in out:
                raise DataFormatError(f"{path}: row {lineno}: duplicate patient {pid!r}")
            out[pid] = dict(row)
    return out


def write_embeddings_csv(embeddings: Sequence[PatientEmbedding], path) -> None:
    if not embeddings:
        raise DataFormatError("no embeddings to write")
    dim = embeddings[0].vector.size
    header = ["patient_id", "source", "n_windows"] + [f"e{i}" for i in range(dim)]
    _write_csv(
        path,
        header,
        ([e.patient_id, e.source, str(e.n_windows)] + [fmt(v) for v in e.vector] for e in embeddings),
    )


def read_embeddings_csv(path) -> list[PatientEmbedding]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["patient_id", "source", "n_windows"]:
            raise DataFormatError(f"{path}: header must start with patient_id,source,n_windows")
        dim = len(header) - 3
        _check_header(header, ["patient_id", "source", "n_windows"] + [f"e{i}" for i in range(dim)], path)
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            vector = [_parse_float(c, lineno, header[i + 3]) for i, c in enumerate(row[3:])]
            try:
                out.append(PatientEmbedding(row[0], row[1], np.array(vector), _parse_int(row[2], lineno, "n_windows")))
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {lineno}: {exc}") from None
    return out


@dataclass
class Checkpoint:
    kind: str
    hyper: dict
    params: dict[str, np.ndarray]
    batchnorm: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    standardization: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None
    train: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_model(cls, model: Module, seed: int | None = None, train: Mapping | None = None) -> "Checkpoint":
        params = {name: p.data.copy() for name, p in model.named_params()}
        bns = {
            name: {"running_mean": bn.running_mean.copy(), "running_var": bn.running_var.copy()}
            for name, bn in model.batchnorms()
            if bn.running_mean is not None
        }
        if isinstance(model, SeizureModel):
            kind = KIND_SEIZURE
            s = model.eegnet.shape
            hyper = {
                "generator_hidden": model.generator.hidden,
                "n_in": model.generator.n_in,
                "length": s.length, "f1": s.f1, "depth": s.depth, "f2": s.f2,
                "temporal_kernel": s.temporal_kernel, "separable_kernel": s.separable_kernel,
                "pool1": s.pool1, "pool2": s.pool2, "dropout": s.dropout,
                "bn_momentum": model.eegnet.bn1.momentum, "bn_eps": model.eegnet.bn1.eps,
            }
        elif isinstance(model, ContextAutoencoder):
            kind = KIND_AUTOENCODER
            hyper = {"n_in": model.n_in, "hidden": model.hidden, "code": model.code}
        else:
            raise CheckpointError(f"cannot checkpoint {type(model).__name__}")
        std = {}
        if model.mean is not None:
            std = {"mean": np.array(model.mean), "std": np.array(model.std)}
        return cls(kind, hyper, params, bns, std, seed, dict(train or {}))

    def to_model(self) -> Module:
        h = self.hyper
        if self.kind == KIND_SEIZURE:
            shape = EEGNetShape(
                h["length"], h["f1"], h["depth"], h["f2"], h["temporal_kernel"],
                h["separable_kernel"], h["pool1"], h["pool2"], h["dropout"],
            )
            model = SeizureModel(
                GeneratorHead(hidden=h["generator_hidden"], length=h["length"], n_in=h["n_in"], zero=True),
                EEGNet82(shape=shape, zero=True),
            )
            for _, bn in model.batchnorms():
                bn.momentum, bn.eps = h["bn_momentum"], h["bn_eps"]
        elif self.kind == KIND_AUTOENCODER:
            model = ContextAutoencoder(n_in=h["n_in"], hidden=h["hidden"], code=h["code"], zero=True)
            if not self.standardization:
                raise CheckpointError("autoencoder checkpoint is missing standardization statistics")
        else:
            raise CheckpointError(f"unknown model kind {self.kind!r}")

        expected = dict(model.named_params())
        if set(expected) != set(self.params):
            raise CheckpointError(
                f"parameter names differ: missing {sorted(set(expected) - set(self.params))}, "
                f"unexpected {sorted(set(self.params) - set(expected))}"
            )
        count = sum(v.size for v in self.params.values())
        if count != model.n_params():
            raise CheckpointError(f"checkpoint holds {count} parameters, architecture needs {model.n_params()}")
        for name, tensor in expected.items():
            value = self.params[name]
            if value.shape != tensor.shape:
                raise CheckpointError(f"{name}: shape {value.shape} != expected {tensor.shape}")
            tensor.data[...] = value
        bns = dict(model.batchnorms())
        for name, stats in self.batchnorm.items():
            if name not in bns:
                raise CheckpointError(f"unknown batchnorm {name!r}")
            bns[name].running_mean = stats["running_mean"].copy()
            bns[name].running_var = stats["running_var"].copy()
        if self.standardization:
            model.mean = self.standardization["mean"].copy()
            model.std = self.standardization["std"].copy()
        return model


def _tensor_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def dumps_checkpoint(ck: Checkpoint) -> str:
    def one(v) -> str:
        return json.dumps(v, separators=(",", ":"))

    def block(name: str, items: Mapping[str, object]) -> str:
        inner = ",\n".join(f"  {json.dumps(k)}: {one(v)}" for k, v in items.items())
        return f" {json.dumps(name)}: {{\n{inner}\n }}" if items else f" {json.dumps(name)}: {{}}"

    head = [
        f' "format": {one(CHECKPOINT_FORMAT)}',
        f' "version": {one(ck.version)}',
        f' "kind": {one(ck.kind)}',
        f' "seed": {one(ck.seed)}',
        f' "hyper": {one(ck.hyper)}',
        f' "train": {one(ck.train)}',
        block("standardization", {k: _tensor_json(v) for k, v in ck.standardization.items()}),
        block("batchnorm", {k: {s: _tensor_json(a) for s, a in v.items()} for k, v in ck.batchnorm.items()}),
        block("params", {k: _tensor_json(v) for k, v in ck.params.items()}),
    ]
    return "{\n" + ",\n".join(head) + "\n}\n"


def _tensor(obj, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.array(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{name}: malformed tensor ({exc})") from None
    if data.size != int(np.prod(shape)):
        raise CheckpointError(f"{name}: {data.size} values do not fill shape {shape}")
    return data.reshape(shape)


def loads_checkpoint(text: str) -> Checkpoint:
    if not text.strip():
        raise CheckpointError("checkpoint has no format version (empty file)")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is truncated or corrupt: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not an embedcluster checkpoint (format version missing)")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {obj.get('version')!r}; expected {CHECKPOINT_VERSION}")
    try:
        return Checkpoint(
            kind=obj["kind"],
            hyper=obj["hyper"],
            params={k: _tensor(v, k) for k, v in obj["params"].items()},
            batchnorm={k: {s: _tensor(a, f"{k}.{s}") for s, a in v.items()} for k, v in obj["batchnorm"].items()},
            standardization={k: _tensor(v, k) for k, v in obj["standardization"].items()},
            seed=obj["seed"],
            train=obj.get("train", {}),
            version=obj["version"],
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing field {exc}") from None


def save_checkpoint(model: Module | Checkpoint, path, seed: int | None = None, train: Mapping | None = None) -> Checkpoint:
    ck = model if isinstance(model, Checkpoint) else Checkpoint.from_model(model, seed, train)
    Path(path).write_text(dumps_checkpoint(ck))
    return ck


def load_checkpoint(path, expected_kind: str | None = None) -> Checkpoint:
    ck = loads_checkpoint(Path(path).read_text())
    if expected_kind is not None and ck.kind != expected_kind:
        raise CheckpointError(f"expected a {expected_kind!r} checkpoint, got {ck.kind!r}")
    return ck


def load_model(path, expected_kind: str | None = None) -> Module:
    return load_checkpoint(path, expected_kind).to_model()
