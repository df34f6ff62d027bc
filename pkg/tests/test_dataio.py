import numpy as np
import pytest

from embedcluster.dataio import (
    KIND_AUTOENCODER,
    KIND_SEIZURE,
    RAW_COLUMNS,
    WINDOW_COLUMNS,
    CheckpointError,
    DataFormatError,
    load_checkpoint,
    load_model,
    read_embeddings_csv,
    read_labels_csv,
    read_metadata_csv,
    read_raw_windows,
    read_window_csv,
    save_checkpoint,
    write_embeddings_csv,
    write_labels_csv,
    write_raw_windows,
    write_window_csv,
)
from embedcluster.embed import PatientEmbedding, WindowRecord
from embedcluster.models import ContextAutoencoder, EEGNetShape, SeizureModel
from embedcluster.signal import BandVector, RawWindow

HEADER = ",".join(WINDOW_COLUMNS)
SMALL = EEGNetShape(length=256, f1=4, depth=2, f2=8, temporal_kernel=16, separable_kernel=8, pool1=4, pool2=8)


def window_records(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return [
        WindowRecord(f"P{i % 2}", ("rest", "active")[i % 2], BandVector.from_array(rng.uniform(0, 100, 10) / 3), i)
        for i in range(n)
    ]


def seizure_model():
    model = SeizureModel.create(seed=1, hidden=8, shape=SMALL)
    model(np.random.default_rng(0).uniform(size=(3, 10)), training=True, rng=np.random.default_rng(0))
    model.mean, model.std = np.arange(10.0) / 7, np.ones(10) / 3
    return model


def autoencoder():
    return ContextAutoencoder(np.random.default_rng(2), mean=np.full(10, 0.1), std=np.full(10, 1 / 3))


class TestWindowCsv:
    def test_round_trip(self, tmp_path):
        recs = window_records()
        path = tmp_path / "w.csv"
        write_window_csv(recs, path)
        back = read_window_csv(path)
        assert [(r.patient_id, r.condition, r.window_index) for r in back] == [
            (r.patient_id, r.condition, r.window_index) for r in recs
        ]
        for a, b in zip(back, recs):
            assert a.band.as_array().tobytes() == b.band.as_array().tobytes()

    def test_header_only(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text(HEADER + "\n")
        assert read_window_csv(path) == []

    def test_unknown_condition(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text(HEADER + "\nP1,sleep,0" + ",1" * 10 + "\n")
        with pytest.raises(DataFormatError, match="row 2.*sleep"):
            read_window_csv(path)

    def test_reordered_columns(self, tmp_path):
        cols = list(WINDOW_COLUMNS)
        cols[3], cols[4] = cols[4], cols[3]
        path = tmp_path / "w.csv"
        path.write_text(",".join(cols) + "\n")
        with pytest.raises(DataFormatError, match="delta"):
            read_window_csv(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text(",".join(WINDOW_COLUMNS[:-1]) + "\n")
        with pytest.raises(DataFormatError, match="meditation"):
            read_window_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text(HEADER + "\nP1,rest,0,1,2,x" + ",1" * 7 + "\n")
        with pytest.raises(DataFormatError, match="row 2.*low_alpha"):
            read_window_csv(path)

    @pytest.mark.parametrize("cell", ["", "nan", "inf"])
    def test_rejects_empty_and_non_finite(self, tmp_path, cell):
        path = tmp_path / "w.csv"
        path.write_text(HEADER + f"\nP1,rest,0,{cell}" + ",1" * 9 + "\n")
        with pytest.raises(DataFormatError):
            read_window_csv(path)

    def test_column_map(self, tmp_path):
        cols = ["subject"] + list(WINDOW_COLUMNS[1:])
        path = tmp_path / "w.csv"
        path.write_text(",".join(cols) + "\nS9,active,3" + ",2" * 10 + "\n")
        recs = read_window_csv(path, column_map={"subject": "patient_id"})
        assert recs[0].patient_id == "S9" and recs[0].window_index == 3

    def test_byte_identical_writes(self, tmp_path):
        recs = window_records()
        write_window_csv(recs, tmp_path / "a.csv")
        write_window_csv(recs, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert b"\r" not in (tmp_path / "a.csv").read_bytes()


class TestRawWindows:
    def windows(self, n=3):
        rng = np.random.default_rng(0)
        return [RawWindow(rng.normal(size=2048) * 1e-3, label=i % 2, record_id=f"r{i}") for i in range(n)]

    def test_round_trip_full_precision(self, tmp_path):
        path = tmp_path / "raw.csv"
        ws = self.windows()
        write_raw_windows(ws, path)
        back = read_raw_windows(path)
        assert len(back) == 3
        for a, b in zip(back, ws):
            assert a.samples.tobytes() == b.samples.tobytes()
            assert (a.label, a.record_id) == (b.label, b.record_id)

    def test_short_row(self, tmp_path):
        path = tmp_path / "raw.csv"
        path.write_text(",".join(RAW_COLUMNS) + "\nr0,1" + ",0" * 2047 + "\n")
        with pytest.raises(DataFormatError, match="2047 samples"):
            read_raw_windows(path)

    def test_bad_label(self, tmp_path):
        path = tmp_path / "raw.csv"
        path.write_text(",".join(RAW_COLUMNS) + "\nr0,2" + ",0" * 2048 + "\n")
        with pytest.raises(DataFormatError, match="label"):
            read_raw_windows(path)


class TestSmallFiles:
    def test_labels_round_trip(self, tmp_path):
        labels = {"P2": 0, "P1": 1}
        write_labels_csv(labels, tmp_path / "l.csv")
        assert read_labels_csv(tmp_path / "l.csv") == labels
        assert (tmp_path / "l.csv").read_text() == "patient_id,label\nP1,1\nP2,0\n"

    def test_duplicate_label(self, tmp_path):
        (tmp_path / "l.csv").write_text("patient_id,label\nP1,1\nP1,0\n")
        with pytest.raises(DataFormatError, match="duplicate"):
            read_labels_csv(tmp_path / "l.csv")

    def test_embeddings_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        embs = [PatientEmbedding(f"P{i}", "autoencoder", rng.normal(size=32), 3) for i in range(4)]
        write_embeddings_csv(embs, tmp_path / "e.csv")
        back = read_embeddings_csv(tmp_path / "e.csv")
        for a, b in zip(back, embs):
            assert (a.patient_id, a.source, a.n_windows) == (b.patient_id, b.source, b.n_windows)
            assert a.vector.tobytes() == b.vector.tobytes()

    def test_embeddings_wrong_dim(self, tmp_path):
        header = "patient_id,source,n_windows," + ",".join(f"e{i}" for i in range(3))
        (tmp_path / "e.csv").write_text(header + "\nP1,eegnet,1,1,2,3\n")
        with pytest.raises(DataFormatError, match="2048"):
            read_embeddings_csv(tmp_path / "e.csv")

    def test_metadata(self, tmp_path):
        (tmp_path / "m.csv").write_text("patient_id,age,medication\nP1,40,none\n")
        assert read_metadata_csv(tmp_path / "m.csv") == {"P1": {"age": "40", "medication": "none"}}


class TestCheckpoint:
    @pytest.mark.parametrize("make", [seizure_model, autoencoder])
    def test_save_load_save_idempotent(self, tmp_path, make):
        model = make()
        save_checkpoint(model, tmp_path / "a.ckpt", seed=3, train={"epochs": 2})
        reloaded = load_model(tmp_path / "a.ckpt")
        save_checkpoint(reloaded, tmp_path / "b.ckpt", seed=3, train={"epochs": 2})
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        for (n1, p1), (n2, p2) in zip(model.named_params(), reloaded.named_params()):
            assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()

    def test_reloaded_model_predicts_identically(self, tmp_path):
        model = seizure_model()
        save_checkpoint(model, tmp_path / "m.ckpt")
        reloaded = load_model(tmp_path / "m.ckpt", KIND_SEIZURE)
        x = np.random.default_rng(5).uniform(size=(2, 10))
        p1, e1 = model(x)
        p2, e2 = reloaded(x)
        assert p1.data.tobytes() == p2.data.tobytes() and e1.data.tobytes() == e2.data.tobytes()

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.ckpt").write_text("")
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "e.ckpt")

    def test_truncated(self, tmp_path):
        save_checkpoint(autoencoder(), tmp_path / "a.ckpt")
        text = (tmp_path / "a.ckpt").read_text()
        (tmp_path / "t.ckpt").write_text(text[: len(text) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_wrong_version(self, tmp_path):
        save_checkpoint(autoencoder(), tmp_path / "a.ckpt")
        text = (tmp_path / "a.ckpt").read_text().replace('"version": 1', '"version": 99')
        (tmp_path / "v.ckpt").write_text(text)
        with pytest.raises(CheckpointError, match="version 99"):
            load_checkpoint(tmp_path / "v.ckpt")

    def test_wrong_kind(self, tmp_path):
        save_checkpoint(seizure_model(), tmp_path / "s.ckpt")
        with pytest.raises(CheckpointError, match="autoencoder.*generator\\+eegnet"):
            load_model(tmp_path / "s.ckpt", KIND_AUTOENCODER)

    def test_shape_product_mismatch(self, tmp_path):
        save_checkpoint(autoencoder(), tmp_path / "a.ckpt")
        lines = (tmp_path / "a.ckpt").read_text().splitlines()
        i = next(i for i, l in enumerate(lines) if l.strip().startswith('"ae.b1"'))
        lines[i] = lines[i].replace('"data":[', '"data":[0.5,')
        (tmp_path / "b.ckpt").write_text("\n".join(lines) + "\n")
        with pytest.raises(CheckpointError, match="ae.b1"):
            load_checkpoint(tmp_path / "b.ckpt")

    def test_parameter_count_checked(self, tmp_path):
        save_checkpoint(autoencoder(), tmp_path / "a.ckpt")
        ck = load_checkpoint(tmp_path / "a.ckpt")
        ck.params["ae.b1"] = np.zeros(9)
        with pytest.raises(CheckpointError):
            ck.to_model()

    def test_autoencoder_needs_standardization(self, tmp_path):
        ae = ContextAutoencoder(np.random.default_rng(0))
        save_checkpoint(ae, tmp_path / "a.ckpt")
        with pytest.raises(CheckpointError, match="standardization"):
            load_model(tmp_path / "a.ckpt")
