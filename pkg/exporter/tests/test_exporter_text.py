import json
import logging

import numpy as np
import pytest

from xdet_exporter.cli import main_text
from xdet_exporter.encoders import EncoderError, HashEncoder, make_encoder
from xdet_exporter.export import ExportError, export_label_embeddings, normalize_label

from exporter_fixtures import build_workspace


class TestNormalize:
    def test_lowercase_and_collapse(self):
        assert normalize_label("  Traffic   Light ") == "traffic light"

    def test_empty_rejected(self):
        with pytest.raises(ExportError):
            normalize_label("   ")


class TestHashEncoder:
    def test_unit_norm_and_deterministic(self):
        enc = HashEncoder(8)
        a = enc.encode_texts(["car", "person"])
        b = enc.encode_texts(["car", "person"])
        assert np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)
        assert (a == b).all()
        assert not np.allclose(a[0], a[1])

    def test_make_encoder_parses_spec(self):
        assert make_encoder("hash:16").dim == 16
        with pytest.raises(EncoderError):
            make_encoder("hash:zero")


class TestExportLabels:
    def test_entries_keyed_by_canonical(self, tmp_path):
        out = tmp_path / "emb.json"
        n = export_label_embeddings(["Car", "Traffic  Light"], HashEncoder(4), out)
        doc = json.loads(out.read_text())
        assert n == 2
        assert set(doc["entries"]) == {"car", "traffic light"}
        assert doc["dim"] == 4 and doc["model_id"] == "hash:4"

    def test_duplicates_collapse_with_warning(self, tmp_path, caplog):
        out = tmp_path / "emb.json"
        with caplog.at_level(logging.WARNING, logger="xdet_exporter"):
            n = export_label_embeddings(["car", "CAR", "dog"], HashEncoder(4), out)
        assert n == 2
        assert any("normalize to the same entry" in r.message
                   for r in caplog.records)

    def test_empty_list_rejected(self, tmp_path):
        with pytest.raises(ExportError):
            export_label_embeddings([], HashEncoder(4), tmp_path / "e.json")


class TestCli:
    def test_happy_path(self, tmp_path, capsys):
        ws = build_workspace(tmp_path / "ws")
        out = tmp_path / "emb.json"
        code = main_text(["--labels", str(ws / "labels.txt"),
                          "--out", str(out), "--model", "hash:8"])
        assert code == 0
        doc = json.loads(out.read_text())
        # "Traffic  Light" and "traffic light" collapse to one entry
        assert set(doc["entries"]) == {"car", "person", "traffic light", "dog"}
        assert "wrote 4 entries" in capsys.readouterr().out

    def test_empty_label_file_exits_2(self, tmp_path):
        labels = tmp_path / "labels.txt"
        labels.write_text("\n\n")
        with pytest.raises(SystemExit) as exc:
            main_text(["--labels", str(labels),
                       "--out", str(tmp_path / "o.json"), "--model", "hash:4"])
        assert exc.value.code == 2

    def test_model_load_failure_exits_1(self, tmp_path, capsys):
        ws = build_workspace(tmp_path / "ws")
        code = main_text(["--labels", str(ws / "labels.txt"),
                          "--out", str(tmp_path / "o.json"),
                          "--model", "/nonexistent/model/dir"])
        assert code == 1
        assert "error" in capsys.readouterr().err
