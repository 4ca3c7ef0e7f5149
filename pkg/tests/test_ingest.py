import json

import pytest
from hypothesis import given, strategies as st

from xdet import ingest
from xdet.errors import (
    EmbeddingError,
    InvalidLabel,
    ParseError,
    RangeError,
    ReferentialError,
    VocabularyError,
)
from conftest import write_json


class TestNormalizeLabel:
    def test_lowercases(self):
        assert ingest.normalize_label("Traffic Light").canonical == "traffic light"

    def test_trims(self):
        assert ingest.normalize_label("  CAR ").canonical == "car"

    def test_collapses_whitespace(self):
        assert ingest.normalize_label("traffic   light").canonical == "traffic light"

    def test_empty_after_normalization(self):
        with pytest.raises(InvalidLabel):
            ingest.normalize_label("   ")

    @given(st.text())
    def test_idempotent(self, raw):
        try:
            first = ingest.normalize_label(raw)
        except InvalidLabel:
            return
        assert ingest.normalize_label(first.canonical).canonical == first.canonical


class TestLoadGroundTruth:
    def test_counts(self, tmp_path, coco_gt_doc):
        gt = ingest.load_ground_truth(write_json(tmp_path / "gt.json", coco_gt_doc))
        assert len(gt.instances) == 3
        assert len(gt.vocabulary) == 2
        assert gt.vocabulary.canonical_set == {"car", "traffic light"}

    def test_duplicate_canonical_categories(self, tmp_path, coco_gt_doc):
        coco_gt_doc["categories"].append({"id": 3, "name": "car"})
        with pytest.raises(VocabularyError):
            ingest.load_ground_truth(write_json(tmp_path / "gt.json", coco_gt_doc))

    def test_degenerate_box_dropped_with_count(self, tmp_path, coco_gt_doc):
        coco_gt_doc["annotations"].append(
            {"id": 9, "image_id": 1, "category_id": 1, "bbox": [1, 1, 0, 10]}
        )
        gt = ingest.load_ground_truth(write_json(tmp_path / "gt.json", coco_gt_doc))
        assert gt.load_report.dropped_degenerate == 1
        assert len(gt.instances) == 3

    def test_unknown_image_reference(self, tmp_path, coco_gt_doc):
        coco_gt_doc["annotations"][0]["image_id"] = 99
        with pytest.raises(ReferentialError):
            ingest.load_ground_truth(write_json(tmp_path / "gt.json", coco_gt_doc))

    def test_unknown_category_reference(self, tmp_path, coco_gt_doc):
        coco_gt_doc["annotations"][0]["category_id"] = 99
        with pytest.raises(ReferentialError):
            ingest.load_ground_truth(write_json(tmp_path / "gt.json", coco_gt_doc))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            ingest.load_ground_truth(str(path))

    def test_annotation_order_irrelevant(self, tmp_path, coco_gt_doc):
        a = ingest.load_ground_truth(write_json(tmp_path / "a.json", coco_gt_doc))
        coco_gt_doc["annotations"] = coco_gt_doc["annotations"][::-1]
        b = ingest.load_ground_truth(write_json(tmp_path / "b.json", coco_gt_doc))
        assert set(a.instances) == set(b.instances)
        assert a.vocabulary.labels == b.vocabulary.labels


class TestLoadDetections:
    def _dets(self, tmp_path, records, coco_gt_doc):
        gt = ingest.load_ground_truth(write_json(tmp_path / "gt.json", coco_gt_doc))
        return ingest.load_detections(write_json(tmp_path / "d.json", records), gt)

    def test_det_ids_in_file_order(self, tmp_path, coco_gt_doc):
        records = [
            {"image_id": 1, "category_name": "car", "bbox": [0, 0, 10, 10],
             "score": 0.5 + 0.1 * i}
            for i in range(5)
        ]
        dets = self._dets(tmp_path, records, coco_gt_doc)
        assert [d.det_id for d in dets.detections] == [0, 1, 2, 3, 4]

    def test_score_out_of_range(self, tmp_path, coco_gt_doc):
        records = [{"image_id": 1, "category_name": "car",
                    "bbox": [0, 0, 10, 10], "score": 1.5}]
        with pytest.raises(RangeError):
            self._dets(tmp_path, records, coco_gt_doc)

    def test_out_of_vocabulary_label_accepted(self, tmp_path, coco_gt_doc):
        records = [{"image_id": 1, "category_name": "Bicycle",
                    "bbox": [0, 0, 10, 10], "score": 0.9}]
        dets = self._dets(tmp_path, records, coco_gt_doc)
        assert dets.detections[0].label.canonical == "bicycle"
        assert dets.detections[0].label not in \
            ingest.load_ground_truth(write_json(tmp_path / "g2.json", coco_gt_doc)).vocabulary

    def test_category_id_join(self, tmp_path, coco_gt_doc):
        records = [{"image_id": 1, "category_id": 2,
                    "bbox": [0, 0, 10, 10], "score": 0.9}]
        dets = self._dets(tmp_path, records, coco_gt_doc)
        assert dets.detections[0].label.canonical == "traffic light"

    def test_name_takes_precedence_over_id(self, tmp_path, coco_gt_doc):
        records = [{"image_id": 1, "category_id": 2, "category_name": "car",
                    "bbox": [0, 0, 10, 10], "score": 0.9}]
        dets = self._dets(tmp_path, records, coco_gt_doc)
        assert dets.detections[0].label.canonical == "car"

    def test_unknown_image(self, tmp_path, coco_gt_doc):
        records = [{"image_id": 42, "category_name": "car",
                    "bbox": [0, 0, 10, 10], "score": 0.9}]
        with pytest.raises(ReferentialError):
            self._dets(tmp_path, records, coco_gt_doc)

    def test_degenerate_detection_box_is_error(self, tmp_path, coco_gt_doc):
        records = [{"image_id": 1, "category_name": "car",
                    "bbox": [0, 0, 0, 10], "score": 0.9}]
        with pytest.raises(ParseError):
            self._dets(tmp_path, records, coco_gt_doc)


class TestLoadEmbeddings:
    def test_renormalizes(self, tmp_path):
        doc = {"model_id": "m", "dim": 2, "entries": {"car": [3.0, 4.0]}}
        table = ingest.load_embeddings(write_json(tmp_path / "e.json", doc))
        assert list(table.entries["car"]) == pytest.approx([0.6, 0.8])
        assert table.prenorms["car"] == pytest.approx(5.0)

    def test_mixed_dims(self, tmp_path):
        doc = {"model_id": "m", "dim": 2,
               "entries": {"car": [1, 0], "bus": [1, 0, 0]}}
        with pytest.raises(EmbeddingError):
            ingest.load_embeddings(write_json(tmp_path / "e.json", doc))

    def test_zero_vector(self, tmp_path):
        doc = {"model_id": "m", "dim": 2, "entries": {"car": [0.0, 0.0]}}
        with pytest.raises(EmbeddingError):
            ingest.load_embeddings(write_json(tmp_path / "e.json", doc))

    def test_region_keys_are_ints(self, tmp_path):
        doc = {"model_id": "m", "dim": 2, "entries": {"0": [1, 0], "1": [0, 1]}}
        table = ingest.load_region_embeddings(write_json(tmp_path / "r.json", doc))
        assert set(table.entries) == {0, 1}


class TestRoundTrip:
    def test_ground_truth(self, tmp_path, coco_gt_doc):
        gt = ingest.load_ground_truth(write_json(tmp_path / "gt.json", coco_gt_doc),
                                      dataset_id="d")
        doc2 = ingest.ground_truth_to_coco(gt)
        gt2 = ingest.load_ground_truth(write_json(tmp_path / "gt2.json", doc2),
                                       dataset_id="d")
        assert gt2.instances == gt.instances
        assert gt2.vocabulary.labels == gt.vocabulary.labels
        assert gt2.images == gt.images

    def test_detections(self, tmp_path, coco_gt_doc):
        gt = ingest.load_ground_truth(write_json(tmp_path / "gt.json", coco_gt_doc))
        records = [{"image_id": 1, "category_name": "car",
                    "bbox": [0, 0, 10, 10], "score": 0.9}]
        dets = ingest.load_detections(write_json(tmp_path / "d.json", records), gt)
        doc2 = ingest.detections_to_coco(dets)
        dets2 = ingest.load_detections(write_json(tmp_path / "d2.json", doc2), gt)
        assert dets2.detections == dets.detections

    def test_embeddings(self, tmp_path):
        doc = {"model_id": "m", "dim": 3,
               "entries": {"car": [1.0, 2.0, 2.0], "bus": [0.0, 1.0, 0.0]}}
        t1 = ingest.load_embeddings(write_json(tmp_path / "e.json", doc))
        t2 = ingest.load_embeddings(
            write_json(tmp_path / "e2.json", ingest.embeddings_to_dict(t1)))
        for key in t1.entries:
            assert list(t1.entries[key]) == pytest.approx(list(t2.entries[key]))

    def test_mapping(self, tmp_path):
        doc = [{"source": "Motor", "target": "motorcycle"}]
        m1 = ingest.load_mapping(write_json(tmp_path / "m.json", doc))
        m2 = ingest.load_mapping(
            write_json(tmp_path / "m2.json", ingest.mapping_to_list(m1)))
        assert m1.pairs == m2.pairs == (("motor", "motorcycle"),)
