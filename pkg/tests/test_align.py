import pytest

from xdet.align import build_shared_map, filter_to_shared, restrict_ground_truth
from xdet.errors import MappingError, ReferentialError
from xdet.model import LabelMapping, SettingType, Vocabulary
from conftest import lbl, make_dets, make_gt


def vocab(*names, dataset_id="v"):
    return Vocabulary(dataset_id=dataset_id, labels=tuple(lbl(n) for n in names))


class TestBuildSharedMap:
    def test_string_intersection(self):
        shared = build_shared_map(vocab("car", "bus", "dog"),
                                  vocab("car", "bus", "cat"))
        assert shared.shared_size == 2
        assert {(s.canonical, t.canonical) for s, t in shared.pairs.items()} == {
            ("car", "car"), ("bus", "bus"),
        }

    def test_explicit_pair(self):
        shared = build_shared_map(
            vocab("motor"), vocab("motorcycle"),
            LabelMapping(pairs=(("motor", "motorcycle"),)),
        )
        assert shared.shared_size == 1
        assert shared.pairs[lbl("motor")] == lbl("motorcycle")

    def test_explicit_violating_bijection(self):
        with pytest.raises(MappingError):
            LabelMapping(pairs=(("motor", "motorcycle"), ("bike", "motorcycle")))

    def test_explicit_unknown_label(self):
        with pytest.raises(ReferentialError):
            build_shared_map(vocab("car"), vocab("car"),
                             LabelMapping(pairs=(("plane", "car"),)))

    def test_explicit_overrides_identity(self):
        # "truck" maps to "lorry" explicitly; the identity pair must not reuse it
        shared = build_shared_map(
            vocab("truck", "car"), vocab("truck", "lorry", "car"),
            LabelMapping(pairs=(("truck", "lorry"),)),
        )
        assert shared.pairs[lbl("truck")] == lbl("lorry")
        assert shared.pairs[lbl("car")] == lbl("car")
        assert shared.shared_size == 2

    def test_bijectivity_invariant(self):
        shared = build_shared_map(vocab("a", "b", "c"), vocab("b", "c", "d"))
        assert len(shared.pairs) == len(set(shared.pairs.values()))
        assert len({s.canonical for s in shared.pairs}) == shared.shared_size


class TestFilterToShared:
    def test_drops_out_of_shared(self):
        shared = build_shared_map(vocab("car", "bus", "dog", "cat"),
                                  vocab("car", "bus"))
        rows = [(0, "car", (0, 0, 10, 10), 0.9)] * 3 \
            + [(0, "bus", (0, 0, 10, 10), 0.8)] * 3 \
            + [(0, "dog", (0, 0, 10, 10), 0.7)] * 2 \
            + [(0, "cat", (0, 0, 10, 10), 0.6)] * 2
        dets = make_dets(rows)
        out = filter_to_shared(dets, shared)
        assert len(out.detections) == 6
        assert all(d.label.canonical in {"car", "bus"} for d in out.detections)

    def test_identity_map_is_identity(self):
        shared = build_shared_map(vocab("car", "bus"), vocab("car", "bus"))
        dets = make_dets([(0, "car", (0, 0, 10, 10), 0.9),
                          (0, "bus", (5, 5, 10, 10), 0.8)])
        assert filter_to_shared(dets, shared).detections == dets.detections

    def test_empty_map_empty_output(self):
        shared = build_shared_map(vocab("dog"), vocab("car"))
        dets = make_dets([(0, "dog", (0, 0, 10, 10), 0.9)])
        assert filter_to_shared(dets, shared).detections == ()

    def test_geometry_preserved_and_idempotent(self):
        shared = build_shared_map(
            vocab("motor", "car"), vocab("motorcycle", "car"),
            LabelMapping(pairs=(("motor", "motorcycle"),)),
        )
        dets = make_dets([(0, "motor", (1, 2, 3, 4), 0.9),
                          (0, "car", (5, 6, 7, 8), 0.8),
                          (1, "plane", (0, 0, 9, 9), 0.7)])
        once = filter_to_shared(dets, shared)
        assert [(d.box, d.score, d.det_id) for d in once.detections] == \
            [(dets.detections[0].box, 0.9, 0), (dets.detections[1].box, 0.8, 1)]
        twice = filter_to_shared(once, shared)
        # labels already on the target side survive a second pass unchanged
        # only where the map keeps them; geometry never changes
        assert all(d.box in {x.box for x in once.detections}
                   for d in twice.detections)


class TestRestrictGroundTruth:
    def test_off_intersection_gt_ignored(self):
        gt = make_gt([(1, 0, "car", (0, 0, 10, 10)),
                      (2, 0, "cat", (20, 20, 10, 10))])
        shared = build_shared_map(vocab("car"), gt.vocabulary)
        out = restrict_ground_truth(gt, shared)
        flags = {i.gt_id: i.ignore for i in out.instances}
        assert flags == {1: False, 2: True}
        assert out.vocabulary.canonical_set == {"car"}

    def test_full_cover_is_identity(self):
        gt = make_gt([(1, 0, "car", (0, 0, 10, 10))])
        shared = build_shared_map(vocab("car"), gt.vocabulary)
        out = restrict_ground_truth(gt, shared)
        assert out.instances == gt.instances
        assert out.vocabulary.labels == gt.vocabulary.labels

    def test_empty_map_all_ignored(self):
        gt = make_gt([(1, 0, "car", (0, 0, 10, 10))])
        shared = build_shared_map(vocab("dog"), gt.vocabulary)
        out = restrict_ground_truth(gt, shared)
        assert all(i.ignore for i in out.instances)

        from xdet.metrics import evaluate_cell
        from xdet.model import DetectionSet
        report = evaluate_cell(out, DetectionSet("s", "t", ()))
        assert report.map_5095 is None
        assert report.undefined_reason

    def test_delete_mode(self):
        gt = make_gt([(1, 0, "car", (0, 0, 10, 10)),
                      (2, 0, "cat", (20, 20, 10, 10))])
        shared = build_shared_map(vocab("car"), gt.vocabulary)
        out = restrict_ground_truth(gt, shared, mode="delete")
        assert [i.gt_id for i in out.instances] == [1]
