from __future__ import annotations

import json
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

import fixture_models
import gen
from mbelens.diff import DIFF_KINDS, DiffEntry, DiffReport, diff_instances, diff_metamodels, values_equal
from mbelens.model import AttributeDef, ModelObject


def _set_slot(inst, oid, name, value):
    return replace(inst, objects=tuple(
        replace(o, slots={**o.slots, name: value}) if o.id == oid else o for o in inst.objects))


class TestMetamodelDiff:
    def test_reduced_fixture_lacks_three_classes(self, ccs_mini, ccs_reduced):
        report = diff_metamodels(ccs_mini, ccs_reduced)
        assert [(e.kind, e.path) for e in report.entries] == [
            ("ClassRemoved", "FPGA"), ("ClassRemoved", "GPU"), ("ClassRemoved", "TPU")]
        assert report.summary_counts == {"ClassRemoved": 3}
        assert all(e.before and e.after is None for e in report.entries)
        assert set(fixture_models.REMOVED_IN_REDUCED) == {e.path for e in report.entries}

    def test_identity(self, ccs_mini):
        assert diff_metamodels(ccs_mini, ccs_mini).entries == ()

    def test_attribute_type_change(self, ccs_mini):
        cam = next(c for c in ccs_mini.classes if c.name == "Camera")
        attrs = tuple(AttributeDef(a.name, "real") if a.name == "resolution" else a for a in cam.attributes)
        new = replace(ccs_mini, classes=tuple(replace(c, attributes=attrs) if c is cam else c
                                              for c in ccs_mini.classes))
        (entry,) = diff_metamodels(ccs_mini, new).entries
        assert entry == DiffEntry("AttributeTypeChanged", "Camera.resolution", "int", "real")

    def test_spelling_variants_match(self, ccs_mini):
        renamed = replace(ccs_mini, classes=tuple(
            replace(c, name="Co-Processor") if c.name == "CoProcessor" else c for c in ccs_mini.classes))
        assert diff_metamodels(ccs_mini, renamed).entries == ()

    def test_added_class_in_reverse(self, ccs_mini, ccs_reduced):
        report = diff_metamodels(ccs_reduced, ccs_mini)
        assert report.summary_counts == {"ClassAdded": 3}
        assert report == diff_metamodels(ccs_mini, ccs_reduced).mirrored()


class TestInstanceDiff:
    def test_resolution_increase(self, demo):
        new = _set_slot(demo, "frontCam", "resolution", 1920)
        (entry,) = diff_instances(demo, new).entries
        assert entry == DiffEntry("SlotValueChanged", "frontCam.resolution", "1280", "1920")

    def test_added_object(self, demo, ccs_mini):
        new = replace(demo, objects=demo.objects + (ModelObject("rearCam", "Camera"),))
        (entry,) = diff_instances(demo, new, ccs_mini).entries
        assert (entry.kind, entry.path) == ("ObjectAdded", "rearCam")

    def test_identity(self, demo):
        assert diff_instances(demo, demo).entries == ()

    def test_real_tolerance(self, demo):
        base = _set_slot(demo, "roofLidar", "range", 120.0)
        assert diff_instances(base, _set_slot(base, "roofLidar", "range", 120.0 + 5e-10)).entries == ()
        assert len(diff_instances(base, _set_slot(base, "roofLidar", "range", 120.0 + 1e-8)).entries) == 1

    def test_class_change_is_remove_and_add(self, demo):
        new = replace(demo, objects=tuple(replace(o, class_name="Lidar") if o.id == "frontCam" else o
                                          for o in demo.objects))
        kinds = [e.kind for e in diff_instances(demo, new).entries]
        assert kinds == ["ObjectAdded", "ObjectRemoved"]

    def test_link_order_matters(self):
        a = gen.Instance("m", (ModelObject("o", "A", {}, {"r": ("x", "y")}),))
        b = gen.Instance("m", (ModelObject("o", "A", {}, {"r": ("y", "x")}),))
        (entry,) = diff_instances(a, b).entries
        assert entry == DiffEntry("LinkSetChanged", "o.r", "[x, y]", "[y, x]")


@pytest.mark.parametrize("a,b,equal", [
    (1, 1, True), (1, 2, False), (1, 1.0, True), (1.0, 1.0 + 1e-12, True),
    (True, 1, False), ("x", "x", True), ("1", 1, False),
])
def test_values_equal(a, b, equal):
    assert values_equal(a, b) is equal


def test_report_json_shape(ccs_mini, ccs_reduced):
    payload = json.loads(diff_metamodels(ccs_mini, ccs_reduced).render())
    assert set(payload) == {"entries", "summary"}
    assert set(payload["entries"][0]) == {"kind", "path", "before", "after"}


def test_report_orders_by_kind_rank_then_path():
    entries = [DiffEntry(k, p) for k in reversed(DIFF_KINDS) for p in ("b", "a")]
    ordered = DiffReport.of(entries).entries
    assert [(e.kind, e.path) for e in ordered] == [(k, p) for k in DIFF_KINDS for p in ("a", "b")]


def test_mirror_is_an_involution():
    for kind in DIFF_KINDS:
        entry = DiffEntry(kind, "p", "x", "y")
        assert entry.mirrored().mirrored() == entry


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32))
def test_single_metamodel_edit_yields_one_entry(seed):
    rng = random.Random(seed)
    mm = gen.metamodel(rng)
    edited, kind, path = gen.retry(lambda: gen.metamodel_edit(rng, mm))
    report = diff_metamodels(mm, edited)
    assert [(e.kind, e.path) for e in report.entries] == [(kind, path)]
    assert diff_metamodels(edited, mm) == report.mirrored()


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32))
def test_single_instance_edit_yields_one_entry(seed):
    rng = random.Random(seed)
    mm = gen.metamodel(rng)
    inst = gen.instance(rng, mm)
    edited, kind, path = gen.retry(lambda: gen.instance_edit(rng, mm, inst))
    report = diff_instances(inst, edited, mm)
    assert [(e.kind, e.path) for e in report.entries] == [(kind, path)]
    assert diff_instances(edited, inst, mm) == report.mirrored()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_swap_symmetry_on_unrelated_pairs(seed):
    rng = random.Random(seed)
    a, b = gen.metamodel(rng), gen.metamodel(rng)
    assert diff_metamodels(b, a) == diff_metamodels(a, b).mirrored()
    ia, ib = gen.instance(rng, a), gen.instance(rng, a)
    assert diff_instances(ib, ia) == diff_instances(ia, ib).mirrored()


def test_rendering_is_byte_stable(ccs_mini, ccs_reduced):
    assert diff_metamodels(ccs_mini, ccs_reduced).render() == diff_metamodels(
        fixture_models.ccs_mini(), fixture_models.ccs_mini_reduced()).render()
