from __future__ import annotations

import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

import gen
from mbelens.model import (
    AttributeDef,
    Instance,
    MetaClass,
    Metamodel,
    ModelError,
    ModelObject,
    Multiplicity,
    ObjectRef,
    OperationDef,
    Param,
    Relation,
    all_attributes_of,
    index,
    validate_instance,
    validate_metamodel,
)
from mbelens.names import is_identifier, normalize_name


def codes(issues):
    return [i.code for i in issues]


class TestNames:
    @pytest.mark.parametrize("text", ["Camera", "Co-Processor", "a_1", "x"])
    def test_identifiers(self, text):
        assert is_identifier(text)

    @pytest.mark.parametrize("text", ["", "1abc", "_x", "has space", "dot.ted", None, 5])
    def test_non_identifiers(self, text):
        assert not is_identifier(text)

    def test_normalization_equates_spellings(self):
        assert normalize_name("Co-Processor") == normalize_name("CoProcessor") == normalize_name("co processor")

    @given(st.text())
    def test_normalization_is_idempotent(self, s):
        assert normalize_name(normalize_name(s)) == normalize_name(s)


class TestValidateMetamodel:
    def test_fixture_is_valid(self, ccs_mini, ccs_reduced):
        assert validate_metamodel(ccs_mini) == []
        assert validate_metamodel(ccs_reduced) == []

    def test_unresolved_supertype(self):
        mm = Metamodel("m", (MetaClass("X", supertypes=("Ghost",)),))
        issues = validate_metamodel(mm)
        assert codes(issues) == ["UNRESOLVED_SUPERTYPE"]
        assert issues[0].path == "X"

    def test_two_cycle_reported_once(self):
        mm = Metamodel("m", (MetaClass("A", supertypes=("B",)), MetaClass("B", supertypes=("A",))))
        issues = validate_metamodel(mm)
        assert codes(issues) == ["INHERITANCE_CYCLE"]
        assert "A" in issues[0].message and "B" in issues[0].message

    def test_self_cycle(self):
        mm = Metamodel("m", (MetaClass("A", supertypes=("A",)),))
        assert codes(validate_metamodel(mm)) == ["INHERITANCE_CYCLE"]

    def test_duplicate_class_after_normalization(self):
        mm = Metamodel("m", (MetaClass("CoProcessor"), MetaClass("Co-Processor")))
        assert "DUPLICATE_CLASS" in codes(validate_metamodel(mm))

    def test_member_uniqueness(self):
        cls = MetaClass(
            "A",
            attributes=(AttributeDef("x", "int"), AttributeDef("x", "real")),
            operations=(OperationDef("f"), OperationDef("f"), OperationDef("g", (Param("p", "int"), Param("p", "int")))),
        )
        got = codes(validate_metamodel(Metamodel("m", (cls,))))
        assert got.count("DUPLICATE_ATTRIBUTE") == 1
        assert got.count("DUPLICATE_OPERATION") == 1
        assert got.count("DUPLICATE_PARAMETER") == 1

    def test_shadowing_rejected(self):
        mm = Metamodel("m", (
            MetaClass("Base", attributes=(AttributeDef("x", "int"),)),
            MetaClass("Sub", supertypes=("Base",), attributes=(AttributeDef("x", "int"),)),
        ))
        assert codes(validate_metamodel(mm)) == ["SHADOWED_ATTRIBUTE"]

    def test_diamond_conflict(self):
        mm = Metamodel("m", (
            MetaClass("L", attributes=(AttributeDef("x", "int"),)),
            MetaClass("R", attributes=(AttributeDef("x", "int"),)),
            MetaClass("D", supertypes=("L", "R")),
        ))
        assert "CONFLICTING_ATTRIBUTE" in codes(validate_metamodel(mm))

    def test_unresolved_types(self):
        mm = Metamodel("m", (MetaClass("A", attributes=(AttributeDef("x", "Ghost"),),
                                       operations=(OperationDef("f", (Param("p", "Nope"),), "Void"),)),))
        assert codes(validate_metamodel(mm)).count("UNRESOLVED_TYPE") == 3

    def test_relation_checks(self):
        mm = Metamodel("m", (MetaClass("A"),), (
            Relation("friendship", "r", "A", "A"),
            Relation("association", "s", "A", "Ghost"),
            Relation("association", "t", "A", "A", Multiplicity(2, 1)),
            Relation("association", "u", "A", "A"),
            Relation("association", "u", "A", "A"),
        ))
        got = codes(validate_metamodel(mm))
        assert "BAD_RELATION_KIND" in got
        assert "UNRESOLVED_RELATION_END" in got
        assert "BAD_MULTIPLICITY" in got
        assert "DUPLICATE_RELATION" in got

    def test_bad_identifier(self):
        assert "BAD_IDENTIFIER" in codes(validate_metamodel(Metamodel("m", (MetaClass("9lives"),))))

    def test_deterministic(self):
        mm = Metamodel("m", (MetaClass("A", supertypes=("B", "Ghost")), MetaClass("B", supertypes=("A",))))
        assert validate_metamodel(mm) == validate_metamodel(mm)

    def test_random_generated_metamodels_validate(self):
        for seed in range(100):
            assert validate_metamodel(gen.metamodel(random.Random(seed))) == []


class TestValidateInstance:
    def test_fixture_is_valid(self, demo, ccs_mini):
        assert validate_instance(demo, ccs_mini) == []

    def _with(self, demo, obj):
        return replace(demo, objects=demo.objects + (obj,))

    def test_abstract_instantiation(self, demo, ccs_mini):
        inst = self._with(demo, ModelObject("s", "Sensor", {}, {"feeds": ("ecu1",)}))
        assert codes(validate_instance(inst, ccs_mini)) == ["ABSTRACT_INSTANTIATION"]

    def test_slot_type_mismatch(self, demo, ccs_mini):
        inst = self._with(demo, ModelObject("cam2", "Camera", {"resolution": "high"}, {"feeds": ("ecu1",)}))
        assert codes(validate_instance(inst, ccs_mini)) == ["SLOT_TYPE_MISMATCH"]

    def test_int_is_accepted_for_real(self, demo, ccs_mini):
        inst = self._with(demo, ModelObject("l2", "Lidar", {"range": 80}, {"feeds": ("ecu1",)}))
        assert validate_instance(inst, ccs_mini) == []

    def test_bool_is_not_an_int(self, demo, ccs_mini):
        inst = self._with(demo, ModelObject("cam2", "Camera", {"fps": True}, {"feeds": ("ecu1",)}))
        assert codes(validate_instance(inst, ccs_mini)) == ["SLOT_TYPE_MISMATCH"]

    def test_non_finite_real(self, demo, ccs_mini):
        inst = self._with(demo, ModelObject("l2", "Lidar", {"range": float("nan")}, {"feeds": ("ecu1",)}))
        assert "NON_FINITE_REAL" in codes(validate_instance(inst, ccs_mini))

    def test_unknown_slot_class_and_duplicate(self, demo, ccs_mini):
        inst = replace(demo, objects=demo.objects + (
            ModelObject("frontCam", "Camera", {"zoom": 2}, {"feeds": ("ecu1",)}),
            ModelObject("r", "Radar"),
        ))
        got = codes(validate_instance(inst, ccs_mini))
        assert {"DUPLICATE_OBJECT_ID", "UNKNOWN_SLOT", "UNKNOWN_CLASS"} <= set(got)

    def test_link_checks(self, demo, ccs_mini):
        inst = replace(demo, objects=demo.objects + (
            ModelObject("c2", "Camera", {}, {"feeds": ("nowhere",)}),
            ModelObject("c3", "Camera", {}, {"feeds": ("frontBrake",)}),
            ModelObject("c4", "Camera", {}, {"executes": ()}),
            ModelObject("b2", "Brake", {}, {"controlledBy": ("ecu1", "ecu1")}),
        ))
        got = codes(validate_instance(inst, ccs_mini))
        assert "UNKNOWN_LINK_TARGET" in got
        assert "LINK_TARGET_TYPE" in got
        assert "UNKNOWN_LINK" in got
        assert "MULTIPLICITY_VIOLATION" in got

    def test_object_reference_slots(self):
        mm = Metamodel("m", (MetaClass("A", attributes=(AttributeDef("peer", "A"),)), MetaClass("B")))
        ok = Instance("m", (ModelObject("a", "A", {"peer": ObjectRef("a")}),))
        assert validate_instance(ok, mm) == []
        dangling = Instance("m", (ModelObject("a", "A", {"peer": ObjectRef("zz")}),))
        assert codes(validate_instance(dangling, mm)) == ["UNKNOWN_REFERENCE"]
        wrong = Instance("m", (ModelObject("a", "A", {"peer": ObjectRef("b")}), ModelObject("b", "B")))
        assert codes(validate_instance(wrong, mm)) == ["SLOT_TYPE_MISMATCH"]

    def test_metamodel_name_mismatch(self, demo, ccs_mini):
        assert codes(validate_instance(replace(demo, metamodel_name="other"), ccs_mini)) == ["METAMODEL_MISMATCH"]

    def test_random_instances_validate(self):
        for seed in range(100):
            rng = random.Random(seed)
            mm = gen.metamodel(rng)
            assert validate_instance(gen.instance(rng, mm), mm) == []


class TestAttributesAndIndex:
    def test_processing_node(self, ccs_mini):
        got = [(a.name, a.type) for a in all_attributes_of(ccs_mini, "ProcessingNode")]
        assert got == [("id", "string"), ("cores", "int"), ("frequencyMHz", "real"), ("ramMB", "int")]

    def test_camera_and_task(self, ccs_mini):
        assert [(a.name, a.type) for a in all_attributes_of(ccs_mini, "Camera")] == [("resolution", "int"), ("fps", "int")]
        assert all_attributes_of(ccs_mini, "ProcessingTask") == []

    def test_unknown_class(self, ccs_mini):
        with pytest.raises(ModelError) as exc:
            all_attributes_of(ccs_mini, "Radar")
        assert exc.value.code == "UNKNOWN_CLASS"

    def test_lookup_is_normalized(self, ccs_mini):
        assert index(ccs_mini).lookup("co-processor").name == "CoProcessor"

    def test_inherited_attributes_nearest_first(self):
        mm = Metamodel("m", (
            MetaClass("Top", attributes=(AttributeDef("t", "int"),)),
            MetaClass("Mid", supertypes=("Top",), attributes=(AttributeDef("m", "int"),)),
            MetaClass("Leaf", supertypes=("Mid",), attributes=(AttributeDef("l", "int"),)),
        ))
        assert [a.name for a in all_attributes_of(mm, "Leaf")] == ["l", "m", "t"]

    def test_multiplicity_text(self):
        assert str(Multiplicity(0, None)) == "0..*"
        assert str(Multiplicity(1, 1)) == "1..1"
        assert Multiplicity(1, 2).admits(2) and not Multiplicity(1, 2).admits(3)


def _brute_force_attributes(mm: Metamodel, name: str) -> list[tuple[str, str]]:
    by_name = {c.name: c for c in mm.classes}
    level, seen, order = [name], {name}, []
    while level:
        order.extend(level)
        nxt = []
        for c in level:
            for s in by_name[c].supertypes:
                if s not in seen:
                    seen.add(s)
                    nxt.append(s)
        level = nxt
    return [(a.name, a.type) for c in order for a in by_name[c].attributes]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 20))
def test_all_attributes_matches_brute_force(seed, n):
    mm = gen.metamodel(random.Random(seed), n_classes=n)
    for cls in mm.classes:
        assert [(a.name, a.type) for a in all_attributes_of(mm, cls.name)] == _brute_force_attributes(mm, cls.name)
