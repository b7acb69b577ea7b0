from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings, strategies as st

import fixture_models
import gen
from mbelens.bundled import read_fixture
from mbelens.model import Instance, Metamodel, ModelObject, ObjectRef
from mbelens.modelformat import (
    ModelDocument,
    ParseError,
    canonicalize,
    emit_model_document,
    load_metamodel,
    parse_model_document,
    parse_multiplicity,
)

FIXTURES = {
    "ccs-mini.json": fixture_models.ccs_mini,
    "ccs-mini-reduced.json": fixture_models.ccs_mini_reduced,
    "demo-vehicle.json": fixture_models.demo_vehicle,
}


def parse_error(text) -> ParseError:
    with pytest.raises(ParseError) as exc:
        parse_model_document(text)
    return exc.value


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixture_files_equal_constructors(name):
    doc = parse_model_document(read_fixture(name))
    assert doc.payload == FIXTURES[name]()
    assert doc.issues == ()


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixture_files_are_canonical(name):
    raw = read_fixture(name)
    assert canonicalize(raw) == raw
    assert emit_model_document(parse_model_document(raw)) == raw


def test_field_order_is_irrelevant():
    doc = {"relations": [], "classes": [], "name": "m", "kind": "metamodel"}
    assert parse_model_document(json.dumps(doc)).payload == Metamodel("m")


def test_empty_metamodel_round_trip():
    out = emit_model_document(Metamodel("m"))
    assert json.loads(out) == {"kind": "metamodel", "name": "m", "classes": [], "relations": []}
    assert parse_model_document(out).payload == Metamodel("m")


def test_bare_object_has_explicit_slots_and_links():
    out = json.loads(emit_model_document(Instance("m", (ModelObject("a", "A"),))))
    assert out["objects"] == [{"id": "a", "class": "A", "slots": {}, "links": {}}]


def test_emission_layout():
    out = emit_model_document(Metamodel("m"))
    assert out.endswith(b"\n")
    assert b'\n  "name": "m"' in out


def test_object_reference_encoding():
    inst = Instance("m", (ModelObject("a", "A", {"peer": ObjectRef("a")}),))
    out = emit_model_document(inst)
    assert json.loads(out)["objects"][0]["slots"] == {"peer": {"$ref": "a"}}
    assert parse_model_document(out).payload == inst


class TestErrors:
    def test_missing_classes(self):
        err = parse_error('{"kind":"metamodel","name":"m","relations":[]}')
        assert (err.code, err.path) == ("MISSING_FIELD", "/classes")

    def test_unknown_field(self):
        err = parse_error('{"kind":"metamodel","name":"m","classes":[],"relations":[],"extra":1}')
        assert (err.code, err.path) == ("UNKNOWN_FIELD", "/extra")

    def test_bad_multiplicity(self):
        with pytest.raises(ParseError) as exc:
            parse_multiplicity("2..1")
        assert exc.value.code == "BAD_MULTIPLICITY"
        doc = {"kind": "metamodel", "name": "m", "classes": [{"name": "A", "abstract": False, "supertypes": [],
               "attributes": [], "operations": []}], "relations": [{"kind": "association", "name": "r",
               "source": "A", "target": "A", "multiplicity": "2..1"}]}
        err = parse_error(json.dumps(doc))
        assert (err.code, err.path) == ("BAD_MULTIPLICITY", "/relations/0/multiplicity")

    @pytest.mark.parametrize("text", ["0..*", "1..1", "3..7"])
    def test_good_multiplicities(self, text):
        assert str(parse_multiplicity(text)) == text

    @pytest.mark.parametrize("text", ["*", "1", "-1..2", "a..b", "1..0", "0..0", "1...2"])
    def test_bad_multiplicities(self, text):
        with pytest.raises(ParseError):
            parse_multiplicity(text)

    def test_malformed_json(self):
        assert parse_error("{").code == "MALFORMED_JSON"
        assert parse_error(b"\xff").code == "MALFORMED_JSON"

    def test_duplicate_key(self):
        assert parse_error('{"kind":"metamodel","kind":"instance"}').code == "DUPLICATE_KEY"

    def test_non_finite_numbers_rejected(self):
        err = parse_error('{"kind":"instance","metamodel":"m","objects":[{"id":"a","class":"A",'
                          '"slots":{"x":NaN},"links":{}}]}')
        assert err.code == "MALFORMED_JSON"

    def test_bad_kind(self):
        assert parse_error('{"kind":"diagram"}').code == "BAD_KIND"

    def test_wrong_types(self):
        err = parse_error('{"kind":"metamodel","name":"m","classes":{},"relations":[]}')
        assert (err.code, err.path) == ("BAD_TYPE", "/classes")

    def test_bad_relation_kind(self):
        doc = {"kind": "metamodel", "name": "m", "classes": [], "relations": [{"kind": "friendship", "name": "r",
               "source": "A", "target": "A", "multiplicity": "0..*"}]}
        assert parse_error(json.dumps(doc)).code == "BAD_RELATION_KIND"

    def test_bad_slot_value(self):
        err = parse_error('{"kind":"instance","metamodel":"m","objects":[{"id":"a","class":"A",'
                          '"slots":{"x":[1]},"links":{}}]}')
        assert (err.code, err.path) == ("BAD_VALUE", "/objects/0/slots/x")

    def test_errors_serialize(self):
        assert parse_error("{").to_json()["code"] == "MALFORMED_JSON"


def test_validation_issues_attached():
    doc = {"kind": "metamodel", "name": "m", "relations": [], "classes": [
        {"name": "X", "abstract": False, "supertypes": ["Ghost"], "attributes": [], "operations": []}]}
    parsed = parse_model_document(json.dumps(doc))
    assert isinstance(parsed, ModelDocument) and not parsed.valid
    assert [i.code for i in parsed.issues] == ["UNRESOLVED_SUPERTYPE"]
    with pytest.raises(ParseError):
        load_metamodel(json.dumps(doc))


def test_instance_validated_against_given_metamodel(ccs_mini):
    raw = read_fixture("demo-vehicle.json")
    assert parse_model_document(raw, ccs_mini).issues == ()
    bad = json.loads(raw)
    bad["objects"][0]["slots"]["resolution"] = "high"
    issues = parse_model_document(json.dumps(bad), ccs_mini).issues
    assert [i.code for i in issues] == ["SLOT_TYPE_MISMATCH"]


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32))
def test_round_trip_random_documents(seed):
    rng = random.Random(seed)
    mm = gen.metamodel(rng)
    for value in (mm, gen.instance(rng, mm)):
        out = emit_model_document(value)
        back = parse_model_document(out).payload
        assert back == value
        assert emit_model_document(back) == out


def test_emit_is_deterministic_for_equal_values():
    a = Instance("m", (ModelObject("o", "A", {"y": 1, "x": 2}, {"s": (), "r": ("o",)}),))
    b = Instance("m", (ModelObject("o", "A", {"x": 2, "y": 1}, {"r": ("o",), "s": ()}),))
    assert emit_model_document(a) == emit_model_document(b)
