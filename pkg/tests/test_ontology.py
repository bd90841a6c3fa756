import json
import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feudaldm.ontology import (
    PRESETS, DomainSpec, OntologyError, db_value_entropy, generate_domain, load_ontology, preset_domain,
    query_database, serialize_domain,
)


def doc(slots, requestable=None, entities=None, name="d"):
    requestable = requestable if requestable is not None else [s for s, _ in slots]
    if entities is None:
        entities = [{s: v[0] for s, v in slots}]
    return json.dumps({"name": name, "constraint_slots": [{"name": s, "values": v} for s, v in slots],
                       "requestable_slots": requestable, "entities": entities})


def test_cr_document_has_three_slots(cr):
    ont, db = load_ontology(serialize_domain(*cr))
    assert len(ont.constraint_slots) == 3
    assert len(ont.requestable_slots) == 9


def test_lap_document_has_eleven_slots(lap):
    ont, _ = load_ontology(serialize_domain(*lap))
    assert len(ont.constraint_slots) == 11
    assert len(ont.requestable_slots) == 21


def test_slot_with_one_value_rejected():
    with pytest.raises(OntologyError, match="<2 values") as exc:
        load_ontology(doc([("food", ["a", "b"]), ("area", ["x"])]))
    assert exc.value.location == "constraint_slots[1]"


def test_duplicate_slot_rejected():
    with pytest.raises(OntologyError, match="duplicate slot") as exc:
        load_ontology(doc([("food", ["a", "b"]), ("food", ["c", "d"])]))
    assert exc.value.location == "constraint_slots[1]"


def test_unknown_entity_value_rejected():
    bad = doc([("food", ["a", "b"])], entities=[{"food": "a"}, {"food": "zz"}])
    with pytest.raises(OntologyError, match="unknown value") as exc:
        load_ontology(bad)
    assert exc.value.location == "entities[1].food"


def test_parse_failure_reports_line():
    with pytest.raises(OntologyError, match="parse failure") as exc:
        load_ontology('{"name":\n  oops}')
    assert exc.value.location.startswith("line 2")


def test_incomplete_entity_rejected():
    bad = doc([("food", ["a", "b"])], requestable=["food", "phone"], entities=[{"food": "a"}])
    with pytest.raises(OntologyError, match="missing slot 'phone'"):
        load_ontology(bad)


def test_constraint_slots_must_be_requestable():
    with pytest.raises(OntologyError, match="not requestable"):
        load_ontology(doc([("food", ["a", "b"])], requestable=["phone"], entities=[{"food": "a", "phone": "1"}]))


def test_document_order_preserved():
    ont, _ = load_ontology(doc([("zeta", ["q", "b", "a"]), ("alpha", ["y", "x"])]))
    assert ont.slot_names == ("zeta", "alpha")
    assert ont.slot("zeta").values == ("q", "b", "a")


def test_generate_spec_example():
    ont, db = generate_domain(DomainSpec(3, (4, 5, 6), 9, 60, seed=7))
    assert sum(len(s.values) for s in ont.constraint_slots) == 15
    assert len(db) == 60 and ont.entity_count == 60


def test_generate_is_deterministic():
    spec = DomainSpec(3, (4, 5, 6), 9, 60, seed=7)
    a, b = generate_domain(spec), generate_domain(spec)
    assert a[0] == b[0] and a[1] == b[1]
    assert serialize_domain(*a) == serialize_domain(*b)


def test_sfr_analogue(sfr):
    assert len(sfr[0].constraint_slots) == 6


def test_generate_infeasible():
    with pytest.raises(OntologyError, match="n_entities"):
        generate_domain(DomainSpec(1, (3,), 2, 0))
    with pytest.raises(OntologyError):
        generate_domain(DomainSpec(2, (3,), 2, 5))


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_cover_every_value(name):
    ont, db = preset_domain(name)
    for s in ont.constraint_slots:
        assert {e[s.name] for e in db.entities} == set(s.values)


def test_query_empty_constraints(cr):
    _, db = cr
    assert query_database(db, {}) == list(db.entities)


def test_query_no_match(tiny):
    _, db = tiny
    assert query_database(db, {"food": "chinese", "area": "south"}) == [
        e for e in db.entities if e["food"] == "chinese" and e["area"] == "south"]
    ont, db = generate_domain(DomainSpec(2, (2, 2), 2, 1, seed=0))
    e = db.entities[0]
    other = {s.name: next(v for v in s.values if v != e[s.name]) for s in ont.constraint_slots}
    assert query_database(db, other) == []


def test_query_single_constraint_matches_linear_scan(cr):
    _, db = cr
    expected = []
    for e in db.entities:
        if e["food"] == "chinese":
            expected.append(e)
    got = query_database(db, {"food": "chinese"})
    assert got == expected and len(got) > 0


def test_query_dontcare_is_wildcard(cr):
    _, db = cr
    assert query_database(db, {"food": "dontcare", "area": "north"}) == query_database(db, {"area": "north"})


def test_query_unknown_slot_or_value(cr):
    _, db = cr
    with pytest.raises(OntologyError):
        query_database(db, {"colour": "red"})
    with pytest.raises(OntologyError):
        query_database(db, {"food": "martian"})


def test_entropy_degenerate():
    ont, db = load_ontology(doc([("food", ["a", "b"])], entities=[{"food": "a"}] * 5))
    assert db_value_entropy(db, "food") == 0.0


def test_entropy_uniform_four():
    ents = [{"food": v} for v in "abcd" * 3]
    _, db = load_ontology(doc([("food", list("abcd"))], entities=ents))
    assert db_value_entropy(db, "food") == pytest.approx(math.log(4), abs=1e-12)
    assert round(db_value_entropy(db, "food"), 4) == 1.3863


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_entropy_counting_oracle(name):
    ont, db = preset_domain(name)
    for s in ont.slot_names:
        counts = Counter(e[s] for e in db.entities)
        n = len(db)
        oracle = -sum(c / n * math.log(c / n) for c in counts.values())
        assert db_value_entropy(db, s) == pytest.approx(oracle, abs=1e-12)
        assert db_value_entropy(db, s) <= math.log(len(ont.slot(s).values)) + 1e-12


specs = st.integers(1, 5).flatmap(lambda n: st.builds(
    DomainSpec,
    st.just(n),
    st.lists(st.integers(2, 7), min_size=n, max_size=n).map(tuple),
    st.integers(n, n + 6),
    st.integers(1, 40),
    st.integers(0, 2 ** 16),
))


@settings(max_examples=60, deadline=None)
@given(specs)
def test_roundtrip_identity(spec):
    ont, db = generate_domain(spec)
    ont2, db2 = load_ontology(serialize_domain(ont, db))
    assert ont2 == ont and db2 == db


@settings(max_examples=60, deadline=None)
@given(specs)
def test_generate_pure_and_entropy_bounded(spec):
    ont, db = generate_domain(spec)
    assert serialize_domain(ont, db) == serialize_domain(*generate_domain(spec))
    for s in ont.constraint_slots:
        assert 0.0 <= db_value_entropy(db, s.name) <= math.log(len(s.values)) + 1e-12
