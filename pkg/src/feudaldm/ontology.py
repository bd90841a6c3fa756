"""Slot-filling domains: slot definitions, entity databases and synthetic generators.

Domain documents are JSON objects with four keys::

    {
      "name": "cr",
      "constraint_slots": [{"name": "food", "values": ["chinese", "indian"]}, ...],
      "requestable_slots": ["food", ..., "phone"],
      "entities": [{"food": "chinese", ..., "phone": "phone_0"}, ...]
    }

``requestable_slots`` must contain every constraint slot name.  Every entity
carries a value for every requestable slot; constraint slot values must come
from the slot's value list.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .acts import DONTCARE, NONE_VALUE


class OntologyError(ValueError):
    """Invalid domain document or query; ``location`` points at the offending part."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True)
class SlotDef:
    name: str
    values: tuple

    def index(self, value: str) -> int:
        return self.values.index(value)


@dataclass(frozen=True)
class Ontology:
    name: str
    constraint_slots: tuple
    requestable_slots: tuple
    entity_count: int

    def __post_init__(self):
        _validate_slots(self.constraint_slots, self.requestable_slots)

    @property
    def slot_names(self) -> tuple:
        return tuple(s.name for s in self.constraint_slots)

    @property
    def info_slots(self) -> tuple:
        """Requestable slots that are not constraint slots."""
        names = set(self.slot_names)
        return tuple(r for r in self.requestable_slots if r not in names)

    def slot(self, name: str) -> SlotDef:
        for s in self.constraint_slots:
            if s.name == name:
                return s
        raise OntologyError(f"unknown constraint slot {name!r}")

    @property
    def avg_values(self) -> float:
        return float(np.mean([len(s.values) for s in self.constraint_slots]))


@dataclass(frozen=True, eq=False)
class Database:
    ontology: Ontology
    entities: tuple

    def __eq__(self, other):
        if not isinstance(other, Database):
            return NotImplemented
        return self.ontology == other.ontology and [dict(e) for e in self.entities] == [
            dict(e) for e in other.entities
        ]

    def __len__(self):
        return len(self.entities)


def _validate_slots(constraint_slots, requestable_slots, where="constraint_slots"):
    seen = set()
    for i, slot in enumerate(constraint_slots):
        loc = f"{where}[{i}]"
        if not slot.name:
            raise OntologyError("empty slot name", loc)
        if slot.name in seen:
            raise OntologyError(f"duplicate slot name {slot.name!r}", loc)
        seen.add(slot.name)
        if len(slot.values) < 2:
            raise OntologyError(f"slot {slot.name!r} has <2 values", loc)
        if len(set(slot.values)) != len(slot.values):
            raise OntologyError(f"slot {slot.name!r} has duplicate values", loc)
        reserved = {NONE_VALUE, DONTCARE} & set(slot.values)
        if reserved:
            raise OntologyError(f"slot {slot.name!r} uses reserved value {sorted(reserved)[0]!r}", loc)
    if len(set(requestable_slots)) != len(requestable_slots):
        raise OntologyError("duplicate requestable slot", "requestable_slots")
    missing = [n for n in seen if n not in set(requestable_slots)]
    if missing:
        raise OntologyError(f"constraint slot {sorted(missing)[0]!r} is not requestable", "requestable_slots")


def _validate_entities(ont: Ontology, entities):
    for i, ent in enumerate(entities):
        loc = f"entities[{i}]"
        if not isinstance(ent, Mapping):
            raise OntologyError("entity is not an object", loc)
        for r in ont.requestable_slots:
            if r not in ent:
                raise OntologyError(f"missing slot {r!r}", loc)
        extra = set(ent) - set(ont.requestable_slots)
        if extra:
            raise OntologyError(f"unknown slot {sorted(extra)[0]!r}", loc)
        for s in ont.constraint_slots:
            if ent[s.name] not in s.values:
                raise OntologyError(f"unknown value {ent[s.name]!r} for slot {s.name!r}", f"{loc}.{s.name}")


def build_domain(name, constraint_slots, requestable_slots, entities):
    """Validate and assemble an (Ontology, Database) pair."""
    slots = tuple(SlotDef(n, tuple(v)) for n, v in constraint_slots)
    ont = Ontology(name, slots, tuple(requestable_slots), len(entities))
    _validate_entities(ont, entities)
    return ont, Database(ont, tuple(dict(e) for e in entities))


def load_ontology(document: str):
    """Parse a JSON domain document into a validated (Ontology, Database)."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise OntologyError(f"parse failure: {exc.msg}", f"line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(doc, dict):
        raise OntologyError("document is not an object", "$")
    for key in ("name", "constraint_slots", "requestable_slots", "entities"):
        if key not in doc:
            raise OntologyError(f"missing key {key!r}", "$")
    raw_slots = doc["constraint_slots"]
    if not isinstance(raw_slots, list):
        raise OntologyError("expected a list", "constraint_slots")
    pairs = []
    for i, entry in enumerate(raw_slots):
        if not isinstance(entry, dict) or "name" not in entry or "values" not in entry:
            raise OntologyError("slot needs 'name' and 'values'", f"constraint_slots[{i}]")
        if not isinstance(entry["values"], list):
            raise OntologyError("values must be a list", f"constraint_slots[{i}]")
        pairs.append((str(entry["name"]), [str(v) for v in entry["values"]]))
    if not isinstance(doc["entities"], list):
        raise OntologyError("expected a list", "entities")
    return build_domain(str(doc["name"]), pairs, [str(r) for r in doc["requestable_slots"]], doc["entities"])


def serialize_domain(ont: Ontology, db: Database) -> str:
    doc = {
        "name": ont.name,
        "constraint_slots": [{"name": s.name, "values": list(s.values)} for s in ont.constraint_slots],
        "requestable_slots": list(ont.requestable_slots),
        "entities": [dict(e) for e in db.entities],
    }
    return json.dumps(doc, indent=2) + "\n"


@dataclass(frozen=True)
class DomainSpec:
    n_constraint_slots: int
    values_per_slot: tuple
    n_requestable: int
    n_entities: int
    seed: int = 0
    name: str = "generated"


_SLOT_NAMES = (
    "food", "area", "pricerange", "near", "goodformeal", "kidsallowed",
    "family", "platform", "batteryrating", "weightrange", "drive",
    "processorclass", "sysmemory", "utility", "warranty", "design",
)
_INFO_NAMES = (
    "phone", "addr", "postcode", "description", "signature", "email",
    "openhours", "rating", "website", "manager", "parking", "delivery",
    "reviews", "stock", "colour",
)
_VALUE_WORDS = {
    "food": ("chinese", "indian", "italian", "french", "thai", "british", "korean", "spanish"),
    "area": ("north", "south", "east", "west", "centre", "riverside"),
    "pricerange": ("cheap", "moderate", "expensive", "luxury"),
}


def _slot_name(i):
    return _SLOT_NAMES[i] if i < len(_SLOT_NAMES) else f"slot{i}"


def _info_name(i):
    return _INFO_NAMES[i] if i < len(_INFO_NAMES) else f"info{i}"


def generate_domain(spec: DomainSpec):
    """Build a synthetic domain; a pure function of ``spec``.

    Every value of every constraint slot is held by at least one entity when
    ``n_entities`` allows it, so any single-slot constraint is satisfiable.
    """
    if spec.n_entities < 1:
        raise OntologyError("infeasible spec: n_entities < 1")
    if spec.n_constraint_slots < 1 or spec.n_requestable < 1:
        raise OntologyError("infeasible spec: counts must be >= 1")
    if len(spec.values_per_slot) != spec.n_constraint_slots:
        raise OntologyError("values_per_slot length must equal n_constraint_slots")
    if spec.n_requestable < spec.n_constraint_slots:
        raise OntologyError("n_requestable must cover every constraint slot")
    rng = np.random.default_rng(spec.seed)
    slots = []
    for i, n_values in enumerate(spec.values_per_slot):
        name = _slot_name(i)
        words = _VALUE_WORDS.get(name, ())
        values = [words[k] if k < len(words) else f"{name}{k}" for k in range(n_values)]
        slots.append((name, values))
    info = [_info_name(i) for i in range(spec.n_requestable - spec.n_constraint_slots)]
    columns = {}
    n = spec.n_entities
    for name, values in slots:
        k = len(values)
        if n >= k:
            idx = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
            idx = rng.permutation(idx)
        else:
            idx = rng.integers(0, k, size=n)
        columns[name] = [values[j] for j in idx]
    entities = []
    for e in range(n):
        ent = {name: columns[name][e] for name, _ in slots}
        for r in info:
            ent[r] = f"{r}_{e}"
        entities.append(ent)
    return build_domain(spec.name, slots, [name for name, _ in slots] + info, entities)


# Desk-scale analogues of the benchmark domains: slot and requestable counts
# follow the originals, value-set sizes are scaled down.
PRESETS = {
    "toy": DomainSpec(1, (4,), 3, 20, seed=11, name="toy"),
    "cr": DomainSpec(3, (6, 5, 4), 9, 60, seed=7, name="cr"),
    "sfr": DomainSpec(6, (8, 6, 5, 4, 3, 3), 11, 120, seed=13, name="sfr"),
    "lap": DomainSpec(11, (6, 5, 5, 4, 4, 3, 3, 3, 2, 2, 2), 21, 150, seed=17, name="lap"),
}


def preset_domain(name: str):
    try:
        return generate_domain(PRESETS[name])
    except KeyError:
        raise OntologyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def query_database(db: Database, constraints: Mapping[str, str]) -> list:
    """Entities matching every non-dontcare constraint, in database order."""
    ont = db.ontology
    active = {}
    for slot, value in constraints.items():
        sdef = ont.slot(slot)
        if value == DONTCARE:
            continue
        if value not in sdef.values:
            raise OntologyError(f"unknown value {value!r} for slot {slot!r}")
        active[slot] = value
    return [e for e in db.entities if all(e[s] == v for s, v in active.items())]


def query_indices(db: Database, constraints: Mapping[str, str]) -> list:
    active = {s: v for s, v in constraints.items() if v != DONTCARE}
    return [i for i, e in enumerate(db.entities) if all(e[s] == v for s, v in active.items())]


def db_value_entropy(db: Database, slot: str) -> float:
    """Natural-log entropy of the empirical distribution of ``slot`` over entities."""
    db.ontology.slot(slot)
    counts = np.array(list(Counter(e[slot] for e in db.entities).values()), dtype=float)
    if counts.size == 0:
        return 0.0
    p = counts / counts.sum()
    return float(max(0.0, -np.sum(p * np.log(p))))


def matches(entity: Mapping[str, str], constraints: Mapping[str, str]) -> bool:
    return all(v == DONTCARE or entity[s] == v for s, v in constraints.items())

