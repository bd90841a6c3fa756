"""Rule-based belief tracking over slot values plus general dialogue features.

Each constraint slot keeps a distribution laid out as
``[*NONE*, v_1, ..., v_n, dontcare]`` where ``v_1..v_n`` follow the slot's
value order in the ontology.  Evidence is accumulated with the focus rule: an
observation of value ``v`` with confidence ``c`` scales the whole distribution
by ``1 - c`` and adds ``c`` to ``v``.

Search-method categories (one-hot width 6):

* ``none``: the user has not constrained the search yet
* ``by_constraints``: the user informed, affirmed or negated a slot value
* ``by_alternatives``: the user rejected an offered venue
* ``by_name``: the user asked for details of the offered venue
* ``finished``: the user said goodbye
* ``restart``: an unclassifiable user turn arrived after an offer
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .acts import DONTCARE, NONE_VALUE, USER_ACT_TYPES, ObservedUserAct, SystemAct
from .ontology import Ontology

SEARCH_METHODS = ("none", "by_constraints", "by_alternatives", "by_name", "finished", "restart")


class BeliefError(ValueError):
    pass


def slot_labels(ont: Ontology, slot: str) -> tuple:
    return (NONE_VALUE,) + ont.slot(slot).values + (DONTCARE,)


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BeliefState:
    domain: str
    slots: tuple
    dists: tuple
    last_user_act_type: str = "other"
    search_method: str = "none"
    requested_slots: frozenset = frozenset()
    offer_happened: bool = False
    last_action_inform_none: bool = False
    turn_index: int = 0

    def dist(self, slot: str) -> np.ndarray:
        try:
            return self.dists[self.slots.index(slot)]
        except ValueError:
            raise BeliefError(f"unknown slot {slot!r}") from None

    def top_value(self, slot: str):
        """Most probable non-*NONE* hypothesis index (into the slot layout) and its mass."""
        d = self.dist(slot)
        i = int(np.argmax(d[1:])) + 1
        return i, float(d[i])

    def top_is_none(self, slot: str) -> bool:
        return int(np.argmax(self.dist(slot))) == 0

    def __eq__(self, other):
        if not isinstance(other, BeliefState):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.slots == other.slots
            and all(np.array_equal(a, b) for a, b in zip(self.dists, other.dists))
            and self.last_user_act_type == other.last_user_act_type
            and self.search_method == other.search_method
            and self.requested_slots == other.requested_slots
            and self.offer_happened == other.offer_happened
            and self.last_action_inform_none == other.last_action_inform_none
            and self.turn_index == other.turn_index
        )

    __hash__ = None


def init_belief(ont: Ontology) -> BeliefState:
    dists = []
    for s in ont.constraint_slots:
        d = np.zeros(len(s.values) + 2)
        d[0] = 1.0
        dists.append(_frozen(d))
    return BeliefState(ont.name, ont.slot_names, tuple(dists))


def _value_index(ont: Ontology, slot: str, value: str) -> int:
    labels = slot_labels(ont, slot)
    if value == NONE_VALUE or value not in labels:
        raise BeliefError(f"unknown value {value!r} for slot {slot!r}")
    return labels.index(value)


def _focus(d: np.ndarray, i: int, c: float) -> np.ndarray:
    out = (1.0 - c) * d
    out[i] += c
    s = out.sum()
    return out / s if s > 0 else out


def _apply_system_act(b: BeliefState, act: SystemAct) -> BeliefState:
    requested = b.requested_slots - set(act.answered)
    return replace(
        b,
        offer_happened=b.offer_happened or act.offers,
        last_action_inform_none=act.no_venue,
        requested_slots=frozenset(requested),
    )


def _apply_observation(b: BeliefState, ont: Ontology, obs: ObservedUserAct, after_offer: bool) -> BeliefState:
    t = obs.act_type
    if t not in USER_ACT_TYPES:
        raise BeliefError(f"unknown act type {t!r}")
    dists = b.dists
    requested = b.requested_slots
    method = b.search_method
    if t == "request":
        if obs.slot not in ont.requestable_slots:
            raise BeliefError(f"unknown requestable slot {obs.slot!r}")
        requested = requested | {obs.slot}
        method = "by_name"
    elif t in ("inform", "affirm", "negate", "confirm"):
        if obs.slot not in b.slots:
            raise BeliefError(f"unknown slot {obs.slot!r}")
        k = b.slots.index(obs.slot)
        i = _value_index(ont, obs.slot, obs.value)
        d = dists[k].copy()
        if t in ("inform", "affirm"):
            d = _focus(d, i, obs.confidence)
        elif t == "negate":
            moved = obs.confidence * d[i]
            d[i] -= moved
            d[0] += moved
        if t != "confirm":
            dists = dists[:k] + (_frozen(d),) + dists[k + 1:]
        method = "by_alternatives" if (t == "negate" and after_offer) else "by_constraints"
    elif t == "bye":
        method = "finished"
    elif b.offer_happened:
        method = "restart"
    return replace(b, dists=dists, requested_slots=frozenset(requested), search_method=method,
                   last_user_act_type=t)


def track_turn(b: BeliefState, ont: Ontology, observations: Sequence[ObservedUserAct],
               last_system_act: Optional[SystemAct] = None) -> BeliefState:
    """Advance the belief by one system turn: system-act effects, then each observation in order."""
    if last_system_act is not None:
        b = _apply_system_act(b, last_system_act)
    after_offer = last_system_act is not None and last_system_act.entity is not None
    for obs in observations:
        b = _apply_observation(b, ont, obs, after_offer)
    return replace(b, turn_index=b.turn_index + 1)


def update_belief(b: BeliefState, ont: Ontology, obs: ObservedUserAct,
                  last_system_act: Optional[SystemAct] = None) -> BeliefState:
    return track_turn(b, ont, [obs], last_system_act)


def joint_top(dists: Sequence[np.ndarray], top_k: int):
    """Top ``top_k`` entries of the product distribution, exact, by beam pruning.

    Pruning each prefix product to ``top_k`` entries is lossless: a prefix
    outside the top ``top_k`` prefixes is dominated by ``top_k`` completions.
    Returns ``(index_matrix, probs, remainder_mass)``.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    probs = np.ones(1)
    idx = np.zeros((1, 0), dtype=np.int64)
    for d in dists:
        cand = (probs[:, None] * d[None, :]).ravel()
        order = np.argsort(-cand, kind="stable")[:top_k]
        rows, cols = np.divmod(order, len(d))
        idx = np.concatenate([idx[rows], cols[:, None]], axis=1)
        probs = cand[order]
    remainder = max(0.0, 1.0 - float(probs.sum()))
    return idx, probs, remainder


def joint_belief(b: BeliefState, ont: Ontology, top_k: int):
    """The ``top_k`` most probable value tuples of the product of slot marginals.

    Returns ``(tuples, remainder)`` where ``tuples`` is a list of
    ``(value_tuple, probability)`` and ``remainder`` the mass not listed.
    """
    idx, probs, remainder = joint_top(b.dists, top_k)
    labels = [slot_labels(ont, s) for s in b.slots]
    tuples = [(tuple(labels[k][j] for k, j in enumerate(row)), float(p)) for row, p in zip(idx, probs)]
    return tuples, remainder


def dump_belief(b: BeliefState, ont: Ontology) -> str:
    """Deterministic line-oriented text form; ``parse_belief`` inverts it exactly."""
    lines = [
        "belief v1",
        f"domain {b.domain}",
        f"turn {b.turn_index}",
        f"last_user_act {b.last_user_act_type}",
        f"search_method {b.search_method}",
        "requested " + ",".join(sorted(b.requested_slots)),
        f"offer_happened {int(b.offer_happened)}",
        f"last_action_inform_none {int(b.last_action_inform_none)}",
    ]
    for s, d in zip(b.slots, b.dists):
        pairs = " ".join(f"{lab}={float(p)!r}" for lab, p in zip(slot_labels(ont, s), d))
        lines.append(f"slot {s} {pairs}")
    return "\n".join(lines) + "\n"


def parse_belief(text: str, ont: Ontology) -> BeliefState:
    fields = {}
    dists = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key == "slot":
            name, _, pairs = rest.partition(" ")
            labels = slot_labels(ont, name) if name in ont.slot_names else None
            if labels is None:
                raise BeliefError(f"line {n}: unknown slot {name!r}")
            vals = {}
            for item in pairs.split():
                lab, _, p = item.rpartition("=")
                try:
                    vals[lab] = float(p)
                except ValueError:
                    raise BeliefError(f"line {n}: bad probability {item!r}") from None
            if set(vals) != set(labels):
                raise BeliefError(f"line {n}: slot {name!r} hypotheses do not match the ontology")
            dists[name] = _frozen([vals[lab] for lab in labels])
        else:
            fields[key] = rest
    if fields.get("belief") != "v1":
        raise BeliefError("not a belief dump (missing 'belief v1' header)")
    missing = [s for s in ont.slot_names if s not in dists]
    if missing:
        raise BeliefError(f"missing slot {missing[0]!r}")
    for s, d in dists.items():
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise BeliefError(f"slot {s!r} is not a probability distribution")
    act = fields.get("last_user_act")
    if act is not None and act not in USER_ACT_TYPES:
        raise BeliefError(f"unknown user act type {act!r}")
    method = fields.get("search_method")
    if method is not None and method not in SEARCH_METHODS:
        raise BeliefError(f"unknown search method {method!r}")
    requested = frozenset(r for r in fields.get("requested", "").split(",") if r)
    bad = sorted(requested - set(ont.requestable_slots))
    if bad:
        raise BeliefError(f"unknown requested slot {bad[0]!r}")
    try:
        return BeliefState(
            domain=fields.get("domain", ont.name),
            slots=ont.slot_names,
            dists=tuple(dists[s] for s in ont.slot_names),
            last_user_act_type=fields["last_user_act"],
            search_method=fields["search_method"],
            requested_slots=requested,
            offer_happened=fields["offer_happened"] == "1",
            last_action_inform_none=fields["last_action_inform_none"] == "1",
            turn_index=int(fields["turn"]),
        )
    except KeyError as exc:
        raise BeliefError(f"missing field {exc.args[0]!r}") from None
    except ValueError:
        raise BeliefError(f"bad turn index {fields.get('turn')!r}") from None
