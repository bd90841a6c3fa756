"""Agenda-based simulated user, semantic error channel and success evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .acts import DONTCARE, USER_ACT_TYPES, ObservedUserAct, SystemAct, UserAct, act_needs_slot, act_needs_value
from .ontology import Database, Ontology, matches, query_database

GOAL_SLOT_PROB = 0.8
MAX_GOAL_RESAMPLES = 100
MAX_TURNS = 25


@dataclass(frozen=True)
class UserGoal:
    constraints: dict
    requests: frozenset

    def __str__(self):
        cons = ",".join(f"{s}={v}" for s, v in self.constraints.items())
        return f"goal(constraints[{cons}] requests[{','.join(sorted(self.requests))}])"


@dataclass(frozen=True)
class UserProfile:
    kind: str
    patience: int
    max_turns: int = MAX_TURNS
    cooperativeness: float = 0.3
    dontcare_rate: float = 0.0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_turns < 2:
            raise ValueError("max_turns must be >= 2")
        if not 0.0 <= self.cooperativeness <= 1.0:
            raise ValueError("cooperativeness must lie in [0, 1]")


STANDARD = UserProfile("Standard", patience=5, cooperativeness=0.3)
UNFRIENDLY = UserProfile("Unfriendly", patience=3, cooperativeness=0.0, dontcare_rate=0.3)
PROFILES = {"Standard": STANDARD, "Unfriendly": UNFRIENDLY}


@dataclass(frozen=True)
class ErrorModel:
    """Semantic error channel: each act is confused with probability ``ser``.

    Clean confidences are ``0.6 + 0.4 (1 - u^2)`` and confused ones
    ``0.2 + 0.5 u`` for ``u ~ U(0, 1)``.
    """

    ser: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ser <= 1.0:
            raise ValueError("ser must lie in [0, 1]")

    def confidence(self, corrupted: bool, rng: np.random.Generator) -> float:
        u = rng.random()
        if corrupted:
            return 0.2 + 0.5 * u
        return 0.6 + 0.4 * (1.0 - u * u)


def sample_goal(ont: Ontology, db: Database, rng: np.random.Generator) -> UserGoal:
    if len(db) == 0:
        raise ValueError("cannot sample a goal from an empty database")
    present = {s.name: [v for v in s.values if any(e[s.name] == v for e in db.entities)]
               for s in ont.constraint_slots}
    constraints = None
    for _ in range(MAX_GOAL_RESAMPLES):
        cand = {}
        for s in ont.constraint_slots:
            if rng.random() < GOAL_SLOT_PROB:
                vals = present[s.name]
                cand[s.name] = vals[int(rng.integers(len(vals)))]
        if query_database(db, cand):
            constraints = cand
            break
    if constraints is None:
        ent = db.entities[int(rng.integers(len(db)))]
        constraints = {s: ent[s] for s in cand}
    pool = list(ont.info_slots) or [r for r in ont.requestable_slots if r not in constraints]
    pool = pool or list(ont.requestable_slots)
    n = int(rng.integers(1, min(3, len(pool)) + 1))
    picks = rng.choice(len(pool), size=n, replace=False)
    return UserGoal(constraints, frozenset(pool[int(i)] for i in picks))


@dataclass
class AgendaState:
    """What the user has said and received so far in one dialogue."""

    informed: set = field(default_factory=set)
    received: dict = field(default_factory=dict)
    unhelpful_streak: int = 0
    turns: int = 0
    last_system_act: Optional[SystemAct] = None
    done: bool = False
    hung_up: bool = False


def _answer(slot, goal, profile, rng):
    if slot in goal.constraints:
        if profile.dontcare_rate > 0 and rng.random() < profile.dontcare_rate:
            return UserAct("inform", slot, DONTCARE)
        return UserAct("inform", slot, goal.constraints[slot])
    return UserAct("inform", slot, DONTCARE)


def _volunteer(state, goal, profile, rng, exclude):
    out = []
    for s, v in goal.constraints.items():
        if s in exclude or s in state.informed:
            continue
        if rng.random() < profile.cooperativeness:
            out.append(UserAct("inform", s, v))
    return out


def _reject(entity, goal, sys_act):
    for s, g in goal.constraints.items():
        have = entity[s] if entity is not None else sys_act.constraints.get(s)
        if have is not None and have != DONTCARE and have != g:
            return [UserAct("negate", s, have), UserAct("inform", s, g)]
    return None


def _is_unhelpful(act: SystemAct, state: AgendaState, goal: UserGoal, db: Database) -> bool:
    """Repeats, void acts and offers that miss the goal wear down patience."""
    kind = act.summary.act
    if state.last_system_act is not None and act == state.last_system_act:
        return True
    if act.no_venue:
        return True
    if act.offers and not matches(db.entities[act.entity], goal.constraints):
        return True
    if kind == "hello" and state.turns > 0:
        return True
    if kind in ("confirm", "select") and not act.values:
        return True
    if kind == "inform_byname" and act.entity is None:
        return True
    return False


def user_respond(state: AgendaState, goal: UserGoal, profile: UserProfile, act: SystemAct,
                 db: Database, rng: np.random.Generator) -> list:
    """Advance the agenda by one system act; returns the user's act items.

    ``state.done`` is set when the user ends the dialogue; ``state.hung_up``
    additionally marks running out of patience or turns.
    """
    if state.done:
        raise RuntimeError("dialogue already terminated")
    kind = act.summary.act
    unhelpful = _is_unhelpful(act, state, goal, db)
    first = state.turns == 0
    state.turns += 1
    state.last_system_act = act
    state.unhelpful_streak = state.unhelpful_streak + 1 if unhelpful else 0

    if kind == "bye":
        state.done = True
        return [UserAct("bye")]
    if state.unhelpful_streak > profile.patience or state.turns >= profile.max_turns:
        state.done = state.hung_up = True
        return [UserAct("bye")]

    acts: list
    if kind == "hello":
        acts = [UserAct("other")]
        if first and goal.constraints:
            keys = list(goal.constraints)
            s = keys[int(rng.integers(len(keys)))]
            acts = [UserAct("inform", s, goal.constraints[s])] + _volunteer(state, goal, profile, rng, {s})
    elif kind == "request":
        acts = [_answer(act.slot, goal, profile, rng)] + _volunteer(state, goal, profile, rng, {act.slot})
    elif kind == "select":
        acts = [_answer(act.slot, goal, profile, rng)] if act.values else [UserAct("other")]
    elif kind == "confirm":
        if not act.values:
            acts = [UserAct("other")]
        else:
            truth = goal.constraints.get(act.slot, DONTCARE)
            if act.values[0] == truth:
                acts = [UserAct("affirm", act.slot, truth)]
            else:
                acts = [UserAct("negate", act.slot, act.values[0]), UserAct("inform", act.slot, truth)]
    else:
        acts = _respond_to_inform(state, goal, act, db)
    for a in acts:
        if a.act_type in ("inform", "affirm") and a.slot in goal.constraints:
            state.informed.add(a.slot)
    return acts


def _respond_to_inform(state, goal, act, db):
    if act.entity is None:
        if act.no_venue:
            rej = _reject(None, goal, act)
            if rej:
                return rej
            if goal.constraints:
                s = next(iter(goal.constraints))
                return [UserAct("inform", s, goal.constraints[s])]
        return [UserAct("other")]
    entity = db.entities[act.entity]
    if not matches(entity, goal.constraints):
        return _reject(entity, goal, act) or [UserAct("other")]
    got = state.received.setdefault(act.entity, set())
    got.update(set(act.answered) & goal.requests)
    outstanding = sorted(goal.requests - got)
    if not outstanding:
        state.done = True
        return [UserAct("bye")]
    return [UserAct("request", r) for r in outstanding]


def corrupt_act(act: UserAct, em: ErrorModel, ont: Ontology, rng: np.random.Generator) -> ObservedUserAct:
    """Pass one user act through the error channel.

    A confused act takes one of three forms chosen uniformly: a different
    value (or requested slot), a different act type, or a drop to ``other``.
    """
    corrupted = em.ser > 0 and rng.random() < em.ser
    if not corrupted:
        return ObservedUserAct(act.act_type, act.slot, act.value, em.confidence(False, rng), False)
    branch = ("value", "type", "drop")[int(rng.integers(3))]
    if branch == "value" and act.value is None and act.act_type != "request":
        branch = "type"
    if branch == "drop" and act.act_type == "other":
        branch = "type"
    if branch == "value":
        if act.act_type == "request":
            others = [r for r in ont.requestable_slots if r != act.slot]
            slot, value = others[int(rng.integers(len(others)))], None
        else:
            slot = act.slot
            others = [v for v in ont.slot(slot).values if v != act.value]
            value = others[int(rng.integers(len(others)))]
        t = act.act_type
    elif branch == "type":
        types = [t for t in USER_ACT_TYPES if t != act.act_type]
        t = types[int(rng.integers(len(types)))]
        slot = value = None
        if act_needs_slot(t):
            if t == "request":
                slot = act.slot if act.slot in ont.requestable_slots else \
                    ont.requestable_slots[int(rng.integers(len(ont.requestable_slots)))]
            else:
                slot = act.slot if act.slot in ont.slot_names else \
                    ont.slot_names[int(rng.integers(len(ont.slot_names)))]
        if act_needs_value(t):
            if act.value is not None and slot == act.slot:
                value = act.value
            else:
                vals = ont.slot(slot).values
                value = vals[int(rng.integers(len(vals)))]
    else:
        t, slot, value = "other", None, None
    return ObservedUserAct(t, slot, value, em.confidence(True, rng), True)


@dataclass(frozen=True)
class TurnRecord:
    system_act: SystemAct
    user_acts: tuple
    observed: tuple


def evaluate_success(transcript, goal: UserGoal, db: Database) -> bool:
    """An entity meeting every goal constraint was offered and all requests were answered for it."""
    offered = set()
    answered = {}
    for turn in transcript:
        act = turn.system_act
        if act.entity is None:
            continue
        if act.offers:
            offered.add(act.entity)
        answered.setdefault(act.entity, set()).update(act.answered)
    for e in offered:
        if matches(db.entities[e], goal.constraints) and goal.requests <= answered.get(e, set()):
            return True
    return False


def format_transcript(transcript) -> str:
    """One tab-separated line per turn: index, system act, user acts, observed acts, confidences."""
    lines = []
    for i, turn in enumerate(transcript):
        user = " + ".join(str(UserAct.__str__(a)) for a in turn.user_acts)
        obs = " + ".join(UserAct.__str__(o) for o in turn.observed)
        conf = ",".join(f"{o.confidence:.3f}" for o in turn.observed)
        lines.append(f"{i}\t{turn.system_act}\t{user}\t{obs}\t{conf}")
    return "\n".join(lines) + ("\n" if lines else "")
