"""Dialogue act vocabularies shared by the user side and the system side."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

NONE_VALUE = "*NONE*"
DONTCARE = "dontcare"

# User act taxonomy; its size fixes the width of the last-user-act one-hot.
USER_ACT_TYPES = ("inform", "request", "confirm", "negate", "affirm", "bye", "other")
_NEEDS_SLOT = {"inform", "request", "confirm", "negate", "affirm"}
_NEEDS_VALUE = {"inform", "confirm", "negate", "affirm"}

GLOBAL_ACTS = ("hello", "inform", "inform_byname", "inform_alternatives", "bye")
SLOT_ACTS = ("request", "confirm", "select")
PASS = "pass"


def act_needs_slot(act_type: str) -> bool:
    return act_type in _NEEDS_SLOT


def act_needs_value(act_type: str) -> bool:
    return act_type in _NEEDS_VALUE


@dataclass(frozen=True)
class UserAct:
    """One semantic item produced by the simulated user."""

    act_type: str
    slot: Optional[str] = None
    value: Optional[str] = None

    def __post_init__(self):
        if self.act_type not in USER_ACT_TYPES:
            raise ValueError(f"unknown user act type {self.act_type!r}")
        if act_needs_slot(self.act_type) != (self.slot is not None):
            raise ValueError(f"{self.act_type} act slot presence mismatch: {self.slot!r}")
        if act_needs_value(self.act_type) != (self.value is not None):
            raise ValueError(f"{self.act_type} act value presence mismatch: {self.value!r}")

    def __str__(self):
        if self.value is not None:
            return f"{self.act_type}({self.slot}={self.value})"
        if self.slot is not None:
            return f"{self.act_type}({self.slot})"
        return f"{self.act_type}()"


@dataclass(frozen=True)
class ObservedUserAct(UserAct):
    """A user act as seen by the tracker, after the error channel."""

    confidence: float = 1.0
    corrupted: bool = False

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside (0, 1]")

    def __str__(self):
        return f"{UserAct.__str__(self)}@{self.confidence:.3f}"


@dataclass(frozen=True)
class SummaryAction:
    """An abstract system action: a global act, or a communication function on a slot."""

    act: str
    slot: Optional[str] = None

    def __post_init__(self):
        if self.slot is None and self.act not in GLOBAL_ACTS:
            raise ValueError(f"{self.act!r} is not a global summary act")
        if self.slot is not None and self.act not in SLOT_ACTS:
            raise ValueError(f"{self.act!r} is not a slot summary act")

    @property
    def is_global(self) -> bool:
        return self.slot is None

    def __str__(self):
        return f"{self.act}({self.slot or ''})"


@dataclass(frozen=True)
class SystemAct:
    """A summary action expanded against the belief and the database.

    ``entity`` is the database index of the venue the act talks about, if any;
    ``no_venue`` marks an offer attempt that matched nothing, and ``answered``
    lists the requestable slots whose values the act discloses.
    """

    summary: SummaryAction
    slot: Optional[str] = None
    values: tuple = ()
    entity: Optional[int] = None
    no_venue: bool = False
    answered: tuple = ()
    constraints: dict = field(default_factory=dict, compare=True, hash=False)

    @property
    def offers(self) -> bool:
        return self.summary.act in ("inform", "inform_alternatives") and self.entity is not None

    def __str__(self):
        parts = [self.summary.act]
        if self.slot is not None:
            vals = "|".join(str(v) for v in self.values)
            parts.append(f"{self.slot}={vals}" if vals else self.slot)
        if self.entity is not None:
            parts.append(f"entity={self.entity}")
        if self.no_venue:
            parts.append("none")
        if self.answered:
            parts.append("answers=" + ",".join(self.answered))
        return f"{parts[0]}({';'.join(parts[1:])})"
