"""Domain-independent belief abstraction: fixed 64-dim features per (belief, slot).

Layout of one vector::

    [0:22)   general   last user act (7) | search method (6) | #requested (5)
                       | offer happened | last inform had no venue
                       | 1/#slots | 1/avg #values
    [22:37)  joint     top-3 joint probs | joint *NONE* prob | joint entropy
                       | top1-top2 diff (5) | #slots with top != *NONE* (5)
    [37:64)  slot      top-3 probs | *NONE* prob | top1-top2 diff (5) | entropy
                       | #values with prob > 0 (5) | 1/#values
                       | #values (10) | entropy of the slot's values in the DB

Binned features are one-hot over half-open intervals ``[c_{i-1}, c_i)``.
The slot-independent and master inputs are the first 37 entries.
"""

from __future__ import annotations

import bisect

import numpy as np

from .acts import USER_ACT_TYPES
from .belief_tracker import SEARCH_METHODS, BeliefState, joint_top
from .ontology import Database, Ontology, db_value_entropy

GENERAL_SIZE = 22
JOINT_SIZE = 15
SLOT_SIZE = 27
MASTER_SIZE = GENERAL_SIZE + JOINT_SIZE
DIP_SIZE = MASTER_SIZE + SLOT_SIZE

REQUESTED_CUTS = (1, 2, 3, 4)
DIFF_CUTS = (0.1, 0.25, 0.5, 0.75)
NOT_NONE_CUTS = (1, 2, 3, 4)
NONZERO_CUTS = (2, 4, 8, 16)
LENGTH_CUTS = (3, 6, 10, 15, 25, 40, 70, 120, 200)
JOINT_TOP_K = 512
EXACT_JOINT_MAX_SLOTS = 3

# (name, width) in vector order; names are used by the labeled dump.
LAYOUT = (
    ("general.last_user_act", 7), ("general.search_method", 6), ("general.n_requested", 5),
    ("general.offer_happened", 1), ("general.last_inform_none", 1),
    ("general.inv_n_slots", 1), ("general.inv_avg_values", 1),
    ("joint.top3", 3), ("joint.none", 1), ("joint.entropy", 1),
    ("joint.diff", 5), ("joint.n_not_none", 5),
    ("slot.top3", 3), ("slot.none", 1), ("slot.diff", 5), ("slot.entropy", 1),
    ("slot.n_nonzero", 5), ("slot.inv_length", 1), ("slot.length", 10), ("slot.db_entropy", 1),
)
ONE_HOT_SEGMENTS = tuple(name for name, w in LAYOUT if w > 1 and not name.endswith("top3"))


def bin_encode(x: float, thresholds) -> np.ndarray:
    """One-hot of length ``len(thresholds) + 1``; outer bins absorb out-of-range values."""
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    out = np.zeros(len(thresholds) + 1)
    out[bisect.bisect_right(thresholds, x)] = 1.0
    return out


def entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(max(0.0, -np.sum(p * np.log(p))))


def segment_slices():
    out, start = {}, 0
    for name, w in LAYOUT:
        out[name] = slice(start, start + w)
        start += w
    return out


def labels() -> list:
    names = []
    for name, w in LAYOUT:
        names.extend([name] if w == 1 else [f"{name}[{i}]" for i in range(w)])
    return names


def psi0(b: BeliefState, ont: Ontology) -> np.ndarray:
    out = np.zeros(GENERAL_SIZE)
    out[USER_ACT_TYPES.index(b.last_user_act_type)] = 1.0
    out[7 + SEARCH_METHODS.index(b.search_method)] = 1.0
    out[13 + bisect.bisect_right(REQUESTED_CUTS, len(b.requested_slots))] = 1.0
    out[18] = float(b.offer_happened)
    out[19] = float(b.last_action_inform_none)
    out[20] = 1.0 / len(ont.constraint_slots)
    out[21] = 1.0 / ont.avg_values
    return out


def psi_j(b: BeliefState) -> np.ndarray:
    """Joint-belief summary.  Up to three slots the product is enumerated in
    full; beyond that only the top tuples are kept and the entropy is the
    partial sum over them, a lower bound on the true joint entropy."""
    if len(b.dists) <= EXACT_JOINT_MAX_SLOTS:
        k = int(np.prod([len(d) for d in b.dists]))
    else:
        k = JOINT_TOP_K
    _, probs, _ = joint_top(b.dists, k)
    top = np.zeros(3)
    top[: min(3, probs.size)] = probs[:3]
    n_not_none = sum(int(np.argmax(d)) != 0 for d in b.dists)
    out = np.zeros(JOINT_SIZE)
    out[0:3] = top
    out[3] = float(np.prod([d[0] for d in b.dists]))
    out[4] = entropy(probs)
    out[5 + bisect.bisect_right(DIFF_CUTS, top[0] - top[1])] = 1.0
    out[10 + bisect.bisect_right(NOT_NONE_CUTS, n_not_none)] = 1.0
    return out


def _slot_static(ont: Ontology, db: Database, s: str) -> np.ndarray:
    n = len(ont.slot(s).values)
    return np.concatenate([[1.0 / n], bin_encode(n, LENGTH_CUTS), [db_value_entropy(db, s)]])


def _slot_dynamic(d: np.ndarray, out: np.ndarray) -> None:
    srt = np.sort(d)[::-1]
    out[0:3] = srt[:3]
    out[3] = d[0]
    out[4 + bisect.bisect_right(DIFF_CUTS, srt[0] - srt[1])] = 1.0
    out[9] = entropy(d)
    nonzero = int(np.count_nonzero(d[1:-1] > 0))
    out[10 + bisect.bisect_right(NONZERO_CUTS, nonzero)] = 1.0


def psi_d(b: BeliefState, s: str, ont: Ontology, db: Database) -> np.ndarray:
    out = np.zeros(SLOT_SIZE)
    _slot_dynamic(b.dist(s), out)
    out[15:27] = _slot_static(ont, db, s)
    return out


def dip(b: BeliefState, s: str, ont: Ontology, db: Database) -> np.ndarray:
    return np.concatenate([psi0(b, ont), psi_j(b), psi_d(b, s, ont, db)])


def master_features(b: BeliefState, ont: Ontology) -> np.ndarray:
    return np.concatenate([psi0(b, ont), psi_j(b)])


class DipFeaturizer:
    """Feature extraction for one domain with the database statistics cached."""

    def __init__(self, ont: Ontology, db: Database):
        self.ont = ont
        self.db = db
        self._static = np.stack([_slot_static(ont, db, s) for s in ont.slot_names])

    def master(self, b: BeliefState) -> np.ndarray:
        return master_features(b, self.ont)

    def dip(self, b: BeliefState, s: str) -> np.ndarray:
        return self.all_slots(b)[b.slots.index(s)]

    def null_slot(self, b: BeliefState, master=None) -> np.ndarray:
        """Input for slot-independent actions: the slot segment is all zeros."""
        m = self.master(b) if master is None else master
        return np.concatenate([m, np.zeros(SLOT_SIZE)])

    def all_slots(self, b: BeliefState, master=None) -> np.ndarray:
        """Row ``k`` is ``dip(b, slot_k)`` in ontology slot order."""
        m = self.master(b) if master is None else master
        out = np.zeros((len(b.slots), DIP_SIZE))
        out[:, :MASTER_SIZE] = m
        out[:, MASTER_SIZE + 15:] = self._static
        for k, d in enumerate(b.dists):
            _slot_dynamic(d, out[k, MASTER_SIZE:])
        return out


def format_features(vec: np.ndarray) -> str:
    """Labeled dump, one ``index name value`` line per coordinate."""
    names = labels()
    if len(vec) != len(names):
        raise ValueError(f"expected {len(names)} features, got {len(vec)}")
    return "".join(f"{i}\t{n}\t{float(v)!r}\n" for i, (n, v) in enumerate(zip(names, vec)))
