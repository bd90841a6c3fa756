"""Acting agents over summary actions: feudal DQN, DIP-DQN, flat DQN and a rule policy.

Summary actions are ordered as the five global acts followed by
``request/confirm/select`` for each constraint slot in ontology order, giving
``5 + 3 |S|`` actions.  The feudal policy splits them into a slot-independent
head (5 globals + pass) and one shared slot head (3 functions + pass) that is
evaluated on every slot's features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .acts import GLOBAL_ACTS, PASS, SLOT_ACTS, USER_ACT_TYPES, SummaryAction
from .belief_tracker import SEARCH_METHODS, BeliefState
from .dip_features import DIP_SIZE, MASTER_SIZE, DipFeaturizer
from .ontology import Database, Ontology
from .qlearner import DQNLearner, LearnerConfig, LearnerError, Transition, epsilon_greedy, load_networks, save_networks

N_GLOBAL = len(GLOBAL_ACTS)
N_SLOT = len(SLOT_ACTS)
MASTER_ACTIONS = ("slot_independent", "slot_dependent")
INDEP, DEP = 0, 1

REQUEST_BELOW = 0.5
CONFIRM_UP_TO = 0.8

FEUDAL_HIDDEN = (130, 50)
BASELINE_HIDDEN = (300, 100)


def enumerate_actions(ont: Ontology) -> list:
    acts = [SummaryAction(g) for g in GLOBAL_ACTS]
    for s in ont.slot_names:
        acts.extend(SummaryAction(f, s) for f in SLOT_ACTS)
    return acts


def action_index(ont: Ontology, action: SummaryAction) -> int:
    if action.is_global:
        return GLOBAL_ACTS.index(action.act)
    return N_GLOBAL + N_SLOT * ont.slot_names.index(action.slot) + SLOT_ACTS.index(action.act)


def action_mask(b: BeliefState, ont: Ontology, actions=None, masks_on: bool = True) -> np.ndarray:
    """Legal-action filter aligned with ``enumerate_actions(ont)``.

    With masks on: hello only on the first turn; inform_byname and
    inform_alternatives only after an offer; confirm/select on a slot only
    once its most probable hypothesis is not *NONE*.
    """
    n = N_GLOBAL + N_SLOT * len(ont.slot_names)
    mask = np.ones(n, dtype=bool)
    if not masks_on:
        return mask
    if b.turn_index > 0:
        mask[GLOBAL_ACTS.index("hello")] = False
    if not b.offer_happened:
        mask[GLOBAL_ACTS.index("inform_byname")] = False
        mask[GLOBAL_ACTS.index("inform_alternatives")] = False
    for k, s in enumerate(ont.slot_names):
        if b.top_is_none(s):
            base = N_GLOBAL + N_SLOT * k
            mask[base + SLOT_ACTS.index("confirm")] = False
            mask[base + SLOT_ACTS.index("select")] = False
    return mask


def handcrafted_act(b: BeliefState, ont: Ontology, db: Database = None, mask=None) -> SummaryAction:
    """Rule cascade: request unknown slots, confirm doubtful ones, then offer and answer."""
    if b.last_user_act_type == "bye":
        return SummaryAction("bye")
    tops = [(b.top_value(s)[1], k, s) for k, s in enumerate(ont.slot_names)]
    unresolved = [t for t in tops if t[0] < REQUEST_BELOW]
    if unresolved:
        return SummaryAction("request", min(unresolved)[2])
    doubtful = [t for t in tops if t[0] <= CONFIRM_UP_TO]
    for _, k, s in sorted(doubtful):
        if mask is None or mask[N_GLOBAL + N_SLOT * k + SLOT_ACTS.index("confirm")]:
            return SummaryAction("confirm", s)
    if doubtful:
        return SummaryAction("request", min(doubtful)[2])
    if b.offer_happened and b.requested_slots:
        return SummaryAction("inform_byname")
    return SummaryAction("inform")


class Policy:
    """Common interface used by the harness.

    ``act`` picks an action; in training the harness then calls ``record``
    with the turn outcome, and ``end_dialogue`` once the dialogue is over.
    """

    kind = "base"
    trainable = False

    def __init__(self, ont: Ontology, db: Database):
        self.ont = ont
        self.db = db
        self.actions = enumerate_actions(ont)
        self.epsilon = 0.0

    def begin_dialogue(self) -> None:
        pass

    def act(self, b: BeliefState, mask, rng) -> SummaryAction:
        raise NotImplementedError

    def record(self, reward: float, next_b: BeliefState, next_mask, terminal: bool) -> None:
        pass

    def end_dialogue(self) -> dict:
        return {}


class HandcraftedPolicy(Policy):
    kind = "handcrafted"

    def act(self, b, mask, rng):
        return handcrafted_act(b, self.ont, self.db, mask)


@dataclass
class FeudalDecision:
    master_features: np.ndarray
    slot_features: np.ndarray
    master_action: int
    indep_action: int
    slot_index: int
    slot_action: int
    action: SummaryAction


def _split_mask(mask, n_slots):
    glob = np.asarray(mask[:N_GLOBAL], dtype=bool)
    slot = np.asarray(mask[N_GLOBAL:], dtype=bool).reshape(n_slots, N_SLOT)
    return glob, slot


class FeudalPolicy(Policy):
    """Master policy choosing between a slot-independent head and a shared slot head."""

    kind = "feudal"
    trainable = True

    def __init__(self, ont, db, config: Optional[LearnerConfig] = None, seed: int = 0):
        super().__init__(ont, db)
        self.config = config or LearnerConfig(hidden=FEUDAL_HIDDEN)
        self.features = DipFeaturizer(ont, db)
        self.master = DQNLearner(MASTER_SIZE, len(MASTER_ACTIONS), self.config, seed=seed * 3 + 0)
        self.indep = DQNLearner(MASTER_SIZE, N_GLOBAL + 1, self.config, seed=seed * 3 + 1)
        self.slot = DQNLearner(DIP_SIZE, N_SLOT + 1, self.config, seed=seed * 3 + 2)
        self.rng = np.random.default_rng([seed, 101])
        self._pending: Optional[FeudalDecision] = None

    @property
    def learners(self):
        return {"master": self.master, "indep": self.indep, "slot": self.slot}

    def begin_dialogue(self):
        self._pending = None

    def slot_table(self, slot_features: np.ndarray) -> np.ndarray:
        """Q-values of the shared slot head, one row per slot, pass column dropped."""
        return self.slot.q(slot_features)[:, :N_SLOT]

    def decide(self, b: BeliefState, mask, epsilon: float, rng) -> FeudalDecision:
        glob, slot_mask = _split_mask(mask, len(self.ont.slot_names))
        bm = self.features.master(b)
        xs = self.features.all_slots(b, master=bm)
        table = self.slot_table(xs)
        branch_ok = np.array([glob.any(), slot_mask.any()])
        if not branch_ok.any():
            raise LearnerError("every action is masked")
        m = epsilon_greedy(self.master.q(bm), branch_ok, epsilon, rng)
        greedy_pair = int(np.argmax(np.where(slot_mask, table, -np.inf))) if slot_mask.any() else 0
        if m == INDEP:
            qi = self.indep.q(bm)
            a_i = epsilon_greedy(qi, np.append(glob, False), epsilon, rng)
            s_k = greedy_pair // N_SLOT
            return FeudalDecision(bm, xs, m, a_i, s_k, N_SLOT, SummaryAction(GLOBAL_ACTS[a_i]))
        pair = epsilon_greedy(table.ravel(), slot_mask.ravel(), epsilon, rng)
        s_k, a_d = divmod(pair, N_SLOT)
        action = SummaryAction(SLOT_ACTS[a_d], self.ont.slot_names[s_k])
        return FeudalDecision(bm, xs, m, N_GLOBAL, s_k, a_d, action)

    def act(self, b, mask, rng):
        self._pending = self.decide(b, mask, self.epsilon, rng)
        return self._pending.action

    def record(self, reward, next_b, next_mask, terminal):
        d = self._pending
        if d is None:
            raise RuntimeError("record() without a preceding act()")
        glob, slot_mask = _split_mask(next_mask, len(self.ont.slot_names))
        nbm = self.features.master(next_b)
        nxs = self.features.all_slots(next_b, master=nbm)
        branch_ok = np.array([glob.any(), slot_mask.any()])
        self.master.add(Transition(d.master_features, d.master_action, reward, nbm, terminal, branch_ok))
        self.indep.add(Transition(d.master_features, d.indep_action, reward, nbm, terminal, np.append(glob, True)))
        k = d.slot_index
        self.slot.add(Transition(d.slot_features[k], d.slot_action, reward, nxs[k], terminal,
                                 np.append(slot_mask[k], True)))
        self._pending = None

    def end_dialogue(self):
        losses = {}
        for name, learner in self.learners.items():
            for _ in range(self.config.train_steps_per_dialogue):
                loss = learner.train(self.rng)
                if loss is not None:
                    losses[name] = loss
        return losses

    def networks(self):
        return {name: l.net for name, l in self.learners.items()}


class DipDQNPolicy(Policy):
    """One network scoring every (action, slot) pair on DIP features.

    Row 0 of the evaluation table is the slot-independent input (slot segment
    zeroed) and scores the five global acts; row ``1 + k`` scores the three
    slot functions on slot ``k``.
    """

    kind = "dip"
    trainable = True

    def __init__(self, ont, db, config: Optional[LearnerConfig] = None, seed: int = 0):
        super().__init__(ont, db)
        self.config = config or LearnerConfig(hidden=BASELINE_HIDDEN)
        self.features = DipFeaturizer(ont, db)
        self.learner = DQNLearner(DIP_SIZE, N_GLOBAL + N_SLOT, self.config, seed=seed * 3)
        self.rng = np.random.default_rng([seed, 102])
        self._pending = None

    def inputs(self, b):
        bm = self.features.master(b)
        return np.vstack([self.features.null_slot(b, master=bm), self.features.all_slots(b, master=bm)])

    def table_mask(self, mask):
        n = len(self.ont.slot_names)
        glob, slot_mask = _split_mask(mask, n)
        tm = np.zeros((n + 1, N_GLOBAL + N_SLOT), dtype=bool)
        tm[0, :N_GLOBAL] = glob
        tm[1:, N_GLOBAL:] = slot_mask
        return tm

    def q_table(self, b):
        x = self.inputs(b)
        return x, self.learner.q(x)

    def begin_dialogue(self):
        self._pending = None

    def act(self, b, mask, rng):
        x, q = self.q_table(b)
        tm = self.table_mask(mask)
        flat = epsilon_greedy(q.ravel(), tm.ravel(), self.epsilon, rng)
        row, col = divmod(flat, q.shape[1])
        self._pending = (x[row], col)
        if row == 0:
            return SummaryAction(GLOBAL_ACTS[col])
        return SummaryAction(SLOT_ACTS[col - N_GLOBAL], self.ont.slot_names[row - 1])

    def record(self, reward, next_b, next_mask, terminal):
        x, col = self._pending
        self.learner.add(Transition(x, col, reward, self.inputs(next_b), terminal, self.table_mask(next_mask)))
        self._pending = None

    def end_dialogue(self):
        losses = {}
        for _ in range(self.config.train_steps_per_dialogue):
            loss = self.learner.train(self.rng)
            if loss is not None:
                losses["dip"] = loss
        return losses

    def networks(self):
        return {"dip": self.learner.net}


def flat_belief(b: BeliefState, ont: Ontology) -> np.ndarray:
    """The raw belief as one vector: slot distributions then general features."""
    general = np.zeros(len(USER_ACT_TYPES) + len(SEARCH_METHODS) + len(ont.requestable_slots) + 2)
    general[USER_ACT_TYPES.index(b.last_user_act_type)] = 1.0
    off = len(USER_ACT_TYPES)
    general[off + SEARCH_METHODS.index(b.search_method)] = 1.0
    off += len(SEARCH_METHODS)
    for r in b.requested_slots:
        general[off + ont.requestable_slots.index(r)] = 1.0
    general[-2] = float(b.offer_happened)
    general[-1] = float(b.last_action_inform_none)
    return np.concatenate(list(b.dists) + [general])


def flat_belief_size(ont: Ontology) -> int:
    return sum(len(s.values) + 2 for s in ont.constraint_slots) + len(USER_ACT_TYPES) + len(SEARCH_METHODS) \
        + len(ont.requestable_slots) + 2


class FlatDQNPolicy(Policy):
    kind = "flat"
    trainable = True

    def __init__(self, ont, db, config: Optional[LearnerConfig] = None, seed: int = 0):
        super().__init__(ont, db)
        self.config = config or LearnerConfig(hidden=BASELINE_HIDDEN)
        self.learner = DQNLearner(flat_belief_size(ont), len(self.actions), self.config, seed=seed * 3)
        self.rng = np.random.default_rng([seed, 103])
        self._pending = None

    def begin_dialogue(self):
        self._pending = None

    def act(self, b, mask, rng):
        x = flat_belief(b, self.ont)
        a = epsilon_greedy(self.learner.q(x), mask, self.epsilon, rng)
        self._pending = (x, a)
        return self.actions[a]

    def record(self, reward, next_b, next_mask, terminal):
        x, a = self._pending
        nx = flat_belief(next_b, self.ont)
        self.learner.add(Transition(x, a, reward, nx, terminal, np.asarray(next_mask, dtype=bool)))
        self._pending = None

    def end_dialogue(self):
        losses = {}
        for _ in range(self.config.train_steps_per_dialogue):
            loss = self.learner.train(self.rng)
            if loss is not None:
                losses["flat"] = loss
        return losses

    def networks(self):
        return {"flat": self.learner.net}


POLICY_KINDS = {
    "feudal": FeudalPolicy,
    "dip": DipDQNPolicy,
    "flat": FlatDQNPolicy,
    "handcrafted": HandcraftedPolicy,
}
DEFAULT_HIDDEN = {"feudal": FEUDAL_HIDDEN, "dip": BASELINE_HIDDEN, "flat": BASELINE_HIDDEN}


def make_policy(kind: str, ont: Ontology, db: Database, config: Optional[LearnerConfig] = None, seed: int = 0):
    try:
        cls = POLICY_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown policy kind {kind!r}; choose from {sorted(POLICY_KINDS)}") from None
    if cls is HandcraftedPolicy:
        return cls(ont, db)
    return cls(ont, db, config, seed)


def save_policy(policy: Policy, path) -> None:
    if not policy.trainable:
        raise ValueError(f"{policy.kind} policy has no parameters to save")
    header = {"policy": policy.kind, "domain": policy.ont.name, "config": policy.config.to_dict()}
    save_networks(path, header, policy.networks())


def load_policy(path, ont: Ontology, db: Database) -> Policy:
    meta, nets = load_networks(path)
    kind = meta.get("policy")
    if kind not in POLICY_KINDS or kind == "handcrafted":
        raise LearnerError(f"checkpoint has unknown policy kind {kind!r}")
    cfg = dict(meta["config"])
    policy = make_policy(kind, ont, db, LearnerConfig(**cfg))
    own = policy.networks()
    if set(own) != set(nets):
        raise LearnerError("checkpoint networks do not match the policy kind")
    for name, net in nets.items():
        if own[name].sizes != net.sizes:
            raise LearnerError(f"network {name!r} has shape {net.sizes}, domain needs {own[name].sizes}")
        own[name].params = [p.copy() for p in net.params]
    learners = getattr(policy, "learners", None) or {}
    for name, learner in learners.items():
        learner.target = learner.net.copy()
    if hasattr(policy, "learner"):
        policy.learner.target = policy.learner.net.copy()
    return policy
