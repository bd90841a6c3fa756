"""Dialogue environment, training/evaluation loops and benchmark reporting."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .acts import SummaryAction, SystemAct
from .belief_tracker import BeliefState, init_belief, slot_labels, track_turn
from .ontology import Database, Ontology, preset_domain, query_indices
from .policies import DEFAULT_HIDDEN, Policy, action_mask, make_policy
from .qlearner import EpsilonSchedule, LearnerConfig
from .user_simulator import (
    PROFILES, AgendaState, ErrorModel, TurnRecord, UserGoal, UserProfile, corrupt_act,
    evaluate_success, sample_goal, user_respond,
)

log = logging.getLogger(__name__)

SUCCESS_REWARD = 20.0
TURN_PENALTY = 1.0


@dataclass(frozen=True)
class EnvConfig:
    domain: str
    ser: float
    masks: bool
    user: str

    @property
    def label(self) -> str:
        return f"{self.domain}-ser{int(round(self.ser * 100))}-{'mask' if self.masks else 'nomask'}-{self.user[:3].lower()}"


# The six benchmark environment rows: (SER, masks, user).
ENVIRONMENTS = {
    1: (0.0, True, "Standard"),
    2: (0.0, False, "Standard"),
    3: (0.15, True, "Standard"),
    4: (0.15, False, "Standard"),
    5: (0.15, True, "Unfriendly"),
    6: (0.30, True, "Standard"),
}


def env_config(domain: str, env: int) -> EnvConfig:
    ser, masks, user = ENVIRONMENTS[env]
    return EnvConfig(domain, ser, masks, user)


@dataclass
class RunRecord:
    seed: int
    dialogue: int
    phase: str
    success: bool
    reward: float
    turns: int


@dataclass
class Episode:
    record: RunRecord
    goal: UserGoal
    transcript: list


class DialogueEnv:
    """One domain plus a user population; ``reset`` starts a dialogue with a fresh goal."""

    def __init__(self, ont: Ontology, db: Database, profile: UserProfile, error_model: ErrorModel,
                 masks: bool = True):
        self.ont = ont
        self.db = db
        self.profile = profile
        self.error_model = error_model
        self.masks = masks

    @classmethod
    def from_config(cls, cfg: EnvConfig, domain=None):
        ont, db = domain or preset_domain(cfg.domain)
        return cls(ont, db, PROFILES[cfg.user], ErrorModel(cfg.ser), cfg.masks)

    def reset(self, rng: np.random.Generator) -> BeliefState:
        self.goal = sample_goal(self.ont, self.db, rng)
        self.agenda = AgendaState()
        self.offered: list = []
        self.current_entity: Optional[int] = None
        self.transcript: list = []
        return init_belief(self.ont)

    def mask(self, b: BeliefState) -> np.ndarray:
        return action_mask(b, self.ont, masks_on=self.masks)

    def _belief_constraints(self, b: BeliefState) -> dict:
        cons = {}
        for s in self.ont.slot_names:
            if b.top_is_none(s):
                continue
            i, _ = b.top_value(s)
            cons[s] = slot_labels(self.ont, s)[i]
        return cons

    def realize(self, a: SummaryAction, b: BeliefState) -> SystemAct:
        """Expand a summary action with belief and database content."""
        if a.slot is not None:
            labels = slot_labels(self.ont, a.slot)
            d = b.dist(a.slot)
            order = np.argsort(-d[1:], kind="stable") + 1
            if a.act == "request" or d[order[0]] <= 0:
                return SystemAct(a, slot=a.slot)
            if a.act == "confirm":
                return SystemAct(a, slot=a.slot, values=(labels[order[0]],))
            return SystemAct(a, slot=a.slot, values=(labels[order[0]], labels[order[1]]))
        answered = tuple(sorted(b.requested_slots))
        if a.act == "inform_byname":
            if self.current_entity is None:
                return SystemAct(a)
            return SystemAct(a, entity=self.current_entity, answered=answered)
        if a.act in ("inform", "inform_alternatives"):
            cons = self._belief_constraints(b)
            hits = query_indices(self.db, cons)
            if a.act == "inform_alternatives":
                hits = [h for h in hits if h not in self.offered]
            if not hits:
                return SystemAct(a, no_venue=True, constraints=cons)
            e = hits[0]
            self.offered.append(e)
            self.current_entity = e
            return SystemAct(a, entity=e, answered=answered, constraints=cons)
        return SystemAct(a)

    def step(self, a: SummaryAction, b: BeliefState, rng: np.random.Generator):
        """Execute one system turn; returns ``(next_belief, reward, terminal, success)``."""
        sys_act = self.realize(a, b)
        user_acts = user_respond(self.agenda, self.goal, self.profile, sys_act, self.db, rng)
        observed = tuple(corrupt_act(u, self.error_model, self.ont, rng) for u in user_acts)
        self.transcript.append(TurnRecord(sys_act, tuple(user_acts), observed))
        nb = track_turn(b, self.ont, observed, sys_act)
        terminal = self.agenda.done or len(self.transcript) >= self.profile.max_turns
        success = terminal and evaluate_success(self.transcript, self.goal, self.db)
        reward = -TURN_PENALTY + (SUCCESS_REWARD if success else 0.0)
        return nb, reward, terminal, success


def run_episode(policy: Policy, env: DialogueEnv, mode: str, rng: np.random.Generator,
                seed: int = 0, dialogue: int = 0) -> Episode:
    """Run one dialogue; in ``train`` mode transitions are recorded and learning runs at the end."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    b = env.reset(rng)
    mask = env.mask(b)
    policy.begin_dialogue()
    total, turns, success = 0.0, 0, False
    while True:
        a = policy.act(b, mask, rng)
        nb, r, terminal, success = env.step(a, b, rng)
        nmask = env.mask(nb)
        if train:
            policy.record(r, nb, nmask, terminal)
        total += r
        turns += 1
        b, mask = nb, nmask
        if terminal:
            break
    if train:
        policy.end_dialogue()
    record = RunRecord(seed, dialogue, mode, bool(success), total, turns)
    return Episode(record, env.goal, env.transcript)


@dataclass
class PolicySpec:
    kind: str
    config: LearnerConfig = None

    def __post_init__(self):
        if self.config is None and self.kind in DEFAULT_HIDDEN:
            self.config = LearnerConfig(hidden=DEFAULT_HIDDEN[self.kind])


@dataclass
class CurvePoint:
    dialogues: int
    success: float
    reward: float


@dataclass
class SeedResult:
    seed: int
    curve: list
    records: list
    policy: Optional[Policy] = field(default=None, repr=False)


@dataclass
class TaskResult:
    env: EnvConfig
    policy: str
    seeds: list
    curves: dict
    success_mean: float
    success_std: float
    reward_mean: float
    reward_std: float
    records: list = field(default_factory=list, repr=False)
    policies: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            "env": asdict(self.env),
            "policy": self.policy,
            "seeds": self.seeds,
            "curves": {str(s): [asdict(p) for p in c] for s, c in self.curves.items()},
            "success_mean": self.success_mean,
            "success_std": self.success_std,
            "reward_mean": self.reward_mean,
            "reward_std": self.reward_std,
        }

    @classmethod
    def from_dict(cls, d):
        curves = {int(s): [CurvePoint(**p) for p in c] for s, c in d["curves"].items()}
        return cls(EnvConfig(**d["env"]), d["policy"], list(d["seeds"]), curves, d["success_mean"],
                   d["success_std"], d["reward_mean"], d["reward_std"])


def checkpoints(n_train: int, eval_every: int) -> list:
    if n_train == 0:
        return [0]
    points = list(range(eval_every, n_train + 1, eval_every))
    if not points or points[-1] != n_train:
        points.append(n_train)
    return points


def evaluate(policy: Policy, env: DialogueEnv, n: int, seed: int, tag: int) -> list:
    rng = np.random.default_rng([seed, 2, tag])
    saved = policy.epsilon
    policy.epsilon = 0.0
    try:
        return [run_episode(policy, env, "eval", rng, seed, i).record for i in range(n)]
    finally:
        policy.epsilon = saved


def run_seed(spec: PolicySpec, cfg: EnvConfig, n_train: int, eval_every: int, eval_size: int, seed: int,
             domain=None, keep_policy: bool = False) -> SeedResult:
    """Train a fresh policy for one seed, evaluating a frozen snapshot at every checkpoint."""
    env = DialogueEnv.from_config(cfg, domain)
    policy = make_policy(spec.kind, env.ont, env.db, spec.config, seed)
    schedule = None
    if spec.config is not None:
        c = spec.config
        schedule = EpsilonSchedule(c.epsilon_start, c.epsilon_end, c.epsilon_decay_fraction * n_train)
    train_rng = np.random.default_rng([seed, 1])
    curve, records = [], []
    done = 0
    for point in checkpoints(n_train, eval_every):
        while done < point:
            if policy.trainable:
                policy.epsilon = schedule(done)
                records.append(run_episode(policy, env, "train", train_rng, seed, done).record)
            else:
                records.append(run_episode(policy, env, "eval", train_rng, seed, done).record)
            done += 1
        evals = evaluate(policy, env, eval_size, seed, point)
        records.extend(evals)
        curve.append(CurvePoint(point, float(np.mean([r.success for r in evals])),
                                float(np.mean([r.reward for r in evals]))))
        log.info("%s %s seed %d @%d: success %.3f reward %.2f", cfg.label, spec.kind, seed, point,
                 curve[-1].success, curve[-1].reward)
    return SeedResult(seed, curve, records, policy if keep_policy else None)


def _sample_std(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def aggregate(cfg: EnvConfig, kind: str, seed_results) -> TaskResult:
    seeds = [r.seed for r in seed_results]
    finals_s = [r.curve[-1].success for r in seed_results]
    finals_r = [r.curve[-1].reward for r in seed_results]
    records = [rec for r in seed_results for rec in r.records]
    policies = {r.seed: r.policy for r in seed_results if r.policy is not None}
    return TaskResult(cfg, kind, seeds, {r.seed: r.curve for r in seed_results},
                      float(np.mean(finals_s)), _sample_std(finals_s),
                      float(np.mean(finals_r)), _sample_std(finals_r), records, policies)


def _run_seed_job(args):
    return run_seed(*args)


@dataclass
class Task:
    spec: PolicySpec
    env: EnvConfig
    domain: Optional[tuple] = None


def run_grid(tasks, n_train: int, eval_every: int, eval_size: int, seeds, jobs: int = 1,
             keep_policies: bool = False) -> list:
    """Run every (task, seed) pair, fanned out over ``jobs`` worker processes.

    Each pair carries its own seed-derived generators, so results do not
    depend on ``jobs`` or on scheduling order.
    """
    if eval_every < 1 or eval_size < 1 or n_train < 0 or not seeds:
        raise ValueError("n_train >= 0, eval_every >= 1, eval_size >= 1 and a nonempty seed list are required")
    seeds = list(seeds)
    args = [(t.spec, t.env, n_train, eval_every, eval_size, s, t.domain, keep_policies)
            for t in tasks for s in seeds]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            flat = list(pool.map(_run_seed_job, args))
    else:
        flat = [_run_seed_job(a) for a in args]
    n = len(seeds)
    return [aggregate(t.env, t.spec.kind, flat[i * n:(i + 1) * n]) for i, t in enumerate(tasks)]


def run_task(spec: PolicySpec, cfg: EnvConfig, n_train: int, eval_every: int, eval_size: int, seeds,
             domain=None, jobs: int = 1, keep_policies: bool = False) -> TaskResult:
    return run_grid([Task(spec, cfg, domain)], n_train, eval_every, eval_size, seeds, jobs, keep_policies)[0]


TABLE_COLUMNS = ("domain", "ser", "masks", "user", "policy", "n_seeds",
                 "success_mean", "success_std", "reward_mean", "reward_std")


def _table_row(r: TaskResult):
    return [r.env.domain, r.env.ser, int(r.env.masks), r.env.user, r.policy, len(r.seeds),
            round(r.success_mean, 6), round(r.success_std, 6), round(r.reward_mean, 6), round(r.reward_std, 6)]


def curve_series(r: TaskResult):
    """Per checkpoint: dialogues, mean and sample std across seeds of success and reward."""
    seeds = sorted(r.curves)
    points = [p.dialogues for p in r.curves[seeds[0]]]
    rows = []
    for i, n in enumerate(points):
        suc = [r.curves[s][i].success for s in seeds]
        rew = [r.curves[s][i].reward for s in seeds]
        rows.append((n, float(np.mean(suc)), _sample_std(suc), float(np.mean(rew)), _sample_std(rew)))
    return rows


def report(results, out_dir) -> list:
    """Write ``results.csv``, ``results.txt`` and one curve CSV per (task, policy)."""
    if not results:
        raise ValueError("no results to report")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, "results.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for r in results:
            w.writerow(_table_row(r))
    written.append(path)

    path = os.path.join(out_dir, "results.txt")
    with open(path, "w") as fh:
        fh.write(f"{'task':<28} {'policy':<12} {'Suc.':>8} {'Rew.':>7} {'+-Suc':>7} {'+-Rew':>7}\n")
        for r in results:
            fh.write(f"{r.env.label:<28} {r.policy:<12} {100 * r.success_mean:7.1f}% {r.reward_mean:7.2f} "
                     f"{100 * r.success_std:6.1f}% {r.reward_std:7.2f}\n")
    written.append(path)

    curve_dir = os.path.join(out_dir, "curves")
    os.makedirs(curve_dir, exist_ok=True)
    for r in results:
        path = os.path.join(curve_dir, f"{r.env.label}_{r.policy}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("dialogues", "success_mean", "success_std", "reward_mean", "reward_std"))
            for row in curve_series(r):
                w.writerow(row)
        written.append(path)
    return written


def save_results(results, path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in results], fh, indent=1)


def load_results(path) -> list:
    with open(path) as fh:
        return [TaskResult.from_dict(d) for d in json.load(fh)]


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("seed", "dialogue", "phase", "success", "reward", "turns"))
        for r in records:
            w.writerow((r.seed, r.dialogue, r.phase, int(r.success), r.reward, r.turns))


