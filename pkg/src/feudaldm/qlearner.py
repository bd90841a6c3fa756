"""Small deep Q-learning stack in numpy: MLP, replay, target network, exploration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

CHECKPOINT_VERSION = 1


class LearnerError(RuntimeError):
    pass


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 10_000
    target_sync: int = 500
    epsilon_start: float = 0.3
    epsilon_end: float = 0.0
    epsilon_decay_fraction: float = 0.8
    hidden: tuple = (130, 50)
    optimizer: str = "sgd"
    grad_clip: float = 5.0
    train_steps_per_dialogue: int = 1

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class QNetwork:
    """Two ReLU hidden layers and a linear output head.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
    shape ``(n, input_dim)`` maps to ``X @ W + b``.
    """

    def __init__(self, input_dim: int, hidden1: int, hidden2: int, output_dim: int, seed: int = 0):
        self.sizes = (int(input_dim), int(hidden1), int(hidden2), int(output_dim))
        self.params = []
        for layer, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            rng = np.random.default_rng([seed, layer])
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def input_dim(self):
        return self.sizes[0]

    @property
    def output_dim(self):
        return self.sizes[-1]

    def copy(self) -> "QNetwork":
        other = QNetwork.__new__(QNetwork)
        other.sizes = self.sizes
        other.params = [p.copy() for p in self.params]
        return other

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise LearnerError(f"input has {x.shape[-1]} features, network expects {self.input_dim}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check(x)
        w1, b1, w2, b2, w3, b3 = self.params
        h1 = np.maximum(x @ w1 + b1, 0.0)
        h2 = np.maximum(h1 @ w2 + b2, 0.0)
        return h2 @ w3 + b3

    def gradients(self, x, actions, targets):
        """Mean squared error on the chosen actions and its parameter gradients."""
        x = self._check(np.atleast_2d(x))
        w1, b1, w2, b2, w3, b3 = self.params
        z1 = x @ w1 + b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ w2 + b2
        h2 = np.maximum(z2, 0.0)
        q = h2 @ w3 + b3
        n = x.shape[0]
        rows = np.arange(n)
        err = q[rows, actions] - targets
        loss = float(np.mean(err ** 2))
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * err / n
        gw3 = h2.T @ dq
        gb3 = dq.sum(axis=0)
        dz2 = (dq @ w3.T) * (z2 > 0)
        gw2 = h1.T @ dz2
        gb2 = dz2.sum(axis=0)
        dz1 = (dz2 @ w2.T) * (z1 > 0)
        gw1 = x.T @ dz1
        gb1 = dz1.sum(axis=0)
        return loss, [gw1, gb1, gw2, gb2, gw3, gb3]

    def loss(self, x, actions, targets) -> float:
        q = self.forward(np.atleast_2d(x))
        return float(np.mean((q[np.arange(q.shape[0]), actions] - targets) ** 2))


def forward(net: QNetwork, x) -> np.ndarray:
    return net.forward(x)


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    if net.sizes != target_net.sizes:
        raise LearnerError("network shapes differ")
    target_net.params = [p.copy() for p in net.params]


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: LearnerConfig):
    return Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    next_mask: np.ndarray


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    next_masks: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def of(cls, transitions):
        return cls(
            np.stack([t.state for t in transitions]),
            np.array([t.action for t in transitions], dtype=np.int64),
            np.array([t.reward for t in transitions], dtype=float),
            np.stack([t.next_state for t in transitions]),
            np.array([t.terminal for t in transitions], dtype=bool),
            np.stack([t.next_mask for t in transitions]),
        )


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling.

    ``next_state`` may be a single feature vector or a stack of them (one row
    per candidate input, as for per-slot evaluation); ``next_mask`` then has
    the matching leading shape.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._store = None
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def _allocate(self, t: Transition):
        c = self.capacity
        self._store = {
            "states": np.zeros((c,) + np.shape(t.state)),
            "actions": np.zeros(c, dtype=np.int64),
            "rewards": np.zeros(c),
            "next_states": np.zeros((c,) + np.shape(t.next_state)),
            "terminals": np.zeros(c, dtype=bool),
            "next_masks": np.zeros((c,) + np.shape(t.next_mask), dtype=bool),
        }

    def add(self, t: Transition) -> None:
        if self._store is None:
            self._allocate(t)
        i = self._next
        s = self._store
        s["states"][i] = t.state
        s["actions"][i] = t.action
        s["rewards"][i] = t.reward
        s["next_states"][i] = t.next_state
        s["terminals"][i] = t.terminal
        s["next_masks"][i] = t.next_mask
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size > self.size:
            raise LearnerError(f"cannot sample {batch_size} from {self.size} transitions")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(**{k: v[idx] for k, v in self._store.items()})


def _masked_max(q, mask):
    """Max over unmasked entries of the trailing axes; rows with no legal entry give nan."""
    flat_q = q.reshape(q.shape[0], -1)
    flat_m = mask.reshape(mask.shape[0], -1)
    vals = np.where(flat_m, flat_q, -np.inf).max(axis=1)
    vals[~flat_m.any(axis=1)] = np.nan
    return vals


def td_targets(batch: Batch, target_net: QNetwork, gamma: float) -> np.ndarray:
    """One-step bootstrap ``r + gamma * max_a' Q_target(s', a')`` over legal ``a'``.

    A transition whose next state has every action masked is treated as terminal.
    """
    ns = batch.next_states
    lead = ns.shape[:-1]
    q = target_net.forward(ns.reshape(-1, ns.shape[-1])).reshape(lead + (target_net.output_dim,))
    best = _masked_max(q, batch.next_masks)
    boot = np.where(batch.terminals | np.isnan(best), 0.0, np.nan_to_num(best))
    return batch.rewards + gamma * boot


def td_target(t: Transition, target_net: QNetwork, gamma: float) -> float:
    return float(td_targets(Batch.of([t]), target_net, gamma)[0])


def train_step(net: QNetwork, target_net: QNetwork, batch: Batch, config: LearnerConfig, optimizer=None) -> float:
    """Gradient step on the mean squared TD error; returns the loss before the step."""
    if len(batch) == 0:
        raise LearnerError("empty batch")
    targets = td_targets(batch, target_net, config.gamma)
    if not np.all(np.isfinite(targets)):
        raise LearnerError(f"non-finite loss: TD targets contain {targets[~np.isfinite(targets)][0]}")
    loss, grads = net.gradients(batch.states, batch.actions, targets)
    if not np.isfinite(loss):
        raise LearnerError(f"non-finite loss {loss}; max |target| {np.nanmax(np.abs(targets))}")
    if config.grad_clip:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > config.grad_clip:
            grads = [g * (config.grad_clip / norm) for g in grads]
    (optimizer or SGD(config.lr)).step(net.params, grads)
    return loss


def epsilon_greedy(q, mask, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform over legal actions with probability ``epsilon``, else the legal argmax (lowest index on ties)."""
    mask = np.asarray(mask, dtype=bool)
    legal = np.flatnonzero(mask)
    if legal.size == 0:
        raise LearnerError("every action is masked")
    if epsilon > 0 and rng.random() < epsilon:
        return int(legal[rng.integers(legal.size)])
    return int(np.argmax(np.where(mask, q, -np.inf)))


@dataclass
class EpsilonSchedule:
    start: float
    end: float
    decay_dialogues: float

    def __call__(self, dialogue: int) -> float:
        if self.decay_dialogues <= 0:
            return self.end
        frac = min(1.0, dialogue / self.decay_dialogues)
        return self.start + (self.end - self.start) * frac


class DQNLearner:
    """Online network, target network, replay buffer and optimizer for one Q-function."""

    def __init__(self, input_dim: int, output_dim: int, config: LearnerConfig, seed: int = 0):
        h1, h2 = config.hidden
        self.config = config
        self.net = QNetwork(input_dim, h1, h2, output_dim, seed=seed)
        self.target = self.net.copy()
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.optimizer = make_optimizer(config)
        self.steps = 0

    def q(self, x) -> np.ndarray:
        return self.net.forward(x)

    def add(self, t: Transition) -> None:
        self.buffer.add(t)

    def ready(self) -> bool:
        return len(self.buffer) >= self.config.batch_size

    def train(self, rng: np.random.Generator) -> Optional[float]:
        if not self.ready():
            return None
        batch = self.buffer.sample(self.config.batch_size, rng)
        loss = train_step(self.net, self.target, batch, self.config, self.optimizer)
        self.steps += 1
        if self.steps % self.config.target_sync == 0:
            sync_target(self.net, self.target)
        return loss


def save_networks(path, header: dict, nets: dict) -> None:
    """Write networks to a ``.npz`` file with a JSON header (kind, dimensions, version)."""
    arrays = {}
    layout = {}
    for name, net in nets.items():
        layout[name] = list(net.sizes)
        for i, p in enumerate(net.params):
            arrays[f"{name}/{i}"] = p
    meta = dict(header, version=CHECKPOINT_VERSION, networks=layout)
    arrays["__header__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_networks(path):
    """Inverse of ``save_networks``; anything malformed raises ``LearnerError``."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise LearnerError(f"{path}: not a checkpoint file") from exc
    with data:
        try:
            meta = json.loads(bytes(data["__header__"]).decode())
        except (KeyError, ValueError, UnicodeDecodeError) as exc:
            raise LearnerError(f"{path}: checkpoint header missing or corrupt") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise LearnerError(f"unsupported checkpoint version {meta.get('version')!r}")
        nets = {}
        for name, sizes in meta.get("networks", {}).items():
            net = QNetwork(*sizes)
            try:
                params = [np.array(data[f"{name}/{i}"], dtype=float) for i in range(6)]
            except KeyError as exc:
                raise LearnerError(f"{path}: network {name!r} is incomplete") from exc
            if [p.shape for p in params] != [p.shape for p in net.params]:
                raise LearnerError(f"{path}: network {name!r} parameters do not match sizes {sizes}")
            net.params = params
            nets[name] = net
    return meta, nets
