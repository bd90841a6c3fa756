"""Command-line workbench: ``feudaldm <verb> [options]``.

Verbs: gen-domain, dump-features, train, eval, benchmark, report.
Exit codes are 0 on success, 1 on a runtime error and 2 on a usage error.
Output files are written below ``--out``.

Experiment configs are YAML mappings.  Recognised keys::

    domain: cr            # preset name or path to a domain JSON document
    domains: [cr, sfr]    # benchmark only; overrides ``domain``
    env: 3                # benchmark environment row 1-6
    envs: [1, 2, 3]       # benchmark only; overrides ``env``
    ser: 0.15             # explicit environment, overriding the row
    masks: true
    user: Standard
    policy: feudal        # feudal | dip | flat | handcrafted
    policies: [feudal]    # benchmark only; overrides ``policy``
    n_train: 2000
    eval_every: 200
    eval_size: 200
    seed: 1               # first seed; ``--seed`` overrides it
    n_seeds: 1
    jobs: 1
    learner: {lr: 0.001, hidden: [130, 50], ...}
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np
import yaml

from .belief_tracker import BeliefError, init_belief, parse_belief
from .dip_features import DipFeaturizer, format_features
from .harness import (
    ENVIRONMENTS, DialogueEnv, PolicySpec, Task, env_config, load_results, report,
    run_episode, run_grid, save_results, write_records,
)
from .ontology import PRESETS, DomainSpec, OntologyError, generate_domain, load_ontology, preset_domain, serialize_domain
from .policies import DEFAULT_HIDDEN, POLICY_KINDS, load_policy, save_policy
from .qlearner import LearnerConfig, LearnerError
from .user_simulator import PROFILES, format_transcript

log = logging.getLogger("feudaldm")

HELP_WIDTH = 88


class UsageError(Exception):
    """Bad command-line usage; reported with exit code 2."""


class ConfigError(Exception):
    """An experiment config that cannot be used; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


@dataclass
class Experiment:
    domains: list = field(default_factory=lambda: ["cr"])
    envs: list = field(default_factory=lambda: [1])
    ser: float = None
    masks: bool = None
    user: str = None
    policies: list = field(default_factory=lambda: ["feudal"])
    n_train: int = 2000
    eval_every: int = 200
    eval_size: int = 200
    seed: int = 1
    n_seeds: int = 1
    jobs: int = 1
    learner: dict = field(default_factory=dict)

    @property
    def seeds(self) -> list:
        return [self.seed + i for i in range(self.n_seeds)]

    def env_configs(self, domain_name: str) -> list:
        out = []
        for n in self.envs:
            cfg = env_config(domain_name, n)
            if self.ser is not None:
                cfg = replace(cfg, ser=self.ser)
            if self.masks is not None:
                cfg = replace(cfg, masks=self.masks)
            if self.user is not None:
                cfg = replace(cfg, user=self.user)
            out.append(cfg)
        return out

    def policy_spec(self, kind: str) -> PolicySpec:
        if kind == "handcrafted":
            return PolicySpec(kind)
        opts = {"hidden": DEFAULT_HIDDEN[kind], **self.learner}
        try:
            return PolicySpec(kind, LearnerConfig(**opts))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"learner: {exc}") from None


_SINGULAR = {"domain": "domains", "env": "envs", "policy": "policies"}
_KNOWN = {f.name for f in fields(Experiment)} | set(_SINGULAR)
_INT_KEYS = ("n_train", "eval_every", "eval_size", "seed", "n_seeds", "jobs")


def _listify(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def parse_experiment(data) -> Experiment:
    """Validate a decoded config mapping; every problem names the offending key."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    unknown = sorted(set(data) - _KNOWN)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")
    kw = {}
    for single, plural in _SINGULAR.items():
        if plural in data:
            kw[plural] = _listify(data[plural])
        elif single in data:
            kw[plural] = _listify(data[single])
    for key in _INT_KEYS:
        if key in data:
            v = data[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{key}: expected an integer, got {v!r}")
            kw[key] = v
    if "ser" in data:
        v = data["ser"]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0 <= v <= 1:
            raise ConfigError(f"ser: expected a number in [0, 1], got {v!r}")
        kw["ser"] = float(v)
    if "masks" in data:
        if not isinstance(data["masks"], bool):
            raise ConfigError(f"masks: expected true or false, got {data['masks']!r}")
        kw["masks"] = data["masks"]
    if "user" in data:
        if data["user"] not in PROFILES:
            raise ConfigError(f"user: expected one of {sorted(PROFILES)}, got {data['user']!r}")
        kw["user"] = data["user"]
    if "learner" in data:
        if not isinstance(data["learner"], dict):
            raise ConfigError("learner: expected a mapping")
        kw["learner"] = dict(data["learner"])
    exp = Experiment(**kw)
    for n in exp.envs:
        if n not in ENVIRONMENTS:
            raise ConfigError(f"env: expected a row in 1-{len(ENVIRONMENTS)}, got {n!r}")
    for k in exp.policies:
        if k not in POLICY_KINDS:
            raise ConfigError(f"policy: expected one of {sorted(POLICY_KINDS)}, got {k!r}")
    for d in exp.domains:
        if not isinstance(d, str):
            raise ConfigError(f"domain: expected a preset name or path, got {d!r}")
    if exp.n_train < 0 or exp.eval_every < 1 or exp.eval_size < 1 or exp.n_seeds < 1 or exp.jobs < 1:
        raise ConfigError("n_train must be >= 0; eval_every, eval_size, n_seeds and jobs must be >= 1")
    if "learner" in data:
        for k in exp.policies:
            if k != "handcrafted":
                exp.policy_spec(k)
    return exp


def _read_text(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"file not found: {path}") from None


def load_experiment(path) -> Experiment:
    if path is None:
        return Experiment()
    try:
        data = yaml.safe_load(_read_text(path))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc.__class__.__name__})") from None
    try:
        return parse_experiment(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_domain(ref: str):
    """A preset name or a path to a domain JSON document."""
    if ref in PRESETS:
        return preset_domain(ref)
    if not os.path.exists(ref):
        raise FileNotFoundError(f"file not found: {ref} (and not a preset: {', '.join(sorted(PRESETS))})")
    return load_ontology(_read_text(ref))


def _out_path(out, name):
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _emit(text: str, out, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        path = _out_path(out, name)
        with open(path, "w") as fh:
            fh.write(text)
        print(path)


def cmd_gen_domain(args) -> int:
    if args.preset is not None:
        if args.preset not in PRESETS:
            raise UsageError(f"gen-domain: unknown preset {args.preset!r}; choose from {', '.join(sorted(PRESETS))}")
        spec = PRESETS[args.preset]
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        opts = {}
        if args.config is not None:
            data = yaml.safe_load(_read_text(args.config)) or {}
            if not isinstance(data, dict):
                raise ConfigError(f"{args.config}: top level must be a mapping")
            opts.update(data)
        for key in ("slots", "values", "requestable", "entities", "name"):
            if getattr(args, key) is not None:
                opts[key] = getattr(args, key)
        if "slots" not in opts or "values" not in opts:
            raise UsageError("gen-domain: give --preset, or --slots and --values")
        try:
            values = opts["values"]
            if isinstance(values, str):
                values = [int(v) for v in values.split(",")]
            values = tuple(int(v) for v in _listify(values))
            if len(values) == 1:
                values = values * int(opts["slots"])
            spec = DomainSpec(int(opts["slots"]), values, int(opts.get("requestable", 3)),
                              int(opts.get("entities", 50)), 0 if args.seed is None else args.seed,
                              str(opts.get("name", "generated")))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid domain options: {exc}") from None
    ont, db = generate_domain(spec)
    _emit(serialize_domain(ont, db), args.out, f"{ont.name}.json")
    return 0


def cmd_dump_features(args) -> int:
    initial = args.belief == "initial"
    text = "" if initial else _read_text(args.belief)
    ref = args.domain
    if ref is None and args.config is not None:
        ref = load_experiment(args.config).domains[0]
    if ref is None:
        for line in text.splitlines():
            if line.startswith("domain "):
                ref = line.split(None, 1)[1].strip()
                break
    if ref is None:
        raise UsageError("dump-features: the belief names no domain; pass --domain")
    ont, db = resolve_domain(ref)
    b = init_belief(ont) if initial else parse_belief(text, ont)
    if args.slot not in ont.slot_names:
        raise BeliefError(f"unknown slot {args.slot!r}; domain {ont.name!r} has {', '.join(ont.slot_names)}")
    vec = DipFeaturizer(ont, db).dip(b, args.slot)
    _emit(format_features(vec), args.out, f"features_{args.slot}.txt")
    return 0


def _seeded(exp: Experiment, seed) -> Experiment:
    return exp if seed is None else replace(exp, seed=seed)


def _tasks(exp: Experiment, single: bool) -> list:
    tasks = []
    domains = exp.domains[:1] if single else exp.domains
    for ref in domains:
        dom = resolve_domain(ref)
        custom = None if ref in PRESETS else dom
        for cfg in exp.env_configs(dom[0].name)[: 1 if single else None]:
            for kind in exp.policies[: 1 if single else None]:
                tasks.append(Task(exp.policy_spec(kind), cfg, custom))
    return tasks


def _summary_line(r) -> str:
    return (f"{r.env.label} {r.policy}: success {r.success_mean:.3f} +- {r.success_std:.3f}, "
            f"reward {r.reward_mean:.2f} +- {r.reward_std:.2f} over {len(r.seeds)} seed(s)")


def _save_outputs(results, out) -> None:
    save_results(results, _out_path(out, "results.json"))
    os.makedirs(os.path.join(out, "records"), exist_ok=True)
    for r in results:
        write_records(r.records, os.path.join(out, "records", f"{r.env.label}_{r.policy}.csv"))
    report(results, out)


def cmd_train(args) -> int:
    exp = _seeded(load_experiment(args.config), args.seed)
    jobs = args.jobs or exp.jobs
    task = _tasks(exp, single=True)[0]
    (result,) = run_grid([task], exp.n_train, exp.eval_every, exp.eval_size, exp.seeds, jobs, keep_policies=True)
    _save_outputs([result], args.out)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    for seed, policy in sorted(result.policies.items()):
        if policy.trainable:
            path = os.path.join(ckpt_dir, f"{result.env.label}_{result.policy}_seed{seed}.npz")
            save_policy(policy, path)
            print(path)
    print(_summary_line(result))
    return 0


def cmd_eval(args) -> int:
    exp = _seeded(load_experiment(args.config), args.seed)
    ref = args.domain or exp.domains[0]
    dom = resolve_domain(ref)
    cfg = exp.env_configs(dom[0].name)[0]
    if args.env is not None:
        cfg = env_config(dom[0].name, args.env)
    env = DialogueEnv.from_config(cfg, dom)
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"file not found: {args.checkpoint}")
    policy = load_policy(args.checkpoint, env.ont, env.db)
    policy.epsilon = 0.0
    n = args.dialogues if args.dialogues is not None else exp.eval_size
    rng = np.random.default_rng([exp.seed, 2, 0])
    episodes = [run_episode(policy, env, "eval", rng, exp.seed, i) for i in range(n)]
    records = [e.record for e in episodes]
    success = float(np.mean([r.success for r in records]))
    reward = float(np.mean([r.reward for r in records]))
    turns = float(np.mean([r.turns for r in records]))
    if args.out is not None:
        write_records(records, _out_path(args.out, "eval_records.csv"))
        with open(_out_path(args.out, "eval.json"), "w") as fh:
            json.dump({"env": cfg.label, "policy": policy.kind, "checkpoint": args.checkpoint, "seed": exp.seed,
                       "dialogues": n, "success": success, "reward": reward, "turns": turns}, fh, indent=1)
        if args.transcripts:
            with open(_out_path(args.out, "transcripts.txt"), "w") as fh:
                for e in episodes[: args.transcripts]:
                    fh.write(f"# dialogue {e.record.dialogue} {e.goal} success={int(e.record.success)}\n")
                    fh.write(format_transcript(e.transcript))
    print(f"{cfg.label} {policy.kind}: success {success:.3f} reward {reward:.2f} turns {turns:.2f} over {n} dialogues")
    return 0


def cmd_benchmark(args) -> int:
    exp = _seeded(load_experiment(args.config), args.seed)
    jobs = args.jobs or exp.jobs
    results = run_grid(_tasks(exp, single=False), exp.n_train, exp.eval_every, exp.eval_size, exp.seeds, jobs)
    _save_outputs(results, args.out)
    for r in results:
        print(_summary_line(r))
    return 0


def cmd_report(args) -> int:
    path = args.results or os.path.join(args.out, "results.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"file not found: {path}")
    try:
        results = load_results(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: not a results file ({exc.__class__.__name__}: {exc})") from None
    for p in report(results, args.out):
        print(p)
    return 0


def _common(p, config_help, out_help, out_required=False):
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    if config_help:
        p.add_argument("--config", metavar="FILE", default=None, help=config_help)
    p.add_argument("--out", metavar="DIR", required=out_required, default=None, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="feudaldm", formatter_class=_formatter,
                     description="Feudal dialogue-management workbench.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)

    p = sub.add_parser("gen-domain", formatter_class=_formatter, help="generate a synthetic domain document",
                       description="Generate a synthetic domain (ontology plus database) as JSON.")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None, help="regenerate a named preset")
    p.add_argument("--slots", type=int, default=None, help="number of constraint slots")
    p.add_argument("--values", default=None, help="values per slot, one number or a comma list")
    p.add_argument("--requestable", type=int, default=None, help="number of requestable slots")
    p.add_argument("--entities", type=int, default=None, help="number of database entities")
    p.add_argument("--name", default=None, help="domain name")
    _common(p, "YAML mapping with slots/values/requestable/entities/name", "write DIR/<name>.json instead of stdout")
    p.set_defaults(func=cmd_gen_domain)

    p = sub.add_parser("dump-features", formatter_class=_formatter, help="print the labeled 64-dim feature vector",
                       description="Print the labeled domain-independent feature vector of one slot.")
    p.add_argument("--belief", metavar="FILE", required=True, help="belief dump file, or 'initial' for the start belief")
    p.add_argument("--slot", required=True, help="constraint slot to featurize")
    p.add_argument("--domain", default=None, help="preset name or domain JSON (default: from the belief)")
    _common(p, "experiment config whose domain is used", "write DIR/features_<slot>.txt instead of stdout")
    p.set_defaults(func=cmd_dump_features)

    p = sub.add_parser("train", formatter_class=_formatter, help="train a policy and save checkpoints",
                       description="Train the first (domain, env, policy) of a config and save checkpoints.")
    _common(p, "experiment config (YAML)", "output directory", out_required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: config or 1)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", formatter_class=_formatter, help="evaluate a saved checkpoint",
                       description="Evaluate a saved checkpoint greedily.")
    p.add_argument("--checkpoint", metavar="FILE", required=True, help="checkpoint written by train")
    p.add_argument("--domain", default=None, help="preset name or domain JSON (default: from the config)")
    p.add_argument("--env", type=int, choices=sorted(ENVIRONMENTS), default=None, help="environment row")
    p.add_argument("--dialogues", type=int, default=None, help="number of dialogues (default: eval_size)")
    p.add_argument("--transcripts", type=int, default=0, help="write the first N transcripts to DIR")
    _common(p, "experiment config (YAML)", "write eval records and summary to DIR")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", formatter_class=_formatter, help="run a (domain x env x policy) grid",
                       description="Run every (domain, env, policy) task of a config over its seeds.")
    _common(p, "grid config (YAML)", "output directory", out_required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: config or 1)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", formatter_class=_formatter, help="write tables and curves from results",
                       description="Write results.csv, results.txt and curve CSVs from saved results.")
    p.add_argument("--results", metavar="FILE", default=None, help="results JSON (default: DIR/results.json)")
    _common(p, None, "output directory", out_required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 2
    if args.verb is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for key in ("jobs", "dialogues"):
        if getattr(args, key, None) is not None and getattr(args, key) < 1:
            print(f"feudaldm {args.verb}: error: --{key} must be >= 1", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 1
    except OntologyError as exc:
        print(f"error: invalid domain: {exc}", file=sys.stderr)
        return 1
    except BeliefError as exc:
        print(f"error: invalid belief: {exc}", file=sys.stderr)
        return 1
    except LearnerError as exc:
        print(f"error: invalid checkpoint: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
