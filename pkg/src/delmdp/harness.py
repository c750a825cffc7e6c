"""Episode runner, multi-seed experiments and the size sweep.

Runs are deterministic given ``(mdp, agent config, T, seed)``: the seed is
expanded with ``numpy.random.SeedSequence`` into one stream for the
environment (embedding draw of the two-cluster instance) and one for the
trajectory, so two agents sharing a seed face the same MDP and the same
sampler stream.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import yaml

from . import __version__
from .agent import FULL, PHASES, AgentConfig, DelAgent, Phase
from .envs import Sampler, TwoClusterParams, make_two_cluster
from .errors import DelMdpError, PlanningError, ValidationError
from .io import load_mdp
from .mdp import GapTable, Mdp, delta_star, solve_optimal
from .structure import LIPSCHITZ, UNSTRUCTURED, StructureSpec

log = logging.getLogger(__name__)

OUTPUT_ENV = "DELMDP_OUTPUT_DIR"
DEFAULT_OUTPUT = "delmdp-out"
TRACE_COLUMNS = ("t", "cum_reward", "pseudo_regret", "realized_regret", "n_mnt", "n_est", "n_xpt", "n_xpr")
SUMMARY_COLUMNS = ("S", "agent", "T", "seeds", "mean_final_pseudo_regret", "std_final_pseudo_regret")
CURVE_COLUMNS = (
    "t",
    "agent",
    "seeds",
    "mean_pseudo_regret",
    "std_pseudo_regret",
    "mean_realized_regret",
    "std_realized_regret",
)


class EpisodeError(PlanningError):
    """An episode aborted part-way; ``trace`` holds the rows recorded so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class RegretTrace:
    t: np.ndarray
    cum_reward: np.ndarray
    pseudo_regret: np.ndarray
    realized_regret: np.ndarray
    phase_counts: np.ndarray  # (len(t), 4), columns in PHASES order
    counts: np.ndarray  # final N_T(x, a)
    agent: str = ""
    seed: Optional[int] = None

    @property
    def final_pseudo_regret(self) -> float:
        return float(self.pseudo_regret[-1]) if self.t.size else 0.0

    @property
    def final_realized_regret(self) -> float:
        return float(self.realized_regret[-1]) if self.t.size else 0.0

    def rows(self):
        for i in range(self.t.size):
            yield (
                int(self.t[i]),
                float(self.cum_reward[i]),
                float(self.pseudo_regret[i]),
                float(self.realized_regret[i]),
                *(int(v) for v in self.phase_counts[i]),
            )

    def to_csv(self, path) -> None:
        _write_csv(path, TRACE_COLUMNS, self.rows())


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def pseudo_regret(counts, gaps: GapTable) -> float:
    """``sum N(x, a) * delta*(x, a)``."""
    counts = np.asarray(counts, dtype=float)
    if counts.shape != gaps.delta.shape:
        raise ValidationError(f"count table shape {counts.shape} does not match gap table {gaps.delta.shape}")
    return float((counts * gaps.delta).sum())


def seed_streams(seed: int):
    """Independent ``(environment, trajectory)`` seed sequences for one run."""
    env, traj = np.random.SeedSequence(int(seed)).spawn(2)
    return env, traj


def _bind(structure: StructureSpec, mdp: Mdp) -> StructureSpec:
    if structure.is_lipschitz and structure.state_embedding is None:
        return structure.bind(mdp)
    return structure


def run_episode(
    mdp: Mdp,
    structure: Optional[StructureSpec],
    agent_cfg: Union[AgentConfig, Callable],
    T: int,
    seed: int,
    start_state: int = 0,
    record_every: int = 1,
    hooks: Sequence[Callable] = (),
    solution=None,
) -> RegretTrace:
    """Simulate ``T`` steps and record regret every ``record_every`` steps (and at ``T``).

    ``agent_cfg`` is either an :class:`AgentConfig` (a DEL agent is built with
    ``structure``, or the config's own structure when ``structure`` is None)
    or a factory ``f(mdp, start_state) -> agent`` returning any object with
    ``act(x) -> (a, phase)`` and ``update(transition)``. Hooks are called as
    ``hook(t, x, a, phase, r, y)`` after every step.
    """
    if T < 0:
        raise ValidationError("horizon T must be >= 0")
    if record_every < 1:
        raise ValidationError("record_every must be >= 1")
    S, A = mdp.num_states, mdp.num_actions
    if not 0 <= start_state < S:
        raise ValidationError(f"start state {start_state} out of range")
    sol = solve_optimal(mdp) if solution is None else solution
    delta = delta_star(mdp, sol).delta
    g = sol.gain

    if isinstance(agent_cfg, AgentConfig):
        cfg = agent_cfg
        if structure is not None:
            cfg = replace(cfg, structure=structure)
        cfg = replace(cfg, structure=_bind(cfg.structure, mdp))
        agent = DelAgent(cfg, S, A, start_state)
        label = cfg.label
    else:
        agent = agent_cfg(mdp, start_state)
        label = getattr(agent, "label", type(agent).__name__)

    _, traj = seed_streams(seed)
    rng = np.random.default_rng(traj)
    sampler = Sampler(mdp)
    phase_index = {p: i for i, p in enumerate(PHASES)}

    n_rec = T // record_every + (1 if T % record_every else 0)
    ts = np.zeros(n_rec, dtype=np.int64)
    cum_r = np.zeros(n_rec)
    pr = np.zeros(n_rec)
    rr = np.zeros(n_rec)
    ph = np.zeros((n_rec, len(PHASES)), dtype=np.int64)
    counts = np.zeros((S, A), dtype=np.int64)
    phases = np.zeros(len(PHASES), dtype=np.int64)
    total_r = 0.0
    total_pr = 0.0
    k = 0

    def trace(upto):
        return RegretTrace(ts[:upto], cum_r[:upto], pr[:upto], rr[:upto], ph[:upto], counts, label, seed)

    x = start_state
    for t in range(1, T + 1):
        try:
            a, phase = agent.act(x)
        except DelMdpError as exc:
            raise EpisodeError(f"{label} seed {seed}: step {t} failed: {exc}", trace(k)) from exc
        a = int(a)
        tr = sampler.step(x, a, rng)
        agent.update(tr)
        counts[x, a] += 1
        phases[phase_index[Phase(phase)]] += 1
        total_r += tr.r
        total_pr += delta[x, a]
        for hook in hooks:
            hook(t, x, a, phase, tr.r, tr.y)
        x = tr.y
        if t % record_every == 0 or t == T:
            ts[k], cum_r[k], pr[k], rr[k] = t, total_r, total_pr, t * g - total_r
            ph[k] = phases
            k += 1
    return trace(k)


# -- experiments ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    agents: List[AgentConfig]
    T: int
    seeds: List[int]
    env: Optional[TwoClusterParams] = None
    mdp_path: Optional[str] = None
    output_dir: Optional[str] = None
    record_every: int = 1000
    start_state: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError("T must be >= 1")
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if not self.agents:
            raise ValidationError("at least one agent is required")
        if (self.env is None) == (self.mdp_path is None):
            raise ValidationError("exactly one of a two-cluster env or an MDP file must be given")
        if self.record_every < 1 or self.workers < 1:
            raise ValidationError("record_every and workers must be >= 1")
        labels = [a.label for a in self.agents]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"agent labels must be distinct, got {labels}")

    @property
    def num_states(self) -> int:
        if self.env is not None:
            return self.env.num_states
        return load_mdp(self.mdp_path).num_states

    def to_dict(self) -> dict:
        doc = {
            "T": self.T,
            "seeds": list(self.seeds),
            "record_every": self.record_every,
            "start_state": self.start_state,
            "agents": [_agent_to_dict(a) for a in self.agents],
        }
        if self.env is not None:
            doc["env"] = {"type": "two-cluster", **asdict(self.env)}
            doc["env"].pop("seed")
        else:
            doc["env"] = {"type": "file", "path": self.mdp_path}
        return doc


def _agent_to_dict(cfg: AgentConfig) -> dict:
    s = cfg.structure
    doc = {"name": cfg.label, "structure": s.kind, "mode": cfg.mode, "gamma": cfg.gamma}
    if cfg.resolve_every != 1:
        doc["resolve_every"] = cfg.resolve_every
    if s.is_lipschitz:
        consts = dict(L=s.L, Lp=s.L_prime, alpha=s.alpha, alphap=s.alpha_prime)
        doc.update({k: v for k, v in consts.items() if not np.isnan(v)})
    return doc


def _agent_from_dict(doc: dict) -> AgentConfig:
    kind = doc.get("structure", UNSTRUCTURED)
    if kind == UNSTRUCTURED:
        spec = StructureSpec.unstructured()
    elif kind == LIPSCHITZ:
        # constants left out (NaN) are taken from the environment's own spec at run time
        spec = StructureSpec.lipschitz(
            float(doc.get("L", "nan")),
            float(doc.get("Lp", "nan")),
            float(doc.get("alpha", 1.0)),
            float(doc.get("alphap", 1.0)),
        )
    else:
        raise ValidationError(f"agent structure must be '{UNSTRUCTURED}' or '{LIPSCHITZ}', got '{kind}'")
    return AgentConfig(
        structure=spec,
        mode=doc.get("mode", FULL),
        gamma=float(doc.get("gamma", 1.0)),
        resolve_every=int(doc.get("resolve_every", 1)),
        name=str(doc.get("name", "")),
    )


def config_from_dict(doc: dict, base_dir=None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ValidationError("experiment config must be a mapping")
    for key in ("T", "agents", "env"):
        if key not in doc:
            raise ValidationError(f"experiment config: missing field '{key}'")
    try:
        if doc.get("seeds") is not None:
            seeds = [int(s) for s in doc["seeds"]]
        elif doc.get("num_seeds") is not None:
            base = int(doc.get("base_seed", 0))
            seeds = [base + i for i in range(int(doc["num_seeds"]))]
        else:
            raise ValidationError("experiment config: give 'seeds' or 'num_seeds' (with optional 'base_seed')")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"experiment config: bad seed specification: {exc}") from exc
    env_doc = doc["env"]
    env = path = None
    kind = env_doc.get("type", "two-cluster")
    if kind == "two-cluster":
        env = TwoClusterParams(
            num_states=int(env_doc.get("num_states", 4)),
            epsilon=float(env_doc.get("epsilon", 0.1)),
            zeta_embed=float(env_doc.get("zeta_embed", 0.1)),
        )
    elif kind == "file":
        path = Path(env_doc["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        path = str(path)
    else:
        raise ValidationError(f"env type must be 'two-cluster' or 'file', got '{kind}'")
    agents = [_agent_from_dict(a) for a in doc["agents"]]
    return ExperimentConfig(
        agents=agents,
        T=int(doc["T"]),
        seeds=seeds,
        env=env,
        mdp_path=path,
        output_dir=doc.get("output_dir"),
        record_every=int(doc.get("record_every", 1000)),
        start_state=int(doc.get("start_state", 0)),
        workers=int(doc.get("workers", 1)),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: cannot parse ({exc})") from exc
    return config_from_dict(doc, base_dir=path.parent)


def resolve_output_dir(explicit=None, cfg: Optional[ExperimentConfig] = None) -> Path:
    for cand in (explicit, cfg.output_dir if cfg else None, os.environ.get(OUTPUT_ENV)):
        if cand:
            return Path(cand)
    return Path(DEFAULT_OUTPUT)


def build_env(cfg: ExperimentConfig, seed: int):
    """The MDP for one run plus the Lipschitz spec that matches it (None for files without embeddings)."""
    if cfg.env is not None:
        env_ss, _ = seed_streams(seed)
        params = replace(cfg.env, seed=int(env_ss.generate_state(1)[0]))
        return make_two_cluster(params)
    mdp = load_mdp(cfg.mdp_path)
    return mdp, None


def _structure_for(agent: AgentConfig, mdp: Mdp, default_spec) -> StructureSpec:
    s = agent.structure
    if not s.is_lipschitz:
        return s
    if np.isnan(s.L) or np.isnan(s.L_prime):
        if default_spec is None:
            raise ValidationError("Lipschitz agent on an MDP file needs explicit L, Lp, alpha, alphap")
        return default_spec
    return s.bind(mdp)


def _run_task(task):
    cfg, agent, seed = task
    mdp, default_spec = build_env(cfg, seed)
    structure = _structure_for(agent, mdp, default_spec)
    try:
        trace = run_episode(mdp, structure, agent, cfg.T, seed, cfg.start_state, cfg.record_every)
        return trace, None
    except DelMdpError as exc:
        log.warning("run %s seed %d failed: %s", agent.label, seed, exc)
        return getattr(exc, "trace", None), f"{type(exc).__name__}: {exc}"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    traces: dict  # agent label -> list of RegretTrace (successful runs, seed order)
    failures: list = field(default_factory=list)  # (agent, seed, message)
    metadata: dict = field(default_factory=dict)

    def finals(self, agent: str) -> np.ndarray:
        return np.array([tr.final_pseudo_regret for tr in self.traces.get(agent, [])])

    def mean_std(self, agent: str):
        """Mean and population standard deviation of the final pseudo-regret."""
        v = self.finals(agent)
        if v.size == 0:
            return float("nan"), float("nan")
        return float(v.mean()), float(v.std())

    def summary_rows(self):
        S = self.metadata.get("S", "")
        for agent in self.traces:
            m, s = self.mean_std(agent)
            yield (S, agent, self.config.T, len(self.traces[agent]), m, s)

    def curve_rows(self):
        for agent, traces in self.traces.items():
            if not traces:
                continue
            t = traces[0].t
            n = min(tr.t.size for tr in traces)
            pr = np.array([tr.pseudo_regret[:n] for tr in traces])
            rr = np.array([tr.realized_regret[:n] for tr in traces])
            for i in range(n):
                yield (
                    int(t[i]),
                    agent,
                    len(traces),
                    float(pr[:, i].mean()),
                    float(pr[:, i].std()),
                    float(rr[:, i].mean()),
                    float(rr[:, i].std()),
                )


def run_experiment(cfg: ExperimentConfig, output_dir=None, write: bool = True) -> ExperimentResult:
    """Run every (agent, seed) pair and aggregate final pseudo-regret.

    Output files (when ``write``): ``traces/<agent>_seed<seed>.csv``,
    ``summary.csv``, ``curves.csv``, ``metadata.json`` and, if any run
    failed, ``failures.csv``. Failed runs are left out of the aggregates.
    """
    tasks = [(cfg, agent, seed) for agent in cfg.agents for seed in cfg.seeds]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_task, tasks))
    else:
        outcomes = [_run_task(t) for t in tasks]

    traces = {a.label: [] for a in cfg.agents}
    failures = []
    for (_, agent, seed), (trace, err) in zip(tasks, outcomes):
        if err is None:
            traces[agent.label].append(trace)
        else:
            failures.append((agent.label, seed, err))
    meta = {"version": __version__, "S": cfg.num_states, "config": cfg.to_dict(), "failed_runs": len(failures)}
    result = ExperimentResult(cfg, traces, failures, meta)
    if failures:
        log.warning("%d of %d runs failed and are excluded from the summary", len(failures), len(tasks))
    if write:
        write_result(result, resolve_output_dir(output_dir, cfg))
    return result


def write_result(result: ExperimentResult, out: Path) -> None:
    out = Path(out)
    for agent, traces in result.traces.items():
        for tr in traces:
            tr.to_csv(out / "traces" / f"{agent}_seed{tr.seed}.csv")
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, result.summary_rows())
    _write_csv(out / "curves.csv", CURVE_COLUMNS, result.curve_rows())
    if result.failures:
        _write_csv(out / "failures.csv", ("agent", "seed", "error"), result.failures)
    (out / "metadata.json").write_text(json.dumps(result.metadata, indent=1, sort_keys=True) + "\n")


def sweep_sizes(base_cfg: ExperimentConfig, sizes: Sequence[int], output_dir=None, write: bool = True):
    """One experiment per state-space size; returns ``{S: {agent: (mean, std)}}``.

    Writes ``S<size>/`` subdirectories and the figure-data file ``sweep.csv``
    (summary schema, one row per size and agent).
    """
    if base_cfg.env is None:
        raise ValidationError("size sweeps need a two-cluster environment")
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValidationError("no sizes given")
    for s in sizes:
        if s < 2 or s % 2:
            raise ValidationError(f"sweep sizes must be even and >= 2, got {s}")
    out = resolve_output_dir(output_dir, base_cfg)
    table, rows = {}, []
    for s in sizes:
        cfg = replace(base_cfg, env=replace(base_cfg.env, num_states=s))
        res = run_experiment(cfg, out / f"S{s}", write=write)
        table[s] = {a: res.mean_std(a) for a in res.traces}
        rows.extend(res.summary_rows())
    if write:
        _write_csv(out / "sweep.csv", SUMMARY_COLUMNS, rows)
    return table
