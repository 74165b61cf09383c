"""Hybrid CI / Metropolis-Hastings consensus information filter.

Each time step every agent predicts its own prior, computes the information
in its local observation and then runs interleaved consensus iterations with
its current neighbours:

* iterative CI on the (possibly correlated) priors,
* Metropolis-Hastings averaging on the (independent) new information,
* flooding of agent IDs to count the connected group size ``n_cg``.

The posterior is ``prior_consensus + n_cg * mean_increment``. Two baselines
share the harness: pure iterative CI on local posteriors, and plain
Metropolis-Hastings averaging, which is only valid for identical priors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .consensus_mhmc import mh_average_round, mh_weights
from .field_model import FieldModel
from .fusion_ci import CIObjective, ici_round
from .gaussian import GaussianInfo, is_psd
from .info_filter import InfoIncrement, ObservationModel, local_increment, predict
from .network import GraphSnapshot, flood_ids

Observation = Optional[tuple[ObservationModel, np.ndarray]]
TraceFn = Callable[[dict], None]


@dataclass(frozen=True)
class ConsensusConfig:
    max_iters: int = 200
    tol: float = 1e-8
    objective: CIObjective = CIObjective.LOG_DET

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        object.__setattr__(self, "objective", CIObjective(self.objective))


@dataclass
class AgentState:
    agent_id: int
    prior: GaussianInfo
    consensus_prior: GaussianInfo
    consensus_inc: InfoIncrement
    ids: frozenset[int] = field(default_factory=frozenset)

    @property
    def n_cg(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class StepResult:
    posteriors: list[GaussianInfo]
    n_cg: list[int]
    iterations: int


def _rel_change(old: np.ndarray, new: np.ndarray) -> float:
    # Frobenius norms via flat dot products; np.linalg.norm is slow on tiny arrays
    o, n = old.ravel(), new.ravel()
    scale = max(o @ o, n @ n)
    if scale == 0.0:
        return 0.0
    d = n - o
    return math.sqrt((d @ d) / scale)


def _round_graph(topology_rounds: Sequence[GraphSnapshot], it: int) -> GraphSnapshot:
    return topology_rounds[min(it, len(topology_rounds) - 1)]


def _increments(observations: Sequence[Observation], dim: int) -> list[InfoIncrement]:
    incs = []
    for obs in observations:
        if obs is None:
            incs.append(InfoIncrement.zero(dim))
        else:
            incs.append(local_increment(*obs))
    return incs


def _check_inputs(priors, observations, topology_rounds, model):
    if len(priors) != len(observations):
        raise ValueError(f"{len(priors)} priors but {len(observations)} observation bundles")
    if not topology_rounds:
        raise ValueError("at least one topology snapshot is required")
    for g in topology_rounds:
        if g.n_agents != len(priors):
            raise ValueError(f"graph has {g.n_agents} agents, expected {len(priors)}")
    for p in priors:
        if p.dim != model.dim:
            raise ValueError(f"prior dimension {p.dim} != model dimension {model.dim}")


def _emit(trace: TraceFn, k, it, graph: GraphSnapshot, agents: Sequence[AgentState]):
    for src, nbrs in enumerate(graph.adjacency()):
        a = agents[src]
        payload = {
            "agent_id": a.agent_id,
            "y": a.consensus_prior.info_vec.tolist(),
            "Y": a.consensus_prior.info_mat.tolist(),
            "di": a.consensus_inc.di.tolist(),
            "dI": a.consensus_inc.dI.tolist(),
            "ids": sorted(a.ids),
        }
        for dst in nbrs:
            trace({"k": k, "iter": it, "src": src, "dst": dst, **payload})


def hybrid_consensus(
    agents: list[AgentState],
    topology_rounds: Sequence[GraphSnapshot],
    cfg: ConsensusConfig,
    trace: TraceFn | None = None,
    step: int | None = None,
    on_iteration: Callable[[list[AgentState]], None] | None = None,
) -> int:
    """Run the interleaved CI / MH consensus loop in place; return iterations used."""
    weight_cache: dict[GraphSnapshot, object] = {}
    it = 0
    while it < cfg.max_iters:
        g = _round_graph(topology_rounds, it)
        if trace is not None:
            _emit(trace, step, it, g, agents)
        hoods = g.neighborhoods()
        fused = ici_round([[agents[j].consensus_prior for j in h] for h in hoods], cfg.objective)
        if g not in weight_cache:
            weight_cache[g] = mh_weights(g)
        W = weight_cache[g]
        new_di = mh_average_round([a.consensus_inc.di for a in agents], W)
        new_dI = mh_average_round([a.consensus_inc.dI for a in agents], W)
        new_ids = flood_ids([a.ids for a in agents], g)

        change = 0.0
        ids_changed = False
        for a, f, di, dI, ids in zip(agents, fused, new_di, new_dI, new_ids):
            change = max(
                change,
                _rel_change(a.consensus_prior.info_mat, f.info_mat),
                _rel_change(a.consensus_prior.info_vec, f.info_vec),
                _rel_change(a.consensus_inc.dI, dI),
                _rel_change(a.consensus_inc.di, di),
            )
            ids_changed |= ids != a.ids
            a.consensus_prior = f
            a.consensus_inc = InfoIncrement(di, 0.5 * (dI + dI.T))
            a.ids = ids
        it += 1
        if on_iteration is not None:
            on_iteration(agents)
        if change < cfg.tol and not ids_changed:
            break
    return it


def hybrid_step(
    priors: Sequence[GaussianInfo],
    model: FieldModel,
    observations: Sequence[Observation],
    topology_rounds: Sequence[GraphSnapshot],
    cfg: ConsensusConfig = ConsensusConfig(),
    trace: TraceFn | None = None,
    step: int | None = None,
    check_psd: bool = False,
) -> StepResult:
    """One filter time step for every agent.

    ``observations[i]`` is ``(ObservationModel, z)`` or ``None`` when agent
    ``i`` has no measurement; ``topology_rounds[l]`` is the graph used at
    consensus iteration ``l`` (the last one is reused once exhausted).
    """
    _check_inputs(priors, observations, topology_rounds, model)
    preds = [predict(p, model) for p in priors]
    incs = _increments(observations, model.dim)
    agents = [
        AgentState(i, preds[i], preds[i], incs[i], frozenset({i}))
        for i in range(len(priors))
    ]

    def _assert_psd(state):
        for a in state:
            assert is_psd(a.consensus_prior.info_mat), f"agent {a.agent_id}: consensus prior lost PSD"
            assert is_psd(a.consensus_inc.dI), f"agent {a.agent_id}: consensus increment lost PSD"

    iters = hybrid_consensus(agents, topology_rounds, cfg, trace, step,
                             _assert_psd if check_psd else None)
    posts = []
    for a in agents:
        n = a.n_cg
        Y = a.consensus_prior.info_mat + n * a.consensus_inc.dI
        y = a.consensus_prior.info_vec + n * a.consensus_inc.di
        posts.append(GaussianInfo(y, 0.5 * (Y + Y.T)))
    return StepResult(posts, [a.n_cg for a in agents], iters)


def pure_ci_step(
    priors: Sequence[GaussianInfo],
    model: FieldModel,
    observations: Sequence[Observation],
    topology_rounds: Sequence[GraphSnapshot],
    cfg: ConsensusConfig = ConsensusConfig(),
) -> StepResult:
    """Baseline: local information update, then iterative CI until agreement."""
    _check_inputs(priors, observations, topology_rounds, model)
    preds = [predict(p, model) for p in priors]
    incs = _increments(observations, model.dim)
    current = list(preds)
    it = 0
    while it < cfg.max_iters:
        g = _round_graph(topology_rounds, it)
        hoods = g.neighborhoods()
        # the local increment enters exactly once, on the first round
        fused = ici_round(
            [[current[j] for j in h] for h in hoods],
            cfg.objective,
            increments=[[incs[j] for j in h] for h in hoods] if it == 0 else None,
        )
        if it == 0:
            current = [GaussianInfo(p.info_vec + d.di, p.info_mat + d.dI) for p, d in zip(current, incs)]
        change = max(
            max(_rel_change(a.info_mat, b.info_mat), _rel_change(a.info_vec, b.info_vec))
            for a, b in zip(current, fused)
        )
        current = fused
        it += 1
        if change < cfg.tol:
            break
    return StepResult(current, [1] * len(current), it)


def mhmc_only_step(
    priors: Sequence[GaussianInfo],
    model: FieldModel,
    observations: Sequence[Observation],
    topology_rounds: Sequence[GraphSnapshot],
    cfg: ConsensusConfig = ConsensusConfig(),
    prior_rtol: float = 1e-6,
) -> StepResult:
    """Baseline: Metropolis-Hastings averaging of increments over a shared prior."""
    _check_inputs(priors, observations, topology_rounds, model)
    ref = priors[0]
    for i, p in enumerate(priors[1:], start=1):
        for a, b in ((ref.info_mat, p.info_mat), (ref.info_vec, p.info_vec)):
            if _rel_change(a, b) > prior_rtol:
                raise ValueError(
                    f"MH-only consensus needs identical priors; agent {i} differs from agent 0"
                )
    preds = [predict(p, model) for p in priors]
    incs = _increments(observations, model.dim)
    di = [d.di for d in incs]
    dI = [d.dI for d in incs]
    ids = [frozenset({i}) for i in range(len(priors))]
    it = 0
    while it < cfg.max_iters:
        g = _round_graph(topology_rounds, it)
        W = mh_weights(g)
        new_di, new_dI = mh_average_round(di, W), mh_average_round(dI, W)
        new_ids = flood_ids(ids, g)
        change = max(
            max(_rel_change(a, b) for a, b in zip(dI, new_dI)),
            max(_rel_change(a, b) for a, b in zip(di, new_di)),
        )
        ids_changed = new_ids != ids
        di, dI, ids = new_di, new_dI, new_ids
        it += 1
        if change < cfg.tol and not ids_changed:
            break
    posts = []
    for p, a, A, s in zip(preds, di, dI, ids):
        Y = p.info_mat + len(s) * A
        posts.append(GaussianInfo(p.info_vec + len(s) * a, 0.5 * (Y + Y.T)))
    return StepResult(posts, [len(s) for s in ids], it)
