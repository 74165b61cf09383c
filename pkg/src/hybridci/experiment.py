"""Scenario configuration, simulation runs and link-failure sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .field_model import DispersionParams, FieldModel, FieldState, GridSpec, build_model, step_truth
from .gaussian import GaussianInfo, logdet_spd, to_moments
from .hybrid_filter import ConsensusConfig, StepResult, hybrid_step, mhmc_only_step, pure_ci_step
from .info_filter import ObservationModel, centralized_update, local_increment, predict
from .metrics import step_metrics
from .network import GraphSnapshot, TopologyMode, TopologySchedule, snapshot_at

ESTIMATORS = ("centralized", "hybrid", "pure_ci", "mhmc_only")
CSV_HEADER = ("step", "agent", "estimator", "affinity", "det_ratio", "rmse", "n_cg", "iters", "logdet_cov")
SWEEP_HEADER = ("p", "estimator", "mean_affinity", "mean_det_ratio", "mean_rmse")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridSpec
    dispersion: DispersionParams
    receptor_cells: tuple[tuple[int, int, int], ...]
    receptor_noise_std: tuple[float, ...]
    topology: TopologySchedule
    horizon: int
    consensus: ConsensusConfig = ConsensusConfig()
    seed: int = 0
    estimators: tuple[str, ...] = ("centralized", "hybrid", "pure_ci")
    prior_info: float = 1e-4
    name: str = "scenario"
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_agents(self) -> int:
        return len(self.receptor_cells)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        topo = self.topology
        topo = TopologySchedule(topo.n_agents, topo.mode, topo.scripted, topo.degree, topo.p_fail, seed)
        return _replace(self, seed=seed, topology=topo)

    def with_p(self, p_fail: float) -> "ScenarioConfig":
        return _replace(self, topology=self.topology.with_p(p_fail))


def _replace(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    return dataclasses.replace(cfg, **kw)


# ---------------------------------------------------------------- parsing

def _get(d: Mapping, key: str, path: str, default=...):
    if key in d:
        return d[key]
    if default is ...:
        raise ConfigError(f"{path}.{key}".lstrip("."), "required field is missing")
    return default


def _cells(raw, path: str, grid: GridSpec) -> tuple[tuple[int, int, int], ...]:
    cells = []
    for i, c in enumerate(raw):
        if not (isinstance(c, (list, tuple)) and len(c) == 3 and all(isinstance(v, int) for v in c)):
            raise ConfigError(f"{path}[{i}]", f"expected [ix, iy, iz] integers, got {c!r}")
        if not all(0 <= v < n for v, n in zip(c, grid.shape)):
            raise ConfigError(f"{path}[{i}]", f"cell {c} outside grid {list(grid.shape)}")
        cells.append(tuple(c))
    return tuple(cells)


def _edges(raw, path: str, n: int) -> frozenset[tuple[int, int]]:
    edges = set()
    for i, e in enumerate(raw):
        if not (isinstance(e, (list, tuple)) and len(e) == 2):
            raise ConfigError(f"{path}[{i}]", f"expected [a, b], got {e!r}")
        a, b = e
        if not (1 <= a <= n and 1 <= b <= n) or a == b:
            raise ConfigError(f"{path}[{i}]", f"edge {e} must join two distinct receptors in 1..{n}")
        edges.add((a - 1, b - 1))
    return frozenset(edges)


def _topology(raw: Mapping, n: int, horizon: int, seed: int) -> TopologySchedule:
    mode = _get(raw, "mode", "topology")
    try:
        mode = TopologyMode(mode)
    except ValueError:
        raise ConfigError("topology.mode", f"unknown mode {mode!r}") from None
    if mode is TopologyMode.REGULAR_WITH_FAILURES:
        degree = _get(raw, "degree", "topology", 4)
        p = float(_get(raw, "p_fail", "topology", 0.0))
        if not 0.0 <= p <= 1.0:
            raise ConfigError("topology.p_fail", f"must lie in [0, 1], got {p}")
        try:
            return TopologySchedule(n, mode, degree=degree, p_fail=p, seed=seed)
        except ValueError as exc:
            raise ConfigError("topology.degree", str(exc)) from None

    graphs = {name: GraphSnapshot(n, _edges(e, f"topology.graphs.{name}", n))
              for name, e in _get(raw, "graphs", "topology").items()}
    scripted: dict[int, GraphSnapshot] = {}
    base = raw.get("base")
    if base is not None:
        if base not in graphs:
            raise ConfigError("topology.base", f"unknown graph {base!r}")
        scripted = {k: graphs[base] for k in range(1, horizon + 1)}
    for i, ph in enumerate(raw.get("phases", [])):
        name = _get(ph, "graph", f"topology.phases[{i}]")
        if name not in graphs:
            raise ConfigError(f"topology.phases[{i}].graph", f"unknown graph {name!r}")
        lo, hi = _get(ph, "steps", f"topology.phases[{i}]")
        if not 1 <= lo <= hi:
            raise ConfigError(f"topology.phases[{i}].steps", f"invalid interval [{lo}, {hi}]")
        for k in range(lo, min(hi, horizon) + 1):
            scripted[k] = graphs[name]
    sched = TopologySchedule(n, mode, scripted, seed=seed)
    try:
        sched.check_covers(range(1, horizon + 1))
    except ValueError as exc:
        raise ConfigError("topology", str(exc)) from None
    return sched


def parse_config(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Validate a config mapping (as loaded from TOML) into a ScenarioConfig."""
    g = _get(raw, "grid", "")
    shape = _get(g, "shape", "grid")
    spacing = _get(g, "spacing", "grid")
    if len(shape) != 3 or len(spacing) != 3:
        raise ConfigError("grid", "shape and spacing need three entries (x, y, z)")
    try:
        grid = GridSpec(*shape, *map(float, spacing), float(_get(g, "dt", "grid")))
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None

    src = _get(raw, "sources", "")
    source_cells = _cells(_get(src, "cells", "sources"), "sources.cells", grid)
    if "emission_cov" in src:
        emission = np.asarray(src["emission_cov"], dtype=float)
    else:
        var = float(_get(src, "emission_var", "sources"))
        emission = var * np.eye(len(source_cells))

    d = _get(raw, "dispersion", "")
    try:
        disp = DispersionParams(
            wind_speed=float(_get(d, "wind_speed", "dispersion")),
            wind_angle=float(d.get("wind_angle", 0.0)),
            eddy_y=d.get("eddy_y", 0.0),
            eddy_z=d.get("eddy_z", 0.0),
            source_cells=source_cells,
            emission_cov=emission,
            process_var=float(d.get("process_var", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError("dispersion", str(exc)) from None

    rec = _get(raw, "receptors", "")
    cells = _cells(_get(rec, "cells", "receptors"), "receptors.cells", grid)
    if not cells:
        raise ConfigError("receptors.cells", "at least one receptor is required")
    std = _get(rec, "noise_std", "receptors")
    stds = tuple(float(s) for s in std) if isinstance(std, list) else (float(std),) * len(cells)
    if len(stds) != len(cells) or any(s <= 0 for s in stds):
        raise ConfigError("receptors.noise_std", "need one positive std per receptor (or a scalar)")

    horizon = _get(raw, "horizon", "")
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("horizon", f"must be an integer >= 1, got {horizon!r}")
    seed = _get(raw, "seed", "", 0)
    c = raw.get("consensus", {})
    try:
        consensus = ConsensusConfig(int(c.get("max_iters", 200)), float(c.get("tol", 1e-8)),
                                    c.get("objective", "log_det"))
    except ValueError as exc:
        raise ConfigError("consensus", str(exc)) from None
    estimators = tuple(raw.get("estimators", ("centralized", "hybrid", "pure_ci")))
    for e in estimators:
        if e not in ESTIMATORS:
            raise ConfigError("estimators", f"unknown estimator {e!r}; choose from {ESTIMATORS}")
    if "centralized" not in estimators:
        estimators = ("centralized",) + estimators
    prior_info = float(raw.get("prior", {}).get("info_scale", 1e-4))
    if prior_info <= 0:
        raise ConfigError("prior.info_scale", "must be > 0")

    try:
        build_model(grid, disp)
    except ValueError as exc:
        raise ConfigError("dispersion", str(exc)) from None

    return ScenarioConfig(
        grid=grid,
        dispersion=disp,
        receptor_cells=cells,
        receptor_noise_std=stds,
        topology=_topology(_get(raw, "topology", ""), len(cells), horizon, seed),
        horizon=horizon,
        consensus=consensus,
        seed=seed,
        estimators=estimators,
        prior_info=prior_info,
        name=str(raw.get("name", "scenario")),
        raw=raw,
    )


def bundled_configs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("hybridci.configs").iterdir()
                  if p.name.endswith(".toml"))


def load_config(path: str | Path) -> ScenarioConfig:
    """Load a TOML scenario file; a bare bundled name such as ``experiment1`` also works."""
    p = Path(path)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
    elif str(path) in bundled_configs():
        text = resources.files("hybridci.configs").joinpath(f"{path}.toml").read_text(encoding="utf-8")
    else:
        raise FileNotFoundError(f"no config file or bundled scenario named {path!r}")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", str(exc)) from None
    return parse_config(raw)


# ---------------------------------------------------------------- running

@dataclass(frozen=True)
class Record:
    step: int
    agent: int
    estimator: str
    affinity: float
    det_ratio: float
    rmse: float
    n_cg: int
    iters: int
    logdet_cov: float
    mean: np.ndarray | None = field(default=None, compare=False, repr=False)

    def row(self) -> tuple:
        return (self.step, self.agent, self.estimator, self.affinity, self.det_ratio,
                self.rmse, self.n_cg, self.iters, self.logdet_cov)


@dataclass
class Scenario:
    """Everything derived from a config that a run needs."""

    cfg: ScenarioConfig
    model: FieldModel
    sensors: list[ObservationModel]

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "Scenario":
        model = build_model(cfg.grid, cfg.dispersion)
        sensors = [ObservationModel.point_sensor(model.dim, cfg.grid.index(*c), s)
                   for c, s in zip(cfg.receptor_cells, cfg.receptor_noise_std)]
        return cls(cfg, model, sensors)


def _streams(seed: int):
    truth, meas = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(truth), np.random.default_rng(meas)


def run_scenario(cfg: ScenarioConfig, trace=None, keep_means: bool = False) -> Iterator[Record]:
    """Simulate the plant and run every requested estimator on the same data.

    Yields one :class:`Record` per (step, agent, estimator). The centralized
    filter sees every observation regardless of topology and is the
    reference for affinity and determinant ratio.
    """
    sc = Scenario.from_config(cfg)
    model, n = sc.model, cfg.n_agents
    truth_rng, meas_rng = _streams(cfg.seed)
    state = FieldState(np.zeros(model.dim), 0)
    prior = GaussianInfo.weak_prior(model.dim, cfg.prior_info)
    beliefs: dict[str, list[GaussianInfo]] = {e: [prior] * n for e in cfg.estimators if e != "centralized"}
    central = prior
    steppers = {"hybrid": hybrid_step, "pure_ci": pure_ci_step, "mhmc_only": mhmc_only_step}

    for k in range(1, cfg.horizon + 1):
        state = step_truth(model, state, truth_rng)
        obs = [(s, s.sample(state.x, meas_rng)) for s in sc.sensors]
        graph = snapshot_at(cfg.topology, k)

        central = centralized_update(predict(central, model), [local_increment(*o) for o in obs])
        cen = to_moments(central)
        cen_logdet = logdet_spd(cen.cov)
        for i in range(n):
            yield Record(k, i + 1, "centralized", 1.0, 1.0, _rmse(cen.mean, state.x), n, 0, cen_logdet,
                         cen.mean if keep_means else None)

        for est in cfg.estimators:
            if est == "centralized":
                continue
            kw = {"trace": trace, "step": k} if est == "hybrid" and trace is not None else {}
            res: StepResult = steppers[est](beliefs[est], model, obs, [graph], cfg.consensus, **kw)
            beliefs[est] = res.posteriors
            for i, post in enumerate(res.posteriors):
                mom = to_moments(post)
                m = step_metrics(mom, cen, state.x)
                yield Record(k, i + 1, est, m.bhattacharyya_affinity, m.det_ratio, m.rmse,
                             res.n_cg[i], res.iterations, m.logdet_cov, mom.mean if keep_means else None)


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: Iterable[Sequence], header: Sequence[str], out) -> None:
    """Write rows with floats in shortest round-trip form."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])


def records_to_csv(records: Iterable[Record]) -> str:
    buf = io.StringIO()
    write_csv((r.row() for r in records), CSV_HEADER, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class SweepRow:
    p: float
    estimator: str
    mean_affinity: float
    mean_det_ratio: float
    mean_rmse: float

    def row(self) -> tuple:
        return (self.p, self.estimator, self.mean_affinity, self.mean_det_ratio, self.mean_rmse)


def run_failure_sweep(cfg: ScenarioConfig, p_values: Sequence[float]) -> list[SweepRow]:
    """Average affinity, determinant ratio and RMSE over all steps and receptors, per p."""
    if cfg.topology.mode is not TopologyMode.REGULAR_WITH_FAILURES:
        raise ConfigError("topology.mode", "a failure sweep needs mode = 'regular_with_failures'")
    rows = []
    for p in p_values:
        acc: dict[str, list[tuple[float, float, float]]] = {}
        for r in run_scenario(cfg.with_p(float(p))):
            acc.setdefault(r.estimator, []).append((r.affinity, r.det_ratio, r.rmse))
        for est in cfg.estimators:
            a = np.array(acc[est])
            rows.append(SweepRow(float(p), est, *(float(v) for v in a.mean(axis=0))))
    return rows


def parse_p_values(spec: str) -> list[float]:
    """``"0:0.9:0.1"`` (inclusive) or a comma list like ``"0,0.2,0.5"``."""
    if ":" in spec:
        parts = [float(s) for s in spec.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"expected start:stop:step with step > 0, got {spec!r}")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        vals = [round(start + i * step, 12) for i in range(n)]
    else:
        vals = [float(s) for s in spec.split(",") if s.strip()]
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"link failure probability {v} outside [0, 1]")
    return vals
