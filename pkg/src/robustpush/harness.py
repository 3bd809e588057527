"""Experiment orchestration: configs, seeded trials, campaigns, sweeps.

Seeding scheme (the whole reason this module exists): a trial's inputs are a
pure function of ``(base_seed, trial_index)``. Concretely,
``trial_seed = base_seed + trial_index`` and the independent streams are

* instance stream  ``default_rng([base_seed, 0])``, or
  ``default_rng([trial_seed, 0])`` with per-trial resampling,
* graph stream     ``default_rng([trial_seed, 1])``,
* simulation       ``default_rng([trial_seed, 2])``.

Because none of these depend on algorithm settings, trial k sees identical
graphs, data, and noise across every value of a swept parameter (common
random numbers), and rerunning any configuration reproduces its outputs
byte for byte.
"""

import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import TrimmedConfig, TVConfig, run_trimmed, run_tv
from .graph import DynamicDigraph, count_attack_edges, sample_connected
from .metrics import (
    DetectionStats,
    cost_increase,
    degradation_ratio,
    detection_stats,
    disagreement,
    optimality_gap,
)
from .objective import (
    AttackSpec,
    ObjectiveInstance,
    apply_attack,
    closed_form_solution,
    hessian_min_eigenvalue,
    sample_instance,
)
from .protocol import NumericDegeneracyError, ProtocolConfig, run_trial
from .util import fmt17

__all__ = [
    "ExperimentSpec",
    "GraphSpec",
    "InstanceSpec",
    "SweepSpec",
    "ExperimentConfig",
    "TrialReport",
    "OracleReport",
    "CampaignResult",
    "SweepResult",
    "load_config",
    "config_from_dict",
    "set_config_value",
    "attacked_solution",
    "build_trial_inputs",
    "run_campaign",
    "run_sweep",
    "compare",
    "oracle_check",
]

ALGORITHMS = ("rsgp", "tv", "trimmed")


# ---- configuration ----


@dataclass(frozen=True)
class ExperimentSpec:
    algorithm: str = "rsgp"
    trials: int = 50
    base_seed: int = 0
    sample_stride: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.sample_stride < 0:
            raise ValueError("sample_stride must be >= 0")


@dataclass(frozen=True)
class GraphSpec:
    """Erdos-Renyi communication graph; p defaults to 3 ln(n) / n."""

    n: int = 20
    p: Optional[float] = None
    malicious: tuple = ()

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("graph needs at least 2 nodes")
        object.__setattr__(self, "malicious", tuple(int(i) for i in self.malicious))

    def edge_probability(self) -> float:
        if self.p is not None:
            return float(self.p)
        return min(1.0, 3.0 * math.log(self.n) / self.n)


@dataclass(frozen=True)
class InstanceSpec:
    """Measurement model; x_o None means 'draw it from the instance stream'."""

    d: int = 2
    x_o: Optional[tuple] = None
    h_sigma: float = 1.0
    noise_sigma: float = 1.0
    resample_per_trial: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.x_o is not None:
            x_o = tuple(float(v) for v in self.x_o)
            if len(x_o) != self.d:
                raise ValueError("x_o length must equal d")
            object.__setattr__(self, "x_o", x_o)


@dataclass(frozen=True)
class SweepSpec:
    """Dotted parameter path (e.g. "protocol.beta") and the values to visit."""

    parameter: str = ""
    grid: tuple = ()

    def __post_init__(self):
        if not self.parameter or "." not in self.parameter:
            raise ValueError("sweep parameter must look like 'section.key'")
        if len(self.grid) < 1:
            raise ValueError("sweep grid must not be empty")
        object.__setattr__(self, "grid", tuple(self.grid))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSpec = ExperimentSpec()
    graph: GraphSpec = GraphSpec()
    instance: InstanceSpec = InstanceSpec()
    attack: AttackSpec = AttackSpec()
    protocol: ProtocolConfig = ProtocolConfig()
    tv: TVConfig = TVConfig()
    trimmed: TrimmedConfig = TrimmedConfig()
    sweep: Optional[SweepSpec] = None


_SECTION_TYPES = {
    "experiment": ExperimentSpec,
    "graph": GraphSpec,
    "instance": InstanceSpec,
    "attack": AttackSpec,
    "protocol": ProtocolConfig,
    "tv": TVConfig,
    "trimmed": TrimmedConfig,
    "sweep": SweepSpec,
}

_LIST_FIELDS = {("graph", "malicious"), ("attack", "target"), ("sweep", "grid"), ("instance", "x_o")}


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a config from a parsed TOML document, rejecting unknown keys."""
    sections = {}
    for name, body in doc.items():
        if name not in _SECTION_TYPES:
            raise ValueError(f"unknown config section [{name}]")
        cls = _SECTION_TYPES[name]
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in body.items():
            if key not in known:
                raise ValueError(f"unknown key '{key}' in section [{name}]")
            if (name, key) in _LIST_FIELDS and value is not None:
                value = tuple(value)
            kwargs[key] = value
        sections[name] = cls(**kwargs)
    return ExperimentConfig(**sections)


def load_config(path: str) -> ExperimentConfig:
    """Parse a TOML experiment file."""
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return config_from_dict(doc)


def set_config_value(cfg: ExperimentConfig, path: str, value) -> ExperimentConfig:
    """Return a copy of cfg with one dotted 'section.key' replaced."""
    section, _, key = path.partition(".")
    if section not in _SECTION_TYPES or section == "sweep":
        raise ValueError(f"cannot sweep over '{path}'")
    current = getattr(cfg, section)
    if key not in {f.name for f in dataclasses.fields(current)}:
        raise ValueError(f"unknown key '{key}' in section [{section}]")
    return replace(cfg, **{section: replace(current, **{key: value})})


# ---- per-trial inputs ----


def build_trial_inputs(cfg: ExperimentConfig, trial: int) -> tuple:
    """Deterministic (instance, graph, sim_rng, graph_tries, trial_seed).

    The ground truth is drawn first from the instance stream when not pinned,
    then the measurement rows and noise; graphs failing strong connectivity
    are redrawn from the same stream with the attempt count reported.
    """
    exp, gs, ins = cfg.experiment, cfg.graph, cfg.instance
    trial_seed = exp.base_seed + trial
    inst_key = trial_seed if ins.resample_per_trial else exp.base_seed
    inst_rng = np.random.default_rng([inst_key, 0])
    if ins.x_o is not None:
        x_o = np.asarray(ins.x_o, dtype=float)
    else:
        x_o = inst_rng.standard_normal(ins.d)
    inst = sample_instance(
        gs.n, ins.d, x_o, ins.noise_sigma, inst_rng, h_sigma=ins.h_sigma
    )
    graph_rng = np.random.default_rng([trial_seed, 1])
    graph, tries = sample_connected(
        gs.n, gs.edge_probability(), graph_rng, malicious=gs.malicious
    )
    sim_rng = np.random.default_rng([trial_seed, 2])
    return inst, graph, sim_rng, tries, trial_seed


# ---- reports ----


@dataclass(frozen=True)
class TrialReport:
    """Everything a single trial produced, flattened for tabular output."""

    trial: int
    seed: int
    status: str
    p: float
    epsilon: float
    varrho: float
    gamma: float
    xi: float
    consensus: tuple
    attack_edges_remaining: int
    severed_total: int
    false_severs: int
    regular_isolated: int
    isolation_round: Optional[int]
    graph_tries: int
    runtime_s: float
    error: Optional[str] = None


@dataclass(frozen=True)
class OracleReport:
    """Closed-form quantities for the (trial-0) instance of a campaign.

    ``pull_norm`` is the size of the total malicious gradient at the attacked
    optimum and ``pull_bound`` the curvature-times-displacement lower bound it
    must dominate for the attack to be statistically visible; ``rel_slack``
    is (pull_norm - pull_bound) / pull_bound.
    """

    benchmark: tuple
    x_star_all: tuple
    x_star_regular: Optional[tuple]
    x_attacked: Optional[tuple]
    lambda_min_regular: float
    pull_norm: Optional[float]
    pull_bound: Optional[float]
    rel_slack: Optional[float]


@dataclass
class CampaignResult:
    config: ExperimentConfig
    reports: List[TrialReport]
    finals: np.ndarray
    aggregate: Dict[str, float]
    oracle: OracleReport
    trajectories: dict = field(default_factory=dict)
    sever_logs: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    parameter: str
    values: tuple
    campaigns: List[CampaignResult]


# ---- oracle ----


def attacked_solution(
    inst: ObjectiveInstance, malicious: frozenset, attack: Optional[AttackSpec]
) -> Optional[np.ndarray]:
    """Stationary point of the full network under the attack, if defined.

    Static attacks: least squares over all nodes with the corrupted rows.
    target_pull: solves the linear stationarity condition of the honest
    gradients plus the pulling fields. No attack: None.
    """
    if attack is None or attack.kind == "none" or not malicious:
        return None
    if attack.kind == "target_pull":
        reg = [i for i in range(inst.n) if i not in malicious]
        a = inst.h[reg]
        nm = len(malicious)
        lhs = 2.0 * a.T @ a + attack.gain * nm * np.eye(inst.d)
        rhs = 2.0 * a.T @ inst.s[reg] + attack.gain * nm * np.asarray(attack.target)
        return np.linalg.solve(lhs, rhs)
    attacked = apply_attack(inst, frozenset(malicious), attack)
    return closed_form_solution(attacked, None)


def oracle_check(cfg: ExperimentConfig, trial: int = 0) -> OracleReport:
    """Closed-form benchmark, attack displacement, and the dominance bound.

    Aborts when the regular nodes' average Hessian is not positive definite,
    because then the benchmark itself is ill-posed and no trial result can be
    interpreted. With an active attack the report also certifies that the
    total malicious gradient at the attacked optimum exceeds
    ``lambda_min * ||x_attacked - x_star_regular||`` (up to tiny negative
    slack from floating point), the identifiability margin detection relies
    on.
    """
    inst, graph, _, _, _ = build_trial_inputs(cfg, trial)
    malicious = frozenset(cfg.graph.malicious)
    attack = cfg.attack if cfg.attack.kind != "none" else None
    regular = [i for i in range(inst.n) if i not in malicious]

    lam_min = hessian_min_eigenvalue(inst, regular if malicious else None)
    if lam_min <= 0:
        raise ValueError(
            "average Hessian of the honest nodes is not positive definite; "
            "the benchmark is ill-posed for this instance"
        )

    x_star_all = closed_form_solution(inst, None)
    x_star_regular = closed_form_solution(inst, regular) if malicious else None
    x_att = attacked_solution(inst, malicious, attack)

    pull_norm = pull_bound = rel_slack = None
    if x_att is not None and attack.kind != "target_pull":
        attacked = apply_attack(inst, malicious, attack)
        pull = np.zeros(inst.d)
        for m in sorted(malicious):
            pull += 2.0 * attacked.h[m] * (attacked.h[m] @ x_att - attacked.s[m])
        pull_norm = float(np.linalg.norm(pull))
        pull_bound = float(lam_min * np.linalg.norm(x_att - x_star_regular))
        rel_slack = (
            (pull_norm - pull_bound) / pull_bound if pull_bound > 0 else math.inf
        )

    benchmark = x_star_regular if (malicious and attack is not None) else x_star_all
    return OracleReport(
        benchmark=tuple(benchmark.tolist()),
        x_star_all=tuple(x_star_all.tolist()),
        x_star_regular=None if x_star_regular is None else tuple(x_star_regular.tolist()),
        x_attacked=None if x_att is None else tuple(x_att.tolist()),
        lambda_min_regular=lam_min,
        pull_norm=pull_norm,
        pull_bound=pull_bound,
        rel_slack=rel_slack,
    )


# ---- running trials ----


def _metric_subset(cfg: ExperimentConfig) -> bool:
    """True when metrics restrict to regular nodes (an attack is active)."""
    return bool(cfg.graph.malicious) and cfg.attack.kind != "none"


def _run_one(args: tuple) -> tuple:
    """Worker: run one trial, compute metrics. Pure function of (cfg, trial)."""
    cfg, trial = args
    inst, graph, sim_rng, tries, trial_seed = build_trial_inputs(cfg, trial)
    attack = cfg.attack if cfg.attack.kind != "none" else None
    stride = cfg.experiment.sample_stride
    algo = cfg.experiment.algorithm

    start = time.perf_counter()
    sever_log: list = []
    error = None
    status = "ok"
    try:
        if algo == "rsgp":
            state, samples = run_trial(graph, inst, attack, cfg.protocol, sim_rng, stride)
            finals = state.x
            sever_log = list(state.sever_log)
        elif algo == "tv":
            finals, samples = run_tv(graph, inst, attack, cfg.tv, sim_rng, stride)
        else:
            finals, samples = run_trimmed(graph, inst, attack, cfg.trimmed, sim_rng, stride)
    except NumericDegeneracyError as exc:
        status = "degenerate"
        error = str(exc)
        finals = np.full((graph.n, inst.d), np.nan)
        samples = []
    runtime = time.perf_counter() - start

    restrict = _metric_subset(cfg)
    ids = (
        [i for i in range(graph.n) if i not in graph.malicious]
        if restrict
        else list(range(graph.n))
    )
    benchmark = closed_form_solution(inst, ids if restrict else None)
    stats = detection_stats(graph, sever_log)

    if status == "ok":
        sub = finals[ids]
        eps = optimality_gap(sub, benchmark)
        rho_m = cost_increase(inst, ids, sub, benchmark)
        gam = disagreement(sub)
        try:
            xi = degradation_ratio(sub, inst.x_o, benchmark)
        except ZeroDivisionError:
            xi = float("nan")
        consensus = tuple(sub.mean(axis=0).tolist())
    else:
        eps = rho_m = gam = xi = float("nan")
        consensus = tuple([float("nan")] * inst.d)

    report = TrialReport(
        trial=trial,
        seed=trial_seed,
        status=status,
        p=2.0,
        epsilon=eps,
        varrho=rho_m,
        gamma=gam,
        xi=xi,
        consensus=consensus,
        attack_edges_remaining=stats.attack_edges_remaining,
        severed_total=stats.severed_total,
        false_severs=stats.false_severs,
        regular_isolated=stats.regular_isolated,
        isolation_round=stats.isolation_round,
        graph_tries=tries,
        runtime_s=runtime,
        error=error,
    )
    return trial, report, finals, samples, sever_log


def _aggregate(reports: Sequence[TrialReport]) -> Dict[str, float]:
    """Means and standard errors over the ok trials, plus count summaries."""
    ok = [r for r in reports if r.status == "ok"]
    agg: Dict[str, float] = {
        "trials": float(len(reports)),
        "trials_ok": float(len(ok)),
        "trials_degenerate": float(len(reports) - len(ok)),
    }

    def put(name: str, values: np.ndarray) -> None:
        values = values[~np.isnan(values)]
        if values.size == 0:
            agg[f"{name}_mean"] = float("nan")
            agg[f"{name}_stderr"] = float("nan")
            return
        agg[f"{name}_mean"] = float(values.mean())
        agg[f"{name}_stderr"] = (
            float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
        )

    for name in ("epsilon", "varrho", "gamma", "xi"):
        put(name, np.asarray([getattr(r, name) for r in ok], dtype=float))
    for name in (
        "attack_edges_remaining",
        "severed_total",
        "false_severs",
        "regular_isolated",
    ):
        put(name, np.asarray([float(getattr(r, name)) for r in ok], dtype=float))
    if ok:
        agg["isolated_fraction"] = float(
            np.mean([1.0 if r.attack_edges_remaining == 0 else 0.0 for r in ok])
        )
        iso = [float(r.isolation_round) for r in ok if r.isolation_round is not None]
        agg["isolation_round_mean"] = float(np.mean(iso)) if iso else float("nan")
    else:
        agg["isolated_fraction"] = float("nan")
        agg["isolation_round_mean"] = float("nan")
    return agg


def run_campaign(
    cfg: ExperimentConfig,
    out_dir: Optional[str] = None,
    parallel: int = 1,
) -> CampaignResult:
    """Run all trials of one configuration; optionally write the output files.

    Trials are independent, so ``parallel > 1`` fans them out to a process
    pool; results are reassembled in trial order, making the serial and
    parallel paths produce identical files.
    """
    trials = cfg.experiment.trials
    jobs = [(cfg, k) for k in range(trials)]
    results = {}
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for trial, report, finals, samples, log in pool.map(_run_one, jobs):
                results[trial] = (report, finals, samples, log)
    else:
        for job in jobs:
            trial, report, finals, samples, log = _run_one(job)
            results[trial] = (report, finals, samples, log)

    reports = [results[k][0] for k in range(trials)]
    finals = np.stack([results[k][1] for k in range(trials)])
    trajectories = {k: results[k][2] for k in range(trials) if results[k][2]}
    sever_logs = {k: results[k][3] for k in range(trials) if results[k][3]}
    oracle = oracle_check(cfg)
    result = CampaignResult(
        config=cfg,
        reports=reports,
        finals=finals,
        aggregate=_aggregate(reports),
        oracle=oracle,
        trajectories=trajectories,
        sever_logs=sever_logs,
    )
    target = out_dir or cfg.experiment.output_dir
    if target:
        write_campaign(result, target, cfg.graph.malicious)
    return result


def run_sweep(
    cfg: ExperimentConfig,
    out_dir: Optional[str] = None,
    parallel: int = 1,
) -> SweepResult:
    """Run the configured sweep; trial inputs are shared across values."""
    if cfg.sweep is None:
        raise ValueError("config has no [sweep] section")
    campaigns = []
    for value in cfg.sweep.grid:
        cfg_v = set_config_value(cfg, cfg.sweep.parameter, value)
        cfg_v = replace(cfg_v, sweep=None)
        campaigns.append(run_campaign(cfg_v, out_dir=None, parallel=parallel))
    result = SweepResult(
        parameter=cfg.sweep.parameter, values=cfg.sweep.grid, campaigns=campaigns
    )
    if out_dir or cfg.experiment.output_dir:
        write_sweep(result, out_dir or cfg.experiment.output_dir)
    return result


def compare(
    labeled: Sequence[Tuple[str, ExperimentConfig]],
    parallel: int = 1,
) -> List[dict]:
    """Run several configurations and return one aggregate row per label."""
    rows = []
    for label, cfg in labeled:
        res = run_campaign(cfg, out_dir=None, parallel=parallel)
        row = {"label": label, "algorithm": cfg.experiment.algorithm}
        row.update(res.aggregate)
        rows.append(row)
    return rows


# ---- file output ----


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return fmt17(value)


def write_trials_csv(path: str, reports: Sequence[TrialReport], d: int) -> None:
    cols = [
        "trial", "seed", "status", "p", "epsilon", "varrho", "gamma", "xi",
        "attack_edges_remaining", "severed_total", "false_severs",
        "regular_isolated", "isolation_round", "graph_tries", "runtime_s",
    ] + [f"consensus_{c}" for c in range(d)] + ["error"]
    lines = [",".join(cols)]
    for r in reports:
        row = [
            r.trial, r.seed, r.status, r.p, r.epsilon, r.varrho, r.gamma, r.xi,
            r.attack_edges_remaining, r.severed_total, r.false_severs,
            r.regular_isolated, r.isolation_round, r.graph_tries, r.runtime_s,
        ]
        row.extend(r.consensus[c] if c < len(r.consensus) else float("nan") for c in range(d))
        row.append(r.error or "")
        lines.append(",".join(_cell(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_aggregate_csv(path: str, aggregate: Dict[str, float]) -> None:
    lines = ["metric,value"]
    for key in sorted(aggregate):
        lines.append(f"{key},{_cell(aggregate[key])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trajectory_csv(path: str, samples, malicious) -> None:
    mal = set(malicious)
    d = samples[0].x.shape[1]
    cols = ["round", "node"] + [f"x_{c}" for c in range(d)] + ["y", "is_malicious", "is_isolated"]
    lines = [",".join(cols)]
    for sample in samples:
        for node in range(sample.x.shape[0]):
            row = [sample.round, node]
            row.extend(sample.x[node].tolist())
            row.append(sample.y[node])
            row.append(1 if node in mal else 0)
            row.append(1 if bool(sample.isolated[node]) else 0)
            lines.append(",".join(_cell(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sever_log_csv(path: str, log) -> None:
    lines = ["round,severer,severed"]
    for rnd, i, j in log:
        lines.append(f"{rnd},{i},{j}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_report_json(path: str, result: CampaignResult) -> None:
    doc = {
        "config": _jsonable(result.config),
        "oracle": _jsonable(result.oracle),
        "aggregate": _jsonable(result.aggregate),
        "trials": [_jsonable(r) for r in result.reports],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def write_campaign(result: CampaignResult, out_dir: str, malicious) -> None:
    os.makedirs(out_dir, exist_ok=True)
    d = result.finals.shape[2]
    write_trials_csv(os.path.join(out_dir, "trials.csv"), result.reports, d)
    write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), result.aggregate)
    write_report_json(os.path.join(out_dir, "report.json"), result)
    for trial, samples in result.trajectories.items():
        write_trajectory_csv(
            os.path.join(out_dir, f"trajectory_{trial}.csv"), samples, malicious
        )
    for trial, log in result.sever_logs.items():
        write_sever_log_csv(os.path.join(out_dir, f"sever_log_{trial}.csv"), log)


def write_sweep(result: SweepResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    keys = sorted(result.campaigns[0].aggregate)
    lines = [",".join(["parameter", "value"] + keys)]
    for value, campaign in zip(result.values, result.campaigns):
        row = [result.parameter, _cell(value)]
        row.extend(_cell(campaign.aggregate[k]) for k in keys)
        lines.append(",".join(row))
    with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
