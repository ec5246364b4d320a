"""Experiment runner: config parsing, seed sweeps, traces, and summaries.

Configs are sectioned key/value text (INI syntax, case-sensitive keys) with
four sections: [problem], [topology], [algorithm], [run]. eta and D accept
comma-separated lists; the runner expands their cross product as a tuning
grid. All randomness flows from [run] seeds; the same config and seed
reproduce a byte-identical trace.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    PlanError,
    PlanOverrides,
    RunPlan,
    plan_parameters,
    run_baseline_full_participation,
    run_docs,
)
from .metrics import CSV_COLUMNS, GoldsteinProbeConfig, MetricsSink, PROBE_POLICIES
from .oracles import (
    CappedHingeSvmProblem,
    PiecewiseProblem,
    load_libsvm,
    shard,
    subsample,
    write_synthetic_libsvm,
)
from .rng import stream
from .topology import (
    MixingMatrix,
    TopologyError,
    build_complete,
    build_ring,
    load_weights_file,
    single_client,
)

OUTPUT_DIR_ENV = "GOSSIPOPT_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "capped_l1_svm"
    dataset: str | None = None
    d: int = 0
    lam: float | None = None
    alpha: float = 2.0
    subsample: int | None = None
    data_seed: int = 0
    samples_per_client: int = 8
    gen_seed: int = 7
    lipschitz: float | None = None
    grad_bound: float | None = None


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "ring"
    n: int = 16
    neighbors_per_side: int = 1
    path: str | None = None


@dataclass(frozen=True)
class AlgorithmConfig:
    method: str = "docs"
    oracle: str = "first"
    delta: float = 0.5
    epsilon: float = 0.5
    delta_prime: float | None = None
    eta: tuple[float, ...] | None = None
    D: tuple[float, ...] | None = None
    R: int | None = None
    K: int | None = None
    T: int | None = None
    eps_prime: float | None = None
    sigma: float | None = None
    c0: float = 1.0
    nu: float = 1.0
    per_client_selector: bool = False


@dataclass(frozen=True)
class RunSection:
    seeds: tuple[int, ...] = (1,)
    metrics_every: int = 50
    goldstein_every: int = 0
    goldstein_samples: int = 64
    goldstein_final_samples: int = 4096
    probe_policy: str = "all_clients"
    out_dir: str = "runs/out"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig
    topology: TopologyConfig
    algorithm: AlgorithmConfig
    run: RunSection


_SCHEMA: dict[str, dict[str, str]] = {
    "problem": {
        "kind": "choice:capped_l1_svm,synthetic_piecewise",
        "dataset": "str",
        "d": "int",
        "lam": "float",
        "alpha": "float",
        "subsample": "int",
        "data_seed": "int",
        "samples_per_client": "int",
        "gen_seed": "int",
        "lipschitz": "float",
        "grad_bound": "float",
    },
    "topology": {
        "kind": "choice:ring,complete,file",
        "n": "int",
        "neighbors_per_side": "int",
        "path": "str",
    },
    "algorithm": {
        "method": "choice:docs,baseline",
        "oracle": "choice:first,zeroth",
        "delta": "float",
        "epsilon": "float",
        "delta_prime": "float",
        "eta": "floats",
        "D": "floats",
        "R": "int",
        "K": "int",
        "T": "int",
        "eps_prime": "float",
        "sigma": "float",
        "c0": "float",
        "nu": "float",
        "per_client_selector": "bool",
    },
    "run": {
        "seeds": "ints",
        "metrics_every": "int",
        "goldstein_every": "int",
        "goldstein_samples": "int",
        "goldstein_final_samples": "int",
        "probe_policy": f"choice:{','.join(PROBE_POLICIES)}",
        "out_dir": "str",
    },
}

_BOOL_VALUES = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _convert(keypath: str, spec: str, raw: str):
    raw = raw.strip()
    if spec == "str":
        return raw
    if spec == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{keypath}: expected integer, got {raw!r}") from None
    if spec == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{keypath}: expected number, got {raw!r}") from None
    if spec == "bool":
        if raw.lower() not in _BOOL_VALUES:
            raise ConfigError(f"{keypath}: expected boolean, got {raw!r}")
        return _BOOL_VALUES[raw.lower()]
    if spec == "floats":
        try:
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        except ValueError:
            raise ConfigError(f"{keypath}: expected comma-separated numbers, got {raw!r}") from None
    if spec == "ints":
        try:
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        except ValueError:
            raise ConfigError(f"{keypath}: expected comma-separated integers, got {raw!r}") from None
    if spec.startswith("choice:"):
        choices = spec[len("choice:"):].split(",")
        if raw not in choices:
            raise ConfigError(f"{keypath}: expected one of {choices}, got {raw!r}")
        return raw
    raise AssertionError(spec)


def parse_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file; unknown sections or keys, type
    mismatches, and constraint violations all raise ConfigError naming the
    offending key path."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case-sensitive (d vs D)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            if raw.strip() == "":
                continue
            values[section][key] = _convert(f"{section}.{key}", _SCHEMA[section][key], raw)

    cfg = ExperimentConfig(
        problem=ProblemConfig(**values.get("problem", {})),
        topology=TopologyConfig(**values.get("topology", {})),
        algorithm=AlgorithmConfig(**values.get("algorithm", {})),
        run=RunSection(**values.get("run", {})),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    p, topo, alg, run = cfg.problem, cfg.topology, cfg.algorithm, cfg.run
    if p.d < 1:
        raise ConfigError("problem.d: must be >= 1")
    if p.kind == "capped_l1_svm" and not p.dataset:
        raise ConfigError("problem.dataset: required for kind capped_l1_svm")
    if p.kind == "synthetic_piecewise" and p.samples_per_client < 1:
        raise ConfigError("problem.samples_per_client: must be >= 1")
    if topo.n < 1:
        raise ConfigError("topology.n: must be >= 1")
    if topo.kind == "file" and not topo.path:
        raise ConfigError("topology.path: required for kind file")
    if alg.delta <= 0:
        raise ConfigError("algorithm.delta: must be > 0")
    if alg.epsilon <= 0:
        raise ConfigError("algorithm.epsilon: must be > 0")
    if alg.eta is not None and any(v <= 0 for v in alg.eta):
        raise ConfigError("algorithm.eta: entries must be > 0")
    if alg.D is not None and any(v <= 0 for v in alg.D):
        raise ConfigError("algorithm.D: entries must be > 0")
    if alg.eps_prime is not None:
        if alg.eps_prime <= 0:
            raise ConfigError("algorithm.eps_prime: must be > 0")
        if alg.D is not None and any(alg.eps_prime >= dv for dv in alg.D):
            raise ConfigError(
                "algorithm.eps_prime: consensus tolerance must be strictly "
                "below the update diameter D (eps_prime < D)"
            )
    if alg.R is not None and alg.R < 1:
        raise ConfigError("algorithm.R: must be >= 1")
    if alg.K is not None and alg.K < 1:
        raise ConfigError("algorithm.K: must be >= 1")
    if alg.T is not None and alg.T < 1:
        raise ConfigError("algorithm.T: must be >= 1")
    if not run.seeds:
        raise ConfigError("run.seeds: at least one seed is required")
    if run.metrics_every < 1:
        raise ConfigError("run.metrics_every: must be >= 1")


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) equals cfg."""
    def fmt(v) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        return str(v)

    lines = []
    for section, sub in (
        ("problem", cfg.problem),
        ("topology", cfg.topology),
        ("algorithm", cfg.algorithm),
        ("run", cfg.run),
    ):
        lines.append(f"[{section}]")
        for key, value in asdict(sub).items():
            if value is not None:
                lines.append(f"{key} = {fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the semantically meaningful fields (output dir excluded)."""
    payload = {
        "problem": asdict(cfg.problem),
        "topology": asdict(cfg.topology),
        "algorithm": asdict(cfg.algorithm),
        "run": {k: v for k, v in asdict(cfg.run).items() if k != "out_dir"},
    }
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- wiring ------------------------------------------------------------------


def build_topology(cfg: TopologyConfig) -> MixingMatrix:
    if cfg.n == 1:
        return single_client()
    if cfg.kind == "ring":
        return build_ring(cfg.n, cfg.neighbors_per_side)
    if cfg.kind == "complete":
        return build_complete(cfg.n)
    matrix = load_weights_file(cfg.path)
    if matrix.n != cfg.n:
        raise ConfigError(
            f"topology.n: declared {cfg.n} clients but {cfg.path} holds {matrix.n}"
        )
    return matrix


def load_dataset(cfg: ProblemConfig):
    """Load (and optionally subsample) the configured dataset once; the
    result can be shared across every seed and grid cell of a sweep."""
    if cfg.kind != "capped_l1_svm":
        return None
    data = load_libsvm(cfg.dataset, cfg.d)
    if cfg.subsample is not None:
        data = subsample(data, cfg.subsample, cfg.data_seed)
    return data


def build_problem(cfg: ProblemConfig, n: int, seed: int, data=None):
    if cfg.kind == "synthetic_piecewise":
        return PiecewiseProblem.generate(n, cfg.d, cfg.samples_per_client, cfg.gen_seed)
    if data is None:
        data = load_dataset(cfg)
    shards = shard(data, n, seed)
    return CappedHingeSvmProblem.from_shards(
        shards,
        cfg.d,
        lam=cfg.lam,
        alpha=cfg.alpha,
        lipschitz_L=cfg.lipschitz,
        grad_bound_G=cfg.grad_bound,
    )


def resolve_plan(
    cfg: ExperimentConfig,
    matrix: MixingMatrix,
    problem,
    seed: int,
    eta: float | None,
    diameter: float | None,
) -> RunPlan:
    alg = cfg.algorithm
    overrides = PlanOverrides(
        eta=eta, D=diameter, R=alg.R, K=alg.K, T=alg.T, eps_prime=alg.eps_prime
    )
    try:
        return plan_parameters(
            alg.delta,
            alg.epsilon,
            cfg.topology.n,
            cfg.problem.d,
            matrix.gamma,
            problem.lipschitz_L,
            problem.grad_bound_G,
            alg.oracle,
            seed=seed,
            sigma=alg.sigma,
            c0=alg.c0,
            nu=alg.nu,
            delta_prime=alg.delta_prime,
            overrides=overrides,
            per_client_selector=alg.per_client_selector,
        )
    except PlanError as exc:
        raise ConfigError(f"algorithm: {exc}") from exc


def _grid(alg: AlgorithmConfig) -> list[tuple[float | None, float | None]]:
    etas: tuple[float | None, ...] = alg.eta if alg.eta else (None,)
    diams: tuple[float | None, ...] = alg.D if alg.D else (None,)
    return [(e, dv) for e in etas for dv in diams]


@dataclass
class RunResult:
    seed: int
    eta: float
    D: float
    R: int
    K: int
    T: int
    eps_prime: float
    final_objective: float | None = None
    final_goldstein: float | None = None
    samples_total: int = 0
    computation_rounds: int = 0
    communication_rounds: int = 0
    function_evals: int = 0
    trace_path: str = ""
    error: str | None = None


@dataclass
class RunSummary:
    version: str
    config_hash: str
    method: str
    oracle: str
    runs: list[RunResult] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "config_hash": self.config_hash,
            "method": self.method,
            "oracle": self.oracle,
            "runs": [asdict(r) for r in self.runs],
            "aggregate": self.aggregate,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _aggregate(runs: list[RunResult]) -> dict:
    ok = [r for r in runs if r.error is None]
    agg: dict = {"completed": len(ok), "failed": len(runs) - len(ok)}
    for key in ("final_objective", "final_goldstein"):
        vals = [getattr(r, key) for r in ok if getattr(r, key) is not None]
        if vals:
            agg[key] = {
                "mean": float(np.mean(vals)),
                "min": float(min(vals)),
                "max": float(max(vals)),
            }
    return agg


def run_experiment(cfg: ExperimentConfig, dry_run: bool = False) -> RunSummary:
    """Execute every (grid cell, seed) combination of the config.

    Each run writes trace_<seed>.csv under the output directory (grid runs
    under eta.../D... subdirectories); one summary.json covers all runs. A
    failing seed is recorded in the summary and does not stop the sweep,
    but a sweep where every run failed raises the last error.
    """
    out_dir = Path(os.environ.get(OUTPUT_DIR_ENV, cfg.run.out_dir))
    summary = RunSummary(
        version=__version__,
        config_hash=config_hash(cfg),
        method=cfg.algorithm.method,
        oracle=cfg.algorithm.oracle,
    )
    matrix = build_topology(cfg.topology)
    grid = _grid(cfg.algorithm)
    driver = run_docs if cfg.algorithm.method == "docs" else run_baseline_full_participation
    try:
        dataset = load_dataset(cfg.problem)
    except Exception as exc:
        # the whole sweep shares one dataset; report every seed as failed
        for seed in cfg.run.seeds:
            summary.runs.append(
                RunResult(seed=seed, eta=0.0, D=0.0, R=0, K=0, T=0, eps_prime=0.0,
                          error=f"{type(exc).__name__}: {exc}")
            )
        summary.aggregate = _aggregate(summary.runs)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.json").write_text(summary.to_json() + "\n", encoding="ascii")
        raise RuntimeError(f"dataset load failed: {exc}") from exc

    if dry_run:
        for eta, diameter in grid:
            problem = build_problem(cfg.problem, cfg.topology.n, cfg.run.seeds[0], dataset)
            plan = resolve_plan(cfg, matrix, problem, cfg.run.seeds[0], eta, diameter)
            print(_format_plan(plan, cfg.algorithm.method))
        return summary

    last_error: Exception | None = None
    for eta, diameter in grid:
        cell_dir = out_dir
        if len(grid) > 1:
            cell_dir = out_dir / f"eta{eta if eta is not None else 'auto'}_D{diameter if diameter is not None else 'auto'}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        for seed in cfg.run.seeds:
            problem = build_problem(cfg.problem, cfg.topology.n, seed, dataset)
            plan = resolve_plan(cfg, matrix, problem, seed, eta, diameter)
            result = RunResult(
                seed=seed, eta=plan.eta, D=plan.D, R=plan.R, K=plan.K,
                T=plan.T, eps_prime=plan.eps_prime,
            )
            trace_path = cell_dir / f"trace_{seed}.csv"
            result.trace_path = str(trace_path)
            probe_cfg = GoldsteinProbeConfig(
                radius=plan.delta,
                num_smoothing_samples=cfg.run.goldstein_samples,
                probe_point_policy=cfg.run.probe_policy,
            )
            try:
                with MetricsSink(str(trace_path), keep_in_memory=False) as sink:
                    outputs = driver(
                        plan,
                        problem,
                        matrix,
                        sink,
                        metrics_every=cfg.run.metrics_every,
                        goldstein_cfg=probe_cfg if cfg.run.goldstein_every > 0 else None,
                        goldstein_every=cfg.run.goldstein_every,
                    )
            except Exception as exc:  # recorded per seed; sweep continues
                result.error = f"{type(exc).__name__}: {exc}"
                last_error = exc
                summary.runs.append(result)
                print(f"seed {seed} failed: {result.error}", file=sys.stderr)
                continue
            final_probe = GoldsteinProbeConfig(
                radius=plan.delta,
                num_smoothing_samples=cfg.run.goldstein_final_samples,
                probe_point_policy=cfg.run.probe_policy,
            )
            result.final_goldstein = float(
                _final_goldstein(problem, outputs.w_out, final_probe, seed)
            )
            result.final_objective = float(problem.full_value(outputs.w_out.mean(axis=0)))
            result.samples_total = outputs.counters.samples_total
            result.computation_rounds = outputs.counters.computation_rounds
            result.communication_rounds = outputs.counters.communication_rounds
            result.function_evals = outputs.counters.function_evals
            summary.runs.append(result)

    summary.aggregate = _aggregate(summary.runs)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(summary.to_json() + "\n", encoding="ascii")
    if summary.runs and all(r.error is not None for r in summary.runs):
        raise RuntimeError(f"all runs failed; last error: {last_error}")
    return summary


def _final_goldstein(problem, w_out: np.ndarray, cfg: GoldsteinProbeConfig, seed: int) -> float:
    from .metrics import goldstein_probe

    return goldstein_probe(problem, w_out, cfg, stream(seed, "goldstein", 0))


def _format_plan(plan: RunPlan, method: str) -> str:
    pairs = [
        ("method", method),
        ("oracle_type", plan.oracle_type),
        ("n", plan.n),
        ("d", plan.d),
        ("delta", plan.delta),
        ("epsilon", plan.epsilon),
        ("delta_prime", plan.delta_prime),
        ("K", plan.K),
        ("T", plan.T),
        ("R", plan.R),
        ("eta", plan.eta),
        ("D", plan.D),
        ("eps_prime", plan.eps_prime),
        ("consensus_guaranteed", plan.consensus_guaranteed),
        ("seed", plan.seed),
    ]
    return "\n".join(f"{k} = {v}" for k, v in pairs)


# -- trace comparison ---------------------------------------------------------

_X_AXES = {
    "samples": "samples_total",
    "computation": "computation_rounds",
    "communication": "communication_rounds",
}


def emit_comparison(
    trace_paths: list[str],
    x_axis: str,
    labels: list[str] | None = None,
) -> str:
    """Merge traces into long-format CSV rows (method, seed, x, objective,
    goldstein_estimate) against the chosen counter axis.

    Traces keep their own x points (no interpolation). The method label
    defaults to the trace's parent directory name; seed is parsed from the
    trace_<seed>.csv filename.
    """
    if x_axis not in _X_AXES:
        raise ConfigError(f"x_axis must be one of {sorted(_X_AXES)}, got {x_axis!r}")
    if labels is not None and len(labels) != len(trace_paths):
        raise ConfigError("labels must match the number of traces")
    x_col = _X_AXES[x_axis]
    out = ["method,seed,x,objective,goldstein_estimate"]
    for pos, path in enumerate(trace_paths):
        p = Path(path)
        label = labels[pos] if labels else p.parent.name
        seed = p.stem.split("_")[-1]
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != CSV_COLUMNS:
                raise ConfigError(f"{path}: trace schema mismatch: {header}")
            idx = {name: i for i, name in enumerate(header)}
            for line in fh:
                cells = line.rstrip("\n").split(",")
                out.append(
                    f"{label},{seed},{cells[idx[x_col]]},"
                    f"{cells[idx['objective']]},{cells[idx['goldstein_estimate']]}"
                )
    return "\n".join(out) + "\n"


# -- entry point ---------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gossipopt",
        description="Decentralized nonsmooth optimization simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every (grid cell, seed) in a config")
    p_run.add_argument("config")
    p_run.add_argument("--dry-run", action="store_true", help="print resolved plans only")

    p_plan = sub.add_parser("plan", help="print the resolved run plan (dry run)")
    p_plan.add_argument("config")

    p_cmp = sub.add_parser("compare", help="merge traces into a long-format CSV")
    p_cmp.add_argument("traces", nargs="+")
    p_cmp.add_argument(
        "--x-axis",
        default="samples",
        choices=sorted(_X_AXES),
        help="counter to use as the x column",
    )
    p_cmp.add_argument("--labels", default=None, help="comma-separated method labels")
    p_cmp.add_argument("--out", default=None, help="write CSV here instead of stdout")

    p_val = sub.add_parser("validate-topology", help="validate a weight-matrix file")
    p_val.add_argument("path")

    p_mk = sub.add_parser("make-data", help="generate a synthetic LIBSVM dataset")
    p_mk.add_argument("path")
    p_mk.add_argument("--samples", type=int, default=8000)
    p_mk.add_argument("--dim", type=int, default=123)
    p_mk.add_argument("--seed", type=int, default=7)

    args = parser.parse_args(argv)
    try:
        if args.command in ("run", "plan"):
            cfg = parse_config(args.config)
            dry = args.command == "plan" or getattr(args, "dry_run", False)
            run_experiment(cfg, dry_run=dry)
            return 0
        if args.command == "compare":
            labels = args.labels.split(",") if args.labels else None
            text = emit_comparison(args.traces, args.x_axis, labels)
            if args.out:
                Path(args.out).write_text(text, encoding="ascii")
            else:
                sys.stdout.write(text)
            return 0
        if args.command == "validate-topology":
            matrix = load_weights_file(args.path)
            print(
                f"valid mixing matrix: n = {matrix.n}, lambda2 = {matrix.lambda2!r}, "
                f"gamma = {matrix.gamma!r}"
            )
            return 0
        if args.command == "make-data":
            write_synthetic_libsvm(args.path, args.samples, args.dim, args.seed)
            print(f"wrote {args.samples} samples of dimension {args.dim} to {args.path}")
            return 0
    except (ConfigError, TopologyError, PlanError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
