"""The decentralized optimization drivers and their parameter planner.

Two drivers share one engine skeleton:

* ``run_docs``: per step, one uniformly sampled client queries its local
  oracle and applies the n-scaled clipped online update; both the iterate
  stack and the update stack are mixed with the accelerated gossip
  subroutine (R rounds each, so 2R communication rounds per step).
* ``run_baseline_full_participation``: every client queries its oracle
  every step (n oracle calls per computation round), applies the un-scaled
  clipped update, and mixes once per stack with plain gossip (2
  communication rounds per step).

Randomness is organized in decoupled per-purpose streams derived from the
plan seed (see rng module); the full trajectory is a deterministic
function of (seed, plan, problem, matrix).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gossip import GossipConfig, fast_gossip, plain_gossip, plan_rounds
from .metrics import (
    GoldsteinProbeConfig,
    MetricsRecord,
    MetricsSink,
    consensus_errors,
    goldstein_probe,
)
from .oracles import first_order_estimator, zeroth_order_estimator
from .rng import stream
from .topology import MixingMatrix

ORACLE_TYPES = ("first", "zeroth")


class PlanError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """An iterate became non-finite; carries the (epoch, step, client) where."""

    def __init__(self, k: int, t: int, client: int):
        super().__init__(
            f"non-finite iterate at epoch {k}, step {t}, client {client}"
        )
        self.k = k
        self.t = t
        self.client = client


@dataclass(frozen=True)
class RunPlan:
    """All tuned or derived scalars of one run.

    consensus_guaranteed marks that R is at least the planned round count
    for (gamma, n, D, eps_prime), so the per-step consensus bounds are hard
    guarantees rather than recorded metrics.
    """

    delta: float
    epsilon: float
    delta_prime: float
    K: int
    T: int
    R: int
    eta: float
    D: float
    eps_prime: float
    oracle_type: str
    seed: int
    n: int
    d: int
    consensus_guaranteed: bool = False
    per_client_selector: bool = False

    def __post_init__(self) -> None:
        if self.oracle_type not in ORACLE_TYPES:
            raise PlanError(f"oracle_type must be one of {ORACLE_TYPES}, got {self.oracle_type!r}")
        if self.delta <= 0 or self.epsilon <= 0:
            raise PlanError("delta and epsilon must be > 0")
        if self.delta_prime < 0:
            raise PlanError("delta_prime must be >= 0")
        if self.oracle_type == "zeroth" and self.delta_prime <= 0:
            raise PlanError("zeroth-order oracle requires delta_prime > 0")
        if self.K < 1 or self.T < 1:
            raise PlanError("K and T must be >= 1")
        if self.R < 1:
            raise PlanError("R must be >= 1")
        if self.eta <= 0 or self.D <= 0:
            raise PlanError("eta and D must be > 0")
        if not 0 < self.eps_prime < self.D:
            raise PlanError(
                f"eps_prime must satisfy 0 < eps_prime < D, got "
                f"eps_prime = {self.eps_prime}, D = {self.D}"
            )
        if self.n < 1 or self.d < 1:
            raise PlanError("n and d must be >= 1")

    @property
    def steps_total(self) -> int:
        return self.K * self.T

    def y_consensus_bound(self) -> float:
        return (self.D + self.eps_prime) * self.eps_prime / (self.D - self.eps_prime)


@dataclass(frozen=True)
class PlanOverrides:
    """Direct parameter overrides, for grid-tuned runs far from the theory
    settings; any field left None is derived by the planner."""

    eta: float | None = None
    D: float | None = None
    R: int | None = None
    K: int | None = None
    T: int | None = None
    eps_prime: float | None = None


def plan_parameters(
    delta: float,
    epsilon: float,
    n: int,
    d: int,
    gamma: float,
    L: float,
    G: float,
    oracle_type: str,
    seed: int = 0,
    *,
    sigma: float | None = None,
    c0: float = 1.0,
    nu: float = 1.0,
    delta_prime: float | None = None,
    overrides: PlanOverrides | None = None,
    per_client_selector: bool = False,
) -> RunPlan:
    """Derive a RunPlan from the target accuracy (delta, epsilon).

    First-order: T = ceil(9 h2^2 / eps^2) with h2 = sigma/sqrt(n) + G + 3 c0 L;
    zeroth-order: T = ceil(9 h4^2 d / eps^2) with h4 = h3/sqrt(n) + h3 + 3 c0 L
    and h3 = sqrt(16 sqrt(2 pi)) L. Then K = ceil(24 (nu + L) / (delta eps)),
    D = delta / (4 T), eta = D / (G sqrt(T)), eps' = min of the two caps
    (T-6)/(3T+6) * D and (eps/3) / (27 c0 L sqrt(d)/(2 delta)
    + 4 (G' + L) T / delta + 10 G' T^(3/2) / delta) with G' = G (first) or
    h3 (zeroth), and R the planned gossip round count for (gamma, n, D, eps').

    sigma defaults to G and nu (initial suboptimality scale) to 1; both only
    move the planned T/K magnitudes, never loop correctness. Overrides are
    applied field-wise; quantities derived from an overridden field use the
    overridden value.
    """
    if min(delta, epsilon, L, G) <= 0:
        raise PlanError("delta, epsilon, L, G must all be > 0")
    if not 0 < gamma <= 1:
        raise PlanError(f"gamma must be in (0, 1], got {gamma}")
    if n < 1 or d < 1:
        raise PlanError("n and d must be >= 1")
    if oracle_type not in ORACLE_TYPES:
        raise PlanError(f"oracle_type must be one of {ORACLE_TYPES}, got {oracle_type!r}")
    ov = overrides or PlanOverrides()
    if sigma is None:
        sigma = G

    if oracle_type == "first":
        h2 = sigma / math.sqrt(n) + G + 3.0 * c0 * L
        t_formula = max(math.ceil(9.0 * h2 * h2 / epsilon**2), 7)
        grad_scale = G
    else:
        h3 = math.sqrt(16.0 * math.sqrt(2.0 * math.pi)) * L
        h4 = h3 / math.sqrt(n) + h3 + 3.0 * c0 * L
        t_formula = max(math.ceil(9.0 * h4 * h4 * d / epsilon**2), 7)
        grad_scale = h3

    T = int(ov.T) if ov.T is not None else t_formula
    K = int(ov.K) if ov.K is not None else math.ceil(24.0 * (nu + L) / (delta * epsilon))
    D = float(ov.D) if ov.D is not None else delta / (4.0 * T)
    eta = float(ov.eta) if ov.eta is not None else D / (G * math.sqrt(T))

    if ov.eps_prime is not None:
        eps_prime = float(ov.eps_prime)
    else:
        if T > 6:
            cap_geometry = (T - 6) / (3.0 * T + 6.0) * D
        else:
            cap_geometry = D / 4.0  # user-forced tiny T; keep a valid tolerance
        cap_accuracy = (epsilon / 3.0) / (
            27.0 * c0 * L * math.sqrt(d) / (2.0 * delta)
            + 4.0 * (grad_scale + L) * T / delta
            + 10.0 * grad_scale * T**1.5 / delta
        )
        eps_prime = min(cap_geometry, cap_accuracy)
    if not 0 < eps_prime < D:
        raise PlanError(
            f"resolved eps_prime = {eps_prime} outside (0, D = {D})"
        )

    planned_r = 1 if n == 1 else plan_rounds(gamma, n, D, eps_prime)
    R = int(ov.R) if ov.R is not None else planned_r

    return RunPlan(
        delta=delta,
        epsilon=epsilon,
        delta_prime=delta / 2.0 if delta_prime is None else delta_prime,
        K=K,
        T=T,
        R=R,
        eta=eta,
        D=D,
        eps_prime=eps_prime,
        oracle_type=oracle_type,
        seed=seed,
        n=n,
        d=d,
        consensus_guaranteed=R >= planned_r,
        per_client_selector=per_client_selector,
    )


def inner_update(delta_half: np.ndarray, g: np.ndarray, eta: float, D: float, n: int) -> np.ndarray:
    """Closed form of the ball-constrained online step, scaled by n.

    Returns n * min(1, D / ||v||) * v with v = delta_half - eta * g; the
    unscaled factor solves min_{||x|| <= D} <x, g> + ||x - delta_half||^2 / (2 eta).
    A zero v maps to the zero vector.
    """
    v = delta_half - eta * g
    norm = float(np.linalg.norm(v))
    if norm <= D:
        return n * v
    return (n * D / norm) * v


@dataclass
class RunCounters:
    samples_total: int = 0
    computation_rounds: int = 0
    communication_rounds: int = 0
    function_evals: int = 0


@dataclass(frozen=True)
class StepSnapshot:
    """Per-step state handed to an observer callback; arrays are live views
    into driver state and must be copied if retained."""

    k: int
    t: int
    active_client: int | None
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    delta_pre_mix: np.ndarray
    delta_half: np.ndarray


@dataclass(frozen=True)
class EpochOutputs:
    """Per-epoch averaged query points and the selected outputs.

    epoch_sums holds the raw per-epoch sums of w (shape (K, n, d)); the
    averages are epoch_sums / T. selected_epochs holds one 0-based epoch
    index per client (all equal unless per-client selection was requested).
    """

    epoch_sums: np.ndarray
    T: int
    selected_epochs: np.ndarray
    w_out: np.ndarray
    counters: RunCounters

    @property
    def epoch_averages(self) -> np.ndarray:
        return self.epoch_sums / self.T


def run_docs(
    plan: RunPlan,
    problem,
    matrix: MixingMatrix,
    sink: MetricsSink | None = None,
    *,
    metrics_every: int = 1,
    goldstein_cfg: GoldsteinProbeConfig | None = None,
    goldstein_every: int = 0,
    step_observer: Callable[[StepSnapshot], None] | None = None,
) -> EpochOutputs:
    """Client-sampled driver: one oracle call per step, accelerated gossip."""
    return _run_engine(
        plan,
        problem,
        matrix,
        full_participation=False,
        sink=sink,
        metrics_every=metrics_every,
        goldstein_cfg=goldstein_cfg,
        goldstein_every=goldstein_every,
        step_observer=step_observer,
    )


def run_baseline_full_participation(
    plan: RunPlan,
    problem,
    matrix: MixingMatrix,
    sink: MetricsSink | None = None,
    *,
    metrics_every: int = 1,
    goldstein_cfg: GoldsteinProbeConfig | None = None,
    goldstein_every: int = 0,
    step_observer: Callable[[StepSnapshot], None] | None = None,
) -> EpochOutputs:
    """Full-participation driver: n oracle calls per step, one plain gossip
    round per mixing point."""
    return _run_engine(
        plan,
        problem,
        matrix,
        full_participation=True,
        sink=sink,
        metrics_every=metrics_every,
        goldstein_cfg=goldstein_cfg,
        goldstein_every=goldstein_every,
        step_observer=step_observer,
    )


def _check_compatible(plan: RunPlan, problem, matrix: MixingMatrix) -> None:
    if problem.n != plan.n or matrix.n != plan.n:
        raise PlanError(
            f"client counts disagree: plan n = {plan.n}, problem n = {problem.n}, "
            f"matrix n = {matrix.n}"
        )
    if problem.d != plan.d:
        raise PlanError(f"dimensions disagree: plan d = {plan.d}, problem d = {problem.d}")


def _run_engine(
    plan: RunPlan,
    problem,
    matrix: MixingMatrix,
    *,
    full_participation: bool,
    sink: MetricsSink | None,
    metrics_every: int,
    goldstein_cfg: GoldsteinProbeConfig | None,
    goldstein_every: int,
    step_observer: Callable[[StepSnapshot], None] | None,
) -> EpochOutputs:
    _check_compatible(plan, problem, matrix)
    n, d, seed = plan.n, plan.d, plan.seed
    estimator = first_order_estimator if plan.oracle_type == "first" else zeroth_order_estimator
    gossip_cfg = GossipConfig.create(matrix, plan.R)

    def mix(z: np.ndarray) -> np.ndarray:
        if full_participation:
            return plain_gossip(matrix, z, 1)
        return fast_gossip(gossip_cfg, z)

    comm_per_step = 2 if full_participation else 2 * plan.R
    y = np.zeros((n, d))
    epoch_sums = np.zeros((plan.K, n, d))
    counters = RunCounters()
    record_index = 0
    y_bound = plan.y_consensus_bound()

    for k in range(1, plan.K + 1):
        delta_half = np.zeros((n, d))
        for t in range(1, plan.T + 1):
            if full_participation:
                i_t = None
            else:
                i_t = int(stream(seed, "client", k, t).integers(n))

            s = stream(seed, "s", k, t).random(n)
            x = y.copy()
            if not full_participation:
                x[i_t] += n * delta_half[i_t]
            else:
                x += delta_half
            w = y + s[:, None] * delta_half

            y = mix(x)

            rng_xi = stream(seed, "xi", k, t)
            rng_z = stream(seed, "z", k, t)
            delta = np.zeros((n, d))
            if full_participation:
                for i in range(n):
                    out = estimator(problem, i, w[i], plan.delta_prime, rng_xi, rng_z)
                    delta[i] = inner_update(delta_half[i], out.g, plan.eta, plan.D, 1)
                    counters.samples_total += out.oracle_calls_charged
                    counters.function_evals += out.function_evals
            else:
                out = estimator(problem, i_t, w[i_t], plan.delta_prime, rng_xi, rng_z)
                delta[i_t] = inner_update(delta_half[i_t], out.g, plan.eta, plan.D, n)
                counters.samples_total += out.oracle_calls_charged
                counters.function_evals += out.function_evals
                upd_norm = float(np.linalg.norm(delta[i_t]))
                # non-finite states fall through to the divergence check below
                assert not np.isfinite(upd_norm) or upd_norm <= n * plan.D * (1.0 + 1e-12), (
                    "clipped update escaped its n * D bound"
                )
                # all other rows are zero, so the stack mean is update / n
                assert np.array_equal(delta.sum(axis=0), delta[i_t], equal_nan=True)

            delta_pre_mix = delta
            delta_half = mix(delta)
            counters.computation_rounds += 1
            counters.communication_rounds += comm_per_step

            if not np.all(np.isfinite(y)) or not np.all(np.isfinite(delta_half)):
                bad = ~(np.isfinite(y).all(axis=1) & np.isfinite(delta_half).all(axis=1))
                raise DivergenceError(k, t, int(np.argmax(bad)))

            if plan.consensus_guaranteed and not full_participation:
                _, max_delta_err = consensus_errors(x, delta_half)
                assert max_delta_err <= plan.eps_prime * (1.0 + 1e-9), (
                    f"mixed-update consensus {max_delta_err} exceeded "
                    f"tolerance {plan.eps_prime} at ({k}, {t})"
                )
                max_delta_norm = float(np.linalg.norm(delta_half, axis=1).max())
                assert max_delta_norm <= (plan.D + plan.eps_prime) * (1.0 + 1e-9), (
                    f"mixed update norm {max_delta_norm} exceeded "
                    f"D + eps_prime at ({k}, {t})"
                )
                y_err = float(
                    np.linalg.norm(y - y.mean(axis=0, keepdims=True), axis=1).max()
                )
                assert y_err <= y_bound * (1.0 + 1e-9), (
                    f"iterate consensus {y_err} exceeded bound {y_bound} at ({k}, {t})"
                )

            epoch_sums[k - 1] += w

            if step_observer is not None:
                step_observer(
                    StepSnapshot(
                        k=k,
                        t=t,
                        active_client=i_t,
                        x=x,
                        w=w,
                        y=y,
                        delta_pre_mix=delta_pre_mix,
                        delta_half=delta_half,
                    )
                )

            if sink is not None:
                step = (k - 1) * plan.T + t
                if step % metrics_every == 0 or step == plan.steps_total:
                    cons_x, cons_delta = consensus_errors(x, delta_half)
                    gold = None
                    if goldstein_cfg is not None and goldstein_every > 0:
                        if record_index % goldstein_every == 0 or step == plan.steps_total:
                            gold = goldstein_probe(
                                problem, w, goldstein_cfg, stream(seed, "goldstein", k, t)
                            )
                    sink.record(
                        MetricsRecord(
                            k=k,
                            t=t,
                            samples_total=counters.samples_total,
                            computation_rounds=counters.computation_rounds,
                            communication_rounds=counters.communication_rounds,
                            objective=problem.full_value(w.mean(axis=0)),
                            consensus_x=cons_x,
                            consensus_delta=cons_delta,
                            goldstein_estimate=gold,
                        )
                    )
                    record_index += 1

    if plan.per_client_selector:
        selected = np.array(
            [int(stream(seed, "selector", i).integers(plan.K)) for i in range(n)]
        )
    else:
        selected = np.full(n, int(stream(seed, "selector").integers(plan.K)))
    w_out = np.stack([epoch_sums[selected[i], i] / plan.T for i in range(n)])
    return EpochOutputs(
        epoch_sums=epoch_sums,
        T=plan.T,
        selected_epochs=selected,
        w_out=w_out,
        counters=counters,
    )
