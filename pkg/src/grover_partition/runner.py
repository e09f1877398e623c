"""Standard and recursive Grover runs with exact query and physical-time accounting.

Ensembles are simulated in fixed-size chunks stacked along a batch axis.  The
chunk size never depends on the thread count, so results are identical for
any ``threads`` value.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import core
from .analytics import trials_needed
from .core import DiffusionSpec, ImbalanceTable, OracleSpec
from .instances import ProblemInstance, RealInstance

CHUNK = 64


@dataclass(frozen=True)
class RunConfig:
    gamma: float
    r: float = 0.0
    t_max: int = 64
    echo: bool = True
    diffusion: DiffusionSpec = DiffusionSpec()
    epsilon: float = 0.01
    target: int = 0
    ideal_oracle: bool = False

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not self.gamma > 0 or self.r < 0:
            raise ValueError("need gamma > 0 and r >= 0")


@dataclass
class RunTrace:
    probs: np.ndarray
    norms: np.ndarray
    instance_id: int | None = None


@dataclass
class GroverOutcome:
    T_opt: int
    P_opt: np.ndarray
    T_total_median: float
    Q: np.ndarray | None
    definition: str = "median_total_queries"
    median_curve: np.ndarray | None = None

    @property
    def P_opt_median(self) -> float:
        return float(np.median(self.P_opt))

    @property
    def Q_median(self) -> float:
        return float(np.median(self.Q)) if self.Q is not None else math.nan


@dataclass(frozen=True)
class RecursiveConfig:
    m: int
    gamma: float | None = None
    schedule: tuple[int, ...] | None = None
    epsilon: float = 0.01
    diffusion: DiffusionSpec = DiffusionSpec()
    echo: bool = True
    target: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.schedule is not None and any(t < 1 for t in self.schedule):
            raise ValueError("every layer needs at least one cycle")

    @property
    def step_width(self) -> float:
        return self.gamma if self.gamma is not None else 2.0 ** (-self.m - 1)


@dataclass
class QueryLedger:
    layers: list[dict] = field(default_factory=list)
    oracle_queries: int = 0
    reflection_queries: int = 0
    physical_time: float = 0.0
    reflection_charged: bool = False

    @property
    def total(self) -> int:
        return self.oracle_queries + self.reflection_queries

    def to_json(self) -> dict:
        return {
            "layers": self.layers,
            "total": self.total,
            "physical_time": self.physical_time,
            "reflection_charged": self.reflection_charged,
        }


def success_mask(instance, table: ImbalanceTable, target: int = 0) -> np.ndarray:
    """Exact solutions for integer weights; minimal ``|D|`` states for real weights."""
    if isinstance(instance, RealInstance):
        a = np.abs(table.values)
        return a == a.min(axis=-1, keepdims=True)
    return table.values == target


def simulate(factors: np.ndarray, mask: np.ndarray, t_max: int, echo: bool = True,
             diffusion: DiffusionSpec = DiffusionSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Iterate oracle + diffusion from the uniform state.

    ``factors`` holds the oracle diagonal (batch axes allowed).  With ``echo``
    even-numbered queries use the conjugate diagonal.  Returns success
    probabilities and surviving norms for ``T = 0..t_max``.
    """
    factors = np.asarray(factors, dtype=np.complex128)
    n = factors.shape[-1].bit_length() - 1
    state = core.init_uniform(n, batch=factors.shape[0] if factors.ndim > 1 else None)
    conj = np.conj(factors) if echo else factors
    probs = np.empty(factors.shape[:-1] + (t_max + 1,))
    norms = np.empty_like(probs)
    a = state.amps
    p2 = np.abs(a) ** 2
    probs[..., 0] = np.sum(p2 * mask, axis=-1)
    norms[..., 0] = np.sum(p2, axis=-1)
    for t in range(1, t_max + 1):
        a *= factors if t % 2 else conj
        core.apply_diffusion(state, diffusion)
        p2 = np.abs(a) ** 2
        probs[..., t] = np.sum(p2 * mask, axis=-1)
        norms[..., t] = np.sum(p2, axis=-1)
    return probs, norms


def _factors(table: ImbalanceTable, config: RunConfig) -> np.ndarray:
    if config.ideal_oracle:
        return np.where(table.values == config.target, -1.0 + 0j, 1.0 + 0j)
    return core.oracle_factors(table, OracleSpec(config.gamma, config.target, config.r))


def run_standard(instance, config: RunConfig, instance_id: int | None = None) -> RunTrace:
    table = core.build_imbalance_table(instance)
    mask = success_mask(instance, table, config.target)
    probs, norms = simulate(_factors(table, config), mask, config.t_max, config.echo, config.diffusion)
    return RunTrace(probs, norms, instance_id)


def run_abstract(n: int, config: RunConfig, marked=(0,)) -> RunTrace:
    """Unstructured search over ``2**n`` states with an ideal oracle on ``marked``."""
    mask = np.zeros(1 << n, dtype=bool)
    mask[list(marked)] = True
    factors = np.where(mask, -1.0 + 0j, 1.0 + 0j)
    probs, norms = simulate(factors, mask, config.t_max, config.echo, config.diffusion)
    return RunTrace(probs, norms)


def run_two_phase(n: int, phase: float, t_max: int, echo: bool = True, marked=(0,)) -> RunTrace:
    """Toy oracle with phase ``pi`` on ``marked`` and ``phase`` everywhere else."""
    mask = np.zeros(1 << n, dtype=bool)
    mask[list(marked)] = True
    factors = np.where(mask, -1.0 + 0j, np.exp(1j * phase))
    probs, norms = simulate(factors, mask, t_max, echo)
    return RunTrace(probs, norms)


def _chunks(seq, size=CHUNK):
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def map_chunks(fn, items, threads: int = 1):
    chunks = _chunks(list(items))
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return [x for part in parts for x in part]


def stacked_tables(instances) -> tuple[ImbalanceTable, np.ndarray]:
    tables = [core.build_imbalance_table(inst) for inst in instances]
    k = {t.k for t in tables}
    if len(k) != 1 or len({t.n for t in tables}) != 1:
        raise ValueError("a stacked batch needs a common n and k")
    values = np.stack([t.values for t in tables])
    return ImbalanceTable(values, k.pop()), tables


def simulate_ensemble(instances, config: RunConfig, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and norms for a list of same-size instances, shape ``(B, t_max + 1)``."""
    def work(chunk):
        table, tables = stacked_tables(chunk)
        mask = np.stack([success_mask(inst, t, config.target) for inst, t in zip(chunk, tables)])
        p, nrm = simulate(_factors(table, config), mask, config.t_max, config.echo, config.diffusion)
        return list(zip(p, nrm))

    rows = map_chunks(work, instances, threads)
    return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])


def run_ensemble(instances, config: RunConfig, threads: int = 1) -> list[RunTrace]:
    probs, norms = simulate_ensemble(instances, config, threads)
    return [RunTrace(p, q, i) for i, (p, q) in enumerate(zip(probs, norms))]


def _as_prob_matrix(traces) -> np.ndarray:
    if isinstance(traces, np.ndarray):
        return np.atleast_2d(traces)
    return np.array([t.probs for t in traces])


def speedup(P_opt, T_opt, n_sol, N):
    """Memoryless trials over Grover queries at matched success probability.

    ``P_opt = 1`` yields ``inf``.
    """
    P_opt = np.asarray(P_opt, dtype=float)
    n_sol = np.asarray(n_sol, dtype=float)
    if np.any(n_sol <= 0):
        raise ValueError("speedup is undefined without solutions")
    with np.errstate(divide="ignore"):
        q = np.log1p(-P_opt) / (T_opt * np.log1p(-n_sol / N))
    q = np.where(P_opt >= 1, np.inf, q)
    return q if q.ndim else float(q)


def total_queries(probs: np.ndarray, epsilon: float) -> np.ndarray:
    """``T * M(P_T, eps)`` for ``T >= 1``; column ``j`` is ``T = j + 1``."""
    T = np.arange(1, probs.shape[-1])
    with np.errstate(over="ignore"):
        return T * trials_needed(probs[..., 1:], epsilon)


def optimal_iterations(traces, epsilon: float = 0.01, n_sol=None, N: int | None = None) -> GroverOutcome:
    """``T`` minimizing the ensemble median of ``T * M(P_T, eps)``; ties go to the smaller ``T``."""
    probs = _as_prob_matrix(traces)
    if probs.shape[-1] < 2:
        raise ValueError("need at least one iteration")
    if not np.any(probs[:, 1:] > 0):
        raise ValueError("no solutions: success probability is zero at every T")
    med = np.median(total_queries(probs, epsilon), axis=0)
    j = int(np.argmin(med))
    T_opt = j + 1
    P_opt = probs[:, T_opt]
    Q = speedup(P_opt, T_opt, n_sol, N) if n_sol is not None and N is not None else None
    return GroverOutcome(T_opt, P_opt, float(med[j]), None if Q is None else np.atleast_1d(Q),
                         "median_total_queries", med)


def optimal_iterations_star(traces, epsilon: float = 0.01, n_sol=None, N: int | None = None) -> GroverOutcome:
    """Alternative definition: ``T`` maximizing the median success probability."""
    probs = _as_prob_matrix(traces)
    if not np.any(probs[:, 1:] > 0):
        raise ValueError("no solutions: success probability is zero at every T")
    medp = np.median(probs[:, 1:], axis=0)
    T_opt = int(np.argmax(medp)) + 1
    P_opt = probs[:, T_opt]
    tot = float(np.median(T_opt * trials_needed(P_opt, epsilon)))
    Q = speedup(P_opt, T_opt, n_sol, N) if n_sol is not None and N is not None else None
    return GroverOutcome(T_opt, P_opt, tot, None if Q is None else np.atleast_1d(Q),
                         "max_median_probability", medp)


# --------------------------------------------------------------------------
# recursive algorithm


def round_even(x: float) -> int:
    return max(2, 2 * int(math.floor(x / 2 + 0.5)))


def layer_count(k: int, m: int) -> int:
    return -(-k // m)


def default_schedule(m: int, k: int, n: int) -> tuple[int, ...]:
    L = layer_count(k, m)
    base = (math.pi / 4) * 2 ** (m / 2)
    return tuple([round_even(base)] * (L - 1) + [round_even(base * math.sqrt(n))])


def query_recurrence(schedule, reflection_cost: int = 0) -> list[int]:
    """Oracle calls per amplification cycle in each layer (``tau_l``)."""
    taus = []
    below = 0
    for T in schedule:
        tau = 1 + reflection_cost + 2 * below
        taus.append(tau)
        below += T * tau
    return taus


class _Replay:
    """Applies layered Grover operators, replaying lower layers inside each diffusion."""

    def __init__(self, factors, schedule, diffusion, echo, gamma):
        self.f = factors
        self.fc = [np.conj(f) for f in factors]
        self.schedule = schedule
        self.diffusion = diffusion
        self.echo = echo
        self.gamma = gamma
        self.oracle_calls = 0
        self.reflection_calls = 0

    def oracle(self, state, layer, conj):
        state.amps *= self.fc[layer] if conj else self.f[layer]
        self.oracle_calls += 1

    def reflect(self, state, layer, adjoint):
        # V_l = P H R H P^dagger with P = G_{l-1} ... G_1
        for j in reversed(range(layer)):
            self.grover(state, j, adjoint=True)
        core.apply_diffusion(state, self.diffusion, adjoint=adjoint)
        if self.diffusion.kind == "generalized":
            self.reflection_calls += 1
        for j in range(layer):
            self.grover(state, j, adjoint=False)

    def grover(self, state, layer, adjoint=False, after_cycle=None):
        T = self.schedule[layer]
        if not adjoint:
            for t in range(T):
                self.oracle(state, layer, conj=self.echo and t % 2 == 1)
                self.reflect(state, layer, adjoint=False)
                if after_cycle is not None:
                    after_cycle(state)
        else:
            for t in reversed(range(T)):
                self.reflect(state, layer, adjoint=True)
                self.oracle(state, layer, conj=not (self.echo and t % 2 == 1))


def recursive_factors(instance: ProblemInstance, m: int, gamma: float, r: float = 0.0,
                      target: int = 0) -> list[np.ndarray]:
    """Oracle diagonals per layer: modular on the low ``l*m`` bits, plain for the last layer.

    When ``m`` does not divide ``k`` the weights are read with zero high bits up
    to the next multiple of ``m``; that only adds layers, and the final layer
    still resolves the true weights ``a_i / 2**k``.
    """
    L = layer_count(instance.k, m)
    out = []
    for layer in range(1, L):
        table = core.build_imbalance_table(instance, layer=layer, m=m)
        spec = OracleSpec(gamma, target - core.layer_target_offset(instance, layer, m), r,
                          modulus=1 << (layer * m))
        out.append(core.oracle_factors(table, spec))
    out.append(core.oracle_factors(core.build_imbalance_table(instance), OracleSpec(gamma, target, r)))
    return out


def _resolve_schedule(instance, rconfig: RecursiveConfig) -> tuple[int, ...]:
    L = layer_count(instance.k, rconfig.m)
    schedule = rconfig.schedule or default_schedule(rconfig.m, L * rconfig.m, instance.n)
    if len(schedule) != L:
        raise ValueError(f"schedule has {len(schedule)} layers but k={instance.k}, m={rconfig.m} needs {L}")
    return tuple(int(t) for t in schedule)


def simulate_recursive(instances, rconfig: RecursiveConfig, r: float = 0.0):
    """Recursive run over a same-size batch.

    Returns ``(probs per layer, norms per layer, ledger)``; each per-layer array
    has shape ``(B, T_l + 1)`` with column 0 the state entering the layer.
    """
    schedule = _resolve_schedule(instances[0], rconfig)
    gamma = rconfig.step_width
    per_inst = [recursive_factors(inst, rconfig.m, gamma, r, rconfig.target) for inst in instances]
    factors = [np.stack([f[layer] for f in per_inst]) for layer in range(len(schedule))]
    masks = np.stack([core.build_imbalance_table(inst).values == rconfig.target for inst in instances])
    rep = _Replay(factors, schedule, rconfig.diffusion, rconfig.echo, gamma)
    state = core.init_uniform(instances[0].n, batch=len(instances))

    probs, norms, layers = [], [], []
    for layer, T in enumerate(schedule):
        p_rows, n_rows = [], []

        def record(s):
            p2 = np.abs(s.amps) ** 2
            p_rows.append(np.sum(p2 * masks, axis=-1))
            n_rows.append(np.sum(p2, axis=-1))

        record(state)
        before_o, before_r = rep.oracle_calls, rep.reflection_calls
        rep.grover(state, layer, after_cycle=record)
        q = (rep.oracle_calls - before_o) + (rep.reflection_calls - before_r)
        layers.append({"l": layer + 1, "T_l": T, "tau_l": q // T, "queries": q})
        probs.append(np.stack(p_rows, axis=-1))
        norms.append(np.stack(n_rows, axis=-1))

    ledger = QueryLedger(layers, rep.oracle_calls, rep.reflection_calls,
                         rep.oracle_calls / gamma, rconfig.diffusion.kind == "generalized")
    if ledger.reflection_charged:
        ledger.physical_time += rep.reflection_calls / rconfig.diffusion.gamma_d
    else:
        ledger.reflection_queries = 0
    return probs, norms, ledger


def run_recursive(instance: ProblemInstance, rconfig: RecursiveConfig, r: float = 0.0):
    """Single-instance recursive run: ``(list of per-layer RunTrace, QueryLedger)``."""
    probs, norms, ledger = simulate_recursive([instance], rconfig, r)
    return [RunTrace(p[0], q[0]) for p, q in zip(probs, norms)], ledger


def simulate_recursive_ensemble(instances, rconfig: RecursiveConfig, r: float = 0.0, threads: int = 1):
    """Final success probability per instance plus the (shared) ledger."""
    ledgers = []

    def work(chunk):
        probs, _, ledger = simulate_recursive(chunk, rconfig, r)
        ledgers.append(ledger)
        return list(probs[-1][:, -1])

    p_final = np.array(map_chunks(work, instances, threads))
    return p_final, ledgers[0]
