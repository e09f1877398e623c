"""Ensemble sweeps, quantile statistics and the scalar optimizations over gamma and schedules.

All optimizers are deterministic: golden-section search and bisection on
``log2(gamma)``, coordinate descent on integer schedules.  Every objective
evaluation is a full ensemble simulation on a fixed, pre-generated ensemble,
so repeated calls give bit-identical answers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analytics, core, runner
from .analytics import decay_per_query, trials_needed
from .core import DiffusionSpec
from .instances import EnsembleSpec, generate_ensemble
from .runner import RecursiveConfig, RunConfig

GAMMA_RULES = ("fixed", "pow2k", "crit", "optimize")
OBJECTIVES = ("min_median_T_total", "max_Q")
DEFINITIONS = ("median_total_queries", "max_median_probability")
DEFAULT_QUANTILES = (0.01, 0.25, 0.5, 0.75, 0.99)
INVPHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class SweepSpec:
    n_values: tuple[int, ...]
    k_values: tuple  # bit depths, or k_eff values when real_weights
    gamma_rule: str = "crit"
    gamma: float | None = None
    rho: float = math.inf
    algorithm: str = "standard"  # "standard" | "recursive"
    m: int | None = None
    schedule: tuple[int, ...] | None = None
    optimize_schedule: bool = False
    count: int = 500
    seed: int = 0
    postselect: str = "has_solution"
    epsilon: float = 0.01
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    t_max: int | None = None
    real_weights: bool = False
    diagonal: bool = False  # pair n_values with k_values instead of taking the product
    echo: bool = True
    diffusion: DiffusionSpec = DiffusionSpec()
    objective: str = "min_median_T_total"
    definition: str = "median_total_queries"
    threads: int = 1

    def __post_init__(self):
        if not self.n_values or not self.k_values:
            raise ValueError("sweep grid is empty")
        if self.gamma_rule not in GAMMA_RULES:
            raise ValueError(f"gamma_rule must be one of {GAMMA_RULES}")
        if self.gamma_rule == "fixed" and self.gamma is None:
            raise ValueError("gamma_rule 'fixed' needs gamma")
        if self.algorithm not in ("standard", "recursive"):
            raise ValueError("algorithm must be 'standard' or 'recursive'")
        if self.algorithm == "recursive" and not self.m:
            raise ValueError("recursive sweeps need m")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.definition not in DEFINITIONS:
            raise ValueError(f"definition must be one of {DEFINITIONS}")
        if any(not 0 <= q <= 1 for q in self.quantiles):
            raise ValueError("quantiles must lie in [0, 1]")
        if self.diagonal and len(self.n_values) != len(self.k_values):
            raise ValueError("diagonal sweeps need equally long n and k lists")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")

    def points(self):
        if self.diagonal:
            return list(zip(self.n_values, self.k_values))
        return [(n, k) for n in self.n_values for k in self.k_values]


@dataclass
class SweepRecord:
    n: int
    k: float
    gamma: float
    rho: float
    r: float
    algorithm: str
    count: int
    accepted: int
    attempts: int
    T_opt: int | None = None
    definition: str = "median_total_queries"
    P_opt_median: float = math.nan
    T_total_median: float = math.nan
    physical_time_median: float = math.nan
    Q: dict = field(default_factory=dict)
    mean_N_A: float = math.nan
    m: int | None = None
    schedule: tuple | None = None
    ledger_total: int | None = None
    flags: tuple[str, ...] = ()

    @property
    def Q_median(self) -> float:
        return self.Q.get(0.5, math.nan)

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    def to_row(self) -> dict:
        d = asdict(self)
        q = d.pop("Q")
        for key in sorted(q):
            d[f"Q_q{round(100 * key):02d}"] = q[key]
        d["schedule"] = "-".join(map(str, self.schedule)) if self.schedule else ""
        d["flags"] = ";".join(self.flags)
        return d


# --------------------------------------------------------------------------
# ensemble evaluation


@dataclass
class Ensemble:
    """A fixed list of same-size instances with their success-set sizes."""
    instances: list
    n_sol: np.ndarray
    n: int
    k: int | None
    attempts: int = 0
    complete: bool = True

    @property
    def N(self) -> int:
        return 1 << self.n


def make_ensemble(n: int, k, count: int, seed: int, postselect: str = "has_solution") -> Ensemble:
    ens = generate_ensemble(EnsembleSpec(n, k, count, seed, postselect))
    n_sol = []
    for rep in ens.reports:
        if k is None:
            n_sol.append(len(rep.argmin_set))
        else:
            n_sol.append(rep.num_solutions)
    return Ensemble(ens.instances, np.array(n_sol, dtype=int), n, k, ens.attempts, ens.complete)


def auto_t_max(n: int) -> int:
    """Generous iteration cap: 1.5x the single-solution Grover optimum plus slack."""
    return int(math.ceil(1.5 * (math.pi / 4) * math.sqrt(1 << n))) + 4


def quantiles(values, qs=DEFAULT_QUANTILES) -> dict:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {q: math.nan for q in qs}
    return {q: float(v) for q, v in zip(qs, np.quantile(values, qs))}


@dataclass
class StandardEval:
    outcome: runner.GroverOutcome
    probs: np.ndarray
    gamma: float
    r: float

    @property
    def T_total_median(self) -> float:
        return self.outcome.T_total_median

    @property
    def Q_median(self) -> float:
        return self.outcome.Q_median


def evaluate_standard(ens: Ensemble, gamma: float, rho: float = math.inf, epsilon: float = 0.01,
                      t_max: int | None = None, echo: bool = True,
                      diffusion: DiffusionSpec = DiffusionSpec(),
                      definition: str = "median_total_queries", threads: int = 1) -> StandardEval:
    """Simulate the ensemble at one step width and pick ``T_opt``."""
    r = decay_per_query(rho, gamma)
    if diffusion.kind == "generalized" and not math.isinf(rho):
        diffusion = DiffusionSpec("generalized", diffusion.gamma_d, decay_per_query(rho, diffusion.gamma_d))
    cfg = RunConfig(gamma=gamma, r=r, t_max=t_max or auto_t_max(ens.n), echo=echo,
                    diffusion=diffusion, epsilon=epsilon)
    probs, _ = runner.simulate_ensemble(ens.instances, cfg, threads)
    pick = runner.optimal_iterations if definition == "median_total_queries" else runner.optimal_iterations_star
    outcome = pick(probs, epsilon, n_sol=ens.n_sol, N=ens.N)
    return StandardEval(outcome, probs, gamma, r)


@dataclass
class RecursiveEval:
    schedule: tuple[int, ...]
    p_final: np.ndarray
    ledger: runner.QueryLedger
    T_total: np.ndarray  # per instance, ledger total times trials needed
    physical_time: np.ndarray
    Q: np.ndarray

    @property
    def T_total_median(self) -> float:
        return float(np.median(self.T_total))

    @property
    def Q_median(self) -> float:
        return float(np.median(self.Q))


def _recursive_eval(ens: Ensemble, schedule, p_final, ledger, epsilon) -> RecursiveEval:
    M = trials_needed(p_final, epsilon)
    total = ledger.total * M
    phys = ledger.physical_time * M
    Q = runner.speedup(p_final, ledger.total, ens.n_sol, ens.N)
    return RecursiveEval(tuple(schedule), p_final, ledger, total, phys, np.atleast_1d(Q))


def evaluate_recursive(ens: Ensemble, m: int, gamma: float | None = None, schedule=None,
                       rho: float = math.inf, epsilon: float = 0.01,
                       diffusion: DiffusionSpec = DiffusionSpec(), threads: int = 1) -> RecursiveEval:
    rc = RecursiveConfig(m=m, gamma=gamma, schedule=tuple(schedule) if schedule else None,
                         epsilon=epsilon, diffusion=diffusion)
    r = decay_per_query(rho, rc.step_width)
    p_final, ledger = runner.simulate_recursive_ensemble(ens.instances, rc, r, threads)
    sched = rc.schedule or runner.default_schedule(m, runner.layer_count(ens.k, m) * m, ens.n)
    return _recursive_eval(ens, sched, p_final, ledger, epsilon)


def _final_layer_scan(ens: Ensemble, m: int, gamma: float, prefix, t_last_max: int, rho: float,
                      epsilon: float, diffusion: DiffusionSpec, threads: int):
    """Evaluate every final-layer length ``1..t_last_max`` for a fixed prefix in one pass."""
    sched = tuple(prefix) + (t_last_max,)
    rc = RecursiveConfig(m=m, gamma=gamma, schedule=sched, epsilon=epsilon, diffusion=diffusion)
    r = decay_per_query(rho, rc.step_width)

    def work(chunk):
        probs, _, _ = runner.simulate_recursive(chunk, rc, r)
        return list(probs[-1])

    final = np.array(runner.map_chunks(work, ens.instances, threads))  # (B, t_last_max + 1)
    taus = runner.query_recurrence(sched, 1 if diffusion.kind == "generalized" else 0)
    base = sum(T * t for T, t in zip(prefix, taus[:-1]))
    out = []
    for T in range(1, t_last_max + 1):
        total = base + T * taus[-1]
        out.append((T, total, final[:, T]))
    return out


# --------------------------------------------------------------------------
# scalar optimizers


@dataclass
class OptimizeResult:
    gamma: float
    value: float
    trace: list  # (log2 gamma, objective) in evaluation order
    flags: tuple[str, ...] = ()
    evaluation: object = None


def _objective_value(ev, objective: str) -> float:
    if objective == "min_median_T_total":
        return ev.T_total_median
    return -ev.Q_median


def golden_section(f, lo: float, hi: float, tol: float = 0.05, cache: dict | None = None):
    """Minimize ``f`` on ``[lo, hi]``; returns ``(x, f(x))``.  Values are cached by ``x``."""
    cache = {} if cache is None else cache

    def F(x):
        x = round(x, 12)
        if x not in cache:
            cache[x] = f(x)
        return cache[x]

    a, b = lo, hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    while b - a > tol:
        if F(c) <= F(d):
            b, d = d, c
            c = b - INVPHI * (b - a)
        else:
            a, c = c, d
            d = a + INVPHI * (b - a)
    best = min((x for x in (a, b, c, d)), key=lambda x: (F(x), x))
    return best, F(best)


def optimize_gamma(ens: Ensemble, rho: float = math.inf, objective: str = "min_median_T_total",
                   epsilon: float = 0.01, t_max: int | None = None, diffusion: DiffusionSpec = DiffusionSpec(),
                   lo: float | None = None, hi: float = 0.0, tol: float = 0.05,
                   threads: int = 1) -> OptimizeResult:
    """Step width minimizing the objective, searched on ``log2(gamma)``.

    Golden-section search over ``[-(k+2), 0]`` is cross-checked against an
    integer grid of ``log2(gamma)``; if a grid point beats it the objective is
    not unimodal, the search restarts around that point and the result is
    flagged ``non_unimodal``.  An optimum on the narrow end of the interval
    is flagged ``at_lower_bound``.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    k = ens.k if ens.k is not None else ens.n
    lo = -(k + 2) if lo is None else lo
    trace = []
    evals = {}

    def f(x):
        ev = evaluate_standard(ens, 2.0 ** x, rho, epsilon, t_max, diffusion=diffusion, threads=threads)
        evals[x] = ev
        v = _objective_value(ev, objective)
        v = v if math.isfinite(v) else 1e300
        trace.append((x, v))
        return v

    cache = {}
    x, v = golden_section(f, lo, hi, tol, cache)
    flags = []
    grid = [float(g) for g in range(int(math.ceil(lo)), int(math.floor(hi)) + 1)]
    gv = {g: cache.get(round(g, 12)) if round(g, 12) in cache else None for g in grid}
    for g in grid:
        if gv[g] is None:
            gv[g] = f(g)
            cache[round(g, 12)] = gv[g]
    g_best = min(grid, key=lambda g: (gv[g], g))
    if gv[g_best] < v:
        flags.append("non_unimodal")
        x, v = golden_section(f, max(lo, g_best - 1), min(hi, g_best + 1), tol, cache)
        if gv[g_best] < v:
            x, v = g_best, gv[g_best]
    if x - lo <= tol:
        # objective still improving at the narrowest step searched
        flags.append("at_lower_bound")
    ev = evals.get(round(x, 12)) or evals.get(x)
    if ev is None:
        ev = evaluate_standard(ens, 2.0 ** x, rho, epsilon, t_max, diffusion=diffusion, threads=threads)
    return OptimizeResult(2.0 ** x, v, trace, tuple(flags), ev)


def gamma_for_target_popt(ens: Ensemble, target: float, rho: float = math.inf, epsilon: float = 0.01,
                          tol: float = 0.01, t_max: int | None = None, max_iter: int = 60,
                          threads: int = 1) -> OptimizeResult:
    """Bisection on ``log2(gamma)`` for a median ``P_opt`` equal to ``target``.

    The bracket ``[-(k+4), 0]`` is verified first; an unreachable target is
    flagged ``unreachable`` and the narrowest step width is returned.
    """
    if not 0 < target < 1:
        raise ValueError("target probability must lie in (0, 1)")
    k = ens.k if ens.k is not None else ens.n
    trace = []

    def P(x):
        ev = evaluate_standard(ens, 2.0 ** x, rho, epsilon, t_max, threads=threads)
        p = ev.outcome.P_opt_median
        trace.append((x, p))
        return p

    lo, hi = float(-(k + 4)), 0.0
    p_lo, p_hi = P(lo), P(hi)
    if p_lo < target - tol:
        return OptimizeResult(2.0 ** lo, p_lo, trace, ("unreachable",))
    if p_lo <= target + tol:
        return OptimizeResult(2.0 ** lo, p_lo, trace)
    if p_hi >= target - tol:
        flags = () if p_hi <= target + tol else ("at_upper_bound",)
        return OptimizeResult(2.0 ** hi, p_hi, trace, flags)
    x, p = lo, p_lo
    for _ in range(max_iter):
        x = 0.5 * (lo + hi)
        p = P(x)
        if abs(p - target) < tol:
            return OptimizeResult(2.0 ** x, p, trace)
        # narrower steps capture more reliably: P_opt falls as gamma grows
        if p > target:
            lo = x
        else:
            hi = x
        if hi - lo < 1e-9:
            break
    return OptimizeResult(2.0 ** x, p, trace, ("tolerance_not_met",))


@dataclass
class ScheduleResult:
    schedule: tuple[int, ...]
    T_total_median: float
    trace: list
    evaluation: object = None


def optimize_schedule(ens: Ensemble, m: int, gamma: float | None = None, rho: float = math.inf,
                      epsilon: float = 0.01, start=None, diffusion: DiffusionSpec = DiffusionSpec(),
                      max_sweeps: int = 20, threads: int = 1) -> ScheduleResult:
    """Coordinate descent over ``T_l`` (steps of +-1 and +-2) minimizing median ``T_total``.

    The final layer is scanned exhaustively up to twice its default length,
    which costs a single simulation per prefix.  With one layer this is the
    plain ``T_opt`` search.  Ties go to the smaller ``T_l``.
    """
    gamma = gamma if gamma is not None else 2.0 ** (-m - 1)
    L = runner.layer_count(ens.k, m)
    default = runner.default_schedule(m, L * m, ens.n)
    sched = list(start or default)
    if len(sched) != L:
        raise ValueError(f"schedule needs {L} layers")
    t_last_max = max(2 * default[-1], sched[-1] + 2)
    trace = []
    cache = {}

    def best_for_prefix(prefix):
        prefix = tuple(prefix)
        if prefix not in cache:
            rows = _final_layer_scan(ens, m, gamma, prefix, t_last_max, rho, epsilon, diffusion, threads)
            best = None
            for T, total, p in rows:
                med = float(np.median(total * trials_needed(p, epsilon)))
                if best is None or med < best[1]:
                    best = (T, med)
            cache[prefix] = best
            trace.append((prefix + (best[0],), best[1]))
        return cache[prefix]

    prefix = sched[:-1]
    T_last, value = best_for_prefix(prefix)
    for _ in range(max_sweeps):
        changed = False
        for layer in range(L - 1):
            options = sorted({max(1, prefix[layer] + d) for d in (-2, -1, 0, 1, 2)})
            scores = []
            for t in options:
                trial = list(prefix)
                trial[layer] = t
                tl, v = best_for_prefix(trial)
                scores.append((v, t, tl))
            v, t, tl = min(scores)
            if v < value and t != prefix[layer]:
                prefix[layer] = t
                T_last, value = tl, v
                changed = True
        if not changed:
            break
    schedule = tuple(prefix) + (T_last,)
    ev = evaluate_recursive(ens, m, gamma, schedule, rho, epsilon, diffusion, threads)
    return ScheduleResult(schedule, ev.T_total_median, trace, ev)


# --------------------------------------------------------------------------
# sweeps


def resolve_gamma(rule: str, n: int, k, gamma: float | None = None) -> float:
    if rule == "fixed":
        return float(gamma)
    if rule == "pow2k":
        return 2.0 ** (-k)
    if rule == "crit":
        return analytics.critical_step_width(n, k)
    raise ValueError(f"gamma rule {rule!r} has no closed form")


def _flagged_record(spec: SweepSpec, n, k, ens: Ensemble, gamma: float, flags) -> SweepRecord:
    return SweepRecord(
        n=n, k=k, gamma=gamma, rho=spec.rho, r=decay_per_query(spec.rho, gamma) if gamma == gamma else math.nan,
        algorithm=spec.algorithm, count=spec.count, accepted=len(ens.instances), attempts=ens.attempts,
        m=spec.m, Q={q: math.nan for q in spec.quantiles}, flags=tuple(flags))


def run_point(spec: SweepSpec, n: int, k) -> SweepRecord:
    """Generate, postselect, simulate and aggregate one grid point."""
    if spec.real_weights:
        ens = make_ensemble(n, None, spec.count, spec.seed, "none")
        ens.k = None
        k_bits = None
    else:
        ens = make_ensemble(n, int(k), spec.count, spec.seed, spec.postselect)
        k_bits = int(k)
    flags = []
    if not ens.complete:
        flags.append("incomplete_postselection")
    solvable = ens.n_sol > 0
    if not np.all(solvable):
        flags.append(f"excluded_unsolvable={int(np.sum(~solvable))}")
        ens = Ensemble([i for i, s in zip(ens.instances, solvable) if s], ens.n_sol[solvable], n, ens.k,
                       ens.attempts, ens.complete)
    if spec.real_weights and np.any(ens.n_sol > 2):
        flags.append("argmin_ties")

    if spec.algorithm == "recursive":
        gamma = spec.gamma if spec.gamma is not None else 2.0 ** (-spec.m - 1)
    elif spec.real_weights:
        gamma = 2.0 ** (-float(k)) if spec.gamma_rule != "fixed" else float(spec.gamma)
    elif spec.gamma_rule == "optimize":
        gamma = math.nan
    else:
        gamma = resolve_gamma(spec.gamma_rule, n, k_bits, spec.gamma)

    if not ens.instances:
        flags.append("no_instances")
        return _flagged_record(spec, n, k, ens, gamma, flags)

    rec = SweepRecord(n=n, k=k, gamma=gamma, rho=spec.rho, r=math.nan, algorithm=spec.algorithm,
                      count=spec.count, accepted=len(ens.instances), attempts=ens.attempts,
                      definition=spec.definition, mean_N_A=float(np.mean(ens.n_sol)), m=spec.m)

    if spec.algorithm == "recursive":
        if spec.optimize_schedule:
            res = optimize_schedule(ens, spec.m, gamma, spec.rho, spec.epsilon, spec.schedule,
                                    spec.diffusion, threads=spec.threads)
            ev = res.evaluation
        else:
            ev = evaluate_recursive(ens, spec.m, gamma, spec.schedule, spec.rho, spec.epsilon,
                                    spec.diffusion, spec.threads)
        rec.r = decay_per_query(spec.rho, gamma)
        rec.schedule = ev.schedule
        rec.ledger_total = ev.ledger.total
        rec.T_total_median = ev.T_total_median
        rec.physical_time_median = float(np.median(ev.physical_time))
        rec.P_opt_median = float(np.median(ev.p_final))
        rec.Q = quantiles(ev.Q, spec.quantiles)
    else:
        if spec.gamma_rule == "optimize" and not spec.real_weights:
            res = optimize_gamma(ens, spec.rho, spec.objective, spec.epsilon, spec.t_max, spec.diffusion,
                                 threads=spec.threads)
            gamma = res.gamma
            flags.extend(res.flags)
            ev = res.evaluation
        else:
            ev = evaluate_standard(ens, gamma, spec.rho, spec.epsilon, spec.t_max, spec.echo, spec.diffusion,
                                   spec.definition, spec.threads)
        out = ev.outcome
        rec.gamma = gamma
        rec.r = ev.r
        rec.T_opt = out.T_opt
        rec.P_opt_median = out.P_opt_median
        rec.T_total_median = out.T_total_median
        rec.physical_time_median = out.T_total_median / gamma
        rec.Q = quantiles(out.Q, spec.quantiles)
        t_cap = spec.t_max or auto_t_max(n)
        if out.T_opt == t_cap:
            flags.append("T_opt_at_cap")
    rec.flags = tuple(flags)
    return rec


def run_sweep(spec: SweepSpec) -> list[SweepRecord]:
    """One record per grid point, in grid order; a pure function of ``spec``."""
    return [run_point(spec, n, k) for n, k in spec.points()]


def real_weight_sweep(n_values, keff_values, count: int = 500, seed: int = 0, epsilon: float = 0.01,
                      quantiles_: tuple = DEFAULT_QUANTILES, threads: int = 1) -> list[SweepRecord]:
    """Real-valued weights; success means reaching the minimal ``|S_z|``."""
    spec = SweepSpec(tuple(n_values), tuple(keff_values), gamma_rule="pow2k", count=count, seed=seed,
                     postselect="none", epsilon=epsilon, quantiles=quantiles_, real_weights=True,
                     threads=threads)
    return run_sweep(spec)


# --------------------------------------------------------------------------
# capture range


@dataclass
class CaptureHistogram:
    gammas: np.ndarray
    sz: np.ndarray  # S_z values of the columns
    matrix: np.ndarray  # P(S_z | gamma) / P(0 | gamma), ensemble averaged
    T_opt: np.ndarray
    initial: np.ndarray  # normalized distribution of the uniform state

    def contour_widths(self, level: float = 0.5) -> np.ndarray:
        return np.array([contour_half_width(self.sz, row, level) for row in self.matrix])


def contour_half_width(sz, row, level: float = 0.5) -> float:
    """Smallest ``S_z > 0`` where the normalized distribution falls below ``level`` (interpolated)."""
    pos = sz >= 0
    x, y = sz[pos], row[pos]
    for i in range(1, len(x)):
        if y[i] < level:
            y0, y1 = y[i - 1], y[i]
            return float(x[i - 1] + (y0 - level) / (y0 - y1) * (x[i] - x[i - 1]))
    return float(x[-1])


def capture_histogram(n: int, k: int, gammas, count: int = 500, seed: int = 0, epsilon: float = 0.01,
                      t_max: int | None = None, ens: Ensemble | None = None, threads: int = 1) -> CaptureHistogram:
    """Ensemble-averaged ``P(S_z)`` after ``T_opt(gamma)``, normalized to the ``S_z = 0`` bin.

    No postselection; ``T_opt`` is chosen on the instances that do have
    solutions.
    """
    ens = ens or make_ensemble(n, k, count, seed, "none")
    t_max = t_max or auto_t_max(n)
    lim = n * (1 << k)
    keys = np.arange(-lim, lim + 1)
    tables = [core.build_imbalance_table(inst) for inst in ens.instances]
    solvable = [i for i, s in enumerate(ens.n_sol) if s > 0]
    if not solvable:
        raise ValueError("no instance in the ensemble has a solution")
    rows, topts = [], []

    def hist(amps_rows):
        acc = np.zeros(keys.size)
        for tab, a in zip(tables, amps_rows):
            acc += np.bincount(tab.values + lim, weights=np.abs(a) ** 2, minlength=keys.size)
        return acc / len(tables)

    init = hist(np.full((len(tables), 1 << n), 2.0 ** (-n / 2)))
    for g in gammas:
        cfg = RunConfig(gamma=float(g), t_max=t_max)
        sub = [ens.instances[i] for i in solvable]
        probs, _ = runner.simulate_ensemble(sub, cfg, threads)
        T = runner.optimal_iterations(probs, epsilon).T_opt
        topts.append(T)
        amps = []
        for chunk in runner._chunks(list(range(len(tables)))):
            vals = np.stack([tables[i].values for i in chunk])
            f = core.oracle_factors(core.ImbalanceTable(vals, k), core.OracleSpec(float(g)))
            state = core.init_uniform(n, batch=len(chunk))
            fc = np.conj(f)
            for t in range(1, T + 1):
                state.amps *= f if t % 2 else fc
                core.apply_diffusion(state)
            amps.extend(state.amps)
        rows.append(hist(amps))
    rows = np.array(rows)
    occupied = (rows.sum(axis=0) + init) > 0
    sz = keys[occupied] / 2.0 ** (k + 1)
    mat = rows[:, occupied] / rows[:, [lim]]
    init_n = init[occupied] / init[lim]
    return CaptureHistogram(np.asarray(gammas, dtype=float), sz, mat, np.array(topts), init_n)
