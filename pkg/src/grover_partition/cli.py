"""Command-line entry point: ``grover-partition {gen,run,recursive,sweep,analyze,classical}``.

Exit codes: 0 on success, 2 on flag errors (with usage), 1 on runtime errors
(a JSON object on stderr).  Every file output is written atomically and gets
a ``<out>.manifest.json`` with the argv and fully resolved configuration.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict

import numpy as np

from . import analytics, experiments, instances, io, runner
from .core import DiffusionSpec
from .instances import ENUMERATION_CAP

THREADS_ENV = "GROVER_PARTITION_THREADS"


class ConfigError(ValueError):
    """Contradictory or out-of-range flags; reported with exit code 2."""


# --------------------------------------------------------------------------
# config normalization


def _float(x):
    if x is None:
        return None
    return float(x)


def validate_config(config: dict) -> dict:
    """Resolve step-width rules and decay parameters; idempotent.

    Recognized keys: n, k, gamma, gamma_rule (fixed | pow2k | crit), r, rho,
    threads.  Missing keys are left alone.
    """
    c = {key: v for key, v in config.items() if v is not None or key == "threads"}
    n, k = c.get("n"), c.get("k")
    if n is not None:
        n = int(n)
        if n < 1:
            raise ConfigError("--n must be >= 1")
        if n > ENUMERATION_CAP:
            raise ConfigError(f"--n {n} exceeds the state-vector cap of {ENUMERATION_CAP}")
        c["n"] = n
    if k is not None:
        c["k"] = k = int(k)
        if k < 1 or k > instances.MAX_BIT_DEPTH:
            raise ConfigError(f"--k must lie in [1, {instances.MAX_BIT_DEPTH}]")

    rule = c.get("gamma_rule")
    gamma = _float(c.get("gamma"))
    if rule in (None, "fixed"):
        if rule == "fixed" and gamma is None:
            raise ConfigError("--gamma-rule fixed needs --gamma")
    elif rule == "pow2k":
        if k is None:
            raise ConfigError("--gamma-rule pow2k needs --k")
        g = 2.0 ** (-k)
        if gamma is not None and gamma != g:
            raise ConfigError(f"--gamma {gamma} contradicts --gamma-rule pow2k (2^-{k})")
        gamma = g
        rule = "fixed"
    elif rule == "crit":
        if n is None or k is None:
            raise ConfigError("--gamma-rule crit needs --n and --k")
        g = float(analytics.critical_step_width(n, k))
        if gamma is not None and gamma != g:
            raise ConfigError(f"--gamma {gamma} contradicts --gamma-rule crit")
        gamma = g
        rule = "fixed"
    elif rule != "optimize":
        raise ConfigError(f"unknown --gamma-rule {rule!r}")
    if gamma is not None and not gamma > 0:
        raise ConfigError("--gamma must be > 0")
    if rule is not None:
        c["gamma_rule"] = rule
    if gamma is not None:
        c["gamma"] = gamma

    r, rho = _float(c.get("r")), _float(c.get("rho"))
    if rho is not None and not rho > 0:
        raise ConfigError("--rho must be > 0 (use inf for no decay)")
    if r is not None and r < 0:
        raise ConfigError("--r must be >= 0")
    if gamma is not None:
        if rho is not None:
            implied = analytics.decay_per_query(rho, gamma)
            if r is not None and not math.isclose(r, implied, rel_tol=1e-9, abs_tol=1e-15):
                raise ConfigError(f"--r {r} and --rho {rho} disagree at gamma={gamma} (need r = 1/(rho*gamma) = {implied})")
            r = implied
        elif r is not None:
            rho = math.inf if r == 0 else 1.0 / (r * gamma)
    if r is not None:
        c["r"] = r
    if rho is not None:
        c["rho"] = rho

    if "threads" in c:
        t = c["threads"]
        if t is None:
            t = int(os.environ.get(THREADS_ENV, "1") or 1)
        t = int(t)
        if t < 0:
            raise ConfigError("--threads must be >= 0")
        c["threads"] = t
    return c


def resolved_threads(t: int) -> int:
    return (os.cpu_count() or 1) if t == 0 else t


# --------------------------------------------------------------------------
# parser


def _floatarg(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}")


def _intlist(s: str):
    try:
        return tuple(int(x) for x in s.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like 2,3,2: {s!r}")


def _floatlist(s: str):
    try:
        return tuple(float(x) for x in s.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers: {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grover-partition",
                                description="Grover search for number partitioning with a phase-step oracle")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (0 = auto; default ${THREADS_ENV} or 1)")
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    def ensemble_flags(sp):
        sp.add_argument("--instances", help="JSON-lines instance file")
        sp.add_argument("--n", type=int)
        sp.add_argument("--k", type=int)
        sp.add_argument("--count", type=int, default=10)
        sp.add_argument("--postselect", default="none")
        sp.add_argument("--real", action="store_true", help="real-valued weights in (0, 1]")

    def physics_flags(sp):
        sp.add_argument("--gamma", type=_floatarg)
        sp.add_argument("--gamma-rule", choices=("fixed", "pow2k", "crit"))
        sp.add_argument("--rho", type=_floatarg)
        sp.add_argument("--r", type=_floatarg)
        sp.add_argument("--epsilon", type=_floatarg, default=0.01)
        sp.add_argument("--diffusion", choices=("ideal", "generalized"), default="ideal")
        sp.add_argument("--gamma-d", type=_floatarg, default=0.5)

    g = sub.add_parser("gen", help="generate an instance ensemble (JSON lines)")
    common(g, out_required=True)
    ensemble_flags(g)

    r = sub.add_parser("run", help="standard algorithm traces")
    common(r, out_required=True)
    ensemble_flags(r)
    physics_flags(r)
    r.add_argument("--tmax", type=int, default=64)
    r.add_argument("--no-echo", action="store_true")
    r.add_argument("--ideal-oracle", action="store_true")
    r.add_argument("--abstract", type=int, metavar="N_QUBITS", help="single marked state, ideal oracle")
    r.add_argument("--outcome", help="also write the T_opt / speedup summary CSV here")
    r.add_argument("--definition", choices=experiments.DEFINITIONS, default="median_total_queries")

    rc = sub.add_parser("recursive", help="recursive (layered) algorithm with query ledger")
    common(rc, out_required=True)
    ensemble_flags(rc)
    physics_flags(rc)
    rc.add_argument("--m", type=int, required=True)
    rc.add_argument("--schedule", type=_intlist)
    rc.add_argument("--optimize-schedule", action="store_true")

    s = sub.add_parser("sweep", help="grid sweep with quantile statistics")
    common(s, out_required=True)
    s.add_argument("--spec", help="JSON file with SweepSpec fields (flags override)")
    s.add_argument("--n", type=_intlist)
    s.add_argument("--k", type=_floatlist)
    s.add_argument("--gamma", type=_floatarg)
    s.add_argument("--gamma-rule", choices=experiments.GAMMA_RULES)
    s.add_argument("--rho", type=_floatarg)
    s.add_argument("--algorithm", choices=("standard", "recursive"))
    s.add_argument("--m", type=int)
    s.add_argument("--schedule", type=_intlist)
    s.add_argument("--optimize-schedule", action="store_true", default=None)
    s.add_argument("--count", type=int)
    s.add_argument("--postselect")
    s.add_argument("--epsilon", type=_floatarg)
    s.add_argument("--quantiles", type=_floatlist)
    s.add_argument("--tmax", type=int)
    s.add_argument("--real", action="store_true", default=None)
    s.add_argument("--diagonal", action="store_true", default=None)
    s.add_argument("--objective", choices=experiments.OBJECTIVES)
    s.add_argument("--definition", choices=experiments.DEFINITIONS)

    a = sub.add_parser("analyze", help="evaluate a closed-form model")
    a.add_argument("--formula", required=True, choices=sorted(analytics.FORMULAS))
    for name in ("n", "k", "gamma", "r", "rho", "sigma", "mu", "chibar", "P", "eps", "N", "N_A",
                 "eta", "m", "C", "D", "w_rms"):
        a.add_argument("--" + name.replace("_", "-"), dest=name, type=_floatarg)
    a.add_argument("--out")
    a.add_argument("--format", choices=("csv", "json"), default="csv")

    c = sub.add_parser("classical", help="CKK existence, exact counts and classical baselines")
    common(c)
    ensemble_flags(c)
    c.add_argument("--P", type=_floatarg, default=0.5, help="target success probability for quantiles")
    return p


# --------------------------------------------------------------------------
# helpers


def _load_instances(args) -> list:
    if args.instances:
        return instances.read_jsonl(args.instances)
    if args.n is None or (args.k is None and not args.real):
        raise ConfigError("give --instances, or --n with --k (or --real)")
    spec = instances.EnsembleSpec(args.n, None if args.real else args.k, args.count, args.seed, args.postselect)
    ens = instances.generate_ensemble(spec)
    if not ens.complete:
        raise RuntimeError(f"postselection yielded {len(ens.instances)} of {args.count} instances "
                           f"after {ens.attempts} attempts")
    return ens.instances


def _write(path, fmt_name: str, header, rows):
    if fmt_name == "json":
        io.write_json(path, [dict(zip(header, row)) for row in rows])
    else:
        io.write_csv(path, header, rows)


def _emit_manifest(out, command: str, argv, config: dict, outputs, extra=None):
    man = io.manifest(command, config, outputs, extra)
    man["argv"] = list(argv)
    io.write_json(io.manifest_path(out), man)


def _diffusion(args, rho):
    if args.diffusion == "ideal":
        return DiffusionSpec()
    r_d = analytics.decay_per_query(rho, args.gamma_d) if rho is not None else 0.0
    return DiffusionSpec("generalized", args.gamma_d, r_d)


def _groups(insts):
    groups = {}
    for i, inst in enumerate(insts):
        key = (inst.n, getattr(inst, "k", None) if isinstance(inst, instances.ProblemInstance) else None)
        groups.setdefault(key, []).append(i)
    return groups


def _n_sol(inst) -> int:
    rep = instances.count_solutions(inst)
    if isinstance(inst, instances.RealInstance):
        return len(rep.argmin_set)
    return rep.num_solutions


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args, argv):
    if args.n is None or (args.k is None and not args.real):
        raise ConfigError("gen needs --n and --k (or --real)")
    validate_config({"n": args.n, "k": args.k})
    spec = instances.EnsembleSpec(args.n, None if args.real else args.k, args.count, args.seed, args.postselect)
    ens = instances.generate_ensemble(spec)
    io.atomic_write_text(args.out, instances.dumps_jsonl(ens.instances))
    cfg = asdict(spec)
    _emit_manifest(args.out, "gen", argv, cfg, [args.out],
                   {"attempts": ens.attempts, "complete": ens.complete, "indices": ens.indices})
    flag = "" if ens.complete else " (INCOMPLETE: attempt budget exhausted)"
    print(f"gen: wrote {len(ens.instances)} instances to {args.out} after {ens.attempts} attempts{flag}")
    return 0


def cmd_run(args, argv):
    cfg = {"gamma": args.gamma, "gamma_rule": args.gamma_rule, "rho": args.rho, "r": args.r,
           "threads": args.threads}
    if args.abstract is not None:
        cfg.update(n=args.abstract)
        cfg = validate_config(cfg)
        gamma = cfg.get("gamma", 1.0)
        rc = runner.RunConfig(gamma=gamma, t_max=args.tmax, echo=not args.no_echo)
        trace = runner.run_abstract(args.abstract, rc)
        rows = [(0, t, p, q) for t, (p, q) in enumerate(zip(trace.probs, trace.norms))]
        _write(args.out, args.format, ("instance_id", "T", "P_T", "norm"), rows)
        _emit_manifest(args.out, "run", argv, {**cfg, "abstract": args.abstract, "t_max": args.tmax}, [args.out])
        print(f"run: abstract N={1 << args.abstract}, P_max={trace.probs.max():.6f} at T={int(trace.probs.argmax())}")
        return 0

    insts = _load_instances(args)
    first = insts[0]
    cfg.update(n=first.n, k=getattr(first, "k", None) if isinstance(first, instances.ProblemInstance) else None)
    cfg = validate_config(cfg)
    if "gamma" not in cfg:
        raise ConfigError("run needs --gamma or --gamma-rule")
    gamma, r = cfg["gamma"], cfg.get("r", 0.0)
    diffusion = _diffusion(args, cfg.get("rho"))
    rc = runner.RunConfig(gamma=gamma, r=r, t_max=args.tmax, echo=not args.no_echo, diffusion=diffusion,
                          epsilon=args.epsilon, ideal_oracle=args.ideal_oracle)
    threads = resolved_threads(cfg["threads"])
    probs = np.empty((len(insts), args.tmax + 1))
    norms = np.empty_like(probs)
    for idx in _groups(insts).values():
        p, q = runner.simulate_ensemble([insts[i] for i in idx], rc, threads)
        probs[idx], norms[idx] = p, q
    rows = [(i, t, probs[i, t], norms[i, t]) for i in range(len(insts)) for t in range(args.tmax + 1)]
    _write(args.out, args.format, ("instance_id", "T", "P_T", "norm"), rows)
    outputs = [args.out]

    n_sol = np.array([_n_sol(inst) for inst in insts])
    summary = f"run: {len(insts)} instances x {args.tmax + 1} steps -> {args.out}"
    solvable = n_sol > 0
    if not solvable.any():
        summary += "; no instance has a solution, T_opt undefined"
    else:
        pick = runner.optimal_iterations if args.definition == "median_total_queries" else runner.optimal_iterations_star
        sub = probs[solvable]
        if np.any(sub[:, 1:] > 0):
            o = pick(sub, args.epsilon, n_sol=n_sol[solvable], N=1 << first.n)
            qs = experiments.quantiles(o.Q, (0.25, 0.5, 0.75))
            summary += f"; T_opt={o.T_opt} ({o.definition}) median P_opt={o.P_opt_median:.4f} median Q={qs[0.5]:.4g}"
            if args.outcome:
                header = ("n", "k", "gamma", "r", "T_opt", "P_opt", "Q_median", "Q_q25", "Q_q75", "definition")
                io.write_csv(args.outcome, header, [(first.n, cfg.get("k"), gamma, r, o.T_opt, o.P_opt_median,
                                                     qs[0.5], qs[0.25], qs[0.75], o.definition)])
                outputs.append(args.outcome)
    _emit_manifest(args.out, "run", argv, {**cfg, **asdict(rc)}, outputs)
    print(summary)
    return 0


def cmd_recursive(args, argv):
    insts = _load_instances(args)
    first = insts[0]
    if not isinstance(first, instances.ProblemInstance):
        raise ConfigError("the recursive algorithm needs integer weights")
    if len(_groups(insts)) != 1:
        raise ConfigError("recursive runs need instances with a common n and k")
    gamma = args.gamma if args.gamma is not None else 2.0 ** (-args.m - 1)
    cfg = validate_config({"n": first.n, "k": first.k, "gamma": gamma, "rho": args.rho, "r": args.r,
                           "threads": args.threads})
    diffusion = _diffusion(args, cfg.get("rho"))
    threads = resolved_threads(cfg["threads"])
    ens = experiments.Ensemble(insts, np.array([_n_sol(i) for i in insts]), first.n, first.k)
    rho = cfg.get("rho", math.inf)
    if cfg.get("r") and "rho" not in cfg:
        rho = 1.0 / (cfg["r"] * gamma)
    if args.optimize_schedule:
        res = experiments.optimize_schedule(ens, args.m, gamma, rho, args.epsilon, args.schedule, diffusion,
                                            threads=threads)
        ev = res.evaluation
    else:
        ev = experiments.evaluate_recursive(ens, args.m, gamma, args.schedule, rho, args.epsilon, diffusion, threads)
    doc = ev.ledger.to_json()
    doc.update(schedule=list(ev.schedule), gamma=gamma, m=args.m,
               p_final=[float(p) for p in ev.p_final],
               T_total_median=ev.T_total_median,
               physical_time_median=float(np.median(ev.physical_time)))
    io.write_json(args.out, doc)
    _emit_manifest(args.out, "recursive", argv, {**cfg, "m": args.m, "schedule": list(ev.schedule),
                                                 "diffusion": asdict(diffusion)}, [args.out])
    print(f"recursive: schedule={'-'.join(map(str, ev.schedule))} queries/run={ev.ledger.total} "
          f"physical_time/run={ev.ledger.physical_time:.6g} median P={float(np.median(ev.p_final)):.4f}")
    return 0


def _sweep_spec(args) -> experiments.SweepSpec:
    fields = {}
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            fields.update(json.load(fh))
    overrides = {"n_values": args.n, "k_values": args.k, "gamma": args.gamma, "gamma_rule": args.gamma_rule,
                 "rho": args.rho, "algorithm": args.algorithm, "m": args.m, "schedule": args.schedule,
                 "optimize_schedule": args.optimize_schedule, "count": args.count, "postselect": args.postselect,
                 "epsilon": args.epsilon, "quantiles": args.quantiles, "t_max": args.tmax,
                 "real_weights": args.real, "diagonal": args.diagonal, "objective": args.objective,
                 "definition": args.definition}
    fields.update({k: v for k, v in overrides.items() if v is not None})
    fields.setdefault("seed", args.seed)
    if args.seed:
        fields["seed"] = args.seed
    if args.threads is not None:
        fields["threads"] = args.threads
    fields["threads"] = resolved_threads(validate_config({"threads": fields.get("threads")})["threads"])
    for key in ("n_values", "k_values", "quantiles", "schedule"):
        if fields.get(key) is not None:
            fields[key] = tuple(fields[key])
    if "diffusion" in fields and isinstance(fields["diffusion"], dict):
        fields["diffusion"] = DiffusionSpec(**fields["diffusion"])
    if "rho" in fields:
        fields["rho"] = float(fields["rho"])
    if fields.get("n_values") is None or fields.get("k_values") is None:
        raise ConfigError("sweep needs --n and --k lists (or a --spec file)")
    for n in fields["n_values"]:
        validate_config({"n": n})
    try:
        return experiments.SweepSpec(**fields)
    except TypeError as e:
        raise ConfigError(f"bad sweep spec: {e}")
    except ValueError as e:
        raise ConfigError(str(e))


def cmd_sweep(args, argv):
    spec = _sweep_spec(args)
    records = experiments.run_sweep(spec)
    rows = [rec.to_row() for rec in records]
    header = list(rows[0])
    _write(args.out, args.format, header, [[row[h] for h in header] for row in rows])
    cfg = asdict(spec)
    cfg["threads"] = None  # thread count does not affect results
    _emit_manifest(args.out, "sweep", argv, cfg, [args.out])
    flagged = sum(1 for rec in records if rec.flags)
    print(f"sweep: {len(records)} grid points -> {args.out} ({flagged} flagged)")
    return 0


def cmd_analyze(args, argv):
    params = {k: v for k, v in vars(args).items()
              if k not in ("command", "formula", "out", "format") and v is not None}
    try:
        value = analytics.FORMULAS[args.formula](params)
    except KeyError as e:
        raise ConfigError(f"formula {args.formula!r} needs --{str(e.args[0]).replace('_', '-')}")
    value = float(value)
    if args.out:
        _write(args.out, args.format, ("formula", "value"), [(args.formula, value)])
        _emit_manifest(args.out, "analyze", argv, {"formula": args.formula, **params}, [args.out])
    print(f"{args.formula} = {io.fmt(value)}")
    return 0


def cmd_classical(args, argv):
    insts = _load_instances(args)
    rows = []
    for i, inst in enumerate(insts):
        if isinstance(inst, instances.RealInstance):
            raise ConfigError("classical baselines need integer weights")
        exists, residue = instances.ckk_exists(inst)
        n_sol = instances.count_solutions(inst, keep_lists=False).num_solutions if inst.n <= ENUMERATION_CAP else None
        N = 1 << inst.n
        if n_sol:
            base = analytics.classical_baselines(N, n_sol)
            mq = analytics.memoryless_quantile(N, n_sol, args.P)
            lq = analytics.linear_quantile(N, n_sol, args.P)
        else:
            base, mq, lq = {"memoryless_expected": math.inf, "linear_expected": math.inf}, math.inf, math.inf
        rows.append((i, inst.n, inst.k, exists, residue, n_sol, base["memoryless_expected"],
                     base["linear_expected"], mq, lq))
    header = ("instance_id", "n", "k", "ckk_exists", "ckk_best_residue", "N_A", "memoryless_expected",
              "linear_expected", "memoryless_quantile", "linear_quantile")
    if args.out:
        _write(args.out, args.format, header, rows)
        _emit_manifest(args.out, "classical", argv, {"P": args.P, "seed": args.seed}, [args.out])
    else:
        sys.stdout.write(io.csv_text(header, rows))
    print(f"classical: {len(rows)} instances, {sum(1 for r in rows if r[3])} with perfect partitions")
    return 0


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "recursive": cmd_recursive, "sweep": cmd_sweep,
            "analyze": cmd_analyze, "classical": cmd_classical}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args, argv)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure: structured message, exit 1
        print(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
