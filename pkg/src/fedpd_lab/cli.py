"""Command-line front end: run / sweep / theory / gendata.

Experiment configs are a single strict JSON document (unknown keys are
errors: a silently ignored typo in a hyperparameter invalidates an
experiment).  Every run writes `trace.csv` (fixed column order) and
`summary.json` embedding the fully resolved config, so outputs are
reproducible from their own artifacts.  Exit codes: 0 success (a diverged
run is still data), 1 I/O failure, 2 configuration error.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import _kernels
from .algorithms import RunConfig, run
from .data import (
    gen_strong_noniid,
    gen_weak_noniid,
    load_csv,
    save_csv,
    shard_round_robin,
)
from .errors import ConfigError, DataFormatError
from .local_solvers import OracleIConfig, OracleIIConfig
from .metrics import TRACE_COLUMNS
from .problems import ChainSpec, chain_problem, quadratic_pair_problem
from .theory_checks import (
    CHAIN_CURVATURE_BOUND,
    chain_bounds_probe,
    chain_lipschitz_probe,
    diminishing_cycle_matrix,
    diminishing_divergence_factor,
    divergence_factor,
    lower_bound_history,
)

_TOP_KEYS = {"seed", "output_dir", "trace_every", "problem", "run"}
_PROBLEM_KEYS = {
    "weak_noniid": {"kind", "n_agents", "samples_per_agent", "dim", "family",
                    "alpha", "beta", "data_seed", "identical_shards"},
    "strong_noniid": {"kind", "n_agents", "samples_per_agent", "dim", "family",
                      "alpha", "beta", "data_seed", "noise_halfwidth"},
    "csv": {"kind", "path", "n_agents", "family", "alpha", "beta"},
    "quadratic_pair": {"kind", "dim", "n_agents"},
    "chain": {"kind", "length", "n_agents", "eps", "lipschitz"},
}
_RUN_KEYS = {
    "algorithm", "rounds", "eta", "local_steps", "skip_prob", "prox_weight",
    "sgd_batch", "schedule", "init", "diverge_threshold", "oracle1", "oracle2",
}
_ORACLE1_KEYS = {"variant", "tol", "inner_stepsize", "max_inner", "batch_size",
                 "check_every"}
_ORACLE2_KEYS = {"gamma", "local_steps", "full_grad_period", "batch_size"}
_SCHEDULE_KEYS = {"kind", "values"}


def _reject_unknown(section, mapping, allowed):
    if not isinstance(mapping, dict):
        raise ConfigError(f"config section '{section}' must be an object")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"config: unknown key '{key}' in '{section}'")


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}")
    _reject_unknown("<top level>", doc, _TOP_KEYS)
    if "problem" not in doc or "run" not in doc:
        raise ConfigError("config needs 'problem' and 'run' sections")
    return doc


def build_problem(cfg):
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("problem section needs a 'kind'")
    kind = cfg["kind"]
    if kind not in _PROBLEM_KEYS:
        raise ConfigError(f"config: unknown problem kind '{kind}'")
    _reject_unknown("problem", cfg, _PROBLEM_KEYS[kind])
    if kind == "weak_noniid":
        return gen_weak_noniid(
            cfg.get("n_agents", 10), cfg.get("samples_per_agent", 100),
            cfg.get("dim", 20), cfg.get("data_seed", 0),
            family=cfg.get("family", "penalized_logistic"),
            alpha=cfg.get("alpha", 1.0), beta=cfg.get("beta", 0.1),
            identical_shards=cfg.get("identical_shards", False),
        )
    if kind == "strong_noniid":
        return gen_strong_noniid(
            cfg.get("n_agents", 10), cfg.get("samples_per_agent", 100),
            cfg.get("dim", 20), cfg.get("data_seed", 0),
            noise_halfwidth=cfg.get("noise_halfwidth", 1.0),
            family=cfg.get("family", "penalized_logistic"),
            alpha=cfg.get("alpha", 1.0), beta=cfg.get("beta", 0.1),
        )
    if kind == "csv":
        if "path" not in cfg:
            raise ConfigError("csv problem needs a 'path'")
        problem = load_csv(cfg["path"], family=cfg.get("family", "penalized_logistic"),
                           alpha=cfg.get("alpha", 1.0), beta=cfg.get("beta", 0.1))
        return shard_round_robin(problem, cfg.get("n_agents", 1))
    if kind == "quadratic_pair":
        return quadratic_pair_problem(cfg.get("dim", 1), cfg.get("n_agents", 2))
    spec = ChainSpec(cfg.get("length", 16), cfg.get("n_agents", 4),
                     cfg.get("eps", 0.01), cfg.get("lipschitz", CHAIN_CURVATURE_BOUND))
    return chain_problem(spec)


def build_run_config(cfg, seed, trace_every):
    _reject_unknown("run", cfg, _RUN_KEYS)
    if "algorithm" not in cfg or "rounds" not in cfg or "eta" not in cfg:
        raise ConfigError("run section needs 'algorithm', 'rounds' and 'eta'")
    oracle1 = OracleIConfig()
    if "oracle1" in cfg:
        _reject_unknown("run.oracle1", cfg["oracle1"], _ORACLE1_KEYS)
        oracle1 = OracleIConfig(**cfg["oracle1"])
    oracle2 = None
    if "oracle2" in cfg:
        _reject_unknown("run.oracle2", cfg["oracle2"], _ORACLE2_KEYS)
        oracle2 = OracleIIConfig(**cfg["oracle2"])
    elif cfg["algorithm"] == "fedpd-vr":
        oracle2 = OracleIIConfig(gamma=cfg["eta"])
    if "schedule" in cfg and cfg["schedule"] is not None:
        _reject_unknown("run.schedule", cfg["schedule"], _SCHEDULE_KEYS)
    return RunConfig(
        algorithm=cfg["algorithm"],
        rounds=cfg["rounds"],
        eta=cfg["eta"],
        local_steps=cfg.get("local_steps", 1),
        skip_prob=cfg.get("skip_prob", 0.0),
        prox_weight=cfg.get("prox_weight", 1.0),
        sgd_batch=cfg.get("sgd_batch", 1),
        schedule=cfg.get("schedule"),
        init=cfg.get("init", "zeros"),
        seed=seed,
        diverge_threshold=cfg.get("diverge_threshold", 1e8),
        trace_every=trace_every,
        oracle1=oracle1,
        oracle2=oracle2,
    )


def resolved_config(doc, problem_cfg, rc: RunConfig, out_dir):
    run_section = {
        "algorithm": rc.algorithm,
        "rounds": rc.rounds,
        "eta": rc.eta,
        "local_steps": rc.local_steps,
        "skip_prob": rc.skip_prob,
        "prox_weight": rc.prox_weight,
        "sgd_batch": rc.sgd_batch,
        "schedule": rc.schedule if rc.schedule else {"kind": "constant"},
        "init": rc.init if isinstance(rc.init, (str, int, float)) else list(rc.init),
        "diverge_threshold": rc.diverge_threshold,
        "oracle1": asdict(rc.oracle1),
    }
    if rc.oracle2 is not None:
        run_section["oracle2"] = asdict(rc.oracle2)
    return {
        "seed": rc.seed,
        "trace_every": rc.trace_every,
        "output_dir": str(out_dir),
        "problem": problem_cfg,
        "run": run_section,
    }


def _write_outputs(out_dir, trace, resolved):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trace.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace.rows:
            fh.write(",".join(row.csv_fields()) + "\n")
    gaps = [row.gap for row in trace.rows]
    summary = {
        "final_gap": gaps[-1] if gaps else None,
        "min_gap": min(gaps) if gaps else None,
        "comm_rounds": trace.comm_rounds,
        "local_iters": trace.local_iters,
        "samples": trace.samples,
        "diverged": trace.diverged,
        "rows_written": len(trace.rows),
        "kernel_backend": _kernels.BACKEND_NAME,
        "lint": trace.lint,
        "config": resolved,
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def _default_threads(value):
    if value is not None:
        return value
    env = os.environ.get("FEDPD_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FEDPD_LAB_THREADS={env!r} is not an integer")
    return os.cpu_count() or 1


def cmd_run(args):
    doc = load_config(args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    trace_every = doc.get("trace_every", 1)
    out_dir = args.out or doc.get("output_dir") or "out"
    problem = build_problem(doc["problem"])
    rc = build_run_config(doc["run"], seed, trace_every)
    rc.validate(problem)
    trace = run(problem, rc, threads=_default_threads(args.threads))
    summary = _write_outputs(out_dir, trace, resolved_config(doc, doc["problem"], rc, out_dir))
    for warning in trace.lint:
        print(f"lint: {warning}", file=sys.stderr)
    gap = summary["min_gap"]
    print(
        f"run complete: rounds={rc.rounds} min_gap={gap if gap is not None else 'n/a'} "
        f"RC={trace.comm_rounds} LC={trace.local_iters} AS={trace.samples} "
        f"diverged={trace.diverged}"
    )
    return 0


_SWEEP_PARAMS = {
    "p": ("skip_prob", float),
    "eta": ("eta", float),
    "Q": ("local_steps", int),
    "algorithm": ("algorithm", str),
}


def cmd_sweep(args):
    if args.param not in _SWEEP_PARAMS:
        raise ConfigError(
            f"sweep parameter must be one of {sorted(_SWEEP_PARAMS)}, got '{args.param}'"
        )
    values = [v for v in (args.values or "").split(",") if v != ""]
    if not values:
        raise ConfigError("sweep needs a nonempty comma-separated value list")
    field_name, cast = _SWEEP_PARAMS[args.param]
    doc = load_config(args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    trace_every = doc.get("trace_every", 1)
    out_root = Path(args.out or doc.get("output_dir") or "sweep")
    out_root.mkdir(parents=True, exist_ok=True)
    threads = _default_threads(args.threads)
    problem = build_problem(doc["problem"])

    lines = ["value,final_gap,min_gap,comm_rounds,local_iters,samples,diverged"]
    for raw in values:
        try:
            value = cast(raw)
        except ValueError:
            raise ConfigError(f"sweep value {raw!r} is not a valid {args.param}")
        run_doc = dict(doc["run"])
        run_doc[field_name] = value
        rc = build_run_config(run_doc, seed, trace_every)
        rc.validate(problem)
        sub = out_root / f"{args.param}_{raw}"
        trace = run(problem, rc, threads=threads)
        summary = _write_outputs(sub, trace, resolved_config(doc, doc["problem"], rc, sub))
        fg = summary["final_gap"]
        mg = summary["min_gap"]
        lines.append(
            f"{raw},{'' if fg is None else format(fg, '.17g')},"
            f"{'' if mg is None else format(mg, '.17g')},"
            f"{trace.comm_rounds},{trace.local_iters},{trace.samples},"
            f"{'true' if trace.diverged else 'false'}"
        )
        print(f"sweep {args.param}={raw}: min_gap={mg} RC={trace.comm_rounds}")
    (out_root / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _parse_theory_params(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"theory parameter '{pair}' is not key=value")
        key, raw = pair.split("=", 1)
        try:
            out[key] = int(raw)
        except ValueError:
            try:
                out[key] = float(raw)
            except ValueError:
                out[key] = raw
    return out


def _theory_lower_bound(p):
    spec = ChainSpec(p.get("t", 16), p.get("n", 4), p.get("eps", 0.01),
                     p.get("lipschitz", CHAIN_CURVATURE_BOUND))
    t_comm = p.get("t_comm", spec.length - 1)
    history = lower_bound_history(
        spec, p.get("algo", "fedavg-gd"), p.get("q", 1), p.get("eta", 0.1), t_comm,
        seed=p.get("seed", 0),
    )
    rep = history[-1]
    floor = 2.0 * spec.eps / spec.n_agents**2
    # the model aggregated at round t has at most t awake coordinates: the
    # zero-init local phase reaches {1, 2} at most, and consecutive
    # aggregates differ by at most one new coordinate
    ladder_ok = all(h.frontier <= h.comm_rounds for h in history)
    advances_ok = all(
        history[t].frontier - history[t - 1].frontier <= 1
        for t in range(3, len(history))
    ) and (len(history) < 3 or history[2].frontier <= 2)
    tail_ok = rep.tail_zero if t_comm < spec.length else True
    gap_ok = all(h.gap > floor for h in history if h.tail_zero)
    ok = ladder_ok and advances_ok and tail_ok and gap_ok
    detail = (
        f"t_comm={t_comm} frontier={rep.frontier} tail_zero={rep.tail_zero} "
        f"gap={rep.gap:.6g} floor={floor:.6g} ladder_ok={ladder_ok}"
    )
    return ok, detail


def _theory_divergence(p):
    res = divergence_factor(p.get("eta", 0.5), p.get("q", 2))
    top = float(np.max(np.abs(res.eigenvalues)))
    ok = res.value > 1.0 and abs(res.value - top) <= 1e-10 * max(1.0, top)
    return ok, f"factor={res.value:.12g} matrix_top={top:.12g}"


def _theory_diminishing(p):
    q = p.get("q", 2)
    k_max = p.get("k_max", 100)
    worst_gap = 0.0
    smallest = float("inf")
    for k in range(1, k_max + 1):
        lam = diminishing_divergence_factor(k, q)
        top = float(np.max(np.abs(np.linalg.eigvals(diminishing_cycle_matrix(k, q)))))
        worst_gap = max(worst_gap, abs(lam - top))
        smallest = min(smallest, lam)
    ok = smallest > 1.0 and worst_gap <= 1e-10
    return ok, f"min_factor={smallest:.12g} max_matrix_gap={worst_gap:.3g} cycles={k_max}"


def _theory_lipschitz(p):
    spec = ChainSpec(p.get("t", 16), p.get("n", 4), p.get("eps", 0.01),
                     p.get("lipschitz", CHAIN_CURVATURE_BOUND))
    worst = chain_lipschitz_probe(spec, p.get("probes", 10_000), seed=p.get("seed", 0))
    return worst <= CHAIN_CURVATURE_BOUND, (
        f"max_second_difference={worst:.6g} bound={CHAIN_CURVATURE_BOUND:.6g}"
    )


def _theory_chain_bounds(p):
    rep = chain_bounds_probe(p.get("probes", 10_000), seed=p.get("seed", 0))
    return rep.violations == 0, (
        f"probes={rep.probes} violations={rep.violations} "
        f"min_gate_product={rep.min_gate_product:.6g}"
    )


_THEORY_CHECKS = {
    "lower-bound": _theory_lower_bound,
    "divergence": _theory_divergence,
    "diminishing": _theory_diminishing,
    "lipschitz": _theory_lipschitz,
    "chain-bounds": _theory_chain_bounds,
}


def cmd_theory(args):
    if args.check not in _THEORY_CHECKS:
        raise ConfigError(
            f"unknown theory check '{args.check}'; choose from {sorted(_THEORY_CHECKS)}"
        )
    params = _parse_theory_params(args.params)
    ok, detail = _THEORY_CHECKS[args.check](params)
    print(f"{'PASS' if ok else 'FAIL'} {args.check}: {detail}")
    return 0 if ok else 1


def cmd_gendata(args):
    if args.kind not in ("weak", "strong"):
        raise ConfigError(f"gendata kind must be 'weak' or 'strong', got '{args.kind}'")
    common = dict(
        n_agents=args.agents, samples_per_agent=args.samples, d=args.dim,
        seed=args.seed if args.seed is not None else 0,
        family=args.family, alpha=args.alpha, beta=args.beta,
    )
    if args.kind == "weak":
        problem = gen_weak_noniid(**common)
    else:
        problem = gen_strong_noniid(**common, noise_halfwidth=args.noise)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    try:
        save_csv(problem, out)
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return 1
    sidecar = dict(common)
    sidecar["kind"] = args.kind
    if args.kind == "strong":
        sidecar["noise_halfwidth"] = args.noise
    sidecar["row_order"] = "round_robin"
    sidecar["lipschitz_estimate"] = problem.lipschitz
    with open(str(out) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    print(f"wrote {out} ({args.agents} agents x {args.samples} samples, d={args.dim})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fedpd-lab",
        description="Deterministic federated-optimization simulator and certificates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True, help="p | eta | Q | algorithm")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--threads", type=int, default=None)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_theory = sub.add_parser("theory", help="run an executable certificate")
    p_theory.add_argument("check", help="|".join(sorted(_THEORY_CHECKS)))
    p_theory.add_argument("params", nargs="*", help="key=value overrides")
    p_theory.set_defaults(fn=cmd_theory)

    p_gen = sub.add_parser("gendata", help="generate a synthetic dataset CSV")
    p_gen.add_argument("--kind", required=True, help="weak | strong")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--agents", type=int, default=10)
    p_gen.add_argument("--samples", type=int, default=100)
    p_gen.add_argument("--dim", type=int, default=20)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--noise", type=float, default=1.0)
    p_gen.add_argument("--family", default="penalized_logistic")
    p_gen.add_argument("--alpha", type=float, default=1.0)
    p_gen.add_argument("--beta", type=float, default=0.1)
    p_gen.set_defaults(fn=cmd_gendata)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
