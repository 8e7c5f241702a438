"""Command-line front end: ``confope gen-data | ope | improve | reproduce``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import battery, data, environments
from .core_mdp import SoftmaxPolicy, value_of
from .errors import CoverageError, InfeasibleError
from .ope_global import cluster_separation, cluster_soft_em, clustering_ope
from .ope_memoryless import cfqe, fqe, mb_pgd, mb_relaxation, naive_fqe_lower_bound
from .plotting import write_svg
from .policy_opt import clustering_pg, maxmin_improve
from .sensitivity import build_uncertainty

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_COVERAGE, EXIT_ACCEPTANCE = 0, 2, 3, 4, 5
METHODS = ("fqe", "cfqe", "mb-relax", "mb-pgd", "naive-lb", "cluster")
FIG1_GAMMAS = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    if not vals:
        raise ConfigError("empty list")
    return vals


def _params(pairs, H=None) -> dict:
    out = {}
    if isinstance(pairs, dict):
        out.update(pairs)
    else:
        for p in pairs or []:
            if "=" not in p:
                raise ConfigError(f"--param expects key=value, got {p!r}")
            k, v = p.split("=", 1)
            try:
                out[k] = json.loads(v)
            except json.JSONDecodeError:
                out[k] = v
    if H is not None:
        out["H"] = H
    return out


def _make_env(env_id, params):
    if env_id is None:
        raise ConfigError("--env is required")
    try:
        return environments.make(env_id, **params)
    except KeyError as e:
        raise ConfigError(str(e.args[0])) from None
    except TypeError as e:
        raise ConfigError(f"bad parameters for {env_id}: {e}") from None
    except ValueError as e:
        raise ConfigError(f"{env_id}: {e}") from None


def _workers() -> int:
    return data.default_workers()


def _map_trials(fn, trials):
    w = _workers()
    if w > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=w) as ex:
            return list(ex.map(fn, range(trials)))
    return [fn(t) for t in range(trials)]


def _write_csv(path, header, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    finally:
        if path:
            fh.close()


def _log_policy(pi):
    t = np.asarray(pi.table[0], dtype=float)
    return np.log(np.clip(t, 1e-6, None))


def _load_data(args):
    try:
        ds = data.load(args.data)
    except FileNotFoundError:
        raise ConfigError(f"no such dataset: {args.data}") from None
    except data.DatasetParseError as e:
        raise ConfigError(str(e)) from None
    side = Path(str(args.data) + ".meta.json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    env_id = args.env or meta.get("env_id")
    params = dict(meta.get("env_params", {}))
    params.update(_params(args.param, args.H))
    return ds, _make_env(env_id, params)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    if args.H is not None and args.H < 1:
        raise ConfigError("--H must be >= 1")
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    params = _params(args.param, args.H)
    env = _make_env(args.env, params)
    ds = data.simulate(env, n=args.n, seed=args.seed, s0=env.start if args.from_start else None, env_id=args.env)
    if not args.out:
        raise ConfigError("--out is required")
    data.save(ds, args.out)
    side = Path(str(args.out) + ".meta.json")
    meta = json.loads(side.read_text())
    meta["env_params"] = params
    side.write_text(json.dumps(meta, sort_keys=True) + "\n")
    return EXIT_OK


def _ope_rows(args, env, model_for, ds):
    mdp = env.mdp
    s0 = args.state if args.state is not None else (env.start if env.start is not None else 0)
    rows = []
    gammas = _floats(args.gamma)
    method = args.method
    if method == "cluster":
        if ds is None:
            raise ConfigError("--method cluster needs --data")
        S = mdp.S
        fn = (lambda d, k: cluster_separation(d, k, S=S, A=mdp.A, seed=args.seed))
        rep = clustering_ope(ds, args.U, env.pi_e, s0, S, mdp.A, cluster_fn=fn)
        rows.append(("", "cluster", s0, rep.diagnostics["value"], False, args.seed))
        for k, v in sorted(rep.diagnostics["per_cluster"].items()):
            rows.append(("", f"cluster:{k}:w={rep.diagnostics['weights'][k]:.6g}", s0, v, False, args.seed))
        return rows
    for g in gammas:
        if g < 1:
            raise ConfigError("gamma must be >= 1")
        if method == "fqe":
            rep = fqe(model_for("per-h"), env.pi_e, starts=[s0])
            val, lb = rep.at(s0), False
        elif method == "naive-lb":
            m = model_for("per-h")
            base = fqe(m, env.pi_e, starts=[s0])
            rr = float(np.ptp(m.reward)) or 1.0
            rep = naive_fqe_lower_bound(base, g - 1.0, m.H, rr)
            val, lb = rep.at(s0), True
        elif method in ("cfqe", "mb-relax"):
            m = model_for(args.mode or ("per-h" if ds is None else "pooled"))
            tu = build_uncertainty(m, gamma=g)
            rep = cfqe(m, env.pi_e, tu, starts=[s0]) if method == "cfqe" else mb_relaxation(m, env.pi_e, tu, s0)
            val, lb = rep.at(s0), True
        elif method == "mb-pgd":
            m = model_for("pooled")
            tu = build_uncertainty(m, gamma=g)
            rep = mb_pgd(m, env.pi_e, tu, s0, iters=args.iters, seed=args.seed)
            val, lb = rep.diagnostics["value"], True
        else:
            raise ConfigError(f"unknown method {method!r}")
        rows.append((g, method, s0, val, lb, args.seed))
    return rows


def cmd_ope(args) -> int:
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    if args.data:
        ds, env = _load_data(args)
        S, A = env.mdp.S, env.mdp.A

        def model_for(mode):
            return data.model_from_dataset(ds, S, A, mode=mode)
    elif args.analytic:
        env = _make_env(args.env, _params(args.param, args.H))
        ds = None

        def model_for(mode):
            return data.analytic_model(env.mdp, env.pi_b, mode)
    else:
        raise ConfigError("pass --data PATH or --analytic")
    rows = _ope_rows(args, env, model_for, ds)
    _write_csv(args.out, ["gamma", "method", "state", "value", "is_lower_bound", "seed"], rows)
    return EXIT_OK


def cmd_improve(args) -> int:
    if args.data:
        ds, env = _load_data(args)
    elif args.analytic:
        env = _make_env(args.env, _params(args.param, args.H))
        ds = None
    else:
        raise ConfigError("pass --data PATH or --analytic")
    mdp = env.mdp
    s0 = args.state if args.state is not None else (env.start if env.start is not None else 0)
    theta0 = _log_policy(env.pi_e)
    if args.method == "maxmin":
        model = data.analytic_model(mdp, env.pi_b, "pooled") if ds is None else \
            data.model_from_dataset(ds, mdp.S, mdp.A, mode="pooled")
        theta, trace = maxmin_improve(model, theta0, gamma=_floats(args.gamma)[0], s0=s0,
                                      outer_iters=args.outer_iters, inner_iters=args.inner_iters, seed=args.seed)
    elif args.method == "cluster-pg":
        if ds is None:
            raise ConfigError("--method cluster-pg needs --data")
        fn = (lambda d, k: cluster_separation(d, k, S=mdp.S, A=mdp.A, seed=args.seed))
        theta, trace = clustering_pg(ds, args.U, theta0, eta=args.eta, T=args.T, s0=s0, cluster_fn=fn)
    else:
        raise ConfigError(f"unknown improvement method {args.method!r}")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    payload = {"method": args.method, "theta": theta.tolist(), "final_objective": trace.final_objective}
    if trace.initial_objective is not None:
        payload["initial_objective"] = trace.initial_objective
    (out / "policy.json").write_text(json.dumps(payload) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce


def _mean_sd(vals):
    a = np.asarray(vals, dtype=float)
    if a.shape[0] == 1:
        return a[0], np.zeros(a.shape[1:])
    with np.errstate(invalid="ignore"):
        return np.nanmean(a, 0), np.nanstd(a, 0, ddof=1)


def reproduce_fig1(out: Path, trials: int, n: int) -> int:
    env = environments.gridworld_iid()
    s0 = env.start

    def trial(t):
        ds = data.simulate(env, n=n, seed=t)
        m = data.model_from_dataset(ds, env.mdp.S, env.mdp.A, mode="pooled")
        rows = []
        for g in FIG1_GAMMAS:
            tu = build_uncertainty(m, gamma=g)
            rows.append((g, "mb", t, mb_pgd(m, env.pi_e, tu, s0, seed=t, restarts=2).diagnostics["value"]))
            rows.append((g, "mb-relax", t, mb_relaxation(m, env.pi_e, tu, s0).at(s0)))
            rows.append((g, "mb-pgd", t, mb_pgd(m, env.pi_e, tu, s0, seed=t).diagnostics["value"]))
            rows.append((g, "cfqe", t, cfqe(m, env.pi_e, tu, starts=[s0]).at(s0)))
        return rows

    rows = [r for part in _map_trials(trial, trials) for r in part]
    _write_csv(out / "fig1.csv", ["gamma", "method", "trial", "value"], rows)
    series = {}
    for meth in ("mb", "mb-relax", "mb-pgd", "cfqe"):
        table = [[r[3] for r in rows if r[1] == meth and r[2] == t] for t in range(trials)]
        m, sd = _mean_sd(table)
        series[meth] = (list(FIG1_GAMMAS), m, sd)
    write_svg(out / "fig1.svg", series, title=f"Lower bounds at state {s0}", xlabel="Gamma", ylabel="V_1 lower bound",
              logx=True)
    return EXIT_OK


def reproduce_fig2(out: Path, trials: int, n: int, gamma: float = 10.0) -> int:
    env = environments.gridworld_iid()
    theta0 = _log_policy(env.pi_e)

    def trial(t):
        ds = data.simulate(env, n=n, seed=t)
        m = data.model_from_dataset(ds, env.mdp.S, env.mdp.A, mode="pooled")
        _, tr = maxmin_improve(m, theta0, gamma=gamma, s0=env.start, seed=t)
        return tr

    traces = _map_trials(trial, trials)
    rows = [(t, i, o) for t, tr in enumerate(traces) for i, o in enumerate(tr.objective)]
    _write_csv(out / "fig2.csv", ["trial", "iter", "objective"], rows)
    _write_csv(out / "fig2_endpoints.csv", ["trial", "initial", "final"],
               [(t, tr.initial_objective, tr.final_objective) for t, tr in enumerate(traces)])
    m, sd = _mean_sd([tr.objective for tr in traces])
    write_svg(out / "fig2.svg", {"max-min lower bound": (np.arange(len(m)), m, sd)},
              title=f"Max-min ascent, Gamma={gamma:g}", xlabel="iteration", ylabel="lower bound")
    return EXIT_OK


def reproduce_fig3(out: Path, trials: int, ns=(1000, 2000, 4000), pg_iters: int = 50) -> int:
    env = environments.sepsis_toy()
    mdp = env.mdp
    truth = value_of(mdp, env.pi_e, mdp.d0)
    smap = env.state_map

    def sep(d, k):
        return cluster_separation(d, k, A=mdp.A, state_map=smap)

    def em(d, k):
        return cluster_soft_em(d, k, A=mdp.A, state_map=smap)

    def vfn(th):
        return value_of(mdp, SoftmaxPolicy(th), mdp.d0)

    def trial(t):
        rows, pg = [], []
        for n in ns:
            ds = data.simulate(env, n=n, seed=1000 * n + t)
            ests = {}
            for name, fn in (("cluster-separation", sep), ("cluster-soft-em", em)):
                try:
                    ests[name] = clustering_ope(ds, 2, env.pi_e, mdp.d0, mdp.S, mdp.A,
                                                cluster_fn=fn).diagnostics["value"]
                except CoverageError:
                    ests[name] = float("nan")
            m = data.model_from_dataset(ds, mdp.S, mdp.A, mode="pooled")
            ests["fqe-oblivious"] = float(mdp.d0 @ fqe(m, env.pi_e).v1)
            rows += [(n, k, t, v, abs(v - truth) / abs(truth)) for k, v in ests.items()]
            if n == ns[-1]:
                th0 = _log_policy(env.pi_e)
                for name, U in (("cluster-pg", 2), ("single-cluster-pg", 1)):
                    _, tr = clustering_pg(ds, U, th0, T=pg_iters, cluster_fn=sep, value_fn=vfn)
                    pg.append((name, t, tr.objective[0], tr.final_objective))
        return rows, pg

    parts = _map_trials(trial, trials)
    rows = [r for p in parts for r in p[0]]
    pg = [r for p in parts for r in p[1]]
    _write_csv(out / "fig3.csv", ["n", "method", "trial", "value", "rel_error"], rows)
    _write_csv(out / "fig3_pg.csv", ["method", "trial", "initial_value", "final_value"], pg)
    series = {}
    for meth in ("cluster-separation", "cluster-soft-em", "fqe-oblivious"):
        table = [[r[4] for r in rows if r[1] == meth and r[2] == t] for t in range(trials)]
        m, sd = _mean_sd(table)
        series[meth] = (list(ns), m, sd)
    write_svg(out / "fig3.svg", series, title="Sepsis toy: OPE relative error", xlabel="trajectories",
              ylabel="relative error", logx=True)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    fig = args.figure
    if fig == "fixtures":
        verdicts = battery.run_fixtures()
        with open(out / "fixtures.txt", "w") as fh:
            for v in verdicts:
                print(v.line())
                fh.write(v.line() + "\n")
        return EXIT_OK if all(v.passed for v in verdicts) else EXIT_ACCEPTANCE
    if fig == "fig1":
        return reproduce_fig1(out, args.trials, args.n or 1000)
    if fig == "fig2":
        return reproduce_fig2(out, args.trials, args.n or 1000)
    if fig == "fig3":
        return reproduce_fig3(out, args.trials)
    raise ConfigError(f"unknown figure {fig!r}")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="confope", description="Off-policy evaluation under confounding.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option defaults; explicit flags win")
        sp.add_argument("--env", choices=sorted(environments.ENVIRONMENTS))
        sp.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                        help="environment parameter (JSON value), repeatable")
        sp.add_argument("--H", type=int, help="horizon passed to the environment")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")

    g = sub.add_parser("gen-data", help="simulate a behavior dataset to JSONL")
    common(g)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--from-start", action="store_true", help="start every episode at the environment's start state")
    g.set_defaults(func=cmd_gen_data)

    o = sub.add_parser("ope", help="run an estimator")
    common(o)
    o.add_argument("--data")
    o.add_argument("--analytic", action="store_true", help="use the infinite-data model of the environment")
    o.add_argument("--method", default="fqe")
    o.add_argument("--gamma", default="1")
    o.add_argument("--state", type=int)
    o.add_argument("--U", type=int, default=2)
    o.add_argument("--mode", choices=["per-h", "pooled"])
    o.add_argument("--iters", type=int, default=300)
    o.set_defaults(func=cmd_ope)

    i = sub.add_parser("improve", help="policy improvement")
    common(i)
    i.add_argument("--data")
    i.add_argument("--analytic", action="store_true")
    i.add_argument("--method", default="maxmin", choices=["maxmin", "cluster-pg"])
    i.add_argument("--gamma", default="10")
    i.add_argument("--state", type=int)
    i.add_argument("--U", type=int, default=2)
    i.add_argument("--outer-iters", type=int, default=30)
    i.add_argument("--inner-iters", type=int, default=30)
    i.add_argument("--T", type=int, default=100)
    i.add_argument("--eta", type=float, default=0.05)
    i.set_defaults(func=cmd_improve)

    r = sub.add_parser("reproduce", help="figure-style experiments and the fixture battery")
    r.add_argument("--config")
    r.add_argument("--figure", required=True, choices=["fig1", "fig2", "fig3", "fixtures"])
    r.add_argument("--trials", type=int, default=30)
    r.add_argument("--n", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_reproduce)
    return p


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config: {e}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        sp = parser._subparsers._group_actions[0].choices[args.command]
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as e:
        print(f"infeasible uncertainty set: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CoverageError as e:
        print(f"coverage: {e}", file=sys.stderr)
        return EXIT_COVERAGE


if __name__ == "__main__":
    sys.exit(main())
