"""Command-line front end.

Subcommands::

    simulate-svie   forward Euler paths and per-node statistics
    solve-bsvie     one backward sweep, errors against the oracle, optional figures
    converge        error-versus-mesh study with a log-log rate fit
    report          summarize a study directory and redraw its rate plot

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
Settings come from flags, then the ``SOLVER_SEED`` environment variable (seed
only), then an INI file given by ``--config``, then built-in defaults.
"""
import argparse
import configparser
import csv
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .analysis import (ErrorAccumulator, RateFit, convergence_study,
                       svie_convergence_study, write_study_csv, write_summary_json)
from .bsvie import LsmcBackend, TreeBackend, solve_backward
from .errors import InvalidArgumentError, VolterraError
from .grid import make_uniform, pi_index
from .paths import dump, load, sample
from .problems import example_section5, example_svie_benchmark
from .svg import Series, write_chart
from .svie import node_statistics, solve_forward, write_statistics_csv

PROBLEMS = ("section5", "svie-bench")
COMMANDS = ("simulate-svie", "solve-bsvie", "converge", "report")
FIGURE_TIMES = (0.1, 0.2, 0.3)
FIGURE_Y_TOL = 0.05
FIGURE_Z_TOL = 0.1

DEFAULTS = {
    "T": 1.0, "n": 100, "n_list": "8,16,32,64,128", "n_ref": 4096, "m": 10000,
    "seed": 0, "workers": 1, "out": "out", "plot": False, "path": 0,
    "backend": "lsmc", "degree": 3, "ridge": 1e-8, "features": "problem",
    "quadrature": "bridge", "refine_degree": None, "antithetic": False,
}
INT_KEYS = {"n", "n_ref", "m", "seed", "workers", "path", "degree", "refine_degree"}
FLOAT_KEYS = {"T", "ridge"}
BOOL_KEYS = {"plot", "antithetic"}
RUN_KEYS = {"problem", "T", "n", "n_list", "n_ref", "m", "seed", "workers", "out", "plot",
            "path", "quadrature", "refine_degree", "antithetic"}
BACKEND_KEYS = {"kind", "degree", "ridge", "features"}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="volterra-euler", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with [run] and [backend] sections")
    common.add_argument("--problem", choices=PROBLEMS)
    common.add_argument("--T", type=float, dest="T", help="time horizon")
    common.add_argument("--m", type=int, help="number of paths")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--plot", action="store_true", default=None, help="write SVG figures")
    common.add_argument("--no-timestamp", action="store_true",
                        help="omit the generation time from SVG files")
    common.add_argument("--antithetic", action="store_true", default=None)
    lsmc = _Parser(add_help=False)
    lsmc.add_argument("--backend", choices=("lsmc", "tree"))
    lsmc.add_argument("--degree", type=int, help="total degree of the regression basis")
    lsmc.add_argument("--ridge", type=float)
    lsmc.add_argument("--features", choices=("problem", "raw"))
    lsmc.add_argument("--quadrature", choices=("bridge", "left"),
                      help="cell rule for the Z error integral")

    s = sub.add_parser("simulate-svie", parents=[common], help="forward Euler paths")
    s.add_argument("--n", type=int, help="number of time steps")
    s.add_argument("--dump-paths", help="write the Brownian ensemble to this file")
    s.add_argument("--load-paths", help="read the Brownian ensemble from this file")

    b = sub.add_parser("solve-bsvie", parents=[common, lsmc], help="one backward sweep")
    b.add_argument("--n", type=int)
    b.add_argument("--path", type=int, help="path index drawn in the figures")
    b.add_argument("--load-paths", help="read the Brownian ensemble from this file")

    c = sub.add_parser("converge", parents=[common, lsmc], help="convergence-rate study")
    c.add_argument("--n-list", dest="n_list", help="comma-separated grid sizes")
    c.add_argument("--n-ref", dest="n_ref", type=int, help="reference grid (svie-bench)")
    c.add_argument("--refine-degree", dest="refine_degree", type=int,
                   help="also run with this basis degree and report its total error")
    c.add_argument("--timing", action="store_true", help="fill the wall_time_s column")

    r = sub.add_parser("report", help="summarize a study directory")
    r.add_argument("input", help="directory written by converge")
    r.add_argument("--no-timestamp", action="store_true")
    return p


def _coerce(key, value):
    try:
        if key in INT_KEYS:
            return None if value in ("", "none", None) else int(value)
        if key in FLOAT_KEYS:
            return float(value)
        if key in BOOL_KEYS:
            if isinstance(value, bool):
                return value
            v = str(value).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {value!r}") from None
    return value


def _read_config(path):
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    out = {}
    for section in cp.sections():
        allowed = RUN_KEYS if section == "run" else BACKEND_KEYS if section == "backend" else None
        if allowed is None:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in cp.items(section):
            if key not in allowed:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            out["backend" if key == "kind" else key] = _coerce(key, value)
    return out


def resolve(args, environ=None):
    """Merge defaults, config file, ``SOLVER_SEED`` and flags (later wins)."""
    environ = os.environ if environ is None else environ
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_read_config(args.config))
    if environ.get("SOLVER_SEED"):
        cfg["seed"] = _coerce("seed", environ["SOLVER_SEED"])
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "command"):
            cfg[key] = value
    cfg["command"] = args.command
    return cfg


def _validate(cfg):
    if not cfg.get("problem"):
        raise ConfigError("--problem is required (section5 or svie-bench)")
    if cfg["problem"] not in PROBLEMS:
        raise ConfigError(f"unknown problem {cfg['problem']!r}")
    for key in ("m", "workers"):
        if cfg[key] < 1:
            raise ConfigError(f"--{key} must be positive")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("--seed must lie in [0, 2**64)")
    if cfg.get("backend") not in ("lsmc", "tree"):
        raise ConfigError(f"unknown backend {cfg.get('backend')!r}")
    if cfg["command"] == "converge":
        try:
            cfg["n_list"] = [int(v) for v in str(cfg["n_list"]).split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--n-list must be comma-separated integers, got {cfg['n_list']!r}") from None
        top = max(cfg["n_list"], default=0)
        if len(cfg["n_list"]) < 3 or any(n < 1 or top % n for n in cfg["n_list"]):
            raise ConfigError("--n-list needs at least three sizes, each dividing the largest")
    if cfg["command"] == "solve-bsvie" and cfg["problem"] == "svie-bench":
        raise ConfigError("svie-bench has no backward equation; use simulate-svie or converge")
    return cfg


def _backend(cfg, svie, partition):
    if cfg["backend"] == "tree":
        if not svie.markovian:
            raise ConfigError("the tree backend needs a problem driven by the walk value")
        return TreeBackend(svie, partition)
    return LsmcBackend(degree=cfg["degree"], ridge=cfg["ridge"], features=cfg["features"])


def _versions():
    return {"volterra_euler": __version__, "numpy": np.__version__,
            "python": platform.python_version()}


def _write_manifest(out, cfg, outputs, extra=None):
    keep = {k: v for k, v in cfg.items() if k not in ("no_timestamp", "timing")}
    manifest = {"config": keep, "versions": _versions(), "outputs": sorted(outputs)}
    if extra:
        manifest.update(extra)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _ensemble(cfg, N):
    if cfg.get("load_paths"):
        ens = load(cfg["load_paths"])
        if ens.N != N or ens.partition.T != cfg["T"]:
            raise ConfigError(f"{cfg['load_paths']} holds N={ens.N}, T={ens.partition.T}; "
                              f"requested N={N}, T={cfg['T']}")
        return ens
    return sample(make_uniform(cfg["T"], N), cfg["m"], seed=cfg["seed"],
                  antithetic=cfg["antithetic"], workers=cfg["workers"])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg):
    out = cfg["out"]
    problem = example_svie_benchmark() if cfg["problem"] == "svie-bench" else example_section5()[0]
    ens = _ensemble(cfg, cfg["n"])
    paths = solve_forward(problem, ens)
    outputs = ["svie_stats.csv"]
    write_statistics_csv(paths, os.path.join(out, "svie_stats.csv"))
    if cfg.get("dump_paths"):
        dump(ens, cfg["dump_paths"])
    if cfg["plot"]:
        rows = np.array([r[:1] + r[2:] for r in node_statistics(paths)])
        t = rows[:, 0]
        series = [Series("mean", t, rows[:, 1]), Series("5% quantile", t, rows[:, 3], dashed=True),
                  Series("median", t, rows[:, 4]), Series("95% quantile", t, rows[:, 5], dashed=True),
                  Series(f"path {cfg['path']}", t, paths.values[cfg["path"] % paths.M, :, 0])]
        write_chart(os.path.join(out, "svie_paths.svg"), series,
                    title=f"{problem.name}: forward Euler, N={cfg['n']}, M={ens.M}",
                    xlabel="t", ylabel="x(t)", timestamp=not cfg["no_timestamp"])
        outputs.append("svie_paths.svg")
    _write_manifest(out, cfg, outputs)
    return 0


def cmd_solve(cfg):
    out = cfg["out"]
    svie, bsvie, oracle = example_section5()
    N = cfg["n"]
    p = make_uniform(cfg["T"], N)
    backend = _backend(cfg, svie, p)
    outputs = ["y_diag_stats.csv", "errors.json"]
    extra = {}
    if backend.kind == "tree":
        ens = paths = None
        track = ()
    else:
        ens = _ensemble(cfg, N)
        paths = solve_forward(svie, ens)
        if not 0 <= cfg["path"] < ens.M:
            raise ConfigError(f"--path must lie in [0, {ens.M})")
        track = (cfg["path"],)
    acc = ErrorAccumulator(oracle, cfg["quadrature"])
    sol = solve_backward(bsvie, paths, ens, backend, observers=[acc], track_paths=track)
    rep = acc.report(seed=cfg["seed"])
    rep.picard_avg_iters = sol.picard_stats.average

    t = p.nodes
    with open(os.path.join(out, "y_diag_stats.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "t", "mean", "variance", "mse_vs_oracle"])
        for k in range(N + 1):
            y = sol.y_diag[k][:, 0]
            if backend.kind == "tree":
                pr = _tree_probs(p, k)
                mean = float(pr @ y)
                var = float(pr @ (y - mean) ** 2)
            else:
                mean, var = float(y.mean()), float(y.var(ddof=1))
            wr.writerow([k, repr(float(t[k])), repr(mean), repr(var), repr(float(rep.y_by_k[k]))])
    with open(os.path.join(out, "errors.json"), "w") as fh:
        json.dump({"N": N, "M": rep.M, "seed": cfg["seed"], "y_error": rep.y_error,
                   "y_stderr": rep.y_stderr, "z_error": rep.z_error, "z_stderr": rep.z_stderr,
                   "total": rep.total, "worst_k": rep.worst_k,
                   "picard_avg_iters": rep.picard_avg_iters}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if track:
        m = cfg["path"]
        w = ens.brownian()[m]
        y_num = np.array([sol.y_diag[k][m, 0] for k in range(N + 1)])
        y_true = np.asarray(oracle.y_true(t, w), dtype=float).reshape(-1)
        extra["figure"] = fig = {"path": m, "y_tolerance": FIGURE_Y_TOL,
                                 "z_tolerance": FIGURE_Z_TOL,
                                 "y_max_deviation": float(np.max(np.abs(y_num - y_true))),
                                 "z_panels": {}}
        with open(os.path.join(out, "z_panels.csv"), "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["k", "l", "path", "value", "oracle"])
            panels = []
            for tt in FIGURE_TIMES:
                if tt >= p.T:
                    continue
                k = pi_index(p, tt)
                ls = np.arange(k, N)
                z_num = sol.tracked_z[0, k, k:, 0]
                z_true = np.asarray(oracle.z_true(tt, t[ls], w[ls]), dtype=float).reshape(-1)
                for l, a, b in zip(ls, z_num, z_true):
                    wr.writerow([k, int(l), m, repr(float(a)), repr(float(b))])
                fig["z_panels"][f"{tt:g}"] = float(np.max(np.abs(z_num - z_true)))
                panels.append((tt, ls, z_num, z_true))
        outputs.append("z_panels.csv")
        fig["passed"] = bool(fig["y_max_deviation"] <= FIGURE_Y_TOL
                             and all(v <= FIGURE_Z_TOL for v in fig["z_panels"].values()))
        if cfg["plot"]:
            stamp = not cfg["no_timestamp"]
            write_chart(os.path.join(out, "figure_y.svg"),
                        [Series("exact t sin W(t)", t, y_true),
                         Series("numerical Y^k(t_k)", t, y_num, dashed=True)],
                        title=f"Y along path {m}, N={N}, M={ens.M}", xlabel="t", ylabel="Y",
                        timestamp=stamp)
            outputs.append("figure_y.svg")
            for tt, ls, z_num, z_true in panels:
                name = f"figure_z_t{tt:g}.svg"
                write_chart(os.path.join(out, name),
                            [Series(f"exact Z({tt:g}, s)", t[ls], z_true),
                             Series("numerical Z^k(tau(s))", t[ls], z_num, dashed=True)],
                            title=f"Z at t={tt:g} along path {m}", xlabel="s", ylabel="Z",
                            timestamp=stamp)
                outputs.append(name)
    _write_manifest(out, cfg, outputs, extra)
    return 0


def _tree_probs(p, k):
    from .condexp import BinaryTree
    return BinaryTree(p).probabilities(k)


def cmd_converge(cfg):
    out = cfg["out"]
    stamp = not cfg["no_timestamp"]
    outputs = []
    if cfg["problem"] == "svie-bench":
        problem = example_svie_benchmark()
        if cfg["n_ref"] % max(cfg["n_list"]):
            raise ConfigError("--n-ref must be a multiple of every N")
        t0 = time.perf_counter()
        res = svie_convergence_study(problem, cfg["n_list"], cfg["n_ref"], cfg["m"],
                                     seed=cfg["seed"], T=cfg["T"], workers=cfg["workers"])
        elapsed = time.perf_counter() - t0
        with open(os.path.join(out, "svie_study.csv"), "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["N", "delta", "error"])
            for n, e in zip(res.N_list, res.errors):
                wr.writerow([n, repr(cfg["T"] / n), repr(float(e))])
        summary = {"fits": {"x": res.fit.__dict__}, "N_ref": res.N_ref,
                   "config": {"N_list": res.N_list, "M": cfg["m"], "seed": cfg["seed"]}}
        if cfg.get("timing"):
            summary["wall_time_s"] = round(elapsed, 3)
        with open(os.path.join(out, "rates.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs += ["svie_study.csv", "rates.json", "rate.svg"]
        print(f"slope {res.fit.slope:.3f}  r^2 {res.fit.r_squared:.4f}")
    else:
        svie, bsvie, oracle = example_section5()
        backend = _backend(cfg, svie, make_uniform(cfg["T"], max(cfg["n_list"])))
        res = convergence_study(svie, bsvie, oracle, cfg["n_list"], cfg["m"], seed=cfg["seed"],
                                backend=backend, workers=cfg["workers"],
                                antithetic=cfg["antithetic"], quadrature=cfg["quadrature"],
                                refine_degree=cfg["refine_degree"],
                                timing=bool(cfg.get("timing")))
        write_study_csv(res, os.path.join(out, "study.csv"))
        write_summary_json(res, os.path.join(out, "rates.json"))
        outputs += ["study.csv", "rates.json", "rate.svg"]
        f = res.fits["total"]
        print(f"total slope {f.slope:.3f}  r^2 {f.r_squared:.4f}  excluded {res.excluded}")
    _draw_study(out, stamp)
    _write_manifest(out, cfg, outputs)
    return 0


def _read_study(d):
    study = os.path.join(d, "study.csv")
    rates = os.path.join(d, "rates.json")
    if not os.path.exists(rates):
        raise OSError(f"{rates} not found")
    with open(rates) as fh:
        summary = json.load(fh)
    path = study if os.path.exists(study) else os.path.join(d, "svie_study.csv")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows, summary, path == study


def _draw_study(d, stamp):
    """Draw ``rate.svg`` from the study files, so ``report`` reproduces it exactly."""
    rows, summary, backward = _read_study(d)
    deltas = np.array([float(r["delta"]) for r in rows])
    if backward:
        curves = {name: np.array([float(r[col]) for r in rows])
                  for name, col in (("Y error", "y_error"), ("Z error", "z_error"),
                                    ("total", "total"))}
        key, title = "total", "section5 convergence"
    else:
        curves = {"max_i E|x - x_ref|^2": np.array([float(r["error"]) for r in rows])}
        key, title = "x", f"svie-bench self-convergence, N_ref={summary['N_ref']}"
    f = summary["fits"][key]
    fit = RateFit(f["points"], f["slope"], f["intercept"], f["r_squared"], f["degenerate"])
    _rate_chart(os.path.join(d, "rate.svg"), deltas, curves, fit, stamp, title)


def _rate_chart(path, deltas, curves, fit, stamp, title):
    series = [Series(name, deltas, vals, markers=True) for name, vals in curves.items()]
    if not fit.degenerate:
        series.append(Series(f"fit slope {fit.slope:.2f}", deltas,
                             np.exp(fit.intercept) * deltas ** fit.slope, dashed=True))
    series = [s for s in series if np.all(np.asarray(s.y) > 0)]
    if series:
        write_chart(path, series, title=title, xlabel="mesh", ylabel="error",
                    logx=True, logy=True, timestamp=stamp)


def cmd_report(args):
    rows, summary, _ = _read_study(args.input)
    print(f"{'N':>6} " + " ".join(f"{c:>14}" for c in rows[0] if c != "N"))
    for r in rows:
        print(f"{r['N']:>6} " + " ".join(
            f"{(float(v) if v else float('nan')):>14.6g}" for c, v in r.items() if c != "N"))
    for name, fit in summary["fits"].items():
        print(f"{name:>6}: slope {fit['slope']:.4f}, r^2 {fit['r_squared']:.4f}")
    _draw_study(args.input, not args.no_timestamp)
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise ConfigError("a command is required: " + ", ".join(COMMANDS))
        if args.command == "report":
            return cmd_report(args)
        cfg = _validate(resolve(args))
        os.makedirs(cfg["out"], exist_ok=True)
        return {"simulate-svie": cmd_simulate, "solve-bsvie": cmd_solve,
                "converge": cmd_converge}[args.command](cfg)
    except ConfigError as exc:
        print(f"volterra-euler: error: {exc}", file=sys.stderr)
        return 1
    except InvalidArgumentError as exc:
        print(f"volterra-euler: error: {exc}", file=sys.stderr)
        return 1
    except VolterraError as exc:
        print(f"volterra-euler: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"volterra-euler: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
