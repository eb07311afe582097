"""Command-line interface.

Subcommands: ``generate`` (synthetic datasets), ``fit`` (decentralized fit),
``infer`` (confidence intervals from a fit), ``experiment`` (replicated
testing-error or coverage sweeps), ``topology-info`` (mixing matrix
diagnostics), ``plot`` (render a figure from any output CSV).

Every flag has a config-file equivalent: pass ``--config file.ini`` where the
file holds flat ``key = value`` lines under a section named after the
subcommand; explicit flags override file values.  Exit codes: 0 success,
2 configuration error, 3 numerical error, 4 I/O error.
"""

import argparse
import configparser
import os
import sys
import time

import numpy as np

from .datagen import (Scenario, make_dataset, partition_features, read_dataset,
                      write_dataset)
from .errors import ConfigError, NumericalError
from .experiments import (ExperimentConfig, METHODS, recipe_noise_multiplier,
                          run_coverage_experiment, run_error_experiment,
                          write_coverage_outputs, write_error_outputs,
                          write_failures)
from .inference import (max_cross_block_correlation, node_inference,
                        residual_spread, write_intervals_csv)
from .node import NodeState, PrivacyParams, make_nodes
from .protocol import FitConfig, run_dsg_cqr, write_trace_csv
from .smoothing import QuantileSpec, centralized_fit, rule_of_thumb_bandwidth
from .topology import (metropolis_hastings, named_topology, optimal_mixing_rounds,
                       read_edge_list, step_size_limit, decay_factor,
                       write_edge_list)

# option tables: (flag-name, type, default, help); bool options are off by
# default and turned on by the bare flag or a truthy config value.
_SCENARIO_OPTS = [
    ("n", int, 5000, "sample size"),
    ("p", int, 60, "total number of features"),
    ("m", int, 15, "number of machines"),
    ("tau", float, 0.5, "quantile level in (0, 1)"),
    ("error-kind", str, "homoscedastic", "homoscedastic | heteroscedastic"),
    ("innovation", str, "normal", "normal | t5"),
    ("covariance", str, "ar", "ar | block_ar"),
    ("rho", float, 0.5, "base correlation of the design"),
]

_TOPOLOGY_OPTS = [
    ("topology", str, "random", "star | line | circle | complete | random"),
    ("pi-w", float, 0.5, "edge fraction for the random topology"),
    ("topology-seed", int, 0, "seed for the random topology"),
    ("edges", str, None, "load the topology from a 1-indexed edge-list file"),
]

_FIT_CORE_OPTS = [
    ("h", float, None, "smoothing bandwidth (default: rule of thumb)"),
    ("h-mult", float, 1.5, "rule-of-thumb bandwidth multiplier"),
    ("eta", float, 0.05, "gradient step size"),
    ("kappa0", int, 1, "mixing rounds per iteration"),
    ("max-iter", int, 5000, "iteration cap"),
    ("tol", float, 1e-8, "relative parameter-change tolerance"),
    ("seed", int, 0, "master seed for node RNG streams"),
]

_PRIVACY_OPTS = [
    ("privacy-eps", float, None, "per-iteration privacy epsilon in (0, 1]"),
    ("privacy-delta", float, None, "privacy failure probability in (0, 1)"),
    ("privacy-eps-bar", float, None,
     "overall privacy level; calibrates the per-iteration noise recipe"),
    ("privacy-sensitivity", float, None,
     "fixed l2 sensitivity (default: time-varying empirical estimate)"),
]

OPTIONS = {
    "generate": _SCENARIO_OPTS + [
        ("seed", int, 0, "dataset seed"),
        ("out", str, "dataset", "output directory"),
        ("with-truth", bool, False, "also write beta_truth.csv"),
    ],
    "fit": [
        ("data", str, None, "dataset directory or manifest path"),
        ("out", str, "fit", "output directory"),
        ("tau", float, None, "quantile level (default: from the manifest)"),
    ] + _FIT_CORE_OPTS + _TOPOLOGY_OPTS + _PRIVACY_OPTS + [
        ("beta-truth", str, None, "CSV with true coefficients for error traces"),
        ("with-reference", bool, False,
         "compute a tight centralized reference for loss/algorithm-error traces"),
        ("no-traces", bool, False, "skip per-iteration trace recording"),
        ("plot", bool, False, "render trace.png alongside trace.csv"),
    ],
    "infer": [
        ("data", str, None, "dataset directory or manifest path"),
        ("fit", str, None, "directory written by the fit subcommand"),
        ("out", str, "infer", "output directory"),
        ("mode", str, "both", "hr | hs | both"),
        ("level", float, 0.95, "confidence level"),
        ("tau", float, None, "quantile level (default: from the fit summary)"),
        ("h", float, None, "inference bandwidth (default: rule of thumb)"),
        ("h-mult", float, 0.5, "rule-of-thumb multiplier for inference"),
    ],
    "experiment": _SCENARIO_OPTS + _FIT_CORE_OPTS + _TOPOLOGY_OPTS[:3] + _PRIVACY_OPTS + [
        ("kind", str, "error", "error | coverage"),
        ("methods", str, "dsg_cqr,glb_cqr",
         f"comma-separated subset of {','.join(METHODS)}"),
        ("replications", int, 10, "number of replications"),
        ("train-frac", float, 0.9, "training share of each replication"),
        ("level", float, 0.95, "confidence level (coverage kind)"),
        ("modes", str, "hr", "comma-separated covariance modes (coverage kind)"),
        ("coverage-machines", str, "1,2",
         "comma-separated 1-indexed machines to cover (coverage kind)"),
        ("infer-h-mult", float, 0.5, "inference bandwidth multiplier (coverage)"),
        ("out", str, "experiment", "output directory"),
        ("plot", bool, False, "render summary.png alongside summary.csv"),
    ],
    "topology-info": [
        ("topology", str, "line", "star | line | circle | complete | random"),
        ("m", int, 6, "number of nodes"),
        ("pi-w", float, 0.5, "edge fraction for the random topology"),
        ("topology-seed", int, 0, "seed for the random topology"),
        ("edges", str, None, "load the topology from a 1-indexed edge-list file"),
        ("write-edges", str, None, "serialize the topology to this file"),
        ("eta", float, None, "step size for the optimal-mixing-rounds formula"),
        ("a-ul", float, None, "curvature ratio constant"),
        ("a-l", float, None, "lower curvature bound"),
        ("a-u", float, None, "upper curvature bound"),
        ("f-bar", float, None, "upper density bound"),
        ("sigma-u", float, None, "largest design eigenvalue bound"),
        ("kappa0", int, None, "mixing rounds for the step-size/decay report"),
    ],
    "plot": [
        ("input", str, None, "CSV produced by fit/experiment"),
        ("out", str, None, "output PNG path (default: alongside the CSV)"),
    ],
}

_REQUIRED = {
    "fit": ("data",),
    "infer": ("data", "fit"),
    "plot": ("input",),
}


def _add_options(parser, opts):
    parser.add_argument("--config", type=str, default=None,
                        help="INI-style config file; flags override its values")
    for name, typ, default, help_ in opts:
        flag = "--" + name
        if typ is bool:
            parser.add_argument(flag, action="store_true", default=None,
                                help=help_)
        else:
            shown = "" if default is None else f" (default: {default})"
            parser.add_argument(flag, type=typ, default=None, help=help_ + shown)


def _parse_bool(text):
    return text.strip().lower() in ("1", "true", "yes", "on")


def _resolve(args, command):
    """Merge CLI values, config-file values, and hard defaults."""
    merged = {}
    config = configparser.ConfigParser()
    if args.config is not None:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        config.read(args.config)
    for name, typ, default, _ in OPTIONS[command]:
        dest = name.replace("-", "_")
        val = getattr(args, dest)
        if val is None and config.has_option(command, name):
            raw = config.get(command, name)
            try:
                val = _parse_bool(raw) if typ is bool else typ(raw)
            except ValueError:
                raise ConfigError(
                    f"config [{command}] {name} = {raw!r} is not a valid {typ.__name__}"
                )
        if val is None:
            val = False if typ is bool else default
        merged[dest] = val
    for req in _REQUIRED.get(command, ()):
        if merged[req.replace("-", "_")] is None:
            raise ConfigError(f"--{req} is required for {command!r}")
    return argparse.Namespace(**merged)


def _privacy_from_flags(o, n, p, m):
    """Build PrivacyParams from the three supported flag combinations."""
    recipe, direct = o.privacy_eps_bar is not None, o.privacy_eps is not None
    if not recipe and not direct:
        return None
    if recipe and direct:
        raise ConfigError("give either --privacy-eps-bar or --privacy-eps, not both")
    mode = "empirical" if o.privacy_sensitivity is None else "fixed"
    if recipe:
        q = max(stop - start for start, stop in partition_features(p, m))
        return PrivacyParams(
            enabled=True,
            noise_multiplier=recipe_noise_multiplier(o.privacy_eps_bar, q, n),
            sensitivity_mode=mode, fixed_sensitivity=o.privacy_sensitivity,
        )
    if o.privacy_delta is None:
        raise ConfigError("--privacy-eps needs --privacy-delta")
    return PrivacyParams(enabled=True, epsilon=o.privacy_eps,
                         delta=o.privacy_delta, sensitivity_mode=mode,
                         fixed_sensitivity=o.privacy_sensitivity)


def _build_graph(o, m):
    if o.edges:
        graph = read_edge_list(o.edges)
        if graph.m != m:
            raise ConfigError(f"edge-list file has m={graph.m}, dataset has m={m}")
        return graph
    return named_topology(o.topology, m, pi_w=o.pi_w, seed=o.topology_seed)


def _read_column_csv(path):
    with open(path, encoding="utf-8") as fh:
        next(fh)  # header
        return np.array([float(ln.strip().split(",")[0]) for ln in fh if ln.strip()])


def cmd_generate(o):
    scen = Scenario(n=o.n, p=o.p, m=o.m, tau=o.tau, error_kind=o.error_kind,
                    innovation=o.innovation, covariance=o.covariance,
                    rho=o.rho, seed=o.seed)
    manifest = write_dataset(make_dataset(scen), o.out, with_truth=o.with_truth)
    print(manifest)
    return 0


def cmd_fit(o):
    data = read_dataset(o.data)
    n = len(data.y)
    m = len(data.blocks_X)
    p = sum(b.shape[1] for b in data.blocks_X)
    tau = o.tau if o.tau is not None else float(data.meta["tau"])
    h = o.h if o.h is not None else rule_of_thumb_bandwidth(p, n, tau, o.h_mult)
    spec = QuantileSpec(tau=tau, h=h)
    mixing = metropolis_hastings(_build_graph(o, m))
    privacy = _privacy_from_flags(o, n, p, m)

    beta_truth = None
    if o.beta_truth:
        beta_truth = _read_column_csv(o.beta_truth)
    elif data.beta_truth is not None:
        beta_truth = data.beta_truth
    beta_star = None
    if o.with_reference:
        ref = centralized_fit(np.hstack(data.blocks_X), data.y, spec, o.eta,
                              max_iter=o.max_iter, tol=1e-10)
        beta_star = ref.beta

    nodes = make_nodes(data.blocks_X, data.y, seed=o.seed)
    cfg = FitConfig(spec=spec, eta=o.eta, kappa0=o.kappa0, max_iter=o.max_iter,
                    tol=o.tol, privacy=privacy, master_seed=o.seed,
                    record_traces=not o.no_traces, beta_truth=beta_truth,
                    beta_star=beta_star)
    started = time.perf_counter()
    result = run_dsg_cqr(nodes, mixing, cfg)
    elapsed = time.perf_counter() - started

    os.makedirs(o.out, exist_ok=True)
    with open(os.path.join(o.out, "beta_hat.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write("node,coef_index,value\n")
        for j, beta in enumerate(result.beta_hat):
            for k, v in enumerate(beta):
                fh.write(f"{j + 1},{k + 1},{repr(float(v))}\n")
    with open(os.path.join(o.out, "z_final.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write("node,sample_index,value\n")
        for j, z in enumerate(result.z_final):
            for i, v in enumerate(z):
                fh.write(f"{j + 1},{i + 1},{repr(float(v))}\n")
    if not o.no_traces:
        write_trace_csv(result.trace, os.path.join(o.out, "trace.csv"))
    summary = os.path.join(o.out, "fit_summary.txt")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("[fit]\n")
        fh.write(f"n = {n}\np = {p}\nm = {m}\n")
        fh.write(f"tau = {repr(tau)}\nh = {repr(h)}\neta = {repr(o.eta)}\n")
        fh.write(f"kappa0 = {o.kappa0}\nalpha = {repr(mixing.alpha)}\n")
        fh.write(f"iterations = {result.iterations}\n")
        fh.write(f"converged = {result.converged}\n")
        fh.write(f"tracking_error = {repr(result.tracking_error)}\n")
        fh.write(f"privacy = {'on' if privacy else 'off'}\n")
        fh.write(f"seed = {o.seed}\nwall_time_s = {elapsed:.3f}\n")
    if o.plot and not o.no_traces:
        from .plots import plot_trace
        plot_trace(os.path.join(o.out, "trace.csv"))
    print(summary)
    return 0


def _read_fit_summary(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("["):
                continue
            key, _, value = ln.partition("=")
            out[key.strip()] = value.strip()
    return out


def cmd_infer(o):
    data = read_dataset(o.data)
    n = len(data.y)
    m = len(data.blocks_X)
    p = sum(b.shape[1] for b in data.blocks_X)
    summary_path = os.path.join(o.fit, "fit_summary.txt")
    if not os.path.isfile(summary_path):
        raise ConfigError(f"no fit summary at {summary_path}; run fit first")
    fit_meta = _read_fit_summary(summary_path)
    tau = o.tau if o.tau is not None else float(fit_meta["tau"])
    h = o.h if o.h is not None else rule_of_thumb_bandwidth(p, n, tau, o.h_mult)
    spec = QuantileSpec(tau=tau, h=h)

    beta_rows = {}
    with open(os.path.join(o.fit, "beta_hat.csv"), encoding="utf-8") as fh:
        next(fh)
        for ln in fh:
            j, k, v = ln.strip().split(",")
            beta_rows.setdefault(int(j) - 1, {})[int(k) - 1] = float(v)
    z_rows = {}
    with open(os.path.join(o.fit, "z_final.csv"), encoding="utf-8") as fh:
        next(fh)
        for ln in fh:
            j, i, v = ln.strip().split(",")
            z_rows.setdefault(int(j) - 1, {})[int(i) - 1] = float(v)

    nodes = []
    for j, X in enumerate(data.blocks_X):
        beta = np.array([beta_rows[j][k] for k in range(X.shape[1])])
        node = NodeState(j, X, data.y, beta0=beta)
        node.z = np.array([z_rows[j][i] for i in range(n)])
        nodes.append(node)

    modes = ("hr", "hs") if o.mode == "both" else (o.mode,)
    if any(mode not in ("hr", "hs") for mode in modes):
        raise ConfigError(f"--mode must be hr, hs, or both, got {o.mode!r}")
    os.makedirs(o.out, exist_ok=True)
    paths = []
    for mode in modes:
        reports = [node_inference(node, m, spec, level=o.level, mode=mode)
                   for node in nodes]
        path = os.path.join(o.out, f"intervals_{mode}.csv")
        write_intervals_csv(reports, path)
        paths.append(path)
    spread = residual_spread(nodes, m)
    cross = max_cross_block_correlation(data.blocks_X) if m > 1 else 0.0
    with open(os.path.join(o.out, "infer_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("[infer]\n")
        fh.write(f"tau = {repr(tau)}\nh = {repr(h)}\nlevel = {repr(o.level)}\n")
        fh.write(f"modes = {','.join(modes)}\n")
        fh.write(f"residual_spread = {repr(spread)}\n")
        fh.write(f"max_cross_block_correlation = {repr(cross)}\n")
        fh.write("caveat = intervals assume block-independent features "
                 "across machines (not verified from data)\n")
    for path in paths:
        print(path)
    print(f"max cross-block sample correlation: {cross:.3f}")
    return 0


def cmd_experiment(o):
    methods = tuple(s.strip() for s in o.methods.split(",") if s.strip())
    modes = tuple(s.strip() for s in o.modes.split(",") if s.strip())
    machines = tuple(int(s) for s in o.coverage_machines.split(",") if s.strip())
    cfg = ExperimentConfig(
        n=o.n, p=o.p, m=o.m, tau=o.tau, error_kind=o.error_kind,
        innovation=o.innovation, covariance=o.covariance, rho=o.rho,
        topology=o.topology, pi_w=o.pi_w, topology_seed=o.topology_seed,
        eta=o.eta, kappa0=o.kappa0, max_iter=o.max_iter, tol=o.tol,
        h=o.h, h_mult=o.h_mult, eps_bar=o.privacy_eps_bar,
        epsilon=o.privacy_eps, delta=o.privacy_delta, kind=o.kind,
        methods=methods, replications=o.replications, train_frac=o.train_frac,
        seed=o.seed, level=o.level, modes=modes, coverage_machines=machines,
        infer_h_mult=o.infer_h_mult,
    )
    started = time.perf_counter()
    if cfg.kind == "error":
        rows, summary, failures = run_error_experiment(cfg)
        write_error_outputs(o.out, rows, summary)
    else:
        rows, summary, failures = run_coverage_experiment(cfg)
        write_coverage_outputs(o.out, rows, summary)
    elapsed = time.perf_counter() - started
    failure_path = write_failures(o.out, failures)
    if failures:
        print(f"warning: {len(failures)} replication failures recorded in "
              f"{failure_path}", file=sys.stderr)
    if o.plot:
        from .plots import plot_file
        plot_file(os.path.join(o.out, "summary.csv"))
    print(os.path.join(o.out, "summary.csv"))
    print(f"{cfg.kind} experiment: {cfg.replications} replications in "
          f"{elapsed:.1f}s")
    return 0


def cmd_topology_info(o):
    if o.edges:
        graph = read_edge_list(o.edges)
    else:
        graph = named_topology(o.topology, o.m, pi_w=o.pi_w, seed=o.topology_seed)
    mixing = metropolis_hastings(graph)
    if o.write_edges:
        write_edge_list(graph, o.write_edges)
    print(f"m = {graph.m}")
    print(f"edges = {len(graph.edges)}")
    print(f"alpha = {repr(mixing.alpha)}")
    print("W =")
    print(np.array2string(mixing.W, precision=6, suppress_small=True))
    constants = (o.eta, o.a_ul, o.a_l, o.f_bar, o.sigma_u)
    if all(v is not None for v in constants):
        k_opt = optimal_mixing_rounds(mixing.alpha, o.eta, o.a_ul, o.a_l,
                                      o.f_bar, graph.m, o.sigma_u)
        print(f"kappa0_opt = {k_opt}")
    if all(v is not None for v in (o.a_l, o.a_u, o.f_bar, o.sigma_u, o.kappa0)):
        limit = step_size_limit(mixing.alpha, o.kappa0, o.a_l, o.a_u, o.f_bar,
                                graph.m, o.sigma_u)
        print(f"step_size_limit = {repr(limit)}")
        if o.eta is not None:
            rho = decay_factor(o.eta, mixing.alpha, o.kappa0, o.a_l, o.a_u,
                               o.f_bar, graph.m, o.sigma_u)
            print(f"decay_factor = {repr(rho)}")
    return 0


def cmd_plot(o):
    from .plots import plot_file
    print(plot_file(o.input, o.out))
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "infer": cmd_infer,
    "experiment": cmd_experiment,
    "topology-info": cmd_topology_info,
    "plot": cmd_plot,
}


_COMMAND_HELP = {
    "generate": "write a synthetic feature-partitioned dataset",
    "fit": "run the decentralized fit on a dataset directory",
    "infer": "build per-node confidence intervals from a finished fit",
    "experiment": "replicated testing-error or coverage sweeps",
    "topology-info": "print mixing-matrix diagnostics for a topology",
    "plot": "render a figure from any output CSV",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dsgcqr",
        description="Decentralized smoothed quantile regression over "
                    "feature-partitioned data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in OPTIONS.items():
        sp = sub.add_parser(command, help=_COMMAND_HELP[command])
        _add_options(sp, opts)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args, args.command)
        return _COMMANDS[args.command](opts)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
