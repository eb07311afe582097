"""Replicated experiment drivers: testing-error sweeps and interval coverage.

Each replication derives its own seeds from the experiment master seed, so
results are independent of the worker-pool size; replications may run in a
thread pool capped by the ``DSGCQR_THREADS`` environment variable, and a
single collector keeps output rows in replication order.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .datagen import (Scenario, make_dataset, partition_features,
                      train_test_split)
from .errors import ConfigError, NumericalError
from .inference import node_inference
from .node import PrivacyParams, make_nodes
from .protocol import FitConfig, full_beta, run_dsg_cqr
from .smoothing import (QuantileSpec, centralized_fit, quantile_objective,
                        rule_of_thumb_bandwidth)
from .topology import metropolis_hastings, named_topology

METHODS = ("dsg_cqr", "dsg_cqr_pp", "glb_cqr", "iso_cqr")

ERROR_ROWS_HEADER = "rep,method,test_loss,est_err"
ERROR_SUMMARY_HEADER = ("method,mean_test_loss,sd_test_loss,"
                        "mean_est_err,sd_est_err,n_reps,n_failed")
COVERAGE_ROWS_HEADER = "rep,machine,coef_index,mode,estimate,lower,upper,width,covered"
COVERAGE_SUMMARY_HEADER = "machine,coef_index,mode,aecp,avg_width,n_reps,n_failed"


def pool_size():
    """Worker count: DSGCQR_THREADS when set, else min(4, cpu count)."""
    env = os.environ.get("DSGCQR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DSGCQR_THREADS must be an integer, got {env!r}")
    return min(4, os.cpu_count() or 1)


def recipe_noise_multiplier(eps_bar, q, n):
    """Per-iteration noise scale for an overall privacy level.

    The reference experiments inject Gaussian noise with standard deviation
    sqrt((q + ln n) / (q * ln n)) times the sensitivity at overall level 0.5
    (the largest noise that keeps statistical accuracy, with q the local
    feature count); other levels scale the multiplier as 1 / eps_bar like
    the Gaussian mechanism does at a fixed failure probability.
    """
    if eps_bar <= 0:
        raise ValueError("overall privacy level must be positive")
    if q < 1 or n < 2:
        raise ValueError("need q >= 1 and n >= 2")
    base = np.sqrt((q + np.log(n)) / (q * np.log(n)))
    return float(0.5 / eps_bar * base)


@dataclass
class ExperimentConfig:
    """One experiment sweep: scenario, network, fit settings, replication plan."""

    # scenario
    n: int = 5000
    p: int = 60
    m: int = 15
    tau: float = 0.25
    error_kind: str = "homoscedastic"
    innovation: str = "normal"
    covariance: str = "ar"
    rho: float = 0.5
    # network
    topology: str = "random"
    pi_w: float = 0.5
    topology_seed: int = 0
    # fit
    eta: float = 0.1
    kappa0: int = 1
    max_iter: int = 5000
    tol: float = 1e-7
    h: float = None
    h_mult: float = 1.5
    # privacy (for the dsg_cqr_pp method)
    eps_bar: float = None
    epsilon: float = None
    delta: float = None
    # replication plan
    kind: str = "error"
    methods: tuple = ("dsg_cqr", "glb_cqr")
    replications: int = 1
    train_frac: float = 0.9
    seed: int = 0
    # coverage-specific
    level: float = 0.95
    modes: tuple = ("hr",)
    coverage_machines: tuple = (1, 2)
    infer_h_mult: float = 0.5

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.kind not in ("error", "coverage"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        bad = [mth for mth in self.methods if mth not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")


def _derived_seeds(master_seed, count):
    """One (data, split, fit) integer seed triple per replication."""
    out = []
    for child in np.random.SeedSequence(master_seed).spawn(count):
        state = child.generate_state(3)
        out.append(tuple(int(v) for v in state))
    return out


def _privacy_from(cfg, n_train, q):
    if cfg.eps_bar is not None:
        return PrivacyParams(
            enabled=True,
            noise_multiplier=recipe_noise_multiplier(cfg.eps_bar, q, n_train),
        )
    if cfg.epsilon is not None and cfg.delta is not None:
        return PrivacyParams(enabled=True, epsilon=cfg.epsilon, delta=cfg.delta)
    raise ConfigError(
        "dsg_cqr_pp needs either an overall privacy level (eps_bar) "
        "or a per-iteration (epsilon, delta) pair"
    )


class _ErrorRunner:
    """Shared, read-only state for the testing-error experiment."""

    def __init__(self, cfg):
        self.cfg = cfg
        scen = Scenario(n=cfg.n, p=cfg.p, m=cfg.m, tau=cfg.tau,
                        error_kind=cfg.error_kind, innovation=cfg.innovation,
                        covariance=cfg.covariance, rho=cfg.rho)
        self.scenario = scen
        self.n_train = int(np.floor(cfg.train_frac * cfg.n))
        h = cfg.h
        if h is None:
            h = rule_of_thumb_bandwidth(cfg.p, self.n_train, cfg.tau, cfg.h_mult)
        self.spec = QuantileSpec(tau=cfg.tau, h=h)
        self.mixing = None
        if any(mth.startswith("dsg") for mth in cfg.methods):
            graph = named_topology(cfg.topology, cfg.m, pi_w=cfg.pi_w,
                                   seed=cfg.topology_seed)
            self.mixing = metropolis_hastings(graph)
        self.q_local = max(stop - start
                           for start, stop in partition_features(cfg.p, cfg.m))
        self.privacy = None
        if "dsg_cqr_pp" in cfg.methods:
            self.privacy = _privacy_from(cfg, self.n_train, self.q_local)
        self.iso_spec = None
        if "iso_cqr" in cfg.methods:
            p1 = partition_features(cfg.p, cfg.m)[0][1]
            h_iso = cfg.h
            if h_iso is None:
                h_iso = rule_of_thumb_bandwidth(p1, self.n_train, cfg.tau,
                                                cfg.h_mult)
            self.iso_spec = QuantileSpec(tau=cfg.tau, h=h_iso)

    def run_one(self, rep, seeds):
        cfg = self.cfg
        data_seed, split_seed, fit_seed = seeds
        data = make_dataset(replace(self.scenario, seed=data_seed))
        train, test = train_test_split(cfg.n, cfg.train_frac, split_seed)
        X_tr, y_tr = data.X[train], data.y[train]
        X_te, y_te = data.X[test], data.y[test]
        blocks_tr = [X_tr[:, start:stop] for start, stop in data.blocks]

        rows, failures = [], []
        for method in cfg.methods:
            try:
                beta = self._fit_method(method, data, blocks_tr, X_tr, y_tr,
                                        fit_seed)
                loss = quantile_objective(X_te, y_te, beta, cfg.tau)
                est_err = float(np.linalg.norm(beta - data.beta_truth))
                rows.append((rep, method, loss, est_err))
            except NumericalError as exc:
                failures.append((rep, method, str(exc)))
        return rows, failures

    def _fit_method(self, method, data, blocks_tr, X_tr, y_tr, fit_seed):
        cfg = self.cfg
        if method == "glb_cqr":
            fit = centralized_fit(X_tr, y_tr, self.spec, cfg.eta,
                                  max_iter=cfg.max_iter, tol=cfg.tol)
            return fit.beta
        if method == "iso_cqr":
            start, stop = data.blocks[0]
            fit = centralized_fit(X_tr[:, start:stop], y_tr, self.iso_spec,
                                  cfg.eta, max_iter=cfg.max_iter, tol=cfg.tol)
            beta = np.zeros(cfg.p)
            beta[start:stop] = fit.beta
            return beta
        privacy = self.privacy if method == "dsg_cqr_pp" else None
        nodes = make_nodes(blocks_tr, y_tr, seed=fit_seed)
        fit_cfg = FitConfig(spec=self.spec, eta=cfg.eta, kappa0=cfg.kappa0,
                            max_iter=cfg.max_iter, tol=cfg.tol, privacy=privacy,
                            master_seed=fit_seed, record_traces=False)
        result = run_dsg_cqr(nodes, self.mixing, fit_cfg)
        return full_beta(result.nodes)


class _CoverageRunner:
    """Shared, read-only state for the interval-coverage experiment."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.scenario = Scenario(n=cfg.n, p=cfg.p, m=cfg.m, tau=cfg.tau,
                                 error_kind=cfg.error_kind,
                                 innovation=cfg.innovation,
                                 covariance=cfg.covariance, rho=cfg.rho)
        h = cfg.h
        if h is None:
            h = rule_of_thumb_bandwidth(cfg.p, cfg.n, cfg.tau, cfg.h_mult)
        self.spec = QuantileSpec(tau=cfg.tau, h=h)
        h_inf = rule_of_thumb_bandwidth(cfg.p, cfg.n, cfg.tau, cfg.infer_h_mult)
        self.infer_spec = QuantileSpec(tau=cfg.tau, h=h_inf)
        graph = named_topology(cfg.topology, cfg.m, pi_w=cfg.pi_w,
                               seed=cfg.topology_seed)
        self.mixing = metropolis_hastings(graph)

    def run_one(self, rep, seeds):
        cfg = self.cfg
        data_seed, _, fit_seed = seeds
        data = make_dataset(replace(self.scenario, seed=data_seed))
        nodes = make_nodes(data.machine_blocks(), data.y, seed=fit_seed)
        fit_cfg = FitConfig(spec=self.spec, eta=cfg.eta, kappa0=cfg.kappa0,
                            max_iter=cfg.max_iter, tol=cfg.tol,
                            master_seed=fit_seed, record_traces=False)
        rows, failures = [], []
        try:
            result = run_dsg_cqr(nodes, self.mixing, fit_cfg)
        except NumericalError as exc:
            failures.append((rep, "fit", str(exc)))
            return rows, failures
        for machine in cfg.coverage_machines:
            j = machine - 1
            start, _ = data.blocks[j]
            truth = data.beta_truth[start]
            for mode in cfg.modes:
                try:
                    report = node_inference(result.nodes[j], cfg.m,
                                            self.infer_spec, level=cfg.level,
                                            mode=mode)
                except NumericalError as exc:
                    failures.append((rep, f"machine_{machine}_{mode}", str(exc)))
                    continue
                lo, hi = report.intervals[0]
                rows.append((rep, machine, 1, mode, float(report.estimate[0]),
                             float(lo), float(hi), float(hi - lo),
                             int(lo <= truth <= hi)))
        return rows, failures


def _run_replications(runner, replications, master_seed):
    seeds = _derived_seeds(master_seed, replications)
    workers = pool_size()
    if workers == 1:
        results = [runner.run_one(rep, seeds[rep]) for rep in range(replications)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(runner.run_one, range(replications), seeds))
    rows, failures = [], []
    for rep_rows, rep_failures in results:  # collector keeps replication order
        rows.extend(rep_rows)
        failures.extend(rep_failures)
    return rows, failures


def run_error_experiment(cfg):
    """Generate/split/fit/evaluate per replication, for each requested method.

    Returns (rows, summary, failures), where rows are per-replication
    (rep, method, test_loss, est_err) tuples and summary aggregates the mean
    and standard deviation per method over the successful replications.
    """
    runner = _ErrorRunner(cfg)
    rows, failures = _run_replications(runner, cfg.replications, cfg.seed)
    summary = []
    failed_by_method = {}
    for _, method, _ in failures:
        failed_by_method[method] = failed_by_method.get(method, 0) + 1
    for method in cfg.methods:
        losses = np.array([r[2] for r in rows if r[1] == method])
        errs = np.array([r[3] for r in rows if r[1] == method])
        if losses.size == 0:
            summary.append((method, float("nan"), float("nan"), float("nan"),
                            float("nan"), 0, failed_by_method.get(method, 0)))
            continue
        sd = float(np.std(losses, ddof=1)) if losses.size > 1 else 0.0
        sd_e = float(np.std(errs, ddof=1)) if errs.size > 1 else 0.0
        summary.append((method, float(np.mean(losses)), sd,
                        float(np.mean(errs)), sd_e, int(losses.size),
                        failed_by_method.get(method, 0)))
    return rows, summary, failures


def run_coverage_experiment(cfg):
    """Fit and construct intervals per replication; aggregate coverage and width."""
    runner = _CoverageRunner(cfg)
    rows, failures = _run_replications(runner, cfg.replications, cfg.seed)
    summary = []
    for machine in cfg.coverage_machines:
        for mode in cfg.modes:
            sel = [r for r in rows if r[1] == machine and r[3] == mode]
            n_fail = sum(1 for f in failures if f[1] == f"machine_{machine}_{mode}")
            if not sel:
                summary.append((machine, 1, mode, float("nan"), float("nan"),
                                0, n_fail))
                continue
            aecp = float(np.mean([r[8] for r in sel]))
            width = float(np.mean([r[7] for r in sel]))
            summary.append((machine, 1, mode, aecp, width, len(sel), n_fail))
    return rows, summary, failures


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(
                repr(v) if isinstance(v, float) else str(v) for v in row
            ) + "\n")


def write_error_outputs(outdir, rows, summary):
    os.makedirs(outdir, exist_ok=True)
    _write_csv(os.path.join(outdir, "replications.csv"), ERROR_ROWS_HEADER, rows)
    _write_csv(os.path.join(outdir, "summary.csv"), ERROR_SUMMARY_HEADER, summary)


def write_coverage_outputs(outdir, rows, summary):
    os.makedirs(outdir, exist_ok=True)
    _write_csv(os.path.join(outdir, "replications.csv"), COVERAGE_ROWS_HEADER, rows)
    _write_csv(os.path.join(outdir, "summary.csv"), COVERAGE_SUMMARY_HEADER, summary)


def write_failures(outdir, failures):
    if not failures:
        return None
    path = os.path.join(outdir, "failures.csv")
    _write_csv(path, "rep,method,error",
               [(r, mth, msg.replace(",", ";")) for r, mth, msg in failures])
    return path
