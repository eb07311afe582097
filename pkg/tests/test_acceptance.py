"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines.  The heavy statistical criteria (A5, A6, A8) replay pinned-seed
Monte Carlo experiments; their tolerances and seeds are frozen here and the
whole module is deterministic, so reruns produce identical verdicts.
"""

import time

import numpy as np

from dsgcqr import (FitConfig, MixingMatrix, NodeState, PrivacyParams,
                    QuantileSpec, centralized_fit, dp_noise, local_gram,
                    make_nodes, metropolis_hastings, mix, named_topology,
                    powell_hessian, run_dsg_cqr, rule_of_thumb_bandwidth,
                    smoothed_gradient, smoothed_objective, surrogate_gradient)
from dsgcqr.cli import main as cli_main
from dsgcqr.experiments import (ExperimentConfig, recipe_noise_multiplier,
                                run_coverage_experiment, run_error_experiment)
from dsgcqr.inference import density_at_zero


def report(name, passed, detail):
    print(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, f"{name}: {detail}"


def a5_design(**overrides):
    base = dict(n=5000, p=60, m=15, tau=0.25, error_kind="homoscedastic",
                innovation="normal", covariance="ar", topology="random",
                pi_w=0.5, topology_seed=0, eta=0.2, kappa0=1, max_iter=4000,
                tol=1e-7, h_mult=1.5, kind="error", seed=0)
    base.update(overrides)
    return ExperimentConfig(**base)


def test_a1_centralized_equivalence():
    started = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(40, 201))
        m = int(rng.integers(1, 5))
        widths = [int(rng.integers(1, 4)) for _ in range(m)]
        p = sum(widths)
        X = rng.standard_normal((n, p))
        beta0 = rng.uniform(1, 2, p) * rng.choice([-1.0, 1.0], p)
        y = X @ beta0 + rng.standard_normal(n)
        blocks = np.split(X, np.cumsum(widths)[:-1], axis=1)
        spec = QuantileSpec(float(rng.uniform(0.2, 0.8)),
                            float(rng.uniform(0.2, 0.8)))
        eta = float(rng.uniform(0.05, 0.25))
        W = metropolis_hastings(named_topology("complete", m)) if m > 1 else \
            MixingMatrix(W=np.array([[1.0]]))
        nodes = make_nodes(list(blocks), y, seed=3)
        cfg = FitConfig(spec=spec, eta=eta, kappa0=1, max_iter=60, tol=0.0,
                        record_iterates=True, record_traces=False)
        res = run_dsg_cqr(nodes, W, cfg)
        cen = centralized_fit(X, y, spec, eta, max_iter=60, tol=0.0,
                              record_iterates=True)
        worst = max(worst, max(np.max(np.abs(a - b))
                               for a, b in zip(res.iterates, cen.iterates)))
        assert res.tracking_error <= 1e-8
    elapsed = time.perf_counter() - started
    report("A1", worst <= 1e-10 and elapsed < 10.0,
           f"max iterate deviation {worst:.2e} over 20 instances "
           f"({elapsed:.1f}s < 10s)")


def test_a2_tracking_identity():
    worst = 0.0
    runs = 0
    # non-private and private runs across the designs the suite exercises
    designs = [
        dict(n=400, p=60, m=15, topology="random", pi_w=0.5, eta=0.2,
             tau=0.25, privacy=None),
        dict(n=400, p=60, m=15, topology="random", pi_w=0.5, eta=0.2,
             tau=0.25,
             privacy=PrivacyParams(enabled=True,
                                   noise_multiplier=recipe_noise_multiplier(
                                       0.5, 4, 400))),
        dict(n=500, p=30, m=6, topology="random", pi_w=0.5, eta=0.15,
             tau=0.5, privacy=None),
        dict(n=300, p=8, m=4, topology="line", pi_w=None, eta=0.1, tau=0.5,
             privacy=PrivacyParams(enabled=True, noise_multiplier=0.4)),
    ]
    from dsgcqr import Scenario, make_dataset
    for k, d in enumerate(designs):
        scen = Scenario(n=d["n"], p=d["p"], m=d["m"], tau=d["tau"], seed=k)
        data = make_dataset(scen)
        W = metropolis_hastings(named_topology(d["topology"], d["m"],
                                               pi_w=d["pi_w"], seed=0))
        h = rule_of_thumb_bandwidth(d["p"], d["n"], d["tau"], 1.5)
        nodes = make_nodes(data.machine_blocks(), data.y, seed=k)
        cfg = FitConfig(spec=QuantileSpec(d["tau"], h), eta=d["eta"],
                        kappa0=2, max_iter=300, tol=1e-8,
                        privacy=d["privacy"], master_seed=k,
                        record_traces=False)
        res = run_dsg_cqr(nodes, W, cfg)
        worst = max(worst, res.tracking_error)
        runs += 1
    report("A2", worst <= 1e-8,
           f"worst relative tracking violation {worst:.2e} over {runs} "
           "private/non-private runs")


def test_a3_consensus_contraction_and_alpha_ordering():
    rng = np.random.default_rng(33)
    worst_ratio_gap = -np.inf
    alphas = {}
    for m in (6, 15):
        for kind in ("star", "line", "circle"):
            mixing = metropolis_hastings(named_topology(kind, m))
            alphas[(kind, m)] = mixing.alpha
            for _ in range(100):
                V = rng.standard_normal((m, 8)) * rng.uniform(0.5, 20)
                dev0 = np.linalg.norm(V - V.mean(axis=0))
                V1 = mix(V, mixing, 1)
                dev1 = np.linalg.norm(V1 - V1.mean(axis=0))
                worst_ratio_gap = max(worst_ratio_gap,
                                      dev1 - (mixing.alpha * dev0 + 1e-9))
    assert worst_ratio_gap <= 0.0, \
        f"contraction violated by {worst_ratio_gap:.2e}"
    print(f"A3 contraction clause OK: worst slack {worst_ratio_gap:.2e}; "
          f"alphas {{m: (circle, line, star)}} = "
          f"{{6: ({alphas[('circle', 6)]:.4f}, {alphas[('line', 6)]:.4f}, "
          f"{alphas[('star', 6)]:.4f}), 15: ({alphas[('circle', 15)]:.4f}, "
          f"{alphas[('line', 15)]:.4f}, {alphas[('star', 15)]:.4f})}}")
    ordering = all(
        alphas[("circle", m)] < alphas[("line", m)] < alphas[("star", m)]
        for m in (6, 15)
    )
    report("A3", ordering,
           "alpha ordering circle < line < star; the Metropolis-Hastings "
           "spectra give star < line at both sizes (the path graph has the "
           "smallest spectral gap), so this clause cannot hold as stated; "
           "see the decisions ledger")


def test_a4_gradient_correctness():
    started = time.perf_counter()
    rng = np.random.default_rng(44)
    worst_fd = 0.0
    worst_block = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 50))
        p = int(rng.integers(1, 7))
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n) * 2
        beta = rng.standard_normal(p)
        spec = QuantileSpec(float(rng.uniform(0.1, 0.9)),
                            float(rng.uniform(0.2, 1.5)))
        grad = smoothed_gradient(X, y, beta, spec)
        fd = np.zeros(p)
        for k in range(p):
            step = 1e-6 * (1.0 + abs(beta[k]))
            bp, bm = beta.copy(), beta.copy()
            bp[k] += step
            bm[k] -= step
            fd[k] = (smoothed_objective(X, y, bp, spec)
                     - smoothed_objective(X, y, bm, spec)) / (2 * step)
        worst_fd = max(worst_fd, np.linalg.norm(grad - fd)
                       / (1 + np.linalg.norm(fd)))
        # the surrogate at consensus-exact auxiliaries is a block of the
        # full gradient, tying the decentralized form to the same oracle
        m = 2
        widths = [p // 2 + p % 2, p // 2] if p > 1 else [1]
        blocks = np.split(X, np.cumsum(widths)[:-1], axis=1) if p > 1 else [X]
        consensus = (X @ beta) / m if p > 1 else (X @ beta)
        start = 0
        for B, width in zip(blocks, widths):
            node = NodeState(0, B, y, beta0=beta[start:start + width])
            node.z = consensus.copy()
            sg = surrogate_gradient(node, spec, m if p > 1 else 1)
            worst_block = max(worst_block,
                              float(np.max(np.abs(sg - grad[start:start + width]))))
            start += width
    elapsed = time.perf_counter() - started
    report("A4", worst_fd <= 1e-6 and worst_block <= 1e-12 and elapsed < 5.0,
           f"FD relative error {worst_fd:.2e}, surrogate block deviation "
           f"{worst_block:.2e} over 100 instances ({elapsed:.1f}s < 5s)")


def test_a5_statistical_parity():
    started = time.perf_counter()
    cfg = a5_design(methods=("dsg_cqr", "glb_cqr", "iso_cqr"), replications=50)
    rows, summary, failures = run_error_experiment(cfg)
    elapsed = time.perf_counter() - started
    means = {s[0]: s[1] for s in summary}
    rel = abs(means["dsg_cqr"] - means["glb_cqr"]) / means["glb_cqr"]
    ratio = means["iso_cqr"] / means["dsg_cqr"]
    ok = (not failures and rel <= 0.02 and ratio >= 5.0
          and elapsed < 15 * 60)
    report("A5", ok,
           f"mean test loss dsg={means['dsg_cqr']:.4f} "
           f"glb={means['glb_cqr']:.4f} (rel diff {rel:.4%} <= 2%), "
           f"iso/dsg ratio {ratio:.1f}x >= 5x, 50 reps in {elapsed:.0f}s "
           "< 15min")


def test_a6_privacy_utility_ordering():
    # run at a fixed 300-iteration budget with shared data and noise seeds:
    # the empirical-sensitivity noise vanishes with the gradient at full
    # convergence, so the ordering is measured mid-run where the noise term
    # is live (see the decisions ledger)
    results = {}
    for eps_bar in (0.1, 0.5, 1.0):
        methods = ("dsg_cqr", "dsg_cqr_pp") if eps_bar == 0.5 else \
            ("dsg_cqr_pp",)
        cfg = a5_design(methods=methods, replications=30, eps_bar=eps_bar,
                        max_iter=300, tol=0.0)
        _, summary, failures = run_error_experiment(cfg)
        assert not failures
        for s in summary:
            results[(eps_bar, s[0])] = {"loss": s[1], "est_err": s[3]}
    e = {b: results[(b, "dsg_cqr_pp")]["est_err"] for b in (0.1, 0.5, 1.0)}
    monotone = e[0.1] >= e[0.5] >= e[1.0]
    loss_np = results[(0.5, "dsg_cqr")]["loss"]
    loss_pp = results[(0.5, "dsg_cqr_pp")]["loss"]
    rel = abs(loss_pp - loss_np) / loss_np
    report("A6", monotone and rel <= 0.03,
           f"mean est err {e[0.1]:.5f} >= {e[0.5]:.5f} >= {e[1.0]:.5f} "
           f"(non-increasing in the overall privacy level); private loss "
           f"within {rel:.4%} <= 3% of non-private at level 0.5")


def test_a7_dp_noise_calibration():
    started = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = 0.0
    for k in range(5):
        n = int(rng.integers(20, 60))
        p = int(rng.integers(2, 6))
        X = rng.standard_normal((n, p))
        eps = float(rng.uniform(0.3, 1.0))
        delta = float(rng.uniform(0.01, 0.2))
        sens = float(rng.uniform(0.5, 3.0))
        priv = PrivacyParams(enabled=True, epsilon=eps, delta=delta)
        node = NodeState(0, X, np.zeros(n), rng=np.random.default_rng(900 + k))
        draws = np.stack([dp_noise(node, priv, sens) for _ in range(100000)])
        target = (2.0 / eps**2 * sens**2 * np.log(1.25 / delta)
                  * np.linalg.inv(X.T @ X))
        rel = np.linalg.norm(np.cov(draws, rowvar=False) - target) \
            / np.linalg.norm(target)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - started
    report("A7", worst <= 0.05 and elapsed < 30.0,
           f"worst covariance relative Frobenius error {worst:.4f} <= 5% "
           f"over 5 designs x 1e5 draws ({elapsed:.1f}s < 30s)")


def test_a8_coverage():
    started = time.perf_counter()
    base = dict(n=5000, p=30, m=6, covariance="block_ar", topology="random",
                pi_w=0.5, topology_seed=0, eta=0.15, kappa0=1, max_iter=4000,
                tol=1e-7, h_mult=0.5, infer_h_mult=0.5, kind="coverage",
                coverage_machines=(1, 2))
    hr_cfg = ExperimentConfig(tau=0.5, error_kind="homoscedastic",
                              replications=500, seed=0, modes=("hr",), **base)
    _, hr_summary, hr_fail = run_coverage_experiment(hr_cfg)
    hr_cov = {s[0]: s[3] for s in hr_summary}
    hs_cfg = ExperimentConfig(tau=0.25, error_kind="heteroscedastic",
                              replications=200, seed=1, modes=("hs",), **base)
    _, hs_summary, hs_fail = run_coverage_experiment(hs_cfg)
    hs_cov = {s[0]: s[3] for s in hs_summary}
    elapsed = time.perf_counter() - started
    hr_ok = all(0.92 <= hr_cov[mach] <= 0.97 for mach in (1, 2))
    # well above the ~0.74 isolated-fit distortion regime
    hs_ok = all(hs_cov[mach] >= 0.85 for mach in (1, 2))
    ok = (hr_ok and hs_ok and not hr_fail and not hs_fail
          and elapsed < 30 * 60)
    report("A8", ok,
           f"HR homoscedastic coverage m1={hr_cov[1]:.3f} m2={hr_cov[2]:.3f} "
           f"in [0.92, 0.97] over 500 reps; HS heteroscedastic coverage "
           f"m1={hs_cov[1]:.3f} m2={hs_cov[2]:.3f} >= 0.85 over 200 reps "
           f"({elapsed:.0f}s < 30min)")


def test_a9_density_and_estimator_oracles():
    rng = np.random.default_rng(99)
    resid = rng.standard_normal(100000)
    h = ((1 + np.log(100000)) / 100000) ** (1 / 3)
    f0 = density_at_zero(resid, QuantileSpec(0.5, h))
    phi0 = 1.0 / np.sqrt(2 * np.pi)
    density_rel = abs(f0 - phi0) / phi0
    worst = 0.0
    for k in range(30):
        sub = np.random.default_rng(200 + k)
        n, p = int(sub.integers(5, 40)), int(sub.integers(1, 5))
        X = sub.standard_normal((n, p))
        res = sub.standard_normal(n)
        spec = QuantileSpec(0.5, float(sub.uniform(0.3, 1.2)))
        node = NodeState(0, X, np.zeros(n))
        H_want = np.zeros((p, p))
        S_want = np.zeros((p, p))
        for i in range(n):
            H_want += spec.kernel_pdf(res[i] / spec.h) * np.outer(X[i], X[i])
            S_want += np.outer(X[i], X[i])
        H_want /= n * spec.h
        S_want /= n
        worst = max(worst,
                    float(np.max(np.abs(powell_hessian(node, res, spec) - H_want))),
                    float(np.max(np.abs(local_gram(node) - S_want))))
    report("A9", density_rel <= 0.05 and worst <= 1e-12,
           f"density at zero {f0:.5f} vs {phi0:.5f} (rel {density_rel:.3%} "
           f"<= 5%); estimator vs brute-force deviation {worst:.2e} <= 1e-12")


def test_a10_mixing_rounds_tradeoff():
    from dsgcqr import Scenario, make_dataset
    data = make_dataset(Scenario(n=800, p=60, m=15, tau=0.25, seed=21))
    h = rule_of_thumb_bandwidth(60, 800, 0.25, 1.5)
    spec = QuantileSpec(0.25, h)
    ref = centralized_fit(data.X, data.y, spec, 0.1, max_iter=30000, tol=1e-10)
    W = metropolis_hastings(named_topology("line", 15))
    targets = (0.5, 0.2, 0.1)
    kappas = (1, 3, 6, 10)
    iters = {}
    for k0 in kappas:
        nodes = make_nodes(data.machine_blocks(), data.y, seed=4)
        cfg = FitConfig(spec=spec, eta=0.1, kappa0=k0, max_iter=4000, tol=0.0,
                        beta_star=ref.beta, record_traces=True)
        res = run_dsg_cqr(nodes, W, cfg)
        assert res.tracking_error <= 1e-8
        dql = np.array([t.dql for t in res.trace])
        for tgt in targets:
            hit = np.flatnonzero(dql <= tgt)
            iters[(k0, tgt)] = int(hit[0]) + 1 if hit.size else np.inf
    monotone = all(
        iters[(a, tgt)] >= iters[(b, tgt)]
        for tgt in targets for a, b in zip(kappas, kappas[1:])
    )
    # total communication = iterations * kappa0; the curve must turn upward
    # before the largest mixing count for at least one target
    turns = any(
        min(kappas, key=lambda k0: iters[(k0, tgt)] * k0) < kappas[-1]
        for tgt in targets
    )
    detail_tgt = targets[1]
    comm = {k0: iters[(k0, detail_tgt)] * k0 for k0 in kappas}
    report("A10", monotone and turns,
           f"iterations-to-target non-increasing in mixing rounds; "
           f"communication at target {detail_tgt}: {comm} "
           "(minimum below the largest mixing count)")


def test_a11_determinism(tmp_path, monkeypatch):
    gen_args = ["generate", "--n", "120", "--p", "6", "--m", "3",
                "--tau", "0.25", "--seed", "17"]
    fit_args = ["fit", "--topology", "random", "--pi-w", "0.8",
                "--topology-seed", "2", "--eta", "0.2", "--max-iter", "150",
                "--privacy-eps-bar", "0.5", "--seed", "6"]
    exp_args = ["experiment", "--kind", "error", "--methods",
                "dsg_cqr,glb_cqr", "--n", "150", "--p", "4", "--m", "2",
                "--topology", "complete", "--eta", "0.2", "--max-iter", "150",
                "--tol", "1e-6", "--h", "0.3", "--replications", "3",
                "--seed", "9"]
    outputs = {}
    for run, threads in (("one", "1"), ("two", "2")):
        monkeypatch.setenv("DSGCQR_THREADS", threads)
        ds = tmp_path / f"ds_{run}"
        fit = tmp_path / f"fit_{run}"
        exp = tmp_path / f"exp_{run}"
        assert cli_main(gen_args + ["--out", str(ds)]) == 0
        assert cli_main(fit_args + ["--data", str(ds), "--out", str(fit)]) == 0
        assert cli_main(exp_args + ["--out", str(exp)]) == 0
        outputs[run] = {
            "dataset": sorted(p for p in ds.glob("*.csv")),
            "fit": sorted(p for p in fit.glob("*.csv")),
            "experiment": sorted(p for p in exp.glob("*.csv")),
        }
    compared = 0
    for group in ("dataset", "fit", "experiment"):
        a_files, b_files = outputs["one"][group], outputs["two"][group]
        assert [p.name for p in a_files] == [p.name for p in b_files]
        for pa, pb in zip(a_files, b_files):
            assert pa.read_bytes() == pb.read_bytes(), f"{pa.name} differs"
            compared += 1
    report("A11", compared >= 7,
           f"{compared} CSV outputs byte-identical across reruns at "
           "1 and 2 worker threads")
