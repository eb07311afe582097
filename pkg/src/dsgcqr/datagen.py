"""Synthetic data generation and dataset file formats.

Covariates are correlated uniforms on sqrt(3) * [-1, 1]^p built through a
Gaussian copula: draw z ~ N(0, R) with R_ij = 0.5^|i-j| (full AR structure,
or AR blocks aligned with the machine partition) and map each coordinate
through sqrt(3) * (2 * Phi(z) - 1).  Each column then has unit variance and
lag-1 correlation (6/pi) * arcsin(R_ij / 2) ~= 0.483, slightly below the
nominal 0.5; tests check against this implied value.

True coefficients are sign-flipped U(1, 2) draws.  Errors are centered so
that the tau-quantile of the noise is exactly zero, either homoscedastic or
scaled by (1 + 0.25 * x_1); innovations are standard normal or t(5) scaled
by sqrt(3/5) so both have unit variance.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import ndtr, ndtri
from scipy.stats import t as t_dist

ERROR_KINDS = ("homoscedastic", "heteroscedastic")
INNOVATIONS = ("normal", "t5")
COVARIANCES = ("ar", "block_ar")

T5_SCALE = np.sqrt(3.0 / 5.0)  # Var(t_5) = 5/3, so this rescales to variance 1


@dataclass(frozen=True)
class Scenario:
    """Sizes, error design, and seed for one synthetic dataset."""

    n: int
    p: int
    m: int
    tau: float = 0.5
    error_kind: str = "homoscedastic"
    innovation: str = "normal"
    covariance: str = "ar"
    rho: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two samples")
        if not 1 <= self.m <= self.p:
            raise ValueError(f"cannot split p={self.p} features over m={self.m} machines")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"quantile level must lie in (0, 1), got {self.tau}")
        if self.error_kind not in ERROR_KINDS:
            raise ValueError(f"unknown error kind {self.error_kind!r}")
        if self.innovation not in INNOVATIONS:
            raise ValueError(f"unknown innovation {self.innovation!r}")
        if self.covariance not in COVARIANCES:
            raise ValueError(f"unknown covariance structure {self.covariance!r}")


def partition_features(p, m):
    """Contiguous column ranges, one per machine.

    Equal widths when m divides p; otherwise the first p mod m machines get
    one extra column.  Returns a list of (start, stop) pairs covering 1..p.
    """
    if not 1 <= m <= p:
        raise ValueError(f"cannot split p={p} features over m={m} machines")
    base, rem = divmod(p, m)
    ranges = []
    start = 0
    for j in range(m):
        width = base + (1 if j < rem else 0)
        ranges.append((start, start + width))
        start += width
    return ranges


def ar_correlation(p, rho=0.5):
    return toeplitz(rho ** np.arange(p))


def block_ar_correlation(p, blocks, rho=0.5):
    R = np.eye(p)
    for start, stop in blocks:
        R[start:stop, start:stop] = ar_correlation(stop - start, rho)
    return R


def implied_uniform_correlation(rho_gauss):
    """Correlation of copula uniforms implied by the Gaussian correlation."""
    return 6.0 / np.pi * np.arcsin(np.asarray(rho_gauss) / 2.0)


def gen_covariates(scenario, rng):
    """Draw n correlated uniform rows on sqrt(3) * [-1, 1]^p."""
    blocks = partition_features(scenario.p, scenario.m)
    if scenario.covariance == "ar":
        R = ar_correlation(scenario.p, scenario.rho)
    else:
        R = block_ar_correlation(scenario.p, blocks, scenario.rho)
    L = np.linalg.cholesky(R)
    Z = rng.standard_normal((scenario.n, scenario.p)) @ L.T
    return np.sqrt(3.0) * (2.0 * ndtr(Z) - 1.0)


def gen_coefficients(p, seed):
    """Signed-uniform true coefficients: Rademacher sign times U(1, 2) magnitude."""
    if p < 1:
        raise ValueError("need at least one coefficient")
    rng = np.random.default_rng(seed)
    signs = 2.0 * rng.integers(0, 2, size=p) - 1.0
    return signs * rng.uniform(1.0, 2.0, size=p)


def innovation_quantile(tau, innovation):
    """tau-quantile of the normalized innovation distribution."""
    if innovation == "normal":
        return float(ndtri(tau))
    return float(t_dist.ppf(tau, 5) * T5_SCALE)


def gen_errors(scenario, x_col1, rng):
    """Noise whose conditional tau-quantile is exactly zero.

    Homoscedastic: e - q_e(tau).  Heteroscedastic: (1 + 0.25 * x_1) times the
    centered innovation; the first covariate lies in [-sqrt(3), sqrt(3)] so
    the scale factor stays positive.
    """
    if scenario.innovation == "normal":
        e = rng.standard_normal(scenario.n)
    else:
        e = rng.standard_t(5, size=scenario.n) * T5_SCALE
    centered = e - innovation_quantile(scenario.tau, scenario.innovation)
    if scenario.error_kind == "homoscedastic":
        return centered
    return (1.0 + 0.25 * np.asarray(x_col1)) * centered


@dataclass
class Dataset:
    """Generated design, response, generating coefficients, and the partition."""

    X: np.ndarray
    y: np.ndarray
    beta_truth: np.ndarray
    blocks: list
    scenario: Scenario

    def machine_blocks(self):
        return [self.X[:, start:stop] for start, stop in self.blocks]

    def truth_blocks(self):
        return [self.beta_truth[start:stop] for start, stop in self.blocks]


def make_dataset(scenario):
    """Generate one dataset; a pure function of the scenario (seed included)."""
    cov_seed, beta_seed, err_seed = np.random.SeedSequence(scenario.seed).spawn(3)
    X = gen_covariates(scenario, np.random.default_rng(cov_seed))
    beta_truth = gen_coefficients(scenario.p, beta_seed)
    eps = gen_errors(scenario, X[:, 0], np.random.default_rng(err_seed))
    y = X @ beta_truth + eps
    return Dataset(X=X, y=y, beta_truth=beta_truth,
                   blocks=partition_features(scenario.p, scenario.m),
                   scenario=scenario)


def train_test_split(n, frac, seed):
    """Random disjoint index split; ``frac`` is the training share."""
    if not 0.0 < frac < 1.0:
        raise ValueError(f"training fraction must lie in (0, 1), got {frac}")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(np.floor(frac * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


# ---------------------------------------------------------------------------
# dataset files: machine_<j>.csv + response.csv + manifest.txt
# ---------------------------------------------------------------------------

def _write_matrix_csv(path, header, M):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(M):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_dataset(dataset, outdir, with_truth=False):
    """Write one CSV per machine plus the shared response and a manifest.

    Returns the manifest path.  Machine files are named machine_1.csv ..
    machine_m.csv with headers x1..x_{p_j}; the response file has header y.
    """
    os.makedirs(outdir, exist_ok=True)
    scen = dataset.scenario
    machine_files = []
    for j, (start, stop) in enumerate(dataset.blocks):
        name = f"machine_{j + 1}.csv"
        header = [f"x{k + 1}" for k in range(stop - start)]
        _write_matrix_csv(os.path.join(outdir, name), header,
                          dataset.X[:, start:stop])
        machine_files.append((name, stop - start))
    _write_matrix_csv(os.path.join(outdir, "response.csv"), ["y"],
                      dataset.y.reshape(-1, 1))
    if with_truth:
        _write_matrix_csv(os.path.join(outdir, "beta_truth.csv"), ["beta"],
                          dataset.beta_truth.reshape(-1, 1))
    manifest = os.path.join(outdir, "manifest.txt")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("[dataset]\n")
        fh.write(f"n = {scen.n}\np = {scen.p}\nm = {scen.m}\n")
        fh.write(f"tau = {repr(scen.tau)}\nerror_kind = {scen.error_kind}\n")
        fh.write(f"innovation = {scen.innovation}\ncovariance = {scen.covariance}\n")
        fh.write(f"rho = {repr(scen.rho)}\nseed = {scen.seed}\n")
        fh.write("response = response.csv\n")
        if with_truth:
            fh.write("truth = beta_truth.csv\n")
        fh.write("\n[machines]\n")
        for name, cols in machine_files:
            fh.write(f"{name} = {cols}\n")
    return manifest


def _read_matrix_csv(path, expect_cols=None):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if expect_cols is not None and len(header) != expect_cols:
            raise ValueError(f"{path}: expected {expect_cols} columns, "
                             f"found {len(header)}")
        rows = [[float(v) for v in ln.strip().split(",")] for ln in fh if ln.strip()]
    return np.asarray(rows, dtype=float)


@dataclass
class LoadedDataset:
    """In-memory view of an exported dataset directory."""

    blocks_X: list
    y: np.ndarray
    meta: dict
    beta_truth: np.ndarray = None

    @property
    def X(self):
        return np.hstack(self.blocks_X)


def read_dataset(path):
    """Load a dataset from its manifest (or the directory containing it)."""
    manifest = path
    if os.path.isdir(path):
        manifest = os.path.join(path, "manifest.txt")
    if not os.path.isfile(manifest):
        raise FileNotFoundError(f"no manifest found at {manifest}")
    base = os.path.dirname(manifest)
    meta = {}
    machines = []
    section = None
    with open(manifest, encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            if ln.startswith("[") and ln.endswith("]"):
                section = ln[1:-1]
                continue
            key, _, value = ln.partition("=")
            key, value = key.strip(), value.strip()
            if section == "dataset":
                meta[key] = value
            elif section == "machines":
                machines.append((key, int(value)))
    n = int(meta["n"])
    blocks = []
    for name, cols in machines:
        M = _read_matrix_csv(os.path.join(base, name), expect_cols=cols)
        if M.shape != (n, cols):
            raise ValueError(f"{name}: expected shape ({n}, {cols}), got {M.shape}")
        blocks.append(M)
    y = _read_matrix_csv(os.path.join(base, meta["response"]), expect_cols=1)[:, 0]
    if y.shape != (n,):
        raise ValueError("response row count does not match the manifest")
    truth = None
    if "truth" in meta:
        truth = _read_matrix_csv(os.path.join(base, meta["truth"]),
                                 expect_cols=1)[:, 0]
    return LoadedDataset(blocks_X=blocks, y=y, meta=meta, beta_truth=truth)
