"""Residual recovery, sandwich covariance estimation, and Wald intervals.

After the decentralized fit, each machine recovers residuals from its own
auxiliary vector (y_i - m * z_ij), estimates the local Hessian block with
Powell's kernel-type estimator, and combines it with the local Gram matrix
into a plug-in sandwich covariance.  Features on different machines are
assumed uncorrelated (block-diagonal population matrices); that assumption
is not verified from data, so every report carries a caveat flag and the
cross-block sample correlation is available as a diagnostic.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtri

from .errors import NumericalError

DENSITY_FLOOR = 1e-8


def estimate_residuals(node, m):
    """Residuals recovered from the node's post-fit auxiliary vector."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return node.y - m * node.z


def residual_spread(nodes, m):
    """Largest across-node disagreement of the recovered residuals.

    Nodes estimate residuals from their own auxiliary vectors, which agree
    only up to consensus error; this diagnostic is the max over samples of
    the node-to-node range.
    """
    R = np.stack([estimate_residuals(node, m) for node in nodes])
    return float(np.max(R.max(axis=0) - R.min(axis=0)))


def powell_hessian(node, residuals, spec):
    """Powell kernel-type Hessian block (1/(n h)) * sum_i K(e_i/h) x_i x_i'."""
    w = spec.kernel_pdf(np.asarray(residuals, dtype=float) / spec.h)
    H = (node.X.T * w) @ node.X / (node.n * spec.h)
    return 0.5 * (H + H.T)


def local_gram(node):
    """Local second-moment matrix (1/n) X_j' X_j."""
    S = node.X.T @ node.X / node.n
    return 0.5 * (S + S.T)


def density_at_zero(residuals, spec):
    """Kernel density estimate of the residual distribution at zero."""
    r = np.asarray(residuals, dtype=float)
    return float(np.mean(spec.kernel_pdf(r / spec.h)) / spec.h)


def _solve_spd(A, B, what, jitter_scale):
    """Solve A X = B for symmetric positive definite A with one jitter retry."""
    try:
        return cho_solve(cho_factor(A, lower=True), B)
    except np.linalg.LinAlgError:
        pass
    ridge = jitter_scale * np.trace(A) / A.shape[0]
    try:
        return cho_solve(cho_factor(A + ridge * np.eye(A.shape[0]), lower=True), B)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"{what} is singular even after jitter; use a larger bandwidth "
            "or more samples"
        ) from None


def hr_covariance(h_hat, sigma_hat, tau):
    """Heteroscedasticity-robust sandwich tau(1-tau) * H^{-1} Sigma H^{-1}."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    inner = _solve_spd(h_hat, sigma_hat, "Powell Hessian estimate", 1e-8)
    cov = tau * (1.0 - tau) * _solve_spd(h_hat, inner.T, "Powell Hessian estimate",
                                         1e-8)
    return 0.5 * (cov + cov.T)


def hs_covariance(node, residuals, sigma_hat, spec, tau):
    """Homoscedastic-error covariance tau(1-tau) * f(0)^{-2} * Sigma^{-1}.

    Only the scalar residual density at zero is needed, which makes this
    variant cheaper but sensitive to conditional heteroscedasticity.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    f0 = density_at_zero(residuals, spec)
    if f0 <= DENSITY_FLOOR:
        raise NumericalError(
            f"residual density estimate at zero is {f0:.3e}; "
            "the bandwidth is too small for this sample"
        )
    inv = _solve_spd(sigma_hat, np.eye(sigma_hat.shape[0]), "local Gram matrix", 1e-8)
    cov = tau * (1.0 - tau) / f0**2 * inv
    return 0.5 * (cov + cov.T)


def wald_intervals(beta_hat, cov, n, level=0.95):
    """Per-coefficient normal-approximation intervals.

    Coordinate k gets beta_k +- Phi^{-1}((1+level)/2) * sqrt(cov_kk / n).

    Returns
    -------
    ndarray, shape (p, 2)
        Lower and upper endpoints.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    beta_hat = np.asarray(beta_hat, dtype=float)
    diag = np.diag(np.asarray(cov, dtype=float))
    if np.any(diag < 0):
        raise NumericalError("covariance estimate has a negative diagonal entry")
    half = ndtri(0.5 * (1.0 + level)) * np.sqrt(diag / n)
    return np.column_stack([beta_hat - half, beta_hat + half])


@dataclass
class InferenceReport:
    """Per-node inference output.

    ``bd_assumed`` records that the covariance treats features on other
    machines as uncorrelated; validity degrades with cross-machine
    correlation, which is not checked from data.
    """

    node_index: int
    mode: str
    level: float
    estimate: np.ndarray
    residuals: np.ndarray
    h_hat: np.ndarray
    sigma_hat: np.ndarray
    cov: np.ndarray
    intervals: np.ndarray
    density_zero: float = None
    bd_assumed: bool = True


def node_inference(node, m, spec, level=0.95, mode="hr"):
    """Full inference pass for one machine after the decentralized fit.

    Parameters
    ----------
    node : NodeState
        Carrying the post-fit coefficients and auxiliary vector.
    m : int
        Number of machines (scales the auxiliary vector into fitted values).
    spec : QuantileSpec
        Quantile level and the inference bandwidth, which may differ from
        the bandwidth used for fitting.
    mode : str
        ``hr`` for the sandwich robust to conditional heteroscedasticity,
        ``hs`` for the cheaper homoscedastic-error variant.
    """
    if mode not in ("hr", "hs"):
        raise ValueError(f"unknown covariance mode {mode!r}")
    residuals = estimate_residuals(node, m)
    sigma_hat = local_gram(node)
    h_hat = powell_hessian(node, residuals, spec)
    f0 = density_at_zero(residuals, spec)
    if mode == "hr":
        cov = hr_covariance(h_hat, sigma_hat, spec.tau)
    else:
        cov = hs_covariance(node, residuals, sigma_hat, spec, spec.tau)
    intervals = wald_intervals(node.beta, cov, node.n, level)
    return InferenceReport(
        node_index=node.index, mode=mode, level=level, estimate=node.beta.copy(),
        residuals=residuals, h_hat=h_hat, sigma_hat=sigma_hat, cov=cov,
        intervals=intervals, density_zero=f0,
    )


def max_cross_block_correlation(blocks):
    """Largest absolute sample correlation between columns of different machines.

    A data-driven sanity check on the block-independence assumption; values
    near zero support it.
    """
    X = np.hstack(blocks)
    corr = np.corrcoef(X, rowvar=False)
    widths = [b.shape[1] for b in blocks]
    stops = np.cumsum(widths)
    starts = stops - widths
    worst = 0.0
    for a in range(len(blocks)):
        for b in range(a + 1, len(blocks)):
            sub = corr[starts[a]:stops[a], starts[b]:stops[b]]
            worst = max(worst, float(np.max(np.abs(sub))))
    return worst


INTERVALS_HEADER = "node,coef_index,estimate,lower,upper,mode,level"


def write_intervals_csv(reports, path):
    """Write per-coefficient intervals; node and coefficient ids are 1-indexed."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(INTERVALS_HEADER + "\n")
        for rep in reports:
            for k in range(len(rep.estimate)):
                fh.write(",".join([
                    str(rep.node_index + 1), str(k + 1),
                    repr(float(rep.estimate[k])),
                    repr(float(rep.intervals[k, 0])),
                    repr(float(rep.intervals[k, 1])),
                    rep.mode, repr(float(rep.level)),
                ]) + "\n")
