"""Quantile loss, its convolution-smoothed surrogate, and a centralized fit.

The check loss rho_tau(t) = t * (tau - 1{t < 0}) is non-differentiable at 0.
Convolving it with a scaled kernel K_h(u) = K(u/h)/h yields a twice
differentiable convex surrogate whose gradient involves only the kernel's
antiderivative.  Closed forms are used for all built-in kernels; they are
validated against numerical quadrature in the test suite.

The centralized gradient-descent fit here doubles as the reference ("global")
estimator against which the decentralized solver is compared.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DivergenceError

KERNELS = ("gaussian", "uniform", "epanechnikov")

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _normal_pdf(u):
    return np.exp(-0.5 * np.square(u)) / _SQRT_2PI


def _uniform_pdf(u):
    return np.where(np.abs(u) <= 1.0, 0.5, 0.0)


def _uniform_cdf(u):
    return np.clip(0.5 * (np.asarray(u, dtype=float) + 1.0), 0.0, 1.0)


def _epanechnikov_pdf(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _epanechnikov_cdf(u):
    u = np.asarray(u, dtype=float)
    inner = 0.5 + 0.75 * u - 0.25 * u**3
    return np.where(u < -1.0, 0.0, np.where(u > 1.0, 1.0, inner))


_KERNEL_PDF = {
    "gaussian": _normal_pdf,
    "uniform": _uniform_pdf,
    "epanechnikov": _epanechnikov_pdf,
}

_KERNEL_CDF = {
    "gaussian": ndtr,
    "uniform": _uniform_cdf,
    "epanechnikov": _epanechnikov_cdf,
}


@dataclass(frozen=True)
class QuantileSpec:
    """Quantile level, bandwidth, and smoothing kernel for one fit.

    Attributes
    ----------
    tau : float
        Quantile level, strictly between 0 and 1.
    h : float
        Smoothing bandwidth, strictly positive.
    kernel : str
        One of ``gaussian`` (default), ``uniform``, ``epanechnikov``.
        All are symmetric, non-negative and integrate to one.
    """

    tau: float
    h: float
    kernel: str = "gaussian"

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"quantile level must lie in (0, 1), got {self.tau}")
        if not self.h > 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {KERNELS}")

    def kernel_pdf(self, u):
        return _KERNEL_PDF[self.kernel](u)

    def kernel_cdf(self, u):
        return _KERNEL_CDF[self.kernel](u)


def quantile_loss(t, tau):
    """Check loss t * (tau - 1{t < 0}); vectorized over ``t``."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    t = np.asarray(t, dtype=float)
    return t * (tau - (t < 0))


def smoothed_loss(u, spec):
    """Check loss convolved with the scaled kernel, evaluated at ``u``.

    Equals E[rho_tau(u + h*Z)] with Z distributed according to the kernel,
    i.e. tau*u plus the expected negative part of u + h*Z.  Closed forms:

    * gaussian:       tau*u + h*phi(u/h) - u*Phi(-u/h)
    * uniform:        tau*u + (u - h)^2 / (4h) inside |u| < h
    * epanechnikov:   quartic polynomial inside |u| < h

    Outside the kernel support (|u| >= h for the compact kernels) the
    smoothed loss coincides with the raw check loss.
    """
    u = np.asarray(u, dtype=float)
    h, tau = spec.h, spec.tau
    if spec.kernel == "gaussian":
        neg_part = h * _normal_pdf(u / h) - u * ndtr(-u / h)
    elif spec.kernel == "uniform":
        inside = (u - h) ** 2 / (4.0 * h)
        neg_part = np.where(u >= h, 0.0, np.where(u <= -h, -u, inside))
    else:  # epanechnikov
        s = u / h
        inside = h * (-0.5 * s + 0.375 * s**2 - 0.0625 * s**4 + 0.1875)
        neg_part = np.where(u >= h, 0.0, np.where(u <= -h, -u, inside))
    return tau * u + neg_part


def score_weight(arg, spec):
    """Scalar gradient factor Kbar(arg / h) - tau, bounded in [-tau, 1 - tau].

    ``arg`` is the signed fit error x'beta - y; Kbar is the kernel's
    antiderivative (the standard normal CDF for the gaussian kernel).
    """
    return spec.kernel_cdf(np.asarray(arg, dtype=float) / spec.h) - spec.tau


def smoothed_objective(X, y, beta, spec):
    """Mean smoothed loss of the residuals y - X @ beta."""
    return float(np.mean(smoothed_loss(y - X @ beta, spec)))


def quantile_objective(X, y, beta, tau):
    """Mean raw check loss of the residuals y - X @ beta."""
    return float(np.mean(quantile_loss(y - X @ beta, tau)))


def smoothed_gradient(X, y, beta, spec):
    """Gradient of the mean smoothed loss with respect to ``beta``.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    y : ndarray, shape (n,)
    beta : ndarray, shape (p,)
    spec : QuantileSpec

    Returns
    -------
    ndarray, shape (p,)
        (1/n) * sum_i (Kbar((x_i'beta - y_i)/h) - tau) * x_i.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.ndim != 2:
        raise ValueError("design matrix must be two-dimensional")
    n, p = X.shape
    if n < 1:
        raise ValueError("need at least one observation")
    if y.shape != (n,) or beta.shape != (p,):
        raise ValueError(
            f"shape mismatch: X is {X.shape}, y is {y.shape}, beta is {beta.shape}"
        )
    w = score_weight(X @ beta - y, spec)
    return (X.T @ w) / n


@dataclass
class CentralizedFit:
    """Result of gradient descent on the smoothed objective."""

    beta: np.ndarray
    iterations: int
    converged: bool
    iterates: list


def centralized_fit(X, y, spec, eta, max_iter=5000, tol=1e-8, beta0=None,
                    record_iterates=False):
    """Plain gradient descent on the smoothed quantile objective.

    Stops when the relative parameter change ||b_new - b|| / (1 + ||b||)
    drops below ``tol`` or after ``max_iter`` steps.  Raises
    :class:`DivergenceError` if the iterate norm exceeds 1e12.

    Parameters
    ----------
    eta : float
        Step size, must be positive.
    beta0 : ndarray or None
        Starting point; the zero vector when omitted.
    record_iterates : bool
        Keep a copy of every iterate (used by equivalence tests).
    """
    if eta <= 0:
        raise ValueError(f"step size must be positive, got {eta}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    if beta.shape != (p,):
        raise ValueError(f"beta0 has shape {beta.shape}, expected ({p},)")

    iterates = []
    converged = False
    t = 0
    for t in range(1, max_iter + 1):
        grad = smoothed_gradient(X, y, beta, spec)
        new = beta - eta * grad
        nrm = float(np.linalg.norm(new))
        if nrm > 1e12:
            raise DivergenceError(t, nrm)
        rel = float(np.linalg.norm(new - beta)) / (1.0 + float(np.linalg.norm(beta)))
        beta = new
        if record_iterates:
            iterates.append(beta.copy())
        if rel < tol:
            converged = True
            break
    return CentralizedFit(beta=beta, iterations=t, converged=converged,
                          iterates=iterates)


def rule_of_thumb_bandwidth(p, n, tau, c=1.5):
    """Rule-of-thumb bandwidth c * ((p + ln n) * 1.5*phi(z)^2 / (n * (2 z^2 + 1)))^(1/3).

    Here z = Phi^{-1}(tau) and phi, Phi are the standard normal pdf/cdf.  The
    multiplier ``c`` is left free; 1.5 is a common choice for fitting and 0.5
    for post-fit inference.
    """
    if n <= 1 or p < 1:
        raise ValueError("need n > 1 and p >= 1")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    if c <= 0:
        raise ValueError("bandwidth multiplier must be positive")
    z = ndtri(tau)
    num = (p + np.log(n)) * 1.5 * _normal_pdf(z) ** 2
    den = n * (2.0 * z**2 + 1.0)
    return float(c * (num / den) ** (1.0 / 3.0))
