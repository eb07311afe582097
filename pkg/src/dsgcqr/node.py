"""One machine's state and per-iteration computations.

Each node holds every sample but only its own slice of the features; the
response vector is shared by all nodes.  The auxiliary vector ``z`` tracks
the across-node average fitted value: it starts at X_j @ beta_j and is
updated with the same gradient as beta_j, so the node-sum identity
sum_j z_j = sum_j X_j @ beta_j survives every update and every doubly
stochastic mixing round.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError
from .smoothing import score_weight

SENSITIVITY_FLOOR = 1e-12  # keeps the noise scale positive when a gradient vanishes


class NodeState:
    """Local design slice, coefficients, auxiliary vector, and RNG stream.

    Parameters
    ----------
    index : int
        Node id, 0-based.
    X : ndarray, shape (n, p_j)
        This machine's feature columns.
    y : ndarray, shape (n,)
        Shared response; all machines hold the identical vector.
    rng : numpy.random.Generator
        Node-owned stream for privacy noise; seed-derived so runs are
        reproducible under any scheduling.
    beta0 : ndarray or None
        Initial coefficients (zero vector when omitted).
    """

    def __init__(self, index, X, y, rng=None, beta0=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("node design must be (n, p_j) with p_j >= 1")
        if X.shape[0] < 1:
            raise ValueError("node design must hold at least one sample")
        if y.shape != (X.shape[0],):
            raise ValueError(f"response shape {y.shape} does not match n={X.shape[0]}")
        self.index = index
        self.X = X
        self.y = y
        self.rng = rng if rng is not None else np.random.default_rng()
        self.beta = (np.zeros(X.shape[1]) if beta0 is None
                     else np.asarray(beta0, dtype=float).copy())
        if self.beta.shape != (X.shape[1],):
            raise ValueError("beta0 length does not match the node's column count")
        self.z = X @ self.beta
        self._row_norm_max = float(np.max(np.linalg.norm(X, axis=1)))
        self._noise_chol = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def copy(self):
        dup = NodeState.__new__(NodeState)
        dup.index = self.index
        dup.X = self.X
        dup.y = self.y
        dup.rng = self.rng
        dup.beta = self.beta.copy()
        dup.z = self.z.copy()
        dup._row_norm_max = self._row_norm_max
        dup._noise_chol = self._noise_chol
        return dup

    def noise_chol(self):
        """Lower-triangular L with L @ L.T = (X'X)^{-1}, cached.

        A ridge of 1e-10 * trace / p_j is added once if the Gram factorization
        fails; a second failure raises :class:`NumericalError`.
        """
        if self._noise_chol is None:
            gram = self.X.T @ self.X
            try:
                C = np.linalg.cholesky(gram)
            except np.linalg.LinAlgError:
                ridge = 1e-10 * np.trace(gram) / self.p
                try:
                    C = np.linalg.cholesky(gram + ridge * np.eye(self.p))
                except np.linalg.LinAlgError:
                    raise NumericalError(
                        f"node {self.index}: local Gram matrix is singular even "
                        "after jitter; privacy noise cannot be calibrated"
                    ) from None
            inv = solve_triangular(C, np.eye(self.p), lower=True)
            self._noise_chol = inv.T
        return self._noise_chol


@dataclass(frozen=True)
class PrivacyParams:
    """Per-iteration local differential privacy settings.

    Two calibration modes are supported.  In the direct mode the Gaussian
    mechanism multiplier is sqrt(2 * ln(1.25/delta)) / epsilon with
    epsilon in (0, 1] and delta in (0, 1).  Alternatively an explicit
    ``noise_multiplier`` overrides the pair, which is how the overall-budget
    recipe of the experiment driver is expressed (see cli module).

    ``sensitivity_mode`` selects how the transmitted quantity's l2
    sensitivity is obtained: ``empirical`` (time-varying estimate from the
    previously applied gradient's norm) or ``fixed`` (user-supplied constant).
    """

    enabled: bool = False
    epsilon: float = None
    delta: float = None
    sensitivity_mode: str = "empirical"
    fixed_sensitivity: float = None
    noise_multiplier: float = None

    def __post_init__(self):
        if not self.enabled:
            return
        if self.noise_multiplier is not None:
            if self.noise_multiplier <= 0:
                raise ValueError("noise multiplier must be positive")
        else:
            if self.epsilon is None or not 0.0 < self.epsilon <= 1.0:
                raise ValueError(
                    f"per-iteration epsilon must lie in (0, 1], got {self.epsilon}"
                )
            if self.delta is None or not 0.0 < self.delta < 1.0:
                raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.sensitivity_mode not in ("empirical", "fixed"):
            raise ValueError(f"unknown sensitivity mode {self.sensitivity_mode!r}")
        if self.sensitivity_mode == "fixed":
            if self.fixed_sensitivity is None or self.fixed_sensitivity < 0:
                raise ValueError("fixed sensitivity mode needs a value >= 0")

    def multiplier(self):
        if self.noise_multiplier is not None:
            return self.noise_multiplier
        return np.sqrt(2.0 * np.log(1.25 / self.delta)) / self.epsilon


def surrogate_gradient(node, spec, m):
    """Surrogate gradient of the smoothed loss from the auxiliary vector.

    Replaces the incomputable global fitted value by m * z_j:
    (1/n) * sum_i (Kbar((m*z_ij - y_i)/h) - tau) * x_ij.  When z_j holds the
    exact across-node average this equals the node's block of the full
    gradient.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    w = score_weight(m * node.z - node.y, spec)
    return (node.X.T @ w) / node.n


def local_update(node, grad, eta):
    """Gradient step on beta_j plus the matching tracking step on z_j.

    Both updates use the same gradient vector, which is what keeps the
    node-sum identity between z and the fitted values intact.
    """
    if eta <= 0:
        raise ValueError(f"step size must be positive, got {eta}")
    node.beta = node.beta - eta * grad
    node.z = node.z - eta * (node.X @ grad)


def empirical_sensitivity(node, t, grad_prev=None, floor=SENSITIVITY_FLOOR):
    """Time-varying l2 sensitivity estimate for the transmitted update.

    2 * c_hat * ||beta_j|| at the first iteration (beta_j still holds the
    initial value there) and 2 * c_hat * ||previous gradient|| afterwards,
    where c_hat is the largest row norm of the node's design.  Floored at a
    tiny positive value so a vanishing gradient never disables the noise.
    """
    if t < 1:
        raise ValueError("iteration counter starts at 1")
    if t == 1:
        if grad_prev is not None:
            raise ValueError("no previous gradient exists at the first iteration")
        base = 2.0 * node._row_norm_max * float(np.linalg.norm(node.beta))
    else:
        if grad_prev is None:
            raise ValueError("iterations after the first need the previous gradient")
        base = 2.0 * node._row_norm_max * float(np.linalg.norm(grad_prev))
    return max(base, floor)


def dp_noise(node, privacy, sensitivity):
    """Draw Gaussian mechanism noise for one gradient release.

    The sample has covariance multiplier^2 * sensitivity^2 * (X_j'X_j)^{-1}
    (in the direct mode the multiplier is sqrt(2 ln(1.25/delta))/epsilon, so
    the covariance is 2 * epsilon^{-2} * Delta^2 * ln(1.25/delta) * (X'X)^{-1}).
    Drawn from the node's own stream; a zero sensitivity yields a zero vector.
    """
    if not privacy.enabled:
        raise ValueError("privacy must be enabled to draw noise")
    if sensitivity < 0:
        raise ValueError("sensitivity must be non-negative")
    if sensitivity == 0.0:
        return np.zeros(node.p)
    scale = privacy.multiplier() * sensitivity
    xi = node.rng.standard_normal(node.p)
    return scale * (node.noise_chol() @ xi)


def private_local_update(node, spec, m, eta, privacy, t, grad_prev=None):
    """One node's full per-iteration step, optionally privatized.

    Computes the surrogate gradient, adds calibrated Gaussian noise when
    privacy is enabled, and applies the (noisy) gradient to both beta_j and
    z_j.  Returns the gradient that was actually applied; the caller feeds it
    back as ``grad_prev`` for the next iteration's sensitivity estimate.
    With privacy disabled this is exactly the surrogate-gradient update.
    """
    grad = surrogate_gradient(node, spec, m)
    if privacy is not None and privacy.enabled:
        if privacy.sensitivity_mode == "fixed":
            sens = privacy.fixed_sensitivity
        else:
            sens = empirical_sensitivity(node, t, grad_prev)
        grad = grad + dp_noise(node, privacy, sens)
    local_update(node, grad, eta)
    return grad


def make_nodes(blocks, y, seed=0, beta0_blocks=None):
    """Build one NodeState per feature block with seed-derived RNG streams."""
    y = np.asarray(y, dtype=float)
    streams = np.random.SeedSequence(seed).spawn(len(blocks))
    nodes = []
    for j, X in enumerate(blocks):
        b0 = None if beta0_blocks is None else beta0_blocks[j]
        nodes.append(NodeState(j, X, y, rng=np.random.default_rng(streams[j]),
                               beta0=b0))
    return nodes
