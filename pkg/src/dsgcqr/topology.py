"""Network graphs, doubly stochastic mixing matrices, and mixing diagnostics.

Nodes are indexed 0..m-1 internally; the edge-list text format is 1-indexed.
A mixing matrix built from a connected graph via Metropolis-Hastings weights
is symmetric and doubly stochastic, so repeated neighbor averaging drives
every node's vector to the across-node mean at geometric rate ``alpha``,
the spectral norm of W - J/m.
"""

from dataclasses import dataclass, field

import numpy as np


def _canonical_edges(edges):
    out = set()
    for i, j in edges:
        if i == j:
            raise ValueError(f"self loop on node {i}")
        out.add((min(i, j), max(i, j)))
    return tuple(sorted(out))


def _connected(m, edges):
    if m == 1:
        return True
    adj = [[] for _ in range(m)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * m
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                stack.append(v)
    return count == m


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on ``m`` nodes with canonical edge storage."""

    m: int
    edges: tuple

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one node")
        edges = _canonical_edges(self.edges)
        for i, j in edges:
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"edge ({i}, {j}) out of range for m={self.m}")
        object.__setattr__(self, "edges", edges)
        if not _connected(self.m, edges):
            raise ValueError("graph is not connected")

    def degrees(self):
        deg = np.zeros(self.m, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i):
        out = [j for a, j in self.edges if a == i] + [a for a, j in self.edges if j == i]
        return sorted(out)


def named_topology(kind, m, pi_w=None, seed=None, max_retries=1000):
    """Build a standard network structure.

    Parameters
    ----------
    kind : str
        ``star`` (node 0 is the hub), ``line``, ``circle``, ``complete``,
        or ``random``.
    m : int
        Number of nodes, at least 2.
    pi_w : float
        For ``random`` only: fraction of all possible edges to draw,
        in (0, 1].  floor(0.5 * m * (m-1) * pi_w) distinct edges are sampled
        uniformly; disconnected draws are rejected and resampled.
    seed : int or None
        Seed for the random topology.
    """
    if m < 2:
        raise ValueError("named topologies need m >= 2")
    if kind == "star":
        return Graph(m, tuple((0, k) for k in range(1, m)))
    if kind == "line":
        return Graph(m, tuple((k, k + 1) for k in range(m - 1)))
    if kind == "circle":
        edges = [(k, k + 1) for k in range(m - 1)] + [(0, m - 1)]
        return Graph(m, tuple(edges))
    if kind == "complete":
        return Graph(m, tuple((i, j) for i in range(m) for j in range(i + 1, m)))
    if kind == "random":
        if pi_w is None or not 0.0 < pi_w <= 1.0:
            raise ValueError("random topology needs an edge fraction in (0, 1]")
        all_pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
        n_edges = int(np.floor(0.5 * m * (m - 1) * pi_w))
        rng = np.random.default_rng(seed)
        for _ in range(max_retries):
            idx = rng.choice(len(all_pairs), size=n_edges, replace=False)
            edges = tuple(all_pairs[k] for k in sorted(idx))
            if _connected(m, edges):
                return Graph(m, edges)
        raise ValueError(
            f"no connected random graph with {n_edges} edges on {m} nodes "
            f"after {max_retries} draws; increase pi_w"
        )
    raise ValueError(f"unknown topology kind {kind!r}")


@dataclass(frozen=True)
class MixingMatrix:
    """Doubly stochastic neighbor-averaging weights with cached spectral norm.

    ``alpha`` is the largest singular value of W - (1/m) * ones * ones';
    it lies in [0, 1) on connected graphs and governs the per-round
    contraction of the deviation from the across-node mean.
    """

    W: np.ndarray
    alpha: float = field(default=None)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("mixing matrix must be square")
        m = W.shape[0]
        if np.any(W < -1e-12):
            raise ValueError("mixing weights must be non-negative")
        if np.max(np.abs(W.sum(axis=0) - 1.0)) > 1e-12 or \
           np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("mixing matrix must be doubly stochastic")
        object.__setattr__(self, "W", W)
        if self.alpha is None:
            object.__setattr__(self, "alpha", spectral_alpha(W))
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha={self.alpha} outside [0, 1); graph disconnected?")
        # sorted neighbor lists (off-diagonal non-zeros) for message exchange
        nbrs = tuple(
            tuple(i for i in range(m) if i != j and W[i, j] != 0.0)
            for j in range(m)
        )
        object.__setattr__(self, "_neighbors", nbrs)

    @property
    def m(self):
        return self.W.shape[0]

    def neighbors(self, j):
        return self._neighbors[j]


def metropolis_hastings(graph):
    """Metropolis-Hastings mixing weights for a connected graph.

    w_ij = 1 / (max(deg(i), deg(j)) + 1) on edges, zero for non-adjacent
    pairs, and the diagonal absorbs the remainder so every row and column
    sums to one.  The result is symmetric and doubly stochastic.
    """
    m = graph.m
    deg = graph.degrees()
    W = np.zeros((m, m))
    for i, j in graph.edges:
        w = 1.0 / (max(deg[i], deg[j]) + 1.0)
        W[i, j] = w
        W[j, i] = w
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return MixingMatrix(W=W)


def spectral_alpha(W, tol=1e-10, max_iter=10000):
    """Largest singular value of W - (1/m) * ones * ones' by power iteration.

    Runs on B = A A' (with A the centered matrix) from a few deterministic
    start vectors and keeps the largest Rayleigh quotient; small m makes a
    dense method acceptable and avoids an external solver.
    """
    W = np.asarray(W, dtype=float)
    m = W.shape[0]
    A = W - np.full((m, m), 1.0 / m)
    if np.linalg.norm(A) < 1e-15:
        return 0.0
    B = A @ A.T
    best = 0.0
    starts = [np.arange(1.0, m + 1.0)]
    starts += [np.random.default_rng(s).standard_normal(m) for s in (0, 1)]
    for v in starts:
        v = v - v.mean() if np.ptp(v) > 0 else v  # stay off the flat direction
        nrm = np.linalg.norm(v)
        if nrm == 0:
            continue
        v = v / nrm
        lam = 0.0
        for _ in range(max_iter):
            w = B @ v
            nrm = np.linalg.norm(w)
            if nrm == 0:
                lam = 0.0
                break
            v = w / nrm
            lam_new = float(v @ (B @ v))
            if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
                lam = lam_new
                break
            lam = lam_new
        best = max(best, lam)
    return float(np.sqrt(max(best, 0.0)))


def optimal_mixing_rounds(alpha, eta, a_ul, a_l, f_bar, m, sigma_u):
    """Fewest mixing rounds per iteration that preserve the convergence rate.

    Evaluates floor(log_alpha((1 - eta*a_ul*a_l) / (1 + eta*a_ul*f_bar*m*sigma_u)))
    clamped below at 1.  ``alpha`` is the mixing matrix's spectral quantity;
    the remaining constants are population-level curvature/density bounds
    supplied by the caller.
    """
    for name, val in (("eta", eta), ("a_ul", a_ul), ("a_l", a_l),
                      ("f_bar", f_bar), ("sigma_u", sigma_u)):
        if val <= 0:
            raise ValueError(f"{name} must be positive, got {val}")
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return 1  # exact consensus in a single round
    num = 1.0 - eta * a_ul * a_l
    den = 1.0 + eta * a_ul * f_bar * m * sigma_u
    if num <= 0.0:
        raise ValueError("step size too large: 1 - eta*a_ul*a_l must stay positive")
    k = int(np.floor(np.log(num / den) / np.log(alpha)))
    return max(k, 1)


def step_size_limit(alpha, kappa0, a_l, a_u, f_bar, m, sigma_u):
    """Largest admissible step size for the given network and curvature bounds."""
    a_ul = np.sqrt(a_u / (a_l + a_u))
    mix = alpha ** kappa0
    terms = [a_ul / a_l, 1.0 / a_u]
    if mix > 0:
        terms.append((1.0 - mix) / mix * a_ul / (f_bar * m * sigma_u))
    return float(min(terms))


def decay_factor(eta, alpha, kappa0, a_l, a_u, f_bar, m, sigma_u):
    """Per-iteration contraction factor of the decentralized fit."""
    a_ul = np.sqrt(a_u / (a_l + a_u))
    return float(max(1.0 - eta * a_ul * a_l,
                     alpha ** kappa0 * (1.0 + eta * a_ul * f_bar * m * sigma_u)))


def mix(values, mixing, rounds):
    """Apply ``rounds`` synchronous neighbor-averaging steps to node vectors.

    ``values`` holds one row per node.  Each round every node j replaces its
    vector with sum over i in N_j and j itself of w_ij * v_i, reading a frozen
    snapshot of the previous round (double buffering).  Column sums are
    preserved because the weights are doubly stochastic.
    """
    V = np.array(values, dtype=float)
    if V.shape[0] != mixing.m:
        raise ValueError(f"got {V.shape[0]} node vectors for an m={mixing.m} network")
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    W = mixing.W
    for _ in range(rounds):
        new = np.empty_like(V)
        for j in range(mixing.m):
            acc = W[j, j] * V[j]
            for i in mixing.neighbors(j):
                acc = acc + W[i, j] * V[i]
            new[j] = acc
        V = new
    return V


def write_edge_list(graph, path):
    """Serialize a graph: first line m, then one 1-indexed 'i j' pair per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{graph.m}\n")
        for i, j in graph.edges:
            fh.write(f"{i + 1} {j + 1}\n")


def read_edge_list(path):
    """Load a graph from the 1-indexed edge-list text format."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty edge-list file")
    m = int(lines[0])
    edges = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: malformed edge line {ln!r}")
        i, j = int(parts[0]) - 1, int(parts[1]) - 1
        edges.append((i, j))
    return Graph(m, tuple(edges))
