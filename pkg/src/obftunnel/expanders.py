"""Random regular multigraphs as unions of random cycles, and spectral conditioning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConditioningFailed, InvalidParameter, NumericFailure
from .graph_core import MultiGraph
from .rng import ensure_rng, substream

log = logging.getLogger(__name__)

DENSE_CEILING = 512


@dataclass(frozen=True)
class RegularSample:
    graph: MultiGraph
    attempts: int
    lambda2: float


def sample_cycle(n: int, rng=None) -> MultiGraph:
    """Uniform Hamiltonian cycle on ``n`` labeled vertices.

    Draw a permutation ``pi`` and join ``i, j`` whenever
    ``pi(i) - pi(j) = +-1 (mod n)``; equivalently, walk the vertices in the
    order ``pi^{-1}(0), pi^{-1}(1), ...`` and close the loop.
    """
    if n < 3:
        raise InvalidParameter(f"a cycle needs n >= 3 vertices, got {n}")
    rng = ensure_rng(rng)
    order = rng.permutation(n)  # order[p] = vertex at cycle position p
    return MultiGraph(n, order, np.roll(order, -1))


def sample_regular(n: int, d: int, rng=None) -> MultiGraph:
    """Union (with multiplicity) of ``d/2`` independent uniform cycles."""
    if d < 2 or d % 2:
        raise InvalidParameter(f"degree must be even and >= 2, got {d}")
    if n < 3:
        raise InvalidParameter(f"need n >= 3, got {n}")
    rng = ensure_rng(rng)
    us, vs = [], []
    for _ in range(d // 2):
        order = rng.permutation(n)
        us.append(order)
        vs.append(np.roll(order, -1))
    return MultiGraph(n, np.concatenate(us), np.concatenate(vs))


def _power_second(adj: sp.csr_matrix, d: float, tol: float, max_iter: int, rng) -> float:
    # shift by d makes the spectrum non-negative; deflate the all-ones top vector
    n = adj.shape[0]
    ones = np.full(n, 1 / math.sqrt(n))
    x = rng.standard_normal(n)
    x -= ones * (ones @ x)
    x /= np.linalg.norm(x)
    history: list[float] = []
    rho = 0.0
    for it in range(max_iter):
        y = adj @ x + d * x
        y -= ones * (ones @ y)
        rho = float(x @ y) - d
        norm = np.linalg.norm(y)
        resid = np.linalg.norm(y - (rho + d) * x)
        if resid <= tol:
            return rho
        history.append(rho)
        # Rayleigh quotient creeps up monotonically; stop once it stalls
        if it >= 200 and abs(history[-1] - history[-101]) <= tol * 1e-2:
            return rho
        x = y / norm
    raise NumericFailure("deflated power iteration did not converge", residual=float(resid))


def second_eigenvalue(g: MultiGraph, method: str = "auto", tol: float = 1e-10, max_iter: int = 200_000) -> float:
    """Second-largest adjacency eigenvalue (by value, multiplicities counted).

    Dense ``eigvalsh`` for ``n <= 512``; otherwise deflated power iteration,
    which assumes ``g`` is regular (top eigenvector = all-ones).
    """
    n = g.vertex_count
    if n == 0:
        raise InvalidParameter("empty graph")
    if n == 1:
        return -math.inf
    if method == "auto":
        method = "dense" if n <= DENSE_CEILING else "power"
    if method == "dense":
        w = np.linalg.eigvalsh(g.to_dense())
        return float(w[-2])
    if method != "power":
        raise InvalidParameter(f"unknown method {method!r}")
    deg = g.degrees
    if not np.all(deg == deg[0]):
        raise InvalidParameter("power method for lambda2 requires a regular graph")
    return _power_second(g.to_sparse(), float(deg[0]), tol, max_iter, substream(0, n))


def sample_conditioned(
    n: int,
    m: int,
    threshold: float | None = None,
    max_attempts: int = 1000,
    rng=None,
) -> RegularSample:
    """Rejection-sample H_{n,2m} until its second eigenvalue is <= threshold.

    Attempt ``a`` draws from its own stream spawned off ``rng``, so the
    accepted sample does not depend on how the earlier draws were consumed.
    """
    threshold = float(m) if threshold is None else float(threshold)
    if n < m * m:
        log.warning("n=%d < m^2=%d: conditioning guarantee does not apply", n, m * m)
    rng = ensure_rng(rng)
    base_seed = int(rng.integers(0, 2**63))
    lam = math.nan
    for attempt in range(1, max_attempts + 1):
        g = sample_regular(n, 2 * m, substream(base_seed, attempt))
        if math.isinf(threshold) and threshold > 0:
            return RegularSample(g, attempt, math.nan)
        lam = second_eigenvalue(g)
        if lam <= threshold:
            return RegularSample(g, attempt, lam)
    raise ConditioningFailed(
        f"no H_{{{n},{2 * m}}} sample with lambda2 <= {threshold} in {max_attempts} attempts",
        attempts=max_attempts,
        last_lambda2=lam,
    )
