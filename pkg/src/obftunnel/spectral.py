"""Eigenstructure of paths, collapsed instances and decorated instances.

Conventions: ``A_ell(alpha)`` is the path on sites ``1..ell`` with a loop of
weight ``alpha`` on the last site.  The adiabatic path interpolates
``-H(s) = (1-|s|) A + |s| w P`` where ``P`` projects onto the ENTRANCE for
``s <= 0`` and onto the EXIT for ``s > 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Any, NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import ConstructionViolation, InvalidParameter, NumericFailure, PredictionMismatch
from .graph_core import KIND_DECORATION, InstanceLayout, MultiGraph, TreeSpec

DENSE_CEILING = 2048
BISECT_TOL = 1e-12
BISECT_CAP = 200


# ---------------------------------------------------------------------------
# quasimomenta


def f_ell(p, ell: int):
    """sin((ell+1)p) / sin(ell p), vectorized.

    The removable points p = 0 and p = pi give +-(ell+1)/ell.  At a genuine
    pole the result is an infinity whose sign follows the side of the pole
    on which the floating-point ``p`` falls (``+inf`` if it is exact).
    """
    p_arr = np.asarray(p, dtype=float)
    num = np.sin((ell + 1) * p_arr)
    den = np.sin(ell * p_arr)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    turns = ell * p_arr / math.pi
    near = np.abs(turns - np.round(turns)) < 1e-12
    if np.any(near):
        at_zero = np.isclose(p_arr, 0.0, atol=1e-12)
        at_pi = np.isclose(p_arr, math.pi, atol=1e-12)
        side = np.where(num * den == 0, 1.0, np.sign(num * den))
        out = np.where(near, np.copysign(np.inf, side), out)
        out = np.where(at_zero, (ell + 1) / ell, out)
        out = np.where(at_pi, -(ell + 1) / ell, out)
    return float(out) if np.ndim(out) == 0 else out


def _sinh_ratio_log(n: int, x):
    """log(sinh((n+1)x) / sinh(n x)) for x > 0 without overflow."""
    x = np.asarray(x, dtype=float)
    return x + np.log(-np.expm1(-2 * (n + 1) * x)) - np.log(-np.expm1(-2 * n * x))


def solve_sinh_ratio(n: int, target: float) -> float:
    """x > 0 with sinh((n+1)x)/sinh(nx) = target; requires target > (n+1)/n.

    The ratio increases from (n+1)/n at 0+ and exceeds e^x, so the root lies
    in (0, log target).
    """
    if not target > (n + 1) / n:
        raise InvalidParameter(f"sinh ratio target {target} must exceed {(n + 1) / n}")
    goal = math.log(target)
    lo, hi = 0.0, goal
    for _ in range(BISECT_CAP):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _sinh_ratio_log(n, mid) < goal:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECT_TOL * max(1.0, hi):
            break
    else:
        raise NumericFailure(f"hyperbolic bisection did not reach tolerance (n={n}, target={target})")
    return 0.5 * (lo + hi)


def _sinh_profile(count: int, x: float, reverse: bool = False) -> np.ndarray:
    """sinh(j x)/sinh(count x) for j = 1..count (or count..1), log-domain safe."""
    j = np.arange(1, count + 1, dtype=float)
    if x == 0:
        vals = j / count
    else:
        vals = np.exp((j - count) * x) * (-np.expm1(-2 * j * x)) / (-np.expm1(-2 * count * x))
    return vals[::-1] if reverse else vals


@dataclass(frozen=True)
class QuasimomentaSolution:
    """Full eigensystem of ``A_ell(alpha)``.

    ``eigenvalues`` are sorted in decreasing order and ``eigenvectors`` holds
    the matching unit columns.  ``branch`` says where the extra eigenpair
    beyond the trigonometric ones came from: ``"hyperbolic"`` (with
    ``hyper_sign`` +1 for alpha > 0 and -1 for alpha < 0), ``"pseudo"`` at
    alpha = +-(ell+1)/ell, or ``None``.
    """

    alpha: float
    ell: int
    trig_roots: np.ndarray
    hyper_root: float | None
    hyper_sign: int
    branch: str | None
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def matrix(self) -> np.ndarray:
        return path_matrix(self.ell, self.alpha)

    def residuals(self) -> np.ndarray:
        a = self.matrix()
        r = a @ self.eigenvectors - self.eigenvectors * self.eigenvalues
        return np.linalg.norm(r, axis=0)


def path_matrix(ell: int, alpha: float = 0.0) -> np.ndarray:
    a = np.zeros((ell, ell))
    idx = np.arange(ell - 1)
    a[idx, idx + 1] = a[idx + 1, idx] = 1.0
    a[ell - 1, ell - 1] = alpha
    return a


def _trig_roots(ell: int, alpha: float, js: np.ndarray) -> np.ndarray:
    # on interval j, F(p) = sin((ell+1)p) - alpha sin(ell p) runs from sign s_j to -s_j
    lo = (js - 1) * math.pi / ell
    hi = js * math.pi / ell
    s = np.where(js % 2 == 1, 1.0, -1.0)
    for _ in range(BISECT_CAP):
        if np.max(hi - lo) <= BISECT_TOL:
            break
        mid = 0.5 * (lo + hi)
        val = (np.sin((ell + 1) * mid) - alpha * np.sin(ell * mid)) * s
        left = val > 0
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
    else:
        raise NumericFailure(f"trigonometric bisection did not converge (ell={ell}, alpha={alpha})")
    return 0.5 * (lo + hi)


def solve_quasimomenta(ell: int, alpha: float) -> QuasimomentaSolution:
    """Roots of sin((ell+1)p)/sin(ell p) = alpha and the eigenpairs they give.

    One trigonometric root per interval ((j-1)pi/ell, j pi/ell) except that
    the first interval loses its root when alpha >= (ell+1)/ell and the last
    one when alpha <= -(ell+1)/ell; the missing eigenpair then comes from the
    hyperbolic branch (or the linear pseudo-solution at equality).
    """
    if ell < 2:
        raise InvalidParameter(f"ell must be >= 2, got {ell}")
    alpha = float(alpha)
    edge = (ell + 1) / ell
    js = np.arange(1, ell + 1)
    branch = None
    hyper_root = None
    sign = 0
    if math.isclose(abs(alpha), edge, rel_tol=0.0, abs_tol=1e-13):
        branch, sign = "pseudo", 1 if alpha > 0 else -1
    elif abs(alpha) > edge:
        branch, sign = "hyperbolic", 1 if alpha > 0 else -1
    if sign > 0:
        js = js[1:]
    elif sign < 0:
        js = js[:-1]
    roots = _trig_roots(ell, alpha, js)
    site = np.arange(1, ell + 1, dtype=float)
    vals = [2 * np.cos(roots)]
    vecs = [np.sin(np.outer(site, roots))]
    if branch == "pseudo":
        v = site * (1.0 if sign > 0 else (-1.0) ** site)
        vals.append(np.array([2.0 * sign]))
        vecs.append(v[:, None])
    elif branch == "hyperbolic":
        hyper_root = solve_sinh_ratio(ell, abs(alpha))
        v = _sinh_profile(ell, hyper_root)
        if sign < 0:
            v = v * (-1.0) ** site
        vals.append(np.array([2.0 * sign * math.cosh(hyper_root)]))
        vecs.append(v[:, None])
    eigenvalues = np.concatenate(vals)
    eigenvectors = np.hstack(vecs)
    eigenvectors = eigenvectors / np.linalg.norm(eigenvectors, axis=0)
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvectors = eigenvectors[:, order]
    # fix the sign so the first nonzero component of every vector is positive
    first = eigenvectors[np.argmax(np.abs(eigenvectors) > 1e-300, axis=0), np.arange(ell)]
    eigenvectors = eigenvectors * np.where(first < 0, -1.0, 1.0)
    return QuasimomentaSolution(
        alpha=alpha,
        ell=ell,
        trig_roots=roots,
        hyper_root=hyper_root,
        hyper_sign=sign,
        branch=branch,
        eigenvalues=eigenvalues[order],
        eigenvectors=eigenvectors,
    )


def path_gap(ell: int, alpha: float = 0.0, check: bool = True) -> tuple[float, float]:
    """(top eigenvalue, gap to the second) of ``A_ell(alpha)``.

    With ``check`` the two values are confirmed by a dense eigensolve to 1e-9.
    """
    if alpha < 0:
        raise InvalidParameter("path_gap expects alpha >= 0")
    sol = solve_quasimomenta(ell, alpha)
    top, second = sol.eigenvalues[0], sol.eigenvalues[1]
    if check:
        dense = np.linalg.eigvalsh(path_matrix(ell, alpha))[::-1]
        err = max(abs(dense[0] - top), abs(dense[1] - second))
        if err > 1e-9:
            raise NumericFailure(f"quasimomenta and dense spectra disagree for ell={ell}, alpha={alpha}", residual=err)
    return float(top), float(top - second)


def quasimomenta_rows(sol: QuasimomentaSolution) -> list[tuple[int, float, float]]:
    """(j, p_j, eigenvalue) rows; the hyperbolic root is reported as p = i x via NaN p."""
    rows = [(j, float(p), float(2 * math.cos(p))) for j, p in enumerate(sol.trig_roots, start=1)]
    if sol.branch is not None:
        lam = 2.0 * sol.hyper_sign * (math.cosh(sol.hyper_root) if sol.hyper_root is not None else 1.0)
        rows.append((len(rows) + 1, math.nan, lam))
    return rows


def write_quasimomenta_csv(sol: QuasimomentaSolution, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["j", "p_j", "eigenvalue"])
    for j, p, lam in quasimomenta_rows(sol):
        w.writerow([j, repr(p), repr(lam)])


# ---------------------------------------------------------------------------
# operators on a handful of sites


@dataclass(frozen=True)
class CollapsedPath:
    """Symmetric tridiagonal operator on sites ``0..length-1``."""

    length: int
    hop_weights: np.ndarray
    diagonal_weights: np.ndarray
    sizes: np.ndarray | None = None
    m: float | None = None

    def __post_init__(self):
        hw = np.asarray(self.hop_weights, dtype=float)
        dw = np.asarray(self.diagonal_weights, dtype=float)
        if hw.shape != (max(self.length - 1, 0),) or dw.shape != (self.length,):
            raise InvalidParameter("hop/diagonal weight arrays do not match the path length")
        if not (np.all(np.isfinite(hw)) and np.all(np.isfinite(dw))) or np.any(hw < 0) or np.any(dw < 0):
            raise InvalidParameter("collapsed weights must be finite and non-negative")
        object.__setattr__(self, "hop_weights", hw)
        object.__setattr__(self, "diagonal_weights", dw)

    @classmethod
    def uniform(cls, ell: int, hop: float = 1.0, diagonal: float = 0.0, m: float | None = None) -> "CollapsedPath":
        return cls(ell, np.full(ell - 1, float(hop)), np.full(ell, float(diagonal)), m=m)

    def matrix(self) -> np.ndarray:
        a = np.diag(self.diagonal_weights)
        idx = np.arange(self.length - 1)
        a[idx, idx + 1] = a[idx + 1, idx] = self.hop_weights
        return a

    @property
    def entrance(self) -> int:
        return 0

    @property
    def exit(self) -> int:
        return self.length - 1


@dataclass(frozen=True, eq=False)
class QuotientOperator:
    """Adjacency restricted to the span of normalized cell indicators.

    ``matrix[i, j] = B[i, j] sqrt(size_i / size_j)`` where ``B[i, j]`` is the
    (constant) number of neighbors a vertex of cell ``i`` has in cell ``j``.
    """

    matrix: np.ndarray
    cells: np.ndarray
    sizes: np.ndarray
    entrance: int
    exit: int | None
    m: float | None = None

    @property
    def length(self) -> int:
        return int(self.sizes.size)

    def lift(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec)[self.cells] / np.sqrt(self.sizes[self.cells])

    def project(self, full: np.ndarray) -> np.ndarray:
        sums = np.bincount(self.cells, weights=np.real(full), minlength=self.length)
        if np.iscomplexobj(full):
            sums = sums + 1j * np.bincount(self.cells, weights=np.imag(full), minlength=self.length)
        return sums / np.sqrt(self.sizes)


def collapse_clusters(g: MultiGraph, layout: InstanceLayout) -> CollapsedPath:
    """Tridiagonal operator on cluster-uniform superpositions.

    Hop weight ``M_{j,j+1} / sqrt(|C_j||C_{j+1}|)``; diagonal
    ``(2 internal edges + loops) / |C_j|``.  Decoration vertices are ignored.
    """
    if layout.vertex_count != g.vertex_count:
        raise InvalidParameter("layout and graph disagree on vertex count")
    ell = layout.ell
    cu = layout.cluster[g.edge_u]
    cv = layout.cluster[g.edge_v]
    keep = (cu > 0) & (cv > 0)
    cu, cv = cu[keep], cv[keep]
    loop = g.edge_u[keep] == g.edge_v[keep]
    step = np.abs(cu - cv)
    if np.any(step > 1):
        bad = int(np.flatnonzero(step > 1)[0])
        raise ConstructionViolation(f"edge joins non-adjacent clusters {cu[bad]} and {cv[bad]}")
    sizes = layout.cluster_sizes().astype(float)
    if np.any(sizes == 0):
        raise ConstructionViolation("empty cluster in layout")
    same = step == 0
    within = np.bincount(cu[same], weights=np.where(loop[same], 1.0, 2.0), minlength=ell + 1)[1:]
    lower = np.minimum(cu[~same], cv[~same])
    between = np.bincount(lower, minlength=ell)[1:ell].astype(float)
    hops = between / np.sqrt(sizes[:-1] * sizes[1:])
    return CollapsedPath(ell, hops, within / sizes, sizes=sizes, m=layout.m)


def layout_colors(layout: InstanceLayout) -> np.ndarray:
    """Initial coloring for refinement: cluster for originals, -level for decoration."""
    return np.where(layout.kind == KIND_DECORATION, -layout.level, layout.cluster).astype(np.int64)


def equitable_quotient(
    g: MultiGraph,
    colors: np.ndarray | None = None,
    layout: InstanceLayout | None = None,
    max_cells: int = 4096,
) -> QuotientOperator:
    """Coarsest equitable partition refining ``colors`` and its quotient operator.

    Color refinement splits cells until every vertex of a cell has the same
    number of neighbors in each cell.  Cells are numbered by their smallest
    vertex, so vertex 0 always lands in cell 0.
    """
    n = g.vertex_count
    if colors is None:
        colors = layout_colors(layout) if layout is not None else np.zeros(n, dtype=np.int64)
    _, cells = np.unique(np.asarray(colors), return_inverse=True)
    adj = g.to_sparse()
    count = int(cells.max()) + 1
    while True:
        onehot = sp.csr_matrix((np.ones(n), (np.arange(n), cells)), shape=(n, count))
        nb = (adj @ onehot).toarray()
        sig = np.hstack([cells[:, None].astype(float), nb])
        _, new = np.unique(sig, axis=0, return_inverse=True)
        new = new.ravel()
        new_count = int(new.max()) + 1
        if new_count > max_cells:
            raise ConstructionViolation(f"equitable refinement exceeded {max_cells} cells")
        cells = new
        if new_count == count:
            break
        count = new_count
    first = np.full(count, n, dtype=np.int64)
    np.minimum.at(first, cells, np.arange(n))
    rank = np.empty(count, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(count)
    cells = rank[cells]
    first = np.sort(first)
    sizes = np.bincount(cells, minlength=count).astype(float)
    onehot = sp.csr_matrix((np.ones(n), (np.arange(n), cells)), shape=(n, count))
    b = (adj @ onehot).toarray()[first]
    mat = b * np.sqrt(sizes[:, None] / sizes[None, :])
    if not np.allclose(mat, mat.T, atol=1e-9):
        raise ConstructionViolation("quotient operator is not symmetric")
    mat = 0.5 * (mat + mat.T)
    exit_cell = None
    m = None
    if layout is not None:
        exit_cell = int(cells[layout.exit])
        m = layout.m
    return QuotientOperator(mat, cells, sizes, int(cells[0]), exit_cell, m)


class SiteOperator(NamedTuple):
    matrix: Any  # dense ndarray or scipy sparse
    entrance: int
    exit: int
    m: float | None


def as_operator(obj, layout: InstanceLayout | None = None, exit: int | None = None) -> SiteOperator:
    """Normalize any supported operator form to (matrix, entrance, exit, m)."""
    if isinstance(obj, SiteOperator):
        return obj
    if isinstance(obj, tuple) and len(obj) == 2 and isinstance(obj[0], MultiGraph):
        obj, layout = obj
    if isinstance(obj, CollapsedPath):
        return SiteOperator(obj.matrix(), 0, obj.length - 1, obj.m)
    if isinstance(obj, QuotientOperator):
        if obj.exit is None and exit is None:
            raise InvalidParameter("quotient operator has no EXIT cell")
        return SiteOperator(obj.matrix, obj.entrance, obj.exit if exit is None else exit, obj.m)
    if isinstance(obj, MultiGraph):
        mat = obj.to_sparse()
        if obj.vertex_count <= DENSE_CEILING:
            mat = mat.toarray()
        if layout is not None:
            return SiteOperator(mat, layout.entrance, layout.exit, layout.m)
        return SiteOperator(mat, 0, obj.vertex_count - 1 if exit is None else exit, None)
    if sp.issparse(obj) or isinstance(obj, np.ndarray):
        n = obj.shape[0]
        return SiteOperator(obj, 0, n - 1 if exit is None else exit, None)
    raise InvalidParameter(f"unsupported operator type {type(obj).__name__}")


# ---------------------------------------------------------------------------
# top eigenpair


def _entrance_component(adj: sp.csr_matrix, entrance: int = 0) -> np.ndarray:
    _, labels = connected_components(adj, directed=False)
    return np.flatnonzero(labels == labels[entrance])


def _power_top(mat, shift: float, tol: float, max_iter: int) -> tuple[float, np.ndarray]:
    n = mat.shape[0]
    x = np.ones(n) / math.sqrt(n)
    resid = math.inf
    for _ in range(max_iter):
        y = mat @ x
        lam = float(x @ y)
        resid = float(np.linalg.norm(y - lam * x))
        if resid <= tol:
            return lam, x
        y = y + shift * x
        x = y / np.linalg.norm(y)
    raise NumericFailure("shifted power iteration did not converge", residual=resid)


def top_eigenpair(
    obj,
    tol: float = 1e-8,
    method: str = "auto",
    max_iter: int = 1_000_000,
) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and unit eigenvector (non-negative orientation).

    For a ``MultiGraph`` only the component containing vertex 0 is solved and
    the vector is zero elsewhere.  ``method``: ``"dense"`` (default up to
    2048 sites), ``"lanczos"`` (ARPACK, default above), or ``"power"``.
    """
    comp = None
    if isinstance(obj, MultiGraph):
        adj = obj.to_sparse()
        comp = _entrance_component(adj)
        full_n = obj.vertex_count
        mat = adj[comp][:, comp] if comp.size < full_n else adj
        shift = float(obj.degrees.max())
    else:
        mat = as_operator(obj).matrix
        shift = float(abs(mat).sum(axis=1).max()) if mat.shape[0] else 0.0
    n = mat.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_CEILING else "lanczos"
    if method == "dense":
        dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)
        w, v = np.linalg.eigh(dense)
        lam, vec = float(w[-1]), v[:, -1]
    elif method == "lanczos":
        v0 = np.ones(n) / math.sqrt(n)
        w, v = spla.eigsh(sp.csr_matrix(mat), k=1, which="LA", v0=v0, tol=min(tol, 1e-10) * 1e-2)
        lam, vec = float(w[0]), v[:, 0]
    elif method == "power":
        lam, vec = _power_top(mat, shift, tol, max_iter)
    else:
        raise InvalidParameter(f"unknown method {method!r}")
    if vec.sum() < 0:
        vec = -vec
    vec = vec / np.linalg.norm(vec)
    resid = float(np.linalg.norm(mat @ vec - lam * vec))
    if resid > tol:
        raise NumericFailure("top eigenpair residual too large", residual=resid)
    if comp is not None and comp.size < full_n:
        out = np.zeros(full_n)
        out[comp] = vec
        vec = out
    return lam, vec


# ---------------------------------------------------------------------------
# decoration fixed point


class FixedPoint(NamedTuple):
    gamma: float
    eigenvalue: float
    x: float | None


class PhiVector(NamedTuple):
    levels: np.ndarray  # a_j, j = 0..D, a_0 = 1
    l1: float
    l2: float
    log_l1: float


def _level_operator(gamma: float, tree: TreeSpec) -> tuple[np.ndarray, np.ndarray]:
    d = tree.depth
    diag = np.zeros(d + 1)
    diag[0] = gamma
    off = np.full(d, math.sqrt(tree.arity))
    return diag, off


def tree_top(gamma: float, tree: TreeSpec) -> tuple[float, float | None]:
    """Top eigenvalue of the level-collapsed tree with ``gamma`` at the root.

    Returns ``(lambda_T, x)``; ``x`` is the hyperbolic parameter of the closed
    form ``lambda_T = 2 sqrt(b) cosh x`` used when ``gamma >= 2 sqrt(b)``,
    otherwise ``None`` and the value comes from a tridiagonal eigensolve.
    """
    if tree.depth == 0:
        return float(gamma), None
    sb = math.sqrt(tree.arity)
    if gamma >= 2 * sb:
        ratio = gamma / sb
        n = tree.depth + 1
        x = 0.0 if ratio <= (n + 1) / n else solve_sinh_ratio(n, ratio)
        return 2 * sb * math.cosh(x), x
    diag, off = _level_operator(gamma, tree)
    w = sla.eigvalsh_tridiagonal(diag, off, select="i", select_range=(tree.depth, tree.depth))
    return float(w[0]), None


def decoration_fixed_point(lambda_G: float, k: int, tree: TreeSpec) -> FixedPoint:
    """The gamma with lambda_G + k/gamma = lambda_T(gamma), by bisection.

    The left side decreases and the right side increases in gamma.  The upper
    bracket is the depth-0 solution (lambda_T >= gamma); the lower one is
    found by halving.
    """
    if lambda_G < 0 or k < 0 or (lambda_G == 0 and k == 0):
        raise InvalidParameter("need lambda_G >= 0, k >= 0, not both zero")

    def h(gam: float) -> float:
        return tree_top(gam, tree)[0] - lambda_G - k / gam

    hi = 0.5 * (lambda_G + math.sqrt(lambda_G * lambda_G + 4 * k))
    if k == 0:
        hi = max(hi, 2 * math.sqrt(tree.arity) + lambda_G)
    # the depth-0 root itself can round to h(hi) slightly below zero
    hi *= 1 + 1e-12
    if h(hi) < 0:
        raise NumericFailure("fixed-point bracket: h(hi) < 0")
    lo = hi
    for _ in range(BISECT_CAP):
        lo *= 0.5
        if h(lo) < 0:
            break
    else:
        raise NumericFailure("no lower bracket for the decoration fixed point")
    for _ in range(BISECT_CAP):
        mid = 0.5 * (lo + hi)
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECT_TOL * hi:
            break
    else:
        raise NumericFailure("fixed-point bisection did not converge")
    gamma = 0.5 * (lo + hi)
    lam, x = tree_top(gamma, tree)
    return FixedPoint(gamma, lam, x)


def gamma_bound_preconditions(lambda_G: float, k: int, tree: TreeSpec, m: float) -> bool:
    """True when m <= gamma <= lambda_G + 1 is guaranteed.

    gamma >= m iff lambda_T(m) <= lambda_G + k/m, and gamma <= lambda_G + 1
    follows from k <= lambda_G + 1 because lambda_T(g) >= g.
    """
    return tree_top(m, tree)[0] <= lambda_G + k / m and k <= lambda_G + 1


def phi_vector(gamma: float, tree: TreeSpec) -> PhiVector:
    """Level amplitudes of the tree eigenvector with root amplitude 1.

    ``l2`` sums squared level amplitudes (level vectors are unit), ``l1``
    sums per-vertex magnitudes: level j holds b^j vertices of amplitude
    a_j / b^(j/2), contributing a_j b^(j/2).
    """
    if gamma <= 0:
        raise InvalidParameter("gamma must be positive")
    d, b = tree.depth, tree.arity
    if d == 0:
        return PhiVector(np.ones(1), 1.0, 1.0, 0.0)
    lam, x = tree_top(gamma, tree)
    if x is not None:
        a = _sinh_profile(d + 1, x, reverse=True)
    else:
        diag, off = _level_operator(gamma, tree)
        _, v = sla.eigh_tridiagonal(diag, off, select="i", select_range=(d, d))
        a = v[:, 0] / v[0, 0]
        if np.any(a <= 0):
            raise NumericFailure("level eigenvector is not positive")
    j = np.arange(d + 1)
    with np.errstate(divide="ignore"):
        logs = np.log(a) + 0.5 * j * math.log(b)
    top = float(np.max(logs))
    log_l1 = top + math.log(float(np.sum(np.exp(logs - top))))
    l1 = math.exp(log_l1) if log_l1 < 700 else math.inf
    return PhiVector(a, l1, float(np.linalg.norm(a)), log_l1)


def l1_lower_bound(gamma: float, tree: TreeSpec) -> float:
    """(1 - e^{-2x}) sum_j (b/gamma)^j, a lower bound on ``phi_vector(...).l1``."""
    _, x = tree_top(gamma, tree)
    if x is None:
        raise InvalidParameter("bound needs gamma >= 2 sqrt(b)")
    q = tree.arity / gamma
    s = tree.depth + 1 if q == 1 else (q ** (tree.depth + 1) - 1) / (q - 1)
    return -math.expm1(-2 * x) * s


def l2_upper_bound(gamma: float, tree: TreeSpec) -> float:
    q = math.sqrt(tree.arity) / gamma
    return float(sum(q**j for j in range(tree.depth + 1)))


# ---------------------------------------------------------------------------
# decorated eigenpair prediction


class DecoratedPrediction(NamedTuple):
    eigenvalue: float
    vector: np.ndarray
    residual: float
    fixed_points: tuple[FixedPoint, ...]


def _infer_round(layout: InstanceLayout, level: int) -> tuple[int, TreeSpec, np.ndarray]:
    members = np.flatnonzero((layout.kind == KIND_DECORATION) & (layout.level == level))
    depth = layout.tree_depth[members]
    roots = members[depth == 0]
    hosts = np.unique(layout.anchor[roots])
    copies = roots.size // max(hosts.size, 1)
    d = int(depth.max())
    arity = int(np.count_nonzero(depth == 1) // roots.size) if d > 0 else 1
    return copies, TreeSpec(arity, d), members


def predict_decorated_eigenpair(
    g: MultiGraph, layout: InstanceLayout, params=None, tol: float = 1e-8
) -> DecoratedPrediction:
    """Assemble the decorated top eigenpair round by round and check it.

    Starting from the top eigenpair of the original instance, every round
    solves the fixed point for its trees and extends the vector by
    ``(psi_v / gamma) a_j / b^(j/2)`` on each depth-j vertex of a tree hung
    from ``v``.  The residual against the actual adjacency must be <= tol.
    """
    n = g.vertex_count
    orig = layout.original
    n0 = int(np.count_nonzero(orig))
    if not np.all(orig[:n0]):
        raise InvalidParameter("original vertices must precede decoration vertices")
    u, v = g.subgraph_edges(orig)
    lam, base = top_eigenpair(MultiGraph(n0, u, v), tol=1e-12)
    psi = np.zeros(n)
    psi[:n0] = base
    fps = []
    for level in layout.rounds_applied:
        copies, tree, members = _infer_round(layout, level)
        if params is not None:
            copies, tree = params.h, params.tree(level)
        fp = decoration_fixed_point(lam, copies, tree)
        phi = phi_vector(fp.gamma, tree)
        depth = layout.tree_depth[members]
        scale = phi.levels[depth] / np.power(float(tree.arity), depth / 2.0)
        psi[members] = psi[layout.anchor[members]] / fp.gamma * scale
        lam = fp.eigenvalue
        fps.append(fp)
    psi /= np.linalg.norm(psi)
    adj = g.to_sparse()
    resid = float(np.linalg.norm(adj @ psi - lam * psi))
    if resid > tol:
        raise PredictionMismatch("predicted decorated eigenpair does not satisfy A v = lambda v", residual=resid)
    return DecoratedPrediction(float(lam), psi, resid, tuple(fps))


# ---------------------------------------------------------------------------
# weight split


@dataclass(frozen=True)
class WeightReport:
    l2_fraction_on_original: float
    l1_fraction_on_original: float
    per_level: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "l2_fraction_on_original": self.l2_fraction_on_original,
            "l1_fraction_on_original": self.l1_fraction_on_original,
            "per_level": self.per_level,
        }


def weight_report(vector: np.ndarray, layout: InstanceLayout) -> WeightReport:
    """Exact split of l2 and l1 mass between original and decoration vertices.

    The vector is rescaled to unit l2 norm first.  ``per_level`` keys are
    ``"level<j>/depth<t>"``.
    """
    v = np.abs(np.asarray(vector))
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise InvalidParameter("zero vector")
    v = v / nrm
    orig = layout.original
    sq = v * v
    l1_total = float(v.sum())
    per: dict[str, dict[str, float]] = {}
    dec = np.flatnonzero(~orig)
    if dec.size:
        keys = layout.level[dec] * (int(layout.tree_depth.max()) + 1) + layout.tree_depth[dec]
        for key in np.unique(keys):
            sel = dec[keys == key]
            lev, dep = divmod(int(key), int(layout.tree_depth.max()) + 1)
            per[f"level{lev}/depth{dep}"] = {"l2": float(sq[sel].sum()), "l1": float(v[sel].sum() / l1_total)}
    return WeightReport(
        l2_fraction_on_original=float(min(1.0, sq[orig].sum())),
        l1_fraction_on_original=float(min(1.0, v[orig].sum() / l1_total)),
        per_level=per,
    )


# ---------------------------------------------------------------------------
# adiabatic path


def interpolated(op: SiteOperator, s: float, endpoint_weight: float):
    """-H(s) as a matrix of the same kind (dense or sparse) as ``op.matrix``."""
    if not -1.0 <= s <= 1.0:
        raise InvalidParameter(f"s must lie in [-1, 1], got {s}")
    site = op.entrance if s <= 0 else op.exit
    n = op.matrix.shape[0]
    if sp.issparse(op.matrix):
        proj = sp.csr_matrix(([1.0], ([site], [site])), shape=(n, n))
        return (1 - abs(s)) * op.matrix + abs(s) * endpoint_weight * proj
    out = (1 - abs(s)) * np.asarray(op.matrix, dtype=float)
    out[site, site] += abs(s) * endpoint_weight
    return out


def _endpoint(op: SiteOperator, endpoint_weight: float | None) -> float:
    if endpoint_weight is not None:
        return float(endpoint_weight)
    if op.m is None:
        raise InvalidParameter("endpoint_weight not given and operator carries no m")
    return float(op.m)


def _top_two(mat) -> tuple[float, float]:
    if sp.issparse(mat):
        n = mat.shape[0]
        w = spla.eigsh(mat, k=2, which="LA", v0=np.ones(n) / math.sqrt(n), tol=1e-12)[0]
        w = np.sort(w)
        return float(w[1]), float(w[0])
    w = np.linalg.eigvalsh(mat)
    return float(w[-1]), float(w[-2])


def adiabatic_spectrum(
    base, s: float, endpoint_weight: float | None = None, layout: InstanceLayout | None = None
) -> tuple[float, float, float]:
    """(lambda_1, lambda_2, gap) of -H(s)."""
    op = as_operator(base, layout)
    w = _endpoint(op, endpoint_weight)
    l1, l2 = _top_two(interpolated(op, s, w))
    return l1, l2, l1 - l2


@dataclass(frozen=True)
class SweepResult:
    s: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.lambda1 - self.lambda2

    @property
    def min_gap(self) -> float:
        return float(self.gap.min())

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "lambda1", "lambda2", "gap"])
        for row in zip(self.s, self.lambda1, self.lambda2, self.gap):
            w.writerow([repr(float(x)) for x in row])

    def to_dict(self) -> dict:
        return {"s": self.s.tolist(), "lambda1": self.lambda1.tolist(), "lambda2": self.lambda2.tolist(), "min_gap": self.min_gap}


def s_grid(points: int) -> np.ndarray:
    if points < 2:
        raise InvalidParameter("s-grid needs at least 2 points")
    return np.linspace(-1.0, 1.0, points)


def adiabatic_sweep(
    base, grid: int | Sequence[float] = 201, endpoint_weight: float | None = None, layout: InstanceLayout | None = None
) -> SweepResult:
    op = as_operator(base, layout)
    w = _endpoint(op, endpoint_weight)
    ss = s_grid(grid) if isinstance(grid, (int, np.integer)) else np.asarray(grid, dtype=float)
    vals = np.array([_top_two(interpolated(op, float(s), w)) for s in ss])
    return SweepResult(ss, vals[:, 0], vals[:, 1])


def decoration_norm(g: MultiGraph, layout: InstanceLayout) -> float:
    """Spectral norm of the adjacency of the edges touching decoration vertices.

    That edge set is a forest, so its spectrum is symmetric and the norm is
    the largest eigenvalue.
    """
    dec = layout.kind == KIND_DECORATION
    keep = dec[g.edge_u] | dec[g.edge_v]
    if not np.any(keep):
        return 0.0
    sub = MultiGraph(g.vertex_count, g.edge_u[keep], g.edge_v[keep])
    mat = sub.to_sparse()
    touched = np.flatnonzero(sub.degrees > 0)
    mat = mat[touched][:, touched]
    n = mat.shape[0]
    if n <= DENSE_CEILING:
        return float(np.max(np.abs(np.linalg.eigvalsh(mat.toarray()))))
    w = spla.eigsh(mat, k=1, which="LA", v0=np.ones(n) / math.sqrt(n), tol=1e-12)[0]
    return float(w[0])


@dataclass(frozen=True)
class Certification:
    s: np.ndarray
    base_gap: np.ndarray
    gamma0: np.ndarray
    certified: np.ndarray

    @property
    def all_certified(self) -> bool:
        return bool(np.all(self.certified))

    @property
    def failing_points(self) -> np.ndarray:
        return self.s[~self.certified]


def certify_decorated_gap(sweep: SweepResult, norm_ad: float) -> Certification:
    """Apply the perturbation rule pointwise.

    With gamma0 = (1-|s|) ||A_D||, a base gap >= 3 gamma0 certifies a decorated
    gap >= gamma0.  At |s| = 1 the decoration term vanishes and the base gap
    itself carries over, so a positive base gap certifies.
    """
    gamma0 = (1 - np.abs(sweep.s)) * norm_ad
    gap = sweep.gap
    ok = np.where(gamma0 > 0, gap >= 3 * gamma0, gap > 0)
    return Certification(sweep.s, gap, gamma0, ok)
