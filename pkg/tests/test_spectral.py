import io
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from obftunnel.errors import ConstructionViolation, InvalidParameter
from obftunnel.graph_core import (
    BuildParams,
    MultiGraph,
    TreeSpec,
    attach_trees,
    build_complete_tree,
    build_instance,
    build_path,
    obfuscate,
    plain_layout,
)
from obftunnel.graph_core import InstanceLayout
from obftunnel.spectral import (
    CollapsedPath,
    adiabatic_spectrum,
    adiabatic_sweep,
    certify_decorated_gap,
    collapse_clusters,
    decoration_fixed_point,
    decoration_norm,
    equitable_quotient,
    f_ell,
    gamma_bound_preconditions,
    interpolated,
    as_operator,
    l1_lower_bound,
    l2_upper_bound,
    path_gap,
    path_matrix,
    phi_vector,
    predict_decorated_eigenpair,
    solve_quasimomenta,
    top_eigenpair,
    tree_top,
    weight_report,
    write_quasimomenta_csv,
)

# --- f_ell -----------------------------------------------------------------


def test_f_one_is_cosine():
    p = np.linspace(0.01, 3.1, 50)
    assert np.allclose(f_ell(p, 1), 2 * np.cos(p), atol=1e-12)


def test_f_examples():
    assert f_ell(0.0, 5) == pytest.approx(6 / 5)
    assert f_ell(1e-9, 5) == pytest.approx(6 / 5, rel=1e-9)
    assert f_ell(math.pi / 2, 5) == pytest.approx(0, abs=1e-15)
    assert f_ell(math.pi, 5) == pytest.approx(-6 / 5)
    assert math.isinf(f_ell(math.pi / 5, 5))


@given(st.integers(2, 40))
def test_f_decreasing_between_poles(ell):
    for j in range(1, ell + 1):
        a, b = (j - 1) * math.pi / ell, j * math.pi / ell
        p = np.linspace(a, b, 1002)[1:-1]
        vals = f_ell(p, ell)
        assert np.all(np.diff(vals) < 0)


# --- quasimomenta ------------------------------------------------------------


def test_alpha_zero_roots():
    for ell in (2, 5, 17):
        sol = solve_quasimomenta(ell, 0.0)
        want = np.arange(1, ell + 1) * math.pi / (ell + 1)
        assert np.allclose(np.sort(sol.trig_roots), want, atol=1e-12)


def test_alpha_plus_minus_one():
    sol = solve_quasimomenta(5, 1.0)
    assert np.allclose(np.sort(sol.trig_roots), (2 * np.arange(1, 6) - 1) * math.pi / 11, atol=1e-12)
    sol = solve_quasimomenta(5, -1.0)
    assert np.allclose(np.sort(sol.trig_roots), 2 * np.arange(1, 6) * math.pi / 11, atol=1e-12)


@given(st.integers(2, 60), st.floats(-6, 6, allow_nan=False))
def test_quasimomenta_counts_and_residuals(ell, alpha):
    sol = solve_quasimomenta(ell, alpha)
    edge = (ell + 1) / ell
    extra = sol.hyper_root is not None or sol.branch == "pseudo"
    assert len(sol.trig_roots) + int(extra) == ell
    if abs(alpha) < edge:
        assert not extra
    elif abs(alpha) > edge:
        assert sol.branch == "hyperbolic"
    assert np.all(sol.residuals() <= 1e-9)
    dense = np.sort(np.linalg.eigvalsh(path_matrix(ell, alpha)))[::-1]
    assert np.allclose(sol.eigenvalues, dense, atol=1e-9)
    # one root per pole-free interval
    roots = np.sort(sol.trig_roots)
    cells = np.floor(roots * ell / math.pi).astype(int)
    assert len(set(cells.tolist())) == len(roots)


@given(st.integers(2, 60), st.floats(-1, 1, allow_nan=False))
def test_interlacing(ell, alpha):
    roots = np.sort(solve_quasimomenta(ell, alpha).trig_roots)
    j = np.arange(1, ell + 1)
    assert np.all(roots >= (2 * j - 1) * math.pi / (2 * ell + 1) - 1e-12)
    assert np.all(roots <= 2 * j * math.pi / (2 * ell + 1) + 1e-12)


def test_pseudo_solution():
    ell = 6
    sol = solve_quasimomenta(ell, (ell + 1) / ell)
    assert sol.branch == "pseudo"
    assert sol.eigenvalues[0] == pytest.approx(2.0, abs=1e-12)
    v = sol.eigenvectors[:, 0]
    j = np.arange(1, ell + 1)
    assert np.allclose(v / v[0], j, atol=1e-9)


def test_large_alpha_log_domain():
    sol = solve_quasimomenta(800, 50.0)
    assert sol.branch == "hyperbolic"
    assert np.all(np.isfinite(sol.eigenvectors))
    assert sol.residuals().max() <= 1e-9


def test_path_gap_examples():
    top, gap = path_gap(2, 0.0)
    assert top == pytest.approx(1) and gap == pytest.approx(2)
    top, gap = path_gap(5, 3.0)
    assert top >= 3
    assert top - gap <= 2 - 1 / 25
    for ell in (3, 10, 50, 120):
        assert path_gap(ell, 0.0)[1] >= (math.pi / (2 * ell + 1)) ** 2 / math.pi**2


def test_overlap_law():
    for ell in list(range(2, 30)) + [64, 128, 200]:
        sol = solve_quasimomenta(ell, 0.0)
        assert np.min(np.abs(sol.eigenvectors[:, 0])) >= 0.5 * ell**-1.5


def test_quasimomenta_csv():
    buf = io.StringIO()
    write_quasimomenta_csv(solve_quasimomenta(4, 0.0), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "j,p_j,eigenvalue" and len(lines) == 5


# --- collapse ----------------------------------------------------------------


def test_two_cluster_formula():
    # sizes 2 and 4 joined by 4 edges
    g = MultiGraph(6, [0, 0, 1, 1], [2, 3, 4, 5])
    layout = plain_layout(6)
    layout = InstanceLayout(**{**layout.__dict__, "ell": 2, "cluster": np.array([1, 1, 2, 2, 2, 2])})
    cp = collapse_clusters(g, layout)
    assert cp.hop_weights[0] == pytest.approx(math.sqrt(2))
    assert np.all(cp.diagonal_weights == 0)


def test_nonadjacent_cluster_edge_is_violation():
    g = MultiGraph(3, [0], [2])
    layout = plain_layout(3)
    layout = InstanceLayout(**{**layout.__dict__, "ell": 3, "cluster": np.array([1, 2, 3])})
    with pytest.raises(ConstructionViolation):
        collapse_clusters(g, layout)


@pytest.mark.parametrize("m,k,ell", [(2, 1, 5), (3, 1, 5), (2, 2, 7)])
def test_collapse_hops_and_soundness(m, k, ell):
    p = BuildParams(m=m, k=k, ell=ell, rounds=0, expander_threshold=math.inf, seed=7)
    g, layout = obfuscate(p)
    cp = collapse_clusters(g, layout)
    assert np.allclose(cp.hop_weights, m)
    assert cp.diagonal_weights[0] == pytest.approx(2 * m)
    assert np.allclose(cp.diagonal_weights[1:-1], 2 * m)
    full = np.linalg.eigvalsh(g.to_dense())
    for lam in np.linalg.eigvalsh(cp.matrix()):
        assert np.min(np.abs(full - lam)) <= 1e-6
    top, _ = top_eigenpair(g)
    assert top == pytest.approx(np.linalg.eigvalsh(cp.matrix())[-1], abs=1e-8)


def test_quotient_matches_collapse_on_undecorated(small_instance):
    _, g, layout = small_instance
    q = equitable_quotient(g, layout=layout)
    cp = collapse_clusters(g, layout)
    assert np.linalg.eigvalsh(q.matrix)[-1] == pytest.approx(np.linalg.eigvalsh(cp.matrix())[-1], abs=1e-9)


def test_quotient_exact_on_decorated():
    p = BuildParams(m=2, k=1, ell=5, rounds=2, trees_per_round=1, depth_override=(1, 2), expander_threshold=math.inf, seed=1)
    g, layout = build_instance(p)
    q = equitable_quotient(g, layout=layout)
    assert q.cells[layout.entrance] == 0
    lam, vec = top_eigenpair(g)
    qlam, qvec = top_eigenpair(q)
    assert qlam == pytest.approx(lam, abs=1e-9)
    assert np.allclose(q.lift(qvec), vec, atol=1e-8)
    assert np.allclose(q.project(vec), qvec, atol=1e-8)


# --- top eigenpair -----------------------------------------------------------


def test_top_eigenpair_path_and_cycle():
    lam, v = top_eigenpair(build_path(5))
    assert lam == pytest.approx(math.sqrt(3), abs=1e-12)
    c4 = MultiGraph(4, [0, 1, 2, 3], [1, 2, 3, 0])
    lam, v = top_eigenpair(c4)
    assert lam == pytest.approx(2) and np.allclose(v, 0.5)


def test_top_eigenpair_methods_agree(small_instance):
    _, g, _ = small_instance
    vals = [top_eigenpair(g, method=m)[0] for m in ("dense", "lanczos", "power")]
    assert max(vals) - min(vals) <= 1e-8


def test_top_eigenpair_entrance_component():
    g = MultiGraph(5, [0, 2, 3], [1, 3, 4])
    lam, v = top_eigenpair(g)
    assert lam == pytest.approx(1) and np.all(v[2:] == 0)


# --- decoration fixed point -------------------------------------------------


def test_depth_zero_quadratic():
    for lam_g, k in [(2.0, 3), (8.0, 4), (0.0, 5)]:
        fp = decoration_fixed_point(lam_g, k, TreeSpec(1, 0))
        assert fp.gamma == pytest.approx((lam_g + math.sqrt(lam_g**2 + 4 * k)) / 2, rel=1e-12)


def test_no_trees_keeps_eigenvalue():
    fp = decoration_fixed_point(5.0, 0, TreeSpec(3, 2))
    assert fp.eigenvalue == pytest.approx(5.0, rel=1e-10)


def test_gamma_bound_regime():
    m = 4
    p = BuildParams(m=m, k=1, ell=5)
    tree = p.tree(1)
    lam_g = 2 * m
    assert gamma_bound_preconditions(lam_g, p.h, tree, m)
    fp = decoration_fixed_point(lam_g, p.h, tree)
    assert m <= fp.gamma <= lam_g + 1


@given(st.integers(1, 4), st.integers(1, 4), st.floats(0.1, 30))
def test_tree_top_matches_explicit_tree(b, depth, gamma):
    tree = TreeSpec(b, depth)
    g = build_complete_tree(tree)
    a = g.to_dense()
    a[0, 0] += gamma
    assert tree_top(gamma, tree)[0] == pytest.approx(np.linalg.eigvalsh(a)[-1], rel=1e-10, abs=1e-10)


def _explicit_phi(gamma, tree):
    g = build_complete_tree(tree)
    a = g.to_dense()
    a[0, 0] += gamma
    w, v = np.linalg.eigh(a)
    vec = v[:, -1] / v[0, -1]
    return vec


def test_phi_depth_zero():
    phi = phi_vector(3.0, TreeSpec(2, 0))
    assert phi.levels.tolist() == [1.0] and phi.l1 == phi.l2 == 1.0


@pytest.mark.parametrize("b,depth,gamma", [(2, 3, 4.0), (3, 4, 5.0), (6, 4, 5.0), (2, 5, 1.5)])
def test_phi_against_explicit_tree(b, depth, gamma):
    tree = TreeSpec(b, depth)
    phi = phi_vector(gamma, tree)
    vec = _explicit_phi(gamma, tree)
    assert phi.l1 == pytest.approx(np.abs(vec).sum(), rel=1e-9)
    assert phi.l2 == pytest.approx(np.linalg.norm(vec), rel=1e-9)
    assert phi.l2 <= l2_upper_bound(gamma, tree) + 1e-12


def test_phi_l1_lower_bound_deep():
    # b/gamma = 1.2 at depth 30
    tree = TreeSpec(6, 30)
    gamma = 5.0
    phi = phi_vector(gamma, tree)
    geo = sum(1.2**j for j in range(31))
    assert phi.l1 >= l1_lower_bound(gamma, tree) * (1 - 1e-12)
    assert phi.l1 >= (1 - 2 * tree.arity / gamma**2) * geo
    assert phi.l2 <= l2_upper_bound(gamma, tree)


def test_phi_log_domain_at_depth_1000():
    phi = phi_vector(5.0, TreeSpec(6, 1000))
    assert math.isfinite(phi.log_l1) and phi.log_l1 > 100
    assert np.all(np.isfinite(phi.levels))


# --- decorated prediction --------------------------------------------------


@pytest.mark.parametrize("k", [1, 3, 6])
def test_prediction_star(k):
    g, layout = attach_trees(MultiGraph(1, [], []), plain_layout(1), k, TreeSpec(1, 0), level=1)
    pred = predict_decorated_eigenpair(g, layout)
    w, v = np.linalg.eigh(g.to_dense())
    assert pred.eigenvalue == pytest.approx(w[-1], abs=1e-12) == pytest.approx(math.sqrt(k))
    assert abs(abs(pred.vector @ v[:, -1]) - 1) < 1e-12


def test_prediction_six_cycle():
    c6 = MultiGraph(6, np.arange(6), (np.arange(6) + 1) % 6)
    g, layout = attach_trees(c6, plain_layout(6), 2, TreeSpec(2, 2), level=1)
    pred = predict_decorated_eigenpair(g, layout)
    assert pred.eigenvalue == pytest.approx(np.linalg.eigvalsh(g.to_dense())[-1], abs=1e-8)
    assert pred.residual <= 1e-8


def test_prediction_zero_rounds(small_instance):
    _, g, layout = small_instance
    pred = predict_decorated_eigenpair(g, layout)
    lam, v = top_eigenpair(g)
    assert pred.eigenvalue == pytest.approx(lam, abs=1e-10)
    assert np.allclose(pred.vector, v, atol=1e-8)


def test_prediction_two_rounds():
    p = BuildParams(m=2, k=1, ell=5, rounds=2, trees_per_round=1, depth_override=(2, 1), expander_threshold=math.inf, seed=4)
    g, layout = build_instance(p)
    pred = predict_decorated_eigenpair(g, layout, p)
    assert pred.eigenvalue == pytest.approx(top_eigenpair(g)[0], abs=1e-8)


# --- weights ---------------------------------------------------------------


def test_weights_undecorated(small_instance):
    _, g, layout = small_instance
    rep = weight_report(top_eigenpair(g)[1], layout)
    assert rep.l2_fraction_on_original == pytest.approx(1) and rep.l1_fraction_on_original == pytest.approx(1)
    assert rep.per_level == {}


def test_weights_partition():
    p = BuildParams(m=2, k=1, ell=5, rounds=2, trees_per_round=1, depth_override=(1, 2), expander_threshold=math.inf, seed=1)
    g, layout = build_instance(p)
    rep = weight_report(top_eigenpair(g)[1], layout)
    l2 = rep.l2_fraction_on_original + sum(d["l2"] for d in rep.per_level.values())
    l1 = rep.l1_fraction_on_original + sum(d["l1"] for d in rep.per_level.values())
    assert l2 == pytest.approx(1) and l1 == pytest.approx(1)
    assert set(rep.per_level) == {"level1/depth0", "level1/depth1", "level2/depth0", "level2/depth1", "level2/depth2"}


def test_weights_reject_zero(small_instance):
    _, _, layout = small_instance
    with pytest.raises(InvalidParameter):
        weight_report(np.zeros(layout.vertex_count), layout)


# --- adiabatic spectrum ----------------------------------------------------


def test_endpoints_and_middle():
    cp = CollapsedPath.uniform(5, 16, 32, m=16)
    l1, l2, gap = adiabatic_spectrum(cp, -1.0)
    assert (l1, l2) == pytest.approx((16, 0))
    l1, l2, _ = adiabatic_spectrum(cp, 0.0)
    w = np.linalg.eigvalsh(cp.matrix())
    assert (l1, l2) == pytest.approx((w[-1], w[-2]))


def test_collapsed_gap_scaling():
    m, ell = 16, 5
    sweep = adiabatic_sweep(CollapsedPath.uniform(ell, m, 2 * m, m=m), 201)
    assert sweep.s.size == 201
    assert sweep.min_gap >= 0.1 * m / ell**2


def test_sparse_and_dense_agree(small_instance):
    _, g, layout = small_instance
    op = as_operator(g, layout)
    sparse_op = op._replace(matrix=sp.csr_matrix(op.matrix))
    for s in (-0.7, 0.0, 0.4):
        a = adiabatic_spectrum(op, s)
        b = adiabatic_spectrum(sparse_op, s)
        assert a == pytest.approx(b, abs=1e-8)


def test_interpolated_rejects_bad_s():
    op = as_operator(CollapsedPath.uniform(3, 1.0, m=1))
    with pytest.raises(InvalidParameter):
        interpolated(op, 1.5, 1.0)


def test_sweep_csv():
    sweep = adiabatic_sweep(CollapsedPath.uniform(4, 2.0, m=2), 5)
    buf = io.StringIO()
    sweep.write_csv(buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "s,lambda1,lambda2,gap" and len(rows) == 6


# --- decoration norm and perturbation rule ---------------------------------


@pytest.mark.parametrize("m,depths", [(2, (1,)), (3, (1,)), (2, (2,))])
def test_decoration_norm_bound(m, depths):
    p = BuildParams(m=m, k=1, ell=5, rounds=len(depths), depth_override=depths, expander_threshold=math.inf, seed=3)
    g, layout = build_instance(p)
    norm = decoration_norm(g, layout)
    # independent route: singular values of the full decoration-edge matrix
    dec = layout.kind == 4
    keep = dec[g.edge_u] | dec[g.edge_v]
    sub = MultiGraph(g.vertex_count, g.edge_u[keep], g.edge_v[keep]).to_dense()
    assert norm == pytest.approx(np.abs(np.linalg.eigvalsh(sub)).max(), rel=1e-9)
    assert norm <= 2 * math.sqrt(5 * m)


def test_perturbation_rule_holds_where_certified():
    p = BuildParams(m=2, k=1, ell=5, rounds=1, trees_per_round=1, depth_override=(1,), expander_threshold=math.inf, seed=2)
    g, layout = build_instance(p)
    dec = layout.kind == 4
    keep = ~(dec[g.edge_u] | dec[g.edge_v])
    base = MultiGraph(g.vertex_count, g.edge_u[keep], g.edge_v[keep])
    grid = np.linspace(-1, 1, 81)
    base_sweep = adiabatic_sweep((base, layout), grid)
    full_sweep = adiabatic_sweep((g, layout), grid)
    cert = certify_decorated_gap(base_sweep, decoration_norm(g, layout))
    assert cert.certified.any()
    ok = cert.certified
    assert np.all(full_sweep.gap[ok] >= cert.gamma0[ok] - 1e-9)
