from fractions import Fraction as F

import numpy as np
import pytest

from heterorobust import _accel
from heterorobust.attacks import (Perturbation, _candidates, apply_perturbation, perturbation_stats,
                                  surrogate_loss_and_adj_grad, surrogate_target_loss, targeted_attack,
                                  untargeted_attack)
from heterorobust.errors import InvalidFlip
from heterorobust.graph import LabeledGraph, SparseAdjacency
from heterorobust.harness import make_splits
from heterorobust.kernels import score_flips_numba, score_flips_numpy, surrogate_state
from heterorobust.synth import SynthSpec, stylized_graph
from heterorobust.theory import (LinearSurrogate, TheoryParams, class_representatives, delta_loss_direct,
                                 fit_linear_surrogate, optimal_weights, stylized_spec)

from conftest import random_graph


def scored(g, v, mode, W):
    xw = np.ascontiguousarray(g.features @ W)
    A = g.adjacency
    s1, z1, deg, t = surrogate_state(A.indptr, A.indices, xw, v)
    a, u, s, io, inn = _candidates(A.indptr, A.indices, v, g.n, mode)
    args = (s1, z1, xw, deg, t, v, int(g.labels[v]), a, u, s, io, inn)
    return (a, u, s), score_flips_numpy(*args), score_flips_numba(*args)


@pytest.mark.parametrize("mode", ["direct_only", "with_influencers"])
def test_scorer_matches_brute_force(mode):
    g = random_graph(14, 12, 3, 5, 4)
    sur = fit_linear_surrogate(g, np.arange(14))
    v = 3
    (a, u, s), np_scores, nb_scores = scored(g, v, mode, sur.weights)
    assert np.array_equal(np_scores, nb_scores) or np.allclose(np_scores, nb_scores, atol=1e-14, rtol=0)
    base = surrogate_target_loss(g, sur, v)
    for i in range(a.size):
        lo, hi = sorted((int(a[i]), int(u[i])))
        g2 = apply_perturbation(g, Perturbation(((lo, hi, int(s[i])),)))
        assert np_scores[i] == pytest.approx(surrogate_target_loss(g2, sur, v) - base, abs=1e-12)


def test_candidate_sets():
    g = random_graph(10, 4, 2, 2, 0)
    A = g.adjacency
    a, u, s, _, _ = _candidates(A.indptr, A.indices, 0, g.n, "direct_only")
    assert np.all(a == 0) and sorted(u.tolist()) == list(range(1, 10))
    assert all((sg < 0) == A.has_edge(0, x) for x, sg in zip(u, s))
    a2, u2, _, _, _ = _candidates(A.indptr, A.indices, 0, g.n, "with_influencers")
    assert set(a2.tolist()) == {0} | set(A.neighbors(0).tolist())


def test_targeted_attack_prefers_heterophily(synth_h08):
    g = synth_h08
    splits = make_splits(g, seed=0)
    sur = fit_linear_surrogate(g, splits.train)
    for v in splits.test[:5]:
        P = targeted_attack(g, int(v), int(g.adjacency.degrees[v]), surrogate=sur)
        st = perturbation_stats(g, P, [int(v)])
        assert st.heterophily_increasing_fraction == 1.0
        assert st.h_t_after < st.h_t_before
        assert P.budget_used <= g.adjacency.degrees[v]


def test_targeted_loss_monotone_and_backends_agree(synth_h08):
    g = synth_h08
    sur = fit_linear_surrogate(g, make_splits(g, seed=1).train)
    prev = _accel.backend()
    try:
        _accel.set_backend("numpy")
        a = targeted_attack(g, 17, 6, "with_influencers", surrogate=sur)
        _accel.set_backend("numba")
        b = targeted_attack(g, 17, 6, "with_influencers", surrogate=sur)
    finally:
        _accel.set_backend(prev)
    assert a.flips == b.flips
    losses = [surrogate_target_loss(apply_perturbation(g, Perturbation(a.flips[:j])), sur, 17)
              for j in range(len(a.flips) + 1)]
    assert all(y >= x - 1e-12 for x, y in zip(losses, losses[1:]))


def test_budget_one_matches_closed_form_argmax():
    h, d, k = F(3, 4), 4, 2
    g = stylized_graph(stylized_spec(h, d, k, p=1.0, seed=0))
    W = optimal_weights(float(h), d, k, 1.0)
    sur = LinearSurrogate(W)
    types = {(d1, d2): delta_loss_direct(TheoryParams(h, d, k, delta1=d1, delta2=d2))
             for d1, d2 in ((-1, 0), (1, 0), (0, -1), (0, 1))}
    best = max(types.values())
    best_types = {t for t, val in types.items() if val == best}
    for v in class_representatives(g):
        P = targeted_attack(g, int(v), 1, surrogate=sur)
        (a, b, sign), = P.flips
        other = b if a == v else a
        same = g.labels[other] == g.labels[v]
        ptype = (sign, 0) if same else (0, sign)
        assert ptype in best_types


def test_targeted_errors(synth_small):
    with pytest.raises(ValueError):
        targeted_attack(synth_small, 0, 0, train_nodes=np.arange(20))
    with pytest.raises(ValueError):
        targeted_attack(synth_small, 0, 1)
    with pytest.raises(ValueError):
        targeted_attack(synth_small, 0, 1, mode="global", train_nodes=np.arange(20))


def test_targeted_never_isolates():
    # star: any removal at the center isolates a leaf
    A = SparseAdjacency.from_edges(5, [(0, i) for i in range(1, 5)])
    g = LabeledGraph(A, np.eye(5, 2), np.array([0, 0, 1, 1, 0]), 2)
    P = targeted_attack(g, 0, 3, surrogate=LinearSurrogate(np.eye(2)))
    for u, v, s in P.flips:
        assert s > 0


def test_adj_gradient_finite_differences():
    g = random_graph(9, 6, 3, 3, 2)
    A = g.adjacency.to_dense()
    W = np.random.default_rng(0).normal(size=(3, 3))
    nodes = np.arange(0, 9, 2)
    labels = g.labels[nodes]
    _, GA = surrogate_loss_and_adj_grad(A, g.features, W, nodes, labels)
    eps = 1e-6
    for i, j in [(0, 1), (2, 5), (4, 4), (8, 3)]:
        Ap, Am = A.copy(), A.copy()
        Ap[i, j] += eps
        Am[i, j] -= eps
        lp, _ = surrogate_loss_and_adj_grad(Ap, g.features, W, nodes, labels)
        lm, _ = surrogate_loss_and_adj_grad(Am, g.features, W, nodes, labels)
        assert (lp - lm) / (2 * eps) == pytest.approx(GA[i, j], rel=1e-6, abs=1e-10)


def test_untargeted_budget_and_profile(synth_h08):
    g = synth_h08
    tr = make_splits(g, seed=0).train
    assert untargeted_attack(g, tr, 0.0004).flips == ()  # rounds to 0 of 1000 edges
    P = untargeted_attack(g, tr, 0.02)
    assert P.budget_used == 20
    st = perturbation_stats(g, P)
    assert st.heterophily_increasing_fraction >= 0.85
    assert st.h_after < st.h_before
    with pytest.raises(ValueError):
        untargeted_attack(g, tr, 0.0)


# --- bookkeeping ---------------------------------------------------------------


def test_perturbation_normalizes_and_validates():
    P = Perturbation(((5, 2, 1), (0, 1, -1)))
    assert P.flips == ((2, 5, 1), (0, 1, -1))
    assert P.additions == [(2, 5)] and P.deletions == [(0, 1)]
    for bad in (((1, 1, 1),), ((0, 1, 2),), ((0, 1, 1), (1, 0, -1))):
        with pytest.raises(InvalidFlip):
            Perturbation(bad)


def test_apply_examples(tiny_graph):
    g = tiny_graph
    assert apply_perturbation(g, Perturbation()).adjacency == g.adjacency
    e = g.adjacency.edge_array()
    non = next((u, v) for u in range(g.n) for v in range(u + 1, g.n) if not g.adjacency.has_edge(u, v))
    P = Perturbation(((int(e[0, 0]), int(e[0, 1]), -1), (non[0], non[1], 1)))
    g2 = apply_perturbation(g, P)
    assert g2.adjacency.num_edges == g.adjacency.num_edges + 1 - 1
    back = apply_perturbation(g2, Perturbation(((non[0], non[1], -1), (int(e[0, 0]), int(e[0, 1]), 1))))
    assert back.adjacency == g.adjacency
    with pytest.raises(InvalidFlip):
        apply_perturbation(g, Perturbation(((int(e[0, 0]), int(e[0, 1]), 1),)))
    with pytest.raises(InvalidFlip):
        apply_perturbation(g, Perturbation(((non[0], non[1], -1),)))
    with pytest.raises(InvalidFlip):
        apply_perturbation(g, Perturbation(((0, 99, 1),)))


def test_stats_examples():
    A = SparseAdjacency.from_edges(4, [(0, 1), (2, 3)])
    g = LabeledGraph(A, np.zeros((4, 1)), np.array([0, 0, 1, 1]), 2)
    st = perturbation_stats(g, Perturbation(((0, 2, 1),)))
    assert st.additions_hetero_fraction == 1.0 and st.h_after < st.h_before
    st2 = perturbation_stats(g, Perturbation(((0, 2, 1), (0, 3, 1))))
    assert st2.additions_hetero_fraction == 1.0
    g3 = LabeledGraph(A, np.zeros((4, 1)), np.array([0, 0, 1, 0]), 2)
    st3 = perturbation_stats(g3, Perturbation(((0, 2, 1), (0, 3, 1))))
    assert st3.additions_hetero_fraction == 0.5
    assert st3.deletions_homo_fraction is None
    assert perturbation_stats(g, Perturbation()).heterophily_increasing_fraction is None
