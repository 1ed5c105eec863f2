import itertools

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from scipy.optimize import brentq, linprog
from scipy.stats import binom

from heterorobust.certify import (CertGrid, SmoothingScheme, brute_force_worst_case, certification_grid,
                                  certify_radius, certify_radius_multiclass, lower_confidence_bound,
                                  node_certificates, sample_masks, sample_smoothed_votes, sampled_graph,
                                  summarize_certification, upper_confidence_bound, worst_case_probability)
from heterorobust.harness import make_splits
from heterorobust.models import ModelConfig, TrainConfig, TrainedModel, init_params, model_forward, train

from conftest import random_graph

P_GRID = [i / 10 for i in range(10)]


def lp_worst_case(p_lower, p_plus, p_minus, r_a, r_d):
    """Neyman-Pearson worst case as an explicit LP over every joint bit outcome."""
    px, pt = [], []
    for bits in itertools.product((0, 1), repeat=r_a + r_d):
        a, b = 1.0, 1.0
        for j, on in enumerate(bits):
            if j < r_a:
                a *= p_plus if on else 1 - p_plus
                b *= 1 - p_minus if on else p_minus
            else:
                a *= 1 - p_minus if on else p_minus
                b *= p_plus if on else 1 - p_plus
        px.append(a)
        pt.append(b)
    res = linprog(c=pt, A_ub=[[-x for x in px]], b_ub=[-p_lower], bounds=[(0, 1)] * len(px), method="highs")
    assert res.status == 0
    return res.fun


# --- certificate math ------------------------------------------------------------


def test_single_bit_examples():
    s = SmoothingScheme(0.4, 0.4)
    assert worst_case_probability(1.0, 0.4, 0.4, 0, 1) == pytest.approx(1.0)
    assert certify_radius(1.0, s, 0, 1)
    assert worst_case_probability(0.6, 0.4, 0.4, 0, 1) == pytest.approx(0.4)
    assert not certify_radius(0.6, s, 0, 1)


@pytest.mark.parametrize("p", [0.3, 0.5, 0.50001, 0.9])
def test_zero_radius(p):
    assert certify_radius(p, SmoothingScheme(0.01, 0.3), 0, 0) == (p > 0.5)


@pytest.mark.parametrize("r_a,r_d", [(0, 1), (1, 0), (1, 1), (2, 1), (0, 3), (3, 2), (2, 4)])
@pytest.mark.parametrize("pp,pm", [(0.001, 0.4), (0.1, 0.2), (0.3, 0.0), (0.0, 0.5), (0.2, 0.7)])
@pytest.mark.parametrize("pl", [0.55, 0.8, 0.99])
def test_worst_case_matches_lp(r_a, r_d, pp, pm, pl):
    assert worst_case_probability(pl, pp, pm, r_a, r_d) == pytest.approx(lp_worst_case(pl, pp, pm, r_a, r_d),
                                                                         abs=1e-9)


@given(st.sampled_from(P_GRID), st.sampled_from(P_GRID), st.floats(0.0, 1.0), st.integers(0, 6), st.integers(0, 6))
@settings(max_examples=150)
@example(0.1, 0.0, 1.0, 4, 0)
def test_region_and_brute_force_agree(pp, pm, pl, r_a, r_d):
    a = worst_case_probability(pl, pp, pm, r_a, r_d)
    b = brute_force_worst_case(pl, pp, pm, r_a, r_d)
    # the partial fill divides a rounding-level remainder by the region's x mass,
    # so the error scales with the largest finite likelihood ratio
    ratios = [q / r for q, r in ((1 - pm, pp), (pp, 1 - pm), (1 - pp, pm), (pm, 1 - pp)) if r > 0]
    scale = max([1.0] + ratios) ** (r_a + r_d)
    assert a == pytest.approx(b, abs=1e-12 * scale)


@given(st.sampled_from(P_GRID[1:]), st.sampled_from(P_GRID[1:]), st.floats(0.5, 1.0), st.integers(0, 5),
       st.integers(0, 5))
@settings(max_examples=100)
def test_worst_case_monotone(pp, pm, pl, r_a, r_d):
    w = worst_case_probability(pl, pp, pm, r_a, r_d)
    assert w <= pl + 1e-12
    assert worst_case_probability(pl, pp, pm, r_a + 1, r_d) <= w + 1e-12
    assert worst_case_probability(pl, pp, pm, r_a, r_d + 1) <= w + 1e-12
    assert worst_case_probability(min(1.0, pl + 0.05), pp, pm, r_a, r_d) >= w - 1e-12


def test_paper_scheme_radii():
    s = SmoothingScheme(0.001, 0.4)
    cert = node_certificates(0.99954, s, 10, 10)
    assert cert[2, 0] and not cert[3, 0]
    assert cert[0, 7] and not cert[0, 8]


def test_degenerate_scheme_uncertifiable():
    s = SmoothingScheme(0.0, 0.0)
    assert certify_radius(0.999, s, 0, 0)
    assert not certify_radius(0.999, s, 1, 0) and not certify_radius(0.999, s, 0, 1)
    assert not certify_radius(0.999, SmoothingScheme(0.0, 0.4), 1, 0)


def test_multiclass_certificate():
    s = SmoothingScheme(0.001, 0.4)
    # a smaller runner-up bound can only help
    for ra, rd in [(0, 0), (1, 1), (0, 4), (2, 6)]:
        assert certify_radius_multiclass(0.7, 0.05, s, ra, rd) >= certify_radius_multiclass(0.7, 0.3, s, ra, rd)
    # binary-complement runner-up reduces to the binary rule
    for ra, rd in [(0, 1), (1, 0), (2, 3)]:
        assert certify_radius_multiclass(0.8, 0.2, s, ra, rd) == certify_radius(0.8, s, ra, rd)


# --- bounds -------------------------------------------------------------------------


def test_clopper_pearson_edges():
    assert lower_confidence_bound(0, 100, 0.01) == 0.0
    assert lower_confidence_bound(100, 100, 0.01) == pytest.approx(0.01 ** (1 / 100), rel=1e-12)
    assert upper_confidence_bound(100, 100, 0.01) == 1.0
    with pytest.raises(ValueError):
        lower_confidence_bound(5, 4, 0.01)
    with pytest.raises(ValueError):
        lower_confidence_bound(3, 4, 0.0)


@pytest.mark.parametrize("count,n", [(1, 10), (7, 10), (520, 1000), (9990, 10000)])
def test_clopper_pearson_matches_root_finding(count, n):
    a = 0.01
    root = brentq(lambda p: binom.sf(count - 1, n, p) - a, 1e-12, 1 - 1e-12, xtol=1e-15)
    assert lower_confidence_bound(count, n, a) == pytest.approx(root, abs=1e-10)
    up = brentq(lambda p: binom.cdf(count, n, p) - a, 1e-12, 1 - 1e-12, xtol=1e-15)
    assert upper_confidence_bound(count, n, a) == pytest.approx(up, abs=1e-10)


def test_bound_monotone_in_count():
    vals = [lower_confidence_bound(c, 50, 0.05) for c in range(51)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


# --- sampling ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_models():
    g = random_graph(30, 40, 3, 4, 8)
    out = {}
    for arch in ("gcn", "sage_separate", "alpha_mix", "h2gcn_style", "mlp"):
        cfg = ModelConfig(arch, 6, alpha=0.4 if arch == "alpha_mix" else None)
        out[arch] = TrainedModel(cfg, init_params(cfg, 4, 3, 3), 4, 3)
    from heterorobust.defenses import SvdConfig, build_defended_model
    cfg = build_defended_model(ModelConfig("gcn", 6), SvdConfig(25))
    out["gcn+svd"] = TrainedModel(cfg, init_params(cfg, 4, 3, 3), 4, 3)
    return g, out


@pytest.mark.parametrize("arch", ["gcn", "sage_separate", "alpha_mix"])
@pytest.mark.parametrize("scheme", [(0.001, 0.4), (0.1, 0.0), (0.0, 0.5), (0.3, 0.6)])
def test_numba_votes_match_reference(small_models, arch, scheme):
    g, models = small_models
    s = SmoothingScheme(*scheme)
    for v in (0, 7, 22):
        a = sample_smoothed_votes(models[arch], g, v, s, 300, seed=5, backend="numba").counts
        b = sample_smoothed_votes(models[arch], g, v, s, 300, seed=5, backend="numpy").counts
        assert np.array_equal(a, b)


def test_votes_follow_sampled_graphs(small_models):
    g, models = small_models
    s = SmoothingScheme(0.05, 0.3)
    m = models["gcn"]
    counts = np.zeros(3, dtype=int)
    for i in range(40):
        counts[np.argmax(model_forward(m, sampled_graph(g, 4, s, 9, i), allow_isolated=True)[4])] += 1
    assert np.array_equal(counts, sample_smoothed_votes(m, g, 4, s, 40, seed=9).counts)


@pytest.mark.parametrize("arch", ["gcn", "h2gcn_style", "gcn+svd"])
def test_split_ranges_reproduce(small_models, arch):
    g, models = small_models
    s = SmoothingScheme(0.01, 0.4)
    whole = sample_smoothed_votes(models[arch], g, 3, s, 100, seed=2).counts
    parts = sum(sample_smoothed_votes(models[arch], g, 3, s, c, seed=2, start=st).counts
                for st, c in ((0, 17), (17, 50), (67, 33)))
    assert np.array_equal(whole, parts)


@pytest.mark.parametrize("arch", ["gcn", "sage_separate", "h2gcn_style", "mlp", "gcn+svd"])
def test_identity_scheme(small_models, arch):
    g, models = small_models
    m = models[arch]
    pred = m.predict(g)
    for v in (1, 11):
        for backend in ("numba", "numpy"):
            c = sample_smoothed_votes(m, g, v, SmoothingScheme(0.0, 0.0), 50, backend=backend).counts
            assert c[pred[v]] == 50


def test_delete_everything_scheme(small_models):
    g, models = small_models
    m = models["sage_separate"]
    empty = g.with_adjacency(type(g.adjacency).from_edges(g.n, []))
    want = m.predict(empty, allow_isolated=True)
    for v in (0, 5):
        c = sample_smoothed_votes(m, g, v, SmoothingScheme(0.0, 1.0), 20).counts
        assert c[want[v]] == 20


def test_sample_masks_rates(small_models):
    g, _ = small_models
    s = SmoothingScheme(0.2, 0.3)
    dels = np.mean([sample_masks(g.adjacency, 0, s, 0, i)[0].mean() for i in range(400)])
    assert abs(dels - 0.3) < 0.02
    adds = [sample_masks(g.adjacency, 0, s, 0, i)[1] for i in range(400)]
    pool = g.n - 1 - g.adjacency.degrees[0]
    assert abs(np.mean([a.size for a in adds]) / pool - 0.2) < 0.03
    assert all(not g.adjacency.has_edge(0, int(u)) and u != 0 for a in adds for u in a)


def test_scheme_validation():
    with pytest.raises(ValueError):
        SmoothingScheme(-0.1, 0.2)
    with pytest.raises(ValueError):
        SmoothingScheme(0.1, 1.2)
    with pytest.raises(ValueError):
        SmoothingScheme(0.1, 0.2, flippable="all")


# --- grids and summaries ---------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(synth_h08):
    g = synth_h08
    s = make_splits(g, seed=0)
    return g, s, train(ModelConfig("sage_separate", 16), TrainConfig(100, 100, 0.2), g, s)


def test_grid_monotone(trained):
    g, s, m = trained
    grid = certification_grid(m, g, s.test[:15], SmoothingScheme(0.001, 0.4), n0=100, n1=2000, max_ra=4, max_rd=8)
    R = grid.R
    assert np.all(R[1:, :] <= R[:-1, :] + 1e-15) and np.all(R[:, 1:] <= R[:, :-1] + 1e-15)
    c = grid.certified
    assert np.all(c[:, 1:, :] <= c[:, :-1, :]) and np.all(c[:, :, 1:] <= c[:, :, :-1])
    summary = summarize_certification(grid)
    assert summary["AC"] == pytest.approx(R.sum() - R[0, 0])
    assert summary["rd_bar"] >= summary["ra_bar"]


def test_grid_identity_scheme(trained):
    g, s, m = trained
    nodes = s.test[:20]
    grid = certification_grid(m, g, nodes, SmoothingScheme(0.0, 0.0), n0=50, n1=500, max_ra=3, max_rd=3)
    acc = float(np.mean(m.predict(g)[nodes] == g.labels[nodes]))
    assert grid.R[0, 0] == pytest.approx(acc)
    R = grid.R.copy()
    R[0, 0] = 0
    assert not R.any()


def test_grid_multiclass_runs(trained):
    g, s, m = trained
    grid = certification_grid(m, g, s.test[:3], SmoothingScheme(0.001, 0.4), n0=50, n1=500, max_ra=2,
                              max_rd=2, multiclass=True)
    assert grid.meta["multiclass"] and grid.R.shape == (3, 3)


def _grid(R, correct):
    R = np.asarray(R, dtype=float)
    n = len(correct)
    cert = np.broadcast_to(R > 0, (n,) + R.shape).copy()
    return CertGrid(R, np.arange(n), np.zeros(n, int), np.asarray(correct), np.ones(n), cert)


def test_summary_examples():
    R = np.zeros((3, 3))
    R[0, 0] = 0.8
    assert summarize_certification(_grid(R, [True]))["AC"] == 0
    R = np.zeros((3, 3))
    R[0, 0] = R[1, 0] = R[0, 1] = 0.5
    out = summarize_certification(_grid(R, [True, False]))
    assert out["AC"] == pytest.approx(1.0)
    assert out["ra_bar"] == 1 and out["rd_bar"] == 1
    assert summarize_certification(_grid(np.zeros((2, 2)), [False]))["ra_bar"] is None
