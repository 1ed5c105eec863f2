import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heterorobust.errors import InfeasibleSpec
from heterorobust.graph import edge_homophily, local_homophily
from heterorobust.synth import SynthSpec, regular_homophily_graph, signal_features, stylized_graph


def per_node_class_counts(g):
    A = g.adjacency
    out = np.zeros((g.n, g.num_classes), dtype=int)
    for v in range(g.n):
        out[v] = np.bincount(g.labels[A.neighbors(v)], minlength=g.num_classes)
    return out


@pytest.mark.parametrize("n,d,h,k", [(60, 6, 2 / 3, 3), (40, 4, 0.5, 2), (90, 8, 0.25, 3), (50, 5, 0.2, 5)])
def test_exact_mix_structure(n, d, h, k):
    g = regular_homophily_graph(SynthSpec(n, d, h, k, seed=3))
    assert np.all(g.adjacency.degrees == d)
    assert np.all(np.bincount(g.labels) == n // k)
    counts = per_node_class_counts(g)
    d_in = round(h * d)
    c = (d - d_in) // (k - 1)
    for v in range(g.n):
        row = counts[v]
        assert row[g.labels[v]] == d_in
        assert all(row[j] == c for j in range(k) if j != g.labels[v])
    assert edge_homophily(g).edge_homophily == pytest.approx(d_in / d)


def test_total_mix_for_uneven_split():
    spec = SynthSpec(500, 10, 0.8, 5, p=0.7, seed=0, class_mix="total")
    g = stylized_graph(spec)
    assert np.all(g.adjacency.degrees == 10)
    assert edge_homophily(g).edge_homophily == pytest.approx(0.8)
    assert all(local_homophily(g, v) == pytest.approx(0.8) for v in range(0, 500, 37))
    with pytest.raises(InfeasibleSpec):
        SynthSpec(500, 10, 0.8, 5).validate()


@pytest.mark.parametrize("spec", [
    SynthSpec(7, 3, 0.5, 5),          # unbalanced
    SynthSpec(60, 6, 0.5, 3),         # cross degree 3 not divisible by 2
    SynthSpec(10, 8, 1.0, 2),         # intra degree > class size - 1
    SynthSpec(18, 3, 1.0, 2),         # odd stub count 9 * 3
    SynthSpec(20, 4, 1.5, 2),
    SynthSpec(20, 4, 0.5, 2, p=0.0),
    SynthSpec(20, 4, 0.5, 1),
    SynthSpec(20, 4, 0.5, 2, class_mix="weird"),
])
def test_infeasible_specs(spec):
    with pytest.raises(InfeasibleSpec):
        spec.validate()
    with pytest.raises(InfeasibleSpec):
        regular_homophily_graph(spec)


def test_seed_determinism():
    a = stylized_graph(SynthSpec(60, 6, 2 / 3, 3, p=0.5, seed=11))
    b = stylized_graph(SynthSpec(60, 6, 2 / 3, 3, p=0.5, seed=11))
    c = stylized_graph(SynthSpec(60, 6, 2 / 3, 3, p=0.5, seed=12))
    assert a.adjacency == b.adjacency and np.array_equal(a.labels, b.labels)
    assert not (a.adjacency == c.adjacency and np.array_equal(a.labels, c.labels))


@given(st.integers(2, 7), st.floats(0.01, 1.0), st.integers(1, 30))
@settings(max_examples=50)
def test_signal_features_rows(k, p, n):
    labels = np.arange(n) % k
    X = signal_features(labels, k, p)
    assert np.allclose(X.sum(axis=1), 1.0)
    assert np.allclose(X[np.arange(n), labels], p + (1 - p) / k)
    assert np.all(np.argmax(X, axis=1) == labels)


def test_signal_features_example():
    X = signal_features([1], 2, 0.5)
    assert np.allclose(X, [[0.25, 0.75]])
    with pytest.raises(ValueError):
        signal_features([0], 2, 0.0)


def test_meta_records_realized_values():
    g = stylized_graph(SynthSpec(60, 6, 2 / 3, 3, p=0.5, seed=0))
    assert g.meta["realized_homophily"] == pytest.approx(2 / 3)
    assert g.meta["intra_degree"] == 4
    assert g.meta["p"] == 0.5
