import numpy as np
import pytest
from hypothesis import settings

from heterorobust.graph import LabeledGraph, SparseAdjacency
from heterorobust.synth import SynthSpec, stylized_graph

# numba compiles lazily on first call; per-example wall-clock deadlines would flake
settings.register_profile("default", deadline=None)
settings.load_profile("default")


def random_graph(n, m, k, f, seed):
    """Connected-ish random graph: a ring plus random chords, random labels/features."""
    rng = np.random.default_rng(seed)
    edges = {(i, (i + 1) % n) if i < (i + 1) % n else ((i + 1) % n, i) for i in range(n)}
    while len(edges) < n + m:
        u, v = sorted(rng.choice(n, 2, replace=False).tolist())
        edges.add((u, v))
    labels = np.arange(n) % k
    rng.shuffle(labels)
    X = rng.normal(size=(n, f))
    return LabeledGraph(SparseAdjacency.from_edges(n, sorted(edges)), X, labels, k)


@pytest.fixture
def tiny_graph():
    return random_graph(10, 6, 3, 4, seed=3)


@pytest.fixture(scope="session")
def synth_small():
    return stylized_graph(SynthSpec(n=100, d=6, h=2 / 3, num_classes=2, p=0.7, seed=1))


@pytest.fixture(scope="session")
def synth_h08():
    return stylized_graph(SynthSpec(n=200, d=10, h=0.8, num_classes=5, p=0.7, seed=0, class_mix="total"))


def gradient_check(arch, seed=0, n=10, eps=1e-6, weight_decay=5e-4, hidden=5):
    """Worst per-parameter relative error of analytic vs central-difference gradients."""
    from heterorobust.defenses import SvdConfig, build_defended_model
    from heterorobust.models import ModelConfig, build_operators, init_params, loss_and_grads

    g = random_graph(n, 8, 3, 4, seed)
    if arch.endswith("+svd"):
        cfg = build_defended_model(ModelConfig(arch[:-4], hidden), SvdConfig(n))
    else:
        cfg = ModelConfig(arch, hidden, alpha=0.3 if arch == "alpha_mix" else None)
    ops = build_operators(cfg, g)
    params = init_params(cfg, g.features.shape[1], g.num_classes, seed)
    rng = np.random.default_rng(seed + 100)
    for k in params:  # nonzero biases so ReLU units are not all tied at the same kink
        params[k] = params[k] + 0.1 * rng.normal(size=params[k].shape)
    train = np.arange(0, n, 2)
    _, grads = loss_and_grads(params, cfg, ops, g.features, g.labels, train, weight_decay)
    worst = 0.0
    for name, w in params.items():
        num = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            lp, _ = loss_and_grads(params, cfg, ops, g.features, g.labels, train, weight_decay)
            w[idx] = old - eps
            lm, _ = loss_and_grads(params, cfg, ops, g.features, g.labels, train, weight_decay)
            w[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        err = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(grads[name]) + np.linalg.norm(num), 1e-12)
        worst = max(worst, err)
    return worst


ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Acceptance result line, echoed in the terminal summary."""
    ACCEPTANCE_LINES.append(f"{criterion} {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
