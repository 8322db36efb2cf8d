"""Shared fixtures: tiny graphs, synthetic homophilous datasets, dataset files."""

import os
from pathlib import Path

import numpy as np
import pytest

from p2pgnn import Graph, NodeData, Splits, save_dataset


@pytest.fixture
def path3():
    """Path graph 0 - 1 - 2."""
    return Graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def star4():
    """Star with center 0 and leaves 1..3."""
    return Graph(4, [(0, 1), (0, 2), (0, 3)])


def random_connected_graph(n, extra_edges, rng):
    """Random spanning tree plus extra random edges; always connected."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    tries = 0
    while extra_edges > 0 and tries < 50 * extra_edges:
        u, v = (int(x) for x in rng.integers(0, n, 2))
        tries += 1
        if u == v:
            continue
        edges.append((u, v))
        extra_edges -= 1
    return Graph(n, edges)


def random_prediction_table(n, c, rng):
    """Rows on the probability simplex."""
    return rng.dirichlet(np.ones(c), size=n)


def make_planted_dataset(
    seed=0,
    n_per_class=40,
    n_classes=3,
    n_features=6,
    p_in=0.08,
    p_out=0.004,
    noise=2.0,
    train_per_class=4,
    n_valid=24,
):
    """Homophilous planted-community dataset: communities define classes,
    features are noisy class centroids, and a ring keeps the graph connected."""
    rng = np.random.default_rng(seed)
    n = n_per_class * n_classes
    y = np.repeat(np.arange(n_classes), n_per_class)

    edges = set((u, (u + 1) % n) for u in range(n))
    for u in range(n):
        for v in range(u + 1, n):
            p = p_in if y[u] == y[v] else p_out
            if rng.random() < p:
                edges.add((u, v))
    graph = Graph(n, [(u, v) for u, v in edges if u != v])

    centers = rng.normal(0.0, 1.0, size=(n_classes, n_features)) * 1.5
    features = centers[y] + noise * rng.normal(size=(n, n_features))
    labels = np.zeros((n, n_classes))
    labels[np.arange(n), y] = 1.0

    train = []
    for c in range(n_classes):
        members = np.flatnonzero(y == c)
        train.extend(rng.choice(members, size=train_per_class, replace=False))
    train = set(int(u) for u in train)
    rest = np.array(sorted(set(range(n)) - train))
    rng.shuffle(rest)
    valid = set(int(u) for u in rest[:n_valid])
    test = set(int(u) for u in rest[n_valid:])

    data = NodeData(features=features, labels=labels)
    splits = Splits(train=train, valid=valid, test=test)
    return graph, data, splits


@pytest.fixture
def planted():
    return make_planted_dataset(seed=11)


@pytest.fixture
def planted_files(tmp_path):
    """Planted dataset written out as the three TSVs."""
    graph, data, splits = make_planted_dataset(seed=11)
    nodes = tmp_path / "nodes.tsv"
    edges = tmp_path / "edges.tsv"
    spl = tmp_path / "splits.tsv"
    save_dataset(graph, data, splits, nodes, edges, spl)
    return {
        "nodes": nodes,
        "edges": edges,
        "splits": spl,
        "graph": graph,
        "data": data,
        "splits_obj": splits,
    }


def convergence_instance(seed, n=100, c=4, n_train=12):
    """Connected random graph, stationary random base predictions, random
    one-hot labels on a small training set, plus the centralized reference.

    Edge rates are drawn from [0.02, 0.1], bounded away from zero, so the
    slowest edge still fires regularly."""
    from p2pgnn import DiffusionParams, fdiff_scale

    rng = np.random.default_rng(seed)
    graph = random_connected_graph(n, 60, rng)
    base = random_prediction_table(n, c, rng)
    train = set(int(u) for u in rng.choice(n, n_train, replace=False))
    labels = np.zeros((n, c))
    for u in sorted(train):
        labels[u, rng.integers(0, c)] = 1.0
    reference = fdiff_scale(graph, base, labels, train, DiffusionParams(beta=0.9, s=1.0))
    targets = np.zeros((n, c))
    for u in sorted(train):
        targets[u] = labels[u]
    probs = rng.uniform(0.02, 0.1, graph.n_edges)
    return graph, base, targets, reference, probs


def simulate_distance_series(seed, rate_scale=1.0, max_steps=2000, every=10, stop_at=None):
    """L-infinity distance between device predictions and the centralized
    reference, sampled at checkpoints of one simulated repetition."""
    from p2pgnn import CommunicationSchedule, DeviceState, Simulation

    graph, base, targets, reference, probs = convergence_instance(seed)
    schedule = CommunicationSchedule(graph.edges, probs, 0.1).scaled(rate_scale)
    devices = [DeviceState(u, base.shape[1], beta=0.9, s=1.0) for u in range(graph.n_nodes)]
    for u in range(graph.n_nodes):
        devices[u].initialize(base[u], targets[u])
    sim = Simulation(
        graph, schedule, devices,
        activation_rng=np.random.default_rng(seed + 1),
        conflict_rng=np.random.default_rng(seed + 2),
    )

    def distance():
        preds = np.vstack([d.prediction for d in devices])
        return float(np.max(np.abs(preds - reference)))

    series = [(0, distance())]
    for t in range(1, max_steps + 1):
        sim.step(t)
        if t % every == 0:
            d = distance()
            series.append((t, d))
            if stop_at is not None and d <= stop_at:
                break
    return series


def dataset_dir(name):
    """Real-dataset lookup for the table-reproduction tests.

    Looks under $P2PGNN_DATA_DIR/<name>/ (or ./data/<name>/) for the
    nodes/edges/splits TSVs produced by `python -m p2pgnn.convert`.
    """
    root = Path(os.environ.get("P2PGNN_DATA_DIR", "data"))
    d = root / name
    if all((d / f).exists() for f in ("nodes.tsv", "edges.tsv", "splits.tsv")):
        return d
    return None


def require_dataset(name):
    d = dataset_dir(name)
    if d is None:
        pytest.skip(
            f"{name} dataset not available: place nodes/edges/splits TSVs under "
            f"$P2PGNN_DATA_DIR/{name}/ (see README, `python -m p2pgnn.convert`)"
        )
    return d
