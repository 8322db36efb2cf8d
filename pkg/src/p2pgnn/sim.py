"""Discrete-time peer-to-peer simulation.

Each time step samples active edges from fixed per-edge probabilities,
resolves conflicts so no node communicates twice in the same step, and runs
the send/receive/acknowledge exchange (plus gossip training, when enabled)
on the surviving edges. Every repetition is a deterministic single-threaded
run seeded from its own child seed, so repetitions can execute in parallel.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from . import learn, oracle
from .graph import Graph, load_dataset
from .p2p import DeviceState, decode_message, encode_message


@dataclass(frozen=True)
class CommunicationSchedule:
    """Fixed per-edge communication probabilities, drawn once at setup."""

    edges: tuple
    probs: np.ndarray
    sigma_max: float

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if len(probs) != len(self.edges):
            raise ValueError("one probability per edge required")
        if not 0.0 < self.sigma_max < 1.0:
            raise ValueError("sigma_max must lie in (0, 1)")
        if len(probs) and (probs.min() < 0.0 or probs.max() > self.sigma_max):
            raise ValueError("edge probabilities must lie in [0, sigma_max]")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))

    @property
    def p_com(self) -> float:
        """Minimum per-edge rate; the worst-case convergence bottleneck."""
        return float(self.probs.min()) if len(self.probs) else 0.0

    def scaled(self, factor: float) -> "CommunicationSchedule":
        """Same draws, uniformly rescaled rates (for paired rate experiments)."""
        if not 0.0 < factor <= 1.0:
            raise ValueError("factor must lie in (0, 1]")
        return CommunicationSchedule(self.edges, self.probs * factor, self.sigma_max * factor)


def build_schedule(graph: Graph, sigma_max: float = 0.1, seed=None) -> CommunicationSchedule:
    """One iid Uniform[0, sigma_max] probability per undirected edge."""
    rng = np.random.default_rng(seed)
    probs = rng.uniform(0.0, sigma_max, size=graph.n_edges)
    return CommunicationSchedule(graph.edges, probs, sigma_max)


class GossipTrainer:
    """Co-executes gossip averaging of base classifiers on surviving edges."""

    def __init__(self, models, devices, features, rng):
        self.models = models  # node id -> learn.LocalModel
        self.devices = devices
        self.features = features
        self.rng = rng
        any_model = next(iter(models.values()))
        self.payload_nbytes = learn.params_nbytes(any_model.params)

    def exchange(self, u: int, v: int) -> int:
        mu = replace(self.models[u], rng=self.rng)
        mv = replace(self.models[v], rng=self.rng)
        mu, mv = learn.gossip_pair_update(mu, mv)
        self.models[u], self.models[v] = mu, mv
        self.devices[u].update(learn.forward(mu.params, self.features[u]))
        self.devices[v].update(learn.forward(mv.params, self.features[v]))
        return 2 * self.payload_nbytes

    def base_table(self) -> np.ndarray:
        return np.vstack(
            [learn.forward(self.models[u].params, self.features[u]) for u in sorted(self.models)]
        )


class Simulation:
    """One repetition's mutable state: devices, schedule, byte counters."""

    def __init__(self, graph: Graph, schedule: CommunicationSchedule, devices,
                 activation_rng, conflict_rng, gossip: GossipTrainer = None):
        self.graph = graph
        self.schedule = schedule
        self.devices = devices
        self.activation_rng = activation_rng
        self.conflict_rng = conflict_rng
        self.gossip = gossip
        self.bytes_diffusion = 0
        self.bytes_training = 0

    def step(self, t: int) -> list:
        """Run one time step; returns the executed (u, v) events in order.

        A fixed number of activation draws is consumed per step regardless of
        the schedule's rates, so rate-scaled paired runs stay draw-aligned.
        """
        draws = self.activation_rng.random(len(self.schedule.edges))
        active = np.flatnonzero(draws < self.schedule.probs)
        if len(active) == 0:
            return []
        order = self.conflict_rng.permutation(active)
        busy = set()
        events = []
        for edge_idx in order:
            u, v = self.schedule.edges[edge_idx]
            if u in busy or v in busy:
                continue
            busy.add(u)
            busy.add(v)
            if self.gossip is not None:
                self.bytes_training += self.gossip.exchange(u, v)
            wire = encode_message(self.devices[u].send(v))
            self.bytes_diffusion += len(wire)
            reply = self.devices[v].receive(u, decode_message(wire))
            wire_back = encode_message(reply)
            self.bytes_diffusion += len(wire_back)
            self.devices[u].acknowledge(v, decode_message(wire_back))
            events.append((u, v))
        return events


@dataclass
class ExperimentConfig:
    nodes_path: str
    edges_path: str
    splits_path: str
    classifier: str = "lr"       # label | lr | mlp
    mode: str = "pretrained"     # pretrained | gossip | labels
    beta: float = 0.9
    s: float = 1.0
    steps: int = 1000
    repetitions: int = 5
    sigma_max: float = 0.1
    seed: int = 0
    metrics_every: int = 10
    compare_oracle: bool = False
    params_path: str = None      # pretrained-mode handoff from the pretrain command
    rate_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("pretrained", "gossip", "labels"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "labels":
            self.classifier = "label"
        elif self.classifier == "label":
            raise ValueError("the label classifier only runs in labels mode")
        if self.classifier not in learn.KINDS:
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.metrics_every < 1:
            raise ValueError("metrics_every must be at least 1")


@dataclass
class MetricsRecord:
    repetition: int
    t: int
    test_accuracy: float
    linf_to_oracle: float  # None unless the oracle comparison is enabled
    bytes_diffusion: int
    bytes_training: int


@dataclass
class RunResult:
    records: list
    final_accuracies: list
    summary: dict
    base_accuracy: float = None
    oracle_accuracy: float = None


def _prediction_table(devices) -> np.ndarray:
    return np.vstack([devices[u].prediction for u in range(len(devices))])


def _device_targets(labels, known):
    targets = np.zeros_like(labels)
    idx = np.fromiter(sorted(known), dtype=np.int64, count=len(known))
    if len(idx):
        targets[idx] = labels[idx]
    return targets


def run(cfg: ExperimentConfig) -> RunResult:
    """Execute all repetitions of one experiment and aggregate metrics.

    Per repetition: derive a child seed, draw a fresh communication schedule,
    initialize devices for the configured mode, and run the step loop,
    recording metrics at t=0, every ``metrics_every`` steps, and at the end.
    The label sets known to diffusion are the train and valid splits combined.
    """
    graph, data, splits = load_dataset(cfg.nodes_path, cfg.edges_path, cfg.splits_path)
    known = frozenset(splits.train | splits.valid)
    targets = _device_targets(data.labels, known)
    diffusion = oracle.DiffusionParams(beta=cfg.beta, s=cfg.s)

    pretrained = None
    if cfg.mode == "pretrained":
        if cfg.params_path:
            pretrained = learn.load_params(cfg.params_path)
        else:
            pretrained = learn.pretrain(
                data, splits, cfg.classifier, learn.TrainConfig(rng_seed=cfg.seed)
            )

    if cfg.mode == "pretrained":
        base_table = learn.forward_all(pretrained, data.features)
    elif cfg.mode == "labels":
        base_table = targets.copy()
    else:
        base_table = None  # per-device, initialized inside each repetition

    oracle_table = None
    if cfg.compare_oracle and base_table is not None:
        oracle_table = oracle.fdiff_scale(graph, base_table, data.labels, known, diffusion)

    root = np.random.SeedSequence(cfg.seed)
    records = []
    finals = []
    for rep, rep_seed in enumerate(root.spawn(cfg.repetitions)):
        sched_seed, act_seed, perm_seed, model_seed = rep_seed.spawn(4)
        schedule = build_schedule(graph, cfg.sigma_max, sched_seed)
        if cfg.rate_scale != 1.0:
            schedule = schedule.scaled(cfg.rate_scale)

        gossip = None
        if cfg.mode == "gossip":
            model_rng = np.random.default_rng(model_seed)
            models = {}
            for u in range(graph.n_nodes):
                params = learn.init_params(cfg.classifier, data.n_features, data.n_classes, model_rng)
                models[u] = learn.LocalModel(
                    params=params,
                    opt=learn.init_adam(params),
                    x=data.features[u],
                    y=data.labels[u] if u in known else None,
                    cfg=learn.TrainConfig(rng_seed=0),
                )
            rep_base = np.vstack(
                [learn.forward(models[u].params, data.features[u]) for u in range(graph.n_nodes)]
            )
        else:
            rep_base = base_table

        devices = [DeviceState(u, data.n_classes, cfg.beta, cfg.s) for u in range(graph.n_nodes)]
        for u in range(graph.n_nodes):
            devices[u].initialize(rep_base[u], targets[u])
        if cfg.mode == "gossip":
            gossip = GossipTrainer(models, devices, data.features,
                                   np.random.default_rng(model_seed.spawn(1)[0]))

        sim = Simulation(
            graph, schedule, devices,
            activation_rng=np.random.default_rng(act_seed),
            conflict_rng=np.random.default_rng(perm_seed),
            gossip=gossip,
        )

        def record(t):
            preds = _prediction_table(devices)
            acc = oracle.accuracy(preds, data.labels, splits.test)
            linf = None
            if cfg.compare_oracle:
                ref = oracle_table
                if ref is None:  # gossip mode: oracle tracks the current base classifiers
                    ref = oracle.fdiff_scale(graph, gossip.base_table(), data.labels, known, diffusion)
                linf = float(np.max(np.abs(preds - ref)))
            records.append(
                MetricsRecord(rep, t, acc, linf, sim.bytes_diffusion, sim.bytes_training)
            )

        record(0)
        for t in range(1, cfg.steps + 1):
            sim.step(t)
            if t % cfg.metrics_every == 0 or t == cfg.steps:
                record(t)
        finals.append(records[-1].test_accuracy)

    result = RunResult(
        records=records,
        final_accuracies=finals,
        summary={
            "mode": cfg.mode,
            "classifier": cfg.classifier,
            "steps": cfg.steps,
            "repetitions": cfg.repetitions,
            "mean_final_accuracy": float(np.mean(finals)),
            "std_final_accuracy": float(np.std(finals)),
            "final_accuracies": [float(x) for x in finals],
        },
    )
    if base_table is not None:
        result.base_accuracy = oracle.accuracy(base_table, data.labels, splits.test)
        if oracle_table is not None:
            result.oracle_accuracy = oracle.accuracy(oracle_table, data.labels, splits.test)
    return result


METRICS_FIELDS = ("repetition", "t", "test_accuracy", "linf_to_oracle",
                  "bytes_diffusion", "bytes_training")


def metrics_to_csv(records) -> str:
    """Render metrics rows with round-trip-exact float formatting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_FIELDS)
    for r in records:
        writer.writerow([
            r.repetition,
            r.t,
            format(r.test_accuracy, ".17g"),
            "" if r.linf_to_oracle is None else format(r.linf_to_oracle, ".17g"),
            r.bytes_diffusion,
            r.bytes_training,
        ])
    return buf.getvalue()


def write_metrics_csv(records, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_to_csv(records))


def read_metrics_csv(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != METRICS_FIELDS:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        for row in reader:
            out.append(MetricsRecord(
                repetition=int(row["repetition"]),
                t=int(row["t"]),
                test_accuracy=float(row["test_accuracy"]),
                linf_to_oracle=float(row["linf_to_oracle"]) if row["linf_to_oracle"] else None,
                bytes_diffusion=int(row["bytes_diffusion"]),
                bytes_training=int(row["bytes_training"]),
            ))
    return out
