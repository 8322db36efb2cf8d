"""Centralized reference diffusion: constrained personalized PageRank and the
two-stage error/prediction smoother that the peer-to-peer runtime approximates.

Everything here is a pure function over immutable inputs; the decentralized
equivalence tests treat these results as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .graph import Graph, diffusion_matrix


class ConvergenceError(Exception):
    """Power iteration failed to reach tolerance within the iteration budget."""

    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class DiffusionParams:
    """Hyperparameters of the diffusion scheme.

    ``beta`` is the propagation weight (restart probability 1 - beta) and
    ``s`` the error trade-off scale. ``a``, ``d`` and ``gamma`` select one
    of the two sub-operations; both default to the prediction-smoothing
    setting (a = gamma = beta, symmetric normalization d = 0.5).
    """

    beta: float = 0.9
    s: float = 1.0
    a: float = None
    d: float = 0.5
    gamma: float = None

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.a is None:
            object.__setattr__(self, "a", self.beta)
        if self.gamma is None:
            object.__setattr__(self, "gamma", self.beta)
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("a must lie in [0, 1]")
        if self.d not in (0.0, 0.5):
            raise ValueError("d must be 0 or 0.5")
        if self.a == 1.0 and self.d != 0.0:
            raise ValueError("a = 1 requires d = 0")


@dataclass
class PPRResult:
    """Fixed-point estimate plus convergence diagnostics."""

    table: np.ndarray
    iterations: int
    residual: float
    converged: bool
    residual_history: list = field(default_factory=list, repr=False)


def personalization_scale(beta: float, gamma: float, train, n: int) -> np.ndarray:
    """Diagonal personalization weights: 1 on training nodes, (1-gamma)/(1-beta) elsewhere."""
    if beta >= 1.0:
        raise ValueError("beta must be < 1")
    diag = np.full(n, (1.0 - gamma) / (1.0 - beta))
    idx = np.fromiter((int(u) for u in train), dtype=np.int64, count=len(train))
    diag[idx] = 1.0
    return diag


def constrained_ppr(
    graph: Graph,
    pi0: np.ndarray,
    params: DiffusionParams,
    train=frozenset(),
    clamp_train: bool = False,
    tol: float = 1e-9,
    max_iters: int = 10000,
) -> PPRResult:
    """Iterate pi <- a * W pi + (1 - a) * P_gamma pi0 to its fixed point.

    With ``clamp_train`` (always on when a = 1, where the restart term
    vanishes and training nodes act as the absorbing source), training rows
    are restored to their personalization after every iteration. Stops when
    the successive L-infinity change drops below ``tol``; a non-converged
    run is reported as such, never returned silently.
    """
    pi0 = np.asarray(pi0, dtype=np.float64)
    if pi0.ndim != 2 or pi0.shape[0] != graph.n_nodes:
        raise ValueError(f"pi0 must be ({graph.n_nodes}, C), got {pi0.shape}")
    if not np.all(np.isfinite(pi0)):
        raise ValueError("pi0 must be finite")

    pers = personalization_scale(params.beta, params.gamma, train, graph.n_nodes)[:, None] * pi0
    w = diffusion_matrix(graph, params.d)
    a = params.a
    clamp = clamp_train or a == 1.0
    train_idx = np.fromiter((int(u) for u in train), dtype=np.int64, count=len(train))

    pi = pers.copy()
    history = []
    residual = np.inf
    for it in range(1, max_iters + 1):
        nxt = a * (w @ pi)
        if a < 1.0:
            nxt += (1.0 - a) * pers
        if clamp and len(train_idx):
            nxt[train_idx] = pers[train_idx]
        residual = float(np.max(np.abs(nxt - pi))) if nxt.size else 0.0
        history.append(residual)
        pi = nxt
        if residual < tol:
            return PPRResult(pi, it, residual, True, history)
    return PPRResult(pi, max_iters, residual, False, history)


def fdiff_scale(
    graph: Graph,
    base: np.ndarray,
    labels: np.ndarray,
    train,
    params: DiffusionParams = DiffusionParams(),
    tol: float = 1e-9,
    max_iters: int = 10000,
    clamp_smoothing: bool = False,
) -> np.ndarray:
    """Error-corrected prediction smoothing over the graph.

    Training errors (label minus base prediction) are spread through the
    graph with the absorbing a = 1, d = 0 scheme, folded into the base
    predictions of non-training nodes at scale ``s``, and the combined
    table is smoothed with personalized PageRank (a = beta, d = 0.5).
    Training rows keep their base predictions in the combination step;
    ``clamp_smoothing`` additionally pins them during the final smoothing.
    """
    base = np.asarray(base, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if base.shape != labels.shape or base.ndim != 2 or base.shape[0] != graph.n_nodes:
        raise ValueError("base and labels must both be (n_nodes, C)")
    train_idx = np.fromiter((int(u) for u in train), dtype=np.int64, count=len(train))

    err0 = np.zeros_like(base)
    if len(train_idx):
        err0[train_idx] = labels[train_idx] - base[train_idx]
    spread = constrained_ppr(
        graph,
        err0,
        replace(params, a=1.0, d=0.0, gamma=1.0),
        train,
        clamp_train=True,
        tol=tol,
        max_iters=max_iters,
    )
    if not spread.converged:
        raise ConvergenceError(
            f"error diffusion did not converge (residual {spread.residual:g} "
            f"after {spread.iterations} iterations)",
            residual=spread.residual,
            iterations=spread.iterations,
        )

    combined = base + params.s * spread.table
    if len(train_idx):
        combined[train_idx] = base[train_idx]
    smoothed = constrained_ppr(
        graph,
        combined,
        replace(params, a=params.beta, d=0.5, gamma=params.beta),
        train,
        clamp_train=clamp_smoothing,
        tol=tol,
        max_iters=max_iters,
    )
    if not smoothed.converged:
        raise ConvergenceError(
            f"prediction smoothing did not converge (residual {smoothed.residual:g} "
            f"after {smoothed.iterations} iterations)",
            residual=smoothed.residual,
            iterations=smoothed.iterations,
        )
    return smoothed.table


def accuracy(pred: np.ndarray, labels: np.ndarray, subset) -> float:
    """Fraction of subset nodes whose argmax prediction matches the label argmax.

    Ties break toward the lowest class index on both sides.
    """
    if len(subset) == 0:
        raise ValueError("accuracy over an empty subset is undefined")
    idx = np.fromiter(sorted(int(u) for u in subset), dtype=np.int64)
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if np.any(np.all(labels[idx] == 0, axis=1)):
        raise ValueError("every subset node must have a nonzero label row")
    return float(np.mean(np.argmax(pred[idx], axis=1) == np.argmax(labels[idx], axis=1)))


def save_predictions(table: np.ndarray, path):
    """Write a per-node prediction table as `<node_id>\\t<c_1>,...,<c_C>` rows."""
    table = np.asarray(table)
    with open(path, "w", encoding="utf-8") as fh:
        for nid in range(table.shape[0]):
            fh.write(f"{nid}\t" + ",".join(format(x, ".17g") for x in table[nid]) + "\n")


def load_predictions(path) -> np.ndarray:
    rows = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                sid, svals = line.split("\t")
                rows[int(sid)] = np.fromiter(
                    (float(x) for x in svals.split(",")), dtype=np.float64
                )
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed prediction row") from None
    if set(rows) != set(range(len(rows))):
        raise ValueError(f"{path}: prediction rows must cover node ids 0..{len(rows) - 1}")
    return np.vstack([rows[i] for i in range(len(rows))])
