"""Personalized federated training loop.

Each client keeps its data, codes, classifier and the local block of its
dictionary to itself.  The only thing a client hands to the :class:`Server`
is the global block ``D[:, :g]`` together with its sample count.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .alignment import AlignmentRecord, global_alignment
from .dl_core import (
    ClassifierWeights,
    Hyperparams,
    normalize_columns,
    objective_site,
    pretrain_local,
    supervised_dictionary_step,
    update_classifier,
    update_codes_supervised,
)
from .errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class ClientState:
    site_id: int
    X: np.ndarray
    Y: np.ndarray
    D: np.ndarray
    S: np.ndarray
    clf: ClassifierWeights
    g: int
    rng: np.random.Generator | None = field(default=None, repr=False, compare=False)
    warnings: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        n = self.X.shape[1]
        if self.S.shape[1] != n or self.Y.shape[0] != n:
            raise ShapeError(f"site {self.site_id}: X has {n} samples, S {self.S.shape[1]}, Y {self.Y.shape[0]}")
        if self.D.shape != (self.X.shape[0], self.S.shape[0]):
            raise ShapeError(f"site {self.site_id}: dictionary {self.D.shape} inconsistent with X {self.X.shape}, S {self.S.shape}")
        if not 0 <= self.g <= self.D.shape[1]:
            raise ShapeError(f"site {self.site_id}: g={self.g} outside [0, {self.D.shape[1]}]")

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def global_block(self) -> np.ndarray:
        return self.D[:, : self.g]

    def copy(self) -> "ClientState":
        return replace(self, D=self.D.copy(), S=self.S.copy(), clf=self.clf.copy(), warnings=list(self.warnings))

    def objective(self, hyper: Hyperparams) -> float:
        return objective_site(self.X, self.Y, self.D, self.S, self.clf, hyper)


@dataclass
class Upload:
    """One message crossing the client/server boundary."""

    round: int
    site_id: int
    global_block: np.ndarray
    n: int


class Server:
    """In-process aggregation server.

    Every upload is recorded verbatim in ``received`` so tests can audit
    exactly what crossed the boundary.
    """

    def __init__(self, g: int):
        self.g = g
        self.round = 0
        self.D_avg = None
        self.received: list[Upload] = []
        self._pending: list[Upload] = []

    def receive(self, site_id: int, global_block: np.ndarray, n: int) -> None:
        if global_block.shape[1] != self.g:
            raise ShapeError(f"site {site_id} uploaded {global_block.shape[1]} global atoms, expected {self.g}")
        msg = Upload(self.round, site_id, np.array(global_block, copy=True), int(n))
        self.received.append(msg)
        self._pending.append(msg)

    def aggregate(self) -> np.ndarray:
        msgs = sorted(self._pending, key=lambda m: m.site_id)
        self.D_avg = aggregate_global([m.global_block for m in msgs], [m.n for m in msgs])
        self._pending = []
        self.round += 1
        return self.D_avg.copy()


def aggregate_global(parts, sizes) -> np.ndarray:
    """Sample-count weighted mean ``sum_i n_i / sum_j n_j * parts[i]``."""
    if len(parts) == 0:
        raise ConfigurationError("cannot aggregate an empty list of parts")
    if len(parts) != len(sizes):
        raise ShapeError(f"{len(parts)} parts but {len(sizes)} sizes")
    shape = np.shape(parts[0])
    for i, p in enumerate(parts):
        if np.shape(p) != shape:
            raise ShapeError(f"part {i} has shape {np.shape(p)}, expected {shape}")
    sizes = np.asarray(sizes, dtype=float)
    if np.any(sizes <= 0):
        raise ConfigurationError("sample counts must be positive")
    weights = sizes / sizes.sum()
    # offsets from the first part keep identical parts an exact fixed point
    # even when the rounded weights do not sum to exactly one
    base = np.asarray(parts[0], dtype=float)
    out = base.copy()
    for wt, p in zip(weights[1:], parts[1:]):
        out += wt * (np.asarray(p, dtype=float) - base)
    return out


def aggregation_weights(sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    return sizes / sizes.sum()


def broadcast_merge(state: ClientState, D_avg) -> ClientState:
    """Replace the global block of ``state.D`` with ``D_avg``."""
    D_avg = np.asarray(D_avg, dtype=float)
    if D_avg.ndim != 2 or D_avg.shape != (state.D.shape[0], state.g):
        raise ShapeError(f"site {state.site_id}: D_avg {D_avg.shape} does not fit global block ({state.D.shape[0]}, {state.g})")
    D = state.D.copy()
    D[:, : state.g] = D_avg
    return replace(state, D=D)


def client_local_round(state: ClientState, hyper: Hyperparams) -> ClientState:
    """``iters_local`` passes of classifier, code, dictionary updates then normalization."""
    clf, S, D = state.clf, state.S, state.D
    warnings = list(state.warnings)
    for _ in range(hyper.iters_local):
        clf = update_classifier(clf, state.Y, S, hyper.eta, hyper.lambda3)
        S = update_codes_supervised(S, D, state.X, state.Y, clf, hyper)
        D = normalize_columns(supervised_dictionary_step(D, S, state.X, hyper), state.rng, warnings)
    return replace(state, D=D, S=S, clf=clf, warnings=warnings)


@dataclass
class RoundReport:
    round: int
    objective_before: list
    objective_local: list
    objective_after: list
    drift: float
    seconds: float = field(default=0.0, compare=False)

    def to_dict(self, with_time: bool = False) -> dict:
        out = {
            "round": self.round,
            "objective_before": self.objective_before,
            "objective_local": self.objective_local,
            "objective_after": self.objective_after,
            "global_drift": self.drift,
        }
        if with_time:
            out["seconds"] = self.seconds
        return out


@dataclass
class FederationResult:
    clients: list
    record: AlignmentRecord
    rounds: list
    server: Server
    pretrained: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _site_generators(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def run_pfeddl(sites, hyper: Hyperparams, threads: int = 1, server: Server | None = None) -> FederationResult:
    """Train PFedDL on ``sites``, a list of ``(X_i, Y_i)`` pairs.

    Pretrains every site, aligns the pretrained dictionaries once, then runs
    ``iters_fed`` rounds of local training, aggregation of the global blocks
    and broadcast.  ``threads > 1`` runs clients of a round concurrently.
    """
    if not sites:
        raise ConfigurationError("need at least one site")
    dims = [np.shape(X)[0] for X, _ in sites]
    if len(set(dims)) != 1:
        raise ConfigurationError(f"sites disagree on feature dimension: {dims}")
    rngs = _site_generators(hyper.seed, len(sites))
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def pmap(fn, items):
        return list(pool.map(fn, items)) if pool else [fn(x) for x in items]

    try:
        def pretrain(i):
            X = np.asarray(sites[i][0], dtype=float)
            warns = []
            D, S = pretrain_local(X, hyper, rngs[i], warnings=warns)
            return D, S, warns

        pre = pmap(pretrain, range(len(sites)))
        pretrained = [(D, S) for D, S, _ in pre]
        dicts, codes, _, record = global_alignment([p[0] for p in pretrained], [p[1] for p in pretrained])
        clients = []
        for i, (X, Y) in enumerate(sites):
            clients.append(
                ClientState(
                    site_id=i,
                    X=np.asarray(X, dtype=float),
                    Y=np.asarray(Y, dtype=np.int64),
                    D=dicts[i],
                    S=codes[i],
                    clf=ClassifierWeights.zeros(hyper.k),
                    g=hyper.g,
                    rng=rngs[i],
                    warnings=list(pre[i][2]),
                )
            )
        server = server or Server(hyper.g)
        rounds = []
        # drift of round 1 is measured from the aligned pretrained global blocks
        prev_avg = aggregate_global([c.global_block for c in clients], [c.n for c in clients])
        for t in range(hyper.iters_fed):
            start = time.perf_counter()
            before = [c.objective(hyper) for c in clients]
            clients = pmap(lambda c: client_local_round(c, hyper), clients)
            local = [c.objective(hyper) for c in clients]
            for c in clients:
                server.receive(c.site_id, c.global_block, c.n)
            D_avg = server.aggregate()
            clients = [broadcast_merge(c, D_avg) for c in clients]
            after = [c.objective(hyper) for c in clients]
            drift = float(np.linalg.norm(D_avg - prev_avg))
            prev_avg = D_avg
            rounds.append(RoundReport(t + 1, before, local, after, drift, time.perf_counter() - start))
            logger.debug("round %d objective %s", t + 1, after)
    finally:
        if pool:
            pool.shutdown()
    warnings = [f"site {c.site_id}: {w}" for c in clients for w in c.warnings]
    return FederationResult(clients, record, rounds, server, pretrained, warnings)
