"""Cross-site atom alignment by repeated shortest paths through a layered DAG.

Each site contributes one layer of nodes (its atoms).  Edges join every
surviving atom of site ``i`` to every surviving atom of site ``i + 1`` and
are weighted by the sign-insensitive mean squared error between the two
atoms.  Source and sink edges weigh nothing.  Each round picks the cheapest
source-to-sink path, which names one atom per site; those atoms become the
next aligned position and are removed from the graph.  After ``k`` rounds
every site's atoms are ordered (and sign-flipped) consistently.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidStateError, ShapeError


@dataclass(frozen=True)
class SignedPermutation:
    """A ``k x k`` matrix with exactly one ``+-1`` in every row and column.

    ``perm[r]`` is the source column placed at aligned position ``r`` and
    ``signs[r]`` the sign it is multiplied by, so ``(D P)[:, r] ==
    signs[r] * D[:, perm[r]]``.
    """

    perm: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.intp)
        signs = np.asarray(self.signs, dtype=np.int8)
        k = perm.shape[0]
        if perm.ndim != 1 or signs.shape != (k,):
            raise ShapeError(f"perm {perm.shape} and signs {signs.shape} must be equal-length vectors")
        if not np.array_equal(np.sort(perm), np.arange(k)):
            raise ShapeError("perm is not a bijection on 0..k-1")
        if not np.all(np.abs(signs) == 1):
            raise ShapeError("every sign must be +1 or -1")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "signs", signs)

    @property
    def k(self) -> int:
        return self.perm.shape[0]

    @classmethod
    def identity(cls, k: int) -> "SignedPermutation":
        return cls(np.arange(k), np.ones(k, dtype=np.int8))

    @classmethod
    def random(cls, k: int, rng: np.random.Generator) -> "SignedPermutation":
        return cls(rng.permutation(k), rng.choice(np.array([-1, 1], dtype=np.int8), size=k))

    def matrix(self) -> np.ndarray:
        P = np.zeros((self.k, self.k))
        P[self.perm, np.arange(self.k)] = self.signs
        return P

    def inverse(self) -> "SignedPermutation":
        inv = np.empty(self.k, dtype=np.intp)
        inv[self.perm] = np.arange(self.k)
        return SignedPermutation(inv, self.signs[inv])

    def compose(self, other: "SignedPermutation") -> "SignedPermutation":
        """Matrix product ``self @ other``."""
        return SignedPermutation(self.perm[other.perm], self.signs[other.perm] * other.signs)

    def apply_columns(self, D) -> np.ndarray:
        """``D @ P`` without forming ``P``."""
        return D[:, self.perm] * self.signs

    def apply_rows_transposed(self, S) -> np.ndarray:
        """``P.T @ S`` without forming ``P``."""
        return S[self.perm, :] * self.signs[:, None]

    def to_dict(self) -> dict:
        return {"perm": self.perm.tolist(), "signs": self.signs.tolist()}


def apply_signed_permutation(D, S, P: SignedPermutation):
    """Return ``(D P, P^T S)``; the product ``D S`` is unchanged."""
    D = np.asarray(D)
    S = np.asarray(S)
    if D.shape[1] != P.k or S.shape[0] != P.k:
        raise ShapeError(f"permutation of size {P.k} does not fit D{D.shape} and S{S.shape}")
    return P.apply_columns(D), P.apply_rows_transposed(S)


def atom_edge_weight(a, b):
    """Sign-insensitive MSE between two atoms.

    Returns ``(weight, sign)`` where ``weight = min(MSE(a, b), MSE(a, -b))``
    and ``sign`` is ``+1`` when the unflipped pairing attains it (ties go
    to ``+1``).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"atom shapes differ: {a.shape} vs {b.shape}")
    plus = float(np.mean((a - b) ** 2))
    minus = float(np.mean((a + b) ** 2))
    return (plus, 1) if plus <= minus else (minus, -1)


def pairwise_edge_weights(A, B):
    """Edge weight and sign tables between all columns of ``A`` and ``B``.

    Entry ``[j, l]`` equals :func:`atom_edge_weight` of ``A[:, j]`` and
    ``B[:, l]``.
    """
    d = A.shape[0]
    diff = A[:, :, None] - B[:, None, :]
    summ = A[:, :, None] + B[:, None, :]
    plus = np.einsum("ijl,ijl->jl", diff, diff) / d
    minus = np.einsum("ijl,ijl->jl", summ, summ) / d
    signs = np.where(plus <= minus, 1, -1).astype(np.int8)
    return np.minimum(plus, minus), signs


class AlignmentGraph:
    """Layered DAG over the atoms of ``N`` site dictionaries.

    Pairwise weight tables between consecutive layers are computed once;
    removing nodes only flips entries of the ``alive`` masks.
    """

    def __init__(self, dicts):
        dicts = [np.asarray(D, dtype=float) for D in dicts]
        if not dicts:
            raise ShapeError("need at least one dictionary")
        shape = dicts[0].shape
        for i, D in enumerate(dicts):
            if D.ndim != 2 or D.shape != shape:
                raise ShapeError(f"dictionary {i} has shape {D.shape}, expected {shape}")
        self.n_sites = len(dicts)
        self.k = shape[1]
        self.weights = []
        self.signs = []
        for A, B in zip(dicts[:-1], dicts[1:]):
            W, sg = pairwise_edge_weights(A, B)
            self.weights.append(W)
            self.signs.append(sg)
        self.alive = [np.ones(self.k, dtype=bool) for _ in range(self.n_sites)]

    def survivors(self, layer: int) -> np.ndarray:
        return np.flatnonzero(self.alive[layer])

    def remove(self, nodes) -> None:
        for layer, idx in enumerate(nodes):
            if not self.alive[layer][idx]:
                raise InvalidStateError(f"node ({layer}, {idx}) already removed")
            self.alive[layer][idx] = False

    def path_weight(self, nodes) -> float:
        total = 0.0
        for i in range(self.n_sites - 1):
            total += self.weights[i][nodes[i], nodes[i + 1]]
        return total

    def path_signs(self, nodes) -> list:
        """Cumulative edge signs, with the first site's atom as the positive reference."""
        signs = [1]
        for i in range(self.n_sites - 1):
            signs.append(signs[-1] * int(self.signs[i][nodes[i], nodes[i + 1]]))
        return signs

    def _check_nonempty(self):
        for layer, mask in enumerate(self.alive):
            if not mask.any():
                raise InvalidStateError(f"layer {layer} has no surviving atoms")


@dataclass
class AlignmentPath:
    nodes: list
    signs: list
    weight: float


def _dijkstra(graph: AlignmentGraph) -> AlignmentPath:
    # Heap entries are (distance, atom-index prefix, layer).  Layer 0 is the
    # source, 1..N the sites, N + 1 the sink.  Comparing prefixes after the
    # distance breaks ties toward the lexicographically smallest path.
    N = graph.n_sites
    heap = [(0.0, (), 0)]
    settled = set()
    while heap:
        dist, prefix, layer = heapq.heappop(heap)
        if layer == N + 1:
            return AlignmentPath(list(prefix), graph.path_signs(prefix), dist)
        node = (layer, prefix[-1] if prefix else -1)
        if node in settled:
            continue
        settled.add(node)
        if layer == N:
            heapq.heappush(heap, (dist, prefix, N + 1))
            continue
        if layer == 0:
            for v in graph.survivors(0):
                heapq.heappush(heap, (0.0, (int(v),), 1))
            continue
        row = graph.weights[layer - 1][prefix[-1]]
        for v in graph.survivors(layer):
            if (layer + 1, int(v)) not in settled:
                heapq.heappush(heap, (dist + float(row[v]), prefix + (int(v),), layer + 1))
    raise InvalidStateError("sink unreachable")  # pragma: no cover


def _dag_relaxation(graph: AlignmentGraph) -> AlignmentPath:
    # Cost-to-go computed backward, then a forward greedy walk taking the
    # smallest index among optimal successors: this yields the
    # lexicographically smallest minimum-weight path.
    N = graph.n_sites
    inf = np.inf
    to_go = [None] * N
    to_go[N - 1] = np.where(graph.alive[N - 1], 0.0, inf)
    for i in range(N - 2, -1, -1):
        cand = graph.weights[i] + to_go[i + 1][None, :]
        best = cand.min(axis=1)
        to_go[i] = np.where(graph.alive[i], best, inf)
    nodes = []
    first = to_go[0]
    nodes.append(int(np.flatnonzero(first == first.min())[0]))
    for i in range(N - 1):
        cand = graph.weights[i][nodes[-1]] + to_go[i + 1]
        nodes.append(int(np.flatnonzero(cand == cand.min())[0]))
    return AlignmentPath(nodes, graph.path_signs(nodes), graph.path_weight(nodes))


def shortest_alignment_path(graph: AlignmentGraph, method: str = "dijkstra") -> AlignmentPath:
    """Cheapest source-to-sink path visiting one surviving atom per site.

    ``method`` is ``"dijkstra"`` (heap-based, one label per path prefix) or
    ``"dag"`` (vectorized layer-by-layer relaxation).  Both return a
    minimum-weight path; among equal-weight paths the one with the
    lexicographically smallest atom-index sequence wins.
    """
    graph._check_nonempty()
    if method == "dijkstra":
        return _dijkstra(graph)
    if method == "dag":
        return _dag_relaxation(graph)
    raise ValueError(f"unknown path method {method!r}")


@dataclass
class AlignmentRecord:
    """Per-round selections of :func:`global_alignment`.

    ``rounds[r]`` holds, for aligned position ``r``, the chosen atom index
    and resolved sign at every site plus the path weight.
    """

    n_sites: int
    k: int
    rounds: list = field(default_factory=list)

    @property
    def total_weight(self) -> float:
        return float(sum(r["weight"] for r in self.rounds))

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "k": self.k,
            "site_order": "input order; edges join consecutive sites only",
            "total_weight": self.total_weight,
            "rounds": self.rounds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AlignmentRecord":
        return cls(int(data["n_sites"]), int(data["k"]), list(data["rounds"]))


def global_alignment(dicts, codes, method: str = "auto"):
    """Align the atoms of several site dictionaries.

    Args:
        dicts: per-site dictionaries, all ``d x k``.
        codes: per-site code matrices, ``k x n_i``.
        method: path solver, ``"dijkstra"``, ``"dag"`` or ``"auto"``
            (Dijkstra for small graphs, the vectorized relaxation otherwise).

    Returns:
        ``(aligned_dicts, aligned_codes, perms, record)`` where
        ``aligned_dicts[i] == dicts[i] @ perms[i].matrix()`` and
        ``aligned_codes[i] == perms[i].matrix().T @ codes[i]``.
    """
    if len(dicts) != len(codes):
        raise ShapeError(f"{len(dicts)} dictionaries but {len(codes)} code matrices")
    graph = AlignmentGraph(dicts)
    k = graph.k
    for i, S in enumerate(codes):
        if np.ndim(S) != 2 or np.shape(S)[0] != k:
            raise ShapeError(f"codes of site {i} have shape {np.shape(S)}, expected ({k}, n)")
    if method == "auto":
        method = "dijkstra" if k * graph.n_sites <= 256 else "dag"

    record = AlignmentRecord(graph.n_sites, k)
    perm = np.empty((graph.n_sites, k), dtype=np.intp)
    signs = np.empty((graph.n_sites, k), dtype=np.int8)
    for r in range(k):
        path = shortest_alignment_path(graph, method)
        perm[:, r] = path.nodes
        signs[:, r] = path.signs
        record.rounds.append({"atoms": list(path.nodes), "signs": list(path.signs), "weight": float(path.weight)})
        graph.remove(path.nodes)

    perms = [SignedPermutation(perm[i], signs[i]) for i in range(graph.n_sites)]
    aligned_dicts, aligned_codes = [], []
    for D, S, P in zip(dicts, codes, perms):
        DA, SA = apply_signed_permutation(np.asarray(D, dtype=float), np.asarray(S, dtype=float), P)
        aligned_dicts.append(DA)
        aligned_codes.append(SA)
    return aligned_dicts, aligned_codes, perms, record
