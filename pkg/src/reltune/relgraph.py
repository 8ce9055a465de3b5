"""Parameter relational graph: construction and structural/semantic quality.

Nodes are configuration parameters carrying fixed description embeddings;
edges join pairs whose cosine similarity clears a threshold. Quality of a
thresholded graph is scored by modularity of its detected communities and
by NMI/ARI agreement between those communities and the name-prefix
subsystem grouping.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Cosine values this close to +/-1 are snapped exactly, so duplicated or
# anti-parallel rows survive thresholds of exactly 1.0 despite float
# cancellation in dot/norm.
_PARALLEL_SNAP = 1e-12


@dataclass(frozen=True)
class EmbeddingSet:
    """Per-parameter description embeddings, one fixed-dimension row per name."""

    names: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        V = np.asarray(self.vectors, dtype=float)
        object.__setattr__(self, "vectors", V)
        if V.ndim != 2 or V.shape[0] != len(self.names):
            raise ValueError("vectors must be a matrix with one row per name")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate parameter names")
        norms = np.linalg.norm(V, axis=1)
        if (norms == 0.0).any():
            raise ValueError("embedding rows must have nonzero norm")

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class RelationalGraph:
    """Thresholded similarity graph over the embedded parameters."""

    adjacency: np.ndarray
    embeddings: EmbeddingSet
    tau: float

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=float)
        object.__setattr__(self, "adjacency", A)
        if A.shape != (self.embeddings.n, self.embeddings.n):
            raise ValueError("adjacency shape must match embedding count")
        if (A != A.T).any() or np.diag(A).any():
            raise ValueError("adjacency must be symmetric with zero diagonal")

    @property
    def n(self) -> int:
        return self.embeddings.n

    @property
    def edge_count(self) -> int:
        return int(round(self.adjacency.sum() / 2))


@dataclass(frozen=True)
class Partition:
    """Per-node community ids; comparisons are by label equality only."""

    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        if any(v < 0 for v in self.labels):
            raise ValueError("community ids must be nonnegative")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_communities(self) -> int:
        return len(set(self.labels))


@dataclass(frozen=True)
class GraphQualityReport:
    tau: float
    edge_count: int
    community_count: int
    modularity: float
    nmi: float
    ari: float
    degenerate: bool = False


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between two vectors, ``a.b / (|a| |b|)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("vectors must be 1-D with equal dimensions")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm vector")
    s = float(a @ b / (na * nb))
    s = min(1.0, max(-1.0, s))
    if abs(s) >= 1.0 - _PARALLEL_SNAP:
        s = math.copysign(1.0, s)
    return s


def similarity_matrix(emb: EmbeddingSet) -> np.ndarray:
    U = emb.vectors / np.linalg.norm(emb.vectors, axis=1, keepdims=True)
    S = np.clip(U @ U.T, -1.0, 1.0)
    S[np.abs(S) >= 1.0 - _PARALLEL_SNAP] = np.sign(S[np.abs(S) >= 1.0 - _PARALLEL_SNAP])
    return S


def build_adjacency(emb: EmbeddingSet, tau: float) -> RelationalGraph:
    """Binary graph with an edge wherever pairwise similarity reaches tau."""
    if emb.n == 0:
        raise ValueError("empty embedding set")
    if not -1.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [-1, 1]")
    S = similarity_matrix(emb)
    A = (S >= tau).astype(float)
    np.fill_diagonal(A, 0.0)
    return RelationalGraph(adjacency=A, embeddings=emb, tau=tau)


def modularity(g: RelationalGraph, p: Partition) -> float:
    """Community quality ``Q = (1/2m) sum_ij [A_ij - k_i k_j / 2m] delta(c_i, c_j)``.

    The sum runs over all ordered node pairs including i = j (Newman form),
    so the degree-product term is charged even for self pairs.
    """
    A = g.adjacency
    n = g.n
    if len(p) != n:
        raise ValueError("partition must cover all nodes")
    two_m = A.sum()
    if two_m == 0.0:
        raise ValueError("modularity is undefined for an edgeless graph")
    k = A.sum(axis=1)
    labels = np.asarray(p.labels)
    same = labels[:, None] == labels[None, :]
    return float(((A - np.outer(k, k) / two_m) * same).sum() / two_m)


def _weighted_modularity(W: np.ndarray, labels: np.ndarray) -> float:
    # W convention: symmetric, W_ii = twice the internal weight of supernode i
    two_m = W.sum()
    k = W.sum(axis=1)
    same = labels[:, None] == labels[None, :]
    return float(((W - np.outer(k, k) / two_m) * same).sum() / two_m)


_GAIN_EPS = 1e-12


def _greedy_node_moves(W: np.ndarray, labels: np.ndarray,
                       rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Greedy single-node modularity moves until none improves Q.

    Candidate targets for a node are the communities of its neighbors plus
    a fresh singleton (splitting off can improve Q; moves into any other
    non-adjacent community never beat the singleton). Visit order is a
    seeded shuffle per pass; candidates are scanned in ascending community
    id with a strict improvement test, so equal gains resolve to the
    lowest id. Returns the labels and whether any move happened.
    """
    n = W.shape[0]
    two_m = W.sum()
    k = W.sum(axis=1)
    labels = labels.copy()
    sigma_tot: dict = {}
    size: dict = {}
    for i in range(n):
        sigma_tot[labels[i]] = sigma_tot.get(labels[i], 0.0) + k[i]
        size[labels[i]] = size.get(labels[i], 0) + 1
    fresh = max(labels) + 1
    moved_ever = False
    moved_any = True
    while moved_any:
        moved_any = False
        for i in rng.permutation(n):
            ci = labels[i]
            link = {ci: 0.0}
            for j in np.nonzero(W[i])[0]:
                if j != i:
                    link[labels[j]] = link.get(labels[j], 0.0) + W[i, j]
            sigma_tot[ci] -= k[i]
            size[ci] -= 1
            base = 2.0 * link[ci] / two_m - 2.0 * k[i] * sigma_tot[ci] / (two_m * two_m)
            best_c, best_gain = ci, 0.0
            for c in sorted(link):
                if c == ci:
                    continue
                gain = (2.0 * link[c] / two_m
                        - 2.0 * k[i] * sigma_tot.get(c, 0.0) / (two_m * two_m)) - base
                if gain > best_gain + _GAIN_EPS:
                    best_gain, best_c = gain, c
            if size[ci] > 0 and -base > best_gain + _GAIN_EPS:
                best_c = fresh     # split off into a new singleton community
            if best_c == fresh:
                fresh += 1
            labels[i] = best_c
            sigma_tot[best_c] = sigma_tot.get(best_c, 0.0) + k[i]
            size[best_c] = size.get(best_c, 0) + 1
            if best_c != ci:
                moved_any = True
                moved_ever = True
    return labels, moved_ever


def _aggregate(W: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # supernode s gets W'_ss = sum of all ordered internal pairs, so degrees
    # and 2m carry over and Q is preserved
    comms, dense = np.unique(labels, return_inverse=True)
    k = len(comms)
    M = np.zeros((k, len(labels)))
    M[dense, np.arange(len(labels))] = 1.0
    return M @ W @ M.T, dense


def louvain(g: RelationalGraph, seed: int) -> Partition:
    """Seeded Louvain community detection on the relational graph.

    Multi-level greedy modularity optimization with a final move pass on
    the original graph, so the returned partition is a local optimum of Q:
    no single-node move (including splitting a node off) increases it.
    Deterministic for a fixed seed.
    """
    if g.edge_count == 0:
        raise ValueError("louvain requires at least one edge")
    rng = np.random.default_rng(seed)
    W = g.adjacency.copy()
    node_comm = np.arange(g.n)
    while W.shape[0] > 1:
        labels, moved = _greedy_node_moves(W, np.arange(W.shape[0]), rng)
        if not moved:
            break
        W, dense = _aggregate(W, labels)
        node_comm = dense[node_comm]
    # final pass on the original graph guarantees the local-optimum contract
    final, _ = _greedy_node_moves(g.adjacency, node_comm, rng)
    remap: dict = {}
    out = []
    for c in final:
        if c not in remap:
            remap[c] = len(remap)
        out.append(remap[c])
    return Partition(tuple(out))


def _contingency(p: Partition, q: Partition) -> np.ndarray:
    if len(p) != len(q):
        raise ValueError("partitions must have equal length")
    if len(p) == 0:
        raise ValueError("empty partitions")
    _, pi = np.unique(p.labels, return_inverse=True)
    _, qi = np.unique(q.labels, return_inverse=True)
    C = np.zeros((pi.max() + 1, qi.max() + 1))
    np.add.at(C, (pi, qi), 1.0)
    return C


def nmi(p: Partition, q: Partition) -> float:
    """Normalized mutual information ``I(p;q) / sqrt(H(p) H(q))``, natural logs.

    Entropies come from the joint contingency table. When both partitions
    collapse to a single cluster they are identical as partitions and the
    0/0 form is defined as 1.0; if only one side is degenerate the mutual
    information is 0 and so is the score.
    """
    C = _contingency(p, q)
    n = C.sum()
    pij = C / n
    pi = pij.sum(axis=1)
    qj = pij.sum(axis=0)
    hp = -np.sum(pi[pi > 0] * np.log(pi[pi > 0]))
    hq = -np.sum(qj[qj > 0] * np.log(qj[qj > 0]))
    if hp == 0.0 and hq == 0.0:
        return 1.0
    if hp == 0.0 or hq == 0.0:
        return 0.0
    nz = pij > 0
    mi = float(np.sum(pij[nz] * (np.log(pij[nz])
                                 - np.log(np.outer(pi, qj)[nz]))))
    val = mi / math.sqrt(hp * hq)
    return min(1.0, max(0.0, val))


def ari(p: Partition, q: Partition) -> float:
    """Adjusted Rand index in pair-count contingency form.

    ``(Index - Expected) / (Max - Expected)``; a degenerate zero
    denominator (e.g. two all-singleton partitions) scores 1.0 when the
    partitions agree exactly and 0.0 otherwise.
    """
    C = _contingency(p, q)
    n = C.sum()
    if n < 2:
        raise ValueError("ari requires at least 2 elements")

    def comb2(x):
        return x * (x - 1.0) / 2.0

    index = comb2(C).sum()
    pa = comb2(C.sum(axis=1)).sum()
    pb = comb2(C.sum(axis=0)).sum()
    expected = pa * pb / comb2(n)
    maximum = 0.5 * (pa + pb)
    if maximum == expected:
        return 1.0 if index == maximum else 0.0
    return float((index - expected) / (maximum - expected))


def subsystem_partition(names: Sequence[str]) -> Partition:
    """Group names by the token before the first underscore.

    Ids follow first appearance; a name without an underscore forms its
    own singleton group.
    """
    if len(names) == 0:
        raise ValueError("names must be nonempty")
    seen: dict = {}
    labels = []
    for i, name in enumerate(names):
        key = name.split("_", 1)[0] if "_" in name else ("\x00singleton", i)
        if key not in seen:
            seen[key] = len(seen)
        labels.append(seen[key])
    return Partition(tuple(labels))


def threshold_sweep(emb: EmbeddingSet, taus: Sequence[float], seed: int) -> list[GraphQualityReport]:
    """Graph quality (Q, NMI, ARI vs. subsystem prefixes) across thresholds.

    A tau that yields an edgeless graph is reported with the degenerate
    flag set and NaN metrics rather than raised.
    """
    if len(taus) == 0:
        raise ValueError("taus must be nonempty")
    ref = subsystem_partition(emb.names)
    reports = []
    for tau in taus:
        g = build_adjacency(emb, tau)
        if g.edge_count == 0:
            reports.append(GraphQualityReport(
                tau=float(tau), edge_count=0, community_count=emb.n,
                modularity=float("nan"), nmi=float("nan"), ari=float("nan"),
                degenerate=True))
            continue
        part = louvain(g, seed)
        reports.append(GraphQualityReport(
            tau=float(tau),
            edge_count=g.edge_count,
            community_count=part.n_communities,
            modularity=modularity(g, part),
            nmi=nmi(part, ref),
            ari=ari(part, ref),
        ))
    return reports


# ---------------------------------------------------------------------------
# file formats

def write_embeddings_csv(emb: EmbeddingSet) -> str:
    """CSV with header ``name,e0,e1,...,e{d-1}``, one parameter per row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name"] + [f"e{i}" for i in range(emb.dim)])
    for name, row in zip(emb.names, emb.vectors):
        w.writerow([name] + [repr(float(v)) for v in row])
    return buf.getvalue()


def read_embeddings_csv(text: str) -> EmbeddingSet:
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    if header[0] != "name":
        raise ValueError("embedding CSV must start with a 'name' column")
    names = [r[0] for r in rows[1:] if r]
    vectors = np.array([[float(v) for v in r[1:]] for r in rows[1:] if r])
    return EmbeddingSet(tuple(names), vectors)


def write_quality_csv(reports: Sequence[GraphQualityReport]) -> str:
    """CSV with header ``tau,edges,communities,modularity,nmi,ari``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "edges", "communities", "modularity", "nmi", "ari"])
    for r in reports:
        w.writerow([repr(r.tau), r.edge_count, r.community_count,
                    repr(r.modularity), repr(r.nmi), repr(r.ari)])
    return buf.getvalue()


def graph_to_json(g: RelationalGraph) -> str:
    payload = {
        "schema_version": 1,
        "tau": g.tau,
        "names": list(g.embeddings.names),
        "adjacency": g.adjacency.astype(int).tolist(),
        "embeddings": [[float(v) for v in row] for row in g.embeddings.vectors],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def graph_from_json(s: str) -> RelationalGraph:
    d = json.loads(s)
    emb = EmbeddingSet(tuple(d["names"]), np.array(d["embeddings"], dtype=float))
    return RelationalGraph(adjacency=np.array(d["adjacency"], dtype=float),
                           embeddings=emb, tau=d["tau"])
