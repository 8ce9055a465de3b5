"""Synthetic DBMS-performance simulator with planted parameter interactions.

Stands in for real benchmark execution: throughput is a positive base rate
modulated by smooth per-parameter main effects plus planted pairwise
interaction surfaces (conditional dependencies where the effect of one
knob flips or gates with the level of another), with optional
multiplicative Gaussian noise. Latency is inverse throughput plus
per-parameter penalties, so the two metrics are anti-correlated but not
redundant. Everything is deterministic given seeds, and the noise-free
ground truth is exactly evaluable, which makes every downstream claim
testable against a known optimum.
"""

from __future__ import annotations

import io
import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .relgraph import EmbeddingSet
from .space import ConfigSample, Parameter, ParameterSpace, normalize_batch

WORKLOAD_KINDS = ("rw-balanced", "read-heavy", "scan-heavy", "analytic")

# base throughput, relative noise std, latency scale, main-effect amplitude
# range, interaction weight range
_PROFILES = {
    "rw-balanced": (4000.0, 0.02, 25.0, (0.04, 0.10), (0.15, 0.30)),
    "read-heavy": (9000.0, 0.015, 8.0, (0.02, 0.06), (0.10, 0.22)),
    "scan-heavy": (1200.0, 0.03, 60.0, (0.05, 0.12), (0.18, 0.35)),
    "analytic": (150.0, 0.02, 400.0, (0.03, 0.08), (0.12, 0.25)),
}

_PREFIXES = ("buffer", "log", "io", "cache", "worker", "planner", "lock", "net")
_SUFFIXES = ("size", "ratio", "threads", "delay", "limit", "depth",
             "pages", "slots", "interval", "factor", "quota", "window")

MAIN_INERT, MAIN_MONOTONE, MAIN_PEAKED = 0, 1, 2
INTER_BILINEAR, INTER_GATED = 0, 1


@dataclass(frozen=True)
class WorkloadSpec:
    """Full coefficient set of one synthetic workload (JSON-serializable)."""

    kind: str
    seed: int
    space: ParameterSpace
    base_tps: float
    noise_std: float
    lat_base: float
    score_alpha: float
    main_kind: np.ndarray      # (n,) MAIN_* codes
    main_amp: np.ndarray       # (n,)
    main_center: np.ndarray    # (n,) peak location for peaked effects
    main_sign: np.ndarray      # (n,) +/-1 for monotone effects
    inter_i: np.ndarray        # (K,)
    inter_j: np.ndarray        # (K,)
    inter_kind: np.ndarray     # (K,) INTER_* codes
    inter_w: np.ndarray        # (K,)
    pen_idx: np.ndarray        # latency penalty parameter indices
    pen_w: np.ndarray

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def interaction_pairs(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(self.inter_i, self.inter_j)]

    @property
    def inert_indices(self) -> list[int]:
        return [i for i in range(self.n) if self.main_kind[i] == MAIN_INERT]


def planted_interaction_count(n_params: int) -> int:
    return math.ceil(n_params / 4)


def planted_inert_count(n_params: int) -> int:
    # n = 2 cannot host both a disjoint pair and an inert parameter
    return math.ceil(n_params / 4) if n_params >= 3 else 0


def make_workload(kind: str, n_params: int, seed: int) -> WorkloadSpec:
    """Deterministic workload with ceil(n/4) planted interacting pairs and
    (for n >= 3) ceil(n/4) near-inert parameters; pair 0 is always a
    sign-flipping (bilinear) dependency."""
    if kind not in WORKLOAD_KINDS:
        raise ValueError(f"unknown workload kind {kind!r}")
    if n_params < 2:
        raise ValueError("need at least 2 parameters")
    base_tps, noise_std, lat_base, amp_rng, w_rng = _PROFILES[kind]
    rng = np.random.default_rng([seed, WORKLOAD_KINDS.index(kind)])

    n_pairs = planted_interaction_count(n_params)
    n_inert = planted_inert_count(n_params)
    if 2 * n_pairs + n_inert > n_params:
        n_pairs = (n_params - n_inert) // 2
    perm = rng.permutation(n_params)
    pairs = [(int(perm[2 * t]), int(perm[2 * t + 1])) for t in range(n_pairs)]
    inert = {int(v) for v in perm[2 * n_pairs:2 * n_pairs + n_inert]}

    # names: pair members share a subsystem prefix
    names = [""] * n_params
    used = set()

    def fresh_name(prefix, tag):
        name = f"{prefix}_{tag}"
        while name in used:
            name += "x"
        used.add(name)
        return name

    for p, (i, j) in enumerate(pairs):
        prefix = _PREFIXES[p % len(_PREFIXES)]
        names[i] = fresh_name(prefix, _SUFFIXES[(2 * p) % len(_SUFFIXES)])
        names[j] = fresh_name(prefix, _SUFFIXES[(2 * p + 1) % len(_SUFFIXES)])
    loose = [i for i in range(n_params) if not names[i]]
    for t, i in enumerate(loose):
        prefix = _PREFIXES[(n_pairs + t) % len(_PREFIXES)]
        names[i] = fresh_name(prefix, _SUFFIXES[(2 * n_pairs + t) % len(_SUFFIXES)])

    params = []
    for i in range(n_params):
        if i % 11 == 7:
            params.append(Parameter(names[i], 0.0, 1.0, "boolean"))
        elif i % 5 == 3:
            hi = float(rng.choice([16, 64, 256]))
            params.append(Parameter(names[i], 1.0, hi, "integer"))
        else:
            hi = float(rng.choice([1.0, 100.0, 1024.0]))
            params.append(Parameter(names[i], 0.0, hi, "continuous"))
    space = ParameterSpace(tuple(params))

    main_kind = np.full(n_params, MAIN_INERT)
    main_amp = np.zeros(n_params)
    main_center = np.full(n_params, 0.5)
    main_sign = np.ones(n_params)
    for i in range(n_params):
        if i in inert:
            continue
        main_kind[i] = MAIN_MONOTONE if rng.random() < 0.5 else MAIN_PEAKED
        main_amp[i] = rng.uniform(*amp_rng)
        main_center[i] = rng.uniform(0.25, 0.75)
        main_sign[i] = 1.0 if rng.random() < 0.5 else -1.0

    inter_i = np.array([p[0] for p in pairs], dtype=int)
    inter_j = np.array([p[1] for p in pairs], dtype=int)
    inter_kind = np.array(
        [INTER_BILINEAR if t == 0 else
         (INTER_BILINEAR if rng.random() < 0.5 else INTER_GATED)
         for t in range(n_pairs)], dtype=int)
    inter_w = np.array([rng.uniform(*w_rng) * (1.0 if rng.random() < 0.5 else -1.0)
                        for _ in range(n_pairs)])
    if n_pairs:
        inter_w[0] = -abs(inter_w[0])   # raising i helps at low j, hurts at high j

    # worst-case lower bound of the effect sum keeps throughput positive
    lo_main = np.where(main_kind == MAIN_MONOTONE, -main_amp,
                       np.where(main_kind == MAIN_PEAKED, -1.25 * main_amp, 0.0))
    lo_inter = -np.abs(inter_w)
    total_min = lo_main.sum() + lo_inter.sum()
    if 1.0 + total_min < 0.25:
        scale = 0.75 / -total_min
        main_amp *= scale
        inter_w *= scale

    n_pen = max(1, math.ceil(n_params / 3))
    pen_idx = np.sort(rng.choice(n_params, size=n_pen, replace=False))
    pen_w = rng.uniform(0.05, 0.2, size=n_pen) * lat_base * 0.5

    return WorkloadSpec(
        kind=kind, seed=seed, space=space, base_tps=base_tps,
        noise_std=noise_std, lat_base=lat_base, score_alpha=0.5,
        main_kind=main_kind, main_amp=main_amp, main_center=main_center,
        main_sign=main_sign, inter_i=inter_i, inter_j=inter_j,
        inter_kind=inter_kind, inter_w=inter_w,
        pen_idx=pen_idx, pen_w=pen_w)


# ---------------------------------------------------------------------------
# evaluation

def _effect_sum(w: WorkloadSpec, U: np.ndarray) -> np.ndarray:
    mono = w.main_sign * w.main_amp * (2.0 * U - 1.0)
    peak = w.main_amp * (1.0 - 4.0 * (U - w.main_center) ** 2)
    main = np.where(w.main_kind == MAIN_MONOTONE, mono,
                    np.where(w.main_kind == MAIN_PEAKED, peak, 0.0)).sum(axis=1)
    total = main
    for k in range(len(w.inter_i)):
        ui = U[:, w.inter_i[k]]
        uj = U[:, w.inter_j[k]]
        if w.inter_kind[k] == INTER_BILINEAR:
            g = w.inter_w[k] * 4.0 * (ui - 0.5) * (uj - 0.5)
        else:
            gate = uj * uj * (3.0 - 2.0 * uj)      # smoothstep on the gating knob
            g = w.inter_w[k] * (2.0 * ui - 1.0) * gate
        total = total + g
    return total


def _tps_lat_batch(w: WorkloadSpec, X: np.ndarray, eps: np.ndarray | None):
    U = normalize_batch(w.space, X)
    tps = w.base_tps * (1.0 + _effect_sum(w, U))
    if eps is not None:
        tps = tps * np.maximum(1.0 + eps, 0.05)
    tps = np.maximum(tps, 1e-3 * w.base_tps)
    pen = (w.pen_w * U[:, w.pen_idx] ** 2).sum(axis=1)
    lat = w.lat_base * (w.base_tps / tps) + pen
    return tps, lat


def evaluate_config(w: WorkloadSpec, x: Sequence[float], noisy: bool = False,
                    seed: int = 0) -> tuple[float, float]:
    """Simulated (throughput, latency) of one configuration.

    ``noisy=False`` is the exact ground truth; with noise on, throughput is
    scaled by ``1 + eps`` with ``eps ~ N(0, noise_std)`` drawn from ``seed``.
    """
    X = np.asarray(x, dtype=float)[None]
    eps = None
    if noisy:
        eps = np.random.default_rng(seed).normal(0.0, w.noise_std, size=1)
    tps, lat = _tps_lat_batch(w, X, eps)
    return float(tps[0]), float(lat[0])


def evaluate_batch(w: WorkloadSpec, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free (tps, latency) arrays for a batch of configurations."""
    return _tps_lat_batch(w, np.asarray(X, dtype=float), None)


@dataclass(frozen=True)
class GroundTruth:
    """Noise-free view of a workload: pure functions of the configuration."""

    w: WorkloadSpec

    def tps(self, x) -> float:
        return evaluate_config(self.w, x, noisy=False)[0]

    def latency(self, x) -> float:
        return evaluate_config(self.w, x, noisy=False)[1]

    def score(self, x) -> float:
        return performance_score(self.w, x)


def performance_score(w: WorkloadSpec, x) -> float:
    """Scalar true objective: normalized tps minus score_alpha * normalized latency."""
    tps, lat = evaluate_config(w, x, noisy=False)
    return tps / w.base_tps - w.score_alpha * lat / w.lat_base


def _score_batch(w: WorkloadSpec, X: np.ndarray) -> np.ndarray:
    tps, lat = evaluate_batch(w, X)
    return tps / w.base_tps - w.score_alpha * lat / w.lat_base


# ---------------------------------------------------------------------------
# sampling

def _quantize(space: ParameterSpace, X: np.ndarray) -> np.ndarray:
    X = X.copy()
    for i, p in enumerate(space.params):
        if p.kind == "integer":
            X[:, i] = np.clip(np.rint(X[:, i]), p.lower, p.upper)
        elif p.kind == "boolean":
            X[:, i] = np.where(X[:, i] >= 0.5, 1.0, 0.0)
    return X


def _lhs(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    U = np.empty((n, d))
    for c in range(d):
        U[:, c] = (rng.permutation(n) + rng.random(n)) / n
    return U


def generate_dataset(w: WorkloadSpec, n_samples: int, seed: int) -> list[ConfigSample]:
    """Latin-hypercube sample of the box, measured with noise; deterministic."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng([seed, 0x5eed])
    U = _lhs(rng, n_samples, w.n)
    X = _quantize(w.space, w.space.lower + U * (w.space.upper - w.space.lower))
    eps = rng.normal(0.0, w.noise_std, size=n_samples)
    tps, lat = _tps_lat_batch(w, X, eps)
    return [ConfigSample(x=X[b], y=(float(tps[b]), float(lat[b])))
            for b in range(n_samples)]


def oracle_best(w: WorkloadSpec, budget: int, seed: int):
    """Noise-free random search plus coordinate-descent polish.

    Returns ``(x_star, tps_star, latency_star)`` maximizing
    :func:`performance_score`. A larger budget extends the same seeded
    sample stream, so results are monotone in the budget.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng([seed, 0xacce])
    lo, hi = w.space.lower, w.space.upper
    best_x, best_s = None, -np.inf
    remaining = budget
    while remaining > 0:
        m = min(remaining, 20000)
        remaining -= m
        X = _quantize(w.space, lo + rng.random((m, w.n)) * (hi - lo))
        s = _score_batch(w, X)
        k = int(np.argmax(s))
        if s[k] > best_s:
            best_s, best_x = float(s[k]), X[k].copy()
    if budget > 1:
        best_x, best_s = _polish(w, best_x, best_s)
    tps, lat = evaluate_config(w, best_x, noisy=False)
    return best_x, tps, lat


def _dim_grid(p: Parameter, lo: float, hi: float, width: int = 33) -> np.ndarray:
    if p.kind == "boolean":
        return np.array([0.0, 1.0])
    if p.kind == "integer":
        vals = np.unique(np.clip(np.rint(np.linspace(lo, hi, width)), p.lower, p.upper))
        return vals
    return np.linspace(lo, hi, width)


def _polish(w: WorkloadSpec, x: np.ndarray, s: float, sweeps: int = 6):
    x = x.copy()
    lo, hi = w.space.lower, w.space.upper
    for _ in range(sweeps):
        improved = False
        for d, p in enumerate(w.space.params):
            span = hi[d] - lo[d]
            grids = [_dim_grid(p, lo[d], hi[d])]
            if p.kind == "continuous":
                # zoom once around the coarse winner for ~0.1% resolution
                coarse = grids[0]
                cand = np.repeat(x[None], len(coarse), axis=0)
                cand[:, d] = coarse
                sc = _score_batch(w, cand)
                c = coarse[int(np.argmax(sc))]
                cell = span / 32.0
                grids.append(np.linspace(max(lo[d], c - cell), min(hi[d], c + cell), 33))
            for grid in grids:
                cand = np.repeat(x[None], len(grid), axis=0)
                cand[:, d] = grid
                sc = _score_batch(w, cand)
                k = int(np.argmax(sc))
                if sc[k] > s + 1e-15:
                    s = float(sc[k])
                    x[d] = grid[k]
                    improved = True
        if not improved:
            break
    return x, s


# ---------------------------------------------------------------------------
# embedding fixtures

def _orthonormal(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    M = rng.normal(size=(d, k))
    Q, R = np.linalg.qr(M)
    return Q * np.sign(np.diag(R))


def planted_embeddings(w: WorkloadSpec, d_emb: int, seed: int) -> EmbeddingSet:
    """Description-embedding fixture aligned with the planted interactions.

    Members of an interacting pair share a direction (cosine 0.9 >= 0.8);
    all other pairs are exactly orthogonal (< 0.5), so thresholding at the
    0.75 default recovers the interaction edge set exactly. Requires
    ``d_emb >= n + n_pairs`` for the exact-orthogonality construction.
    """
    if d_emb < 2:
        raise ValueError("d_emb must be >= 2")
    K = len(w.inter_i)
    if d_emb < w.n + K:
        raise ValueError(f"d_emb must be >= n + n_pairs = {w.n + K} "
                         "for the orthogonal construction")
    rng = np.random.default_rng([seed, 0xe3b])
    Q = _orthonormal(rng, d_emb, K + w.n)
    V = np.empty((w.n, d_emb))
    for i in range(w.n):
        V[i] = Q[:, K + i]
    for p in range(K):
        shared = Q[:, p]
        for node in (w.inter_i[p], w.inter_j[p]):
            V[node] = math.sqrt(0.9) * shared + math.sqrt(0.1) * Q[:, K + node]
    return EmbeddingSet(tuple(w.space.names), V)


# per-block node pattern for the subsystem fixture: a tight triple (one
# loosely attached member), a tight pair, and a loner
_BLOCK_PATTERN = 6


def subsystem_block_embeddings(n_blocks: int = 2, d_emb: int = 32,
                               seed: int = 0) -> EmbeddingSet:
    """Hierarchical fixture for threshold sweeps: subsystem blocks that
    fragment into sub-clusters as the threshold rises.

    Similarity bands (exact by construction): intra-block 0.68, the loose
    triple link 0.72, tight sub-pairs 0.93, cross-block 0.0. Sweeping
    0.65 -> 0.85 therefore walks block cliques -> triangles + pairs ->
    pairs only: modularity never decreases while ARI against the prefix
    subsystems collapses.
    """
    n = n_blocks * _BLOCK_PATTERN
    need = n_blocks * 3 + n     # block dirs + two sub dirs per block + self dirs
    if d_emb < need:
        raise ValueError(f"d_emb must be >= {need} for {n_blocks} blocks")
    rng = np.random.default_rng([seed, 0xb10c])
    Q = _orthonormal(rng, d_emb, need)
    names, rows = [], []
    c_block = math.sqrt(0.68)
    for b in range(n_blocks):
        prefix = _PREFIXES[b % len(_PREFIXES)]
        b_dir = Q[:, b * 3]
        tri_dir = Q[:, b * 3 + 1]
        pair_dir = Q[:, b * 3 + 2]
        for m in range(_BLOCK_PATTERN):
            node = b * _BLOCK_PATTERN + m
            self_dir = Q[:, n_blocks * 3 + node]
            if m in (0, 1):          # tight triple core: mutual 0.93
                v = c_block * b_dir + math.sqrt(0.25) * tri_dir + math.sqrt(0.07) * self_dir
            elif m == 2:             # loose triple member: 0.72 to the core
                v = c_block * b_dir + math.sqrt(0.0064) * tri_dir + math.sqrt(0.3136) * self_dir
            elif m in (3, 4):        # tight pair: 0.93
                v = c_block * b_dir + math.sqrt(0.25) * pair_dir + math.sqrt(0.07) * self_dir
            else:                    # loner: 0.68 to everything in the block
                v = c_block * b_dir + math.sqrt(0.32) * self_dir
            names.append(f"{prefix}_{_SUFFIXES[m]}")
            rows.append(v)
    return EmbeddingSet(tuple(names), np.array(rows))


# ---------------------------------------------------------------------------
# slices and file formats

def heatmap_slice(w: WorkloadSpec, i: int, j: int, grid: int,
                  fixed: Sequence[float]) -> np.ndarray:
    """Noise-free tps over a grid x grid sweep of parameters (i, j), with the
    remaining parameters pinned to ``fixed``. Row r varies i, column c varies j."""
    if i == j:
        raise ValueError("need two distinct parameters")
    if grid < 2:
        raise ValueError("grid must be >= 2")
    fixed = np.asarray(fixed, dtype=float)
    base = _quantize(w.space, fixed[None])[0]
    evaluate_config(w, base)   # bounds check
    vi = np.linspace(w.space.lower[i], w.space.upper[i], grid)
    vj = np.linspace(w.space.lower[j], w.space.upper[j], grid)
    X = np.repeat(base[None], grid * grid, axis=0)
    X[:, i] = np.repeat(vi, grid)
    X[:, j] = np.tile(vj, grid)
    X = _quantize(w.space, X)
    tps, _ = evaluate_batch(w, X)
    return tps.reshape(grid, grid)


def write_heatmap_csv(matrix: np.ndarray) -> str:
    buf = io.StringIO()
    wcsv = csv.writer(buf, lineterminator="\n")
    for row in matrix:
        wcsv.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_dataset_csv(space: ParameterSpace, dataset: Sequence[ConfigSample]) -> str:
    """CSV with header ``p0,...,p{n-1},tps,latency``."""
    buf = io.StringIO()
    wcsv = csv.writer(buf, lineterminator="\n")
    wcsv.writerow([f"p{i}" for i in range(space.n)] + ["tps", "latency"])
    for s in dataset:
        wcsv.writerow([repr(float(v)) for v in s.x]
                      + [repr(float(s.y[0])), repr(float(s.y[1]))])
    return buf.getvalue()


def read_dataset_csv(text: str) -> list[ConfigSample]:
    rows = list(csv.reader(io.StringIO(text)))
    out = []
    for r in rows[1:]:
        if not r:
            continue
        vals = [float(v) for v in r]
        out.append(ConfigSample(x=np.array(vals[:-2]), y=(vals[-2], vals[-1])))
    return out


def workload_to_json(w: WorkloadSpec) -> str:
    payload = {
        "schema_version": 1,
        "kind": w.kind,
        "seed": w.seed,
        "space": w.space.to_dict(),
        "base_tps": w.base_tps,
        "noise_std": w.noise_std,
        "lat_base": w.lat_base,
        "score_alpha": w.score_alpha,
        "main_kind": w.main_kind.tolist(),
        "main_amp": w.main_amp.tolist(),
        "main_center": w.main_center.tolist(),
        "main_sign": w.main_sign.tolist(),
        "inter_i": w.inter_i.tolist(),
        "inter_j": w.inter_j.tolist(),
        "inter_kind": w.inter_kind.tolist(),
        "inter_w": w.inter_w.tolist(),
        "pen_idx": w.pen_idx.tolist(),
        "pen_w": w.pen_w.tolist(),
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def workload_from_json(text: str) -> WorkloadSpec:
    d = json.loads(text)
    if d.get("schema_version") != 1:
        raise ValueError(f"unsupported workload schema {d.get('schema_version')}")
    return WorkloadSpec(
        kind=d["kind"], seed=d["seed"],
        space=ParameterSpace.from_dict(d["space"]),
        base_tps=d["base_tps"], noise_std=d["noise_std"],
        lat_base=d["lat_base"], score_alpha=d["score_alpha"],
        main_kind=np.array(d["main_kind"], dtype=int),
        main_amp=np.array(d["main_amp"], dtype=float),
        main_center=np.array(d["main_center"], dtype=float),
        main_sign=np.array(d["main_sign"], dtype=float),
        inter_i=np.array(d["inter_i"], dtype=int),
        inter_j=np.array(d["inter_j"], dtype=int),
        inter_kind=np.array(d["inter_kind"], dtype=int),
        inter_w=np.array(d["inter_w"], dtype=float),
        pen_idx=np.array(d["pen_idx"], dtype=int),
        pen_w=np.array(d["pen_w"], dtype=float),
    )
