"""Hybrid-score-guided Bayesian optimization over the latent space.

The surrogate is a zero-mean Gaussian process with an RBF kernel fit to
observed hybrid scores

    HybridScore(z) = f_metric(z) + gamma * f_affinity(z)

where ``f_metric = tps_hat - alpha * lat_hat`` comes from the metric
prediction head (normalized outputs; no simulated benchmark runs inside
the loop) and ``f_affinity`` is the mean RBF similarity to the latent
vectors of previously high-performing configurations. Expected
improvement over the best observed hybrid score picks each proposal. The
vanilla baseline is the identical loop with gamma forced to zero.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import ndtr

from . import kernels
from .gnn import Model, decode, encode_batch, predict_batch
from .space import ConfigSample, config_as_mapping, denormalize_config, normalize_batch

_SIGMA_FLOOR = 1e-12
_LENGTHSCALE_GRID = (0.1, 0.3, 1.0, 3.0)      # times the search-box diagonal
_NOISE_RATIO_GRID = (1e-6, 1e-4, 1e-2)        # noise-to-signal variance
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class GpFitError(RuntimeError):
    """Gram matrix stayed non-positive-definite through jitter escalation."""


@dataclass(frozen=True)
class GpHyper:
    lengthscale: float
    signal_var: float
    noise_var: float


@dataclass
class GpState:
    X: np.ndarray
    y: np.ndarray
    hyper: GpHyper
    L: np.ndarray            # Cholesky factor of K + noise + jitter
    alpha: np.ndarray        # (K + noise)^-1 y
    jitter: float


@dataclass(frozen=True)
class SearchBox:
    """Per-latent-dimension bounds, taken from the encoded training set."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or (lo > hi).any():
            raise ValueError("box must satisfy lo <= hi per dimension")

    @classmethod
    def from_points(cls, Z: np.ndarray) -> "SearchBox":
        Z = np.asarray(Z, dtype=float)
        return cls(Z.min(axis=0), Z.max(axis=0))

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


@dataclass(frozen=True)
class HboConfig:
    alpha: float = 0.5            # latency weight inside f_metric
    gamma: float = 1.0            # affinity weight inside the hybrid score
    sigma_rbf: float | str = "median"
    good_quantile: float = 0.2
    iterations: int = 300
    seed: int = 0
    warm_start: int = 16
    refit_every: int = 10

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be >= 0")
        if not 0 < self.good_quantile < 1:
            raise ValueError("good_quantile must lie in (0, 1)")
        if isinstance(self.sigma_rbf, str):
            if self.sigma_rbf != "median":
                raise ValueError("sigma_rbf must be a positive number or 'median'")
        elif self.sigma_rbf <= 0:
            raise ValueError("sigma_rbf must be positive")


@dataclass(frozen=True)
class IterationRecord:
    t: int
    z: np.ndarray
    metric: float
    affinity: float
    hybrid: float
    gp_mu: float
    gp_sigma: float
    best_so_far: float


@dataclass
class TuningHistory:
    iterations: list
    z_star: np.ndarray
    best_config: dict
    best_hybrid: float
    warm_hybrids: np.ndarray
    cfg: HboConfig

    def best_so_far(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.iterations])

    def metric_best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(np.array([r.metric for r in self.iterations]))


# ---------------------------------------------------------------------------
# Gaussian process surrogate

def _gram(X: np.ndarray, hyper: GpHyper) -> np.ndarray:
    d2 = kernels.pairwise_sq_dists(X, X)
    return hyper.signal_var * np.exp(-d2 / (2.0 * hyper.lengthscale ** 2))


def _chol_with_jitter(K: np.ndarray, hyper: GpHyper):
    scale = hyper.signal_var if hyper.signal_var > 0 else 1.0
    for jit in _JITTERS:
        try:
            L = cholesky(K + (hyper.noise_var + jit * scale) * np.eye(K.shape[0]),
                         lower=True)
            return L, jit * scale
        except np.linalg.LinAlgError:
            continue
    raise GpFitError("kernel matrix is not positive definite even with jitter 1e-4")


def _fit_given(X: np.ndarray, y: np.ndarray, hyper: GpHyper) -> GpState:
    K = _gram(X, hyper)
    L, jitter = _chol_with_jitter(K, hyper)
    alpha = cho_solve((L, True), y)
    return GpState(X=X, y=y, hyper=hyper, L=L, alpha=alpha, jitter=jitter)


def _log_marginal_likelihood(gp: GpState) -> float:
    n = len(gp.y)
    return float(-0.5 * gp.y @ gp.alpha - np.log(np.diag(gp.L)).sum()
                 - 0.5 * n * math.log(2.0 * math.pi))


def gp_fit(X: np.ndarray, y: np.ndarray, hyper="auto",
           box: SearchBox | None = None) -> GpState:
    """Fit the RBF-kernel GP ``k(x, x') = sf2 exp(-||x-x'||^2 / 2 l^2)``.

    ``hyper='auto'`` grid-searches the lengthscale (relative to the box
    diagonal, or the data diameter without a box) and the noise-to-signal
    ratio by log marginal likelihood; the signal variance is the second
    moment of the observations (zero prior mean). Explicit hyperparameters
    skip the search. Cholesky factors are jittered in escalating steps and
    cached on the returned state.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) != len(y) or len(y) < 1:
        raise ValueError("need equally many inputs and observations, at least one")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in GP data")
    if isinstance(hyper, GpHyper):
        return _fit_given(X, y, hyper)
    if hyper != "auto":
        raise ValueError("hyper must be a GpHyper or 'auto'")

    if box is not None and box.diagonal > 0:
        ref = box.diagonal
    else:
        ref = math.sqrt(float(kernels.pairwise_sq_dists(X, X).max()))
        if ref <= 0:
            ref = 1.0
    sf2 = float((y * y).mean())
    if sf2 <= 0:
        sf2 = 1.0
    best = None
    for ls in _LENGTHSCALE_GRID:
        for ratio in _NOISE_RATIO_GRID:
            cand = _fit_given(X, y, GpHyper(ls * ref, sf2, ratio * sf2))
            lml = _log_marginal_likelihood(cand)
            if best is None or lml > best[0] + 1e-12:
                best = (lml, cand)
    return best[1]


def gp_posterior(gp: GpState, z):
    """Predictive (mean, std) with zero prior mean; accepts one vector or a batch."""
    Z = np.atleast_2d(np.asarray(z, dtype=float))
    if Z.shape[1] != gp.X.shape[1]:
        raise ValueError("query dimension does not match the fitted GP")
    ks = gp.hyper.signal_var * np.exp(
        -kernels.pairwise_sq_dists(np.ascontiguousarray(Z), gp.X)
        / (2.0 * gp.hyper.lengthscale ** 2))
    mu = ks @ gp.alpha
    v = solve_triangular(gp.L, ks.T, lower=True)
    var = np.maximum(gp.hyper.signal_var - (v * v).sum(axis=0), 0.0)
    sd = np.sqrt(var)
    if np.ndim(z) == 1:
        return float(mu[0]), float(sd[0])
    return mu, sd


def expected_improvement(mu, sigma, f_best):
    """EI for maximization: ``(mu - f_best) Phi(u) + sigma phi(u)`` with
    ``u = (mu - f_best) / sigma``; degenerate sigma collapses to the hinge."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if (sigma < 0).any():
        raise ValueError("sigma must be >= 0")
    imp = mu - f_best
    out = np.maximum(imp, 0.0)
    ok = sigma >= _SIGMA_FLOOR
    if np.any(ok):
        u = np.where(ok, imp / np.where(ok, sigma, 1.0), 0.0)
        phi = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
        out = np.where(ok, np.maximum(imp * ndtr(u) + sigma * phi, 0.0), out)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# hybrid score pieces

def f_metric(model: Model, z, alpha: float):
    """Predicted performance ``tps_hat - alpha * lat_hat`` (normalized head outputs)."""
    Z = np.atleast_2d(np.asarray(z, dtype=float))
    yh = predict_batch(model, Z)
    vals = yh[:, 0] - alpha * yh[:, 1]
    return float(vals[0]) if np.ndim(z) == 1 else vals


def measured_scores(model: Model, dataset: Sequence[ConfigSample], alpha: float) -> np.ndarray:
    """True f_metric of measured samples, z-scored with the model's stats."""
    Y = np.array([s.y for s in dataset], dtype=float)
    Yn = (Y - model.metric_mean) / model.metric_std
    return Yn[:, 0] - alpha * Yn[:, 1]


def select_good_set(model: Model, dataset: Sequence[ConfigSample],
                    good_quantile: float, alpha: float = 0.5):
    """Latent vectors of the top-quantile samples by measured performance.

    Keeps the ceil(q N) best plus boundary ties, deduplicated to a set of
    distinct latent rows. Returns ``(Z_good, keep_mask)``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    scores = measured_scores(model, dataset, alpha)
    X = np.array([s.x for s in dataset], dtype=float)
    Z = encode_batch(model, normalize_batch(model.space, X))
    k = max(1, math.ceil(good_quantile * len(dataset)))
    thresh = np.sort(scores)[::-1][k - 1]
    keep = scores >= thresh
    Z_good = np.unique(Z[keep], axis=0)
    return Z_good, keep


def f_affinity(z, Z_good: np.ndarray, sigma_rbf: float):
    """Mean RBF similarity ``(1/|Z|) sum_k exp(-||z - z_k||^2 / 2 sigma^2)``.

    ``Z_good`` is a set: duplicate rows are collapsed before averaging.
    """
    Z_good = np.atleast_2d(np.asarray(Z_good, dtype=float))
    if Z_good.shape[0] == 0:
        raise ValueError("Z_good must be nonempty")
    if sigma_rbf <= 0:
        raise ValueError("sigma_rbf must be positive")
    Zu = np.unique(Z_good, axis=0)
    Q = np.ascontiguousarray(np.atleast_2d(np.asarray(z, dtype=float)))
    vals = kernels.rbf_mean(Q, np.ascontiguousarray(Zu), float(sigma_rbf))
    return float(vals[0]) if np.ndim(z) == 1 else vals


def median_bandwidth(Z_good: np.ndarray) -> float:
    """Median pairwise distance of the good set; 1.0 if all points coincide."""
    Z = np.atleast_2d(np.asarray(Z_good, dtype=float))
    if Z.shape[0] < 2:
        raise ValueError("median bandwidth needs at least 2 points")
    d2 = kernels.pairwise_sq_dists(Z, Z)
    iu = np.triu_indices(Z.shape[0], k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


def _resolve_sigma(cfg: HboConfig, Z_good: np.ndarray) -> float:
    if cfg.sigma_rbf == "median":
        return median_bandwidth(Z_good)
    return float(cfg.sigma_rbf)


def hybrid_score(model: Model, z, Z_good: np.ndarray, cfg: HboConfig,
                 sigma: float | None = None):
    """``f_metric(z) + gamma * f_affinity(z)``."""
    sig = _resolve_sigma(cfg, Z_good) if sigma is None else sigma
    m = f_metric(model, z, cfg.alpha)
    if cfg.gamma == 0.0:
        return m
    return m + cfg.gamma * f_affinity(z, Z_good, sig)


# ---------------------------------------------------------------------------
# proposal search

def propose_next(gp: GpState, box: SearchBox, f_best: float, seed: int) -> np.ndarray:
    """Approximate EI argmax over the box.

    1024 seeded uniform candidates; the top 8 are refined by greedy
    coordinate-wise hill climbing (step = 1% of the box width per
    dimension, up to 50 steps, early exit once no single-coordinate move
    improves). Deterministic given the seed and always inside the box.
    """
    rng = np.random.default_rng(seed)
    d = box.dim
    span = box.hi - box.lo
    cands = box.lo + rng.random((1024, d)) * span
    mu, sd = gp_posterior(gp, cands)
    ei = expected_improvement(mu, sd, f_best)
    order = np.argsort(-ei, kind="stable")[:8]
    pts = cands[order].copy()
    vals = ei[order].copy()
    step = 0.01 * span
    active = np.ones(len(pts), dtype=bool)
    for _ in range(50):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        moves = np.repeat(pts[idx], 2 * d, axis=0)
        for r, _pi in enumerate(idx):
            blk = moves[r * 2 * d:(r + 1) * 2 * d]
            for c in range(d):
                blk[2 * c, c] = min(box.hi[c], blk[2 * c, c] + step[c])
                blk[2 * c + 1, c] = max(box.lo[c], blk[2 * c + 1, c] - step[c])
        m_mu, m_sd = gp_posterior(gp, moves)
        m_ei = expected_improvement(m_mu, m_sd, f_best)
        for r, pi in enumerate(idx):
            block = m_ei[r * 2 * d:(r + 1) * 2 * d]
            b = int(np.argmax(block))
            if block[b] > vals[pi] + 1e-15:
                pts[pi] = moves[r * 2 * d + b]
                vals[pi] = block[b]
            else:
                active[pi] = False
    best = int(np.argmax(vals))
    return pts[best]


# ---------------------------------------------------------------------------
# tuning loops

def hbo_run(model: Model, dataset: Sequence[ConfigSample], cfg: HboConfig) -> TuningHistory:
    """Full hybrid-score-guided tuning loop.

    Encodes the dataset, fixes the good set and the search box, warm-starts
    the GP on seeded random points scored by the hybrid objective, then for
    T iterations proposes the EI argmax, scores it with the metric head
    plus affinity (never the simulator), and feeds the observation back.
    Returns the per-iteration history plus the decoded best configuration.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    X = np.array([s.x for s in dataset], dtype=float)
    Z_all = encode_batch(model, normalize_batch(model.space, X))
    Z_good, _ = select_good_set(model, dataset, cfg.good_quantile, cfg.alpha)
    sigma = _resolve_sigma(cfg, Z_good)
    box = SearchBox.from_points(Z_all)

    ss = np.random.SeedSequence(cfg.seed)
    warm_seed, loop_root = ss.spawn(2)
    rng = np.random.default_rng(warm_seed)
    n_warm = max(1, cfg.warm_start)
    Zw = box.lo + rng.random((n_warm, box.dim)) * (box.hi - box.lo)
    yw = np.array([hybrid_score(model, Zw[i], Z_good, cfg, sigma)
                   for i in range(n_warm)])

    obs_X = [Zw[i] for i in range(n_warm)]
    obs_y = list(yw)
    f_best = float(max(obs_y))
    prop_seeds = loop_root.spawn(max(cfg.iterations, 1))

    gp = None
    records = []
    for t in range(1, cfg.iterations + 1):
        Xo = np.array(obs_X)
        yo = np.array(obs_y)
        if gp is None or (t - 1) % cfg.refit_every == 0:
            gp = gp_fit(Xo, yo, "auto", box=box)
        else:
            gp = _fit_given(Xo, yo, gp.hyper)
        z_t = propose_next(gp, box, f_best, prop_seeds[t - 1])
        mu, sd = gp_posterior(gp, z_t)
        m = f_metric(model, z_t, cfg.alpha)
        aff = f_affinity(z_t, Z_good, sigma)
        h = m + cfg.gamma * aff
        obs_X.append(z_t)
        obs_y.append(h)
        f_best = max(f_best, h)
        records.append(IterationRecord(t=t, z=z_t, metric=m, affinity=aff,
                                       hybrid=h, gp_mu=mu, gp_sigma=sd,
                                       best_so_far=f_best))

    best_idx = int(np.argmax(obs_y))
    z_star = np.asarray(obs_X[best_idx])
    x_norm = decode(model, z_star)
    raw = denormalize_config(model.space, x_norm)
    return TuningHistory(iterations=records, z_star=z_star,
                         best_config=config_as_mapping(model.space, raw),
                         best_hybrid=float(obs_y[best_idx]),
                         warm_hybrids=yw, cfg=cfg)


def vbo_run(model: Model, dataset: Sequence[ConfigSample], cfg: HboConfig) -> TuningHistory:
    """Vanilla-BO baseline: the identical loop with the affinity weight zeroed."""
    return hbo_run(model, dataset, replace(cfg, gamma=0.0))


def history_to_csv(history: TuningHistory) -> str:
    """CSV with header ``iter,hybrid,metric,affinity,gp_mu,gp_sigma,best_so_far``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "hybrid", "metric", "affinity", "gp_mu", "gp_sigma",
                "best_so_far"])
    for r in history.iterations:
        w.writerow([r.t, repr(r.hybrid), repr(r.metric), repr(r.affinity),
                    repr(r.gp_mu), repr(r.gp_sigma), repr(r.best_so_far)])
    return buf.getvalue()
