"""Validation metrics and report generation.

Affinity-performance discrimination (AUROC / AUPRC over top-k vs bottom-k
configurations, with binned trends), convergence-curve aggregation across
seeds, and the four-cell ablation grid crossing the relational encoder
with the affinity-guided search.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .gnn import Model, TrainConfig, train
from .hbo import (HboConfig, TuningHistory, f_affinity, hbo_run,
                  measured_scores, median_bandwidth, select_good_set, vbo_run)
from .relgraph import build_adjacency
from .simbench import (WorkloadSpec, evaluate_config, generate_dataset,
                       performance_score, planted_embeddings)
from .space import ConfigSample


@dataclass(frozen=True)
class LabeledScores:
    """Affinity values with binary performance labels (1 = high-performing)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        l = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", l)
        if s.shape != l.shape or s.ndim != 1:
            raise ValueError("scores and labels must be equal-length vectors")
        if not np.isin(l, (0, 1)).all():
            raise ValueError("labels must be binary")


def auroc(s: LabeledScores) -> float:
    """Probability a random positive outranks a random negative, ties at 1/2
    (Mann-Whitney form via average ranks)."""
    pos = s.labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both classes present")
    ranks = rankdata(s.scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(s: LabeledScores) -> float:
    """Average precision over the descending-score sweep; each tie group
    enters as one block."""
    n_pos = int((s.labels == 1).sum())
    if n_pos == 0:
        raise ValueError("auprc needs at least one positive")
    order = np.argsort(-s.scores, kind="stable")
    scr = s.scores[order]
    lab = s.labels[order]
    ap = 0.0
    tp = fp = 0
    i = 0
    n = len(scr)
    while i < n:
        j = i
        while j < n and scr[j] == scr[i]:
            j += 1
        tp_new = tp + int(lab[i:j].sum())
        fp_new = fp + (j - i) - int(lab[i:j].sum())
        precision = tp_new / (tp_new + fp_new)
        ap += (tp_new - tp) / n_pos * precision
        tp, fp = tp_new, fp_new
        i = j
    return float(ap)


@dataclass(frozen=True)
class TrendBin:
    center: float
    mean: float | None
    count: int


def binned_trend(xs, ys, n_bins: int) -> list[TrendBin]:
    """Equal-width bins over [min(xs), max(xs)]; empty bins carry count 0 and
    no mean. All-equal xs land in a single effective bin."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if len(xs) == 0:
        raise ValueError("xs must be nonempty")
    lo, hi = float(xs.min()), float(xs.max())
    width = (hi - lo) / n_bins
    if width == 0.0:
        idx = np.zeros(len(xs), dtype=int)
    else:
        idx = np.minimum(((xs - lo) / width).astype(int), n_bins - 1)
    bins = []
    for b in range(n_bins):
        in_bin = idx == b
        cnt = int(in_bin.sum())
        center = lo + (b + 0.5) * width if width > 0 else lo
        bins.append(TrendBin(center=center,
                             mean=float(ys[in_bin].mean()) if cnt else None,
                             count=cnt))
    return bins


@dataclass(frozen=True)
class AffinityReport:
    auroc: float
    auprc: float
    bins: list
    k: int
    n_train: int
    n_eval: int
    sigma: float


def affinity_validation(model: Model, dataset: Sequence[ConfigSample], k: int,
                        cfg: HboConfig, seed: int) -> AffinityReport:
    """Does affinity to the good set separate strong from weak configurations?

    The dataset is split 80/20 (seeded); the good set comes from the train
    split only, and the held-out split supplies the top-k / bottom-k
    configurations by measured performance, labeled 1 / 0. Affinity scores
    of the labeled points feed AUROC, AUPRC and a 10-bin trend.
    """
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.8 * n))
    train_split = [dataset[i] for i in order[:n_train]]
    held = [dataset[i] for i in order[n_train:]]
    if len(held) < 2 * k:
        raise ValueError(f"need >= {2 * k} held-out samples, have {len(held)}")

    Z_good, _ = select_good_set(model, train_split, cfg.good_quantile, cfg.alpha)
    sigma = median_bandwidth(Z_good) if cfg.sigma_rbf == "median" else float(cfg.sigma_rbf)

    true = measured_scores(model, held, cfg.alpha)
    rank = np.argsort(-true, kind="stable")
    chosen = np.concatenate([rank[:k], rank[-k:]])
    labels = np.array([1] * k + [0] * k)

    from .gnn import encode_batch
    from .space import normalize_batch
    X = np.array([held[i].x for i in chosen], dtype=float)
    Z = encode_batch(model, normalize_batch(model.space, X))
    aff = f_affinity(Z, Z_good, sigma)
    scored = LabeledScores(scores=aff, labels=labels)
    return AffinityReport(
        auroc=auroc(scored), auprc=auprc(scored),
        bins=binned_trend(aff, true[chosen], 10),
        k=k, n_train=n_train, n_eval=len(held), sigma=sigma)


# ---------------------------------------------------------------------------
# convergence aggregation

def convergence_report(histories: Sequence[TuningHistory]) -> list[tuple]:
    """Per-iteration (mean, min, max) of the best-so-far curves across seeds."""
    if len(histories) == 0:
        raise ValueError("need at least one history")
    curves = np.array([h.best_so_far() for h in histories])
    if curves.ndim != 2:
        raise ValueError("histories must have equal lengths")
    return [(t + 1, float(curves[:, t].mean()), float(curves[:, t].min()),
             float(curves[:, t].max())) for t in range(curves.shape[1])]


def convergence_to_csv(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "mean", "min", "max"])
    for t, mean, mn, mx in rows:
        w.writerow([t, repr(mean), repr(mn), repr(mx)])
    return buf.getvalue()


def iterations_to_reach(curve: np.ndarray, fraction: float = 0.95) -> int:
    """First iteration where the curve covers ``fraction`` of its total rise
    (range-based, so sign and offset of the score scale do not matter)."""
    curve = np.asarray(curve, dtype=float)
    target = curve[0] + fraction * (curve[-1] - curve[0])
    return int(np.argmax(curve >= target)) + 1


# ---------------------------------------------------------------------------
# ablation grid

@dataclass(frozen=True)
class AblationCell:
    rge_on: bool
    hbo_on: bool
    tps: float
    latency: float


@dataclass
class AblationSeedDetail:
    seed: int
    histories: dict          # (rge_on, hbo_on) -> TuningHistory
    true_tps: dict           # (rge_on, hbo_on) -> float
    true_latency: dict
    true_score: dict
    models: dict             # "gat" / "mlp" -> Model
    dataset: list


_CELLS = ((False, False), (True, False), (False, True), (True, True))


def run_ablation(workload: WorkloadSpec, seeds: Sequence[int], *,
                 n_samples: int = 5000, d_emb: int = 32, tau: float = 0.75,
                 train_cfg: TrainConfig | None = None,
                 hbo_cfg: HboConfig | None = None) -> tuple[list, list]:
    """Train both encoder kinds per seed and tune with both search modes.

    Returns ``(cells, details)``: the four mean-performance cells (final
    configurations re-measured on the noise-free simulator) plus the
    per-seed histories and models for downstream reporting.
    """
    train_cfg = train_cfg or TrainConfig()
    hbo_cfg = hbo_cfg or HboConfig()
    emb = planted_embeddings(workload, d_emb, workload.seed)
    graph = build_adjacency(emb, tau)
    details = []
    for seed in seeds:
        dataset = generate_dataset(workload, n_samples, seed)
        models = {
            "gat": train(dataset, graph, workload.space,
                         replace(train_cfg, seed=seed, encoder_kind="gat")),
            "mlp": train(dataset, graph, workload.space,
                         replace(train_cfg, seed=seed, encoder_kind="mlp")),
        }
        histories, tps_d, lat_d, score_d = {}, {}, {}, {}
        for rge_on, hbo_on in _CELLS:
            model = models["gat" if rge_on else "mlp"]
            runner = hbo_run if hbo_on else vbo_run
            hist = runner(model, dataset, replace(hbo_cfg, seed=seed))
            x = np.array([hist.best_config[p.name] for p in workload.space.params],
                         dtype=float)
            tps, lat = evaluate_config(workload, x, noisy=False)
            histories[(rge_on, hbo_on)] = hist
            tps_d[(rge_on, hbo_on)] = tps
            lat_d[(rge_on, hbo_on)] = lat
            score_d[(rge_on, hbo_on)] = performance_score(workload, x)
        details.append(AblationSeedDetail(seed=seed, histories=histories,
                                          true_tps=tps_d, true_latency=lat_d,
                                          true_score=score_d, models=models,
                                          dataset=dataset))
    cells = [AblationCell(
        rge_on=r, hbo_on=h,
        tps=float(np.mean([d.true_tps[(r, h)] for d in details])),
        latency=float(np.mean([d.true_latency[(r, h)] for d in details])))
        for r, h in _CELLS]
    return cells, details


def ablation_grid(workload: WorkloadSpec, seeds: Sequence[int],
                  **kwargs) -> list[AblationCell]:
    """Four-cell {relational encoder} x {affinity-guided search} grid of mean
    true simulator performance across seeds."""
    cells, _ = run_ablation(workload, seeds, **kwargs)
    return cells


def ablation_to_csv(cells: Sequence[AblationCell]) -> str:
    """CSV with header ``rge,hbo,tps,latency``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rge", "hbo", "tps", "latency"])
    for c in cells:
        w.writerow([int(c.rge_on), int(c.hbo_on), repr(c.tps), repr(c.latency)])
    return buf.getvalue()


def affinity_report_to_csv(report: AffinityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["auroc", "auprc", "k", "n_train", "n_eval", "sigma"])
    w.writerow([repr(report.auroc), repr(report.auprc), report.k,
                report.n_train, report.n_eval, repr(report.sigma)])
    return buf.getvalue()


def trend_to_csv(bins: Sequence[TrendBin]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["center", "mean", "count"])
    for b in bins:
        w.writerow([repr(b.center), "" if b.mean is None else repr(b.mean), b.count])
    return buf.getvalue()
