"""Command-line pipeline: one JSON experiment config, reproducible stages.

Every stage reads its inputs from the output directory and writes
versioned artifacts plus a manifest (config hash + seeds), so reruns with
an identical config are byte-identical and any stage can run standalone
once its inputs exist. ``RELTUNE_THREADS`` caps seed-level parallelism in
the tuning stage.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .gnn import TrainConfig, model_from_json, model_to_json, train
from .hbo import HboConfig, hbo_run, history_to_csv, vbo_run
from .relgraph import (build_adjacency, graph_from_json, graph_to_json,
                       read_embeddings_csv, threshold_sweep,
                       write_embeddings_csv, write_quality_csv)
from .reports import (affinity_report_to_csv, affinity_validation,
                      ablation_to_csv, convergence_report, convergence_to_csv,
                      run_ablation, trend_to_csv)
from .simbench import (WORKLOAD_KINDS, generate_dataset, heatmap_slice,
                       make_workload, planted_embeddings, read_dataset_csv,
                       subsystem_block_embeddings, workload_from_json,
                       workload_to_json, write_dataset_csv, write_heatmap_csv)

STAGES = ("gen-data", "build-graph", "sweep-threshold", "train", "tune",
          "validate-affinity", "ablate", "heatmap")

_DEFAULTS = {
    "out_dir": "runs/out",
    "seeds": [1, 2, 3, 4, 5],
    "stages": list(STAGES),
    "workload": {"kind": "rw-balanced", "n_params": 12, "seed": 7},
    "dataset": {"n_samples": 5000, "path": None},
    "embeddings": {"source": "planted", "path": None, "d_emb": 32},
    "graph": {"tau": 0.75, "sweep_taus": [0.65, 0.70, 0.75, 0.80, 0.85]},
    "train": {},
    "hbo": {},
    "tune": {"run_vbo": True},
    "validate": {"top_k": 30},
    "heatmap": {"grid": 16, "pair": None},
}


def _merged(raw: dict) -> dict:
    cfg = {}
    for key, default in _DEFAULTS.items():
        if isinstance(default, dict):
            cfg[key] = {**default, **raw.get(key, {})}
        else:
            cfg[key] = raw.get(key, default)
    return cfg


def validate_config(raw: dict) -> list[str]:
    """Diagnostics for a parsed config; empty list iff every invariant holds."""
    diags = []
    if not isinstance(raw, dict):
        return ["config: top level must be a JSON object"]
    cfg = _merged(raw)
    wl = cfg["workload"]
    if wl["kind"] not in WORKLOAD_KINDS:
        diags.append(f"workload.kind: must be one of {WORKLOAD_KINDS}")
    if not isinstance(wl["n_params"], int) or wl["n_params"] < 2:
        diags.append("workload.n_params: must be an integer >= 2")
    seeds = cfg["seeds"]
    if not seeds or not all(isinstance(s, int) for s in seeds):
        diags.append("seeds: must be a nonempty list of integers")
    stages = cfg["stages"]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        diags.append(f"stages: unknown stage names {bad}")
    tau = cfg["graph"]["tau"]
    if not isinstance(tau, (int, float)) or not -1.0 <= tau <= 1.0:
        diags.append("graph.tau: must lie in [-1, 1]")
    for t in cfg["graph"]["sweep_taus"]:
        if not isinstance(t, (int, float)) or not -1.0 <= t <= 1.0:
            diags.append("graph.sweep_taus: every threshold must lie in [-1, 1]")
            break
    if cfg["dataset"]["n_samples"] < 1:
        diags.append("dataset.n_samples: must be >= 1")
    if cfg["dataset"]["path"] is not None and not Path(cfg["dataset"]["path"]).exists():
        diags.append("dataset.path: file does not exist")
    src = cfg["embeddings"]["source"]
    if src not in ("planted", "blocks", "file"):
        diags.append("embeddings.source: must be 'planted', 'blocks' or 'file'")
    if src == "file":
        p = cfg["embeddings"]["path"]
        if not p or not Path(p).exists():
            diags.append("embeddings.path: required and must exist for source 'file'")
    if src == "blocks" and "train" in stages:
        diags.append("embeddings.source: 'blocks' is a graph-quality fixture, "
                     "not usable by the train stage")
    if ("train" in stages and "gen-data" not in stages
            and cfg["dataset"]["path"] is None):
        diags.append("dataset.path: required when train runs without gen-data")
    try:
        TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        diags.append(f"train: {exc}")
    try:
        HboConfig(**cfg["hbo"])
    except (TypeError, ValueError) as exc:
        diags.append(f"hbo: {exc}")
    if cfg["validate"]["top_k"] < 1:
        diags.append("validate.top_k: must be >= 1")
    if cfg["heatmap"]["grid"] < 2:
        diags.append("heatmap.grid: must be >= 2")
    pair = cfg["heatmap"]["pair"]
    if pair is not None and (len(pair) != 2 or pair[0] == pair[1]):
        diags.append("heatmap.pair: must be two distinct parameter indices")
    return diags


def _config_hash(raw: dict) -> str:
    return hashlib.sha256(
        json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RELTUNE_THREADS", "1")))
    except ValueError:
        return 1


class _Run:
    """One pipeline execution: merged config plus artifact paths."""

    def __init__(self, raw: dict, out_override=None, seed_override=None):
        self.raw = raw
        cfg = _merged(raw)
        if out_override:
            cfg["out_dir"] = str(out_override)
        if seed_override is not None:
            cfg["seeds"] = [int(seed_override)]
        self.cfg = cfg
        self.out = Path(cfg["out_dir"])
        self.train_cfg = TrainConfig(**cfg["train"])
        self.hbo_cfg = HboConfig(**cfg["hbo"])
        self.manifest_stages: dict = {}

    # -- artifact paths ---------------------------------------------------
    def dataset_path(self, seed: int) -> Path:
        return self.out / f"dataset_seed{seed}.csv"

    def model_path(self, kind: str, seed: int) -> Path:
        return self.out / f"model_{kind}_seed{seed}.json"

    def _load_workload(self):
        p = self.out / "workload.json"
        if not p.exists():
            raise FileNotFoundError("workload.json missing; run gen-data first")
        return workload_from_json(p.read_text())

    def _load_dataset(self, seed: int):
        override = self.cfg["dataset"]["path"]
        p = Path(override) if override else self.dataset_path(seed)
        if not p.exists():
            raise FileNotFoundError(f"{p} missing; run gen-data first")
        return read_dataset_csv(p.read_text())

    def _load_embeddings(self):
        p = self.out / "embeddings.csv"
        if not p.exists():
            raise FileNotFoundError("embeddings.csv missing; run build-graph first")
        return read_embeddings_csv(p.read_text())

    def _load_graph(self):
        p = self.out / "graph.json"
        if not p.exists():
            raise FileNotFoundError("graph.json missing; run build-graph first")
        return graph_from_json(p.read_text())

    # -- stages -----------------------------------------------------------
    def stage_gen_data(self) -> list[str]:
        wl = self.cfg["workload"]
        w = make_workload(wl["kind"], wl["n_params"], wl["seed"])
        files = {"workload.json": workload_to_json(w),
                 "space.json": w.space.to_json()}
        for seed in self.cfg["seeds"]:
            ds = generate_dataset(w, self.cfg["dataset"]["n_samples"], seed)
            files[f"dataset_seed{seed}.csv"] = write_dataset_csv(w.space, ds)
        for name, text in files.items():
            _write(self.out / name, text)
        return sorted(files)

    def stage_build_graph(self) -> list[str]:
        src = self.cfg["embeddings"]["source"]
        if src == "planted":
            w = self._load_workload()
            emb = planted_embeddings(w, self.cfg["embeddings"]["d_emb"],
                                     self.cfg["workload"]["seed"])
        elif src == "blocks":
            emb = subsystem_block_embeddings(
                d_emb=self.cfg["embeddings"]["d_emb"],
                seed=self.cfg["workload"]["seed"])
        else:
            emb = read_embeddings_csv(Path(self.cfg["embeddings"]["path"]).read_text())
        graph = build_adjacency(emb, self.cfg["graph"]["tau"])
        _write(self.out / "embeddings.csv", write_embeddings_csv(emb))
        _write(self.out / "graph.json", graph_to_json(graph))
        return ["embeddings.csv", "graph.json"]

    def stage_sweep_threshold(self) -> list[str]:
        emb = self._load_embeddings()
        reports = threshold_sweep(emb, self.cfg["graph"]["sweep_taus"],
                                  self.cfg["workload"]["seed"])
        _write(self.out / "quality_sweep.csv", write_quality_csv(reports))
        return ["quality_sweep.csv"]

    def stage_train(self) -> list[str]:
        w = self._load_workload()
        graph = self._load_graph()
        if list(graph.embeddings.names) != w.space.names:
            raise ValueError("graph parameter names do not match the workload space")
        files = []
        kind = self.train_cfg.encoder_kind
        for seed in self.cfg["seeds"]:
            ds = self._load_dataset(seed)
            model = train(ds, graph, w.space, replace(self.train_cfg, seed=seed))
            path = self.model_path(kind, seed)
            _write(path, model_to_json(model))
            files.append(path.name)
        return files

    def _tune_one(self, seed: int):
        kind = self.train_cfg.encoder_kind
        model = model_from_json(self.model_path(kind, seed).read_text())
        ds = self._load_dataset(seed)
        out = {"hbo": hbo_run(model, ds, replace(self.hbo_cfg, seed=seed))}
        if self.cfg["tune"]["run_vbo"]:
            out["vbo"] = vbo_run(model, ds, replace(self.hbo_cfg, seed=seed))
        return out

    def stage_tune(self) -> list[str]:
        seeds = self.cfg["seeds"]
        workers = min(_threads(), len(seeds))
        if workers > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(self._tune_one, seeds))
        else:
            results = [self._tune_one(s) for s in seeds]
        files = []
        methods = ["hbo"] + (["vbo"] if self.cfg["tune"]["run_vbo"] else [])
        for method in methods:
            for seed, res in zip(seeds, results):
                hist = res[method]
                _write(self.out / f"history_{method}_seed{seed}.csv",
                       history_to_csv(hist))
                _write(self.out / f"best_config_{method}_seed{seed}.json",
                       json.dumps(hist.best_config, sort_keys=True,
                                  separators=(",", ":")))
                files += [f"history_{method}_seed{seed}.csv",
                          f"best_config_{method}_seed{seed}.json"]
            rows = convergence_report([res[method] for res in results])
            _write(self.out / f"convergence_{method}.csv", convergence_to_csv(rows))
            files.append(f"convergence_{method}.csv")
        return sorted(files)

    def stage_validate_affinity(self) -> list[str]:
        kind = self.train_cfg.encoder_kind
        k = self.cfg["validate"]["top_k"]
        files = []
        rows = ["seed,auroc,auprc,sigma"]
        for seed in self.cfg["seeds"]:
            model = model_from_json(self.model_path(kind, seed).read_text())
            ds = self._load_dataset(seed)
            rep = affinity_validation(model, ds, k,
                                      replace(self.hbo_cfg, seed=seed), seed)
            rows.append(f"{seed},{rep.auroc!r},{rep.auprc!r},{rep.sigma!r}")
            _write(self.out / f"affinity_trend_seed{seed}.csv", trend_to_csv(rep.bins))
            files.append(f"affinity_trend_seed{seed}.csv")
            if seed == self.cfg["seeds"][0]:
                _write(self.out / "affinity_report_first_seed.csv",
                       affinity_report_to_csv(rep))
                files.append("affinity_report_first_seed.csv")
        _write(self.out / "affinity_report.csv", "\n".join(rows) + "\n")
        files.append("affinity_report.csv")
        return sorted(files)

    def stage_ablate(self) -> list[str]:
        w = self._load_workload()
        cells, _ = run_ablation(
            w, self.cfg["seeds"],
            n_samples=self.cfg["dataset"]["n_samples"],
            d_emb=self.cfg["embeddings"]["d_emb"],
            tau=self.cfg["graph"]["tau"],
            train_cfg=self.train_cfg, hbo_cfg=self.hbo_cfg)
        _write(self.out / "ablation.csv", ablation_to_csv(cells))
        return ["ablation.csv"]

    def stage_heatmap(self) -> list[str]:
        w = self._load_workload()
        pair = self.cfg["heatmap"]["pair"]
        if pair is None:
            if len(w.inter_i) == 0:
                raise ValueError("workload has no planted pair; set heatmap.pair")
            pair = (int(w.inter_i[0]), int(w.inter_j[0]))
        i, j = int(pair[0]), int(pair[1])
        mid = (w.space.lower + w.space.upper) / 2.0
        m = heatmap_slice(w, i, j, self.cfg["heatmap"]["grid"], mid)
        name = f"heatmap_{i}_{j}.csv"
        _write(self.out / name, write_heatmap_csv(m))
        return [name]

    # -- driver -----------------------------------------------------------
    def run_stage(self, stage: str) -> list[str]:
        fn = {
            "gen-data": self.stage_gen_data,
            "build-graph": self.stage_build_graph,
            "sweep-threshold": self.stage_sweep_threshold,
            "train": self.stage_train,
            "tune": self.stage_tune,
            "validate-affinity": self.stage_validate_affinity,
            "ablate": self.stage_ablate,
            "heatmap": self.stage_heatmap,
        }[stage]
        files = fn()
        self.manifest_stages[stage] = files
        self.write_manifest()
        return files

    def write_manifest(self):
        manifest = {
            "schema_version": 1,
            "package_version": __version__,
            "config_hash": _config_hash(self.raw),
            "config": self.raw,
            "effective_seeds": list(self.cfg["seeds"]),
            "out_dir": str(self.out),
            "stages": {k: self.manifest_stages[k]
                       for k in sorted(self.manifest_stages)},
        }
        _write(self.out / "manifest.json",
               json.dumps(manifest, sort_keys=True, separators=(",", ":")))


def run_pipeline(config_path: str, subcommand: str, out=None, seed=None,
                 stages=None) -> int:
    """Exit status 0 on success, 1 for config problems, 2 for stage failures."""
    try:
        raw = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    diags = validate_config(raw)
    if diags:
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return 1
    run = _Run(raw, out_override=out, seed_override=seed)
    if subcommand == "all":
        wanted = run.cfg["stages"]
        if stages:
            wanted = [s for s in wanted if s in stages]
        todo = [s for s in STAGES if s in wanted]
    else:
        todo = [subcommand]
    for stage in todo:
        try:
            files = run.run_stage(stage)
        except Exception as exc:
            print(f"stage {stage} failed: {exc}", file=sys.stderr)
            return 2
        print(f"[{stage}] wrote {len(files)} file(s) to {run.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="reltune",
        description="Relation-aware latent-space configuration tuning pipeline")
    parser.add_argument("subcommand", choices=list(STAGES) + ["all"])
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None,
                        help="replace the seed list with this single seed")
    parser.add_argument("--stages", default=None,
                        help="comma-separated subset to run with 'all'")
    args = parser.parse_args(argv)
    stages = args.stages.split(",") if args.stages else None
    return run_pipeline(args.config, args.subcommand, out=args.out,
                        seed=args.seed, stages=stages)


if __name__ == "__main__":
    sys.exit(main())
