"""Performance-aware latent representation of configurations.

A graph-attention encoder (or a plain MLP for the relation-free ablation)
maps a normalized configuration, injected as per-node values alongside
static semantic embeddings, to a latent vector by mean-pooling the final
node states. A decoder reconstructs the configuration from the latent
vector and a metric head predicts normalized (throughput, latency); both
train jointly on

    lambda_recon * ||x - x_hat||^2 + lambda_metric * ||y - y_hat||^2

with hand-derived analytic gradients (finite-difference checked in the
test suite) under adaptive-moment gradient descent.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit as _sigmoid

from . import kernels
from .relgraph import RelationalGraph
from .space import ConfigSample, ParameterSpace, normalize_batch, normalize_config

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite (typically a bad learning rate)."""


@dataclass(frozen=True)
class TrainConfig:
    lambda_recon: float = 1.0
    lambda_metric: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 128
    seed: int = 0
    encoder_kind: str = "gat"      # "mlp" drops graph + semantics (ablation)
    n_layers: int = 2
    hidden_dim: int = 32
    latent_dim: int = 32
    heads: int = 1
    d_sem: int = 8
    mlp_hidden: int = 64           # decoder / metric head hidden width

    def __post_init__(self):
        if self.lambda_recon < 0 or self.lambda_metric < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lambda_recon + self.lambda_metric <= 0:
            raise ValueError("at least one loss weight must be positive")
        if self.encoder_kind not in ("gat", "mlp"):
            raise ValueError(f"unknown encoder_kind {self.encoder_kind!r}")
        if self.n_layers < 1:
            raise ValueError("need at least one encoder layer")


@dataclass
class Model:
    """Trained weights plus everything needed to run them standalone."""

    space: ParameterSpace
    adjacency: np.ndarray
    semantic: np.ndarray               # (n, d_sem_eff) static node features
    params: dict
    cfg: TrainConfig
    metric_mean: np.ndarray
    metric_std: np.ndarray
    graph_hash: str
    loss_history: tuple = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def mask(self) -> np.ndarray:
        # neighborhoods include self; isolated nodes aggregate over self only
        return self.adjacency + np.eye(self.n)

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim


def elu(x):
    return np.where(x > 0.0, x, np.expm1(x))


def elu_grad(pre):
    return np.where(pre > 0.0, 1.0, np.exp(pre))


def leaky_relu(x):
    return np.where(x >= 0.0, x, kernels.LEAKY_SLOPE * x)


# ---------------------------------------------------------------------------
# architecture

def _gat_dims(cfg: TrainConfig, in_dim: int) -> list[tuple[int, int]]:
    dims = []
    cur = in_dim
    for layer in range(cfg.n_layers):
        out = cfg.latent_dim if layer == cfg.n_layers - 1 else cfg.hidden_dim
        if out % cfg.heads:
            raise ValueError(f"layer width {out} not divisible by {cfg.heads} heads")
        dims.append((cur, out))
        cur = out
    return dims


def _glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: TrainConfig, n: int, d_sem_eff: int, rng) -> dict:
    params: dict = {}
    if cfg.encoder_kind == "gat":
        for layer, (fin, fout) in enumerate(_gat_dims(cfg, 1 + d_sem_eff)):
            head_dim = fout // cfg.heads
            for h in range(cfg.heads):
                params[f"enc{layer}.h{h}.W"] = _glorot(rng, fin, head_dim, (fin, head_dim))
                params[f"enc{layer}.h{h}.a"] = _glorot(rng, 2 * head_dim, 1, (2 * head_dim,))
    else:
        params["enc0.W"] = _glorot(rng, n, cfg.hidden_dim, (n, cfg.hidden_dim))
        params["enc0.b"] = np.zeros(cfg.hidden_dim)
        params["enc1.W"] = _glorot(rng, cfg.hidden_dim, cfg.latent_dim,
                                   (cfg.hidden_dim, cfg.latent_dim))
        params["enc1.b"] = np.zeros(cfg.latent_dim)
    dz, hid = cfg.latent_dim, cfg.mlp_hidden
    params["dec0.W"] = _glorot(rng, dz, hid, (dz, hid))
    params["dec0.b"] = np.zeros(hid)
    params["dec1.W"] = _glorot(rng, hid, n, (hid, n))
    params["dec1.b"] = np.zeros(n)
    params["met0.W"] = _glorot(rng, dz, hid, (dz, hid))
    params["met0.b"] = np.zeros(hid)
    params["met1.W"] = _glorot(rng, hid, 2, (hid, 2))
    params["met1.b"] = np.zeros(2)
    return params


# ---------------------------------------------------------------------------
# forward passes

def attention_coefficients(h_center, h_neighbors, W, a) -> np.ndarray:
    """Softmax attention of a center node over its neighborhood (self included).

    ``alpha_j = softmax_j(LeakyReLU(a . [W h_center || W h_j]))``, slope 0.2.
    """
    H = np.atleast_2d(np.asarray(h_neighbors, dtype=float))
    if H.shape[0] == 0:
        raise ValueError("neighborhood must be nonempty")
    h = W.shape[1]
    s = float((np.asarray(h_center, dtype=float) @ W) @ a[:h])
    t = (H @ W) @ a[h:]
    e = leaky_relu(s + t)
    e = e - e.max()
    w = np.exp(e)
    return w / w.sum()


def _as_mask(graph) -> np.ndarray:
    A = graph.adjacency if isinstance(graph, RelationalGraph) else np.asarray(graph, dtype=float)
    return A + np.eye(A.shape[0])


def gat_layer_forward(features, graph, weights) -> np.ndarray:
    """One attention layer over a single graph instance: ``ELU(sum_j alpha_ij W e_j)``."""
    W, a = weights
    feats = np.ascontiguousarray(np.atleast_2d(np.asarray(features, dtype=float)))
    if feats.shape[1] != W.shape[0]:
        raise ValueError(f"feature dim {feats.shape[1]} does not match W input {W.shape[0]}")
    mask = np.ascontiguousarray(_as_mask(graph))
    out, _ = kernels.gat_forward(feats[None], W, a, mask)
    return out[0]


def _node_features(model: Model, Xn: np.ndarray) -> np.ndarray:
    B, n = Xn.shape
    sem = np.broadcast_to(model.semantic, (B,) + model.semantic.shape)
    return np.ascontiguousarray(np.concatenate([Xn[:, :, None], sem], axis=2))


def _encode_forward(model: Model, Xn: np.ndarray):
    cfg = model.cfg
    if cfg.encoder_kind == "mlp":
        h_pre = Xn @ model.params["enc0.W"] + model.params["enc0.b"]
        h = elu(h_pre)
        z = h @ model.params["enc1.W"] + model.params["enc1.b"]
        return z, {"kind": "mlp", "h_pre": h_pre, "h": h, "Xn": Xn}
    mask = np.ascontiguousarray(model.mask)
    feats = _node_features(model, Xn)
    layer_in = [feats]
    caches = []
    cur = feats
    for layer in range(cfg.n_layers):
        outs, lcache = [], []
        for h in range(cfg.heads):
            W = model.params[f"enc{layer}.h{h}.W"]
            a = model.params[f"enc{layer}.h{h}.a"]
            out, cache = kernels.gat_forward(cur, W, a, mask)
            outs.append(out)
            lcache.append(cache)
        cur = np.ascontiguousarray(np.concatenate(outs, axis=2))
        caches.append(lcache)
        layer_in.append(cur)
    z = cur.mean(axis=1)
    return z, {"kind": "gat", "layer_in": layer_in, "caches": caches, "mask": mask}


def encode_batch(model: Model, Xn: np.ndarray) -> np.ndarray:
    Xn = np.ascontiguousarray(np.asarray(Xn, dtype=float))
    if Xn.ndim != 2 or Xn.shape[1] != model.n:
        raise ValueError(f"expected (B, {model.n}) normalized configurations")
    if Xn.min() < -1e-9 or Xn.max() > 1.0 + 1e-9:
        raise ValueError("normalized configuration outside [0, 1]")
    z, _ = _encode_forward(model, np.clip(Xn, 0.0, 1.0))
    return z


def encode(model: Model, x_norm: Sequence[float]) -> np.ndarray:
    """Latent vector of one normalized configuration (mean-pooled node states)."""
    return encode_batch(model, np.asarray(x_norm, dtype=float)[None])[0]


def _decode_forward(model: Model, Z: np.ndarray):
    h_pre = Z @ model.params["dec0.W"] + model.params["dec0.b"]
    h = elu(h_pre)
    o = h @ model.params["dec1.W"] + model.params["dec1.b"]
    return _sigmoid(o), (h_pre, h, o)


def decode_batch(model: Model, Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    xh, _ = _decode_forward(model, Z)
    return xh


def decode(model: Model, z: Sequence[float]) -> np.ndarray:
    """Normalized configuration reconstructed from a latent vector (logistic output)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.latent_dim,):
        raise ValueError(f"expected latent dimension {model.latent_dim}")
    if not np.isfinite(z).all():
        raise ValueError("latent vector must be finite")
    return decode_batch(model, z[None])[0]


def _head_forward(model: Model, Z: np.ndarray):
    h_pre = Z @ model.params["met0.W"] + model.params["met0.b"]
    h = elu(h_pre)
    yh = h @ model.params["met1.W"] + model.params["met1.b"]
    return yh, (h_pre, h)


def predict_batch(model: Model, Z: np.ndarray) -> np.ndarray:
    yh, _ = _head_forward(model, np.asarray(Z, dtype=float))
    return yh


def predict_metrics(model: Model, z: Sequence[float]) -> tuple[float, float]:
    """Predicted (throughput, latency) in z-score-normalized metric space."""
    z = np.asarray(z, dtype=float)
    if not np.isfinite(z).all():
        raise ValueError("latent vector must be finite")
    yh = predict_batch(model, z[None])[0]
    return float(yh[0]), float(yh[1])


def denormalize_metrics(model: Model, yh) -> np.ndarray:
    return np.asarray(yh, dtype=float) * model.metric_std + model.metric_mean


def loss(x, x_hat, y_norm, y_hat, cfg: TrainConfig) -> float:
    """``lambda_recon ||x - x_hat||^2 + lambda_metric ||y - y_hat||^2`` for one sample."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    y_norm = np.asarray(y_norm, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if x.shape != x_hat.shape or y_norm.shape != y_hat.shape:
        raise ValueError("mismatched shapes")
    return float(cfg.lambda_recon * ((x - x_hat) ** 2).sum()
                 + cfg.lambda_metric * ((y_norm - y_hat) ** 2).sum())


# ---------------------------------------------------------------------------
# backward

def _loss_and_grads(model: Model, Xn: np.ndarray, Yn: np.ndarray, cfg: TrainConfig):
    B = Xn.shape[0]
    z, enc_cache = _encode_forward(model, Xn)
    xh, (dh_pre, dh, _) = _decode_forward(model, z)
    yh, (mh_pre, mh) = _head_forward(model, z)

    rx = xh - Xn
    ry = yh - Yn
    total = float((cfg.lambda_recon * (rx * rx).sum()
                   + cfg.lambda_metric * (ry * ry).sum()) / B)

    grads = {}
    # decoder: logistic output layer
    do = (2.0 * cfg.lambda_recon / B) * rx * xh * (1.0 - xh)
    grads["dec1.W"] = dh.T @ do
    grads["dec1.b"] = do.sum(axis=0)
    dhid = (do @ model.params["dec1.W"].T) * elu_grad(dh_pre)
    grads["dec0.W"] = z.T @ dhid
    grads["dec0.b"] = dhid.sum(axis=0)
    dz = dhid @ model.params["dec0.W"].T

    # metric head: linear output layer
    dy = (2.0 * cfg.lambda_metric / B) * ry
    grads["met1.W"] = mh.T @ dy
    grads["met1.b"] = dy.sum(axis=0)
    mhid = (dy @ model.params["met1.W"].T) * elu_grad(mh_pre)
    grads["met0.W"] = z.T @ mhid
    grads["met0.b"] = mhid.sum(axis=0)
    dz = dz + mhid @ model.params["met0.W"].T

    if enc_cache["kind"] == "mlp":
        grads["enc1.W"] = enc_cache["h"].T @ dz
        grads["enc1.b"] = dz.sum(axis=0)
        dh1 = (dz @ model.params["enc1.W"].T) * elu_grad(enc_cache["h_pre"])
        grads["enc0.W"] = enc_cache["Xn"].T @ dh1
        grads["enc0.b"] = dh1.sum(axis=0)
        return total, grads

    n = model.n
    dout = np.ascontiguousarray(np.repeat(dz[:, None, :] / n, n, axis=1))
    mask = enc_cache["mask"]
    for layer in reversed(range(cfg.n_layers)):
        feats = enc_cache["layer_in"][layer]
        head_dim = dout.shape[2] // cfg.heads
        dfeats_total = np.zeros_like(feats)
        for h in range(cfg.heads):
            W = model.params[f"enc{layer}.h{h}.W"]
            a = model.params[f"enc{layer}.h{h}.a"]
            gslice = np.ascontiguousarray(dout[:, :, h * head_dim:(h + 1) * head_dim])
            dfeats, dW, da = kernels.gat_backward(
                gslice, feats, W, a, mask, enc_cache["caches"][layer][h])
            dfeats_total += dfeats
            grads[f"enc{layer}.h{h}.W"] = dW
            grads[f"enc{layer}.h{h}.a"] = da
        dout = np.ascontiguousarray(dfeats_total)
    return total, grads


def _samples_to_arrays(model_space: ParameterSpace, dataset: Sequence[ConfigSample]):
    X = np.array([s.x for s in dataset], dtype=float)
    Y = np.array([s.y for s in dataset], dtype=float)
    return X, Y


def gradient(model: Model, batch: Sequence[ConfigSample], cfg: TrainConfig) -> dict:
    """Analytic gradient of the mean batch loss w.r.t. every weight."""
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    X, Y = _samples_to_arrays(model.space, batch)
    Xn = normalize_batch(model.space, X)
    Yn = (Y - model.metric_mean) / model.metric_std
    total, grads = _loss_and_grads(model, Xn, Yn, cfg)
    if not math.isfinite(total):
        raise TrainingDivergedError("non-finite loss in gradient computation")
    return grads


def batch_loss(model: Model, batch: Sequence[ConfigSample], cfg: TrainConfig) -> float:
    X, Y = _samples_to_arrays(model.space, batch)
    Xn = normalize_batch(model.space, X)
    Yn = (Y - model.metric_mean) / model.metric_std
    z, _ = _encode_forward(model, Xn)
    xh, _ = _decode_forward(model, z)
    yh, _ = _head_forward(model, z)
    return float((cfg.lambda_recon * ((xh - Xn) ** 2).sum()
                  + cfg.lambda_metric * ((yh - Yn) ** 2).sum()) / len(batch))


# ---------------------------------------------------------------------------
# training

def pca_reduce(vectors: np.ndarray, k: int) -> np.ndarray:
    """Project rows onto their top-k principal directions, sign-fixed and
    scaled to unit max magnitude so node features stay comparable."""
    V = np.asarray(vectors, dtype=float)
    n, d = V.shape
    k_eff = max(0, min(k, n, d))
    if k_eff == 0:
        return np.zeros((n, 0))
    centered = V - V.mean(axis=0)
    _, _, Vt = np.linalg.svd(centered, full_matrices=False)
    comps = Vt[:k_eff].copy()
    for r in range(k_eff):
        j = int(np.argmax(np.abs(comps[r])))
        if comps[r, j] < 0:
            comps[r] = -comps[r]
    scores = centered @ comps.T
    peak = np.abs(scores).max()
    if peak > 0:
        scores = scores / peak
    return scores


def graph_fingerprint(graph: RelationalGraph) -> str:
    h = hashlib.sha256()
    h.update("\x1f".join(graph.embeddings.names).encode())
    h.update(repr(float(graph.tau)).encode())
    h.update(np.ascontiguousarray(graph.adjacency, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(graph.embeddings.vectors, dtype="<f8").tobytes())
    return h.hexdigest()


def train(dataset: Sequence[ConfigSample], graph: RelationalGraph,
          space: ParameterSpace, cfg: TrainConfig) -> Model:
    """Jointly fit encoder, decoder and metric head on (config, metrics) samples.

    Deterministic for a fixed seed. The epoch with the lowest full-data
    loss supplies the returned weights, so the final loss never exceeds the
    initial one; a non-finite loss aborts with a diagnostic.
    """
    if len(dataset) < 2:
        raise ValueError("need at least 2 samples")
    if graph.n != space.n:
        raise ValueError("graph node count must equal space dimension")

    X, Y = _samples_to_arrays(space, dataset)
    Xn = normalize_batch(space, X)
    metric_mean = Y.mean(axis=0)
    metric_std = np.maximum(Y.std(axis=0), 1e-12)
    Yn = (Y - metric_mean) / metric_std

    semantic = pca_reduce(graph.embeddings.vectors, cfg.d_sem)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, space.n, semantic.shape[1], rng)

    model = Model(space=space, adjacency=graph.adjacency.copy(), semantic=semantic,
                  params=params, cfg=cfg, metric_mean=metric_mean,
                  metric_std=metric_std, graph_hash=graph_fingerprint(graph))

    def full_loss():
        l, _ = _encode_forward(model, Xn)
        xh, _ = _decode_forward(model, l)
        yh, _ = _head_forward(model, l)
        return float((cfg.lambda_recon * ((xh - Xn) ** 2).sum()
                      + cfg.lambda_metric * ((yh - Yn) ** 2).sum()) / len(dataset))

    history = [full_loss()]
    best_loss = history[0]
    best_params = {k: v.copy() for k, v in params.items()}

    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    N = len(dataset)
    bs = max(1, min(cfg.batch_size, N))
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        for start in range(0, N, bs):
            idx = order[start:start + bs]
            batch_loss_val, grads = _loss_and_grads(model, Xn[idx], Yn[idx], cfg)
            if not math.isfinite(batch_loss_val):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch} (lr={cfg.learning_rate})")
            step += 1
            b1c = 1.0 - ADAM_BETA1 ** step
            b2c = 1.0 - ADAM_BETA2 ** step
            for key, g in grads.items():
                m_state[key] = ADAM_BETA1 * m_state[key] + (1 - ADAM_BETA1) * g
                v_state[key] = ADAM_BETA2 * v_state[key] + (1 - ADAM_BETA2) * g * g
                params[key] = params[key] - cfg.learning_rate * (
                    m_state[key] / b1c) / (np.sqrt(v_state[key] / b2c) + ADAM_EPS)
        cur = full_loss()
        if not math.isfinite(cur):
            raise TrainingDivergedError(
                f"loss became non-finite after epoch {epoch} (lr={cfg.learning_rate})")
        history.append(cur)
        if cur < best_loss:
            best_loss = cur
            best_params = {k: v.copy() for k, v in params.items()}

    model.params = best_params
    model.loss_history = tuple(history)
    return model


# ---------------------------------------------------------------------------
# checkpoint format (versioned JSON, tensors as little-endian float64 base64)

def _enc_array(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(float)


def model_to_json(model: Model) -> str:
    payload = {
        "schema_version": 1,
        "cfg": {k: getattr(model.cfg, k) for k in TrainConfig.__dataclass_fields__},
        "space": model.space.to_dict(),
        "graph_hash": model.graph_hash,
        "adjacency": _enc_array(model.adjacency),
        "semantic": _enc_array(model.semantic),
        "metric_mean": _enc_array(model.metric_mean),
        "metric_std": _enc_array(model.metric_std),
        "params": {k: _enc_array(v) for k, v in sorted(model.params.items())},
        "loss_history": [repr(v) for v in model.loss_history],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def model_from_json(text: str) -> Model:
    d = json.loads(text)
    if d.get("schema_version") != 1:
        raise ValueError(f"unsupported checkpoint schema {d.get('schema_version')}")
    cfg = TrainConfig(**d["cfg"])
    return Model(
        space=ParameterSpace.from_dict(d["space"]),
        adjacency=_dec_array(d["adjacency"]),
        semantic=_dec_array(d["semantic"]),
        params={k: _dec_array(v) for k, v in d["params"].items()},
        cfg=cfg,
        metric_mean=_dec_array(d["metric_mean"]),
        metric_std=_dec_array(d["metric_std"]),
        graph_hash=d["graph_hash"],
        loss_history=tuple(float(v) for v in d["loss_history"]),
    )
