"""Polyline encoder and actor/critic/predictor heads on the autodiff core.

Architecture: per-node 2-layer MLP with kind one-hot appended, masked max-pool
per polyline, single-head scaled dot-product self-attention across polylines,
masked mean-pool to a global feature. Heads are small MLPs; the actor carries a
state-independent log-std vector clamped to [-5, 2].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, constant, masked_max, masked_softmax, parameter
from .obs import FEATURE_DIM, N_KINDS, PolylineBatch

HIDDEN = 64
ACTION_DIM = 2
PRED_STEPS = 20          # prediction horizon: 20 steps at 0.1 s
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
CHECKPOINT_VERSION = 1
GRID_INPUT = 3 * 32 * 32


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class PolicyParams:
    """Named parameter tensors for the full encoder + heads stack."""

    def __init__(self, rng: np.random.Generator | None = None,
                 grid_mode: bool = False):
        rng = rng or np.random.default_rng(0)
        self.grid_mode = grid_mode
        self.snapshot = 0
        d_in = FEATURE_DIM + N_KINDS
        self.tensors: dict[str, Tensor] = {}

        def p(name, arr):
            t = parameter(np.asarray(arr, dtype=float), name)
            self.tensors[name] = t
            return t

        if grid_mode:
            p("g_w1", _linear_init(rng, GRID_INPUT, HIDDEN))
            p("g_b1", np.zeros(HIDDEN))
            p("g_w2", _linear_init(rng, HIDDEN, HIDDEN))
            p("g_b2", np.zeros(HIDDEN))
        else:
            p("sub_w1", _linear_init(rng, d_in, HIDDEN))
            p("sub_b1", np.zeros(HIDDEN))
            p("sub_w2", _linear_init(rng, HIDDEN, HIDDEN))
            p("sub_b2", np.zeros(HIDDEN))
            p("att_wq", _linear_init(rng, HIDDEN, HIDDEN))
            p("att_wk", _linear_init(rng, HIDDEN, HIDDEN))
            p("att_wv", _linear_init(rng, HIDDEN, HIDDEN))
        p("actor_w1", _linear_init(rng, HIDDEN, HIDDEN))
        p("actor_b1", np.zeros(HIDDEN))
        p("actor_w2", 0.01 * _linear_init(rng, HIDDEN, ACTION_DIM))
        p("actor_b2", np.zeros(ACTION_DIM))
        p("log_std", np.full(ACTION_DIM, -0.5))
        p("critic_w1", _linear_init(rng, HIDDEN, HIDDEN))
        p("critic_b1", np.zeros(HIDDEN))
        p("critic_w2", _linear_init(rng, HIDDEN, 1))
        p("critic_b2", np.zeros(1))
        p("pred_w1", _linear_init(rng, HIDDEN, HIDDEN))
        p("pred_b1", np.zeros(HIDDEN))
        p("pred_w2", 0.01 * _linear_init(rng, HIDDEN, PRED_STEPS * 2))
        p("pred_b2", np.zeros(PRED_STEPS * 2))

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def named(self, prefixes: tuple[str, ...] | None = None) -> list[Tensor]:
        if prefixes is None:
            return list(self.tensors.values())
        return [t for n, t in self.tensors.items() if n.startswith(prefixes)]

    def actor_params(self) -> list[Tensor]:
        return self.named(("g_", "sub_", "att_", "actor_", "log_std"))

    def critic_params(self) -> list[Tensor]:
        return self.named(("g_", "sub_", "att_", "critic_"))

    def predictor_params(self) -> list[Tensor]:
        return self.named(("sub_", "att_", "pred_"))

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    # -- checkpoint round trip ---------------------------------------------

    def save(self, path):
        arrays = {n: t.value for n, t in self.tensors.items()}
        meta = json.dumps({"version": CHECKPOINT_VERSION, "grid_mode": self.grid_mode,
                           "names": sorted(arrays)})
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "PolicyParams":
        data = np.load(path)
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        params = cls(np.random.default_rng(0), grid_mode=meta.get("grid_mode", False))
        for name in params.tensors:
            params.tensors[name].value = np.array(data[name], dtype=float)
        return params

    def copy(self) -> "PolicyParams":
        other = PolicyParams(np.random.default_rng(0), grid_mode=self.grid_mode)
        for n, t in self.tensors.items():
            other.tensors[n].value = t.value.copy()
        return other


def trim(batch: PolylineBatch) -> PolylineBatch:
    """Drop all-padding polylines and trailing padded nodes (valid entries are
    always packed at the front)."""
    p_used = max(1, int(batch.poly_mask.sum()))
    n_used = max(1, int(batch.node_mask.sum(axis=1).max()))
    return PolylineBatch(batch.nodes[:p_used, :n_used],
                         batch.node_mask[:p_used, :n_used],
                         batch.poly_mask[:p_used], batch.kinds[:p_used])


def stack_batches(batches: list[PolylineBatch]) -> PolylineBatch:
    """Stack observations into batched arrays sized to the largest used
    polyline/node counts, padding smaller observations with masked zeros."""
    p = max(1, max(int(b.poly_mask.sum()) for b in batches))
    n = max(1, max(int(b.node_mask.sum(axis=1).max()) for b in batches))
    m = len(batches)
    nodes = np.zeros((m, p, n, batches[0].nodes.shape[-1]))
    node_mask = np.zeros((m, p, n), dtype=bool)
    poly_mask = np.zeros((m, p), dtype=bool)
    kinds = np.zeros((m, p), dtype=int)
    for i, b in enumerate(batches):
        bp = min(p, b.nodes.shape[0])
        bn = min(n, b.nodes.shape[1])
        nodes[i, :bp, :bn] = b.nodes[:bp, :bn]
        node_mask[i, :bp, :bn] = b.node_mask[:bp, :bn]
        poly_mask[i, :bp] = b.poly_mask[:bp]
        kinds[i, :bp] = b.kinds[:bp]
    return PolylineBatch(nodes, node_mask, poly_mask, kinds)


def encode(batch: PolylineBatch, params: PolicyParams) -> tuple[Tensor, Tensor]:
    """Hierarchical polyline encoding.

    Accepts a single observation (nodes (P, N, F)) or a stacked batch
    (nodes (B, P, N, F)). Returns (global_feature (.., 1, H) flattened to
    (B, H) / (1, H), per_polyline_features (.., P, H)).
    """
    nodes = batch.nodes
    batched = nodes.ndim == 4
    P, N = nodes.shape[-3], nodes.shape[-2]
    kinds = batch.kinds
    onehot = np.eye(N_KINDS)[kinds]                      # (.., P, K)
    onehot = np.broadcast_to(onehot[..., None, :], nodes.shape[:-1] + (N_KINDS,))
    x = np.concatenate([nodes, onehot], axis=-1)
    x = x * batch.node_mask[..., None]
    h = constant(x)
    h = (h @ params["sub_w1"] + params["sub_b1"]).relu()
    h = (h @ params["sub_w2"] + params["sub_b2"]).relu()
    node_mask = np.broadcast_to(batch.node_mask[..., None], h.shape)
    poly = masked_max(h, node_mask, axis=h.value.ndim - 2)   # (.., P, H)

    q = poly @ params["att_wq"]
    k = poly @ params["att_wk"]
    v = poly @ params["att_wv"]
    scores = (q @ k.T) * (1.0 / math.sqrt(HIDDEN))
    attn = masked_softmax(scores, batch.poly_mask[..., None, :])
    attended = attn @ v                                   # (.., P, H)

    n_valid = np.maximum(1, batch.poly_mask.sum(axis=-1, keepdims=True))
    pool_w = constant((batch.poly_mask / n_valid)[..., None, :])
    global_feat = pool_w @ attended                       # (.., 1, H)
    if batched:
        global_feat = global_feat.reshape(nodes.shape[0], HIDDEN)
    else:
        global_feat = global_feat.reshape(1, HIDDEN)
    return global_feat, attended


def encode_grid(grid: np.ndarray, params: PolicyParams) -> Tensor:
    h = constant(grid.reshape(1, -1))
    h = (h @ params["g_w1"] + params["g_b1"]).relu()
    h = (h @ params["g_w2"] + params["g_b2"]).relu()
    return h


def actor_forward(global_feat: Tensor, params: PolicyParams) -> tuple[Tensor, Tensor]:
    h = (global_feat @ params["actor_w1"] + params["actor_b1"]).relu()
    mu = h @ params["actor_w2"] + params["actor_b2"]
    log_std = params["log_std"].clip(LOG_STD_MIN, LOG_STD_MAX)
    sigma = log_std.exp()
    return mu, sigma


def critic_forward(global_feat: Tensor, params: PolicyParams) -> Tensor:
    h = (global_feat @ params["critic_w1"] + params["critic_b1"]).relu()
    return h @ params["critic_w2"] + params["critic_b2"]


def predictor_forward(agent_feat: Tensor, params: PolicyParams) -> Tensor:
    """Maps an agent-history polyline feature (1, H) to (PRED_STEPS, 2) offsets."""
    h = (agent_feat @ params["pred_w1"] + params["pred_b1"]).relu()
    out = h @ params["pred_w2"] + params["pred_b2"]
    return out.reshape(PRED_STEPS, 2)


def gaussian_log_prob(raw_action: np.ndarray, mu: Tensor, sigma: Tensor) -> Tensor:
    """Diagonal Gaussian log density of a fixed sample under (mu, sigma)."""
    a = constant(np.asarray(raw_action, dtype=float).reshape(mu.shape))
    z = (a - mu) / sigma
    return (z.square() * -0.5 - sigma.log()).sum() - 0.5 * ACTION_DIM * math.log(2.0 * math.pi)


def gaussian_entropy(sigma: Tensor) -> Tensor:
    return sigma.log().sum() + 0.5 * ACTION_DIM * (1.0 + math.log(2.0 * math.pi))


@dataclass
class PolicyOutput:
    mu: np.ndarray
    sigma: np.ndarray
    value: float


def policy_forward_np(batch_or_grid, params: PolicyParams) -> PolicyOutput:
    """Inference-only forward pass (values detached)."""
    if params.grid_mode:
        g = encode_grid(batch_or_grid, params)
    else:
        g, _ = encode(trim(batch_or_grid), params)
    mu, sigma = actor_forward(g, params)
    v = critic_forward(g, params)
    return PolicyOutput(mu.value.ravel().copy(), sigma.value.ravel().copy(),
                        float(v.value.ravel()[0]))
