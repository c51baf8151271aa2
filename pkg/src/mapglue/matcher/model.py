"""Dual-graph transformer and dual-softmax matching head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..descriptors import FusionMLP, init_linear
from ..detector import DEFAULT_ALPHA, DEFAULT_MAX_KEYPOINTS, DEFAULT_R_MAX, DEFAULT_R_MIN, DEFAULT_SCORE_FLOOR
from ..numerics import Tensor, load_checkpoint, ops, save_checkpoint
from . import graphs
from .rope import rotation_tables

DEFAULT_TAU = 0.1


@dataclass
class MatcherConfig:
    dim: int = 256
    n_layers: int = 6
    n_heads: int = 4
    tau: float = DEFAULT_TAU
    eps_min: float = graphs.DEFAULT_EPS_MIN
    alpha: float = DEFAULT_ALPHA
    r_min: float = DEFAULT_R_MIN
    r_max: float = DEFAULT_R_MAX
    max_keypoints: int = DEFAULT_MAX_KEYPOINTS
    score_floor: float = DEFAULT_SCORE_FLOOR
    resize_limit: int = 640
    c_str: int = 24
    c_sem: int = 24
    use_graphs: bool = True
    use_semantic: bool = True
    share_heads: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dim % (2 * self.n_heads):
            raise ValueError(f"dim {self.dim} must be divisible by 2 * n_heads ({2 * self.n_heads})")

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MatcherConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class SoftMatch:
    S: Tensor
    P: Tensor


@dataclass
class MatchSet:
    src_idx: np.ndarray
    ref_idx: np.ndarray
    confidence: np.ndarray
    n_src: int
    n_ref: int

    def __len__(self) -> int:
        return len(self.src_idx)

    @property
    def src_matched(self) -> np.ndarray:
        flags = np.zeros(self.n_src, dtype=bool)
        flags[self.src_idx] = True
        return flags

    @property
    def ref_matched(self) -> np.ndarray:
        flags = np.zeros(self.n_ref, dtype=bool)
        flags[self.ref_idx] = True
        return flags

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.src_idx.tolist(), self.ref_idx.tolist()))

    @classmethod
    def empty(cls, n_src: int = 0, n_ref: int = 0) -> "MatchSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0), n_src, n_ref)


def dual_softmax(S: Tensor) -> Tensor:
    """Row softmax times column softmax, elementwise."""
    return ops.mul(ops.softmax(S, axis=1), ops.softmax(S, axis=0))


def extract_matches(P: np.ndarray, tau: float = DEFAULT_TAU) -> MatchSet:
    """Mutual-argmax pairs with confidence at least ``tau`` (argmax ties -> lowest index)."""
    P = np.asarray(P)
    n, m = P.shape
    if n == 0 or m == 0:
        return MatchSet.empty(n, m)
    row_best = np.argmax(P, axis=1)
    col_best = np.argmax(P, axis=0)
    src = np.arange(n)
    keep = (col_best[row_best] == src) & (P[src, row_best] >= tau)
    src = src[keep]
    ref = row_best[keep]
    return MatchSet(src.astype(np.int64), ref.astype(np.int64), P[src, ref].astype(np.float64), n, m)


def _param(rng, shape_out, shape_in, dtype, name, params):
    w, _ = init_linear(rng, shape_out, shape_in, dtype)
    params[name] = Tensor(w, requires_grad=True, name=name)


def _mlp_params(rng, prefix, dim, dtype, params):
    w1, b1 = init_linear(rng, 2 * dim, 2 * dim, dtype)
    w2, b2 = init_linear(rng, dim, 2 * dim, dtype)
    for name, arr in (
        ("w1", w1),
        ("b1", b1),
        ("ln.g", np.ones(2 * dim, dtype=dtype)),
        ("ln.b", np.zeros(2 * dim, dtype=dtype)),
        ("w2", w2),
        ("b2", b2),
    ):
        params[f"{prefix}.{name}"] = Tensor(arr, requires_grad=True, name=f"{prefix}.{name}")


class MatcherModel:
    """Fusion MLP + L dual-graph layers + linear heads.

    All trainable tensors live in :attr:`params` under their checkpoint names.
    """

    def __init__(self, config: MatcherConfig | None = None, dtype=np.float32):
        self.config = cfg = config or MatcherConfig()
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        self.fusion = FusionMLP(cfg.c_str, cfg.c_sem, cfg.dim, rng, dtype)
        params: dict[str, Tensor] = dict(self.fusion.params)
        D = cfg.dim
        for layer in range(cfg.n_layers):
            for kind in ("self", "cross"):
                pre = f"layer{layer}.{kind}"
                _param(rng, D, D, dtype, f"{pre}.q", params)
                _param(rng, D, D, dtype, f"{pre}.k", params)
                _param(rng, D, D, dtype, f"{pre}.wx", params)
                _mlp_params(rng, f"{pre}.mlp", D, dtype, params)
        for side in ("src",) if cfg.share_heads else ("src", "ref"):
            w, b = init_linear(rng, D, D, dtype)
            # keeps the initial score matrix O(1) so the dual softmax starts near uniform
            w = (w * D**-0.25).astype(dtype)
            params[f"head.{side}.linear"] = Tensor(w, requires_grad=True, name=f"head.{side}.linear")
            params[f"head.{side}.bias"] = Tensor(b, requires_grad=True, name=f"head.{side}.bias")
        self.params = params

    # -- persistence -------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)[:5]}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"{k}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.astype(self.dtype)
            t.zero_grad()

    def save(self, path, extra: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> None:
        tensors = self.state_dict()
        if extra:
            tensors.update(extra)
        config = {"matcher": self.config.to_dict()}
        if meta:
            config.update(meta)
        save_checkpoint(path, tensors, config)

    @classmethod
    def load(cls, path) -> "MatcherModel":
        tensors, config = load_checkpoint(path)
        if not config or "matcher" not in config:
            raise ValueError(f"{path}: checkpoint has no matcher manifest")
        model = cls(MatcherConfig.from_dict(config["matcher"]))
        model.load_state_dict(tensors)
        return model

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    # -- building blocks ---------------------------------------------------

    def _heads(self, x: Tensor, n: int) -> Tensor:
        cfg = self.config
        return ops.transpose(ops.reshape(x, (n, cfg.n_heads, cfg.head_dim)), (1, 0, 2))

    def _merge(self, m: Tensor, n: int) -> Tensor:
        return ops.reshape(ops.transpose(m, (1, 0, 2)), (n, self.config.dim))

    def attention(self, prefix: str, x_q: Tensor, x_kv: Tensor, mask: np.ndarray, tables_q=None, tables_kv=None) -> Tensor:
        """Graph-masked multi-head attention messages.

        Scores are scaled inner products of (optionally rotary-encoded)
        queries and keys; only ``mask``-admitted pairs enter the softmax.
        """
        p = self.params
        n, m = x_q.shape[0], x_kv.shape[0]
        q = self._heads(ops.linear(x_q, p[f"{prefix}.q"]), n)
        k = self._heads(ops.linear(x_kv, p[f"{prefix}.k"]), m)
        v = self._heads(ops.linear(x_kv, p[f"{prefix}.wx"]), m)
        if tables_q is not None:
            q = ops.rotary(q, *tables_q)
            k = ops.rotary(k, *tables_kv)
        scores = ops.affine(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.config.head_dim))
        attn = ops.softmax(scores, axis=-1, mask=mask[None, :, :])
        return self._merge(ops.matmul(attn, v), n)

    def residual_update(self, prefix: str, x: Tensor, m: Tensor) -> Tensor:
        p = self.params
        mp = f"{prefix}.mlp"
        h = ops.linear(ops.concat([x, m]), p[f"{mp}.w1"], p[f"{mp}.b1"])
        h = ops.relu(ops.layer_norm(h, p[f"{mp}.ln.g"], p[f"{mp}.ln.b"]))
        return ops.add(x, ops.linear(h, p[f"{mp}.w2"], p[f"{mp}.b2"]))

    def score_matrix(self, x_src: Tensor, x_ref: Tensor) -> Tensor:
        p = self.params
        ref_side = "src" if self.config.share_heads else "ref"
        a = ops.linear(x_src, p["head.src.linear"], p["head.src.bias"])
        b = ops.linear(x_ref, p[f"head.{ref_side}.linear"], p[f"head.{ref_side}.bias"])
        return ops.matmul(a, ops.transpose(b))

    # -- full forward ------------------------------------------------------

    def build_graphs(self, xy_src, xy_ref, sem_src, sem_ref):
        """Per-layer intra graphs for both images and the two inter graphs."""
        cfg = self.config
        n, m = len(xy_src), len(xy_ref)
        if not cfg.use_graphs:
            intra = [(graphs.complete_intra_graph(n, l), graphs.complete_intra_graph(m, l)) for l in range(cfg.n_layers)]
            return intra, graphs.complete_inter_graph(n, m, "src->ref"), graphs.complete_inter_graph(m, n, "ref->src")
        e_src = graphs.max_pairwise_distance(xy_src)
        e_ref = graphs.max_pairwise_distance(xy_ref)
        intra = []
        for l in range(cfg.n_layers):
            eps_s = graphs.epsilon_schedule(l, cfg.n_layers, e_src, cfg.eps_min)
            eps_r = graphs.epsilon_schedule(l, cfg.n_layers, e_ref, cfg.eps_min)
            intra.append((graphs.build_intra_graph(xy_src, eps_s, l), graphs.build_intra_graph(xy_ref, eps_r, l)))
        g_sr = graphs.build_inter_graph(sem_src, sem_ref, "src->ref")
        g_rs = graphs.build_inter_graph(sem_ref, sem_src, "ref->src")
        return intra, g_sr, g_rs

    def forward(self, src, ref, size_src: tuple[int, int], size_ref: tuple[int, int]) -> SoftMatch:
        """Score two :class:`DescriptorBundle` objects; sizes are ``(width, height)``."""
        cfg = self.config
        n, m = len(src), len(ref)
        dt = self.dtype

        def desc_inputs(b):
            sem = b.d_sem if cfg.use_semantic else np.zeros_like(b.d_sem)
            return Tensor(b.d_str.astype(dt)), Tensor(sem.astype(dt))

        x_src = self.fusion(*desc_inputs(src))
        x_ref = self.fusion(*desc_inputs(ref))
        src.d_sal = x_src.data
        ref.d_sal = x_ref.data
        guide_src = src.d_sem if cfg.use_semantic else src.d_str
        guide_ref = ref.d_sem if cfg.use_semantic else ref.d_str
        intra, g_sr, g_rs = self.build_graphs(src.positions, ref.positions, guide_src, guide_ref)
        tab_src = rotation_tables(src.positions, cfg.head_dim, math.hypot(*size_src))
        tab_ref = rotation_tables(ref.positions, cfg.head_dim, math.hypot(*size_ref))
        for l in range(cfg.n_layers):
            pre = f"layer{l}.self"
            gs, gr = intra[l]
            m_src = self.attention(pre, x_src, x_src, gs.mask, tab_src, tab_src)
            m_ref = self.attention(pre, x_ref, x_ref, gr.mask, tab_ref, tab_ref)
            x_src = self.residual_update(pre, x_src, m_src)
            x_ref = self.residual_update(pre, x_ref, m_ref)
            pre = f"layer{l}.cross"
            m_src = self.attention(pre, x_src, x_ref, g_sr.mask)
            m_ref = self.attention(pre, x_ref, x_src, g_rs.mask)
            x_src = self.residual_update(pre, x_src, m_src)
            x_ref = self.residual_update(pre, x_ref, m_ref)
        S = self.score_matrix(x_src, x_ref)
        return SoftMatch(S, dual_softmax(S))
