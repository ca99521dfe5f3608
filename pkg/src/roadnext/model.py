"""Relation-aware LNN-Transformer forward pass.

Pipeline per example: first-order input differencing, CfC recurrence over the
observed context, a gated mixer that blends each state with the node's static
structural embedding, one extra CfC update per one-hop candidate, then a stack
of standard transformer encoder layers followed by bearing-biased
relation-aware layers, and finally a scoring head over candidate tokens plus a
unit-direction regression head.

Batches are formed by left-padding contexts and right-padding candidate slots;
padded steps leave the recurrent state untouched and padded tokens are fully
attention-masked, so batched outputs equal per-example outputs exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .projection import Example

CHECKPOINT_MAGIC = b"RNCK"
CHECKPOINT_VERSION = 1

KM = 1000.0  # meter inputs are scaled to kilometers


@dataclass
class ModelConfig:
    d: int = 256
    heads: int = 4
    layers_std: int = 3
    layers_rel: int = 1
    d_ffn: int = 256
    d_h: int = 256
    d_s: int = 64
    poi_dim: int = 168
    geo_dim: int = 4
    stepgeo_dim: int = 5
    gamma: float = 0.1
    dropout: float = 0.1
    seed: int = 0
    # optional variants, off in the reference configuration
    positional_encoding: bool = False
    input_gate: bool = False
    causal_history: bool = False
    # ablation flags
    use_poi: bool = True
    use_geo: bool = True
    use_struct: bool = True
    poi_diff: bool = True

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"model dim {self.d} not divisible by {self.heads} heads")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def layers(self):
        return self.layers_std + self.layers_rel

    @property
    def dgeo_dim(self):
        return self.geo_dim + self.stepgeo_dim

    @property
    def cfc_in_dim(self):
        return self.poi_dim + self.dgeo_dim + self.d_h

    @property
    def poi_slice(self):
        return slice(0, self.poi_dim)

    @property
    def geo_slice(self):
        return slice(self.poi_dim, self.poi_dim + self.dgeo_dim)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


class FeatureStore:
    """Per-node model inputs: normalized POI descriptor, geometric feature,
    structural embedding."""

    def __init__(self, descriptors, normalizer, embeddings):
        self.descriptors = descriptors
        self.normalizer = normalizer
        self.embeddings = embeddings
        self._poi_cache = {}

    def poi(self, node):
        node = int(node)
        got = self._poi_cache.get(node)
        if got is None:
            got = self.normalizer.apply(self.descriptors[node].x)
            self._poi_cache[node] = got
        return got

    def geo(self, node):
        return self.descriptors[int(node)].geo

    def struct(self, node):
        return self.embeddings.vector(int(node))


# -- parameters ----------------------------------------------------------------


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_params(config: ModelConfig, dtype=np.float32) -> dict:
    """Named tensor registry; every learnable appears exactly once."""
    rng = np.random.default_rng(config.seed)
    dt = np.dtype(dtype)
    p = {}
    dh, d = config.d_h, config.d
    # CfC cell: softplus(tau) == 1 at init
    p["cfc.tau"] = Tensor(np.full(dh, math.log(math.e - 1.0), dtype=dt), requires_grad=True)
    p["cfc.W"] = _uniform(rng, (2 * dh, config.cfc_in_dim), config.cfc_in_dim, dt)
    p["cfc.b"] = Tensor(np.zeros(2 * dh, dtype=dt), requires_grad=True)
    # gated structural mixer
    p["mixer.W_struct"] = _uniform(rng, (dh, config.d_s), config.d_s, dt)
    p["mixer.b_struct"] = Tensor(np.zeros(dh, dtype=dt), requires_grad=True)
    p["mixer.W_g"] = _uniform(rng, (dh, 2 * dh), 2 * dh, dt)
    p["mixer.b_g"] = Tensor(np.zeros(dh, dtype=dt), requires_grad=True)
    p["mixer.W_proj"] = _uniform(rng, (d, dh), dh, dt)
    p["mixer.b_proj"] = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
    # token type embeddings
    p["type.observed"] = Tensor((0.01 * rng.standard_normal(d)).astype(dt), requires_grad=True)
    p["type.candidate"] = Tensor((0.01 * rng.standard_normal(d)).astype(dt), requires_grad=True)
    # transformer layers
    for i in range(config.layers):
        pre = f"layer{i}"
        for nm in ("ln1", "ln2"):
            p[f"{pre}.{nm}.gamma"] = Tensor(np.ones(d, dtype=dt), requires_grad=True)
            p[f"{pre}.{nm}.beta"] = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
        for nm in ("Wq", "Wk", "Wv", "Wo"):
            p[f"{pre}.{nm}"] = _uniform(rng, (d, d), d, dt)
            p[f"{pre}.{nm[0]}b{nm[1]}"] = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
        p[f"{pre}.ffn.W1"] = _uniform(rng, (config.d_ffn, d), d, dt)
        p[f"{pre}.ffn.b1"] = Tensor(np.zeros(config.d_ffn, dtype=dt), requires_grad=True)
        p[f"{pre}.ffn.W2"] = _uniform(rng, (d, config.d_ffn), config.d_ffn, dt)
        p[f"{pre}.ffn.b2"] = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
    # bearing-bias parameters, shared by relation-aware layers
    if config.layers_rel > 0:
        p["rel.lam"] = Tensor(np.full(config.heads, 0.1, dtype=dt), requires_grad=True)
        p["rel.w"] = _uniform(rng, (config.heads, 2), 2, dt)
    # heads
    p["head.w"] = _uniform(rng, (d,), d, dt)
    p["head.b"] = Tensor(np.zeros((), dtype=dt), requires_grad=True)
    p["head.W_dir"] = _uniform(rng, (2, d), d, dt)
    for name, tensor in p.items():
        tensor.name = name
    return p


def param_count(params: dict) -> int:
    return int(sum(t.data.size for t in params.values()))


def zero_grads(params: dict):
    for t in params.values():
        t.grad = None


def save_checkpoint(params: dict, config: ModelConfig, path):
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = params[name].data.astype("<f4")
            nm = name.encode()
            fh.write(struct.pack("<I", len(nm)))
            fh.write(nm)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path, dtype=np.float32):
    """Returns (params, config); tensor names are validated exhaustively
    against a fresh registry for the stored config."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        version, cfg_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        config = ModelConfig.from_dict(json.loads(fh.read(cfg_len).decode()))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (nm_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nm_len).decode()
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            tensors[name] = data
    reference = init_params(config, dtype=dtype)
    if set(tensors) != set(reference):
        missing = set(reference) - set(tensors)
        extra = set(tensors) - set(reference)
        raise ValueError(f"{path}: tensor registry mismatch "
                         f"(missing={sorted(missing)}, unexpected={sorted(extra)})")
    for name, ref in reference.items():
        if tensors[name].shape != ref.data.shape:
            raise ValueError(f"{path}: shape mismatch for {name}: "
                             f"{tensors[name].shape} vs {ref.data.shape}")
        ref.data = tensors[name].astype(dtype)
    return reference, config


# -- input assembly ------------------------------------------------------------


def diff_inputs(example: Example, store: FeatureStore, config: ModelConfig):
    """First-order differenced inputs for the observed context.

    Returns (dpoi (T, poi_dim), dgeo (T, geo_dim + stepgeo_dim)); row 0 is all
    zeros (or the raw descriptor when poi differencing is disabled).
    """
    ctx = example.context
    T = len(ctx)
    dpoi = np.zeros((T, config.poi_dim))
    dgeo = np.zeros((T, config.dgeo_dim))
    if config.use_poi:
        xs = np.array([store.poi(v) for v in ctx])
        if config.poi_diff:
            dpoi[1:] = xs[1:] - xs[:-1]
        else:
            dpoi[:] = xs
    if config.use_geo:
        gs = np.array([store.geo(v) for v in ctx])
        dgeo[1:, :config.geo_dim] = gs[1:] - gs[:-1]
        step = example.step_geo.copy()
        step[:, :3] /= KM
        dgeo[:, config.geo_dim:] = step
    if not (np.isfinite(dpoi).all() and np.isfinite(dgeo).all()):
        raise ValueError("non-finite model input")
    return dpoi, dgeo


def candidate_inputs(example: Example, store: FeatureStore, config: ModelConfig):
    """Per-candidate (dpoi, dgeo) rows for the final CfC update from v_T."""
    v_t = example.context[-1]
    C = len(example.candidates)
    dpoi = np.zeros((C, config.poi_dim))
    dgeo = np.zeros((C, config.dgeo_dim))
    if config.use_poi:
        x_t = store.poi(v_t)
        for j, u in enumerate(example.candidates):
            dpoi[j] = store.poi(u) - x_t if config.poi_diff else store.poi(u)
    if config.use_geo:
        g_t = store.geo(v_t)
        for j, u in enumerate(example.candidates):
            dgeo[j, :config.geo_dim] = store.geo(u) - g_t
        step = example.cand_geo.copy()
        step[:, :3] /= KM
        dgeo[:, config.geo_dim:] = step
    return dpoi, dgeo


@dataclass
class Batch:
    examples: list
    dpoi: np.ndarray        # (B, T, P) left-padded
    dgeo: np.ndarray        # (B, T, G)
    active: np.ndarray      # (B, T) 1.0 where the step is real
    struct_hist: np.ndarray  # (B, T, d_s)
    cpoi: np.ndarray        # (B, C, P)
    cgeo: np.ndarray        # (B, C, G)
    struct_cand: np.ndarray  # (B, C, d_s)
    cand_valid: np.ndarray  # (B, C)
    attn_mask: np.ndarray   # (B, N, N)
    token_pos: np.ndarray   # (B, N, 2) planar position per token
    label_idx: np.ndarray   # (B,)
    true_dir: np.ndarray    # (B, 2) unit vectors
    T: int
    C: int


def assemble_batch(examples, store: FeatureStore, config: ModelConfig, graph,
                   with_labels=True) -> Batch:
    B = len(examples)
    T = max(len(ex.context) for ex in examples)
    C = max(len(ex.candidates) for ex in examples)
    N = T + C
    dpoi = np.zeros((B, T, config.poi_dim))
    dgeo = np.zeros((B, T, config.dgeo_dim))
    active = np.zeros((B, T))
    sh = np.zeros((B, T, config.d_s))
    cpoi = np.zeros((B, C, config.poi_dim))
    cgeo = np.zeros((B, C, config.dgeo_dim))
    sc = np.zeros((B, C, config.d_s))
    cand_valid = np.zeros((B, C))
    mask = np.zeros((B, N, N))
    pos = np.zeros((B, N, 2))
    label_idx = np.zeros(B, dtype=np.int64)
    true_dir = np.zeros((B, 2))
    for b, ex in enumerate(examples):
        Tb, Cb = len(ex.context), len(ex.candidates)
        off = T - Tb  # left padding
        dp, dg = diff_inputs(ex, store, config)
        dpoi[b, off:] = dp
        dgeo[b, off:] = dg
        active[b, off:] = 1.0
        if config.use_struct:
            for t, v in enumerate(ex.context):
                sh[b, off + t] = store.struct(v)
        cp, cg = candidate_inputs(ex, store, config)
        cpoi[b, :Cb] = cp
        cgeo[b, :Cb] = cg
        if config.use_struct:
            for j, u in enumerate(ex.candidates):
                sc[b, j] = store.struct(u)
        cand_valid[b, :Cb] = 1.0
        # attention mask: real history attends to real history (optionally
        # causal); real candidates attend to real history plus themselves;
        # padded tokens attend to themselves only (keeps softmax defined)
        if config.causal_history:
            tri = np.tril(np.ones((Tb, Tb)))
            mask[b, off:T, off:T] = tri
        else:
            mask[b, off:T, off:T] = 1.0
        mask[b, T:T + Cb, off:T] = 1.0
        for q in range(N):
            is_real = (off <= q < T) or (T <= q < T + Cb)
            if not is_real or q >= T:
                mask[b, q, q] = 1.0
        # token positions: pads replicate the first context node
        first = graph.pos(ex.context[0])
        pos[b, :, :] = first
        for t, v in enumerate(ex.context):
            pos[b, off + t] = graph.pos(v)
        for j, u in enumerate(ex.candidates):
            pos[b, T + j] = graph.pos(u)
        if with_labels:
            li = ex.candidates.index(ex.label)
            label_idx[b] = li
            dist = ex.cand_geo[li, 2]
            true_dir[b] = ex.cand_geo[li, :2] / max(dist, 1e-12)
    return Batch(examples=list(examples), dpoi=dpoi, dgeo=dgeo, active=active,
                 struct_hist=sh, cpoi=cpoi, cgeo=cgeo, struct_cand=sc,
                 cand_valid=cand_valid, attn_mask=mask, token_pos=pos,
                 label_idx=label_idx, true_dir=true_dir, T=T, C=C)


# -- core blocks ---------------------------------------------------------------


def cfc_alpha(params):
    return (-params["cfc.tau"].softplus()).exp()


def cfc_step(h_prev: Tensor, dpoi: np.ndarray, dgeo: np.ndarray, params: dict,
             config: ModelConfig) -> Tensor:
    """One closed-form cell update.  `h_prev` may be (d_h,) or (B, d_h) with
    matching leading dims on the inputs."""
    if not (np.isfinite(dpoi).all() and np.isfinite(dgeo).all()):
        raise ValueError("non-finite CfC input")
    dt = h_prev.dtype
    inp = ag.concat([Tensor(np.asarray(dpoi, dtype=dt)),
                     Tensor(np.asarray(dgeo, dtype=dt)), h_prev], axis=-1)
    pre = inp @ params["cfc.W"].T + params["cfc.b"]
    dh = config.d_h
    if pre.ndim == 1:
        a_t, b_t = pre[:dh], pre[dh:]
    else:
        a_t, b_t = pre[..., :dh], pre[..., dh:]
    c_t = b_t.tanh()
    alpha = cfc_alpha(params)
    if config.input_gate:
        c_t = a_t.sigmoid() * c_t
    return alpha * h_prev + (1.0 - alpha) * c_t


def mix_structural(h: Tensor, struct_vec, params: dict) -> Tensor:
    """Gated convex mix of dynamic state and (projected) structural embedding,
    then projection to the model dimension."""
    sv = struct_vec if isinstance(struct_vec, Tensor) \
        else Tensor(np.asarray(struct_vec, dtype=h.dtype))
    s = sv @ params["mixer.W_struct"].T + params["mixer.b_struct"]
    gate_in = ag.concat([h, s], axis=-1)
    g = (gate_in @ params["mixer.W_g"].T + params["mixer.b_g"]).sigmoid()
    mixed = g * s + (1.0 - g) * h
    return mixed @ params["mixer.W_proj"].T + params["mixer.b_proj"]


def rel_bias_matrices(token_pos: np.ndarray, params: dict, mask: np.ndarray,
                      heads: int):
    """Per-head additive bearing bias (B, N, N), row-centered over unmasked
    keys.  Zero-displacement pairs (and the diagonal) contribute raw bias 0."""
    dx = token_pos[:, None, :, 0] - token_pos[:, :, None, 0]
    dy = token_pos[:, None, :, 1] - token_pos[:, :, None, 1]
    dist = np.hypot(dx, dy)
    valid = (dist > 1e-9).astype(np.float64)
    theta = np.arctan2(dy, dx)
    cos_t = np.cos(theta) * valid
    sin_t = np.sin(theta) * valid
    maskf = (np.asarray(mask) > 0).astype(np.float64)
    counts = maskf.sum(axis=-1, keepdims=True)
    biases = []
    for h in range(heads):
        raw = params["rel.lam"][h] * (params["rel.w"][h, 0] * cos_t
                                      + params["rel.w"][h, 1] * sin_t)
        raw = raw * maskf
        row_mean = raw.sum(axis=-1, keepdims=True) / counts
        biases.append((raw - row_mean) * maskf)
    return biases


def _dropout(x: Tensor, rate: float, rng, train: bool) -> Tensor:
    if not train or rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep


def attention_layer(Z: Tensor, params: dict, prefix: str, mask: np.ndarray,
                    config: ModelConfig, biases=None, rng=None, train=False,
                    trace=None) -> Tensor:
    """Pre-norm multi-head self-attention + FFN with residuals over (B, N, d)
    tokens.  `biases` is a per-head list of additive logit matrices
    (relation-aware layers) or None (standard layers)."""
    d, H = config.d, config.heads
    dh = d // H
    scale = 1.0 / math.sqrt(dh)
    Zn = ag.layer_norm(Z, params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"])
    Q = Zn @ params[f"{prefix}.Wq"].T + params[f"{prefix}.Wbq"]
    K = Zn @ params[f"{prefix}.Wk"].T + params[f"{prefix}.Wbk"]
    V = Zn @ params[f"{prefix}.Wv"].T + params[f"{prefix}.Wbv"]
    head_outs = []
    for h in range(H):
        sl = (Ellipsis, slice(h * dh, (h + 1) * dh))
        logits = (Q[sl] @ K[sl].transpose(0, 2, 1)) * scale
        if biases is not None:
            logits = logits + biases[h]
        attn = ag.masked_softmax(logits, mask, axis=-1)
        if trace is not None:
            trace.append(attn.data.copy())
        attn = _dropout(attn, config.dropout, rng, train)
        head_outs.append(attn @ V[sl])
    O = ag.concat(head_outs, axis=-1) @ params[f"{prefix}.Wo"].T + params[f"{prefix}.Wbo"]
    Z = Z + _dropout(O, config.dropout, rng, train)
    Zn2 = ag.layer_norm(Z, params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"])
    F = (Zn2 @ params[f"{prefix}.ffn.W1"].T + params[f"{prefix}.ffn.b1"]).relu()
    F = F @ params[f"{prefix}.ffn.W2"].T + params[f"{prefix}.ffn.b2"]
    return Z + _dropout(F, config.dropout, rng, train)


def _positional_encoding(T: int, d: int) -> np.ndarray:
    pe = np.zeros((T, d))
    position = np.arange(T)[:, None].astype(np.float64)
    div = np.exp(np.arange(0, d, 2) / d * -math.log(10000.0))
    pe[:, 0::2] = np.sin(position * div)
    pe[:, 1::2] = np.cos(position * div[: d // 2])
    return pe


@dataclass
class BatchResult:
    scores: np.ndarray       # (B, C) padded slots hold -inf
    probs: np.ndarray        # (B, C) padded slots hold 0
    direction: np.ndarray    # (B, 2)
    loss: Tensor | None = None
    loss_ce: float = 0.0
    loss_dir: float = 0.0
    attention: list = field(default_factory=list)   # per layer x head (B, N, N)


@dataclass
class ForwardResult:
    scores: np.ndarray
    probs: np.ndarray
    direction: np.ndarray
    loss: Tensor | None = None
    loss_ce: float = 0.0
    loss_dir: float = 0.0
    attention: list = field(default_factory=list)


def forward_batch(batch: Batch, params: dict, config: ModelConfig,
                  rng=None, train=False, with_loss=True,
                  collect_attention=False) -> BatchResult:
    dtype = params["cfc.W"].dtype
    B, T, C = len(batch.examples), batch.T, batch.C

    h = Tensor(np.zeros((B, config.d_h), dtype=dtype))
    history = []
    for t in range(T):
        h_new = cfc_step(h, batch.dpoi[:, t], batch.dgeo[:, t], params, config)
        act = batch.active[:, t:t + 1].astype(dtype)
        h = h_new * act + h * (1.0 - act)  # padded steps keep the state
        history.append(mix_structural(h, batch.struct_hist[:, t].astype(dtype), params))

    cand_tokens = []
    for j in range(C):
        hc = cfc_step(h, batch.cpoi[:, j], batch.cgeo[:, j], params, config)
        cand_tokens.append(mix_structural(hc, batch.struct_cand[:, j].astype(dtype), params))

    Z = ag.stack(history + cand_tokens, axis=1)  # (B, N, d)
    type_rows = ag.stack([params["type.observed"]] * T
                         + [params["type.candidate"]] * C, axis=0)
    Z = Z + type_rows
    if config.positional_encoding:
        pe = np.zeros((T + C, config.d), dtype=dtype)
        pe[:T] = _positional_encoding(T, config.d).astype(dtype)
        Z = Z + Tensor(pe)

    trace = [] if collect_attention else None
    for i in range(config.layers_std):
        Z = attention_layer(Z, params, f"layer{i}", batch.attn_mask, config,
                            biases=None, rng=rng, train=train, trace=trace)
    if config.layers_rel > 0:
        biases = rel_bias_matrices(batch.token_pos, params, batch.attn_mask,
                                   config.heads)
    for i in range(config.layers_std, config.layers):
        Z = attention_layer(Z, params, f"layer{i}", batch.attn_mask, config,
                            biases=biases, rng=rng, train=train, trace=trace)

    scores = Z[:, T:, :] @ params["head.w"] + params["head.b"]   # (B, C)
    probs = ag.masked_softmax(scores, batch.cand_valid, axis=-1)
    dvec = Z[:, T - 1, :] @ params["head.W_dir"].T               # (B, 2)
    norm = ((dvec * dvec).sum(axis=-1, keepdims=True) + 1e-12) ** 0.5
    dhat = dvec / norm

    score_out = np.where(batch.cand_valid > 0, scores.data, -np.inf)
    result = BatchResult(scores=score_out, probs=probs.data.copy(),
                         direction=dhat.data.copy(), attention=trace or [])
    if with_loss:
        p_label = probs[np.arange(B), batch.label_idx].clip_min(1e-12)
        loss_ce = -(p_label.log().mean())
        dots = (dhat * batch.true_dir.astype(dtype)).sum(axis=-1)
        loss_dir = (1.0 - dots).mean()
        result.loss = loss_ce + config.gamma * loss_dir
        result.loss_ce = float(loss_ce.data)
        result.loss_dir = float(loss_dir.data)
    return result


def forward(example: Example, params: dict, config: ModelConfig,
            store: FeatureStore, graph, rng=None, train=False,
            with_loss=True, collect_attention=False) -> ForwardResult:
    """Score the one-hop candidates of one example."""
    batch = assemble_batch([example], store, config, graph, with_labels=with_loss)
    res = forward_batch(batch, params, config, rng=rng, train=train,
                        with_loss=with_loss, collect_attention=collect_attention)
    C = len(example.candidates)
    return ForwardResult(scores=res.scores[0, :C], probs=res.probs[0, :C],
                         direction=res.direction[0], loss=res.loss,
                         loss_ce=res.loss_ce, loss_dir=res.loss_dir,
                         attention=[a[0] for a in res.attention])


def batch_loss(examples, params, config, store, graph, rng=None, train=False):
    """Mean combined loss over a batch; returns (loss Tensor, metrics dict)."""
    batch = assemble_batch(examples, store, config, graph)
    res = forward_batch(batch, params, config, rng=rng, train=train)
    return res.loss, {"loss_ce": res.loss_ce, "loss_dir": res.loss_dir,
                      "loss": float(res.loss.data)}
