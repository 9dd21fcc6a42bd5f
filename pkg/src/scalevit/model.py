"""Compact vision transformer with Linformer-style attention and exact gradients.

Parameters live in a flat name -> float64 array mapping whose key order is
fixed by `param_shapes`; the optimizer, the checkpoint codec, and the
finite-difference gradient check all rely on that ordering.

Architecture: per-channel scaleogram patches are linearly embedded, tagged
with additive learned channel embeddings, prepended with a class token, and
summed with positional embeddings. Each of `depth` pre-norm blocks applies
multi-head attention in which keys and values are first projected from the
full sequence length down to `linformer_k` rows by learned matrices E and F
(shared across heads), then a GELU MLP. The class token representation is
layer-normalized and fed to a linear head (4 logits or 2 regression outputs).
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import (
    BadMagicError,
    BadShapeError,
    NonFiniteError,
    TruncatedError,
    VersionMismatchError,
)

LN_EPS = 1e-6
MLP_RATIO = 4
INIT_STD = 0.02
CHECKPOINT_MAGIC = b"SDVM"
CHECKPOINT_VERSION = 1


class Head(enum.Enum):
    CLASSIFY4 = "classify4"
    REGRESS2 = "regress2"

    @property
    def n_outputs(self) -> int:
        return 4 if self is Head.CLASSIFY4 else 2


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int
    image_hw: tuple[int, int] = (224, 224)
    patch_size: int = 16
    embed_dim: int = 128
    depth: int = 4
    n_heads: int = 4
    linformer_k: int = 64
    head: Head = Head.CLASSIFY4
    dropout_rate: float = 0.0

    def __post_init__(self):
        h, w = self.image_hw
        if self.n_channels < 1:
            raise BadShapeError("n_channels must be >= 1")
        if h % self.patch_size or w % self.patch_size:
            raise BadShapeError(f"image {h}x{w} not divisible by patch {self.patch_size}")
        if self.embed_dim % self.n_heads:
            raise BadShapeError(f"embed_dim {self.embed_dim} not divisible by {self.n_heads} heads")
        if not 1 <= self.linformer_k <= self.seq_len:
            raise BadShapeError(f"linformer_k {self.linformer_k} outside [1, {self.seq_len}]")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise BadShapeError("dropout_rate must lie in [0, 1)")
        if self.depth < 1:
            raise BadShapeError("depth must be >= 1")

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size

    @property
    def patches_per_channel(self) -> int:
        h, w = self.image_hw
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def n_patch_tokens(self) -> int:
        return self.n_channels * self.patches_per_channel

    @property
    def seq_len(self) -> int:
        return self.n_patch_tokens + 1  # class token included

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def mlp_hidden(self) -> int:
        return MLP_RATIO * self.embed_dim

    def to_json_dict(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "image_hw": list(self.image_hw),
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "n_heads": self.n_heads,
            "linformer_k": self.linformer_k,
            "head": self.head.value,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            n_channels=int(d["n_channels"]),
            image_hw=(int(d["image_hw"][0]), int(d["image_hw"][1])),
            patch_size=int(d["patch_size"]),
            embed_dim=int(d["embed_dim"]),
            depth=int(d["depth"]),
            n_heads=int(d["n_heads"]),
            linformer_k=int(d["linformer_k"]),
            head=Head(d["head"]),
            dropout_rate=float(d["dropout_rate"]),
        )


def make_config(**kwargs) -> ModelConfig:
    """ModelConfig constructor that clamps linformer_k to the token count,
    so small images or few channels do not reject the default k."""
    probe = ModelConfig(**{**kwargs, "linformer_k": 1})
    requested = kwargs.get("linformer_k", ModelConfig.__dataclass_fields__["linformer_k"].default)
    return ModelConfig(**{**kwargs, "linformer_k": min(requested, probe.seq_len)})


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter name -> shape map; iteration order is the
    serialization order."""
    d = config.embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_proj": (config.patch_dim, d),
        "patch_bias": (d,),
        "channel_embed": (config.n_channels, d),
        "class_token": (d,),
        "pos_embed": (config.seq_len, d),
    }
    for i in range(config.depth):
        p = f"layers.{i}."
        shapes[p + "ln1_scale"] = (d,)
        shapes[p + "ln1_shift"] = (d,)
        shapes[p + "wq"] = (d, d)
        shapes[p + "bq"] = (d,)
        shapes[p + "wk"] = (d, d)
        shapes[p + "bk"] = (d,)
        shapes[p + "wv"] = (d, d)
        shapes[p + "bv"] = (d,)
        shapes[p + "wo"] = (d, d)
        shapes[p + "bo"] = (d,)
        shapes[p + "e_proj"] = (config.linformer_k, config.seq_len)
        shapes[p + "f_proj"] = (config.linformer_k, config.seq_len)
        shapes[p + "ln2_scale"] = (d,)
        shapes[p + "ln2_shift"] = (d,)
        shapes[p + "mlp_w1"] = (d, config.mlp_hidden)
        shapes[p + "mlp_b1"] = (config.mlp_hidden,)
        shapes[p + "mlp_w2"] = (config.mlp_hidden, d)
        shapes[p + "mlp_b2"] = (d,)
    shapes["ln_f_scale"] = (d,)
    shapes["ln_f_shift"] = (d,)
    shapes["head_w"] = (d, config.head.n_outputs)
    shapes["head_b"] = (config.head.n_outputs,)
    return shapes


def n_parameters(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


@dataclass
class ModelParams:
    """All learnable tensors, keyed per `param_shapes(config)`."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def items(self):
        return self.tensors.items()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def validate(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.tensors):
            raise BadShapeError("parameter names do not match config")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise BadShapeError(f"{name}: shape {t.shape} != {shape}")
            if not np.all(np.isfinite(t)):
                raise NonFiniteError(f"{name} contains NaN/Inf")


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until within +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(config: ModelConfig, seed) -> ModelParams:
    """Truncated-normal (std 0.02) weights; zero biases/shifts; unit scales."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        base = name.rsplit(".", 1)[-1]
        if base.endswith("_scale"):
            tensors[name] = np.ones(shape)
        elif base.endswith(("_shift", "_bias")) or base in ("bq", "bk", "bv", "bo",
                                                            "mlp_b1", "mlp_b2", "head_b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = _trunc_normal(rng, shape, INIT_STD)
    return ModelParams(config=config, tensors=tensors)


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# primitive layers (forward + backward pairs)
# ---------------------------------------------------------------------------

def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Split [C, H, W] (or [B, C, H, W]) into flattened patch tokens.

    Tokens are ordered channel-major, then row-major over the patch grid;
    each token has patch_size**2 entries.
    """
    x = np.asarray(images, dtype=np.float64)
    batched = x.ndim == 4
    if not batched:
        if x.ndim != 3:
            raise BadShapeError(f"expected [C,H,W] or [B,C,H,W], got {x.shape}")
        x = x[None]
    b, c, h, w = x.shape
    p = patch_size
    if h % p or w % p:
        raise BadShapeError(f"image {h}x{w} not divisible by patch {p}")
    hp, wp = h // p, w // p
    tokens = (x.reshape(b, c, hp, p, wp, p)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(b, c * hp * wp, p * p))
    return tokens if batched else tokens[0]


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def _layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * scale + shift, (xhat, inv, scale)


def _layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv, scale = cache
    axes = tuple(range(dy.ndim - 1))
    d_scale = (dy * xhat).sum(axis=axes)
    d_shift = dy.sum(axis=axes)
    dxhat = dy * scale
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, d_scale, d_shift


def _dropout(x: np.ndarray, rate: float, train_mode: bool, rng):
    if not train_mode or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def _dropout_backward(dy: np.ndarray, mask):
    return dy if mask is None else dy * mask


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, s, d = x.shape
    return x.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def _linear_grads(x2d_in: np.ndarray, dy: np.ndarray):
    """(dW, db) for y = x @ W + b with leading axes flattened."""
    d = x2d_in.shape[-1]
    do = dy.shape[-1]
    xf = x2d_in.reshape(-1, d)
    dyf = dy.reshape(-1, do)
    return xf.T @ dyf, dyf.sum(axis=0)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def linformer_attention(tokens: np.ndarray, layer_params: dict, n_heads: int,
                        dropout_rate: float = 0.0, train_mode: bool = False, rng=None):
    """Multi-head attention with keys/values projected to k rows.

    Per head: softmax(Q (E K)^T / sqrt(d_h)) (F V), with E and F of shape
    [k, seq_len] shared across heads. Returns (output, cache) where output
    matches the input shape [B, S, D].
    """
    h = tokens
    if h.ndim != 3:
        raise BadShapeError(f"tokens must be [B, S, D], got {h.shape}")
    lp = layer_params
    e_proj, f_proj = lp["e_proj"], lp["f_proj"]
    if e_proj.shape[1] != h.shape[1]:
        raise BadShapeError(f"E expects seq_len {e_proj.shape[1]}, got {h.shape[1]}")
    q = _split_heads(h @ lp["wq"] + lp["bq"], n_heads)   # [B,Hd,S,dh]
    kh = _split_heads(h @ lp["wk"] + lp["bk"], n_heads)
    vh = _split_heads(h @ lp["wv"] + lp["bv"], n_heads)
    kp = np.matmul(e_proj, kh)                           # [B,Hd,k,dh]
    vp = np.matmul(f_proj, vh)
    inv_sqrt = 1.0 / np.sqrt(q.shape[-1])
    scores = np.matmul(q, kp.swapaxes(-1, -2)) * inv_sqrt  # [B,Hd,S,k]
    att = _softmax(scores)
    att_d, attn_mask = _dropout(att, dropout_rate, train_mode, rng)
    ctx = np.matmul(att_d, vp)                           # [B,Hd,S,dh]
    merged = _merge_heads(ctx)
    out = merged @ lp["wo"] + lp["bo"]
    cache = (h, q, kh, vh, kp, vp, att, att_d, attn_mask, merged, lp, inv_sqrt)
    return out, cache


def _attention_backward(d_out: np.ndarray, cache):
    h, q, kh, vh, kp, vp, att, att_d, attn_mask, merged, lp, inv_sqrt = cache
    grads = {}
    grads["wo"], grads["bo"] = _linear_grads(merged, d_out)
    d_ctx = _split_heads(d_out @ lp["wo"].T, q.shape[1])
    d_att_d = np.matmul(d_ctx, vp.swapaxes(-1, -2))
    d_vp = np.matmul(att_d.swapaxes(-1, -2), d_ctx)
    d_att = _dropout_backward(d_att_d, attn_mask)
    d_scores = (d_att - (d_att * att).sum(axis=-1, keepdims=True)) * att
    d_qk = d_scores * inv_sqrt
    d_q = np.matmul(d_qk, kp)
    d_kp = np.matmul(d_qk.swapaxes(-1, -2), q)
    grads["e_proj"] = np.einsum("bhkd,bhsd->ks", d_kp, kh)
    grads["f_proj"] = np.einsum("bhkd,bhsd->ks", d_vp, vh)
    d_kh = np.matmul(lp["e_proj"].T, d_kp)
    d_vh = np.matmul(lp["f_proj"].T, d_vp)
    d_h = np.zeros_like(h)
    for name, d_head in (("wq", d_q), ("wk", d_kh), ("wv", d_vh)):
        d_flat = _merge_heads(d_head)
        grads[name], grads["b" + name[1]] = _linear_grads(h, d_flat)
        d_h += d_flat @ lp[name].T
    return d_h, grads


def _mlp(h: np.ndarray, lp: dict):
    z = h @ lp["mlp_w1"] + lp["mlp_b1"]
    g = _gelu(z)
    out = g @ lp["mlp_w2"] + lp["mlp_b2"]
    return out, (h, z, g, lp)


def _mlp_backward(d_out: np.ndarray, cache):
    h, z, g, lp = cache
    grads = {}
    grads["mlp_w2"], grads["mlp_b2"] = _linear_grads(g, d_out)
    d_g = d_out @ lp["mlp_w2"].T
    d_z = d_g * _gelu_grad(z)
    grads["mlp_w1"], grads["mlp_b1"] = _linear_grads(h, d_z)
    return d_z @ lp["mlp_w1"].T, grads


def _block_forward(x: np.ndarray, lp: dict, config: ModelConfig, train_mode: bool, rng):
    h1, c_ln1 = _layer_norm(x, lp["ln1_scale"], lp["ln1_shift"])
    a, c_att = linformer_attention(h1, lp, config.n_heads, config.dropout_rate,
                                   train_mode, rng)
    a_d, m_att = _dropout(a, config.dropout_rate, train_mode, rng)
    x1 = x + a_d
    h2, c_ln2 = _layer_norm(x1, lp["ln2_scale"], lp["ln2_shift"])
    m, c_mlp = _mlp(h2, lp)
    m_d, m_mlp = _dropout(m, config.dropout_rate, train_mode, rng)
    return x1 + m_d, (c_ln1, c_att, m_att, c_ln2, c_mlp, m_mlp)


def _block_backward(d_x2: np.ndarray, cache):
    c_ln1, c_att, m_att, c_ln2, c_mlp, m_mlp = cache
    grads = {}
    d_m = _dropout_backward(d_x2, m_mlp)
    d_h2, mlp_grads = _mlp_backward(d_m, c_mlp)
    grads.update(mlp_grads)
    d_ln2, grads["ln2_scale"], grads["ln2_shift"] = _layer_norm_backward(d_h2, c_ln2)
    d_x1 = d_x2 + d_ln2
    d_a = _dropout_backward(d_x1, m_att)
    d_h1, att_grads = _attention_backward(d_a, c_att)
    grads.update(att_grads)
    d_ln1, grads["ln1_scale"], grads["ln1_shift"] = _layer_norm_backward(d_h1, c_ln1)
    return d_x1 + d_ln1, grads


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

def forward(inputs: np.ndarray, params: ModelParams, config: ModelConfig | None = None,
            train_mode: bool = False, rng=None):
    """Run the model on a batch [B, n_channels, H, W] of rasters in [0, 1].

    Returns (outputs, cache): logits [B, 4] or regression pairs [B, 2], plus
    the activation cache consumed by `backward`. With dropout disabled the
    result is a pure function of (params, inputs); with dropout enabled it is
    deterministic given the generator passed as `rng`.
    """
    config = config or params.config
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 4:
        raise BadShapeError(f"inputs must be [B, C, H, W], got {x.shape}")
    b, c, h, w = x.shape
    if (c, h, w) != (config.n_channels, *config.image_hw):
        raise BadShapeError(
            f"inputs {x.shape[1:]} do not match config ({config.n_channels}, {config.image_hw})")
    if train_mode and config.dropout_rate > 0.0 and rng is None:
        rng = np.random.default_rng(0)
    t = params.tensors

    tokens_raw = patchify(x, config.patch_size)                    # [B,T,p^2]
    tok = tokens_raw @ t["patch_proj"] + t["patch_bias"]           # [B,T,D]
    tok = tok + np.repeat(t["channel_embed"], config.patches_per_channel, axis=0)
    cls = np.broadcast_to(t["class_token"], (b, 1, config.embed_dim))
    seq = np.concatenate([cls, tok], axis=1) + t["pos_embed"]
    seq, m_emb = _dropout(seq, config.dropout_rate, train_mode, rng)

    block_caches = []
    for i in range(config.depth):
        lp = {k.rsplit(".", 1)[-1]: v for k, v in t.items()
              if k.startswith(f"layers.{i}.")}
        seq, bc = _block_forward(seq, lp, config, train_mode, rng)
        block_caches.append(bc)

    cls_in = seq[:, 0, :]
    cls_n, c_lnf = _layer_norm(cls_in, t["ln_f_scale"], t["ln_f_shift"])
    out = cls_n @ t["head_w"] + t["head_b"]
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("model outputs overflowed to NaN/Inf")
    cache = {
        "config": config,
        "batch": b,
        "tokens_raw": tokens_raw,
        "m_emb": m_emb,
        "blocks": block_caches,
        "cls_n": cls_n,
        "c_lnf": c_lnf,
        "seq_shape": seq.shape,
        "head_w": t["head_w"],
    }
    return out, cache


def backward(d_out: np.ndarray, cache) -> dict[str, np.ndarray]:
    """Gradients of the scalar loss w.r.t. every parameter.

    `d_out` is the loss gradient w.r.t. the model outputs for the same batch
    that produced `cache`; the returned dict is congruent to the parameter
    map of `param_shapes(config)`.
    """
    config: ModelConfig = cache["config"]
    grads: dict[str, np.ndarray] = {}
    grads["head_w"], grads["head_b"] = _linear_grads(cache["cls_n"], d_out)
    d_cls_n = d_out @ cache["head_w"].T
    d_cls_in, grads["ln_f_scale"], grads["ln_f_shift"] = _layer_norm_backward(
        d_cls_n, cache["c_lnf"])
    d_seq = np.zeros(cache["seq_shape"])
    d_seq[:, 0, :] = d_cls_in
    for i in range(config.depth - 1, -1, -1):
        d_seq, block_grads = _block_backward(d_seq, cache["blocks"][i])
        for name, g in block_grads.items():
            grads[f"layers.{i}.{name}"] = g
    d_seq = _dropout_backward(d_seq, cache["m_emb"])
    grads["pos_embed"] = d_seq.sum(axis=0)
    grads["class_token"] = d_seq[:, 0, :].sum(axis=0)
    d_tok = d_seq[:, 1:, :]
    grads["channel_embed"] = (d_tok
                              .reshape(cache["batch"], config.n_channels,
                                       config.patches_per_channel, config.embed_dim)
                              .sum(axis=(0, 2)))
    grads["patch_proj"], grads["patch_bias"] = _linear_grads(cache["tokens_raw"], d_tok)
    return grads


# ---------------------------------------------------------------------------
# checkpoint format: magic "SDVM", version u16, u32-length JSON config,
# then tensors in param_shapes order as (rank u8, dims u32 x rank, f32 data),
# all little-endian.
# ---------------------------------------------------------------------------

def checkpoint_bytes(params: ModelParams, extra_meta: dict | None = None) -> bytes:
    meta = {"model": params.config.to_json_dict()}
    if extra_meta:
        meta.update(extra_meta)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION),
             struct.pack("<I", len(blob)), blob]
    for name in param_shapes(params.config):
        tensor = params.tensors[name]
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.astype("<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, params: ModelParams, extra_meta: dict | None = None):
    from .util import atomic_write_bytes

    atomic_write_bytes(path, checkpoint_bytes(params, extra_meta))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Read a checkpoint; returns (params, metadata dict)."""
    with open(path, "rb") as f:
        buf = f.read()
    view = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedError(f"checkpoint ends early at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise BadMagicError("not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<H", take(2))
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version} != {CHECKPOINT_VERSION}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    config = ModelConfig.from_json_dict(meta["model"])
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        if dims != shape:
            raise BadShapeError(f"{name}: stored shape {dims} != expected {shape}")
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float64)
        tensors[name] = data.reshape(shape)
    if pos != len(buf):
        raise TruncatedError(f"{len(buf) - pos} trailing bytes after checkpoint payload")
    params = ModelParams(config=config, tensors=tensors)
    params.validate()
    return params, meta
