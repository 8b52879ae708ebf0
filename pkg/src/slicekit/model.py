"""Copy-augmented encoder-decoder transformer for extractive slicing.

Pre-norm transformer, sinusoidal positions, untied embeddings. At every
decoder step the cross-attention of the final decoder layer (head-averaged)
gives a pointer distribution over source positions; a sigmoid gate mixes the
vocabulary softmax with that pointer distribution, scattered onto each
source token's extended id:

    alpha  = softmax(Q_dec K_enc^T / sqrt(d))        head-averaged, last layer
    h*     = alpha . V_enc                            (V_enc = final encoder states)
    p_gen  = sigmoid(W_gen . [h*; x_dec] + b_gen)     x_dec = current input embedding
    P(y)   = p_gen P_vocab(y) + (1 - p_gen) alpha     over vocab + per-input OOV slots

The gate bias starts at +4 so the initial mixture is generation-dominant and
the first-batch loss sits near ln(extended vocab size).

Training is teacher-forced cross-entropy over extended-vocabulary gold ids
with AdamW and linear warmup. With ``copy_enabled=False`` the gate is pinned
to 1 (pure generation); gold OOV tokens then sit at the probability floor.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .corpus import EncodedInput, SliceInstance, Vocabulary, decoder_input_ids, encode_input, encode_target
from .errors import CapacityError, CheckpointError, DataFormatError
from .rng import substream
from .tensor import Tensor

Array = np.ndarray


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 256
    max_src: int = 256
    max_tgt: int = 256
    max_oov_slots: int = 64
    copy_enabled: bool = True
    gate_input: str = "embedding"  # "embedding" (literal reading) or "hidden"

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.gate_input not in ("embedding", "hidden"):
            raise ValueError(f"gate_input must be 'embedding' or 'hidden', got {self.gate_input!r}")

    @property
    def ext_size(self) -> int:
        return self.vocab_size + self.max_oov_slots

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


def _attn_names(prefix: str) -> list[str]:
    return [f"{prefix}.{w}" for w in ("wq", "wk", "wv", "wo")]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = cfg.d_model, cfg.ffn_dim, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "src_emb": (v, d),
        "tgt_emb": (v, d),
        "out_w": (d, v),
        "out_b": (v,),
        "enc_ln_g": (d,), "enc_ln_b": (d,),
        "dec_ln_g": (d,), "dec_ln_b": (d,),
    }
    if cfg.copy_enabled:
        shapes["copy_w"] = (2 * d, 1)
        shapes["copy_b"] = (1,)
    for i in range(cfg.enc_layers):
        p = f"enc{i}"
        for name in _attn_names(f"{p}.attn"):
            shapes[name] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{b}"] = (d,)
        shapes[f"{p}.ln1_g"] = (d,); shapes[f"{p}.ln1_b"] = (d,)
        shapes[f"{p}.ln2_g"] = (d,); shapes[f"{p}.ln2_b"] = (d,)
        shapes[f"{p}.w1"] = (d, f); shapes[f"{p}.b1"] = (f,)
        shapes[f"{p}.w2"] = (f, d); shapes[f"{p}.b2"] = (d,)
    for i in range(cfg.dec_layers):
        p = f"dec{i}"
        for sub in ("self", "cross"):
            for name in _attn_names(f"{p}.{sub}"):
                shapes[name] = (d, d)
            for b in ("bq", "bk", "bv", "bo"):
                shapes[f"{p}.{sub}.{b}"] = (d,)
        for ln in ("ln1", "ln2", "ln3"):
            shapes[f"{p}.{ln}_g"] = (d,); shapes[f"{p}.{ln}_b"] = (d,)
        shapes[f"{p}.w1"] = (d, f); shapes[f"{p}.b1"] = (f,)
        shapes[f"{p}.w2"] = (f, d); shapes[f"{p}.b2"] = (d,)
    return shapes


class ModelParams:
    """Named learnable tensors plus their config."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.tensors.items()},
        )

    @staticmethod
    def initialize(config: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = substream(seed, "init")
        d = config.d_model
        tensors: dict[str, Tensor] = {}
        for name, shape in param_shapes(config).items():
            if name in ("copy_w",):
                data = np.zeros(shape)
            elif name == "copy_b":
                data = np.full(shape, 4.0)
            elif name.endswith(("_g",)):
                data = np.ones(shape)
            elif name.endswith(("_b", "bq", "bk", "bv", "bo", "b1", "b2", "out_b")) or len(shape) == 1:
                data = np.zeros(shape)
            elif name in ("src_emb", "tgt_emb"):
                data = rng.normal(0.0, 1.0 / math.sqrt(d), size=shape)
            else:
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                data = rng.uniform(-limit, limit, size=shape)
            tensors[name] = Tensor(data, requires_grad=True)
        return ModelParams(config, tensors)


def sinusoidal_table(max_len: int, d: int) -> Array:
    pos = np.arange(max_len)[:, None]
    dim = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table


# ---------------------------------------------------------------------------
# batched forward (training path, tape-recorded)


def _mha_batch(params: ModelParams, prefix: str, x_q: Tensor, x_kv: Tensor,
               mask: Array | None) -> tuple[Tensor, Tensor]:
    """Multi-head attention; returns (output, per-head probs)."""
    cfg = params.config
    b, tq, d = x_q.shape
    tk = x_kv.shape[1]
    h, dh = cfg.heads, cfg.head_dim
    q = T.add(T.matmul(x_q, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = T.add(T.matmul(x_kv, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = T.add(T.matmul(x_kv, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    q4 = T.transpose(T.reshape(q, (b, tq, h, dh)), (0, 2, 1, 3))
    k4 = T.transpose(T.reshape(k, (b, tk, h, dh)), (0, 2, 3, 1))
    v4 = T.transpose(T.reshape(v, (b, tk, h, dh)), (0, 2, 1, 3))
    scores = T.affine(T.matmul(q4, k4), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = T.add_const(scores, mask)
    probs = T.softmax(scores, axis=-1)
    ctx = T.matmul(probs, v4)
    merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
    out = T.add(T.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])
    return out, probs


def _ffn(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    hidden = T.relu(T.add(T.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return T.add(T.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _pad_mask(src_valid: Array) -> Array:
    # (B, S) of {0,1} -> additive (B, 1, 1, S)
    return ((1.0 - src_valid) * T.MASK_VALUE)[:, None, None, :]


def _causal_mask(t: int) -> Array:
    return np.triu(np.full((t, t), T.MASK_VALUE), k=1)[None, None, :, :]


def encode_batch(params: ModelParams, src_ids: Array, src_valid: Array) -> Tensor:
    cfg = params.config
    b, s = src_ids.shape
    if s > cfg.max_src:
        raise CapacityError(f"source length {s} exceeds max_src {cfg.max_src}")
    pos = sinusoidal_table(cfg.max_src, cfg.d_model)
    x = T.affine(T.gather_rows(params["src_emb"], src_ids), math.sqrt(cfg.d_model))
    x = T.add_const(x, pos[:s])
    mask = _pad_mask(src_valid)
    for i in range(cfg.enc_layers):
        p = f"enc{i}"
        ln1 = T.layer_norm(x, params[f"{p}.ln1_g"], params[f"{p}.ln1_b"])
        attn, _ = _mha_batch(params, f"{p}.attn", ln1, ln1, mask)
        x = T.add(x, attn)
        x = T.add(x, _ffn(params, p, T.layer_norm(x, params[f"{p}.ln2_g"], params[f"{p}.ln2_b"])))
    return T.layer_norm(x, params["enc_ln_g"], params["enc_ln_b"])


@dataclass
class CopyForward:
    p_ext: Tensor          # (B, T, ext)
    alpha: Tensor          # (B, T, S) head-averaged final-layer cross attention
    p_gen: Tensor | None   # (B, T, 1); None when copy is disabled


def decode_batch(params: ModelParams, dec_in: Array, enc: Tensor,
                 src_valid: Array, src_ext: Array) -> CopyForward:
    cfg = params.config
    b, t = dec_in.shape
    if t > cfg.max_tgt:
        raise CapacityError(f"target length {t} exceeds max_tgt {cfg.max_tgt}")
    pos = sinusoidal_table(cfg.max_tgt, cfg.d_model)
    emb = T.affine(T.gather_rows(params["tgt_emb"], dec_in), math.sqrt(cfg.d_model))
    y = T.add_const(emb, pos[:t])
    causal = _causal_mask(t)
    cross_mask = _pad_mask(src_valid)
    cross_probs: Tensor | None = None
    for i in range(cfg.dec_layers):
        p = f"dec{i}"
        ln1 = T.layer_norm(y, params[f"{p}.ln1_g"], params[f"{p}.ln1_b"])
        self_attn, _ = _mha_batch(params, f"{p}.self", ln1, ln1, causal)
        y = T.add(y, self_attn)
        ln2 = T.layer_norm(y, params[f"{p}.ln2_g"], params[f"{p}.ln2_b"])
        cross_attn, probs = _mha_batch(params, f"{p}.cross", ln2, enc, cross_mask)
        y = T.add(y, cross_attn)
        cross_probs = probs
        y = T.add(y, _ffn(params, p, T.layer_norm(y, params[f"{p}.ln3_g"], params[f"{p}.ln3_b"])))
    y = T.layer_norm(y, params["dec_ln_g"], params["dec_ln_b"])
    logits = T.add(T.matmul(y, params["out_w"]), params["out_b"])
    p_vocab = T.softmax(logits, axis=-1)
    alpha = T.mean_axis(cross_probs, 1)  # (B, T, S)
    if not cfg.copy_enabled:
        return CopyForward(T.pad_last(p_vocab, cfg.ext_size), alpha, None)
    hstar = T.matmul(alpha, enc)
    x_dec = emb if cfg.gate_input == "embedding" else y
    gate_in = T.concat_last(hstar, x_dec)
    p_gen = T.sigmoid(T.add(T.matmul(gate_in, params["copy_w"]), params["copy_b"]))
    gen_part = T.pad_last(T.scale_rows(p_vocab, p_gen), cfg.ext_size)
    copy_weights = T.scale_rows(alpha, T.affine(p_gen, -1.0, 1.0))
    copy_part = T.scatter_add_last(copy_weights, src_ext[:, None, :], cfg.ext_size)
    return CopyForward(T.add(gen_part, copy_part), alpha, p_gen)


def batch_loss(params: ModelParams, batch: dict[str, Array]) -> Tensor:
    enc = encode_batch(params, batch["src_ids"], batch["src_valid"])
    fwd = decode_batch(params, batch["dec_in"], enc, batch["src_valid"], batch["src_ext"])
    b, t, ext = fwd.p_ext.shape
    flat = T.reshape(fwd.p_ext, (b * t, ext))
    return T.cross_entropy_rows(flat, batch["labels"].reshape(-1), batch["tgt_valid"].reshape(-1))


# ---------------------------------------------------------------------------
# single-instance inference (spec surface + fast incremental twin)


@dataclass
class EncoderStates:
    """Final encoder states; the copy path reads them as its value matrix."""

    hidden: Array            # (S, d)
    src_ids: Array           # (S,)
    src_ext: Array           # (S,)
    oov_tokens: list[str]


@dataclass
class DecoderStepOutput:
    p_extended: Array        # (ext_size,)
    alpha: Array             # (S,)
    p_gen: float
    hidden: Array            # (d,) context vector h*


def encode(params: ModelParams, enc_input: EncodedInput) -> EncoderStates:
    """Run the encoder for one instance."""
    cfg = params.config
    s = len(enc_input.ids)
    if s > cfg.max_src:
        raise CapacityError(f"source length {s} exceeds max_src {cfg.max_src}")
    if len(enc_input.oov_tokens) > cfg.max_oov_slots:
        raise CapacityError(
            f"input has {len(enc_input.oov_tokens)} OOV tokens; model supports {cfg.max_oov_slots}"
        )
    hidden = encode_batch(params, enc_input.ids[None, :], np.ones((1, s)))
    return EncoderStates(hidden.data[0], enc_input.ids, enc_input.ext_ids, list(enc_input.oov_tokens))


def decode_step(params: ModelParams, prefix_ids: Array, states: EncoderStates) -> DecoderStepOutput:
    """Stateless one-step decode: full prefix forward, outputs at last position."""
    cfg = params.config
    prefix_ids = np.asarray(prefix_ids, dtype=np.int64)
    if prefix_ids.size == 0:
        raise ValueError("decode_step needs a non-empty prefix (start with BOS)")
    if prefix_ids.size > cfg.max_tgt:
        raise CapacityError(f"prefix length {prefix_ids.size} exceeds max_tgt {cfg.max_tgt}")
    if prefix_ids.max() >= cfg.ext_size:
        raise CapacityError(f"prefix id {int(prefix_ids.max())} beyond extended vocabulary")
    dec_in = np.where(prefix_ids >= cfg.vocab_size, 3, prefix_ids)[None, :]  # UNK=3
    s = len(states.src_ids)
    enc = Tensor(states.hidden[None, :, :])
    fwd = decode_batch(params, dec_in, enc, np.ones((1, s)), states.src_ext[None, :])
    alpha = fwd.alpha.data[0, -1]
    p_gen = 1.0 if fwd.p_gen is None else float(fwd.p_gen.data[0, -1, 0])
    hstar = alpha @ states.hidden
    return DecoderStepOutput(fwd.p_ext.data[0, -1], alpha, p_gen, hstar)


class DecodeSession:
    """Incremental decoding with per-layer KV caches.

    Produces the same numbers as ``decode_step`` on the same prefix, but each
    step costs O(prefix) instead of O(prefix^2). ``fork()`` clones the cache
    for beam branching; encoder-side projections are shared read-only.
    """

    def __init__(self, params: ModelParams, states: EncoderStates):
        cfg = params.config
        self.params = params
        self.cfg = cfg
        self.states = states
        self.pos_table = sinusoidal_table(cfg.max_tgt, cfg.d_model)
        h, dh, d = cfg.heads, cfg.head_dim, cfg.d_model
        self.cross_k: list[Array] = []
        self.cross_v: list[Array] = []
        enc = states.hidden
        for i in range(cfg.dec_layers):
            p = f"dec{i}.cross"
            k = enc @ params[f"{p}.wk"].data + params[f"{p}.bk"].data
            v = enc @ params[f"{p}.wv"].data + params[f"{p}.bv"].data
            self.cross_k.append(k.reshape(-1, h, dh).transpose(1, 0, 2).copy())  # (h, S, dh)
            self.cross_v.append(v.reshape(-1, h, dh).transpose(1, 0, 2).copy())
        self.self_k: list[Array] = [np.empty((h, 0, dh)) for _ in range(cfg.dec_layers)]
        self.self_v: list[Array] = [np.empty((h, 0, dh)) for _ in range(cfg.dec_layers)]
        self.t = 0

    def fork(self) -> "DecodeSession":
        clone = object.__new__(DecodeSession)
        clone.params = self.params
        clone.cfg = self.cfg
        clone.states = self.states
        clone.pos_table = self.pos_table
        clone.cross_k = self.cross_k
        clone.cross_v = self.cross_v
        clone.self_k = [k.copy() for k in self.self_k]
        clone.self_v = [v.copy() for v in self.self_v]
        clone.t = self.t
        return clone

    def _ln(self, x: Array, name: str) -> Array:
        g = self.params[f"{name}_g"].data
        b = self.params[f"{name}_b"].data
        mu = x.mean()
        var = ((x - mu) ** 2).mean()
        return (x - mu) / np.sqrt(var + 1e-5) * g + b

    def advance(self, token_ext_id: int) -> DecoderStepOutput:
        """Feed one token; return the distribution for the next position."""
        params, cfg = self.params, self.cfg
        if self.t >= cfg.max_tgt:
            raise CapacityError(f"decode session exceeded max_tgt {cfg.max_tgt}")
        h, dh, d = cfg.heads, cfg.head_dim, cfg.d_model
        vid = token_ext_id if token_ext_id < cfg.vocab_size else 3  # UNK
        emb = params["tgt_emb"].data[vid] * math.sqrt(d)
        x = emb + self.pos_table[self.t]
        alpha_last: Array | None = None
        for i in range(cfg.dec_layers):
            p = f"dec{i}"
            xn = self._ln(x, f"{p}.ln1")
            q = (xn @ params[f"{p}.self.wq"].data + params[f"{p}.self.bq"].data).reshape(h, dh)
            k = (xn @ params[f"{p}.self.wk"].data + params[f"{p}.self.bk"].data).reshape(h, 1, dh)
            v = (xn @ params[f"{p}.self.wv"].data + params[f"{p}.self.bv"].data).reshape(h, 1, dh)
            self.self_k[i] = np.concatenate([self.self_k[i], k], axis=1)
            self.self_v[i] = np.concatenate([self.self_v[i], v], axis=1)
            scores = np.einsum("hd,htd->ht", q, self.self_k[i]) / math.sqrt(dh)
            probs = _softmax_rows(scores)
            ctx = np.einsum("ht,htd->hd", probs, self.self_v[i]).reshape(d)
            x = x + ctx @ params[f"{p}.self.wo"].data + params[f"{p}.self.bo"].data

            xn = self._ln(x, f"{p}.ln2")
            q = (xn @ params[f"{p}.cross.wq"].data + params[f"{p}.cross.bq"].data).reshape(h, dh)
            scores = np.einsum("hd,hsd->hs", q, self.cross_k[i]) / math.sqrt(dh)
            probs = _softmax_rows(scores)
            alpha_last = probs.mean(axis=0)
            ctx = np.einsum("hs,hsd->hd", probs, self.cross_v[i]).reshape(d)
            x = x + ctx @ params[f"{p}.cross.wo"].data + params[f"{p}.cross.bo"].data

            xn = self._ln(x, f"{p}.ln3")
            hid = np.maximum(xn @ params[f"{p}.w1"].data + params[f"{p}.b1"].data, 0.0)
            x = x + hid @ params[f"{p}.w2"].data + params[f"{p}.b2"].data

        y = self._ln(x, "dec_ln")
        logits = y @ params["out_w"].data + params["out_b"].data
        p_vocab = _softmax_rows(logits[None, :])[0]
        alpha = alpha_last
        hstar = alpha @ self.states.hidden
        p_ext = np.zeros(cfg.ext_size)
        if cfg.copy_enabled:
            gate_vec = emb if cfg.gate_input == "embedding" else y
            gate = np.concatenate([hstar, gate_vec]) @ params["copy_w"].data[:, 0] + params["copy_b"].data[0]
            p_gen = 1.0 / (1.0 + math.exp(-gate)) if gate >= 0 else math.exp(gate) / (1.0 + math.exp(gate))
            p_ext[: cfg.vocab_size] = p_gen * p_vocab
            np.add.at(p_ext, self.states.src_ext, (1.0 - p_gen) * alpha)
        else:
            p_gen = 1.0
            p_ext[: cfg.vocab_size] = p_vocab
        self.t += 1
        return DecoderStepOutput(p_ext, alpha, float(p_gen), hstar)


def _softmax_rows(x: Array) -> Array:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


class SliceModel:
    """Params + vocabulary bundle exposing the decoding surface."""

    def __init__(self, params: ModelParams, vocab: Vocabulary):
        if params.config.vocab_size != vocab.size:
            raise CheckpointError(
                f"checkpoint vocab size {params.config.vocab_size} != vocabulary {vocab.size}"
            )
        self.params = params
        self.vocab = vocab

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    def encode_instance(self, enc_input: EncodedInput) -> EncoderStates:
        return encode(self.params, enc_input)

    def start_session(self, states: EncoderStates) -> DecodeSession:
        return DecodeSession(self.params, states)

    def step_stateless(self, prefix_ids: Array, states: EncoderStates) -> DecoderStepOutput:
        return decode_step(self.params, prefix_ids, states)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 16
    warmup_steps: int = 1000
    epochs: int = 10
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0


@dataclass
class _Example:
    src_ids: Array
    src_ext: Array
    dec_in: Array
    labels: Array


def _prepare(instances: list[SliceInstance], vocab: Vocabulary, cfg: ModelConfig) -> list[_Example]:
    out = []
    for inst in instances:
        enc = encode_input(inst, vocab, cfg.max_src)
        if len(enc.oov_tokens) > cfg.max_oov_slots:
            continue
        try:
            target = encode_target(inst, vocab, enc.oov_map)
        except DataFormatError:
            if enc.truncated:
                continue  # gold statement fell off the truncated source
            raise
        if len(target) > cfg.max_tgt:
            continue
        out.append(_Example(enc.ids, enc.ext_ids, decoder_input_ids(target, vocab), target))
    return out


def _make_batch(examples: list[_Example], pad_id: int = 0) -> dict[str, Array]:
    b = len(examples)
    s = max(len(e.src_ids) for e in examples)
    t = max(len(e.dec_in) for e in examples)
    batch = {
        "src_ids": np.full((b, s), pad_id, dtype=np.int64),
        "src_ext": np.full((b, s), pad_id, dtype=np.int64),
        "src_valid": np.zeros((b, s)),
        "dec_in": np.full((b, t), pad_id, dtype=np.int64),
        "labels": np.zeros((b, t), dtype=np.int64),
        "tgt_valid": np.zeros((b, t)),
    }
    for i, e in enumerate(examples):
        ns, nt = len(e.src_ids), len(e.dec_in)
        batch["src_ids"][i, :ns] = e.src_ids
        batch["src_ext"][i, :ns] = e.src_ext
        batch["src_valid"][i, :ns] = 1.0
        batch["dec_in"][i, :nt] = e.dec_in
        batch["labels"][i, :nt] = e.labels
        batch["tgt_valid"][i, :nt] = 1.0
    return batch


def _epoch_batches(examples: list[_Example], batch_size: int, rng: np.random.Generator) -> list[list[_Example]]:
    order = sorted(range(len(examples)), key=lambda i: (len(examples[i].src_ids), len(examples[i].dec_in)))
    batches = [
        [examples[j] for j in order[i : i + batch_size]]
        for i in range(0, len(order), batch_size)
    ]
    rng.shuffle(batches)
    return batches


def validation_loss(params: ModelParams, examples: list[_Example], batch_size: int = 16) -> float:
    total, weight = 0.0, 0.0
    for i in range(0, len(examples), batch_size):
        batch = _make_batch(examples[i : i + batch_size])
        loss = batch_loss(params, batch)
        n = batch["tgt_valid"].sum()
        total += loss.item() * n
        weight += n
    return total / max(weight, 1.0)


def train(
    train_instances: list[SliceInstance],
    valid_instances: list[SliceInstance],
    vocab: Vocabulary,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    log=None,
    init_params: ModelParams | None = None,
    init_step: int = 0,
) -> TrainResult:
    """Teacher-forced training; returns the best-validation-loss checkpoint."""
    if not train_instances:
        raise ValueError("training split is empty")
    params = init_params if init_params is not None else ModelParams.initialize(mcfg, tcfg.seed)
    train_ex = _prepare(train_instances, vocab, mcfg)
    valid_ex = _prepare(valid_instances, vocab, mcfg)
    state = T.AdamState(step=init_step)
    result = TrainResult(params)
    best_valid = math.inf
    best_params = params.copy()
    for epoch in range(tcfg.epochs):
        rng = substream(tcfg.seed, f"shuffle/{epoch}")
        running, seen = 0.0, 0.0
        for batch_ex in _epoch_batches(train_ex, tcfg.batch_size, rng):
            batch = _make_batch(batch_ex)
            with T.Tape() as tape:
                loss = batch_loss(params, batch)
            tape.backward(loss)
            if tcfg.clip_norm:
                T.clip_grad_norm(params.tensors, tcfg.clip_norm)
            grads = {k: t._grad for k, t in params.tensors.items() if t._grad is not None}
            T.adamw_step(
                params.tensors, grads, tcfg.lr, state,
                weight_decay=tcfg.weight_decay, warmup_steps=tcfg.warmup_steps,
            )
            params.zero_grads()
            n = batch["tgt_valid"].sum()
            running += loss.item() * n
            seen += n
        train_loss = running / max(seen, 1.0)
        valid_loss = validation_loss(params, valid_ex, tcfg.batch_size) if valid_ex else train_loss
        result.history.append({"epoch": epoch, "train_loss": train_loss, "valid_loss": valid_loss})
        if valid_loss < best_valid:
            best_valid = valid_loss
            best_params = params.copy()
            result.best_epoch = epoch
        if log is not None:
            log(f"epoch {epoch}: train {train_loss:.4f} valid {valid_loss:.4f} (lr step {state.step})")
    result.params = best_params
    result.steps = state.step
    return result


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config JSON, named f64 tensors


_MAGIC = b"SLCK"
_VERSION = 1


def save_checkpoint(path: str | Path, params: ModelParams, meta: dict | None = None) -> None:
    cfg_block = json.dumps({"config": asdict(params.config), "meta": meta or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(cfg_block)))
        fh.write(cfg_block)
        fh.write(struct.pack("<Q", len(params.tensors)))
        for name in sorted(params.tensors):
            data = params.tensors[name].data
            encoded = name.encode()
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.astype("<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("checkpoint file truncated")
    return buf


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _MAGIC:
            raise CheckpointError("bad checkpoint magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        block = json.loads(_read_exact(fh, cfg_len))
        config = ModelConfig(**block["config"])
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode()
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 8 * size), dtype="<f8").reshape(shape).copy()
            tensors[name] = Tensor(data, requires_grad=True)
    expected = param_shapes(config)
    if set(tensors) != set(expected):
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        raise CheckpointError(f"checkpoint tensors mismatch config (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {tensors[name].shape}, config expects {shape}"
            )
    return ModelParams(config, tensors), block["meta"]
