"""Character n-gram embeddings and a masked multi-layer BiLSTM encoder.

Everything runs batched and time-major: a batch of B sentences padded to L
characters is laid out as (L*B, d) matrices whose row t*B+b belongs to
timestep t of sentence b.  The virtual root is a learned vector prepended as
an extra position, giving (L+1)*B rows downstream.

Dropout follows the variational convention for LSTM inputs (one mask per
sequence, shared across timesteps); embedding dropout is plain elementwise
on the concatenated n-gram vector.  All masks come from the caller.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor_core as tc
from .errors import ConfigError, ContractError, DimensionError, StructureError
from .tensor_core import Tensor
from .treebank import Corpus, Sentence

UNK = 0
PAD = 1
N_RESERVED = 2

STREAMS = ("uni", "bi", "tri")


@dataclass
class Vocabulary:
    """Frequency-filtered string-to-index maps for the three n-gram streams."""

    uni: dict
    bi: dict
    tri: dict
    min_freq: int

    def stream(self, name: str) -> dict:
        return getattr(self, name)

    def size(self, name: str) -> int:
        return len(self.stream(name)) + N_RESERVED

    def to_json_dict(self) -> dict:
        return {
            "min_freq": self.min_freq,
            **{name: sorted(self.stream(name), key=self.stream(name).get) for name in STREAMS},
        }

    @classmethod
    def from_json_dict(cls, blob: dict) -> "Vocabulary":
        maps = {name: {tok: i + N_RESERVED for i, tok in enumerate(blob[name])} for name in STREAMS}
        return cls(maps["uni"], maps["bi"], maps["tri"], blob["min_freq"])


def build_vocab(corpus: Corpus, min_freq: int) -> Vocabulary:
    """Index n-grams seen at least ``min_freq`` times, in first-seen order."""
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
    if not corpus.items:
        raise StructureError("cannot build a vocabulary from an empty corpus")
    counts = {name: Counter() for name in STREAMS}
    first_seen = {name: {} for name in STREAMS}
    for sentence, _ in corpus.items:
        for name, grams in zip(STREAMS, (sentence.chars, sentence.bigrams, sentence.trigrams)):
            for tok in grams:
                counts[name][tok] += 1
                first_seen[name].setdefault(tok, len(first_seen[name]))
    maps = {}
    for name in STREAMS:
        kept = [tok for tok, _ in sorted(first_seen[name].items(), key=lambda kv: kv[1])
                if counts[name][tok] >= min_freq]
        maps[name] = {tok: i + N_RESERVED for i, tok in enumerate(kept)}
    return Vocabulary(maps["uni"], maps["bi"], maps["tri"], min_freq)


@dataclass
class PretrainedTable:
    """Fixed vectors keyed by token; tokens not present contribute zeros."""

    index: dict
    vectors: np.ndarray  # (N, dim)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def rows_for(self, tokens, dtype) -> np.ndarray:
        out = np.zeros((len(tokens), self.dim), dtype=dtype)
        for k, tok in enumerate(tokens):
            row = self.index.get(tok)
            if row is not None:
                out[k] = self.vectors[row]
        return out


def load_pretrained(path, expected_dim: int) -> PretrainedTable:
    """Read a text vector file: ``TOKEN v1 .. vD`` per line, optional COUNT DIM header."""
    index = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 0
    if lines:
        head = lines[0].split()
        if len(head) == 2 and all(p.isdigit() for p in head):
            start = 1
    for line_no, line in enumerate(lines[start:], start + 1):
        if not line.strip():
            continue
        parts = line.split()
        tok, values = parts[0], parts[1:]
        if len(values) != expected_dim:
            raise ConfigError(
                f"{path} line {line_no}: vector for {tok!r} has {len(values)} dims, "
                f"model expects {expected_dim}"
            )
        if tok not in index:
            index[tok] = len(rows)
            rows.append(np.array(values, dtype=np.float32))
    vectors = np.vstack(rows) if rows else np.zeros((0, expected_dim), dtype=np.float32)
    return PretrainedTable(index, vectors)


@dataclass
class EmbeddingTables:
    """Learned per-stream tables plus optional fixed pre-trained companions."""

    learned: dict        # stream -> Tensor (V, d_e), requires_grad
    pretrained: dict     # stream -> PretrainedTable | None
    dim: int


def init_embeddings(rng, vocab: Vocabulary, dim: int, dtype, streams=STREAMS,
                    pretrained=None) -> EmbeddingTables:
    learned = {}
    for name in streams:
        table = xavier_normal(rng, (vocab.size(name), dim), dtype)
        learned[name] = Tensor(table, requires_grad=True)
    pretrained = dict(pretrained or {})
    for name in streams:
        table = pretrained.get(name)
        if table is not None and table.dim != dim:
            raise ConfigError(f"pre-trained {name} vectors have dim {table.dim}, expected {dim}")
        pretrained.setdefault(name, None)
    return EmbeddingTables(learned, pretrained, dim)


def xavier_normal(rng, shape, dtype) -> np.ndarray:
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return (rng.standard_normal(shape) * std).astype(dtype)


# ---------------------------------------------------------------------------
# BiLSTM


@dataclass
class LstmDirection:
    w_in: Tensor   # (d_in, 4H)
    w_rec: Tensor  # (H, 4H)
    bias: Tensor   # (4H,)


@dataclass
class BiLstmParams:
    layers: list  # [(forward: LstmDirection, backward: LstmDirection), ...]
    hidden: int

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def init_bilstm(rng, input_dim: int, hidden: int, n_layers: int, dtype) -> BiLstmParams:
    """Xavier-normal weights, zero biases except the forget gate at +1."""
    layers = []
    d_in = input_dim
    for _ in range(n_layers):
        pair = []
        for _direction in range(2):
            bias = np.zeros(4 * hidden, dtype=dtype)
            bias[hidden:2 * hidden] = 1.0
            pair.append(LstmDirection(
                Tensor(xavier_normal(rng, (d_in, 4 * hidden), dtype), requires_grad=True),
                Tensor(xavier_normal(rng, (hidden, 4 * hidden), dtype), requires_grad=True),
                Tensor(bias, requires_grad=True),
            ))
        layers.append(tuple(pair))
        d_in = 2 * hidden
    return BiLstmParams(layers, hidden)


def lstm_recurrence(xz: Tensor, w_rec: Tensor, mask: np.ndarray, n_steps: int,
                    reverse: bool) -> Tensor:
    """Run one LSTM direction over time-major pre-activations.

    xz is (T*B, 4H) holding input projection plus bias; the recurrent matmul
    and the fused gate kernel run per timestep.  Gradients for xz and w_rec
    are produced by hand-rolled truncated-nothing BPTT over the saved gates.
    """
    T = n_steps
    total, H4 = xz.data.shape
    B = total // T
    H = w_rec.data.shape[0]
    if H4 != 4 * H or total != T * B or mask.shape != (T, B):
        raise DimensionError(f"inconsistent recurrence shapes: xz {xz.data.shape}, "
                             f"w_rec {w_rec.data.shape}, mask {mask.shape}, T={T}")
    data, rec = xz.data, w_rec.data
    dtype = data.dtype
    gates_all = np.empty((T * B, 4 * H), dtype=dtype)
    c_all = np.empty((T * B, H), dtype=dtype)
    tc_all = np.empty((T * B, H), dtype=dtype)
    h_all = np.empty((T * B, H), dtype=dtype)
    order = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    for t in order:
        rows = slice(t * B, (t + 1) * B)
        z = data[rows] + h @ rec
        gates, c, tanh_c, h = kernels.lstm_gates_forward(z, c, mask[t])
        gates_all[rows] = gates
        c_all[rows] = c
        tc_all[rows] = tanh_c
        h_all[rows] = h

    def bwd(gout):
        dxz = np.empty_like(data)
        dh_rec = np.zeros((B, H), dtype=dtype)
        dc = np.zeros((B, H), dtype=dtype)
        zeros = np.zeros((B, H), dtype=dtype)
        for k in range(T - 1, -1, -1):
            t = order[k]
            rows = slice(t * B, (t + 1) * B)
            if k == 0:
                c_prev = zeros
            else:
                tp = order[k - 1]
                c_prev = c_all[tp * B:(tp + 1) * B]
            dh = gout[rows] + dh_rec
            dz, dc = kernels.lstm_gates_backward(
                gates_all[rows], c_prev, c_all[rows], tc_all[rows], mask[t], dh, dc)
            dxz[rows] = dz
            dh_rec = dz @ rec.T
        h_prev_all = np.zeros_like(h_all)
        for k in range(1, T):
            t, tp = order[k], order[k - 1]
            h_prev_all[t * B:(t + 1) * B] = h_all[tp * B:(tp + 1) * B]
        dw_rec = h_prev_all.T @ dxz
        return dxz, dw_rec

    return tc.custom_op(h_all, (xz, w_rec), bwd)


def bilstm_layer(x: Tensor, fwd: LstmDirection, bwd_dir: LstmDirection,
                 mask: np.ndarray, n_steps: int) -> Tensor:
    halves = []
    for direction, reverse in ((fwd, False), (bwd_dir, True)):
        xz = tc.add_bias(tc.matmul(x, direction.w_in), direction.bias)
        halves.append(lstm_recurrence(xz, direction.w_rec, mask, n_steps, reverse))
    return tc.concat(halves, axis=-1)


def bilstm_forward(x: Tensor, params: BiLstmParams, mode: str, dropout_rate: float = 0.0,
                   layer_masks=None, step_mask: np.ndarray | None = None,
                   n_steps: int | None = None) -> Tensor:
    """Full stack over time-major input; single sentences pass (n, d) directly."""
    training = _check_mode(mode)
    if n_steps is None:
        n_steps = x.data.shape[0]  # single sequence, B = 1
    if n_steps == 0 or x.data.shape[0] == 0:
        raise DimensionError("cannot encode an empty sequence")
    batch = x.data.shape[0] // n_steps
    if step_mask is None:
        step_mask = np.ones((n_steps, batch), dtype=x.data.dtype)
    out = x
    for i, (fwd, bwd_dir) in enumerate(params.layers):
        if training and dropout_rate > 0.0:
            if layer_masks is None:
                raise ContractError("training-mode BiLSTM needs per-layer dropout masks")
            tiled = np.tile(layer_masks[i], (n_steps, 1))
            out = tc.dropout(out, dropout_rate, tiled, training=True)
        out = bilstm_layer(out, fwd, bwd_dir, step_mask, n_steps)
    return out


def _check_mode(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


# ---------------------------------------------------------------------------
# embedding lookup and the full encoder


def _stream_tokens(sentence: Sentence, name: str):
    return {"uni": sentence.chars, "bi": sentence.bigrams, "tri": sentence.trigrams}[name]


def batch_indices(sentences, vocab: Vocabulary, streams=STREAMS):
    """Time-major PAD-filled (L, B) index arrays per stream, plus lengths."""
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    L, B = int(lengths.max()), len(sentences)
    out = {}
    for name in streams:
        table = vocab.stream(name)
        idx = np.full((L, B), PAD, dtype=np.int64)
        for b, sentence in enumerate(sentences):
            for t, tok in enumerate(_stream_tokens(sentence, name)):
                idx[t, b] = table.get(tok, UNK)
        out[name] = idx
    return out, lengths


def embed_batch(sentences, vocab: Vocabulary, tables: EmbeddingTables, mode: str,
                embed_dropout: float = 0.0, mask: np.ndarray | None = None,
                streams=STREAMS) -> tuple[Tensor, np.ndarray]:
    """Concatenated n-gram embeddings, (L*B, len(streams)*d), plus lengths."""
    training = _check_mode(mode)
    idx, lengths = batch_indices(sentences, vocab, streams)
    L, B = idx[streams[0]].shape
    parts = []
    for name in streams:
        flat = idx[name].reshape(-1)
        component = tc.take_rows(tables.learned[name], flat)
        pre = tables.pretrained.get(name)
        if pre is not None:
            tokens = []
            for t in range(L):
                for b, sentence in enumerate(sentences):
                    grams = _stream_tokens(sentence, name)
                    tokens.append(grams[t] if t < len(sentence) else None)
            rows = pre.rows_for([tok if tok is not None else "" for tok in tokens],
                                component.data.dtype)
            component = tc.add(component, Tensor(rows))
        parts.append(component)
    out = tc.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
    if training and embed_dropout > 0.0:
        out = tc.dropout(out, embed_dropout, mask, training=True)
    return out, lengths


def embed_sentence(sentence: Sentence, vocab: Vocabulary, tables: EmbeddingTables,
                   mode: str, embed_dropout: float = 0.0,
                   mask: np.ndarray | None = None, streams=STREAMS) -> Tensor:
    out, _ = embed_batch([sentence], vocab, tables, mode, embed_dropout, mask, streams)
    return out


def step_mask_for(lengths: np.ndarray, L: int, dtype) -> np.ndarray:
    return (np.arange(L)[:, None] < lengths[None, :]).astype(dtype)


def encode_batch(sentences, model, mode: str, masks=None) -> tuple[Tensor, np.ndarray]:
    """Hidden states for a batch, root row included: ((L+1)*B, 2*hidden).

    Row layout is position-major: position p of sentence b sits at row p*B+b,
    with p=0 the learned virtual-root vector and p=t+1 character t.
    """
    training = _check_mode(mode)
    if training and masks is None:
        raise ContractError("training mode needs a mask bundle from sample_masks")
    masks = masks or {}
    cfg = model.config
    streams = ("uni",) if cfg.no_ngram else STREAMS
    embedded, lengths = embed_batch(
        sentences, model.vocab, model.embeddings, mode,
        embed_dropout=cfg.embed_dropout, mask=masks.get("embed"), streams=streams)
    L, B = int(lengths.max()), len(sentences)
    smask = step_mask_for(lengths, L, embedded.data.dtype)
    hidden = bilstm_forward(
        embedded, model.bilstm, mode, dropout_rate=cfg.lstm_dropout,
        layer_masks=masks.get("lstm"), step_mask=smask, n_steps=L)
    root = tc.tile_rows(model.root_vec, B)
    return tc.concat([root, hidden], axis=0), lengths


def encode(sentence: Sentence, model, mode: str, masks=None) -> Tensor:
    """Single-sentence encoder: (n+1, 2*hidden) with the root vector at row 0."""
    out, _ = encode_batch([sentence], model, mode, masks)
    return out
