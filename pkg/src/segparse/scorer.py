"""Biaffine attention heads over encoder states.

Four one-hidden-layer MLPs project each position into arc-head, arc-dep,
label-head and label-dep spaces; a bilinear form plus a head-prior term
scores every (head, dependent) arc, and a per-label bilinear + linear form
scores the K labels of selected arcs.  The dependent side never includes the
virtual root; the head side always does.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .encoder import xavier_normal, _check_mode
from .errors import ContractError, DimensionError
from .tensor_core import Tensor


@dataclass
class ScoreSet:
    """Arc score matrix ((n+1) heads x n dependents) and label scores.

    ``label`` is (P, K) for the P scored pairs, or (n, n+1, K) when the full
    tensor was requested; ``pairs`` lists the scored (dependent, head) pairs
    in row order when the pair path was used.
    """

    arc: Tensor | None
    label: Tensor | None
    pairs: list | None


@dataclass
class ScorerParams:
    arc_head_w: Tensor | None    # (2H, arc_mlp)
    arc_head_b: Tensor | None
    arc_dep_w: Tensor | None
    arc_dep_b: Tensor | None
    arc_bilinear: Tensor | None  # (arc_mlp, arc_mlp)
    arc_prior: Tensor | None     # (arc_mlp,), the head-prior linear term
    label_head_w: Tensor        # (2H, label_mlp)
    label_head_b: Tensor
    label_dep_w: Tensor
    label_dep_b: Tensor
    label_bilinear: Tensor      # (K, label_mlp, label_mlp)
    label_linear: Tensor        # (K, 2*label_mlp)
    label_bias: Tensor          # (K,)

    @property
    def has_arc_scorer(self) -> bool:
        return self.arc_head_w is not None


def init_scorer(rng, input_dim: int, arc_dim: int, label_dim: int, n_labels: int,
                dtype, with_arc_scorer: bool = True) -> ScorerParams:
    def weights(shape):
        return Tensor(xavier_normal(rng, shape, dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    arc = {}
    if with_arc_scorer:
        arc = dict(
            arc_head_w=weights((input_dim, arc_dim)), arc_head_b=zeros(arc_dim),
            arc_dep_w=weights((input_dim, arc_dim)), arc_dep_b=zeros(arc_dim),
            arc_bilinear=weights((arc_dim, arc_dim)), arc_prior=zeros(arc_dim),
        )
    else:
        arc = dict(arc_head_w=None, arc_head_b=None, arc_dep_w=None, arc_dep_b=None,
                   arc_bilinear=None, arc_prior=None)
    label_bilinear = Tensor(
        np.stack([xavier_normal(rng, (label_dim, label_dim), dtype) for _ in range(n_labels)]),
        requires_grad=True)
    return ScorerParams(
        **arc,
        label_head_w=weights((input_dim, label_dim)), label_head_b=zeros(label_dim),
        label_dep_w=weights((input_dim, label_dim)), label_dep_b=zeros(label_dim),
        label_bilinear=label_bilinear,
        label_linear=weights((n_labels, 2 * label_dim)),
        label_bias=zeros(n_labels),
    )


def _mlp(h: Tensor, w: Tensor, b: Tensor, rate: float, mask, training: bool) -> Tensor:
    out = tc.leaky_relu(tc.add_bias(tc.matmul(h, w), b), slope=0.1)
    if training and rate > 0.0:
        if mask is None:
            raise ContractError("training-mode MLP needs a dropout mask")
        out = tc.dropout(out, rate, mask, training=True)
    return out


def project(h: Tensor, params: ScorerParams, mode: str, arc_dropout: float = 0.0,
            label_dropout: float = 0.0, masks=None):
    """MLP projections of encoder rows; arc pair is None without an arc scorer."""
    training = _check_mode(mode)
    masks = masks or {}
    arc_head = arc_dep = None
    if params.has_arc_scorer:
        arc_head = _mlp(h, params.arc_head_w, params.arc_head_b,
                        arc_dropout, masks.get("arc_head"), training)
        arc_dep = _mlp(h, params.arc_dep_w, params.arc_dep_b,
                       arc_dropout, masks.get("arc_dep"), training)
    label_head = _mlp(h, params.label_head_w, params.label_head_b,
                      label_dropout, masks.get("label_head"), training)
    label_dep = _mlp(h, params.label_dep_w, params.label_dep_b,
                     label_dropout, masks.get("label_dep"), training)
    return arc_head, arc_dep, label_head, label_dep


def score_arcs(r_head: Tensor, r_dep: Tensor, bilinear: Tensor, prior: Tensor) -> Tensor:
    """Arc scores: s[i, j] = r_head[i] · B · r_dep[j] + r_head[i] · prior.

    Rows are candidate heads (row 0 = virtual root), columns are dependents.
    Callers pass the dependent projections without the root row.
    """
    rh, rd, bl, pr = r_head.data, r_dep.data, bilinear.data, prior.data
    if rh.ndim != 2 or rd.ndim != 2 or rh.shape[1] != bl.shape[0] or rd.shape[1] != bl.shape[1]:
        raise DimensionError(
            f"arc scorer shapes: heads {rh.shape}, deps {rd.shape}, bilinear {bl.shape}")
    projected = rh @ bl            # (n_heads, d)
    scores = projected @ rd.T + (rh @ pr)[:, None]

    def bwd(g):
        col_sum = g.sum(axis=1)
        d_rh = (g @ rd) @ bl.T + col_sum[:, None] * pr[None, :]
        d_rd = g.T @ projected
        d_bl = rh.T @ (g @ rd)
        d_pr = rh.T @ col_sum
        return d_rh, d_rd, d_bl, d_pr

    return tc.custom_op(scores, (r_head, r_dep, bilinear, prior), bwd)


def label_bilinear_scores(r_head_rows: Tensor, r_dep_rows: Tensor, bilinear: Tensor) -> Tensor:
    """Per-pair bilinear label term: out[p, k] = rh[p] · B_k · rd[p]."""
    rh, rd, bl = r_head_rows.data, r_dep_rows.data, bilinear.data
    if rh.shape != rd.shape or rh.ndim != 2 or bl.ndim != 3 or bl.shape[1:] != (rh.shape[1],) * 2:
        raise DimensionError(f"label bilinear shapes: {rh.shape}, {rd.shape}, {bl.shape}")
    out = np.einsum("pi,kij,pj->pk", rh, bl, rd, optimize=True)

    def bwd(g):
        d_rh = np.einsum("pk,kij,pj->pi", g, bl, rd, optimize=True)
        d_rd = np.einsum("pk,kij,pi->pj", g, bl, rh, optimize=True)
        d_bl = np.einsum("pk,pi,pj->kij", g, rh, rd, optimize=True)
        return d_rh, d_rd, d_bl

    return tc.custom_op(out, (r_head_rows, r_dep_rows, bilinear), bwd)


def score_labels(r_label_head: Tensor, r_label_dep: Tensor, pairs, params: ScorerParams) -> Tensor:
    """Label scores for (dependent, head) pairs, one row per pair.

    ``pairs`` holds row indices into the projection matrices: the dependent's
    position and its candidate head's position (0 for the root).
    """
    pairs = list(pairs)
    dep_rows = np.array([j for j, _ in pairs], dtype=np.int64)
    head_rows = np.array([i for _, i in pairs], dtype=np.int64)
    rh = tc.take_rows(r_label_head, head_rows)
    rd = tc.take_rows(r_label_dep, dep_rows)
    scores = label_bilinear_scores(rh, rd, params.label_bilinear)
    linear = tc.matmul(tc.concat([rh, rd], axis=-1), tc.transpose(params.label_linear))
    return tc.add_bias(tc.add(scores, linear), params.label_bias)


def score_labels_full(r_label_head: Tensor, r_label_dep: Tensor, params: ScorerParams,
                      n_chars: int) -> Tensor:
    """All (dependent, candidate head, label) scores: (n, n+1, K); the test path."""
    pairs = [(j, i) for j in range(1, n_chars + 1) for i in range(n_chars + 1)]
    flat = score_labels(r_label_head, r_label_dep, pairs, params)
    return tc.reshape(flat, (n_chars, n_chars + 1, flat.data.shape[1]))


def adjacent_pairs(n_chars: int) -> list:
    """The fixed leftward arcs of the segmentation-only model: (i, i+1)."""
    return [(i, i + 1) for i in range(1, n_chars)]


def score_sentence(sentence, model, mode: str, pairs=None, full_labels: bool = False,
                   masks=None) -> ScoreSet:
    """Arc scores plus label scores for the requested pairs.

    In training the caller passes the gold pairs; in inference it first
    decodes from ``arc`` and then rescores the predicted pairs.  Seg-only
    models have no arc scorer and always score the fixed adjacent pairs.
    """
    from .encoder import encode  # local import to keep module load cheap

    h = encode(sentence, model, mode, masks)
    cfg = model.config
    arc_head, arc_dep, label_head, label_dep = project(
        h, model.scorer, mode, cfg.arc_mlp_dropout, cfg.label_mlp_dropout, masks)
    n = len(sentence)
    arc = None
    if model.scorer.has_arc_scorer:
        dep_rows = tc.take_rows(arc_dep, np.arange(1, n + 1))
        arc = score_arcs(arc_head, dep_rows, model.scorer.arc_bilinear, model.scorer.arc_prior)
    if cfg.mode == "seg-only":
        pairs = adjacent_pairs(n)
    if full_labels:
        label = score_labels_full(label_head, label_dep, model.scorer, n)
        pairs = None
    elif pairs is not None:
        pairs = list(pairs)
        label = score_labels(label_head, label_dep, pairs, model.scorer) if pairs else None
    else:
        label = None
    return ScoreSet(arc, label, pairs)
