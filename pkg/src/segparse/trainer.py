"""Loss assembly, the annealed/clipped Adam optimizer, and the training loop.

One training step: length-bucketed shuffled mini-batch, summed arc and label
cross-entropies normalized by character count, global-norm gradient clipping,
bias-corrected Adam with the annealed learning rate.  After each epoch the
dev set is parsed and scored; the checkpoint with the best dev unlabeled F1
(segmentation F1 for the seg-only model) is retained as ``best.ckpt``.

Everything is seeded and timestamp-free: rerunning a manifest reproduces the
log, the checkpoints, and any parsed output byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from functools import reduce

import numpy as np

from . import kernels
from . import scorer as sc
from . import tensor_core as tc
from .decoder import DecodeConfig, parse_batch
from .encoder import build_vocab, encode_batch
from .errors import ContractError, DivergenceError
from .metrics import EvalReport, evaluate_corpus
from .model import ModelConfig, ModelParams
from .tensor_core import Graph, Tensor
from .treebank import (
    APP,
    SEG,
    Corpus,
    LabelSet,
    char_tree_from_word_tree,
    to_binary_labels,
    write_corpus,
)


@dataclass
class TrainConfig:
    lr0: float = 2e-3
    anneal_base: float = 0.75
    anneal_period: int = 5000
    beta1: float = 0.9
    beta2: float = 0.9
    clip: float = 5.0
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    seed: int = 1
    early_stop_f1: float | None = None  # stop once the dev selection metrics reach this
    save_every_epoch: bool = True


def lr_at(t: int, lr0: float = 2e-3, base: float = 0.75, period: int = 5000) -> float:
    """Annealed rate lr0 * base**(t/period); the exponent is continuous in t."""
    if t < 0:
        raise ContractError(f"step must be >= 0, got {t}")
    return lr0 * base ** (t / period)


@dataclass
class OptimState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: ModelParams) -> "OptimState":
        state = cls()
        for name, tensor in model.trainables():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def clip_global_norm(named_params, clip: float) -> float:
    """Scale every gradient by clip/norm when the global norm exceeds clip."""
    total = 0.0
    for name, tensor in named_params:
        g = tensor.grad
        if g is None:
            continue
        sq = float(np.vdot(g, g))
        if not np.isfinite(sq):
            raise DivergenceError(f"non-finite gradient in {name}")
        total += sq
    norm = float(np.sqrt(total))
    if clip > 0 and norm > clip:
        scale = clip / norm
        for _, tensor in named_params:
            if tensor.grad is not None:
                tensor.grad = tensor.grad * scale
    return norm


def adam_step(named_params, state: OptimState, cfg: TrainConfig) -> float:
    """Clip, then apply one bias-corrected Adam update; returns the grad norm.

    Parameters with no gradient this step still decay their moments (their
    gradient is zero).  Pre-trained embedding tables are not parameters and
    are never touched.
    """
    norm = clip_global_norm(named_params, cfg.clip)
    lr = lr_at(state.step, cfg.lr0, cfg.anneal_base, cfg.anneal_period)
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, tensor in named_params:
        g = tensor.grad
        if g is None:
            g = np.zeros_like(tensor.data)
        g = np.ascontiguousarray(g, dtype=tensor.data.dtype)
        kernels.adam_update(tensor.data, g, state.m[name], state.v[name],
                            lr, cfg.beta1, cfg.beta2, cfg.eps, bc1, bc2)
    state.step = t
    return norm


# ---------------------------------------------------------------------------
# loss


def seg_gold_from_char_labels(labels) -> list[str]:
    """Adjacent-gap gold for the seg-only model, read off the char-tree labels."""
    return [APP if lab == APP else SEG for lab in labels[:-1]]


def joint_loss(batch, model: ModelParams, mode: str, masks=None) -> Tensor:
    """Arc plus label cross-entropy summed over the batch, per-character mean.

    ``batch`` pairs each Sentence with its gold CharTree.  Arc losses use the
    full head-candidate column per character; label losses score the gold
    (dependent, head) pairs.  The seg-only model has no arc term and scores
    the fixed adjacent pairs against seg/app decisions instead.
    """
    if not batch:
        raise ContractError("empty batch")
    sentences = [s for s, _ in batch]
    h, lengths = encode_batch(sentences, model, mode, masks)
    cfg = model.config
    arc_head, arc_dep, label_head, label_dep = sc.project(
        h, model.scorer, mode, cfg.arc_mlp_dropout, cfg.label_mlp_dropout, masks)
    B = len(batch)
    label_set = model.label_set

    if cfg.mode == "seg-only":
        pairs, gold = [], []
        for b, (sentence, ct) in enumerate(batch):
            n = len(sentence)
            for j, lab in enumerate(seg_gold_from_char_labels(ct.labels), 1):
                pairs.append((j * B + b, (j + 1) * B + b))
                gold.append(label_set.index(lab))
        if not pairs:
            raise ContractError("batch has no segmentation decisions (all length-1)")
        scores = sc.score_labels(label_head, label_dep, pairs, model.scorer)
        loss = tc.softmax_xent(scores, np.array(gold))
        return tc.mul(loss, 1.0 / len(pairs))

    arc_losses = []
    pairs, gold_labels = [], []
    for b, (sentence, ct) in enumerate(batch):
        n = len(sentence)
        rows = np.array([p * B + b for p in range(n + 1)], dtype=np.int64)
        rh = tc.take_rows(arc_head, rows)
        rd = tc.take_rows(arc_dep, rows[1:])
        arc = sc.score_arcs(rh, rd, model.scorer.arc_bilinear, model.scorer.arc_prior)
        arc_losses.append(tc.softmax_xent(tc.transpose(arc), np.array(ct.heads)))
        for j, (head, lab) in enumerate(zip(ct.heads, ct.labels), 1):
            pairs.append((j * B + b, head * B + b))
            gold_labels.append(label_set.index(lab))
    label_scores = sc.score_labels(label_head, label_dep, pairs, model.scorer)
    label_loss = tc.softmax_xent(label_scores, np.array(gold_labels))
    total = tc.add(reduce(tc.add, arc_losses), label_loss)
    return tc.mul(total, 1.0 / int(lengths.sum()))


def make_batches(lengths, batch_size: int, rng) -> list:
    """Shuffle, bucket by length to limit padding, then shuffle the buckets."""
    order = list(rng.permutation(len(lengths)))
    order.sort(key=lambda i: lengths[i])  # stable: ties keep shuffled order
    chunks = [order[k:k + batch_size] for k in range(0, len(order), batch_size)]
    return [chunks[i] for i in rng.permutation(len(chunks))]


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainResult:
    model: ModelParams
    best_epoch: int
    best_report: EvalReport
    history: list
    out_dir: str


def corpus_sha256(corpus: Corpus) -> str:
    return hashlib.sha256(write_corpus(corpus).encode("utf-8")).hexdigest()


def prepare_gold(corpus: Corpus, mode: str):
    """Per-mode training view: (corpus, label inventory, gold char trees)."""
    if mode == "joint-binary":
        corpus = to_binary_labels(corpus)
    if mode == "seg-only":
        label_set = LabelSet.from_labels([SEG])
    else:
        label_set = corpus.label_set
    char_trees = [char_tree_from_word_tree(s, wt) for s, wt in corpus.items]
    return corpus, label_set, char_trees


def _selection_metrics(report: EvalReport, mode: str):
    if mode == "seg-only":
        return (report.seg.f1,)
    return (report.udep.f1, report.seg.f1)


def train(train_corpus: Corpus, dev_corpus: Corpus, cfg: TrainConfig,
          model_cfg: ModelConfig, out_dir, pretrained=None, pretrained_paths=None,
          quiet: bool = False) -> TrainResult:
    """Train from scratch and keep the best-dev checkpoint plus a run manifest."""
    if not train_corpus.items or not dev_corpus.items:
        raise ContractError("train and dev corpora must be non-empty")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    mode = model_cfg.mode
    train_view, label_set, gold_trees = prepare_gold(train_corpus, mode)
    dev_view = to_binary_labels(dev_corpus) if mode == "joint-binary" else dev_corpus
    dev_sentences = [s for s, _ in dev_view.items]

    vocab = build_vocab(train_view, model_cfg.min_freq)
    model = ModelParams.build(model_cfg, vocab, label_set, rng,
                              pretrained=pretrained, pretrained_paths=pretrained_paths)
    model.save_meta(out_dir)
    optim = OptimState.for_model(model)
    decode_cfg = DecodeConfig(mode=mode)

    lengths = [len(s) for s, _ in train_view.items]
    log_path = os.path.join(out_dir, "train.log")
    history = []
    best_epoch, best_key, best_state = 0, None, None
    log_lines = []

    def log(line):
        log_lines.append(line)
        if not quiet:
            print(line, file=sys.stderr, flush=True)

    epochs_run = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        loss_sum = 0.0
        token_sum = 0
        for batch_ids in make_batches(lengths, cfg.batch_size, rng):
            batch = [(train_view.items[i][0], gold_trees[i]) for i in batch_ids]
            longest = max(len(s) for s, _ in batch)
            masks = model.sample_masks(rng, len(batch), longest)
            with Graph() as graph:
                loss = joint_loss(batch, model, "train", masks)
            if not np.isfinite(loss.data):
                raise DivergenceError(f"loss diverged at epoch {epoch}")
            tc.backward(graph, loss)
            adam_step(model.trainables(), optim, cfg)
            model.zero_grads()
            tokens = sum(len(s) for s, _ in batch)
            loss_sum += float(loss.data) * tokens
            token_sum += tokens

        preds = [wt for wt, _ in parse_batch(dev_sentences, model, decode_cfg)]
        report = evaluate_corpus(dev_view, preds)
        mean_loss = loss_sum / token_sum
        history.append({
            "epoch": epoch, "loss": round(mean_loss, 6),
            "seg_f1": round(report.seg.f1, 6), "udep_f1": round(report.udep.f1, 6),
            "ldep_f1": round(report.ldep.f1, 6),
            "uas": round(report.uas, 6), "las": round(report.las, 6),
        })
        log(f"epoch {epoch:3d} loss {mean_loss:.6f} seg_f1 {report.seg.f1:.6f} "
            f"udep_f1 {report.udep.f1:.6f} ldep_f1 {report.ldep.f1:.6f}")
        if cfg.save_every_epoch:
            tc.save_checkpoint(os.path.join(out_dir, f"epoch_{epoch:03d}.ckpt"),
                               model.state_dict())
        key = _selection_metrics(report, mode)
        if best_key is None or key > best_key:
            best_epoch, best_key = epoch, key
            best_state = {name: arr.copy() for name, arr in model.state_dict().items()}
            best_report = report
        if cfg.early_stop_f1 is not None and all(m >= cfg.early_stop_f1 for m in key):
            log(f"early stop: dev metrics reached {cfg.early_stop_f1} at epoch {epoch}")
            break

    tc.save_checkpoint(os.path.join(out_dir, "best.ckpt"), best_state)
    model.load_state(best_state)

    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    manifest = {
        "train_config": asdict(cfg),
        "model_config": asdict(model_cfg),
        "seed": cfg.seed,
        "backend": kernels.active_backend(),
        "corpus_sha256": {"train": corpus_sha256(train_corpus),
                          "dev": corpus_sha256(dev_corpus)},
        "labels": list(label_set.labels),
        "vocab_sizes": {name: vocab.size(name) for name in model_cfg.streams},
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "history": history,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return TrainResult(model, best_epoch, best_report, history, str(out_dir))
